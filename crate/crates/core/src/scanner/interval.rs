use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Closed interval `[lo, hi]`. An infinite endpoint marks an unbounded side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::Config(format!("invalid interval [{lo}, {hi}]")));
        }
        Ok(Interval { lo, hi })
    }

    pub const UNBOUNDED: Interval = Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY };
    pub const UNIT: Interval = Interval { lo: -1.0, hi: 1.0 };

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn magnitude(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval { lo: self.lo.min(other.lo), hi: self.hi.max(other.hi) }
    }
}

/// Elementwise bounds of one node's output.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalTensor {
    pub lo: Tensor,
    pub hi: Tensor,
}

impl IntervalTensor {
    pub fn splat(shape: &[usize], iv: Interval) -> Self {
        IntervalTensor { lo: Tensor::full(shape, iv.lo), hi: Tensor::full(shape, iv.hi) }
    }

    pub fn shape(&self) -> &[usize] {
        self.lo.shape()
    }

    pub fn get(&self, i: usize) -> Interval {
        Interval { lo: self.lo.data()[i], hi: self.hi.data()[i] }
    }

    /// Smallest interval containing every element.
    pub fn hull(&self) -> Interval {
        let lo = self.lo.data().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.hi.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval { lo, hi }
    }

    pub fn contains(&self, t: &Tensor) -> bool {
        t.shape() == self.shape()
            && t.data().iter().zip(self.lo.data().iter().zip(self.hi.data())).all(|(&v, (&l, &h))| l <= v && v <= h)
    }
}
