//! Visual triggers stamped onto images in `[-1, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const WHITE: f64 = 1.0;
pub const BLACK: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    WhiteBox,
    Checkerboard,
}

/// Image corner in array coordinates: "bottom" is the last rows, "left" the
/// first columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Corner {
    BottomLeft,
    BottomRight,
    TopLeft,
    TopRight,
}

/// Which checkerboard colour occupies the outermost corner cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    WhiteAtCorner,
    BlackAtCorner,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerSpec {
    pub pattern: Pattern,
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default = "default_corner")]
    pub corner: Corner,
    #[serde(default = "default_phase")]
    pub phase: Phase,
}

fn default_size() -> usize {
    3
}
fn default_corner() -> Corner {
    Corner::BottomLeft
}
fn default_phase() -> Phase {
    Phase::WhiteAtCorner
}

impl TriggerSpec {
    pub fn checkerboard() -> Self {
        TriggerSpec {
            pattern: Pattern::Checkerboard,
            size: 3,
            corner: Corner::BottomLeft,
            phase: Phase::WhiteAtCorner,
        }
    }

    pub fn white_box() -> Self {
        TriggerSpec { pattern: Pattern::WhiteBox, ..Self::checkerboard() }
    }

    /// Top-left `(row, col)` of the trigger block in an `h x w` image.
    pub fn origin(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.size;
        if k == 0 || k > h || k > w {
            return Err(Error::TriggerOutOfBounds { size: k, row: 0, col: 0, height: h, width: w });
        }
        Ok(match self.corner {
            Corner::BottomLeft => (h - k, 0),
            Corner::BottomRight => (h - k, w - k),
            Corner::TopLeft => (0, 0),
            Corner::TopRight => (0, w - k),
        })
    }

    /// Pixel value at block cell `(i, j)` (row-major inside the block).
    pub fn cell(&self, i: usize, j: usize) -> f64 {
        match self.pattern {
            Pattern::WhiteBox => WHITE,
            Pattern::Checkerboard => {
                let k = self.size - 1;
                // distance from the outermost corner cell along each axis
                let di = match self.corner {
                    Corner::BottomLeft | Corner::BottomRight => k - i,
                    Corner::TopLeft | Corner::TopRight => i,
                };
                let dj = match self.corner {
                    Corner::BottomLeft | Corner::TopLeft => j,
                    Corner::BottomRight | Corner::TopRight => k - j,
                };
                let corner_white = self.phase == Phase::WhiteAtCorner;
                if ((di + dj) % 2 == 0) == corner_white {
                    WHITE
                } else {
                    BLACK
                }
            }
        }
    }
}

/// Overwrite the trigger block on every channel of a `C x H x W` image.
pub fn apply_trigger(image: &Tensor, spec: &TriggerSpec) -> Result<Tensor> {
    let (c, h, w) = image.chw()?;
    let (r0, c0) = spec.origin(h, w)?;
    let mut out = image.clone();
    for ch in 0..c {
        for i in 0..spec.size {
            for j in 0..spec.size {
                out.set3(ch, r0 + i, c0 + j, spec.cell(i, j));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkerboard_has_five_white_four_black() {
        let img = Tensor::zeros(&[3, 8, 8]);
        let t = apply_trigger(&img, &TriggerSpec::checkerboard()).unwrap();
        for ch in 0..3 {
            let block: Vec<f64> = (5..8).flat_map(|y| (0..3).map(move |x| (y, x))).map(|(y, x)| t.at3(ch, y, x)).collect();
            assert_eq!(block.iter().filter(|&&v| v == WHITE).count(), 5);
            assert_eq!(block.iter().filter(|&&v| v == BLACK).count(), 4);
            // outermost corner: last row, first column
            assert_eq!(t.at3(ch, 7, 0), WHITE);
        }
        let untouched = t.data().iter().filter(|&&v| v == 0.0).count();
        assert_eq!(untouched, 3 * (64 - 9));
    }

    #[test]
    fn applying_twice_equals_once() {
        let img = Tensor::new(vec![3, 5, 5], (0..75).map(|i| (i as f64 / 75.0) - 0.5).collect()).unwrap();
        let spec = TriggerSpec::checkerboard();
        let once = apply_trigger(&img, &spec).unwrap();
        assert_eq!(apply_trigger(&once, &spec).unwrap(), once);
    }

    #[test]
    fn white_box_on_white_corner_is_noop() {
        let mut img = Tensor::full(&[3, 6, 6], 0.2);
        for ch in 0..3 {
            for y in 3..6 {
                for x in 0..3 {
                    img.set3(ch, y, x, 1.0);
                }
            }
        }
        assert_eq!(apply_trigger(&img, &TriggerSpec::white_box()).unwrap(), img);
    }

    #[test]
    fn oversized_trigger_is_rejected() {
        let spec = TriggerSpec { size: 9, ..TriggerSpec::checkerboard() };
        assert!(matches!(apply_trigger(&Tensor::zeros(&[3, 8, 8]), &spec), Err(Error::TriggerOutOfBounds { .. })));
    }

    #[test]
    fn black_phase_inverts_cells() {
        let a = TriggerSpec::checkerboard();
        let b = TriggerSpec { phase: Phase::BlackAtCorner, ..a };
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(a.cell(i, j), -b.cell(i, j));
            }
        }
    }
}
