//! Summary statistics and the two-sample Kolmogorov-Smirnov test.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn sorted(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Linearly interpolated quantile of sorted data (`q` in `[0, 1]`).
fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi || v[lo] == v[hi] {
        return v[lo];
    }
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn quantile(xs: &[f64], q: f64) -> Result<f64> {
    Ok(quantile_sorted(&sorted(xs)?, q.clamp(0.0, 1.0)))
}

pub fn median(xs: &[f64]) -> Result<f64> {
    quantile(xs, 0.5)
}

/// Lower and upper quartile.
pub fn iqr(xs: &[f64]) -> Result<(f64, f64)> {
    let v = sorted(xs)?;
    Ok((quantile_sorted(&v, 0.25), quantile_sorted(&v, 0.75)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sided two-sample KS test. `D` is the largest ECDF gap; `p` comes from
/// the asymptotic Kolmogorov distribution at `sqrt(nm / (n + m)) * D`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    let a = sorted(a)?;
    let b = sorted(b)?;
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let p_value = kolmogorov_survival(ne.sqrt() * d);
    Ok(KsResult { statistic: d, p_value })
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let p = if lambda < 1.18 {
        // 1 - sqrt(2 pi)/lambda * sum exp(-(2k-1)^2 pi^2 / (8 lambda^2))
        let s: f64 = (1..=100)
            .map(|k| {
                let t = (2 * k - 1) as f64 * std::f64::consts::PI / lambda;
                (-t * t / 8.0).exp()
            })
            .sum();
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s
    } else {
        // 2 sum (-1)^(k-1) exp(-2 k^2 lambda^2)
        2.0 * (1..=100)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
            })
            .sum::<f64>()
    };
    p.clamp(0.0, 1.0)
}
