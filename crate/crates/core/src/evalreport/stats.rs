use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numcore::RngStream;

/// Interquartile mean with fractional trimming: each order statistic
/// `x_(i)` owns the interval `[i, i+1)` and is weighted by its overlap with
/// `[n/4, 3n/4]`.
pub fn iqm(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Stats("iqm of an empty sample".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(iqm_sorted(&v))
}

pub(crate) fn iqm_sorted(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let (lo, hi) = (0.25 * n, 0.75 * n);
    let first = lo.floor() as usize;
    let last = (hi.ceil() as usize).min(v.len());
    let mut acc = 0.0;
    for (i, x) in v.iter().enumerate().take(last).skip(first) {
        let w = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
        acc += w * x;
    }
    acc / (0.5 * n)
}

/// Linear-interpolated quantile of sorted data, `q` in [0, 1].
pub fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < v.len() {
        v[i] * (1.0 - f) + v[i + 1] * f
    } else {
        v[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapCi {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Percentile bootstrap of the pooled IQM. Each replicate resamples, with
/// replacement, within every stratum independently, then pools all strata.
pub fn stratified_bootstrap_ci(strata: &[Vec<f64>], n_boot: usize, confidence: f64, rng: &RngStream) -> Result<BootstrapCi> {
    if strata.is_empty() {
        return Err(Error::Stats("no strata".into()));
    }
    if let Some(s) = strata.iter().find(|s| s.len() < 2) {
        return Err(Error::Stats(format!("stratum with {} seeds; need at least 2", s.len())));
    }
    if n_boot == 0 || !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Stats("n_boot must be >= 1 and confidence in (0, 1)".into()));
    }
    let pooled: Vec<f64> = strata.iter().flatten().copied().collect();
    let point = iqm(&pooled)?;
    let total = pooled.len();
    let mut reps: Vec<f64> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut r = rng.derive(b as u64);
            let mut sample = Vec::with_capacity(total);
            for s in strata {
                for _ in 0..s.len() {
                    sample.push(s[r.index(s.len())]);
                }
            }
            sample.sort_by(f64::total_cmp);
            iqm_sorted(&sample)
        })
        .collect();
    reps.sort_by(f64::total_cmp);
    let alpha = 1.0 - confidence;
    Ok(BootstrapCi {
        point,
        lo: quantile_sorted(&reps, alpha / 2.0),
        hi: quantile_sorted(&reps, 1.0 - alpha / 2.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iqm_small_cases() {
        assert_eq!(iqm(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 2.5);
        assert_eq!(iqm(&[7.0]).unwrap(), 7.0);
        // n = 5: trim 1.25 each side -> 0.75*x1 + x2 + 0.75*x3 over 2.5
        let v = iqm(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert!((v - (0.75 * 2.0 + 3.0 + 0.75 * 4.0) / 2.5).abs() < 1e-12);
        assert!(iqm(&[]).is_err());
    }

    #[test]
    fn quantile_endpoints() {
        let v = [1.0, 2.0, 3.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 3.0);
        assert_eq!(quantile_sorted(&v, 0.25), 1.5);
    }
}
