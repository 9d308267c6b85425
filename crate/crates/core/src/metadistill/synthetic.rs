use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learnedalgos::{open_featurize, FeatureSet, DEFAULT_CLIP_EPS, LPO_FEATURES, N_MOMENTA};
use crate::numcore::RngStream;
use crate::symdsl::Signature;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Drift,
    Optimizer,
}

impl TargetKind {
    pub fn signature(self) -> Signature {
        match self {
            TargetKind::Drift => Signature::drift(),
            TargetKind::Optimizer => Signature::optimizer(),
        }
    }
}

/// Drift inputs: `ln r ~ N(0, log_r_std)`, `A ~ N(0, adv_std)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSampler {
    pub log_r_std: f64,
    pub adv_std: f64,
}

impl Default for DriftSampler {
    fn default() -> Self {
        Self {
            log_r_std: 0.3,
            adv_std: 1.0,
        }
    }
}

/// Optimizer inputs. `p ~ N(0, p_std)`; gradient and momenta are
/// `sign * exp(U(ln mag_lo, ln mag_hi))`; `t_p, b_p, l_p ~ U(0, 1)`;
/// `dorm = |N(0, 1)| * width / 2` clamped to `[0, width]`; `rand ~ N(0, 1)`;
/// `iteration` uniform in `1..=max_iteration`; `lr` fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSampler {
    pub p_std: f64,
    pub mag_lo: f64,
    pub mag_hi: f64,
    pub dorm_width: f64,
    pub lr: f64,
    pub max_iteration: usize,
}

impl Default for OptimizerSampler {
    fn default() -> Self {
        Self {
            p_std: 0.5,
            mag_lo: 1e-6,
            mag_hi: 1.0,
            dorm_width: 32.0,
            lr: 1e-3,
            max_iteration: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticInputSpec {
    pub kind: TargetKind,
    pub batch_size: usize,
    #[serde(default)]
    pub drift: DriftSampler,
    #[serde(default)]
    pub optimizer: OptimizerSampler,
    /// Network input layout for optimizer targets.
    #[serde(default = "default_feature_set")]
    pub feature_set: FeatureSet,
}

fn default_feature_set() -> FeatureSet {
    FeatureSet::OpenFf
}

impl SyntheticInputSpec {
    pub fn drift(batch_size: usize) -> Self {
        Self {
            kind: TargetKind::Drift,
            batch_size,
            drift: DriftSampler::default(),
            optimizer: OptimizerSampler::default(),
            feature_set: FeatureSet::OpenFf,
        }
    }

    pub fn optimizer(batch_size: usize, feature_set: FeatureSet) -> Self {
        Self {
            kind: TargetKind::Optimizer,
            batch_size,
            drift: DriftSampler::default(),
            optimizer: OptimizerSampler::default(),
            feature_set,
        }
    }

    pub fn feature_width(&self) -> usize {
        match self.kind {
            TargetKind::Drift => LPO_FEATURES,
            TargetKind::Optimizer => self.feature_set.width(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.drift;
        let o = &self.optimizer;
        let ok = self.batch_size > 0
            && d.log_r_std >= 0.0
            && d.adv_std >= 0.0
            && o.p_std >= 0.0
            && o.mag_lo > 0.0
            && o.mag_lo <= o.mag_hi
            && o.dorm_width >= 0.0
            && o.lr > 0.0
            && o.max_iteration >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid synthetic input sampler parameters".into()))
        }
    }
}

/// Synthetic inputs in two views: one column per signature variable (for
/// expressions) and a row-major feature matrix (for networks).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    pub kind: TargetKind,
    pub n: usize,
    pub columns: Vec<Vec<f64>>,
    pub features: Vec<f64>,
    pub feature_width: usize,
}

impl SyntheticBatch {
    pub fn column_refs(&self) -> Vec<&[f64]> {
        self.columns.iter().map(|c| c.as_slice()).collect()
    }
}

fn signed_log_uniform(rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    let mag = rng.uniform_range(lo.ln(), hi.ln()).exp();
    if rng.bernoulli(0.5) {
        mag
    } else {
        -mag
    }
}

pub fn generate_synthetic_inputs(spec: &SyntheticInputSpec, n: usize, rng: &RngStream) -> Result<SyntheticBatch> {
    spec.validate()?;
    let mut rng = *rng;
    let width = spec.feature_width();
    let mut features = Vec::with_capacity(n * width);
    let columns = match spec.kind {
        TargetKind::Drift => {
            let mut r = Vec::with_capacity(n);
            let mut a = Vec::with_capacity(n);
            for _ in 0..n {
                let ri = (spec.drift.log_r_std * rng.normal()).exp();
                let ai = spec.drift.adv_std * rng.normal();
                features.extend_from_slice(&crate::learnedalgos::lpo_featurize(ri, ai)?);
                r.push(ri);
                a.push(ai);
            }
            vec![r, a, vec![DEFAULT_CLIP_EPS; n]]
        }
        TargetKind::Optimizer => {
            let o = &spec.optimizer;
            // signature order: p, g, m x6, l_p, b_p, t_p, dorm, rand, lr, iteration
            let mut cols = vec![Vec::with_capacity(n); 15];
            for _ in 0..n {
                let p = o.p_std * rng.normal();
                let g = signed_log_uniform(&mut rng, o.mag_lo, o.mag_hi);
                let m: [f64; N_MOMENTA] = std::array::from_fn(|_| signed_log_uniform(&mut rng, o.mag_lo, o.mag_hi));
                let t_p = rng.uniform();
                let b_p = rng.uniform();
                let l_p = rng.uniform();
                let dorm = (rng.normal().abs() * o.dorm_width / 2.0).min(o.dorm_width);
                let noise = rng.normal();
                let it = rng.int_inclusive(1, o.max_iteration) as f64;
                let f = open_featurize(p, g, &m, t_p, b_p, dorm, l_p);
                features.extend_from_slice(&f[..width]);
                let row = [p, g, m[0], m[1], m[2], m[3], m[4], m[5], l_p, b_p, t_p, dorm, noise, o.lr, it];
                for (c, v) in cols.iter_mut().zip(row) {
                    c.push(v);
                }
            }
            cols
        }
    };
    Ok(SyntheticBatch {
        kind: spec.kind,
        n,
        columns,
        features,
        feature_width: width,
    })
}
