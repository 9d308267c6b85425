use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{backward_batch, forward_batch, Activation, Adam, MlpParams, MlpSpec, RngStream};
use crate::symdsl::{Expr, Program, Signature, DRIFT_MAX_SIZE};

/// Clip epsilon bound to `eps` when a symbolic drift mentions it.
pub const DEFAULT_CLIP_EPS: f64 = 0.2;

/// Raw symbolic values below this count as a non-negativity violation.
pub const VIOLATION_TOL: f64 = 1e-9;

pub const LPO_FEATURES: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum DriftFunction {
    PpoClip { eps: f64 },
    Blackbox { net: MlpParams },
    Symbolic { expr: Expr },
}

impl DriftFunction {
    pub fn ppo(eps: f64) -> Self {
        DriftFunction::PpoClip { eps }
    }

    pub fn blackbox(net: MlpParams) -> Result<Self> {
        let d = DriftFunction::Blackbox { net };
        d.validate()?;
        Ok(d)
    }

    pub fn symbolic(expr: Expr) -> Result<Self> {
        let d = DriftFunction::Symbolic { expr };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DriftFunction::PpoClip { eps } => {
                if !(*eps > 0.0 && eps.is_finite()) {
                    return Err(Error::Config(format!("clip eps must be > 0, got {eps}")));
                }
            }
            DriftFunction::Blackbox { net } => {
                if net.bias_enabled {
                    return Err(Error::Config("drift network must be bias-free".into()));
                }
                if net.spec.output_activation != Activation::Relu {
                    return Err(Error::Config("drift network needs a relu output".into()));
                }
                if net.spec.input_width() != LPO_FEATURES || net.spec.output_width() != 1 {
                    return Err(Error::Config(format!(
                        "drift network must map {LPO_FEATURES} features to 1 output"
                    )));
                }
            }
            DriftFunction::Symbolic { expr } => Signature::drift().check(expr, DRIFT_MAX_SIZE)?,
        }
        Ok(())
    }
}

/// `[(1-r), (1-r)^2, (1-r)A, (1-r)^2 A, ln r, (ln r) A, (ln r)^2 A]`.
pub fn lpo_featurize(r: f64, a: f64) -> Result<[f64; LPO_FEATURES]> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("ratio must be > 0, got {r}")));
    }
    Ok(lpo_features_unchecked(r, a))
}

#[inline]
fn lpo_features_unchecked(r: f64, a: f64) -> [f64; LPO_FEATURES] {
    let u = 1.0 - r;
    let l = r.ln();
    [u, u * u, u * a, u * u * a, l, l * a, l * l * a]
}

#[inline]
fn lpo_feature_dr(r: f64, a: f64) -> [f64; LPO_FEATURES] {
    let u = 1.0 - r;
    let l = r.ln();
    [-1.0, -2.0 * u, -a, -2.0 * u * a, 1.0 / r, a / r, 2.0 * l * a / r]
}

#[inline]
fn ppo_drift(r: f64, a: f64, eps: f64) -> (f64, f64) {
    let z = (r - r.clamp(1.0 - eps, 1.0 + eps)) * a;
    if z > 0.0 {
        (z, a)
    } else {
        (0.0, 0.0)
    }
}

/// Drift values over a batch together with dD/dr.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftBatch {
    pub value: Vec<f64>,
    pub d_dr: Vec<f64>,
    /// Symbolic samples whose raw value fell below `-1e-9` before clamping.
    pub violations: usize,
}

/// A drift function prepared for repeated batched evaluation.
pub enum PreparedDrift<'a> {
    Ppo(f64),
    Blackbox(&'a MlpParams),
    Symbolic(Program),
}

impl<'a> PreparedDrift<'a> {
    pub fn new(d: &'a DriftFunction) -> Result<Self> {
        d.validate()?;
        Ok(match d {
            DriftFunction::PpoClip { eps } => PreparedDrift::Ppo(*eps),
            DriftFunction::Blackbox { net } => PreparedDrift::Blackbox(net),
            DriftFunction::Symbolic { expr } => {
                PreparedDrift::Symbolic(Program::compile(expr, &Signature::drift())?)
            }
        })
    }

    /// Evaluate on paired `(r, A)` samples. The derivative is analytic for
    /// the clip formula and the network, and a central difference with step
    /// `1e-5 * max(1, |r|)` for symbolic expressions.
    pub fn eval_batch(&self, r: &[f64], a: &[f64], want_grad: bool) -> Result<DriftBatch> {
        if r.len() != a.len() {
            return Err(Error::Contract("ratio and advantage lengths differ".into()));
        }
        if let Some(bad) = r.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Domain(format!("ratio must be > 0, got {bad}")));
        }
        let n = r.len();
        let mut value = vec![0.0; n];
        let mut d_dr = vec![0.0; n];
        let mut violations = 0;
        match self {
            PreparedDrift::Ppo(eps) => {
                for i in 0..n {
                    let (v, g) = ppo_drift(r[i], a[i], *eps);
                    value[i] = v;
                    d_dr[i] = g;
                }
            }
            PreparedDrift::Blackbox(net) => {
                if n == 0 {
                    return Ok(DriftBatch { value, d_dr, violations });
                }
                let mut x = Vec::with_capacity(n * LPO_FEATURES);
                for i in 0..n {
                    x.extend_from_slice(&lpo_features_unchecked(r[i], a[i]));
                }
                let cache = forward_batch(net, &x, n)?;
                value.copy_from_slice(cache.output());
                if want_grad {
                    let ones = vec![1.0; n];
                    let (_, dx) = backward_batch(net, &cache, &ones, true)?;
                    let dx = dx.unwrap();
                    for i in 0..n {
                        let df = lpo_feature_dr(r[i], a[i]);
                        d_dr[i] = (0..LPO_FEATURES).map(|k| dx[i * LPO_FEATURES + k] * df[k]).sum();
                    }
                }
            }
            PreparedDrift::Symbolic(prog) => {
                for i in 0..n {
                    let raw = prog.eval(&[r[i], a[i], DEFAULT_CLIP_EPS]);
                    if raw < -VIOLATION_TOL || raw.is_nan() {
                        violations += 1;
                    }
                    value[i] = clamp_nonneg(raw);
                    if want_grad {
                        let h = (1e-5 * r[i].abs().max(1.0)).min(0.5 * r[i]);
                        let up = clamp_nonneg(prog.eval(&[r[i] + h, a[i], DEFAULT_CLIP_EPS]));
                        let dn = clamp_nonneg(prog.eval(&[r[i] - h, a[i], DEFAULT_CLIP_EPS]));
                        d_dr[i] = (up - dn) / (2.0 * h);
                    }
                }
            }
        }
        Ok(DriftBatch { value, d_dr, violations })
    }
}

#[inline]
fn clamp_nonneg(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Single drift value, with the symbolic violation flag.
pub fn drift_eval_flagged(d: &DriftFunction, r: f64, a: f64) -> Result<(f64, bool)> {
    let b = PreparedDrift::new(d)?.eval_batch(&[r], &[a], false)?;
    Ok((b.value[0], b.violations > 0))
}

pub fn drift_eval(d: &DriftFunction, r: f64, a: f64) -> Result<f64> {
    drift_eval_flagged(d, r, a).map(|(v, _)| v)
}

/// dD/dr at one point using the same rule as the training loss.
pub fn drift_dr(d: &DriftFunction, r: f64, a: f64) -> Result<f64> {
    Ok(PreparedDrift::new(d)?.eval_batch(&[r], &[a], true)?.d_dr[0])
}

/// 7 -> 128 -> 1 bias-free relu network.
pub fn lpo_spec() -> MlpSpec {
    MlpSpec::new(vec![LPO_FEATURES, 128, 1], Activation::Relu, Activation::Relu).unwrap()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpoInitConfig {
    pub batch: usize,
    pub max_iters: usize,
    pub lr: f64,
    pub target_mse: f64,
    pub fail_mse: f64,
    pub check_every: usize,
}

impl Default for LpoInitConfig {
    fn default() -> Self {
        Self {
            batch: 256,
            max_iters: 30_000,
            lr: 3e-3,
            target_mse: 1e-5,
            fail_mse: 1e-3,
            check_every: 250,
        }
    }
}

fn sample_ratio_adv(rng: &mut RngStream) -> (f64, f64) {
    (rng.uniform_range(0.5, 1.8), rng.uniform_range(-3.5, 3.5))
}

/// Fit a bias-free drift network to the clip drift with parameter `eps`.
/// Training stops once the held-out MSE is below `target_mse`; reaching the
/// iteration cap with MSE at or above `fail_mse` is an error.
pub fn init_lpo_near_ppo(spec: &MlpSpec, eps: f64, rng: &RngStream) -> Result<MlpParams> {
    init_lpo_near_ppo_with(spec, eps, rng, &LpoInitConfig::default())
}

pub fn init_lpo_near_ppo_with(
    spec: &MlpSpec,
    eps: f64,
    rng: &RngStream,
    cfg: &LpoInitConfig,
) -> Result<MlpParams> {
    spec.validate()?;
    let mut init_rng = rng.derive(0);
    let mut net = MlpParams::init(spec.clone(), false, 1.0, &mut init_rng);
    // non-negative output weights keep the output relu alive at the start
    let last = *net.layer_slots().last().unwrap();
    for w in &mut net.values[last.weight_range()] {
        *w = w.abs();
    }
    DriftFunction::Blackbox { net: net.clone() }.validate()?;

    let mut held_rng = rng.derive(1);
    let held: Vec<(f64, f64)> = (0..2048).map(|_| sample_ratio_adv(&mut held_rng)).collect();
    let mut held_x = Vec::with_capacity(held.len() * LPO_FEATURES);
    let held_y: Vec<f64> = held
        .iter()
        .map(|&(r, a)| {
            held_x.extend_from_slice(&lpo_features_unchecked(r, a));
            ppo_drift(r, a, eps).0
        })
        .collect();
    let held_mse = |net: &MlpParams| -> Result<f64> {
        let c = forward_batch(net, &held_x, held_y.len())?;
        Ok(c.output().iter().zip(&held_y).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / held_y.len() as f64)
    };

    let mut opt = Adam::new(net.len(), cfg.lr);
    let mut batch_rng = rng.derive(2);
    let mut x = vec![0.0; cfg.batch * LPO_FEATURES];
    let mut y = vec![0.0; cfg.batch];
    let mut mse = held_mse(&net)?;
    for it in 0..cfg.max_iters {
        if it % cfg.check_every == 0 {
            mse = held_mse(&net)?;
            if mse < cfg.target_mse {
                return Ok(net);
            }
        }
        for i in 0..cfg.batch {
            let (r, a) = sample_ratio_adv(&mut batch_rng);
            x[i * LPO_FEATURES..(i + 1) * LPO_FEATURES].copy_from_slice(&lpo_features_unchecked(r, a));
            y[i] = ppo_drift(r, a, eps).0;
        }
        let cache = forward_batch(&net, &x, cfg.batch)?;
        let scale = 2.0 / cfg.batch as f64;
        let up: Vec<f64> = cache.output().iter().zip(&y).map(|(p, t)| scale * (p - t)).collect();
        let (g, _) = backward_batch(&net, &cache, &up, false)?;
        // cosine decay keeps the late iterations from bouncing
        let frac = it as f64 / cfg.max_iters as f64;
        let lr = cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
        opt.step_with_lr(&mut net.values, &g, lr.max(cfg.lr * 0.01));
    }
    mse = mse.min(held_mse(&net)?);
    if mse >= cfg.fail_mse {
        return Err(Error::Training(format!(
            "drift initialisation stalled at held-out MSE {mse:.3e}"
        )));
    }
    Ok(net)
}
