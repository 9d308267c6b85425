use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{forward_batch, Activation, ForwardCache, MlpParams, MlpSpec, RngStream};
use crate::symdsl::{Expr, Program, Signature, MOMENTUM_BETAS, OPTIMIZER_MAX_SIZE};

pub const N_MOMENTA: usize = 6;
pub const OPEN_FEATURES: usize = 19;
pub const NO_FEATURES: usize = 15;
const LOG_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    NoFeatures,
    OpenFf,
}

impl FeatureSet {
    pub fn width(self) -> usize {
        match self {
            FeatureSet::NoFeatures => NO_FEATURES,
            FeatureSet::OpenFf => OPEN_FEATURES,
        }
    }

    /// Default learned-optimizer network: two hidden relu layers.
    pub fn default_spec(self, hidden: usize) -> MlpSpec {
        MlpSpec::new(
            vec![self.width(), hidden, hidden, 1],
            Activation::Relu,
            Activation::Identity,
        )
        .unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum UpdateRuleKind {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    LearnedBlackbox {
        net: MlpParams,
        feature_set: FeatureSet,
        output_scale: f64,
        noise_scale: f64,
    },
    Symbolic {
        expr: Expr,
        lr: f64,
    },
}

impl UpdateRuleKind {
    pub fn adam(lr: f64) -> Self {
        UpdateRuleKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn learned(net: MlpParams, feature_set: FeatureSet) -> Self {
        UpdateRuleKind::LearnedBlackbox {
            net,
            feature_set,
            output_scale: 1e-3,
            noise_scale: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be > 0, got {v}")))
            }
        };
        match self {
            UpdateRuleKind::Sgd { lr } => pos("lr", *lr),
            UpdateRuleKind::Adam { lr, beta1, beta2, eps } => {
                pos("lr", *lr)?;
                pos("eps", *eps)?;
                if !(0.0..1.0).contains(beta1) || !(0.0..1.0).contains(beta2) {
                    return Err(Error::Config("adam betas must lie in [0, 1)".into()));
                }
                Ok(())
            }
            UpdateRuleKind::LearnedBlackbox {
                net,
                feature_set,
                output_scale,
                noise_scale,
            } => {
                pos("output_scale", *output_scale)?;
                if !(*noise_scale >= 0.0) {
                    return Err(Error::Config("noise_scale must be >= 0".into()));
                }
                if net.spec.input_width() != feature_set.width() || net.spec.output_width() != 1 {
                    return Err(Error::Config(format!(
                        "optimizer network must map {} features to 1 output",
                        feature_set.width()
                    )));
                }
                Ok(())
            }
            UpdateRuleKind::Symbolic { expr, lr } => {
                pos("lr", *lr)?;
                Signature::optimizer().check(expr, OPTIMIZER_MAX_SIZE)
            }
        }
    }

    pub fn needs_context(&self) -> bool {
        matches!(
            self,
            UpdateRuleKind::LearnedBlackbox { .. } | UpdateRuleKind::Symbolic { .. }
        )
    }
}

/// Per-parameter optimizer memory owned by one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub momenta: [Vec<f64>; N_MOMENTA],
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub iteration: u64,
}

impl OptState {
    pub fn new(n: usize) -> Self {
        Self {
            momenta: std::array::from_fn(|_| vec![0.0; n]),
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            iteration: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.adam_m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adam_m.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRule {
    pub kind: UpdateRuleKind,
    pub state: OptState,
}

impl UpdateRule {
    pub fn new(kind: UpdateRuleKind, n_params: usize) -> Result<Self> {
        kind.validate()?;
        Ok(Self {
            kind,
            state: OptState::new(n_params),
        })
    }
}

/// Per-update inputs beyond parameters and gradients.
#[derive(Debug, Clone, Copy)]
pub struct UpdateContext<'a> {
    pub t_p: f64,
    pub b_p: f64,
    pub l_p: &'a [f64],
    pub dorm: &'a [f64],
    pub rand: &'a [f64],
}

/// `m_b <- b * g + (1 - b) * m_b` for every coefficient b.
pub fn update_momenta(state: &mut OptState, g: &[f64]) -> Result<()> {
    if g.len() != state.len() {
        return Err(Error::Contract(format!(
            "gradient length {} does not match optimizer state {}",
            g.len(),
            state.len()
        )));
    }
    for (m, &b) in state.momenta.iter_mut().zip(MOMENTUM_BETAS.iter()) {
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = b * gi + (1.0 - b) * *mi;
        }
    }
    Ok(())
}

/// Share of a layer's mean absolute activation carried by each neuron,
/// scaled so the scores sum to the width. `h` is `batch x width`.
pub fn dormancy_scores(h: &[f64], batch: usize, width: usize) -> Result<Vec<f64>> {
    if width == 0 || h.len() != batch * width {
        return Err(Error::Contract(format!(
            "activation matrix of length {} is not {batch} x {width}",
            h.len()
        )));
    }
    let mut means = vec![0.0; width];
    for row in h.chunks_exact(width) {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v.abs();
        }
    }
    let total: f64 = means.iter().sum();
    if !(total > 0.0) {
        return Ok(vec![0.0; width]);
    }
    Ok(means.iter().map(|m| m * width as f64 / total).collect())
}

#[inline]
fn log_sgn(x: f64) -> (f64, f64) {
    let s = if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    };
    ((x.abs() + LOG_EPS).ln(), s)
}

/// `[p, ln|g|, sgn g, (ln|m_b|, sgn m_b) x 6, t_p, b_p, dorm, l_p]`.
pub fn open_featurize(
    p: f64,
    g: f64,
    momenta: &[f64; N_MOMENTA],
    t_p: f64,
    b_p: f64,
    dorm: f64,
    l_p: f64,
) -> [f64; OPEN_FEATURES] {
    let mut f = [0.0; OPEN_FEATURES];
    f[0] = p;
    (f[1], f[2]) = log_sgn(g);
    for (k, m) in momenta.iter().enumerate() {
        (f[3 + 2 * k], f[4 + 2 * k]) = log_sgn(*m);
    }
    f[15] = t_p;
    f[16] = b_p;
    f[17] = dorm;
    f[18] = l_p;
    f
}

/// Parameter-only features: the first 15 entries of [`open_featurize`].
pub fn no_features_featurize(p: f64, g: f64, momenta: &[f64; N_MOMENTA]) -> [f64; NO_FEATURES] {
    let full = open_featurize(p, g, momenta, 0.0, 0.0, 0.0, 0.0);
    let mut f = [0.0; NO_FEATURES];
    f.copy_from_slice(&full[..NO_FEATURES]);
    f
}

/// Layer proportion of every parameter: 0 in the first layer, 1 in the
/// last, linear in between.
pub fn layer_proportions(params: &MlpParams) -> Vec<f64> {
    let slots = params.layer_slots();
    let n_layers = slots.len();
    let mut out = vec![0.0; params.len()];
    for (l, slot) in slots.iter().enumerate() {
        let v = if n_layers > 1 {
            l as f64 / (n_layers - 1) as f64
        } else {
            0.0
        };
        out[slot.weight_range()].fill(v);
        if let Some(b) = slot.bias_offset {
            out[b..b + slot.fan_out].fill(v);
        }
    }
    out
}

/// Dormancy of the neuron each parameter feeds, from one batched forward
/// pass. Hidden layers use post-activations and the final layer uses the
/// absolute pre-activation.
pub fn parameter_dormancy(params: &MlpParams, cache: &ForwardCache) -> Result<Vec<f64>> {
    let slots = params.layer_slots();
    let n_layers = slots.len();
    let mut out = vec![0.0; params.len()];
    for (l, slot) in slots.iter().enumerate() {
        let h = if l + 1 == n_layers {
            cache.pre_activation(l)
        } else {
            cache.post_activation(l)
        };
        let scores = dormancy_scores(h, cache.batch(), slot.fan_out)?;
        for (o, s) in scores.iter().enumerate() {
            let w0 = slot.weight_offset + o * slot.fan_in;
            out[w0..w0 + slot.fan_in].fill(*s);
            if let Some(b) = slot.bias_offset {
                out[b + o] = *s;
            }
        }
    }
    Ok(out)
}

/// Draw one standard normal per parameter.
pub fn rand_column(n: usize, rng: &mut RngStream) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

/// Apply one update in place. Momenta are refreshed from `grads` before the
/// rule runs. Learning rates are annealed linearly to zero over training.
pub fn apply_update_rule(
    rule: &mut UpdateRule,
    params: &mut [f64],
    grads: &[f64],
    ctx: &UpdateContext,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || rule.state.len() != n {
        return Err(Error::Contract(format!(
            "params {n}, grads {}, optimizer state {}",
            grads.len(),
            rule.state.len()
        )));
    }
    if rule.kind.needs_context() {
        for (name, len) in [("l_p", ctx.l_p.len()), ("dorm", ctx.dorm.len()), ("rand", ctx.rand.len())] {
            if len != n {
                return Err(Error::Contract(format!("context column {name} has length {len}, want {n}")));
            }
        }
    }
    update_momenta(&mut rule.state, grads)?;
    rule.state.iteration += 1;
    let anneal = (1.0 - ctx.t_p).clamp(0.0, 1.0);
    let state = &mut rule.state;
    match &rule.kind {
        UpdateRuleKind::Sgd { lr } => {
            let lr_t = lr * anneal;
            for (p, g) in params.iter_mut().zip(grads) {
                *p -= lr_t * g;
            }
        }
        UpdateRuleKind::Adam { lr, beta1, beta2, eps } => {
            let lr_t = lr * anneal;
            let t = state.iteration as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            for i in 0..n {
                let g = grads[i];
                state.adam_m[i] = beta1 * state.adam_m[i] + (1.0 - beta1) * g;
                state.adam_v[i] = beta2 * state.adam_v[i] + (1.0 - beta2) * g * g;
                params[i] -= lr_t * (state.adam_m[i] / c1) / ((state.adam_v[i] / c2).sqrt() + eps);
            }
        }
        UpdateRuleKind::LearnedBlackbox {
            net,
            feature_set,
            output_scale,
            noise_scale,
        } => {
            let w = feature_set.width();
            let mut x = Vec::with_capacity(n * w);
            let mut m = [0.0; N_MOMENTA];
            for i in 0..n {
                for k in 0..N_MOMENTA {
                    m[k] = state.momenta[k][i];
                }
                let f = open_featurize(params[i], grads[i], &m, ctx.t_p, ctx.b_p, ctx.dorm[i], ctx.l_p[i]);
                x.extend_from_slice(&f[..w]);
            }
            let out = forward_batch(net, &x, n)?;
            for (i, o) in out.output().iter().enumerate() {
                params[i] -= output_scale * (o + noise_scale * ctx.rand[i]);
            }
        }
        UpdateRuleKind::Symbolic { expr, lr } => {
            let prog = Program::compile(expr, &Signature::optimizer())?;
            let scalar = |v: f64| vec![v; n];
            let (b_p, t_p, lr_c, it) = (
                scalar(ctx.b_p),
                scalar(ctx.t_p),
                scalar(lr * anneal),
                scalar(state.iteration as f64),
            );
            let p_now = params.to_vec();
            let cols: Vec<&[f64]> = vec![
                &p_now,
                grads,
                &state.momenta[0],
                &state.momenta[1],
                &state.momenta[2],
                &state.momenta[3],
                &state.momenta[4],
                &state.momenta[5],
                ctx.l_p,
                &b_p,
                &t_p,
                ctx.dorm,
                ctx.rand,
                &lr_c,
                &it,
            ];
            let mut upd = vec![0.0; n];
            prog.eval_columns(&cols, &mut upd);
            for (p, u) in params.iter_mut().zip(&upd) {
                *p -= u;
            }
        }
    }
    if let Some(i) = params.iter().position(|p| !p.is_finite()) {
        return Err(Error::NonFinite(format!("parameter {i} after update")));
    }
    Ok(())
}
