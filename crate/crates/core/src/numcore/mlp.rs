//! Fully connected networks with a hand-derived backward pass.
//!
//! Parameters live in one flat vector. For each layer `l` the weight matrix is
//! stored row-major as `fan_out x fan_in`, followed by `fan_out` biases when
//! biases are enabled. Gradients use the same layout index-for-index.

use serde::{Deserialize, Serialize};

use super::rng::RngStream;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre- and post-activation values.
    #[inline]
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - post * post,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl MlpSpec {
    pub fn new(
        layer_widths: Vec<usize>,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        let spec = Self {
            layer_widths,
            hidden_activation,
            output_activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs at least 2 layer widths, got {}",
                self.layer_widths.len()
            )));
        }
        if let Some(i) = self.layer_widths.iter().position(|&w| w == 0) {
            return Err(Error::Config(format!("layer width {i} is zero")));
        }
        if self.hidden_activation == Activation::Identity {
            return Err(Error::Config("hidden activation must be relu or tanh".into()));
        }
        if self.output_activation == Activation::Tanh {
            return Err(Error::Config(
                "output activation must be identity or relu".into(),
            ));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn param_count(&self, bias_enabled: bool) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| w[0] * w[1] + if bias_enabled { w[1] } else { 0 })
            .sum()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.n_layers() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    /// Same activations, every hidden width replaced by `ceil(w / 2)`.
    pub fn halved_hidden(&self) -> Self {
        let n = self.layer_widths.len();
        let widths = self
            .layer_widths
            .iter()
            .enumerate()
            .map(|(i, &w)| if i == 0 || i + 1 == n { w } else { w.div_ceil(2) })
            .collect();
        Self {
            layer_widths: widths,
            ..self.clone()
        }
    }
}

/// Location of one layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: Option<usize>,
}

impl LayerSlot {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.weight_offset..self.weight_offset + self.fan_in * self.fan_out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub spec: MlpSpec,
    pub values: Vec<f64>,
    pub bias_enabled: bool,
}

impl MlpParams {
    pub fn zeros(spec: MlpSpec, bias_enabled: bool) -> Self {
        let n = spec.param_count(bias_enabled);
        Self {
            spec,
            values: vec![0.0; n],
            bias_enabled,
        }
    }

    pub fn from_values(spec: MlpSpec, bias_enabled: bool, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let expected = spec.param_count(bias_enabled);
        if values.len() != expected {
            return Err(Error::Shape {
                layer: 0,
                expected,
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i}")));
        }
        Ok(Self {
            spec,
            values,
            bias_enabled,
        })
    }

    /// Gaussian fan-in scaled weights, zero biases. Hidden layers use gain
    /// sqrt(2) for relu and 1 for tanh; the output layer uses `output_gain`.
    pub fn init(spec: MlpSpec, bias_enabled: bool, output_gain: f64, rng: &mut RngStream) -> Self {
        let mut p = Self::zeros(spec, bias_enabled);
        let hidden_gain = match p.spec.hidden_activation {
            Activation::Relu => 2f64.sqrt(),
            _ => 1.0,
        };
        let n_layers = p.spec.n_layers();
        for (l, slot) in p.layer_slots().into_iter().enumerate() {
            let gain = if l + 1 == n_layers { output_gain } else { hidden_gain };
            let std = gain / (slot.fan_in as f64).sqrt();
            for v in &mut p.values[slot.weight_range()] {
                *v = std * rng.normal();
            }
        }
        p
    }

    pub fn layer_slots(&self) -> Vec<LayerSlot> {
        let mut offset = 0;
        self.spec
            .layer_widths
            .windows(2)
            .map(|w| {
                let weight_offset = offset;
                offset += w[0] * w[1];
                let bias_offset = if self.bias_enabled {
                    let b = offset;
                    offset += w[1];
                    Some(b)
                } else {
                    None
                };
                LayerSlot {
                    fan_in: w[0],
                    fan_out: w[1],
                    weight_offset,
                    bias_offset,
                }
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64 ^ self.values.len() as u64;
        for (i, v) in self.values.iter().enumerate() {
            h ^= v.to_bits().rotate_left((i % 61) as u32);
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        h
    }
}

/// Every pre- and post-activation of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    widths: Vec<usize>,
    fingerprint: u64,
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Network output, `batch x output_width` row-major.
    pub fn output(&self) -> &[f64] {
        self.post.last().unwrap()
    }

    /// Post-activation values of layer `l` (0-based over weight layers).
    pub fn post_activation(&self, l: usize) -> &[f64] {
        &self.post[l]
    }

    pub fn pre_activation(&self, l: usize) -> &[f64] {
        &self.pre[l]
    }
}

/// `c (m x n) = a (m x k) * b (k x n)` with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the callers size every buffer to cover the strided extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn is_sparse(x: &[f64]) -> bool {
    if x.len() < 64 {
        return false;
    }
    let nnz = x.iter().filter(|v| **v != 0.0).count();
    nnz * 8 < x.len()
}

/// Batched forward pass; `input` is `batch x input_width` row-major.
pub fn forward_batch(params: &MlpParams, input: &[f64], batch: usize) -> Result<ForwardCache> {
    let spec = &params.spec;
    let in_w = spec.input_width();
    if input.len() != batch * in_w {
        return Err(Error::Shape {
            layer: 0,
            expected: batch * in_w,
            actual: input.len(),
        });
    }
    let expected = spec.param_count(params.bias_enabled);
    if params.values.len() != expected {
        return Err(Error::Shape {
            layer: 0,
            expected,
            actual: params.values.len(),
        });
    }
    let slots = params.layer_slots();
    let mut pre = Vec::with_capacity(slots.len());
    let mut post: Vec<Vec<f64>> = Vec::with_capacity(slots.len());
    for (l, slot) in slots.iter().enumerate() {
        let x: &[f64] = if l == 0 { input } else { &post[l - 1] };
        let w = &params.values[slot.weight_range()];
        let mut z = vec![0.0; batch * slot.fan_out];
        if l == 0 && is_sparse(x) {
            for s in 0..batch {
                let xs = &x[s * slot.fan_in..(s + 1) * slot.fan_in];
                let zs = &mut z[s * slot.fan_out..(s + 1) * slot.fan_out];
                for (j, &xj) in xs.iter().enumerate() {
                    if xj != 0.0 {
                        for (o, zo) in zs.iter_mut().enumerate() {
                            *zo += w[o * slot.fan_in + j] * xj;
                        }
                    }
                }
            }
        } else {
            gemm(
                batch,
                slot.fan_in,
                slot.fan_out,
                x,
                slot.fan_in as isize,
                1,
                w,
                1,
                slot.fan_in as isize,
                0.0,
                &mut z,
            );
        }
        if let Some(bo) = slot.bias_offset {
            let b = &params.values[bo..bo + slot.fan_out];
            for row in z.chunks_exact_mut(slot.fan_out) {
                for (zo, bo) in row.iter_mut().zip(b) {
                    *zo += bo;
                }
            }
        }
        let act = spec.activation(l);
        let h: Vec<f64> = match act {
            Activation::Identity => z.clone(),
            _ => z.iter().map(|&v| act.apply(v)).collect(),
        };
        pre.push(z);
        post.push(h);
    }
    Ok(ForwardCache {
        batch,
        widths: spec.layer_widths.clone(),
        fingerprint: params.fingerprint(),
        input: input.to_vec(),
        pre,
        post,
    })
}

/// Batched backward pass. Parameter gradients are summed over the batch.
/// Input gradients (`batch x input_width`) are only formed when requested.
pub fn backward_batch(
    params: &MlpParams,
    cache: &ForwardCache,
    upstream: &[f64],
    want_input_grad: bool,
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let spec = &params.spec;
    if cache.widths != spec.layer_widths || cache.fingerprint != params.fingerprint() {
        return Err(Error::Contract(
            "forward cache does not belong to these parameters".into(),
        ));
    }
    let batch = cache.batch;
    let out_w = spec.output_width();
    if upstream.len() != batch * out_w {
        return Err(Error::Shape {
            layer: spec.n_layers(),
            expected: batch * out_w,
            actual: upstream.len(),
        });
    }
    let slots = params.layer_slots();
    let mut grads = vec![0.0; params.values.len()];
    let mut delta: Vec<f64> = upstream.to_vec();
    let mut input_grad = None;
    for l in (0..slots.len()).rev() {
        let slot = slots[l];
        let act = spec.activation(l);
        if act != Activation::Identity {
            for ((d, &z), &h) in delta.iter_mut().zip(&cache.pre[l]).zip(&cache.post[l]) {
                *d *= act.derivative(z, h);
            }
        }
        let x: &[f64] = if l == 0 { &cache.input } else { &cache.post[l - 1] };
        let gw = &mut grads[slot.weight_range()];
        if l == 0 && is_sparse(x) {
            for s in 0..batch {
                let xs = &x[s * slot.fan_in..(s + 1) * slot.fan_in];
                let ds = &delta[s * slot.fan_out..(s + 1) * slot.fan_out];
                for (j, &xj) in xs.iter().enumerate() {
                    if xj != 0.0 {
                        for (o, &d) in ds.iter().enumerate() {
                            gw[o * slot.fan_in + j] += d * xj;
                        }
                    }
                }
            }
        } else {
            // dW (out x in) = delta^T (out x batch) * x (batch x in)
            gemm(
                slot.fan_out,
                batch,
                slot.fan_in,
                &delta,
                1,
                slot.fan_out as isize,
                x,
                slot.fan_in as isize,
                1,
                0.0,
                gw,
            );
        }
        if let Some(bo) = slot.bias_offset {
            let gb = &mut grads[bo..bo + slot.fan_out];
            for row in delta.chunks_exact(slot.fan_out) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
        }
        if l > 0 || want_input_grad {
            let w = &params.values[slot.weight_range()];
            let mut dx = vec![0.0; batch * slot.fan_in];
            gemm(
                batch,
                slot.fan_out,
                slot.fan_in,
                &delta,
                slot.fan_out as isize,
                1,
                w,
                slot.fan_in as isize,
                1,
                0.0,
                &mut dx,
            );
            if l == 0 {
                input_grad = Some(dx);
            } else {
                delta = dx;
            }
        }
    }
    Ok((grads, input_grad))
}

/// Single-sample forward pass.
pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    let cache = forward_batch(params, input, 1)?;
    Ok((cache.output().to_vec(), cache))
}

/// Single-sample backward pass returning `(param_grads, input_grad)`.
pub fn mlp_backward(
    params: &MlpParams,
    cache: &ForwardCache,
    upstream_grad: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if cache.batch != 1 {
        return Err(Error::Contract(format!(
            "single-sample backward given a cache of batch {}",
            cache.batch
        )));
    }
    let (g, dx) = backward_batch(params, cache, upstream_grad, true)?;
    Ok((g, dx.unwrap()))
}

/// Rescale `grads` so its L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &[f64], max_norm: f64) -> Result<Vec<f64>> {
    let mut out = grads.to_vec();
    clip_global_norm_in_place(&mut out, max_norm)?;
    Ok(out)
}

/// In-place variant of [`clip_global_norm`]; returns the pre-clip norm.
pub fn clip_global_norm_in_place(grads: &mut [f64], max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::Contract(format!("max_norm must be > 0, got {max_norm}")));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i}")));
    }
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(widths: &[usize], hidden: Activation, out: Activation) -> MlpSpec {
        MlpSpec::new(widths.to_vec(), hidden, out).unwrap()
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(MlpSpec::new(vec![3], Activation::Relu, Activation::Identity).is_err());
        assert!(MlpSpec::new(vec![3, 0, 1], Activation::Relu, Activation::Identity).is_err());
        assert!(MlpSpec::new(vec![3, 1], Activation::Identity, Activation::Identity).is_err());
    }

    #[test]
    fn param_count_with_and_without_bias() {
        let s = spec(&[3, 4, 2], Activation::Tanh, Activation::Identity);
        assert_eq!(s.param_count(false), 3 * 4 + 4 * 2);
        assert_eq!(s.param_count(true), 3 * 4 + 4 + 4 * 2 + 2);
    }

    #[test]
    fn zero_input_bias_free_gives_zero() {
        let mut rng = RngStream::new(1, 0);
        let s = spec(&[5, 8, 3], Activation::Relu, Activation::Identity);
        let p = MlpParams::init(s, false, 1.0, &mut rng);
        let (y, _) = mlp_forward(&p, &[0.0; 5]).unwrap();
        assert_eq!(y, vec![0.0; 3]);
    }

    #[test]
    fn identity_single_layer() {
        let s = spec(&[3, 3], Activation::Relu, Activation::Identity);
        let mut values = vec![0.0; 9];
        for i in 0..3 {
            values[i * 3 + i] = 1.0;
        }
        let p = MlpParams::from_values(s, false, values).unwrap();
        let x = [0.5, -2.0, 3.25];
        let (y, _) = mlp_forward(&p, &x).unwrap();
        assert_eq!(y, x.to_vec());
    }

    #[test]
    fn hand_computed_2_2_1() {
        // W1 = [[1, 2], [-1, 0.5]], b1 = [0.1, -0.2], relu
        // W2 = [[3, -1]], b2 = [0.5]
        // x = [1, -1]: z1 = [1-2+0.1, -1-0.5-0.2] = [-0.9, -1.7] -> h1 = [0, 0] -> y = 0.5
        // x = [2, 1]:  z1 = [2+2+0.1, -2+0.5-0.2] = [4.1, -1.7] -> h1 = [4.1, 0] -> y = 12.3+0.5 = 12.8
        let s = spec(&[2, 2, 1], Activation::Relu, Activation::Identity);
        let values = vec![1.0, 2.0, -1.0, 0.5, 0.1, -0.2, 3.0, -1.0, 0.5];
        let p = MlpParams::from_values(s, true, values).unwrap();
        assert_eq!(mlp_forward(&p, &[1.0, -1.0]).unwrap().0, vec![0.5]);
        let y = mlp_forward(&p, &[2.0, 1.0]).unwrap().0[0];
        assert!((y - 12.8).abs() < 1e-12);
    }

    #[test]
    fn shape_errors_name_layer() {
        let s = spec(&[2, 2, 1], Activation::Relu, Activation::Identity);
        let p = MlpParams::zeros(s, true);
        match mlp_forward(&p, &[1.0, 2.0, 3.0]) {
            Err(Error::Shape { layer: 0, expected: 2, actual: 3 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = RngStream::new(2, 0);
        let s = spec(&[3, 4, 2], Activation::Tanh, Activation::Identity);
        let p = MlpParams::init(s, true, 1.0, &mut rng);
        let (_, cache) = mlp_forward(&p, &[0.3, -0.1, 0.7]).unwrap();
        let (g, dx) = mlp_backward(&p, &cache, &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        assert!(dx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_layer_input_grad_is_transpose() {
        let s = spec(&[3, 2], Activation::Relu, Activation::Identity);
        let w = vec![1.0, 2.0, 3.0, -4.0, 5.0, -6.0];
        let p = MlpParams::from_values(s, false, w.clone()).unwrap();
        let (_, cache) = mlp_forward(&p, &[0.1, 0.2, 0.3]).unwrap();
        let up = [0.5, -2.0];
        let (_, dx) = mlp_backward(&p, &cache, &up).unwrap();
        for j in 0..3 {
            let expect = w[j] * up[0] + w[3 + j] * up[1];
            assert!((dx[j] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = RngStream::new(3, 0);
        let s = spec(&[2, 3, 1], Activation::Relu, Activation::Identity);
        let mut p = MlpParams::init(s, true, 1.0, &mut rng);
        let (_, cache) = mlp_forward(&p, &[1.0, 1.0]).unwrap();
        p.values[0] += 1.0;
        assert!(matches!(
            mlp_backward(&p, &cache, &[1.0]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn sparse_and_dense_paths_agree() {
        let mut rng = RngStream::new(4, 0);
        let s = spec(&[100, 6, 2], Activation::Tanh, Activation::Identity);
        let p = MlpParams::init(s, true, 1.0, &mut rng);
        let mut x = vec![0.0; 300];
        x[3] = 1.0;
        x[150] = 1.0;
        x[299] = -0.5;
        let cache = forward_batch(&p, &x, 3).unwrap();
        let up = [1.0, -1.0, 0.5, 0.25, 2.0, 0.0];
        let (g_sparse, dx_sparse) = backward_batch(&p, &cache, &up, true).unwrap();
        // dense reference: one sample at a time with a dense perturbation
        // so the sparse heuristic does not trigger.
        let mut g_ref = vec![0.0; p.len()];
        for s_i in 0..3 {
            let xs = &x[s_i * 100..(s_i + 1) * 100];
            let (y, c) = mlp_forward(&p, xs).unwrap();
            assert!((y[0] - cache.output()[s_i * 2]).abs() < 1e-12);
            let (g, dx) = mlp_backward(&p, &c, &up[s_i * 2..s_i * 2 + 2]).unwrap();
            for (a, b) in g_ref.iter_mut().zip(&g) {
                *a += b;
            }
            let dxs = &dx_sparse.as_ref().unwrap()[s_i * 100..(s_i + 1) * 100];
            for (a, b) in dx.iter().zip(dxs) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        for (a, b) in g_ref.iter().zip(&g_sparse) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn clip_examples() {
        let g = vec![0.3, 0.0];
        assert_eq!(clip_global_norm(&g, 0.5).unwrap(), g);
        let g = vec![0.6, 0.8];
        let c = clip_global_norm(&g, 0.5).unwrap();
        assert!((c[0] - 0.3).abs() < 1e-15 && (c[1] - 0.4).abs() < 1e-15);
        assert_eq!(clip_global_norm(&[0.0; 4], 0.5).unwrap(), vec![0.0; 4]);
        assert!(clip_global_norm(&[f64::NAN], 0.5).is_err());
        assert!(clip_global_norm(&[1.0], 0.0).is_err());
    }

    #[test]
    fn halved_hidden_widths() {
        let s = spec(&[7, 128, 33, 1], Activation::Relu, Activation::Relu);
        assert_eq!(s.halved_hidden().layer_widths, vec![7, 64, 17, 1]);
    }
}
