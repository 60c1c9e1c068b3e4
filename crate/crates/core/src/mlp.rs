//! Dense multilayer perceptrons with exact input derivatives.
//!
//! Every neuron carries a truncated Taylor "jet": its value, its gradient with
//! respect to the network input and its Hessian with respect to the input.
//! Jets are pushed forward layer by layer: an affine layer is a matrix product
//! on the jets, and a coordinatewise activation `h = σ(z)` maps
//!
//! ```text
//! (v, g, H)  ->  (σ(v), σ'(v) g, σ''(v) g gᵀ + σ'(v) H)
//! ```
//!
//! Parameter sensitivities of any linear functional of the output jets are
//! obtained with one reverse sweep over the recorded [`Tape`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};

/// Coordinatewise activation function.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sin,
}

impl Activation {
    /// `[σ, σ', σ'', σ''']` at `z`.
    #[inline]
    pub fn derivatives(self, z: f64) -> [f64; 4] {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                let s = 1.0 - t * t;
                [t, s, -2.0 * t * s, s * (4.0 * t * t - 2.0 * s)]
            }
            Activation::Sin => {
                let (sn, cs) = z.sin_cos();
                [sn, cs, -sn, -cs]
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sin => "sin",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "sin" => Some(Activation::Sin),
            _ => None,
        }
    }
}

/// Architecture of one expert network.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

/// Location of one affine layer inside a flat parameter vector.
///
/// Weights are stored row-major (`rows` outputs by `cols` inputs) and are
/// immediately followed by the `rows` biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    pub rows: usize,
    pub cols: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerLayout {
    pub fn end(&self) -> usize {
        self.bias_offset + self.rows
    }
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        output_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidArgument(
                "input and output dimensions must be positive".into(),
            ));
        }
        if hidden_widths.is_empty() || hidden_widths.contains(&0) {
            return Err(Error::InvalidArgument(
                "hidden widths must be a non-empty list of positive integers".into(),
            ));
        }
        Ok(Self { input_dim, hidden_widths, output_dim, activation })
    }

    /// `(outputs, inputs)` of each affine layer, in evaluation order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_widths);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }

    pub fn layout(&self) -> Vec<LayerLayout> {
        let mut offset = 0;
        self.layer_shapes()
            .into_iter()
            .map(|(rows, cols)| {
                let l = LayerLayout {
                    rows,
                    cols,
                    weight_offset: offset,
                    bias_offset: offset + rows * cols,
                };
                offset = l.end();
                l
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(r, c)| r * c + r).sum()
    }

    /// Plain network output.
    pub fn forward(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.tape(params, x, JetOrder::Value)?.output_values())
    }

    /// Output value together with exact first and second input derivatives.
    pub fn bundle(&self, params: &[f64], x: &[f64]) -> Result<DerivativeBundle> {
        Ok(self.tape(params, x, JetOrder::Full)?.bundle())
    }

    /// Gradient with respect to the parameters of `<cotangent, bundle(params, x)>`.
    pub fn bundle_vjp(
        &self,
        params: &[f64],
        x: &[f64],
        cotangent: &DerivativeBundle,
    ) -> Result<Vec<f64>> {
        check_dim(self.output_dim, cotangent.output_dim)?;
        check_dim(self.input_dim, cotangent.input_dim)?;
        let tape = self.tape(params, x, JetOrder::Full)?;
        let mut out = vec![0.0; self.param_count()];
        tape.vjp_into(self, params, &cotangent.to_jets(), &mut out);
        Ok(out)
    }

    /// Forward pass that records every layer's jets for a later reverse sweep.
    pub fn tape(&self, params: &[f64], x: &[f64], order: JetOrder) -> Result<Tape> {
        check_dim(self.input_dim, x.len())?;
        check_dim(self.param_count(), params.len())?;
        let d = self.input_dim;
        let width = order.width(d);
        let layout = self.layout();

        let mut input = vec![0.0; d * width];
        for (i, &xi) in x.iter().enumerate() {
            input[i * width] = xi;
            if width > 1 {
                input[i * width + 1 + i] = 1.0;
            }
        }

        let mut layers = Vec::with_capacity(layout.len());
        for (li, l) in layout.iter().enumerate() {
            let mut pre = vec![0.0; l.rows * width];
            affine(params, l, &input, &mut pre, width);
            let mut next = Vec::new();
            if li + 1 < layout.len() {
                next.resize(l.rows * width, 0.0);
                for o in 0..l.rows {
                    let span = o * width..(o + 1) * width;
                    activate(self.activation, &pre[span.clone()], &mut next[span], d);
                }
            }
            layers.push(LayerTape { input, pre });
            input = next;
        }
        Ok(Tape { input_dim: d, output_dim: self.output_dim, width, layers })
    }
}

/// Which derivatives the forward pass propagates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JetOrder {
    Value,
    Full,
}

impl JetOrder {
    pub fn width(self, input_dim: usize) -> usize {
        match self {
            JetOrder::Value => 1,
            JetOrder::Full => 1 + input_dim + input_dim * input_dim,
        }
    }
}

fn affine(params: &[f64], l: &LayerLayout, input: &[f64], out: &mut [f64], width: usize) {
    let w = &params[l.weight_offset..l.bias_offset];
    let b = &params[l.bias_offset..l.end()];
    for o in 0..l.rows {
        let row = &w[o * l.cols..(o + 1) * l.cols];
        for c in 0..width {
            let mut acc = 0.0;
            for (i, &wi) in row.iter().enumerate() {
                acc += wi * input[i * width + c];
            }
            out[o * width + c] = if c == 0 { acc + b[o] } else { acc };
        }
    }
}

fn activate(act: Activation, z: &[f64], h: &mut [f64], d: usize) {
    let [s0, s1, s2, _] = act.derivatives(z[0]);
    h[0] = s0;
    if z.len() == 1 {
        return;
    }
    let g = &z[1..1 + d];
    let hz = &z[1 + d..];
    for k in 0..d {
        h[1 + k] = s1 * g[k];
    }
    let hh = &mut h[1 + d..];
    for k in 0..d {
        for l in k..d {
            let v = s2 * g[k] * g[l] + s1 * hz[k * d + l];
            hh[k * d + l] = v;
            hh[l * d + k] = v;
        }
    }
}

/// Pulls a jet cotangent `hbar` on `h = σ(z)` back onto `z`.
fn activate_vjp(act: Activation, z: &[f64], hbar: &[f64], zbar: &mut [f64], d: usize) {
    let [_, s1, s2, s3] = act.derivatives(z[0]);
    if z.len() == 1 {
        zbar[0] = hbar[0] * s1;
        return;
    }
    let g = &z[1..1 + d];
    let hz = &z[1 + d..];
    let gbar = &hbar[1..1 + d];
    let hhbar = &hbar[1 + d..];

    let mut v = hbar[0] * s1;
    for k in 0..d {
        v += s2 * gbar[k] * g[k];
        for l in 0..d {
            let a = hhbar[k * d + l];
            v += s3 * a * g[k] * g[l] + s2 * a * hz[k * d + l];
        }
    }
    zbar[0] = v;
    for k in 0..d {
        let mut acc = s1 * gbar[k];
        for l in 0..d {
            acc += s2 * (hhbar[k * d + l] + hhbar[l * d + k]) * g[l];
        }
        zbar[1 + k] = acc;
    }
    for kl in 0..d * d {
        zbar[1 + d + kl] = s1 * hhbar[kl];
    }
}

#[derive(Clone, Debug)]
struct LayerTape {
    input: Vec<f64>,
    pre: Vec<f64>,
}

/// Recorded forward pass of one network at one input point.
#[derive(Clone, Debug)]
pub struct Tape {
    input_dim: usize,
    output_dim: usize,
    width: usize,
    layers: Vec<LayerTape>,
}

impl Tape {
    pub fn width(&self) -> usize {
        self.width
    }

    /// Output jets, `output_dim` blocks of `width` entries.
    pub fn output_jets(&self) -> &[f64] {
        &self.layers.last().expect("network has at least one layer").pre
    }

    pub fn output_values(&self) -> Vec<f64> {
        self.output_jets().iter().step_by(self.width).copied().collect()
    }

    /// Panics if the tape was recorded with [`JetOrder::Value`].
    pub fn bundle(&self) -> DerivativeBundle {
        assert!(self.width > 1, "value-only tape carries no derivatives");
        DerivativeBundle::from_jets(self.input_dim, self.output_dim, self.output_jets())
    }

    /// Accumulates `∂<cot, output jets>/∂params` into `out`.
    ///
    /// `cot` is laid out like [`Tape::output_jets`]; `out` must have the
    /// spec's parameter count.
    pub fn vjp_into(&self, spec: &MlpSpec, params: &[f64], cot: &[f64], out: &mut [f64]) {
        let width = self.width;
        let d = self.input_dim;
        let layout = spec.layout();
        debug_assert_eq!(cot.len(), self.output_jets().len());
        debug_assert_eq!(out.len(), spec.param_count());

        let mut zbar = cot.to_vec();
        let mut hbar = Vec::new();
        for (li, l) in layout.iter().enumerate().rev() {
            let tape = &self.layers[li];
            for o in 0..l.rows {
                let zrow = &zbar[o * width..(o + 1) * width];
                out[l.bias_offset + o] += zrow[0];
                let wrow = &mut out[l.weight_offset + o * l.cols..l.weight_offset + (o + 1) * l.cols];
                for (i, wg) in wrow.iter_mut().enumerate() {
                    let h = &tape.input[i * width..(i + 1) * width];
                    let mut acc = 0.0;
                    for c in 0..width {
                        acc += zrow[c] * h[c];
                    }
                    *wg += acc;
                }
            }
            if li == 0 {
                break;
            }
            hbar.clear();
            hbar.resize(l.cols * width, 0.0);
            let w = &params[l.weight_offset..l.bias_offset];
            for o in 0..l.rows {
                let zrow = &zbar[o * width..(o + 1) * width];
                for i in 0..l.cols {
                    let wi = w[o * l.cols + i];
                    for c in 0..width {
                        hbar[i * width + c] += wi * zrow[c];
                    }
                }
            }
            let prev = &self.layers[li - 1].pre;
            zbar.clear();
            zbar.resize(l.cols * width, 0.0);
            for i in 0..l.cols {
                activate_vjp(
                    spec.activation,
                    &prev[i * width..(i + 1) * width],
                    &hbar[i * width..(i + 1) * width],
                    &mut zbar[i * width..(i + 1) * width],
                    d,
                );
            }
        }
    }
}

/// Value, input gradient and input Hessian of a vector-valued function.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeBundle {
    pub input_dim: usize,
    pub output_dim: usize,
    /// `output_dim` entries.
    pub value: Vec<f64>,
    /// `output_dim × input_dim`, row-major.
    pub grad: Vec<f64>,
    /// `output_dim × input_dim × input_dim`, row-major.
    pub hess: Vec<f64>,
}

impl DerivativeBundle {
    pub fn zeros(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            value: vec![0.0; output_dim],
            grad: vec![0.0; output_dim * input_dim],
            hess: vec![0.0; output_dim * input_dim * input_dim],
        }
    }

    #[inline]
    pub fn grad_at(&self, o: usize, k: usize) -> f64 {
        self.grad[o * self.input_dim + k]
    }

    #[inline]
    pub fn hess_at(&self, o: usize, k: usize, l: usize) -> f64 {
        let d = self.input_dim;
        self.hess[(o * d + k) * d + l]
    }

    #[inline]
    pub fn grad_mut(&mut self, o: usize, k: usize) -> &mut f64 {
        &mut self.grad[o * self.input_dim + k]
    }

    #[inline]
    pub fn hess_mut(&mut self, o: usize, k: usize, l: usize) -> &mut f64 {
        let d = self.input_dim;
        &mut self.hess[(o * d + k) * d + l]
    }

    /// Laplacian of output `o`.
    pub fn laplacian(&self, o: usize) -> f64 {
        (0..self.input_dim).map(|k| self.hess_at(o, k, k)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.value
            .iter()
            .chain(&self.grad)
            .chain(&self.hess)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Packs into per-output jets `[value, grad, hess]`.
    pub fn to_jets(&self) -> Vec<f64> {
        let d = self.input_dim;
        let width = JetOrder::Full.width(d);
        let mut jets = vec![0.0; self.output_dim * width];
        for o in 0..self.output_dim {
            let j = &mut jets[o * width..(o + 1) * width];
            j[0] = self.value[o];
            j[1..1 + d].copy_from_slice(&self.grad[o * d..(o + 1) * d]);
            j[1 + d..].copy_from_slice(&self.hess[o * d * d..(o + 1) * d * d]);
        }
        jets
    }

    pub fn from_jets(input_dim: usize, output_dim: usize, jets: &[f64]) -> Self {
        let d = input_dim;
        let width = JetOrder::Full.width(d);
        let mut b = Self::zeros(d, output_dim);
        for o in 0..output_dim {
            let j = &jets[o * width..(o + 1) * width];
            b.value[o] = j[0];
            b.grad[o * d..(o + 1) * d].copy_from_slice(&j[1..1 + d]);
            b.hess[o * d * d..(o + 1) * d * d].copy_from_slice(&j[1 + d..]);
        }
        b
    }
}

/// Parameters of one expert together with their layer layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock {
    pub values: Vec<f64>,
    pub layout: Vec<LayerLayout>,
}

impl ParamBlock {
    pub fn from_values(spec: &MlpSpec, values: Vec<f64>) -> Result<Self> {
        check_dim(spec.param_count(), values.len())?;
        Ok(Self { values, layout: spec.layout() })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Sets the last layer's weights and biases to zero.
    pub fn zero_output_layer(&mut self) {
        if let Some(l) = self.layout.last() {
            self.values[l.weight_offset..l.end()].fill(0.0);
        }
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(spec: &MlpSpec, seed: u64) -> ParamBlock {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = spec.layout();
    let mut values = vec![0.0; spec.param_count()];
    for l in &layout {
        let a = (6.0 / (l.rows + l.cols) as f64).sqrt();
        for w in &mut values[l.weight_offset..l.bias_offset] {
            *w = rng.gen_range(-a..a);
        }
    }
    ParamBlock { values, layout }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(widths: &[usize], act: Activation) -> MlpSpec {
        MlpSpec::new(2, widths.to_vec(), 1, act).unwrap()
    }

    /// Straightforward evaluator written independently of the jet machinery.
    fn naive_forward(spec: &MlpSpec, p: &[f64], x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let shapes = spec.layer_shapes();
        let mut off = 0;
        for (li, (rows, cols)) in shapes.iter().enumerate() {
            let mut z = vec![0.0; *rows];
            for (o, zo) in z.iter_mut().enumerate() {
                let mut s = p[off + rows * cols + o];
                for i in 0..*cols {
                    s += p[off + o * cols + i] * h[i];
                }
                *zo = s;
            }
            off += rows * cols + rows;
            h = if li + 1 < shapes.len() {
                z.iter()
                    .map(|&v| match spec.activation {
                        Activation::Tanh => v.tanh(),
                        Activation::Sin => v.sin(),
                    })
                    .collect()
            } else {
                z
            };
        }
        h
    }

    fn randomized(spec: &MlpSpec, seed: u64) -> Vec<f64> {
        let mut p = init_params(spec, seed).values;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
        for v in &mut p {
            *v += rng.gen_range(-0.3..0.3);
        }
        p
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(a.abs()).max(1e-3)
    }

    #[test]
    fn param_count_matches_shape_arithmetic() {
        assert_eq!(spec(&[10, 10], Activation::Tanh).param_count(), 151);
        assert_eq!(spec(&[10], Activation::Tanh).param_count(), 41);
        let l = spec(&[10, 10], Activation::Tanh).layout();
        for w in l.windows(2) {
            assert_eq!(w[0].end(), w[1].weight_offset);
        }
        assert_eq!(l.last().unwrap().end(), 151);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let s = spec(&[10], Activation::Tanh);
        let a = init_params(&s, 7);
        let b = init_params(&s, 7);
        assert_eq!(a, b);
        assert_ne!(a, init_params(&s, 8));
        for l in &a.layout {
            assert!(a.values[l.bias_offset..l.end()].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(MlpSpec::new(2, vec![], 1, Activation::Tanh).is_err());
        assert!(MlpSpec::new(0, vec![3], 1, Activation::Tanh).is_err());
        assert!(MlpSpec::new(2, vec![3, 0], 1, Activation::Tanh).is_err());
    }

    #[test]
    fn zero_params_give_zero_bundle() {
        let s = spec(&[10, 10], Activation::Tanh);
        let p = vec![0.0; s.param_count()];
        let b = s.bundle(&p, &[0.3, -0.7]).unwrap();
        assert_eq!(b.max_abs(), 0.0);
        assert_eq!(s.forward(&p, &[0.3, -0.7]).unwrap(), vec![0.0]);
    }

    #[test]
    fn single_hidden_layer_hand_computation() {
        // 2 -> 2 -> 1, W0 = I, b0 = 0, W1 = [1, 2], b1 = 0.5
        let s = spec(&[2], Activation::Tanh);
        let p = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 2.0, 0.5];
        let x = [0.2, -0.4];
        let expect = 0.2f64.tanh() + 2.0 * (-0.4f64).tanh() + 0.5;
        assert_eq!(s.forward(&p, &x).unwrap()[0], expect);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let s = spec(&[4], Activation::Sin);
        let p = vec![0.0; s.param_count()];
        assert!(matches!(
            s.forward(&p, &[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(s.forward(&p[1..], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn forward_matches_naive_and_bundle_value_bitwise() {
        for seed in 0..20 {
            for act in [Activation::Tanh, Activation::Sin] {
                let s = spec(&[7, 5], act);
                let p = randomized(&s, seed);
                let x = [0.1 * seed as f64 - 0.9, 0.35];
                let f = s.forward(&p, &x).unwrap();
                let n = naive_forward(&s, &p, &x);
                assert!((f[0] - n[0]).abs() < 1e-14);
                assert_eq!(s.bundle(&p, &x).unwrap().value, f);
            }
        }
    }

    #[test]
    fn bundle_matches_finite_differences() {
        let h = 1e-5;
        for seed in 0..50 {
            let act = if seed % 2 == 0 { Activation::Tanh } else { Activation::Sin };
            let s = spec(&[6, 6], act);
            let p = randomized(&s, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let b = s.bundle(&p, &x).unwrap();
            let f = |x: &[f64]| s.forward(&p, x).unwrap()[0];
            for k in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                let fd = (f(&xp) - f(&xm)) / (2.0 * h);
                assert!(rel_err(b.grad_at(0, k), fd) < 1e-6, "grad seed {seed}");
            }
            let h2 = 1e-4;
            for k in 0..2 {
                for l in 0..2 {
                    let at = |dk: f64, dl: f64| {
                        let mut y = x;
                        y[k] += dk;
                        y[l] += dl;
                        f(&y)
                    };
                    let fd = (at(h2, h2) - at(h2, -h2) - at(-h2, h2) + at(-h2, -h2))
                        / (4.0 * h2 * h2);
                    assert!(rel_err(b.hess_at(0, k, l), fd) < 1e-4, "hess seed {seed}");
                }
            }
        }
    }

    #[test]
    fn hessian_is_exactly_symmetric() {
        for seed in 0..100 {
            let s = MlpSpec::new(3, vec![5, 4], 2, Activation::Tanh).unwrap();
            let p = randomized(&s, seed);
            let x = [0.3, -0.1 * seed as f64 / 10.0, 0.9];
            let b = s.bundle(&p, &x).unwrap();
            for o in 0..2 {
                for k in 0..3 {
                    for l in 0..3 {
                        assert!((b.hess_at(o, k, l) - b.hess_at(o, l, k)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    fn fd_param_grad(
        s: &MlpSpec,
        p: &[f64],
        x: &[f64],
        h: f64,
        f: impl Fn(&DerivativeBundle) -> f64,
    ) -> Vec<f64> {
        (0..p.len())
            .map(|i| {
                let mut pp = p.to_vec();
                let mut pm = p.to_vec();
                pp[i] += h;
                pm[i] -= h;
                (f(&s.bundle(&pp, x).unwrap()) - f(&s.bundle(&pm, x).unwrap())) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn vjp_of_value_matches_finite_differences() {
        for seed in 0..10 {
            let s = spec(&[5, 4], Activation::Tanh);
            let p = randomized(&s, seed);
            let x = [0.4, -0.2];
            let mut cot = DerivativeBundle::zeros(2, 1);
            cot.value[0] = 1.0;
            let g = s.bundle_vjp(&p, &x, &cot).unwrap();
            let fd = fd_param_grad(&s, &p, &x, 1e-6, |b| b.value[0]);
            for (a, b) in g.iter().zip(&fd) {
                assert!(rel_err(*a, *b) < 1e-6);
            }
        }
    }

    #[test]
    fn vjp_of_hessian_entry_matches_finite_differences() {
        for seed in 0..10 {
            let act = if seed % 2 == 0 { Activation::Tanh } else { Activation::Sin };
            let s = spec(&[5, 4], act);
            let p = randomized(&s, seed);
            let x = [-0.3, 0.6];
            let mut cot = DerivativeBundle::zeros(2, 1);
            *cot.hess_mut(0, 0, 1) = 1.0;
            *cot.grad_mut(0, 1) = 0.5;
            let g = s.bundle_vjp(&p, &x, &cot).unwrap();
            let fd = fd_param_grad(&s, &p, &x, 1e-5, |b| b.hess_at(0, 0, 1) + 0.5 * b.grad_at(0, 1));
            for (a, b) in g.iter().zip(&fd) {
                assert!(rel_err(*a, *b) < 1e-4, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let s = spec(&[5], Activation::Sin);
        let p = randomized(&s, 3);
        let g = s.bundle_vjp(&p, &[0.1, 0.2], &DerivativeBundle::zeros(2, 1)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn value_tape_vjp_equals_full_tape_vjp_with_value_cotangent() {
        let s = spec(&[6, 3], Activation::Tanh);
        let p = randomized(&s, 11);
        let x = [0.25, 0.75];
        let full = s.tape(&p, &x, JetOrder::Full).unwrap();
        let val = s.tape(&p, &x, JetOrder::Value).unwrap();
        let mut cot = DerivativeBundle::zeros(2, 1);
        cot.value[0] = 1.3;
        let mut a = vec![0.0; s.param_count()];
        let mut b = vec![0.0; s.param_count()];
        full.vjp_into(&s, &p, &cot.to_jets(), &mut a);
        val.vjp_into(&s, &p, &[1.3], &mut b);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-13);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn vjp_is_linear_in_the_cotangent(
                seed in 0u64..1000,
                a in -2.0f64..2.0,
                b in -2.0f64..2.0,
                c1 in proptest::collection::vec(-1.0f64..1.0, 7),
                c2 in proptest::collection::vec(-1.0f64..1.0, 7),
            ) {
                let s = spec(&[4, 3], Activation::Tanh);
                let p = randomized(&s, seed);
                let x = [0.2, -0.5];
                let mk = |c: &[f64]| DerivativeBundle::from_jets(2, 1, c);
                let mut mix = c1.clone();
                for (m, v) in mix.iter_mut().zip(&c2) {
                    *m = a * *m + b * v;
                }
                let g1 = s.bundle_vjp(&p, &x, &mk(&c1)).unwrap();
                let g2 = s.bundle_vjp(&p, &x, &mk(&c2)).unwrap();
                let gm = s.bundle_vjp(&p, &x, &mk(&mix)).unwrap();
                for i in 0..gm.len() {
                    prop_assert!((gm[i] - (a * g1[i] + b * g2[i])).abs() < 1e-12);
                }
            }
        }
    }
}
