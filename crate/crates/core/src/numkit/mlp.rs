use std::fmt;
use std::ops::Range;

use crate::error::{check_len, Error, Result};
use crate::numkit::Prng;

/// Floating point type the MLP kernels run on.
///
/// Parameters and activations live in `Self`; every reduction accumulates
/// in `f64` regardless.
pub trait Real: Copy + Default + PartialEq + PartialOrd + fmt::Debug + Send + Sync + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Real for f32 {
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Real for f64 {
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    Linear,
    /// `tanh`, so every output coordinate lies in (-1, 1).
    Tanh,
}

/// Parameter ranges of one dense layer inside a flat parameter vector.
///
/// Weights are stored row-major as `[fan_out][fan_in]`, followed by the bias.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerRanges {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Range<usize>,
    pub bias: Range<usize>,
}

/// Fixed-topology multilayer perceptron: ReLU hidden layers and a
/// configurable output head.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    layer_sizes: Vec<usize>,
    output_activation: OutputActivation,
    layers: Vec<LayerRanges>,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, output_activation: OutputActivation) -> Result<Self> {
        if layer_sizes.len() < 3 {
            return Err(Error::config(format!(
                "an MLP needs an input, at least one hidden and an output layer, got sizes {layer_sizes:?}"
            )));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::config(format!("layer sizes must be positive, got {layer_sizes:?}")));
        }
        let mut layers = Vec::with_capacity(layer_sizes.len() - 1);
        let mut offset = 0;
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let weights = offset..offset + fan_in * fan_out;
            let bias = weights.end..weights.end + fan_out;
            offset = bias.end;
            layers.push(LayerRanges { fan_in, fan_out, weights, bias });
        }
        Ok(Self { layer_sizes, output_activation, layers })
    }

    /// `input -> hidden x depth -> output`.
    pub fn with_hidden(
        input: usize,
        hidden: usize,
        depth: usize,
        output: usize,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(hidden, depth));
        sizes.push(output);
        Self::new(sizes, output_activation)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn layers(&self) -> &[LayerRanges] {
        &self.layers
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers.last().map_or(0, |l| l.bias.end)
    }

    pub fn zeros(&self) -> ParamVector {
        ParamVector { values: vec![0.0; self.param_count()], layers: self.layers.clone() }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init_params(&self, rng: &mut Prng) -> ParamVector {
        let mut params = self.zeros();
        for layer in &self.layers {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            for w in &mut params.values[layer.weights.clone()] {
                *w = ((rng.uniform() * 2.0 - 1.0) * bound) as f32;
            }
        }
        params
    }
}

/// Flat `f32` parameter storage with the per-layer index map.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f32>,
    layers: Vec<LayerRanges>,
}

impl ParamVector {
    pub fn from_values(spec: &MlpSpec, values: Vec<f32>) -> Result<Self> {
        check_len("parameter vector", values.len(), spec.param_count())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(format!("parameter {i} is not finite")));
        }
        Ok(Self { values, layers: spec.layers.clone() })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn weights(&self, layer: usize) -> &[f32] {
        &self.values[self.layers[layer].weights.clone()]
    }

    pub fn bias(&self, layer: usize) -> &[f32] {
        &self.values[self.layers[layer].bias.clone()]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f32] {
        let r = self.layers[layer].weights.clone();
        &mut self.values[r]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f32] {
        let r = self.layers[layer].bias.clone();
        &mut self.values[r]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

/// Dot product of two equal-length slices accumulated in `f64`.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0].to_f64() * y[0].to_f64();
        acc[1] += x[1].to_f64() * y[1].to_f64();
        acc[2] += x[2].to_f64() * y[2].to_f64();
        acc[3] += x[3].to_f64() * y[3].to_f64();
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x.to_f64() * y.to_f64();
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Activations recorded by a batched forward pass.
///
/// `layers[0]` holds the inputs and `layers[l + 1]` the post-activation
/// output of dense layer `l`, each row-major `[batch][width]`.
#[derive(Clone, Debug)]
pub struct Tape<T> {
    batch: usize,
    layers: Vec<Vec<T>>,
}

impl<T: Real> Tape<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output(&self) -> &[T] {
        self.layers.last().unwrap()
    }

    pub fn inputs(&self) -> &[T] {
        &self.layers[0]
    }
}

/// Forward pass over `batch` rows of `inputs`.
pub fn forward_batch<T: Real>(spec: &MlpSpec, params: &[T], inputs: &[T], batch: usize) -> Result<Tape<T>> {
    check_len("parameters", params.len(), spec.param_count())?;
    check_len("input batch", inputs.len(), batch * spec.input_size())?;
    let last = spec.layers.len() - 1;
    let mut layers = Vec::with_capacity(spec.layers.len() + 1);
    layers.push(inputs.to_vec());
    for (l, layer) in spec.layers.iter().enumerate() {
        let w = &params[layer.weights.clone()];
        let bias = &params[layer.bias.clone()];
        let x = &layers[l];
        let mut y = vec![T::default(); batch * layer.fan_out];
        for (xr, yr) in x.chunks_exact(layer.fan_in).zip(y.chunks_exact_mut(layer.fan_out)) {
            for (j, out) in yr.iter_mut().enumerate() {
                let s = dot(&w[j * layer.fan_in..(j + 1) * layer.fan_in], xr) + bias[j].to_f64();
                let a = if l < last {
                    s.max(0.0)
                } else {
                    match spec.output_activation {
                        OutputActivation::Linear => s,
                        OutputActivation::Tanh => s.tanh(),
                    }
                };
                *out = T::from_f64(a);
            }
        }
        layers.push(y);
    }
    Ok(Tape { batch, layers })
}

/// Gradients of `sum_b upstream_b . output_b`.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    /// Summed over the batch; empty when not requested.
    pub params: Vec<T>,
    /// Per row, `[batch][input_size]`; empty when not requested.
    pub inputs: Vec<T>,
}

/// Reverse pass over a recorded tape.
pub fn backward_batch<T: Real>(
    spec: &MlpSpec,
    params: &[T],
    tape: &Tape<T>,
    upstream: &[T],
    want_params: bool,
    want_inputs: bool,
) -> Result<Gradients<T>> {
    check_len("parameters", params.len(), spec.param_count())?;
    let batch = tape.batch;
    check_len("upstream", upstream.len(), batch * spec.output_size())?;
    let last = spec.layers.len() - 1;

    let out = tape.output();
    let mut delta: Vec<f64> = match spec.output_activation {
        OutputActivation::Linear => upstream.iter().map(|u| u.to_f64()).collect(),
        OutputActivation::Tanh => upstream
            .iter()
            .zip(out)
            .map(|(u, y)| {
                let y = y.to_f64();
                u.to_f64() * (1.0 - y * y)
            })
            .collect(),
    };

    let mut grads = if want_params { vec![0.0f64; spec.param_count()] } else { Vec::new() };
    let mut input_grads = Vec::new();

    for l in (0..=last).rev() {
        let layer = &spec.layers[l];
        let (fi, fo) = (layer.fan_in, layer.fan_out);
        let x = &tape.layers[l];
        if want_params {
            let (gw, gb) = grads[layer.weights.start..layer.bias.end].split_at_mut(fi * fo);
            for (xr, dr) in x.chunks_exact(fi).zip(delta.chunks_exact(fo)) {
                for (j, &d) in dr.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[j] += d;
                    for (g, xi) in gw[j * fi..(j + 1) * fi].iter_mut().zip(xr) {
                        *g += d * xi.to_f64();
                    }
                }
            }
        }
        if l == 0 && !want_inputs {
            break;
        }
        let w = &params[layer.weights.clone()];
        let mut dx = vec![0.0f64; batch * fi];
        for (dxr, dr) in dx.chunks_exact_mut(fi).zip(delta.chunks_exact(fo)) {
            for (j, &d) in dr.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (g, wji) in dxr.iter_mut().zip(&w[j * fi..(j + 1) * fi]) {
                    *g += d * wji.to_f64();
                }
            }
        }
        if l > 0 {
            // relu'(z) from the stored post-activation
            for (g, xi) in dx.iter_mut().zip(x) {
                if xi.to_f64() <= 0.0 {
                    *g = 0.0;
                }
            }
            delta = dx;
        } else {
            input_grads = dx.into_iter().map(T::from_f64).collect();
        }
    }

    Ok(Gradients { params: grads.into_iter().map(T::from_f64).collect(), inputs: input_grads })
}

/// Single-input forward pass.
pub fn mlp_forward(spec: &MlpSpec, params: &ParamVector, input: &[f32]) -> Result<Vec<f32>> {
    check_len("input", input.len(), spec.input_size())?;
    let tape = forward_batch(spec, params.as_slice(), input, 1)?;
    Ok(tape.output().to_vec())
}

/// Single-input reverse pass: gradients of `upstream . output` with respect
/// to the parameters and the input.
pub fn mlp_grad(
    spec: &MlpSpec,
    params: &ParamVector,
    input: &[f32],
    upstream: &[f32],
) -> Result<(ParamVector, Vec<f32>)> {
    check_len("input", input.len(), spec.input_size())?;
    check_len("upstream", upstream.len(), spec.output_size())?;
    let tape = forward_batch(spec, params.as_slice(), input, 1)?;
    let g = backward_batch(spec, params.as_slice(), &tape, upstream, true, true)?;
    Ok((ParamVector { values: g.params, layers: spec.layers.clone() }, g.inputs))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straight-line dense evaluation, independent of the batched kernel.
    fn oracle_forward(spec: &MlpSpec, p: &[f32], x: &[f32]) -> Vec<f64> {
        let sizes = spec.layer_sizes();
        let mut act: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let mut off = 0;
        for l in 0..sizes.len() - 1 {
            let (fi, fo) = (sizes[l], sizes[l + 1]);
            let w = &p[off..off + fi * fo];
            let b = &p[off + fi * fo..off + fi * fo + fo];
            off += fi * fo + fo;
            let mut next = vec![0.0f64; fo];
            for j in 0..fo {
                let mut s = b[j] as f64;
                for i in 0..fi {
                    s += w[j * fi + i] as f64 * act[i];
                }
                next[j] = if l + 2 < sizes.len() {
                    s.max(0.0)
                } else if spec.output_activation() == OutputActivation::Tanh {
                    s.tanh()
                } else {
                    s
                };
            }
            act = next.into_iter().map(|v| v as f32 as f64).collect();
        }
        act
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(MlpSpec::new(vec![3, 2], OutputActivation::Linear).is_err());
        assert!(MlpSpec::new(vec![3, 0, 2], OutputActivation::Linear).is_err());
        assert!(MlpSpec::new(vec![3, 4, 2], OutputActivation::Linear).is_ok());
    }

    #[test]
    fn param_layout_is_contiguous() {
        let spec = MlpSpec::new(vec![3, 4, 2], OutputActivation::Linear).unwrap();
        assert_eq!(spec.param_count(), 3 * 4 + 4 + 4 * 2 + 2);
        assert_eq!(spec.layers()[1].weights, 16..24);
        assert_eq!(spec.layers()[1].bias, 24..26);
    }

    #[test]
    fn zero_params_give_zero_output() {
        let spec = MlpSpec::new(vec![5, 8, 8, 3], OutputActivation::Linear).unwrap();
        let y = mlp_forward(&spec, &spec.zeros(), &[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap();
        assert_eq!(y, vec![0.0; 3]);
    }

    #[test]
    fn identity_layers_pass_positive_input_through() {
        let spec = MlpSpec::new(vec![3, 3, 3], OutputActivation::Linear).unwrap();
        let mut p = spec.zeros();
        for l in 0..2 {
            let w = p.weights_mut(l);
            for i in 0..3 {
                w[i * 3 + i] = 1.0;
            }
        }
        let x = [0.25, 1.5, 3.0];
        assert_eq!(mlp_forward(&spec, &p, &x).unwrap(), x.to_vec());
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let spec = MlpSpec::new(vec![2, 4, 1], OutputActivation::Linear).unwrap();
        let err = mlp_forward(&spec, &spec.zeros(), &[1.0]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = mlp_grad(&spec, &spec.zeros(), &[1.0, 2.0], &[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn forward_matches_dense_oracle() {
        let mut rng = Prng::new(11);
        for out in [OutputActivation::Linear, OutputActivation::Tanh] {
            let spec = MlpSpec::new(vec![6, 16, 16, 3], out).unwrap();
            for _ in 0..20 {
                let p = spec.init_params(&mut rng);
                let x: Vec<f32> = (0..6).map(|_| (rng.uniform() * 4.0 - 2.0) as f32).collect();
                let y = mlp_forward(&spec, &p, &x).unwrap();
                let o = oracle_forward(&spec, p.as_slice(), &x);
                for (a, b) in y.iter().zip(&o) {
                    let tol = 1e-6 * b.abs().max(1e-3);
                    assert!((*a as f64 - b).abs() <= tol, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn tanh_head_is_bounded() {
        let spec = MlpSpec::new(vec![2, 4, 2], OutputActivation::Tanh).unwrap();
        let mut rng = Prng::new(3);
        let mut p = spec.init_params(&mut rng);
        for v in p.as_mut_slice() {
            *v *= 50.0;
        }
        let y = mlp_forward(&spec, &p, &[10.0, -10.0]).unwrap();
        assert!(y.iter().all(|v| *v >= -1.0 && *v <= 1.0));
    }

    #[test]
    fn batch_rows_match_single_calls() {
        let spec = MlpSpec::new(vec![4, 8, 2], OutputActivation::Tanh).unwrap();
        let mut rng = Prng::new(5);
        let p = spec.init_params(&mut rng);
        let xs: Vec<f32> = (0..12).map(|_| rng.uniform() as f32).collect();
        let tape = forward_batch(&spec, p.as_slice(), &xs, 3).unwrap();
        for b in 0..3 {
            let y = mlp_forward(&spec, &p, &xs[b * 4..b * 4 + 4]).unwrap();
            assert_eq!(&tape.output()[b * 2..b * 2 + 2], y.as_slice());
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let spec = MlpSpec::new(vec![3, 5, 2], OutputActivation::Tanh).unwrap();
        let p = spec.init_params(&mut Prng::new(1));
        let (gp, gx) = mlp_grad(&spec, &p, &[0.3, -0.2, 0.9], &[0.0, 0.0]).unwrap();
        assert!(gp.as_slice().iter().all(|&g| g == 0.0));
        assert!(gx.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_linear_neuron_gradients() {
        // y = w . x + b through a one-unit identity hidden layer
        let spec = MlpSpec::new(vec![2, 1, 1], OutputActivation::Linear).unwrap();
        let mut p = spec.zeros();
        p.weights_mut(0).copy_from_slice(&[0.5, 0.25]);
        p.weights_mut(1)[0] = 1.0;
        let x = [2.0, 4.0];
        let (gp, gx) = mlp_grad(&spec, &p, &x, &[1.0]).unwrap();
        assert_eq!(gp.weights(0), &[2.0, 4.0]);
        assert_eq!(gp.bias(0), &[1.0]);
        assert_eq!(gx, vec![0.5, 0.25]);
    }

    #[test]
    fn batch_param_grads_are_summed() {
        let spec = MlpSpec::new(vec![3, 6, 1], OutputActivation::Linear).unwrap();
        let p = spec.init_params(&mut Prng::new(9));
        let xs = [0.1f32, 0.2, 0.3, -0.5, 0.7, 0.2];
        let tape = forward_batch(&spec, p.as_slice(), &xs, 2).unwrap();
        let g = backward_batch(&spec, p.as_slice(), &tape, &[1.0, 1.0], true, true).unwrap();
        let (g0, _) = mlp_grad(&spec, &p, &xs[..3], &[1.0]).unwrap();
        let (g1, _) = mlp_grad(&spec, &p, &xs[3..], &[1.0]).unwrap();
        for i in 0..g.params.len() {
            let s = g0.as_slice()[i] + g1.as_slice()[i];
            assert!((g.params[i] - s).abs() <= 1e-6 * s.abs().max(1.0));
        }
    }
}
