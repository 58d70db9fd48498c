//! Dense layers with hand-written backward passes, ELU, and ADAM.
//!
//! Every parameterized object flattens its parameters layer by layer, each
//! layer contributing its weight matrix (row-major, one row per output unit)
//! followed by its bias. Gradients use the same order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of [`elu`].
pub fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Elu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Elu => elu(x),
        }
    }

    pub fn grad(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Elu => elu_grad(x),
        }
    }
}

/// Fully connected layer computing `W·x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// `weights` is row-major `out_dim × in_dim`.
    pub fn from_parts(in_dim: usize, out_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::contract(format!(
                "layer {in_dim}->{out_dim} needs {} weights and {out_dim} biases, got {} and {}",
                in_dim * out_dim,
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
        })
    }

    /// Weights and biases uniform in `[-1/sqrt(in_dim), 1/sqrt(in_dim)]`.
    pub fn init_uniform(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.uniform_range(-bound, bound))
            .collect();
        let bias = (0..out_dim).map(|_| rng.uniform_range(-bound, bound)).collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn row(&self, unit: usize) -> &[f64] {
        &self.weights[unit * self.in_dim..(unit + 1) * self.in_dim]
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Pre-activation output `W·x + b`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.out_dim];
        self.forward_into(x, &mut out)?;
        Ok(out)
    }

    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.in_dim || out.len() != self.out_dim {
            return Err(Error::contract(format!(
                "layer {}->{} given input of length {} and output of length {}",
                self.in_dim,
                self.out_dim,
                x.len(),
                out.len()
            )));
        }
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.in_dim).zip(&self.bias))
        {
            *o = b + dot(row, x);
        }
        Ok(())
    }

    /// Accumulates `∂L/∂W` and `∂L/∂b` into `grad_params` (this layer's slice of
    /// the flat gradient) given the layer input and `∂L/∂(W·x + b)`. When
    /// `grad_in` is provided, `∂L/∂x` is accumulated into it as well.
    pub fn backward(&self, x: &[f64], grad_out: &[f64], grad_params: &mut [f64], grad_in: Option<&mut [f64]>) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(grad_out.len(), self.out_dim);
        debug_assert_eq!(grad_params.len(), self.num_params());
        let (gw, gb) = grad_params.split_at_mut(self.weights.len());
        for ((grow, gbias), &g) in gw.chunks_exact_mut(self.in_dim).zip(gb.iter_mut()).zip(grad_out) {
            if g == 0.0 {
                continue;
            }
            *gbias += g;
            for (gwij, xj) in grow.iter_mut().zip(x) {
                *gwij += g * xj;
            }
        }
        if let Some(gi) = grad_in {
            debug_assert_eq!(gi.len(), self.in_dim);
            for (row, &g) in self.weights.chunks_exact(self.in_dim).zip(grad_out) {
                if g == 0.0 {
                    continue;
                }
                for (gij, wij) in gi.iter_mut().zip(row) {
                    *gij += g * wij;
                }
            }
        }
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weights);
        out.extend_from_slice(&self.bias);
    }

    /// Loads this layer's parameters from the front of `src`, returning how many were read.
    pub fn read_params(&mut self, src: &[f64]) -> Result<usize> {
        let n = self.num_params();
        if src.len() < n {
            return Err(Error::contract(format!(
                "need {n} parameters, only {} left",
                src.len()
            )));
        }
        let w = self.weights.len();
        self.weights.copy_from_slice(&src[..w]);
        self.bias.copy_from_slice(&src[w..n]);
        Ok(n)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Intermediate values of one forward pass through an [`Mlp`].
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// Post-activation output of layer `index`.
    pub fn activation(&self, index: usize) -> &[f64] {
        if index + 1 < self.inputs.len() {
            &self.inputs[index + 1]
        } else {
            &self.output
        }
    }

    pub fn pre_activation(&self, index: usize) -> &[f64] {
        &self.pre[index]
    }
}

/// A plain stack of dense layers, each followed by its own activation.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    activations: Vec<Activation>,
    cache: Option<Trace>,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.activations == other.activations
    }
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>, activations: Vec<Activation>) -> Result<Self> {
        if layers.is_empty() || layers.len() != activations.len() {
            return Err(Error::contract("need one activation per layer and at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::contract(format!(
                    "layer widths do not chain: {} then {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self {
            layers,
            activations,
            cache: None,
        })
    }

    /// Randomly initialized stack over `widths` (input width first).
    pub fn init(widths: &[usize], activations: Vec<Activation>, rng: &mut Rng) -> Result<Self> {
        let layers = widths
            .windows(2)
            .map(|w| DenseLayer::init_uniform(w[0], w[1], rng))
            .collect();
        Self::new(layers, activations)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        self.cache = None;
        &mut self.layers
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::num_params).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            layer.write_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            offset += layer.read_params(&params[offset..])?;
        }
        self.cache = None;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(DenseLayer::is_finite)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut cur = x.to_vec();
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            let mut next = layer.forward(&cur)?;
            for v in &mut next {
                *v = act.apply(*v);
            }
            cur = next;
        }
        Ok(cur)
    }

    pub fn trace(&self, x: &[f64]) -> Result<Trace> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            let z = layer.forward(&cur)?;
            let a: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            inputs.push(cur);
            pre.push(z);
            cur = a;
        }
        Ok(Trace {
            inputs,
            pre,
            output: cur,
        })
    }

    /// Backpropagates `upstream = ∂L/∂output` through a recorded trace,
    /// accumulating the flat parameter gradient into `grad` and returning `∂L/∂input`.
    pub fn backward_trace(&self, trace: &Trace, upstream: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        if trace.pre.len() != self.layers.len() || trace.inputs[0].len() != self.in_dim() {
            return Err(Error::contract("trace was not produced by this network"));
        }
        if upstream.len() != self.out_dim() || grad.len() != self.num_params() {
            return Err(Error::contract(format!(
                "upstream length {} (want {}), gradient length {} (want {})",
                upstream.len(),
                self.out_dim(),
                grad.len(),
                self.num_params()
            )));
        }
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for layer in &self.layers {
            offsets.push(acc);
            acc += layer.num_params();
        }
        let mut g_out = upstream.to_vec();
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let act = self.activations[idx];
            let g_pre: Vec<f64> = g_out
                .iter()
                .zip(&trace.pre[idx])
                .map(|(g, &z)| g * act.grad(z))
                .collect();
            let mut g_in = vec![0.0; layer.in_dim()];
            let slice = &mut grad[offsets[idx]..offsets[idx] + layer.num_params()];
            layer.backward(&trace.inputs[idx], &g_pre, slice, Some(&mut g_in));
            g_out = g_in;
        }
        Ok(g_out)
    }

    /// Forward pass that caches its intermediates for a following [`Mlp::backward`].
    pub fn forward_train(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let trace = self.trace(x)?;
        let out = trace.output.clone();
        self.cache = Some(trace);
        Ok(out)
    }

    /// Parameter gradient for the cached forward pass. Consumes the cache.
    pub fn backward(&mut self, upstream: &[f64]) -> Result<Vec<f64>> {
        let trace = self
            .cache
            .take()
            .ok_or_else(|| Error::contract("backward called without a matching forward pass"))?;
        let mut grad = vec![0.0; self.num_params()];
        self.backward_trace(&trace, upstream, &mut grad)?;
        Ok(grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, num_params: usize) -> Self {
        Self {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One bias-corrected ADAM update. Non-finite gradients reject the whole
    /// step and leave both `params` and the state untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::contract(format!(
                "adam state holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::PoisonedGradient { index });
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powf(self.t as f64);
        let bc2 = 1.0 - beta2.powf(self.t as f64);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn elu_values() {
        assert_eq!(elu(0.0), 0.0);
        assert_eq!(elu(1.5), 1.5);
        assert_abs_diff_eq!(elu(-1.0), (-1.0f64).exp() - 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(elu(-1.0), -0.63212, epsilon = 1e-5);
        assert_eq!(elu_grad(2.0), 1.0);
        assert_abs_diff_eq!(elu_grad(-1.0), (-1.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn dense_forward_examples() {
        let id = DenseLayer::from_parts(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(id.forward(&[3.0, -2.0]).unwrap(), vec![3.0, -2.0]);

        let bias_only = DenseLayer::from_parts(2, 2, vec![0.0; 4], vec![1.0, 1.0]).unwrap();
        assert_eq!(bias_only.forward(&[7.0, -9.0]).unwrap(), vec![1.0, 1.0]);

        let m = DenseLayer::from_parts(2, 2, vec![1.0, 2.0, 3.0, 4.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(m.forward(&[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
    }

    #[test]
    fn dense_forward_rejects_wrong_length() {
        let layer = DenseLayer::zeros(3, 2);
        assert!(matches!(layer.forward(&[1.0, 2.0]), Err(Error::Contract(_))));
        assert!(DenseLayer::from_parts(2, 2, vec![0.0; 3], vec![0.0; 2]).is_err());
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        // loss = ½‖y‖², y = W·e1 + b  =>  ∂L/∂W = y·e1ᵀ
        let w = vec![0.5, -1.0, 2.0, 0.25, 3.0, -0.75];
        let b = vec![0.1, -0.2, 0.3];
        let layer = DenseLayer::from_parts(2, 3, w, b).unwrap();
        let mut net = Mlp::new(vec![layer], vec![Activation::Identity]).unwrap();
        let y = net.forward_train(&[1.0, 0.0]).unwrap();
        let grad = net.backward(&y).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(grad[i * 2], y[i], epsilon = 1e-15);
            assert_eq!(grad[i * 2 + 1], 0.0);
            assert_abs_diff_eq!(grad[6 + i], y[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = Rng::new(1);
        let mut net = Mlp::init(&[4, 30, 2], vec![Activation::Elu, Activation::Identity], &mut rng).unwrap();
        net.forward_train(&[0.1, -0.2, 0.3, 0.4]).unwrap();
        let grad = net.backward(&[0.0, 0.0]).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_without_forward_is_rejected() {
        let mut rng = Rng::new(2);
        let mut net = Mlp::init(&[3, 2], vec![Activation::Identity], &mut rng).unwrap();
        assert!(matches!(net.backward(&[1.0, 1.0]), Err(Error::Contract(_))));
        net.forward_train(&[1.0, 2.0, 3.0]).unwrap();
        assert!(net.backward(&[1.0, 1.0]).is_ok());
        // The cache is consumed by the first backward.
        assert!(net.backward(&[1.0, 1.0]).is_err());
    }

    #[test]
    fn params_round_trip() {
        let mut rng = Rng::new(4);
        let net = Mlp::init(&[4, 30, 2], vec![Activation::Elu, Activation::Identity], &mut rng).unwrap();
        let p = net.params();
        assert_eq!(p.len(), 212);
        let mut other = Mlp::init(&[4, 30, 2], vec![Activation::Elu, Activation::Identity], &mut rng).unwrap();
        other.set_params(&p).unwrap();
        assert_eq!(other, net);
        assert!(other.set_params(&p[1..]).is_err());
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut state = AdamState::new(AdamConfig::default(), 3);
        let mut p = vec![1.0, -2.0, 3.0];
        state.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(state.steps(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        for g in [0.3, -5.0, 1e-3] {
            let mut state = AdamState::new(AdamConfig::default(), 1);
            let mut p = vec![0.0];
            state.step(&mut p, &[g]).unwrap();
            // m̂ = g, v̂ = g², update = lr·|g|/(|g| + eps)
            let expected = 1e-3 * g.abs() / (g.abs() + 1e-8);
            assert_abs_diff_eq!(p[0].abs(), expected, epsilon = 1e-15);
            assert_eq!(p[0].signum(), -g.signum());
        }
    }

    #[test]
    fn adam_updates_shrink_for_constant_gradient() {
        // Closed form for constant g: m̂_t = g and v̂_t = g² for every t, so the
        // update sequence is non-increasing (constant in exact arithmetic).
        let cfg = AdamConfig::default();
        let g = 0.5;
        let mut state = AdamState::new(cfg, 1);
        let mut p = vec![0.0];
        let mut prev_update = f64::INFINITY;
        for t in 1..=5 {
            let before = p[0];
            state.step(&mut p, &[g]).unwrap();
            let update = (p[0] - before).abs();
            let bc1 = 1.0 - cfg.beta1.powi(t);
            let bc2 = 1.0 - cfg.beta2.powi(t);
            let m = g * (1.0 - cfg.beta1.powi(t));
            let v = g * g * (1.0 - cfg.beta2.powi(t));
            let expected = cfg.lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
            assert_abs_diff_eq!(update, expected, epsilon = 1e-15);
            assert!(update <= prev_update * (1.0 + 1e-12));
            prev_update = update;
        }
    }

    #[test]
    fn adam_rejects_nan() {
        let mut state = AdamState::new(AdamConfig::default(), 2);
        let mut p = vec![1.0, 1.0];
        let err = state.step(&mut p, &[0.1, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::PoisonedGradient { index: 1 }));
        assert_eq!(p, vec![1.0, 1.0]);
        assert_eq!(state.steps(), 0);
    }
}
