//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Everything works on row-major batches: a batch of `B` inputs is a
//! `B x input_dim` [`Matrix`]. Weight matrices are stored `out x in`.

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
                context: "matrix data",
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// A single-row matrix.
    pub fn row_vector(data: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Column `c` as an owned vector.
    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the pre- and post-activation values.
    #[inline]
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - post * post,
            Activation::Linear => 1.0,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Linear => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Linear),
            _ => None,
        }
    }
}

/// One affine layer followed by an elementwise activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    in_dim: usize,
    out_dim: usize,
    /// `out_dim x in_dim`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::ArchitectureMismatch(
                "layer dimensions must be positive".into(),
            ));
        }
        if weights.len() != in_dim * out_dim {
            return Err(Error::DimensionMismatch {
                expected: in_dim * out_dim,
                actual: weights.len(),
                context: "layer weights",
            });
        }
        if bias.len() != out_dim {
            return Err(Error::DimensionMismatch {
                expected: out_dim,
                actual: bias.len(),
                context: "layer bias",
            });
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Result<Self> {
        Self::new(
            in_dim,
            out_dim,
            vec![0.0; in_dim * out_dim],
            vec![0.0; out_dim],
            activation,
        )
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }
}

/// Per-layer values retained by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
}

impl ForwardCache {
    pub fn depth(&self) -> usize {
        self.post.len()
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows
    }

    pub fn pre_activation(&self, layer: usize) -> &Matrix {
        &self.pre[layer]
    }

    pub fn post_activation(&self, layer: usize) -> &Matrix {
        &self.post[layer]
    }
}

/// Parameter-shaped storage: gradients, or optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    /// Flattened in the same order as [`Mlp::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    fn matches(&self, net: &Mlp) -> bool {
        self.weights.len() == net.layers.len()
            && self.biases.len() == net.layers.len()
            && net.layers.iter().enumerate().all(|(i, l)| {
                self.weights[i].len() == l.weights.len() && self.biases[i].len() == l.bias.len()
            })
    }
}

/// `c = a * b` where each operand is described by its row and column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    rsc: usize,
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the callers pass buffers whose extents cover every strided
    // index for the given shape (checked by the debug assertions above and
    // by the shape validation in the public methods).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Feed-forward multilayer perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyNetwork);
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::ArchitectureMismatch(format!(
                    "layer output {} does not feed layer input {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                actual: params.len(),
                context: "flat parameters",
            });
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn same_architecture(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.in_dim == b.in_dim && a.out_dim == b.out_dim && a.activation == b.activation
            })
    }

    /// Evaluates one input vector.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let (out, cache) = self.forward_batch(&Matrix::row_vector(input.to_vec()))?;
        Ok((out.into_vec(), cache))
    }

    /// Evaluates a `B x input_dim` batch.
    pub fn forward_batch(&self, input: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if input.cols != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: input.cols,
                context: "network input",
            });
        }
        let batch = input.rows;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = post.last().unwrap_or(input);
            let mut z = Matrix::zeros(batch, layer.out_dim);
            // z = x * W^T
            gemm(
                batch,
                layer.in_dim,
                layer.out_dim,
                &x.data,
                layer.in_dim,
                1,
                &layer.weights,
                1,
                layer.in_dim,
                &mut z.data,
                layer.out_dim,
            );
            for row in z.data.chunks_exact_mut(layer.out_dim) {
                for (v, b) in row.iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let a = Matrix {
                rows: batch,
                cols: layer.out_dim,
                data: z.data.iter().map(|&v| layer.activation.apply(v)).collect(),
            };
            pre.push(z);
            post.push(a);
        }
        let output = post.last().expect("at least one layer").clone();
        Ok((
            output,
            ForwardCache {
                input: input.clone(),
                pre,
                post,
            },
        ))
    }

    /// Reverse-mode gradients of `sum(output .* output_gradient)` with
    /// respect to every parameter and to the input.
    pub fn backward(&self, cache: &ForwardCache, output_gradient: &Matrix) -> Result<(Gradients, Matrix)> {
        let (grads, input_grad) = self.backprop(cache, output_gradient, true)?;
        Ok((grads.expect("parameter gradients requested"), input_grad))
    }

    /// Like [`Mlp::backward`] but only the input gradient is produced.
    pub fn input_gradient(&self, cache: &ForwardCache, output_gradient: &Matrix) -> Result<Matrix> {
        Ok(self.backprop(cache, output_gradient, false)?.1)
    }

    fn backprop(
        &self,
        cache: &ForwardCache,
        output_gradient: &Matrix,
        want_params: bool,
    ) -> Result<(Option<Gradients>, Matrix)> {
        self.check_cache(cache)?;
        let batch = cache.batch_size();
        if output_gradient.rows != batch || output_gradient.cols != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: batch * self.output_dim(),
                actual: output_gradient.rows * output_gradient.cols,
                context: "output gradient",
            });
        }

        let mut grads = want_params.then(|| Gradients::zeros_like(self));
        let mut upstream = output_gradient.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre[idx];
            let post = &cache.post[idx];
            // dL/dz
            let mut dz = upstream;
            for ((g, &p), &a) in dz.data.iter_mut().zip(&pre.data).zip(&post.data) {
                *g *= layer.activation.derivative(p, a);
            }
            let x = if idx == 0 { &cache.input } else { &cache.post[idx - 1] };

            if let Some(grads) = grads.as_mut() {
                // dW = dz^T * x
                gemm(
                    layer.out_dim,
                    batch,
                    layer.in_dim,
                    &dz.data,
                    1,
                    layer.out_dim,
                    &x.data,
                    layer.in_dim,
                    1,
                    &mut grads.weights[idx],
                    layer.in_dim,
                );
                let db = &mut grads.biases[idx];
                for row in dz.data.chunks_exact(layer.out_dim) {
                    for (acc, g) in db.iter_mut().zip(row) {
                        *acc += g;
                    }
                }
            }

            // dx = dz * W
            let mut dx = Matrix::zeros(batch, layer.in_dim);
            gemm(
                batch,
                layer.out_dim,
                layer.in_dim,
                &dz.data,
                layer.out_dim,
                1,
                &layer.weights,
                layer.in_dim,
                1,
                &mut dx.data,
                layer.in_dim,
            );
            upstream = dx;
        }
        Ok((grads, upstream))
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        if cache.depth() != self.layers.len() {
            return Err(Error::DimensionMismatch {
                expected: self.layers.len(),
                actual: cache.depth(),
                context: "forward cache depth",
            });
        }
        if cache.input.cols != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: cache.input.cols,
                context: "forward cache input",
            });
        }
        for (layer, post) in self.layers.iter().zip(&cache.post) {
            if post.cols != layer.out_dim || post.rows != cache.batch_size() {
                return Err(Error::DimensionMismatch {
                    expected: layer.out_dim,
                    actual: post.cols,
                    context: "forward cache layer",
                });
            }
        }
        Ok(())
    }

    /// `self <- tau * online + (1 - tau) * self`, parameter by parameter.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) -> Result<()> {
        if !self.same_architecture(online) {
            return Err(Error::ArchitectureMismatch(
                "soft update between different architectures".into(),
            ));
        }
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidConfig(format!("tau must lie in [0, 1], got {tau}")));
        }
        let keep = 1.0 - tau;
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            for (tp, op) in t.weights.iter_mut().zip(&o.weights) {
                *tp = tau * op + keep * *tp;
            }
            for (tp, op) in t.bias.iter_mut().zip(&o.bias) {
                *tp = tau * op + keep * *tp;
            }
        }
        Ok(())
    }
}

/// Free-function form of [`Mlp::soft_update_from`].
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    target.soft_update_from(online, tau)
}

/// Builds a network from `layer_sizes = [input, hidden.., output]`.
///
/// Hidden layers draw weights and biases from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`;
/// the final layer draws from `U(-final_layer_scale, final_layer_scale)`.
pub fn init_network<R: Rng + ?Sized>(
    rng: &mut R,
    layer_sizes: &[usize],
    activations: &[Activation],
    final_layer_scale: f64,
) -> Result<Mlp> {
    if layer_sizes.len() < 2 {
        return Err(Error::EmptyNetwork);
    }
    if activations.len() != layer_sizes.len() - 1 {
        return Err(Error::ArchitectureMismatch(format!(
            "{} layers need {} activations, got {}",
            layer_sizes.len() - 1,
            layer_sizes.len() - 1,
            activations.len()
        )));
    }
    if !(final_layer_scale.is_finite() && final_layer_scale >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "final_layer_scale must be finite and non-negative, got {final_layer_scale}"
        )));
    }
    let n_layers = activations.len();
    let mut layers = Vec::with_capacity(n_layers);
    for (idx, (dims, &activation)) in layer_sizes.windows(2).zip(activations).enumerate() {
        let (fan_in, fan_out) = (dims[0], dims[1]);
        let bound = if idx + 1 == n_layers {
            final_layer_scale
        } else {
            1.0 / (fan_in as f64).sqrt()
        };
        let mut draw = |n: usize| -> Result<Vec<f64>> {
            if bound == 0.0 {
                return Ok(vec![0.0; n]);
            }
            let dist = Uniform::new_inclusive(-bound, bound)
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            Ok((0..n).map(|_| dist.sample(rng)).collect())
        };
        let weights = draw(fan_in * fan_out)?;
        let bias = draw(fan_out)?;
        layers.push(Layer::new(fan_in, fan_out, weights, bias, activation)?);
    }
    Mlp::from_layers(layers)
}

/// Moments of parameters whose gradient has gone to zero decay geometrically
/// into the subnormal range, where arithmetic is very slow. Such values are
/// below the resolution of any parameter update, so they are zeroed.
#[inline]
fn flush_subnormal(x: f64) -> f64 {
    if x.abs() < f64::MIN_POSITIVE {
        0.0
    } else {
        x
    }
}

/// Adam optimizer state for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moments: Gradients,
    pub second_moments: Gradients,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(net: &Mlp) -> Self {
        Self::with_hyperparams(net, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(net: &Mlp, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            first_moments: Gradients::zeros_like(net),
            second_moments: Gradients::zeros_like(net),
            step_count: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    /// One bias-corrected Adam update of `net` in place.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients, learning_rate: f64) -> Result<()> {
        if !grads.matches(net) || !self.first_moments.matches(net) || !self.second_moments.matches(net) {
            return Err(Error::ArchitectureMismatch(
                "gradient or moment shapes do not match the network".into(),
            ));
        }
        for (layer, (w, b)) in grads.weights.iter().zip(&grads.biases).enumerate() {
            if !w.iter().chain(b).all(|g| g.is_finite()) {
                return Err(Error::NonFiniteGradient { layer });
            }
        }

        self.step_count += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let t = i32::try_from(self.step_count).unwrap_or(i32::MAX);
        let correction1 = 1.0 - b1.powi(t);
        let correction2 = 1.0 - b2.powi(t);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = flush_subnormal(b1 * *m + (1.0 - b1) * g);
                *v = flush_subnormal(b2 * *v + (1.0 - b2) * g * g);
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *p -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
        };
        for (idx, layer) in net.layers.iter_mut().enumerate() {
            update(
                &mut layer.weights,
                &grads.weights[idx],
                &mut self.first_moments.weights[idx],
                &mut self.second_moments.weights[idx],
            );
            update(
                &mut layer.bias,
                &grads.biases[idx],
                &mut self.first_moments.biases[idx],
                &mut self.second_moments.biases[idx],
            );
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(net: &mut Mlp, grads: &Gradients, state: &mut AdamState, learning_rate: f64) -> Result<()> {
    state.step(net, grads, learning_rate)
}
