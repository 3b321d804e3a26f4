//! Minimal dense feed-forward network with exact reverse-mode gradients and
//! an Adam optimizer. Backs both the classifier and the divergence critic.
//!
//! The topology is fixed (affine -> hidden activation -> ... -> affine ->
//! output activation), so gradients are computed by hand rather than through
//! a general autodiff graph; the backward pass also returns gradients with
//! respect to the inputs, which the divergence regularizer needs to push
//! loss terms through the classifier's soft outputs.
//!
//! Batches are flat row-major `f64` buffers (`batch * width`). The
//! `forward_reuse`/`backward_reuse` pair recycles caller-owned caches so the
//! training loops run without per-sample allocation; `forward`, and the
//! nested-slice convenience wrappers, trade that for ergonomics.
//!
//! Checkpoint layout (text, one item per line, f64 values as their IEEE-754
//! bit patterns in hex so round-trips are bit-exact):
//!
//! ```text
//! densenet v1
//! dims <d0> <d1> ... <dk>
//! hidden <activation id>
//! output <activation id>
//! weights <layer index> <out*in hex words, row-major>
//! biases <layer index> <out hex words>
//! ```

use std::io::{BufRead, Write};

use rand::distributions::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const SELU_SCALE: f64 = 1.0507;
pub const SELU_ALPHA: f64 = 1.6732;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Sigmoid,
    Selu,
    /// t = 1 - e^(-v); range (-inf, 1), used by critics whose conjugate
    /// domain requires t < 1.
    OneMinusExpNeg,
}

impl Activation {
    pub fn id(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
            Activation::Selu => "selu",
            Activation::OneMinusExpNeg => "one_minus_exp_neg",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "identity" => Ok(Activation::Identity),
            "sigmoid" => Ok(Activation::Sigmoid),
            "selu" => Ok(Activation::Selu),
            "one_minus_exp_neg" => Ok(Activation::OneMinusExpNeg),
            other => Err(Error::config(format!("unknown activation id {other:?}"))),
        }
    }

    pub fn value(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Selu => {
                if x > 0.0 {
                    SELU_SCALE * x
                } else {
                    SELU_SCALE * SELU_ALPHA * (x.exp() - 1.0)
                }
            }
            Activation::OneMinusExpNeg => 1.0 - (-x).exp(),
        }
    }

    /// Derivative at pre-activation `pre` whose activation value is `post`.
    /// Expressed through `post` where that avoids recomputing exponentials.
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => post * (1.0 - post),
            Activation::Selu => {
                if pre > 0.0 {
                    SELU_SCALE
                } else {
                    post + SELU_SCALE * SELU_ALPHA
                }
            }
            Activation::OneMinusExpNeg => 1.0 - post,
        }
    }
}

/// Fully connected network. `weights[l]` is row-major `dims[l+1] x dims[l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    hidden_activation: Activation,
    output_activation: Activation,
}

/// Per-layer activations retained from a forward pass; consumed by
/// [`DenseNet::backward_reuse`]. Buffers are recycled across calls, so a
/// long-lived cache makes repeated passes allocation-free. Holding a cache
/// filled by `forward_reuse` is what authorizes a backward pass; a cache
/// shape that does not match the network is rejected.
#[derive(Debug, Default, Clone)]
pub struct ForwardCache {
    batch: usize,
    input: Vec<f64>,
    /// pre[l]: flat batch of pre-activations of layer l.
    pre: Vec<Vec<f64>>,
    /// post[l]: flat batch of activated outputs of layer l.
    post: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn batch_len(&self) -> usize {
        self.batch
    }

    /// Final-layer outputs, flat row-major.
    pub fn outputs(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Gradients of a scalar loss with respect to every parameter, plus the
/// gradient with respect to the inputs (flat row-major, like the batch).
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub inputs: Vec<f64>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            inputs: Vec::new(),
        }
    }

    fn reset_for(&mut self, net: &DenseNet, batch: usize) {
        resize_zeroed(&mut self.weights, &net.weights);
        resize_zeroed(&mut self.biases, &net.biases);
        self.inputs.clear();
        self.inputs.resize(batch * net.dims[0], 0.0);
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            for g in v.iter_mut() {
                *g *= factor;
            }
        }
        for g in self.inputs.iter_mut() {
            *g *= factor;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .all(|v| v.iter().all(|x| x.is_finite()))
            && self.inputs.iter().all(|x| x.is_finite())
    }
}

fn resize_zeroed(target: &mut Vec<Vec<f64>>, shape: &[Vec<f64>]) {
    target.resize_with(shape.len(), Vec::new);
    for (t, s) in target.iter_mut().zip(shape) {
        t.clear();
        t.resize(s.len(), 0.0);
    }
}

impl DenseNet {
    /// Random initialization: weights uniform in (-1/sqrt(fan_in),
    /// +1/sqrt(fan_in)), biases zero; draw order is layer by layer,
    /// row-major within a layer.
    pub fn new(
        dims: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut net = Self::zeroed(dims, hidden_activation, output_activation)?;
        for l in 0..net.dims.len() - 1 {
            let bound = 1.0 / (net.dims[l] as f64).sqrt();
            let dist = Uniform::new(-bound, bound);
            for w in net.weights[l].iter_mut() {
                *w = dist.sample(rng);
            }
        }
        Ok(net)
    }

    /// All-zero parameters; useful as a deterministic baseline.
    pub fn zeroed(
        dims: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::shape(format!(
                "network needs an input and an output layer, got dims {dims:?}"
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("zero-width layer in dims {dims:?}")));
        }
        if hidden_activation == Activation::OneMinusExpNeg {
            return Err(Error::config(
                "one_minus_exp_neg is an output activation, not a hidden one".to_string(),
            ));
        }
        if output_activation == Activation::Selu {
            return Err(Error::config(
                "selu is a hidden activation, not an output one".to_string(),
            ));
        }
        let weights = (0..dims.len() - 1).map(|l| vec![0.0; dims[l + 1] * dims[l]]).collect();
        let biases = (0..dims.len() - 1).map(|l| vec![0.0; dims[l + 1]]).collect();
        Ok(DenseNet {
            dims: dims.to_vec(),
            weights,
            biases,
            hidden_activation,
            output_activation,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    /// Per-layer row-major weight matrices.
    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }

    /// Per-layer bias vectors.
    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().chain(self.biases.iter()).all(|v| v.iter().all(|x| x.is_finite()))
    }

    fn activation_for_layer(&self, layer: usize) -> Activation {
        if layer + 2 == self.dims.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    /// Forward pass over a flat row-major batch, recycling `cache` buffers.
    pub fn forward_reuse(
        &self,
        input_flat: &[f64],
        batch: usize,
        cache: &mut ForwardCache,
    ) -> Result<()> {
        if batch == 0 {
            return Err(Error::shape("forward on an empty batch".to_string()));
        }
        if input_flat.len() != batch * self.dims[0] {
            return Err(Error::shape(format!(
                "input length {} does not match batch {} x width {}",
                input_flat.len(),
                batch,
                self.dims[0]
            )));
        }
        let layers = self.dims.len() - 1;
        cache.batch = batch;
        cache.input.clear();
        cache.input.extend_from_slice(input_flat);
        cache.pre.resize_with(layers, Vec::new);
        cache.post.resize_with(layers, Vec::new);
        for l in 0..layers {
            let (in_dim, out_dim) = (self.dims[l], self.dims[l + 1]);
            let act = self.activation_for_layer(l);
            let (w, b) = (&self.weights[l], &self.biases[l]);
            let (done, rest) = cache.post.split_at_mut(l);
            let a_prev: &[f64] = if l == 0 { &cache.input } else { &done[l - 1] };
            let z_batch = &mut cache.pre[l];
            let a_batch = &mut rest[0];
            z_batch.clear();
            z_batch.resize(batch * out_dim, 0.0);
            a_batch.clear();
            a_batch.resize(batch * out_dim, 0.0);
            for s in 0..batch {
                let x = &a_prev[s * in_dim..(s + 1) * in_dim];
                let z = &mut z_batch[s * out_dim..(s + 1) * out_dim];
                for o in 0..out_dim {
                    let row = &w[o * in_dim..(o + 1) * in_dim];
                    let mut acc = b[o];
                    for i in 0..in_dim {
                        acc += row[i] * x[i];
                    }
                    z[o] = acc;
                }
                let a = &mut a_batch[s * out_dim..(s + 1) * out_dim];
                for o in 0..out_dim {
                    a[o] = act.value(z[o]);
                }
            }
        }
        Ok(())
    }

    /// Exact gradients of the scalar loss whose per-output derivatives are
    /// `upstream_flat` (flat row-major, like the cache's outputs), written
    /// into `grads`. `cache` must come from `forward_reuse` on this network.
    pub fn backward_reuse(
        &self,
        cache: &ForwardCache,
        upstream_flat: &[f64],
        grads: &mut Gradients,
    ) -> Result<()> {
        let layers = self.dims.len() - 1;
        let cache_matches = cache.pre.len() == layers
            && cache.post.len() == layers
            && cache.input.len() == cache.batch * self.dims[0]
            && (0..layers).all(|l| cache.pre[l].len() == cache.batch * self.dims[l + 1]);
        if !cache_matches {
            return Err(Error::shape(
                "forward cache does not match this network's shape".to_string(),
            ));
        }
        let batch = cache.batch;
        if upstream_flat.len() != batch * self.output_dim() {
            return Err(Error::shape(format!(
                "output gradient length {} does not match batch {} x width {}",
                upstream_flat.len(),
                batch,
                self.output_dim()
            )));
        }
        grads.reset_for(self, batch);

        // delta starts as dL/da at the outputs and is pulled back layer by layer.
        let mut delta = upstream_flat.to_vec();
        let mut delta_prev = Vec::new();
        for l in (0..layers).rev() {
            let act = self.activation_for_layer(l);
            let (in_dim, out_dim) = (self.dims[l], self.dims[l + 1]);
            let a_prev_batch: &[f64] = if l == 0 { &cache.input } else { &cache.post[l - 1] };
            delta_prev.clear();
            delta_prev.resize(batch * in_dim, 0.0);
            let gw = &mut grads.weights[l];
            let gb = &mut grads.biases[l];
            for s in 0..batch {
                let z = &cache.pre[l][s * out_dim..(s + 1) * out_dim];
                let a = &cache.post[l][s * out_dim..(s + 1) * out_dim];
                let a_prev = &a_prev_batch[s * in_dim..(s + 1) * in_dim];
                let dz = &mut delta[s * out_dim..(s + 1) * out_dim];
                let dprev = &mut delta_prev[s * in_dim..(s + 1) * in_dim];
                for o in 0..out_dim {
                    dz[o] *= act.derivative(z[o], a[o]);
                    let d = dz[o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    let w_row = &self.weights[l][o * in_dim..(o + 1) * in_dim];
                    let gw_row = &mut gw[o * in_dim..(o + 1) * in_dim];
                    for i in 0..in_dim {
                        gw_row[i] += d * a_prev[i];
                        dprev[i] += d * w_row[i];
                    }
                }
            }
            std::mem::swap(&mut delta, &mut delta_prev);
        }
        grads.inputs.copy_from_slice(&delta);
        Ok(())
    }

    /// Forward pass on nested rows; allocates the output.
    pub fn forward(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let cache = self.forward_cached(inputs)?;
        let out_dim = self.output_dim();
        Ok(cache.outputs().chunks(out_dim).map(<[f64]>::to_vec).collect())
    }

    /// Forward pass on nested rows, returning the retained cache.
    pub fn forward_cached(&self, inputs: &[Vec<f64>]) -> Result<ForwardCache> {
        if let Some(row) = inputs.iter().find(|row| row.len() != self.dims[0]) {
            return Err(Error::shape(format!(
                "input width {} does not match first layer width {}",
                row.len(),
                self.dims[0]
            )));
        }
        let flat: Vec<f64> = inputs.iter().flatten().copied().collect();
        let mut cache = ForwardCache::new();
        self.forward_reuse(&flat, inputs.len(), &mut cache)?;
        Ok(cache)
    }

    /// Backward pass on nested upstream rows; allocates the gradients.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[Vec<f64>]) -> Result<Gradients> {
        if upstream.len() != cache.batch_len()
            || upstream.iter().any(|g| g.len() != self.output_dim())
        {
            return Err(Error::shape(format!(
                "output gradient shape does not match a batch of {} x {}",
                cache.batch_len(),
                self.output_dim()
            )));
        }
        let flat: Vec<f64> = upstream.iter().flatten().copied().collect();
        let mut grads = Gradients::new();
        self.backward_reuse(cache, &flat, &mut grads)?;
        Ok(grads)
    }

    /// In-place parameter update `p += scale * g`; shapes must match.
    pub fn apply_scaled(&mut self, grads: &Gradients, scale: f64) -> Result<()> {
        self.check_grad_shapes(grads)?;
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            for (p, gv) in w.iter_mut().zip(g) {
                *p += scale * gv;
            }
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            for (p, gv) in b.iter_mut().zip(g) {
                *p += scale * gv;
            }
        }
        Ok(())
    }

    fn check_grad_shapes(&self, grads: &Gradients) -> Result<()> {
        let weights_ok = grads.weights.len() == self.weights.len()
            && grads.weights.iter().zip(&self.weights).all(|(g, w)| g.len() == w.len());
        let biases_ok = grads.biases.len() == self.biases.len()
            && grads.biases.iter().zip(&self.biases).all(|(g, b)| g.len() == b.len());
        if weights_ok && biases_ok {
            Ok(())
        } else {
            Err(Error::shape("gradient shapes do not match network parameters".to_string()))
        }
    }

    pub fn write_checkpoint(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "densenet v1")?;
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        writeln!(out, "dims {}", dims.join(" "))?;
        writeln!(out, "hidden {}", self.hidden_activation.id())?;
        writeln!(out, "output {}", self.output_activation.id())?;
        for (l, w) in self.weights.iter().enumerate() {
            writeln!(out, "weights {l} {}", hex_words(w))?;
        }
        for (l, b) in self.biases.iter().enumerate() {
            writeln!(out, "biases {l} {}", hex_words(b))?;
        }
        Ok(())
    }

    pub fn read_checkpoint(input: impl BufRead) -> Result<Self> {
        let bad = |msg: &str| Error::Data(format!("checkpoint: {msg}"));
        let mut lines = input.lines();
        let mut next_line = || -> Result<String> {
            lines.next().ok_or_else(|| bad("truncated file"))?.map_err(Error::Io)
        };
        if next_line()? != "densenet v1" {
            return Err(bad("missing \"densenet v1\" header"));
        }
        let dims_line = next_line()?;
        let dims_rest = dims_line.strip_prefix("dims ").ok_or_else(|| bad("expected dims line"))?;
        let dims: Vec<usize> = dims_rest
            .split_whitespace()
            .map(|tok| tok.parse().map_err(|_| bad("unparseable dimension")))
            .collect::<Result<_>>()?;
        let hidden_line = next_line()?;
        let hidden = Activation::from_id(
            hidden_line.strip_prefix("hidden ").ok_or_else(|| bad("expected hidden line"))?,
        )?;
        let output_line = next_line()?;
        let output = Activation::from_id(
            output_line.strip_prefix("output ").ok_or_else(|| bad("expected output line"))?,
        )?;
        let mut net = Self::zeroed(&dims, hidden, output)?;
        let layers = dims.len() - 1;
        for l in 0..layers {
            let line = next_line()?;
            let rest = line
                .strip_prefix(&format!("weights {l} "))
                .ok_or_else(|| bad("expected weights line"))?;
            net.weights[l] = parse_hex_words(rest, dims[l + 1] * dims[l])?;
        }
        for l in 0..layers {
            let line = next_line()?;
            let rest = line
                .strip_prefix(&format!("biases {l} "))
                .ok_or_else(|| bad("expected biases line"))?;
            net.biases[l] = parse_hex_words(rest, dims[l + 1])?;
        }
        Ok(net)
    }
}

fn hex_words(values: &[f64]) -> String {
    let words: Vec<String> = values.iter().map(|v| format!("{:016x}", v.to_bits())).collect();
    words.join(" ")
}

fn parse_hex_words(text: &str, expected: usize) -> Result<Vec<f64>> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|tok| {
            u64::from_str_radix(tok, 16)
                .map(f64::from_bits)
                .map_err(|_| Error::Data(format!("checkpoint: bad hex word {tok:?}")))
        })
        .collect::<Result<_>>()?;
    if values.len() != expected {
        return Err(Error::Data(format!(
            "checkpoint: expected {expected} values, found {}",
            values.len()
        )));
    }
    Ok(values)
}

/// Adam with bias correction; moments mirror the parameter shapes.
#[derive(Debug, Clone)]
pub struct AdamState {
    lr: f64,
    step_count: u64,
    m_w: Vec<Vec<f64>>,
    v_w: Vec<Vec<f64>>,
    m_b: Vec<Vec<f64>>,
    v_b: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(net: &DenseNet, lr: f64) -> Self {
        AdamState {
            lr,
            step_count: 0,
            m_w: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            v_w: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            m_b: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            v_b: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One descent step along `grads`. Pass ascent gradients negated.
    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<()> {
        net.check_grad_shapes(grads)?;
        if self.m_w.len() != net.weights.len()
            || self.m_w.iter().zip(&net.weights).any(|(m, w)| m.len() != w.len())
            || self.m_b.iter().zip(&net.biases).any(|(m, b)| m.len() != b.len())
        {
            return Err(Error::shape("optimizer state does not match network".to_string()));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let lr = self.lr;
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for k in 0..p.len() {
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        };
        for l in 0..net.weights.len() {
            update(&mut net.weights[l], &grads.weights[l], &mut self.m_w[l], &mut self.v_w[l]);
            update(&mut net.biases[l], &grads.biases[l], &mut self.m_b[l], &mut self.v_b[l]);
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use rand::Rng;

    /// Scalar loss L = sum_{s,u} coeff[s][u] * out[s][u] evaluated by a fresh
    /// forward pass; the finite-difference oracle for backward.
    pub fn linear_probe_loss(net: &DenseNet, inputs: &[Vec<f64>], coeff: &[Vec<f64>]) -> f64 {
        let out = net.forward(inputs).unwrap();
        out.iter().zip(coeff).map(|(o, c)| o.iter().zip(c).map(|(a, b)| a * b).sum::<f64>()).sum()
    }

    /// Central finite differences over every parameter and every input of the
    /// probe loss; returns the worst relative error against `backward`.
    pub fn max_backward_fd_error(net: &DenseNet, inputs: &[Vec<f64>], coeff: &[Vec<f64>]) -> f64 {
        let h = 1e-5;
        let cache = net.forward_cached(inputs).unwrap();
        let grads = net.backward(&cache, coeff).unwrap();
        let rel = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(an.abs()).max(1.0);
        let mut worst: f64 = 0.0;

        let mut probe_net = net.clone();
        for l in 0..net.weights.len() {
            for k in 0..net.weights[l].len() {
                probe_net.weights[l][k] = net.weights[l][k] + h;
                let up = linear_probe_loss(&probe_net, inputs, coeff);
                probe_net.weights[l][k] = net.weights[l][k] - h;
                let down = linear_probe_loss(&probe_net, inputs, coeff);
                probe_net.weights[l][k] = net.weights[l][k];
                worst = worst.max(rel((up - down) / (2.0 * h), grads.weights[l][k]));
            }
            for k in 0..net.biases[l].len() {
                probe_net.biases[l][k] = net.biases[l][k] + h;
                let up = linear_probe_loss(&probe_net, inputs, coeff);
                probe_net.biases[l][k] = net.biases[l][k] - h;
                let down = linear_probe_loss(&probe_net, inputs, coeff);
                probe_net.biases[l][k] = net.biases[l][k];
                worst = worst.max(rel((up - down) / (2.0 * h), grads.biases[l][k]));
            }
        }

        let in_dim = net.input_dim();
        let mut probe_inputs = inputs.to_vec();
        for s in 0..inputs.len() {
            for i in 0..in_dim {
                probe_inputs[s][i] = inputs[s][i] + h;
                let up = linear_probe_loss(net, &probe_inputs, coeff);
                probe_inputs[s][i] = inputs[s][i] - h;
                let down = linear_probe_loss(net, &probe_inputs, coeff);
                probe_inputs[s][i] = inputs[s][i];
                worst = worst.max(rel((up - down) / (2.0 * h), grads.inputs[s * in_dim + i]));
            }
        }
        worst
    }

    /// A random small net plus a matching batch and probe coefficients.
    pub fn random_instance(
        rng: &mut ChaCha8Rng,
    ) -> (DenseNet, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let depth = rng.gen_range(1..=3);
        let mut dims = vec![rng.gen_range(1..=5)];
        for _ in 0..depth {
            dims.push(rng.gen_range(1..=6));
        }
        let hidden = [Activation::Selu, Activation::Sigmoid, Activation::Identity]
            [rng.gen_range(0..3)];
        let output = [Activation::Sigmoid, Activation::Identity, Activation::OneMinusExpNeg]
            [rng.gen_range(0..3)];
        let net = DenseNet::new(&dims, hidden, output, rng).unwrap();
        let batch = rng.gen_range(1..=6);
        let inputs: Vec<Vec<f64>> = (0..batch)
            .map(|_| (0..dims[0]).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let coeff: Vec<Vec<f64>> = (0..batch)
            .map(|_| (0..*dims.last().unwrap()).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        (net, inputs, coeff)
    }
}
