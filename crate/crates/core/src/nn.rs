//! Minimal dense/1D-convolution network machinery with explicit backprop.
//!
//! Everything is f64 and allocation-per-sample so that analytic gradients can
//! be validated against central finite differences to tight tolerances. The
//! only nonlinearity is tanh, smooth everywhere, which keeps the finite
//! difference check valid at any point.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Convolution layer geometry; parameters live in an external flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub fn n_params(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel + self.out_ch
    }

    pub fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn out_len(&self, in_len: usize) -> usize {
        (in_len + 2 * self.pad() - self.kernel) / self.stride + 1
    }

    /// x is channel-major `[in_ch][in_len]`; output is `[out_ch][out_len]`.
    pub fn forward(&self, p: &[f64], x: &[f64], in_len: usize) -> Vec<f64> {
        let out_len = self.out_len(in_len);
        let pad = self.pad() as isize;
        let w = &p[..self.out_ch * self.in_ch * self.kernel];
        let b = &p[self.out_ch * self.in_ch * self.kernel..];
        let mut out = vec![0.0f64; self.out_ch * out_len];
        for oc in 0..self.out_ch {
            let out_row = &mut out[oc * out_len..(oc + 1) * out_len];
            out_row.fill(b[oc]);
            for ic in 0..self.in_ch {
                let x_row = &x[ic * in_len..(ic + 1) * in_len];
                let w_row = &w[(oc * self.in_ch + ic) * self.kernel..][..self.kernel];
                for (t, slot) in out_row.iter_mut().enumerate() {
                    let base = (t * self.stride) as isize - pad;
                    let mut acc = 0.0;
                    for (j, &wj) in w_row.iter().enumerate() {
                        let u = base + j as isize;
                        if u >= 0 && (u as usize) < in_len {
                            acc += wj * x_row[u as usize];
                        }
                    }
                    *slot += acc;
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `dp` and returns dL/dx.
    pub fn backward(&self, p: &[f64], x: &[f64], in_len: usize, dy: &[f64], dp: &mut [f64]) -> Vec<f64> {
        let out_len = self.out_len(in_len);
        let pad = self.pad() as isize;
        let w = &p[..self.out_ch * self.in_ch * self.kernel];
        let (dw, db) = dp.split_at_mut(self.out_ch * self.in_ch * self.kernel);
        let mut dx = vec![0.0f64; self.in_ch * in_len];
        for oc in 0..self.out_ch {
            let dy_row = &dy[oc * out_len..(oc + 1) * out_len];
            db[oc] += dy_row.iter().sum::<f64>();
            for ic in 0..self.in_ch {
                let x_row = &x[ic * in_len..(ic + 1) * in_len];
                let dx_row = &mut dx[ic * in_len..(ic + 1) * in_len];
                let w_row = &w[(oc * self.in_ch + ic) * self.kernel..][..self.kernel];
                let dw_row = &mut dw[(oc * self.in_ch + ic) * self.kernel..][..self.kernel];
                for (t, &g) in dy_row.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let base = (t * self.stride) as isize - pad;
                    for j in 0..self.kernel {
                        let u = base + j as isize;
                        if u >= 0 && (u as usize) < in_len {
                            dw_row[j] += g * x_row[u as usize];
                            dx_row[u as usize] += g * w_row[j];
                        }
                    }
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenseSpec {
    pub in_dim: usize,
    pub out_dim: usize,
}

impl DenseSpec {
    pub fn n_params(&self) -> usize {
        self.out_dim * self.in_dim + self.out_dim
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let w = &p[..self.out_dim * self.in_dim];
        let b = &p[self.out_dim * self.in_dim..];
        (0..self.out_dim)
            .map(|o| {
                b[o] + w[o * self.in_dim..(o + 1) * self.in_dim]
                    .iter()
                    .zip(x)
                    .map(|(wi, xi)| wi * xi)
                    .sum::<f64>()
            })
            .collect()
    }

    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], dp: &mut [f64]) -> Vec<f64> {
        let w = &p[..self.out_dim * self.in_dim];
        let (dw, db) = dp.split_at_mut(self.out_dim * self.in_dim);
        let mut dx = vec![0.0f64; self.in_dim];
        for o in 0..self.out_dim {
            let g = dy[o];
            db[o] += g;
            let w_row = &w[o * self.in_dim..(o + 1) * self.in_dim];
            let dw_row = &mut dw[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                dw_row[i] += g * x[i];
                dx[i] += g * w_row[i];
            }
        }
        dx
    }
}

pub fn tanh_forward(x: &mut [f64]) {
    for v in x {
        *v = v.tanh();
    }
}

/// Gradient through tanh given the activation output y and upstream dy.
pub fn tanh_backward(y: &[f64], dy: &mut [f64]) {
    for (g, &a) in dy.iter_mut().zip(y) {
        *g *= 1.0 - a * a;
    }
}

/// Numerically stable log-softmax cross-entropy. Returns the loss and the
/// logits gradient (softmax − one-hot).
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let mut grad: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let loss = z.ln() + max - logits[label];
    grad[label] -= 1.0;
    (loss, grad)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

/// Residual 1D-convolution classifier shape: stem conv, `blocks` stride-2
/// residual blocks, global average pooling, dense head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvNetShape {
    pub in_ch: usize,
    pub channels: usize,
    pub blocks: usize,
    pub kernel: usize,
    pub in_len: usize,
    pub n_classes: usize,
}

#[derive(Debug, Clone, Copy)]
struct BlockLayout {
    conv1: ConvSpec,
    conv2: ConvSpec,
    proj: ConvSpec,
    in_len: usize,
}

#[derive(Debug, Clone)]
pub struct ConvNet {
    pub shape: ConvNetShape,
    stem: ConvSpec,
    blocks: Vec<BlockLayout>,
    head: DenseSpec,
    /// (offset, len) of every layer's slice in the flat parameter vector,
    /// in order stem, (conv1, conv2, proj)*, head.
    offsets: Vec<(usize, usize)>,
    n_params: usize,
    final_len: usize,
}

impl ConvNet {
    pub fn new(shape: ConvNetShape) -> Self {
        let stem = ConvSpec { in_ch: shape.in_ch, out_ch: shape.channels, kernel: shape.kernel, stride: 1 };
        let mut blocks = Vec::with_capacity(shape.blocks);
        let mut len = shape.in_len;
        for _ in 0..shape.blocks {
            let conv1 = ConvSpec { in_ch: shape.channels, out_ch: shape.channels, kernel: shape.kernel, stride: 2 };
            let conv2 = ConvSpec { in_ch: shape.channels, out_ch: shape.channels, kernel: shape.kernel, stride: 1 };
            let proj = ConvSpec { in_ch: shape.channels, out_ch: shape.channels, kernel: 1, stride: 2 };
            blocks.push(BlockLayout { conv1, conv2, proj, in_len: len });
            len = conv1.out_len(len);
        }
        let head = DenseSpec { in_dim: shape.channels, out_dim: shape.n_classes };

        let mut offsets = Vec::new();
        let mut off = 0usize;
        let mut push = |n: usize, offsets: &mut Vec<(usize, usize)>| {
            offsets.push((off, n));
            off += n;
        };
        push(stem.n_params(), &mut offsets);
        for b in &blocks {
            push(b.conv1.n_params(), &mut offsets);
            push(b.conv2.n_params(), &mut offsets);
            push(b.proj.n_params(), &mut offsets);
        }
        push(head.n_params(), &mut offsets);

        Self { shape, stem, blocks, head, offsets, n_params: off, final_len: len }
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Xavier-uniform initialization, deterministic for a given seed.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = vec![0.0f64; self.n_params];
        let mut layer = 0usize;
        let mut init_conv = |spec: &ConvSpec, params: &mut [f64], layer: &mut usize, rng: &mut ChaCha12Rng| {
            let (off, n) = self.offsets[*layer];
            *layer += 1;
            let fan_in = (spec.in_ch * spec.kernel) as f64;
            let fan_out = (spec.out_ch * spec.kernel) as f64;
            let limit = (6.0 / (fan_in + fan_out)).sqrt();
            let n_w = spec.out_ch * spec.in_ch * spec.kernel;
            for v in &mut params[off..off + n_w] {
                *v = (rng.random::<f64>() * 2.0 - 1.0) * limit;
            }
            for v in &mut params[off + n_w..off + n] {
                *v = 0.0;
            }
        };
        init_conv(&self.stem, &mut params, &mut layer, &mut rng);
        for b in &self.blocks.clone() {
            init_conv(&b.conv1, &mut params, &mut layer, &mut rng);
            init_conv(&b.conv2, &mut params, &mut layer, &mut rng);
            init_conv(&b.proj, &mut params, &mut layer, &mut rng);
        }
        let (off, n) = self.offsets[layer];
        let limit = (6.0 / (self.head.in_dim + self.head.out_dim) as f64).sqrt();
        let n_w = self.head.out_dim * self.head.in_dim;
        for v in &mut params[off..off + n_w] {
            *v = (rng.random::<f64>() * 2.0 - 1.0) * limit;
        }
        for v in &mut params[off + n_w..off + n] {
            *v = 0.0;
        }
        params
    }

    fn slice<'a>(&self, params: &'a [f64], layer: usize) -> &'a [f64] {
        let (off, n) = self.offsets[layer];
        &params[off..off + n]
    }

    fn slice_mut<'a>(&self, grads: &'a mut [f64], layer: usize) -> &'a mut [f64] {
        let (off, n) = self.offsets[layer];
        &mut grads[off..off + n]
    }

    /// Forward pass; input `x` is channel-major `[in_ch][in_len]`.
    pub fn logits(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        self.forward_cached(params, x).1
    }

    pub fn probabilities(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(params, x))
    }

    fn forward_cached(&self, params: &[f64], x: &[f64]) -> (ForwardCache, Vec<f64>) {
        let mut layer = 0usize;
        let mut a = self.stem.forward(self.slice(params, layer), x, self.shape.in_len);
        layer += 1;
        tanh_forward(&mut a);
        let mut acts = Vec::with_capacity(self.blocks.len() * 2 + 1);
        let mut block_h1 = Vec::with_capacity(self.blocks.len());
        acts.push(a);
        for b in &self.blocks {
            let input = acts.last().unwrap();
            let mut h1 = b.conv1.forward(self.slice(params, layer), input, b.in_len);
            layer += 1;
            tanh_forward(&mut h1);
            let out_len = b.conv1.out_len(b.in_len);
            let mut h2 = b.conv2.forward(self.slice(params, layer), &h1, out_len);
            layer += 1;
            let skip = b.proj.forward(self.slice(params, layer), input, b.in_len);
            layer += 1;
            for (v, s) in h2.iter_mut().zip(&skip) {
                *v += s;
            }
            tanh_forward(&mut h2);
            block_h1.push(h1);
            acts.push(h2);
        }
        // global average pooling over time
        let last = acts.last().unwrap();
        let c = self.shape.channels;
        let l = self.final_len;
        let pooled: Vec<f64> =
            (0..c).map(|ch| last[ch * l..(ch + 1) * l].iter().sum::<f64>() / l as f64).collect();
        let logits = self.head.forward(self.slice(params, layer), &pooled);
        (ForwardCache { acts, block_h1, pooled }, logits)
    }

    /// Cross-entropy loss and flat parameter gradient for one sample.
    pub fn loss_and_grad(&self, params: &[f64], x: &[f64], label: usize) -> (f64, Vec<f64>, Vec<f64>) {
        let (cache, logits) = self.forward_cached(params, x);
        let (loss, dlogits) = softmax_cross_entropy(&logits, label);
        let probs = softmax(&logits);
        let mut grads = vec![0.0f64; self.n_params];

        let head_layer = self.offsets.len() - 1;
        let mut dpooled =
            self.head.backward(self.slice(params, head_layer), &cache.pooled, &dlogits, self.slice_mut(&mut grads, head_layer));

        // pooling backward: spread evenly over time
        let c = self.shape.channels;
        let l = self.final_len;
        let mut da = vec![0.0f64; c * l];
        for ch in 0..c {
            let g = dpooled[ch] / l as f64;
            for t in 0..l {
                da[ch * l + t] = g;
            }
        }
        dpooled.clear();

        for (bi, b) in self.blocks.iter().enumerate().rev() {
            let layer = 1 + bi * 3;
            let y = &cache.acts[bi + 1];
            tanh_backward(y, &mut da);
            let input = &cache.acts[bi];
            let h1 = &cache.block_h1[bi];
            let mid_len = b.conv1.out_len(b.in_len);
            let mut dh1 =
                self.conv_backward(params, &mut grads, layer + 1, &b.conv2, h1, mid_len, &da);
            let dskip =
                self.conv_backward(params, &mut grads, layer + 2, &b.proj, input, b.in_len, &da);
            tanh_backward(h1, &mut dh1);
            let dmain =
                self.conv_backward(params, &mut grads, layer, &b.conv1, input, b.in_len, &dh1);
            da = dmain;
            for (v, s) in da.iter_mut().zip(&dskip) {
                *v += s;
            }
        }

        let stem_out = &cache.acts[0];
        tanh_backward(stem_out, &mut da);
        let _ = self.conv_backward(params, &mut grads, 0, &self.stem, x, self.shape.in_len, &da);

        (loss, grads, probs)
    }

    fn conv_backward(
        &self,
        params: &[f64],
        grads: &mut [f64],
        layer: usize,
        spec: &ConvSpec,
        x: &[f64],
        in_len: usize,
        dy: &[f64],
    ) -> Vec<f64> {
        let (off, n) = self.offsets[layer];
        spec.backward(&params[off..off + n], x, in_len, dy, &mut grads[off..off + n])
    }
}

struct ForwardCache {
    /// Post-activation outputs: stem, then each block.
    acts: Vec<Vec<f64>>,
    /// tanh(conv1(x)) inside each block.
    block_h1: Vec<Vec<f64>>,
    pooled: Vec<f64>,
}

/// Mean loss over a batch and the matching mean flat gradient.
pub fn batch_loss_and_grad(
    net: &ConvNet,
    params: &[f64],
    inputs: &[Vec<f64>],
    labels: &[usize],
) -> (f64, Vec<f64>) {
    let mut total_loss = 0.0;
    let mut grads = vec![0.0f64; net.n_params()];
    for (x, &label) in inputs.iter().zip(labels) {
        let (loss, g, _) = net.loss_and_grad(params, x, label);
        total_loss += loss;
        for (acc, v) in grads.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    let inv = 1.0 / inputs.len().max(1) as f64;
    for g in &mut grads {
        *g *= inv;
    }
    (total_loss * inv, grads)
}

/// Max relative error between analytic gradients and central finite
/// differences of the batch loss.
pub fn finite_difference_check(
    net: &ConvNet,
    params: &[f64],
    inputs: &[Vec<f64>],
    labels: &[usize],
    step: f64,
) -> f64 {
    let (_, analytic) = batch_loss_and_grad(net, params, inputs, labels);
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + step;
        let (lp, _) = batch_loss_only(net, &p, inputs, labels);
        p[i] = orig - step;
        let (lm, _) = batch_loss_only(net, &p, inputs, labels);
        p[i] = orig;
        let numeric = (lp - lm) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

fn batch_loss_only(net: &ConvNet, params: &[f64], inputs: &[Vec<f64>], labels: &[usize]) -> (f64, ()) {
    let mut total = 0.0;
    for (x, &label) in inputs.iter().zip(labels) {
        let logits = net.logits(params, x);
        total += softmax_cross_entropy(&logits, label).0;
    }
    (total / inputs.len().max(1) as f64, ())
}

/// AdaDelta with a learning-rate factor, matching the classifier's
/// schedule-with-decay training setup.
#[derive(Debug, Clone)]
pub struct AdaDelta {
    pub rho: f64,
    pub eps: f64,
    pub lr: f64,
    acc_grad: Vec<f64>,
    acc_update: Vec<f64>,
}

impl AdaDelta {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self { rho: 0.95, eps: 1e-6, lr, acc_grad: vec![0.0; n_params], acc_update: vec![0.0; n_params] }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr_scale: f64, weight_decay: f64) {
        for i in 0..params.len() {
            let g = grads[i] + weight_decay * params[i];
            self.acc_grad[i] = self.rho * self.acc_grad[i] + (1.0 - self.rho) * g * g;
            let dx = -((self.acc_update[i] + self.eps).sqrt() / (self.acc_grad[i] + self.eps).sqrt())
                * g
                * self.lr
                * lr_scale;
            self.acc_update[i] = self.rho * self.acc_update[i] + (1.0 - self.rho) * dx * dx;
            params[i] += dx;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let b1c = 1.0 - self.beta1.powi(self.t as i32);
        let b2c = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / b1c;
            let vhat = self.v[i] / b2c;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Plain multilayer perceptron with tanh hidden layers; used by the
/// distributional Q-learner.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<DenseSpec>,
    offsets: Vec<(usize, usize)>,
    n_params: usize,
}

impl Mlp {
    pub fn new(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2);
        let mut layers = Vec::new();
        let mut offsets = Vec::new();
        let mut off = 0;
        for w in dims.windows(2) {
            let spec = DenseSpec { in_dim: w[0], out_dim: w[1] };
            offsets.push((off, spec.n_params()));
            off += spec.n_params();
            layers.push(spec);
        }
        Self { layers, offsets, n_params: off }
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = vec![0.0f64; self.n_params];
        for (li, spec) in self.layers.iter().enumerate() {
            let (off, n) = self.offsets[li];
            let limit = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
            let n_w = spec.out_dim * spec.in_dim;
            for v in &mut params[off..off + n_w] {
                *v = (rng.random::<f64>() * 2.0 - 1.0) * limit;
            }
            let _ = n;
        }
        params
    }

    /// Forward with tanh on all but the final layer.
    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for (li, spec) in self.layers.iter().enumerate() {
            let (off, n) = self.offsets[li];
            a = spec.forward(&params[off..off + n], &a);
            if li + 1 < self.layers.len() {
                tanh_forward(&mut a);
            }
        }
        a
    }

    /// Backward given dL/d(output logits); returns the flat gradient.
    pub fn loss_grad(&self, params: &[f64], x: &[f64], dout: &[f64]) -> Vec<f64> {
        // recompute activations
        let mut acts: Vec<Vec<f64>> = vec![x.to_vec()];
        for (li, spec) in self.layers.iter().enumerate() {
            let (off, n) = self.offsets[li];
            let mut a = spec.forward(&params[off..off + n], acts.last().unwrap());
            if li + 1 < self.layers.len() {
                tanh_forward(&mut a);
            }
            acts.push(a);
        }
        let mut grads = vec![0.0f64; self.n_params];
        let mut da = dout.to_vec();
        for li in (0..self.layers.len()).rev() {
            let (off, n) = self.offsets[li];
            if li + 1 < self.layers.len() {
                tanh_backward(&acts[li + 1], &mut da);
            }
            da = self.layers[li].backward(&params[off..off + n], &acts[li], &da, &mut grads[off..off + n]);
        }
        grads
    }
}
