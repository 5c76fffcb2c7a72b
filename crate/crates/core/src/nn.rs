//! Minimal fully-connected networks with hand-written analytic gradients.
//!
//! Everything here is small enough that a framework would be overkill: dense
//! layers, a two-layer net with a tanh hidden layer (tanh keeps the loss
//! smooth so gradients can be checked against central finite differences),
//! softmax cross-entropy, and Adam. Parameters are exposed in one flat,
//! fixed order so optimizers, checkpoints and digests all see the same bytes.

use crate::num::{real, Real};
use rand::Rng;

/// Dense layer, weights stored row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub w: Vec<T>,
    pub b: Vec<T>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl<T: Real> Linear<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            w: vec![T::zero(); in_dim * out_dim],
            b: vec![T::zero(); out_dim],
            in_dim,
            out_dim,
        }
    }

    /// Xavier-uniform initialization.
    pub fn xavier<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| real::<T>((rng.gen::<f64>() * 2.0 - 1.0) * limit))
            .collect();
        Linear {
            w,
            b: vec![T::zero(); out_dim],
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut y = self.b.clone();
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = T::zero();
            for (wi, xi) in row.iter().zip(x) {
                acc += *wi * *xi;
            }
            y[o] += acc;
        }
        y
    }

    /// Accumulates parameter gradients into `gw`/`gb` and returns dL/dx.
    pub fn backward(&self, x: &[T], dy: &[T], gw: &mut [T], gb: &mut [T]) -> Vec<T> {
        let mut dx = vec![T::zero(); self.in_dim];
        for o in 0..self.out_dim {
            let g = dy[o];
            gb[o] += g;
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut gw[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }

    pub fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// `in -> tanh(hidden) -> out`. The workhorse for encoders, the random
/// target/predictor pair, and the action-prediction head.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerNet<T> {
    pub l1: Linear<T>,
    pub l2: Linear<T>,
}

/// Hidden-layer activations cached by [`TwoLayerNet::forward_cached`].
pub struct ForwardCache<T> {
    pub hidden: Vec<T>,
}

impl<T: Real> TwoLayerNet<T> {
    /// `zero_output` zeroes the output layer (useful where a uniform initial
    /// prediction is wanted); the hidden layer is always Xavier-initialized.
    pub fn new<R: Rng>(
        in_dim: usize,
        hidden_dim: usize,
        out_dim: usize,
        zero_output: bool,
        rng: &mut R,
    ) -> Self {
        let l1 = Linear::xavier(in_dim, hidden_dim, rng);
        let l2 = if zero_output {
            Linear::zeros(hidden_dim, out_dim)
        } else {
            Linear::xavier(hidden_dim, out_dim, rng)
        };
        TwoLayerNet { l1, l2 }
    }

    pub fn in_dim(&self) -> usize {
        self.l1.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.l2.out_dim
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &[T]) -> (Vec<T>, ForwardCache<T>) {
        let mut h = self.l1.forward(x);
        for v in h.iter_mut() {
            *v = v.tanh();
        }
        let y = self.l2.forward(&h);
        (y, ForwardCache { hidden: h })
    }

    /// Accumulates gradients into `grads` (layout of [`Self::flat_params`])
    /// and returns dL/dx.
    pub fn backward(&self, x: &[T], cache: &ForwardCache<T>, dy: &[T], grads: &mut [T]) -> Vec<T> {
        debug_assert_eq!(grads.len(), self.n_params());
        let (g1w, rest) = grads.split_at_mut(self.l1.w.len());
        let (g1b, rest) = rest.split_at_mut(self.l1.b.len());
        let (g2w, g2b) = rest.split_at_mut(self.l2.w.len());

        let mut dh = self.l2.backward(&cache.hidden, dy, g2w, g2b);
        // d tanh(z) = 1 - tanh(z)^2, and cache.hidden already holds tanh(z)
        for (d, h) in dh.iter_mut().zip(&cache.hidden) {
            *d = *d * (T::one() - *h * *h);
        }
        self.l1.backward(x, &dh, g1w, g1b)
    }

    pub fn n_params(&self) -> usize {
        self.l1.n_params() + self.l2.n_params()
    }

    /// Parameters in the fixed order `l1.w, l1.b, l2.w, l2.b`.
    pub fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.n_params());
        out.extend_from_slice(&self.l1.w);
        out.extend_from_slice(&self.l1.b);
        out.extend_from_slice(&self.l2.w);
        out.extend_from_slice(&self.l2.b);
        out
    }

    pub fn set_flat_params(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.n_params(), "parameter count mismatch");
        let mut off = 0;
        for dst in [
            &mut self.l1.w,
            &mut self.l1.b,
            &mut self.l2.w,
            &mut self.l2.b,
        ] {
            let len = dst.len();
            dst.copy_from_slice(&flat[off..off + len]);
            off += len;
        }
    }

    /// Applies an additive delta per flat-parameter index.
    pub fn apply_deltas(&mut self, mut delta: impl FnMut(usize) -> T) {
        let mut idx = 0;
        for dst in [
            &mut self.l1.w,
            &mut self.l1.b,
            &mut self.l2.w,
            &mut self.l2.b,
        ] {
            for p in dst.iter_mut() {
                *p += delta(idx);
                idx += 1;
            }
        }
    }
}

/// Numerically stable softmax.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().cloned().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of a softmax distribution against an integer label.
/// Returns the loss and dL/dlogits.
pub fn cross_entropy<T: Real>(logits: &[T], label: usize) -> (T, Vec<T>) {
    let probs = softmax(logits);
    let tiny = real::<T>(1e-300);
    let loss = -(probs[label].max(tiny)).ln();
    let mut dlogits = probs;
    dlogits[label] -= T::one();
    (loss, dlogits)
}

/// Adam over a flat gradient vector. The caller owns parameter storage and
/// receives per-index deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> Adam<T> {
    pub fn new(n_params: usize, beta1: T, beta2: T, eps: T) -> Self {
        Adam {
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn n_params(&self) -> usize {
        self.m.len()
    }

    /// One Adam step; `apply(i, delta)` must add `delta` to parameter `i`.
    pub fn step(&mut self, grads: &[T], lr: T, mut apply: impl FnMut(usize, T)) {
        assert_eq!(grads.len(), self.m.len(), "gradient length mismatch");
        self.t += 1;
        let t = self.t as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        for (i, &g) in grads.iter().enumerate() {
            self.m[i] = self.beta1 * self.m[i] + (T::one() - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (T::one() - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            apply(i, -lr * mhat / (vhat.sqrt() + self.eps));
        }
    }
}
