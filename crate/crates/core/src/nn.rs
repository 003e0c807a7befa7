//! Fully connected networks with explicit backpropagation, plus Adam.
//!
//! Parameters live in one flat buffer, layer by layer: the weight matrix
//! (`n_in x n_out`, row-major) followed by the bias. Optimisers, target
//! averaging and checkpoints work on that buffer directly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    fn derivative<T: Real>(self, pre: T, out: T) -> T {
        match self {
            Activation::Relu => {
                if pre > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - out * out,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<T>,
}

/// Intermediate values of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    batch: usize,
    /// `inputs[l]` feeds layer `l`; the final entry is the network output.
    inputs: Vec<Vec<T>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<T>>,
}

impl<T: Real> ForwardCache<T> {
    pub fn output(&self) -> &[T] {
        self.inputs.last().expect("cache holds the output")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl<T: Real> Mlp<T> {
    /// Uniform `+-1/sqrt(fan_in)` initialisation.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&n| n > 0), "bad layer sizes {sizes:?}");
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] + w[1] {
                params.push(T::lit(rng.random_range(-bound..bound)));
            }
        }
        Self {
            sizes: sizes.to_vec(),
            activation,
            params,
        }
    }

    pub fn from_params(sizes: &[usize], activation: Activation, params: Vec<T>) -> Option<Self> {
        if sizes.len() < 2 || sizes.contains(&0) || params.len() != param_count(sizes) {
            return None;
        }
        Some(Self {
            sizes: sizes.to_vec(),
            activation,
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Offsets of weight and bias of layer `l` in the flat buffer.
    fn offsets(&self, l: usize) -> (usize, usize) {
        let w = param_count(&self.sizes[..=l]);
        (w, w + self.sizes[l] * self.sizes[l + 1])
    }

    /// Zeroes the output layer so the network maps everything to zero.
    pub fn zero_output_layer(&mut self) {
        let l = self.n_layers() - 1;
        let (w, _) = self.offsets(l);
        for p in &mut self.params[w..] {
            *p = T::zero();
        }
    }

    /// Polyak averaging: `self <- (1 - tau) self + tau source`.
    pub fn soft_update_from(&mut self, source: &Self, tau: T) {
        debug_assert_eq!(self.sizes, source.sizes);
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            *t = *t + tau * (*s - *t);
        }
    }

    fn linear(&self, l: usize, x: &[T], batch: usize) -> Vec<T> {
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let (w, b) = self.offsets(l);
        let bias = &self.params[b..b + n_out];
        let mut z = Vec::with_capacity(batch * n_out);
        for _ in 0..batch {
            z.extend_from_slice(bias);
        }
        T::gemm(
            batch,
            n_in,
            n_out,
            T::one(),
            x,
            n_in as isize,
            1,
            &self.params[w..b],
            n_out as isize,
            1,
            T::one(),
            &mut z,
            n_out as isize,
            1,
        );
        z
    }

    /// Forward pass over a row-major `batch x input_dim` matrix.
    pub fn forward(&self, x: &[T], batch: usize) -> Vec<T> {
        debug_assert_eq!(x.len(), batch * self.input_dim());
        let mut a = self.linear(0, x, batch);
        for l in 1..self.n_layers() {
            for v in &mut a {
                *v = self.activation.apply(*v);
            }
            a = self.linear(l, &a, batch);
        }
        a
    }

    pub fn forward_cached(&self, x: &[T], batch: usize) -> ForwardCache<T> {
        debug_assert_eq!(x.len(), batch * self.input_dim());
        let mut inputs = Vec::with_capacity(self.n_layers() + 1);
        let mut pre = Vec::with_capacity(self.n_layers() - 1);
        inputs.push(x.to_vec());
        for l in 0..self.n_layers() {
            let z = self.linear(l, &inputs[l], batch);
            if l + 1 < self.n_layers() {
                let a = z.iter().map(|&v| self.activation.apply(v)).collect();
                pre.push(z);
                inputs.push(a);
            } else {
                inputs.push(z);
            }
        }
        ForwardCache { batch, inputs, pre }
    }

    /// Backpropagates `d_out` (gradient w.r.t. the output) through the cached
    /// pass. Parameter gradients are accumulated into `grads` when given; the
    /// gradient w.r.t. the network input is returned when `want_input` is set.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        d_out: &[T],
        mut grads: Option<&mut [T]>,
        want_input: bool,
    ) -> Option<Vec<T>> {
        let batch = cache.batch;
        debug_assert_eq!(d_out.len(), batch * self.output_dim());
        let mut dz = d_out.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = self.offsets(l);
            if let Some(grads) = grads.as_deref_mut() {
                debug_assert_eq!(grads.len(), self.params.len());
                // dW += X^T dZ
                T::gemm(
                    n_in,
                    batch,
                    n_out,
                    T::one(),
                    &cache.inputs[l],
                    1,
                    n_in as isize,
                    &dz,
                    n_out as isize,
                    1,
                    T::one(),
                    &mut grads[w..b],
                    n_out as isize,
                    1,
                );
                let gb = &mut grads[b..b + n_out];
                for row in dz.chunks_exact(n_out) {
                    for (g, d) in gb.iter_mut().zip(row) {
                        *g = *g + *d;
                    }
                }
            }
            if l == 0 && !want_input {
                return None;
            }
            // dX = dZ W^T
            let mut dx = vec![T::zero(); batch * n_in];
            T::gemm(
                batch,
                n_out,
                n_in,
                T::one(),
                &dz,
                n_out as isize,
                1,
                &self.params[w..b],
                1,
                n_out as isize,
                T::zero(),
                &mut dx,
                n_in as isize,
                1,
            );
            if l == 0 {
                return Some(dx);
            }
            let pre = &cache.pre[l - 1];
            let out = &cache.inputs[l];
            for ((d, &p), &o) in dx.iter_mut().zip(pre).zip(out) {
                *d = *d * self.activation.derivative(p, o);
            }
            dz = dx;
        }
        unreachable!("loop returns at layer 0")
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(n: usize, lr: T) -> Self {
        Self {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) {
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = T::one() - self.beta1.powi(self.t);
        let c2 = T::one() - self.beta2.powi(self.t);
        let step = self.lr * c2.sqrt() / c1;
        let eps_hat = self.eps * c2.sqrt();
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (T::one() - self.beta1) * g;
            *v = self.beta2 * *v + (T::one() - self.beta2) * g * g;
            *p = *p - step * *m / (v.sqrt() + eps_hat);
        }
    }
}
