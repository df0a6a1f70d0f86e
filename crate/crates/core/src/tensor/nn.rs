//! Parameterized layers built from graph primitives.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ParamId, ParamStore, Scalar, Session, Tensor, Var};
use crate::error::{Error, Result};

/// Gaussian init with standard deviation `1/sqrt(fan_in)`.
pub fn init_normal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let std = 1.0 / libm::sqrt(fan_in.max(1) as f64);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::of(z * std)
        })
        .collect();
    Tensor::new(shape, data).expect("init shape")
}

/// Dense layer `y = x·W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(&format!("{name}.weight"), init_normal(&[in_dim, out_dim], in_dim, rng));
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Linear { weight, bias, in_dim, out_dim }
    }

    /// All-zero weights and bias.
    pub fn zeros<T: Scalar>(store: &mut ParamStore<T>, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let weight = store.add(&format!("{name}.weight"), Tensor::zeros(&[in_dim, out_dim]));
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Linear { weight, bias, in_dim, out_dim }
    }

    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = sess.param(self.weight);
        let b = sess.param(self.bias);
        let y = sess.graph.matmul(x, w)?;
        sess.graph.add_row(y, b)
    }
}

/// "Same"-padded dilated 1-D convolution with bias; kernel `[k, C_in, C_out]`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub dilation: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config(format!("{name}: kernel size must be odd, got {kernel}")));
        }
        if dilation == 0 {
            return Err(Error::Config(format!("{name}: dilation must be at least 1")));
        }
        let weight = store.add(
            &format!("{name}.weight"),
            init_normal(&[kernel, in_channels, out_channels], kernel * in_channels, rng),
        );
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Ok(Conv1d { weight, bias, kernel, dilation, in_channels, out_channels })
    }

    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = sess.param(self.weight);
        let b = sess.param(self.bias);
        let y = sess.graph.conv1d(x, w, self.dilation)?;
        sess.graph.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize, eps: f64) -> Self {
        let gamma = store.add(&format!("{name}.gamma"), Tensor::full(&[dim], T::one()));
        let beta = store.add(&format!("{name}.beta"), Tensor::zeros(&[dim]));
        LayerNorm { gamma, beta, eps }
    }

    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let g = sess.param(self.gamma);
        let b = sess.param(self.beta);
        sess.graph.layer_norm(x, g, b, self.eps)
    }
}

/// Multi-head scaled dot-product self-attention over `[T, d]`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::Config(format!(
                "{name}: d_model {d_model} is not divisible by {heads} attention heads"
            )));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(store, &format!("{name}.query"), d_model, d_model, rng),
            key: Linear::new(store, &format!("{name}.key"), d_model, d_model, rng),
            value: Linear::new(store, &format!("{name}.value"), d_model, d_model, rng),
            output: Linear::new(store, &format!("{name}.output"), d_model, d_model, rng),
            heads,
        })
    }

    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let d = self.query.in_dim;
        let dh = d / self.heads;
        let q = self.query.forward(sess, x)?;
        let k = self.key.forward(sess, x)?;
        let v = self.value.forward(sess, x)?;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = sess.graph.slice_cols(q, h * dh, dh)?;
            let kh = sess.graph.slice_cols(k, h * dh, dh)?;
            let vh = sess.graph.slice_cols(v, h * dh, dh)?;
            let scores = sess.graph.matmul_nt(qh, kh)?;
            let scores = sess.graph.scale(scores, scale);
            let weights = sess.graph.softmax(scores);
            heads.push(sess.graph.matmul(weights, vh)?);
        }
        let joined = if heads.len() == 1 { heads[0] } else { sess.graph.concat_cols(&heads)? };
        self.output.forward(sess, joined)
    }
}

/// Sinusoidal position table `[len, d]`: even columns `sin`, odd columns `cos`.
pub fn sinusoidal_positions<T: Scalar>(len: usize, d: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(len * d);
    for pos in 0..len {
        for j in 0..d {
            let i = (j / 2) as f64;
            let angle = pos as f64 / libm::pow(10000.0, 2.0 * i / d as f64);
            data.push(T::of(if j % 2 == 0 { libm::sin(angle) } else { libm::cos(angle) }));
        }
    }
    Tensor::new(&[len, d], data).expect("position table shape")
}
