use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::nn::{Conv1d, LayerNorm, Linear, MultiHeadAttention};
use crate::tensor::{ParamId, ParamStore, Scalar, Session, Tensor, Var};

/// Feed-forward Transformer block: self-attention and a two-layer
/// convolutional feed-forward net, each with residual and layer norm.
#[derive(Clone, Debug)]
pub struct FftBlock {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub norm2: LayerNorm,
    dropout: f64,
}

impl FftBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let d = c.d_model;
        let k = c.encoder_conv_kernel;
        Ok(FftBlock {
            attention: MultiHeadAttention::new(store, &format!("{name}.attention"), d, c.attention_heads, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d, c.ln_eps),
            conv1: Conv1d::new(store, &format!("{name}.conv1"), k, d, c.encoder_conv_filters, 1, rng)?,
            conv2: Conv1d::new(store, &format!("{name}.conv2"), k, c.encoder_conv_filters, d, 1, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d, c.ln_eps),
            dropout: c.dropout,
        })
    }

    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let a = self.attention.forward(sess, x)?;
        let a = sess.dropout(a, self.dropout)?;
        let x = sess.graph.add(x, a)?;
        let x = self.norm1.forward(sess, x)?;
        let f = self.conv1.forward(sess, x)?;
        let f = sess.graph.relu(f);
        let f = self.conv2.forward(sess, f)?;
        let f = sess.dropout(f, self.dropout)?;
        let x = sess.graph.add(x, f)?;
        self.norm2.forward(sess, x)
    }
}

/// Two convolution layers with ReLU, layer norm and dropout, then a scalar
/// projection per phone.
#[derive(Clone, Debug)]
pub struct VariancePredictor {
    pub conv1: Conv1d,
    pub norm1: LayerNorm,
    pub conv2: Conv1d,
    pub norm2: LayerNorm,
    pub output: Linear,
    dropout: f64,
}

impl VariancePredictor {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let (k, f) = (c.predictor_kernel, c.predictor_filters);
        Ok(VariancePredictor {
            conv1: Conv1d::new(store, &format!("{name}.conv1"), k, c.d_model, f, 1, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), f, c.ln_eps),
            conv2: Conv1d::new(store, &format!("{name}.conv2"), k, f, f, 1, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), f, c.ln_eps),
            output: Linear::new(store, &format!("{name}.output"), f, 1, rng),
            dropout: c.dropout,
        })
    }

    /// `[T_phone, d]` to `[T_phone, 1]`.
    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (conv, norm) in [(&self.conv1, &self.norm1), (&self.conv2, &self.norm2)] {
            h = conv.forward(sess, h)?;
            h = sess.graph.relu(h);
            h = norm.forward(sess, h)?;
            h = sess.dropout(h, self.dropout)?;
        }
        self.output.forward(sess, h)
    }
}

/// Residual stacks of dilated convolutions and the Mel projection.
#[derive(Clone, Debug)]
pub struct DilatedDecoder {
    pub input: Option<Linear>,
    /// `blocks[b][l]` is layer `l` of block `b`.
    pub blocks: Vec<Vec<(Conv1d, LayerNorm)>>,
    pub output: Linear,
    mel_mean: ParamId,
    mel_std: ParamId,
    dropout: f64,
}

impl DilatedDecoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let f = c.decoder_filters;
        let input = (f != c.d_model).then(|| Linear::new(store, &format!("{name}.input"), c.d_model, f, rng));
        let mut blocks = Vec::with_capacity(c.decoder_blocks);
        for b in 0..c.decoder_blocks {
            let mut layers = Vec::with_capacity(c.decoder_dilations.len());
            for (l, &dil) in c.decoder_dilations.iter().enumerate() {
                let conv = Conv1d::new(store, &format!("{name}.block{b}.conv{l}"), c.decoder_kernel, f, f, dil, rng)?;
                let norm = LayerNorm::new(store, &format!("{name}.block{b}.norm{l}"), f, c.ln_eps);
                layers.push((conv, norm));
            }
            blocks.push(layers);
        }
        let output = Linear::new(store, &format!("{name}.output"), f, c.mel_bins, rng);
        let mel_mean = store.add_buffer(&format!("{name}.mel_mean"), Tensor::zeros(&[c.mel_bins]));
        let mel_std = store.add_buffer(&format!("{name}.mel_std"), Tensor::full(&[c.mel_bins], T::one()));
        Ok(DilatedDecoder {
            input,
            blocks,
            output,
            mel_mean,
            mel_std,
            dropout: c.dropout,
        })
    }

    pub fn set_statistics<T: Scalar>(&self, store: &mut ParamStore<T>, mean: &[f64], std: &[f64]) -> Result<()> {
        let n = store.get(self.mel_mean).numel();
        if mean.len() != n || std.len() != n {
            return Err(Error::shape("mel statistics", &[n], &[mean.len(), std.len()]));
        }
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Input("mel standard deviations must be positive".into()));
        }
        for (dst, &v) in store.get_mut(self.mel_mean).data_mut().iter_mut().zip(mean) {
            *dst = T::of(v);
        }
        for (dst, &v) in store.get_mut(self.mel_std).data_mut().iter_mut().zip(std) {
            *dst = T::of(v);
        }
        Ok(())
    }

    /// `[T, d]` to `[T, mel_bins]`.
    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let mut h = match &self.input {
            Some(l) => l.forward(sess, x)?,
            None => x,
        };
        for block in &self.blocks {
            for (conv, norm) in block {
                let y = conv.forward(sess, h)?;
                let y = sess.graph.relu(y);
                let y = sess.dropout(y, self.dropout)?;
                let y = sess.graph.add(h, y)?;
                h = norm.forward(sess, y)?;
            }
        }
        let y = self.output.forward(sess, h)?;
        // Output is de-normalized with the stored per-bin statistics.
        let std = sess.store().get(self.mel_std).data().to_vec();
        let n = std.len();
        let mut diag = Tensor::<T>::zeros(&[n, n]);
        for (i, s) in std.into_iter().enumerate() {
            diag.data_mut()[i * n + i] = s;
        }
        let diag = sess.graph.constant(diag);
        let y = sess.graph.matmul(y, diag)?;
        let mean = sess.param(self.mel_mean);
        sess.graph.add_row(y, mean)
    }
}
