use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::{self, PitchConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const EMBEDDING_DIM: usize = 256;
/// Statistics before padding: 80 + 80 + 3 + 2 + 80 + 1.
pub const FEATURE_DIM: usize = 246;
const ROTATION_SEED: u64 = 0x5EED_D1E7;

/// Unit-norm 256-dim speaker embedding of one utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEmbedding(pub Vec<f64>);

impl SpeakerEmbedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|v| v * v).sum())
    }
}

/// Mean squared difference over the dimensions.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape("mse", &[a.len()], &[b.len()]));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// Cosine similarity clamped to [-1, 1]; exactly 1 for identical inputs.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape("cosine", &[a.len()], &[b.len()]));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Input("cosine of a zero vector".into()));
    }
    Ok((dot / libm::sqrt(na * nb)).clamp(-1.0, 1.0))
}

/// Statistics-plus-rotation speaker embedder. The rotation is a fixed seeded
/// orthonormal matrix, so embeddings are comparable across runs.
#[derive(Clone, Debug)]
pub struct Embedder {
    rotation: Vec<f64>,
}

impl Default for Embedder {
    fn default() -> Self {
        Self::new()
    }
}

impl Embedder {
    pub fn new() -> Self {
        Embedder { rotation: orthonormal(EMBEDDING_DIM, ROTATION_SEED) }
    }

    /// Row-major `256 x 256` rotation.
    pub fn rotation(&self) -> &[f64] {
        &self.rotation
    }

    /// Embedding of a log-Mel spectrogram and its frame pitch track
    /// (Hz, 0 = unvoiced).
    pub fn embed(&self, mel: &Tensor<f32>, pitch: &[f32]) -> Result<SpeakerEmbedding> {
        let f = features(mel, pitch)?;
        self.embed_features(&f)
    }

    /// Embedding of a clip, analysed with the shared Mel and pitch front end.
    pub fn embed_clip(&self, audio: &[f32]) -> Result<SpeakerEmbedding> {
        let mel = dsp::mel_features(audio)?;
        let pitch = dsp::extract_pitch(audio, &PitchConfig::default());
        self.embed(&mel, &pitch)
    }

    pub fn embed_features(&self, features: &[f64]) -> Result<SpeakerEmbedding> {
        if features.len() != FEATURE_DIM {
            return Err(Error::shape("speaker features", &[FEATURE_DIM], &[features.len()]));
        }
        let n = EMBEDDING_DIM;
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.rotation[i * n..i * n + FEATURE_DIM];
            *o = row.iter().zip(features).map(|(r, x)| r * x).sum();
        }
        let norm = libm::sqrt(out.iter().map(|v| v * v).sum());
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Input("speaker features have no usable magnitude".into()));
        }
        out.iter_mut().for_each(|v| *v /= norm);
        Ok(SpeakerEmbedding(out))
    }
}

/// Feature vector: per-band Mel mean and standard deviation, voiced log-pitch
/// mean, standard deviation and median, frame log-energy mean and standard
/// deviation, per-band mean absolute Mel delta, and the voicing rate.
pub fn features(mel: &Tensor<f32>, pitch: &[f32]) -> Result<Vec<f64>> {
    if mel.rank() != 2 || mel.cols() != dsp::N_MELS {
        return Err(Error::shape("embedding mel", &[0, dsp::N_MELS], mel.shape()));
    }
    let t = mel.rows();
    if t == 0 {
        return Err(Error::Empty("embedding mel"));
    }
    if pitch.len() != t {
        return Err(Error::shape("embedding pitch track", &[t], &[pitch.len()]));
    }
    let b = dsp::N_MELS;
    let mut out = Vec::with_capacity(FEATURE_DIM);

    let (mean, std) = column_stats(mel);
    out.extend_from_slice(&mean);
    out.extend_from_slice(&std);

    let voiced: Vec<f64> = pitch.iter().filter(|&&p| p > 0.0).map(|&p| libm::log(p as f64)).collect();
    if voiced.is_empty() {
        log::warn!("all-unvoiced clip; pitch statistics set to 0");
        out.extend_from_slice(&[0.0; 3]);
    } else {
        let (m, s) = mean_std(&voiced);
        let v32: Vec<f32> = voiced.iter().map(|&v| v as f32).collect();
        out.extend_from_slice(&[m, s, dsp::median(&v32).unwrap_or(m)]);
    }

    let energy: Vec<f64> = (0..t).map(|i| log_sum_exp(mel.row(i))).collect();
    let (m, s) = mean_std(&energy);
    out.extend_from_slice(&[m, s]);

    let mut delta = vec![0.0; b];
    if t > 1 {
        for i in 1..t {
            for (j, d) in delta.iter_mut().enumerate() {
                *d += (mel.row(i)[j] as f64 - mel.row(i - 1)[j] as f64).abs();
            }
        }
        delta.iter_mut().for_each(|d| *d /= (t - 1) as f64);
    }
    out.extend_from_slice(&delta);

    out.push(voiced.len() as f64 / t as f64);
    debug_assert_eq!(out.len(), FEATURE_DIM);
    Ok(out)
}

fn column_stats(mel: &Tensor<f32>) -> (Vec<f64>, Vec<f64>) {
    let (t, b) = (mel.rows(), mel.cols());
    let mut mean = vec![0.0; b];
    for i in 0..t {
        for (m, &v) in mean.iter_mut().zip(mel.row(i)) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);
    let mut var = vec![0.0; b];
    for i in 0..t {
        for ((s, &v), m) in var.iter_mut().zip(mel.row(i)).zip(&mean) {
            *s += (v as f64 - m) * (v as f64 - m);
        }
    }
    let std = var.into_iter().map(|s| libm::sqrt(s / t as f64)).collect();
    (mean, std)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = libm::sqrt(v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n);
    (m, s)
}

fn log_sum_exp(row: &[f32]) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v as f64));
    max + libm::log(row.iter().map(|&v| libm::exp(v as f64 - max)).sum::<f64>())
}

/// Seeded Gaussian matrix orthonormalized by modified Gram-Schmidt;
/// row-major, rows orthonormal.
pub fn orthonormal(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(&mut rng)).collect();
    for i in 0..n {
        for j in 0..i {
            let dot: f64 = (0..n).map(|k| m[i * n + k] * m[j * n + k]).sum();
            for k in 0..n {
                m[i * n + k] -= dot * m[j * n + k];
            }
        }
        let norm = libm::sqrt((0..n).map(|k| m[i * n + k] * m[i * n + k]).sum());
        for k in 0..n {
            m[i * n + k] /= norm;
        }
    }
    m
}
