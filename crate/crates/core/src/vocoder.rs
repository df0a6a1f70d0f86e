//! Autoregressive sample-level vocoder.
//!
//! A single GRU layer reads the previous 8-bit µ-law code and the Mel frame
//! the current sample belongs to; two dense layers turn its state into 256
//! class logits. Training uses teacher forcing on pre-emphasized audio with
//! truncated back-propagation over short random segments.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, HOP, MU_LAW_ZERO, N_MELS, PRE_EMPHASIS};
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamState, LrSchedule};
use crate::tensor::kernels::gemm_nn;
use crate::tensor::nn::{init_normal, Linear};
use crate::tensor::{Grads, ParamId, ParamStore, Scalar, Session, Tensor, Var};

pub const CLASSES: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocoderConfig {
    pub rnn_hidden: usize,
    /// Width of the previous-code embedding.
    pub embed_dim: usize,
    /// Width of the projected Mel conditioning.
    pub cond_dim: usize,
    pub fc_hidden: usize,
    pub classes: usize,
    pub mel_bins: usize,
}

impl Default for VocoderConfig {
    fn default() -> Self {
        VocoderConfig {
            rnn_hidden: 96,
            embed_dim: 32,
            cond_dim: 32,
            fc_hidden: 256,
            classes: CLASSES,
            mel_bins: N_MELS,
        }
    }
}

impl VocoderConfig {
    /// Full-size recurrent layer.
    pub fn full_size() -> Self {
        VocoderConfig { rnn_hidden: 512, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes != CLASSES {
            return Err(Error::Config(format!("vocoder needs {CLASSES} classes, got {}", self.classes)));
        }
        if [self.rnn_hidden, self.embed_dim, self.cond_dim, self.fc_hidden, self.mel_bins].contains(&0) {
            return Err(Error::Config("vocoder extents must be positive".into()));
        }
        Ok(())
    }
}

/// Recurrent state carried between [`Vocoder::step`] calls.
#[derive(Clone, Debug, PartialEq)]
pub struct VocoderState<T> {
    pub hidden: Vec<T>,
}

/// Parameter handles of one speaker's vocoder.
#[derive(Clone, Debug)]
pub struct Vocoder {
    pub config: VocoderConfig,
    pub prefix: String,
    embedding: ParamId,
    cond: Linear,
    gru_input: Linear,
    gru_hidden: Linear,
    fc1: Linear,
    fc2: Linear,
    mel_mean: ParamId,
    mel_std: ParamId,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Pre-emphasized, µ-law encoded training targets of a waveform.
pub fn encode_waveform(audio: &[f32]) -> Result<Vec<u8>> {
    Ok(dsp::pre_emphasis(audio, PRE_EMPHASIS)?
        .into_iter()
        .map(|v| dsp::mu_law_encode(v.clamp(-1.0, 1.0)))
        .collect())
}

/// Categorical draw from `softmax(logits / temperature)`; argmax at temperature 0.
pub fn sample<T: Scalar, R: Rng + ?Sized>(logits: &[T], temperature: f64, rng: &mut R) -> Result<usize> {
    if logits.is_empty() {
        return Err(Error::Empty("logits"));
    }
    if !(temperature >= 0.0) {
        return Err(Error::Config(format!("temperature must be non-negative, got {temperature}")));
    }
    let max = logits.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
    if temperature == 0.0 {
        return Ok(logits.iter().position(|v| v.f64() == max).expect("max exists"));
    }
    let w: Vec<f64> = logits.iter().map(|v| libm::exp((v.f64() - max) / temperature)).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &p) in w.iter().enumerate() {
        if u < p {
            return Ok(i);
        }
        u -= p;
    }
    Ok(w.iter().rposition(|&p| p > 0.0).unwrap_or(0))
}

impl Vocoder {
    /// Registers parameters under `prefix` (e.g. `vocoder.3`).
    pub fn new<T: Scalar>(config: VocoderConfig, prefix: &str, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = c.rnn_hidden;
        let embedding = store.add(&format!("{prefix}.embedding"), init_normal(&[c.classes, c.embed_dim], 1, &mut rng));
        let cond = Linear::new(store, &format!("{prefix}.cond"), c.mel_bins, c.cond_dim, &mut rng);
        let gru_input = Linear::new(store, &format!("{prefix}.gru.input"), c.embed_dim + c.cond_dim, 3 * h, &mut rng);
        let gru_hidden = Linear::new(store, &format!("{prefix}.gru.hidden"), h, 3 * h, &mut rng);
        let fc1 = Linear::new(store, &format!("{prefix}.fc1"), h, c.fc_hidden, &mut rng);
        let fc2 = Linear::new(store, &format!("{prefix}.fc2"), c.fc_hidden, c.classes, &mut rng);
        // Small output weights start training near the uniform distribution.
        for v in store.get_mut(fc2.weight).data_mut() {
            *v *= T::of(0.1);
        }
        let mel_mean = store.add_buffer(&format!("{prefix}.mel_mean"), Tensor::zeros(&[c.mel_bins]));
        let mel_std = store.add_buffer(&format!("{prefix}.mel_std"), Tensor::full(&[c.mel_bins], T::one()));
        Ok(Vocoder {
            config,
            prefix: prefix.into(),
            embedding,
            cond,
            gru_input,
            gru_hidden,
            fc1,
            fc2,
            mel_mean,
            mel_std,
        })
    }

    /// Sets every trainable weight to zero.
    pub fn zero_parameters<T: Scalar>(&self, store: &mut ParamStore<T>) {
        let ids: Vec<ParamId> = store
            .ids()
            .filter(|&id| store.is_trainable(id) && store.name(id).starts_with(&format!("{}.", self.prefix)))
            .collect();
        for id in ids {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn set_mel_statistics<T: Scalar>(&self, store: &mut ParamStore<T>, mean: &[f64], std: &[f64]) -> Result<()> {
        let n = self.config.mel_bins;
        if mean.len() != n || std.len() != n || std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Input("vocoder mel statistics must have one positive std per bin".into()));
        }
        for (d, &v) in store.get_mut(self.mel_mean).data_mut().iter_mut().zip(mean) {
            *d = T::of(v);
        }
        for (d, &v) in store.get_mut(self.mel_std).data_mut().iter_mut().zip(std) {
            *d = T::of(v);
        }
        Ok(())
    }

    fn normalize_mel<T: Scalar>(&self, store: &ParamStore<T>, mel: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.config.mel_bins;
        if mel.rank() != 2 || mel.cols() != n {
            return Err(Error::shape("vocoder mel", &[0, n], mel.shape()));
        }
        let (mean, std) = (store.get(self.mel_mean).data(), store.get(self.mel_std).data());
        let mut out = mel.clone();
        for row in out.data_mut().chunks_exact_mut(n) {
            for ((v, &m), &s) in row.iter_mut().zip(mean).zip(std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    /// Projected conditioning of each frame, `[T, cond_dim]`.
    fn frame_conditioning<T: Scalar>(&self, store: &ParamStore<T>, mel: &Tensor<T>) -> Result<Tensor<T>> {
        let norm = self.normalize_mel(store, mel)?;
        let mut sess = Session::inference(store);
        let x = sess.graph.constant(norm);
        let y = self.cond.forward(&mut sess, x)?;
        Ok(sess.graph.value(y).clone())
    }

    /// Per-sample conditioning `[T * 240, cond_dim]`: each frame's projection
    /// repeated for the 240 samples of its hop.
    pub fn upsample_conditioning<T: Scalar>(&self, store: &ParamStore<T>, mel: &Tensor<T>) -> Result<Tensor<T>> {
        let frames = self.frame_conditioning(store, mel)?;
        let c = self.config.cond_dim;
        let mut data = Vec::with_capacity(frames.rows() * HOP * c);
        for f in 0..frames.rows() {
            for _ in 0..HOP {
                data.extend_from_slice(frames.row(f));
            }
        }
        Tensor::new(&[frames.rows() * HOP, c], data)
    }

    pub fn initial_state<T: Scalar>(&self) -> VocoderState<T> {
        VocoderState { hidden: vec![T::zero(); self.config.rnn_hidden] }
    }

    /// One recurrence: logits over the next code and the new state.
    pub fn step<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        prev_code: u8,
        cond_row: &[T],
        state: &VocoderState<T>,
    ) -> Result<(Vec<T>, VocoderState<T>)> {
        let c = &self.config;
        if cond_row.len() != c.cond_dim || state.hidden.len() != c.rnn_hidden {
            return Err(Error::shape("vocoder step", &[c.cond_dim, c.rnn_hidden], &[cond_row.len(), state.hidden.len()]));
        }
        let h = c.rnn_hidden;
        let mut input = Vec::with_capacity(c.embed_dim + c.cond_dim);
        input.extend_from_slice(store.get(self.embedding).row(prev_code as usize));
        input.extend_from_slice(cond_row);
        let xi = affine(store, &self.gru_input, &input);
        let hh = affine(store, &self.gru_hidden, &state.hidden);
        let mut hidden = Vec::with_capacity(h);
        for j in 0..h {
            let z = sigmoid(xi[j].f64() + hh[j].f64());
            let r = sigmoid(xi[h + j].f64() + hh[h + j].f64());
            let n = libm::tanh(xi[2 * h + j].f64() + r * hh[2 * h + j].f64());
            hidden.push(T::of(n + z * (state.hidden[j].f64() - n)));
        }
        let mut f = affine(store, &self.fc1, &hidden);
        f.iter_mut().for_each(|v| *v = v.max(T::zero()));
        let logits = affine(store, &self.fc2, &f);
        Ok((logits, VocoderState { hidden }))
    }

    /// Autoregressive waveform for `mel`, `frames * 240` samples, starting
    /// from the µ-law zero code. Output is de-emphasized and clipped to [-1, 1].
    pub fn generate<T: Scalar>(&self, store: &ParamStore<T>, mel: &Tensor<T>, temperature: f64, seed: u64) -> Result<Vec<f32>> {
        let codes = self.generate_codes(store, mel, temperature, seed)?;
        let emph: Vec<f32> = codes.iter().map(|&c| dsp::mu_law_decode(c)).collect();
        Ok(dsp::de_emphasis(&emph, PRE_EMPHASIS)?.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect())
    }

    pub fn generate_codes<T: Scalar>(&self, store: &ParamStore<T>, mel: &Tensor<T>, temperature: f64, seed: u64) -> Result<Vec<u8>> {
        let cond = self.upsample_conditioning(store, mel)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = self.initial_state();
        let mut prev = MU_LAW_ZERO;
        let mut out = Vec::with_capacity(cond.rows());
        for i in 0..cond.rows() {
            let (logits, next) = self.step(store, prev, cond.row(i), &state)?;
            state = next;
            prev = sample(&logits, temperature, &mut rng)? as u8;
            out.push(prev);
        }
        Ok(out)
    }

    /// Mean teacher-forced negative log-likelihood (nats per sample) of
    /// `codes` given `mel`, run step by step without a graph.
    pub fn teacher_forced_nll<T: Scalar>(&self, store: &ParamStore<T>, mel: &Tensor<T>, codes: &[u8]) -> Result<f64> {
        if codes.is_empty() {
            return Err(Error::Empty("waveform"));
        }
        let cond = self.upsample_conditioning(store, mel)?;
        if codes.len() > cond.rows() {
            return Err(Error::shape("teacher-forced codes", &[cond.rows()], &[codes.len()]));
        }
        let mut state = self.initial_state();
        let mut prev = MU_LAW_ZERO;
        let mut total = 0.0;
        for (i, &c) in codes.iter().enumerate() {
            let (logits, next) = self.step(store, prev, cond.row(i), &state)?;
            state = next;
            total += nll_of(&logits, c as usize);
            prev = c;
        }
        Ok(total / codes.len() as f64)
    }

    /// Differentiable teacher-forced loss over a batch of equal-length
    /// segments. Each segment is `(mel, codes, start)`: the recurrence starts
    /// from a zero state at sample `start` with the true previous code.
    pub fn segment_loss<T: Scalar>(&self, sess: &mut Session<'_, T>, segments: &[Segment<'_, T>]) -> Result<Var> {
        let b = segments.len();
        let len = segments.first().ok_or(Error::Empty("segment batch"))?.len;
        if len == 0 || segments.iter().any(|s| s.len != len || s.start + len > s.codes.len()) {
            return Err(Error::Input("segments must share a positive length within their clips".into()));
        }
        let c = &self.config;
        let h = c.rnn_hidden;
        // Conditioning of the frames each segment touches, stacked.
        let mut frame_rows = Vec::new();
        let mut frame_base = Vec::with_capacity(b);
        for s in segments {
            let first = s.start / HOP;
            let last = (s.start + len - 1) / HOP;
            if last >= s.mel.rows() {
                return Err(Error::shape("segment mel", &[last + 1], s.mel.shape()));
            }
            frame_base.push((frame_rows.len() / c.mel_bins, first));
            for f in first..=last {
                frame_rows.extend_from_slice(s.mel.row(f));
            }
        }
        let n_frames = frame_rows.len() / c.mel_bins;
        let mel = self.normalize_mel(sess.store(), &Tensor::new(&[n_frames, c.mel_bins], frame_rows)?)?;
        let mel = sess.graph.constant(mel);
        let cond = self.cond.forward(sess, mel)?;

        // Time-major rows: row t * b + k is step t of segment k.
        let mut prev = Vec::with_capacity(len * b);
        let mut frame_idx = Vec::with_capacity(len * b);
        let mut targets = Vec::with_capacity(len * b);
        for t in 0..len {
            for (k, s) in segments.iter().enumerate() {
                let i = s.start + t;
                prev.push(if i == 0 { MU_LAW_ZERO } else { s.codes[i - 1] } as usize);
                let (base, first) = frame_base[k];
                frame_idx.push(base + i / HOP - first);
                targets.push(s.codes[i] as usize);
            }
        }
        let table = sess.param(self.embedding);
        let emb = sess.graph.gather_rows(table, &prev)?;
        let cnd = sess.graph.gather_rows(cond, &frame_idx)?;
        let x = sess.graph.concat_cols(&[emb, cnd])?;
        let xi = self.gru_input.forward(sess, x)?;

        let mut hidden = sess.graph.constant(Tensor::zeros(&[b, h]));
        let mut states = Vec::with_capacity(len);
        let rows: Vec<usize> = (0..b).collect();
        for t in 0..len {
            let idx: Vec<usize> = rows.iter().map(|&k| t * b + k).collect();
            let xt = sess.graph.gather_rows(xi, &idx)?;
            let hh = self.gru_hidden.forward(sess, hidden)?;
            let g = &mut sess.graph;
            let (xz, xr, xn) = (g.slice_cols(xt, 0, h)?, g.slice_cols(xt, h, h)?, g.slice_cols(xt, 2 * h, h)?);
            let (hz, hr, hn) = (g.slice_cols(hh, 0, h)?, g.slice_cols(hh, h, h)?, g.slice_cols(hh, 2 * h, h)?);
            let z = g.add(xz, hz)?;
            let z = g.sigmoid(z);
            let r = g.add(xr, hr)?;
            let r = g.sigmoid(r);
            let rn = g.mul(r, hn)?;
            let n = g.add(xn, rn)?;
            let n = g.tanh(n);
            let diff = g.sub(hidden, n)?;
            let zd = g.mul(z, diff)?;
            hidden = g.add(n, zd)?;
            states.push(hidden);
        }
        let hs = sess.graph.concat_rows(&states)?;
        let f = self.fc1.forward(sess, hs)?;
        let f = sess.graph.relu(f);
        let logits = self.fc2.forward(sess, f)?;
        sess.graph.cross_entropy(logits, &targets)
    }
}

/// One training segment of a clip.
#[derive(Clone, Copy, Debug)]
pub struct Segment<'a, T> {
    pub mel: &'a Tensor<T>,
    pub codes: &'a [u8],
    pub start: usize,
    pub len: usize,
}

fn affine<T: Scalar>(store: &ParamStore<T>, layer: &Linear, x: &[T]) -> Vec<T> {
    let mut y = store.get(layer.bias).data().to_vec();
    gemm_nn(1, layer.in_dim, layer.out_dim, x, store.get(layer.weight).data(), &mut y);
    y
}

fn nll_of<T: Scalar>(logits: &[T], target: usize) -> f64 {
    let max = logits.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(logits.iter().map(|v| libm::exp(v.f64() - max)).sum::<f64>());
    lse - logits[target].f64()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocoderTrainConfig {
    pub steps: usize,
    /// Segments per update.
    pub batch_size: usize,
    /// Segment length in frames (240 samples each).
    pub segment_frames: usize,
    pub peak_lr: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for VocoderTrainConfig {
    fn default() -> Self {
        VocoderTrainConfig {
            steps: 400,
            batch_size: 8,
            segment_frames: 2,
            peak_lr: 6e-3,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

/// Trained vocoder weights and the per-update training loss.
#[derive(Clone, Debug)]
pub struct TrainedVocoder {
    pub vocoder: Vocoder,
    pub store: ParamStore<f32>,
    pub losses: Vec<f64>,
}

/// Per-bin mean and standard deviation over all frames of `mels`.
pub fn mel_statistics(mels: &[Tensor<f32>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let bins = mels.first().ok_or(Error::Empty("mel list"))?.cols();
    let mut sum = vec![0.0f64; bins];
    let mut sq = vec![0.0f64; bins];
    let mut n = 0usize;
    for m in mels {
        for row in m.data().chunks_exact(bins) {
            for (j, &v) in row.iter().enumerate() {
                sum[j] += v as f64;
                sq[j] += v as f64 * v as f64;
            }
            n += 1;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| libm::sqrt((s / n as f64 - m * m).max(0.0)).max(1e-3))
        .collect();
    Ok((mean, std))
}

/// Teacher-forced training on one speaker's clips.
pub fn train_vocoder(
    clips: &[&[f32]],
    config: &VocoderConfig,
    train: &VocoderTrainConfig,
    prefix: &str,
) -> Result<TrainedVocoder> {
    if clips.is_empty() {
        return Err(Error::Empty("vocoder training clips"));
    }
    if train.steps == 0 || train.batch_size == 0 || train.segment_frames == 0 {
        return Err(Error::Config("vocoder steps, batch size and segment length must be positive".into()));
    }
    let mels = clips.iter().map(|c| dsp::mel_features(c)).collect::<Result<Vec<_>>>()?;
    let codes = clips.iter().map(|c| encode_waveform(c)).collect::<Result<Vec<_>>>()?;
    let mut store = ParamStore::<f32>::new();
    let vocoder = Vocoder::new(config.clone(), prefix, &mut store, train.seed)?;
    let (mean, std) = mel_statistics(&mels)?;
    vocoder.set_mel_statistics(&mut store, &mean, &std)?;

    let shortest = codes.iter().map(Vec::len).min().unwrap_or(0);
    let len = (train.segment_frames * HOP).min(shortest);
    if len == 0 {
        return Err(Error::Empty("vocoder training clip"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed ^ 0x5EC0_DE);
    let mut adam = AdamState::new(&store, AdamConfig { lr: train.peak_lr, ..AdamConfig::default() });
    let schedule = LrSchedule::for_run(train.peak_lr, train.steps as u64);
    let mut losses = Vec::with_capacity(train.steps);
    for step in 1..=train.steps {
        let segments: Vec<Segment<'_, f32>> = (0..train.batch_size)
            .map(|_| {
                let k = rng.random_range(0..clips.len());
                let start = rng.random_range(0..=codes[k].len() - len);
                Segment { mel: &mels[k], codes: &codes[k], start, len }
            })
            .collect();
        let mut grads = Grads::new(&store);
        let loss = {
            let mut sess = Session::new(&store, true, step as u64);
            let l = vocoder.segment_loss(&mut sess, &segments)?;
            sess.backward_into(l, &mut grads)?;
            sess.graph.value(l).data()[0] as f64
        };
        let norm = grads.global_norm();
        if norm > train.clip_norm {
            grads.scale((train.clip_norm / norm) as f32);
        }
        adam.set_lr(schedule.lr(step as u64));
        adam.step(&mut store, &grads)?;
        losses.push(loss);
        if step % 50 == 0 {
            log::debug!("vocoder {prefix} step {step}: loss {loss:.4}");
        }
    }
    Ok(TrainedVocoder { vocoder, store, losses })
}
