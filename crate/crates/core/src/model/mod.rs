//! Non-autoregressive acoustic model with explicit speaker and style
//! conditioning.
//!
//! Phoneme ids are embedded and encoded by a stack of feed-forward
//! Transformer blocks. A variance adaptor predicts per-phone log-duration,
//! pitch and energy; quantized pitch and energy embeddings are added to the
//! encodings, which are then repeated to frame rate and decoded to a log-Mel
//! spectrogram by stacks of dilated convolutions.
//!
//! Speaker and style enter as one-hot vectors concatenated to 128 entries and
//! projected by two dense layers, one added to the variance-adaptor input and
//! one to the decoder input. The encoder is not conditioned.

mod blocks;
mod config;

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use blocks::{DilatedDecoder, FftBlock, VariancePredictor};
pub use config::ModelConfig;

use crate::corpus::inventory::is_voiced;
use crate::corpus::ProsodyTrack;
use crate::dsp;
use crate::error::{Error, Result};
use crate::tensor::nn::{sinusoidal_positions, Linear};
use crate::tensor::{Graph, ParamId, ParamStore, Scalar, Session, Tensor, Var};

/// Offset inside the energy logarithm, `ln(rms + ENERGY_FLOOR)`.
pub const ENERGY_FLOOR: f64 = 1e-4;
/// Upper end of the log-energy quantization range.
pub const ENERGY_LOG_MAX: f64 = 0.0;

/// Speaker and style slots of one utterance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConditioningInput {
    pub speaker_index: usize,
    pub style_index: usize,
}

impl ConditioningInput {
    pub fn new(speaker_index: usize, style_index: usize) -> Self {
        ConditioningInput { speaker_index, style_index }
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.speaker_index >= cfg.speaker_slots {
            return Err(Error::OutOfRange {
                what: "speaker slot",
                index: self.speaker_index,
                capacity: cfg.speaker_slots,
            });
        }
        if self.style_index >= cfg.style_slots {
            return Err(Error::OutOfRange {
                what: "style slot",
                index: self.style_index,
                capacity: cfg.style_slots,
            });
        }
        Ok(())
    }

    /// Speaker one-hot followed by style one-hot.
    pub fn one_hot(&self, cfg: &ModelConfig) -> Result<Vec<f64>> {
        self.validate(cfg)?;
        let mut v = vec![0.0; cfg.speaker_slots + cfg.style_slots];
        v[self.speaker_index] = 1.0;
        v[cfg.speaker_slots + self.style_index] = 1.0;
        Ok(v)
    }
}

/// Frame indices that repeat phone `i` `durations[i]` times.
pub fn regulate_indices(durations: &[usize]) -> Result<Vec<usize>> {
    if durations.contains(&0) {
        return Err(Error::Input("durations must be at least 1 frame".into()));
    }
    Ok(durations.iter().enumerate().flat_map(|(i, &d)| core::iter::repeat_n(i, d)).collect())
}

/// Repeats row `i` of `x: [T_phone, d]` `durations[i]` times.
pub fn length_regulate<T: Scalar>(g: &mut Graph<T>, x: Var, durations: &[usize]) -> Result<Var> {
    let rows = g.shape(x)[0];
    if durations.len() != rows {
        return Err(Error::shape("length_regulate", g.shape(x), &[durations.len()]));
    }
    let idx = regulate_indices(durations)?;
    g.gather_rows(x, &idx)
}

/// Inference duration from a predicted log-duration: nearest integer, at least 1.
pub fn duration_from_log(log_d: f64) -> usize {
    let d = libm::round(libm::exp(log_d));
    if d.is_finite() && d >= 1.0 {
        d as usize
    } else {
        1
    }
}

/// Log-energy target of a phone with mean frame RMS `rms`.
pub fn log_energy(rms: f64) -> f64 {
    libm::log(rms.max(0.0) + ENERGY_FLOOR)
}

pub fn quantize_energy(log_e: f64, bins: usize) -> usize {
    let lo = libm::log(ENERGY_FLOOR);
    let frac = (log_e - lo) / (ENERGY_LOG_MAX - lo);
    if !(frac > 0.0) {
        return 0;
    }
    ((frac * bins as f64) as usize).min(bins - 1)
}

/// How prosody is supplied to the variance adaptor's embeddings and the
/// length regulator.
#[derive(Clone, Copy, Debug)]
pub enum Mode<'a> {
    /// Ground-truth durations, pitch and energy replace the predictions downstream.
    TeacherForced(&'a ProsodyTrack),
    Inference,
}

/// Graph handles of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// `[T_frames, mel_bins]`.
    pub mel: Var,
    /// `[T_phone, 1]` predicted log-durations.
    pub log_duration: Var,
    /// `[T_phone, 1]` predicted speaker-normalized log-pitch.
    pub pitch: Var,
    /// `[T_phone, 1]` predicted log-energy.
    pub energy: Var,
    /// Durations used by the length regulator.
    pub durations: Vec<usize>,
    /// Per-phone pitch (Hz, 0 = unvoiced) that was embedded.
    pub pitch_hz: Vec<f64>,
}

/// Plain-value result of an inference call.
#[derive(Clone, Debug, PartialEq)]
pub struct AcousticOutput<T> {
    /// `[T_frames, mel_bins]` log-Mel spectrogram.
    pub mel: Tensor<T>,
    pub log_durations: Vec<f64>,
    /// Speaker-normalized log-pitch predictions.
    pub pitch: Vec<f64>,
    /// Predicted pitch in Hz; 0 for unvoiced phones.
    pub pitch_hz: Vec<f64>,
    pub energy: Vec<f64>,
    pub durations: Vec<usize>,
}

impl<T> AcousticOutput<T> {
    pub fn frames(&self) -> usize {
        self.durations.iter().sum()
    }
}

#[derive(Clone, Debug)]
struct Conditioning {
    variance: Linear,
    decoder: Linear,
}

/// Parameter handles of the acoustic model; weights live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AcousticModel {
    pub config: ModelConfig,
    embedding: ParamId,
    encoder: Vec<FftBlock>,
    duration: VariancePredictor,
    pitch: VariancePredictor,
    energy: VariancePredictor,
    pitch_embedding: ParamId,
    energy_embedding: ParamId,
    pitch_reference: ParamId,
    conditioning: Option<Conditioning>,
    decoder: DilatedDecoder,
}

impl AcousticModel {
    /// Registers all parameters in `store` with seeded initialization.
    /// Conditioning projections start at zero.
    pub fn new<T: Scalar>(config: ModelConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = c.d_model;
        let embedding = store.add(
            "encoder.embedding",
            crate::tensor::nn::init_normal(&[c.vocab_size, d], d, &mut rng),
        );
        let encoder = (0..c.encoder_layers)
            .map(|i| FftBlock::new(store, &alloc::format!("encoder.layer{i}"), c, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let duration = VariancePredictor::new(store, "variance.duration", c, &mut rng)?;
        let pitch = VariancePredictor::new(store, "variance.pitch", c, &mut rng)?;
        let energy = VariancePredictor::new(store, "variance.energy", c, &mut rng)?;
        let pitch_embedding = store.add(
            "variance.pitch_embedding",
            crate::tensor::nn::init_normal(&[c.pitch_bins, d], d, &mut rng),
        );
        let energy_embedding = store.add(
            "variance.energy_embedding",
            crate::tensor::nn::init_normal(&[c.energy_bins, d], d, &mut rng),
        );
        let pitch_reference = store.add_buffer(
            "variance.pitch_reference",
            Tensor::full(&[c.speaker_slots], T::of(libm::log(c.default_pitch_hz))),
        );
        let conditioning = c.conditioned.then(|| {
            let width = c.speaker_slots + c.style_slots;
            Conditioning {
                variance: Linear::zeros(store, "cond.variance", width, d),
                decoder: Linear::zeros(store, "cond.decoder", width, d),
            }
        });
        let decoder = DilatedDecoder::new(store, "decoder", c, &mut rng)?;
        Ok(AcousticModel {
            config,
            embedding,
            encoder,
            duration,
            pitch,
            energy,
            pitch_embedding,
            energy_embedding,
            pitch_reference,
            conditioning,
            decoder,
        })
    }

    pub fn is_conditioned(&self) -> bool {
        self.conditioning.is_some()
    }

    /// Sets the log-pitch reference (Hz) of a speaker slot.
    pub fn set_pitch_reference<T: Scalar>(&self, store: &mut ParamStore<T>, slot: usize, hz: f64) -> Result<()> {
        if slot >= self.config.speaker_slots || !(hz > 0.0) {
            return Err(Error::Input(alloc::format!("pitch reference {hz} Hz for slot {slot}")));
        }
        store.get_mut(self.pitch_reference).data_mut()[slot] = T::of(libm::log(hz));
        Ok(())
    }

    pub fn pitch_reference_hz<T: Scalar>(&self, store: &ParamStore<T>, slot: usize) -> f64 {
        libm::exp(store.get(self.pitch_reference).data()[slot].f64())
    }

    /// Sets the per-bin output normalization of the decoder.
    pub fn set_mel_statistics<T: Scalar>(&self, store: &mut ParamStore<T>, mean: &[f64], std: &[f64]) -> Result<()> {
        self.decoder.set_statistics(store, mean, std)
    }

    /// Speaker-normalized log-pitch of a voiced phone.
    pub fn normalized_pitch<T: Scalar>(&self, store: &ParamStore<T>, slot: usize, hz: f64) -> f64 {
        libm::log(hz) - store.get(self.pitch_reference).data()[slot].f64()
    }

    fn check_tokens(&self, tokens: &[u8]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Empty("phoneme sequence"));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::OutOfRange {
                what: "phoneme id",
                index: t as usize,
                capacity: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Phoneme embeddings plus positions through the FFT blocks: `[T_phone, d]`.
    pub fn encode<T: Scalar>(&self, sess: &mut Session<'_, T>, tokens: &[u8]) -> Result<Var> {
        self.check_tokens(tokens)?;
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let table = sess.param(self.embedding);
        let emb = sess.graph.gather_rows(table, &ids)?;
        let pos = sess.graph.constant(sinusoidal_positions(tokens.len(), self.config.d_model));
        let mut x = sess.graph.add(emb, pos)?;
        for block in &self.encoder {
            x = block.forward(sess, x)?;
        }
        Ok(x)
    }

    /// Additive conditioning row `[1, d]` for the chosen consumer, or `None`
    /// for unconditioned models.
    fn condition_row<T: Scalar>(
        &self,
        sess: &mut Session<'_, T>,
        cond: &ConditioningInput,
        decoder: bool,
    ) -> Result<Option<Var>> {
        let Some(c) = &self.conditioning else { return Ok(None) };
        let one_hot = cond.one_hot(&self.config)?;
        let width = one_hot.len();
        let data = one_hot.into_iter().map(T::of).collect();
        let x = sess.graph.constant(Tensor::new(&[1, width], data)?);
        let layer = if decoder { &c.decoder } else { &c.variance };
        layer.forward(sess, x).map(Some)
    }

    /// Conditioning embedding tiled over `t` rows, `[t, d]`. Zero for
    /// unconditioned models.
    pub fn condition_embedding<T: Scalar>(
        &self,
        sess: &mut Session<'_, T>,
        cond: &ConditioningInput,
        t: usize,
        decoder: bool,
    ) -> Result<Var> {
        cond.validate(&self.config)?;
        match self.condition_row(sess, cond, decoder)? {
            Some(row) => sess.graph.gather_rows(row, &vec![0; t]),
            None => Ok(sess.graph.constant(Tensor::zeros(&[t, self.config.d_model]))),
        }
    }

    fn add_condition<T: Scalar>(
        &self,
        sess: &mut Session<'_, T>,
        x: Var,
        cond: &ConditioningInput,
        decoder: bool,
    ) -> Result<Var> {
        cond.validate(&self.config)?;
        match self.condition_row(sess, cond, decoder)? {
            Some(row) => {
                let d = self.config.d_model;
                let row = sess.graph.reshape(row, &[d])?;
                sess.graph.add_row(x, row)
            }
            None => Ok(x),
        }
    }

    /// Full composition encode, variance adaptor, length regulator, decoder.
    pub fn forward<T: Scalar>(
        &self,
        sess: &mut Session<'_, T>,
        tokens: &[u8],
        cond: &ConditioningInput,
        mode: Mode<'_>,
    ) -> Result<ForwardPass> {
        cond.validate(&self.config)?;
        if let Mode::TeacherForced(track) = mode {
            track.validate()?;
            if track.len() != tokens.len() {
                return Err(Error::shape("teacher-forced prosody", &[tokens.len()], &[track.len()]));
            }
        }
        let enc = self.encode(sess, tokens)?;
        let h = self.add_condition(sess, enc, cond, false)?;
        let log_duration = self.duration.forward(sess, h)?;
        let pitch = self.pitch.forward(sess, h)?;
        let energy = self.energy.forward(sess, h)?;

        let (durations, pitch_hz, log_e): (Vec<usize>, Vec<f64>, Vec<f64>) = match mode {
            Mode::TeacherForced(track) => (
                track.durations.clone(),
                track.pitch.iter().map(|&p| p as f64).collect(),
                track.energy.iter().map(|&e| log_energy(e as f64)).collect(),
            ),
            Mode::Inference => {
                let reference = sess.store().get(self.pitch_reference).data()[cond.speaker_index].f64();
                let ld = sess.graph.value(log_duration).data();
                let pv = sess.graph.value(pitch).data();
                let ev = sess.graph.value(energy).data();
                (
                    ld.iter().map(|v| duration_from_log(v.f64())).collect(),
                    tokens
                        .iter()
                        .zip(pv)
                        .map(|(&t, p)| if is_voiced(t) { libm::exp(reference + p.f64()) } else { 0.0 })
                        .collect(),
                    ev.iter().map(|v| v.f64()).collect(),
                )
            }
        };
        let pitch_bins: Vec<usize> = pitch_hz.iter().map(|&hz| dsp::quantize_pitch(hz, self.config.pitch_bins)).collect();
        let energy_bins: Vec<usize> = log_e.iter().map(|&e| quantize_energy(e, self.config.energy_bins)).collect();
        let pt = sess.param(self.pitch_embedding);
        let pe = sess.graph.gather_rows(pt, &pitch_bins)?;
        let et = sess.param(self.energy_embedding);
        let ee = sess.graph.gather_rows(et, &energy_bins)?;
        let x = sess.graph.add(h, pe)?;
        let x = sess.graph.add(x, ee)?;

        let up = length_regulate(&mut sess.graph, x, &durations)?;
        let up = self.add_condition(sess, up, cond, true)?;
        let mel = self.decoder.forward(sess, up)?;
        Ok(ForwardPass {
            mel,
            log_duration,
            pitch,
            energy,
            durations,
            pitch_hz,
        })
    }

    /// Inference with dropout off.
    pub fn infer<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        tokens: &[u8],
        cond: &ConditioningInput,
    ) -> Result<AcousticOutput<T>> {
        self.run(store, tokens, cond, Mode::Inference)
    }

    /// Deterministic forward pass returning plain values.
    pub fn run<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        tokens: &[u8],
        cond: &ConditioningInput,
        mode: Mode<'_>,
    ) -> Result<AcousticOutput<T>> {
        let mut sess = Session::inference(store);
        let f = self.forward(&mut sess, tokens, cond, mode)?;
        let col = |v: Var| sess.graph.value(v).data().iter().map(|x| x.f64()).collect::<Vec<_>>();
        let pitch = col(f.pitch);
        Ok(AcousticOutput {
            mel: sess.graph.value(f.mel).clone(),
            log_durations: col(f.log_duration),
            energy: col(f.energy),
            pitch,
            pitch_hz: f.pitch_hz,
            durations: f.durations,
        })
    }
}
