use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::inventory::VOCAB_SIZE;
use crate::dsp::{N_MELS, PITCH_BINS};
use crate::error::{Error, Result};

/// Acoustic-model hyperparameters. [`Default`] is the full-size
/// configuration; [`ModelConfig::desk`] is the reduced one used for CPU runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub encoder_layers: usize,
    pub attention_heads: usize,
    pub d_model: usize,
    pub encoder_conv_kernel: usize,
    pub encoder_conv_filters: usize,
    pub decoder_blocks: usize,
    pub decoder_dilations: Vec<usize>,
    pub decoder_kernel: usize,
    pub decoder_filters: usize,
    pub predictor_kernel: usize,
    pub predictor_filters: usize,
    pub dropout: f64,
    pub ln_eps: f64,
    pub mel_bins: usize,
    pub speaker_slots: usize,
    pub style_slots: usize,
    pub pitch_bins: usize,
    pub energy_bins: usize,
    /// Whether the model has speaker/style conditioning projections.
    pub conditioned: bool,
    /// Initial pitch reference of every speaker slot.
    pub default_pitch_hz: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: VOCAB_SIZE,
            encoder_layers: 4,
            attention_heads: 2,
            d_model: 256,
            encoder_conv_kernel: 9,
            encoder_conv_filters: 1024,
            decoder_blocks: 2,
            decoder_dilations: vec![1, 2, 4, 8, 16, 32],
            decoder_kernel: 3,
            decoder_filters: 256,
            predictor_kernel: 3,
            predictor_filters: 256,
            dropout: 0.2,
            ln_eps: 1e-6,
            mel_bins: N_MELS,
            speaker_slots: 64,
            style_slots: 64,
            pitch_bins: PITCH_BINS,
            energy_bins: 256,
            conditioned: true,
            default_pitch_hz: 150.0,
        }
    }
}

impl ModelConfig {
    /// Reduced widths for single-core runs; depth, kernels, dilations and
    /// conditioning layout are unchanged.
    pub fn desk() -> Self {
        ModelConfig {
            encoder_layers: 2,
            d_model: 32,
            encoder_conv_filters: 64,
            decoder_filters: 32,
            predictor_filters: 32,
            dropout: 0.1,
            ..Self::default()
        }
    }

    /// Same configuration without conditioning projections.
    pub fn unconditioned(mut self) -> Self {
        self.conditioned = false;
        self
    }

    /// Frames of context seen by one decoder output frame.
    pub fn receptive_field(&self) -> usize {
        let per_block: usize = self.decoder_dilations.iter().map(|&r| (self.decoder_kernel - 1) * r).sum();
        1 + self.decoder_blocks * per_block
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("vocab_size", self.vocab_size),
            ("encoder_layers", self.encoder_layers),
            ("attention_heads", self.attention_heads),
            ("d_model", self.d_model),
            ("encoder_conv_kernel", self.encoder_conv_kernel),
            ("encoder_conv_filters", self.encoder_conv_filters),
            ("decoder_blocks", self.decoder_blocks),
            ("decoder_kernel", self.decoder_kernel),
            ("decoder_filters", self.decoder_filters),
            ("predictor_kernel", self.predictor_kernel),
            ("predictor_filters", self.predictor_filters),
            ("mel_bins", self.mel_bins),
            ("speaker_slots", self.speaker_slots),
            ("style_slots", self.style_slots),
            ("pitch_bins", self.pitch_bins),
            ("energy_bins", self.energy_bins),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.d_model % self.attention_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} attention heads",
                self.d_model, self.attention_heads
            )));
        }
        if self.decoder_dilations.is_empty() || self.decoder_dilations.contains(&0) {
            return Err(Error::Config("decoder dilations must be a non-empty list of positive ints".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if !(self.ln_eps > 0.0) || !(self.default_pitch_hz > 0.0) {
            return Err(Error::Config("ln_eps and default_pitch_hz must be positive".into()));
        }
        Ok(())
    }
}
