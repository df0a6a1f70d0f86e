use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::inventory::{token_class, TokenClass, NUM_PHONEMES};
use crate::corpus::{SpeakerSpec, StyleSpec, PHONE_MS};
use crate::dsp::{self, HOP, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::model::{AcousticModel, AcousticOutput};
use crate::tensor::ParamStore;
use crate::trainer::SystemKind;

pub const HIST_MIN_HZ: f64 = 50.0;
pub const HIST_MAX_HZ: f64 = 400.0;
pub const HIST_BIN_HZ: f64 = 2.0;

/// Normalized voiced-frame pitch histogram and median.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PitchDistribution {
    /// Lower edge of the first bin.
    pub min_hz: f64,
    pub bin_hz: f64,
    /// Probability mass per bin; sums to 1 unless `empty`.
    pub density: Vec<f64>,
    pub median_hz: Option<f64>,
    pub voiced_frames: usize,
    pub empty: bool,
}

/// Distribution over the voiced frames of all `tracks`. Frames outside
/// 50-400 Hz count in the edge bins.
pub fn pitch_distribution<'a>(tracks: impl IntoIterator<Item = &'a [f32]>) -> PitchDistribution {
    let bins = libm::round((HIST_MAX_HZ - HIST_MIN_HZ) / HIST_BIN_HZ) as usize;
    let mut density = vec![0.0; bins];
    let voiced: Vec<f32> = tracks.into_iter().flat_map(|t| t.iter().copied().filter(|&p| p > 0.0)).collect();
    for &p in &voiced {
        let b = libm::floor((p as f64 - HIST_MIN_HZ) / HIST_BIN_HZ).clamp(0.0, (bins - 1) as f64) as usize;
        density[b] += 1.0;
    }
    let n = voiced.len();
    if n > 0 {
        density.iter_mut().for_each(|d| *d /= n as f64);
    } else {
        log::warn!("pitch distribution over zero voiced frames");
    }
    PitchDistribution {
        min_hz: HIST_MIN_HZ,
        bin_hz: HIST_BIN_HZ,
        density,
        median_hz: dsp::median(&voiced),
        voiced_frames: n,
        empty: n == 0,
    }
}

/// Frame pitch track from per-phone pitch and durations.
pub fn expand_pitch(pitch_hz: &[f64], durations: &[usize]) -> Result<Vec<f32>> {
    if pitch_hz.len() != durations.len() {
        return Err(Error::shape("phone pitch", &[durations.len()], &[pitch_hz.len()]));
    }
    Ok(pitch_hz
        .iter()
        .zip(durations)
        .flat_map(|(&p, &d)| core::iter::repeat_n(p as f32, d))
        .collect())
}

/// Indices of phonemes that end a phrase (followed by punctuation or the
/// end of the sentence, across word boundaries).
pub fn phrase_final_phones(tokens: &[u8]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut last: Option<usize> = None;
    for (i, &t) in tokens.iter().enumerate() {
        if (t as usize) < NUM_PHONEMES {
            last = Some(i);
        } else if token_class(t) == Some(TokenClass::Punctuation) {
            out.extend(last.take());
        }
    }
    out.extend(last);
    out
}

/// Style-relevant measurements over a set of utterances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleMeasurement {
    /// Median over voiced frames.
    pub median_pitch_hz: Option<f64>,
    /// Mean duration in frames of phonemes that are not phrase-final.
    pub mean_phone_frames: f64,
    pub utterances: usize,
}

/// One utterance for [`measure_style`]: tokens, their durations in frames and
/// a frame pitch track.
#[derive(Clone, Copy, Debug)]
pub struct ProsodySample<'a> {
    pub tokens: &'a [u8],
    pub durations: &'a [usize],
    pub frame_pitch: &'a [f32],
}

pub fn measure_style(samples: &[ProsodySample<'_>]) -> Result<StyleMeasurement> {
    if samples.is_empty() {
        return Err(Error::Empty("style samples"));
    }
    let mut total = 0usize;
    let mut count = 0usize;
    for s in samples {
        if s.tokens.len() != s.durations.len() {
            return Err(Error::shape("style durations", &[s.tokens.len()], &[s.durations.len()]));
        }
        let finals = phrase_final_phones(s.tokens);
        for (i, (&t, &d)) in s.tokens.iter().zip(s.durations).enumerate() {
            if (t as usize) < NUM_PHONEMES && !finals.contains(&i) {
                total += d;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Empty("non-final phonemes"));
    }
    let dist = pitch_distribution(samples.iter().map(|s| s.frame_pitch));
    Ok(StyleMeasurement {
        median_pitch_hz: dist.median_hz,
        mean_phone_frames: total as f64 / count as f64,
        utterances: samples.len(),
    })
}

/// Measured style against the generator's ground truth for a voice and style.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleScore {
    pub voice: u8,
    pub style: crate::corpus::Style,
    pub measured: StyleMeasurement,
    pub expected_pitch_hz: f64,
    pub expected_phone_frames: f64,
    /// `|measured - expected| / expected`; `None` without voiced frames.
    pub pitch_err: Option<f64>,
    pub rate_err: f64,
}

/// Frames of an unscaled phoneme.
pub fn base_phone_frames() -> f64 {
    PHONE_MS / (1000.0 * HOP as f64 / SAMPLE_RATE as f64)
}

pub fn score_style(measured: StyleMeasurement, speaker: &SpeakerSpec, style: &StyleSpec) -> StyleScore {
    let expected_pitch_hz = speaker.median_pitch * style.pitch_scale;
    let expected_phone_frames = base_phone_frames() * style.rate_multiplier;
    StyleScore {
        voice: speaker.id,
        style: style.style,
        pitch_err: measured.median_pitch_hz.map(|m| (m - expected_pitch_hz).abs() / expected_pitch_hz),
        rate_err: (measured.mean_phone_frames - expected_phone_frames).abs() / expected_phone_frames,
        expected_pitch_hz,
        expected_phone_frames,
        measured,
    }
}

/// Inference of `sentences` with the conditioning `system` gives `(voice,
/// style)`.
pub fn synthesize_set(
    model: &AcousticModel,
    store: &ParamStore<f32>,
    system: &SystemKind,
    speaker: &SpeakerSpec,
    style: crate::corpus::Style,
    sentences: &[Vec<u8>],
) -> Result<Vec<AcousticOutput<f32>>> {
    let cond = system.conditioning(speaker.id, style);
    sentences.iter().map(|t| model.infer(store, t, &cond)).collect()
}

/// Style transfer measured from the predicted prosody of held-out sentences.
pub fn style_transfer_score(
    model: &AcousticModel,
    store: &ParamStore<f32>,
    system: &SystemKind,
    speaker: &SpeakerSpec,
    style: crate::corpus::Style,
    sentences: &[Vec<u8>],
) -> Result<StyleScore> {
    let outs = synthesize_set(model, store, system, speaker, style, sentences)?;
    let tracks: Vec<Vec<f32>> = outs.iter().map(|o| expand_pitch(&o.pitch_hz, &o.durations)).collect::<Result<_>>()?;
    let samples: Vec<ProsodySample<'_>> = sentences
        .iter()
        .zip(&outs)
        .zip(&tracks)
        .map(|((t, o), p)| ProsodySample { tokens: t, durations: &o.durations, frame_pitch: p })
        .collect();
    Ok(score_style(measure_style(&samples)?, speaker, &StyleSpec::of(style)))
}
