//! Source-filter rendering of token sequences.
//!
//! Voiced tokens are a harmonic series with a `1/k` source tilt shaped by a
//! Gaussian-formant envelope; unvoiced tokens are band-passed noise;
//! punctuation and word boundaries are silence over a faint noise floor.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::inventory::{token_class, TokenClass, COMMA, NUM_PHONEMES, PHONES};
use super::{ProsodyTrack, SpeakerSpec, StyleSpec};
use crate::dsp::{self, HOP, SAMPLE_RATE};
use crate::error::{Error, Result};

const DEAD_ZONE: f64 = 0.04;
/// Base duration of a phoneme before style scaling.
pub const PHONE_MS: f64 = 80.0;
const BOUNDARY_MS: f64 = 20.0;
const COMMA_MS: f64 = 120.0;
const STOP_MS: f64 = 150.0;
const NOISE_FLOOR: f64 = 1e-4;
const VOICED_RMS: f64 = 0.08;
const UNVOICED_RMS: f64 = 0.08;
const TOP_HZ: f64 = 11_000.0;
/// Samples over which pitch and harmonic amplitudes glide between voiced phones.
const GLIDE: usize = 240;
const RAMP: usize = 96;

/// Per-voice spectral signature derived from `timbre_seed`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Timbre {
    /// Formant frequency scale (vocal-tract length).
    pub formant_scale: f64,
    /// Exponent of the `(1 + f/1 kHz)` spectral tilt.
    pub tilt: f64,
    pub formant_gains: [f64; 3],
    pub bandwidth_scale: f64,
    /// Aspiration noise mixed into voiced sounds, relative to their RMS.
    pub breath: f64,
}

impl Timbre {
    pub fn from_seed(seed: u64) -> Timbre {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Timbre {
            formant_scale: rng.random_range(0.86..1.14),
            tilt: rng.random_range(-0.6..0.3),
            formant_gains: [rng.random_range(0.7..1.3), rng.random_range(0.5..1.5), rng.random_range(0.5..1.5)],
            bandwidth_scale: rng.random_range(0.8..1.25),
            breath: rng.random_range(0.0..0.08),
        }
    }

    fn envelope(&self, phone: usize, f: f64) -> f64 {
        let p = &PHONES[phone];
        let mut e = 0.25;
        for (i, &(fc, g)) in p.formants.iter().enumerate() {
            let fc = fc * self.formant_scale;
            let bw = (60.0 + 0.06 * fc) * self.bandwidth_scale;
            let d = (f - fc) / bw;
            e += g * self.formant_gains[i] * libm::exp(-0.5 * d * d);
        }
        e * libm::pow(1.0 + f / 1000.0, self.tilt)
    }
}

fn token_ms(id: u8) -> Result<f64> {
    Ok(match token_class(id) {
        Some(TokenClass::Vowel | TokenClass::VoicedConsonant | TokenClass::Unvoiced) => PHONE_MS,
        Some(TokenClass::WordBoundary) => BOUNDARY_MS,
        Some(TokenClass::Punctuation) if id == COMMA => COMMA_MS,
        Some(TokenClass::Punctuation) => STOP_MS,
        None => return Err(Error::OutOfRange { what: "token", index: id as usize, capacity: super::inventory::VOCAB_SIZE }),
    })
}

/// Frames per token: base durations scaled by the style's rate, the last
/// phoneme of every phrase lengthened, then converted to 10 ms frames by
/// rounding cumulative boundaries so that no rounding error accumulates.
pub fn phone_durations(tokens: &[u8], style: &StyleSpec) -> Result<Vec<usize>> {
    if tokens.is_empty() {
        return Err(Error::Empty("token sequence"));
    }
    let mut ms: Vec<f64> = tokens
        .iter()
        .map(|&t| token_ms(t).map(|m| m * style.rate_multiplier))
        .collect::<Result<_>>()?;
    let mut last_phone: Option<usize> = None;
    for (i, &t) in tokens.iter().enumerate() {
        if (t as usize) < NUM_PHONEMES {
            last_phone = Some(i);
        } else if token_class(t) == Some(TokenClass::Punctuation) {
            if let Some(j) = last_phone.take() {
                ms[j] *= style.final_lengthening;
            }
        }
    }
    if let Some(j) = last_phone {
        ms[j] *= style.final_lengthening;
    }
    let frame_ms = 1000.0 * HOP as f64 / SAMPLE_RATE as f64;
    let mut cum = 0.0;
    let mut prev = 0usize;
    let mut out = Vec::with_capacity(tokens.len());
    for m in ms {
        cum += m;
        let b = libm::round(cum / frame_ms) as usize;
        let d = b.saturating_sub(prev).max(1);
        out.push(d);
        prev += d;
    }
    Ok(out)
}

/// Audio plus the exact prosody it was rendered from.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    /// Samples on the 16-bit PCM grid, so that a WAV round trip is lossless.
    pub audio: Vec<f32>,
    pub prosody: ProsodyTrack,
}

/// Deterministic rendering of `tokens` by `speaker` in `style`.
///
/// The clip has `sum(durations) * 240 - 1` samples, which makes its analysis
/// frame count equal to the duration sum.
pub fn render_utterance(tokens: &[u8], speaker: &SpeakerSpec, style: &StyleSpec, seed: u64) -> Result<Rendered> {
    style.validate()?;
    let durations = phone_durations(tokens, style)?;
    let frames: usize = durations.iter().sum();
    let n = frames * HOP - 1;
    let timbre = Timbre::from_seed(speaker.timbre_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = SAMPLE_RATE as f64;

    // Pitch contour: declination across the utterance, a per-word accent and
    // a per-phone jitter, in log-Hz. Re-centered on its frame-weighted median
    // so every utterance sits on the styled speaker median.
    let accent = Normal::new(0.0, 0.04).expect("valid normal");
    let jitter = Normal::new(0.0, 0.02).expect("valid normal");
    let mut word_accent = accent.sample(&mut rng);
    let mut contour = Vec::with_capacity(tokens.len());
    let mut start_frame = 0usize;
    for (&t, &d) in tokens.iter().zip(&durations) {
        if token_class(t) == Some(TokenClass::WordBoundary) {
            word_accent = accent.sample(&mut rng);
        }
        let j = jitter.sample(&mut rng);
        let center = (start_frame as f64 + d as f64 / 2.0) / frames as f64;
        start_frame += d;
        contour.push(super::inventory::is_voiced(t).then(|| 0.05 * (1.0 - 2.0 * center) + word_accent + j));
    }
    let weighted: Vec<f32> = contour
        .iter()
        .zip(&durations)
        .filter_map(|(c, &d)| c.map(|c| core::iter::repeat_n(c as f32, d)))
        .flatten()
        .collect();
    let offset = dsp::median(&weighted).unwrap_or(0.0);
    let pitch: Vec<f32> = contour
        .iter()
        .map(|c| match c {
            Some(c) => {
                // Dead zone around the median keeps a block of frames on it.
                let d = c - offset;
                let d = d.signum() * (d.abs() - DEAD_ZONE).max(0.0);
                let hz = speaker.median_pitch * style.pitch_scale * libm::exp(style.pitch_range_scale * d);
                hz.clamp(55.0, 390.0) as f32
            }
            None => 0.0,
        })
        .collect();

    let gain_jitter = Normal::new(0.0, 0.1).expect("valid normal");
    let mut audio = alloc::vec![0.0f64; n];
    let mut phase = 0.0f64;
    let mut prev: Option<(f64, Vec<f64>)> = None;
    let mut frame0 = 0usize;
    for (i, (&t, &d)) in tokens.iter().zip(&durations).enumerate() {
        let s0 = (frame0 * HOP).saturating_sub(HOP / 2);
        frame0 += d;
        let s1 = if i + 1 == tokens.len() { n } else { (frame0 * HOP - HOP / 2).min(n) };
        let seg = &mut audio[s0..s1];
        let g = libm::exp(gain_jitter.sample(&mut rng));
        match token_class(t) {
            Some(TokenClass::Vowel | TokenClass::VoicedConsonant) => {
                let p = &PHONES[t as usize];
                let f0 = pitch[i] as f64;
                let k_max = (TOP_HZ / f0) as usize;
                let mut amps: Vec<f64> = (1..=k_max).map(|k| timbre.envelope(t as usize, k as f64 * f0) / k as f64).collect();
                let norm = libm::sqrt(amps.iter().map(|a| a * a).sum::<f64>() / 2.0);
                let target = VOICED_RMS * p.gain * g;
                amps.iter_mut().for_each(|a| *a *= target / norm);
                let breath = Normal::new(0.0, timbre.breath * target).expect("valid normal");
                let (f_from, a_from) = match prev.take() {
                    Some(pv) => (pv.0, pv.1),
                    None => (f0, alloc::vec![0.0; 0]),
                };
                let glide = if a_from.is_empty() { 0 } else { GLIDE.min(seg.len()) };
                let kk = k_max.max(a_from.len());
                for (j, out) in seg.iter_mut().enumerate() {
                    let (f, w) = if j < glide {
                        let w = (j + 1) as f64 / glide as f64;
                        (f_from + (f0 - f_from) * w, w)
                    } else {
                        (f0, 1.0)
                    };
                    phase += f / sr;
                    if phase >= 1.0 {
                        phase -= 1.0;
                    }
                    let th = 2.0 * core::f64::consts::PI * phase;
                    let (s1v, c1) = (libm::sin(th), libm::cos(th));
                    let (mut sk_prev, mut sk) = (0.0f64, s1v);
                    let mut acc = 0.0;
                    let top = if j < glide { kk } else { k_max };
                    for k in 0..top {
                        if (k + 1) as f64 * f > TOP_HZ + 500.0 {
                            break;
                        }
                        let a = if j < glide {
                            let a1 = amps.get(k).copied().unwrap_or(0.0);
                            let a0 = a_from.get(k).copied().unwrap_or(0.0);
                            a0 + (a1 - a0) * w
                        } else {
                            amps[k]
                        };
                        acc += a * sk;
                        let next = 2.0 * c1 * sk - sk_prev;
                        sk_prev = sk;
                        sk = next;
                    }
                    let fade_in = if a_from.is_empty() { ((j + 1) as f64 / RAMP as f64).min(1.0) } else { 1.0 };
                    *out += acc * fade_in + breath.sample(&mut rng);
                }
                let next_voiced = tokens.get(i + 1).is_some_and(|&nt| super::inventory::is_voiced(nt));
                if next_voiced {
                    prev = Some((f0, amps));
                } else {
                    let len = seg.len();
                    for (j, out) in seg.iter_mut().rev().take(RAMP.min(len)).enumerate() {
                        *out *= j as f64 / RAMP as f64;
                    }
                }
            }
            Some(TokenClass::Unvoiced) => {
                prev = None;
                let p = &PHONES[t as usize];
                let (fc, width) = p.formants[0];
                let fc = (fc * timbre.formant_scale).min(0.45 * sr);
                let q = (fc / width).max(0.3);
                let noise: Vec<f64> = (0..seg.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
                let filtered = bandpass(&noise, fc, q, sr);
                let rms = libm::sqrt(filtered.iter().map(|v| v * v).sum::<f64>() / filtered.len().max(1) as f64);
                let scale = if rms > 0.0 { UNVOICED_RMS * p.gain * g / rms } else { 0.0 };
                let len = seg.len();
                for (j, (out, v)) in seg.iter_mut().zip(&filtered).enumerate() {
                    let ramp = ((j + 1).min(len - j) as f64 / RAMP as f64).min(1.0);
                    *out += v * scale * ramp;
                }
            }
            _ => prev = None,
        }
    }
    let floor = Normal::new(0.0, NOISE_FLOOR).expect("valid normal");
    let mut clipped = 0usize;
    let audio: Vec<f32> = audio
        .into_iter()
        .map(|v| {
            let v = v + floor.sample(&mut rng);
            if v.abs() > 0.999 {
                clipped += 1;
            }
            (libm::round(v.clamp(-0.999, 0.999) * 32767.0) / 32767.0) as f32
        })
        .collect();
    if clipped > 0 {
        log::warn!("{clipped} samples clipped while rendering voice {}", speaker.id);
    }
    let emph = dsp::pre_emphasis(&audio, dsp::PRE_EMPHASIS)?;
    let energy = dsp::phone_average(&dsp::frame_energy(&emph)?, &durations)?;
    Ok(Rendered {
        audio,
        prosody: ProsodyTrack { durations, pitch, energy },
    })
}

/// RBJ band-pass biquad with 0 dB peak gain.
fn bandpass(x: &[f64], fc: f64, q: f64, sr: f64) -> Vec<f64> {
    let w0 = 2.0 * core::f64::consts::PI * fc / sr;
    let alpha = libm::sin(w0) / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let (a1, a2) = (-2.0 * libm::cos(w0) / a0, (1.0 - alpha) / a0);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    x.iter()
        .map(|&v| {
            let y = b0 * v + b2 * x2 - a1 * y1 - a2 * y2;
            x2 = x1;
            x1 = v;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}
