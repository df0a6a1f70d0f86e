//! Audio analysis and encoding: pre-emphasis, log-Mel spectrogram, µ-law,
//! pitch and energy tracks, phone-level averaging and pitch quantization.
//!
//! Every analysis shares one frame grid: frame `t` is centered on sample
//! `t * HOP` of a reflection-padded signal, so a clip of `n` samples has
//! `n / HOP + 1` frames.

mod mel;
mod mulaw;
mod pitch;

use alloc::format;
use alloc::vec::Vec;

pub use mel::{mel_center_hz, mel_filterbank, mel_spectrogram, MelFilterbank};
pub use mulaw::{mu_law_compand, mu_law_decode, mu_law_encode, MU_LAW_ZERO};
pub use pitch::{extract_pitch, PitchConfig};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 24_000;
/// 10 ms.
pub const HOP: usize = 240;
/// 25 ms.
pub const WIN: usize = 600;
pub const N_FFT: usize = 1024;
pub const N_MELS: usize = 80;
pub const PRE_EMPHASIS: f32 = 0.97;
pub const LOG_FLOOR: f64 = 1e-10;
pub const PITCH_MIN_HZ: f64 = 50.0;
pub const PITCH_MAX_HZ: f64 = 400.0;
pub const PITCH_BINS: usize = 256;

/// Mono PCM audio with samples in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Input("sample rate must be positive".into()));
        }
        if let Some((i, v)) = samples.iter().enumerate().find(|(_, v)| !(v.abs() <= 1.0)) {
            return Err(Error::Input(format!("sample {i} = {v} is outside [-1, 1]")));
        }
        Ok(AudioClip { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }
}

/// Number of analysis frames for a signal of `len` samples.
pub fn frame_count(len: usize) -> usize {
    len / HOP + 1
}

/// Index into a signal of length `len` with mirror reflection at both ends
/// (the edge sample is not repeated).
pub(crate) fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m >= len as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Copies the `WIN`-sample window centered on frame `t` into `out`.
pub(crate) fn frame_into(x: &[f32], t: usize, out: &mut [f32]) {
    let start = (t * HOP) as isize - (WIN / 2) as isize;
    for (j, o) in out.iter_mut().enumerate() {
        *o = x[reflect(start + j as isize, x.len())];
    }
}

fn check_alpha(alpha: f32) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Config(format!("pre-emphasis alpha must be in [0,1), got {alpha}")));
    }
    Ok(())
}

/// `y[0] = x[0]`, `y[n] = x[n] - alpha * x[n-1]`.
pub fn pre_emphasis(x: &[f32], alpha: f32) -> Result<Vec<f32>> {
    check_alpha(alpha)?;
    let mut prev = 0.0f32;
    Ok(x.iter()
        .map(|&v| {
            let y = v - alpha * prev;
            prev = v;
            y
        })
        .collect())
}

/// Inverse of [`pre_emphasis`]: `x[n] = y[n] + alpha * x[n-1]`.
pub fn de_emphasis(y: &[f32], alpha: f32) -> Result<Vec<f32>> {
    check_alpha(alpha)?;
    let mut prev = 0.0f32;
    Ok(y.iter()
        .map(|&v| {
            prev = v + alpha * prev;
            prev
        })
        .collect())
}

/// Model features of a waveform: log-Mel spectrogram of the pre-emphasized signal.
pub fn mel_features(x: &[f32]) -> Result<crate::tensor::Tensor<f32>> {
    mel_spectrogram(&pre_emphasis(x, PRE_EMPHASIS)?)
}

/// Per-frame RMS over the centered `WIN`-sample window.
pub fn frame_energy(x: &[f32]) -> Result<Vec<f32>> {
    if x.is_empty() {
        return Err(Error::Empty("audio clip"));
    }
    let mut buf = [0.0f32; WIN];
    Ok((0..frame_count(x.len()))
        .map(|t| {
            frame_into(x, t, &mut buf);
            let ss: f64 = buf.iter().map(|&v| v as f64 * v as f64).sum();
            libm::sqrt(ss / WIN as f64) as f32
        })
        .collect())
}

/// Log-spaced pitch bin over `[50, 400]` Hz. Bin 0 is the unvoiced sentinel
/// (`hz <= 0`); voiced values clamp into `1..bins`.
pub fn quantize_pitch(hz: f64, bins: usize) -> usize {
    if !(hz > 0.0) || bins < 2 {
        return 0;
    }
    let voiced = (bins - 1) as f64;
    let lo = libm::log(PITCH_MIN_HZ);
    let hi = libm::log(PITCH_MAX_HZ);
    let frac = (libm::log(hz.clamp(PITCH_MIN_HZ, PITCH_MAX_HZ)) - lo) / (hi - lo);
    (1 + libm::floor(frac * voiced) as usize).min(bins - 1)
}

/// Geometric center of a voiced pitch bin, 0 for the unvoiced bin.
pub fn pitch_bin_center(bin: usize, bins: usize) -> f64 {
    if bin == 0 || bins < 2 {
        return 0.0;
    }
    let voiced = (bins - 1) as f64;
    let lo = libm::log(PITCH_MIN_HZ);
    let hi = libm::log(PITCH_MAX_HZ);
    libm::exp(lo + (bin as f64 - 0.5) / voiced * (hi - lo))
}

fn check_durations(frames: usize, durations: &[usize]) -> Result<()> {
    let total: usize = durations.iter().sum();
    if total != frames {
        return Err(Error::Input(format!(
            "phone durations sum to {total} frames but the track has {frames}"
        )));
    }
    Ok(())
}

/// Mean of each phone's frames.
pub fn phone_average(track: &[f32], durations: &[usize]) -> Result<Vec<f32>> {
    check_durations(track.len(), durations)?;
    let mut out = Vec::with_capacity(durations.len());
    let mut start = 0;
    for &d in durations {
        let seg = &track[start..start + d];
        let mean = if d == 0 { 0.0 } else { seg.iter().map(|&v| v as f64).sum::<f64>() / d as f64 };
        out.push(mean as f32);
        start += d;
    }
    Ok(out)
}

/// Mean of each phone's voiced (non-zero) frames; 0 when none is voiced.
pub fn phone_average_voiced(track: &[f32], durations: &[usize]) -> Result<Vec<f32>> {
    check_durations(track.len(), durations)?;
    let mut out = Vec::with_capacity(durations.len());
    let mut start = 0;
    for &d in durations {
        let (sum, n) = track[start..start + d]
            .iter()
            .filter(|&&v| v > 0.0)
            .fold((0.0f64, 0usize), |(s, n), &v| (s + v as f64, n + 1));
        out.push(if n == 0 { 0.0 } else { (sum / n as f64) as f32 });
        start += d;
    }
    Ok(out)
}

/// Median of a slice; `None` when empty.
pub fn median(values: &[f32]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f32> = values.to_vec();
    v.sort_by(f32::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] as f64 + v[n / 2] as f64) / 2.0
    })
}
