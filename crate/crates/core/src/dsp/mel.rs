use alloc::vec::Vec;

use super::{frame_count, frame_into, HOP, LOG_FLOOR, N_FFT, N_MELS, SAMPLE_RATE, WIN};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * libm::log10(1.0 + f / 700.0)
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (libm::pow(10.0, m / 2595.0) - 1.0)
}

/// Center frequency of HTK-scale triangular filter `band` over 0–12 kHz.
pub fn mel_center_hz(band: usize, n_mels: usize) -> f64 {
    let top = hz_to_mel(SAMPLE_RATE as f64 / 2.0);
    mel_to_hz(top * (band + 1) as f64 / (n_mels + 1) as f64)
}

/// Unit-peak triangular filters on the `N_FFT/2 + 1` power bins, stored
/// sparsely as (first bin, weights).
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    bands: Vec<(usize, Vec<f32>)>,
}

impl MelFilterbank {
    pub fn n_bands(&self) -> usize {
        self.bands.len()
    }

    /// Dense weights of one band over all power bins.
    pub fn dense_row(&self, band: usize) -> Vec<f32> {
        let mut row = alloc::vec![0.0; N_FFT / 2 + 1];
        let (start, w) = &self.bands[band];
        row[*start..*start + w.len()].copy_from_slice(w);
        row
    }

    fn apply(&self, power: &[f32], out: &mut Vec<f32>) {
        for (start, w) in &self.bands {
            let e: f32 = w.iter().zip(&power[*start..]).map(|(a, b)| a * b).sum();
            out.push(libm::log((e as f64).max(LOG_FLOOR)) as f32);
        }
    }
}

pub fn mel_filterbank(n_mels: usize) -> MelFilterbank {
    let nyquist = SAMPLE_RATE as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = SAMPLE_RATE as f64 / N_FFT as f64;
    let bands = (0..n_mels)
        .map(|m| {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let weights: Vec<(usize, f32)> = (0..=N_FFT / 2)
                .filter_map(|k| {
                    let f = k as f64 * bin_hz;
                    let w = if f > lo && f <= c {
                        (f - lo) / (c - lo)
                    } else if f > c && f < hi {
                        (hi - f) / (hi - c)
                    } else {
                        0.0
                    };
                    (w > 0.0).then_some((k, w as f32))
                })
                .collect();
            let start = weights.first().map_or(0, |w| w.0);
            (start, weights.into_iter().map(|w| w.1).collect())
        })
        .collect();
    MelFilterbank { bands }
}

/// Log-Mel spectrogram `[n / HOP + 1, 80]`: periodic Hann window of 600
/// samples zero-padded to a 1024-point FFT, power spectrum, 80 HTK filters
/// over 0–12 kHz, natural log with a 1e-10 floor.
pub fn mel_spectrogram(x: &[f32]) -> Result<Tensor<f32>> {
    if x.is_empty() {
        return Err(Error::Empty("audio clip"));
    }
    let fb = mel_filterbank(N_MELS);
    let window: Vec<f32> = (0..WIN)
        .map(|n| (0.5 - 0.5 * libm::cos(2.0 * core::f64::consts::PI * n as f64 / WIN as f64)) as f32)
        .collect();
    let frames = frame_count(x.len());
    let mut data = Vec::with_capacity(frames * N_MELS);
    let mut seg = [0.0f32; WIN];
    let mut buf = [0.0f32; N_FFT];
    let mut power = [0.0f32; N_FFT / 2 + 1];
    for t in 0..frames {
        frame_into(x, t, &mut seg);
        buf.fill(0.0);
        for (b, (s, w)) in buf.iter_mut().zip(seg.iter().zip(&window)) {
            *b = s * w;
        }
        let spec = microfft::real::rfft_1024(&mut buf);
        power[0] = spec[0].re * spec[0].re;
        power[N_FFT / 2] = spec[0].im * spec[0].im;
        for k in 1..N_FFT / 2 {
            power[k] = spec[k].re * spec[k].re + spec[k].im * spec[k].im;
        }
        fb.apply(&power, &mut data);
    }
    debug_assert_eq!(HOP * 100, SAMPLE_RATE as usize);
    Tensor::new(&[frames, N_MELS], data)
}
