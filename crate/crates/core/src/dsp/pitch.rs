use alloc::vec::Vec;

use super::{frame_count, reflect, HOP, PITCH_MAX_HZ, PITCH_MIN_HZ, SAMPLE_RATE, WIN};

/// Normalized-autocorrelation pitch tracker settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PitchConfig {
    pub min_hz: f64,
    pub max_hz: f64,
    /// Frames whose best normalized correlation is below this are unvoiced.
    pub voicing_threshold: f64,
    /// The shortest-lag peak within this fraction of the best peak wins,
    /// which suppresses octave-down errors.
    pub octave_ratio: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        PitchConfig {
            min_hz: PITCH_MIN_HZ,
            max_hz: PITCH_MAX_HZ,
            voicing_threshold: 0.3,
            octave_ratio: 0.85,
        }
    }
}

/// Per-frame f0 in Hz on the shared frame grid; 0 marks unvoiced frames.
pub fn extract_pitch(x: &[f32], cfg: &PitchConfig) -> Vec<f32> {
    if x.is_empty() {
        return Vec::new();
    }
    let sr = SAMPLE_RATE as f64;
    let lag_min = libm::floor(sr / cfg.max_hz) as usize;
    let lag_max = libm::ceil(sr / cfg.min_hz) as usize;
    // One extra lag on each side so that edge peaks can be interpolated.
    let (lo, hi) = (lag_min - 1, lag_max + 1);
    let mut buf = alloc::vec![0.0f64; WIN + hi];
    let mut r = alloc::vec![0.0f64; hi + 1];
    (0..frame_count(x.len()))
        .map(|t| {
            let start = (t * HOP) as isize - (WIN / 2) as isize;
            for (j, b) in buf.iter_mut().enumerate() {
                *b = x[reflect(start + j as isize, x.len())] as f64;
            }
            let e0: f64 = buf[..WIN].iter().map(|v| v * v).sum();
            if e0 < 1e-12 {
                return 0.0;
            }
            let mut e_lag: f64 = buf[lo..lo + WIN].iter().map(|v| v * v).sum();
            for tau in lo..=hi {
                if tau > lo {
                    let out = buf[tau - 1];
                    let inc = buf[tau + WIN - 1];
                    e_lag += inc * inc - out * out;
                }
                let dot: f64 = buf[..WIN].iter().zip(&buf[tau..tau + WIN]).map(|(a, b)| a * b).sum();
                let denom = libm::sqrt(e0 * e_lag.max(0.0));
                r[tau] = if denom > 1e-12 { dot / denom } else { 0.0 };
            }
            let peaks: Vec<usize> = (lag_min..=lag_max)
                .filter(|&tau| r[tau] >= r[tau - 1] && r[tau] >= r[tau + 1] && r[tau] > 0.0)
                .collect();
            let Some(best) = peaks.iter().map(|&tau| r[tau]).reduce(f64::max) else {
                return 0.0;
            };
            if best < cfg.voicing_threshold {
                return 0.0;
            }
            let tau = *peaks.iter().find(|&&tau| r[tau] >= cfg.octave_ratio * best).expect("best peak qualifies");
            let (a, b, c) = (r[tau - 1], r[tau], r[tau + 1]);
            let curv = a - 2.0 * b + c;
            let delta = if curv < 0.0 { (0.5 * (a - c) / curv).clamp(-0.5, 0.5) } else { 0.0 };
            (sr / (tau as f64 + delta)).clamp(cfg.min_hz, cfg.max_hz) as f32
        })
        .collect()
}
