//! 16-bit PCM mono WAV at the laboratory sample rate.

use std::io::Cursor;
use std::path::Path;

use msms_core::dsp::SAMPLE_RATE;

use crate::error::{Error, Result};

fn spec() -> hound::WavSpec {
    hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    }
}

/// Rounds `[-1, 1]` samples to 16-bit integers; out-of-range values clip.
pub fn quantize(x: f32) -> i16 {
    (x.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16
}

pub fn encode(samples: &[f32]) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    let wav_err = |source| Error::Wav { path: "<memory>".into(), source };
    let mut w = hound::WavWriter::new(&mut buf, spec()).map_err(wav_err)?;
    for &s in samples {
        w.write_sample(quantize(s)).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)?;
    Ok(buf.into_inner())
}

pub fn write(path: &Path, samples: &[f32]) -> Result<()> {
    crate::fsutil::write_atomic(path, &encode(samples)?)
}

/// Reads a mono 16-bit file at the laboratory rate as `[-1, 1]` floats.
pub fn read(path: &Path) -> Result<Vec<f32>> {
    let wav_err = |source| Error::Wav { path: path.into(), source };
    let r = hound::WavReader::open(path).map_err(wav_err)?;
    let s = r.spec();
    if s.channels != 1 || s.bits_per_sample != 16 || s.sample_rate != SAMPLE_RATE || s.sample_format != hound::SampleFormat::Int {
        return Err(Error::format(
            path,
            format!("expected 16-bit mono PCM at {SAMPLE_RATE} Hz, got {} ch / {} bit / {} Hz", s.channels, s.bits_per_sample, s.sample_rate),
        ));
    }
    r.into_samples::<i16>()
        .map(|v| v.map(|v| (v as f32 / i16::MAX as f32).max(-1.0)).map_err(wav_err))
        .collect()
}
