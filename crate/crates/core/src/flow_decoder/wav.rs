//! 16-bit mono PCM WAV export for listening to decoded tracks.

use std::path::Path;

use crate::error::{Error, Result};

/// Samples are clipped to `[-1, 1]` before quantization.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec { channels: 1, sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let io = |e: hound::Error| Error::InvalidArgument(format!("wav write: {e}"));
    let mut w = hound::WavWriter::create(path, spec).map_err(io)?;
    for &s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16).map_err(io)?;
    }
    w.finalize().map_err(io)
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<(Vec<f32>, u32)> {
    let io = |e: hound::Error| Error::InvalidArgument(format!("wav read: {e}"));
    let mut r = hound::WavReader::open(path).map_err(io)?;
    let sr = r.spec().sample_rate;
    let samples = r.samples::<i16>().map(|s| s.map(|v| v as f32 / i16::MAX as f32)).collect::<std::result::Result<_, _>>().map_err(io)?;
    Ok((samples, sr))
}
