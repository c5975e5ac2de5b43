//! PCM16 mono 16 kHz WAV files.

use std::path::Path;

use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

const SCALE: f64 = 32768.0;

fn format_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Reads a PCM16 mono 16 kHz file; samples are `k / 32768`.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|e| format_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Format(format!(
            "{}: expected mono, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Format(format!(
            "{}: expected 16-bit PCM, found {} bits {:?}",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::Format(format!(
            "{}: expected {SAMPLE_RATE} Hz, found {} Hz",
            path.display(),
            spec.sample_rate
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| format_error(path, e))?;
    Waveform::new(samples)
}

/// Quantizes `s * 32768` with rounding and saturation.
pub fn quantize(s: f64) -> i16 {
    (s * SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| format_error(path, e))?;
    for &s in wave.samples() {
        writer.write_sample(quantize(s)).map_err(|e| format_error(path, e))?;
    }
    writer.finalize().map_err(|e| format_error(path, e))
}

/// Rounds a waveform to the values a PCM16 round trip would produce.
pub fn pcm16_exact(wave: &Waveform) -> Waveform {
    Waveform::new(wave.samples().iter().map(|&s| f64::from(quantize(s)) / SCALE).collect())
        .expect("quantized samples are finite")
}
