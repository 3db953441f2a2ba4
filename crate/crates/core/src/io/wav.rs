use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

const SCALE: f32 = 32768.0;

fn wav_err(path: &Path, reason: impl ToString) -> Error {
    Error::Wav { path: path.to_path_buf(), reason: reason.to_string() }
}

/// Reads a 16-bit PCM mono file at 16 kHz, scaled to `[-1, 1)`. Any other
/// format is rejected rather than converted.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(wav_err(path, format!("expected mono, found {} channels", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(wav_err(path, format!("expected {SAMPLE_RATE} Hz, found {} Hz", spec.sample_rate)));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(wav_err(
            path,
            format!("expected 16-bit integer PCM, found {}-bit {:?}", spec.bits_per_sample, spec.sample_format),
        ));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_err(path, e))?;
    Ok(Waveform { samples, sample_rate: SAMPLE_RATE })
}

/// Rounds to the nearest code and saturates at full scale.
pub fn to_pcm16(x: f32) -> i16 {
    if x.is_nan() {
        return 0;
    }
    (x * SCALE).round().clamp(i16::MIN as f32, i16::MAX as f32) as i16
}

pub fn write_wav(path: impl AsRef<Path>, wav: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec { channels: 1, sample_rate: wav.sample_rate, bits_per_sample: 16, sample_format: SampleFormat::Int };
    let mut w = WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in &wav.samples {
        w.write_sample(to_pcm16(s)).map_err(|e| wav_err(path, e))?;
    }
    w.finalize().map_err(|e| wav_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturates_and_rounds() {
        assert_eq!(to_pcm16(2.0), 32767);
        assert_eq!(to_pcm16(-2.0), -32768);
        assert_eq!(to_pcm16(0.5 / 32768.0 + 1e-7), 1);
        assert_eq!(to_pcm16(f32::NAN), 0);
    }

    #[test]
    fn rejects_stereo() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = WavSpec { channels: 2, sample_rate: 16000, bits_per_sample: 16, sample_format: SampleFormat::Int };
        let mut w = WavWriter::create(&p, spec).unwrap();
        for _ in 0..20 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        let err = read_wav(&p).unwrap_err().to_string();
        assert!(err.contains("mono"), "{err}");
    }
}
