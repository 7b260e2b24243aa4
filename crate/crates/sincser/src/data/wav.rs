//! Minimal RIFF/WAVE reader and writer for 16-bit PCM mono files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Reads a PCM16 mono WAV file, scaling samples to `[-1, 1]` by `1/32768`.
///
/// Anything that is not 16-bit integer PCM mono is rejected with a message
/// naming what was found instead.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let bytes = fs::read(path).map_err(|e| {
        Error::Wav(format!("cannot read {}: {e}", path.display()))
    })?;
    parse_wav(&bytes).map_err(|e| match e {
        Error::Wav(msg) => Error::Wav(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn parse_wav(bytes: &[u8]) -> Result<(Vec<f64>, u32)> {
    if bytes.len() < 12 {
        return Err(Error::Wav("truncated header (no RIFF chunk)".into()));
    }
    if &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Wav("not a RIFF/WAVE file".into()));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        if body_start + size > bytes.len() {
            return Err(Error::Wav(format!(
                "truncated {} chunk: declares {size} bytes past end of file",
                String::from_utf8_lossy(id)
            )));
        }
        let body = &bytes[body_start..body_start + size];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::Wav("truncated fmt chunk".into()));
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let sample_rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                fmt = Some((format, channels, sample_rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word-aligned.
        pos = body_start + size + (size & 1);
    }

    let (format, channels, sample_rate, bits) =
        fmt.ok_or_else(|| Error::Wav("missing fmt chunk".into()))?;
    if format != 1 {
        return Err(Error::Wav(format!(
            "expected PCM (format 1), found format {format}"
        )));
    }
    if bits != 16 {
        return Err(Error::Wav(format!(
            "expected 16-bit samples, found {bits}-bit"
        )));
    }
    if channels != 1 {
        return Err(Error::Wav(format!(
            "expected mono, found {channels} channels"
        )));
    }
    let data = data.ok_or_else(|| Error::Wav("missing data chunk".into()))?;
    if data.len() % 2 != 0 {
        return Err(Error::Wav("data chunk has an odd byte count".into()));
    }
    let samples = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
        .collect();
    Ok((samples, sample_rate))
}

/// Writes samples as a PCM16 mono WAV, clamping to `[-1, 1]` and rounding
/// to the nearest representable value. `read_wav` followed by `write_wav`
/// reproduces the original int16 payload exactly.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let data_size = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + samples.len() * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_size).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_size.to_le_bytes());
    for &s in samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn sine_fixture_round_trips_with_expected_peak() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tone.wav");
        // 1 second of 440 Hz with int16 amplitude 16000.
        let amplitude = 16_000.0;
        let samples: Vec<f64> = (0..16_000)
            .map(|n| amplitude / 32768.0 * (2.0 * PI * 440.0 * n as f64 / 16_000.0).sin())
            .collect();
        write_wav(&path, &samples, 16_000).unwrap();
        let (read, sr) = read_wav(&path).unwrap();
        assert_eq!(sr, 16_000);
        assert_eq!(read.len(), 16_000);
        let peak = read.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!((peak - amplitude / 32768.0).abs() < 1.0 / 32768.0);

        // Bit-identical int16 round trip.
        let path2 = dir.path().join("tone2.wav");
        write_wav(&path2, &read, 16_000).unwrap();
        let (read2, _) = read_wav(&path2).unwrap();
        assert_eq!(read, read2);
    }

    #[test]
    fn stereo_is_rejected_as_non_mono() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        // Hand-build a 2-channel header.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(36u32 + 4).to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes());
        bytes.extend_from_slice(&16_000u32.to_le_bytes());
        bytes.extend_from_slice(&64_000u32.to_le_bytes());
        bytes.extend_from_slice(&4u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 4]);
        std::fs::write(&path, bytes).unwrap();
        let err = read_wav(&path).unwrap_err().to_string();
        assert!(err.contains("expected mono"), "{err}");
    }

    #[test]
    fn float_format_is_rejected_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("float.wav");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&36u32.to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&3u16.to_le_bytes()); // IEEE float
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&16_000u32.to_le_bytes());
        bytes.extend_from_slice(&64_000u32.to_le_bytes());
        bytes.extend_from_slice(&4u16.to_le_bytes());
        bytes.extend_from_slice(&32u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let err = read_wav(&path).unwrap_err().to_string();
        assert!(err.contains("format 3"), "{err}");
    }

    #[test]
    fn truncated_and_missing_files_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.wav");
        std::fs::write(&path, b"RIFF").unwrap();
        assert!(read_wav(&path).is_err());
        assert!(read_wav(&dir.path().join("nope.wav")).is_err());
    }
}
