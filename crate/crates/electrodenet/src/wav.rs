//! Minimal WAV reader/writer: mono 16 kHz, PCM16 or float32. Anything
//! else is rejected at ingestion with an explicit sample-rate error.

use crate::error::{Error, Result};
use std::io::Write;
use std::path::Path;

pub const REQUIRED_RATE: u32 = 16_000;

pub fn read_wav(path: &Path) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_wav(&bytes, &path.display().to_string())
}

pub fn parse_wav(bytes: &[u8], name: &str) -> Result<Vec<f64>> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format(format!("{name}: not a RIFF/WAVE file")));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = (pos + 8 + size).min(bytes.len());
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::Format(format!("{name}: short fmt chunk")));
                }
                fmt = Some((
                    u16::from_le_bytes(body[0..2].try_into().unwrap()),
                    u16::from_le_bytes(body[2..4].try_into().unwrap()),
                    u32::from_le_bytes(body[4..8].try_into().unwrap()),
                    u16::from_le_bytes(body[14..16].try_into().unwrap()),
                ));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = pos + 8 + size + (size & 1);
    }
    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| Error::Format(format!("{name}: missing fmt chunk")))?;
    let data = data.ok_or_else(|| Error::Format(format!("{name}: missing data chunk")))?;
    if rate != REQUIRED_RATE || channels != 1 {
        return Err(Error::SampleRate {
            got: rate,
            channels,
            path: name.to_string(),
        });
    }
    match (format, bits) {
        (1, 16) => Ok(data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes(c.try_into().unwrap()) as f64 / 32768.0)
            .collect()),
        (3, 32) => Ok(data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect()),
        _ => Err(Error::Format(format!(
            "{name}: unsupported format {format}/{bits}-bit (need PCM16 or float32)"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

pub fn write_wav(path: &Path, samples: &[f64], format: WavFormat) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let bytes = encode_wav(samples, format);
    f.write_all(&bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn encode_wav(samples: &[f64], format: WavFormat) -> Vec<u8> {
    let (fmt_code, bits): (u16, u16) = match format {
        WavFormat::Pcm16 => (1, 16),
        WavFormat::Float32 => (3, 32),
    };
    let bytes_per = (bits / 8) as u32;
    let data_len = samples.len() as u32 * bytes_per;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&fmt_code.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&REQUIRED_RATE.to_le_bytes());
    out.extend_from_slice(&(REQUIRED_RATE * bytes_per).to_le_bytes());
    out.extend_from_slice(&(bytes_per as u16).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        match format {
            WavFormat::Pcm16 => {
                let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
                out.extend_from_slice(&v.to_le_bytes());
            }
            WavFormat::Float32 => out.extend_from_slice(&(s as f32).to_le_bytes()),
        }
    }
    out
}
