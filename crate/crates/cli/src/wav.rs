//! Minimal mono 16-bit PCM WAV reading and writing.

use std::fs;
use std::path::Path;

use crate::error::{io_err, CliError, CliResult};

/// Write samples in [-1, 1] as a mono PCM16 WAV file.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> CliResult<()> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + samples.len() * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Read a mono PCM16 WAV file into samples in [-1, 1].
pub fn read_wav(path: &Path) -> CliResult<(Vec<f64>, u32)> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let fail = |m: &str| CliError::Runtime(format!("{}: {m}", path.display()));
    if bytes.len() < 44 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(fail("not a RIFF/WAVE file"));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);

    let mut pos = 12usize;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32_at(pos + 4) as usize;
        let body = pos + 8;
        if body + len > bytes.len() {
            return Err(fail("truncated chunk"));
        }
        match id {
            b"fmt " => {
                if len < 16 {
                    return Err(fail("short fmt chunk"));
                }
                format = Some((
                    u16_at(body),
                    u16_at(body + 2),
                    u32_at(body + 4),
                    u16_at(body + 14),
                ));
            }
            b"data" => {
                let (codec, channels, sample_rate, bits) =
                    format.ok_or_else(|| fail("data chunk before fmt"))?;
                if codec != 1 || channels != 1 || bits != 16 {
                    return Err(fail("only mono 16-bit PCM is supported"));
                }
                let samples = bytes[body..body + len]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / i16::MAX as f64)
                    .collect();
                return Ok((samples, sample_rate));
            }
            _ => {}
        }
        pos = body + len + (len & 1);
    }
    Err(fail("no data chunk"))
}
