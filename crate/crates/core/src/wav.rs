//! Mono 16-bit PCM RIFF/WAVE reading and writing.

use std::fs;
use std::path::Path;

use crate::audio::{AudioRelation, Waveform};
use crate::error::{Error, Result};

const PCM_SCALE: f64 = 32767.0;

/// Decoded PCM content; clip metadata lives in the corpus manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct PcmAudio {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl PcmAudio {
    pub fn into_waveform(self, class_ids: Vec<usize>, relation: AudioRelation) -> Waveform {
        Waveform {
            samples: self.samples,
            sample_rate: self.sample_rate,
            class_ids,
            relation,
        }
    }
}

pub fn encode_wav(samples: &[f64], sample_rate: u32) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0) * PCM_SCALE).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

fn u16_at(bytes: &[u8], at: usize) -> Result<u16> {
    bytes
        .get(at..at + 2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .ok_or_else(|| Error::MalformedWav(format!("truncated at byte {at}")))
}

fn u32_at(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::MalformedWav(format!("truncated at byte {at}")))
}

pub fn decode_wav(bytes: &[u8]) -> Result<PcmAudio> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::MalformedWav("missing RIFF/WAVE header".into()));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    loop {
        if pos + 8 > bytes.len() {
            return Err(Error::MalformedWav("no data chunk".into()));
        }
        let id = &bytes[pos..pos + 4];
        let len = u32_at(bytes, pos + 4)? as usize;
        let body = pos + 8;
        if body + len > bytes.len() {
            return Err(Error::MalformedWav(format!(
                "chunk {:?} claims {len} bytes, only {} remain",
                String::from_utf8_lossy(id),
                bytes.len() - body
            )));
        }
        match id {
            b"fmt " => {
                if len < 16 {
                    return Err(Error::MalformedWav("fmt chunk too short".into()));
                }
                format = Some((
                    u16_at(bytes, body)?,
                    u16_at(bytes, body + 2)?,
                    u32_at(bytes, body + 4)?,
                    u16_at(bytes, body + 14)?,
                ));
            }
            b"data" => {
                let (tag, channels, sample_rate, bits) =
                    format.ok_or_else(|| Error::MalformedWav("data before fmt".into()))?;
                if tag != 1 {
                    return Err(Error::UnsupportedWav(format!("format tag {tag}")));
                }
                if channels != 1 {
                    return Err(Error::UnsupportedWav(format!("{channels} channels")));
                }
                if bits != 16 {
                    return Err(Error::UnsupportedWav(format!("{bits} bits per sample")));
                }
                if !len.is_multiple_of(2) {
                    return Err(Error::MalformedWav("odd data length".into()));
                }
                let samples = bytes[body..body + len]
                    .chunks_exact(2)
                    .map(|c| f64::from(i16::from_le_bytes([c[0], c[1]])) / PCM_SCALE)
                    .collect();
                return Ok(PcmAudio {
                    samples,
                    sample_rate,
                });
            }
            _ => {}
        }
        pos = body + len + (len & 1);
    }
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(&w.samples, w.sample_rate)).map_err(|e| Error::io(path, e))
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<PcmAudio> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}
