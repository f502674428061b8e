//! Minimal RIFF/WAVE reader and writer: PCM16, PCM24 and float32.
//! Multi-channel input is reduced to its first channel.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, rate: u32) -> Result<Self> {
        if rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(AudioBuffer { samples, rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.rate as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Pcm16,
    Pcm24,
    Float32,
}

impl Encoding {
    fn bits(self) -> u16 {
        match self {
            Encoding::Pcm16 => 16,
            Encoding::Pcm24 => 24,
            Encoding::Float32 => 32,
        }
    }
}

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

fn parse(bytes: &[u8]) -> std::result::Result<AudioBuffer, String> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err("not a RIFF/WAVE file".into());
    }
    let mut fmt: Option<(Encoding, u16, u32)> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = body.checked_add(size).ok_or("chunk size overflow")?;
        if end > bytes.len() {
            return Err(format!(
                "truncated `{}` chunk: declares {size} bytes, {} available",
                String::from_utf8_lossy(id),
                bytes.len() - body
            ));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err("fmt chunk too short".into());
                }
                let mut tag = u16_at(bytes, body);
                let channels = u16_at(bytes, body + 2);
                let rate = u32_at(bytes, body + 4);
                let bits = u16_at(bytes, body + 14);
                if tag == FORMAT_EXTENSIBLE {
                    if size < 40 {
                        return Err("extensible fmt chunk too short".into());
                    }
                    tag = u16_at(bytes, body + 24);
                }
                let enc = match (tag, bits) {
                    (FORMAT_PCM, 16) => Encoding::Pcm16,
                    (FORMAT_PCM, 24) => Encoding::Pcm24,
                    (FORMAT_FLOAT, 32) => Encoding::Float32,
                    _ => return Err(format!("unsupported codec: format tag {tag}, {bits} bits")),
                };
                if channels == 0 || rate == 0 {
                    return Err("zero channels or sample rate".into());
                }
                fmt = Some((enc, channels, rate));
            }
            b"data" => {
                let (enc, channels, rate) = fmt.ok_or("data chunk before fmt chunk")?;
                let width = enc.bits() as usize / 8;
                let frame = width * channels as usize;
                let data = &bytes[body..end];
                if !data.len().is_multiple_of(frame) {
                    return Err("data chunk is not a whole number of frames".into());
                }
                let samples = data
                    .chunks_exact(frame)
                    .map(|f| match enc {
                        Encoding::Pcm16 => i16::from_le_bytes([f[0], f[1]]) as f64 / 32768.0,
                        Encoding::Pcm24 => {
                            let v = i32::from_le_bytes([0, f[0], f[1], f[2]]) >> 8;
                            v as f64 / 8_388_608.0
                        }
                        Encoding::Float32 => f32::from_le_bytes([f[0], f[1], f[2], f[3]]) as f64,
                    })
                    .collect::<Vec<_>>();
                if samples.iter().any(|v| !v.is_finite()) {
                    return Err("non-finite sample".into());
                }
                return Ok(AudioBuffer { samples, rate });
            }
            _ => {}
        }
        pos = end + (size & 1);
    }
    Err(if fmt.is_some() { "missing data chunk" } else { "missing fmt chunk" }.into())
}

pub fn read_wav_bytes(bytes: &[u8]) -> Result<AudioBuffer> {
    parse(bytes).map_err(|msg| Error::data("<memory>", msg))
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes).map_err(|msg| Error::data(path, msg))
}

pub fn write_wav_bytes(audio: &AudioBuffer, encoding: Encoding) -> Vec<u8> {
    let width = encoding.bits() as usize / 8;
    let data_len = audio.samples.len() * width;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    let tag = if encoding == Encoding::Float32 { FORMAT_FLOAT } else { FORMAT_PCM };
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&audio.rate.to_le_bytes());
    out.extend_from_slice(&(audio.rate * width as u32).to_le_bytes());
    out.extend_from_slice(&(width as u16).to_le_bytes());
    out.extend_from_slice(&encoding.bits().to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &v in &audio.samples {
        match encoding {
            Encoding::Pcm16 => {
                let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
            Encoding::Pcm24 => {
                let q = (v * 8_388_608.0).round().clamp(-8_388_608.0, 8_388_607.0) as i32;
                out.extend_from_slice(&q.to_le_bytes()[..3]);
            }
            Encoding::Float32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer, encoding: Encoding) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_wav_bytes(audio, encoding)).map_err(|e| Error::io(path, e))
}
