//! RIFF/WAVE reading and writing for 16/24-bit PCM and 32-bit float.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::AudioBuffer;

const FORMAT_PCM: u16 = 0x0001;
const FORMAT_FLOAT: u16 = 0x0003;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Sample encoding used when writing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Pcm16,
    Pcm24,
    Float32,
}

impl BitDepth {
    pub fn bits(self) -> u16 {
        match self {
            BitDepth::Pcm16 => 16,
            BitDepth::Pcm24 => 24,
            BitDepth::Float32 => 32,
        }
    }

    fn format_tag(self) -> u16 {
        match self {
            BitDepth::Float32 => FORMAT_FLOAT,
            _ => FORMAT_PCM,
        }
    }
}

impl std::str::FromStr for BitDepth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "16" => Ok(BitDepth::Pcm16),
            "24" => Ok(BitDepth::Pcm24),
            "32" | "float32" | "f32" => Ok(BitDepth::Float32),
            other => Err(Error::arg(format!("unknown bit depth {other:?}"))),
        }
    }
}

pub fn load_wav<T: Scalar>(path: impl AsRef<Path>) -> Result<AudioBuffer<T>> {
    let bytes = fs::read(path)?;
    read_wav(&bytes)
}

pub fn save_wav<T: Scalar>(
    buffer: &AudioBuffer<T>,
    path: impl AsRef<Path>,
    bit_depth: BitDepth,
) -> Result<()> {
    let bytes = write_wav(buffer, bit_depth);
    fs::write(path, bytes)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

struct Format {
    tag: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

/// Decodes an in-memory WAV file.
pub fn read_wav<T: Scalar>(bytes: &[u8]) -> Result<AudioBuffer<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "RIFF magic")? != b"RIFF" {
        return Err(Error::Format {
            offset: 0,
            message: "missing RIFF magic".into(),
        });
    }
    r.u32("RIFF size")?;
    if r.take(4, "WAVE magic")? != b"WAVE" {
        return Err(Error::Format {
            offset: 8,
            message: "missing WAVE magic".into(),
        });
    }

    let mut format: Option<Format> = None;
    let mut data: Option<(usize, &[u8])> = None;
    while r.pos + 8 <= bytes.len() {
        let chunk_start = r.pos;
        let id = r.take(4, "chunk id")?;
        let size = r.u32("chunk size")? as usize;
        let body_start = r.pos;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::Format {
                        offset: chunk_start as u64,
                        message: format!("fmt chunk too small ({size} bytes)"),
                    });
                }
                let mut tag = r.u16("format tag")?;
                let channels = r.u16("channel count")?;
                let sample_rate = r.u32("sample rate")?;
                r.u32("byte rate")?;
                r.u16("block align")?;
                let bits = r.u16("bits per sample")?;
                if tag == FORMAT_EXTENSIBLE {
                    if size < 40 {
                        return Err(Error::Format {
                            offset: chunk_start as u64,
                            message: "extensible fmt chunk shorter than 40 bytes".into(),
                        });
                    }
                    r.take(8, "extension header")?;
                    // first two bytes of the subformat GUID carry the real tag
                    tag = r.u16("subformat")?;
                }
                format = Some(Format {
                    tag,
                    channels,
                    sample_rate,
                    bits,
                });
            }
            b"data" => {
                let avail = bytes.len() - body_start;
                if size > avail {
                    return Err(Error::Format {
                        offset: chunk_start as u64,
                        message: format!("data chunk claims {size} bytes, {avail} present"),
                    });
                }
                data = Some((body_start, &bytes[body_start..body_start + size]));
            }
            _ => {}
        }
        // chunks are word aligned
        r.pos = body_start + size + (size & 1);
    }

    let fmt = format.ok_or_else(|| Error::Format {
        offset: 12,
        message: "no fmt chunk".into(),
    })?;
    let (data_offset, payload) = data.ok_or_else(|| Error::Format {
        offset: bytes.len() as u64,
        message: "no data chunk".into(),
    })?;
    if fmt.channels == 0 {
        return Err(Error::Format {
            offset: 22,
            message: "zero channels".into(),
        });
    }
    if fmt.sample_rate == 0 {
        return Err(Error::Format {
            offset: 24,
            message: "zero sample rate".into(),
        });
    }

    let decode: fn(&[u8]) -> f64 = match (fmt.tag, fmt.bits) {
        (FORMAT_PCM, 16) => |b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0,
        (FORMAT_PCM, 24) => |b| {
            let v = i32::from_le_bytes([0, b[0], b[1], b[2]]) >> 8;
            v as f64 / 8_388_608.0
        },
        (FORMAT_FLOAT, 32) => |b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
        (FORMAT_PCM, bits) | (FORMAT_FLOAT, bits) => {
            return Err(Error::Unsupported(format!(
                "codec tag 0x{:04X} with {bits} bits per sample",
                fmt.tag
            )))
        }
        (tag, _) => {
            return Err(Error::Unsupported(format!("codec tag 0x{tag:04X}")));
        }
    };

    let width = fmt.bits as usize / 8;
    let nch = fmt.channels as usize;
    let frame = width * nch;
    if payload.len() % frame != 0 {
        return Err(Error::Format {
            offset: (data_offset + payload.len() - payload.len() % frame) as u64,
            message: format!("data length {} not a multiple of frame size {frame}", payload.len()),
        });
    }
    let frames = payload.len() / frame;
    let mut channels = vec![Vec::with_capacity(frames); nch];
    for f in payload.chunks_exact(frame) {
        for (c, s) in f.chunks_exact(width).enumerate() {
            channels[c].push(T::from_f64_lossy(decode(s)));
        }
    }
    AudioBuffer::new(channels, fmt.sample_rate)
}

fn quantize(v: f64, bits: u32) -> i32 {
    let full = (1i64 << (bits - 1)) as f64;
    let v = v.clamp(-1.0, 1.0 - 1.0 / full);
    // f64::round is round-half-away-from-zero
    (v * full).round() as i32
}

/// Encodes a buffer as a WAV file image.
pub fn write_wav<T: Scalar>(buffer: &AudioBuffer<T>, bit_depth: BitDepth) -> Vec<u8> {
    let nch = buffer.num_channels();
    let width = bit_depth.bits() as usize / 8;
    let data_len = buffer.len() * nch * width;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&bit_depth.format_tag().to_le_bytes());
    out.extend_from_slice(&(nch as u16).to_le_bytes());
    out.extend_from_slice(&buffer.sample_rate().to_le_bytes());
    out.extend_from_slice(&(buffer.sample_rate() * (nch * width) as u32).to_le_bytes());
    out.extend_from_slice(&((nch * width) as u16).to_le_bytes());
    out.extend_from_slice(&bit_depth.bits().to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for i in 0..buffer.len() {
        for c in buffer.channels() {
            let v = c[i];
            match bit_depth {
                BitDepth::Pcm16 => {
                    let q = quantize(v.to_f64_lossy(), 16) as i16;
                    out.extend_from_slice(&q.to_le_bytes());
                }
                BitDepth::Pcm24 => {
                    let q = quantize(v.to_f64_lossy(), 24);
                    out.extend_from_slice(&q.to_le_bytes()[..3]);
                }
                BitDepth::Float32 => {
                    let f = v.to_f32().unwrap_or(f32::NAN);
                    out.extend_from_slice(&f.to_le_bytes());
                }
            }
        }
    }
    if data_len % 2 == 1 {
        out.push(0);
    }
    out
}
