use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AMBA";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Named f32 tensors plus the configuration text they were trained with.
///
/// Layout (little-endian): magic `AMBA`, u32 version, u32 tensor count;
/// per tensor u16 name length, UTF-8 name, u8 rank, rank × u64 dims, raw
/// f32 data; then u32 config length and UTF-8 config text.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<CheckpointTensor>,
    pub config_text: String,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated checkpoint while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn utf8(&mut self, n: usize, what: &str) -> Result<String> {
        let at = self.pos as u64;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| Error::Format {
            offset: at,
            message: format!("{what} is not valid UTF-8"),
        })
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&u32::try_from(self.tensors.len()).map_err(|_| Error::arg("too many tensors"))?.to_le_bytes());
        for t in &self.tensors {
            let name_len = u16::try_from(t.name.len()).map_err(|_| Error::arg(format!("tensor name too long: {}", t.name)))?;
            let rank = u8::try_from(t.shape.len()).map_err(|_| Error::arg(format!("rank too high: {}", t.name)))?;
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::arg(format!("tensor {} data does not match its shape", t.name)));
            }
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(rank);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let cfg_len = u32::try_from(self.config_text.len()).map_err(|_| Error::arg("config text too long"))?;
        out.extend_from_slice(&cfg_len.to_le_bytes());
        out.extend_from_slice(self.config_text.as_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Format { offset: 0, message: "missing AMBA magic".into() });
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Unsupported(format!("checkpoint version {version}")));
        }
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = r.u16("name length")? as usize;
            let name = r.utf8(name_len, "tensor name")?;
            let rank = r.u8("rank")?;
            let mut shape = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                shape.push(r.u64("dimension")? as usize);
            }
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Format {
                offset: r.pos as u64,
                message: format!("dimensions of {name} overflow"),
            })?;
            let raw = r.take(n.checked_mul(4).unwrap_or(usize::MAX), "tensor data")?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push(CheckpointTensor { name, shape, data });
        }
        let cfg_len = r.u32("config length")? as usize;
        let config_text = r.utf8(cfg_len, "config text")?;
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos as u64,
                message: "trailing bytes after config text".into(),
            });
        }
        Ok(Self { tensors, config_text })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Appends tensors under `prefix`.
    pub fn push_named<T: Scalar>(&mut self, prefix: &str, named: &[(String, Tensor<T>)]) {
        for (name, t) in named {
            self.tensors.push(CheckpointTensor {
                name: format!("{prefix}{name}"),
                shape: t.shape().to_vec(),
                data: t.data().iter().map(|v| v.to_f64_lossy() as f32).collect(),
            });
        }
    }

    /// Compares the tensors under `prefix` with the expected names and
    /// shapes; the error lists every missing, misshapen and unexpected one.
    pub fn check_shapes(&self, prefix: &str, expected: &[(String, Vec<usize>)]) -> Result<()> {
        let have: std::collections::HashMap<&str, &[usize]> = self
            .tensors
            .iter()
            .filter_map(|t| t.name.strip_prefix(prefix).map(|n| (n, t.shape.as_slice())))
            .collect();
        let mut problems = Vec::new();
        for (name, shape) in expected {
            match have.get(name.as_str()) {
                None => problems.push(format!("{name}: missing")),
                Some(s) if s != shape => problems.push(format!("{name}: shape {s:?}, expected {shape:?}")),
                Some(_) => {}
            }
        }
        let known: std::collections::HashSet<&str> = expected.iter().map(|(n, _)| n.as_str()).collect();
        let mut extra: Vec<&str> = have.keys().filter(|n| !known.contains(*n)).copied().collect();
        extra.sort_unstable();
        problems.extend(extra.into_iter().map(|n| format!("{n}: unexpected")));
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::contract(format!("checkpoint does not match the configuration: {}", problems.join("; "))))
        }
    }

    /// Trainable tensors whose names start with `prefix`, prefix removed.
    pub fn named_params<T: Scalar>(&self, prefix: &str) -> Result<Vec<(String, Tensor<T>)>> {
        self.tensors
            .iter()
            .filter_map(|t| t.name.strip_prefix(prefix).map(|n| (n, t)))
            .map(|(n, t)| {
                let data = t.data.iter().map(|&v| T::from_f64_lossy(v as f64)).collect();
                Ok((n.to_string(), Tensor::param(data, &t.shape)?))
            })
            .collect()
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint {
            tensors: vec![],
            config_text: "[generator]\ndepth = 2\n".into(),
        };
        let a = Tensor::<f64>::param(vec![1.0, -2.5, 3.25, 0.0, 1e-3, 7.0], &[2, 3]).unwrap();
        let b = Tensor::<f64>::param(vec![0.5], &[1]).unwrap();
        c.push_named("generator.", &[("a".into(), a), ("b".into(), b)]);
        c
    }

    #[test]
    fn shape_check_lists_every_mismatch() {
        let c = Checkpoint {
            tensors: vec![
                CheckpointTensor { name: "a".into(), shape: vec![2], data: vec![0.0; 2] },
                CheckpointTensor { name: "b".into(), shape: vec![3], data: vec![0.0; 3] },
                CheckpointTensor { name: "z".into(), shape: vec![1], data: vec![0.0] },
            ],
            config_text: String::new(),
        };
        let want = vec![("a".to_string(), vec![2]), ("b".to_string(), vec![4]), ("c".to_string(), vec![1])];
        let msg = c.check_shapes("", &want).unwrap_err().to_string();
        assert!(msg.contains("b: shape [3], expected [4]") && msg.contains("c: missing") && msg.contains("z: unexpected"), "{msg}");
        assert!(!msg.contains("a:"));
        c.check_shapes("", &[("a".into(), vec![2]), ("b".into(), vec![3]), ("z".into(), vec![1])]).unwrap();
    }

    #[test]
    fn layout_is_as_documented() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"AMBA");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u16::from_le_bytes(bytes[12..14].try_into().unwrap()), 11);
        assert_eq!(&bytes[14..25], b"generator.a");
        assert_eq!(bytes[25], 2);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        sample().save(&p1).unwrap();
        Checkpoint::load(&p1).unwrap().save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn prefix_selection() {
        let named = sample().named_params::<f32>("generator.").unwrap();
        assert_eq!(named.len(), 2);
        assert_eq!(named[0].0, "a");
        assert_eq!(named[0].1.shape(), &[2, 3]);
        assert!(sample().named_params::<f32>("discriminator.").unwrap().is_empty());
    }

    #[test]
    fn malformed_inputs() {
        let bytes = sample().to_bytes().unwrap();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..30]), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&v2), Err(Error::Unsupported(_))));
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }
}
