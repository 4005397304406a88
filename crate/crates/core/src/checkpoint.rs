//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `SPDRCKPT`, a little-endian `u32` version, a
//! little-endian `u64` manifest length, the UTF-8 manifest, then every tensor's
//! values as little-endian `f64`, back to back. Manifest lines are either
//! `meta <key> <value>` or `tensor <name> <d0>x<d1>x... <offset>` where the
//! offset counts `f64`s from the start of the data section.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SPDRCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut manifest = String::new();
        for (k, v) in &self.meta {
            if k.is_empty() || k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(bad(format!("meta entry {k:?} cannot be stored")));
            }
            manifest.push_str(&format!("meta {k} {v}\n"));
        }
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(bad(format!("tensor name {name:?} cannot be stored")));
            }
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            manifest.push_str(&format!("tensor {name} {} {offset}\n", dims.join("x")));
            offset += t.len();
        }
        let mut out = Vec::with_capacity(20 + manifest.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let data_start = 20usize
            .checked_add(mlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated manifest"))?;
        let manifest = std::str::from_utf8(&bytes[20..data_start])
            .map_err(|_| bad("manifest is not UTF-8"))?;
        let data = &bytes[data_start..];
        if !data.len().is_multiple_of(8) {
            return Err(bad("data section is not a whole number of f64 values"));
        }
        let values: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();

        let mut ck = Checkpoint::default();
        let mut expected_offset = 0usize;
        for line in manifest.lines() {
            let (kind, rest) = line
                .split_once(' ')
                .ok_or_else(|| bad(format!("bad line {line:?}")))?;
            match kind {
                "meta" => {
                    let (k, v) = rest
                        .split_once(' ')
                        .ok_or_else(|| bad(format!("bad line {line:?}")))?;
                    ck.meta.push((k.to_string(), v.to_string()));
                }
                "tensor" => {
                    let parts: Vec<&str> = rest.split(' ').collect();
                    let [name, dims, offset] = parts[..] else {
                        return Err(bad(format!("bad line {line:?}")));
                    };
                    let shape = dims
                        .split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad(format!("bad shape {dims:?}")))?;
                    let offset: usize = offset
                        .parse()
                        .map_err(|_| bad(format!("bad offset {offset:?}")))?;
                    if offset != expected_offset {
                        return Err(bad(format!(
                            "tensor {name} at offset {offset}, expected {expected_offset}"
                        )));
                    }
                    let n: usize = shape.iter().product();
                    let end = offset + n;
                    if end > values.len() {
                        return Err(bad(format!("tensor {name} runs past the data section")));
                    }
                    let t = Tensor::new(shape, values[offset..end].to_vec())
                        .map_err(|e| bad(format!("tensor {name}: {e}")))?;
                    ck.tensors.push((name.to_string(), t));
                    expected_offset = end;
                }
                other => return Err(bad(format!("unknown manifest entry {other:?}"))),
            }
        }
        if expected_offset != values.len() {
            return Err(bad("trailing data after the last tensor"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            meta: vec![
                ("variant".into(), "cls3".into()),
                ("channels".into(), "32,64,128".into()),
            ],
            tensors: vec![
                (
                    "a.weight".into(),
                    Tensor::matrix(2, 3, vec![1.0, -0.0, 2.5, 1e-300, f64::MAX, -7.0]).unwrap(),
                ),
                ("a.bias".into(), Tensor::vector(vec![0.125])),
            ],
        }
    }

    #[test]
    fn round_trip_and_layout() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(
            back.tensor("a.weight").unwrap().data()[1].to_bits(),
            (-0.0f64).to_bits()
        );
        assert_eq!(back.meta_value("channels"), Some("32,64,128"));
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong).is_err());
    }

    proptest! {
        #[test]
        fn bytes_round_trip(values in prop::collection::vec(any::<f64>(), 1..40), split in 1usize..40) {
            let split = split.min(values.len());
            let mut tensors = vec![("x".to_string(), Tensor::vector(values[..split].to_vec()))];
            if split < values.len() {
                tensors.push(("y".to_string(), Tensor::vector(values[split..].to_vec())));
            }
            let ck = Checkpoint { meta: vec![], tensors };
            let bytes = ck.to_bytes().unwrap();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }
}
