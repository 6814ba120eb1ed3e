//! Binary checkpoint format.
//!
//! ```text
//! "FADV"            4 bytes magic
//! version           u32 LE
//! descriptor_len    u32 LE
//! descriptor        UTF-8, `key=value` pairs joined by ';' (first key `model`)
//! param_count       u64 LE
//! params            param_count × f64 LE
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use super::model::{ClassifierModel, ModelSpec};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FADV";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelSpec,
    pub params: Vec<f64>,
    /// Free-form training metadata (epochs, seed, normalisation, ...).
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn from_model(model: &ClassifierModel) -> Self {
        Checkpoint {
            model: model.spec().clone(),
            params: model.params().to_vec(),
            meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Option<T> {
        self.meta.get(key).and_then(|v| v.parse().ok())
    }

    pub fn epochs(&self) -> Option<usize> {
        self.meta_parse("epochs")
    }

    pub fn seed(&self) -> Option<u64> {
        self.meta_parse("seed")
    }

    pub fn to_model(&self) -> Result<ClassifierModel> {
        ClassifierModel::from_params(self.model.clone(), self.params.clone())
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))
    }

    fn descriptor(&self) -> String {
        let mut parts = vec![format!("model={}", self.model)];
        for (k, v) in &self.meta {
            parts.push(format!("{k}={v}"));
        }
        parts.join(";")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let desc = self.descriptor();
        let mut out = Vec::with_capacity(24 + desc.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
        out.extend_from_slice(desc.as_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::CorruptCheckpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::CorruptCheckpoint(format!(
                "unsupported version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let dlen = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let desc = std::str::from_utf8(r.take(dlen)?)
            .map_err(|_| Error::CorruptCheckpoint("descriptor is not UTF-8".into()))?;
        let mut model = None;
        let mut meta = BTreeMap::new();
        for part in desc.split(';') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::CorruptCheckpoint(format!("bad descriptor entry {part:?}")))?;
            if k == "model" {
                model = Some(
                    v.parse::<ModelSpec>()
                        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?,
                );
            } else {
                meta.insert(k.to_string(), v.to_string());
            }
        }
        let model = model.ok_or_else(|| Error::CorruptCheckpoint("descriptor lacks model".into()))?;
        let n = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
        let raw = r.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::CorruptCheckpoint("length overflow".into()))?,
        )?;
        if r.pos != bytes.len() {
            return Err(Error::CorruptCheckpoint("trailing bytes".into()));
        }
        let params: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let ckpt = Checkpoint { model, params, meta };
        // Validates the parameter count against the architecture.
        ckpt.to_model()?;
        Ok(ckpt)
    }

    /// Writes atomically: a temporary sibling file is renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptCheckpoint(format!("truncated at byte {} (wanted {n} more)", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn model() -> ClassifierModel {
        ClassifierModel::new(ModelSpec::small_cnn((1, 16, 16), (2, 3), 4), 8).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let m = model();
        let ck = Checkpoint::from_model(&m).with_meta("epochs", 3).with_meta("seed", 8);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fadv");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.epochs(), Some(3));
        let m2 = back.to_model().unwrap();
        let x = Tensor::from_fn(&[2, 1, 16, 16], |i| (i as f64 * 0.01).sin());
        let a = m.forward(&x).unwrap();
        let b = m2.forward(&x).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn truncation_and_tampering_are_detected() {
        let bytes = Checkpoint::from_model(&model()).to_bytes();
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(Error::CorruptCheckpoint(_))
            ));
        }
        let mut v = bytes.clone();
        v[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&v), Err(Error::CorruptCheckpoint(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut short = Checkpoint::from_model(&model());
        short.params.pop();
        assert!(Checkpoint::from_bytes(&short.to_bytes()).is_err());
    }
}
