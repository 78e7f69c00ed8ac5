//! Named parameter storage and the binary checkpoint format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes   "STRUCHIS"
//! version  u32       1
//! endian   u8        b'L'
//! count    u64
//! count × { name_len u32, name utf-8, rows u64, cols u64, rows·cols × f64 }
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::tensor::{Mat, Real};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STRUCHIS";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {CHECKPOINT_VERSION})")]
    Version(u32),
    #[error("unsupported endianness tag {0:#x}")]
    Endianness(u8),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("parameter name is not utf-8")]
    Utf8,
    #[error("duplicate parameter path `{0}`")]
    Duplicate(String),
    #[error("checkpoint is missing parameter path(s): {}", .0.join(", "))]
    Missing(Vec<String>),
    #[error("parameter `{path}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch { path: String, expected: (usize, usize), found: (usize, usize) },
    #[error("checkpoint has parameter path(s) unknown to the model: {}", .0.join(", "))]
    Unexpected(Vec<String>),
}

/// All learnable tensors of a model, addressed by path string or [`ParamId`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F> {
    names: Vec<String>,
    values: Vec<Mat<F>>,
    index: HashMap<String, ParamId>,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat<F>) -> Result<ParamId, CheckpointError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(CheckpointError::Duplicate(name));
        }
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Mat<F> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat<F> {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Mat<F>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat<F>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Mat<F>)> {
        self.values.iter_mut().enumerate().map(|(i, v)| (ParamId(i), v))
    }

    pub fn iter_mut_named(&mut self) -> impl Iterator<Item = (ParamId, &str, &mut Mat<F>)> {
        self.names
            .iter()
            .zip(self.values.iter_mut())
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Mat::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Copies every value of `other` whose path and shape match into `self`;
    /// paths of `self` absent from `other` are reported.
    pub fn load_from<G: Real>(&mut self, other: &ParamStore<G>) -> Result<(), CheckpointError> {
        let missing: Vec<String> =
            self.names.iter().filter(|n| other.id(n).is_none()).cloned().collect();
        if !missing.is_empty() {
            return Err(CheckpointError::Missing(missing));
        }
        let unexpected: Vec<String> =
            other.names.iter().filter(|n| self.id(n).is_none()).cloned().collect();
        if !unexpected.is_empty() {
            return Err(CheckpointError::Unexpected(unexpected));
        }
        for i in 0..self.values.len() {
            let src = other.by_name(&self.names[i]).expect("checked above");
            if src.shape() != self.values[i].shape() {
                return Err(CheckpointError::ShapeMismatch {
                    path: self.names[i].clone(),
                    expected: self.values[i].shape(),
                    found: src.shape(),
                });
            }
            self.values[i] = src.cast();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(b'L');
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for (name, value) in self.names.iter().zip(&self.values) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(value.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(value.cols() as u64).to_le_bytes());
            for &x in value.data() {
                let x: f64 = num_traits::NumCast::from(x).expect("finite parameter");
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).map_err(|_| CheckpointError::BadMagic)? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let endian = r.take(1)?[0];
        if endian != b'L' {
            return Err(CheckpointError::Endianness(endian));
        }
        let count = r.u64()? as usize;
        let mut store = Self::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?).map_err(|_| CheckpointError::Utf8)?.to_owned();
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let n = rows.checked_mul(cols).ok_or(CheckpointError::Truncated(r.pos))?;
            let raw = r.take(n.checked_mul(8).ok_or(CheckpointError::Truncated(r.pos))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| {
                    let x = f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
                    <F as num_traits::NumCast>::from(x).expect("representable")
                })
                .collect();
            store.insert(name, Mat::from_vec(rows, cols, data))?;
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CheckpointError::Truncated(self.pos)),
        }
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
