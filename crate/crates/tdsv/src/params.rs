//! Named trainable tensors shared across training steps, and the binary
//! checkpoint format.
//!
//! The computation graph is rebuilt every step; parameters live here and are
//! bound into a fresh tape as parameter nodes. Checkpoints are written as:
//! magic "ATNW", u32 tensor count, then per tensor a u16 name length, the
//! name bytes, u8 rank, u32 dims, and little-endian f64 payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::{NodeId, Shape, Tape, Value};
use crate::error::DataError;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ATNW";

/// Index of a tensor within a `ParamStore`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Value>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Value) -> ParamId {
        let id = ParamId(self.values.len());
        self.names.push(name.into());
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.data.len()).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Value {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Value {
        &mut self.values[id.0]
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }

    pub fn set_all(&mut self, values: &[Value]) {
        assert_eq!(values.len(), self.values.len());
        self.values.clone_from_slice(values);
    }

    /// Bind every tensor into the tape as a trainable node.
    /// The returned vector maps `ParamId(i)` to its node for this tape.
    pub fn bind(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.values.iter().map(|v| tape.param(v.clone())).collect()
    }

    /// Apply an SGD update with global-norm gradient clipping.
    /// `grads` is indexed like the store. Returns the pre-clip global norm.
    pub fn sgd_step(&mut self, grads: &[Vec<f64>], lr: f64, clip_norm: f64) -> f64 {
        assert_eq!(grads.len(), self.values.len());
        let sq: f64 = grads.iter().flat_map(|g| g.iter()).map(|g| g * g).sum();
        let norm = sq.sqrt();
        let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };
        for (v, g) in self.values.iter_mut().zip(grads) {
            for (p, gi) in v.data.iter_mut().zip(g) {
                *p -= lr * scale * gi;
            }
        }
        norm
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(self.values.len() as u32).to_le_bytes())?;
        for (name, value) in self.names.iter().zip(&self.values) {
            let nb = name.as_bytes();
            w.write_all(&(nb.len() as u16).to_le_bytes())?;
            w.write_all(nb)?;
            let dims: Vec<u32> = match value.shape {
                Shape::Scalar => vec![],
                Shape::Vector(n) => vec![n as u32],
                Shape::Matrix(r, c) => vec![r as u32, c as u32],
            };
            w.write_all(&[dims.len() as u8])?;
            for d in &dims {
                w.write_all(&d.to_le_bytes())?;
            }
            for x in &value.data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(DataError::BadMagic);
        }
        let count = read_u32(&mut r)? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = read_u16(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| DataError::Corrupt("tensor name"))?;
            let mut rank = [0u8; 1];
            read_exact(&mut r, &mut rank)?;
            let shape = match rank[0] {
                0 => Shape::Scalar,
                1 => Shape::Vector(read_u32(&mut r)? as usize),
                2 => {
                    let rows = read_u32(&mut r)? as usize;
                    let cols = read_u32(&mut r)? as usize;
                    Shape::Matrix(rows, cols)
                }
                _ => return Err(DataError::Corrupt("tensor rank > 2")),
            };
            let mut data = vec![0.0f64; shape.len()];
            for x in &mut data {
                let mut buf = [0u8; 8];
                read_exact(&mut r, &mut buf)?;
                *x = f64::from_le_bytes(buf);
            }
            store.add(name, Value { shape, data });
        }
        Ok(store)
    }

    /// Check that another store has identical names and shapes (for resuming
    /// from a checkpoint under a given config).
    pub fn compatible_with(&self, other: &ParamStore) -> bool {
        self.len() == other.len()
            && self
                .names
                .iter()
                .zip(&self.values)
                .zip(other.names.iter().zip(&other.values))
                .all(|((n1, v1), (n2, v2))| n1 == n2 && v1.shape == v2.shape)
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), DataError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            DataError::Truncated
        } else {
            DataError::Io(e)
        }
    })
}

fn read_u16(r: &mut impl Read) -> Result<u16, DataError> {
    let mut buf = [0u8; 2];
    read_exact(r, &mut buf)?;
    Ok(u16::from_le_bytes(buf))
}

fn read_u32(r: &mut impl Read) -> Result<u32, DataError> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
