//! Named parameter tensors and the SVCK checkpoint format.
//!
//! SVCK layout (little-endian): magic `SVCK`, version `u32 = 1`, then named
//! tensors until end of file, each as `name_len u16`, UTF-8 name, `rank u8`,
//! `rank × u32` dims, and `f32` data in row-major order.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Mat;

pub const SVCK_MAGIC: &[u8; 4] = b"SVCK";
pub const SVCK_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.tensors.get_mut(name)
    }

    /// Panics with the parameter name when missing; model code only asks for
    /// names its own initialiser created.
    pub fn expect(&self, name: &str) -> &Mat {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter `{name}`"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mat)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn extend(&mut self, other: ParamStore) {
        self.tensors.extend(other.tensors);
    }

    /// Tensors whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Mat::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Mat::is_finite)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SVCK_MAGIC);
        out.extend_from_slice(&SVCK_VERSION.to_le_bytes());
        for (name, m) in &self.tensors {
            let nb = name.as_bytes();
            out.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            out.extend_from_slice(nb);
            out.push(2);
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
            for &v in m.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], context: &str) -> Result<Self> {
        let mut r = ByteReader::new(bytes, context);
        if r.take(4)? != SVCK_MAGIC {
            return Err(Error::format(context, "bad magic"));
        }
        let version = r.u32()?;
        if version != SVCK_VERSION {
            return Err(Error::format(context, format!("unsupported version {version}")));
        }
        let mut store = ParamStore::new();
        while !r.is_done() {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format(context, "tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u8()?;
            let dims: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let (rows, cols) = match dims.as_slice() {
                [] => (1, 1),
                [n] => (1, *n),
                [a, b] => (*a, *b),
                _ => return Err(Error::format(context, format!("tensor `{name}` has unsupported rank {rank}"))),
            };
            let count = rows
                .checked_mul(cols)
                .filter(|c| c.checked_mul(4).is_some())
                .ok_or_else(|| Error::format(context, "dimension overflow"))?;
            let raw = r.take(count * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            store.insert(name, Mat::from_vec(rows, cols, data));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    context: &'a str,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], context: &'a str) -> Self {
        Self { bytes, pos: 0, context }
    }

    pub(crate) fn is_done(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(self.context, "truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Places named parameters on a tape, as trainable leaves when `trainable`
/// accepts the name and as constants otherwise.
pub struct Binder<'a> {
    store: &'a ParamStore,
    trainable: &'a dyn Fn(&str) -> bool,
    bound: BTreeMap<String, (Var, bool)>,
}

impl<'a> Binder<'a> {
    pub fn new(store: &'a ParamStore, trainable: &'a dyn Fn(&str) -> bool) -> Self {
        Self {
            store,
            trainable,
            bound: BTreeMap::new(),
        }
    }

    /// Binder that treats every parameter as a constant.
    pub fn frozen(store: &'a ParamStore) -> Self {
        Self::new(store, &|_| false)
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn get(&mut self, tape: &mut Tape, name: &str) -> Var {
        if let Some((v, _)) = self.bound.get(name) {
            return *v;
        }
        let trainable = (self.trainable)(name);
        let v = tape.leaf(self.store.expect(name).clone(), trainable);
        self.bound.insert(name.to_string(), (v, trainable));
        v
    }

    /// Gradients of every trainable parameter used on the tape.
    pub fn gradients(&self, grads: &Gradients) -> BTreeMap<String, Mat> {
        self.bound
            .iter()
            .filter(|(_, (_, t))| *t)
            .map(|(name, (v, _))| (name.clone(), grads.get_or_zeros(*v, self.store.expect(name))))
            .collect()
    }
}
