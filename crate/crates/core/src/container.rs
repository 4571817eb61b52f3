//! Binary model container: an ordered list of named float64 tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DKEY"  u16 version  u32 tensor_count
//! repeated tensor_count times:
//!     u16 name_len  name (UTF-8)  u8 ndim  u64 dim * ndim  f64 value * prod(dims)
//! ```
//!
//! Integers, flags and enum codes are stored as exactly representable
//! float64 scalars. Writing the same container twice yields identical bytes.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayD, ArrayViewD, IxDyn};

use crate::error::{DeepKeyError, Result};

pub const MAGIC: &[u8; 4] = b"DKEY";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn to_array(&self) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(&self.shape), self.data.clone()).expect("shape checked on insert")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    tensors: Vec<(String, Tensor)>,
}

fn format_err(msg: impl Into<String>) -> DeepKeyError {
    DeepKeyError::Format(msg.into())
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        let name = name.into();
        if name.is_empty() || name.len() > u16::MAX as usize {
            return Err(format_err(format!("invalid tensor name length {}", name.len())));
        }
        if shape.len() > u8::MAX as usize {
            return Err(format_err(format!("tensor `{name}` has too many dimensions")));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(format_err(format!(
                "tensor `{name}`: shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        if self.tensors.iter().any(|(n, _)| *n == name) {
            return Err(format_err(format!("duplicate tensor `{name}`")));
        }
        self.tensors.push((name, Tensor { shape, data }));
        Ok(())
    }

    pub fn insert_view(&mut self, name: impl Into<String>, view: ArrayViewD<'_, f64>) -> Result<()> {
        self.insert(name, view.shape().to_vec(), view.iter().copied().collect())
    }

    pub fn insert_scalar(&mut self, name: impl Into<String>, value: f64) -> Result<()> {
        self.insert(name, Vec::new(), vec![value])
    }

    pub fn insert_vec(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let n = values.len();
        self.insert(name, vec![n], values)
    }

    /// Copies every tensor of `other` under `prefix.`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &Container) -> Result<()> {
        for (name, t) in &other.tensors {
            self.insert(format!("{prefix}.{name}"), t.shape.clone(), t.data.clone())?;
        }
        Ok(())
    }

    /// Tensors whose names start with `prefix.`, with the prefix stripped.
    pub fn subset(&self, prefix: &str) -> Container {
        let head = format!("{prefix}.");
        Container {
            tensors: self
                .tensors
                .iter()
                .filter_map(|(n, t)| n.strip_prefix(&head).map(|rest| (rest.to_string(), t.clone())))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| format_err(format!("missing tensor `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.iter().any(|(n, _)| n == name)
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let t = self.get(name)?;
        if t.data.len() != 1 {
            return Err(format_err(format!("`{name}` is not a scalar")));
        }
        Ok(t.data[0])
    }

    /// A scalar that must hold a non-negative integer.
    pub fn count(&self, name: &str) -> Result<usize> {
        let v = self.scalar(name)?;
        if v < 0.0 || v.fract() != 0.0 || v > (1u64 << 53) as f64 {
            return Err(format_err(format!("`{name}` = {v} is not a count")));
        }
        Ok(v as usize)
    }

    pub fn vector(&self, name: &str) -> Result<Array1<f64>> {
        let t = self.get(name)?;
        if t.shape.len() != 1 {
            return Err(format_err(format!("`{name}` has shape {:?}, expected a vector", t.shape)));
        }
        Ok(Array1::from(t.data.clone()))
    }

    pub fn matrix(&self, name: &str) -> Result<Array2<f64>> {
        let t = self.get(name)?;
        if t.shape.len() != 2 {
            return Err(format_err(format!("`{name}` has shape {:?}, expected a matrix", t.shape)));
        }
        Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data.clone()).map_err(|e| format_err(e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(format_err("bad magic, not a DKEY container"));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(format_err(format!("unsupported container version {version}")));
        }
        let count = u32::from_le_bytes(r.array()?) as usize;
        let mut c = Container::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.array()?) as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| format_err("tensor name is not UTF-8"))?
                .to_string();
            let ndim = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let d = u64::from_le_bytes(r.array()?);
                shape.push(usize::try_from(d).map_err(|_| format_err("dimension overflow"))?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| format_err("tensor size overflow"))?;
            if n.checked_mul(8).map_or(true, |b| b > r.remaining()) {
                return Err(format_err(format!("tensor `{name}` truncated")));
            }
            let data = (0..n)
                .map(|_| r.array().map(f64::from_le_bytes))
                .collect::<Result<Vec<f64>>>()?;
            c.insert(name, shape, data)?;
        }
        if r.remaining() != 0 {
            return Err(format_err(format!("{} trailing bytes", r.remaining())));
        }
        Ok(c)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(format_err("unexpected end of container"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut c = Container::new();
        c.insert_scalar("x", 1.5).unwrap();
        let b = c.to_bytes();
        assert_eq!(&b[..4], b"DKEY");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), VERSION);
        assert_eq!(u32::from_le_bytes([b[6], b[7], b[8], b[9]]), 1);
        assert_eq!(u16::from_le_bytes([b[10], b[11]]), 1);
        assert_eq!(b[12], b'x');
        assert_eq!(b[13], 0);
        assert_eq!(f64::from_le_bytes(b[14..22].try_into().unwrap()), 1.5);
        assert_eq!(b.len(), 22);
    }

    #[test]
    fn rejects_corruption() {
        let mut c = Container::new();
        c.insert("m", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = c.to_bytes();
        assert!(Container::from_bytes(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(Container::from_bytes(&bad).is_err());
        let mut extra = b.clone();
        extra.push(0);
        assert!(Container::from_bytes(&extra).is_err());
    }

    #[test]
    fn duplicate_and_shape_errors() {
        let mut c = Container::new();
        c.insert_scalar("a", 0.0).unwrap();
        assert!(c.insert_scalar("a", 1.0).is_err());
        assert!(c.insert("b", vec![3], vec![1.0]).is_err());
    }

    #[test]
    fn prefix_subset() {
        let mut inner = Container::new();
        inner.insert_vec("v", vec![1.0, 2.0]).unwrap();
        let mut outer = Container::new();
        outer.extend_prefixed("eeg", &inner).unwrap();
        assert!(outer.contains("eeg.v"));
        assert_eq!(outer.subset("eeg"), inner);
    }

    proptest! {
        #[test]
        fn bytes_round_trip(
            entries in proptest::collection::vec(
                (proptest::collection::vec(1usize..4, 0..3), any::<u64>()),
                0..6,
            )
        ) {
            let mut c = Container::new();
            for (i, (shape, seed)) in entries.iter().enumerate() {
                let n: usize = shape.iter().product();
                let data = (0..n).map(|k| f64::from_bits(seed.wrapping_mul(k as u64 + 1) >> 2)).collect();
                c.insert(format!("t{i}"), shape.clone(), data).unwrap();
            }
            let bytes = c.to_bytes();
            let back = Container::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
