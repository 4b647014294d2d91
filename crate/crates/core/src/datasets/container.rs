//! Self-describing single-file array container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "DYNCTARR"
//! version      u32      currently 1
//! meta_len     u64
//! metadata     meta_len bytes of UTF-8 JSON (an object)
//! n_arrays     u32
//! per array:
//!   name_len   u32, name (UTF-8)
//!   dtype      u8   0 = f64, 1 = f32, 2 = i64, 3 = u8
//!   ndim       u32, shape (ndim x u64)
//!   byte_len   u64, payload (row-major)
//! ```
//!
//! Every declared length is checked against the shape and against the bytes
//! actually present, and trailing bytes are rejected.

use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DYNCTARR";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    F32(Vec<f32>),
    I64(Vec<i64>),
    U8(Vec<u8>),
}

impl ArrayData {
    fn tag(&self) -> u8 {
        match self {
            ArrayData::F64(_) => 0,
            ArrayData::F32(_) => 1,
            ArrayData::I64(_) => 2,
            ArrayData::U8(_) => 3,
        }
    }

    fn elem_size(tag: u8) -> Option<usize> {
        match tag {
            0 | 2 => Some(8),
            1 => Some(4),
            3 => Some(1),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::F32(v) => v.len(),
            ArrayData::I64(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lossless widening to `f64` for float and byte payloads; `i64` values are
    /// converted with the usual rounding.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            ArrayData::F64(v) => v.clone(),
            ArrayData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            ArrayData::I64(v) => v.iter().map(|&x| x as f64).collect(),
            ArrayData::U8(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub metadata: Map<String, Value>,
    pub arrays: Vec<NamedArray>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<Value>) {
        self.metadata.insert(key.to_string(), value.into());
    }

    pub fn meta(&self, key: &str) -> Result<&Value> {
        self.metadata
            .get(key)
            .ok_or_else(|| Error::Validation(format!("container metadata lacks `{key}`")))
    }

    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.meta(key)?
            .as_str()
            .ok_or_else(|| Error::Validation(format!("metadata `{key}` is not a string")))
    }

    pub fn meta_f64(&self, key: &str) -> Result<f64> {
        self.meta(key)?
            .as_f64()
            .ok_or_else(|| Error::Validation(format!("metadata `{key}` is not a number")))
    }

    pub fn meta_u64(&self, key: &str) -> Result<u64> {
        self.meta(key)?
            .as_u64()
            .ok_or_else(|| Error::Validation(format!("metadata `{key}` is not an unsigned integer")))
    }

    pub fn push(&mut self, name: &str, shape: Vec<usize>, data: ArrayData) -> Result<()> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Validation(format!(
                "array `{name}` has {} elements but shape {shape:?}",
                data.len()
            )));
        }
        self.arrays.retain(|a| a.name != name);
        self.arrays.push(NamedArray {
            name: name.to_string(),
            shape,
            data,
        });
        Ok(())
    }

    pub fn push_f64(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        self.push(name, shape, ArrayData::F64(data))
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Validation(format!("container lacks array `{name}`")))
    }

    /// Fetches an array as `f64`, checking its rank.
    pub fn get_f64(&self, name: &str, ndim: usize) -> Result<(Vec<usize>, Vec<f64>)> {
        let a = self.get(name)?;
        if a.shape.len() != ndim {
            return Err(Error::Validation(format!(
                "array `{name}` has rank {}, expected {ndim}",
                a.shape.len()
            )));
        }
        Ok((a.shape.clone(), a.data.to_f64()))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&Value::Object(self.metadata.clone()))?;
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for a in &self.arrays {
            out.extend_from_slice(&(a.name.len() as u32).to_le_bytes());
            out.extend_from_slice(a.name.as_bytes());
            out.push(a.data.tag());
            out.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
            for &d in &a.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            let elem = ArrayData::elem_size(a.data.tag()).unwrap_or(1);
            out.extend_from_slice(&((a.data.len() * elem) as u64).to_le_bytes());
            match &a.data {
                ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::U8(v) => out.extend_from_slice(v),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8, "magic")?;
        if magic != MAGIC {
            return Err(r.err_at(0, "bad magic; not a dynct container"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.err_at(8, &format!("unsupported container version {version}")));
        }
        let meta_len = r.u64("metadata length")? as usize;
        let meta_at = r.pos;
        let meta_bytes = r.take(meta_len, "metadata")?;
        let metadata = match serde_json::from_slice::<Value>(meta_bytes) {
            Ok(Value::Object(m)) => m,
            Ok(_) => return Err(r.err_at(meta_at, "metadata is not a JSON object")),
            Err(e) => return Err(r.err_at(meta_at, &format!("metadata is not valid JSON: {e}"))),
        };
        let n_arrays = r.u32("array count")?;
        let mut arrays = Vec::with_capacity(n_arrays.min(1024) as usize);
        for _ in 0..n_arrays {
            let name_len = r.u32("name length")? as usize;
            let name_at = r.pos;
            let name = std::str::from_utf8(r.take(name_len, "array name")?)
                .map_err(|_| r.err_at(name_at, "array name is not UTF-8"))?
                .to_string();
            let tag_at = r.pos;
            let tag = r.take(1, "dtype")?[0];
            let elem = ArrayData::elem_size(tag)
                .ok_or_else(|| r.err_at(tag_at, &format!("unknown dtype tag {tag}")))?;
            let ndim = r.u32("rank")? as usize;
            if ndim > 16 {
                return Err(r.err_at(r.pos - 4, &format!("implausible rank {ndim}")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64("shape")? as usize);
            }
            let len_at = r.pos;
            let byte_len = r.u64("payload length")? as usize;
            let count = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| r.err_at(len_at, "shape overflows"))?;
            if count.checked_mul(elem) != Some(byte_len) {
                return Err(r.err_at(
                    len_at,
                    &format!(
                        "array `{name}` declares {byte_len} payload bytes but shape {shape:?} needs {}",
                        count.saturating_mul(elem)
                    ),
                ));
            }
            let payload = r.take(byte_len, "array payload")?;
            let data = match tag {
                0 => ArrayData::F64(
                    payload
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                1 => ArrayData::F32(
                    payload
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                2 => ArrayData::I64(
                    payload
                        .chunks_exact(8)
                        .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                _ => ArrayData::U8(payload.to_vec()),
            };
            arrays.push(NamedArray { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(r.err_at(
                r.pos,
                &format!("{} trailing bytes after last array", bytes.len() - r.pos),
            ));
        }
        Ok(Self { metadata, arrays })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err_at(&self, offset: usize, message: &str) -> Error {
        Error::Format {
            offset: offset as u64,
            message: message.to_string(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err_at(
                self.pos,
                &format!(
                    "truncated while reading {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            )),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Container {
        let mut c = Container::new();
        c.set_meta("kind", "test");
        c.set_meta("seed", 42u64);
        c.push_f64("a", vec![2, 3], vec![1.0, -2.5, 3.0, f64::MIN_POSITIVE, 0.0, -0.0])
            .unwrap();
        c.push("b", vec![4], ArrayData::F32(vec![1.5, 2.5, 3.5, 4.5])).unwrap();
        c.push("c", vec![2], ArrayData::I64(vec![-7, 9])).unwrap();
        c.push("d", vec![3], ArrayData::U8(vec![0, 1, 255])).unwrap();
        c
    }

    #[test]
    fn round_trip_preserves_everything() {
        let c = sample();
        let back = Container::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = sample().to_bytes().unwrap();
        let cut = &bytes[..bytes.len() - 3];
        match Container::from_bytes(cut) {
            Err(Error::Format { offset, .. }) => assert!(offset > 0 && (offset as usize) <= cut.len()),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_declared_length_is_rejected() {
        let mut c = Container::new();
        c.push_f64("x", vec![2], vec![1.0, 2.0]).unwrap();
        let mut bytes = c.to_bytes().unwrap();
        // payload length field sits 8 bytes before the 16-byte payload
        let at = bytes.len() - 16 - 8;
        bytes[at..at + 8].copy_from_slice(&24u64.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 8]);
        match Container::from_bytes(&bytes) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset as usize, at);
                assert!(message.contains("payload"));
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_trailing_bytes() {
        assert!(Container::from_bytes(b"NOTMAGIC\x01\0\0\0").is_err());
        let mut bytes = sample().to_bytes().unwrap();
        bytes.push(0);
        assert!(matches!(Container::from_bytes(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn shape_must_match_data() {
        let mut c = Container::new();
        assert!(c.push_f64("x", vec![3], vec![1.0]).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_f64_payloads_round_trip(bits in proptest::collection::vec(any::<u64>(), 0..64)) {
            let data: Vec<f64> = bits.iter().map(|&b| f64::from_bits(b)).collect();
            let mut c = Container::new();
            c.push_f64("v", vec![data.len()], data.clone()).unwrap();
            let back = Container::from_bytes(&c.to_bytes().unwrap()).unwrap();
            match &back.get("v").unwrap().data {
                ArrayData::F64(v) => {
                    prop_assert_eq!(v.len(), data.len());
                    for (a, b) in v.iter().zip(data.iter()) {
                        prop_assert_eq!(a.to_bits(), b.to_bits());
                    }
                }
                _ => prop_assert!(false),
            }
        }
    }
}
