//! Flat binary archive of named `f64` tensors.
//!
//! ```text
//! magic      4 bytes  "SFDC"
//! version    u32      1
//! meta_len   u32      byte length of the metadata block
//! metadata   UTF-8    "key=value\n" lines, keys sorted
//! count      u32      number of tensors
//! tensor*    u32 name_len, name bytes (UTF-8), u64 n, n x f64
//! ```
//!
//! All integers and floats are little-endian. Metadata always carries
//! `config_hash`, `epoch` and `seed`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::Parameterized;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"SFDC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn from_params<P: Parameterized + ?Sized>(
        params: &P,
        metadata: BTreeMap<String, String>,
    ) -> Self {
        let mut tensors = Vec::new();
        params.visit(&mut |name, _, t| tensors.push((name.to_string(), t.to_vec())));
        Self { metadata, tensors }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    /// Copies stored tensors into `params`, matching by name.
    pub fn restore_into<P: Parameterized + ?Sized>(&self, params: &mut P) -> Result<()> {
        let by_name: BTreeMap<&str, &Vec<f64>> =
            self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut err = None;
        params.visit_mut(&mut |name, _, t| {
            if err.is_some() {
                return;
            }
            match by_name.get(name) {
                Some(v) if v.len() == t.len() => t.copy_from_slice(v),
                Some(v) => {
                    err = Some(Error::Shape(format!(
                        "tensor {name}: checkpoint has {} values, model {}",
                        v.len(),
                        t.len()
                    )))
                }
                None => err = Some(Error::Shape(format!("tensor {name} missing from checkpoint"))),
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut meta = String::new();
        for (k, v) in &self.metadata {
            meta.push_str(k);
            meta.push('=');
            meta.push_str(v);
            meta.push('\n');
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, data) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(data.len() as u64).to_le_bytes());
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(Error::format(path, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let meta = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| Error::format(path, "metadata is not UTF-8"))?;
        let mut metadata = BTreeMap::new();
        for line in meta.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(path, format!("bad metadata line {line:?}")))?;
            metadata.insert(k.to_string(), v.to_string());
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
                .to_string();
            let n = r.u64()? as usize;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::format(path, "tensor too large"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, data));
        }
        if r.pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes after last tensor"));
        }
        Ok(Self { metadata, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::Toy;
    use super::*;

    #[test]
    fn round_trip_and_restore() {
        let toy = Toy { a: vec![1.5, -0.25], b: vec![f64::MIN_POSITIVE] };
        let mut meta = BTreeMap::new();
        meta.insert("seed".into(), "7".into());
        meta.insert("epoch".into(), "3".into());
        meta.insert("config_hash".into(), "abc".into());
        let ck = Checkpoint::from_params(&toy, meta);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.sfdc");
        ck.write(&path).unwrap();
        let back = Checkpoint::read(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.meta("seed"), Some("7"));

        let mut other = Toy { a: vec![0.0; 2], b: vec![0.0] };
        back.restore_into(&mut other).unwrap();
        assert_eq!(other, toy);

        let mut wrong = Toy { a: vec![0.0; 3], b: vec![0.0] };
        assert!(back.restore_into(&mut wrong).is_err());

        let mut bytes = ck.to_bytes();
        bytes.truncate(bytes.len() - 3);
        assert!(Checkpoint::from_bytes(&bytes, &path).is_err());
    }
}
