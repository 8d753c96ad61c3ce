//! Little-endian vector cache.
//!
//! ```text
//! magic  "EVLK"
//! u32    version (1)
//! u32    dim
//! u64    count
//! count × (u64 id, dim × f32)
//! ```
//!
//! Checkpoints reuse the container: a header with `dim = 0` whose `count` is
//! the number of labeled sections, each a `u32` label length, the UTF-8
//! label, and a complete vector cache.

use std::collections::HashSet;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 4] = b"EVLK";
pub const VERSION: u32 = 1;

/// Row-major table of `f32` vectors keyed by `u64` ids, in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorCache {
    dim: usize,
    ids: Vec<u64>,
    data: Vec<f32>,
}

impl VectorCache {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn with_capacity(dim: usize, rows: usize) -> Self {
        Self {
            dim,
            ids: Vec::with_capacity(rows),
            data: Vec::with_capacity(rows * dim),
        }
    }

    pub fn push(&mut self, id: u64, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = (u64, &[f32])> {
        self.ids.iter().copied().zip(self.data.chunks_exact(self.dim.max(1)))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        write_header(w, self.dim as u32, self.ids.len() as u64)?;
        let mut buf = Vec::with_capacity(8 + 4 * self.dim);
        for (id, row) in self.rows() {
            buf.clear();
            buf.extend_from_slice(&id.to_le_bytes());
            for x in row {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.ids.len() * (8 + 4 * self.dim));
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Parses a cache, rejecting a bad header, truncation and duplicate ids.
    pub fn read_from(r: &mut Reader<'_>) -> Result<Self> {
        let (dim, count) = read_header(r)?;
        if dim == 0 {
            return Err(Error::Format("dim 0 marks a checkpoint, not a vector cache".into()));
        }
        let dim = dim as usize;
        let record = 8 + 4 * dim;
        let count = usize::try_from(count).map_err(|_| Error::Format("count overflows".into()))?;
        if r.remaining() < count.saturating_mul(record) {
            return Err(Error::Format(format!(
                "truncated: {count} records of {record} bytes need {} bytes, {} left",
                count.saturating_mul(record),
                r.remaining()
            )));
        }
        let mut cache = VectorCache::with_capacity(dim, count);
        let mut seen = HashSet::with_capacity(count);
        for _ in 0..count {
            let id = r.u64()?;
            if !seen.insert(id) {
                return Err(Error::DuplicateId(id));
            }
            cache.ids.push(id);
            for _ in 0..dim {
                cache.data.push(f32::from_le_bytes(r.take::<4>()?));
            }
        }
        Ok(cache)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let cache = Self::read_from(&mut r)?;
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
        }
        Ok(cache)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

fn write_header(w: &mut impl Write, dim: u32, count: u64) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&count.to_le_bytes())
}

fn read_header(r: &mut Reader<'_>) -> Result<(u32, u64)> {
    let magic = r.take::<4>()?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    Ok((r.u32()?, r.u64()?))
}

/// Byte cursor that reports truncation as a format error.
pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let slice = self
            .bytes
            .get(self.pos..self.pos + N)
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        self.pos += N;
        Ok(slice.try_into().expect("slice has length N"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let slice = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(slice)
    }
}

/// Labeled vector caches in one file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub sections: Vec<(String, VectorCache)>,
}

impl Checkpoint {
    pub fn section(&self, label: &str) -> Result<&VectorCache> {
        self.sections
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, c)| c)
            .ok_or_else(|| Error::Format(format!("checkpoint has no section {label:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_header(&mut out, 0, self.sections.len() as u64).expect("Vec write");
        for (label, cache) in &self.sections {
            out.extend_from_slice(&(label.len() as u32).to_le_bytes());
            out.extend_from_slice(label.as_bytes());
            cache.write_to(&mut out).expect("Vec write");
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let (dim, count) = read_header(&mut r)?;
        if dim != 0 {
            return Err(Error::Format("not a checkpoint (nonzero dim)".into()));
        }
        let mut sections = Vec::new();
        for _ in 0..count {
            let n = r.u32()? as usize;
            let label = std::str::from_utf8(r.bytes(n)?)
                .map_err(|e| Error::Format(format!("section label: {e}")))?
                .to_string();
            sections.push((label, VectorCache::read_from(&mut r)?));
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self { sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

/// Id of the first row holding a NaN or infinity.
pub fn first_nonfinite(cache: &VectorCache) -> Option<u64> {
    cache.rows().find(|(_, r)| r.iter().any(|x| !x.is_finite())).map(|(id, _)| id)
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut f = fs::File::open(path).io_context(|| format!("opening {}", path.display()))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).io_context(|| format!("reading {}", path.display()))?;
    Ok(buf)
}

/// Writes through a sibling temp file and renames, so readers never see a
/// partial file and a failed write leaves the old one in place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).io_context(|| format!("creating {}", parent.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).io_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).io_context(|| format!("renaming to {}", path.display()))
}
