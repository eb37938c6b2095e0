//! STSF (features) and STSE (embeddings) binary formats, little-endian.
//!
//! ```text
//! STSF: "STSF" u32 version=1 u32 T u32 P u32 D u64 n_clips u8 has_labels [7 pad]
//!       f32 payload[n_clips*T*P*D]  (u32 labels[n_clips] if has_labels)
//! STSE: "STSE" u32 version=1 u8 kind [3 pad] u32 dim u64 count
//!       f32 payload[count*dim]
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{EmbeddingKind, EmbeddingSet, FeatureTensor};
use crate::error::{Error, Result};

const STSF_MAGIC: [u8; 4] = *b"STSF";
const STSE_MAGIC: [u8; 4] = *b"STSE";
const VERSION: u32 = 1;

pub const STSF_HEADER_LEN: usize = 36;
pub const STSE_HEADER_LEN: usize = 24;

pub fn features_to_bytes(tensor: &FeatureTensor) -> Result<Vec<u8>> {
    tensor.validate()?;
    let n_labels = tensor.labels.as_ref().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(STSF_HEADER_LEN + 4 * (tensor.data.len() + n_labels));
    out.extend_from_slice(&STSF_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [tensor.frames, tensor.patches, tensor.dim] {
        out.extend_from_slice(&dim_u32(v, "STSF dimension")?.to_le_bytes());
    }
    out.extend_from_slice(&(tensor.n_clips as u64).to_le_bytes());
    out.push(u8::from(tensor.labels.is_some()));
    out.extend_from_slice(&[0u8; 7]);
    for v in &tensor.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(labels) = &tensor.labels {
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn features_from_bytes(bytes: &[u8]) -> Result<FeatureTensor> {
    let mut r = Reader::new(bytes, "STSF");
    r.need(STSF_HEADER_LEN as u64)?;
    check_magic(r.array4(), STSF_MAGIC)?;
    check_version(r.u32(), "STSF")?;
    let frames = r.u32() as usize;
    let patches = r.u32() as usize;
    let dim = r.u32() as usize;
    let n_clips = r.u64();
    let has_labels = match r.u8() {
        0 => false,
        1 => true,
        other => return Err(Error::InvalidHeader(format!("has_labels flag {other}"))),
    };
    r.skip(7);

    let n_values = (frames as u64)
        .checked_mul(patches as u64)
        .and_then(|v| v.checked_mul(dim as u64))
        .and_then(|v| v.checked_mul(n_clips))
        .ok_or_else(|| Error::InvalidHeader("payload size overflows".into()))?;
    let n_labels = if has_labels { n_clips } else { 0 };
    let total = STSF_HEADER_LEN as u64 + 4 * n_values + 4 * n_labels;
    r.exact_total(total)?;

    let data = r.f32s(n_values as usize)?;
    let labels = has_labels.then(|| r.u32s(n_clips as usize));
    Ok(FeatureTensor {
        n_clips: n_clips as usize,
        frames,
        patches,
        dim,
        data,
        labels,
    })
}

pub fn embeddings_to_bytes(set: &EmbeddingSet) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(STSE_HEADER_LEN + 4 * set.data.len());
    out.extend_from_slice(&STSE_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match set.kind {
        EmbeddingKind::PerClip => 0,
        EmbeddingKind::PerClass => 1,
    });
    out.extend_from_slice(&[0u8; 3]);
    out.extend_from_slice(&dim_u32(set.dim, "STSE dim")?.to_le_bytes());
    out.extend_from_slice(&(set.count as u64).to_le_bytes());
    if let Some(index) = set.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    for v in &set.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn embeddings_from_bytes(bytes: &[u8]) -> Result<EmbeddingSet> {
    let mut r = Reader::new(bytes, "STSE");
    r.need(STSE_HEADER_LEN as u64)?;
    check_magic(r.array4(), STSE_MAGIC)?;
    check_version(r.u32(), "STSE")?;
    let kind = match r.u8() {
        0 => EmbeddingKind::PerClip,
        1 => EmbeddingKind::PerClass,
        other => return Err(Error::InvalidHeader(format!("embedding kind {other}"))),
    };
    r.skip(3);
    let dim = r.u32() as usize;
    let count = r.u64();
    let n_values = (dim as u64)
        .checked_mul(count)
        .ok_or_else(|| Error::InvalidHeader("payload size overflows".into()))?;
    r.exact_total(STSE_HEADER_LEN as u64 + 4 * n_values)?;
    let data = r.f32s(n_values as usize)?;
    Ok(EmbeddingSet {
        kind,
        dim,
        count: count as usize,
        data,
    })
}

pub fn write_features(tensor: &FeatureTensor, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &features_to_bytes(tensor)?)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    features_from_bytes(&bytes)
}

pub fn write_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &embeddings_to_bytes(set)?)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    embeddings_from_bytes(&bytes)
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn dim_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} does not fit in u32")))
}

fn check_magic(found: [u8; 4], expected: [u8; 4]) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::BadMagic { expected, found })
    }
}

fn check_version(version: u32, format: &'static str) -> Result<()> {
    if version == VERSION {
        Ok(())
    } else {
        Err(Error::UnsupportedVersion { format, version })
    }
}

/// Cursor over a byte buffer whose length has already been checked.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    format: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], format: &'static str) -> Self {
        Reader {
            bytes,
            pos: 0,
            format,
        }
    }

    pub(crate) fn need(&self, total: u64) -> Result<()> {
        if (self.bytes.len() as u64) < total {
            Err(Error::Truncated {
                format: self.format,
                expected: total,
                actual: self.bytes.len() as u64,
            })
        } else {
            Ok(())
        }
    }

    pub(crate) fn exact_total(&self, total: u64) -> Result<()> {
        self.need(total)?;
        let actual = self.bytes.len() as u64;
        if actual > total {
            return Err(Error::InvalidHeader(format!(
                "{} trailing bytes after {} payload",
                actual - total,
                self.format
            )));
        }
        Ok(())
    }

    pub(crate) fn skip(&mut self, n: usize) {
        self.pos += n;
    }

    pub(crate) fn take(&mut self, n: usize) -> &'a [u8] {
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        s
    }

    pub(crate) fn array4(&mut self) -> [u8; 4] {
        self.take(4).try_into().unwrap()
    }

    pub(crate) fn u8(&mut self) -> u8 {
        self.take(1)[0]
    }

    pub(crate) fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.array4())
    }

    pub(crate) fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take(8).try_into().unwrap())
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(4 * n);
        let mut out = Vec::with_capacity(n);
        for (index, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::NonFinite { index });
            }
            out.push(v);
        }
        Ok(out)
    }

    pub(crate) fn u32s(&mut self, n: usize) -> Vec<u32> {
        self.take(4 * n)
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    }
}
