//! Binary embedding file (`.hyfe`) plus its JSON sidecar.
//!
//! ```text
//! magic        b"HYFE"
//! version      u16
//! dim          u32
//! class count  u16, then per class: u16 length + UTF-8 name
//! sample count u64, then per sample:
//!                u16 length + UTF-8 sample id
//!                u16 label
//!                dim × f32
//! ```
//!
//! Everything is little-endian. The sidecar (`<stem>.json`) repeats the
//! header for humans and carries the representation name and family tag;
//! the binary file is authoritative for everything it stores.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataError, EmbeddingSet, Family, Result, Sample};
use crate::binio::{put_f32s, put_str16, put_u16, put_u32, put_u64, Reader};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"HYFE";
pub const EMBEDDING_VERSION: u16 = 1;

/// Contents of the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<Family>,
    pub dim: usize,
    pub class_names: Vec<String>,
    pub num_samples: usize,
    pub format_version: u16,
}

impl EmbeddingManifest {
    pub fn for_set(set: &EmbeddingSet) -> Self {
        Self {
            name: set.name.clone(),
            family: set.family,
            dim: set.dim,
            class_names: set.class_names.clone(),
            num_samples: set.len(),
            format_version: EMBEDDING_VERSION,
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn encode_embedding_set(set: &EmbeddingSet) -> Result<Vec<u8>> {
    set.validate()?;
    let dim = u32::try_from(set.dim).map_err(|_| DataError::Invalid("dim too large".into()))?;
    let mut out = Vec::with_capacity(32 + set.len() * (set.dim * 4 + 16));
    out.extend_from_slice(EMBEDDING_MAGIC);
    put_u16(&mut out, EMBEDDING_VERSION);
    put_u32(&mut out, dim);
    put_u16(&mut out, set.class_names.len() as u16);
    for name in &set.class_names {
        put_str16(&mut out, name);
    }
    put_u64(&mut out, set.len() as u64);
    for s in &set.samples {
        put_str16(&mut out, &s.id);
        let label = u16::try_from(s.label).map_err(|_| DataError::InvalidLabel {
            sample_id: s.id.clone(),
            label: s.label,
            classes: set.class_names.len(),
        })?;
        put_u16(&mut out, label);
        put_f32s(&mut out, &s.vector);
    }
    Ok(out)
}

fn read_str(r: &mut Reader<'_>, what: &'static str) -> Result<String> {
    let offset = r.position();
    let len = r.u16().ok_or(DataError::Truncated { offset })? as usize;
    let bytes = r.bytes(len).ok_or(DataError::Truncated { offset })?;
    String::from_utf8(bytes.to_vec()).map_err(|_| DataError::Utf8(what))
}

/// Parses a `.hyfe` byte buffer. `name` becomes the set name.
pub fn decode_embedding_set(buf: &[u8], name: &str) -> Result<EmbeddingSet> {
    let mut r = Reader::new(buf);
    let truncated = |r: &Reader<'_>| DataError::Truncated {
        offset: r.position(),
    };
    let magic = r.bytes(4).ok_or_else(|| truncated(&r))?;
    if magic != EMBEDDING_MAGIC {
        return Err(DataError::BadMagic);
    }
    let version = r.u16().ok_or_else(|| truncated(&r))?;
    if version != EMBEDDING_VERSION {
        return Err(DataError::UnsupportedVersion(version));
    }
    let dim = r.u32().ok_or_else(|| truncated(&r))? as usize;
    if dim == 0 {
        return Err(DataError::Invalid("header dim is zero".into()));
    }
    let classes = r.u16().ok_or_else(|| truncated(&r))? as usize;
    let class_names = (0..classes)
        .map(|_| read_str(&mut r, "class name"))
        .collect::<Result<Vec<_>>>()?;
    let count = r.u64().ok_or_else(|| truncated(&r))?;
    // each sample needs at least 4 + 4·dim bytes
    let min_sample = 4 + 4 * dim as u64;
    if count.saturating_mul(min_sample) > r.remaining() as u64 {
        return Err(truncated(&r));
    }

    let mut set = EmbeddingSet::new(name, dim, class_names);
    set.samples.reserve(count as usize);
    for _ in 0..count {
        let id = read_str(&mut r, "sample id")?;
        let label = r.u16().ok_or_else(|| truncated(&r))? as usize;
        let raw = r.bytes(4 * dim).ok_or_else(|| truncated(&r))?;
        let vector: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        set.samples.push(Sample { id, label, vector });
    }
    if r.remaining() != 0 {
        return Err(DataError::Invalid(format!(
            "{} trailing bytes after the last sample",
            r.remaining()
        )));
    }
    set.validate()?;
    Ok(set)
}

/// Writes `<path>` and its JSON sidecar.
pub fn write_embedding_file(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_embedding_set(set)?;
    fs::write(path, bytes)?;
    let manifest = serde_json::to_string_pretty(&EmbeddingManifest::for_set(set))?;
    fs::write(sidecar_path(path), manifest + "\n")?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Option<EmbeddingManifest>> {
    let side = sidecar_path(path.as_ref());
    if !side.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_slice(&fs::read(side)?)?))
}

/// Reads a `.hyfe` file. Name and family come from the sidecar when one is
/// present (falling back to the file stem); the sidecar must agree with the
/// binary header on dim and sample count.
pub fn read_embedding_file(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let manifest = read_manifest(path)?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = manifest.as_ref().map_or(stem, |m| m.name.clone());
    let mut set = decode_embedding_set(&bytes, &name)?;
    if let Some(m) = manifest {
        if m.dim != set.dim {
            return Err(DataError::DimMismatch {
                expected: m.dim,
                found: set.dim,
            });
        }
        if m.num_samples != set.len() {
            return Err(DataError::Invalid(format!(
                "sidecar lists {} samples, file holds {}",
                m.num_samples,
                set.len()
            )));
        }
        set.family = m.family;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EmbeddingSet {
        let mut set = EmbeddingSet::new("tiny", 4, vec!["neg".into(), "pos".into()]);
        for (i, label) in [0usize, 1, 1].into_iter().enumerate() {
            set.samples.push(Sample {
                id: format!("s{i}"),
                label,
                vector: vec![i as f32, -0.5, 1e-3, f32::MIN_POSITIVE],
            });
        }
        set
    }

    #[test]
    fn size_matches_layout() {
        let set = tiny();
        let bytes = encode_embedding_set(&set).unwrap();
        let header = 4 + 2 + 4 + 2 + (2 + 3) + (2 + 3) + 8;
        let per_sample = (2 + 2) + 4 * 4 + 2;
        assert_eq!(bytes.len(), header + 3 * per_sample);
    }

    #[test]
    fn roundtrip_through_bytes() {
        let set = tiny();
        let back = decode_embedding_set(&encode_embedding_set(&set).unwrap(), "tiny").unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn distinct_errors() {
        let bytes = encode_embedding_set(&tiny()).unwrap();

        let mut b = bytes.clone();
        b[1] = b'X';
        assert_eq!(decode_embedding_set(&b, "x").unwrap_err().code(), "bad-magic");

        let e = decode_embedding_set(&bytes[..bytes.len() - 1], "x").unwrap_err();
        assert_eq!(e.code(), "truncated");

        let mut b = bytes.clone();
        b[4] = 9;
        assert_eq!(decode_embedding_set(&b, "x").unwrap_err().code(), "unsupported-version");

        // overwrite the last f32 with NaN
        let mut b = bytes.clone();
        let n = b.len();
        b[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(decode_embedding_set(&b, "x").unwrap_err().code(), "non-finite");

        let mut set = tiny();
        set.samples[0].vector.pop();
        assert_eq!(encode_embedding_set(&set).unwrap_err().code(), "dim-mismatch");

        let mut set = tiny();
        set.samples[2].id = "s0".into();
        assert_eq!(encode_embedding_set(&set).unwrap_err().code(), "duplicate-id");

        let mut set = tiny();
        set.samples[1].label = 2;
        assert_eq!(encode_embedding_set(&set).unwrap_err().code(), "invalid-label");
    }

    #[test]
    fn file_roundtrip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.hyfe");
        let mut set = tiny();
        set.name = "Soundstream".into();
        set.family = Some(Family::Cbr);
        write_embedding_file(&set, &path).unwrap();
        assert!(dir.path().join("a.json").exists());
        let back = read_embedding_file(&path).unwrap();
        assert_eq!(back, set);

        // without a sidecar the stem names the set
        fs::remove_file(dir.path().join("a.json")).unwrap();
        let back = read_embedding_file(&path).unwrap();
        assert_eq!(back.name, "a");
        assert_eq!(back.family, None);
    }
}
