//! Embedding sets: the binary file format, the representation registry,
//! pairing of two representations, stratified fold plans and the synthetic
//! generator.

mod folds;
mod format;
mod pairing;
mod registry;
mod synth;

pub use folds::{make_folds, make_folds_for_labels, FoldPlan};
pub use format::{
    decode_embedding_set, encode_embedding_set, read_embedding_file, read_manifest,
    sidecar_path, write_embedding_file, EmbeddingManifest, EMBEDDING_MAGIC, EMBEDDING_VERSION,
};
pub use pairing::{pair_datasets, PairedSet};
pub use registry::{lookup_representation, Representation, REGISTRY};
pub use synth::{synth_generate, ComplementarityMode, SynthSpec};

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad magic bytes: not an embedding file")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("truncated payload at byte {offset}")]
    Truncated { offset: usize },
    #[error("non-finite value in sample {sample_id:?} at index {index}")]
    NonFinite { sample_id: String, index: usize },
    #[error("label {label} of sample {sample_id:?} is out of range for {classes} classes")]
    InvalidLabel {
        sample_id: String,
        label: usize,
        classes: usize,
    },
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("invalid UTF-8 in {0}")]
    Utf8(&'static str),
    #[error("alignment error at sample id {id:?}: {reason}")]
    Alignment { id: String, reason: String },
    #[error("stratification error: {0}")]
    Stratification(String),
    #[error("invalid embedding set: {0}")]
    Invalid(String),
    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DataError {
    /// Stable machine-readable code for each failure kind.
    pub fn code(&self) -> &'static str {
        match self {
            DataError::BadMagic => "bad-magic",
            DataError::UnsupportedVersion(_) => "unsupported-version",
            DataError::DimMismatch { .. } => "dim-mismatch",
            DataError::Truncated { .. } => "truncated",
            DataError::NonFinite { .. } => "non-finite",
            DataError::InvalidLabel { .. } => "invalid-label",
            DataError::DuplicateId(_) => "duplicate-id",
            DataError::Utf8(_) => "bad-utf8",
            DataError::Alignment { .. } => "alignment",
            DataError::Stratification(_) => "stratification",
            DataError::Invalid(_) => "invalid",
            DataError::Manifest(_) => "manifest",
            DataError::Io(_) => "io",
        }
    }
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// Representation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Representation-learning based (self-supervised / speaker models).
    Rlr,
    /// Compression based (neural audio codec encoders).
    Cbr,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Rlr => "rlr",
            Family::Cbr => "cbr",
        })
    }
}

impl FromStr for Family {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rlr" => Ok(Family::Rlr),
            "cbr" => Ok(Family::Cbr),
            other => Err(DataError::Invalid(format!("unknown family {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub label: usize,
    pub vector: Vec<f32>,
}

/// A labeled collection of fixed-dimension embedding vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub name: String,
    /// Family tag carried by the JSON sidecar, when known.
    pub family: Option<Family>,
    pub dim: usize,
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
}

impl EmbeddingSet {
    pub fn new(name: impl Into<String>, dim: usize, class_names: Vec<String>) -> Self {
        Self {
            name: name.into(),
            family: None,
            dim,
            class_names,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.id.clone()).collect()
    }

    /// Checks every invariant of the set.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(DataError::Invalid("dim must be positive".into()));
        }
        if self.class_names.is_empty() {
            return Err(DataError::Invalid("at least one class name is required".into()));
        }
        if self.class_names.len() > u16::MAX as usize {
            return Err(DataError::Invalid("too many classes".into()));
        }
        for name in self.class_names.iter().chain(self.samples.iter().map(|s| &s.id)) {
            if name.len() > u16::MAX as usize {
                return Err(DataError::Invalid(format!(
                    "string of {} bytes exceeds the 65535-byte limit",
                    name.len()
                )));
            }
        }
        let mut seen = HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            if s.vector.len() != self.dim {
                return Err(DataError::DimMismatch {
                    expected: self.dim,
                    found: s.vector.len(),
                });
            }
            if s.label >= self.class_names.len() {
                return Err(DataError::InvalidLabel {
                    sample_id: s.id.clone(),
                    label: s.label,
                    classes: self.class_names.len(),
                });
            }
            if let Some(index) = s.vector.iter().position(|v| !v.is_finite()) {
                return Err(DataError::NonFinite {
                    sample_id: s.id.clone(),
                    index,
                });
            }
            if !seen.insert(s.id.as_str()) {
                return Err(DataError::DuplicateId(s.id.clone()));
            }
        }
        Ok(())
    }

    /// Checks the dimension against the registry entry for `representation`.
    pub fn check_representation(&self, representation: &str) -> Result<&'static Representation> {
        let rep = lookup_representation(representation).ok_or_else(|| {
            DataError::Invalid(format!("unknown representation {representation:?}"))
        })?;
        if rep.dim != self.dim {
            return Err(DataError::DimMismatch {
                expected: rep.dim,
                found: self.dim,
            });
        }
        Ok(rep)
    }
}
