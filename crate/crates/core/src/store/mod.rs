//! On-disk interchange for layer-wise sentence embeddings and task labels.
//!
//! A dataset directory holds one split of one task for one model:
//!
//! ```text
//! manifest.json
//! layer_000.bin ... layer_NNN.bin
//! labels.tsv
//! ```
//!
//! A store is a directory containing `train/`, `dev/` and `test/` datasets
//! that share model, task, dimension and layer count.

mod dataset;
mod format;
mod labels;
mod manifest;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use dataset::{validate_tree, Dataset, FileStatus, Store};
pub use format::{
    decode_embedding_file, decode_header, encode_embedding_file, fnv1a64, read_embedding_file,
    write_embedding_file, LayerHeader, FORMAT_VERSION, HEADER_LEN, MAGIC,
};
pub use labels::{
    load_labels, parse_labels, sts_score_to_difference, ClassPair, LabelSet, LoadedLabels,
    NliClass, StsPair, Triplet,
};
pub use manifest::{DatasetManifest, LayerFileEntry, MANIFEST_FILE};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: not a SEMPROBE layer file")]
    BadMagic,
    #[error("unsupported format version {found} (expected {FORMAT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("trailing bytes: expected {expected} bytes, found {actual}")]
    TrailingBytes { expected: usize, actual: usize },
    #[error("checksum mismatch: manifest {expected:016x}, payload {actual:016x}")]
    ChecksumMismatch { expected: u64, actual: u64 },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("dimensions exceed the 32-bit header fields")]
    TooLarge,
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("labels line {line}: {message}")]
    Label { line: usize, message: String },
}

impl StoreError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        StoreError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    MeanTokens,
    LastToken,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Sts,
    TeTriplet,
    TePair,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Sts => "sts",
            Task::TeTriplet => "te_triplet",
            Task::TePair => "te_pair",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// Sentence vectors of one model layer, stored as `f32` rows.
///
/// Row `i` is sentence `i` of the dataset manifest in every layer of the
/// same model.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub model_id: String,
    pub layer_index: usize,
    pub pooling: Pooling,
    pub(crate) n_sentences: usize,
    pub(crate) dim: usize,
    pub(crate) data: Vec<f32>,
}

impl EmbeddingSet {
    pub fn new(
        model_id: String,
        layer_index: usize,
        n_sentences: usize,
        dim: usize,
        pooling: Pooling,
        data: Vec<f32>,
    ) -> Result<Self, StoreError> {
        let set = EmbeddingSet {
            model_id,
            layer_index,
            pooling,
            n_sentences,
            dim,
            data,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        if self.n_sentences == 0 || self.dim == 0 {
            return Err(StoreError::Shape(format!(
                "empty set ({} x {})",
                self.n_sentences, self.dim
            )));
        }
        if self.data.len() != self.n_sentences * self.dim {
            return Err(StoreError::Shape(format!(
                "{} values for {} x {}",
                self.data.len(),
                self.n_sentences,
                self.dim
            )));
        }
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(StoreError::NonFinite {
                row: pos / self.dim,
                col: pos % self.dim,
            });
        }
        Ok(())
    }

    pub fn n_sentences(&self) -> usize {
        self.n_sentences
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}
