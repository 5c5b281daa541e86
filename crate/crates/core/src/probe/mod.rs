//! Linear projection probes: the probe matrix, its losses and gradients,
//! AdamW, and the training loop.

mod adamw;
mod fit;
mod loss;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::MetricError;
use crate::store::{EmbeddingSet, LabelSet};

pub use adamw::{adamw_step, AdamState, AdamWParams};
pub use fit::{fit, FitResult, TrainConfig};
pub use loss::{
    cosine_pair_loss, loss_gradient, sts_loss, triplet_loss, triplet_score, LossGradient,
    TripletScore, ZERO_NORM,
};

/// RNG stream used for probe initialisation; fits shuffle on stream 1.
pub(crate) const INIT_STREAM: u64 = 0;
pub(crate) const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("subspace dimension {k} must be in 1..={d}")]
    BadRank { k: usize, d: usize },
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("label set is for {found}, config expects {expected}")]
    TaskMismatch {
        expected: crate::store::Task,
        found: crate::store::Task,
    },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("probe weights became non-finite after step {step}")]
    NonFinite { step: u64 },
    #[error("dev evaluation failed: {0}")]
    Eval(#[from] MetricError),
    #[error("dev metric is not finite at epoch {epoch}")]
    NonFiniteMetric { epoch: usize },
}

/// `k × d` projection matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeMatrix {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
}

impl ProbeMatrix {
    pub fn from_rows(rows: usize, cols: usize, weights: Vec<f64>) -> Result<Self, ProbeError> {
        if rows == 0 || rows > cols {
            return Err(ProbeError::BadRank { k: rows, d: cols });
        }
        if weights.len() != rows * cols {
            return Err(ProbeError::DimensionMismatch {
                expected: rows * cols,
                actual: weights.len(),
            });
        }
        Ok(ProbeMatrix {
            rows,
            cols,
            weights,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self, ProbeError> {
        Self::from_rows(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(d: usize) -> Result<Self, ProbeError> {
        let mut m = Self::zeros(d, d)?;
        for i in 0..d {
            m.weights[i * d + i] = 1.0;
        }
        Ok(m)
    }

    /// Subspace dimension `k`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Embedding dimension `d`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    pub(crate) fn check_len(&self, x: &[f64]) -> Result<(), ProbeError> {
        if x.len() != self.cols {
            return Err(ProbeError::DimensionMismatch {
                expected: self.cols,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// `M·x`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>, ProbeError> {
        self.check_len(x)?;
        let mut out = vec![0.0; self.rows];
        self.project_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn project_into(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(r), x);
        }
    }

    /// `M·(x − y)`, writing the difference into `diff`.
    pub(crate) fn project_difference(
        &self,
        x: &[f64],
        y: &[f64],
        diff: &mut [f64],
        out: &mut [f64],
    ) {
        for ((d, a), b) in diff.iter_mut().zip(x).zip(y) {
            *d = a - b;
        }
        self.project_into(diff, out);
    }

    /// `‖M·x − M·y‖₂`.
    pub fn projected_distance(&self, x: &[f64], y: &[f64]) -> Result<f64, ProbeError> {
        self.check_len(x)?;
        self.check_len(y)?;
        let mut diff = vec![0.0; self.cols];
        let mut u = vec![0.0; self.rows];
        self.project_difference(x, y, &mut diff, &mut u);
        Ok(norm(&u))
    }
}

/// Entries i.i.d. uniform on `[−1/√d, 1/√d]` from a ChaCha8 stream keyed
/// by `seed`; identical on every platform.
pub fn init_probe(k: usize, d: usize, seed: u64) -> Result<ProbeMatrix, ProbeError> {
    if k == 0 || k > d {
        return Err(ProbeError::BadRank { k, d });
    }
    let bound = 1.0 / (d as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM);
    let weights = (0..k * d)
        .map(|_| {
            // 53 high bits -> [0, 1)
            let unit = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            bound * (2.0 * unit - 1.0)
        })
        .collect();
    ProbeMatrix::from_rows(k, d, weights)
}

/// Sentence vectors widened to `f64` for optimisation.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Embeddings {
    pub fn new(n: usize, dim: usize, data: Vec<f64>) -> Result<Self, ProbeError> {
        if data.len() != n * dim {
            return Err(ProbeError::DimensionMismatch {
                expected: n * dim,
                actual: data.len(),
            });
        }
        Ok(Embeddings { n, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ProbeError> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(ProbeError::DimensionMismatch {
                    expected: dim,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

impl From<&EmbeddingSet> for Embeddings {
    fn from(set: &EmbeddingSet) -> Self {
        Embeddings {
            n: set.n_sentences(),
            dim: set.dim(),
            data: set.data().iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

/// Embeddings of one split together with its labels.
#[derive(Debug, Clone, Copy)]
pub struct LabeledData<'a> {
    pub embeddings: &'a Embeddings,
    pub labels: &'a LabelSet,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
