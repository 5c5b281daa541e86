//! Evaluation: Spearman correlation for STS, triplet accuracy, and
//! cosine-sign accuracy for premise–hypothesis pairs.

use serde::{Deserialize, Serialize};

use crate::probe::{dot, norm, Embeddings, LabeledData, ProbeError, ProbeMatrix, ZERO_NORM};
use crate::store::{ClassPair, LabelSet, NliClass, StsPair, Task, Triplet};

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least two observations, got {0}")]
    TooShort(usize),
    #[error("constant input: rank correlation undefined")]
    ConstantInput,
    #[error("non-finite input at position {0}")]
    NonFinite(usize),
    #[error("empty evaluation set")]
    Empty,
    #[error(transparent)]
    Probe(Box<ProbeError>),
}

impl From<ProbeError> for MetricError {
    fn from(e: ProbeError) -> Self {
        MetricError::Probe(Box::new(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Spearman,
    TripletAccuracy,
    CosineAccuracy,
}

impl MetricKind {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Sts => MetricKind::Spearman,
            Task::TeTriplet => MetricKind::TripletAccuracy,
            Task::TePair => MetricKind::CosineAccuracy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub kind: MetricKind,
    pub value: f64,
    /// Items evaluated.
    pub n: usize,
    /// Degenerate items, counted as misses.
    pub skipped: usize,
}

/// Fractional ranks starting at 1; tied values share their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, MetricError> {
    if xs.len() != ys.len() {
        return Err(MetricError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(MetricError::TooShort(xs.len()));
    }
    for v in [xs, ys] {
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(MetricError::NonFinite(i));
        }
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let mean = (xs.len() + 1) as f64 / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (dx, dy) = (a - mean, b - mean);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::ConstantInput);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Projected distances of every STS pair, in input order.
pub fn projected_distances(
    probe: &ProbeMatrix,
    embeddings: &Embeddings,
    pairs: &[StsPair],
) -> Result<Vec<f64>, MetricError> {
    pairs
        .iter()
        .map(|p| {
            probe
                .projected_distance(embeddings.row(p.a), embeddings.row(p.b))
                .map_err(MetricError::from)
        })
        .collect()
}

/// Spearman correlation between projected distance and difference label.
pub fn sts_spearman(
    probe: &ProbeMatrix,
    embeddings: &Embeddings,
    pairs: &[StsPair],
) -> Result<MetricValue, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty);
    }
    let dists = projected_distances(probe, embeddings, pairs)?;
    let labels: Vec<f64> = pairs.iter().map(|p| p.difference).collect();
    Ok(MetricValue {
        kind: MetricKind::Spearman,
        value: spearman(&dists, &labels)?,
        n: pairs.len(),
        skipped: 0,
    })
}

/// Fraction of triples with `q < r`. Ties are misses.
pub fn triplet_accuracy(
    probe: &ProbeMatrix,
    embeddings: &Embeddings,
    triples: &[Triplet],
) -> Result<MetricValue, MetricError> {
    if triples.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut hits = 0;
    for t in triples {
        let p = embeddings.row(t.premise);
        let q = probe.projected_distance(p, embeddings.row(t.entailment))?;
        let r = probe.projected_distance(p, embeddings.row(t.contradiction))?;
        if q < r {
            hits += 1;
        }
    }
    Ok(MetricValue {
        kind: MetricKind::TripletAccuracy,
        value: hits as f64 / triples.len() as f64,
        n: triples.len(),
        skipped: 0,
    })
}

/// Entailment is correct when `cos > 0`, contradiction when `cos ≤ 0`.
/// Degenerate projections are misses and counted in `skipped`.
pub fn cosine_accuracy(
    probe: &ProbeMatrix,
    embeddings: &Embeddings,
    pairs: &[ClassPair],
) -> Result<MetricValue, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut hits = 0;
    let mut skipped = 0;
    for pair in pairs {
        let a = probe.project(embeddings.row(pair.premise))?;
        let b = probe.project(embeddings.row(pair.hypothesis))?;
        let (na, nb) = (norm(&a), norm(&b));
        if na < ZERO_NORM || nb < ZERO_NORM {
            skipped += 1;
            continue;
        }
        let cos = dot(&a, &b) / (na * nb);
        let correct = match pair.class {
            NliClass::Entailment => cos > 0.0,
            NliClass::Contradiction => cos <= 0.0,
        };
        if correct {
            hits += 1;
        }
    }
    Ok(MetricValue {
        kind: MetricKind::CosineAccuracy,
        value: hits as f64 / pairs.len() as f64,
        n: pairs.len(),
        skipped,
    })
}

/// Task metric of `probe` on one labelled split.
pub fn evaluate(probe: &ProbeMatrix, data: LabeledData<'_>) -> Result<MetricValue, MetricError> {
    match data.labels {
        LabelSet::Sts(pairs) => sts_spearman(probe, data.embeddings, pairs),
        LabelSet::Triplets(triples) => triplet_accuracy(probe, data.embeddings, triples),
        LabelSet::Pairs(pairs) => cosine_accuracy(probe, data.embeddings, pairs),
    }
}
