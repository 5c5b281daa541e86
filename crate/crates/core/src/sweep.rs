//! The experimental grid: subspace dimensions × layers × runs.
//!
//! Every `(dim, layer, run)` cell is fitted independently with a seed mixed
//! from the base seed and its coordinates, so results do not depend on
//! execution order or thread count.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::metrics::{evaluate, MetricKind};
use crate::probe::{fit, init_probe, Embeddings, LabeledData, ProbeMatrix, TrainConfig};
use crate::store::{LabelSet, Split, Store, StoreError, Task};

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("invalid sweep spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// A row of the result grid: a probe rank or the unprojected baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DimSpec {
    Rank(usize),
    /// Raw embeddings, no projection (`d'`).
    Identity,
}

impl DimSpec {
    pub const IDENTITY_LABEL: &'static str = "d'";

    fn seed_code(self) -> u64 {
        match self {
            DimSpec::Rank(k) => k as u64,
            DimSpec::Identity => u64::MAX,
        }
    }
}

impl fmt::Display for DimSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DimSpec::Rank(k) => write!(f, "{k}"),
            DimSpec::Identity => f.write_str(Self::IDENTITY_LABEL),
        }
    }
}

impl Serialize for DimSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            DimSpec::Rank(k) => s.serialize_u64(*k as u64),
            DimSpec::Identity => s.serialize_str(Self::IDENTITY_LABEL),
        }
    }
}

impl<'de> Deserialize<'de> for DimSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Token {
            Rank(usize),
            Tag(String),
        }
        match Token::deserialize(d)? {
            Token::Rank(k) => Ok(DimSpec::Rank(k)),
            Token::Tag(t) if t == DimSpec::IDENTITY_LABEL => Ok(DimSpec::Identity),
            Token::Tag(t) => Err(serde::de::Error::custom(format!(
                "dimension must be an integer or \"d'\", got {t:?}"
            ))),
        }
    }
}

/// Powers of two 2..=512 below `d`, then `d`, then the identity baseline.
pub fn default_dims(d: usize) -> Vec<DimSpec> {
    let mut dims: Vec<DimSpec> = (1..=9)
        .map(|p| 1usize << p)
        .filter(|&k| k < d)
        .map(DimSpec::Rank)
        .collect();
    dims.push(DimSpec::Rank(d));
    dims.push(DimSpec::Identity);
    dims
}

/// STS averages 10 runs; TE runs once.
pub fn default_runs(task: Task) -> usize {
    match task {
        Task::Sts => 10,
        Task::TeTriplet | Task::TePair => 1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub model_id: String,
    pub task: Task,
    pub dims: Vec<DimSpec>,
    pub layers: Vec<usize>,
    pub runs: usize,
    pub base_seed: u64,
    pub train: TrainConfig,
}

impl SweepSpec {
    /// Full default grid over every layer of `store`.
    pub fn defaults_for(store: &Store, base_seed: u64) -> Self {
        let task = store.task();
        SweepSpec {
            model_id: store.model_id().to_owned(),
            task,
            dims: default_dims(store.dim()),
            layers: (0..store.layer_count()).collect(),
            runs: default_runs(task),
            base_seed,
            train: TrainConfig::for_task(task),
        }
    }

    pub fn validate(&self, d: usize, layer_count: usize) -> Result<(), SweepError> {
        let bad = |m: String| Err(SweepError::Spec(m));
        if self.dims.is_empty() {
            return bad("dims is empty".into());
        }
        if self.layers.is_empty() {
            return bad("layers is empty".into());
        }
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.train.loss_kind != self.task {
            return bad(format!(
                "train.loss_kind {} does not match task {}",
                self.train.loss_kind, self.task
            ));
        }
        self.train
            .validate()
            .or_else(|e| bad(e.to_string()))?;
        let identity_count = self.dims.iter().filter(|d| **d == DimSpec::Identity).count();
        if identity_count > 1 || (identity_count == 1 && self.dims.last() != Some(&DimSpec::Identity)) {
            return bad("the identity baseline d' may appear once, last".into());
        }
        let ranks: Vec<usize> = self
            .dims
            .iter()
            .filter_map(|d| match d {
                DimSpec::Rank(k) => Some(*k),
                DimSpec::Identity => None,
            })
            .collect();
        if let Some(&k) = ranks.iter().find(|&&k| k == 0 || k > d) {
            return bad(format!("dimension {k} outside 1..={d}"));
        }
        if ranks.windows(2).any(|w| w[0] >= w[1]) {
            return bad("dims must be strictly ascending".into());
        }
        if let Some(&l) = self.layers.iter().find(|&&l| l >= layer_count) {
            return bad(format!("layer {l} outside 0..{layer_count}"));
        }
        if self.layers.windows(2).any(|w| w[0] >= w[1]) {
            return bad("layers must be strictly ascending".into());
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one cell run.
pub fn cell_seed(base_seed: u64, dim: DimSpec, layer: usize, run: usize) -> u64 {
    [dim.seed_code(), layer as u64, run as u64]
        .into_iter()
        .fold(splitmix64(base_seed), |h, v| splitmix64(h ^ v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub test_metric: f64,
    pub best_dev_metric: Option<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub degenerate_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Ok {
        mean: f64,
        std: f64,
        runs: Vec<RunRecord>,
    },
    Failed {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub dim: DimSpec,
    pub layer: usize,
    #[serde(flatten)]
    pub outcome: CellOutcome,
}

impl Cell {
    pub fn mean(&self) -> Option<f64> {
        match self.outcome {
            CellOutcome::Ok { mean, .. } => Some(mean),
            CellOutcome::Failed { .. } => None,
        }
    }

    pub fn std(&self) -> Option<f64> {
        match self.outcome {
            CellOutcome::Ok { std, .. } => Some(std),
            CellOutcome::Failed { .. } => None,
        }
    }
}

/// Test metrics indexed `[dim][layer]`, in sweep order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultGrid {
    pub model_id: String,
    pub task: Task,
    pub metric_kind: MetricKind,
    pub dims: Vec<DimSpec>,
    pub layers: Vec<usize>,
    /// Layers in the model, embedding layer included.
    pub layer_count: usize,
    pub runs: usize,
    pub cells: Vec<Vec<Cell>>,
}

/// Mean and standard deviation (n − 1 denominator; 0 for a single run).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl ResultGrid {
    /// A single-run grid from a plain matrix of means, e.g. a published
    /// table.
    pub fn from_means(
        model_id: &str,
        task: Task,
        dims: Vec<DimSpec>,
        layers: Vec<usize>,
        layer_count: usize,
        means: &[Vec<f64>],
    ) -> Result<Self, SweepError> {
        if means.len() != dims.len() || means.iter().any(|row| row.len() != layers.len()) {
            return Err(SweepError::Spec("matrix shape does not match dims × layers".into()));
        }
        let cells = dims
            .iter()
            .zip(means)
            .map(|(&dim, row)| {
                layers
                    .iter()
                    .zip(row)
                    .map(|(&layer, &mean)| Cell {
                        dim,
                        layer,
                        outcome: CellOutcome::Ok {
                            mean,
                            std: 0.0,
                            runs: Vec::new(),
                        },
                    })
                    .collect()
            })
            .collect();
        Ok(ResultGrid {
            model_id: model_id.to_owned(),
            task,
            metric_kind: MetricKind::for_task(task),
            dims,
            layers,
            layer_count,
            runs: 1,
            cells,
        })
    }

    pub fn mean_matrix(&self) -> Vec<Vec<Option<f64>>> {
        self.cells
            .iter()
            .map(|row| row.iter().map(Cell::mean).collect())
            .collect()
    }

    pub fn std_matrix(&self) -> Vec<Vec<Option<f64>>> {
        self.cells
            .iter()
            .map(|row| row.iter().map(Cell::std).collect())
            .collect()
    }

    pub fn failures(&self) -> impl Iterator<Item = &Cell> {
        self.cells
            .iter()
            .flatten()
            .filter(|c| matches!(c.outcome, CellOutcome::Failed { .. }))
    }

    pub fn relative_position(&self, layer: usize) -> f64 {
        if self.layer_count < 2 {
            return 0.0;
        }
        layer as f64 / (self.layer_count - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub layer: usize,
    /// `layer / (layer_count − 1)`: 0 is the embedding layer, 1 the last.
    pub relative_position: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub points: Vec<ProfilePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimPoint {
    pub dim: DimSpec,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimProfile {
    pub points: Vec<DimPoint>,
}

fn max_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    values.flatten().fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
}

/// Per layer, the maximum mean over all dims (identity row included).
/// Layers whose cells all failed are omitted.
pub fn collapse_by_layer(grid: &ResultGrid) -> LayerProfile {
    let points = grid
        .layers
        .iter()
        .enumerate()
        .filter_map(|(j, &layer)| {
            max_of(grid.cells.iter().map(|row| row[j].mean())).map(|value| ProfilePoint {
                layer,
                relative_position: grid.relative_position(layer),
                value,
            })
        })
        .collect();
    LayerProfile { points }
}

/// Per dim, the maximum mean over all swept layers.
pub fn collapse_by_dim(grid: &ResultGrid) -> DimProfile {
    let points = grid
        .dims
        .iter()
        .zip(&grid.cells)
        .filter_map(|(&dim, row)| {
            max_of(row.iter().map(Cell::mean)).map(|value| DimPoint { dim, value })
        })
        .collect();
    DimProfile { points }
}

struct SplitData {
    embeddings: Embeddings,
    labels: LabelSet,
}

impl SplitData {
    fn view(&self) -> LabeledData<'_> {
        LabeledData {
            embeddings: &self.embeddings,
            labels: &self.labels,
        }
    }
}

fn run_one(
    spec: &SweepSpec,
    dim: DimSpec,
    layer: usize,
    run: usize,
    train: &SplitData,
    dev: &SplitData,
    test: &SplitData,
) -> Result<RunRecord, String> {
    let seed = cell_seed(spec.base_seed, dim, layer, run);
    let d = test.embeddings.dim();
    match dim {
        DimSpec::Identity => {
            let probe = ProbeMatrix::identity(d).map_err(|e| e.to_string())?;
            let value = evaluate(&probe, test.view()).map_err(|e| e.to_string())?;
            Ok(RunRecord {
                run,
                seed,
                test_metric: value.value,
                best_dev_metric: None,
                best_epoch: 0,
                epochs_run: 0,
                stopped_early: false,
                degenerate_skipped: value.skipped,
            })
        }
        DimSpec::Rank(k) => {
            let config = TrainConfig {
                seed,
                ..spec.train.clone()
            };
            let init = init_probe(k, d, seed).map_err(|e| e.to_string())?;
            let result = fit(init, train.view(), dev.view(), &config, |probe, data| {
                evaluate(probe, data).map(|m| m.value)
            })
            .map_err(|e| e.to_string())?;
            let value = evaluate(&result.best_probe, test.view()).map_err(|e| e.to_string())?;
            Ok(RunRecord {
                run,
                seed,
                test_metric: value.value,
                best_dev_metric: Some(result.best_dev_metric),
                best_epoch: result.best_epoch,
                epochs_run: result.epochs_run,
                stopped_early: result.stopped_early,
                degenerate_skipped: result.degenerate_skipped,
            })
        }
    }
}

fn load_layer(store: &Store, split: Split, layer: usize, labels: &LabelSet) -> Result<SplitData, String> {
    let set = store
        .split(split)
        .load_layer(layer)
        .map_err(|e| format!("{} layer {layer}: {e}", split.dir_name()))?;
    Ok(SplitData {
        embeddings: Embeddings::from(&set),
        labels: labels.clone(),
    })
}

/// Runs every cell of `spec` against `store`. Cell failures are recorded in
/// the grid; only an invalid spec or unreadable labels abort. `jobs` caps
/// worker threads (`None`: one per core).
pub fn run_sweep(spec: &SweepSpec, store: &Store, jobs: Option<usize>) -> Result<ResultGrid, SweepError> {
    spec.validate(store.dim(), store.layer_count())?;
    if spec.task != store.task() {
        return Err(SweepError::Spec(format!(
            "spec task {} does not match store task {}",
            spec.task,
            store.task()
        )));
    }
    let labels: Vec<LabelSet> = Split::ALL
        .iter()
        .map(|&s| store.split(s).labels().map(|l| l.set))
        .collect::<Result<_, _>>()?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| SweepError::ThreadPool(e.to_string()))?;

    let mut columns: Vec<Vec<Cell>> = Vec::with_capacity(spec.layers.len());
    for &layer in &spec.layers {
        let loaded: Result<Vec<SplitData>, String> = Split::ALL
            .iter()
            .zip(&labels)
            .map(|(&split, l)| load_layer(store, split, layer, l))
            .collect();

        let column = match loaded {
            Err(reason) => spec
                .dims
                .iter()
                .map(|&dim| Cell {
                    dim,
                    layer,
                    outcome: CellOutcome::Failed {
                        reason: reason.clone(),
                    },
                })
                .collect(),
            Ok(data) => {
                let (train, dev, test) = (&data[0], &data[1], &data[2]);
                let jobs_list: Vec<(DimSpec, usize)> = spec
                    .dims
                    .iter()
                    .flat_map(|&dim| {
                        let runs = if dim == DimSpec::Identity { 1 } else { spec.runs };
                        (0..runs).map(move |run| (dim, run))
                    })
                    .collect();
                let records: Vec<Result<RunRecord, String>> = pool.install(|| {
                    jobs_list
                        .par_iter()
                        .map(|&(dim, run)| run_one(spec, dim, layer, run, train, dev, test))
                        .collect()
                });

                let mut it = jobs_list.iter().zip(records).peekable();
                let mut cells = Vec::with_capacity(spec.dims.len());
                for &dim in &spec.dims {
                    let mut runs = Vec::new();
                    let mut failure = None;
                    while let Some(((d, run), rec)) = it.next_if(|((d, _), _)| *d == dim) {
                        debug_assert_eq!(*d, dim);
                        match rec {
                            Ok(r) => runs.push(r),
                            Err(e) if failure.is_none() => failure = Some(format!("run {run}: {e}")),
                            Err(_) => {}
                        }
                    }
                    let outcome = match failure {
                        Some(reason) => CellOutcome::Failed { reason },
                        None => {
                            let values: Vec<f64> = runs.iter().map(|r| r.test_metric).collect();
                            let (mean, std) = mean_std(&values);
                            CellOutcome::Ok { mean, std, runs }
                        }
                    };
                    cells.push(Cell { dim, layer, outcome });
                }
                cells
            }
        };
        columns.push(column);
    }

    // columns are [layer][dim]; the grid is [dim][layer]
    let mut cells: Vec<Vec<Cell>> = spec.dims.iter().map(|_| Vec::new()).collect();
    for column in columns {
        for (row, cell) in cells.iter_mut().zip(column) {
            row.push(cell);
        }
    }

    Ok(ResultGrid {
        model_id: spec.model_id.clone(),
        task: spec.task,
        metric_kind: MetricKind::for_task(spec.task),
        dims: spec.dims.clone(),
        layers: spec.layers.clone(),
        layer_count: store.layer_count(),
        runs: spec.runs,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn grid(means: &[Vec<f64>], layers: Vec<usize>, layer_count: usize) -> ResultGrid {
        let dims = (1..=means.len()).map(|p| DimSpec::Rank(1 << p)).collect();
        ResultGrid::from_means("m", Task::Sts, dims, layers, layer_count, means).unwrap()
    }

    #[test]
    fn default_dims_for_bert_large() {
        let dims = default_dims(1024);
        assert_eq!(dims.len(), 11);
        assert_eq!(dims[0], DimSpec::Rank(2));
        assert_eq!(dims[8], DimSpec::Rank(512));
        assert_eq!(dims[9], DimSpec::Rank(1024));
        assert_eq!(dims[10], DimSpec::Identity);
        // d that is itself a power of two is not repeated
        assert_eq!(default_dims(256).len(), 9);
    }

    #[test]
    fn dim_spec_json() {
        let dims = vec![DimSpec::Rank(8), DimSpec::Identity];
        let json = serde_json::to_string(&dims).unwrap();
        assert_eq!(json, r#"[8,"d'"]"#);
        assert_eq!(serde_json::from_str::<Vec<DimSpec>>(&json).unwrap(), dims);
        assert!(serde_json::from_str::<DimSpec>(r#""x""#).is_err());
    }

    #[test]
    fn spec_validation() {
        let mut spec = SweepSpec {
            model_id: "m".into(),
            task: Task::Sts,
            dims: vec![DimSpec::Rank(2), DimSpec::Rank(4), DimSpec::Identity],
            layers: vec![0, 1],
            runs: 1,
            base_seed: 0,
            train: TrainConfig::for_task(Task::Sts),
        };
        assert!(spec.validate(8, 2).is_ok());
        spec.dims = vec![DimSpec::Identity, DimSpec::Rank(2)];
        assert!(spec.validate(8, 2).is_err());
        spec.dims = vec![DimSpec::Rank(4), DimSpec::Rank(2)];
        assert!(spec.validate(8, 2).is_err());
        spec.dims = vec![DimSpec::Rank(16)];
        assert!(spec.validate(8, 2).is_err());
        spec.dims = vec![DimSpec::Rank(2)];
        spec.layers = vec![2];
        assert!(spec.validate(8, 2).is_err());
    }

    #[test]
    fn cell_seeds_are_distinct() {
        let mut seen = HashSet::new();
        let mut dims: Vec<DimSpec> = default_dims(1024);
        dims.push(DimSpec::Rank(3));
        for dim in dims {
            for layer in 0..49 {
                for run in 0..10 {
                    assert!(seen.insert(cell_seed(7, dim, layer, run)));
                }
            }
        }
        assert_ne!(cell_seed(0, DimSpec::Rank(2), 0, 0), cell_seed(1, DimSpec::Rank(2), 0, 0));
    }

    #[test]
    fn mean_std_conventions() {
        assert_eq!(mean_std(&[0.3]), (0.3, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn collapse_single_row_and_column() {
        let row = grid(&[vec![0.1, 0.5, 0.3]], vec![0, 1, 2], 3);
        let by_layer = collapse_by_layer(&row);
        let values: Vec<f64> = by_layer.points.iter().map(|p| p.value).collect();
        assert_eq!(values, vec![0.1, 0.5, 0.3]);
        let positions: Vec<f64> = by_layer.points.iter().map(|p| p.relative_position).collect();
        assert_eq!(positions, vec![0.0, 0.5, 1.0]);

        let col = grid(&[vec![0.2], vec![0.7], vec![0.4]], vec![1], 3);
        let by_dim: Vec<f64> = collapse_by_dim(&col).points.iter().map(|p| p.value).collect();
        assert_eq!(by_dim, vec![0.2, 0.7, 0.4]);
    }

    #[test]
    fn collapse_constant_grid() {
        let g = grid(&[vec![0.4; 4], vec![0.4; 4]], vec![0, 1, 2, 3], 4);
        assert!(collapse_by_layer(&g).points.iter().all(|p| p.value == 0.4));
        assert!(collapse_by_dim(&g).points.iter().all(|p| p.value == 0.4));
    }

    #[test]
    fn failed_cells_are_skipped_by_collapse() {
        let mut g = grid(&[vec![0.1, 0.9], vec![0.5, 0.2]], vec![0, 1], 2);
        g.cells[1][0].outcome = CellOutcome::Failed { reason: "x".into() };
        g.cells[0][0].outcome = CellOutcome::Failed { reason: "y".into() };
        let profile = collapse_by_layer(&g);
        assert_eq!(profile.points.len(), 1);
        assert_eq!(profile.points[0].layer, 1);
        assert_eq!(g.failures().count(), 2);
    }

    proptest::proptest! {
        #[test]
        fn profile_dominates_every_row(
            values in proptest::collection::vec(-1.0f64..1.0, 12),
            extra in proptest::collection::vec(-1.0f64..1.0, 4),
        ) {
            let means: Vec<Vec<f64>> = values.chunks(4).map(<[f64]>::to_vec).collect();
            let g = grid(&means, vec![0, 1, 2, 3], 4);
            let profile = collapse_by_layer(&g);
            for (j, point) in profile.points.iter().enumerate() {
                proptest::prop_assert!(means.iter().all(|row| point.value >= row[j]));
                proptest::prop_assert!(means.iter().any(|row| point.value == row[j]));
            }
            let mut bigger = means.clone();
            bigger.push(extra);
            let g2 = grid(&bigger, vec![0, 1, 2, 3], 4);
            for (a, b) in profile.points.iter().zip(collapse_by_layer(&g2).points) {
                proptest::prop_assert!(b.value >= a.value);
            }
        }
    }
}
