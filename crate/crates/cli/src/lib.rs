//! Commands behind the `semprobe` binary.
//!
//! A sweep is driven by a run-spec JSON document:
//!
//! ```json
//! {
//!   "store": "stores/bert-large/sts",
//!   "output_dir": "results/bert-large-sts",
//!   "dims": [2, 8, 64, "d", "d'"],
//!   "layers": [0, 12, 24],
//!   "runs": 10,
//!   "base_seed": 0,
//!   "train": { "learning_rate": 1e-5, "patience": 10 }
//! }
//! ```
//!
//! Only `store` and `output_dir` are required; relative paths resolve
//! against the spec file's directory. Unknown fields are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Deserializer, Serialize};

use semprobe_core::probe::AdamWParams;
use semprobe_core::report::{emit_dim_profile, emit_grid_csv, emit_profiles};
use semprobe_core::store::{validate_tree, Pooling};
use semprobe_core::sweep::{
    cell_seed, collapse_by_dim, collapse_by_layer, default_dims, run_sweep, DimSpec, SweepSpec,
};
use semprobe_core::synth::{write_synthetic, SynthParams};
use semprobe_core::{Split, Store, Task};

/// The files a sweep writes, in the order they are produced.
pub const SWEEP_OUTPUTS: [&str; 7] = [
    "grid.csv",
    "grid_std.csv",
    "grid.json",
    "by_layer.json",
    "profiles.svg",
    "by_dim.json",
    "run_meta.json",
];

/// A dims entry: a rank, `"d"` for the full embedding width, or `"d'"` for
/// the identity baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimToken {
    Rank(usize),
    Full,
    Identity,
}

impl DimToken {
    fn resolve(self, d: usize) -> DimSpec {
        match self {
            DimToken::Rank(k) => DimSpec::Rank(k),
            DimToken::Full => DimSpec::Rank(d),
            DimToken::Identity => DimSpec::Identity,
        }
    }
}

impl<'de> Deserialize<'de> for DimToken {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Rank(usize),
            Tag(String),
        }
        match Raw::deserialize(d)? {
            Raw::Rank(k) => Ok(DimToken::Rank(k)),
            Raw::Tag(t) if t == "d" => Ok(DimToken::Full),
            Raw::Tag(t) if t == DimSpec::IDENTITY_LABEL => Ok(DimToken::Identity),
            Raw::Tag(t) => Err(serde::de::Error::custom(format!(
                "dims entries are integers, \"d\" or \"d'\", got {t:?}"
            ))),
        }
    }
}

// Distinguishes an absent field (outer None) from an explicit null.
fn explicit<'de, D, T>(d: D) -> Result<Option<Option<T>>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    Option::<T>::deserialize(d).map(Some)
}

/// Overrides applied on top of the task's default training config.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub learning_rate: Option<f64>,
    pub max_epochs: Option<usize>,
    /// `null` disables early stopping.
    #[serde(default, deserialize_with = "explicit")]
    pub patience: Option<Option<usize>>,
    pub batch_size: Option<usize>,
    pub eval_every: Option<usize>,
    pub adamw: Option<AdamWParams>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub store: PathBuf,
    pub output_dir: PathBuf,
    /// Must match the store when given.
    pub model_id: Option<String>,
    /// Must match the store when given.
    pub task: Option<Task>,
    pub dims: Option<Vec<DimToken>>,
    pub layers: Option<Vec<usize>>,
    pub runs: Option<usize>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub train: TrainOverrides,
}

impl RunSpec {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).context("invalid run spec")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| path.display().to_string())
    }

    /// The full sweep for `store` with every default filled in.
    pub fn resolve(&self, store: &Store) -> Result<SweepSpec> {
        if let Some(id) = &self.model_id {
            ensure!(id == store.model_id(), "model_id {id:?} does not match store {:?}", store.model_id());
        }
        if let Some(task) = self.task {
            ensure!(task == store.task(), "task {task} does not match store task {}", store.task());
        }
        let mut spec = SweepSpec::defaults_for(store, self.base_seed);
        let d = store.dim();
        spec.dims = match &self.dims {
            Some(tokens) => tokens.iter().map(|t| t.resolve(d)).collect(),
            None => default_dims(d),
        };
        if let Some(layers) = &self.layers {
            spec.layers = layers.clone();
        }
        if let Some(runs) = self.runs {
            spec.runs = runs;
        }
        let t = &self.train;
        let train = &mut spec.train;
        if let Some(v) = t.learning_rate {
            train.learning_rate = v;
        }
        if let Some(v) = t.max_epochs {
            train.max_epochs = v;
        }
        if let Some(v) = t.patience {
            train.patience = v;
        }
        if let Some(v) = t.batch_size {
            train.batch_size = v;
        }
        if let Some(v) = t.eval_every {
            train.eval_every = v;
        }
        if let Some(v) = t.adamw {
            train.adamw = v;
        }
        spec.validate(d, store.layer_count())?;
        Ok(spec)
    }
}

/// Prints one line per checked file to `out`; returns whether all passed.
pub fn cmd_validate(store: &Path, out: &mut impl Write) -> Result<bool> {
    let statuses = validate_tree(store)?;
    let mut ok = true;
    for status in &statuses {
        match &status.error {
            None => writeln!(out, "ok    {}", status.path.display())?,
            Some(e) => {
                ok = false;
                writeln!(out, "FAIL  {}: {e}", status.path.display())?;
            }
        }
    }
    Ok(ok)
}

#[derive(Serialize)]
struct SeedRecord {
    dim: DimSpec,
    layer: usize,
    run: usize,
    seed: u64,
}

#[derive(Serialize)]
struct SplitMeta {
    sentence_count: usize,
    label_count: usize,
    dropped_neutral: usize,
}

#[derive(Serialize)]
struct RunMeta<'a> {
    /// As written in the run spec.
    store: String,
    model_id: &'a str,
    task: Task,
    embedding_dim: usize,
    layer_count: usize,
    pooling: Pooling,
    splits: BTreeMap<&'static str, SplitMeta>,
    sweep: &'a SweepSpec,
    seeds: Vec<SeedRecord>,
    failed_cells: usize,
}

struct DisplayPath<'a>(&'a Path);

impl fmt::Display for DisplayPath<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Forward slashes so run_meta.json is the same on every platform.
        let parts: Vec<_> = self.0.components().map(|c| c.as_os_str().to_string_lossy()).collect();
        f.write_str(&parts.join("/"))
    }
}

/// Runs the sweep described by `run_spec` and writes [`SWEEP_OUTPUTS`]
/// into its output directory. Returns the number of failed cells.
pub fn cmd_sweep(run_spec: &Path, jobs: Option<usize>) -> Result<usize> {
    let spec = RunSpec::read(run_spec)?;
    let base = run_spec.parent().unwrap_or(Path::new(""));
    let store_path = base.join(&spec.store);
    let mut report = Vec::new();
    if !cmd_validate(&store_path, &mut report)? {
        bail!(
            "store {} failed validation:\n{}",
            store_path.display(),
            String::from_utf8_lossy(&report).lines().filter(|l| l.starts_with("FAIL")).collect::<Vec<_>>().join("\n")
        );
    }
    let store = Store::open(&store_path)?;
    let sweep = spec.resolve(&store)?;
    let grid = run_sweep(&sweep, &store, jobs)?;

    let out = &base.join(&spec.output_dir);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let label = format!("{} {}", store.model_id(), store.task());
    emit_grid_csv(&grid, &out.join("grid.csv"))?;
    emit_profiles(&[(label.clone(), collapse_by_layer(&grid))], out)?;
    emit_dim_profile(&label, &collapse_by_dim(&grid), &out.join("by_dim.json"))?;

    let mut splits = BTreeMap::new();
    for split in Split::ALL {
        let ds = store.split(split);
        let labels = ds.labels()?;
        splits.insert(
            split.dir_name(),
            SplitMeta {
                sentence_count: ds.manifest.sentence_count,
                label_count: labels.set.len(),
                dropped_neutral: labels.dropped_neutral,
            },
        );
    }
    let seeds = sweep
        .dims
        .iter()
        .flat_map(|&dim| {
            let runs = if dim == DimSpec::Identity { 1 } else { sweep.runs };
            sweep.layers.iter().flat_map(move |&layer| {
                (0..runs).map(move |run| SeedRecord {
                    dim,
                    layer,
                    run,
                    seed: cell_seed(sweep.base_seed, dim, layer, run),
                })
            })
        })
        .collect();
    let failed_cells = grid.failures().count();
    let meta = RunMeta {
        store: DisplayPath(&spec.store).to_string(),
        model_id: store.model_id(),
        task: store.task(),
        embedding_dim: store.dim(),
        layer_count: store.layer_count(),
        pooling: store.pooling(),
        splits,
        sweep: &sweep,
        seeds,
        failed_cells,
    };
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    let meta_path = out.join("run_meta.json");
    fs::write(&meta_path, text).with_context(|| format!("writing {}", meta_path.display()))?;
    Ok(failed_cells)
}

/// Parameters of `semprobe synth`; unset fields keep [`SynthParams`]
/// defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynthArgs {
    pub k: Option<usize>,
    pub d: Option<usize>,
    pub n: Option<usize>,
    pub sigma: Option<f64>,
    /// Signal ratio per layer, layer 0 first.
    pub layers: Option<Vec<f64>>,
    pub seed: Option<u64>,
}

impl SynthArgs {
    pub fn params(&self) -> SynthParams {
        let mut p = SynthParams::default();
        if let Some(v) = self.k {
            p.latent_dim = v;
        }
        if let Some(v) = self.d {
            p.ambient_dim = v;
        }
        if let Some(v) = self.n {
            p.sentences = v;
        }
        if let Some(v) = self.sigma {
            p.noise_sigma = v;
        }
        if let Some(v) = &self.layers {
            p.layer_signal = v.clone();
        }
        if let Some(v) = self.seed {
            p.seed = v;
        }
        p
    }
}

/// Writes one store per task under `out`; returns their roots.
pub fn cmd_synth(args: &SynthArgs, out: &Path) -> Result<Vec<(Task, PathBuf)>> {
    Ok(write_synthetic(&args.params(), out)?)
}
