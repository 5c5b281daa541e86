//! Synthetic embedding stores with a planted metric.
//!
//! Each sentence gets a latent semantic vector `z ∈ ℝᵏ`. Layer `l` with
//! signal ratio `ρ` stores
//!
//! ```text
//! x = ρ·U z + (1 − ρ)·V uₗ + σ·ε
//! ```
//!
//! where `U`, `V` are random column-orthonormal `d × k` maps, `uₗ` is a
//! per-layer nuisance latent, and `ε` is isotropic noise. A layer with
//! `ρ = 1` carries the planted metric exactly (up to noise); `ρ = 0` carries
//! none of it.
//!
//! Labels come from the latents:
//! * STS: score `5·(1 − ‖zₐ − z_b‖ / D)`, `D` the largest pair distance.
//! * TE: the first latent axis splits space into half-spaces. Entailments
//!   jitter around the premise, contradictions around its mirror image
//!   across the boundary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::store::{Dataset, EmbeddingSet, Pooling, Split, StoreError, Task};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    /// Latent (planted) dimension `k`.
    pub latent_dim: usize,
    /// Ambient embedding dimension `d`.
    pub ambient_dim: usize,
    /// Sentences per task, split 60/20/20 into train/dev/test.
    pub sentences: usize,
    pub noise_sigma: f64,
    /// Signal ratio of each layer, layer 0 first.
    pub layer_signal: Vec<f64>,
    pub seed: u64,
    /// STS pairs drawn per sentence.
    pub pairs_per_sentence: usize,
    /// Minimum distance of TE sentences from the class boundary.
    pub margin: f64,
    /// Spread of hypotheses around their premise.
    pub jitter: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            latent_dim: 8,
            ambient_dim: 256,
            sentences: 2000,
            noise_sigma: 0.05,
            layer_signal: vec![0.0, 0.5, 1.0],
            seed: 0,
            pairs_per_sentence: 2,
            margin: 0.5,
            jitter: 0.5,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Params(m));
        if self.latent_dim == 0 || self.latent_dim > self.ambient_dim {
            return bad(format!(
                "latent dimension {} must be in 1..={}",
                self.latent_dim, self.ambient_dim
            ));
        }
        if self.sentences < 30 {
            return bad(format!("need at least 30 sentences, got {}", self.sentences));
        }
        if self.layer_signal.len() < 2 {
            return bad("need at least two layers".into());
        }
        if let Some(r) = self.layer_signal.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return bad(format!("signal ratio {r} outside [0, 1]"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise sigma must be a finite non-negative number".into());
        }
        if self.pairs_per_sentence == 0 {
            return bad("pairs_per_sentence must be at least 1".into());
        }
        Ok(())
    }
}

pub const SYNTH_MODEL_ID: &str = "synthetic";

pub fn task_dir(out: &Path, task: Task) -> PathBuf {
    out.join(task.to_string())
}

fn stream_for(task: Task) -> u64 {
    match task {
        Task::Sts => 10,
        Task::TeTriplet => 11,
        Task::TePair => 12,
    }
}

fn gaussian(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `d × k` matrix with orthonormal columns, column-major.
fn orthonormal_map(rng: &mut ChaCha8Rng, d: usize, k: usize) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    while cols.len() < k {
        let mut v = gaussian(rng, d);
        for c in &cols {
            let proj: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= proj * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|a| *a /= n);
            cols.push(v);
        }
    }
    cols
}

fn lift(map: &[Vec<f64>], z: &[f64], scale: f64, out: &mut [f64]) {
    for (col, &zi) in map.iter().zip(z) {
        let s = scale * zi;
        out.iter_mut().zip(col).for_each(|(o, c)| *o += s * c);
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

struct SplitLatents {
    latents: Vec<Vec<f64>>,
    labels: String,
}

fn split_sizes(n: usize) -> [usize; 3] {
    let train = n * 3 / 5;
    let dev = n / 5;
    [train, dev, n - train - dev]
}

fn sts_splits(p: &SynthParams, rng: &mut ChaCha8Rng) -> Vec<SplitLatents> {
    let k = p.latent_dim;
    let mut raw = Vec::new();
    for m in split_sizes(p.sentences) {
        let latents: Vec<Vec<f64>> = (0..m).map(|_| gaussian(rng, k)).collect();
        let mut pairs = Vec::with_capacity(m * p.pairs_per_sentence);
        for a in 0..m {
            for _ in 0..p.pairs_per_sentence {
                let mut b = rng.gen_range(0..m - 1);
                if b >= a {
                    b += 1;
                }
                pairs.push((a, b, distance(&latents[a], &latents[b])));
            }
        }
        raw.push((latents, pairs));
    }
    let max_dist = raw
        .iter()
        .flat_map(|(_, pairs)| pairs.iter().map(|p| p.2))
        .fold(0.0f64, f64::max);
    raw.into_iter()
        .map(|(latents, pairs)| {
            let mut labels = String::new();
            for (a, b, dist) in pairs {
                let score = (5.0 * (1.0 - dist / max_dist)).clamp(0.0, 5.0);
                let _ = writeln!(labels, "{a}\t{b}\t{score}");
            }
            SplitLatents { latents, labels }
        })
        .collect()
}

/// Premise latent at least `margin` from the class boundary (axis 0).
fn premise(rng: &mut ChaCha8Rng, p: &SynthParams, side: f64) -> Vec<f64> {
    let mut z = gaussian(rng, p.latent_dim);
    z[0] = side * (p.margin + z[0].abs());
    z
}

/// Hypothesis jittered around the premise, or around its mirror image
/// across the boundary, reflected if the jitter crossed sides.
fn hypothesis(rng: &mut ChaCha8Rng, p: &SynthParams, premise: &[f64], same_side: bool) -> Vec<f64> {
    let mut z: Vec<f64> = premise
        .iter()
        .map(|&b| b + p.jitter * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let anchor = if same_side { premise[0] } else { -premise[0] };
    z[0] += anchor - premise[0];
    if z[0].signum() != anchor.signum() {
        z[0] = -z[0];
    }
    z
}

fn side(rng: &mut ChaCha8Rng) -> f64 {
    if rng.gen::<bool>() {
        1.0
    } else {
        -1.0
    }
}

fn triplet_splits(p: &SynthParams, rng: &mut ChaCha8Rng) -> Vec<SplitLatents> {
    split_sizes(p.sentences)
        .into_iter()
        .map(|m| {
            let mut latents = Vec::with_capacity(m);
            let mut labels = String::new();
            for t in 0..m / 3 {
                let s = side(rng);
                let prem = premise(rng, p, s);
                let entail = hypothesis(rng, p, &prem, true);
                let contra = hypothesis(rng, p, &prem, false);
                latents.extend([prem, entail, contra]);
                let _ = writeln!(labels, "{}\t{}\t{}", 3 * t, 3 * t + 1, 3 * t + 2);
            }
            SplitLatents { latents, labels }
        })
        .collect()
}

fn pair_splits(p: &SynthParams, rng: &mut ChaCha8Rng) -> Vec<SplitLatents> {
    split_sizes(p.sentences)
        .into_iter()
        .map(|m| {
            let mut latents = Vec::with_capacity(m);
            let mut labels = String::new();
            for t in 0..m / 2 {
                let s = side(rng);
                let entailment = rng.gen::<bool>();
                let prem = premise(rng, p, s);
                let hyp = hypothesis(rng, p, &prem, entailment);
                latents.extend([prem, hyp]);
                let class = if entailment { "entailment" } else { "contradiction" };
                let _ = writeln!(labels, "{}\t{}\t{class}", 2 * t, 2 * t + 1);
            }
            SplitLatents { latents, labels }
        })
        .collect()
}

fn embed_layers(
    p: &SynthParams,
    rng: &mut ChaCha8Rng,
    signal_map: &[Vec<f64>],
    nuisance_map: &[Vec<f64>],
    latents: &[Vec<f64>],
) -> Result<Vec<EmbeddingSet>, StoreError> {
    let d = p.ambient_dim;
    p.layer_signal
        .iter()
        .enumerate()
        .map(|(layer, &rho)| {
            let mut data = Vec::with_capacity(latents.len() * d);
            let mut x = vec![0.0; d];
            for z in latents {
                x.iter_mut().for_each(|v| *v = 0.0);
                let nuisance = gaussian(rng, p.latent_dim);
                lift(signal_map, z, rho, &mut x);
                lift(nuisance_map, &nuisance, 1.0 - rho, &mut x);
                for v in x.iter_mut() {
                    *v += p.noise_sigma * rng.sample::<f64, _>(StandardNormal);
                }
                data.extend(x.iter().map(|&v| v as f32));
            }
            EmbeddingSet::new(
                SYNTH_MODEL_ID.to_owned(),
                layer,
                latents.len(),
                d,
                Pooling::MeanTokens,
                data,
            )
        })
        .collect()
}

/// Writes `out/{sts,te_triplet,te_pair}/{train,dev,test}/`. Identical
/// parameters give identical bytes.
pub fn write_synthetic(params: &SynthParams, out: &Path) -> Result<Vec<(Task, PathBuf)>, SynthError> {
    params.validate()?;
    let mut written = Vec::new();
    for task in [Task::Sts, Task::TeTriplet, Task::TePair] {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(stream_for(task));
        let signal_map = orthonormal_map(&mut rng, params.ambient_dim, params.latent_dim);
        let nuisance_map = orthonormal_map(&mut rng, params.ambient_dim, params.latent_dim);
        let splits = match task {
            Task::Sts => sts_splits(params, &mut rng),
            Task::TeTriplet => triplet_splits(params, &mut rng),
            Task::TePair => pair_splits(params, &mut rng),
        };
        let root = task_dir(out, task);
        for (split, data) in Split::ALL.into_iter().zip(splits) {
            let layers = embed_layers(params, &mut rng, &signal_map, &nuisance_map, &data.latents)?;
            Dataset::write(&root.join(split.dir_name()), task, split, &layers, &data.labels)?;
        }
        written.push((task, root));
    }
    Ok(written)
}
