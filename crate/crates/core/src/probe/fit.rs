use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adamw_step, loss_gradient, AdamState, AdamWParams, LabeledData, ProbeError, ProbeMatrix};
use crate::metrics::MetricError;
use crate::store::{LabelSet, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss_kind: Task,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Evaluations without strict improvement before stopping; `None` runs
    /// all `max_epochs`.
    pub patience: Option<usize>,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub adamw: AdamWParams,
    pub eval_every: usize,
}

impl TrainConfig {
    /// STS: up to 300 epochs, stop after 10 evaluations without improvement.
    /// TE: exactly 5 epochs, keep the best dev checkpoint.
    pub fn for_task(task: Task) -> Self {
        let (max_epochs, patience) = match task {
            Task::Sts => (300, Some(10)),
            Task::TeTriplet | Task::TePair => (5, None),
        };
        TrainConfig {
            loss_kind: task,
            learning_rate: 1e-5,
            max_epochs,
            patience,
            batch_size: 64,
            seed: 0,
            adamw: AdamWParams::default(),
            eval_every: 1,
        }
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        let bad = |msg: &str| Err(ProbeError::Config(msg.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if self.patience == Some(0) {
            return bad("patience must be at least 1 when set");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub best_probe: ProbeMatrix,
    pub best_dev_metric: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub dev_history: Vec<(usize, f64)>,
    pub stopped_early: bool,
    /// Degenerate cosine pairs skipped across all gradient steps.
    pub degenerate_skipped: usize,
}

fn gather(labels: &LabelSet, order: &[usize]) -> LabelSet {
    match labels {
        LabelSet::Sts(v) => LabelSet::Sts(order.iter().map(|&i| v[i]).collect()),
        LabelSet::Pairs(v) => LabelSet::Pairs(order.iter().map(|&i| v[i]).collect()),
        LabelSet::Triplets(v) => LabelSet::Triplets(order.iter().map(|&i| v[i]).collect()),
    }
}

/// Trains `init` on `train`, scoring `dev` with `eval_fn` (higher is
/// better) and keeping the best snapshot.
///
/// The train order is reshuffled every epoch from a ChaCha8 stream keyed by
/// `config.seed`. Only a strictly greater dev metric counts as improvement.
pub fn fit<F>(
    init: ProbeMatrix,
    train: LabeledData<'_>,
    dev: LabeledData<'_>,
    config: &TrainConfig,
    mut eval_fn: F,
) -> Result<FitResult, ProbeError>
where
    F: FnMut(&ProbeMatrix, LabeledData<'_>) -> Result<f64, MetricError>,
{
    config.validate()?;
    if train.labels.is_empty() {
        return Err(ProbeError::EmptySet("train"));
    }
    if dev.labels.is_empty() {
        return Err(ProbeError::EmptySet("dev"));
    }
    for labels in [train.labels, dev.labels] {
        if labels.task() != config.loss_kind {
            return Err(ProbeError::TaskMismatch {
                expected: config.loss_kind,
                found: labels.task(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(super::SHUFFLE_STREAM);

    let mut probe = init;
    let mut state = AdamState::zeros(probe.weights().len());
    let mut order: Vec<usize> = (0..train.labels.len()).collect();

    let mut best: Option<(f64, usize, ProbeMatrix)> = None;
    let mut history = Vec::new();
    let mut since_improvement = 0;
    let mut stopped_early = false;
    let mut epochs_run = 0;
    let mut degenerate_skipped = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch = gather(train.labels, chunk);
            let out = loss_gradient(&probe, train.embeddings, &batch)?;
            degenerate_skipped += out.skipped;
            if out.used == 0 {
                continue;
            }
            adamw_step(&mut probe, &out.gradient, &mut state, config.learning_rate, &config.adamw)?;
        }
        epochs_run = epoch;

        if epoch % config.eval_every != 0 && epoch != config.max_epochs {
            continue;
        }
        let metric = eval_fn(&probe, dev)?;
        if !metric.is_finite() {
            return Err(ProbeError::NonFiniteMetric { epoch });
        }
        history.push((epoch, metric));
        if best.as_ref().is_none_or(|(b, _, _)| metric > *b) {
            best = Some((metric, epoch, probe.clone()));
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if config.patience.is_some_and(|p| since_improvement >= p) {
                stopped_early = epoch < config.max_epochs;
                break;
            }
        }
    }

    let (best_dev_metric, best_epoch, best_probe) =
        best.expect("at least one evaluation happens on the final epoch");
    Ok(FitResult {
        best_probe,
        best_dev_metric,
        best_epoch,
        epochs_run,
        dev_history: history,
        stopped_early,
        degenerate_skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::{init_probe, Embeddings};
    use crate::store::StsPair;

    fn toy() -> (Embeddings, LabelSet) {
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|i| vec![(i as f64 * 0.7).sin(), (i as f64 * 1.3).cos(), i as f64 * 0.1])
            .collect();
        let emb = Embeddings::from_rows(&rows).unwrap();
        let pairs = (0..11)
            .map(|i| StsPair {
                a: i,
                b: i + 1,
                difference: (i as f64) / 11.0,
            })
            .collect();
        (emb, LabelSet::Sts(pairs))
    }

    fn config() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            learning_rate: 1e-2,
            ..TrainConfig::for_task(Task::Sts)
        }
    }

    #[test]
    fn constant_metric_stops_after_patience() {
        let (emb, labels) = toy();
        let data = LabeledData { embeddings: &emb, labels: &labels };
        let out = fit(init_probe(2, 3, 1).unwrap(), data, data, &config(), |_, _| Ok(0.5)).unwrap();
        assert_eq!(out.epochs_run, 11);
        assert!(out.stopped_early);
        assert_eq!(out.best_epoch, 1);
        assert_eq!(out.dev_history.len(), 11);
    }

    #[test]
    fn fixed_epochs_without_patience() {
        let (emb, labels) = toy();
        let data = LabeledData { embeddings: &emb, labels: &labels };
        let cfg = TrainConfig {
            max_epochs: 5,
            patience: None,
            ..config()
        };
        let out = fit(init_probe(2, 3, 1).unwrap(), data, data, &cfg, |_, _| Ok(0.5)).unwrap();
        assert_eq!(out.epochs_run, 5);
        assert!(!out.stopped_early);
    }

    #[test]
    fn eval_every_skips_epochs_but_always_scores_last() {
        let (emb, labels) = toy();
        let data = LabeledData { embeddings: &emb, labels: &labels };
        let cfg = TrainConfig {
            max_epochs: 7,
            patience: None,
            eval_every: 3,
            ..config()
        };
        let out = fit(init_probe(2, 3, 1).unwrap(), data, data, &cfg, |_, _| Ok(0.1)).unwrap();
        let epochs: Vec<usize> = out.dev_history.iter().map(|(e, _)| *e).collect();
        assert_eq!(epochs, vec![3, 6, 7]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (emb, labels) = toy();
        let data = LabeledData { embeddings: &emb, labels: &labels };
        let empty = LabelSet::Sts(vec![]);
        let none = LabeledData { embeddings: &emb, labels: &empty };
        let init = || init_probe(2, 3, 1).unwrap();
        assert!(matches!(
            fit(init(), none, data, &config(), |_, _| Ok(0.0)),
            Err(ProbeError::EmptySet("train"))
        ));
        assert!(matches!(
            fit(init(), data, none, &config(), |_, _| Ok(0.0)),
            Err(ProbeError::EmptySet("dev"))
        ));
        let cfg = TrainConfig { patience: Some(0), ..config() };
        assert!(fit(init(), data, data, &cfg, |_, _| Ok(0.0)).is_err());
        let cfg = TrainConfig { loss_kind: Task::TePair, ..config() };
        assert!(matches!(
            fit(init(), data, data, &cfg, |_, _| Ok(0.0)),
            Err(ProbeError::TaskMismatch { .. })
        ));
    }
}
