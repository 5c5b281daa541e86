use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semprobe_core::metrics::{evaluate, spearman};
use semprobe_core::probe::{fit, init_probe, loss_gradient};
use semprobe_core::store::{ClassPair, NliClass, StsPair, Triplet};
use semprobe_core::{Embeddings, LabelSet, LabeledData, Task, TrainConfig};

const D: usize = 1024;
const N: usize = 512;

fn embeddings(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Embeddings {
    let data = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Embeddings::new(n, d, data).unwrap()
}

fn batch(rng: &mut ChaCha8Rng, task: Task, len: usize, n: usize) -> LabelSet {
    match task {
        Task::Sts => LabelSet::Sts(
            (0..len)
                .map(|_| StsPair {
                    a: rng.gen_range(0..n),
                    b: rng.gen_range(0..n),
                    difference: rng.gen(),
                })
                .collect(),
        ),
        Task::TeTriplet => LabelSet::Triplets(
            (0..len)
                .map(|_| Triplet {
                    premise: rng.gen_range(0..n),
                    entailment: rng.gen_range(0..n),
                    contradiction: rng.gen_range(0..n),
                })
                .collect(),
        ),
        Task::TePair => LabelSet::Pairs(
            (0..len)
                .map(|i| ClassPair {
                    premise: rng.gen_range(0..n),
                    hypothesis: rng.gen_range(0..n),
                    class: if i % 2 == 0 {
                        NliClass::Entailment
                    } else {
                        NliClass::Contradiction
                    },
                })
                .collect(),
        ),
    }
}

fn bench_loss_gradient(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = embeddings(&mut rng, N, D);
    let mut group = c.benchmark_group("loss_gradient");
    for task in [Task::Sts, Task::TeTriplet, Task::TePair] {
        let labels = batch(&mut rng, task, 64, N);
        for k in [8, 64, 512] {
            let probe = init_probe(k, D, 1).unwrap();
            group.bench_with_input(BenchmarkId::new(task.to_string(), k), &k, |b, _| {
                b.iter(|| loss_gradient(black_box(&probe), &x, &labels).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_spearman(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("spearman");
    for n in [1_500, 10_000] {
        // Rounded to create ties.
        let xs: Vec<f64> = (0..n).map(|_| (rng.gen::<f64>() * 100.0).round()).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| spearman(black_box(&xs), black_box(&ys)).unwrap())
        });
    }
    group.finish();
}

fn bench_fit_epoch(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = embeddings(&mut rng, N, D);
    let train = batch(&mut rng, Task::Sts, 2_000, N);
    let dev = batch(&mut rng, Task::Sts, 500, N);
    let config = TrainConfig {
        max_epochs: 1,
        patience: None,
        ..TrainConfig::for_task(Task::Sts)
    };
    let view = |labels| LabeledData {
        embeddings: &x,
        labels,
    };
    let mut group = c.benchmark_group("fit_epoch_sts");
    group.sample_size(10);
    for k in [8, 64] {
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, &k| {
            b.iter(|| {
                fit(
                    init_probe(k, D, 3).unwrap(),
                    view(&train),
                    view(&dev),
                    &config,
                    |m, data| evaluate(m, data).map(|v| v.value),
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_loss_gradient, bench_spearman, bench_fit_epoch);
criterion_main!(benches);
