//! Criterion benchmarks for the probe hot paths; run with `cargo bench -p semprobe-bench`.
