//! Linear subspace probes over layer-wise sentence embeddings.
//!
//! A probe is a `k × d` matrix `M` fitted so that geometry in the projected
//! space reads off a semantic task: Euclidean distance for graded
//! similarity, relative distance for (premise, entailment, contradiction)
//! triples, and cosine sign for premise–hypothesis pairs. Learning `M` is
//! learning the metric `MᵀM` on the embedding space.
//!
//! * [`store`]: binary layer files, manifests, label files
//! * [`probe`]: probe matrix, losses and gradients, AdamW, training loop
//! * [`metrics`]: Spearman correlation and accuracies
//! * [`sweep`]: dims × layers × runs grids and their max-aggregations
//! * [`report`]: CSV / JSON / SVG outputs
//! * [`synth`]: synthetic stores with a planted metric

pub mod metrics;
pub mod probe;
pub mod report;
pub mod store;
pub mod sweep;
pub mod synth;

pub use metrics::{MetricKind, MetricValue};
pub use probe::{Embeddings, FitResult, LabeledData, ProbeMatrix, TrainConfig};
pub use store::{EmbeddingSet, LabelSet, Split, Store, Task};
pub use sweep::{DimSpec, LayerProfile, ResultGrid, SweepSpec};
