//! Robust graph structure refinement for poisoned graphs.
//!
//! The pipeline operates in two phases. Phase 1 runs before any model
//! training: node2vec embeddings are trained on the (possibly attacked)
//! input graph, every existing edge is scored by structural proximity and
//! feature similarity, a confidently clean sub-graph is extracted as the
//! intersection of the top-scoring edge sets, and kNN candidate edges are
//! precomputed for augmentation. Phase 2 trains an attention GNN on the
//! extracted sub-graph: each epoch the sub-graph is augmented with
//! candidate edges whose class predictions agree (small Jensen-Shannon
//! divergence), the edge set is split into degree groups, and a grouped
//! link-prediction loss is combined with the node classification loss.
//! Inference runs the trained attention weights over the full attacked
//! edge set, down-weighting adversarial edges during message passing.
//!
//! Module map:
//! - [`graph`]: immutable graph bundles, bundle directory I/O, degree
//!   statistics, and edge provenance.
//! - [`attack`]: poisoning simulators with ground-truth provenance tags.
//! - [`node2vec`]: biased random walks and skip-gram embeddings.
//! - [`extract`]: edge scoring, clean sub-graph extraction, kNN candidates.
//! - [`augment`]: JSD-filtered candidate injection.
//! - [`model`]: the attention GNN, exact gradients, and the training loop.
//! - [`synth`]: synthetic graph generators for desk-scale evaluation.
//! - [`metrics`]: diagnostic graph metrics.

pub mod attack;
pub mod augment;
pub mod error;
pub mod extract;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod node2vec;
pub mod rng;
pub mod scalar;
pub mod synth;

pub use augment::{jsd, AugmentedEdgeSet, ClassProbMatrix};
pub use error::{Error, Result};
pub use extract::{KnnCandidates, ScoredEdgeSet};
pub use graph::{
    clean_rate, degree_profile, CsrAdjacency, DegreeProfile, Edge, GraphBundle, NodeId,
    Provenance, Splits,
};
pub use model::{
    ArchConfig, GroupLabel, GroupPartition, GroupScheme, ModelParams, TrainConfig,
};
pub use node2vec::{cosine, EmbeddingMatrix, WalkCorpus};
