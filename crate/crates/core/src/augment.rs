//! Per-epoch graph augmentation: inject kNN candidate edges whose class
//! predictions agree.
//!
//! Candidates come from the Phase-1 kNN graphs; each epoch only their
//! Jensen-Shannon divergences are evaluated (|candidates| evaluations,
//! never all pairs), and the lowest-divergence `floor(|base| *
//! lambda_aug)` edges per modality join the sub-graph.

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::extract::KnnCandidates;
use crate::graph::{Edge, NodeId};

/// Per-node class prediction probabilities; rows sum to 1 within 1e-6.
#[derive(Clone, Debug)]
pub struct ClassProbMatrix {
    probs: Array2<f64>,
}

impl ClassProbMatrix {
    pub fn new(probs: Array2<f64>) -> Result<ClassProbMatrix> {
        for (i, row) in probs.rows().into_iter().enumerate() {
            let mut sum = 0.0;
            for &v in row {
                if !(0.0..=1.0 + 1e-9).contains(&v) {
                    return Err(Error::invalid(format!(
                        "class probability out of range at row {i}: {v}"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!(
                    "class probabilities at row {i} sum to {sum}, not 1"
                )));
            }
        }
        Ok(ClassProbMatrix { probs })
    }

    /// The all-equal distribution for every node; used before the model
    /// has produced any predictions.
    pub fn uniform(num_nodes: usize, num_classes: usize) -> ClassProbMatrix {
        let p = 1.0 / num_classes as f64;
        ClassProbMatrix {
            probs: Array2::from_elem((num_nodes, num_classes), p),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.probs.nrows()
    }

    pub fn row(&self, n: NodeId) -> ArrayView1<'_, f64> {
        self.probs.row(n as usize)
    }
}

fn validate_distribution(p: &[f64], name: &str) -> Result<()> {
    let mut sum = 0.0;
    for &v in p {
        if v < 0.0 {
            return Err(Error::invalid(format!("{name} has a negative entry: {v}")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("{name} sums to {sum}, not 1")));
    }
    Ok(())
}

fn kld_base2(p: &[f64], m: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&pi, &mi) in p.iter().zip(m) {
        if pi > 0.0 {
            total += pi * (pi / mi).log2();
        }
    }
    total
}

fn jsd_unchecked(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(&a, &b)| 0.5 * (a + b)).collect();
    0.5 * kld_base2(p, &m) + 0.5 * kld_base2(q, &m)
}

/// Jensen-Shannon divergence between two probability vectors, log base 2
/// so the range is [0, 1]. Zero entries contribute nothing.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension {
            context: "jsd",
            left: p.len(),
            right: q.len(),
        });
    }
    validate_distribution(p, "p")?;
    validate_distribution(q, "q")?;
    Ok(jsd_unchecked(p, q))
}

/// The sub-graph plus the JSD-selected candidate edges.
#[derive(Clone, Debug)]
pub struct AugmentedEdgeSet {
    pub base: Vec<Edge>,
    pub added_fs: Vec<Edge>,
    pub added_sp: Vec<Edge>,
    /// `base ∪ added_fs ∪ added_sp`, canonical order, deduplicated.
    pub union: Vec<Edge>,
    /// Exactly how many JSD evaluations this call performed.
    pub jsd_evaluations: usize,
}

fn select_by_jsd(
    candidates: &[Edge],
    probs: &ClassProbMatrix,
    quota: usize,
    evaluations: &mut usize,
) -> Result<Vec<Edge>> {
    let mut scored = Vec::with_capacity(candidates.len());
    for e in candidates {
        if e.v() as usize >= probs.num_nodes() {
            return Err(Error::invalid(format!(
                "candidate edge ({}, {}) has no probability row",
                e.u(),
                e.v()
            )));
        }
        let p = probs.row(e.u());
        let q = probs.row(e.v());
        let d = jsd_unchecked(
            p.to_slice().expect("row-major probabilities"),
            q.to_slice().expect("row-major probabilities"),
        );
        *evaluations += 1;
        scored.push((d, *e));
    }
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite jsd").then(a.1.cmp(&b.1)));
    scored.truncate(quota);
    Ok(scored.into_iter().map(|(_, e)| e).collect())
}

/// Adds the `floor(|base| * lambda_aug)` lowest-JSD candidates from each
/// modality to the sub-graph. Evaluates JSD exactly once per candidate
/// edge.
pub fn augment_subgraph(
    base: &[Edge],
    probs: &ClassProbMatrix,
    candidates: &KnnCandidates,
    lambda_aug: f64,
) -> Result<AugmentedEdgeSet> {
    if !(0.0..=1.0).contains(&lambda_aug) {
        return Err(Error::invalid("lambda_aug must lie in [0, 1]"));
    }
    let quota = (base.len() as f64 * lambda_aug).floor() as usize;
    let mut evaluations = 0usize;
    let (added_fs, added_sp) = if quota == 0 {
        (Vec::new(), Vec::new())
    } else {
        (
            select_by_jsd(&candidates.e_fs_k, probs, quota, &mut evaluations)?,
            select_by_jsd(&candidates.e_sp_k, probs, quota, &mut evaluations)?,
        )
    };
    let mut union = base.to_vec();
    union.extend_from_slice(&added_fs);
    union.extend_from_slice(&added_sp);
    union.sort_unstable();
    union.dedup();
    Ok(AugmentedEdgeSet {
        base: base.to_vec(),
        added_fs,
        added_sp,
        union,
        jsd_evaluations: evaluations,
    })
}
