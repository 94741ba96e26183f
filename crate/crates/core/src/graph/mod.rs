//! Immutable graph representation, degree statistics, and provenance.
//!
//! A [`GraphBundle`] holds everything one experiment needs: the undirected
//! edge set in canonical order, dense node features, optional labels,
//! train/val/test splits, and (for simulated attacks) a per-edge
//! provenance tag. Bundles are immutable after construction and safe to
//! share across threads.

mod io;

pub use io::{load_bundle, save_bundle};

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = u32;

/// An undirected edge with endpoints stored smaller-id-first.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct Edge {
    u: NodeId,
    v: NodeId,
}

impl Edge {
    /// Canonicalizes the endpoint order. Self-loops are rejected.
    pub fn new(a: NodeId, b: NodeId) -> Result<Edge> {
        if a == b {
            return Err(Error::invalid(format!("self-loop at node {a}")));
        }
        Ok(Edge {
            u: a.min(b),
            v: a.max(b),
        })
    }

    pub fn u(&self) -> NodeId {
        self.u
    }

    pub fn v(&self) -> NodeId {
        self.v
    }

    pub fn endpoints(&self) -> (NodeId, NodeId) {
        (self.u, self.v)
    }

    /// The endpoint that is not `n`; `None` if `n` is not an endpoint.
    pub fn other(&self, n: NodeId) -> Option<NodeId> {
        if self.u == n {
            Some(self.v)
        } else if self.v == n {
            Some(self.u)
        } else {
            None
        }
    }
}

/// Ground-truth origin of an edge in a simulated attack.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Clean,
    Adversarial,
}

#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<NodeId>,
    pub val: Vec<NodeId>,
    pub test: Vec<NodeId>,
}

/// Adjacency in compressed sparse row form; neighbor lists are sorted.
#[derive(Clone, PartialEq, Debug)]
pub struct CsrAdjacency {
    offsets: Vec<usize>,
    targets: Vec<NodeId>,
}

impl CsrAdjacency {
    pub fn from_edges(num_nodes: usize, edges: &[Edge]) -> CsrAdjacency {
        let mut degrees = vec![0usize; num_nodes];
        for e in edges {
            degrees[e.u as usize] += 1;
            degrees[e.v as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        offsets.push(0usize);
        for d in &degrees {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut targets = vec![0 as NodeId; offsets[num_nodes]];
        let mut cursor = offsets.clone();
        for e in edges {
            targets[cursor[e.u as usize]] = e.v;
            cursor[e.u as usize] += 1;
            targets[cursor[e.v as usize]] = e.u;
            cursor[e.v as usize] += 1;
        }
        for n in 0..num_nodes {
            targets[offsets[n]..offsets[n + 1]].sort_unstable();
        }
        CsrAdjacency { offsets, targets }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, n: NodeId) -> &[NodeId] {
        &self.targets[self.offsets[n as usize]..self.offsets[n as usize + 1]]
    }

    pub fn degree(&self, n: NodeId) -> usize {
        self.offsets[n as usize + 1] - self.offsets[n as usize]
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.neighbors(a).binary_search(&b).is_ok()
    }
}

/// Immutable graph with features, labels, splits, and optional edge
/// provenance.
#[derive(Clone, Debug)]
pub struct GraphBundle {
    num_nodes: usize,
    edges: Vec<Edge>,
    features: Array2<f32>,
    labels: Vec<Option<u16>>,
    num_classes: usize,
    splits: Splits,
    provenance: Option<Vec<Provenance>>,
    adjacency: CsrAdjacency,
}

impl PartialEq for GraphBundle {
    fn eq(&self, other: &Self) -> bool {
        self.num_nodes == other.num_nodes
            && self.edges == other.edges
            && self.features == other.features
            && self.labels == other.labels
            && self.splits == other.splits
            && self.provenance == other.provenance
    }
}

impl GraphBundle {
    /// Builds a bundle, canonicalizing and deduplicating edges.
    ///
    /// `provenance`, when given, must be aligned with `edges` in the order
    /// passed in; duplicate edges are merged and must carry the same tag.
    pub fn new(
        num_nodes: usize,
        edges: Vec<Edge>,
        features: Array2<f32>,
        labels: Vec<Option<u16>>,
        splits: Splits,
        provenance: Option<Vec<Provenance>>,
    ) -> Result<GraphBundle> {
        if features.nrows() != num_nodes {
            return Err(Error::Dimension {
                context: "feature rows vs node count",
                left: features.nrows(),
                right: num_nodes,
            });
        }
        if labels.len() != num_nodes {
            return Err(Error::Dimension {
                context: "label entries vs node count",
                left: labels.len(),
                right: num_nodes,
            });
        }
        if let Some(tags) = &provenance {
            if tags.len() != edges.len() {
                return Err(Error::invalid(format!(
                    "provenance covers {} edges but the edge set has {}",
                    tags.len(),
                    edges.len()
                )));
            }
        }
        for e in &edges {
            if e.v as usize >= num_nodes {
                return Err(Error::invalid(format!(
                    "edge ({}, {}) references node >= {num_nodes}",
                    e.u, e.v
                )));
            }
        }

        // Sort edges (together with their tags) and merge duplicates.
        let (edges, provenance) = match provenance {
            Some(tags) => {
                let mut pairs: Vec<(Edge, Provenance)> =
                    edges.into_iter().zip(tags).collect();
                pairs.sort_unstable_by_key(|(e, _)| *e);
                let mut out_edges = Vec::with_capacity(pairs.len());
                let mut out_tags = Vec::with_capacity(pairs.len());
                for (e, t) in pairs {
                    if out_edges.last() == Some(&e) {
                        if *out_tags.last().unwrap() != t {
                            return Err(Error::invalid(format!(
                                "conflicting provenance for edge ({}, {})",
                                e.u, e.v
                            )));
                        }
                        continue;
                    }
                    out_edges.push(e);
                    out_tags.push(t);
                }
                (out_edges, Some(out_tags))
            }
            None => {
                let mut edges = edges;
                edges.sort_unstable();
                edges.dedup();
                (edges, None)
            }
        };

        let num_classes = labels
            .iter()
            .flatten()
            .map(|c| *c as usize + 1)
            .max()
            .unwrap_or(0);

        let mut seen = vec![false; num_nodes];
        for (name, list) in [
            ("train", &splits.train),
            ("val", &splits.val),
            ("test", &splits.test),
        ] {
            for &n in list {
                if n as usize >= num_nodes {
                    return Err(Error::invalid(format!(
                        "{name} split references node {n} >= {num_nodes}"
                    )));
                }
                if labels[n as usize].is_none() {
                    return Err(Error::invalid(format!(
                        "{name} split contains unlabeled node {n}"
                    )));
                }
                if seen[n as usize] {
                    return Err(Error::invalid(format!(
                        "node {n} appears in more than one split"
                    )));
                }
                seen[n as usize] = true;
            }
        }

        let adjacency = CsrAdjacency::from_edges(num_nodes, &edges);
        Ok(GraphBundle {
            num_nodes,
            edges,
            features,
            labels,
            num_classes,
            splits,
            provenance,
            adjacency,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Edges in canonical (sorted, smaller-id-first) order.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn features(&self) -> &Array2<f32> {
        &self.features
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn labels(&self) -> &[Option<u16>] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn provenance(&self) -> Option<&[Provenance]> {
        self.provenance.as_deref()
    }

    pub fn adjacency(&self) -> &CsrAdjacency {
        &self.adjacency
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.adjacency.has_edge(a, b)
    }

    /// Provenance tag of an edge of this bundle, if tagged.
    pub fn edge_provenance(&self, e: &Edge) -> Option<Provenance> {
        let tags = self.provenance.as_ref()?;
        let idx = self.edges.binary_search(e).ok()?;
        Some(tags[idx])
    }

    /// A new bundle with the same nodes, features, labels, and splits but
    /// a different edge set.
    pub fn with_edges(
        &self,
        edges: Vec<Edge>,
        provenance: Option<Vec<Provenance>>,
    ) -> Result<GraphBundle> {
        GraphBundle::new(
            self.num_nodes,
            edges,
            self.features.clone(),
            self.labels.clone(),
            self.splits.clone(),
            provenance,
        )
    }

    /// A new bundle with replaced node features.
    pub fn with_features(&self, features: Array2<f32>) -> Result<GraphBundle> {
        GraphBundle::new(
            self.num_nodes,
            self.edges.clone(),
            features,
            self.labels.clone(),
            self.splits.clone(),
            self.provenance.clone(),
        )
    }
}

/// Per-node degree counts with the summary statistics used for degree
/// grouping.
#[derive(Clone, PartialEq, Debug)]
pub struct DegreeProfile {
    pub degrees: Vec<u32>,
    pub median: f64,
    /// Maximum degree over minimum nonzero degree.
    pub imbalance_ratio: f64,
}

impl DegreeProfile {
    pub fn degree(&self, n: NodeId) -> u32 {
        self.degrees[n as usize]
    }

    /// Linear-interpolation percentile of the degree distribution,
    /// `q` in [0, 1]. `q = 0.5` matches [`DegreeProfile::median`].
    pub fn percentile(&self, q: f64) -> f64 {
        percentile(&self.degrees, q)
    }
}

fn percentile(degrees: &[u32], q: f64) -> f64 {
    let mut sorted: Vec<u32> = degrees.to_vec();
    sorted.sort_unstable();
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    f64::from(sorted[lo]) * (1.0 - frac) + f64::from(sorted[hi]) * frac
}

/// Degree counts over `edges` for a graph on `num_nodes` nodes.
pub fn degrees_from_edges(num_nodes: usize, edges: &[Edge]) -> Vec<u32> {
    let mut degrees = vec![0u32; num_nodes];
    for e in edges {
        degrees[e.u as usize] += 1;
        degrees[e.v as usize] += 1;
    }
    degrees
}

/// Degree statistics over an arbitrary edge set on `num_nodes` nodes.
///
/// Zero-degree nodes are excluded from the minimum when computing the
/// imbalance ratio. Errors on an empty edge set (the ratio is undefined).
pub fn degree_profile_of(num_nodes: usize, edges: &[Edge]) -> Result<DegreeProfile> {
    if edges.is_empty() {
        return Err(Error::invalid(
            "imbalance ratio undefined for an empty edge set",
        ));
    }
    for e in edges {
        if e.v as usize >= num_nodes {
            return Err(Error::invalid(format!(
                "edge ({}, {}) references node >= {num_nodes}",
                e.u, e.v
            )));
        }
    }
    let degrees = degrees_from_edges(num_nodes, edges);
    let max = *degrees.iter().max().unwrap();
    let min_nonzero = degrees.iter().copied().filter(|&d| d > 0).min().unwrap();
    Ok(DegreeProfile {
        median: percentile(&degrees, 0.5),
        imbalance_ratio: f64::from(max) / f64::from(min_nonzero),
        degrees,
    })
}

/// Degree statistics of a bundle, optionally restricted to an edge subset.
///
/// The subset may contain edges outside the bundle's edge set (an
/// augmented set, for instance) as long as endpoints are valid node ids.
pub fn degree_profile(bundle: &GraphBundle, edge_subset: Option<&[Edge]>) -> Result<DegreeProfile> {
    degree_profile_of(bundle.num_nodes, edge_subset.unwrap_or(bundle.edges()))
}

/// Fraction of edges in `subset` whose provenance tag in `bundle` is
/// [`Provenance::Clean`].
pub fn clean_rate(subset: &[Edge], bundle: &GraphBundle) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::invalid("clean rate undefined for an empty subset"));
    }
    let mut clean = 0usize;
    for e in subset {
        match bundle.edge_provenance(e) {
            Some(Provenance::Clean) => clean += 1,
            Some(Provenance::Adversarial) => {}
            None => {
                return Err(Error::invalid(format!(
                    "edge ({}, {}) has no provenance tag",
                    e.u, e.v
                )))
            }
        }
    }
    Ok(clean as f64 / subset.len() as f64)
}

/// Distinct nodes incident to at least one edge, ascending.
pub fn node_set(edges: &[Edge]) -> Vec<NodeId> {
    let mut nodes: Vec<NodeId> = edges.iter().flat_map(|e| [e.u, e.v]).collect();
    nodes.sort_unstable();
    nodes.dedup();
    nodes
}

/// Counts edges per provenance tag; handy for diagnostics.
pub fn provenance_counts(bundle: &GraphBundle) -> Option<BTreeMap<Provenance, usize>> {
    let tags = bundle.provenance()?;
    let mut counts = BTreeMap::new();
    for t in tags {
        *counts.entry(*t).or_insert(0) += 1;
    }
    Some(counts)
}

impl std::cmp::Ord for Provenance {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (*self as u8).cmp(&(*other as u8))
    }
}

impl std::cmp::PartialOrd for Provenance {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn bundle_with_edges(num_nodes: usize, pairs: &[(u32, u32)]) -> GraphBundle {
        let edges = pairs
            .iter()
            .map(|&(a, b)| Edge::new(a, b).unwrap())
            .collect();
        GraphBundle::new(
            num_nodes,
            edges,
            Array2::zeros((num_nodes, 2)),
            vec![Some(0); num_nodes],
            Splits::default(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn edge_canonicalizes_and_rejects_self_loops() {
        let e = Edge::new(5, 2).unwrap();
        assert_eq!(e.endpoints(), (2, 5));
        assert!(Edge::new(3, 3).is_err());
    }

    #[test]
    fn duplicate_edges_collapse() {
        let b = bundle_with_edges(3, &[(0, 1), (1, 0), (1, 2)]);
        assert_eq!(b.num_edges(), 2);
    }

    #[test]
    fn star_graph_imbalance() {
        // Center 0 with five leaves.
        let b = bundle_with_edges(6, &[(0, 1), (0, 2), (0, 3), (0, 4), (0, 5)]);
        let p = degree_profile(&b, None).unwrap();
        assert_eq!(p.imbalance_ratio, 5.0);
    }

    #[test]
    fn cycle_is_balanced() {
        let b = bundle_with_edges(3, &[(0, 1), (1, 2), (0, 2)]);
        let p = degree_profile(&b, None).unwrap();
        assert_eq!(p.imbalance_ratio, 1.0);
        assert_eq!(p.median, 2.0);
    }

    #[test]
    fn path_median_and_ratio() {
        let b = bundle_with_edges(4, &[(0, 1), (1, 2), (2, 3)]);
        let p = degree_profile(&b, None).unwrap();
        assert_eq!(p.median, 1.5);
        assert_eq!(p.imbalance_ratio, 2.0);
    }

    #[test]
    fn empty_edge_set_is_an_error() {
        let b = bundle_with_edges(3, &[(0, 1)]);
        assert!(degree_profile(&b, Some(&[])).is_err());
    }

    #[test]
    fn degrees_sum_over_edge_partitions() {
        let pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (2, 3), (3, 4)];
        let b = bundle_with_edges(5, &pairs);
        let full = degrees_from_edges(5, b.edges());
        for cut in 0..=b.num_edges() {
            let (left, right) = b.edges().split_at(cut);
            let dl = degrees_from_edges(5, left);
            let dr = degrees_from_edges(5, right);
            let summed: Vec<u32> = dl.iter().zip(&dr).map(|(a, b)| a + b).collect();
            assert_eq!(summed, full);
        }
    }

    #[test]
    fn clean_rate_ratios() {
        let edges: Vec<Edge> = (0..10).map(|i| Edge::new(i, i + 1).unwrap()).collect();
        let mut tags = vec![Provenance::Clean; 10];
        tags[3] = Provenance::Adversarial;
        let b = GraphBundle::new(
            11,
            edges.clone(),
            Array2::zeros((11, 1)),
            vec![Some(0); 11],
            Splits::default(),
            Some(tags),
        )
        .unwrap();
        assert_eq!(clean_rate(&edges, &b).unwrap(), 0.9);
        assert_eq!(clean_rate(&edges[..3], &b).unwrap(), 1.0);
        assert_eq!(clean_rate(&edges[3..4], &b).unwrap(), 0.0);
        assert!(clean_rate(&[], &b).is_err());
    }

    #[test]
    fn clean_rate_requires_tags() {
        let b = bundle_with_edges(3, &[(0, 1)]);
        assert!(clean_rate(&[Edge::new(0, 1).unwrap()], &b).is_err());
    }

    #[test]
    fn clean_rate_monotone_under_tag_improvement() {
        let edges: Vec<Edge> = (0..6).map(|i| Edge::new(i, i + 1).unwrap()).collect();
        for flip in 0..6 {
            let mut tags = vec![Provenance::Adversarial; 6];
            let b0 = GraphBundle::new(
                7,
                edges.clone(),
                Array2::zeros((7, 1)),
                vec![Some(0); 7],
                Splits::default(),
                Some(tags.clone()),
            )
            .unwrap();
            tags[flip] = Provenance::Clean;
            let b1 = GraphBundle::new(
                7,
                edges.clone(),
                Array2::zeros((7, 1)),
                vec![Some(0); 7],
                Splits::default(),
                Some(tags),
            )
            .unwrap();
            assert!(clean_rate(&edges, &b1).unwrap() >= clean_rate(&edges, &b0).unwrap());
        }
    }

    #[test]
    fn splits_must_be_disjoint_and_labeled() {
        let edges = vec![Edge::new(0, 1).unwrap()];
        let features = Array2::zeros((3, 1));
        let labels = vec![Some(0), Some(1), None];
        let overlapping = Splits {
            train: vec![0],
            val: vec![0],
            test: vec![],
        };
        assert!(GraphBundle::new(
            3,
            edges.clone(),
            features.clone(),
            labels.clone(),
            overlapping,
            None
        )
        .is_err());
        let unlabeled = Splits {
            train: vec![2],
            val: vec![],
            test: vec![],
        };
        assert!(GraphBundle::new(3, edges, features, labels, unlabeled, None).is_err());
    }

    #[test]
    fn csr_neighbors_sorted() {
        let b = bundle_with_edges(4, &[(2, 0), (0, 3), (0, 1)]);
        assert_eq!(b.adjacency().neighbors(0), &[1, 2, 3]);
        assert!(b.has_edge(3, 0));
        assert!(!b.has_edge(1, 2));
    }
}
