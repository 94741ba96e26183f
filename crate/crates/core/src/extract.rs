//! Phase 1: edge scoring, clean sub-graph extraction, kNN candidates.
//!
//! Every existing edge gets two scores: structural proximity (cosine of
//! node2vec embeddings) and feature similarity (cosine of feature rows).
//! The sub-graph keeps the intersection of the top-`lambda_sp` and
//! top-`lambda_fs` edge sets. kNN candidate pairs over the surviving
//! nodes are computed here, once, so the per-epoch augmentation never
//! pays the all-pairs cost.

use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{Edge, GraphBundle, NodeId};
use crate::node2vec::{cosine, EmbeddingMatrix};

/// Per-edge structural-proximity and feature-similarity scores, aligned
/// with the canonical edge order.
#[derive(Clone, Debug)]
pub struct ScoredEdgeSet {
    pub edges: Vec<Edge>,
    pub s_sp: Vec<f64>,
    pub s_fs: Vec<f64>,
}

/// kNN candidate pairs per modality over the sub-graph's nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnCandidates {
    pub e_fs_k: Vec<Edge>,
    pub e_sp_k: Vec<Edge>,
    pub k: usize,
}

/// Scores every existing edge by embedding cosine (structural proximity)
/// and feature cosine (feature similarity).
pub fn score_edges(bundle: &GraphBundle, h_sp: &EmbeddingMatrix) -> Result<ScoredEdgeSet> {
    if h_sp.num_nodes() != bundle.num_nodes() {
        return Err(Error::Dimension {
            context: "embedding rows vs node count",
            left: h_sp.num_nodes(),
            right: bundle.num_nodes(),
        });
    }
    let features = bundle.features();
    let feature_row = |n: NodeId| {
        features
            .row(n as usize)
            .to_slice()
            .expect("row-major features")
    };
    let edges = bundle.edges().to_vec();
    let scores: Vec<(f64, f64)> = edges
        .par_iter()
        .map(|e| {
            let sp = cosine(h_sp.row(e.u()), h_sp.row(e.v()))?;
            let fs = cosine(feature_row(e.u()), feature_row(e.v()))?;
            Ok((sp, fs))
        })
        .collect::<Result<_>>()?;
    let (s_sp, s_fs) = scores.into_iter().unzip();
    Ok(ScoredEdgeSet { edges, s_sp, s_fs })
}

/// Indices of the `count` highest-scoring edges; ties resolve in favor of
/// the earlier (canonical-order) edge.
fn top_indices(scores: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    order.truncate(count);
    order
}

/// Extracts the clean sub-graph: the intersection of the top
/// `floor(|E| * lambda_sp)` edges by structural proximity and the top
/// `floor(|E| * lambda_fs)` edges by feature similarity, in canonical
/// order.
pub fn extract_subgraph(
    scored: &ScoredEdgeSet,
    lambda_sp: f64,
    lambda_fs: f64,
) -> Result<Vec<Edge>> {
    for (name, lambda) in [("lambda_sp", lambda_sp), ("lambda_fs", lambda_fs)] {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::invalid(format!("{name} must lie in (0, 1]")));
        }
    }
    let m = scored.edges.len();
    let count_sp = (m as f64 * lambda_sp).floor() as usize;
    let count_fs = (m as f64 * lambda_fs).floor() as usize;
    let mut in_sp = vec![false; m];
    for i in top_indices(&scored.s_sp, count_sp) {
        in_sp[i] = true;
    }
    let mut subgraph = Vec::new();
    for i in top_indices(&scored.s_fs, count_fs) {
        if in_sp[i] {
            subgraph.push(scored.edges[i]);
        }
    }
    if subgraph.is_empty() {
        return Err(Error::invalid(format!(
            "empty sub-graph: top-{lambda_sp} structural and top-{lambda_fs} feature edge sets do not intersect; raise lambda_sp/lambda_fs"
        )));
    }
    subgraph.sort_unstable();
    Ok(subgraph)
}

fn knn_pairs<F>(node_set: &[NodeId], k: usize, similarity: F) -> Vec<Edge>
where
    F: Fn(NodeId, NodeId) -> f64 + Sync,
{
    let mut pairs: Vec<Edge> = node_set
        .par_iter()
        .flat_map_iter(|&u| {
            let mut sims: Vec<(f64, NodeId)> = node_set
                .iter()
                .filter(|&&v| v != u)
                .map(|&v| (similarity(u, v), v))
                .collect();
            sims.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .expect("finite similarity")
                    .then(a.1.cmp(&b.1))
            });
            sims.truncate(k);
            sims.into_iter()
                .map(move |(_, v)| Edge::new(u, v).expect("distinct nodes"))
        })
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

/// Builds the feature-similarity and structural-proximity kNN candidate
/// graphs over `node_set` (exact brute force). A `k` of `|node_set| - 1`
/// or more is clamped with a warning.
pub fn build_knn_candidates(
    bundle: &GraphBundle,
    h_sp: &EmbeddingMatrix,
    node_set: &[NodeId],
    k: usize,
) -> Result<KnnCandidates> {
    if node_set.is_empty() {
        return Err(Error::invalid("kNN candidate construction needs nodes"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if h_sp.num_nodes() != bundle.num_nodes() {
        return Err(Error::Dimension {
            context: "embedding rows vs node count",
            left: h_sp.num_nodes(),
            right: bundle.num_nodes(),
        });
    }
    let k = if k >= node_set.len() {
        log::warn!(
            "k = {k} >= |node set| = {}; clamping to {}",
            node_set.len(),
            node_set.len() - 1
        );
        node_set.len() - 1
    } else {
        k
    };
    let features = bundle.features();
    let e_fs_k = knn_pairs(node_set, k, |u, v| {
        cosine(
            features
                .row(u as usize)
                .to_slice()
                .expect("row-major features"),
            features
                .row(v as usize)
                .to_slice()
                .expect("row-major features"),
        )
        .expect("equal feature dims")
    });
    let e_sp_k = knn_pairs(node_set, k, |u, v| {
        cosine(h_sp.row(u), h_sp.row(v)).expect("equal embedding dims")
    });
    Ok(KnnCandidates { e_fs_k, e_sp_k, k })
}

/// Writes one edge per line as `u<TAB>v`.
pub fn write_edge_list(path: impl AsRef<Path>, edges: &[Edge]) -> Result<()> {
    let path = path.as_ref();
    let mut w =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for e in edges {
        writeln!(w, "{}\t{}", e.u(), e.v()).map_err(|err| Error::io(path, err))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_edge_list(path: impl AsRef<Path>) -> Result<Vec<Edge>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut edges = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (a, b) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => return Err(Error::parse(path, idx + 1, "expected two node ids")),
        };
        let a: NodeId = a
            .parse()
            .map_err(|_| Error::parse(path, idx + 1, "bad node id"))?;
        let b: NodeId = b
            .parse()
            .map_err(|_| Error::parse(path, idx + 1, "bad node id"))?;
        edges.push(Edge::new(a, b).map_err(|e| Error::parse(path, idx + 1, e.to_string()))?);
    }
    Ok(edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBundle, Splits};
    use ndarray::{array, Array2};

    fn bundle_with_features(features: Array2<f32>, pairs: &[(u32, u32)]) -> GraphBundle {
        let n = features.nrows();
        let edges = pairs
            .iter()
            .map(|&(a, b)| Edge::new(a, b).unwrap())
            .collect();
        GraphBundle::new(n, edges, features, vec![Some(0); n], Splits::default(), None).unwrap()
    }

    fn identity_embedding(n: usize) -> EmbeddingMatrix {
        EmbeddingMatrix::new(Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j {
                1.0
            } else {
                0.0
            }
        }))
        .unwrap()
    }

    #[test]
    fn feature_scores_hit_the_closed_forms() {
        let features = array![[1.0f32, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let b = bundle_with_features(features, &[(0, 1), (0, 2)]);
        let emb = identity_embedding(3);
        let scored = score_edges(&b, &emb).unwrap();
        assert_eq!(scored.s_fs[0], 1.0); // identical rows
        assert_eq!(scored.s_fs[1], 0.0); // orthogonal rows
    }

    #[test]
    fn lambda_one_keeps_everything() {
        let features = Array2::from_shape_fn((4, 2), |(i, j)| (i + j) as f32 + 1.0);
        let b = bundle_with_features(features, &[(0, 1), (1, 2), (2, 3)]);
        let scored = score_edges(&b, &identity_embedding(4)).unwrap();
        let sub = extract_subgraph(&scored, 1.0, 1.0).unwrap();
        assert_eq!(sub, b.edges());
    }

    #[test]
    fn intersection_bound_holds() {
        let edges: Vec<Edge> = (0..10).map(|i| Edge::new(i, i + 1).unwrap()).collect();
        let scored = ScoredEdgeSet {
            edges,
            s_sp: (0..10).map(|i| i as f64).collect(),
            s_fs: (0..10).map(|i| -(i as f64)).collect(),
        };
        // Opposed rankings: the top-5 sets share no edges -> error.
        assert!(extract_subgraph(&scored, 0.5, 0.5).is_err());
        let aligned = ScoredEdgeSet {
            s_fs: scored.s_sp.clone(),
            ..scored.clone()
        };
        let sub = extract_subgraph(&aligned, 0.5, 0.5).unwrap();
        assert_eq!(sub.len(), 5);
    }

    #[test]
    fn extraction_is_monotone_in_lambda() {
        let edges: Vec<Edge> = (0..20).map(|i| Edge::new(i, i + 1).unwrap()).collect();
        let scored = ScoredEdgeSet {
            edges,
            s_sp: (0..20).map(|i| ((i * 7) % 13) as f64).collect(),
            s_fs: (0..20).map(|i| ((i * 5) % 11) as f64).collect(),
        };
        let contains =
            |sup: &[Edge], sub: &[Edge]| sub.iter().all(|e| sup.binary_search(e).is_ok());
        let mut prev: Option<Vec<Edge>> = None;
        for step in 1..=10 {
            let lambda = step as f64 / 10.0;
            match extract_subgraph(&scored, lambda, lambda) {
                Ok(cur) => {
                    if let Some(p) = &prev {
                        assert!(contains(&cur, p), "lambda={lambda} lost edges");
                    }
                    prev = Some(cur);
                }
                Err(_) => assert!(prev.is_none(), "non-monotone emptiness"),
            }
        }
    }

    #[test]
    fn tie_break_is_canonical_order() {
        let edges: Vec<Edge> = (0..4).map(|i| Edge::new(i, i + 1).unwrap()).collect();
        let scored = ScoredEdgeSet {
            edges: edges.clone(),
            s_sp: vec![1.0; 4],
            s_fs: vec![1.0; 4],
        };
        let sub = extract_subgraph(&scored, 0.5, 0.5).unwrap();
        assert_eq!(sub, &edges[..2]);
    }

    #[test]
    fn two_node_set_yields_single_pair() {
        let features = Array2::from_shape_fn((3, 2), |(i, j)| (i * 2 + j) as f32 + 1.0);
        let b = bundle_with_features(features, &[(0, 1)]);
        let cands = build_knn_candidates(&b, &identity_embedding(3), &[0, 1], 1).unwrap();
        let only = vec![Edge::new(0, 1).unwrap()];
        assert_eq!(cands.e_fs_k, only);
        assert_eq!(cands.e_sp_k, only);
    }

    #[test]
    fn collinear_features_pick_the_middle_vector() {
        // Rows 0, 1, 2 point in directions 0, 30, 60 degrees: by cosine,
        // the middle row is the nearest neighbor of both extremes.
        // Verified against the brute-force pairwise similarity matrix.
        let features = array![[1.0f32, 0.0], [0.866_025_4, 0.5], [0.5, 0.866_025_4],];
        let b = bundle_with_features(features.clone(), &[(0, 1), (1, 2)]);
        let mut best = Vec::new();
        for u in 0..3usize {
            let mut sims: Vec<(f64, usize)> = (0..3)
                .filter(|&v| v != u)
                .map(|v| {
                    (
                        cosine(
                            features.row(u).to_slice().unwrap(),
                            features.row(v).to_slice().unwrap(),
                        )
                        .unwrap(),
                        v,
                    )
                })
                .collect();
            sims.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            best.push(sims[0].1);
        }
        assert_eq!(best[0], 1, "brute-force oracle: extreme 0 -> middle");
        assert_eq!(best[2], 1, "brute-force oracle: extreme 2 -> middle");
        let cands = build_knn_candidates(&b, &identity_embedding(3), &[0, 1, 2], 1).unwrap();
        assert_eq!(
            cands.e_fs_k,
            vec![Edge::new(0, 1).unwrap(), Edge::new(1, 2).unwrap()]
        );
    }

    #[test]
    fn oversized_k_clamps() {
        let features = Array2::from_shape_fn((3, 2), |(i, j)| (i + j + 1) as f32);
        let b = bundle_with_features(features, &[(0, 1), (1, 2)]);
        let cands = build_knn_candidates(&b, &identity_embedding(3), &[0, 1, 2], 99).unwrap();
        assert_eq!(cands.k, 2);
        assert!(cands.e_fs_k.iter().all(|e| e.u() != e.v()));
    }

    #[test]
    fn edge_list_roundtrip() {
        let edges: Vec<Edge> = (0..5).map(|i| Edge::new(i, i + 3).unwrap()).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("subgraph.tsv");
        write_edge_list(&path, &edges).unwrap();
        assert_eq!(read_edge_list(&path).unwrap(), edges);
    }
}
