//! Synthetic graphs for desk-scale evaluation.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Edge, GraphBundle, NodeId, Splits};
use crate::rng::derive_rng;
use crate::scalar::Scalar;

/// Stochastic-block-model graph with block labels and block-shifted
/// Gaussian features.
///
/// Nodes `b * nodes_per_block .. (b+1) * nodes_per_block` form block `b`
/// and carry label `b`. Features are standard normal plus
/// `feature_shift` on coordinate `b`. Splits are a random 1:1:8
/// train/val/test partition; if some class ends up with no training node,
/// the split is redrawn from the next substream (at most 10 tries).
pub fn generate_sbm(
    blocks: usize,
    nodes_per_block: usize,
    p_in: f64,
    p_out: f64,
    feature_dim: usize,
    feature_shift: f64,
    seed: u64,
) -> Result<GraphBundle> {
    if blocks < 2 {
        return Err(Error::invalid("an SBM needs at least 2 blocks"));
    }
    if !(p_in > p_out) {
        return Err(Error::invalid(format!(
            "p_in ({p_in}) must exceed p_out ({p_out})"
        )));
    }
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=1.0).contains(&p_out) {
        return Err(Error::invalid("edge probabilities must lie in [0, 1]"));
    }
    if feature_dim < blocks {
        return Err(Error::invalid(format!(
            "feature_dim ({feature_dim}) must be >= blocks ({blocks}) for distinct block means"
        )));
    }
    let n = blocks * nodes_per_block;
    let block_of = |node: usize| (node / nodes_per_block) as u16;

    let mut rng = derive_rng(seed, "sbm-edges", &[]);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if block_of(i) == block_of(j) { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push(Edge::new(i as NodeId, j as NodeId).unwrap());
            }
        }
    }

    let mut rng = derive_rng(seed, "sbm-features", &[]);
    let mut features = Array2::<f32>::zeros((n, feature_dim));
    for i in 0..n {
        for d in 0..feature_dim {
            let mut value = f32::sample_standard_normal(&mut rng);
            if d == block_of(i) as usize {
                value += feature_shift as f32;
            }
            features[(i, d)] = value;
        }
    }

    let labels: Vec<Option<u16>> = (0..n).map(|i| Some(block_of(i))).collect();

    let n_train = n / 10;
    let n_val = n / 10;
    let mut splits = None;
    for attempt in 0..10u64 {
        let mut order: Vec<NodeId> = (0..n as NodeId).collect();
        let mut rng = derive_rng(seed, "sbm-split", &[attempt]);
        order.shuffle(&mut rng);
        let train = order[..n_train].to_vec();
        let mut covered = vec![false; blocks];
        for &node in &train {
            covered[block_of(node as usize) as usize] = true;
        }
        if covered.iter().all(|&c| c) {
            splits = Some(Splits {
                train,
                val: order[n_train..n_train + n_val].to_vec(),
                test: order[n_train + n_val..].to_vec(),
            });
            break;
        }
    }
    let splits = splits.ok_or_else(|| {
        Error::invalid("failed to draw a train split covering every class in 10 tries")
    })?;

    GraphBundle::new(n, edges, features, labels, splits, None)
}

/// Scale-free graph grown by preferential attachment.
///
/// Node `i >= 3` attaches to `1 + 2 * (i % 2)` distinct earlier nodes
/// chosen proportionally to degree, on top of a seed triangle. Mixing
/// single and triple attachments keeps degree-one leaves plentiful while
/// the median degree stays above one, giving the heavy-tailed,
/// min-degree-1 profile the degree-grouping diagnostics assume.
///
/// The bundle carries placeholder features and no labels; it exists for
/// structural analysis.
pub fn generate_scale_free(num_nodes: usize, seed: u64) -> Result<GraphBundle> {
    if num_nodes < 4 {
        return Err(Error::invalid("scale-free generator needs >= 4 nodes"));
    }
    let mut rng = derive_rng(seed, "scale-free", &[]);
    let mut edges = vec![
        Edge::new(0, 1).unwrap(),
        Edge::new(0, 2).unwrap(),
        Edge::new(1, 2).unwrap(),
    ];
    // One slot per edge endpoint; uniform draws from this list realize
    // degree-proportional selection.
    let mut endpoint_pool: Vec<NodeId> = vec![0, 1, 0, 2, 1, 2];
    for i in 3..num_nodes {
        let attachments = 1 + 2 * (i % 2);
        let attachments = attachments.min(i);
        let mut chosen: Vec<NodeId> = Vec::with_capacity(attachments);
        while chosen.len() < attachments {
            let pick = endpoint_pool[rng.random_range(0..endpoint_pool.len())];
            if !chosen.contains(&pick) {
                chosen.push(pick);
            }
        }
        for target in chosen {
            edges.push(Edge::new(i as NodeId, target).unwrap());
            endpoint_pool.push(i as NodeId);
            endpoint_pool.push(target);
        }
    }
    GraphBundle::new(
        num_nodes,
        edges,
        Array2::zeros((num_nodes, 1)),
        vec![None; num_nodes],
        Splits::default(),
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::degree_profile;
    use crate::metrics::inter_class_edge_ratio;

    #[test]
    fn rejects_bad_probabilities() {
        assert!(generate_sbm(2, 10, 0.01, 0.2, 4, 1.0, 0).is_err());
        assert!(generate_sbm(1, 10, 0.2, 0.01, 4, 1.0, 0).is_err());
    }

    #[test]
    fn no_inter_edges_when_p_out_zero() {
        let b = generate_sbm(2, 30, 0.2, 0.0, 4, 1.0, 7).unwrap();
        assert_eq!(inter_class_edge_ratio(&b, None, None).unwrap(), 0.0);
    }

    #[test]
    fn split_sizes_follow_1_1_8() {
        let b = generate_sbm(2, 50, 0.2, 0.01, 4, 1.0, 3).unwrap();
        assert_eq!(b.splits().train.len(), 10);
        assert_eq!(b.splits().val.len(), 10);
        assert_eq!(b.splits().test.len(), 80);
    }

    #[test]
    fn intra_edge_count_near_expectation() {
        // Expected intra edges per block: C(50,2) * 0.2 = 245; two blocks
        // give 490 with binomial sigma = sqrt(2 * 1225 * 0.2 * 0.8).
        // Check within 4 sigma.
        let b = generate_sbm(2, 50, 0.2, 0.01, 4, 1.0, 11).unwrap();
        let intra = b
            .edges()
            .iter()
            .filter(|e| (e.u() < 50) == (e.v() < 50))
            .count();
        let expected = 2.0 * 1225.0 * 0.2;
        let sigma = (2.0f64 * 1225.0 * 0.2 * 0.8).sqrt();
        assert!(
            (intra as f64 - expected).abs() < 4.0 * sigma,
            "intra edge count {intra} too far from {expected}"
        );
    }

    #[test]
    fn same_seed_reproduces_sbm() {
        let a = generate_sbm(2, 40, 0.15, 0.01, 4, 0.8, 5).unwrap();
        let b = generate_sbm(2, 40, 0.15, 0.01, 4, 0.8, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scale_free_is_heavy_tailed() {
        let b = generate_scale_free(150, 1).unwrap();
        let profile = degree_profile(&b, None).unwrap();
        let max = *profile.degrees.iter().max().unwrap();
        let min = profile.degrees.iter().copied().filter(|&d| d > 0).min().unwrap();
        assert_eq!(min, 1, "alternating attachment keeps degree-1 leaves");
        assert!(max >= 15, "hub degree {max} too small for a scale-free graph");
        assert!(profile.median >= 1.0 && profile.median <= 4.0);
    }
}
