//! Diagnostic graph metrics.

use crate::error::{Error, Result};
use crate::graph::{Edge, GraphBundle};

/// Fraction of edges whose endpoints carry different labels.
///
/// Bundle labels take precedence; `pseudo_labels` (model predictions,
/// one per node) fill in for unlabeled endpoints when provided.
pub fn inter_class_edge_ratio(
    bundle: &GraphBundle,
    edge_subset: Option<&[Edge]>,
    pseudo_labels: Option<&[u16]>,
) -> Result<f64> {
    let edges = edge_subset.unwrap_or(bundle.edges());
    if edges.is_empty() {
        return Err(Error::invalid(
            "inter-class edge ratio undefined for an empty edge set",
        ));
    }
    if let Some(pseudo) = pseudo_labels {
        if pseudo.len() != bundle.num_nodes() {
            return Err(Error::Dimension {
                context: "pseudo-labels vs node count",
                left: pseudo.len(),
                right: bundle.num_nodes(),
            });
        }
    }
    let label_of = |n: u32| -> Result<u16> {
        if let Some(c) = bundle.labels()[n as usize] {
            return Ok(c);
        }
        pseudo_labels
            .map(|p| p[n as usize])
            .ok_or_else(|| Error::invalid(format!("node {n} is unlabeled and no pseudo-labels were given")))
    };
    let mut inter = 0usize;
    for e in edges {
        if label_of(e.u())? != label_of(e.v())? {
            inter += 1;
        }
    }
    Ok(inter as f64 / edges.len() as f64)
}

/// Inter-class ratio where each edge contributes its weight instead of a
/// unit count; used to compare an attacked graph with its attention-
/// reweighted refinement.
pub fn weighted_inter_class_edge_ratio(
    bundle: &GraphBundle,
    weights: &[f64],
    pseudo_labels: Option<&[u16]>,
) -> Result<f64> {
    let edges = bundle.edges();
    if weights.len() != edges.len() {
        return Err(Error::Dimension {
            context: "edge weights vs edge count",
            left: weights.len(),
            right: edges.len(),
        });
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("edge weights sum to zero"));
    }
    let label_of = |n: u32| -> Result<u16> {
        if let Some(c) = bundle.labels()[n as usize] {
            return Ok(c);
        }
        pseudo_labels
            .map(|p| p[n as usize])
            .ok_or_else(|| Error::invalid(format!("node {n} is unlabeled and no pseudo-labels were given")))
    };
    let mut inter = 0.0;
    for (e, w) in edges.iter().zip(weights) {
        if label_of(e.u())? != label_of(e.v())? {
            inter += w;
        }
    }
    Ok(inter / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBundle, Splits};
    use ndarray::Array2;

    fn labeled_bundle(labels: Vec<Option<u16>>, pairs: &[(u32, u32)]) -> GraphBundle {
        let n = labels.len();
        let edges = pairs
            .iter()
            .map(|&(a, b)| Edge::new(a, b).unwrap())
            .collect();
        GraphBundle::new(
            n,
            edges,
            Array2::zeros((n, 1)),
            labels,
            Splits::default(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn complete_bipartite_is_fully_inter_class() {
        let labels = vec![Some(0), Some(0), Some(1), Some(1)];
        let b = labeled_bundle(labels, &[(0, 2), (0, 3), (1, 2), (1, 3)]);
        assert_eq!(inter_class_edge_ratio(&b, None, None).unwrap(), 1.0);
    }

    #[test]
    fn unlabeled_endpoint_needs_pseudo_labels() {
        let b = labeled_bundle(vec![Some(0), None], &[(0, 1)]);
        assert!(inter_class_edge_ratio(&b, None, None).is_err());
        let pseudo = vec![0u16, 1u16];
        assert_eq!(
            inter_class_edge_ratio(&b, None, Some(&pseudo)).unwrap(),
            1.0
        );
    }

    #[test]
    fn weighting_shifts_the_ratio() {
        let labels = vec![Some(0), Some(0), Some(1)];
        let b = labeled_bundle(labels, &[(0, 1), (0, 2)]);
        assert_eq!(inter_class_edge_ratio(&b, None, None).unwrap(), 0.5);
        // Down-weighting the inter-class edge shrinks the weighted ratio.
        let ratio = weighted_inter_class_edge_ratio(&b, &[0.9, 0.1], None).unwrap();
        assert!((ratio - 0.1).abs() < 1e-12);
    }
}
