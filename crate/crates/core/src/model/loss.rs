//! Loss terms and their gradients with respect to the model outputs.
//!
//! The training objective combines a node classification loss over the
//! labeled training nodes with a per-layer link-prediction loss over the
//! augmented edge set (positives) and sampled non-edges (negatives),
//! optionally split by degree group so every group contributes equally.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::model::groups::{GroupPartition, NegativeApportion};
use crate::scalar::Scalar;

/// Mean softmax cross-entropy (natural log) over the masked nodes.
///
/// Returns the loss and its gradient with respect to the logits; rows
/// outside the mask get zero gradient.
pub fn loss_node<S: Scalar>(
    logits: &Array2<S>,
    labels: &[Option<u16>],
    mask: &[NodeId],
) -> Result<(S, Array2<S>)> {
    if mask.is_empty() {
        return Err(Error::invalid("classification loss needs a nonempty mask"));
    }
    if labels.len() != logits.nrows() {
        return Err(Error::Dimension {
            context: "labels vs logit rows",
            left: labels.len(),
            right: logits.nrows(),
        });
    }
    let num_classes = logits.ncols();
    let inv_count = S::from_f64(1.0 / mask.len() as f64);
    let mut total = S::zero();
    let mut grad = Array2::<S>::zeros(logits.dim());
    for &node in mask {
        let label = labels
            .get(node as usize)
            .copied()
            .flatten()
            .ok_or_else(|| Error::invalid(format!("masked node {node} is unlabeled")))?
            as usize;
        if label >= num_classes {
            return Err(Error::invalid(format!(
                "node {node} has class {label} but the model outputs {num_classes} classes"
            )));
        }
        let row = logits.row(node as usize);
        let mut max = S::neg_infinity();
        for v in row.iter() {
            if *v > max {
                max = *v;
            }
        }
        let mut sum = S::zero();
        for v in row.iter() {
            sum = sum + (*v - max).exp();
        }
        // -ln p_y in log-sum-exp form.
        total = total + max + sum.ln() - row[label];
        let mut grow = grad.row_mut(node as usize);
        for (c, v) in row.iter().enumerate() {
            let p = (*v - max).exp() / sum;
            let target = if c == label { S::one() } else { S::zero() };
            grow[c] = grow[c] + (p - target) * inv_count;
        }
    }
    Ok((total * inv_count, grad))
}

#[inline]
fn softplus<S: Scalar>(x: S) -> S {
    // ln(1 + exp(x)) without overflow.
    let zero = S::zero();
    let m = if x > zero { x } else { zero };
    m + ((x - m).exp() + (zero - m).exp()).ln()
}

#[inline]
fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

/// Binary link-prediction loss over head-averaged attention logits:
/// `phi = sigmoid(e)` is the edge probability, positives push `phi`
/// toward 1 and sampled non-edges toward 0, each side mean-reduced.
///
/// Returns the loss and its gradients with respect to the positive and
/// negative logits.
pub fn link_loss<S: Scalar>(e_pos: &[S], e_neg: &[S]) -> Result<(S, Vec<S>, Vec<S>)> {
    if e_pos.is_empty() || e_neg.is_empty() {
        return Err(Error::invalid(
            "link loss needs at least one positive and one negative sample",
        ));
    }
    let inv_pos = S::from_f64(1.0 / e_pos.len() as f64);
    let inv_neg = S::from_f64(1.0 / e_neg.len() as f64);
    let mut total = S::zero();
    let mut d_pos = Vec::with_capacity(e_pos.len());
    for &e in e_pos {
        total = total + softplus(-e) * inv_pos; // -ln sigmoid(e)
        d_pos.push((sigmoid(e) - S::one()) * inv_pos);
    }
    for &e in e_neg {
        total = total + softplus(e) * inv_neg; // -ln(1 - sigmoid(e))
    }
    let d_neg = e_neg.iter().map(|&e| sigmoid(e) * inv_neg).collect();
    Ok((total, d_pos, d_neg))
}

/// Degree-grouped link loss: the sum of [`link_loss`] over the partition
/// groups, with negatives taken from each group's apportioned chunk.
///
/// Empty groups are skipped with a warning. A group that has positives
/// but no apportioned negatives is an apportioning bug and errors.
/// With a single all-encompassing group this reduces to [`link_loss`]
/// exactly.
pub fn loss_link_grouped<S: Scalar>(
    e_pos: &[S],
    partition: &GroupPartition,
    e_neg: &[S],
    apportion: &NegativeApportion,
) -> Result<(S, Vec<S>, Vec<S>)> {
    if apportion.total != e_neg.len() {
        return Err(Error::Dimension {
            context: "apportioned negatives vs negative scores",
            left: apportion.total,
            right: e_neg.len(),
        });
    }
    let mut total = S::zero();
    let mut d_pos = vec![S::zero(); e_pos.len()];
    let mut d_neg = vec![S::zero(); e_neg.len()];
    for (label, members) in &partition.groups {
        if members.is_empty() {
            log::warn!("degree group {label:?} is empty; skipping its loss term");
            continue;
        }
        let range = apportion
            .ranges
            .get(label)
            .cloned()
            .unwrap_or(0..0);
        if range.is_empty() {
            return Err(Error::invalid(format!(
                "apportioning bug: nonempty group {label:?} received zero negatives"
            )));
        }
        let gathered: Vec<S> = members.iter().map(|&i| e_pos[i]).collect();
        let (loss, g_pos, g_neg) = link_loss(&gathered, &e_neg[range.clone()])?;
        total = total + loss;
        for (&i, g) in members.iter().zip(g_pos) {
            d_pos[i] = g;
        }
        for (slot, g) in d_neg[range].iter_mut().zip(g_neg) {
            *slot = g;
        }
    }
    Ok((total, d_pos, d_neg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;
    use crate::model::groups::{apportion_negatives, split_groups, GroupScheme};
    use ndarray::array;

    #[test]
    fn perfect_predictions_cost_nothing() {
        // Strongly peaked logits on the true class.
        let logits = array![[30.0, 0.0], [0.0, 30.0]];
        let labels = vec![Some(0u16), Some(1u16)];
        let (loss, _) = loss_node(&logits, &labels, &[0, 1]).unwrap();
        assert!(loss < 1e-10);
    }

    #[test]
    fn uniform_predictions_cost_ln2() {
        let logits = array![[0.3, 0.3], [1.7, 1.7]];
        let labels = vec![Some(0u16), Some(1u16)];
        let (loss, _) = loss_node(&logits, &labels, &[0, 1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn quarter_three_quarter_closed_form() {
        // Softmax of (ln 1, ln 3) is (0.25, 0.75); true class 1.
        let logits = array![[0.0f64, 3.0f64.ln()]];
        let labels = vec![Some(1u16)];
        let (loss, grad) = loss_node(&logits, &labels, &[0]).unwrap();
        assert!((loss - (-0.75f64.ln())).abs() < 1e-12);
        assert!((grad[(0, 0)] - 0.25).abs() < 1e-12);
        assert!((grad[(0, 1)] + 0.25).abs() < 1e-12);
    }

    #[test]
    fn masked_unlabeled_node_errors() {
        let logits = array![[0.0, 0.0]];
        assert!(loss_node(&logits, &[None], &[0]).is_err());
        assert!(loss_node::<f64>(&logits, &[Some(0)], &[]).is_err());
    }

    #[test]
    fn link_loss_at_even_odds_is_two_ln2() {
        // e = 0 gives phi = 0.5 on both sides.
        let (loss, _, _) = link_loss(&[0.0f64, 0.0], &[0.0, 0.0, 0.0]).unwrap();
        assert!((loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn link_loss_vanishes_under_perfect_separation() {
        let (loss, _, _) = link_loss(&[60.0f64], &[-60.0]).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn link_loss_single_pair_closed_form() {
        // phi = 0.8 on the positive, phi = 0.3 on the negative.
        let logit = |phi: f64| (phi / (1.0 - phi)).ln();
        let (loss, _, _) = link_loss(&[logit(0.8)], &[logit(0.3)]).unwrap();
        let expected = -(0.8f64.ln()) - (0.7f64.ln());
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn grouped_loss_with_three_groups_at_even_odds() {
        // Hand-made degree bands (grouping degrees may come from a
        // different edge set than the edges being grouped): nodes 0, 1
        // low, nodes 2, 3 high, one edge in each of LL, HL, HH.
        let profile = crate::graph::DegreeProfile {
            degrees: vec![1, 1, 4, 4],
            median: 2.5,
            imbalance_ratio: 4.0,
        };
        let edges = vec![
            Edge::new(0, 1).unwrap(),
            Edge::new(0, 2).unwrap(),
            Edge::new(2, 3).unwrap(),
        ];
        let partition = split_groups(&edges, &profile, GroupScheme::LowHigh).unwrap();
        let nonempty = partition.groups.values().filter(|g| !g.is_empty()).count();
        assert_eq!(nonempty, 3, "fixture must populate LL, HL, and HH");
        let e_pos = vec![0.0f64; edges.len()];
        let e_neg = vec![0.0f64; 6];
        let apportion = apportion_negatives(&partition, e_neg.len()).unwrap();
        let (loss, _, _) = loss_link_grouped(&e_pos, &partition, &e_neg, &apportion).unwrap();
        let expected = 3.0 * 2.0 * std::f64::consts::LN_2;
        assert!(
            (loss - expected).abs() < 1e-9,
            "grouped loss {loss} vs {expected}"
        );
    }

    #[test]
    fn single_group_equals_ungrouped_bit_for_bit() {
        // A regular graph puts every edge in HH.
        let edges = vec![
            Edge::new(0, 1).unwrap(),
            Edge::new(1, 2).unwrap(),
            Edge::new(0, 2).unwrap(),
        ];
        let profile = crate::graph::degree_profile_of(3, &edges).unwrap();
        let partition = split_groups(&edges, &profile, GroupScheme::LowHigh).unwrap();
        let nonempty = partition.groups.values().filter(|g| !g.is_empty()).count();
        assert_eq!(nonempty, 1);
        let e_pos = vec![0.31f64, -0.12, 0.77];
        let e_neg = vec![-0.5f64, 0.25];
        let apportion = apportion_negatives(&partition, e_neg.len()).unwrap();
        let (grouped, gp, gn) =
            loss_link_grouped(&e_pos, &partition, &e_neg, &apportion).unwrap();
        let (plain, pp, pn) = link_loss(&e_pos, &e_neg).unwrap();
        assert_eq!(grouped.to_bits(), plain.to_bits());
        assert_eq!(gp, pp);
        assert_eq!(gn, pn);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let e_pos = vec![0.4f64, -0.9, 0.15];
        let e_neg = vec![0.6f64, -0.2];
        let (_, d_pos, d_neg) = link_loss(&e_pos, &e_neg).unwrap();
        let h = 1e-7;
        for i in 0..e_pos.len() {
            let mut up = e_pos.clone();
            let mut dn = e_pos.clone();
            up[i] += h;
            dn[i] -= h;
            let fu = link_loss(&up, &e_neg).unwrap().0;
            let fd = link_loss(&dn, &e_neg).unwrap().0;
            assert!(((fu - fd) / (2.0 * h) - d_pos[i]).abs() < 1e-8);
        }
        for j in 0..e_neg.len() {
            let mut up = e_neg.clone();
            let mut dn = e_neg.clone();
            up[j] += h;
            dn[j] -= h;
            let fu = link_loss(&e_pos, &up).unwrap().0;
            let fd = link_loss(&e_pos, &dn).unwrap().0;
            assert!(((fu - fd) / (2.0 * h) - d_neg[j]).abs() < 1e-8);
        }
    }
}
