//! Degree-group partitioning of the training edge set and negative
//! sampling.
//!
//! Grouping an edge by its endpoints' degree bands and summing the
//! per-group losses rebalances training toward low-degree nodes without
//! changing the number of loss terms: each positive edge appears in
//! exactly one group.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DegreeProfile, Edge, NodeId};
use crate::rng::derive_rng;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum GroupScheme {
    /// Low/high bands split at the median degree: groups LL, HL, HH.
    #[serde(rename = "L-H")]
    LowHigh,
    /// Low/mid/high bands split at the degree tertiles: six groups.
    #[serde(rename = "L-M-H")]
    LowMidHigh,
}

/// Unordered endpoint-band pair. The declaration order fixes the
/// canonical iteration order everywhere (loss terms, apportioning).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub enum GroupLabel {
    LL,
    ML,
    MM,
    HL,
    HM,
    HH,
}

impl GroupLabel {
    pub fn all(scheme: GroupScheme) -> &'static [GroupLabel] {
        match scheme {
            GroupScheme::LowHigh => &[GroupLabel::LL, GroupLabel::HL, GroupLabel::HH],
            GroupScheme::LowMidHigh => &[
                GroupLabel::LL,
                GroupLabel::ML,
                GroupLabel::MM,
                GroupLabel::HL,
                GroupLabel::HM,
                GroupLabel::HH,
            ],
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Band {
    Low,
    Mid,
    High,
}

/// A partition of an edge list into degree groups; `groups` maps each
/// label of the scheme (possibly to an empty list) to indices into the
/// edge slice passed to [`split_groups`].
#[derive(Clone, Debug)]
pub struct GroupPartition {
    pub scheme: GroupScheme,
    pub groups: BTreeMap<GroupLabel, Vec<usize>>,
    /// Degree cut points: `[median]` or `[tertile1, tertile2]`.
    pub thresholds: Vec<f64>,
}

impl GroupPartition {
    pub fn group_sizes(&self) -> BTreeMap<GroupLabel, usize> {
        self.groups.iter().map(|(l, g)| (*l, g.len())).collect()
    }
}

/// Assigns every edge to the group named by its endpoints' degree bands.
/// A node's band comes from strict comparison against the cut points
/// (degree < median is low; for the tertile scheme, < t1 low, < t2 mid).
pub fn split_groups(
    edges: &[Edge],
    degrees: &DegreeProfile,
    scheme: GroupScheme,
) -> Result<GroupPartition> {
    let thresholds = match scheme {
        GroupScheme::LowHigh => vec![degrees.median],
        GroupScheme::LowMidHigh => vec![
            degrees.percentile(1.0 / 3.0),
            degrees.percentile(2.0 / 3.0),
        ],
    };
    let band = |n: NodeId| -> Result<Band> {
        let d = *degrees
            .degrees
            .get(n as usize)
            .ok_or_else(|| Error::invalid(format!("no degree entry for node {n}")))?
            as f64;
        Ok(match scheme {
            GroupScheme::LowHigh => {
                if d < thresholds[0] {
                    Band::Low
                } else {
                    Band::High
                }
            }
            GroupScheme::LowMidHigh => {
                if d < thresholds[0] {
                    Band::Low
                } else if d < thresholds[1] {
                    Band::Mid
                } else {
                    Band::High
                }
            }
        })
    };
    let mut groups: BTreeMap<GroupLabel, Vec<usize>> = GroupLabel::all(scheme)
        .iter()
        .map(|l| (*l, Vec::new()))
        .collect();
    for (idx, e) in edges.iter().enumerate() {
        let label = match (band(e.u())?, band(e.v())?) {
            (Band::Low, Band::Low) => GroupLabel::LL,
            (Band::Low, Band::Mid) | (Band::Mid, Band::Low) => GroupLabel::ML,
            (Band::Mid, Band::Mid) => GroupLabel::MM,
            (Band::Low, Band::High) | (Band::High, Band::Low) => GroupLabel::HL,
            (Band::Mid, Band::High) | (Band::High, Band::Mid) => GroupLabel::HM,
            (Band::High, Band::High) => GroupLabel::HH,
        };
        groups.get_mut(&label).unwrap().push(idx);
    }
    Ok(GroupPartition {
        scheme,
        groups,
        thresholds,
    })
}

/// Draws `floor(p_n * |edges|)` distinct non-edges (no self-loops, not in
/// `edges`), deterministic in `(seed, epoch)`. `edges` must be sorted.
pub fn sample_negatives(
    edges: &[Edge],
    p_n: f64,
    num_nodes: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Edge>> {
    if !(p_n > 0.0) {
        return Err(Error::invalid("p_n must be > 0"));
    }
    let count = (p_n * edges.len() as f64).floor() as usize;
    let complement = num_nodes * num_nodes.saturating_sub(1) / 2 - edges.len();
    if count > complement {
        return Err(Error::invalid(format!(
            "cannot sample {count} negatives: only {complement} non-edges exist"
        )));
    }
    let mut rng = derive_rng(seed, "negatives", &[epoch]);
    let is_edge = |e: &Edge| edges.binary_search(e).is_ok();

    if count * 2 > complement {
        // Dense regime: enumerate the complement and take a random
        // prefix, which also handles the forced-choice case exactly.
        let mut pool = Vec::with_capacity(complement);
        for u in 0..num_nodes as NodeId {
            for v in (u + 1)..num_nodes as NodeId {
                let e = Edge::new(u, v).unwrap();
                if !is_edge(&e) {
                    pool.push(e);
                }
            }
        }
        for i in 0..count {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
        }
        pool.truncate(count);
        return Ok(pool);
    }

    let mut drawn: Vec<Edge> = Vec::with_capacity(count);
    let mut seen = std::collections::HashSet::with_capacity(count * 2);
    while drawn.len() < count {
        let a = rng.random_range(0..num_nodes as NodeId);
        let b = rng.random_range(0..num_nodes as NodeId);
        if a == b {
            continue;
        }
        let e = Edge::new(a, b).unwrap();
        if is_edge(&e) || !seen.insert(e) {
            continue;
        }
        drawn.push(e);
    }
    Ok(drawn)
}

/// Contiguous chunks of the negative-sample list assigned to each group,
/// proportional to group size.
#[derive(Clone, Debug)]
pub struct NegativeApportion {
    pub ranges: BTreeMap<GroupLabel, Range<usize>>,
    pub total: usize,
}

/// Splits `num_negatives` among the partition's nonempty groups
/// proportionally to their positive counts, guaranteeing at least one
/// negative per nonempty group.
pub fn apportion_negatives(
    partition: &GroupPartition,
    num_negatives: usize,
) -> Result<NegativeApportion> {
    let sizes: Vec<(GroupLabel, usize)> = partition
        .groups
        .iter()
        .filter(|(_, g)| !g.is_empty())
        .map(|(l, g)| (*l, g.len()))
        .collect();
    let total_pos: usize = sizes.iter().map(|(_, s)| s).sum();
    if total_pos == 0 {
        return Err(Error::invalid("cannot apportion negatives: no positive edges"));
    }
    if num_negatives < sizes.len() {
        return Err(Error::invalid(format!(
            "{num_negatives} negatives cannot cover {} nonempty groups; raise p_n",
            sizes.len()
        )));
    }
    let mut alloc: Vec<usize> = Vec::with_capacity(sizes.len());
    let mut fractions: Vec<(f64, usize)> = Vec::with_capacity(sizes.len());
    let mut assigned = 0usize;
    for (slot, (_, s)) in sizes.iter().enumerate() {
        let exact = num_negatives as f64 * *s as f64 / total_pos as f64;
        let base = exact.floor() as usize;
        alloc.push(base);
        assigned += base;
        fractions.push((exact - base as f64, slot));
    }
    // Remainder goes to the largest fractional parts; ties keep the
    // canonical label order.
    fractions.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for i in 0..num_negatives - assigned {
        alloc[fractions[i % fractions.len()].1] += 1;
    }
    // Every nonempty group needs at least one negative; steal from the
    // largest allocation.
    for i in 0..alloc.len() {
        while alloc[i] == 0 {
            let donor = (0..alloc.len()).max_by_key(|&j| alloc[j]).unwrap();
            if alloc[donor] <= 1 {
                return Err(Error::invalid(
                    "cannot give every group a negative sample; raise p_n",
                ));
            }
            alloc[donor] -= 1;
            alloc[i] += 1;
        }
    }
    let mut ranges = BTreeMap::new();
    let mut cursor = 0usize;
    for ((label, _), take) in sizes.iter().zip(&alloc) {
        ranges.insert(*label, cursor..cursor + take);
        cursor += take;
    }
    Ok(NegativeApportion {
        ranges,
        total: num_negatives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::degree_profile_of;

    #[test]
    fn band_rule_matches_the_worked_example() {
        // Degrees (1, 1, 2, 5, 8, 9): median 3.5; an edge between the
        // deg-1 node and the deg-9 node lands in HL.
        let profile = DegreeProfile {
            degrees: vec![1, 1, 2, 5, 8, 9],
            median: 3.5,
            imbalance_ratio: 9.0,
        };
        let edges = vec![Edge::new(0, 5).unwrap()];
        let p = split_groups(&edges, &profile, GroupScheme::LowHigh).unwrap();
        assert_eq!(p.groups[&GroupLabel::HL], vec![0]);
        assert!(p.groups[&GroupLabel::LL].is_empty());
    }

    #[test]
    fn regular_graph_collapses_to_hh() {
        let edges = vec![
            Edge::new(0, 1).unwrap(),
            Edge::new(1, 2).unwrap(),
            Edge::new(0, 2).unwrap(),
        ];
        let profile = degree_profile_of(3, &edges).unwrap();
        let p = split_groups(&edges, &profile, GroupScheme::LowHigh).unwrap();
        assert_eq!(p.groups[&GroupLabel::HH].len(), 3);
        assert!(p.groups[&GroupLabel::LL].is_empty());
        assert!(p.groups[&GroupLabel::HL].is_empty());
    }

    #[test]
    fn partition_is_disjoint_and_exhaustive() {
        let b = crate::synth::generate_scale_free(80, 3).unwrap();
        let profile = degree_profile_of(80, b.edges()).unwrap();
        for scheme in [GroupScheme::LowHigh, GroupScheme::LowMidHigh] {
            let p = split_groups(b.edges(), &profile, scheme).unwrap();
            let mut seen = vec![false; b.num_edges()];
            for group in p.groups.values() {
                for &idx in group {
                    assert!(!seen[idx], "edge {idx} in two groups");
                    seen[idx] = true;
                }
            }
            assert!(seen.iter().all(|&s| s), "some edge missing from all groups");
            assert_eq!(p.groups.len(), GroupLabel::all(scheme).len());
        }
    }

    #[test]
    fn grouping_lowers_the_imbalance_ratio_on_scale_free_graphs() {
        let b = crate::synth::generate_scale_free(150, 4).unwrap();
        let profile = degree_profile_of(150, b.edges()).unwrap();
        let p = split_groups(b.edges(), &profile, GroupScheme::LowHigh).unwrap();
        let whole = profile.imbalance_ratio;
        for (label, members) in &p.groups {
            if members.is_empty() {
                continue;
            }
            let subset: Vec<Edge> = members.iter().map(|&i| b.edges()[i]).collect();
            let ratio = degree_profile_of(150, &subset).unwrap().imbalance_ratio;
            assert!(
                ratio < whole,
                "group {label:?} ratio {ratio} not below whole-set ratio {whole}"
            );
        }
    }

    #[test]
    fn negatives_avoid_edges_and_are_reproducible() {
        let b = crate::synth::generate_sbm(2, 20, 0.3, 0.05, 4, 1.0, 1).unwrap();
        let negatives = sample_negatives(b.edges(), 0.5, 40, 9, 0).unwrap();
        assert_eq!(
            negatives.len(),
            (0.5 * b.num_edges() as f64).floor() as usize
        );
        for e in &negatives {
            assert!(!b.has_edge(e.u(), e.v()));
        }
        let mut unique = negatives.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), negatives.len());
        assert_eq!(negatives, sample_negatives(b.edges(), 0.5, 40, 9, 0).unwrap());
        assert_ne!(negatives, sample_negatives(b.edges(), 0.5, 40, 9, 1).unwrap());
    }

    #[test]
    fn forced_choice_returns_the_only_non_edge() {
        // K4 minus one edge: the only negative is that edge.
        let missing = Edge::new(2, 3).unwrap();
        let edges = vec![
            Edge::new(0, 1).unwrap(),
            Edge::new(0, 2).unwrap(),
            Edge::new(0, 3).unwrap(),
            Edge::new(1, 2).unwrap(),
            Edge::new(1, 3).unwrap(),
        ];
        // floor(0.2 * 5) = 1 negative requested.
        let negatives = sample_negatives(&edges, 0.2, 4, 0, 0).unwrap();
        assert_eq!(negatives, vec![missing]);
    }

    #[test]
    fn exhausted_complement_errors() {
        let edges = vec![
            Edge::new(0, 1).unwrap(),
            Edge::new(0, 2).unwrap(),
            Edge::new(1, 2).unwrap(),
        ];
        assert!(sample_negatives(&edges, 1.0, 3, 0, 0).is_err());
    }

    #[test]
    fn apportioning_is_proportional_and_total() {
        let profile = DegreeProfile {
            degrees: vec![1, 1, 4, 4],
            median: 2.5,
            imbalance_ratio: 4.0,
        };
        // 6 LL edges, 3 HL, 1 HH.
        let mut edges = Vec::new();
        for _ in 0..6 {
            edges.push(Edge::new(0, 1).unwrap());
        }
        for _ in 0..3 {
            edges.push(Edge::new(0, 2).unwrap());
        }
        edges.push(Edge::new(2, 3).unwrap());
        let p = split_groups(&edges, &profile, GroupScheme::LowHigh).unwrap();
        let a = apportion_negatives(&p, 10).unwrap();
        assert_eq!(a.ranges[&GroupLabel::LL].len(), 6);
        assert_eq!(a.ranges[&GroupLabel::HL].len(), 3);
        assert_eq!(a.ranges[&GroupLabel::HH].len(), 1);
        let covered: usize = a.ranges.values().map(|r| r.len()).sum();
        assert_eq!(covered, 10);
        // Every nonempty group keeps at least one negative even when the
        // proportional share rounds to zero.
        let tight = apportion_negatives(&p, 3).unwrap();
        assert!(tight.ranges.values().all(|r| !r.is_empty()));
        assert!(apportion_negatives(&p, 2).is_err());
    }
}
