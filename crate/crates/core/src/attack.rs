//! Poisoning simulators with ground-truth provenance.
//!
//! These stand in for external gradient-based attacks: random structure
//! poisoning that preferentially joins nodes of different classes,
//! additive Gaussian feature noise, and a fraudster simulator that plants
//! co-review cliques and copies review-derived feature rows. Every
//! injected edge is tagged [`Provenance::Adversarial`]; original edges
//! are tagged [`Provenance::Clean`], so extraction quality can be
//! measured exactly.

use std::collections::BTreeSet;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Edge, GraphBundle, NodeId, Provenance};
use crate::rng::derive_rng;
use crate::scalar::Scalar;

/// Probability that a structure-poisoning edge targets an inter-class
/// pair; the remainder lands on arbitrary non-edges. Pure inter-class
/// injection would be unrealistically easy to detect.
const INTER_CLASS_BIAS: f64 = 0.9;

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct AttackConfig {
    /// Fraction of |E| new edges to inject.
    pub ptb_rate: f64,
    /// Feature noise scale.
    pub gamma: f64,
    /// Fraction of nodes receiving feature noise.
    pub noisy_node_frac: f64,
    pub seed: u64,
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ptb_rate < 0.0 {
            return Err(Error::invalid("ptb_rate must be >= 0"));
        }
        if self.gamma < 0.0 {
            return Err(Error::invalid("gamma must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.noisy_node_frac) {
            return Err(Error::invalid("noisy_node_frac must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct FraudConfig {
    pub num_fraudsters: usize,
    pub reviews_per_fraudster: usize,
    pub seed: u64,
}

impl FraudConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_fraudsters < 1 || self.reviews_per_fraudster < 1 {
            return Err(Error::invalid(
                "num_fraudsters and reviews_per_fraudster must be >= 1",
            ));
        }
        Ok(())
    }
}

/// Injects `floor(ptb_rate * |E|)` new edges, preferring pairs with
/// different labels, and tags provenance for every edge of the result.
pub fn inject_structure_attack(bundle: &GraphBundle, config: &AttackConfig) -> Result<GraphBundle> {
    config.validate()?;
    let num_add = (config.ptb_rate * bundle.num_edges() as f64).floor() as usize;
    let clean_tags = vec![Provenance::Clean; bundle.num_edges()];
    if config.ptb_rate == 0.0 {
        return bundle.with_edges(bundle.edges().to_vec(), Some(clean_tags));
    }
    if num_add == 0 {
        return Err(Error::invalid(
            "ptb_rate * |E| < 1; nothing to inject (use ptb_rate = 0 for a clean copy)",
        ));
    }
    let n = bundle.num_nodes();
    let complement = n * (n - 1) / 2 - bundle.num_edges();
    if num_add > complement {
        return Err(Error::invalid(format!(
            "graph too dense: requested {num_add} new edges but only {complement} non-edges exist"
        )));
    }

    let labeled: Vec<NodeId> = (0..n as NodeId)
        .filter(|&i| bundle.labels()[i as usize].is_some())
        .collect();
    if labeled.len() < 2 {
        return Err(Error::invalid(
            "structure attack needs labeled nodes for inter-class targeting",
        ));
    }

    let mut rng = derive_rng(config.seed, "structure-attack", &[]);
    let mut added: BTreeSet<Edge> = BTreeSet::new();
    let mut attempts = 0usize;
    let attempt_budget = 1000 + 10_000 * num_add;
    while added.len() < num_add {
        attempts += 1;
        if attempts > attempt_budget {
            return Err(Error::invalid(
                "structure attack could not place the requested edges; graph too dense",
            ));
        }
        let inter_class = rng.random::<f64>() < INTER_CLASS_BIAS;
        let (a, b) = if inter_class {
            let a = labeled[rng.random_range(0..labeled.len())];
            let b = labeled[rng.random_range(0..labeled.len())];
            if bundle.labels()[a as usize] == bundle.labels()[b as usize] {
                continue;
            }
            (a, b)
        } else {
            (
                rng.random_range(0..n as NodeId),
                rng.random_range(0..n as NodeId),
            )
        };
        if a == b {
            continue;
        }
        let edge = Edge::new(a, b).unwrap();
        if bundle.has_edge(a, b) || added.contains(&edge) {
            continue;
        }
        added.insert(edge);
    }

    let mut edges = bundle.edges().to_vec();
    let mut tags = clean_tags;
    for e in added {
        edges.push(e);
        tags.push(Provenance::Adversarial);
    }
    bundle.with_edges(edges, Some(tags))
}

/// Adds `gamma`-scaled standard normal noise to the feature rows of
/// `floor(noisy_node_frac * N)` uniformly chosen nodes.
pub fn inject_feature_noise(bundle: &GraphBundle, config: &AttackConfig) -> Result<GraphBundle> {
    config.validate()?;
    if config.gamma <= 0.0 {
        return Err(Error::invalid("feature noise requires gamma > 0"));
    }
    let n = bundle.num_nodes();
    let num_noisy = (config.noisy_node_frac * n as f64).floor() as usize;
    let mut rng = derive_rng(config.seed, "feature-noise", &[]);

    // Partial Fisher-Yates: the first num_noisy entries are a uniform
    // sample without replacement.
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..num_noisy {
        let j = rng.random_range(i..n);
        order.swap(i, j);
    }
    let mut selected = order[..num_noisy].to_vec();
    selected.sort_unstable();

    let mut features = bundle.features().clone();
    let gamma = config.gamma as f32;
    for &node in &selected {
        for d in 0..features.ncols() {
            features[(node, d)] += gamma * f32::sample_standard_normal(&mut rng);
        }
    }
    bundle.with_features(features)
}

/// Simulates fraudsters writing fake co-reviews: each fraudster picks
/// `reviews_per_fraudster` products uniformly, the co-review clique over
/// that set is injected (new pairs tagged adversarial), and every
/// attacked product's feature row is blended 0.5/0.5 with the original
/// row of a uniformly chosen donor product, standing in for a copied
/// review text.
pub fn generate_fraud_graph(base: &GraphBundle, config: &FraudConfig) -> Result<GraphBundle> {
    config.validate()?;
    let n = base.num_nodes();
    if config.reviews_per_fraudster > n {
        return Err(Error::invalid(format!(
            "reviews_per_fraudster ({}) exceeds the number of products ({n})",
            config.reviews_per_fraudster
        )));
    }

    let mut rng = derive_rng(config.seed, "fraud", &[]);
    let original = base.features().clone();
    let mut features = base.features().clone();
    let mut added: BTreeSet<Edge> = BTreeSet::new();

    for _ in 0..config.num_fraudsters {
        let mut order: Vec<usize> = (0..n).collect();
        for i in 0..config.reviews_per_fraudster {
            let j = rng.random_range(i..n);
            order.swap(i, j);
        }
        let basket = &order[..config.reviews_per_fraudster];
        for (i, &a) in basket.iter().enumerate() {
            for &b in &basket[i + 1..] {
                let edge = Edge::new(a as NodeId, b as NodeId).unwrap();
                if !base.has_edge(edge.u(), edge.v()) {
                    added.insert(edge);
                }
            }
        }
        for &victim in basket {
            let donor = loop {
                let d = rng.random_range(0..n);
                if d != victim {
                    break d;
                }
            };
            for col in 0..features.ncols() {
                features[(victim, col)] =
                    0.5 * features[(victim, col)] + 0.5 * original[(donor, col)];
            }
        }
    }

    let mut edges = base.edges().to_vec();
    let mut tags = vec![Provenance::Clean; edges.len()];
    for e in added {
        edges.push(e);
        tags.push(Provenance::Adversarial);
    }
    let poisoned = base.with_edges(edges, Some(tags))?;
    poisoned.with_features(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{clean_rate, Splits};
    use crate::metrics::inter_class_edge_ratio;
    use crate::synth::generate_sbm;
    use ndarray::Array2;

    fn line_graph(n: usize) -> GraphBundle {
        let edges = (0..n as NodeId - 1)
            .map(|i| Edge::new(i, i + 1).unwrap())
            .collect();
        GraphBundle::new(
            n,
            edges,
            Array2::zeros((n, 3)),
            (0..n).map(|i| Some((i % 2) as u16)).collect(),
            Splits::default(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn injects_the_requested_edge_count() {
        let b = generate_sbm(2, 40, 0.2, 0.02, 4, 1.0, 3).unwrap();
        let cfg = AttackConfig {
            ptb_rate: 0.25,
            gamma: 0.0,
            noisy_node_frac: 0.0,
            seed: 9,
        };
        let attacked = inject_structure_attack(&b, &cfg).unwrap();
        let expected_new = (0.25 * b.num_edges() as f64).floor() as usize;
        assert_eq!(attacked.num_edges(), b.num_edges() + expected_new);
        assert_eq!(attacked.provenance().unwrap().len(), attacked.num_edges());
        // Clean edges of the output are exactly the input edges.
        let clean: Vec<Edge> = attacked
            .edges()
            .iter()
            .zip(attacked.provenance().unwrap())
            .filter(|(_, t)| **t == Provenance::Clean)
            .map(|(e, _)| *e)
            .collect();
        assert_eq!(clean, b.edges());
        assert!((clean_rate(attacked.edges(), &attacked).unwrap()
            - b.num_edges() as f64 / attacked.num_edges() as f64)
            .abs()
            < 1e-12);
    }

    #[test]
    fn zero_rate_returns_all_clean_copy() {
        let b = line_graph(10);
        let cfg = AttackConfig {
            ptb_rate: 0.0,
            gamma: 0.0,
            noisy_node_frac: 0.0,
            seed: 1,
        };
        let out = inject_structure_attack(&b, &cfg).unwrap();
        assert_eq!(out.edges(), b.edges());
        assert_eq!(clean_rate(out.edges(), &out).unwrap(), 1.0);
    }

    #[test]
    fn attack_raises_inter_class_ratio() {
        let b = generate_sbm(2, 50, 0.15, 0.01, 4, 1.0, 5).unwrap();
        let before = inter_class_edge_ratio(&b, None, None).unwrap();
        let cfg = AttackConfig {
            ptb_rate: 0.2,
            gamma: 0.0,
            noisy_node_frac: 0.0,
            seed: 17,
        };
        let attacked = inject_structure_attack(&b, &cfg).unwrap();
        let after = inter_class_edge_ratio(&attacked, None, None).unwrap();
        assert!(
            after > before,
            "inter-class ratio should rise: {before} -> {after}"
        );
    }

    #[test]
    fn same_seed_is_bit_identical_and_seeds_differ() {
        let b = generate_sbm(2, 30, 0.2, 0.02, 4, 1.0, 2).unwrap();
        let cfg = AttackConfig {
            ptb_rate: 0.3,
            gamma: 0.0,
            noisy_node_frac: 0.0,
            seed: 4,
        };
        let x = inject_structure_attack(&b, &cfg).unwrap();
        let y = inject_structure_attack(&b, &cfg).unwrap();
        assert_eq!(x, y);
        let other = inject_structure_attack(
            &b,
            &AttackConfig {
                seed: 5,
                ..cfg
            },
        )
        .unwrap();
        assert_ne!(x.edges(), other.edges());
    }

    #[test]
    fn too_dense_to_attack() {
        // Complete graph on 4 nodes has an empty complement.
        let edges = vec![
            Edge::new(0, 1).unwrap(),
            Edge::new(0, 2).unwrap(),
            Edge::new(0, 3).unwrap(),
            Edge::new(1, 2).unwrap(),
            Edge::new(1, 3).unwrap(),
            Edge::new(2, 3).unwrap(),
        ];
        let b = GraphBundle::new(
            4,
            edges,
            Array2::zeros((4, 1)),
            vec![Some(0), Some(1), Some(0), Some(1)],
            Splits::default(),
            None,
        )
        .unwrap();
        let cfg = AttackConfig {
            ptb_rate: 0.5,
            gamma: 0.0,
            noisy_node_frac: 0.0,
            seed: 0,
        };
        assert!(inject_structure_attack(&b, &cfg).is_err());
    }

    #[test]
    fn feature_noise_touches_exactly_the_sampled_rows() {
        let b = line_graph(10);
        let cfg = AttackConfig {
            ptb_rate: 0.0,
            gamma: 0.5,
            noisy_node_frac: 0.5,
            seed: 21,
        };
        let noisy = inject_feature_noise(&b, &cfg).unwrap();
        let changed = (0..10)
            .filter(|&i| noisy.features().row(i) != b.features().row(i))
            .count();
        assert_eq!(changed, 5);
        // Untouched rows are bit-identical; touched rows differ in place.
        assert_eq!(noisy.edges(), b.edges());
    }

    #[test]
    fn gamma_zero_is_rejected_and_frac_zero_is_identity() {
        let b = line_graph(6);
        let rejected = AttackConfig {
            ptb_rate: 0.0,
            gamma: 0.0,
            noisy_node_frac: 0.5,
            seed: 0,
        };
        assert!(inject_feature_noise(&b, &rejected).is_err());
        let identity = AttackConfig {
            ptb_rate: 0.0,
            gamma: 0.5,
            noisy_node_frac: 0.0,
            seed: 0,
        };
        let out = inject_feature_noise(&b, &identity).unwrap();
        assert_eq!(out.features(), b.features());
    }

    #[test]
    fn one_fraudster_plants_a_triangle() {
        let b = GraphBundle::new(
            6,
            vec![],
            Array2::from_shape_fn((6, 2), |(i, j)| (i * 2 + j) as f32),
            vec![Some(0); 6],
            Splits::default(),
            None,
        )
        .unwrap();
        let cfg = FraudConfig {
            num_fraudsters: 1,
            reviews_per_fraudster: 3,
            seed: 13,
        };
        let out = generate_fraud_graph(&b, &cfg).unwrap();
        assert_eq!(out.num_edges(), 3);
        assert!(out
            .provenance()
            .unwrap()
            .iter()
            .all(|t| *t == Provenance::Adversarial));
    }

    #[test]
    fn fraud_is_deterministic_per_seed() {
        let b = generate_sbm(2, 30, 0.1, 0.02, 4, 1.0, 8).unwrap();
        let cfg = FraudConfig {
            num_fraudsters: 5,
            reviews_per_fraudster: 6,
            seed: 77,
        };
        let x = generate_fraud_graph(&b, &cfg).unwrap();
        let y = generate_fraud_graph(&b, &cfg).unwrap();
        assert_eq!(x, y);
        assert!(x.num_edges() > b.num_edges());
    }

    #[test]
    fn fraud_rejects_oversized_baskets() {
        let b = line_graph(5);
        let cfg = FraudConfig {
            num_fraudsters: 1,
            reviews_per_fraudster: 6,
            seed: 0,
        };
        assert!(generate_fraud_graph(&b, &cfg).is_err());
    }
}
