//! The training loop and refined inference.
//!
//! Per epoch: augment the extracted sub-graph with JSD-filtered
//! candidates under the current class predictions, run the attention
//! network over the augmented edge set, split the edges into degree
//! groups (thresholds fixed once, from the sub-graph), combine the
//! classification loss with the weighted per-layer grouped link losses,
//! and take one adaptive-moment step. Early stopping tracks validation
//! accuracy; the best parameters are returned.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_subgraph, AugmentedEdgeSet, ClassProbMatrix};
use crate::error::{Error, Result};
use crate::extract::KnnCandidates;
use crate::graph::{degree_profile_of, Edge, GraphBundle, NodeId};
use crate::model::attn::{forward, DropoutPlan, ForwardPass};
use crate::model::backward::{backward, LossGradients};
use crate::model::groups::{apportion_negatives, sample_negatives, split_groups, GroupScheme};
use crate::model::loss::{link_loss, loss_link_grouped, loss_node};
use crate::model::{ArchConfig, ModelParams, TrainConfig};
use crate::scalar::Scalar;

/// Everything Phase 1 hands to Phase 2.
#[derive(Clone, Debug)]
pub struct Phase1Artifacts {
    /// The extracted clean sub-graph, canonical order.
    pub subgraph: Vec<Edge>,
    pub candidates: KnnCandidates,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_node: f64,
    /// Unweighted sum of the per-layer link losses.
    pub loss_link: f64,
    pub val_accuracy: f64,
    pub num_edges: usize,
    pub jsd_evaluations: usize,
}

/// Snapshot handed to the epoch observer.
pub struct EpochState<'a> {
    pub log: &'a EpochLog,
    pub augmented: &'a AugmentedEdgeSet,
}

pub struct TrainOutput {
    pub params: ModelParams<f32>,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

struct Adam {
    m: Vec<Vec<Array2<f32>>>,
    v: Vec<Vec<Array2<f32>>>,
    step: i32,
    beta1: f32,
    beta2: f32,
    eps: f32,
}

impl Adam {
    fn new(params: &ModelParams<f32>) -> Adam {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn step(
        &mut self,
        params: &mut ModelParams<f32>,
        grads: &[Vec<Array2<f32>>],
        lr: f32,
        weight_decay: f32,
    ) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for l in 0..grads.len() {
            for h in 0..grads[l].len() {
                let w = params.weight_mut(l, h);
                let m = &mut self.m[l][h];
                let v = &mut self.v[l][h];
                for ((wv, gv), (mv, vv)) in w
                    .iter_mut()
                    .zip(grads[l][h].iter())
                    .zip(m.iter_mut().zip(v.iter_mut()))
                {
                    let g = gv + weight_decay * *wv;
                    *mv = self.beta1 * *mv + (1.0 - self.beta1) * g;
                    *vv = self.beta2 * *vv + (1.0 - self.beta2) * g * g;
                    let m_hat = *mv / bc1;
                    let v_hat = *vv / bc2;
                    *wv -= lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
        }
    }
}

pub fn evaluate_accuracy(predictions: &[u16], labels: &[Option<u16>], nodes: &[NodeId]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let hits = nodes
        .iter()
        .filter(|&&n| labels[n as usize] == Some(predictions[n as usize]))
        .count();
    hits as f64 / nodes.len() as f64
}

/// Trains the refinement network on the Phase-1 artifacts.
///
/// `scheme` of `None` trains the plain (ungrouped) link loss. The epoch
/// observer sees every epoch's log and augmented edge set.
#[allow(clippy::too_many_arguments)]
pub fn train<F>(
    bundle: &GraphBundle,
    artifacts: &Phase1Artifacts,
    config: &TrainConfig,
    arch: &ArchConfig,
    scheme: Option<GroupScheme>,
    lambda_aug: f64,
    mut on_epoch: F,
) -> Result<TrainOutput>
where
    F: FnMut(&EpochState),
{
    config.validate()?;
    arch.validate()?;
    if bundle.splits().train.is_empty() || bundle.splits().val.is_empty() {
        return Err(Error::invalid(
            "training requires nonempty train and val splits",
        ));
    }
    if artifacts.subgraph.is_empty() {
        return Err(Error::invalid("the extracted sub-graph is empty"));
    }
    if config.epochs == 0 {
        return Err(Error::invalid("epochs must be >= 1"));
    }

    let n = bundle.num_nodes();
    let num_classes = bundle.num_classes();
    let features = bundle.features();
    // Group thresholds stay fixed across epochs: degrees come from the
    // extracted sub-graph, not the per-epoch augmented set.
    let subgraph_degrees = degree_profile_of(n, &artifacts.subgraph)?;

    let mut params: ModelParams<f32> =
        ModelParams::init(arch, features.ncols(), num_classes, config.seed)?;
    let mut adam = Adam::new(&params);
    let lambda_e = config.lambda_e as f32;

    let mut log: Vec<EpochLog> = Vec::new();
    let mut best: Option<(f64, usize, ModelParams<f32>)> = None;
    let mut stale = 0usize;

    for epoch in 0..config.epochs {
        // Class predictions for the homophily filter come from a forward
        // pass over the bare sub-graph; the first epoch has no trained
        // model and falls back to the uniform distribution.
        let probs = if epoch == 0 {
            ClassProbMatrix::uniform(n, num_classes)
        } else {
            forward(&params, features, &artifacts.subgraph, None)?.probabilities()
        };
        let augmented =
            augment_subgraph(&artifacts.subgraph, &probs, &artifacts.candidates, lambda_aug)?;
        let edges = &augmented.union;

        let dropout_plan = DropoutPlan {
            rate: config.dropout,
            seed: config.seed,
            epoch: epoch as u64,
        };
        let dropout = (config.dropout > 0.0).then_some(&dropout_plan);
        let pass = forward(&params, features, edges, dropout)?;

        let (node_loss, d_logits) =
            loss_node(&pass.logits, bundle.labels(), &bundle.splits().train)?;

        let mut link_total = 0.0f64;
        let mut d_e_pos: Vec<Vec<f32>> = Vec::with_capacity(arch.num_layers);
        let mut d_e_neg: Vec<Vec<f32>> = Vec::with_capacity(arch.num_layers);
        let mut negatives: Vec<Edge> = Vec::new();
        if lambda_e > 0.0 {
            negatives = sample_negatives(edges, config.p_n, n, config.seed, epoch as u64)?;
            let grouping = match scheme {
                Some(s) => {
                    let partition = split_groups(edges, &subgraph_degrees, s)?;
                    let apportion = apportion_negatives(&partition, negatives.len())?;
                    Some((partition, apportion))
                }
                None => None,
            };
            for layer in 0..arch.num_layers {
                let e_pos = pass.positive_scores(layer);
                let e_neg = pass.pair_scores(layer, &negatives);
                let (layer_loss, d_pos, d_neg) = match &grouping {
                    Some((partition, apportion)) => {
                        loss_link_grouped(&e_pos, partition, &e_neg, apportion)?
                    }
                    None => link_loss(&e_pos, &e_neg)?,
                };
                link_total += layer_loss as f64;
                d_e_pos.push(d_pos.into_iter().map(|g| g * lambda_e).collect());
                d_e_neg.push(d_neg.into_iter().map(|g| g * lambda_e).collect());
            }
        } else {
            d_e_pos = vec![Vec::new(); arch.num_layers];
            d_e_neg = vec![Vec::new(); arch.num_layers];
        }

        let total = node_loss as f64 + config.lambda_e * link_total;
        if !total.is_finite() {
            return Err(Error::NonFinite(format!(
                "training diverged at epoch {epoch} (loss {total})"
            )));
        }

        let grads = backward(
            &params,
            &pass,
            &LossGradients {
                d_logits,
                d_e_pos,
                d_e_neg,
                neg_pairs: negatives,
            },
        )?;
        adam.step(&mut params, &grads, config.lr as f32, config.weight_decay as f32);

        let eval_pass = forward(&params, features, edges, None)?;
        let val_accuracy =
            evaluate_accuracy(&eval_pass.predictions(), bundle.labels(), &bundle.splits().val);

        let entry = EpochLog {
            epoch,
            loss_total: total,
            loss_node: node_loss as f64,
            loss_link: link_total,
            val_accuracy,
            num_edges: edges.len(),
            jsd_evaluations: augmented.jsd_evaluations,
        };
        on_epoch(&EpochState {
            log: &entry,
            augmented: &augmented,
        });
        log.push(entry);

        let improved = best.as_ref().map_or(true, |(acc, _, _)| val_accuracy > *acc);
        if improved {
            best = Some((val_accuracy, epoch, params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }

    let (best_val_accuracy, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok(TrainOutput {
        params: best_params,
        log,
        best_epoch,
        best_val_accuracy,
    })
}

pub struct InferenceOutput {
    pub predictions: Vec<u16>,
    /// Final-layer attention per edge of the attacked graph (head- and
    /// direction-averaged), aligned with the bundle's edge order.
    pub edge_alphas: Vec<f64>,
    pub probabilities: ClassProbMatrix,
}

/// Runs the trained attention weights over the full attacked edge set
/// (dropout off): adversarial edges receive small attention during
/// message passing, refining the structure without editing it.
pub fn infer_refined<S: Scalar>(
    params: &ModelParams<S>,
    bundle: &GraphBundle,
) -> Result<InferenceOutput> {
    if bundle.num_features() != params.in_dim() {
        return Err(Error::Dimension {
            context: "bundle features vs model input dim",
            left: bundle.num_features(),
            right: params.in_dim(),
        });
    }
    let features = bundle.features().mapv(|v| S::from_f64(f64::from(v)));
    let pass: ForwardPass<S> = forward(params, &features, bundle.edges(), None)?;
    let final_layer = params.num_layers() - 1;
    Ok(InferenceOutput {
        predictions: pass.predictions(),
        edge_alphas: pass.mean_alpha_per_edge(final_layer),
        probabilities: pass.probabilities(),
    })
}
