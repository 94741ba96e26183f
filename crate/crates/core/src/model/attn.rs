//! Forward pass with full caching for exact reverse-mode gradients.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::{Edge, NodeId};
use crate::model::ModelParams;
use crate::rng::derive_rng;
use crate::scalar::Scalar;

const LEAKY_SLOPE: f64 = 0.2;

#[inline]
fn leaky<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x
    } else {
        x * S::from_f64(LEAKY_SLOPE)
    }
}

#[inline]
pub(crate) fn leaky_grad<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        S::one()
    } else {
        S::from_f64(LEAKY_SLOPE)
    }
}

/// Directed-arc view of an undirected edge set: each node's arc block
/// starts with its self-loop, followed by its neighbors ascending.
#[derive(Clone, Debug)]
pub struct AttnGraph {
    num_nodes: usize,
    offsets: Vec<usize>,
    targets: Vec<NodeId>,
    edges: Vec<Edge>,
    arc_fwd: Vec<usize>,
    arc_rev: Vec<usize>,
}

impl AttnGraph {
    /// `edges` must be in canonical (sorted) order.
    pub fn build(num_nodes: usize, edges: &[Edge]) -> AttnGraph {
        let mut degree = vec![1usize; num_nodes]; // self arc
        for e in edges {
            degree[e.u() as usize] += 1;
            degree[e.v() as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut targets = vec![0 as NodeId; offsets[num_nodes]];
        let mut cursor: Vec<usize> = offsets[..num_nodes].to_vec();
        for n in 0..num_nodes {
            targets[cursor[n]] = n as NodeId;
            cursor[n] += 1;
        }
        for e in edges {
            targets[cursor[e.u() as usize]] = e.v();
            cursor[e.u() as usize] += 1;
            targets[cursor[e.v() as usize]] = e.u();
            cursor[e.v() as usize] += 1;
        }
        for n in 0..num_nodes {
            targets[offsets[n] + 1..offsets[n + 1]].sort_unstable();
        }
        let locate = |src: NodeId, dst: NodeId| -> usize {
            let block = &targets[offsets[src as usize] + 1..offsets[src as usize + 1]];
            offsets[src as usize] + 1 + block.binary_search(&dst).expect("edge endpoint present")
        };
        let arc_fwd: Vec<usize> = edges.iter().map(|e| locate(e.u(), e.v())).collect();
        let arc_rev: Vec<usize> = edges.iter().map(|e| locate(e.v(), e.u())).collect();
        AttnGraph {
            num_nodes,
            offsets,
            targets,
            edges: edges.to_vec(),
            arc_fwd,
            arc_rev,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_arcs(&self) -> usize {
        self.targets.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    #[inline]
    pub fn arcs_of(&self, node: usize) -> std::ops::Range<usize> {
        self.offsets[node]..self.offsets[node + 1]
    }

    #[inline]
    pub fn target(&self, arc: usize) -> NodeId {
        self.targets[arc]
    }

    /// Arc index of the canonical direction (u -> v) of edge `idx`.
    pub fn forward_arc(&self, idx: usize) -> usize {
        self.arc_fwd[idx]
    }

    /// Arc index of the reverse direction (v -> u) of edge `idx`.
    pub fn reverse_arc(&self, idx: usize) -> usize {
        self.arc_rev[idx]
    }
}

/// Dropout configuration for one training step; masks derive from
/// `(seed, epoch, layer, head)` so a step is reproducible in isolation.
#[derive(Clone, Copy, Debug)]
pub struct DropoutPlan {
    pub rate: f64,
    pub seed: u64,
    pub epoch: u64,
}

pub(crate) struct HeadCache<S: Scalar> {
    pub z: Array2<S>,
    /// Pre-activation attention logits per arc.
    pub e: Vec<S>,
    /// Softmax coefficients per arc (before attention dropout).
    pub alpha: Vec<S>,
    /// Coefficients actually applied to messages.
    pub alpha_used: Vec<S>,
    /// Pre-activation aggregated messages.
    pub m: Array2<S>,
    /// Attention dropout multipliers, when active.
    pub attn_mask: Option<Vec<S>>,
}

pub(crate) struct LayerCache<S: Scalar> {
    /// The input actually multiplied by the weights (after feature
    /// dropout).
    pub input: Array2<S>,
    /// Feature dropout multipliers, when active.
    pub input_mask: Option<Array2<S>>,
    pub heads: Vec<HeadCache<S>>,
}

/// Cached intermediate state of one forward pass.
pub struct ForwardPass<S: Scalar> {
    pub(crate) graph: AttnGraph,
    pub(crate) layers: Vec<LayerCache<S>>,
    pub logits: Array2<S>,
}

fn dropout_mask<S: Scalar>(
    shape: (usize, usize),
    rate: f64,
    rng: &mut rand_chacha::ChaCha12Rng,
) -> Array2<S> {
    use rand::Rng;
    let keep = S::from_f64(1.0 / (1.0 - rate));
    Array2::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < rate {
            S::zero()
        } else {
            keep
        }
    })
}

/// Runs the attention network over `edges`, caching every intermediate
/// needed by [`backward`](crate::model::backward).
///
/// Attention covers each node's neighborhood plus itself; hidden layers
/// concatenate head outputs behind a LeakyReLU, the final layer averages
/// head messages into pre-softmax class logits.
pub fn forward<S: Scalar>(
    params: &ModelParams<S>,
    features: &Array2<S>,
    edges: &[Edge],
    dropout: Option<&DropoutPlan>,
) -> Result<ForwardPass<S>> {
    if features.ncols() != params.in_dim() {
        return Err(Error::Dimension {
            context: "feature columns vs model input dim",
            left: features.ncols(),
            right: params.in_dim(),
        });
    }
    let n = features.nrows();
    for e in edges {
        if e.v() as usize >= n {
            return Err(Error::invalid(format!(
                "edge ({}, {}) references node >= {n}",
                e.u(),
                e.v()
            )));
        }
    }
    if let Some(plan) = dropout {
        if !(0.0..1.0).contains(&plan.rate) {
            return Err(Error::invalid("dropout rate must lie in [0, 1)"));
        }
    }
    let graph = AttnGraph::build(n, edges);
    let num_layers = params.num_layers();
    let num_heads = params.num_heads();
    let mut layers: Vec<LayerCache<S>> = Vec::with_capacity(num_layers);
    let mut hidden: Array2<S> = features.clone();
    let mut logits = Array2::<S>::zeros((n, params.num_classes()));

    for l in 0..num_layers {
        let is_final = l == num_layers - 1;
        let (input, input_mask) = match dropout {
            Some(plan) if plan.rate > 0.0 => {
                let mut rng = derive_rng(plan.seed, "dropout-feat", &[plan.epoch, l as u64]);
                let mask = dropout_mask::<S>(hidden.dim(), plan.rate, &mut rng);
                (&hidden * &mask, Some(mask))
            }
            _ => (hidden.clone(), None),
        };

        let mut heads: Vec<HeadCache<S>> = Vec::with_capacity(num_heads);
        for h in 0..num_heads {
            let w = params.weight(l, h);
            let z = input.dot(&w.t());
            let f_out = z.ncols();
            let inv_sqrt = S::from_f64(1.0 / (f_out as f64).sqrt());

            let mut e = vec![S::zero(); graph.num_arcs()];
            for i in 0..n {
                let zi = z.row(i);
                for arc in graph.arcs_of(i) {
                    let zj = z.row(graph.target(arc) as usize);
                    let mut dot = S::zero();
                    for (a, b) in zi.iter().zip(zj.iter()) {
                        dot = dot + *a * *b;
                    }
                    e[arc] = dot * inv_sqrt;
                }
            }

            // Softmax of leaky(e) over each node's arc block.
            let mut alpha = vec![S::zero(); graph.num_arcs()];
            for i in 0..n {
                let arcs = graph.arcs_of(i);
                let mut max = S::neg_infinity();
                for arc in arcs.clone() {
                    let a = leaky(e[arc]);
                    if a > max {
                        max = a;
                    }
                }
                let mut sum = S::zero();
                for arc in arcs.clone() {
                    let v = (leaky(e[arc]) - max).exp();
                    alpha[arc] = v;
                    sum = sum + v;
                }
                for arc in arcs {
                    alpha[arc] = alpha[arc] / sum;
                }
            }

            let (alpha_used, attn_mask) = match dropout {
                Some(plan) if plan.rate > 0.0 => {
                    let mut rng = derive_rng(
                        plan.seed,
                        "dropout-attn",
                        &[plan.epoch, l as u64, h as u64],
                    );
                    let keep = S::from_f64(1.0 / (1.0 - plan.rate));
                    use rand::Rng;
                    let mask: Vec<S> = (0..graph.num_arcs())
                        .map(|_| {
                            if rng.random::<f64>() < plan.rate {
                                S::zero()
                            } else {
                                keep
                            }
                        })
                        .collect();
                    let used: Vec<S> = alpha
                        .iter()
                        .zip(&mask)
                        .map(|(a, m)| *a * *m)
                        .collect();
                    (used, Some(mask))
                }
                _ => (alpha.clone(), None),
            };

            let mut m = Array2::<S>::zeros((n, f_out));
            for i in 0..n {
                for arc in graph.arcs_of(i) {
                    let coeff = alpha_used[arc];
                    if coeff == S::zero() {
                        continue;
                    }
                    let zj = z.row(graph.target(arc) as usize);
                    let mut mi = m.row_mut(i);
                    for (out, val) in mi.iter_mut().zip(zj.iter()) {
                        *out = *out + coeff * *val;
                    }
                }
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("attention layer {l}, head {h}")));
            }

            heads.push(HeadCache {
                z,
                e,
                alpha,
                alpha_used,
                m,
                attn_mask,
            });
        }

        if is_final {
            let inv_heads = S::from_f64(1.0 / num_heads as f64);
            for head in &heads {
                logits = logits + &head.m;
            }
            logits = logits.mapv(|v| v * inv_heads);
        } else {
            let width = heads[0].m.ncols();
            let mut next = Array2::<S>::zeros((n, width * num_heads));
            for (h, head) in heads.iter().enumerate() {
                for i in 0..n {
                    for d in 0..width {
                        next[(i, h * width + d)] = leaky(head.m[(i, d)]);
                    }
                }
            }
            hidden = next;
        }

        layers.push(LayerCache {
            input,
            input_mask,
            heads,
        });
    }

    Ok(ForwardPass {
        graph,
        layers,
        logits,
    })
}

impl<S: Scalar> ForwardPass<S> {
    pub fn graph(&self) -> &AttnGraph {
        &self.graph
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Head-averaged attention logit per undirected edge at `layer`.
    pub fn positive_scores(&self, layer: usize) -> Vec<S> {
        let heads = &self.layers[layer].heads;
        let inv = S::from_f64(1.0 / heads.len() as f64);
        (0..self.graph.edges().len())
            .map(|idx| {
                let arc = self.graph.forward_arc(idx);
                let mut sum = S::zero();
                for head in heads {
                    sum = sum + head.e[arc];
                }
                sum * inv
            })
            .collect()
    }

    /// Head-averaged attention logits for arbitrary node pairs at
    /// `layer`, computed from the cached projections. Used for negative
    /// samples, which take no part in message passing.
    pub fn pair_scores(&self, layer: usize, pairs: &[Edge]) -> Vec<S> {
        let heads = &self.layers[layer].heads;
        let inv = S::from_f64(1.0 / heads.len() as f64);
        pairs
            .iter()
            .map(|pair| {
                let mut sum = S::zero();
                for head in heads {
                    let f_out = head.z.ncols();
                    let inv_sqrt = S::from_f64(1.0 / (f_out as f64).sqrt());
                    let zu = head.z.row(pair.u() as usize);
                    let zv = head.z.row(pair.v() as usize);
                    let mut dot = S::zero();
                    for (a, b) in zu.iter().zip(zv.iter()) {
                        dot = dot + *a * *b;
                    }
                    sum = sum + dot * inv_sqrt;
                }
                sum * inv
            })
            .collect()
    }

    /// Mean attention coefficient per undirected edge at `layer`
    /// (averaged over heads and both directions; pre-dropout).
    pub fn mean_alpha_per_edge(&self, layer: usize) -> Vec<f64> {
        let heads = &self.layers[layer].heads;
        (0..self.graph.edges().len())
            .map(|idx| {
                let fwd = self.graph.forward_arc(idx);
                let rev = self.graph.reverse_arc(idx);
                let mut sum = 0.0;
                for head in heads {
                    sum += 0.5 * (head.alpha[fwd].as_f64() + head.alpha[rev].as_f64());
                }
                sum / heads.len() as f64
            })
            .collect()
    }

    /// Per-node attention coefficients at `layer`, head-averaged, as
    /// `(source, target, alpha)` triples covering self-loops too.
    pub fn alpha_triples(&self, layer: usize) -> Vec<(NodeId, NodeId, f64)> {
        let heads = &self.layers[layer].heads;
        let mut out = Vec::with_capacity(self.graph.num_arcs());
        for i in 0..self.graph.num_nodes() {
            for arc in self.graph.arcs_of(i) {
                let mut sum = 0.0;
                for head in heads {
                    sum += head.alpha[arc].as_f64();
                }
                out.push((i as NodeId, self.graph.target(arc), sum / heads.len() as f64));
            }
        }
        out
    }

    /// Argmax class per node; ties resolve to the lower class index.
    pub fn predictions(&self) -> Vec<u16> {
        self.logits
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0usize;
                for (c, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = c;
                    }
                }
                best as u16
            })
            .collect()
    }

    /// Row-stochastic softmax of the logits in f64.
    pub fn probabilities(&self) -> crate::augment::ClassProbMatrix {
        let n = self.logits.nrows();
        let c = self.logits.ncols();
        let mut probs = Array2::<f64>::zeros((n, c));
        for i in 0..n {
            let row = self.logits.row(i);
            let max = row
                .iter()
                .map(|v| v.as_f64())
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..c {
                let v = (row[j].as_f64() - max).exp();
                probs[(i, j)] = v;
                sum += v;
            }
            for j in 0..c {
                probs[(i, j)] /= sum;
            }
        }
        crate::augment::ClassProbMatrix::new(probs).expect("softmax rows are stochastic")
    }
}
