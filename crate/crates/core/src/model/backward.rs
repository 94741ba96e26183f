//! Exact reverse-mode differentiation of the cached forward pass.
//!
//! Gradients flow from three sources: the class logits (cross-entropy),
//! the head-averaged attention logits of positive edges, and those of
//! negative pairs (link losses at every layer). The caller scales the
//! link-loss gradients by its loss weight before handing them in.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::Edge;
use crate::model::attn::{leaky_grad, ForwardPass};
use crate::model::ModelParams;
use crate::scalar::Scalar;

/// Gradients of the total loss with respect to the model outputs.
///
/// `d_e_pos[l]` aligns with the pass's edge list; `d_e_neg[l]` aligns
/// with `neg_pairs`. Both refer to the head-averaged attention logits at
/// layer `l`; [`backward`] distributes them across heads.
pub struct LossGradients<S: Scalar> {
    pub d_logits: Array2<S>,
    pub d_e_pos: Vec<Vec<S>>,
    pub d_e_neg: Vec<Vec<S>>,
    pub neg_pairs: Vec<Edge>,
}

impl<S: Scalar> LossGradients<S> {
    /// Gradients for a pure classification loss (no link terms).
    pub fn classification_only(d_logits: Array2<S>, num_layers: usize) -> LossGradients<S> {
        LossGradients {
            d_logits,
            d_e_pos: vec![Vec::new(); num_layers],
            d_e_neg: vec![Vec::new(); num_layers],
            neg_pairs: Vec::new(),
        }
    }
}

/// Computes `dL/dW` for every layer and head.
pub fn backward<S: Scalar>(
    params: &ModelParams<S>,
    pass: &ForwardPass<S>,
    grads: &LossGradients<S>,
) -> Result<Vec<Vec<Array2<S>>>> {
    let num_layers = params.num_layers();
    let num_heads = params.num_heads();
    if pass.num_layers() != num_layers {
        return Err(Error::Dimension {
            context: "pass layers vs model layers",
            left: pass.num_layers(),
            right: num_layers,
        });
    }
    for (name, per_layer) in [("d_e_pos", &grads.d_e_pos), ("d_e_neg", &grads.d_e_neg)] {
        if per_layer.len() != num_layers {
            return Err(Error::Dimension {
                context: "link gradient layers vs model layers",
                left: per_layer.len(),
                right: num_layers,
            });
        }
        for (l, v) in per_layer.iter().enumerate() {
            if v.is_empty() {
                continue; // no link-loss contribution at this layer
            }
            let expected = if name == "d_e_pos" {
                pass.graph().edges().len()
            } else {
                grads.neg_pairs.len()
            };
            if v.len() != expected {
                return Err(Error::invalid(format!(
                    "{name}[{l}] has {} entries, expected {expected}",
                    v.len()
                )));
            }
        }
    }

    let graph = pass.graph();
    let n = graph.num_nodes();
    let inv_heads = S::from_f64(1.0 / num_heads as f64);
    let mut weight_grads = params.zeros_like();
    // Gradient w.r.t. the (pre-dropout) output of the previous layer;
    // empty for the input layer.
    let mut g_hidden: Array2<S> = Array2::zeros((0, 0));

    for l in (0..num_layers).rev() {
        let cache = &pass.layers[l];
        let is_final = l == num_layers - 1;
        let f_in = cache.input.ncols();
        let mut g_input_total = Array2::<S>::zeros((n, f_in));

        for h in 0..num_heads {
            let head = &cache.heads[h];
            let f_out = head.z.ncols();
            let inv_sqrt = S::from_f64(1.0 / (f_out as f64).sqrt());

            // Upstream gradient on this head's pre-activation messages.
            let mut g_m = Array2::<S>::zeros((n, f_out));
            if is_final {
                for i in 0..n {
                    for d in 0..f_out {
                        g_m[(i, d)] = grads.d_logits[(i, d)] * inv_heads;
                    }
                }
            } else {
                for i in 0..n {
                    for d in 0..f_out {
                        let upstream = g_hidden[(i, h * f_out + d)];
                        g_m[(i, d)] = upstream * leaky_grad(head.m[(i, d)]);
                    }
                }
            }

            let mut g_z = Array2::<S>::zeros((n, f_out));
            let mut g_alpha = vec![S::zero(); graph.num_arcs()];
            // Message aggregation: m_i = sum_arcs alpha_used * z_j.
            for i in 0..n {
                let gm_i = g_m.row(i);
                for arc in graph.arcs_of(i) {
                    let j = graph.target(arc) as usize;
                    let zj = head.z.row(j);
                    let mut dot = S::zero();
                    for (a, b) in gm_i.iter().zip(zj.iter()) {
                        dot = dot + *a * *b;
                    }
                    g_alpha[arc] = dot;
                    let coeff = head.alpha_used[arc];
                    if coeff != S::zero() {
                        let mut gz_j = g_z.row_mut(j);
                        for (out, g) in gz_j.iter_mut().zip(gm_i.iter()) {
                            *out = *out + coeff * *g;
                        }
                    }
                }
            }
            // Attention dropout: alpha_used = alpha * mask.
            if let Some(mask) = &head.attn_mask {
                for (g, m) in g_alpha.iter_mut().zip(mask) {
                    *g = *g * *m;
                }
            }
            // Softmax over each node's arc block, then the LeakyReLU on e.
            let mut g_e = vec![S::zero(); graph.num_arcs()];
            for i in 0..n {
                let arcs = graph.arcs_of(i);
                let mut weighted = S::zero();
                for arc in arcs.clone() {
                    weighted = weighted + head.alpha[arc] * g_alpha[arc];
                }
                for arc in arcs {
                    let g_a = head.alpha[arc] * (g_alpha[arc] - weighted);
                    g_e[arc] = g_a * leaky_grad(head.e[arc]);
                }
            }
            // Link-loss gradients on positive edges enter through the
            // canonical arc; e is direction-symmetric so one arc carries
            // the whole contribution.
            if !grads.d_e_pos[l].is_empty() {
                for (idx, g) in grads.d_e_pos[l].iter().enumerate() {
                    if *g != S::zero() {
                        let arc = graph.forward_arc(idx);
                        g_e[arc] = g_e[arc] + *g * inv_heads;
                    }
                }
            }
            // e_ij = z_i . z_j / sqrt(F): distribute onto both rows. The
            // self-arc case (i == j) lands twice on the same row, which
            // is exactly d(z.z)/dz = 2z.
            for i in 0..n {
                let zi_idx = i;
                for arc in graph.arcs_of(i) {
                    let ge = g_e[arc];
                    if ge == S::zero() {
                        continue;
                    }
                    let j = graph.target(arc) as usize;
                    let scaled = ge * inv_sqrt;
                    for d in 0..f_out {
                        let zi = head.z[(zi_idx, d)];
                        let zj = head.z[(j, d)];
                        g_z[(zi_idx, d)] = g_z[(zi_idx, d)] + scaled * zj;
                        g_z[(j, d)] = g_z[(j, d)] + scaled * zi;
                    }
                }
            }
            // Negative pairs score z_u . z_v / sqrt(F) without touching
            // message passing.
            if !grads.d_e_neg[l].is_empty() {
                for (pair, g) in grads.neg_pairs.iter().zip(&grads.d_e_neg[l]) {
                    if *g == S::zero() {
                        continue;
                    }
                    let scaled = *g * inv_heads * inv_sqrt;
                    let (u, v) = (pair.u() as usize, pair.v() as usize);
                    for d in 0..f_out {
                        let zu = head.z[(u, d)];
                        let zv = head.z[(v, d)];
                        g_z[(u, d)] = g_z[(u, d)] + scaled * zv;
                        g_z[(v, d)] = g_z[(v, d)] + scaled * zu;
                    }
                }
            }

            // Z = input . W^T.
            weight_grads[l][h] = g_z.t().dot(&cache.input);
            g_input_total = g_input_total + g_z.dot(params.weight(l, h));
        }

        if let Some(mask) = &cache.input_mask {
            g_input_total = g_input_total * mask;
        }
        g_hidden = g_input_total;
    }

    Ok(weight_grads)
}
