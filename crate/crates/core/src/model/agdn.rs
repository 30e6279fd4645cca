//! Adaptive graph diffusion layer with hop-wise attention.
//!
//! Per head, with projection `W` and transition matrix `T`:
//!
//! ```text
//! Ĥ(0) = H W
//! Ĥ(k) = T Ĥ(k-1)                                   k = 1..=K
//! θ_i(k) = softmax_k(leaky_relu([Ĥ_i(0) ‖ Ĥ_i(k)] · a_hw))
//! out  = Σ_k diag(θ(k)) Ĥ(k)
//! ```
//!
//! Heads are mean-pooled and the residual `H W_r` is added once. `T` is the
//! head's own attention matrix (row-stochastic), or the symmetric normalized
//! adjacency with self-loops for ablations.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gat::{AttentionHead, LayerTrace, DEFAULT_ATTENTION_SLOPE};
use crate::autodiff::{EdgeIndex, Tape, Var};
use crate::graph::Graph;
use crate::params::{Bound, ParamId, Params};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    #[default]
    Attention,
    SymNorm,
}

#[derive(Debug, Clone)]
pub struct AgdnHead {
    pub weight: ParamId,
    /// Present only for attention transitions.
    pub attn: Option<ParamId>,
    /// `2 * out_width x 1`; the first half scores `Ĥ(0)`.
    pub hop_attn: ParamId,
}

#[derive(Debug, Clone)]
pub struct AgdnLayer {
    pub heads: Vec<AgdnHead>,
    pub residual: ParamId,
    pub depth: usize,
    pub transition: Transition,
    pub in_width: usize,
    pub out_width: usize,
    pub slope: f64,
}

impl AgdnLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        params: &mut Params,
        name: &str,
        in_width: usize,
        out_width: usize,
        num_heads: usize,
        depth: usize,
        transition: Transition,
        rng: &mut R,
    ) -> Self {
        assert!(num_heads >= 1, "at least one attention head");
        let heads = (0..num_heads)
            .map(|k| {
                let head = format!("{name}.head{k}");
                let (weight, attn) = match transition {
                    Transition::Attention => {
                        let h = AttentionHead::new(params, &head, in_width, out_width, rng);
                        (h.weight, Some(h.attn))
                    }
                    Transition::SymNorm => (
                        params.add_uniform(
                            format!("{head}.weight"),
                            (in_width, out_width),
                            in_width,
                            rng,
                        ),
                        None,
                    ),
                };
                let hop_attn = params.add_uniform(
                    format!("{head}.hop_attn"),
                    (2 * out_width, 1),
                    out_width,
                    rng,
                );
                AgdnHead {
                    weight,
                    attn,
                    hop_attn,
                }
            })
            .collect();
        let residual = params.add_uniform(
            format!("{name}.residual"),
            (in_width, out_width),
            in_width,
            rng,
        );
        AgdnLayer {
            heads,
            residual,
            depth,
            transition,
            in_width,
            out_width,
            slope: DEFAULT_ATTENTION_SLOPE,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        h: Var,
        edges: &Arc<EdgeIndex>,
    ) -> LayerTrace {
        let mut pooled: Option<Var> = None;
        let mut attention = Vec::new();
        let mut hop_weights = Vec::new();
        for head in &self.heads {
            let (z0, transition) = match head.attn {
                Some(attn) => {
                    let att = AttentionHead {
                        weight: head.weight,
                        attn,
                    };
                    let (z0, alpha) = att.attend(tape, bound, h, edges, self.slope);
                    attention.push(alpha);
                    (z0, alpha)
                }
                None => {
                    let z0 = tape.matmul(h, bound.var(head.weight));
                    (z0, tape.leaf(edges.sym_norm_weights()))
                }
            };

            let mut hops = Vec::with_capacity(self.depth + 1);
            hops.push(z0);
            for k in 1..=self.depth {
                let next = tape.edge_aggregate(transition, hops[k - 1], edges);
                hops.push(next);
            }

            let w = self.out_width;
            let a = bound.var(head.hop_attn);
            let a_first = tape.slice_rows(a, 0, w);
            let a_hop = tape.slice_rows(a, w, 2 * w);
            let base = tape.matmul(z0, a_first);
            let scores: Vec<Var> = hops
                .iter()
                .map(|&zk| {
                    let s = tape.matmul(zk, a_hop);
                    let s = tape.add(base, s);
                    tape.leaky_relu(s, self.slope)
                })
                .collect();
            let stacked = tape.concat_cols(&scores);
            let theta = tape.row_softmax(stacked);
            hop_weights.push(theta);

            let mut out: Option<Var> = None;
            for (k, &zk) in hops.iter().enumerate() {
                let col = tape.select_col(theta, k);
                let term = tape.mul_col(col, zk);
                out = Some(match out {
                    Some(o) => tape.add(o, term),
                    None => term,
                });
            }
            let out = out.expect("at least hop 0");
            pooled = Some(match pooled {
                Some(p) => tape.add(p, out),
                None => out,
            });
        }
        let mean = tape.scale(pooled.expect("heads"), 1.0 / self.heads.len() as f64);
        let res = tape.matmul(h, bound.var(self.residual));
        LayerTrace {
            output: tape.add(mean, res),
            attention,
            hop_weights,
        }
    }

    /// Evaluates the layer on plain matrices.
    pub fn apply(&self, params: &Params, h: &Array2<f64>, g: &Graph) -> Array2<f64> {
        let edges = Arc::new(EdgeIndex::attention(g));
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.leaf(h.clone());
        let trace = self.forward(&mut tape, &bound, x, &edges);
        tape.value(trace.output).clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ring(n: u32) -> Graph {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Graph::from_edges(n as usize, &edges).unwrap()
    }

    fn close(a: &Array2<f64>, b: &Array2<f64>) -> bool {
        a.dim() == b.dim() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn depth_zero_is_projection_plus_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params = Params::new();
        let layer = AgdnLayer::new(&mut params, "agdn", 3, 4, 1, 0, Transition::Attention, &mut rng);
        let g = ring(5);
        let h = Array2::from_shape_fn((5, 3), |(i, j)| (i as f64 * 0.4 - j as f64).sin());
        let out = layer.apply(&params, &h, &g);
        let expected = h.dot(params.get(layer.heads[0].weight)) + h.dot(params.get(layer.residual));
        assert!(close(&out, &expected));
    }

    #[test]
    fn zero_projection_leaves_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut params = Params::new();
        let layer = AgdnLayer::new(&mut params, "agdn", 3, 4, 3, 3, Transition::Attention, &mut rng);
        for head in &layer.heads {
            params.get_mut(head.weight).fill(0.0);
        }
        let g = ring(6);
        let h = Array2::from_shape_fn((6, 3), |(i, j)| (i * j) as f64 * 0.3 - 0.5);
        let out = layer.apply(&params, &h, &g);
        assert_eq!(out, h.dot(params.get(layer.residual)));
    }

    #[test]
    fn equal_hops_get_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut params = Params::new();
        let depth = 3;
        let layer = AgdnLayer::new(&mut params, "agdn", 2, 3, 2, depth, Transition::Attention, &mut rng);
        // an edgeless graph makes T the identity
        let g = Graph::from_edges(4, &[]).unwrap();
        let edges = Arc::new(EdgeIndex::attention(&g));
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.leaf(Array2::from_shape_fn((4, 2), |(i, j)| i as f64 - j as f64));
        let trace = layer.forward(&mut tape, &bound, x, &edges);
        for &theta in &trace.hop_weights {
            for &v in tape.value(theta).iter() {
                assert!((v - 1.0 / (depth + 1) as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sym_norm_transition_has_no_edge_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut params = Params::new();
        let layer = AgdnLayer::new(&mut params, "agdn", 2, 2, 1, 2, Transition::SymNorm, &mut rng);
        assert!(layer.heads[0].attn.is_none());
        let g = ring(4);
        let out = layer.apply(&params, &Array2::ones((4, 2)), &g);
        assert!(out.iter().all(|v| v.is_finite()));
    }
}
