//! Multi-head graph attention layer.
//!
//! For head `k` with projection `W_k` and attention vector `a_k = [a_dst ‖ a_src]`:
//!
//! ```text
//! e_ij   = leaky_relu(a_dst · W_k h_i + a_src · W_k h_j)      j ∈ N(i) ∪ {i}
//! α_ij   = softmax_j(e_ij)
//! h'_ik  = σ(Σ_j α_ij W_k h_j)
//! h'_i   = mean_k h'_ik
//! ```

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{EdgeIndex, Tape, Var};
use crate::graph::Graph;
use crate::params::{Bound, ParamId, Params};

pub const DEFAULT_ATTENTION_SLOPE: f64 = 0.2;

/// Nonlinearity applied after neighborhood aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Elu,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Elu => tape.elu(x),
            Activation::Identity => x,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttentionHead {
    /// `in_width x out_width` projection.
    pub weight: ParamId,
    /// `2 * out_width x 1`; the first half scores the receiving node.
    pub attn: ParamId,
}

impl AttentionHead {
    pub(crate) fn new<R: Rng>(
        params: &mut Params,
        name: &str,
        in_width: usize,
        out_width: usize,
        rng: &mut R,
    ) -> Self {
        AttentionHead {
            weight: params.add_uniform(
                format!("{name}.weight"),
                (in_width, out_width),
                in_width,
                rng,
            ),
            attn: params.add_uniform(format!("{name}.attn"), (2 * out_width, 1), out_width, rng),
        }
    }

    /// Projects `h` and returns `(W h, α)` with α one value per edge.
    pub(crate) fn attend(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        h: Var,
        edges: &Arc<EdgeIndex>,
        slope: f64,
    ) -> (Var, Var) {
        let z = tape.matmul(h, bound.var(self.weight));
        let width = tape.value(z).ncols();
        let a = bound.var(self.attn);
        let a_dst = tape.slice_rows(a, 0, width);
        let a_src = tape.slice_rows(a, width, 2 * width);
        let dst = tape.matmul(z, a_dst);
        let src = tape.matmul(z, a_src);
        let scores = tape.edge_score(dst, src, edges);
        let scores = tape.leaky_relu(scores, slope);
        let alpha = tape.edge_softmax(scores, edges);
        (z, alpha)
    }
}

#[derive(Debug, Clone)]
pub struct GatLayer {
    pub heads: Vec<AttentionHead>,
    pub in_width: usize,
    pub out_width: usize,
    pub slope: f64,
    pub activation: Activation,
}

/// Output of one layer plus the normalized weights it used.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub output: Var,
    /// Per head, attention weights per edge (`E x 1`).
    pub attention: Vec<Var>,
    /// Per head, hop weights (`n x (K + 1)`); empty for GAT layers.
    pub hop_weights: Vec<Var>,
}

impl GatLayer {
    pub fn new<R: Rng>(
        params: &mut Params,
        name: &str,
        in_width: usize,
        out_width: usize,
        num_heads: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(num_heads >= 1, "at least one attention head");
        let heads = (0..num_heads)
            .map(|k| AttentionHead::new(params, &format!("{name}.head{k}"), in_width, out_width, rng))
            .collect();
        GatLayer {
            heads,
            in_width,
            out_width,
            slope: DEFAULT_ATTENTION_SLOPE,
            activation,
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
        let mut attention = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let (z, alpha) = head.attend(tape, bound, h, edges, self.slope);
            let agg = tape.edge_aggregate(alpha, z, edges);
            let out = self.activation.apply(tape, agg);
            pooled = Some(match pooled {
                Some(p) => tape.add(p, out),
                None => out,
            });
            attention.push(alpha);
        }
        let output = tape.scale(pooled.expect("heads"), 1.0 / self.heads.len() as f64);
        LayerTrace {
            output,
            attention,
            hop_weights: Vec::new(),
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

    #[test]
    fn isolated_node_attends_to_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = Params::new();
        let layer = GatLayer::new(&mut params, "gat", 3, 2, 1, Activation::Elu, &mut rng);
        let g = Graph::from_edges(2, &[]).unwrap();
        let h = ndarray::array![[0.5, -1.0, 2.0], [1.0, 1.0, 1.0]];
        let out = layer.apply(&params, &h, &g);
        let wh = h.dot(params.get(layer.heads[0].weight));
        let expected = wh.mapv(|x| if x > 0.0 { x } else { x.exp_m1() });
        assert!((out - expected).mapv(f64::abs).iter().all(|&d| d < 1e-12));
    }

    #[test]
    fn symmetric_pair_splits_attention_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut params = Params::new();
        let layer = GatLayer::new(&mut params, "gat", 2, 3, 2, Activation::Elu, &mut rng);
        let g = Graph::from_edges(2, &[(0, 1), (1, 0)]).unwrap();
        let edges = Arc::new(EdgeIndex::attention(&g));
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.leaf(ndarray::array![[0.3, 0.9], [0.3, 0.9]]);
        let trace = layer.forward(&mut tape, &bound, x, &edges);
        for &a in &trace.attention {
            for &v in tape.value(a).iter() {
                assert!((v - 0.5).abs() < 1e-15);
            }
        }
    }
}
