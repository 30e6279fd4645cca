//! A small reverse-mode tape over dense `f64` matrices.
//!
//! Operations are recorded in evaluation order; [`Tape::backward`] walks the
//! record in reverse and accumulates gradients into every leaf that the
//! scalar output depends on. Column vectors are `n x 1` matrices and
//! per-edge quantities are `E x 1` matrices indexed by an [`EdgeIndex`].

use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

use crate::graph::{Graph, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Message-passing neighborhoods grouped by receiving node: the edges of
/// target `i` occupy `offsets[i]..offsets[i + 1]`, each with a source node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeIndex {
    offsets: Vec<usize>,
    sources: Vec<NodeId>,
}

impl EdgeIndex {
    pub fn new(offsets: Vec<usize>, sources: Vec<NodeId>) -> Self {
        assert_eq!(offsets.first(), Some(&0));
        assert_eq!(offsets.last(), Some(&sources.len()));
        let n = offsets.len() - 1;
        assert!(sources.iter().all(|&s| (s as usize) < n));
        EdgeIndex { offsets, sources }
    }

    /// `N(i) ∪ {i}` over the undirected view, sources ascending.
    pub fn attention(g: &Graph) -> Self {
        let n = g.num_nodes();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut sources = Vec::with_capacity(2 * g.num_undirected_edges() + n);
        offsets.push(0);
        for i in 0..n as NodeId {
            let nbrs = g.neighbors(i);
            let split = nbrs.partition_point(|&j| j < i);
            sources.extend_from_slice(&nbrs[..split]);
            sources.push(i);
            sources.extend_from_slice(&nbrs[split..]);
            offsets.push(sources.len());
        }
        EdgeIndex { offsets, sources }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.sources.len()
    }

    pub fn edges_of(&self, target: usize) -> std::ops::Range<usize> {
        self.offsets[target]..self.offsets[target + 1]
    }

    pub fn source(&self, edge: usize) -> usize {
        self.sources[edge] as usize
    }

    /// `1 / sqrt(d_i d_j)` per edge, where `d` counts the edges of each node
    /// in this index (self included for attention neighborhoods).
    pub fn sym_norm_weights(&self) -> Array2<f64> {
        let deg: Vec<f64> = (0..self.num_nodes())
            .map(|i| self.edges_of(i).len() as f64)
            .collect();
        let mut w = Array2::zeros((self.num_edges(), 1));
        for i in 0..self.num_nodes() {
            for e in self.edges_of(i) {
                w[[e, 0]] = 1.0 / (deg[i] * deg[self.source(e)]).sqrt();
            }
        }
        w
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Elu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    SelectCol(Var, usize),
    RowSoftmax(Var),
    EdgeScore {
        dst: Var,
        src: Var,
        edges: Arc<EdgeIndex>,
    },
    EdgeSoftmax {
        scores: Var,
        edges: Arc<EdgeIndex>,
    },
    EdgeAggregate {
        weights: Var,
        x: Var,
        edges: Arc<EdgeIndex>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<(usize, usize)>,
        probs: Array2<f64>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by the [`Var`] they belong to.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
    match &mut grads[v.0] {
        Some(g) => *g += &delta,
        slot @ None => *slot = Some(delta),
    }
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// Adds a `1 x m` row to every row of an `n x m` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1);
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// Scales row `i` of `x` by `col[i]`.
    pub fn mul_col(&mut self, col: Var, x: Var) -> Var {
        assert_eq!(self.value(col).ncols(), 1);
        let v = self.value(x) * self.value(col);
        self.push(v, Op::MulCol(col, x))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).mapv(|x| leaky(x, slope));
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(elu);
        self.push(v, Op::Elu(a))
    }

    /// Row-wise layer norm with a learnable `1 x d` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let is = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        let out = &xhat * self.value(gain) + self.value(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts differ");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn select_col(&mut self, a: Var, col: usize) -> Var {
        let v = self.value(a).slice(s![.., col..col + 1]).to_owned();
        self.push(v, Op::SelectCol(a, col))
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut v = self.value(a).as_standard_layout().into_owned();
        for mut row in v.rows_mut() {
            softmax_in_place(row.as_slice_mut().expect("standard layout"));
        }
        self.push(v, Op::RowSoftmax(a))
    }

    /// `dst[i] + src[j]` for every edge `j -> i`.
    pub fn edge_score(&mut self, dst: Var, src: Var, edges: &Arc<EdgeIndex>) -> Var {
        let (dv, sv) = (self.value(dst), self.value(src));
        let mut out = Array2::zeros((edges.num_edges(), 1));
        for i in 0..edges.num_nodes() {
            for e in edges.edges_of(i) {
                out[[e, 0]] = dv[[i, 0]] + sv[[edges.source(e), 0]];
            }
        }
        self.push(
            out,
            Op::EdgeScore {
                dst,
                src,
                edges: Arc::clone(edges),
            },
        )
    }

    /// Softmax of edge scores over each target's incoming edges.
    pub fn edge_softmax(&mut self, scores: Var, edges: &Arc<EdgeIndex>) -> Var {
        let mut out = self.value(scores).as_standard_layout().into_owned();
        {
            let flat = out.as_slice_mut().expect("standard layout");
            for i in 0..edges.num_nodes() {
                let r = edges.edges_of(i);
                if !r.is_empty() {
                    softmax_in_place(&mut flat[r]);
                }
            }
        }
        self.push(
            out,
            Op::EdgeSoftmax {
                scores,
                edges: Arc::clone(edges),
            },
        )
    }

    /// `out[i] = sum over edges j -> i of weights[e] * x[j]`.
    pub fn edge_aggregate(&mut self, weights: Var, x: Var, edges: &Arc<EdgeIndex>) -> Var {
        let (wv, xv) = (self.value(weights), self.value(x));
        let mut out = Array2::zeros((edges.num_nodes(), xv.ncols()));
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            for e in edges.edges_of(i) {
                row.scaled_add(wv[[e, 0]], &xv.row(edges.source(e)));
            }
        }
        self.push(
            out,
            Op::EdgeAggregate {
                weights,
                x,
                edges: Arc::clone(edges),
            },
        )
    }

    /// Mean softmax cross-entropy over `(row, class)` targets; a `1 x 1` result.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[(usize, usize)]) -> Var {
        assert!(!targets.is_empty(), "cross-entropy needs at least one target");
        let lv = self.value(logits);
        let mut probs = Array2::zeros((targets.len(), lv.ncols()));
        let mut loss = 0.0;
        for (t, &(row, class)) in targets.iter().enumerate() {
            let mut p = lv.row(row).to_vec();
            let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + p.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - p[class];
            softmax_in_place(&mut p);
            probs.row_mut(t).assign(&ndarray::ArrayView1::from(&p));
        }
        let out = Array2::from_elem((1, 1), loss / targets.len() as f64);
        self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Gradients of the `1 x 1` node `output` with respect to everything it
    /// depends on. Leaf gradients are retained; intermediate ones are dropped.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).dim(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MulCol(col, x) => {
                    let xv = self.value(*x);
                    let gc = (&g * xv).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let gx = &g * self.value(*col);
                    accumulate(&mut grads, *col, gc);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Scale(a, k) => {
                    accumulate(&mut grads, *a, g * *k);
                }
                Op::LeakyRelu(a, slope) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|gv, &x| {
                            if x <= 0.0 {
                                *gv *= slope
                            }
                        });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Elu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|gv, &x| {
                            if x <= 0.0 {
                                *gv *= x.exp()
                            }
                        });
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gg = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gxhat = &g * self.value(*gain);
                    let d = xhat.ncols() as f64;
                    let mut gx = Array2::zeros(xhat.dim());
                    for (r, mut out) in gx.rows_mut().into_iter().enumerate() {
                        let gh = gxhat.row(r);
                        let xh = xhat.row(r);
                        let mean_g = gh.sum() / d;
                        let mean_gx = gh.dot(&xh) / d;
                        Zip::from(&mut out).and(&gh).and(&xh).for_each(|o, &a, &b| {
                            *o = inv_std[r] * (a - mean_g - b * mean_gx);
                        });
                    }
                    accumulate(&mut grads, *bias, gb);
                    accumulate(&mut grads, *gain, gg);
                    accumulate(&mut grads, *x, gx);
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        accumulate(&mut grads, p, g.slice(s![.., col..col + w]).to_owned());
                        col += w;
                    }
                }
                Op::SelectCol(a, c) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    ga.slice_mut(s![.., *c..*c + 1]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::RowSoftmax(a) => {
                    let y = &node.value;
                    let mut ga = &g * y;
                    for (r, mut row) in ga.rows_mut().into_iter().enumerate() {
                        let dot: f64 = row.sum();
                        Zip::from(&mut row).and(y.row(r)).for_each(|o, &yv| *o -= yv * dot);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::EdgeScore { dst, src, edges } => {
                    let n = edges.num_nodes();
                    let mut gd = Array2::zeros((n, 1));
                    let mut gs = Array2::zeros((n, 1));
                    for i in 0..n {
                        for e in edges.edges_of(i) {
                            gd[[i, 0]] += g[[e, 0]];
                            gs[[edges.source(e), 0]] += g[[e, 0]];
                        }
                    }
                    accumulate(&mut grads, *dst, gd);
                    accumulate(&mut grads, *src, gs);
                }
                Op::EdgeSoftmax { scores, edges } => {
                    let y = &node.value;
                    let mut ga = Array2::zeros(y.dim());
                    for i in 0..edges.num_nodes() {
                        let r = edges.edges_of(i);
                        let dot: f64 = r.clone().map(|e| g[[e, 0]] * y[[e, 0]]).sum();
                        for e in r {
                            ga[[e, 0]] = y[[e, 0]] * (g[[e, 0]] - dot);
                        }
                    }
                    accumulate(&mut grads, *scores, ga);
                }
                Op::EdgeAggregate { weights, x, edges } => {
                    let (wv, xv) = (self.value(*weights), self.value(*x));
                    let mut gw = Array2::zeros(wv.dim());
                    let mut gx = Array2::zeros(xv.dim());
                    for i in 0..edges.num_nodes() {
                        let gi = g.row(i);
                        for e in edges.edges_of(i) {
                            let j = edges.source(e);
                            gw[[e, 0]] = gi.dot(&xv.row(j));
                            gx.row_mut(j).scaled_add(wv[[e, 0]], &gi);
                        }
                    }
                    accumulate(&mut grads, *weights, gw);
                    accumulate(&mut grads, *x, gx);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let scale = g[[0, 0]] / targets.len() as f64;
                    let mut gl = Array2::zeros(self.value(*logits).dim());
                    for (t, &(row, class)) in targets.iter().enumerate() {
                        let mut out = gl.row_mut(row);
                        out.scaled_add(scale, &probs.row(t));
                        out[class] -= scale;
                    }
                    accumulate(&mut grads, *logits, gl);
                }
            }
        }
        Gradients { grads }
    }
}
