//! Independent reference implementations shared by the integration suites.
//! Everything here works on dense adjacency matrices and brute force, never
//! on the library's CSR code paths.

#![allow(dead_code)]

use std::collections::VecDeque;

use rand::Rng;

use dhse::graph::{Graph, NodeId};

/// Dense graph: directed edge set and the symmetrized simple adjacency.
pub struct Dense {
    pub n: usize,
    pub directed: Vec<Vec<bool>>,
    pub adj: Vec<Vec<bool>>,
    pub self_loop: Vec<bool>,
}

impl Dense {
    pub fn new(n: usize, edges: &[(NodeId, NodeId)]) -> Self {
        let mut directed = vec![vec![false; n]; n];
        let mut adj = vec![vec![false; n]; n];
        let mut self_loop = vec![false; n];
        for &(u, v) in edges {
            let (u, v) = (u as usize, v as usize);
            directed[u][v] = true;
            if u == v {
                self_loop[u] = true;
            } else {
                adj[u][v] = true;
                adj[v][u] = true;
            }
        }
        Dense {
            n,
            directed,
            adj,
            self_loop,
        }
    }

    pub fn bfs(&self, src: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        dist[src] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for w in 0..self.n {
                if self.adj[u][w] && dist[w].is_none() {
                    dist[w] = Some(dist[u].unwrap() + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Global ids within `r` hops of `v`, ascending.
    pub fn ball(&self, v: usize, r: usize) -> Vec<usize> {
        let d = self.bfs(v);
        (0..self.n).filter(|&u| d[u].is_some_and(|x| x <= r)).collect()
    }

    /// Induced sub-adjacency on `nodes` plus self-loop flags.
    pub fn induced(&self, nodes: &[usize]) -> Dense {
        let m = nodes.len();
        let mut adj = vec![vec![false; m]; m];
        let mut directed = vec![vec![false; m]; m];
        for i in 0..m {
            for j in 0..m {
                adj[i][j] = self.adj[nodes[i]][nodes[j]];
                directed[i][j] = self.directed[nodes[i]][nodes[j]];
            }
        }
        Dense {
            n: m,
            directed,
            adj,
            self_loop: nodes.iter().map(|&v| self.self_loop[v]).collect(),
        }
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].iter().filter(|&&b| b).count()
    }

    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        (0..self.n).filter(|&u| self.adj[v][u]).collect()
    }
}

/// Triangles through `v`: unordered neighbor pairs that are adjacent.
pub fn triangles(d: &Dense, v: usize) -> usize {
    let nb = d.neighbors(v);
    let mut t = 0;
    for i in 0..nb.len() {
        for j in i + 1..nb.len() {
            if d.adj[nb[i]][nb[j]] {
                t += 1;
            }
        }
    }
    t
}

pub fn clustering(d: &Dense, v: usize) -> f64 {
    let k = d.degree(v);
    if k < 2 {
        0.0
    } else {
        triangles(d, v) as f64 / (k * (k - 1) / 2) as f64
    }
}

/// Square clustering by explicit enumeration of common neighbors for every
/// neighbor pair.
pub fn square_clustering(d: &Dense, v: usize) -> f64 {
    let nb = d.neighbors(v);
    let (mut num, mut den) = (0i64, 0i64);
    for i in 0..nb.len() {
        for j in i + 1..nb.len() {
            let (u, w) = (nb[i], nb[j]);
            let q = (0..d.n).filter(|&x| x != v && d.adj[u][x] && d.adj[w][x]).count() as i64;
            let theta = i64::from(d.adj[u][w]);
            let ku = d.degree(u) as i64;
            let kw = d.degree(w) as i64;
            let a = (ku - (1 + q + theta)) + (kw - (1 + q + theta));
            num += q;
            den += a + q;
        }
    }
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn density(d: &Dense) -> f64 {
    if d.n < 2 {
        return 0.0;
    }
    let m = (0..d.n).flat_map(|i| (i + 1..d.n).map(move |j| (i, j))).filter(|&(i, j)| d.adj[i][j]).count();
    2.0 * m as f64 / (d.n * (d.n - 1)) as f64
}

/// `3 × triangles / connected triples`, both counted over node triples.
pub fn transitivity(d: &Dense) -> f64 {
    let (mut tri, mut triples) = (0usize, 0usize);
    for a in 0..d.n {
        for b in a + 1..d.n {
            for c in b + 1..d.n {
                let e = [d.adj[a][b], d.adj[b][c], d.adj[a][c]];
                let m = e.iter().filter(|&&x| x).count();
                if m == 3 {
                    tri += 1;
                    triples += 3;
                } else if m == 2 {
                    triples += 1;
                }
            }
        }
    }
    if triples == 0 {
        0.0
    } else {
        3.0 * tri as f64 / triples as f64
    }
}

/// Full structure vector of `v` in the global graph.
pub fn structure_vector(d: &Dense, v: usize, k: usize) -> Vec<f64> {
    let in_deg = (0..d.n).filter(|&u| d.directed[u][v]).count();
    let out_deg = (0..d.n).filter(|&u| d.directed[v][u]).count();
    let mut out = vec![in_deg as f64, out_deg as f64];
    for r in 1..=k {
        let nodes = d.ball(v, r);
        let sub = d.induced(&nodes);
        let lv = nodes.iter().position(|&x| x == v).unwrap();
        out.extend([
            triangles(&sub, lv) as f64,
            clustering(&sub, lv),
            square_clustering(&sub, lv),
            density(&sub),
            sub.self_loop.iter().filter(|&&b| b).count() as f64,
            transitivity(&sub),
        ]);
    }
    out
}

/// Two-pass population statistics: max, min, median, mean, std, excess
/// kurtosis, skewness; zeros for empty or constant sequences where undefined.
pub fn distance_stats(seq: &[u32]) -> [f64; 7] {
    if seq.is_empty() {
        return [0.0; 7];
    }
    let xs: Vec<f64> = seq.iter().map(|&x| x as f64).collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let (kurt, skew) = if var == 0.0 {
        (0.0, 0.0)
    } else {
        let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        (m4 / (var * var) - 3.0, m3 / var.powf(1.5))
    };
    let mut s = xs.clone();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let l = s.len();
    let median = if l % 2 == 1 { s[l / 2] } else { (s[l / 2 - 1] + s[l / 2]) / 2.0 };
    [s[l - 1], s[0], median, mean, std, kurt, skew]
}

/// Random directed graph: each ordered pair `u != v` gets an edge with
/// probability `p`, each node a self-loop with probability `p_loop`.
pub fn random_digraph<R: Rng>(n: usize, p: f64, p_loop: f64, rng: &mut R) -> Vec<(NodeId, NodeId)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            let q = if u == v { p_loop } else { p / 2.0 };
            if rng.gen::<f64>() < q {
                edges.push((u as NodeId, v as NodeId));
            }
        }
    }
    edges
}

pub fn graph_and_dense(n: usize, edges: &[(NodeId, NodeId)]) -> (Graph, Dense) {
    (Graph::from_edges(n, edges).unwrap(), Dense::new(n, edges))
}

/// Named small graphs as undirected edge lists.
pub type NamedGraph = (&'static str, usize, Vec<(NodeId, NodeId)>);

pub fn named_graphs() -> Vec<NamedGraph> {
    vec![
        ("K3", 3, vec![(0, 1), (1, 2), (0, 2)]),
        ("K4", 4, vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]),
        ("P3", 3, vec![(0, 1), (1, 2)]),
        ("S3", 4, vec![(0, 1), (0, 2), (0, 3)]),
        ("C4", 4, vec![(0, 1), (1, 2), (2, 3), (3, 0)]),
    ]
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

use std::sync::Arc;

use dhse::autodiff::{EdgeIndex, Tape};
use dhse::encoder::{BranchKind, BranchWidths, RawFeatures};
use dhse::model::{Model, ModelConfig, ModelKind, Transition};
use dhse::params::Params;
use ndarray::Array2;

/// A small random model problem.
pub struct Instance {
    pub label: String,
    pub graph: Graph,
    pub model: Model,
    pub params: Params,
    pub raw: RawFeatures,
    pub targets: Vec<(usize, usize)>,
}

pub fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
}

/// The `i`-th instance of a rotation over model kinds, transitions, input
/// branch subsets and the raw-concatenation mode.
pub fn instance<R: Rng>(i: usize, rng: &mut R) -> Instance {
    let n = rng.gen_range(4..9);
    let edges = random_digraph(n, 0.4, 0.1, rng);
    let graph = Graph::from_edges(n, &edges).unwrap();
    let kind = if i.is_multiple_of(2) { ModelKind::Agdn } else { ModelKind::Gat };
    let transition = if i % 4 == 2 { Transition::SymNorm } else { Transition::Attention };
    let inputs = BranchWidths {
        intrinsic: Some(3),
        structure: (i % 3 != 1).then_some(4),
        distance: (i % 5 != 3).then_some(2),
    };
    let config = ModelConfig {
        kind,
        hidden: 4,
        heads: 1 + i % 3,
        layers: 1 + i % 2,
        diffusion_depth: 1 + i % 3,
        transition,
        num_classes: 3,
        inputs,
        encoding: i % 6 != 5,
        ..ModelConfig::default()
    };
    let (model, params) = Model::new(config.clone(), rng).unwrap();
    let mut raw = RawFeatures::new();
    for kind in BranchKind::ALL {
        if let Some(w) = inputs.get(kind) {
            raw = raw.with(kind, random_matrix(n, w, rng));
        }
    }
    let mut targets = Vec::new();
    for r in 0..n {
        if rng.gen_bool(0.7) {
            targets.push((r, rng.gen_range(0..3)));
        }
    }
    if targets.is_empty() {
        targets.push((0, 0));
    }
    Instance {
        label: format!("#{i} {kind:?}/{transition:?} heads={} layers={} enc={}", config.heads, config.layers, config.encoding),
        graph,
        model,
        params,
        raw,
        targets,
    }
}

impl Instance {
    pub fn loss(&self, params: &Params) -> f64 {
        let edges = Arc::new(EdgeIndex::attention(&self.graph));
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let trace = self.model.forward::<rand_chacha::ChaCha8Rng>(&mut tape, &bound, &self.raw, &edges, None);
        let loss = tape.cross_entropy(trace.logits, &self.targets);
        tape.value(loss)[[0, 0]]
    }

    pub fn analytic(&self) -> Vec<(String, Array2<f64>)> {
        let edges = Arc::new(EdgeIndex::attention(&self.graph));
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let trace = self.model.forward::<rand_chacha::ChaCha8Rng>(&mut tape, &bound, &self.raw, &edges, None);
        let loss = tape.cross_entropy(trace.logits, &self.targets);
        let grads = tape.backward(loss);
        self.params
            .ids()
            .map(|id| {
                let g = grads
                    .get(bound.var(id))
                    .cloned()
                    .unwrap_or_else(|| Array2::zeros(self.params.get(id).dim()));
                (self.params.name(id).to_string(), g)
            })
            .collect()
    }

    pub fn numeric(&self, h: f64) -> Vec<(String, Array2<f64>)> {
        let mut p = self.params.clone();
        let ids: Vec<_> = self.params.ids().collect();
        ids.into_iter()
            .map(|id| {
                let dim = self.params.get(id).dim();
                let mut g = Array2::zeros(dim);
                for r in 0..dim.0 {
                    for c in 0..dim.1 {
                        let x0 = p.get(id)[[r, c]];
                        p.get_mut(id)[[r, c]] = x0 + h;
                        let up = self.loss(&p);
                        p.get_mut(id)[[r, c]] = x0 - h;
                        let down = self.loss(&p);
                        p.get_mut(id)[[r, c]] = x0;
                        g[[r, c]] = (up - down) / (2.0 * h);
                    }
                }
                (self.params.name(id).to_string(), g)
            })
            .collect()
    }

    /// Worst per-tensor relative error `‖a − n‖ / max(‖a‖, ‖n‖, 1e-6)`.
    pub fn gradient_error(&self) -> (f64, String) {
        let a = self.analytic();
        let n = self.numeric(1e-5);
        let mut worst = (0.0, String::new());
        for ((name, ga), (_, gn)) in a.iter().zip(&n) {
            let norm = |m: &Array2<f64>| m.iter().map(|x| x * x).sum::<f64>().sqrt();
            let diff = norm(&(ga - gn));
            let rel = diff / norm(ga).max(norm(gn)).max(1e-6);
            if rel > worst.0 {
                worst = (rel, name.clone());
            }
        }
        worst
    }
}
