//! Random graph generators: the planted-partition benchmark dataset,
//! random regular graphs and Erdős–Rényi graphs.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::graph::{Graph, NodeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub nodes: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Standard deviation of the per-class feature means.
    pub feature_signal: f64,
    /// Standard deviation of per-node noise around the class mean.
    pub feature_noise: f64,
    pub train_frac: f64,
    pub valid_frac: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            nodes: 1000,
            classes: 4,
            p_in: 0.05,
            p_out: 0.005,
            feature_dim: 16,
            feature_signal: 0.5,
            feature_noise: 1.0,
            train_frac: 0.5,
            valid_frac: 0.25,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.nodes < self.classes {
            return fail(format!("{} nodes cannot cover {} classes", self.nodes, self.classes));
        }
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} = {p} is not a probability"));
            }
        }
        if self.feature_dim == 0 {
            return fail("feature_dim must be positive".into());
        }
        if !(self.feature_signal >= 0.0 && self.feature_noise >= 0.0) {
            return fail("feature scales must be non-negative".into());
        }
        if !(self.train_frac > 0.0 && self.valid_frac >= 0.0 && self.train_frac + self.valid_frac <= 1.0) {
            return fail("split fractions must be positive and sum to at most 1".into());
        }
        Ok(())
    }
}

/// Planted-partition graph with Gaussian class-conditional features and a
/// per-class stratified split. Each undirected edge is written with a random
/// orientation so in/out degrees differ as in citation graphs.
pub fn planted_partition(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.nodes;

    let mut labels: Vec<usize> = (0..n).map(|i| i % cfg.classes).collect();
    labels.shuffle(&mut rng);

    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] { cfg.p_in } else { cfg.p_out };
            if rng.gen::<f64>() < p {
                let (a, b) = if rng.gen::<bool>() { (u, v) } else { (v, u) };
                edges.push((a as NodeId, b as NodeId));
            }
        }
    }
    let graph = Graph::from_edges(n, &edges)?;

    let means: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| {
            (0..cfg.feature_dim)
                .map(|_| cfg.feature_signal * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let mut data = Vec::with_capacity(n * cfg.feature_dim);
    for &y in &labels {
        for &m in &means[y] {
            let noise: f64 = rng.sample(StandardNormal);
            data.push((m + cfg.feature_noise * noise) as f32);
        }
    }
    let intrinsic = FeatureMatrix::single_block("intrinsic", n, cfg.feature_dim, data)?;

    let mut split = Split::default();
    for class in 0..cfg.classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        let m = members.len();
        let n_train = ((m as f64 * cfg.train_frac).round() as usize).clamp(1, m);
        let n_valid = ((m as f64 * cfg.valid_frac).round() as usize).min(m - n_train);
        split.train.extend_from_slice(&members[..n_train]);
        split.valid.extend_from_slice(&members[n_train..n_train + n_valid]);
        split.test.extend_from_slice(&members[n_train + n_valid..]);
    }
    split.train.sort_unstable();
    split.valid.sort_unstable();
    split.test.sort_unstable();

    Ok(Dataset {
        graph,
        intrinsic,
        labels,
        split,
    })
}

/// Uniform-ish random `degree`-regular simple graph: a random stub pairing
/// whose loops and repeated pairs are repaired by random double-edge swaps.
pub fn random_regular<R: Rng>(n: usize, degree: usize, rng: &mut R) -> Result<Graph> {
    if !(n * degree).is_multiple_of(2) || degree >= n {
        return Err(Error::Config(format!("no simple {degree}-regular graph on {n} nodes")));
    }
    let mut stubs: Vec<NodeId> = (0..n).flat_map(|v| std::iter::repeat_n(v as NodeId, degree)).collect();
    stubs.shuffle(rng);
    let mut pairs: Vec<(NodeId, NodeId)> = stubs.chunks_exact(2).map(|c| key(c[0], c[1])).collect();

    fn key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
        (a.min(b), a.max(b))
    }

    let mut present: HashSet<(NodeId, NodeId)> = HashSet::with_capacity(pairs.len());
    let mut bad = Vec::new();
    for (i, &p) in pairs.iter().enumerate() {
        if p.0 == p.1 || !present.insert(p) {
            bad.push(i);
        }
    }

    let max_attempts = 1000 * (bad.len() + 1) * 8;
    let mut attempts = 0;
    while let Some(&i) = bad.last() {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Config("random regular graph repair did not converge".into()));
        }
        let j = rng.gen_range(0..pairs.len());
        if j == i || bad.contains(&j) {
            continue;
        }
        let (a, b) = pairs[i];
        let (c, d) = pairs[j];
        let (x, y) = if rng.gen::<bool>() { (key(a, c), key(b, d)) } else { (key(a, d), key(b, c)) };
        if x.0 == x.1 || y.0 == y.1 || x == y || present.contains(&x) || present.contains(&y) {
            continue;
        }
        present.remove(&pairs[j]);
        // the bad pair's key is only in `present` if it duplicated an earlier
        // good pair, which must keep its entry
        present.insert(x);
        present.insert(y);
        pairs[i] = x;
        pairs[j] = y;
        bad.pop();
    }
    Graph::from_edges(n, &pairs)
}

/// G(n, p) without self-loops.
pub fn erdos_renyi<R: Rng>(n: usize, p: f64, rng: &mut R) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n as NodeId {
        for v in u + 1..n as NodeId {
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(n, &edges).expect("ids in range")
}
