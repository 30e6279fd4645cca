//! Correct and Smooth post-processing of soft predictions.
//!
//! Correct: the training residual `E = Z - Y` (zero off the training rows)
//! is spread over the graph and added back with a fixed scale,
//! `Z_r = Z + s Ê`. Smooth: the anchor `G` (ground truth on training rows,
//! `Z_r` elsewhere) is propagated to the fixed point of
//! `G(t+1) = (1 - α) G + α S G(t)`.
//!
//! Both steps iterate the label-spreading map, whose fixed point solves
//! `(I - α S) X = (1 - α) B`. For the penalized objective
//! `tr(Xᵀ (I - S) X) + μ ‖X - B‖²` the matching `α` is `1 / (1 + μ)`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::Split;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::argmax_rows;

/// `S = D^{-1/2} A D^{-1/2}` over the undirected view without self-loops.
/// Isolated nodes have empty rows.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn from_graph(g: &Graph) -> Self {
        let (offsets, targets) = g.undirected_csr();
        let inv_sqrt: Vec<f64> = offsets
            .windows(2)
            .map(|w| {
                let d = (w[1] - w[0]) as f64;
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let mut weights = Vec::with_capacity(targets.len());
        for u in 0..g.num_nodes() {
            for &v in &targets[offsets[u]..offsets[u + 1]] {
                weights.push(inv_sqrt[u] * inv_sqrt[v as usize]);
            }
        }
        NormalizedAdjacency {
            offsets: offsets.to_vec(),
            targets: targets.to_vec(),
            weights,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// `S X`.
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.num_nodes());
        let mut out = Array2::zeros(x.dim());
        for (u, mut row) in out.rows_mut().into_iter().enumerate() {
            for e in self.offsets[u]..self.offsets[u + 1] {
                row.scaled_add(self.weights[e], &x.row(self.targets[e] as usize));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.num_nodes();
        let mut m = Array2::zeros((n, n));
        for u in 0..n {
            for e in self.offsets[u]..self.offsets[u + 1] {
                m[[u, self.targets[e] as usize]] = self.weights[e];
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsConfig {
    pub alpha_correct: f64,
    pub alpha_smooth: f64,
    /// FDiff scale `s`.
    pub scale: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for CsConfig {
    fn default() -> Self {
        CsConfig {
            alpha_correct: 0.9,
            alpha_smooth: 0.8,
            scale: 1.0,
            max_iters: 1000,
            tol: 1e-9,
        }
    }
}

impl CsConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |a: f64| a > 0.0 && a < 1.0;
        if !unit(self.alpha_correct) || !unit(self.alpha_smooth) {
            return Err(Error::Config("C&S alphas must lie in (0, 1)".into()));
        }
        if !self.scale.is_finite() || self.scale < 0.0 {
            return Err(Error::Config("C&S scale must be finite and non-negative".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::Config("C&S tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Base predictions, ground truth and the train / valid / unlabeled partition.
#[derive(Debug, Clone)]
pub struct LabelState {
    pub z: Array2<f64>,
    /// One-hot rows on train and valid nodes, zero rows elsewhere.
    pub y: Array2<f64>,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

impl LabelState {
    /// Everything outside the train and valid splits is unlabeled.
    pub fn new(z: Array2<f64>, labels: &[usize], split: &Split) -> Result<Self> {
        let (n, c) = z.dim();
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} prediction rows", labels.len())));
        }
        split.validate(n)?;
        for (i, row) in z.rows().into_iter().enumerate() {
            let sum = row.sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::Shape(format!("prediction row {i} is not a distribution (sum {sum})")));
            }
        }
        let mut y = Array2::zeros((n, c));
        let mut labeled = vec![false; n];
        for &i in split.train.iter().chain(&split.valid) {
            if labels[i] >= c {
                return Err(Error::Config(format!("label {} of node {i} outside {c} classes", labels[i])));
            }
            y[[i, labels[i]]] = 1.0;
            labeled[i] = true;
        }
        let unlabeled = (0..n).filter(|&i| !labeled[i]).collect();
        Ok(LabelState {
            z,
            y,
            train: split.train.clone(),
            valid: split.valid.clone(),
            unlabeled,
        })
    }
}

/// Result of a fixed-point iteration.
#[derive(Debug, Clone)]
pub struct Propagation {
    pub result: Array2<f64>,
    pub iterations: usize,
    /// Max-abs change of the last iteration.
    pub residual: f64,
}

/// Iterates `X(t+1) = (1 - α) B + α S X(t)` from `X(0) = B`.
pub fn propagate(
    base: &Array2<f64>,
    s: &NormalizedAdjacency,
    alpha: f64,
    max_iters: usize,
    tol: f64,
) -> Propagation {
    let anchor = base * (1.0 - alpha);
    let mut x = base.clone();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iters {
        let next = s.apply(&x) * alpha + &anchor;
        residual = next
            .iter()
            .zip(x.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = next;
        iterations += 1;
        if residual < tol {
            break;
        }
    }
    Propagation {
        result: x,
        iterations,
        residual,
    }
}

/// `E = Z - Y` on training rows, zero elsewhere.
pub fn compute_error(state: &LabelState) -> Array2<f64> {
    let mut e = Array2::zeros(state.z.dim());
    for &i in &state.train {
        let diff = &state.z.row(i) - &state.y.row(i);
        e.row_mut(i).assign(&diff);
    }
    e
}

pub fn spread(
    e: &Array2<f64>,
    s: &NormalizedAdjacency,
    alpha: f64,
    max_iters: usize,
    tol: f64,
) -> Propagation {
    propagate(e, s, alpha, max_iters, tol)
}

/// `Z + s Ê`; rows are not renormalized.
pub fn correct(z: &Array2<f64>, e_hat: &Array2<f64>, scale: f64) -> Array2<f64> {
    assert_eq!(z.dim(), e_hat.dim());
    z + &(e_hat * scale)
}

/// Anchors ground truth on the training rows and `Z_r` elsewhere, then
/// propagates to the fixed point.
pub fn smooth(
    z_r: &Array2<f64>,
    state: &LabelState,
    s: &NormalizedAdjacency,
    alpha: f64,
    max_iters: usize,
    tol: f64,
) -> Propagation {
    let mut anchor = z_r.clone();
    for &i in &state.train {
        anchor.row_mut(i).assign(&state.y.row(i));
    }
    propagate(&anchor, s, alpha, max_iters, tol)
}

pub fn predict(g: &Array2<f64>) -> Vec<usize> {
    argmax_rows(g)
}

#[derive(Debug, Clone)]
pub struct CsOutcome {
    pub corrected: Array2<f64>,
    pub spread: Propagation,
    pub smoothed: Propagation,
    pub predictions: Vec<usize>,
}

pub fn correct_and_smooth(
    state: &LabelState,
    s: &NormalizedAdjacency,
    cfg: &CsConfig,
) -> Result<CsOutcome> {
    cfg.validate()?;
    if s.num_nodes() != state.z.nrows() {
        return Err(Error::Shape(format!(
            "adjacency over {} nodes, predictions for {}",
            s.num_nodes(),
            state.z.nrows()
        )));
    }
    let e = compute_error(state);
    let spread = spread(&e, s, cfg.alpha_correct, cfg.max_iters, cfg.tol);
    let corrected = correct(&state.z, &spread.result, cfg.scale);
    let smoothed = smooth(&corrected, state, s, cfg.alpha_smooth, cfg.max_iters, cfg.tol);
    let predictions = predict(&smoothed.result);
    Ok(CsOutcome {
        corrected,
        spread,
        smoothed,
        predictions,
    })
}
