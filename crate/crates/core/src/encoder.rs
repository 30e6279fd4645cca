//! Distance and hop-wise structure encoding: one linear encoder and one
//! layer norm per raw feature block, summed into the initial embedding.
//!
//! ```text
//! h = LN_i(W_i x_i + b_i) + LN_d(W_d x_d + b_d) + LN_s(W_s x_s + b_s)
//! ```
//!
//! Any branch may be absent (ablations); the sum then runs over the rest.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, Params};

pub const DEFAULT_LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    Intrinsic,
    Structure,
    Distance,
}

impl BranchKind {
    pub const ALL: [BranchKind; 3] = [
        BranchKind::Intrinsic,
        BranchKind::Structure,
        BranchKind::Distance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BranchKind::Intrinsic => "intrinsic",
            BranchKind::Structure => "structure",
            BranchKind::Distance => "distance",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// Raw per-node feature blocks, one optional matrix per branch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawFeatures {
    blocks: [Option<Array2<f64>>; 3],
}

impl RawFeatures {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, kind: BranchKind, block: Array2<f64>) -> Self {
        self.blocks[kind.slot()] = Some(block);
        self
    }

    pub fn get(&self, kind: BranchKind) -> Option<&Array2<f64>> {
        self.blocks[kind.slot()].as_ref()
    }

    pub fn num_nodes(&self) -> Option<usize> {
        self.blocks.iter().flatten().map(|b| b.nrows()).next()
    }

    /// Present blocks concatenated column-wise in branch order.
    pub fn concatenated(&self) -> Option<Array2<f64>> {
        let views: Vec<_> = self.blocks.iter().flatten().map(|b| b.view()).collect();
        if views.is_empty() {
            return None;
        }
        Some(ndarray::concatenate(ndarray::Axis(1), &views).expect("row counts checked"))
    }

    pub fn check_rows(&self) -> Result<usize> {
        let n = self
            .num_nodes()
            .ok_or_else(|| Error::Config("no feature blocks given".into()))?;
        for kind in BranchKind::ALL {
            if let Some(b) = self.get(kind) {
                if b.nrows() != n {
                    return Err(Error::Shape(format!(
                        "{} block has {} rows, expected {n}",
                        kind.name(),
                        b.nrows()
                    )));
                }
            }
        }
        Ok(n)
    }
}

/// `x W + b` with `W` stored `in_width x out_width`.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_width: usize,
    pub out_width: usize,
}

impl LinearLayer {
    pub fn new<R: Rng>(
        params: &mut Params,
        name: &str,
        in_width: usize,
        out_width: usize,
        rng: &mut R,
    ) -> Self {
        let weight = params.add_uniform(
            format!("{name}.weight"),
            (in_width, out_width),
            in_width,
            rng,
        );
        let bias = params.add(format!("{name}.bias"), Array2::zeros((1, out_width)));
        LinearLayer {
            weight,
            bias,
            in_width,
            out_width,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Var {
        let xw = tape.matmul(x, bound.var(self.weight));
        tape.add_row(xw, bound.var(self.bias))
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNormParams {
    pub fn new(params: &mut Params, name: &str, width: usize, eps: f64) -> Self {
        assert!(eps > 0.0, "layer-norm epsilon must be positive");
        LayerNormParams {
            gain: params.add(format!("{name}.gain"), Array2::ones((1, width))),
            bias: params.add(format!("{name}.bias"), Array2::zeros((1, width))),
            eps,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Var {
        tape.layer_norm(x, bound.var(self.gain), bound.var(self.bias), self.eps)
    }
}

/// `gain * (x - mean) / sqrt(var + eps) + bias` over one row, with the
/// population variance.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    assert_eq!(x.len(), gain.len());
    assert_eq!(x.len(), bias.len());
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv = 1.0 / (var + eps).sqrt();
    x.iter()
        .zip(gain.iter().zip(bias))
        .map(|(v, (g, b))| g * (v - mean) * inv + b)
        .collect()
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub kind: BranchKind,
    pub linear: LinearLayer,
    pub norm: LayerNormParams,
}

/// Input widths per branch; `None` removes the branch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchWidths {
    pub intrinsic: Option<usize>,
    pub structure: Option<usize>,
    pub distance: Option<usize>,
}

impl BranchWidths {
    pub fn get(&self, kind: BranchKind) -> Option<usize> {
        match kind {
            BranchKind::Intrinsic => self.intrinsic,
            BranchKind::Structure => self.structure,
            BranchKind::Distance => self.distance,
        }
    }

    pub fn total(&self) -> usize {
        BranchKind::ALL.iter().filter_map(|&k| self.get(k)).sum()
    }

    /// Checks `raw` carries exactly the configured blocks with matching widths.
    pub fn check(&self, raw: &RawFeatures) -> Result<()> {
        raw.check_rows()?;
        for kind in BranchKind::ALL {
            match (self.get(kind), raw.get(kind)) {
                (Some(w), Some(b)) if b.ncols() == w => {}
                (None, None) => {}
                (want, got) => {
                    return Err(Error::Shape(format!(
                        "{} block: expected width {:?}, got {:?}",
                        kind.name(),
                        want,
                        got.map(|b| b.ncols())
                    )))
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DhseEncoder {
    pub branches: Vec<Branch>,
    pub hidden: usize,
}

impl DhseEncoder {
    pub fn new<R: Rng>(
        params: &mut Params,
        widths: BranchWidths,
        hidden: usize,
        eps: f64,
        rng: &mut R,
    ) -> Self {
        let branches = BranchKind::ALL
            .iter()
            .filter_map(|&kind| {
                let w = widths.get(kind)?;
                let name = format!("encoder.{}", kind.name());
                Some(Branch {
                    kind,
                    linear: LinearLayer::new(params, &name, w, hidden, rng),
                    norm: LayerNormParams::new(params, &format!("{name}.norm"), hidden, eps),
                })
            })
            .collect();
        DhseEncoder { branches, hidden }
    }

    pub fn widths(&self) -> BranchWidths {
        let mut w = BranchWidths::default();
        for b in &self.branches {
            let slot = match b.kind {
                BranchKind::Intrinsic => &mut w.intrinsic,
                BranchKind::Structure => &mut w.structure,
                BranchKind::Distance => &mut w.distance,
            };
            *slot = Some(b.linear.in_width);
        }
        w
    }

    /// Records the encoder on `tape`; `inputs` holds one leaf per branch kind.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, inputs: &[Option<Var>; 3]) -> Var {
        let mut sum: Option<Var> = None;
        for b in &self.branches {
            let x = inputs[b.kind.slot()].expect("encoder input missing for branch");
            let lin = b.linear.forward(tape, bound, x);
            let normed = b.norm.forward(tape, bound, lin);
            sum = Some(match sum {
                Some(s) => tape.add(s, normed),
                None => normed,
            });
        }
        sum.expect("encoder without branches")
    }

    /// The summed embedding `h` for every node.
    pub fn encode(&self, params: &Params, raw: &RawFeatures) -> Result<Array2<f64>> {
        self.widths().check(raw)?;
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let inputs = leaf_inputs(&mut tape, raw);
        let h = self.forward(&mut tape, &bound, &inputs);
        Ok(tape.value(h).clone())
    }
}

pub(crate) fn leaf_inputs(tape: &mut Tape, raw: &RawFeatures) -> [Option<Var>; 3] {
    BranchKind::ALL.map(|k| raw.get(k).map(|b| tape.leaf(b.clone())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn widths() -> BranchWidths {
        BranchWidths {
            intrinsic: Some(3),
            structure: Some(4),
            distance: Some(2),
        }
    }

    fn raw(n: usize) -> RawFeatures {
        let f = |c: usize, salt: f64| {
            Array2::from_shape_fn((n, c), move |(i, j)| ((i * 7 + j * 3) as f64 * salt).sin())
        };
        RawFeatures::new()
            .with(BranchKind::Intrinsic, f(3, 0.37))
            .with(BranchKind::Structure, f(4, 0.91))
            .with(BranchKind::Distance, f(2, 1.73))
    }

    #[test]
    fn zero_weights_collapse_to_norm_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = Params::new();
        let enc = DhseEncoder::new(&mut params, widths(), 4, DEFAULT_LN_EPS, &mut rng);
        let mut expected: Array2<f64> = Array2::zeros((1, 4));
        for (i, b) in enc.branches.iter().enumerate() {
            params.get_mut(b.linear.weight).fill(0.0);
            params.get_mut(b.linear.bias).fill(0.5 + i as f64);
            params.get_mut(b.norm.gain).fill(0.0);
            let c = Array2::from_shape_fn((1, 4), |(_, j)| (i * 4 + j) as f64 * 0.1);
            expected += &c;
            *params.get_mut(b.norm.bias) = c;
        }
        let h = enc.encode(&params, &raw(5)).unwrap();
        for row in h.rows() {
            for (a, b) in row.iter().zip(expected.row(0)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_branches_triple_one_branch() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let same = BranchWidths {
            intrinsic: Some(3),
            structure: Some(3),
            distance: Some(3),
        };
        let mut params = Params::new();
        let enc = DhseEncoder::new(&mut params, same, 5, DEFAULT_LN_EPS, &mut rng);
        let w = params.get(enc.branches[0].linear.weight).clone();
        for b in &enc.branches[1..] {
            *params.get_mut(b.linear.weight) = w.clone();
        }
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i as f64 - j as f64 * 0.5).cos());
        let all = RawFeatures::new()
            .with(BranchKind::Intrinsic, x.clone())
            .with(BranchKind::Structure, x.clone())
            .with(BranchKind::Distance, x.clone());
        let h = enc.encode(&params, &all).unwrap();

        let mut single_params = Params::new();
        let single = DhseEncoder::new(
            &mut single_params,
            BranchWidths {
                intrinsic: Some(3),
                ..Default::default()
            },
            5,
            DEFAULT_LN_EPS,
            &mut rng,
        );
        *single_params.get_mut(single.branches[0].linear.weight) = w;
        let one = single
            .encode(&single_params, &RawFeatures::new().with(BranchKind::Intrinsic, x))
            .unwrap();
        assert!((h - one * 3.0).mapv(f64::abs).iter().all(|&d| d < 1e-12));
    }

    #[test]
    fn layer_norm_examples() {
        assert_eq!(layer_norm(&[2.0, 2.0, 2.0], &[1.0; 3], &[0.1, 0.2, 0.3], 1e-5), vec![0.1, 0.2, 0.3]);
        let y = layer_norm(&[1.0, -1.0], &[1.0, 1.0], &[0.0, 0.0], 1e-300);
        assert!((y[0] - 1.0).abs() < 1e-12 && (y[1] + 1.0).abs() < 1e-12);

        let x = [0.3, 4.0, -2.0, 1.5, 0.0];
        let y = layer_norm(&x, &[1.0; 5], &[0.0; 5], 1e-5);
        let mean = y.iter().sum::<f64>() / 5.0;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 5.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-5);
    }

    #[test]
    fn tape_layer_norm_matches_plain_function() {
        let x = array![[0.2, -1.0, 3.0], [5.0, 5.0, 5.0]];
        let gain = [0.5, 1.0, 2.0];
        let bias = [0.0, -1.0, 1.0];
        let mut t = Tape::new();
        let xv = t.leaf(x.clone());
        let g = t.leaf(array![[0.5, 1.0, 2.0]]);
        let b = t.leaf(array![[0.0, -1.0, 1.0]]);
        let y = t.layer_norm(xv, g, b, 1e-5);
        for r in 0..2 {
            let want = layer_norm(x.row(r).as_slice().unwrap(), &gain, &bias, 1e-5);
            for (a, w) in t.value(y).row(r).iter().zip(want) {
                assert!((a - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = Params::new();
        let enc = DhseEncoder::new(&mut params, widths(), 4, DEFAULT_LN_EPS, &mut rng);
        let bad = raw(3).with(BranchKind::Distance, Array2::zeros((3, 5)));
        assert!(matches!(enc.encode(&params, &bad), Err(Error::Shape(_))));
        let missing = RawFeatures::new().with(BranchKind::Intrinsic, Array2::zeros((3, 3)));
        assert!(enc.encode(&params, &missing).is_err());
    }
}
