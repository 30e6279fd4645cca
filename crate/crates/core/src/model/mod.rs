//! Node classifiers: encoder (or raw concatenation), stacked GAT or AGDN
//! layers, and a linear softmax head.

pub mod agdn;
pub mod checkpoint;
pub mod gat;
pub mod train;

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{EdgeIndex, Tape, Var};
use crate::encoder::{leaf_inputs, BranchWidths, DhseEncoder, LinearLayer, RawFeatures, DEFAULT_LN_EPS};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::params::{Bound, Params};

pub use agdn::{AgdnLayer, Transition};
pub use gat::{Activation, GatLayer, LayerTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gat,
    #[default]
    Agdn,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gat" => Ok(ModelKind::Gat),
            "agdn" => Ok(ModelKind::Agdn),
            other => Err(Error::Config(format!("unknown model kind {other:?} (gat | agdn)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    /// Diffusion depth `K` of AGDN layers.
    pub diffusion_depth: usize,
    pub transition: Transition,
    pub activation: Activation,
    pub num_classes: usize,
    pub inputs: BranchWidths,
    /// Feed the concatenated raw blocks straight into the first layer
    /// instead of encoding them.
    pub encoding: bool,
    pub layer_norm_eps: f64,
    /// Dropout on the embedding and on every hidden layer's input during training.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Agdn,
            hidden: 64,
            heads: 3,
            layers: 2,
            diffusion_depth: 3,
            transition: Transition::Attention,
            activation: Activation::Elu,
            num_classes: 2,
            inputs: BranchWidths::default(),
            encoding: true,
            layer_norm_eps: DEFAULT_LN_EPS,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.hidden == 0 || self.heads == 0 || self.layers == 0 {
            return fail("hidden width, heads and layers must all be positive");
        }
        if self.num_classes < 2 {
            return fail("need at least two classes");
        }
        if self.inputs.total() == 0 {
            return fail("no input features configured");
        }
        if self.layer_norm_eps.is_nan() || self.layer_norm_eps <= 0.0 {
            return fail("layer-norm epsilon must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Gat(GatLayer),
    Agdn(AgdnLayer),
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Option<DhseEncoder>,
    pub layers: Vec<Layer>,
    pub head: LinearLayer,
}

/// Soft predictions of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub logits: Array2<f64>,
    /// Row-wise softmax of `logits`.
    pub z: Array2<f64>,
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub embedding: Var,
    pub logits: Var,
    pub layers: Vec<LayerTrace>,
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut z = logits.clone();
    for mut row in z.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    z
}

/// Per-row argmax; ties go to the lowest index.
pub fn argmax_rows(m: &Array2<f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

impl Model {
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<(Model, Params)> {
        config.validate()?;
        let mut params = Params::new();
        let (encoder, first_width) = if config.encoding {
            let enc = DhseEncoder::new(
                &mut params,
                config.inputs,
                config.hidden,
                config.layer_norm_eps,
                rng,
            );
            (Some(enc), config.hidden)
        } else {
            (None, config.inputs.total())
        };

        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let in_width = if l == 0 { first_width } else { config.hidden };
            let name = format!("layer{l}");
            layers.push(match config.kind {
                ModelKind::Gat => Layer::Gat(GatLayer::new(
                    &mut params,
                    &name,
                    in_width,
                    config.hidden,
                    config.heads,
                    config.activation,
                    rng,
                )),
                ModelKind::Agdn => Layer::Agdn(AgdnLayer::new(
                    &mut params,
                    &name,
                    in_width,
                    config.hidden,
                    config.heads,
                    config.diffusion_depth,
                    config.transition,
                    rng,
                )),
            });
        }
        let head = LinearLayer::new(&mut params, "head", config.hidden, config.num_classes, rng);
        Ok((
            Model {
                config,
                encoder,
                layers,
                head,
            },
            params,
        ))
    }

    fn dropout<R: Rng>(&self, tape: &mut Tape, x: Var, rng: Option<&mut R>) -> Var {
        let p = self.config.dropout;
        let Some(rng) = rng else { return x };
        if p == 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let dim = tape.value(x).dim();
        let mask = Array2::from_shape_simple_fn(dim, || if rng.gen::<f64>() < p { 0.0 } else { keep });
        let m = tape.leaf(mask);
        tape.mul(x, m)
    }

    /// Records the full model on `tape`. Passing an RNG enables dropout.
    pub fn forward<R: Rng>(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        raw: &RawFeatures,
        edges: &Arc<EdgeIndex>,
        mut dropout_rng: Option<&mut R>,
    ) -> ForwardTrace {
        let embedding = match &self.encoder {
            Some(enc) => {
                let inputs = leaf_inputs(tape, raw);
                enc.forward(tape, bound, &inputs)
            }
            None => tape.leaf(raw.concatenated().expect("validated inputs")),
        };

        let mut h = embedding;
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            h = self.dropout(tape, h, dropout_rng.as_deref_mut());
            let trace = match layer {
                Layer::Gat(l) => l.forward(tape, bound, h, edges),
                Layer::Agdn(l) => l.forward(tape, bound, h, edges),
            };
            h = match layer {
                // σ is already applied per head inside the attention layer
                Layer::Gat(_) => trace.output,
                Layer::Agdn(_) => self.config.activation.apply(tape, trace.output),
            };
            traces.push(trace);
        }
        let logits = self.head.forward(tape, bound, h);
        ForwardTrace {
            embedding,
            logits,
            layers: traces,
        }
    }

    pub fn check_inputs(&self, raw: &RawFeatures, g: &Graph) -> Result<()> {
        self.config.inputs.check(raw)?;
        let n = raw.num_nodes().unwrap_or(0);
        if n != g.num_nodes() {
            return Err(Error::Shape(format!(
                "features have {n} rows but the graph has {} nodes",
                g.num_nodes()
            )));
        }
        Ok(())
    }

    /// Inference-mode logits and softmax predictions for every node.
    pub fn predict(&self, params: &Params, raw: &RawFeatures, g: &Graph) -> Result<ModelOutput> {
        self.check_inputs(raw, g)?;
        let edges = Arc::new(EdgeIndex::attention(g));
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let trace = self.forward::<rand_chacha::ChaCha8Rng>(&mut tape, &bound, raw, &edges, None);
        let logits = tape.value(trace.logits).clone();
        let z = softmax_rows(&logits);
        Ok(ModelOutput { logits, z })
    }
}
