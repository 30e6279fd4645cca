//! Named parameter tensors shared by the encoder, the attention layers and
//! the classifier head.

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        assert!(self.id_of(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: (usize, usize),
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let value = Array2::from_shape_simple_fn(shape, || rng.gen_range(-bound..=bound));
        self.add(name, value)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    /// Places every parameter on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(self.values.iter().map(|v| tape.leaf(v.clone())).collect())
    }
}

/// Tape variables of a [`Params`] set, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}
