use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Named parameter arrays in a fixed insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.entries[i].1 = value,
            None => {
                self.index.insert(name.clone(), self.entries.len());
                self.entries.push((name, value));
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Records every array on `tape` as a gradient-requiring leaf.
    pub fn attach<'t>(&self, tape: &'t Tape) -> ParamVars<'t> {
        ParamVars {
            vars: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), tape.param(t.clone())))
                .collect(),
        }
    }

    /// Same as [`ParamStore::attach`] but without gradients (inference).
    pub fn attach_frozen<'t>(&self, tape: &'t Tape) -> ParamVars<'t> {
        ParamVars {
            vars: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), tape.constant(t.clone())))
                .collect(),
        }
    }

    /// Sets every array to zero.
    pub fn zero_all(&mut self) {
        for (_, t) in &mut self.entries {
            t.data_mut().fill(0.0);
        }
    }
}

/// Tape handles for a [`ParamStore`], looked up by name.
pub struct ParamVars<'t> {
    vars: HashMap<String, Var<'t>>,
}

impl<'t> ParamVars<'t> {
    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var<'t>)> + '_ {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }
}

/// Uniform in `±1/sqrt(fan_in)`.
pub(crate) fn uniform_weight(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(fan_in, fan_out, data).expect("sized above")
}

impl<'t> FromIterator<(String, Var<'t>)> for ParamVars<'t> {
    fn from_iter<I: IntoIterator<Item = (String, Var<'t>)>>(iter: I) -> Self {
        ParamVars {
            vars: iter.into_iter().collect(),
        }
    }
}
