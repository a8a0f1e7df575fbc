use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// All parameters of a network in one flat buffer. Gradients use the same
/// layout, so a gradient is just a `Vec<f64>` of `store.len()` entries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    specs: Vec<ParamSpec>,
    data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        let spec = ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.data.len(),
        };
        self.data.resize(self.data.len() + spec.len(), 0.0);
        self.specs.push(spec);
        ParamId(self.specs.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        let s = &self.specs[id.0];
        &self.data[s.offset..s.offset + s.len()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        let s = &self.specs[id.0];
        let (o, n) = (s.offset, s.len());
        &mut self.data[o..o + n]
    }

    /// The slice of a same-layout gradient buffer belonging to `id`.
    pub fn grad<'g>(&self, id: ParamId, grad: &'g mut [f64]) -> &'g mut [f64] {
        let s = &self.specs[id.0];
        &mut grad[s.offset..s.offset + s.len()]
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.data.len()]
    }

    /// Uniform init in `[-bound, bound]`.
    pub fn init_uniform<R: Rng>(&mut self, id: ParamId, bound: f64, rng: &mut R) {
        for v in self.get_mut(id) {
            *v = if bound > 0.0 {
                rng.random_range(-bound..=bound)
            } else {
                0.0
            };
        }
    }

    /// Replace all values, checking names and shapes match.
    pub fn load(&mut self, specs: &[ParamSpec], data: Vec<f64>) -> Result<()> {
        if specs != self.specs.as_slice() {
            return Err(Error::Shape("parameter layout differs from model configuration".into()));
        }
        if data.len() != self.data.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter values, got {}",
                self.data.len(),
                data.len()
            )));
        }
        self.data = data;
        Ok(())
    }
}
