use std::collections::HashMap;

use rand::Rng;

use super::adam::{adam_step, AdamState};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    lookup: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.lookup.contains_key(&name), "duplicate parameter {name}");
        self.lookup.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces every tensor from `named`; each must exist with the same
    /// shape.
    pub fn load_from(&mut self, named: &HashMap<String, Tensor>) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let t = named.get(name).ok_or_else(|| Error::MissingArray(name.clone()))?;
            if t.shape() != self.tensors[i].shape() {
                return Err(Error::Shape(format!(
                    "array `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    self.tensors[i].shape()
                )));
            }
            self.tensors[i] = t.clone();
        }
        Ok(())
    }
}

/// Uniform in `±√(6/(fan_in+fan_out))`.
pub fn glorot_uniform<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-a..=a)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("positive extents")
}

/// A tape bound to a parameter store. Each parameter is recorded at most
/// once per session, on first use.
pub struct Session<'s> {
    pub tape: Tape,
    store: &'s ParamStore,
    bound: Vec<Option<Var>>,
    frozen: Vec<bool>,
}

impl<'s> Session<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            frozen: vec![false; store.len()],
        }
    }

    /// Marks parameters as constants for this session.
    pub fn freeze(&mut self, pred: impl Fn(&str) -> bool) {
        for (i, name) in self.store.names.iter().enumerate() {
            if pred(name) {
                self.frozen[i] = true;
            }
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(v) = self.bound[id.0] {
            return Ok(v);
        }
        let t = self.store.get(id);
        let v = if self.frozen[id.0] {
            self.tape.constant(t.clone())?
        } else {
            self.tape.param(t)?
        };
        self.bound[id.0] = Some(v);
        Ok(v)
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.tape.backward(loss)
    }

    /// Gradients of every parameter used in this session and not frozen.
    pub fn grads(&self) -> Vec<(ParamId, Tensor)> {
        self.bound
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.frozen[*i])
            .filter_map(|(i, v)| {
                v.and_then(|v| self.tape.grad(v).cloned())
                    .map(|g| (ParamId(i), g))
            })
            .collect()
    }
}

/// Adam over a whole [`ParamStore`]. Moment buffers are created on a
/// parameter's first update, so parameters that never train carry no state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub states: Vec<Option<AdamState>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Self {
            lr,
            states: vec![None; store.len()],
        }
    }

    /// Applies one update per gradient. All gradients are validated first,
    /// so a non-finite gradient leaves every parameter untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)]) -> Result<()> {
        if let Some((id, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {}", store.name(*id))));
        }
        for (id, g) in grads {
            let st = self.states[id.0].get_or_insert_with(|| AdamState::new(g.len()));
            adam_step(store.get_mut(*id), g, st, self.lr)?;
        }
        Ok(())
    }
}
