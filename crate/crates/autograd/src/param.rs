use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Whether layers use batch statistics and advance stateful buffers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Ordered, named collection of a model's tensors: trainable weights plus
/// non-trainable buffers (running statistics, power-iteration vectors).
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    trainable: Vec<bool>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { names: Vec::new(), tensors: Vec::new(), trainable: Vec::new() }
    }

    fn insert(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> ParamId {
        assert!(!self.names.iter().any(|n| n == name), "duplicate parameter name {name}");
        self.names.push(name.to_string());
        self.tensors.push(value);
        self.trainable.push(trainable);
        ParamId(self.names.len() - 1)
    }

    pub fn add_weight(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        self.insert(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        self.insert(name, value, false)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.ids().filter(|&id| self.trainable[id.0]).map(|id| self.tensors[id.0].numel()).sum()
    }

    /// `(name, tensor)` pairs in insertion order.
    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Replaces every tensor from `(name, tensor)` pairs; names and shapes
    /// must match this set exactly.
    pub fn load_named(&mut self, entries: &[(String, Tensor<T>)]) -> Result<()> {
        if entries.len() != self.len() {
            return Err(Error::Param(format!(
                "expected {} tensors, found {}",
                self.len(),
                entries.len()
            )));
        }
        for (i, (name, t)) in entries.iter().enumerate() {
            if *name != self.names[i] {
                return Err(Error::Param(format!("expected tensor {}, found {}", self.names[i], name)));
            }
            if t.shape() != self.tensors[i].shape() {
                return Err(Error::Param(format!(
                    "{}: shape {:?} does not match {:?}",
                    name,
                    t.shape(),
                    self.tensors[i].shape()
                )));
            }
        }
        for (i, (_, t)) in entries.iter().enumerate() {
            self.tensors[i] = t.clone();
        }
        Ok(())
    }

    /// Places the weights into `g`. With `trainable`, weights become
    /// differentiable leaves; otherwise constants.
    pub fn bind<'a>(&'a self, g: &mut Graph<T>, mode: Mode, trainable: bool) -> Bound<'a, T> {
        let vars = self
            .tensors
            .iter()
            .zip(&self.trainable)
            .map(|(t, &is_weight)| {
                if !is_weight {
                    None
                } else if trainable {
                    Some(g.leaf(t.clone()))
                } else {
                    Some(g.input(t.clone()))
                }
            })
            .collect();
        Bound { set: self, vars, mode, updates: RefCell::new(Vec::new()) }
    }

    /// Writes buffer updates recorded during a training-mode forward.
    pub fn apply_updates(&mut self, updates: Vec<(ParamId, Tensor<T>)>) {
        for (id, t) in updates {
            assert_eq!(self.tensors[id.0].shape(), t.shape(), "buffer update shape");
            self.tensors[id.0] = t;
        }
    }
}

/// A [`ParamSet`] placed into a particular graph.
pub struct Bound<'a, T: Scalar> {
    set: &'a ParamSet<T>,
    vars: Vec<Option<Var>>,
    mode: Mode,
    updates: RefCell<Vec<(ParamId, Tensor<T>)>>,
}

impl<'a, T: Scalar> Bound<'a, T> {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0].unwrap_or_else(|| panic!("{} is a buffer, not a weight", self.set.name(id)))
    }

    pub fn tensor(&self, id: ParamId) -> &'a Tensor<T> {
        self.set.get(id)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn push_update(&self, id: ParamId, value: Tensor<T>) {
        self.updates.borrow_mut().push((id, value));
    }

    pub fn into_updates(self) -> Vec<(ParamId, Tensor<T>)> {
        self.updates.into_inner()
    }

    /// Per-parameter gradients, indexed like the parameter set.
    pub fn grads(&self, grads: &Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.vars.iter().map(|v| v.and_then(|v| grads.get(v).cloned())).collect()
    }
}
