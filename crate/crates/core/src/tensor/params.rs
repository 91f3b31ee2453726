use std::collections::HashMap;

use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Result, SumError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, owned parameter tensors. Blocks hold [`ParamId`]s into a store and
/// bind them onto a fresh [`Tape`] for every forward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(SumError::Config(format!("duplicate parameter name {name}")));
        }
        self.by_name.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(self.names.len() - 1))
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

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Ids ordered by parameter name.
    pub fn sorted_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.ids().collect();
        ids.sort_by(|a, b| self.names[a.0].cmp(&self.names[b.0]));
        ids
    }

    /// Total number of learnable scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut()
    }
}

/// One forward pass: a tape plus the parameter leaves bound onto it so far.
pub struct Binder<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    trainable: bool,
}

impl<'a> Binder<'a> {
    /// Parameters are bound as gradient-tracking leaves.
    pub fn new(store: &'a ParamStore) -> Self {
        Self::with_tape(store, Tape::new(), true)
    }

    /// Parameters are bound as constants (inference).
    pub fn frozen(store: &'a ParamStore) -> Self {
        Self::with_tape(store, Tape::new(), false)
    }

    pub fn with_tape(store: &'a ParamStore, tape: Tape, trainable: bool) -> Self {
        Self {
            tape,
            store,
            bound: vec![None; store.len()],
            trainable,
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let t = self.store.get(id);
        let v = if self.trainable {
            self.tape
                .input(t.shape(), t.data().to_vec(), true)
                .expect("stored parameters have valid shapes")
        } else {
            self.tape.leaf(t)
        };
        self.bound[id.0] = Some(v);
        v
    }

    /// Backward from `loss` and return one gradient per stored parameter
    /// (`None` for parameters this pass never touched).
    pub fn param_grads(&self, loss: Var) -> Result<Vec<Option<Vec<f64>>>> {
        let mut grads: Gradients = self.tape.backward(loss)?;
        Ok(self
            .bound
            .iter()
            .map(|b| b.and_then(|v| grads.take(v)))
            .collect())
    }
}
