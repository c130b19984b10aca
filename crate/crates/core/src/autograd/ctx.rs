use std::collections::BTreeMap;

use crate::autograd::tape::{GradStore, NodeId, Tape};
use crate::error::Result;
use crate::params::{BnUpdate, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn is_training(self) -> bool {
        self == Mode::Train
    }
}

/// One forward pass: a fresh tape, a read-only parameter store, and the
/// record of which parameters were bound to which leaves.
pub struct ForwardCtx<'s, T: Scalar> {
    pub tape: Tape<T>,
    store: &'s ParamStore<T>,
    mode: Mode,
    bound: BTreeMap<String, NodeId>,
    bn_updates: Vec<BnUpdate<T>>,
}

impl<'s, T: Scalar> ForwardCtx<'s, T> {
    pub fn new(store: &'s ParamStore<T>, mode: Mode) -> Self {
        ForwardCtx {
            tape: Tape::new(),
            store,
            mode,
            bound: BTreeMap::new(),
            bn_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    /// Leaf node for a named parameter; repeated lookups share one leaf.
    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.bound.get(name) {
            return Ok(id);
        }
        let value = self.store.value(name)?.clone();
        let id = self.tape.leaf(value);
        self.bound.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn buffer(&self, name: &str) -> Result<&'s Tensor4<T>> {
        self.store.buffer(name)
    }

    /// Leaf for a non-parameter input such as an image batch.
    pub fn input(&mut self, value: Tensor4<T>) -> NodeId {
        self.tape.leaf(value)
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor4<T>> {
        self.tape.value(id)
    }

    pub fn record_bn_update(&mut self, update: BnUpdate<T>) {
        self.bn_updates.push(update);
    }

    pub fn bn_updates(&self) -> &[BnUpdate<T>] {
        &self.bn_updates
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate<T>> {
        std::mem::take(&mut self.bn_updates)
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.bound.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Gradient of every bound parameter, zeros where none reached it.
    pub fn param_grads(&self, grads: &GradStore<T>) -> Result<Vec<(String, Tensor4<T>)>> {
        self.bound
            .iter()
            .map(|(name, &id)| Ok((name.clone(), grads.get_or_zeros(&self.tape, id)?)))
            .collect()
    }
}
