use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{contract, Error, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};

/// Named parameter tensors in a fixed insertion order.
///
/// The order is the canonical order for optimizers and checkpoints.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        contract!(self.get(&name).is_none(), "duplicate parameter {name}");
        self.entries.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|(n, _)| n.clone()).collect()
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

    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.entries.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, t)| t.len()).sum()
    }

    /// Drops every parameter whose name starts with `prefix`; returns how many.
    pub fn remove_prefix(&mut self, prefix: &str) -> usize {
        let before = self.entries.len();
        self.entries.retain(|(n, _)| !n.starts_with(prefix));
        before - self.entries.len()
    }

    /// Replaces the value of an existing parameter, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))?;
        contract!(
            slot.shape() == value.shape(),
            "parameter {name}: shape {:?} vs stored {:?}",
            value.shape(),
            slot.shape()
        );
        *slot = value;
        Ok(())
    }

    pub fn extend(&mut self, other: &ParamStore) -> Result<()> {
        for (n, t) in other.iter() {
            self.insert(n, t.clone())?;
        }
        Ok(())
    }

    /// Registers every parameter as a trainable leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        let vars = self.entries.iter().map(|(_, t)| tape.param(t.clone())).collect();
        let index = self.entries.iter().enumerate().map(|(i, (n, _))| (n.clone(), i)).collect();
        Bound { vars, index }
    }

    /// Binds existing variables under this store's names, in store order.
    pub fn bind_vars<'t>(&self, vars: &[Var<'t>]) -> Result<Bound<'t>> {
        contract!(vars.len() == self.entries.len(), "{} variables for {} parameters", vars.len(), self.entries.len());
        for ((n, t), v) in self.entries.iter().zip(vars) {
            contract!(v.shape() == t.shape(), "variable for {n} has shape {:?}, want {:?}", v.shape(), t.shape());
        }
        let index = self.entries.iter().enumerate().map(|(i, (n, _))| (n.clone(), i)).collect();
        Ok(Bound { vars: vars.to_vec(), index })
    }

    /// SHA-256 over names, shapes and little-endian values (hex, 16 chars).
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (n, t) in &self.entries {
            h.update((n.len() as u64).to_le_bytes());
            h.update(n.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Parameters registered on a tape, addressable by name.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
    index: HashMap<String, usize>,
}

impl<'t> Bound<'t> {
    pub fn var(&self, name: &str) -> Result<Var<'t>> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::Contract(format!("parameter {name} not bound")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    /// Gradient per parameter in store order; unreachable parameters get zeros.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|&v| grads.get_or_zeros(v)).collect()
    }
}
