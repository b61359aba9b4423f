//! Named parameter and buffer storage.

use mpnp_autodiff::{Tape, Tensor, Var};

use crate::error::{CoreError, Result};

/// Ordered collection of named trainable tensors plus named non-trainable
/// buffers (batch-norm running statistics).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    buffer_names: Vec<String>,
    buffers: Vec<Vec<f64>>,
}

/// Tape handles of every parameter, in store order.
#[derive(Clone, Debug)]
pub struct ParamVars(pub Vec<Var>);

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a parameter and returns its slot.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        self.tensors.len() - 1
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, values: Vec<f64>) -> usize {
        self.buffer_names.push(name.into());
        self.buffers.push(values);
        self.buffers.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.names[slot]
    }

    pub fn get(&self, slot: usize) -> &Tensor {
        &self.tensors[slot]
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Tensor {
        &mut self.tensors[slot]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor> {
        self.slot(name)
            .map(|s| &self.tensors[s])
            .ok_or_else(|| CoreError::UnknownParam(name.to_string()))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.slot(name) {
            Some(s) => Ok(&mut self.tensors[s]),
            None => Err(CoreError::UnknownParam(name.to_string())),
        }
    }

    pub fn buffer_names(&self) -> &[String] {
        &self.buffer_names
    }

    pub fn buffer(&self, slot: usize) -> &[f64] {
        &self.buffers[slot]
    }

    pub fn buffer_mut(&mut self, slot: usize) -> &mut Vec<f64> {
        &mut self.buffers[slot]
    }

    pub fn buffer_slot(&self, name: &str) -> Option<usize> {
        self.buffer_names.iter().position(|n| n == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter as a differentiable leaf.
    pub fn record(&self, tape: &mut Tape) -> ParamVars {
        ParamVars(self.tensors.iter().map(|t| tape.leaf(t)).collect())
    }

    /// Replaces a parameter's values, keeping its shape.
    pub fn set_values(&mut self, slot: usize, values: &[f64]) -> Result<()> {
        let t = &mut self.tensors[slot];
        if values.len() != t.numel() {
            return Err(CoreError::ParamShape {
                name: self.names[slot].clone(),
                expected: t.shape().to_vec(),
                found: vec![values.len()],
            });
        }
        t.values_mut().copy_from_slice(values);
        Ok(())
    }

    /// True when every parameter and buffer matches bit for bit.
    pub fn bit_identical(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self.buffer_names == other.buffer_names
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
                a.shape() == b.shape() && a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
            && self
                .buffers
                .iter()
                .zip(&other.buffers)
                .all(|(a, b)| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()))
    }
}

impl std::ops::Index<usize> for ParamVars {
    type Output = Var;

    fn index(&self, slot: usize) -> &Var {
        &self.0[slot]
    }
}
