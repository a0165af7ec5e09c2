use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;
use alloc::format;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// Named trainable tensors in a fixed creation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn add(&mut self, name: String, mut tensor: Tensor) -> ParamId {
        tensor.set_requires_grad(true);
        self.params.push(Param { name, tensor });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.tensor)
    }

    /// Replaces the values of `name`, keeping its shape.
    pub fn set(&mut self, name: &str, data: &[f64]) -> Result<()> {
        let t = self
            .by_name_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named `{name}`")))?;
        if t.len() != data.len() {
            return Err(shape_err(
                "set_param",
                format!("`{name}` has {} entries, got {}", t.len(), data.len()),
            ));
        }
        t.data_mut().copy_from_slice(data);
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Puts every parameter on `g` as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.param(p.tensor.clone())).collect()
    }

    /// Puts every parameter on `g` as a constant (no gradient).
    pub fn bind_frozen(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.constant(p.tensor.clone())).collect()
    }

    /// Adds the gradients recorded on `g` into each parameter's slot.
    pub fn accumulate_grads(&mut self, g: &Graph, vars: &[Var]) -> Result<()> {
        for (p, v) in self.params.iter_mut().zip(vars) {
            if let Some(gr) = g.grad(*v) {
                p.tensor.accumulate_grad(gr)?;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Drops the gradient buffers.
    pub fn clear_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.clear_grad());
    }
}
