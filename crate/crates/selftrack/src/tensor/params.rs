use std::collections::HashMap;

use super::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors. Order of insertion is the canonical order used by
/// checkpoints and the optimizer.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    lr_scale: Vec<f64>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Registers a trainable tensor. Panics on a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.tensors.len());
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(t.with_requires_grad(true));
        self.lr_scale.push(1.0);
        id
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
        self.by_name.get(name).copied()
    }

    /// Frozen parameters stop receiving gradients and optimizer updates.
    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        let t = std::mem::replace(&mut self.tensors[id.0], Tensor::scalar(0.0));
        self.tensors[id.0] = t.with_requires_grad(!frozen);
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        !self.tensors[id.0].requires_grad()
    }

    pub fn set_lr_scale(&mut self, id: ParamId, scale: f64) {
        self.lr_scale[id.0] = scale;
    }

    pub fn lr_scale(&self, id: ParamId) -> f64 {
        self.lr_scale[id.0]
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Copies the values of `other`'s same-named parameters whose names pass
    /// `filter`. Returns the ids that were overwritten.
    pub fn copy_from(
        &mut self,
        other: &ParamStore,
        filter: impl Fn(&str) -> bool,
    ) -> Result<Vec<ParamId>, super::TensorError> {
        let mut copied = Vec::new();
        for (i, name) in other.names.iter().enumerate() {
            if !filter(name) {
                continue;
            }
            let Some(id) = self.find(name) else { continue };
            let src = &other.tensors[i];
            let dst = &mut self.tensors[id.0];
            if src.shape() != dst.shape() {
                return Err(super::TensorError::ShapeMismatch {
                    op: "copy_from",
                    lhs: dst.shape().to_vec(),
                    rhs: src.shape().to_vec(),
                });
            }
            dst.data_mut().copy_from_slice(src.data());
            copied.push(id);
        }
        Ok(copied)
    }
}
