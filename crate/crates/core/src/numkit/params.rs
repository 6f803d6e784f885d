use std::sync::atomic::{AtomicU64, Ordering};

use indexmap::IndexMap;

use crate::error::{Error, Result};

use super::real::Real;
use super::tensor::Tensor;

static NEXT_TAG: AtomicU64 = AtomicU64::new(1);

/// Position of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub tensor: Tensor<T>,
    pub frozen: bool,
}

/// Ordered, uniquely named collection of trainable tensors.
///
/// The store tag identifies which graph leaves may write gradients back into
/// it; clones and casts keep the tag because they share the same layout.
#[derive(Clone, Debug)]
pub struct ParamStore<T = f32> {
    tag: u64,
    entries: IndexMap<String, ParamEntry<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tag: NEXT_TAG.fetch_add(1, Ordering::Relaxed),
            entries: IndexMap::new(),
        }
    }

    pub fn tag(&self) -> u64 {
        self.tag
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let (idx, _) = self.entries.insert_full(
            name,
            ParamEntry {
                tensor,
                frozen: false,
            },
        );
        Ok(ParamId(idx))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.get_index_of(name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.entries
            .get_index(id.0)
            .expect("param id out of range")
            .0
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entry(id).tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self
            .entries
            .get_index_mut(id.0)
            .expect("param id out of range")
            .1
            .tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        self.entries
            .get_index(id.0)
            .expect("param id out of range")
            .1
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name).map(|e| &e.tensor)
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.entry(id).frozen
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.entries
            .get_index_mut(id.0)
            .expect("param id out of range")
            .1
            .frozen = frozen;
    }

    pub fn freeze_all(&mut self) {
        self.entries.values_mut().for_each(|e| e.frozen = true);
    }

    pub fn all_frozen(&self) -> bool {
        self.entries.values().all(|e| e.frozen)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &ParamEntry<T>)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (n, e))| (ParamId(i), n.as_str(), e))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        self.entries.values_mut().for_each(|e| e.tensor.zero_grad());
    }

    pub fn clear_grads(&mut self) {
        self.entries
            .values_mut()
            .for_each(|e| e.tensor.clear_grad());
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.tensor.numel()).sum()
    }

    /// Same names, frozen flags and tag, element type converted.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tag: self.tag,
            entries: self
                .entries
                .iter()
                .map(|(n, e)| {
                    (
                        n.clone(),
                        ParamEntry {
                            tensor: e.tensor.cast(),
                            frozen: e.frozen,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Copies values and frozen flags from `other`, which must hold the same
    /// names and shapes in the same order. The tag of `self` is kept.
    pub fn assign_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((na, a), (nb, b)) in self.entries.iter().zip(other.entries.iter()) {
            if na != nb || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::Format(format!(
                    "tensor `{nb}` {:?} does not match expected `{na}` {:?}",
                    b.tensor.shape(),
                    a.tensor.shape()
                )));
            }
        }
        for (a, b) in self.entries.values_mut().zip(other.entries.values()) {
            a.tensor = b.tensor.clone();
            a.tensor.clear_grad();
            a.frozen = b.frozen;
        }
        Ok(())
    }

    /// True when every tensor's values match `other` bit for bit.
    pub fn bit_identical(&self, other: &ParamStore<T>) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(other.entries.iter())
                .all(|((na, a), (nb, b))| {
                    na == nb
                        && a.tensor.shape() == b.tensor.shape()
                        && a.tensor
                            .data()
                            .iter()
                            .zip(b.tensor.data())
                            .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
                })
    }
}
