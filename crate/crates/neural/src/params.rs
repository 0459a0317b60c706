use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::tensor::Tensor;
use crate::{NeuralError, Result};

/// Parameter group a tensor belongs to.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    BaseLm,
    Adapter,
    MlmHead,
    QaHead,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::BaseLm, Role::Adapter, Role::MlmHead, Role::QaHead];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::BaseLm => "base_lm",
            Role::Adapter => "adapter",
            Role::MlmHead => "mlm_head",
            Role::QaHead => "qa_head",
        })
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Copy, Clone, Debug)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub role: Role,
    pub value: Tensor<T>,
}

/// Every model tensor, addressed by `ParamId`, with per-role trainable flags.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, usize>,
    trainable: [bool; 4],
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
            trainable: [true; 4],
        }
    }
}

impl<T: Element> ParamStore<T> {
    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        role: Role,
        shape: &[usize],
        init: Init,
        rng: &mut R,
    ) -> ParamId {
        assert!(!self.by_name.contains_key(name), "duplicate parameter {name}");
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("valid std");
                (0..n).map(|_| T::c(dist.sample(rng))).collect()
            }
        };
        let id = self.params.len();
        self.params.push(Param {
            name: name.to_string(),
            role,
            value: Tensor::from_vec(shape, data).expect("shape matches"),
        });
        self.by_name.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn set_trainable(&mut self, role: Role, trainable: bool) {
        self.trainable[role.index()] = trainable;
    }

    pub fn role_trainable(&self, role: Role) -> bool {
        self.trainable[role.index()]
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.role_trainable(self.params[id.0].role)
    }

    /// Copies of every tensor in `role`, for before/after comparisons.
    pub fn snapshot(&self, role: Role) -> Vec<(String, Vec<T>)> {
        self.params
            .iter()
            .filter(|p| p.role == role)
            .map(|p| (p.name.clone(), p.value.data().to_vec()))
            .collect()
    }

    pub fn count(&self, role: Role) -> usize {
        self.params
            .iter()
            .filter(|p| p.role == role)
            .map(|p| p.value.len())
            .sum()
    }

    /// Replaces a tensor's contents, checking the shape.
    pub fn assign(&mut self, name: &str, shape: &[usize], data: Vec<T>) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| NeuralError::Integrity(format!("unknown tensor {name}")))?;
        let p = &mut self.params[id.0];
        if p.value.shape() != shape {
            return Err(NeuralError::Integrity(format!(
                "tensor {name}: stored shape {shape:?}, model expects {:?}",
                p.value.shape()
            )));
        }
        p.value = Tensor::from_vec(shape, data)?;
        Ok(())
    }
}

/// Gradient buffers for the trainable tensors of a store.
#[derive(Clone, Debug)]
pub struct Grads<T> {
    slots: Vec<Option<Vec<T>>>,
}

impl<T: Element> Grads<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        Grads {
            slots: store
                .ids()
                .map(|id| store.is_trainable(id).then(|| vec![T::zero(); store.value(id).len()]))
                .collect(),
        }
    }

    pub fn slot(&mut self, id: ParamId) -> Option<&mut [T]> {
        self.slots[id.0].as_deref_mut()
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.slots[id.0].as_deref()
    }

    pub fn wants(&self, id: ParamId) -> bool {
        self.slots[id.0].is_some()
    }

    pub fn zero(&mut self) {
        for s in self.slots.iter_mut().flatten() {
            s.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub fn scale(&mut self, factor: T) {
        for s in self.slots.iter_mut().flatten() {
            s.iter_mut().for_each(|x| *x = *x * factor);
        }
    }

    pub fn global_norm(&self) -> T {
        self.slots
            .iter()
            .flatten()
            .flat_map(|s| s.iter())
            .map(|&x| x * x)
            .sum::<T>()
            .sqrt()
    }

    pub fn ensure_finite(&self) -> Result<()> {
        for (i, s) in self.slots.iter().enumerate() {
            if let Some(s) = s {
                if s.iter().any(|x| !x.is_finite()) {
                    return Err(NeuralError::Numeric(format!("non-finite gradient in tensor {i}")));
                }
            }
        }
        Ok(())
    }
}
