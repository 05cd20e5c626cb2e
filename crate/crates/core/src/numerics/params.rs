use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// Index of a parameter tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors, kept in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
    by_name: HashMap<String, usize>,
}

impl<S: Real> ParamStore<S> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<S>) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter name {name}");
        let id = self.tensors.len();
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(id)
    }

    /// Registers a tensor drawn from N(0, std²).
    pub fn add_normal(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let t = if std == 0.0 {
            Tensor::zeros(shape.to_vec())
        } else {
            let normal = Normal::new(0.0, std).expect("finite std");
            Tensor::from_fn(shape.to_vec(), |_| S::lit(normal.sample(rng)))
        };
        self.add(name, t)
    }

    pub fn add_const(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> ParamId {
        self.add(name, Tensor::from_fn(shape.to_vec(), |_| S::lit(value)))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<S>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn cast<T: Real>(&self) -> ParamStore<T> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Replaces the values of every parameter with the same-named tensor from `other`.
    pub fn load_from(&mut self, other: &ParamStore<S>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::InvalidArgument(format!(
                "parameter count mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for (i, name) in self.names.iter().enumerate() {
            let src = other.id(name).ok_or_else(|| {
                Error::InvalidArgument(format!("parameter `{name}` missing from source"))
            })?;
            let src = other.get(src);
            if src.shape() != self.tensors[i].shape() {
                return Err(Error::shape(
                    "load_params",
                    format!("`{name}`: {:?} vs {:?}", self.tensors[i].shape(), src.shape()),
                ));
            }
            self.tensors[i] = Tensor::new(src.shape().to_vec(), src.data().to_vec())?;
        }
        Ok(())
    }

    /// True when every parameter value is bitwise equal to `other`'s.
    pub fn bitwise_eq(&self, other: &ParamStore<S>) -> bool {
        self.names == other.names
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
                a.shape() == b.shape()
                    && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits_eq(*y))
            })
    }
}

trait BitsEq {
    fn to_bits_eq(self, other: Self) -> bool;
}

impl<S: Real> BitsEq for S {
    fn to_bits_eq(self, other: Self) -> bool {
        // Real is only implemented for f32 and f64, where this is exact.
        self.as_f64().to_bits() == other.as_f64().to_bits()
    }
}
