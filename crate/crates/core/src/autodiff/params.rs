use std::ops::Index;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{Graph, Var};
use super::tensor::{Scalar, Tensor};
use crate::error::{HttError, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<F: Scalar = f64> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
}

/// Graph leaves for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor.with_grad());
        ParamId(self.tensors.len() - 1)
    }

    /// U(-b, b) with b = sqrt(6 / fan_in).
    pub fn add_kaiming(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> ParamId {
        let bound = (6.0 / fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| F::of(rng.gen_range(-bound..bound))).collect();
        self.add(name, Tensor::new([fan_in, fan_out], data).expect("sized"))
    }

    pub fn add_normal(&mut self, name: impl Into<String>, len: usize, std: f64, rng: &mut impl Rng) -> ParamId {
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..len).map(|_| F::of(dist.sample(rng))).collect();
        self.add(name, Tensor::new([len], data).expect("sized"))
    }

    pub fn add_const(&mut self, name: impl Into<String>, len: usize, value: f64) -> ParamId {
        self.add(name, Tensor::new([len], vec![F::of(value); len]).expect("sized"))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    /// Records every parameter as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph<F>) -> Bound {
        Bound(self.tensors.iter().map(|t| g.tensor(t)).collect())
    }

    /// Adds the gradients `g` holds for the bound leaves into each tensor's grad.
    pub fn accumulate(&mut self, g: &Graph<F>, bound: &Bound) -> Result<()> {
        if bound.0.len() != self.tensors.len() {
            return Err(HttError::shape("binding belongs to a different parameter store"));
        }
        for (t, &v) in self.tensors.iter_mut().zip(&bound.0) {
            match g.grad(v) {
                Some(grad) => t.accumulate_grad(grad)?,
                None if t.requires_grad => {
                    let zeros = vec![F::zero(); t.numel()];
                    t.accumulate_grad(&zeros)?
                }
                None => {}
            }
        }
        Ok(())
    }

    /// Flattened gradients of a graph, one vector per parameter (zeros where unreached).
    pub fn collect_grads(&self, g: &Graph<F>, bound: &Bound) -> Vec<Vec<F>> {
        self.tensors
            .iter()
            .zip(&bound.0)
            .map(|(t, &v)| g.grad(v).map(|s| s.to_vec()).unwrap_or_else(|| vec![F::zero(); t.numel()]))
            .collect()
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.zero_grad());
    }
}
