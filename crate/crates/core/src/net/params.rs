use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tape::{NodeId, Tape};
use super::tensor::Tensor;

/// Named, shaped block of trainable values.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> ParamBlock<T> {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> ParamBlock<U> {
        ParamBlock {
            name: self.name.clone(),
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}

/// Ordered parameter blocks of one network.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<T> {
    blocks: Vec<ParamBlock<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { blocks: Vec::new() }
    }

    pub fn from_blocks(blocks: Vec<ParamBlock<T>>) -> Self {
        Self { blocks }
    }

    pub fn blocks(&self) -> &[ParamBlock<T>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ParamBlock<T>] {
        &mut self.blocks
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.len()).collect()
    }

    pub fn total_len(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&ParamBlock<T>> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamBlock<T>> {
        self.blocks.iter_mut().find(|b| b.name == name)
    }

    pub(crate) fn push(&mut self, name: &str, shape: &[usize], data: Vec<T>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.blocks.push(ParamBlock { name: name.to_string(), shape: shape.to_vec(), data });
    }

    /// Fan-in scaled uniform weights, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
    pub(crate) fn push_uniform<R: Rng>(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut R) {
        let bound = (6.0 / fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let data = (0..shape.iter().product::<usize>()).map(|_| T::of(dist.sample(rng))).collect();
        self.push(name, shape, data);
    }

    pub(crate) fn push_zeros(&mut self, name: &str, shape: &[usize]) {
        self.push(name, shape, vec![T::zero(); shape.iter().product()]);
    }

    /// Records every block on `tape`, returning node ids in block order.
    pub(crate) fn record(&self, tape: &mut Tape<T>) -> Result<Vec<NodeId>> {
        self.blocks
            .iter()
            .enumerate()
            .map(|(slot, b)| Ok(tape.param(slot, Tensor::from_vec(&b.shape, b.data.clone())?)))
            .collect()
    }

    /// Checks that `other` has the same block names and shapes.
    pub fn ensure_compatible<U>(&self, other: &ParamSet<U>) -> Result<()> {
        if self.blocks.len() != other.blocks.len() {
            return Err(Error::Invariant(format!(
                "parameter block count {} != {}",
                self.blocks.len(),
                other.blocks.len()
            )));
        }
        for (a, b) in self.blocks.iter().zip(&other.blocks) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::Invariant(format!(
                    "parameter block {}{:?} does not match {}{:?}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet { blocks: self.blocks.iter().map(|b| b.cast()).collect() }
    }
}

/// Per-block parameter gradients, aligned with a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads<T>(pub Vec<Vec<T>>);

impl<T: Scalar> ParamGrads<T> {
    pub fn blocks(&self) -> &[Vec<T>] {
        &self.0
    }

    pub fn scale(&mut self, s: T) {
        for v in self.0.iter_mut().flatten() {
            *v = *v * s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}
