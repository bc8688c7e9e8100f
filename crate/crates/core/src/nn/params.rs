use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{Error, Result};

/// A named, shaped parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            data: vec![T::zero(); n],
        }
    }
}

/// Ordered parameter tree. Layers address entries by index; two trees are
/// congruent when names and shapes agree entry by entry.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Params<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>) -> usize {
        self.tensors.push(Tensor::zeros(name, shape));
        self.tensors.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), t.shape.clone()))
                .collect(),
        }
    }

    pub fn check_congruent<U>(&self, other: &Params<U>) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::IncongruentParams(format!(
                "{} tensors vs {}",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::IncongruentParams(format!(
                    "{}{:?} vs {}{:?}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    /// `self += scale·other`.
    pub fn add_scaled(&mut self, other: &Params<T>, scale: T) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        self.tensors
            .iter_mut()
            .flat_map(|t| t.data.iter_mut())
            .for_each(|v| *v *= s);
    }

    pub fn dot(&self, other: &Params<T>) -> T {
        self.tensors
            .iter()
            .zip(&other.tensors)
            .flat_map(|(a, b)| a.data.iter().zip(&b.data).map(|(x, y)| *x * *y))
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Keeps only the tensors whose names satisfy `keep`.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> Self {
        Self {
            tensors: self.tensors.iter().filter(|t| keep(&t.name)).cloned().collect(),
        }
    }
}

/// `θ̄ ← m·θ̄ + (1−m)·θ`, elementwise. Only `momentum` is written; `online`
/// is read-only, so no gradient path into the momentum copy exists.
pub fn momentum_update<T: Scalar>(online: &Params<T>, momentum: &mut Params<T>, m: T) -> Result<()> {
    momentum.check_congruent(online)?;
    if !(m >= T::zero() && m < T::one()) {
        return Err(Error::Config(format!("momentum coefficient {:?} outside [0,1)", m)));
    }
    let keep = T::one() - m;
    for (bar, th) in momentum.tensors.iter_mut().zip(&online.tensors) {
        for (b, t) in bar.data.iter_mut().zip(&th.data) {
            *b = m * *b + keep * *t;
        }
    }
    Ok(())
}
