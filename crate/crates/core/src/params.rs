//! Named parameter arrays with pure functional updates.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::DimensionMismatch(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor { shape: vec![1], data: vec![x] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Parameters `θ` (or adapted `φ`) keyed by name. Iteration order is by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    /// Values of `name`, or a dimension error naming the missing parameter.
    pub fn values(&self, name: &str) -> Result<&[f64]> {
        self.tensors
            .get(name)
            .map(|t| t.data.as_slice())
            .ok_or_else(|| Error::DimensionMismatch(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let tensors = self
            .tensors
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape.clone())))
            .collect();
        ParamSet { tensors }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// Same names and shapes as `other`.
    pub fn check_compatible(&self, other: &ParamSet) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters vs {}",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for ((a, ta), (b, tb)) in self.tensors.iter().zip(&other.tensors) {
            if a != b || ta.shape != tb.shape {
                return Err(Error::DimensionMismatch(format!(
                    "`{a}` {:?} vs `{b}` {:?}",
                    ta.shape, tb.shape
                )));
            }
        }
        Ok(())
    }

    /// `self += k * other`.
    pub fn axpy(&mut self, k: f64, other: &ParamSet) -> Result<()> {
        self.check_compatible(other)?;
        for (t, o) in self.tensors.values_mut().zip(other.tensors.values()) {
            for (x, y) in t.data.iter_mut().zip(&o.data) {
                *x += k * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.tensors.values_mut() {
            for x in &mut t.data {
                *x *= k;
            }
        }
    }

    pub fn dot(&self, other: &ParamSet) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .tensors
            .values()
            .zip(other.tensors.values())
            .map(|(a, b)| a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum::<f64>())
            .sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .values()
            .flat_map(|t| t.data.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Elementwise sum of several compatible sets, accumulated in order.
    pub fn sum<'a>(sets: impl IntoIterator<Item = &'a ParamSet>) -> Result<Option<ParamSet>> {
        let mut acc: Option<ParamSet> = None;
        for s in sets {
            match acc.as_mut() {
                None => acc = Some(s.clone()),
                Some(a) => a.axpy(1.0, s)?,
            }
        }
        Ok(acc)
    }
}

/// `params - lr * grad`, leaving both inputs untouched.
pub fn apply_update(params: &ParamSet, grad: &ParamSet, lr: f64) -> Result<ParamSet> {
    let mut out = params.clone();
    out.axpy(-lr, grad)?;
    Ok(out)
}
