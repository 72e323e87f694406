//! Flattened parameter vectors and their layer layout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamRole {
    Weight,
    Bias,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub layer: usize,
    pub role: ParamRole,
    pub shape: Vec<usize>,
    pub offset: usize,
    /// Fan-in used for Kaiming scaling (weights only).
    pub fan_in: usize,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered `(layer, shape, offset)` map over a flat vector of `total` reals.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    entries: Vec<LayoutEntry>,
    total: usize,
}

impl Layout {
    /// Builds a contiguous layout from `(name, layer, role, shape, fan_in)` tuples.
    pub fn contiguous(items: Vec<(String, usize, ParamRole, Vec<usize>, usize)>) -> Self {
        let mut offset = 0;
        let entries = items
            .into_iter()
            .map(|(name, layer, role, shape, fan_in)| {
                let e = LayoutEntry { name, layer, role, shape, offset, fan_in };
                offset += e.len();
                e
            })
            .collect();
        Layout { entries, total: offset }
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
}

impl ParamVector {
    pub fn new(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::Layout(format!(
                "layout covers {} values, got {}",
                layout.total(),
                values.len()
            )));
        }
        Ok(ParamVector { values, layout })
    }

    pub fn zeros(layout: Layout) -> Self {
        let values = vec![0.0; layout.total()];
        ParamVector { values, layout }
    }

    /// Concatenates per-layer tensors in layout order.
    pub fn flatten(layout: Layout, tensors: &[Tensor<f64>]) -> Result<Self> {
        if tensors.len() != layout.entries().len() {
            return Err(Error::Layout(format!(
                "expected {} tensors, got {}",
                layout.entries().len(),
                tensors.len()
            )));
        }
        let mut values = Vec::with_capacity(layout.total());
        for (entry, t) in layout.entries().iter().zip(tensors) {
            if t.shape() != entry.shape.as_slice() {
                return Err(Error::Layout(format!(
                    "{}: expected shape {:?}, got {:?}",
                    entry.name,
                    entry.shape,
                    t.shape()
                )));
            }
            values.extend_from_slice(t.data());
        }
        ParamVector::new(layout, values)
    }

    /// Splits back into per-layer tensors.
    pub fn unflatten(&self) -> Vec<Tensor<f64>> {
        self.layout
            .entries()
            .iter()
            .map(|e| self.tensor(e))
            .collect()
    }

    pub fn tensor<T: Real>(&self, entry: &LayoutEntry) -> Tensor<T> {
        let data = self.values[entry.range()].iter().map(|&v| T::of(v)).collect();
        Tensor::new(entry.shape.clone(), data).expect("layout entry consistent")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        ParamVector::new(self.layout.clone(), values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
