use crate::autodiff::Tensor;
use crate::data::{EmbeddingSet, PairedSet};

use super::TrainError;

/// In-memory training data: one or two aligned input matrices plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub a: Tensor<f32>,
    pub b: Option<Tensor<f32>>,
}

fn matrix<'a>(rows: impl Iterator<Item = &'a [f32]>, n: usize, dim: usize) -> Result<Tensor<f32>, TrainError> {
    let mut data = Vec::with_capacity(n * dim);
    for r in rows {
        data.extend_from_slice(r);
    }
    Ok(Tensor::new(vec![n, dim], data)?)
}

impl Dataset {
    /// Single-representation dataset, in storage order.
    pub fn single(set: &EmbeddingSet) -> Result<Self, TrainError> {
        if set.is_empty() {
            return Err(TrainError::EmptySplit("dataset"));
        }
        Ok(Self {
            ids: set.ids(),
            labels: set.labels(),
            class_names: set.class_names.clone(),
            a: matrix(set.samples.iter().map(|s| s.vector.as_slice()), set.len(), set.dim)?,
            b: None,
        })
    }

    /// Two-representation dataset, in sample-id order.
    pub fn paired(p: &PairedSet<'_>) -> Result<Self, TrainError> {
        if p.is_empty() {
            return Err(TrainError::EmptySplit("dataset"));
        }
        let n = p.len();
        Ok(Self {
            ids: p.iter().map(|(id, ..)| id.to_string()).collect(),
            labels: p.iter().map(|(.., l)| l).collect(),
            class_names: p.a.class_names.clone(),
            a: matrix(p.iter().map(|(_, va, _, _)| va), n, p.a.dim)?,
            b: Some(matrix(p.iter().map(|(_, _, vb, _)| vb), n, p.b.dim)?),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn input_dims(&self) -> Vec<usize> {
        std::iter::once(&self.a)
            .chain(self.b.as_ref())
            .map(|t| t.shape()[1])
            .collect()
    }

    /// Rows `idx` (in that order) as inputs and labels.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor<f32>, Option<Tensor<f32>>, Vec<usize>), TrainError> {
        let a = self.a.select_rows(idx)?;
        let b = self.b.as_ref().map(|b| b.select_rows(idx)).transpose()?;
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Ok((a, b, labels))
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self, TrainError> {
        if idx.is_empty() {
            return Err(TrainError::EmptySplit("subset"));
        }
        let (a, b, labels) = self.batch(idx)?;
        Ok(Self {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            labels,
            class_names: self.class_names.clone(),
            a,
            b,
        })
    }
}
