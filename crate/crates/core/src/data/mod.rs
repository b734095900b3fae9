//! Paired multi-modal datasets.
//!
//! A [`TupleDataset`] holds tuples of co-registered samples: one feature
//! vector per modality, all sharing a tuple id and one label set. Labels are
//! carried for evaluation only and never reach the training objective.

mod io;
mod split;
mod synth;

pub use io::{load_dataset, parse_dataset, save_dataset, write_dataset, HEADER_TAG};
pub use split::{batch_iter, epoch_rng, split, SplitConfig};
pub use synth::{generate_synthetic, SynthConfig};

use std::collections::{BTreeSet, HashSet};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type LabelSet = BTreeSet<u32>;

/// One sample as stored on disk: a single modality's view of one tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub tuple_id: u64,
    pub modality: usize,
    pub features: Vec<f64>,
    pub labels: LabelSet,
}

/// All modalities' views of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Tuple {
    pub id: u64,
    pub labels: LabelSet,
    /// `views[j]` is the feature vector of modality `j`.
    pub views: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TupleDataset {
    dims: Vec<usize>,
    label_vocabulary: Vec<String>,
    tuples: Vec<Tuple>,
}

impl TupleDataset {
    /// Checks tuple alignment: one finite view of the right width per
    /// modality, unique ids, and label ids inside the vocabulary.
    pub fn new(
        dims: Vec<usize>,
        label_vocabulary: Vec<String>,
        tuples: Vec<Tuple>,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 modalities, got {}",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Validation("feature widths must be positive".into()));
        }
        let mut seen = HashSet::with_capacity(tuples.len());
        for t in &tuples {
            if !seen.insert(t.id) {
                return Err(Error::Validation(format!("duplicate tuple id {}", t.id)));
            }
            if t.views.len() != dims.len() {
                return Err(Error::Validation(format!(
                    "tuple {} has {} views, expected {}",
                    t.id,
                    t.views.len(),
                    dims.len()
                )));
            }
            for (j, (v, d)) in t.views.iter().zip(&dims).enumerate() {
                if v.len() != *d {
                    return Err(Error::Validation(format!(
                        "tuple {} modality {j}: {} features, expected {d}",
                        t.id,
                        v.len()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Validation(format!(
                        "tuple {} modality {j}: non-finite feature",
                        t.id
                    )));
                }
            }
            if let Some(l) = t
                .labels
                .iter()
                .find(|&&l| l as usize >= label_vocabulary.len())
            {
                return Err(Error::Validation(format!(
                    "tuple {}: label {l} outside vocabulary of {}",
                    t.id,
                    label_vocabulary.len()
                )));
            }
        }
        Ok(Self {
            dims,
            label_vocabulary,
            tuples,
        })
    }

    pub fn num_modalities(&self) -> usize {
        self.dims.len()
    }

    /// Feature width of each modality.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn label_vocabulary(&self) -> &[String] {
        &self.label_vocabulary
    }

    pub fn tuples(&self) -> &[Tuple] {
        &self.tuples
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn find(&self, tuple_id: u64) -> Option<&Tuple> {
        self.tuples.iter().find(|t| t.id == tuple_id)
    }

    /// Flattened per-modality records, tuple by tuple.
    pub fn records(&self) -> impl Iterator<Item = SampleRecord> + '_ {
        self.tuples.iter().flat_map(|t| {
            t.views.iter().enumerate().map(|(j, v)| SampleRecord {
                tuple_id: t.id,
                modality: j,
                features: v.clone(),
                labels: t.labels.clone(),
            })
        })
    }

    /// Tuples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            dims: self.dims.clone(),
            label_vocabulary: self.label_vocabulary.clone(),
            tuples: indices.iter().map(|&i| self.tuples[i].clone()).collect(),
        }
    }

    /// `len(indices) x dims[modality]` matrix of one modality's features.
    pub fn modality_matrix(&self, indices: &[usize], modality: usize) -> Result<Tensor> {
        let width = *self
            .dims
            .get(modality)
            .ok_or_else(|| Error::Index(format!("modality {modality} of {}", self.dims.len())))?;
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            let t = self
                .tuples
                .get(i)
                .ok_or_else(|| Error::Index(format!("tuple index {i} of {}", self.len())))?;
            data.extend_from_slice(&t.views[modality]);
        }
        Tensor::matrix(indices.len(), width, data)
    }

    /// Every tuple's features for one modality.
    pub fn full_matrix(&self, modality: usize) -> Result<Tensor> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.modality_matrix(&all, modality)
    }
}

/// Default label names `class_0 .. class_{n-1}`.
pub fn default_vocabulary(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("class_{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tuple(id: u64, labels: &[u32], views: Vec<Vec<f64>>) -> Tuple {
        Tuple {
            id,
            labels: labels.iter().copied().collect(),
            views,
        }
    }

    #[test]
    fn rejects_misaligned_tuples() {
        let vocab = default_vocabulary(3);
        let ok = tuple(0, &[1], vec![vec![0.0, 1.0], vec![2.0]]);
        assert!(TupleDataset::new(vec![2, 1], vocab.clone(), vec![ok.clone()]).is_ok());

        let missing = tuple(1, &[1], vec![vec![0.0, 1.0]]);
        assert!(TupleDataset::new(vec![2, 1], vocab.clone(), vec![missing]).is_err());

        let wide = tuple(1, &[1], vec![vec![0.0, 1.0, 2.0], vec![2.0]]);
        assert!(TupleDataset::new(vec![2, 1], vocab.clone(), vec![wide]).is_err());

        let bad_label = tuple(1, &[7], vec![vec![0.0, 1.0], vec![2.0]]);
        assert!(TupleDataset::new(vec![2, 1], vocab.clone(), vec![bad_label]).is_err());

        let dup = vec![ok.clone(), ok];
        assert!(TupleDataset::new(vec![2, 1], vocab, dup).is_err());
    }

    #[test]
    fn modality_matrix_gathers_rows() {
        let ds = TupleDataset::new(
            vec![2, 1],
            default_vocabulary(2),
            vec![
                tuple(5, &[0], vec![vec![1.0, 2.0], vec![3.0]]),
                tuple(6, &[1], vec![vec![4.0, 5.0], vec![6.0]]),
            ],
        )
        .unwrap();
        let m = ds.modality_matrix(&[1, 0], 0).unwrap();
        assert_eq!(m.shape(), &[2, 2]);
        assert_eq!(m.data(), &[4.0, 5.0, 1.0, 2.0]);
        assert!(ds.modality_matrix(&[0], 2).is_err());
        assert_eq!(ds.records().count(), 4);
    }
}
