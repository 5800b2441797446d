//! Row-major feature stores for the two domains.
//!
//! The labeled source set holds winning bids with their observed utility.
//! The unlabeled target set holds every bid opportunity.

use crate::error::{Error, Result};

fn check_matrix(features: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 {
        return Err(Error::invalid("feature dimension must be at least 1"));
    }
    if !features.len().is_multiple_of(dim) {
        return Err(Error::Shape {
            what: "feature matrix",
            expected: dim * (features.len() / dim + 1),
            found: features.len(),
        });
    }
    let n = features.len() / dim;
    if n == 0 {
        return Err(Error::invalid("dataset must contain at least one row"));
    }
    if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: pos / dim,
            message: format!("feature {} is {}", pos % dim, features[pos]),
        });
    }
    Ok(n)
}

/// Labeled source rows `(x_j, u_j)` with `u_j` in `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
}

impl LabeledDataset {
    /// Builds a dataset from a row-major feature buffer.
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        let n = check_matrix(&features, dim)?;
        if labels.len() != n {
            return Err(Error::Shape {
                what: "label vector",
                expected: n,
                found: labels.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&u| u > 1) {
            return Err(Error::invalid(format!("label {bad} is not 0 or 1")));
        }
        Ok(Self {
            dim,
            features,
            labels,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<u8>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut features = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::Shape {
                    what: if i == 0 { "feature row" } else { "feature row (ragged)" },
                    expected: dim,
                    found: r.len(),
                });
            }
            features.extend_from_slice(r);
        }
        Self::new(dim, features, labels)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], u8)> + '_ {
        self.features
            .chunks_exact(self.dim)
            .zip(self.labels.iter().copied())
    }

    /// Drops the labels, keeping the features in order.
    pub fn unlabeled(&self) -> UnlabeledDataset {
        UnlabeledDataset {
            dim: self.dim,
            features: self.features.clone(),
        }
    }
}

/// Unlabeled target rows.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledDataset {
    dim: usize,
    features: Vec<f64>,
}

impl UnlabeledDataset {
    pub fn new(dim: usize, features: Vec<f64>) -> Result<Self> {
        check_matrix(&features, dim)?;
        Ok(Self { dim, features })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut features = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::Shape {
                    what: "feature row (ragged)",
                    expected: dim,
                    found: r.len(),
                });
            }
            features.extend_from_slice(r);
        }
        Self::new(dim, features)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.features.chunks_exact(self.dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_labels_and_ragged_rows() {
        assert!(LabeledDataset::new(1, vec![0.0, 1.0], vec![0, 2]).is_err());
        assert!(LabeledDataset::new(2, vec![0.0, 1.0, 2.0], vec![0]).is_err());
        assert!(LabeledDataset::from_rows(&[vec![1.0], vec![1.0, 2.0]], vec![0, 1]).is_err());
        assert!(UnlabeledDataset::new(1, vec![]).is_err());
        assert!(UnlabeledDataset::new(1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn rows_iterate_in_order() {
        let d = LabeledDataset::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]], vec![1, 0]).unwrap();
        let rows: Vec<_> = d.rows().collect();
        assert_eq!(rows, vec![(&[1.0, 2.0][..], 1), (&[3.0, 4.0][..], 0)]);
        assert_eq!(d.unlabeled().row(1), &[3.0, 4.0]);
    }
}
