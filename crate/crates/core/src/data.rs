//! Labelled binary-classification samples.

use alloc::vec::Vec;

use rand_core::RngCore;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DataError {
    #[error("sample {index} has {got} features, expected {expected}")]
    Ragged {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("sample {index} has label {label}, expected 0 or 1")]
    BadLabel { index: usize, label: u8 },
    #[error("sample {index} has a non-finite feature")]
    NotFinite { index: usize },
    #[error("{features} feature rows but {labels} labels")]
    CountMismatch { features: usize, labels: usize },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    features: Vec<Vec<f64>>,
    labels: Vec<u8>,
    dim: usize,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self, DataError> {
        Self::with_dim(features, labels, None)
    }

    /// Like [`Dataset::new`] but fixes the feature count, so empty sets keep a shape.
    pub fn with_dim(
        features: Vec<Vec<f64>>,
        labels: Vec<u8>,
        dim: Option<usize>,
    ) -> Result<Self, DataError> {
        if features.len() != labels.len() {
            return Err(DataError::CountMismatch {
                features: features.len(),
                labels: labels.len(),
            });
        }
        let dim = dim.or_else(|| features.first().map(Vec::len)).unwrap_or(0);
        for (index, (row, &label)) in features.iter().zip(&labels).enumerate() {
            if row.len() != dim {
                return Err(DataError::Ragged {
                    index,
                    got: row.len(),
                    expected: dim,
                });
            }
            if label > 1 {
                return Err(DataError::BadLabel { index, label });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(DataError::NotFinite { index });
            }
        }
        Ok(Self {
            features,
            labels,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of features, excluding the bias.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], u8)> {
        self.features
            .iter()
            .map(Vec::as_slice)
            .zip(self.labels.iter().copied())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
        }
    }
}

/// Uniform `f64` in `[0, 1)` with 53 bits of precision.
pub fn unit_f64<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Features uniform in `[0, 1)`, labels drawn from a logistic model with
/// parameters `theta` (bias first).
pub fn synthetic<R: RngCore + ?Sized>(len: usize, theta: &[f64], rng: &mut R) -> Dataset {
    let dim = theta.len().saturating_sub(1);
    let mut features = Vec::with_capacity(len);
    let mut labels = Vec::with_capacity(len);
    for _ in 0..len {
        let row: Vec<f64> = (0..dim).map(|_| unit_f64(rng)).collect();
        let z = theta[0] + row.iter().zip(&theta[1..]).map(|(x, t)| x * t).sum::<f64>();
        let p = crate::logreg::sigmoid(z);
        labels.push(u8::from(unit_f64(rng) < p));
        features.push(row);
    }
    Dataset {
        features,
        labels,
        dim,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn validation() {
        assert!(Dataset::new(vec![vec![0.0, 1.0]], vec![1]).is_ok());
        assert_eq!(
            Dataset::new(vec![vec![0.0], vec![0.0, 1.0]], vec![0, 1]).unwrap_err(),
            DataError::Ragged {
                index: 1,
                got: 2,
                expected: 1
            }
        );
        assert_eq!(
            Dataset::new(vec![vec![0.0]], vec![2]).unwrap_err(),
            DataError::BadLabel { index: 0, label: 2 }
        );
        assert_eq!(
            Dataset::new(vec![vec![f64::NAN]], vec![0]).unwrap_err(),
            DataError::NotFinite { index: 0 }
        );
        let empty = Dataset::with_dim(vec![], vec![], Some(3)).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.dim(), 3);
    }

    #[test]
    fn synthetic_shape() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let d = synthetic(200, &[-1.0, 2.0, 1.0], &mut rng);
        assert_eq!(d.len(), 200);
        assert_eq!(d.dim(), 2);
        let ones = d.labels().iter().filter(|&&y| y == 1).count();
        assert!(ones > 20 && ones < 180);
        assert!(d
            .features()
            .iter()
            .flatten()
            .all(|&x| (0.0..1.0).contains(&x)));
    }
}
