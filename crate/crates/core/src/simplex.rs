//! Points of the probability simplex.

use alloc::vec::Vec;

use crate::{Error, Result};

/// Tolerance on the entry sum of a [`SimplexVector`].
pub const SUM_TOLERANCE: f64 = 1e-9;

/// A probability vector over `K` classes: a softmax output or a local
/// knowledge vector.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("simplex vector"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::domain("simplex entries must be finite and non-negative"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::domain("simplex entries must sum to one"));
        }
        Ok(SimplexVector(probs))
    }

    /// The vector `(1/K, ..., 1/K)`.
    pub fn uniform(k: usize) -> Self {
        SimplexVector(alloc::vec![1.0 / k as f64; k])
    }

    /// The `index`-th vertex `e_index`.
    pub fn vertex(k: usize, index: usize) -> Self {
        let mut v = alloc::vec![0.0; k];
        v[index] = 1.0;
        SimplexVector(v)
    }

    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        SimplexVector(probs)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn distance(&self, other: &SimplexVector) -> f64 {
        euclidean(&self.0, &other.0)
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Per-class knowledge of one device; `None` where the device holds no
/// sample of the class.
pub type LocalKnowledge = Vec<Option<SimplexVector>>;

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rejects_off_simplex() {
        assert!(SimplexVector::new(vec![0.5, 0.6]).is_err());
        assert!(SimplexVector::new(vec![-0.1, 1.1]).is_err());
        assert!(SimplexVector::new(vec![]).is_err());
        assert!(SimplexVector::new(vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(SimplexVector::uniform(4).argmax(), 0);
        assert_eq!(SimplexVector::new(vec![0.2, 0.4, 0.4]).unwrap().argmax(), 1);
    }

    #[test]
    fn vertices_are_sqrt2_apart() {
        let d = SimplexVector::vertex(5, 0).distance(&SimplexVector::vertex(5, 3));
        assert_eq!(d, core::f64::consts::SQRT_2);
    }
}
