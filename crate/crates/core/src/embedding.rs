//! Unit-norm embedding vectors and the cosine geometry used by every
//! other module.
//!
//! All stored embeddings are unit length, so cosine similarity is a dot
//! product. Gradients are taken with respect to the *raw* (pre-normalization)
//! vector so callers can chain them through a normalization step.

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};

/// Maximum deviation from unit norm accepted for an [`Embedding`].
pub const NORM_TOLERANCE: f64 = 1e-9;
/// Relative error bound used by every finite-difference gradient check.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-5;
/// Step used by central finite differences in gradient checks.
pub const FINITE_DIFF_STEP: f64 = 1e-6;
/// Norms below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

/// A point on the unit sphere in `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `v` onto the unit sphere.
    pub fn normalize(v: &[f64]) -> Result<Self> {
        let n = norm(v);
        if n < ZERO_NORM {
            return Err(Error::ZeroVector);
        }
        Ok(Embedding(v.iter().map(|x| x / n).collect()))
    }

    /// Wraps a vector that is already unit length, without rescaling.
    pub fn from_unit(v: Vec<f64>) -> Result<Self> {
        let n = norm(&v);
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidConfig(format!(
                "embedding norm {n} is not 1 within {NORM_TOLERANCE}"
            )));
        }
        Ok(Embedding(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Cosine similarity, i.e. the dot product of two unit vectors.
    pub fn cosine(&self, other: &Embedding) -> Result<f64> {
        check_dims(self.dim(), other.dim())?;
        Ok(dot(&self.0, &other.0))
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn normalize(v: &[f64]) -> Result<Embedding> {
    Embedding::normalize(v)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Cosine dissimilarity `1 - a·b` of two unit vectors, in `[0, 2]`.
pub fn dissimilarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    Ok(1.0 - a.cosine(b)?)
}

/// Gradient with respect to raw `a` of `1 - a·b / (|a| |b|)`.
///
/// `a` need not be unit length; `b` is treated as a constant.
pub fn dissimilarity_grad(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_dims(a.len(), b.len())?;
    let na = norm(a);
    let nb = norm(b);
    if na < ZERO_NORM || nb < ZERO_NORM {
        return Err(Error::ZeroVector);
    }
    let cos = dot(a, b) / (na * nb);
    // d cos / da = b / (|a||b|) - cos * a / |a|^2
    Ok(a
        .iter()
        .zip(b)
        .map(|(ai, bi)| -(bi / (na * nb) - cos * ai / (na * na)))
        .collect())
}
