//! Embedding arithmetic: cosine scoring, normalization, centroids and
//! two-identity fusion.
//!
//! All arithmetic is `f64`. Sums are accumulated in ascending index order in
//! a single pass so results are bit-stable regardless of caller threading.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are treated as zero.
pub const DEGENERACY_EPS: f64 = 1e-12;

/// A named vector space produced by one encoder or matcher.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmbeddingSpace {
    pub name: String,
    pub dim: usize,
}

impl EmbeddingSpace {
    pub fn new(name: impl Into<String>, dim: usize) -> Result<Self> {
        let name = name.into();
        if dim == 0 {
            return Err(Error::InvalidConfig(format!("space `{name}` has dimension 0")));
        }
        if name.is_empty() || name.chars().any(|c| c.is_whitespace()) {
            return Err(Error::InvalidConfig(format!("invalid space name `{name}`")));
        }
        Ok(Self { name, dim })
    }
}

impl fmt::Display for EmbeddingSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.name, self.dim)
    }
}

/// A finite real vector tagged with the space it lives in.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    space: Arc<str>,
    values: Vec<f64>,
}

impl Embedding {
    pub fn new(space: &EmbeddingSpace, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.dim {
            return Err(Error::DimensionMismatch { expected: space.dim, found: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(space.name.clone()));
        }
        Ok(Self { space: Arc::from(space.name.as_str()), values })
    }

    /// Builds an embedding that shares the space tag of `like`.
    fn with_values_of(like: &Embedding, values: Vec<f64>) -> Self {
        Self { space: Arc::clone(&like.space), values }
    }

    pub fn space_name(&self) -> &str {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc + v * v).sqrt()
    }

    fn check_same_space(&self, other: &Embedding) -> Result<()> {
        if self.space != other.space || self.values.len() != other.values.len() {
            return Err(Error::SpaceMismatch { left: self.space.to_string(), right: other.space.to_string() });
        }
        Ok(())
    }
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    a.check_same_space(b)?;
    cosine_slices(&a.values, &b.values)
}

/// Cosine similarity on raw slices of equal length.
pub fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    debug_assert_eq!(a.len(), b.len());
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < DEGENERACY_EPS {
        return Err(Error::DegenerateVector { norm: na });
    }
    if nb < DEGENERACY_EPS {
        return Err(Error::DegenerateVector { norm: nb });
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Result of fusing two identities.
#[derive(Debug, Clone, PartialEq)]
pub struct Fusion {
    pub embedding: Embedding,
    /// Set when the parents (nearly) cancel, e.g. antipodal unit vectors.
    pub degenerate: bool,
}

/// Element-wise mean of two embeddings, `(a + b) / 2`.
///
/// Computed as `0.5 * (a_i + b_i)`, which is bit-exactly commutative.
pub fn morph_average(a: &Embedding, b: &Embedding) -> Result<Fusion> {
    a.check_same_space(b)?;
    let values: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| 0.5 * (x + y)).collect();
    let embedding = Embedding::with_values_of(a, values);
    let degenerate = embedding.norm() < DEGENERACY_EPS;
    Ok(Fusion { embedding, degenerate })
}

pub fn normalize(a: &Embedding) -> Result<Embedding> {
    let values = normalized(&a.values)?;
    Ok(Embedding::with_values_of(a, values))
}

pub(crate) fn normalized(values: &[f64]) -> Result<Vec<f64>> {
    let norm = values.iter().fold(0.0, |acc, v| acc + v * v).sqrt();
    if norm < DEGENERACY_EPS {
        return Err(Error::DegenerateVector { norm });
    }
    Ok(values.iter().map(|v| v / norm).collect())
}

/// Element-wise mean of a nonempty set of embeddings in one space.
pub fn centroid<'a, I>(embs: I) -> Result<Embedding>
where
    I: IntoIterator<Item = &'a Embedding>,
{
    let mut iter = embs.into_iter();
    let first = iter.next().ok_or(Error::EmptyInput("centroid of zero embeddings"))?;
    let mut sum = first.values.clone();
    let mut count = 1usize;
    for e in iter {
        first.check_same_space(e)?;
        for (s, v) in sum.iter_mut().zip(&e.values) {
            *s += v;
        }
        count += 1;
    }
    let n = count as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(Embedding::with_values_of(first, sum))
}
