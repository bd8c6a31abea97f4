//! Retrieval-augmented planning: embed stored chain examples, rank them by
//! cosine similarity to the user's instruction, and append the best N to the
//! planner's system prompt.

mod examples;
mod planner;
mod store;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use examples::{
    assemble_prompt, load_examples, parse_examples, ChainExample, ChainStep, ExampleDbError,
};
pub use planner::{PlannerError, RetrievalPlanner};
pub use store::{build_index, IndexError, VectorStore};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VectorError {
    #[error("vector has no components")]
    Empty,
    #[error("component {0} is not finite")]
    NonFinite(usize),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
}

/// Finite, non-empty real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(components: Vec<f64>) -> Result<Self, VectorError> {
        if components.is_empty() {
            return Err(VectorError::Empty);
        }
        if let Some(i) = components.iter().position(|c| !c.is_finite()) {
            return Err(VectorError::NonFinite(i));
        }
        Ok(Self(components))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|c| *c == 0.0)
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = VectorError;

    fn try_from(v: Vec<f64>) -> Result<Self, VectorError> {
        Vector::new(v)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

impl fmt::Display for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|c| format!("{c:?}")).collect();
        f.write_str(&parts.join(" "))
    }
}

/// `(a . b) / (|a| |b|)`, clamped to [-1, 1].
pub fn cosine_similarity(a: &Vector, b: &Vector) -> Result<f64, VectorError> {
    if a.dim() != b.dim() {
        return Err(VectorError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(VectorError::ZeroVector);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// One ranked hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredId {
    pub id: String,
    pub score: f64,
}

/// Similarity of `query` to every stored vector, in insertion order.
pub fn score_all_sequential(query: &Vector, store: &VectorStore) -> Result<Vec<f64>, VectorError> {
    store
        .entries()
        .iter()
        .map(|(_, v)| cosine_similarity(query, v))
        .collect()
}

#[cfg(feature = "parallel")]
pub fn score_all_parallel(query: &Vector, store: &VectorStore) -> Result<Vec<f64>, VectorError> {
    use rayon::prelude::*;
    store
        .entries()
        .par_iter()
        .map(|(_, v)| cosine_similarity(query, v))
        .collect()
}

pub fn score_all(query: &Vector, store: &VectorStore) -> Result<Vec<f64>, VectorError> {
    #[cfg(feature = "parallel")]
    {
        score_all_parallel(query, store)
    }
    #[cfg(not(feature = "parallel"))]
    {
        score_all_sequential(query, store)
    }
}

/// The `min(n, T)` most similar entries, best first. Equal scores keep
/// insertion order.
pub fn top_n(query: &Vector, store: &VectorStore, n: usize) -> Result<Vec<ScoredId>, VectorError> {
    if query.dim() != store.dim() {
        return Err(VectorError::DimensionMismatch {
            left: query.dim(),
            right: store.dim(),
        });
    }
    let scores = score_all(query, store)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable sort, so ties stay in ascending insertion index.
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    Ok(order
        .into_iter()
        .take(n)
        .map(|i| ScoredId {
            id: store.entries()[i].0.clone(),
            score: scores[i],
        })
        .collect())
}
