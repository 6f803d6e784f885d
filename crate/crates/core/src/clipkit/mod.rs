//! Surrogate joint text-image embedding model: a small convolutional image
//! tower and a bag-of-embeddings text tower trained with symmetric InfoNCE.

mod loss;
mod model;
mod train;

pub use loss::{info_nce, info_nce_from_similarity, info_nce_graph};
pub use model::{ClipConfig, ClipModel};
pub use train::{
    clip_corpus, distinct_batches, retrieval_at_k, top_k_accuracy, train_clip, ClipTrainReport,
    RetrievalScores,
};

use crate::error::{dim_err, Result};

/// Unit-norm vector in the shared text-image space.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    /// Normalises `v` to unit length.
    pub fn new(v: Vec<f32>) -> Result<Self> {
        let n = v
            .iter()
            .map(|&x| (x as f64) * (x as f64))
            .sum::<f64>()
            .sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(crate::Error::Numeric(
                "cannot normalise a zero or non-finite vector".into(),
            ));
        }
        Ok(Self(v.into_iter().map(|x| (x as f64 / n) as f32).collect()))
    }

    /// Wraps a vector that is already unit length.
    pub(crate) fn from_unit(v: Vec<f32>) -> Self {
        Self(v)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&x| (x as f64) * (x as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn cosine(&self, other: &Embedding) -> Result<f64> {
        if self.dim() != other.dim() {
            return dim_err(format!(
                "embedding dims {} and {} differ",
                self.dim(),
                other.dim()
            ));
        }
        let dot: f64 = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        Ok((dot / (self.norm() * other.norm())).clamp(-1.0, 1.0))
    }
}
