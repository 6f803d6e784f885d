//! Stage-one image tokenizer: conv encoder, codebook, conv decoder, nearest
//! neighbour quantization with straight-through gradients, and an optional
//! patch discriminator.

mod disc;
mod model;
mod stream;
mod train;

pub use disc::Discriminator;
pub use model::{
    vq_loss_terms, VqAnchor, VqCodec, VqConfig, VqForward, VqLossVars, FULL_SCALE_DIM_Z,
    FULL_SCALE_F, FULL_SCALE_GAN_WARMUP, FULL_SCALE_K, FULL_SCALE_VQ_LR,
};
pub use stream::{read_token_stream, write_token_stream, TokenStream};
pub use train::{train_vq, VqTrainReport, VqTrainer};

use crate::error::{Error, Result};
use crate::numkit::Real;

/// Row-major grid of codebook indices for one image.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub h: usize,
    pub w: usize,
    pub ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(h: usize, w: usize, ids: Vec<usize>) -> Result<Self> {
        if ids.len() != h * w {
            return crate::error::dim_err(format!("{} tokens for a {h}×{w} grid", ids.len()));
        }
        Ok(Self { h, w, ids })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Continuous latent map of one image, channel-major (`dim_z×h×w`).
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGrid {
    pub dim_z: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl LatentGrid {
    /// Cell vectors as rows (`h·w × dim_z`).
    pub fn rows(&self) -> Vec<f32> {
        let hw = self.h * self.w;
        let mut out = vec![0.0; self.data.len()];
        for c in 0..self.dim_z {
            for p in 0..hw {
                out[p * self.dim_z + c] = self.data[c * hw + p];
            }
        }
        out
    }

    pub fn from_rows(rows: &[f32], dim_z: usize, h: usize, w: usize) -> Self {
        let hw = h * w;
        let mut data = vec![0.0; rows.len()];
        for p in 0..hw {
            for c in 0..dim_z {
                data[c * hw + p] = rows[p * dim_z + c];
            }
        }
        Self { dim_z, h, w, data }
    }
}

/// Scalar components of the stage-one objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VqLoss {
    pub recon: f32,
    pub codebook: f32,
    pub commitment: f32,
    pub adversarial: f32,
    pub total: f32,
}

/// Index of the nearest codebook row (squared Euclidean distance in `f64`,
/// ties to the lowest index) for each `dim`-wide row of `rows`.
pub fn nearest_codes<T: Real>(rows: &[T], codebook: &[T], dim: usize) -> Vec<usize> {
    let k = codebook.len() / dim;
    rows.chunks(dim)
        .map(|z| {
            let mut best = (0usize, f64::INFINITY);
            for j in 0..k {
                let c = &codebook[j * dim..(j + 1) * dim];
                let d: f64 = z
                    .iter()
                    .zip(c)
                    .map(|(&a, &b)| {
                        let t = a.as_f64() - b.as_f64();
                        t * t
                    })
                    .sum();
                if d < best.1 {
                    best = (j, d);
                }
            }
            best.0
        })
        .collect()
}

/// Quantizes a latent grid against a `K×dim_z` codebook.
pub fn quantize(grid: &LatentGrid, codebook: &[f32]) -> Result<(TokenSequence, LatentGrid)> {
    if grid.dim_z == 0 || codebook.len() % grid.dim_z != 0 || codebook.is_empty() {
        return crate::error::dim_err(format!(
            "codebook of {} values does not hold rows of width {}",
            codebook.len(),
            grid.dim_z
        ));
    }
    let rows = grid.rows();
    let ids = nearest_codes(&rows, codebook, grid.dim_z);
    let mut q = Vec::with_capacity(rows.len());
    for &i in &ids {
        q.extend_from_slice(&codebook[i * grid.dim_z..(i + 1) * grid.dim_z]);
    }
    Ok((
        TokenSequence::new(grid.h, grid.w, ids)?,
        LatentGrid::from_rows(&q, grid.dim_z, grid.h, grid.w),
    ))
}

/// Code usage summary.
#[derive(Clone, Debug, PartialEq)]
pub struct CodebookStats {
    pub histogram: Vec<u64>,
    /// `exp` of the entropy of the empirical code distribution.
    pub perplexity: f64,
}

pub fn codebook_stats(seqs: &[TokenSequence], k: usize) -> Result<CodebookStats> {
    if seqs.is_empty() {
        return Err(Error::Config(
            "codebook statistics need at least one sequence".into(),
        ));
    }
    let mut histogram = vec![0u64; k];
    for s in seqs {
        for &t in &s.ids {
            *histogram
                .get_mut(t)
                .ok_or_else(|| Error::Token(format!("token {t} outside codebook of {k}")))? += 1;
        }
    }
    let total: u64 = histogram.iter().sum();
    let entropy: f64 = histogram
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum();
    Ok(CodebookStats {
        histogram,
        perplexity: entropy.exp(),
    })
}
