use std::fmt::Write as _;

use crate::clipkit::ClipModel;
use crate::error::{dim_err, Error, Result};
use crate::synthdata::{CaptionTokens, Image};

/// `10·log10(1/MSE)` for images in `[0, 1]`, capped at 100 dB.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if a.side() != b.side() {
        return dim_err(format!(
            "psnr of {0}×{0} and {1}×{1} images",
            a.side(),
            b.side()
        ));
    }
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / n;
    Ok(if mse < 1e-10 {
        100.0
    } else {
        (10.0 * (1.0 / mse).log10()).min(100.0)
    })
}

/// Cosine between an image's embedding and a caption's embedding.
pub fn clip_score(clip: &ClipModel, image: &Image, text: &CaptionTokens) -> Result<f64> {
    clip.encode_image(image)?.cosine(&clip.encode_text(text)?)
}

/// Evaluation summary. Rates lie in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    /// Mean reconstruction PSNR over validation images.
    pub psnr_mean: f64,
    /// Perplexity of codes used by validation images.
    pub codebook_perplexity: f64,
    /// Mean of image→text and text→image top-1 accuracy over 32-candidate
    /// batches of training pairs.
    pub retrieval_top1: f64,
    /// Mean score of generated images against their own prompts.
    pub clip_score_mean: f64,
    /// Mean score of generated images against another caption's prompt.
    pub clip_score_shuffled: f64,
    /// Held-out captions whose color and shape the oracle recovers from at
    /// least one seed's image.
    pub oracle_match_rate: f64,
    /// Per-attribute agreement over every generated image.
    pub oracle_color_rate: f64,
    pub oracle_shape_rate: f64,
    pub oracle_size_rate: f64,
    pub oracle_position_rate: f64,
    /// Validation images whose image-conditioned variation keeps the color
    /// for at least one seed.
    pub variation_color_rate: f64,
}

impl MetricsReport {
    /// Report keys in file order.
    pub const KEYS: [&'static str; 12] = [
        "psnr_mean",
        "codebook_perplexity",
        "retrieval_top1",
        "clip_score_mean",
        "clip_score_shuffled",
        "clip_score_gap",
        "oracle_match_rate",
        "oracle_color_rate",
        "oracle_shape_rate",
        "oracle_size_rate",
        "oracle_position_rate",
        "variation_color_rate",
    ];

    pub fn clip_score_gap(&self) -> f64 {
        self.clip_score_mean - self.clip_score_shuffled
    }

    fn values(&self) -> [f64; 12] {
        [
            self.psnr_mean,
            self.codebook_perplexity,
            self.retrieval_top1,
            self.clip_score_mean,
            self.clip_score_shuffled,
            self.clip_score_gap(),
            self.oracle_match_rate,
            self.oracle_color_rate,
            self.oracle_shape_rate,
            self.oracle_size_rate,
            self.oracle_position_rate,
            self.variation_color_rate,
        ]
    }

    /// `key = value` lines with six decimals.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in Self::KEYS.iter().zip(self.values()) {
            let _ = writeln!(s, "{k} = {v:.6}");
        }
        s
    }

    /// Parses [`MetricsReport::to_text`] output; every key must be present.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut vals = [f64::NAN; 12];
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad report line `{line}`")))?;
            let i = Self::KEYS
                .iter()
                .position(|&key| key == k.trim())
                .ok_or_else(|| Error::Format(format!("unknown report key `{}`", k.trim())))?;
            vals[i] = v
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad report value `{}`", v.trim())))?;
        }
        if let Some(i) = vals.iter().position(|v| v.is_nan()) {
            return Err(Error::Format(format!("report lacks `{}`", Self::KEYS[i])));
        }
        Ok(Self {
            psnr_mean: vals[0],
            codebook_perplexity: vals[1],
            retrieval_top1: vals[2],
            clip_score_mean: vals[3],
            clip_score_shuffled: vals[4],
            oracle_match_rate: vals[6],
            oracle_color_rate: vals[7],
            oracle_shape_rate: vals[8],
            oracle_size_rate: vals[9],
            oracle_position_rate: vals[10],
            variation_color_rate: vals[11],
        })
    }
}
