//! Inference-time token sampling and the text→image / image→image paths.

use rand::Rng as _;

use crate::clipkit::{ClipModel, Embedding};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::synthdata::{Image, Vocab};
use crate::vqcodec::{TokenSequence, VqCodec};

/// Full-scale top-k.
pub const FULL_SCALE_TOP_K: usize = 300;

#[derive(Clone, Debug, PartialEq)]
pub struct SampleConfig {
    pub temperature: f64,
    pub k: usize,
    pub p: f64,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            k: 32,
            p: 1.0,
            seed: 0,
        }
    }
}

impl SampleConfig {
    /// Defaults with `k = min(32, vocab)`.
    pub fn for_vocab(vocab: usize) -> Self {
        Self {
            k: 32.min(vocab),
            ..Self::default()
        }
    }

    pub fn validate(&self, vocab: usize) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.k == 0 || self.k > vocab {
            return Err(Error::Config(format!(
                "top-k must be in 1..={vocab}, got {}",
                self.k
            )));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::Config(format!(
                "top-p must be in (0, 1], got {}",
                self.p
            )));
        }
        Ok(())
    }
}

/// Keeps the `k` largest logits (ties broken toward the lower index) and
/// sets the rest to `-inf`.
pub fn filter_top_k(logits: &[f32], k: usize) -> Result<Vec<f32>> {
    if k == 0 || k > logits.len() {
        return Err(Error::Config(format!(
            "top-k must be in 1..={}, got {k}",
            logits.len()
        )));
    }
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    let mut out = vec![f32::NEG_INFINITY; logits.len()];
    for &i in &idx[..k] {
        out[i] = logits[i];
    }
    Ok(out)
}

fn softmax(logits: &[f32]) -> Vec<f64> {
    let m = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    let e: Vec<f64> = logits
        .iter()
        .map(|&l| {
            if l == f32::NEG_INFINITY {
                0.0
            } else {
                (l as f64 - m).exp()
            }
        })
        .collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Keeps the smallest set of most probable tokens whose total probability
/// reaches `p`, including the token that crosses the threshold.
pub fn filter_top_p(logits: &[f32], p: f64) -> Result<Vec<f32>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!("top-p must be in (0, 1], got {p}")));
    }
    let probs = softmax(logits);
    let mut idx: Vec<usize> = (0..logits.len())
        .filter(|&i| logits[i] != f32::NEG_INFINITY)
        .collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut out = vec![f32::NEG_INFINITY; logits.len()];
    if p >= 1.0 {
        for &i in &idx {
            out[i] = logits[i];
        }
        return Ok(out);
    }
    let mut cum = 0.0;
    for &i in &idx {
        out[i] = logits[i];
        cum += probs[i];
        if cum >= p {
            break;
        }
    }
    Ok(out)
}

/// Next-token distribution: temperature, then top-k, then top-p, then
/// renormalisation.
pub fn step_distribution(logits: &[f32], cfg: &SampleConfig) -> Result<Vec<f64>> {
    cfg.validate(logits.len())?;
    let scaled: Vec<f32> = logits
        .iter()
        .map(|&l| (l as f64 / cfg.temperature) as f32)
        .collect();
    let k = filter_top_k(&scaled, cfg.k)?;
    let kp = filter_top_p(&k, cfg.p)?;
    Ok(softmax(&kp))
}

/// Inverse-CDF draw from a normalised distribution.
pub fn draw(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last = i;
            if u < cum {
                return i;
            }
        }
    }
    last
}

/// An autoregressive model over a fixed-length token grid.
pub trait TokenModel {
    fn vocab_size(&self) -> usize;
    /// Grid `(h, w)` of generated sequences.
    fn grid(&self) -> (usize, usize);
    /// Logits for the token following `prefix`.
    fn next_logits(&self, cond: &Embedding, prefix: &[usize]) -> Result<Vec<f32>>;
}

pub fn sample_tokens_with_rng<M: TokenModel + ?Sized>(
    model: &M,
    cond: &Embedding,
    cfg: &SampleConfig,
    rng: &mut Rng,
) -> Result<TokenSequence> {
    cfg.validate(model.vocab_size())?;
    let (h, w) = model.grid();
    let mut ids = Vec::with_capacity(h * w);
    for _ in 0..h * w {
        let logits = model.next_logits(cond, &ids)?;
        let probs = step_distribution(&logits, cfg)?;
        ids.push(draw(&probs, rng));
    }
    TokenSequence::new(h, w, ids)
}

/// Samples `h·w` tokens with a generator seeded from `cfg.seed`.
pub fn sample_tokens<M: TokenModel + ?Sized>(
    model: &M,
    cond: &Embedding,
    cfg: &SampleConfig,
) -> Result<TokenSequence> {
    let mut r = rng::seeded(cfg.seed);
    sample_tokens_with_rng(model, cond, cfg, &mut r)
}

/// Text → embedding → tokens → image.
pub fn text_to_image<M: TokenModel + ?Sized>(
    clip: &ClipModel,
    model: &M,
    codec: &VqCodec,
    vocab: &Vocab,
    text: &str,
    cfg: &SampleConfig,
) -> Result<(Image, TokenSequence)> {
    let tokens = vocab.encode(text)?;
    let e = clip.encode_text(&tokens)?;
    let seq = sample_tokens(model, &e, cfg)?;
    Ok((codec.decode(&seq)?, seq))
}

/// Image → embedding → tokens → image: a semantic variation of the input.
pub fn image_to_image<M: TokenModel + ?Sized>(
    clip: &ClipModel,
    model: &M,
    codec: &VqCodec,
    image: &Image,
    cfg: &SampleConfig,
) -> Result<(Image, TokenSequence)> {
    let e = clip.encode_image(image)?;
    let seq = sample_tokens(model, &e, cfg)?;
    Ok((codec.decode(&seq)?, seq))
}
