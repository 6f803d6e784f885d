use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::numkit::{adam_update, AdamState, Graph};
use crate::rng;
use crate::synthdata::{CaptionTokens, Image, Sample, SceneSpec, Vocab, NUM_TEMPLATES};

use super::{info_nce_graph, ClipModel};

/// Every spec under every template: the pairs the embedding model learns
/// from. It stands in for a web-scale pre-training corpus, so it is not
/// restricted to the generator's training split.
pub fn clip_corpus(side: usize) -> Result<Vec<Sample>> {
    let vocab = Vocab::new();
    let mut out = Vec::with_capacity(160 * NUM_TEMPLATES);
    for spec in SceneSpec::all() {
        for t in 0..NUM_TEMPLATES {
            out.push(Sample::new(spec, t, side, &vocab)?);
        }
    }
    Ok(out)
}

/// Splits `samples` (in order) into batches of up to `size` items whose
/// specs are pairwise distinct, so no in-batch negative is a true match.
pub fn distinct_batches(samples: &[&Sample], size: usize) -> Vec<Vec<usize>> {
    let mut pending: Vec<usize> = (0..samples.len()).collect();
    let mut out = Vec::new();
    while !pending.is_empty() {
        let mut batch: Vec<usize> = Vec::with_capacity(size);
        let mut rest = Vec::new();
        for i in pending {
            if batch.len() < size && !batch.iter().any(|&j| samples[j].spec == samples[i].spec) {
                batch.push(i);
            } else {
                rest.push(i);
            }
        }
        out.push(batch);
        pending = rest;
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipTrainReport {
    pub losses: Vec<f32>,
    pub steps_run: usize,
}

/// Adam training on symmetric InfoNCE over batches of distinct specs.
/// The model is frozen on return.
pub fn train_clip(model: &mut ClipModel, pairs: &[Sample], seed: u64) -> Result<ClipTrainReport> {
    let bs = model.cfg.batch_size;
    let distinct = pairs
        .iter()
        .map(|s| s.spec)
        .collect::<std::collections::HashSet<_>>()
        .len();
    if distinct < bs {
        return Err(Error::Config(format!(
            "clip batch size {bs} exceeds the {distinct} distinct scenes available"
        )));
    }
    if model.is_frozen() {
        return Err(Error::State("clip model is frozen".into()));
    }
    let mut r = rng::stream(seed, 0xC11F_7EA1);
    let mut opt = AdamState::new(&model.params, model.cfg.lr);
    let refs: Vec<&Sample> = pairs.iter().collect();
    let mut losses = Vec::with_capacity(model.cfg.steps);
    let mut order: Vec<usize> = Vec::new();
    let mut queue: Vec<Vec<usize>> = Vec::new();
    for _ in 0..model.cfg.steps {
        let batch = loop {
            if let Some(b) = queue.pop() {
                if b.len() == bs {
                    break b;
                }
                continue;
            }
            order.clear();
            order.extend(0..refs.len());
            order.shuffle(&mut r);
            let shuffled: Vec<&Sample> = order.iter().map(|&i| refs[i]).collect();
            queue = distinct_batches(&shuffled, bs)
                .into_iter()
                .map(|b| b.into_iter().map(|i| order[i]).collect())
                .rev()
                .collect();
        };
        let imgs: Vec<&Image> = batch.iter().map(|&i| &pairs[i].image).collect();
        let toks: Vec<CaptionTokens> = batch.iter().map(|&i| pairs[i].tokens.clone()).collect();
        let mut g = Graph::<f32>::new();
        let x = g.constant(Image::batch(&imgs)?);
        let ie = model.image_tower(&mut g, &model.params, x)?;
        let te = model.text_tower(&mut g, &model.params, &toks)?;
        let it = model.inv_temperature(&mut g, &model.params);
        let loss = info_nce_graph(&mut g, ie, te, it)?;
        let lv = g.scalar(loss);
        if !lv.is_finite() {
            return Err(Error::Divergence(format!(
                "clip loss became {lv} at step {}",
                losses.len()
            )));
        }
        losses.push(lv);
        g.backward_into(loss, &mut model.params)?;
        adam_update(&mut model.params, &mut opt)?;
    }
    model.params.freeze_all();
    Ok(ClipTrainReport {
        steps_run: losses.len(),
        losses,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetrievalScores {
    pub image_to_text: f64,
    pub text_to_image: f64,
}

/// Fraction of rows of the row-major `n×n` score matrix whose diagonal entry
/// ranks within the top `k`. Ties count against the query when the rival has
/// a lower index.
pub fn top_k_accuracy(sim: &[f64], n: usize, k: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let hits = (0..n)
        .filter(|&i| {
            let s = sim[i * n + i];
            let rank = (0..n)
                .filter(|&j| j != i && (sim[i * n + j] > s || (sim[i * n + j] == s && j < i)))
                .count();
            rank < k
        })
        .count();
    hits as f64 / n as f64
}

/// Top-`k` retrieval between matched lists of images and captions, scored by
/// cosine similarity in both directions.
pub fn retrieval_at_k(
    model: &ClipModel,
    images: &[&Image],
    texts: &[CaptionTokens],
    k: usize,
) -> Result<RetrievalScores> {
    let n = images.len();
    if texts.len() != n {
        return crate::error::dim_err("retrieval needs as many captions as images");
    }
    if k == 0 || k > n {
        return Err(Error::Config(format!(
            "retrieval k={k} with {n} candidates"
        )));
    }
    let ie = model.embed_images(images)?;
    let te = model.embed_texts(texts)?;
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sim[i * n + j] = ie[i].cosine(&te[j])?;
        }
    }
    let mut simt = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            simt[j * n + i] = sim[i * n + j];
        }
    }
    Ok(RetrievalScores {
        image_to_text: top_k_accuracy(&sim, n, k),
        text_to_image: top_k_accuracy(&simt, n, k),
    })
}
