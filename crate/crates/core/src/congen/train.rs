use rand::seq::SliceRandom;

use crate::clipkit::{ClipModel, Embedding};
use crate::error::{Error, Result};
use crate::numkit::{adam_update, AdamState, Graph, ParamStore, Real, Var};
use crate::rng;
use crate::synthdata::Image;
use crate::vqcodec::{TokenSequence, VqCodec};

use super::GenModel;

/// One stage-two training example: the image embedding used as condition
/// and the image's token sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct GenExample {
    pub cond: Embedding,
    pub tokens: TokenSequence,
}

/// Encodes each image with the frozen embedding model and tokenizes it with
/// the frozen codec. No text is involved.
pub fn prepare_examples(
    codec: &VqCodec,
    clip: &ClipModel,
    images: &[&Image],
) -> Result<Vec<GenExample>> {
    ensure_frozen(codec, clip)?;
    let conds = clip.embed_images(images)?;
    let tokens = codec.tokenize_batch(images)?;
    Ok(conds
        .into_iter()
        .zip(tokens)
        .map(|(cond, tokens)| GenExample { cond, tokens })
        .collect())
}

fn ensure_frozen(codec: &VqCodec, clip: &ClipModel) -> Result<()> {
    if !codec.is_frozen() {
        return Err(Error::State("stage two needs a frozen codec".into()));
    }
    if !clip.is_frozen() {
        return Err(Error::State(
            "stage two needs a frozen embedding model".into(),
        ));
    }
    Ok(())
}

/// Mean per-position negative log-likelihood of `tokens` under `logits`.
pub fn sequence_nll<T: Real>(g: &mut Graph<T>, logits: Var, tokens: &[usize]) -> Result<Var> {
    g.softmax_xent(logits, tokens)
}

/// Embedding-reconstruction term on a soft decode: each position's expected
/// codebook vector under `softmax(logits)` is decoded and embedded, and the
/// loss is the mean of `−ln((1 + cos(f(Î), e)) / 2)`. Codec and embedding
/// model enter as constants.
#[allow(clippy::too_many_arguments)]
pub fn clip_guidance_loss<T: Real>(
    g: &mut Graph<T>,
    logits: Var,
    e: Var,
    batch: usize,
    codec: &VqCodec,
    codec_store: &ParamStore<T>,
    clip: &ClipModel,
    clip_store: &ParamStore<T>,
) -> Result<Var> {
    if !codec_store.all_frozen() || !clip_store.all_frozen() {
        return Err(Error::Config(
            "guidance needs a frozen decoder and embedding model".into(),
        ));
    }
    let probs = g.softmax_rows(logits);
    let cb = g.param(codec_store, codec.codebook_id());
    let soft = g.matmul(probs, cb)?;
    let img = codec.decode_rows_graph(g, codec_store, soft, batch)?;
    let f = clip.image_tower(g, clip_store, img)?;
    let prod = g.mul(f, e)?;
    let cos = g.sum_rows(prod)?;
    let half = g.scale(cos, T::of_f64(0.5));
    let sim = g.add_scalar(half, T::of_f64(0.5));
    let sim = g.clamp(sim, T::of_f64(1e-12), T::one());
    let l = g.ln(sim);
    let m = g.mean(l);
    Ok(g.scale(m, -T::one()))
}

/// Graph handles for the stage-two objective.
#[derive(Clone, Copy, Debug)]
pub struct GenLossVars {
    pub nll: Var,
    pub clip_term: Option<Var>,
    pub total: Var,
}

/// Scalar values of the stage-two objective, `total = nll + λ·clip_term`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenLoss {
    pub nll: f64,
    pub clip_term: f64,
    pub total: f64,
    pub lambda: f64,
}

/// Batched inputs in graph-ready layout.
#[derive(Clone, Debug, PartialEq)]
pub struct GenBatch {
    pub size: usize,
    /// `[size × d_c]` row-major conditions.
    pub conds: Vec<f32>,
    /// `size` concatenated sequences.
    pub tokens: Vec<usize>,
}

impl GenBatch {
    pub fn new(examples: &[&GenExample]) -> Result<Self> {
        let Some(first) = examples.first() else {
            return Err(Error::BatchSize(0));
        };
        let (dc, n) = (first.cond.dim(), first.tokens.ids.len());
        let mut conds = Vec::with_capacity(examples.len() * dc);
        let mut tokens = Vec::with_capacity(examples.len() * n);
        for ex in examples {
            if ex.cond.dim() != dc || ex.tokens.ids.len() != n {
                return crate::error::dim_err("examples in a batch must share shapes");
            }
            conds.extend_from_slice(ex.cond.as_slice());
            tokens.extend_from_slice(&ex.tokens.ids);
        }
        Ok(Self {
            size: examples.len(),
            conds,
            tokens,
        })
    }
}

/// Builds `nll + λ·clip_term`. With `λ = 0` the guidance branch is not built
/// at all, so the objective and its gradient are exactly the NLL ones.
#[allow(clippy::too_many_arguments)]
pub fn gen_loss<T: Real>(
    g: &mut Graph<T>,
    model: &GenModel,
    store: &ParamStore<T>,
    batch: &GenBatch,
    lambda: f64,
    codec: &VqCodec,
    codec_store: &ParamStore<T>,
    clip: &ClipModel,
    clip_store: &ParamStore<T>,
) -> Result<GenLossVars> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("λ must be ≥ 0, got {lambda}")));
    }
    let conds = batch.conds.iter().map(|&v| T::of_f64(v as f64)).collect();
    let e = g.constant_data([batch.size, model.cfg.d_c], conds)?;
    let logits = model.predict_graph(g, store, e, &batch.tokens, batch.size)?;
    let nll = sequence_nll(g, logits, &batch.tokens)?;
    if lambda == 0.0 {
        return Ok(GenLossVars {
            nll,
            clip_term: None,
            total: nll,
        });
    }
    let c = clip_guidance_loss(
        g,
        logits,
        e,
        batch.size,
        codec,
        codec_store,
        clip,
        clip_store,
    )?;
    let w = g.scale(c, T::of_f64(lambda));
    let total = g.add(nll, w)?;
    Ok(GenLossVars {
        nll,
        clip_term: Some(c),
        total,
    })
}

/// Adam state and step counter for stage-two training.
pub struct GenTrainer {
    opt: AdamState,
    step: usize,
}

impl GenTrainer {
    pub fn new(model: &GenModel) -> Self {
        Self {
            opt: AdamState::new(&model.params, model.cfg.lr),
            step: 0,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// One Adam step on `nll + λ·clip_term` for a batch of examples.
    pub fn step(
        &mut self,
        model: &mut GenModel,
        codec: &VqCodec,
        clip: &ClipModel,
        batch: &[&GenExample],
    ) -> Result<GenLoss> {
        ensure_frozen(codec, clip)?;
        let lambda = model.cfg.lambda;
        let b = GenBatch::new(batch)?;
        let mut g = Graph::<f32>::new();
        let vars = gen_loss(
            &mut g,
            model,
            &model.params,
            &b,
            lambda,
            codec,
            &codec.params,
            clip,
            &clip.params,
        )?;
        let loss = GenLoss {
            nll: g.scalar(vars.nll) as f64,
            clip_term: vars.clip_term.map_or(0.0, |c| g.scalar(c) as f64),
            total: g.scalar(vars.total) as f64,
            lambda,
        };
        if !loss.total.is_finite() {
            return Err(Error::Divergence(format!(
                "stage-two loss became {} at step {}",
                loss.total, self.step
            )));
        }
        g.backward_into(vars.total, &mut model.params)?;
        adam_update(&mut model.params, &mut self.opt)?;
        self.step += 1;
        Ok(loss)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenTrainReport {
    pub losses: Vec<GenLoss>,
}

/// Runs `model.cfg.steps` steps over shuffled mini-batches, then freezes the
/// model.
pub fn train_gen(
    model: &mut GenModel,
    codec: &VqCodec,
    clip: &ClipModel,
    examples: &[GenExample],
    seed: u64,
) -> Result<GenTrainReport> {
    if examples.is_empty() {
        return Err(Error::Config(
            "stage-two training needs at least one image".into(),
        ));
    }
    if model.params.all_frozen() {
        return Err(Error::State("generator is frozen".into()));
    }
    let mut trainer = GenTrainer::new(model);
    let mut order_rng = rng::stream(seed, 0x6E7A);
    let bs = model.cfg.batch_size.min(examples.len());
    let mut order: Vec<usize> = Vec::new();
    let mut losses = Vec::with_capacity(model.cfg.steps);
    for _ in 0..model.cfg.steps {
        if order.len() < bs {
            let mut fresh: Vec<usize> = (0..examples.len()).collect();
            fresh.shuffle(&mut order_rng);
            order.extend(fresh);
        }
        let batch: Vec<&GenExample> = order.drain(..bs).map(|i| &examples[i]).collect();
        losses.push(trainer.step(model, codec, clip, &batch)?);
    }
    model.params.freeze_all();
    Ok(GenTrainReport { losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clipkit::ClipConfig;
    use crate::congen::GenConfig;
    use crate::synthdata::{render, SceneSpec};
    use crate::vqcodec::VqConfig;

    struct Fixture {
        codec: VqCodec,
        clip: ClipModel,
        gen: GenModel,
        examples: Vec<GenExample>,
    }

    fn fixture(lambda: f64) -> Fixture {
        let mut codec = VqCodec::new(
            VqConfig {
                width: 8,
                k: 16,
                dim_z: 4,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        codec.params.freeze_all();
        let mut clip = ClipModel::new(
            ClipConfig {
                width: 4,
                d_c: 8,
                hidden: 16,
                ..Default::default()
            },
            2,
        )
        .unwrap();
        clip.params.freeze_all();
        let gen = GenModel::new(
            GenConfig {
                k: 16,
                grid: 8,
                d_c: 8,
                d_model: 16,
                layers: 1,
                heads: 2,
                batch_size: 4,
                lambda,
                ..Default::default()
            },
            3,
        )
        .unwrap();
        let images: Vec<Image> = SceneSpec::all()
            .step_by(20)
            .map(|s| render(&s, 32))
            .collect();
        let refs: Vec<&Image> = images.iter().collect();
        let examples = prepare_examples(&codec, &clip, &refs).unwrap();
        Fixture {
            codec,
            clip,
            gen,
            examples,
        }
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let mut g = Graph::<f64>::new();
        let l = g.constant_data([6, 5], vec![0.25; 30]).unwrap();
        let v = sequence_nll(&mut g, l, &[0, 4, 2, 2, 1, 3]).unwrap();
        assert!((g.scalar(v) - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_matches_enumerated_sequence_probability() {
        // Position-wise logits over two tokens for three positions.
        let logits = [0.3, -1.2, 2.0, 0.5, -0.7, -0.1];
        let target = [1usize, 0, 1];
        let p = |i: usize, s: usize| {
            let (a, b) = (logits[2 * i] as f64, logits[2 * i + 1] as f64);
            let z = a.exp() + b.exp();
            if s == 0 {
                a.exp() / z
            } else {
                b.exp() / z
            }
        };
        let mut total = 0.0;
        let mut p_target = 0.0;
        for code in 0..8usize {
            let seq = [(code >> 2) & 1, (code >> 1) & 1, code & 1];
            let prob: f64 = (0..3).map(|i| p(i, seq[i])).product();
            total += prob;
            if seq == target {
                p_target = prob;
            }
        }
        assert!((total - 1.0).abs() < 1e-12);
        let mut g = Graph::<f64>::new();
        let l = g.constant_data([3, 2], logits.to_vec()).unwrap();
        let v = sequence_nll(&mut g, l, &target).unwrap();
        assert!((g.scalar(v) - (-p_target.ln() / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn teacher_forced_nll_equals_stepwise_product() {
        use crate::sampler::TokenModel;
        let f = fixture(0.0);
        let ex = &f.examples[0];
        let b = GenBatch::new(&[ex]).unwrap();
        let mut g = Graph::<f32>::new();
        let vars = gen_loss(
            &mut g,
            &f.gen,
            &f.gen.params,
            &b,
            0.0,
            &f.codec,
            &f.codec.params,
            &f.clip,
            &f.clip.params,
        )
        .unwrap();
        let nll = g.scalar(vars.nll) as f64;
        let ids = &ex.tokens.ids;
        let mut sum = 0.0;
        for i in 0..ids.len() {
            let l = f.gen.next_logits(&ex.cond, &ids[..i]).unwrap();
            let m = l.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v as f64));
            let z: f64 = l.iter().map(|&v| (v as f64 - m).exp()).sum();
            let probs: Vec<f64> = l.iter().map(|&v| (v as f64 - m).exp() / z).collect();
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            sum -= probs[ids[i]].ln();
        }
        assert!((nll - sum / ids.len() as f64).abs() < 1e-6 * sum.abs().max(1.0));
    }

    #[test]
    fn zero_lambda_gradient_is_pure_nll() {
        let f = fixture(0.0);
        let refs: Vec<&GenExample> = f.examples.iter().take(3).collect();
        let b = GenBatch::new(&refs).unwrap();
        let grads = |lambda: f64| {
            let mut store = f.gen.params.clone();
            let mut g = Graph::<f32>::new();
            let loss = if lambda < 0.0 {
                let e = g.constant_data([b.size, 8], b.conds.clone()).unwrap();
                let l = f
                    .gen
                    .predict_graph(&mut g, &f.gen.params, e, &b.tokens, b.size)
                    .unwrap();
                sequence_nll(&mut g, l, &b.tokens).unwrap()
            } else {
                gen_loss(
                    &mut g,
                    &f.gen,
                    &f.gen.params,
                    &b,
                    lambda,
                    &f.codec,
                    &f.codec.params,
                    &f.clip,
                    &f.clip.params,
                )
                .unwrap()
                .total
            };
            g.backward_into(loss, &mut store).unwrap();
            store
                .ids()
                .map(|id| store.get(id).grad().unwrap().to_vec())
                .collect::<Vec<_>>()
        };
        assert_eq!(grads(0.0), grads(-1.0));
        assert_ne!(grads(0.2), grads(-1.0));
    }

    #[test]
    fn one_hot_soft_decode_matches_hard_decode() {
        let f = fixture(0.2);
        let ex = &f.examples[1];
        let k = 16;
        let mut logits = vec![f32::NEG_INFINITY; ex.tokens.ids.len() * k];
        for (i, &t) in ex.tokens.ids.iter().enumerate() {
            logits[i * k + t] = 0.0;
        }
        let mut g = Graph::<f32>::new();
        let l = g.constant_data([ex.tokens.ids.len(), k], logits).unwrap();
        let e = g
            .constant_data([1, 8], ex.cond.as_slice().to_vec())
            .unwrap();
        let c = clip_guidance_loss(
            &mut g,
            l,
            e,
            1,
            &f.codec,
            &f.codec.params,
            &f.clip,
            &f.clip.params,
        )
        .unwrap();
        let hard = f.codec.decode(&ex.tokens).unwrap();
        let cos = f
            .clip
            .encode_image(&hard)
            .unwrap()
            .cosine(&ex.cond)
            .unwrap();
        let want = -((1.0 + cos) / 2.0).ln();
        assert!(
            (g.scalar(c) as f64 - want).abs() < 1e-5,
            "{} vs {want}",
            g.scalar(c)
        );
    }

    #[test]
    fn guidance_rejects_trainable_decoder() {
        let mut f = fixture(0.2);
        f.codec.params.set_frozen(f.codec.codebook_id(), false);
        let mut g = Graph::<f32>::new();
        let l = g.constant_data([64, 16], vec![0.0; 64 * 16]).unwrap();
        let e = g.constant_data([1, 8], vec![0.0; 8]).unwrap();
        let r = clip_guidance_loss(
            &mut g,
            l,
            e,
            1,
            &f.codec,
            &f.codec.params,
            &f.clip,
            &f.clip.params,
        );
        assert!(matches!(r, Err(Error::Config(_))));
        let mut gen = f.gen.clone();
        assert!(matches!(
            train_gen(&mut gen, &f.codec, &f.clip, &f.examples, 0),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn training_leaves_codec_and_clip_untouched() {
        let mut f = fixture(0.2);
        f.gen.cfg.steps = 5;
        let (codec0, clip0) = (f.codec.params.clone(), f.clip.params.clone());
        let rep = train_gen(&mut f.gen, &f.codec, &f.clip, &f.examples, 0).unwrap();
        assert_eq!(rep.losses.len(), 5);
        assert!(rep
            .losses
            .iter()
            .all(|l| l.clip_term > 0.0 && l.total.is_finite()));
        assert!(f.codec.params.bit_identical(&codec0));
        assert!(f.clip.params.bit_identical(&clip0));
        assert!(f.gen.params.all_frozen());
    }

    #[test]
    fn short_run_lowers_nll_and_condition_reaches_every_position() {
        let mut f = fixture(0.2);
        f.gen.cfg.steps = 300;
        let rep = train_gen(&mut f.gen, &f.codec, &f.clip, &f.examples, 7).unwrap();
        let first = rep.losses[0].nll;
        let last = rep.losses.last().unwrap().nll;
        assert!(last < first, "{last} !< {first}");

        let (a, b) = (&f.examples[0], &f.examples[3]);
        let k = f.gen.cfg.k;
        let la = f.gen.forward_logits(&a.cond, &a.tokens.ids).unwrap();
        let lb = f.gen.forward_logits(&b.cond, &a.tokens.ids).unwrap();
        for i in 0..f.gen.cfg.seq_len() {
            assert_ne!(
                &la[i * k..(i + 1) * k],
                &lb[i * k..(i + 1) * k],
                "position {i}"
            );
        }
    }
}
