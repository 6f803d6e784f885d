use std::path::Path;

use crate::clipkit::{
    clip_corpus, distinct_batches, retrieval_at_k, train_clip, ClipModel, ClipTrainReport,
};
use crate::congen::{prepare_examples, train_gen, GenModel, GenTrainReport};
use crate::error::{Error, Result};
use crate::sampler::{image_to_image, sample_tokens, SampleConfig};
use crate::synthdata::{build_splits, oracle, CaptionTokens, Image, Sample, SceneSpec, Splits};
use crate::vqcodec::{codebook_stats, train_vq, TokenSequence, VqCodec, VqTrainReport};

use super::{clip_score, psnr, Checkpoint, MetricsReport, RunConfig, Stage};

/// The three trained models of a run and the data they are trained on.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub config: RunConfig,
    pub splits: Splits,
    pub clip: Option<ClipModel>,
    pub codec: Option<VqCodec>,
    pub gen: Option<GenModel>,
}

fn missing(stage: Stage) -> Error {
    Error::Stage {
        stage: stage.command(),
        detail: "stage has not been run".into(),
    }
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let splits = build_splits(&config.data)?;
        Ok(Self {
            config,
            splits,
            clip: None,
            codec: None,
            gen: None,
        })
    }

    pub fn clip(&self) -> Result<&ClipModel> {
        self.clip.as_ref().ok_or_else(|| missing(Stage::Clip))
    }

    pub fn codec(&self) -> Result<&VqCodec> {
        self.codec.as_ref().ok_or_else(|| missing(Stage::Vq))
    }

    pub fn gen(&self) -> Result<&GenModel> {
        self.gen.as_ref().ok_or_else(|| missing(Stage::Gen))
    }

    /// Stage zero: the joint embedding model, trained on every scene under
    /// every caption template.
    pub fn train_clip(&mut self) -> Result<ClipTrainReport> {
        let mut m = ClipModel::new(self.config.clip.clone(), self.config.stage_seed(0))?;
        let corpus = clip_corpus(self.config.data.side)?;
        let rep = train_clip(&mut m, &corpus, self.config.stage_seed(10))?;
        self.clip = Some(m);
        Ok(rep)
    }

    /// Stage one: the image codec, trained on training images only.
    pub fn train_vq(&mut self) -> Result<VqTrainReport> {
        let mut m = VqCodec::new(self.config.vq.clone(), self.config.stage_seed(1))?;
        let images: Vec<&Image> = self.splits.train.iter().map(|s| &s.image).collect();
        let rep = train_vq(&mut m, &images, self.config.stage_seed(11))?;
        self.codec = Some(m);
        Ok(rep)
    }

    /// Stage two: the generator, trained on training images and their
    /// embeddings with codec and embedding model frozen. Captions are never
    /// read.
    pub fn train_gen(&mut self) -> Result<GenTrainReport> {
        let codec = self.codec()?;
        let clip = self.clip()?;
        let images: Vec<&Image> = self.splits.train.iter().map(|s| &s.image).collect();
        let examples = prepare_examples(codec, clip, &images)?;
        let mut m = GenModel::new(self.config.gen.clone(), self.config.stage_seed(2))?;
        let rep = train_gen(&mut m, codec, clip, &examples, self.config.stage_seed(12))?;
        self.gen = Some(m);
        Ok(rep)
    }

    pub fn checkpoint(&self, stage: Stage) -> Result<Checkpoint> {
        let params = match stage {
            Stage::Clip => &self.clip()?.params,
            Stage::Vq => &self.codec()?.params,
            Stage::Gen => &self.gen()?.params,
        };
        Ok(Checkpoint {
            stage,
            config: self.config.clone(),
            params: params.clone(),
        })
    }

    /// Installs a loaded checkpoint, rebuilding the model under the
    /// architecture recorded in it.
    /// Installs a trained stage and adopts the config section it was trained
    /// with, so later stages are shaped to match.
    pub fn install(&mut self, ckpt: &Checkpoint) -> Result<()> {
        match ckpt.stage {
            Stage::Clip => self.config.clip = ckpt.config.clip.clone(),
            Stage::Vq => self.config.vq = ckpt.config.vq.clone(),
            Stage::Gen => self.config.gen = ckpt.config.gen.clone(),
        }
        if ckpt.stage != Stage::Gen {
            self.config.data.side = ckpt.config.data.side;
        }
        self.config.resolve();
        match ckpt.stage {
            Stage::Clip => {
                let mut m = ClipModel::from_params(ckpt.config.clip.clone(), &ckpt.params)?;
                m.params.freeze_all();
                self.clip = Some(m);
            }
            Stage::Vq => {
                let mut m = VqCodec::from_params(ckpt.config.vq.clone(), &ckpt.params)?;
                m.params.freeze_all();
                self.codec = Some(m);
            }
            Stage::Gen => {
                let mut m = GenModel::from_params(ckpt.config.gen.clone(), &ckpt.params)?;
                m.params.freeze_all();
                self.gen = Some(m);
            }
        }
        Ok(())
    }

    pub fn save_stage(&self, dir: &Path, stage: Stage) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.checkpoint(stage)?.save(&dir.join(stage.file_name()))
    }

    /// Loads the checkpoints of `stages` from a run directory.
    pub fn load_stages(&mut self, dir: &Path, stages: &[Stage]) -> Result<()> {
        for &s in stages {
            let c = Checkpoint::load_stage(dir, s)?;
            self.install(&c)?;
        }
        Ok(())
    }

    fn text_condition(&self, text: &CaptionTokens) -> Result<crate::clipkit::Embedding> {
        self.clip()?.encode_text(text)
    }

    /// Text → image with the run's sampling settings and `seed`.
    pub fn generate(&self, text: &CaptionTokens, seed: u64) -> Result<(Image, TokenSequence)> {
        let cfg = SampleConfig {
            seed,
            ..self.config.sample.clone()
        };
        let e = self.text_condition(text)?;
        let seq = sample_tokens(self.gen()?, &e, &cfg)?;
        Ok((self.codec()?.decode(&seq)?, seq))
    }

    /// Image → image variation with the run's sampling settings and `seed`.
    pub fn vary(&self, image: &Image, seed: u64) -> Result<(Image, TokenSequence)> {
        let cfg = SampleConfig {
            seed,
            ..self.config.sample.clone()
        };
        image_to_image(self.clip()?, self.gen()?, self.codec()?, image, &cfg)
    }

    /// Held-out prompts scored by [`Pipeline::evaluate`]: the leading
    /// validation samples, which cover distinct scenes.
    pub fn eval_prompts(&self) -> &[Sample] {
        let n = self.config.eval.captions.min(self.splits.val.len());
        &self.splits.val[..n]
    }

    /// Sampling seeds used per prompt.
    pub fn eval_seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.config.eval.seeds as u64).map(|i| self.config.sample.seed.wrapping_add(i))
    }

    /// Computes every report field. Deterministic in the checkpoints and
    /// config.
    pub fn evaluate(&self) -> Result<MetricsReport> {
        let clip = self.clip()?;
        let codec = self.codec()?;
        self.gen()?;
        let val_images: Vec<&Image> = self.splits.val.iter().map(|s| &s.image).collect();

        let mut psnr_sum = 0.0;
        for img in &val_images {
            psnr_sum += psnr(img, &codec.reconstruct(img)?)?;
        }
        let train_images: Vec<&Image> = self.splits.train.iter().map(|s| &s.image).collect();
        let toks = codec.tokenize_batch(&train_images)?;
        let perplexity = codebook_stats(&toks, codec.cfg.k)?.perplexity;

        let train: Vec<&Sample> = self.splits.train.iter().collect();
        let mut retrieval = Vec::new();
        for b in distinct_batches(&train, 32)
            .into_iter()
            .filter(|b| b.len() == 32)
        {
            let imgs: Vec<&Image> = b.iter().map(|&i| &train[i].image).collect();
            let txt: Vec<CaptionTokens> = b.iter().map(|&i| train[i].tokens.clone()).collect();
            let r = retrieval_at_k(clip, &imgs, &txt, 1)?;
            retrieval.push((r.image_to_text + r.text_to_image) / 2.0);
        }

        let prompts = self.eval_prompts();
        let n = prompts.len();
        let (mut matched, mut generated) = (0usize, 0usize);
        let mut attr = [0usize; 4];
        let (mut own, mut other) = (0.0, 0.0);
        for (i, p) in prompts.iter().enumerate() {
            let shuffled = &prompts[(i + 1) % n].tokens;
            let mut hit = false;
            for seed in self.eval_seeds() {
                let (img, _) = self.generate(&p.tokens, seed)?;
                generated += 1;
                own += clip_score(clip, &img, &p.tokens)?;
                other += clip_score(clip, &img, shuffled)?;
                if let Some(o) = oracle(&img) {
                    hit |= o.color == p.spec.color && o.shape == p.spec.shape;
                    let agree = attribute_agreement(&o, &p.spec);
                    for (a, ok) in attr.iter_mut().zip(agree) {
                        *a += ok as usize;
                    }
                }
            }
            matched += hit as usize;
        }

        let nv = self.config.eval.variations.min(self.splits.val.len());
        let mut kept = 0usize;
        for s in &self.splits.val[..nv] {
            let Some(want) = oracle(&s.image) else {
                continue;
            };
            let mut hit = false;
            for seed in self.eval_seeds() {
                let (img, _) = self.vary(&s.image, seed)?;
                hit |= oracle(&img).is_some_and(|o| o.color == want.color);
            }
            kept += hit as usize;
        }

        let rate = |k: usize, d: usize| if d == 0 { 0.0 } else { k as f64 / d as f64 };
        Ok(MetricsReport {
            psnr_mean: psnr_sum / val_images.len() as f64,
            codebook_perplexity: perplexity,
            retrieval_top1: if retrieval.is_empty() {
                0.0
            } else {
                retrieval.iter().sum::<f64>() / retrieval.len() as f64
            },
            clip_score_mean: own / generated.max(1) as f64,
            clip_score_shuffled: other / generated.max(1) as f64,
            oracle_match_rate: rate(matched, n),
            oracle_color_rate: rate(attr[0], generated),
            oracle_shape_rate: rate(attr[1], generated),
            oracle_size_rate: rate(attr[2], generated),
            oracle_position_rate: rate(attr[3], generated),
            variation_color_rate: rate(kept, nv),
        })
    }
}

/// Color, shape, size and position agreement.
pub fn attribute_agreement(a: &SceneSpec, b: &SceneSpec) -> [bool; 4] {
    [
        a.color == b.color,
        a.shape == b.shape,
        a.size == b.size,
        a.position == b.position,
    ]
}

/// Fraction of `images` whose oracle reading equals the paired spec.
pub fn oracle_match_rate(images: &[&Image], specs: &[SceneSpec]) -> Result<f64> {
    if images.len() != specs.len() || images.is_empty() {
        return crate::error::dim_err("oracle match rate needs one spec per image");
    }
    let hits = images
        .iter()
        .zip(specs)
        .filter(|(img, s)| oracle(img).as_ref() == Some(*s))
        .count();
    Ok(hits as f64 / images.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stages_refuse_to_run_out_of_order() {
        let mut p = Pipeline::new(RunConfig::default()).unwrap();
        match p.train_gen() {
            Err(Error::Stage { stage, .. }) => assert_eq!(stage, "train-vq"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            p.evaluate(),
            Err(Error::Stage {
                stage: "train-clip",
                ..
            })
        ));
    }

    #[test]
    fn ground_truth_renders_match_the_oracle() {
        let p = Pipeline::new(RunConfig::default()).unwrap();
        let imgs: Vec<&Image> = p.splits.val.iter().map(|s| &s.image).collect();
        let specs: Vec<SceneSpec> = p.splits.val.iter().map(|s| s.spec).collect();
        assert_eq!(oracle_match_rate(&imgs, &specs).unwrap(), 1.0);
    }
}
