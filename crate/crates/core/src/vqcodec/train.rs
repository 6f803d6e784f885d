use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numkit::{adam_update, AdamState, Graph};
use crate::rng::{self, Rng};
use crate::synthdata::Image;

use super::{Discriminator, VqCodec, VqLoss};

/// Optimizer state and bookkeeping for stage-one training.
pub struct VqTrainer {
    opt: AdamState,
    disc: Option<(Discriminator, AdamState)>,
    usage: Vec<u64>,
    step: usize,
    rng: Rng,
}

impl VqTrainer {
    pub fn new(codec: &VqCodec, seed: u64) -> Result<Self> {
        if codec.is_frozen() {
            return Err(Error::State("codec is frozen".into()));
        }
        let disc = if codec.cfg.gan {
            let d = Discriminator::new(codec.cfg.disc_width, seed)?;
            let o = AdamState::with_betas(&d.params, codec.cfg.lr, 0.5, 0.9, 1e-8);
            Some((d, o))
        } else {
            None
        };
        Ok(Self {
            opt: AdamState::new(&codec.params, codec.cfg.lr),
            disc,
            usage: vec![0; codec.cfg.k],
            step: 0,
            rng: rng::stream(seed, 0x7EA1),
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn discriminator(&self) -> Option<&Discriminator> {
        self.disc.as_ref().map(|(d, _)| d)
    }

    /// One alternating update on a batch of images: the codec step on the VQ
    /// objective (plus the adversarial term once past warmup), then the
    /// discriminator step. Consumes images only.
    pub fn step(&mut self, codec: &mut VqCodec, batch: &[&Image]) -> Result<VqLoss> {
        let cfg = codec.cfg.clone();
        let adversarial_on = cfg.gan && self.step >= cfg.warmup;
        let mut g = Graph::<f32>::new();
        let x = g.constant(Image::batch(batch)?);
        let fwd = codec.forward(&mut g, &codec.params, x)?;
        let mut loss = fwd.loss.values(&g);
        let mut objective = fwd.loss.total;
        if adversarial_on {
            let (d, _) = self.disc.as_ref().expect("gan enabled");
            let adv = d.gen_loss(&mut g, &d.params, fwd.x_hat)?;
            loss.adversarial = g.scalar(adv);
            let w = g.scale(adv, cfg.adv_weight as f32);
            objective = g.add(objective, w)?;
            loss.total = g.scalar(objective);
        }
        if !loss.total.is_finite() {
            return Err(Error::Divergence(format!(
                "vq loss became {} at step {}",
                loss.total, self.step
            )));
        }
        g.backward_into(objective, &mut codec.params)?;
        adam_update(&mut codec.params, &mut self.opt)?;

        if adversarial_on {
            let (d, opt) = self.disc.as_mut().expect("gan enabled");
            let mut dg = Graph::<f32>::new();
            let real = dg.constant(Image::batch(batch)?);
            let fake = dg.constant(g.tensor(fwd.x_hat));
            let dl = d.disc_loss(&mut dg, &d.params, real, fake)?;
            dg.backward_into(dl, &mut d.params)?;
            adam_update(&mut d.params, opt)?;
        }

        for &c in &fwd.codes {
            self.usage[c] += 1;
        }
        self.step += 1;
        if cfg.revive_every > 0 && self.step % cfg.revive_every == 0 {
            self.revive(codec, g.value(fwd.z_e));
        }
        Ok(loss)
    }

    /// Re-seeds every code unused since the last revival with a random
    /// encoder output from the current batch and clears its Adam moments.
    fn revive(&mut self, codec: &mut VqCodec, z_e: &[f32]) {
        let dz = codec.cfg.dim_z;
        let rows = z_e.len() / dz;
        let id = codec.codebook_id();
        for k in 0..codec.cfg.k {
            if self.usage[k] == 0 {
                let r = self.rng.gen_range(0..rows);
                let src = z_e[r * dz..(r + 1) * dz].to_vec();
                codec.params.get_mut(id).data_mut()[k * dz..(k + 1) * dz].copy_from_slice(&src);
                self.opt.reset_range(id, k * dz, dz);
            }
        }
        self.usage.iter_mut().for_each(|u| *u = 0);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VqTrainReport {
    pub losses: Vec<VqLoss>,
}

/// Runs `codec.cfg.steps` training steps over shuffled mini-batches of
/// `images`, then freezes the codec.
pub fn train_vq(codec: &mut VqCodec, images: &[&Image], seed: u64) -> Result<VqTrainReport> {
    if images.is_empty() {
        return Err(Error::Config(
            "stage-one training needs at least one image".into(),
        ));
    }
    let mut trainer = VqTrainer::new(codec, seed)?;
    let mut order_rng = rng::stream(seed, 0xBA7C);
    let bs = codec.cfg.batch_size.min(images.len());
    let mut order: Vec<usize> = Vec::new();
    let mut losses = Vec::with_capacity(codec.cfg.steps);
    for _ in 0..codec.cfg.steps {
        if order.len() < bs {
            let mut fresh: Vec<usize> = (0..images.len()).collect();
            fresh.shuffle(&mut order_rng);
            order.extend(fresh);
        }
        let batch: Vec<&Image> = order.drain(..bs).map(|i| images[i]).collect();
        losses.push(trainer.step(codec, &batch)?);
    }
    codec.params.freeze_all();
    Ok(VqTrainReport { losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{render, SceneSpec};
    use crate::vqcodec::VqConfig;

    fn images() -> Vec<Image> {
        SceneSpec::all()
            .step_by(9)
            .map(|s| render(&s, 32))
            .collect()
    }

    #[test]
    fn discriminator_untouched_before_warmup() {
        let cfg = VqConfig {
            width: 8,
            k: 16,
            gan: true,
            warmup: 3,
            batch_size: 2,
            ..Default::default()
        };
        let mut codec = VqCodec::new(cfg, 0).unwrap();
        let imgs = images();
        let batch: Vec<&Image> = imgs.iter().take(2).collect();
        let mut t = VqTrainer::new(&codec, 0).unwrap();
        let before = t.discriminator().unwrap().params.clone();
        for _ in 0..3 {
            let l = t.step(&mut codec, &batch).unwrap();
            assert_eq!(l.adversarial, 0.0);
        }
        assert!(t.discriminator().unwrap().params.bit_identical(&before));
        let l = t.step(&mut codec, &batch).unwrap();
        assert!(l.adversarial > 0.0);
        assert!(!t.discriminator().unwrap().params.bit_identical(&before));
    }

    #[test]
    fn dead_codes_are_revived() {
        let cfg = VqConfig {
            width: 8,
            k: 32,
            revive_every: 2,
            batch_size: 2,
            ..Default::default()
        };
        let mut codec = VqCodec::new(cfg, 0).unwrap();
        let imgs = images();
        let batch: Vec<&Image> = imgs.iter().take(2).collect();
        let before = codec.codebook().to_vec();
        let mut t = VqTrainer::new(&codec, 0).unwrap();
        t.step(&mut codec, &batch).unwrap();
        let mid = codec.codebook().to_vec();
        t.step(&mut codec, &batch).unwrap();
        let after = codec.codebook().to_vec();
        // Unused rows get no gradient, so Adam leaves them alone until revival.
        let moved =
            |a: &[f32], b: &[f32], k: usize| a[k * 16..(k + 1) * 16] != b[k * 16..(k + 1) * 16];
        let revived = (0..32)
            .filter(|&k| !moved(&before, &mid, k) && moved(&mid, &after, k))
            .count();
        assert!(revived > 0);
    }
}
