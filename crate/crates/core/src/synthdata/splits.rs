use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

use super::{caption, render, CaptionTokens, Color, Image, SceneSpec, Shape, Vocab, NUM_TEMPLATES};

/// Shape/colour pairs never shown during training. Each shape and each
/// colour appears exactly once, so every held-out pair is a novel
/// combination of attributes that are all seen individually.
pub const HELD_OUT: [(Shape, Color); 4] = [
    (Shape::Circle, Color::Blue),
    (Shape::Square, Color::Yellow),
    (Shape::Triangle, Color::Green),
    (Shape::Cross, Color::Red),
];

pub fn is_held_out(spec: &SceneSpec) -> bool {
    HELD_OUT.contains(&(spec.shape, spec.color))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub side: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            side: 32,
            n_train: 360,
            n_val: 120,
            seed: 0,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.side < 32 || self.side % 8 != 0 {
            return Err(Error::Config(format!(
                "image side must be a multiple of 8 and at least 32, got {}",
                self.side
            )));
        }
        let (tr, va) = pool_sizes();
        if self.n_train == 0 || self.n_train > tr {
            return Err(Error::Config(format!(
                "n_train must be in 1..={tr}, got {}",
                self.n_train
            )));
        }
        if self.n_val == 0 || self.n_val > va {
            return Err(Error::Config(format!(
                "n_val must be in 1..={va}, got {}",
                self.n_val
            )));
        }
        Ok(())
    }
}

fn pool_sizes() -> (usize, usize) {
    let held = SceneSpec::all().filter(is_held_out).count();
    ((160 - held) * NUM_TEMPLATES, held * NUM_TEMPLATES)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub spec: SceneSpec,
    pub template: usize,
    pub caption: String,
    pub tokens: CaptionTokens,
    pub image: Image,
}

impl Sample {
    pub fn new(spec: SceneSpec, template: usize, side: usize, vocab: &Vocab) -> Result<Self> {
        let caption = caption(&spec, template)?;
        let tokens = vocab.encode(&caption)?;
        Ok(Self {
            spec,
            template,
            caption,
            tokens,
            image: render(&spec, side),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub vocab: Vocab,
    pub side: usize,
}

/// Orders every (spec, template) pair so that each block of `specs.len()`
/// consecutive entries covers all specs once.
fn ordered_pairs<R: Rng>(mut specs: Vec<SceneSpec>, rng: &mut R) -> Vec<(SceneSpec, usize)> {
    specs.shuffle(rng);
    let offsets: Vec<usize> = specs
        .iter()
        .map(|_| rng.gen_range(0..NUM_TEMPLATES))
        .collect();
    let mut out = Vec::with_capacity(specs.len() * NUM_TEMPLATES);
    for round in 0..NUM_TEMPLATES {
        for (s, off) in specs.iter().zip(&offsets) {
            out.push((*s, (off + round) % NUM_TEMPLATES));
        }
    }
    out
}

/// Deterministic train/validation split. Training uses every spec outside
/// [`HELD_OUT`]; validation uses only held-out specs. No (spec, template)
/// pair appears twice.
pub fn build_splits(cfg: &DataConfig) -> Result<Splits> {
    cfg.validate()?;
    let vocab = Vocab::new();
    let (train_specs, val_specs): (Vec<_>, Vec<_>) =
        SceneSpec::all().partition(|s| !is_held_out(s));
    let build = |specs, stream, n| -> Result<Vec<Sample>> {
        let mut r = rng::stream(cfg.seed, stream);
        ordered_pairs(specs, &mut r)
            .into_iter()
            .take(n)
            .map(|(s, t)| Sample::new(s, t, cfg.side, &vocab))
            .collect()
    };
    let train = build(train_specs, 1, cfg.n_train)?;
    let val = build(val_specs, 2, cfg.n_val)?;
    Ok(Splits {
        train,
        val,
        vocab: vocab.clone(),
        side: cfg.side,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn default_split_sizes_and_disjointness() {
        let s = build_splits(&DataConfig::default()).unwrap();
        assert_eq!(s.train.len(), 360);
        assert_eq!(s.val.len(), 120);
        let tr: HashSet<_> = s.train.iter().map(|x| x.spec).collect();
        let va: HashSet<_> = s.val.iter().map(|x| x.spec).collect();
        assert_eq!(tr.len(), 120);
        assert_eq!(va.len(), 40);
        assert!(tr.is_disjoint(&va));
        let pairs: HashSet<_> = s.train.iter().map(|x| (x.spec, x.template)).collect();
        assert_eq!(pairs.len(), 360);
    }

    #[test]
    fn leading_block_has_distinct_specs() {
        let s = build_splits(&DataConfig::default()).unwrap();
        let first: HashSet<_> = s.val[..40].iter().map(|x| x.spec).collect();
        assert_eq!(first.len(), 40);
    }

    #[test]
    fn seeded_and_deterministic() {
        let cfg = DataConfig {
            seed: 3,
            n_train: 50,
            n_val: 10,
            ..Default::default()
        };
        assert_eq!(build_splits(&cfg).unwrap(), build_splits(&cfg).unwrap());
        let other = DataConfig {
            seed: 4,
            ..cfg.clone()
        };
        assert_ne!(
            build_splits(&cfg).unwrap().train,
            build_splits(&other).unwrap().train
        );
    }

    #[test]
    fn rejects_bad_config() {
        for cfg in [
            DataConfig {
                n_train: 361,
                ..Default::default()
            },
            DataConfig {
                n_val: 0,
                ..Default::default()
            },
            DataConfig {
                side: 36,
                ..Default::default()
            },
        ] {
            assert!(matches!(build_splits(&cfg), Err(Error::Config(_))));
        }
    }
}
