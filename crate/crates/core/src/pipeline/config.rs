use std::fmt::Write as _;
use std::str::FromStr;

use crate::clipkit::ClipConfig;
use crate::congen::{GenConfig, FULL_SCALE_COCO_D_MODEL, FULL_SCALE_COCO_LAYERS};
use crate::error::{Error, Result};
use crate::sampler::{SampleConfig, FULL_SCALE_TOP_K};
use crate::synthdata::{DataConfig, Vocab};
use crate::vqcodec::{
    VqConfig, FULL_SCALE_DIM_Z, FULL_SCALE_F, FULL_SCALE_GAN_WARMUP, FULL_SCALE_K, FULL_SCALE_VQ_LR,
};

/// Full-scale transformer learning rate.
pub const FULL_SCALE_GEN_LR: f64 = 1e-5;
/// Full-scale image side (256 tokens at compression 16).
pub const FULL_SCALE_SIDE: usize = 256;

/// Environment variable consulted for the run seed when neither the config
/// file nor a flag sets one.
pub const SEED_ENV: &str = "CLIPGEN_SEED";

/// Evaluation protocol sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// Held-out captions used for text-to-image scoring.
    pub captions: usize,
    /// Sampling seeds per caption; a caption counts as matched if any seed's
    /// image matches.
    pub seeds: usize,
    /// Validation images used for image-to-image scoring.
    pub variations: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            captions: 20,
            seeds: 4,
            variations: 50,
        }
    }
}

/// Every setting of a run. Cross-stage sizes (image side, codebook size,
/// token grid, embedding width, caption vocabulary) are derived, not set.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub clip: ClipConfig,
    pub vq: VqConfig,
    pub gen: GenConfig,
    pub sample: SampleConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = Self {
            seed: 0,
            data: DataConfig::default(),
            clip: ClipConfig::default(),
            vq: VqConfig::default(),
            gen: GenConfig::default(),
            sample: SampleConfig::default(),
            eval: EvalConfig::default(),
        };
        c.resolve();
        c
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid value `{value}` for `{key}`"
        ))),
    }
}

impl RunConfig {
    /// Full-scale hyper-parameters, for reference; far beyond desk budgets.
    pub fn full_scale_preset() -> Self {
        let mut c = Self::default();
        c.data.side = FULL_SCALE_SIDE;
        c.vq.k = FULL_SCALE_K;
        c.vq.dim_z = FULL_SCALE_DIM_Z;
        c.vq.f = FULL_SCALE_F;
        c.vq.lr = FULL_SCALE_VQ_LR;
        c.vq.gan = true;
        c.vq.warmup = FULL_SCALE_GAN_WARMUP;
        c.gen.layers = FULL_SCALE_COCO_LAYERS;
        c.gen.d_model = FULL_SCALE_COCO_D_MODEL;
        c.gen.lr = FULL_SCALE_GEN_LR;
        c.sample.k = FULL_SCALE_TOP_K;
        c.resolve();
        c
    }

    /// Defaults with the seed taken from the environment when set there.
    pub fn from_env() -> Result<Self> {
        let mut c = Self::default();
        if let Ok(v) = std::env::var(SEED_ENV) {
            c.seed = parse(SEED_ENV, v.trim())?;
        }
        Ok(c)
    }

    /// Copies shared sizes into the stage configs that depend on them.
    pub fn resolve(&mut self) {
        self.clip.side = self.data.side;
        self.clip.vocab_size = Vocab::new().len();
        self.vq.side = self.data.side;
        self.gen.k = self.vq.k;
        if self.vq.f > 0 {
            self.gen.grid = self.data.side / self.vq.f;
        }
        self.gen.d_c = self.clip.d_c;
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.clip.validate()?;
        self.vq.validate()?;
        self.gen.validate()?;
        self.sample.validate(self.vq.k)?;
        for (name, v) in [
            ("eval.captions", self.eval.captions),
            ("eval.seeds", self.eval.seeds),
            ("eval.variations", self.eval.variations),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Sets one `section.key` entry. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "run.seed" => self.seed = parse(key, v)?,
            "data.side" => self.data.side = parse(key, v)?,
            "data.n_train" => self.data.n_train = parse(key, v)?,
            "data.n_val" => self.data.n_val = parse(key, v)?,
            "data.seed" => self.data.seed = parse(key, v)?,
            "clip.d_c" => self.clip.d_c = parse(key, v)?,
            "clip.width" => self.clip.width = parse(key, v)?,
            "clip.word_dim" => self.clip.word_dim = parse(key, v)?,
            "clip.hidden" => self.clip.hidden = parse(key, v)?,
            "clip.steps" => self.clip.steps = parse(key, v)?,
            "clip.lr" => self.clip.lr = parse(key, v)?,
            "clip.batch_size" => self.clip.batch_size = parse(key, v)?,
            "vq.k" => self.vq.k = parse(key, v)?,
            "vq.dim_z" => self.vq.dim_z = parse(key, v)?,
            "vq.f" => self.vq.f = parse(key, v)?,
            "vq.width" => self.vq.width = parse(key, v)?,
            "vq.beta" => self.vq.beta = parse(key, v)?,
            "vq.steps" => self.vq.steps = parse(key, v)?,
            "vq.lr" => self.vq.lr = parse(key, v)?,
            "vq.batch_size" => self.vq.batch_size = parse(key, v)?,
            "vq.gan" => self.vq.gan = parse_bool(key, v)?,
            "vq.warmup" => self.vq.warmup = parse(key, v)?,
            "vq.adv_weight" => self.vq.adv_weight = parse(key, v)?,
            "vq.disc_width" => self.vq.disc_width = parse(key, v)?,
            "vq.revive_every" => self.vq.revive_every = parse(key, v)?,
            "gen.layers" => self.gen.layers = parse(key, v)?,
            "gen.d_model" => self.gen.d_model = parse(key, v)?,
            "gen.heads" => self.gen.heads = parse(key, v)?,
            "gen.steps" => self.gen.steps = parse(key, v)?,
            "gen.lr" => self.gen.lr = parse(key, v)?,
            "gen.batch_size" => self.gen.batch_size = parse(key, v)?,
            "gen.lambda" => self.gen.lambda = parse(key, v)?,
            "sample.temperature" => self.sample.temperature = parse(key, v)?,
            "sample.k" => self.sample.k = parse(key, v)?,
            "sample.p" => self.sample.p = parse(key, v)?,
            "sample.seed" => self.sample.seed = parse(key, v)?,
            "eval.captions" => self.eval.captions = parse(key, v)?,
            "eval.seeds" => self.eval.seeds = parse(key, v)?,
            "eval.variations" => self.eval.variations = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        self.resolve();
        Ok(())
    }

    /// All settable entries in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("run.seed", self.seed.to_string()),
            ("data.side", self.data.side.to_string()),
            ("data.n_train", self.data.n_train.to_string()),
            ("data.n_val", self.data.n_val.to_string()),
            ("data.seed", self.data.seed.to_string()),
            ("clip.d_c", self.clip.d_c.to_string()),
            ("clip.width", self.clip.width.to_string()),
            ("clip.word_dim", self.clip.word_dim.to_string()),
            ("clip.hidden", self.clip.hidden.to_string()),
            ("clip.steps", self.clip.steps.to_string()),
            ("clip.lr", self.clip.lr.to_string()),
            ("clip.batch_size", self.clip.batch_size.to_string()),
            ("vq.k", self.vq.k.to_string()),
            ("vq.dim_z", self.vq.dim_z.to_string()),
            ("vq.f", self.vq.f.to_string()),
            ("vq.width", self.vq.width.to_string()),
            ("vq.beta", self.vq.beta.to_string()),
            ("vq.steps", self.vq.steps.to_string()),
            ("vq.lr", self.vq.lr.to_string()),
            ("vq.batch_size", self.vq.batch_size.to_string()),
            ("vq.gan", self.vq.gan.to_string()),
            ("vq.warmup", self.vq.warmup.to_string()),
            ("vq.adv_weight", self.vq.adv_weight.to_string()),
            ("vq.disc_width", self.vq.disc_width.to_string()),
            ("vq.revive_every", self.vq.revive_every.to_string()),
            ("gen.layers", self.gen.layers.to_string()),
            ("gen.d_model", self.gen.d_model.to_string()),
            ("gen.heads", self.gen.heads.to_string()),
            ("gen.steps", self.gen.steps.to_string()),
            ("gen.lr", self.gen.lr.to_string()),
            ("gen.batch_size", self.gen.batch_size.to_string()),
            ("gen.lambda", self.gen.lambda.to_string()),
            ("sample.temperature", self.sample.temperature.to_string()),
            ("sample.k", self.sample.k.to_string()),
            ("sample.p", self.sample.p.to_string()),
            ("sample.seed", self.sample.seed.to_string()),
            ("eval.captions", self.eval.captions.to_string()),
            ("eval.seeds", self.eval.seeds.to_string()),
            ("eval.variations", self.eval.variations.to_string()),
        ]
    }

    /// Applies `section.key = value` lines on top of `self`. Blank lines and
    /// `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    n + 1
                )));
            };
            self.set(k.trim(), v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    /// Parses a config on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// Canonical text form; `from_text(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Stage seeds derived from the run seed.
    pub fn stage_seed(&self, stage: u64) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(stage)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_valid_defaults() {
        let c = RunConfig::from_text("").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
        assert_eq!(c.gen.grid, 8);
        assert_eq!(c.gen.k, c.vq.k);
        assert_eq!(c.gen.d_c, c.clip.d_c);
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("vq.lr", "0.00031").unwrap();
        c.set("vq.gan", "on").unwrap();
        c.set("gen.lambda", "0").unwrap();
        c.set("data.side", "48").unwrap();
        let back = RunConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.gen.grid, 12);
        assert_eq!(back.to_text(), c.to_text());
    }

    #[test]
    fn every_entry_is_settable() {
        let c = RunConfig::default();
        let mut d = RunConfig::default();
        for (k, v) in c.entries() {
            d.set(k, &v).unwrap();
        }
        assert_eq!(c, d);
    }

    #[test]
    fn unknown_keys_and_bad_lines_fail() {
        let e = RunConfig::from_text("vq.kk = 3").unwrap_err();
        assert!(e.to_string().contains("vq.kk"), "{e}");
        assert!(RunConfig::from_text("vq.k 3").is_err());
        assert!(RunConfig::from_text("vq.k = many").is_err());
        let c = RunConfig::from_text("# comment\n\nvq.k = 64 # trailing\n").unwrap();
        assert_eq!(c.vq.k, 64);
    }

    #[test]
    fn side_must_divide_by_f() {
        let c = RunConfig::from_text("data.side = 40\nvq.f = 16").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn full_scale_preset_is_consistent() {
        let c = RunConfig::full_scale_preset();
        assert_eq!(c.gen.grid * c.gen.grid, 256);
        assert_eq!(c.gen.k, 16384);
        c.validate().unwrap();
    }
}
