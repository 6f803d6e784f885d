use crate::error::{dim_err, Error, Result};
use crate::numkit::layers::{Conv2d, Dense};
use crate::numkit::{init, Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::rng;
use crate::synthdata::{CaptionTokens, Image, PAD};

use super::Embedding;

#[derive(Clone, Debug, PartialEq)]
pub struct ClipConfig {
    pub side: usize,
    pub d_c: usize,
    /// Channels of the first conv layer; later layers use twice as many.
    pub width: usize,
    pub word_dim: usize,
    pub hidden: usize,
    pub vocab_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            side: 32,
            d_c: 16,
            width: 16,
            word_dim: 32,
            hidden: 64,
            vocab_size: crate::synthdata::Vocab::new().len(),
            steps: 1500,
            lr: 2e-3,
            batch_size: 32,
        }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<()> {
        if self.side < 16 || self.side % 16 != 0 {
            return Err(Error::Config(format!(
                "clip image side must be a multiple of 16, got {}",
                self.side
            )));
        }
        let positive = [
            ("d_c", self.d_c),
            ("width", self.width),
            ("word_dim", self.word_dim),
            ("hidden", self.hidden),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("clip.{name} must be positive")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::BatchSize(self.batch_size));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("clip.lr must be positive".into()));
        }
        Ok(())
    }
}

/// Temperature bounds, stored as log values.
pub(crate) const LOG_TAU_INIT: f64 = -2.659_260_036_932_778; // ln 0.07
pub(crate) const LOG_TAU_MIN: f64 = -6.907_755_278_982_137; // ln 1e-3
pub(crate) const LOG_TAU_MAX: f64 = 2.302_585_092_994_046; // ln 10

#[derive(Clone, Debug)]
pub struct ClipModel {
    pub cfg: ClipConfig,
    pub params: ParamStore,
    convs: [Conv2d; 3],
    img_fc1: Dense,
    img_fc2: Dense,
    words: ParamId,
    txt_fc1: Dense,
    txt_fc2: Dense,
    log_tau: ParamId,
}

impl ClipModel {
    pub fn new(cfg: ClipConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::stream(seed, 0xC11F);
        let mut p = ParamStore::new();
        let (w1, w2) = (cfg.width, 2 * cfg.width);
        let convs = [
            Conv2d::new(&mut p, "img.conv1", 3, w1, 3, 2, 1, &mut r)?,
            Conv2d::new(&mut p, "img.conv2", w1, w2, 3, 2, 1, &mut r)?,
            Conv2d::new(&mut p, "img.conv3", w2, w2, 3, 2, 1, &mut r)?,
        ];
        let pooled = w2 * (cfg.side / 16) * (cfg.side / 16);
        let img_fc1 = Dense::new(&mut p, "img.fc1", pooled, cfg.hidden, &mut r)?;
        let img_fc2 = Dense::new(&mut p, "img.fc2", cfg.hidden, cfg.d_c, &mut r)?;
        let words = p.add(
            "txt.words",
            init::normal([cfg.vocab_size, cfg.word_dim], init::WEIGHT_STD, &mut r),
        )?;
        let txt_fc1 = Dense::new(&mut p, "txt.fc1", cfg.word_dim, cfg.hidden, &mut r)?;
        let txt_fc2 = Dense::new(&mut p, "txt.fc2", cfg.hidden, cfg.d_c, &mut r)?;
        let log_tau = p.add("log_tau", Tensor::new([1], vec![LOG_TAU_INIT as f32])?)?;
        Ok(Self {
            cfg,
            params: p,
            convs,
            img_fc1,
            img_fc2,
            words,
            txt_fc1,
            txt_fc2,
            log_tau,
        })
    }

    /// Rebuilds a model from stored tensors.
    pub fn from_params(cfg: ClipConfig, params: &ParamStore) -> Result<Self> {
        let mut m = Self::new(cfg, 0)?;
        m.params.assign_from(params)?;
        Ok(m)
    }

    pub fn is_frozen(&self) -> bool {
        self.params.all_frozen()
    }

    pub fn tau(&self) -> f64 {
        (self.params.get(self.log_tau).data()[0] as f64)
            .clamp(LOG_TAU_MIN, LOG_TAU_MAX)
            .exp()
    }

    /// Unit-norm image embeddings for `x: [N,3,S,S]`, shape `[N, d_c]`.
    pub fn image_tower<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != 3 || s[2] != self.cfg.side || s[3] != self.cfg.side {
            return dim_err(format!(
                "clip image encoder expects N×3×{0}×{0}, got {s:?}",
                self.cfg.side
            ));
        }
        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(g, store, h)?;
            h = g.relu(h);
        }
        h = g.avg_pool2(h)?;
        let flat = numel_tail(g.shape(h));
        h = g.reshape(h, [s[0], flat])?;
        h = self.img_fc1.forward(g, store, h)?;
        h = g.relu(h);
        h = self.img_fc2.forward(g, store, h)?;
        Ok(g.l2_normalize_rows(h))
    }

    /// Unit-norm text embeddings, shape `[N, d_c]`. Padding positions are
    /// excluded from the mean over word vectors.
    pub fn text_tower<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        tokens: &[CaptionTokens],
    ) -> Result<Var> {
        let n = tokens.len();
        let len = tokens.first().map_or(0, |t| t.ids.len());
        let mut ids = Vec::with_capacity(n * len);
        let mut pool = vec![T::zero(); n * n * len];
        for (i, t) in tokens.iter().enumerate() {
            if t.ids.len() != len {
                return dim_err("caption batch has mixed lengths");
            }
            let words = t.len_unpadded();
            if words == 0 {
                return Err(Error::EmptyText);
            }
            if let Some(&bad) = t.ids.iter().find(|&&id| id >= self.cfg.vocab_size) {
                return Err(Error::Index(format!(
                    "word index {bad} outside vocabulary of {}",
                    self.cfg.vocab_size
                )));
            }
            let w = T::of_f64(1.0 / words as f64);
            for (j, &id) in t.ids.iter().enumerate() {
                ids.push(id);
                if id != PAD {
                    pool[i * n * len + i * len + j] = w;
                }
            }
        }
        let table = g.param(store, self.words);
        let rows = g.gather(table, &ids)?;
        let pool = g.constant_data([n, n * len], pool)?;
        let mut h = g.matmul(pool, rows)?;
        h = self.txt_fc1.forward(g, store, h)?;
        h = g.relu(h);
        h = self.txt_fc2.forward(g, store, h)?;
        Ok(g.l2_normalize_rows(h))
    }

    /// `1/τ` as a graph scalar, with `log τ` clamped to its allowed range.
    pub fn inv_temperature<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>) -> Var {
        let lt = g.param(store, self.log_tau);
        let lt = g.clamp(lt, T::of_f64(LOG_TAU_MIN), T::of_f64(LOG_TAU_MAX));
        let neg = g.scale(lt, -T::one());
        g.exp(neg)
    }

    pub fn embed_images(&self, images: &[&Image]) -> Result<Vec<Embedding>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::<f32>::new();
        let x = g.constant(Image::batch(images)?);
        let e = self.image_tower(&mut g, &self.params, x)?;
        Ok(rows_to_embeddings(g.value(e), self.cfg.d_c))
    }

    pub fn embed_texts(&self, tokens: &[CaptionTokens]) -> Result<Vec<Embedding>> {
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::<f32>::new();
        let e = self.text_tower(&mut g, &self.params, tokens)?;
        Ok(rows_to_embeddings(g.value(e), self.cfg.d_c))
    }

    pub fn encode_image(&self, image: &Image) -> Result<Embedding> {
        Ok(self.embed_images(&[image])?.remove(0))
    }

    pub fn encode_text(&self, tokens: &CaptionTokens) -> Result<Embedding> {
        Ok(self.embed_texts(std::slice::from_ref(tokens))?.remove(0))
    }
}

fn numel_tail(shape: &[usize]) -> usize {
    shape[1..].iter().product()
}

fn rows_to_embeddings(v: &[f32], d: usize) -> Vec<Embedding> {
    v.chunks(d)
        .map(|r| Embedding::from_unit(r.to_vec()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{caption, render, SceneSpec, Vocab};
    use rand::Rng;

    fn model() -> ClipModel {
        ClipModel::new(ClipConfig::default(), 1).unwrap()
    }

    #[test]
    fn image_embeddings_are_unit_norm() {
        let m = model();
        let mut r = rng::seeded(5);
        let imgs: Vec<Image> = (0..100)
            .map(|_| {
                Image::from_data(32, (0..3 * 32 * 32).map(|_| r.gen::<f32>()).collect()).unwrap()
            })
            .collect();
        let refs: Vec<&Image> = imgs.iter().collect();
        for e in m.embed_images(&refs).unwrap() {
            assert!((e.norm() - 1.0).abs() < 1e-5);
        }
        assert_eq!(
            m.encode_image(&imgs[0]).unwrap(),
            m.encode_image(&imgs[0]).unwrap()
        );
    }

    #[test]
    fn wrong_side_rejected() {
        let m = model();
        let img = Image::filled(16, [0, 0, 0]);
        assert!(matches!(m.encode_image(&img), Err(Error::Dimension(_))));
    }

    #[test]
    fn text_padding_invariance_and_word_order() {
        let m = model();
        let v = Vocab::new();
        let a = v.encode("red circle").unwrap();
        let mut b = a.clone();
        b.ids.truncate(2);
        b.ids.resize(5, PAD);
        let (ea, eb) = (m.encode_text(&a).unwrap(), m.encode_text(&b).unwrap());
        assert_eq!(ea, eb);
        assert!((ea.norm() - 1.0).abs() < 1e-5);
        for spec in SceneSpec::all().step_by(7) {
            let e0 = m
                .encode_text(&v.encode(&caption(&spec, 0).unwrap()).unwrap())
                .unwrap();
            let e1 = m
                .encode_text(&v.encode(&caption(&spec, 1).unwrap()).unwrap())
                .unwrap();
            assert!(e0.cosine(&e1).unwrap() >= 0.99);
        }
    }

    #[test]
    fn all_pad_is_empty_text() {
        let m = model();
        let t = CaptionTokens { ids: vec![PAD; 8] };
        assert!(matches!(m.encode_text(&t), Err(Error::EmptyText)));
    }

    #[test]
    fn batch_matches_single() {
        let m = model();
        let imgs: Vec<Image> = SceneSpec::all().take(3).map(|s| render(&s, 32)).collect();
        let batch = m.embed_images(&imgs.iter().collect::<Vec<_>>()).unwrap();
        for (img, e) in imgs.iter().zip(&batch) {
            let single = m.encode_image(img).unwrap();
            assert!(single.cosine(e).unwrap() > 1.0 - 1e-6);
        }
    }

    #[test]
    fn temperature_starts_at_convention() {
        assert!((model().tau() - 0.07).abs() < 1e-6);
    }
}
