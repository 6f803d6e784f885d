use crate::clipkit::Embedding;
use crate::error::{dim_err, Error, Result};
use crate::numkit::layers::{Dense, LayerNorm};
use crate::numkit::{init, Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::rng;
use crate::sampler::TokenModel;

/// Full-scale depth and width (COCO model).
pub const FULL_SCALE_COCO_LAYERS: usize = 24;
pub const FULL_SCALE_COCO_D_MODEL: usize = 1024;
/// Full-scale depth and width (ImageNet model).
pub const FULL_SCALE_IMAGENET_LAYERS: usize = 48;
pub const FULL_SCALE_IMAGENET_D_MODEL: usize = 1536;
/// Weight of the embedding-reconstruction term.
pub const FULL_SCALE_LAMBDA: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    /// Codebook size (token vocabulary).
    pub k: usize,
    /// Token grid side; sequences have `grid²` tokens.
    pub grid: usize,
    pub d_c: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub lambda: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            k: 128,
            grid: 8,
            d_c: 16,
            d_model: 64,
            layers: 4,
            heads: 4,
            steps: 3000,
            lr: 1e-3,
            batch_size: 16,
            lambda: FULL_SCALE_LAMBDA,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("k", self.k),
            ("grid", self.grid),
            ("d_c", self.d_c),
            ("d_model", self.d_model),
            ("layers", self.layers),
            ("heads", self.heads),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("gen.{name} must be positive")));
            }
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "gen.d_model {} is not divisible by gen.heads {}",
                self.d_model, self.heads
            )));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "gen.lambda must be ≥ 0, got {}",
                self.lambda
            )));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("gen.lr must be positive".into()));
        }
        Ok(())
    }

    pub fn seq_len(&self) -> usize {
        self.grid * self.grid
    }
}

#[derive(Clone, Debug)]
struct Block {
    ln1: LayerNorm,
    q: Dense,
    k: Dense,
    v: Dense,
    o: Dense,
    ln2: LayerNorm,
    fc1: Dense,
    fc2: Dense,
}

#[derive(Clone, Debug)]
pub struct GenModel {
    pub cfg: GenConfig,
    pub params: ParamStore,
    tok: ParamId,
    pos: ParamId,
    cond: Dense,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    head: Dense,
}

impl GenModel {
    pub fn new(cfg: GenConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::stream(seed, 0x6E4);
        let mut p = ParamStore::new();
        let d = cfg.d_model;
        let tok = p.add("tok", init::normal([cfg.k, d], init::WEIGHT_STD, &mut r))?;
        let pos = p.add(
            "pos",
            init::normal([cfg.seq_len() + 1, d], init::WEIGHT_STD, &mut r),
        )?;
        let cond = Dense::new(&mut p, "cond", cfg.d_c, d, &mut r)?;
        let mut blocks = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let n = |s: &str| format!("block{l}.{s}");
            blocks.push(Block {
                ln1: LayerNorm::new(&mut p, &n("ln1"), d)?,
                q: Dense::new(&mut p, &n("q"), d, d, &mut r)?,
                k: Dense::new(&mut p, &n("k"), d, d, &mut r)?,
                v: Dense::new(&mut p, &n("v"), d, d, &mut r)?,
                o: Dense::new(&mut p, &n("o"), d, d, &mut r)?,
                ln2: LayerNorm::new(&mut p, &n("ln2"), d)?,
                fc1: Dense::new(&mut p, &n("fc1"), d, 4 * d, &mut r)?,
                fc2: Dense::new(&mut p, &n("fc2"), 4 * d, d, &mut r)?,
            });
        }
        let ln_f = LayerNorm::new(&mut p, "ln_f", d)?;
        let head = Dense::new(&mut p, "head", d, cfg.k, &mut r)?;
        Ok(Self {
            cfg,
            params: p,
            tok,
            pos,
            cond,
            blocks,
            ln_f,
            head,
        })
    }

    pub fn from_params(cfg: GenConfig, params: &ParamStore) -> Result<Self> {
        let mut m = Self::new(cfg, 0)?;
        m.params.assign_from(params)?;
        Ok(m)
    }

    pub fn cond_weight(&self) -> &Tensor<f32> {
        self.params.get(self.cond.w)
    }

    /// Condition prefix: dense projection of `cond: [B, d_c]` to `[B, d_model]`.
    pub fn project_graph<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        cond: Var,
    ) -> Result<Var> {
        if g.shape(cond).len() != 2 || g.shape(cond)[1] != self.cfg.d_c {
            return Err(Error::Config(format!(
                "condition has shape {:?}, expected rows of width {}",
                g.shape(cond),
                self.cfg.d_c
            )));
        }
        self.cond.forward(g, store, cond)
    }

    pub fn project_condition(&self, e: &Embedding) -> Result<Vec<f32>> {
        let mut g = Graph::<f32>::new();
        let c = g.constant_data([1, e.dim()], e.as_slice().to_vec())?;
        let p = self.project_graph(&mut g, &self.params, c)?;
        Ok(g.value(p).to_vec())
    }

    /// Teacher-forced logits. `tokens` holds `batch` sequences of equal
    /// length `t ≤ h·w`; the input is the condition prefix followed by the
    /// tokens, and output row `i` of each sequence predicts token `i`.
    /// Returns `[batch·(t+1), K]`; the last row of each sequence predicts
    /// the token after the given ones.
    pub fn logits_graph<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        cond: Var,
        tokens: &[usize],
        batch: usize,
    ) -> Result<Var> {
        if batch == 0 || tokens.len() % batch != 0 {
            return dim_err(format!(
                "{} tokens do not split into {batch} sequences",
                tokens.len()
            ));
        }
        let t = tokens.len() / batch;
        if t > self.cfg.seq_len() {
            return dim_err(format!(
                "sequence length {t} exceeds {}",
                self.cfg.seq_len()
            ));
        }
        if g.shape(cond)[0] != batch {
            return dim_err("one condition row per sequence required");
        }
        if let Some(&bad) = tokens.iter().find(|&&s| s >= self.cfg.k) {
            return Err(Error::Token(format!(
                "token {bad} outside codebook of {}",
                self.cfg.k
            )));
        }
        let prefix = self.project_graph(g, store, cond)?;
        let mut x = if t == 0 {
            prefix
        } else {
            let table = g.param(store, self.tok);
            let body = g.gather(table, tokens)?;
            g.prepend_rows(prefix, body, batch)?
        };
        let pos_ids: Vec<usize> = (0..batch).flat_map(|_| 0..=t).collect();
        let pt = g.param(store, self.pos);
        let pe = g.gather(pt, &pos_ids)?;
        x = g.add(x, pe)?;
        for b in &self.blocks {
            let h = b.ln1.forward(g, store, x)?;
            let q = b.q.forward(g, store, h)?;
            let k = b.k.forward(g, store, h)?;
            let v = b.v.forward(g, store, h)?;
            let a = g.causal_attention(q, k, v, batch, t + 1, self.cfg.heads)?;
            let a = b.o.forward(g, store, a)?;
            x = g.add(x, a)?;
            let h = b.ln2.forward(g, store, x)?;
            let h = b.fc1.forward(g, store, h)?;
            let h = g.gelu(h);
            let h = b.fc2.forward(g, store, h)?;
            x = g.add(x, h)?;
        }
        let h = self.ln_f.forward(g, store, x)?;
        self.head.forward(g, store, h)
    }

    /// Logits `[batch·h·w, K]` predicting each token of full sequences.
    pub fn predict_graph<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        cond: Var,
        tokens: &[usize],
        batch: usize,
    ) -> Result<Var> {
        let n = self.cfg.seq_len();
        if tokens.len() != batch * n {
            return dim_err(format!(
                "expected {batch} sequences of {n} tokens, got {} tokens",
                tokens.len()
            ));
        }
        let all = self.logits_graph(g, store, cond, tokens, batch)?;
        let rows: Vec<usize> = (0..batch)
            .flat_map(|b| (0..n).map(move |i| b * (n + 1) + i))
            .collect();
        g.gather(all, &rows)
    }

    /// Teacher-forced logits for one sequence, `h·w` rows of `K` values.
    pub fn forward_logits(&self, e: &Embedding, tokens: &[usize]) -> Result<Vec<f32>> {
        let mut g = Graph::<f32>::new();
        let c = g.constant_data([1, e.dim()], e.as_slice().to_vec())?;
        let l = self.predict_graph(&mut g, &self.params, c, tokens, 1)?;
        Ok(g.value(l).to_vec())
    }
}

impl TokenModel for GenModel {
    fn vocab_size(&self) -> usize {
        self.cfg.k
    }

    fn grid(&self) -> (usize, usize) {
        (self.cfg.grid, self.cfg.grid)
    }

    fn next_logits(&self, cond: &Embedding, prefix: &[usize]) -> Result<Vec<f32>> {
        let mut g = Graph::<f32>::new();
        let c = g.constant_data([1, cond.dim()], cond.as_slice().to_vec())?;
        let l = self.logits_graph(&mut g, &self.params, c, prefix, 1)?;
        let k = self.cfg.k;
        let v = g.value(l);
        Ok(v[v.len() - k..].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small() -> GenModel {
        GenModel::new(
            GenConfig {
                k: 12,
                grid: 3,
                d_model: 16,
                layers: 2,
                heads: 2,
                ..Default::default()
            },
            4,
        )
        .unwrap()
    }

    fn emb(seed: u64) -> Embedding {
        let mut r = rng::seeded(seed);
        Embedding::new((0..16).map(|_| r.gen::<f32>() - 0.5).collect()).unwrap()
    }

    #[test]
    fn causality_is_exact() {
        let m = small();
        for seed in 0..20 {
            let mut r = rng::seeded(seed);
            let e = emb(seed);
            let toks: Vec<usize> = (0..9).map(|_| r.gen_range(0..12)).collect();
            let base = m.forward_logits(&e, &toks).unwrap();
            let j = r.gen_range(0..9);
            let mut pert = toks.clone();
            pert[j] = (pert[j] + 1 + r.gen_range(0..11)) % 12;
            let out = m.forward_logits(&e, &pert).unwrap();
            for i in 0..=j {
                assert_eq!(
                    &base[i * 12..(i + 1) * 12],
                    &out[i * 12..(i + 1) * 12],
                    "seed {seed} pos {i} j {j}"
                );
            }
        }
    }

    #[test]
    fn next_logits_agree_with_teacher_forcing() {
        let m = small();
        let e = emb(1);
        let toks = [3, 1, 4, 1, 5, 9, 2, 6, 5];
        let full = m.forward_logits(&e, &toks).unwrap();
        for i in 0..9 {
            let step = m.next_logits(&e, &toks[..i]).unwrap();
            for (a, b) in step.iter().zip(&full[i * 12..(i + 1) * 12]) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn projection_is_affine() {
        let m = small();
        let (e1, e2) = (emb(2), emb(3));
        let p0 = m
            .project_condition(&Embedding::from_unit(vec![0.0; 16]))
            .unwrap();
        let p1 = m.project_condition(&e1).unwrap();
        let p2 = m.project_condition(&e2).unwrap();
        let (a, b) = (0.3f32, -1.7f32);
        let mix: Vec<f32> = e1
            .as_slice()
            .iter()
            .zip(e2.as_slice())
            .map(|(x, y)| a * x + b * y)
            .collect();
        let pm = m.project_condition(&Embedding::from_unit(mix)).unwrap();
        for i in 0..16 {
            let lin = a * (p1[i] - p0[i]) + b * (p2[i] - p0[i]);
            assert!((pm[i] - p0[i] - lin).abs() < 1e-5);
        }
        assert_eq!(p1.len(), 16);
    }

    #[test]
    fn bad_inputs() {
        let m = small();
        assert!(matches!(
            m.forward_logits(&emb(0), &[0; 8]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            m.forward_logits(&emb(0), &[12; 9]),
            Err(Error::Token(_))
        ));
        let wrong = Embedding::new(vec![1.0; 5]).unwrap();
        assert!(matches!(m.project_condition(&wrong), Err(Error::Config(_))));
        assert!(GenModel::new(
            GenConfig {
                heads: 3,
                ..Default::default()
            },
            0
        )
        .is_err());
    }

    /// Rank by Gaussian elimination with partial pivoting.
    fn rank(rows: usize, cols: usize, data: &[f32]) -> usize {
        let mut a: Vec<f64> = data.iter().map(|&v| v as f64).collect();
        let mut rank = 0;
        for c in 0..cols {
            let Some(p) = (rank..rows)
                .max_by(|&x, &y| a[x * cols + c].abs().total_cmp(&a[y * cols + c].abs()))
            else {
                break;
            };
            if a[p * cols + c].abs() < 1e-9 {
                continue;
            }
            for j in 0..cols {
                a.swap(rank * cols + j, p * cols + j);
            }
            for r in rank + 1..rows {
                let f = a[r * cols + c] / a[rank * cols + c];
                for j in c..cols {
                    a[r * cols + j] -= f * a[rank * cols + j];
                }
            }
            rank += 1;
        }
        rank
    }

    #[test]
    fn projection_has_full_rank_at_init() {
        for seed in 0..5 {
            let m = GenModel::new(GenConfig::default(), seed).unwrap();
            let w = m.cond_weight();
            let (r, c) = (w.shape()[0], w.shape()[1]);
            assert_eq!(rank(r, c, w.data()), r.min(c));
        }
        assert_eq!(rank(2, 2, &[1.0, 2.0, 2.0, 4.0]), 1);
        let m = small();
        assert_ne!(
            m.project_condition(&emb(5)).unwrap(),
            m.project_condition(&emb(6)).unwrap()
        );
    }
}
