use crate::error::{Error, Result};
use crate::numkit::layers::{Conv2d, ConvTranspose2d};
use crate::numkit::{init, Graph, ParamId, ParamStore, Real, Var};
use crate::rng;
use crate::synthdata::Image;

use super::{nearest_codes, quantize, LatentGrid, TokenSequence, VqLoss};

/// Full-scale codebook size.
pub const FULL_SCALE_K: usize = 16384;
/// Full-scale code dimension.
pub const FULL_SCALE_DIM_Z: usize = 256;
/// Full-scale compression factor.
pub const FULL_SCALE_F: usize = 16;
/// Full-scale codec learning rate.
pub const FULL_SCALE_VQ_LR: f64 = 4.5e-6;
/// Full-scale discriminator start step.
pub const FULL_SCALE_GAN_WARMUP: usize = 25_000;

#[derive(Clone, Debug, PartialEq)]
pub struct VqConfig {
    pub side: usize,
    pub k: usize,
    pub dim_z: usize,
    /// Spatial compression factor (a power of two).
    pub f: usize,
    pub width: usize,
    pub beta: f64,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub gan: bool,
    pub warmup: usize,
    pub adv_weight: f64,
    pub disc_width: usize,
    /// Dead codes are re-seeded every this many steps (0 disables).
    pub revive_every: usize,
}

impl Default for VqConfig {
    fn default() -> Self {
        Self {
            side: 32,
            k: 128,
            dim_z: 16,
            f: 4,
            width: 32,
            beta: 1.0,
            steps: 1000,
            lr: 1e-3,
            batch_size: 16,
            gan: false,
            warmup: 500,
            adv_weight: 0.1,
            disc_width: 16,
            revive_every: 200,
        }
    }
}

impl VqConfig {
    pub fn validate(&self) -> Result<()> {
        if self.f < 2 || !self.f.is_power_of_two() {
            return Err(Error::Config(format!(
                "vq.f must be a power of two ≥ 2, got {}",
                self.f
            )));
        }
        if self.side == 0 || self.side % self.f != 0 {
            return Err(Error::Config(format!(
                "image side {} is not divisible by compression factor {}",
                self.side, self.f
            )));
        }
        if self.k < 2 || self.k > u16::MAX as usize + 1 {
            return Err(Error::Config(format!(
                "vq.k must be in 2..=65536, got {}",
                self.k
            )));
        }
        for (name, v) in [
            ("dim_z", self.dim_z),
            ("width", self.width),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("vq.{name} must be positive")));
            }
        }
        if self.gan && (self.disc_width == 0 || self.side % 4 != 0) {
            return Err(Error::Config(
                "discriminator needs disc_width > 0 and side divisible by 4".into(),
            ));
        }
        if !(self.lr > 0.0) || !(self.beta >= 0.0) || !(self.adv_weight >= 0.0) {
            return Err(Error::Config(
                "vq.lr must be positive; beta and adv_weight non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Latent grid side.
    pub fn grid(&self) -> usize {
        self.side / self.f
    }

    pub fn tokens_per_image(&self) -> usize {
        self.grid() * self.grid()
    }
}

/// Graph nodes of the three quadratic terms and their sum.
#[derive(Clone, Copy, Debug)]
pub struct VqLossVars {
    pub recon: Var,
    pub codebook: Var,
    pub commitment: Var,
    pub total: Var,
}

impl VqLossVars {
    pub fn values<T: Real>(&self, g: &Graph<T>) -> VqLoss {
        let v = |x: Var| g.scalar(x).as_f64() as f32;
        VqLoss {
            recon: v(self.recon),
            codebook: v(self.codebook),
            commitment: v(self.commitment),
            adversarial: 0.0,
            total: v(self.total),
        }
    }
}

/// `‖x−x̂‖² + ‖sg[ẑ]−z_q‖² + β‖sg[z_q]−ẑ‖²`, each a mean over elements. The
/// second term only reaches the codebook, the third only the encoder.
pub fn vq_loss_terms<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    x_hat: Var,
    z_e: Var,
    z_q: Var,
    beta: f64,
) -> Result<VqLossVars> {
    let ze = g.detach(z_e);
    let zq = g.detach(z_q);
    loss_terms(g, x, x_hat, z_e, z_q, ze, zq, beta)
}

/// The loss with the stopped operands supplied by the caller.
#[allow(clippy::too_many_arguments)]
fn loss_terms<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    x_hat: Var,
    z_e: Var,
    z_q: Var,
    ze_sg: Var,
    zq_sg: Var,
    beta: f64,
) -> Result<VqLossVars> {
    let recon = g.mse(x_hat, x)?;
    let codebook = g.mse(ze_sg, z_q)?;
    let commit = g.mse(zq_sg, z_e)?;
    let commitment = g.scale(commit, T::of_f64(beta));
    let s = g.add(recon, codebook)?;
    let total = g.add(s, commitment)?;
    Ok(VqLossVars {
        recon,
        codebook,
        commitment,
        total,
    })
}

/// Values of one forward pass that the straight-through loss treats as
/// constants: the code assignment and the stopped encoder and codebook
/// outputs. Re-evaluating the loss with these held fixed gives a smooth
/// function whose gradient at the anchor equals the straight-through
/// gradient, which finite differences can then verify.
#[derive(Clone, Debug, PartialEq)]
pub struct VqAnchor<T> {
    pub codes: Vec<usize>,
    pub z_e: Vec<T>,
    pub z_q: Vec<T>,
}

impl<T: Real> VqAnchor<T> {
    pub fn capture(g: &Graph<T>, fwd: &VqForward) -> Self {
        Self {
            codes: fwd.codes.clone(),
            z_e: g.value(fwd.z_e).to_vec(),
            z_q: g.value(fwd.z_q).to_vec(),
        }
    }
}

/// Nodes of one training forward pass.
#[derive(Clone, Debug)]
pub struct VqForward {
    /// Decoder output before clamping, `[N,3,S,S]`.
    pub x_hat: Var,
    /// Encoder outputs as rows, `[N·h·w, dim_z]`.
    pub z_e: Var,
    /// Selected codebook rows, `[N·h·w, dim_z]`.
    pub z_q: Var,
    /// Decoder input rows: `z_q` values carrying `z_e` gradients.
    pub z_st: Var,
    pub codes: Vec<usize>,
    pub loss: VqLossVars,
}

#[derive(Clone, Debug)]
pub struct VqCodec {
    pub cfg: VqConfig,
    pub params: ParamStore,
    enc: Vec<Conv2d>,
    codebook: ParamId,
    dec_in: Vec<Conv2d>,
    dec_up: Vec<ConvTranspose2d>,
    dec_out: Conv2d,
}

impl VqCodec {
    pub fn new(cfg: VqConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::stream(seed, 0x5EC0);
        let mut p = ParamStore::new();
        let c = cfg.width;
        let downs = cfg.f.trailing_zeros() as usize;
        let mut enc = vec![Conv2d::he(&mut p, "enc.in", 3, c, 3, 1, 1, &mut r)?];
        for i in 0..downs {
            enc.push(Conv2d::he(
                &mut p,
                &format!("enc.down{i}"),
                c,
                c,
                4,
                2,
                1,
                &mut r,
            )?);
        }
        enc.push(Conv2d::he(&mut p, "enc.mid", c, c, 3, 1, 1, &mut r)?);
        enc.push(Conv2d::he(
            &mut p, "enc.out", c, cfg.dim_z, 1, 1, 0, &mut r,
        )?);
        let codebook = p.add(
            "codebook",
            init::normal([cfg.k, cfg.dim_z], init::WEIGHT_STD, &mut r),
        )?;
        let dec_in = vec![
            Conv2d::he(&mut p, "dec.in", cfg.dim_z, c, 3, 1, 1, &mut r)?,
            Conv2d::he(&mut p, "dec.mid", c, c, 3, 1, 1, &mut r)?,
        ];
        let mut dec_up = Vec::with_capacity(downs);
        for i in 0..downs {
            dec_up.push(ConvTranspose2d::he(
                &mut p,
                &format!("dec.up{i}"),
                c,
                c,
                4,
                2,
                1,
                &mut r,
            )?);
        }
        let dec_out = Conv2d::he(&mut p, "dec.out", c, 3, 3, 1, 1, &mut r)?;
        Ok(Self {
            cfg,
            params: p,
            enc,
            codebook,
            dec_in,
            dec_up,
            dec_out,
        })
    }

    pub fn from_params(cfg: VqConfig, params: &ParamStore) -> Result<Self> {
        let mut m = Self::new(cfg, 0)?;
        m.params.assign_from(params)?;
        Ok(m)
    }

    pub fn codebook_id(&self) -> ParamId {
        self.codebook
    }

    pub fn codebook(&self) -> &[f32] {
        self.params.get(self.codebook).data()
    }

    pub fn is_frozen(&self) -> bool {
        self.params.all_frozen()
    }

    fn check_images(&self, shape: &[usize]) -> Result<()> {
        let s = self.cfg.side;
        if shape.len() != 4 || shape[1] != 3 || shape[2] != s || shape[3] != s {
            return crate::error::dim_err(format!(
                "codec expects N×3×{s}×{s} images, got {shape:?}"
            ));
        }
        Ok(())
    }

    /// Encoder `E`: `[N,3,S,S]` → `[N,dim_z,S/f,S/f]`.
    pub fn encode_graph<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        self.check_images(g.shape(x))?;
        let mut h = x;
        let last = self.enc.len() - 1;
        for (i, layer) in self.enc.iter().enumerate() {
            h = layer.forward(g, store, h)?;
            if i != last {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    /// Decoder `G` on a latent map `[N,dim_z,h,w]`, unclamped.
    pub fn decode_graph<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        z: Var,
    ) -> Result<Var> {
        let mut h = z;
        for layer in &self.dec_in {
            h = layer.forward(g, store, h)?;
            h = g.relu(h);
        }
        for layer in &self.dec_up {
            h = layer.forward(g, store, h)?;
            h = g.relu(h);
        }
        self.dec_out.forward(g, store, h)
    }

    /// Decoder applied to latent rows `[n·h·w, dim_z]`, clamped to `[0,1]`.
    pub fn decode_rows_graph<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        rows: Var,
        n: usize,
    ) -> Result<Var> {
        let gs = self.cfg.grid();
        let z = g.rows_to_nchw(rows, n, gs, gs)?;
        let x = self.decode_graph(g, store, z)?;
        Ok(g.clamp(x, T::zero(), T::one()))
    }

    /// Full stage-one forward: encode, quantize with straight-through
    /// gradients, decode, and the loss terms.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<VqForward> {
        self.forward_impl(g, store, x, None)
    }

    /// [`VqCodec::forward`] with codes and stopped values taken from
    /// `anchor` instead of the current pass.
    pub fn forward_anchored<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        anchor: &VqAnchor<T>,
    ) -> Result<VqForward> {
        self.forward_impl(g, store, x, Some(anchor))
    }

    fn forward_impl<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        anchor: Option<&VqAnchor<T>>,
    ) -> Result<VqForward> {
        let n = g.shape(x)[0];
        let z = self.encode_graph(g, store, x)?;
        let z_e = g.nchw_to_rows(z)?;
        let cb = g.param(store, self.codebook);
        let codes = match anchor {
            Some(a) => a.codes.clone(),
            None => nearest_codes(g.value(z_e), g.value(cb), self.cfg.dim_z),
        };
        let z_q = g.gather(cb, &codes)?;
        let rows = g.shape(z_e).to_vec();
        let (st, ze_sg, zq_sg) = match anchor {
            None => {
                let st = g.straight_through(z_e, g.value(z_q).to_vec())?;
                (st, g.detach(z_e), g.detach(z_q))
            }
            Some(a) => {
                if a.z_e.len() != g.value(z_e).len() || a.z_q.len() != a.z_e.len() {
                    return crate::error::dim_err("anchor does not match this batch");
                }
                let offset: Vec<T> = a.z_q.iter().zip(&a.z_e).map(|(&q, &e)| q - e).collect();
                let off = g.constant_data(rows.clone(), offset)?;
                let st = g.add(z_e, off)?;
                let ze = g.constant_data(rows.clone(), a.z_e.clone())?;
                let zq = g.constant_data(rows, a.z_q.clone())?;
                (st, ze, zq)
            }
        };
        let gs = self.cfg.grid();
        let zin = g.rows_to_nchw(st, n, gs, gs)?;
        let x_hat = self.decode_graph(g, store, zin)?;
        let loss = loss_terms(g, x, x_hat, z_e, z_q, ze_sg, zq_sg, self.cfg.beta)?;
        Ok(VqForward {
            x_hat,
            z_e,
            z_q,
            z_st: st,
            codes,
            loss,
        })
    }

    pub fn encode_latent(&self, image: &Image) -> Result<LatentGrid> {
        let mut g = Graph::<f32>::new();
        let x = g.constant(image.to_tensor());
        let z = self.encode_graph(&mut g, &self.params, x)?;
        let gs = self.cfg.grid();
        Ok(LatentGrid {
            dim_z: self.cfg.dim_z,
            h: gs,
            w: gs,
            data: g.value(z).to_vec(),
        })
    }

    pub fn tokenize(&self, image: &Image) -> Result<TokenSequence> {
        Ok(quantize(&self.encode_latent(image)?, self.codebook())?.0)
    }

    pub fn tokenize_batch(&self, images: &[&Image]) -> Result<Vec<TokenSequence>> {
        let mut out = Vec::with_capacity(images.len());
        let gs = self.cfg.grid();
        for chunk in images.chunks(32) {
            let mut g = Graph::<f32>::new();
            let x = g.constant(Image::batch(chunk)?);
            let z = self.encode_graph(&mut g, &self.params, x)?;
            let rows = g.nchw_to_rows(z)?;
            let codes = nearest_codes(g.value(rows), self.codebook(), self.cfg.dim_z);
            for c in codes.chunks(gs * gs) {
                out.push(TokenSequence::new(gs, gs, c.to_vec())?);
            }
        }
        Ok(out)
    }

    fn check_tokens(&self, t: &TokenSequence) -> Result<()> {
        let gs = self.cfg.grid();
        if t.h != gs || t.w != gs || t.ids.len() != gs * gs {
            return crate::error::dim_err(format!(
                "expected a {gs}×{gs} token grid, got {}×{}",
                t.h, t.w
            ));
        }
        if let Some(&bad) = t.ids.iter().find(|&&i| i >= self.cfg.k) {
            return Err(Error::Token(format!(
                "token {bad} outside codebook of {}",
                self.cfg.k
            )));
        }
        Ok(())
    }

    /// `Î = G(q(s))`, clamped to `[0,1]`.
    pub fn decode(&self, tokens: &TokenSequence) -> Result<Image> {
        Ok(self.decode_batch(std::slice::from_ref(tokens))?.remove(0))
    }

    pub fn decode_batch(&self, seqs: &[TokenSequence]) -> Result<Vec<Image>> {
        let mut ids = Vec::new();
        for t in seqs {
            self.check_tokens(t)?;
            ids.extend_from_slice(&t.ids);
        }
        let mut g = Graph::<f32>::new();
        let cb = g.param(&self.params, self.codebook);
        let rows = g.gather(cb, &ids)?;
        let x = self.decode_rows_graph(&mut g, &self.params, rows, seqs.len())?;
        let s = self.cfg.side;
        g.value(x)
            .chunks(3 * s * s)
            .map(|c| Image::from_data(s, c.to_vec()))
            .collect()
    }

    /// Decode of the tokenization of `image`.
    pub fn reconstruct(&self, image: &Image) -> Result<Image> {
        self.decode(&self.tokenize(image)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{render, SceneSpec};

    fn tiny() -> VqCodec {
        VqCodec::new(
            VqConfig {
                width: 8,
                k: 16,
                ..Default::default()
            },
            2,
        )
        .unwrap()
    }

    #[test]
    fn shapes() {
        let m = tiny();
        let img = render(&SceneSpec::from_id(3).unwrap(), 32);
        let z = m.encode_latent(&img).unwrap();
        assert_eq!((z.dim_z, z.h, z.w), (16, 8, 8));
        let t = m.tokenize(&img).unwrap();
        assert_eq!(t.ids.len(), 64);
        let out = m.decode(&t).unwrap();
        assert_eq!(out.side(), 32);
        assert!(out.in_unit_range());
        assert_eq!(out, m.decode(&t).unwrap());
        assert_eq!(z, m.encode_latent(&img).unwrap());
    }

    #[test]
    fn bad_configs() {
        for cfg in [
            VqConfig {
                side: 30,
                ..Default::default()
            },
            VqConfig {
                f: 3,
                ..Default::default()
            },
            VqConfig {
                k: 1,
                ..Default::default()
            },
        ] {
            assert!(matches!(VqCodec::new(cfg, 0), Err(Error::Config(_))));
        }
    }

    #[test]
    fn bad_tokens() {
        let m = tiny();
        let t = TokenSequence::new(8, 8, vec![16; 64]).unwrap();
        assert!(matches!(m.decode(&t), Err(Error::Token(_))));
        let t = TokenSequence::new(4, 4, vec![0; 16]).unwrap();
        assert!(matches!(m.decode(&t), Err(Error::Dimension(_))));
    }

    #[test]
    fn batch_tokenize_matches_single() {
        let m = tiny();
        let imgs: Vec<Image> = SceneSpec::all()
            .step_by(20)
            .map(|s| render(&s, 32))
            .collect();
        let refs: Vec<&Image> = imgs.iter().collect();
        let batch = m.tokenize_batch(&refs).unwrap();
        for (img, t) in imgs.iter().zip(&batch) {
            assert_eq!(&m.tokenize(img).unwrap(), t);
        }
    }

    #[test]
    fn toy_loss_value() {
        let mut g = Graph::<f64>::new();
        let x = g.constant_data([1], vec![1.0]).unwrap();
        let xh = g.constant_data([1], vec![0.5]).unwrap();
        let ze = g.constant_data([1, 2], vec![1.0, 0.0]).unwrap();
        let zq = g.constant_data([1, 2], vec![0.0, 0.0]).unwrap();
        let l = vq_loss_terms(&mut g, x, xh, ze, zq, 1.0).unwrap();
        // (1-0.5)^2 = 0.25; ((1-0)^2 + 0)/2 = 0.5 for each latent term.
        assert!((g.scalar(l.total) - 1.25).abs() < 1e-15);
        let mut g = Graph::<f64>::new();
        let x = g.constant_data([2], vec![0.3, 0.7]).unwrap();
        let z = g.constant_data([1, 2], vec![0.1, -0.2]).unwrap();
        let l = vq_loss_terms(&mut g, x, x, z, z, 1.0).unwrap();
        assert_eq!(g.scalar(l.total), 0.0);
    }
}
