use crate::error::Result;
use crate::numkit::layers::Conv2d;
use crate::numkit::{Graph, ParamStore, Real, Var};
use crate::rng;

/// Two-layer patch discriminator producing one logit per `4×4` patch.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub params: ParamStore,
    c1: Conv2d,
    c2: Conv2d,
}

impl Discriminator {
    pub fn new(width: usize, seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed, 0xD15C);
        let mut p = ParamStore::new();
        let c1 = Conv2d::new(&mut p, "disc.c1", 3, width, 4, 2, 1, &mut r)?;
        let c2 = Conv2d::new(&mut p, "disc.c2", width, 1, 4, 2, 1, &mut r)?;
        Ok(Self { params: p, c1, c2 })
    }

    pub fn logits<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.c1.forward(g, store, x)?;
        let h = g.leaky_relu(h, T::of_f64(0.2));
        self.c2.forward(g, store, h)
    }

    /// Logistic discriminator loss `mean softplus(−D(x)) + mean softplus(D(x̂))`.
    /// `fake` is detached, so no gradient reaches the generator.
    pub fn disc_loss<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        real: Var,
        fake: Var,
    ) -> Result<Var> {
        let fake = g.detach(fake);
        let lr = self.logits(g, store, real)?;
        let lf = self.logits(g, store, fake)?;
        let nr = g.scale(lr, -T::one());
        let sr = g.softplus(nr);
        let sf = g.softplus(lf);
        let a = g.mean(sr);
        let b = g.mean(sf);
        g.add(a, b)
    }

    /// Non-saturating generator term `mean −log σ(D(x̂))`.
    pub fn gen_loss<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        fake: Var,
    ) -> Result<Var> {
        let lf = self.logits(g, store, fake)?;
        let n = g.scale(lf, -T::one());
        let s = g.softplus(n);
        Ok(g.mean(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Tensor;

    #[test]
    fn zero_logits_give_two_ln_two() {
        let mut d = Discriminator::new(4, 0).unwrap();
        let ids: Vec<_> = d.params.ids().collect();
        for id in ids {
            d.params
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::from_fn([2, 3, 8, 8], |i| (i % 7) as f32 / 7.0));
        let l = d.disc_loss(&mut g, &d.params, x, x).unwrap();
        assert!((g.scalar(l) as f64 - 2.0 * 2f64.ln()).abs() < 1e-6);
        let lg = d.logits(&mut g, &d.params, x).unwrap();
        assert_eq!(g.shape(lg), &[2, 1, 2, 2]);
    }
}
