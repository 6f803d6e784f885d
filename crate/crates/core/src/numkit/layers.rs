//! Parameterised building blocks. Each layer only records the ids of its
//! tensors, so the same layer runs against an `f32` store or its `f64` cast.

use rand::Rng;

use crate::error::Result;

use super::graph::{Graph, Var};
use super::init;
use super::params::{ParamId, ParamStore};
use super::real::Real;

#[derive(Clone, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        din: usize,
        dout: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add(
                format!("{name}.w"),
                init::normal([din, dout], init::WEIGHT_STD, rng),
            )?,
            b: store.add(format!("{name}.b"), init::zeros([dout]))?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.dense(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::with_std(
            store,
            name,
            cin,
            cout,
            k,
            stride,
            pad,
            init::WEIGHT_STD,
            rng,
        )
    }

    /// Same as `new` with fan-in scaled weights, `std = sqrt(2 / fan_in)`.
    #[allow(clippy::too_many_arguments)]
    pub fn he<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan = (cin * k * k).max(1);
        Self::with_std(
            store,
            name,
            cin,
            cout,
            k,
            stride,
            pad,
            init::he_std(fan),
            rng,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn with_std<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add(
                format!("{name}.w"),
                init::normal([cout, cin, k, k], std, rng),
            )?,
            b: store.add(format!("{name}.b"), init::zeros([cout]))?,
            stride,
            pad,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::with_std(
            store,
            name,
            cin,
            cout,
            k,
            stride,
            pad,
            init::WEIGHT_STD,
            rng,
        )
    }

    /// Same as `new` with fan-in scaled weights, `std = sqrt(2 / fan_in)`.
    #[allow(clippy::too_many_arguments)]
    pub fn he<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan = (cin * k * k / (stride * stride).max(1)).max(1);
        Self::with_std(
            store,
            name,
            cin,
            cout,
            k,
            stride,
            pad,
            init::he_std(fan),
            rng,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn with_std<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add(
                format!("{name}.w"),
                init::normal([cin, cout, k, k], std, rng),
            )?,
            b: store.add(format!("{name}.b"), init::zeros([cout]))?,
            stride,
            pad,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv_transpose2d(x, w, Some(b), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), init::ones([d]))?,
            beta: store.add(format!("{name}.beta"), init::zeros([d]))?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta, Self::EPS)
    }
}
