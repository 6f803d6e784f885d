//! Tape of tensor operations with reverse-mode differentiation.
//!
//! A [`Graph`] is rebuilt for every forward pass. Each op appends a node that
//! owns its output buffer; [`Graph::backward`] walks the tape in reverse and
//! only materialises gradients for nodes that transitively depend on a
//! trainable parameter.

use crate::error::{dim_err, Error, Result};

use super::kernels::{self, col2im, gemm_nn, gemm_nt, gemm_tn, im2col, ConvGeom};
use super::params::{ParamId, ParamStore};
use super::real::{c, Real};
use super::tensor::{numel, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param {
        tag: u64,
        id: ParamId,
    },
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MulScalarVar(Var, Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Gelu(Var),
    Softplus(Var),
    Ln(Var),
    Exp(Var),
    Clamp(Var, T, T),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        n: usize,
        f: usize,
    },
    ConvT2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        // Geometry of the equivalent forward convolution from output to input.
        geom: ConvGeom,
        n: usize,
        cin: usize,
    },
    AvgPool2 {
        x: Var,
        n: usize,
        c: usize,
        h: usize,
        w: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: Vec<T>,
    },
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    SoftmaxRows(Var),
    L2NormRows {
        x: Var,
        norms: Vec<T>,
    },
    Mse(Var, Var),
    Mean(Var),
    Sum(Var),
    SumRows(Var),
    Reshape(Var),
    NchwToRows {
        x: Var,
        n: usize,
        c: usize,
        hw: usize,
    },
    RowsToNchw {
        x: Var,
        n: usize,
        c: usize,
        hw: usize,
    },
    StraightThrough(Var),
    PrependRows {
        prefix: Var,
        body: Var,
        batch: usize,
    },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss w.r.t. `v`; `None` when `v` does not depend on any
    /// trainable parameter (stop-gradient, constants, frozen tensors).
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// First element of `v`, typically a scalar loss.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].value.clone())
            .expect("node shape and value agree")
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    pub fn constant_data(&mut self, shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Var> {
        Ok(self.constant(Tensor::new(shape, data)?))
    }

    /// Binds a parameter. Frozen parameters enter the graph as constants.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let t = store.get(id);
        if store.is_frozen(id) {
            return self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false);
        }
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Param {
                tag: store.tag(),
                id,
            },
            true,
        )
    }

    /// Binds a parameter as a constant regardless of its frozen flag.
    pub fn frozen_param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let t = store.get(id);
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    /// Stop-gradient: a constant copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = &self.nodes[v.0];
        let (s, d) = (n.shape.clone(), n.value.clone());
        self.push(s, d, Op::Leaf, false)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return dim_err(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn mat_dims(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => dim_err(format!("{what}: expected a matrix, got shape {s:?}")),
        }
    }

    fn last_dim(&self, v: Var) -> usize {
        *self.shape(v).last().unwrap_or(&1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat_dims(a, "matmul lhs")?;
        let (k2, n) = self.mat_dims(b, "matmul rhs")?;
        if k != k2 {
            return dim_err(format!("matmul: inner dims {k} and {k2} disagree"));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nn(m, k, n, self.value(a), self.value(b), &mut out, false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, cdim) = self.mat_dims(a, "transpose")?;
        let src = self.value(a);
        let mut out = vec![T::zero(); r * cdim];
        for i in 0..r {
            for j in 0..cdim {
                out[j * r + i] = src[i * cdim + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(vec![cdim, r], out, Op::Transpose(a), rg))
    }

    fn zip_op(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `x[.., C] + b[C]`, broadcast over all leading dims.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let cdim = self.last_dim(x);
        if numel(self.shape(b)) != cdim {
            return dim_err(format!(
                "bias of shape {:?} for rows of width {cdim}",
                self.shape(b)
            ));
        }
        let bias = self.value(b);
        let out: Vec<T> = self
            .value(x)
            .chunks(cdim)
            .flat_map(|row| row.iter().zip(bias).map(|(&v, &bb)| v + bb))
            .collect();
        let rg = self.rg(x) || self.rg(b);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::AddRowBias(x, b), rg))
    }

    fn map_op(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let rg = self.rg(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op, rg)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.map_op(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        self.map_op(a, |x| x + s, Op::AddScalar(a))
    }

    /// Multiplies every element of `a` by the single element of `s`.
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Result<Var> {
        if numel(self.shape(s)) != 1 {
            return dim_err(format!("scalar factor of shape {:?}", self.shape(s)));
        }
        let sv = self.value(s)[0];
        let out = self.value(a).iter().map(|&x| x * sv).collect();
        let rg = self.rg(a) || self.rg(s);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::MulScalarVar(a, s), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map_op(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.map_op(
            a,
            |x| if x > T::zero() { x } else { x * slope },
            Op::LeakyRelu(a, slope),
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let (k, ca) = (c::<T>(GELU_K), c::<T>(GELU_A));
        let half = c::<T>(0.5);
        self.map_op(
            a,
            |x| half * x * (T::one() + (k * (x + ca * x * x * x)).tanh()),
            Op::Gelu(a),
        )
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map_op(a, softplus, Op::Softplus(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map_op(a, |x| x.ln(), Op::Ln(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map_op(a, |x| x.exp(), Op::Exp(a))
    }

    /// Elementwise clamp; gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        self.map_op(a, |x| x.max(lo).min(hi), Op::Clamp(a, lo, hi))
    }

    fn nchw(&self, v: Var, what: &str) -> Result<(usize, usize, usize, usize)> {
        match self.shape(v) {
            [n, c, h, w] => Ok((*n, *c, *h, *w)),
            s => dim_err(format!("{what}: expected N×C×H×W, got {s:?}")),
        }
    }

    /// Cross-correlation with zero padding. `x: [N,C,H,W]`, `w: [F,C,kh,kw]`,
    /// optional `b: [F]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (n, cin, h, wd) = self.nchw(x, "conv2d input")?;
        let (f, c2, kh, kw) = self.nchw(w, "conv2d kernel")?;
        if cin != c2 {
            return dim_err(format!(
                "conv2d: input has {cin} channels, kernel expects {c2}"
            ));
        }
        if let Some(b) = b {
            if numel(self.shape(b)) != f {
                return dim_err("conv2d: bias length must equal filter count");
            }
        }
        let geom = ConvGeom::new(cin, h, wd, kh, kw, stride, pad).ok_or_else(|| {
            Error::Dimension(format!(
                "conv2d: non-positive output for {h}×{wd} input, {kh}×{kw} kernel, stride {stride}, pad {pad}"
            ))
        })?;
        let (rows, cols) = (geom.col_rows(), geom.col_cols());
        let mut colbuf = vec![T::zero(); rows * cols];
        let mut out = vec![T::zero(); n * f * cols];
        let xin = self.value(x);
        let wv = self.value(w);
        let img = cin * h * wd;
        for i in 0..n {
            im2col(&geom, &xin[i * img..(i + 1) * img], &mut colbuf);
            gemm_nn(
                f,
                rows,
                cols,
                wv,
                &colbuf,
                &mut out[i * f * cols..(i + 1) * f * cols],
                false,
            );
        }
        if let Some(b) = b {
            let bv = self.value(b);
            for (ch, plane) in out.chunks_mut(cols).enumerate() {
                let bb = bv[ch % f];
                plane.iter_mut().for_each(|v| *v += bb);
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.map_or(false, |b| self.rg(b));
        Ok(self.push(
            vec![n, f, geom.oh, geom.ow],
            out,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                n,
                f,
            },
            rg,
        ))
    }

    /// Transposed convolution (adjoint of [`Graph::conv2d`] with the same
    /// stride and pad). `x: [N,Cin,H,W]`, `w: [Cin,Cout,kh,kw]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (n, cin, h, wd) = self.nchw(x, "conv_transpose2d input")?;
        let (c2, cout, kh, kw) = self.nchw(w, "conv_transpose2d kernel")?;
        if cin != c2 {
            return dim_err(format!(
                "conv_transpose2d: input has {cin} channels, kernel expects {c2}"
            ));
        }
        if stride == 0
            || (h - 1) * stride + kh < 2 * pad + 1
            || (wd - 1) * stride + kw < 2 * pad + 1
        {
            return dim_err("conv_transpose2d: non-positive output dims");
        }
        let oh = (h - 1) * stride + kh - 2 * pad;
        let ow = (wd - 1) * stride + kw - 2 * pad;
        let geom = ConvGeom::new(cout, oh, ow, kh, kw, stride, pad)
            .filter(|g| g.oh == h && g.ow == wd)
            .ok_or_else(|| Error::Dimension("conv_transpose2d: inconsistent geometry".into()))?;
        if let Some(b) = b {
            if numel(self.shape(b)) != cout {
                return dim_err("conv_transpose2d: bias length must equal output channels");
            }
        }
        let (rows, cols) = (geom.col_rows(), geom.col_cols());
        let mut colbuf = vec![T::zero(); rows * cols];
        let mut out = vec![T::zero(); n * cout * oh * ow];
        let xin = self.value(x);
        let wv = self.value(w);
        for i in 0..n {
            gemm_tn(
                rows,
                cin,
                cols,
                wv,
                &xin[i * cin * cols..(i + 1) * cin * cols],
                &mut colbuf,
                false,
            );
            col2im(
                &geom,
                &colbuf,
                &mut out[i * cout * oh * ow..(i + 1) * cout * oh * ow],
            );
        }
        if let Some(b) = b {
            let bv = self.value(b);
            for (ch, plane) in out.chunks_mut(oh * ow).enumerate() {
                let bb = bv[ch % cout];
                plane.iter_mut().for_each(|v| *v += bb);
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.map_or(false, |b| self.rg(b));
        Ok(self.push(
            vec![n, cout, oh, ow],
            out,
            Op::ConvT2d {
                x,
                w,
                b,
                geom,
                n,
                cin,
            },
            rg,
        ))
    }

    /// 2×2 average pooling with stride 2.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let (n, ch, h, w) = self.nchw(x, "avg_pool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return dim_err(format!("avg_pool2: odd spatial dims {h}×{w}"));
        }
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x);
        let q = c::<T>(0.25);
        let mut out = vec![T::zero(); n * ch * oh * ow];
        for p in 0..n * ch {
            for y in 0..oh {
                for xx in 0..ow {
                    let base = p * h * w;
                    let s = src[base + 2 * y * w + 2 * xx]
                        + src[base + 2 * y * w + 2 * xx + 1]
                        + src[base + (2 * y + 1) * w + 2 * xx]
                        + src[base + (2 * y + 1) * w + 2 * xx + 1];
                    out[p * oh * ow + y * ow + xx] = s * q;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            vec![n, ch, oh, ow],
            out,
            Op::AvgPool2 { x, n, c: ch, h, w },
            rg,
        ))
    }

    /// Normalises each row over the last dim, then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let d = self.last_dim(x);
        if numel(self.shape(gamma)) != d || numel(self.shape(beta)) != d {
            return dim_err("layer_norm: gamma/beta must match the last dim");
        }
        let eps = c::<T>(eps);
        let inv_d = T::one() / c::<T>(d as f64);
        let src = self.value(x);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let rows = src.len() / d;
        let mut xhat = vec![T::zero(); src.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let xh = (row[j] - mean) * rs;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * gv[j] + bv[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            shape,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Row lookup: `table[V×D]`, result `[ids.len()×D]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.mat_dims(table, "gather")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Index(format!(
                "row {bad} out of range for table with {v} rows"
            )));
        }
        let src = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            vec![ids.len(), d],
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Multi-head causal self-attention over `batch` sequences of length `seq`
    /// packed as rows of `q`, `k`, `v` (`[batch·seq × D]`). Position `i`
    /// attends to positions `0..=i` of its own sequence only.
    pub fn causal_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        seq: usize,
        heads: usize,
    ) -> Result<Var> {
        self.same_shape(q, k, "attention q/k")?;
        self.same_shape(q, v, "attention q/v")?;
        let (rows, d) = self.mat_dims(q, "attention")?;
        if rows != batch * seq || heads == 0 || d % heads != 0 {
            return dim_err(format!(
                "attention: {rows} rows of width {d} for batch {batch}, seq {seq}, heads {heads}"
            ));
        }
        let dh = d / heads;
        let scale = T::one() / c::<T>(dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![T::zero(); batch * heads * seq * seq];
        let mut out = vec![T::zero(); rows * d];
        let mut scores = vec![T::zero(); seq];
        for b in 0..batch {
            for h in 0..heads {
                let pbase = (b * heads + h) * seq * seq;
                for i in 0..seq {
                    let qi = &qv[(b * seq + i) * d + h * dh..(b * seq + i) * d + (h + 1) * dh];
                    let mut mx = T::neg_infinity();
                    for j in 0..=i {
                        let kj = &kv[(b * seq + j) * d + h * dh..(b * seq + j) * d + (h + 1) * dh];
                        let s = kernels::dot(qi, kj) * scale;
                        scores[j] = s;
                        mx = mx.max(s);
                    }
                    let mut z = T::zero();
                    for s in scores.iter_mut().take(i + 1) {
                        *s = (*s - mx).exp();
                        z += *s;
                    }
                    let o = &mut out[(b * seq + i) * d + h * dh..(b * seq + i) * d + (h + 1) * dh];
                    for j in 0..=i {
                        let p = scores[j] / z;
                        probs[pbase + i * seq + j] = p;
                        let vj = &vv[(b * seq + j) * d + h * dh..(b * seq + j) * d + (h + 1) * dh];
                        for (ov, &x) in o.iter_mut().zip(vj) {
                            *ov += p * x;
                        }
                    }
                }
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            vec![rows, d],
            out,
            Op::Attention {
                q,
                k,
                v,
                batch,
                seq,
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Mean over rows of `-log softmax(logits)[target]`, max-subtracted.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, vocab) = self.mat_dims(logits, "softmax_xent")?;
        if targets.len() != n {
            return dim_err(format!(
                "softmax_xent: {n} rows but {} targets",
                targets.len()
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= vocab) {
            return Err(Error::Index(format!(
                "target {bad} out of range for {vocab} classes"
            )));
        }
        let src = self.value(logits);
        let mut probs = vec![T::zero(); n * vocab];
        let mut total = T::zero();
        for r in 0..n {
            let row = &src[r * vocab..(r + 1) * vocab];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (p, &l) in probs[r * vocab..(r + 1) * vocab].iter_mut().zip(row) {
                *p = (l - mx).exp();
                z += *p;
            }
            probs[r * vocab..(r + 1) * vocab]
                .iter_mut()
                .for_each(|p| *p /= z);
            total += z.ln() + mx - row[targets[r]];
        }
        let loss = total / c::<T>(n as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Row-wise softmax over the last dim.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let d = self.last_dim(x);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(d) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::SoftmaxRows(x), rg)
    }

    /// Scales each row to unit L2 norm.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let d = self.last_dim(x);
        let floor = c::<T>(1e-12);
        let mut out = self.value(x).to_vec();
        let mut norms = Vec::with_capacity(out.len() / d.max(1));
        for row in out.chunks_mut(d) {
            let nrm = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(floor);
            row.iter_mut().for_each(|v| *v /= nrm);
            norms.push(nrm);
        }
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::L2NormRows { x, norms }, rg)
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse")?;
        let n = self.value(a).len();
        let s: T = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![1], vec![s / c::<T>(n as f64)], Op::Mse(a, b), rg))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s: T = self.value(a).iter().copied().sum();
        let rg = self.rg(a);
        self.push(vec![1], vec![s / c::<T>(n as f64)], Op::Mean(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).iter().copied().sum();
        let rg = self.rg(a);
        self.push(vec![1], vec![s], Op::Sum(a), rg)
    }

    /// Sums each row of `[N×C]` into `[N]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (n, d) = self.mat_dims(a, "sum_rows")?;
        let out = self
            .value(a)
            .chunks(d)
            .map(|r| r.iter().copied().sum())
            .collect();
        let rg = self.rg(a);
        Ok(self.push(vec![n], out, Op::SumRows(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        if numel(&shape) != self.value(a).len() {
            return dim_err(format!("cannot reshape {:?} to {shape:?}", self.shape(a)));
        }
        let data = self.value(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(shape, data, Op::Reshape(a), rg))
    }

    /// `[N,C,H,W]` → `[N·H·W, C]`, rows in (n, y, x) order.
    pub fn nchw_to_rows(&mut self, x: Var) -> Result<Var> {
        let (n, ch, h, w) = self.nchw(x, "nchw_to_rows")?;
        let hw = h * w;
        let src = self.value(x);
        let mut out = vec![T::zero(); src.len()];
        for i in 0..n {
            for cc in 0..ch {
                for p in 0..hw {
                    out[(i * hw + p) * ch + cc] = src[(i * ch + cc) * hw + p];
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            vec![n * hw, ch],
            out,
            Op::NchwToRows { x, n, c: ch, hw },
            rg,
        ))
    }

    /// Inverse of [`Graph::nchw_to_rows`].
    pub fn rows_to_nchw(&mut self, x: Var, n: usize, h: usize, w: usize) -> Result<Var> {
        let (rows, ch) = self.mat_dims(x, "rows_to_nchw")?;
        let hw = h * w;
        if rows != n * hw {
            return dim_err(format!("rows_to_nchw: {rows} rows for {n}×{h}×{w}"));
        }
        let src = self.value(x);
        let mut out = vec![T::zero(); src.len()];
        for i in 0..n {
            for p in 0..hw {
                for cc in 0..ch {
                    out[(i * ch + cc) * hw + p] = src[(i * hw + p) * ch + cc];
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            vec![n, ch, h, w],
            out,
            Op::RowsToNchw { x, n, c: ch, hw },
            rg,
        ))
    }

    /// Forward value `values`, backward gradient copied unchanged into `x`.
    pub fn straight_through(&mut self, x: Var, values: Vec<T>) -> Result<Var> {
        if values.len() != self.value(x).len() {
            return dim_err("straight_through: value length mismatch");
        }
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, values, Op::StraightThrough(x), rg))
    }

    /// Interleaves one prefix row ahead of each sequence's body rows:
    /// `prefix[B×D]`, `body[B·L×D]` → `[B·(L+1)×D]`.
    pub fn prepend_rows(&mut self, prefix: Var, body: Var, batch: usize) -> Result<Var> {
        let (pb, d) = self.mat_dims(prefix, "prepend_rows prefix")?;
        let (rows, d2) = self.mat_dims(body, "prepend_rows body")?;
        if pb != batch || d != d2 || batch == 0 || rows % batch != 0 {
            return dim_err("prepend_rows: inconsistent batch layout");
        }
        let len = rows / batch;
        let (pv, bv) = (self.value(prefix), self.value(body));
        let mut out = Vec::with_capacity((rows + batch) * d);
        for b in 0..batch {
            out.extend_from_slice(&pv[b * d..(b + 1) * d]);
            out.extend_from_slice(&bv[b * len * d..(b + 1) * len * d]);
        }
        let rg = self.rg(prefix) || self.rg(body);
        Ok(self.push(
            vec![rows + batch, d],
            out,
            Op::PrependRows {
                prefix,
                body,
                batch,
            },
            rg,
        ))
    }

    /// Affine dense layer `x·w + b`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row_bias(y, b)
    }

    /// True when every node value is finite.
    pub fn all_finite(&self) -> bool {
        self.nodes
            .iter()
            .all(|n| n.value.iter().all(|v| v.is_finite()))
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return dim_err(format!(
                "backward from non-scalar of shape {:?}",
                self.shape(loss)
            ));
        }
        if !self.value(loss)[0].is_finite() {
            return Err(Error::Numeric("loss is not finite".into()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.backprop(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Graph::backward`] and adds the gradients of every trainable
    /// leaf bound from `store` into the store's gradient buffers.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.backward(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param { tag, id } = node.op {
                if tag != store.tag() {
                    continue;
                }
                if let Some(g) = &grads.grads[i] {
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Numeric(format!(
                            "non-finite gradient for `{}`",
                            store.name(id)
                        )));
                    }
                    store.get_mut(id).accumulate_grad(g)?;
                }
            }
        }
        Ok(())
    }

    fn backprop(&self, i: usize, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if nodes[v.0].requires_grad {
                let n = nodes[v.0].value.len();
                let g = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
                f(g);
            }
        };
        let add_into = |g: &mut [T], src: &[T]| {
            for (a, &b) in g.iter_mut().zip(src) {
                *a += b;
            }
        };
        match &node.op {
            Op::Leaf | Op::Param { .. } => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let n = nodes[b.0].shape[1];
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, &mut |g| gemm_nt(m, n, k, gy, bv, g, true));
                acc(*b, &mut |g| gemm_tn(k, m, n, av, gy, g, true));
            }
            Op::Transpose(a) => {
                let (r, cdim) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                acc(*a, &mut |g| {
                    for i in 0..r {
                        for j in 0..cdim {
                            g[i * cdim + j] += gy[j * r + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |g| add_into(g, gy));
                acc(*b, &mut |g| add_into(g, gy));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| add_into(g, gy));
                acc(*b, &mut |g| {
                    for (x, &y) in g.iter_mut().zip(gy) {
                        *x -= y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, &mut |g| {
                    for ((x, &y), &o) in g.iter_mut().zip(gy).zip(bv) {
                        *x += y * o;
                    }
                });
                acc(*b, &mut |g| {
                    for ((x, &y), &o) in g.iter_mut().zip(gy).zip(av) {
                        *x += y * o;
                    }
                });
            }
            Op::AddRowBias(x, b) => {
                acc(*x, &mut |g| add_into(g, gy));
                let d = nodes[b.0].value.len();
                acc(*b, &mut |g| {
                    for row in gy.chunks(d) {
                        add_into(g, row);
                    }
                });
            }
            Op::Scale(a, s) => {
                acc(*a, &mut |g| {
                    for (x, &y) in g.iter_mut().zip(gy) {
                        *x += y * *s;
                    }
                });
            }
            Op::AddScalar(a) => acc(*a, &mut |g| add_into(g, gy)),
            Op::MulScalarVar(a, s) => {
                let sv = nodes[s.0].value[0];
                let av = &nodes[a.0].value;
                acc(*a, &mut |g| {
                    for (x, &y) in g.iter_mut().zip(gy) {
                        *x += y * sv;
                    }
                });
                acc(*s, &mut |g| {
                    g[0] += gy.iter().zip(av).map(|(&y, &x)| y * x).sum::<T>();
                });
            }
            Op::Relu(a) => {
                let av = &nodes[a.0].value;
                acc(*a, &mut |g| {
                    for ((x, &y), &v) in g.iter_mut().zip(gy).zip(av) {
                        if v > T::zero() {
                            *x += y;
                        }
                    }
                });
            }
            Op::LeakyRelu(a, slope) => {
                let av = &nodes[a.0].value;
                acc(*a, &mut |g| {
                    for ((x, &y), &v) in g.iter_mut().zip(gy).zip(av) {
                        *x += if v > T::zero() { y } else { y * *slope };
                    }
                });
            }
            Op::Gelu(a) => {
                let av = &nodes[a.0].value;
                let (k, ca) = (c::<T>(GELU_K), c::<T>(GELU_A));
                let half = c::<T>(0.5);
                let three = c::<T>(3.0);
                acc(*a, &mut |g| {
                    for ((x, &y), &v) in g.iter_mut().zip(gy).zip(av) {
                        let u = k * (v + ca * v * v * v);
                        let t = u.tanh();
                        let du = k * (T::one() + three * ca * v * v);
                        let d = half * (T::one() + t) + half * v * (T::one() - t * t) * du;
                        *x += y * d;
                    }
                });
            }
            Op::Softplus(a) => {
                let av = &nodes[a.0].value;
                acc(*a, &mut |g| {
                    for ((x, &y), &v) in g.iter_mut().zip(gy).zip(av) {
                        *x += y * sigmoid(v);
                    }
                });
            }
            Op::Ln(a) => {
                let av = &nodes[a.0].value;
                acc(*a, &mut |g| {
                    for ((x, &y), &v) in g.iter_mut().zip(gy).zip(av) {
                        *x += y / v;
                    }
                });
            }
            Op::Exp(a) => {
                let out = &node.value;
                acc(*a, &mut |g| {
                    for ((x, &y), &o) in g.iter_mut().zip(gy).zip(out) {
                        *x += y * o;
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let av = &nodes[a.0].value;
                acc(*a, &mut |g| {
                    for ((x, &y), &v) in g.iter_mut().zip(gy).zip(av) {
                        if v >= *lo && v <= *hi {
                            *x += y;
                        }
                    }
                });
            }
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                n,
                f,
            } => {
                let (rows, cols) = (geom.col_rows(), geom.col_cols());
                let img = geom.c * geom.h * geom.w;
                let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
                let mut colbuf = vec![T::zero(); rows * cols];
                if nodes[w.0].requires_grad {
                    acc(*w, &mut |g| {
                        for i in 0..*n {
                            im2col(geom, &xv[i * img..(i + 1) * img], &mut colbuf);
                            gemm_nt(
                                *f,
                                cols,
                                rows,
                                &gy[i * f * cols..(i + 1) * f * cols],
                                &colbuf,
                                g,
                                true,
                            );
                        }
                    });
                }
                acc(*x, &mut |g| {
                    let mut dcol = vec![T::zero(); rows * cols];
                    for i in 0..*n {
                        gemm_tn(
                            rows,
                            *f,
                            cols,
                            wv,
                            &gy[i * f * cols..(i + 1) * f * cols],
                            &mut dcol,
                            false,
                        );
                        col2im(geom, &dcol, &mut g[i * img..(i + 1) * img]);
                    }
                });
                if let Some(b) = b {
                    acc(*b, &mut |g| {
                        for (ch, plane) in gy.chunks(cols).enumerate() {
                            g[ch % f] += plane.iter().copied().sum::<T>();
                        }
                    });
                }
            }
            Op::ConvT2d {
                x,
                w,
                b,
                geom,
                n,
                cin,
            } => {
                let (rows, cols) = (geom.col_rows(), geom.col_cols());
                let out_img = geom.c * geom.h * geom.w;
                let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
                let mut dcol = vec![T::zero(); rows * cols];
                let need_x = nodes[x.0].requires_grad;
                let need_w = nodes[w.0].requires_grad;
                for i in 0..*n {
                    if !(need_x || need_w) {
                        break;
                    }
                    im2col(geom, &gy[i * out_img..(i + 1) * out_img], &mut dcol);
                    acc(*x, &mut |g| {
                        gemm_nn(
                            *cin,
                            rows,
                            cols,
                            wv,
                            &dcol,
                            &mut g[i * cin * cols..(i + 1) * cin * cols],
                            true,
                        );
                    });
                    acc(*w, &mut |g| {
                        gemm_nt(
                            *cin,
                            cols,
                            rows,
                            &xv[i * cin * cols..(i + 1) * cin * cols],
                            &dcol,
                            g,
                            true,
                        );
                    });
                }
                if let Some(b) = b {
                    let plane = geom.h * geom.w;
                    acc(*b, &mut |g| {
                        for (ch, p) in gy.chunks(plane).enumerate() {
                            g[ch % geom.c] += p.iter().copied().sum::<T>();
                        }
                    });
                }
            }
            Op::AvgPool2 { x, n, c: ch, h, w } => {
                let (oh, ow) = (h / 2, w / 2);
                let q = c::<T>(0.25);
                acc(*x, &mut |g| {
                    for p in 0..n * ch {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let d = gy[p * oh * ow + y * ow + xx] * q;
                                let base = p * h * w;
                                g[base + 2 * y * w + 2 * xx] += d;
                                g[base + 2 * y * w + 2 * xx + 1] += d;
                                g[base + (2 * y + 1) * w + 2 * xx] += d;
                                g[base + (2 * y + 1) * w + 2 * xx + 1] += d;
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = nodes[gamma.0].value.len();
                let gv = &nodes[gamma.0].value;
                let inv_d = T::one() / c::<T>(d as f64);
                acc(*gamma, &mut |g| {
                    for (gr, xr) in gy.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            g[j] += gr[j] * xr[j];
                        }
                    }
                });
                acc(*beta, &mut |g| {
                    for gr in gy.chunks(d) {
                        add_into(g, gr);
                    }
                });
                acc(*x, &mut |g| {
                    for (r, (gr, xr)) in gy.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..d {
                            let dxh = gr[j] * gv[j];
                            m1 += dxh;
                            m2 += dxh * xr[j];
                        }
                        m1 *= inv_d;
                        m2 *= inv_d;
                        for j in 0..d {
                            let dxh = gr[j] * gv[j];
                            g[r * d + j] += rstd[r] * (dxh - m1 - xr[j] * m2);
                        }
                    }
                });
            }
            Op::Gather { table, ids } => {
                let d = nodes[table.0].shape[1];
                acc(*table, &mut |g| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut g[id * d..(id + 1) * d], &gy[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                batch,
                seq,
                heads,
                probs,
            } => {
                let d = nodes[q.0].shape[1];
                let dh = d / heads;
                let scale = T::one() / c::<T>(dh as f64).sqrt();
                let (qv, kv, vv) = (&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value);
                let mut dq = vec![T::zero(); qv.len()];
                let mut dk = vec![T::zero(); qv.len()];
                let mut dv = vec![T::zero(); qv.len()];
                let mut dp = vec![T::zero(); *seq];
                let sl = |row: usize, h: usize| row * d + h * dh..row * d + (h + 1) * dh;
                for b in 0..*batch {
                    for h in 0..*heads {
                        let pbase = (b * heads + h) * seq * seq;
                        for i in 0..*seq {
                            let ri = b * seq + i;
                            let go = &gy[sl(ri, h)];
                            let mut dot_sum = T::zero();
                            for j in 0..=i {
                                let rj = b * seq + j;
                                let p = probs[pbase + i * seq + j];
                                dp[j] = kernels::dot(go, &vv[sl(rj, h)]);
                                dot_sum += p * dp[j];
                                let dvj = &mut dv[sl(rj, h)];
                                for (a, &gval) in dvj.iter_mut().zip(go) {
                                    *a += p * gval;
                                }
                            }
                            for j in 0..=i {
                                let rj = b * seq + j;
                                let p = probs[pbase + i * seq + j];
                                let ds = p * (dp[j] - dot_sum) * scale;
                                if ds == T::zero() {
                                    continue;
                                }
                                let (qs, ks) = (sl(ri, h), sl(rj, h));
                                for t in 0..dh {
                                    dq[qs.start + t] += ds * kv[ks.start + t];
                                    dk[ks.start + t] += ds * qv[qs.start + t];
                                }
                            }
                        }
                    }
                }
                acc(*q, &mut |g| add_into(g, &dq));
                acc(*k, &mut |g| add_into(g, &dk));
                acc(*v, &mut |g| add_into(g, &dv));
            }
            Op::SoftmaxXent {
                logits,
                targets,
                probs,
            } => {
                let vocab = nodes[logits.0].shape[1];
                let scale = gy[0] / c::<T>(targets.len() as f64);
                acc(*logits, &mut |g| {
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..vocab {
                            let mut p = probs[r * vocab + j];
                            if j == t {
                                p -= T::one();
                            }
                            g[r * vocab + j] += p * scale;
                        }
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let d = *node.shape.last().unwrap_or(&1);
                let out = &node.value;
                acc(*x, &mut |g| {
                    for ((gr, yr), dst) in gy.chunks(d).zip(out.chunks(d)).zip(g.chunks_mut(d)) {
                        let s: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for j in 0..d {
                            dst[j] += yr[j] * (gr[j] - s);
                        }
                    }
                });
            }
            Op::L2NormRows { x, norms } => {
                let d = *node.shape.last().unwrap_or(&1);
                let out = &node.value;
                acc(*x, &mut |g| {
                    for (r, ((gr, yr), dst)) in gy
                        .chunks(d)
                        .zip(out.chunks(d))
                        .zip(g.chunks_mut(d))
                        .enumerate()
                    {
                        let s: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for j in 0..d {
                            dst[j] += (gr[j] - yr[j] * s) / norms[r];
                        }
                    }
                });
            }
            Op::Mse(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let k2 = c::<T>(2.0) * gy[0] / c::<T>(av.len() as f64);
                acc(*a, &mut |g| {
                    for ((x, &p), &q) in g.iter_mut().zip(av).zip(bv) {
                        *x += k2 * (p - q);
                    }
                });
                acc(*b, &mut |g| {
                    for ((x, &p), &q) in g.iter_mut().zip(av).zip(bv) {
                        *x -= k2 * (p - q);
                    }
                });
            }
            Op::Mean(a) => {
                let n = nodes[a.0].value.len();
                let d = gy[0] / c::<T>(n as f64);
                acc(*a, &mut |g| g.iter_mut().for_each(|x| *x += d));
            }
            Op::Sum(a) => {
                let d = gy[0];
                acc(*a, &mut |g| g.iter_mut().for_each(|x| *x += d));
            }
            Op::SumRows(a) => {
                let d = nodes[a.0].shape[1];
                acc(*a, &mut |g| {
                    for (r, row) in g.chunks_mut(d).enumerate() {
                        row.iter_mut().for_each(|x| *x += gy[r]);
                    }
                });
            }
            Op::Reshape(a) | Op::StraightThrough(a) => acc(*a, &mut |g| add_into(g, gy)),
            Op::NchwToRows { x, n, c: ch, hw } => {
                acc(*x, &mut |g| {
                    for i in 0..*n {
                        for cc in 0..*ch {
                            for p in 0..*hw {
                                g[(i * ch + cc) * hw + p] += gy[(i * hw + p) * ch + cc];
                            }
                        }
                    }
                });
            }
            Op::RowsToNchw { x, n, c: ch, hw } => {
                acc(*x, &mut |g| {
                    for i in 0..*n {
                        for p in 0..*hw {
                            for cc in 0..*ch {
                                g[(i * hw + p) * ch + cc] += gy[(i * ch + cc) * hw + p];
                            }
                        }
                    }
                });
            }
            Op::PrependRows {
                prefix,
                body,
                batch,
            } => {
                let d = nodes[prefix.0].shape[1];
                let len = nodes[body.0].shape[0] / batch;
                acc(*prefix, &mut |g| {
                    for b in 0..*batch {
                        let src = b * (len + 1) * d;
                        add_into(&mut g[b * d..(b + 1) * d], &gy[src..src + d]);
                    }
                });
                acc(*body, &mut |g| {
                    for b in 0..*batch {
                        let src = (b * (len + 1) + 1) * d;
                        add_into(
                            &mut g[b * len * d..(b + 1) * len * d],
                            &gy[src..src + len * d],
                        );
                    }
                });
            }
        }
    }
}
