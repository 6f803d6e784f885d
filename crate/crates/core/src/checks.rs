//! Finite-difference gradient verification of every differentiable op, each
//! layer type, and each training objective, run in `f64` on small inputs.

use rand::Rng as _;

use crate::clipkit::{info_nce_graph, ClipConfig, ClipModel};
use crate::congen::{gen_loss, GenBatch, GenConfig, GenExample, GenModel};
use crate::error::Result;
use crate::numkit::layers::{Conv2d, ConvTranspose2d, Dense, LayerNorm};
use crate::numkit::{grad_check_sampled, init, GradCheckReport, Graph, ParamStore, Tensor, Var};
use crate::rng;
use crate::synthdata::{render, CaptionTokens, Image, SceneSpec, Vocab};
use crate::vqcodec::{Discriminator, TokenSequence, VqAnchor, VqCodec, VqConfig};

/// Central-difference step.
pub const FD_EPS: f64 = 1e-6;
/// Coordinates probed per tensor.
pub const PROBES_PER_TENSOR: usize = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCase {
    pub name: &'static str,
    pub seed: u64,
    pub report: GradCheckReport,
}

type Objective<'a> = Box<dyn Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var> + 'a>;

/// Contracts `y` with fixed pseudo-random weights so every output element
/// reaches the scalar objective with a distinct coefficient.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let mut r = rng::stream(seed, 0x9807);
    let w = Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0));
    let c = g.constant(w);
    let m = g.mul(y, c)?;
    Ok(g.sum(m))
}

fn store(seed: u64, tensors: &[(&str, &[usize], f64)]) -> ParamStore<f64> {
    let mut r = rng::stream(seed, 0x5702);
    let mut s = ParamStore::new();
    for (name, shape, std) in tensors {
        s.add(*name, init::normal(shape.to_vec(), *std, &mut r))
            .expect("unique names");
    }
    s.cast()
}

fn id(s: &ParamStore<f64>, name: &str) -> crate::numkit::ParamId {
    s.id(name).expect("known tensor")
}

struct Case<'a> {
    name: &'static str,
    store: ParamStore<f64>,
    f: Objective<'a>,
}

fn op_cases(seed: u64) -> Vec<Case<'static>> {
    let mut cases: Vec<Case<'static>> = Vec::new();
    let mut unary =
        |name: &'static str, shift: f64, op: fn(&mut Graph<f64>, Var) -> Result<Var>| {
            let s = store(seed, &[("x", &[3, 5], 1.0)]);
            let x = id(&s, "x");
            cases.push(Case {
                name,
                store: s,
                f: Box::new(move |g, st| {
                    let v = g.param(st, x);
                    let v = g.add_scalar(v, shift);
                    let y = op(g, v)?;
                    project(g, y, seed)
                }),
            });
        };
    unary("relu", 0.0, |g, v| Ok(g.relu(v)));
    unary("leaky_relu", 0.0, |g, v| Ok(g.leaky_relu(v, 0.2)));
    unary("gelu", 0.0, |g, v| Ok(g.gelu(v)));
    unary("softplus", 0.0, |g, v| Ok(g.softplus(v)));
    unary("exp", 0.0, |g, v| Ok(g.exp(v)));
    unary("ln", 4.0, |g, v| Ok(g.ln(v)));
    unary("clamp", 0.0, |g, v| Ok(g.clamp(v, -0.5, 0.7)));
    unary("scale_add_scalar", 0.0, |g, v| {
        let y = g.scale(v, 2.5);
        Ok(g.add_scalar(y, -1.0))
    });
    unary("transpose", 0.0, |g, v| g.transpose(v));
    unary("softmax_rows", 0.0, |g, v| Ok(g.softmax_rows(v)));
    unary("l2_normalize_rows", 0.0, |g, v| Ok(g.l2_normalize_rows(v)));
    unary("mean", 0.0, |g, v| Ok(g.mean(v)));
    unary("sum_rows", 0.0, |g, v| g.sum_rows(v));
    unary("reshape", 0.0, |g, v| g.reshape(v, [5, 3]));
    unary("straight_through", 0.0, |g, v| {
        // Forward values equal the input, so the true derivative is the
        // identity the estimator passes back.
        let vals = g.value(v).to_vec();
        let y = g.straight_through(v, vals)?;
        g.mul(y, v)
    });

    let mut binary = |name: &'static str,
                      a: &'static [usize],
                      b: &'static [usize],
                      op: fn(&mut Graph<f64>, Var, Var) -> Result<Var>| {
        let s = store(seed, &[("a", a, 1.0), ("b", b, 1.0)]);
        let (ia, ib) = (id(&s, "a"), id(&s, "b"));
        cases.push(Case {
            name,
            store: s,
            f: Box::new(move |g, st| {
                let va = g.param(st, ia);
                let vb = g.param(st, ib);
                let y = op(g, va, vb)?;
                project(g, y, seed)
            }),
        });
    };
    binary("matmul", &[3, 4], &[4, 5], |g, a, b| g.matmul(a, b));
    binary("add", &[3, 4], &[3, 4], |g, a, b| g.add(a, b));
    binary("sub", &[3, 4], &[3, 4], |g, a, b| g.sub(a, b));
    binary("mul", &[3, 4], &[3, 4], |g, a, b| g.mul(a, b));
    binary("add_row_bias", &[3, 4], &[4], |g, a, b| {
        g.add_row_bias(a, b)
    });
    binary("mul_scalar_var", &[3, 4], &[1], |g, a, b| {
        g.mul_scalar_var(a, b)
    });
    binary("mse", &[3, 4], &[3, 4], |g, a, b| g.mse(a, b));
    binary("gather", &[5, 3], &[1], |g, a, b| {
        let rows = g.gather(a, &[4, 0, 4, 2])?;
        g.mul_scalar_var(rows, b)
    });
    binary("prepend_rows", &[2, 3], &[6, 3], |g, a, b| {
        g.prepend_rows(a, b, 2)
    });
    binary("softmax_xent", &[4, 6], &[1], |g, a, b| {
        let l = g.mul_scalar_var(a, b)?;
        g.softmax_xent(l, &[5, 0, 2, 2])
    });
    binary("conv2d", &[2, 3, 6, 6], &[4, 3, 3, 3], |g, x, w| {
        g.conv2d(x, w, None, 2, 1)
    });
    binary(
        "conv_transpose2d",
        &[2, 3, 3, 3],
        &[3, 2, 4, 4],
        |g, x, w| g.conv_transpose2d(x, w, None, 2, 1),
    );
    binary("nchw_rows_round_trip", &[2, 3, 2, 2], &[8, 3], |g, x, r| {
        let rows = g.nchw_to_rows(x)?;
        let rows = g.mul(rows, r)?;
        g.rows_to_nchw(rows, 2, 2, 2)
    });
    binary("avg_pool2", &[2, 3, 4, 4], &[1], |g, x, s| {
        let p = g.avg_pool2(x)?;
        g.mul_scalar_var(p, s)
    });

    {
        let s = store(
            seed,
            &[
                ("x", &[3, 6], 1.0),
                ("gamma", &[6], 1.0),
                ("beta", &[6], 1.0),
            ],
        );
        let (x, ga, be) = (id(&s, "x"), id(&s, "gamma"), id(&s, "beta"));
        cases.push(Case {
            name: "layer_norm",
            store: s,
            f: Box::new(move |g, st| {
                let (vx, vg, vb) = (g.param(st, x), g.param(st, ga), g.param(st, be));
                let y = g.layer_norm(vx, vg, vb, 1e-5)?;
                project(g, y, seed)
            }),
        });
    }
    {
        let s = store(
            seed,
            &[
                ("q", &[8, 4], 1.0),
                ("k", &[8, 4], 1.0),
                ("v", &[8, 4], 1.0),
            ],
        );
        let (q, k, v) = (id(&s, "q"), id(&s, "k"), id(&s, "v"));
        cases.push(Case {
            name: "causal_attention",
            store: s,
            f: Box::new(move |g, st| {
                let (vq, vk, vv) = (g.param(st, q), g.param(st, k), g.param(st, v));
                let y = g.causal_attention(vq, vk, vv, 2, 4, 2)?;
                project(g, y, seed)
            }),
        });
    }
    cases
}

fn layer_cases(seed: u64) -> Vec<Case<'static>> {
    let mut r = rng::stream(seed, 0x1A7E);
    let mut cases = Vec::new();

    let mut p = ParamStore::new();
    let dense = Dense::new(&mut p, "dense", 4, 3, &mut r).expect("fresh store");
    let x = p
        .add("x", init::normal([5, 4], 1.0, &mut r))
        .expect("fresh name");
    cases.push(Case {
        name: "layer_dense",
        store: p.cast(),
        f: Box::new(move |g, st| {
            let vx = g.param(st, x);
            let y = dense.forward(g, st, vx)?;
            project(g, y, seed)
        }),
    });

    let mut p = ParamStore::new();
    let conv = Conv2d::he(&mut p, "conv", 2, 3, 3, 1, 1, &mut r).expect("fresh store");
    let x = p
        .add("x", init::normal([2, 2, 5, 5], 1.0, &mut r))
        .expect("fresh name");
    cases.push(Case {
        name: "layer_conv2d",
        store: p.cast(),
        f: Box::new(move |g, st| {
            let vx = g.param(st, x);
            let y = conv.forward(g, st, vx)?;
            project(g, y, seed)
        }),
    });

    let mut p = ParamStore::new();
    let up = ConvTranspose2d::he(&mut p, "up", 3, 2, 4, 2, 1, &mut r).expect("fresh store");
    let x = p
        .add("x", init::normal([2, 3, 3, 3], 1.0, &mut r))
        .expect("fresh name");
    cases.push(Case {
        name: "layer_conv_transpose2d",
        store: p.cast(),
        f: Box::new(move |g, st| {
            let vx = g.param(st, x);
            let y = up.forward(g, st, vx)?;
            project(g, y, seed)
        }),
    });

    let mut p = ParamStore::new();
    let ln = LayerNorm::new(&mut p, "ln", 5).expect("fresh store");
    let x = p
        .add("x", init::normal([3, 5], 1.0, &mut r))
        .expect("fresh name");
    cases.push(Case {
        name: "layer_norm_layer",
        store: p.cast(),
        f: Box::new(move |g, st| {
            let vx = g.param(st, x);
            let y = ln.forward(g, st, vx)?;
            project(g, y, seed)
        }),
    });
    cases
}

/// Small models shared by the objective checks.
struct Toy {
    codec: VqCodec,
    clip: ClipModel,
    gen: GenModel,
    images: Vec<Image>,
    captions: Vec<CaptionTokens>,
}

const TOY_SIDE: usize = 16;

fn toy(seed: u64) -> Result<Toy> {
    let codec = VqCodec::new(
        VqConfig {
            side: TOY_SIDE,
            k: 8,
            dim_z: 3,
            f: 4,
            width: 4,
            ..Default::default()
        },
        seed,
    )?;
    let clip = ClipModel::new(
        ClipConfig {
            side: TOY_SIDE,
            d_c: 4,
            width: 3,
            word_dim: 5,
            hidden: 6,
            ..Default::default()
        },
        seed,
    )?;
    let gen = GenModel::new(
        GenConfig {
            k: 8,
            grid: TOY_SIDE / 4,
            d_c: 4,
            d_model: 8,
            layers: 1,
            heads: 2,
            ..Default::default()
        },
        seed,
    )?;
    let vocab = Vocab::new();
    let specs: Vec<SceneSpec> = [7, 50, 123]
        .iter()
        .map(|&i| SceneSpec::from_id((i + seed as usize * 11) % 160).expect("id < 160"))
        .collect();
    let images = specs
        .iter()
        .map(|s| render(s, 32))
        .map(|im| downsample(&im))
        .collect();
    let captions = specs
        .iter()
        .map(|s| vocab.encode(&crate::synthdata::caption(s, 0)?))
        .collect::<Result<Vec<_>>>()?;
    let (mut codec, mut clip, mut gen) = (codec, clip, gen);
    rescale(&mut codec.params, seed);
    rescale(&mut clip.params, seed + 1);
    rescale(&mut gen.params, seed + 2);
    Ok(Toy {
        codec,
        clip,
        gen,
        images,
        captions,
    })
}

/// Redraws every tensor except norm gains and the temperature with a wider
/// spread, so gradients in the toy models sit well above finite-difference
/// noise. Nonzero biases also keep pre-activations off the ReLU kink, which
/// zero biases hit exactly wherever a window sees only dead units.
fn rescale(p: &mut ParamStore, seed: u64) {
    let mut r = rng::stream(seed, 0x5CA1);
    let ids: Vec<_> = p.ids().collect();
    for id in ids {
        let t = p.get(id);
        if t.numel() < 2 || t.data().iter().all(|&v| v == 1.0) {
            continue;
        }
        let fresh = init::normal(t.shape().to_vec(), 0.4, &mut r);
        p.get_mut(id).data_mut().copy_from_slice(fresh.data());
    }
}

/// 2×2 box filter from a 32-pixel render to the toy side.
fn downsample(im: &Image) -> Image {
    let s = im.side() / 2;
    let mut data = vec![0.0; 3 * s * s];
    for c in 0..3 {
        for y in 0..s {
            for x in 0..s {
                let mut acc = 0.0;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    acc += im.data()[(c * im.side() + 2 * y + dy) * im.side() + 2 * x + dx];
                }
                data[(c * s + y) * s + x] = acc / 4.0;
            }
        }
    }
    Image::from_data(s, data).expect("consistent size")
}

fn objective_cases(seed: u64) -> Result<Vec<Case<'static>>> {
    let t = toy(seed)?;
    let mut cases: Vec<Case<'static>> = Vec::new();
    let batch = Image::batch(&t.images.iter().collect::<Vec<_>>())?.cast::<f64>();

    let codec_store = t.codec.params.cast::<f64>();
    let anchor = {
        let mut g = Graph::new();
        let xv = g.constant(batch.clone());
        let fwd = t.codec.forward(&mut g, &codec_store, xv)?;
        VqAnchor::capture(&g, &fwd)
    };
    {
        let codec = t.codec.clone();
        let (x, anchor) = (batch.clone(), anchor.clone());
        cases.push(Case {
            name: "loss_vq",
            store: codec_store.clone(),
            f: Box::new(move |g, st| {
                let xv = g.constant(x.clone());
                Ok(codec.forward_anchored(g, st, xv, &anchor)?.loss.total)
            }),
        });
    }
    let mut disc = Discriminator::new(2, seed)?;
    rescale(&mut disc.params, seed);
    {
        let codec = t.codec.clone();
        let disc = disc.clone();
        let dstore = disc.params.cast::<f64>();
        let x = batch.clone();
        cases.push(Case {
            name: "loss_adversarial_generator",
            store: codec_store,
            f: Box::new(move |g, st| {
                let xv = g.constant(x.clone());
                let fwd = codec.forward_anchored(g, st, xv, &anchor)?;
                disc.gen_loss(g, &dstore, fwd.x_hat)
            }),
        });
    }
    {
        let real = batch.clone();
        let mut r = rng::stream(seed, 0xFA4E);
        let fake = Tensor::from_fn(real.shape().to_vec(), |_| r.gen_range(0.0..1.0));
        let d2 = disc.clone();
        cases.push(Case {
            name: "loss_discriminator",
            store: disc.params.cast(),
            f: Box::new(move |g, st| {
                let rv = g.constant(real.clone());
                let fv = g.constant(fake.clone());
                d2.disc_loss(g, st, rv, fv)
            }),
        });
    }
    {
        let clip = t.clip.clone();
        let x = batch.clone();
        let caps = t.captions.clone();
        cases.push(Case {
            name: "loss_info_nce",
            store: clip.params.cast(),
            f: Box::new(move |g, st| {
                let xv = g.constant(x.clone());
                let ie = clip.image_tower(g, st, xv)?;
                let te = clip.text_tower(g, st, &caps)?;
                let it = clip.inv_temperature(g, st);
                info_nce_graph(g, ie, te, it)
            }),
        });
    }

    let mut codec = t.codec.clone();
    codec.params.freeze_all();
    let mut clip = t.clip.clone();
    clip.params.freeze_all();
    let conds = clip.embed_images(&t.images.iter().collect::<Vec<_>>())?;
    let mut r = rng::stream(seed, 0x70C5);
    let examples: Vec<GenExample> = conds
        .into_iter()
        .map(|cond| {
            let ids = (0..16).map(|_| r.gen_range(0..8)).collect();
            Ok(GenExample {
                cond,
                tokens: TokenSequence::new(4, 4, ids)?,
            })
        })
        .collect::<Result<_>>()?;
    let b = GenBatch::new(&examples.iter().collect::<Vec<_>>())?;
    for (name, lambda) in [("loss_nll", 0.0), ("loss_combined", 0.2)] {
        let gen = t.gen.clone();
        let (codec, clip, b) = (codec.clone(), clip.clone(), b.clone());
        let (cs, ks) = (codec.params.cast::<f64>(), clip.params.cast::<f64>());
        cases.push(Case {
            name,
            store: gen.params.cast(),
            f: Box::new(move |g, st| {
                Ok(gen_loss(g, &gen, st, &b, lambda, &codec, &cs, &clip, &ks)?.total)
            }),
        });
    }
    Ok(cases)
}

/// Runs every case under `seed`.
pub fn grad_check_suite(seed: u64) -> Result<Vec<GradCase>> {
    let mut cases = op_cases(seed);
    cases.extend(layer_cases(seed));
    cases.extend(objective_cases(seed)?);
    cases
        .into_iter()
        .map(|c| {
            let report = grad_check_sampled(&c.f, &c.store, FD_EPS, PROBES_PER_TENSOR, seed)?;
            Ok(GradCase {
                name: c.name,
                seed,
                report,
            })
        })
        .collect()
}
