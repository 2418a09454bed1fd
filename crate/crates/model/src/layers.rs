//! Parameterized building blocks and the context they run in.

use hossnet_autograd::{BatchStats, Gradients, Graph, ParamId, ParamStore, Tensor, Var};
use ndarray::{Array1, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::Result;

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;
pub const PRELU_INIT: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running averages updated afterwards.
    Train,
    /// Running statistics.
    Eval,
}

/// Graph nodes for every entry of a [`ParamStore`].
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    /// With `trainable`, trainable parameters become gradient-tracking leaves;
    /// otherwise everything is a constant.
    pub fn new(g: &mut Graph, store: &ParamStore, trainable: bool) -> Self {
        let vars = store
            .ids()
            .map(|id| {
                let v = store.get(id).clone();
                if trainable && store.is_trainable(id) {
                    g.variable(v)
                } else {
                    g.constant(v)
                }
            })
            .collect();
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients of every trainable parameter, zero where the loss does not depend on it.
    pub fn gradients(&self, grads: &Gradients, store: &ParamStore) -> Vec<(ParamId, Tensor)> {
        store.trainable_ids().map(|id| (id, grads.get_or_zeros(self.var(id), store.get(id).shape()))).collect()
    }
}

/// Running-statistics update produced by one training-mode normalization.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: BatchStats,
}

pub fn apply_bn_updates(store: &mut ParamStore, updates: &[BnUpdate]) {
    for u in updates {
        let m = store.get_mut(u.mean);
        for (r, &b) in m.iter_mut().zip(u.stats.mean.iter()) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
        }
        let v = store.get_mut(u.var);
        for (r, &b) in v.iter_mut().zip(u.stats.var.iter()) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
        }
    }
}

pub struct Ctx<'a> {
    pub g: &'a mut Graph,
    pub bind: &'a Binding,
    pub store: &'a ParamStore,
    pub mode: Mode,
    pub updates: Vec<BnUpdate>,
}

impl Ctx<'_> {
    pub fn p(&self, id: ParamId) -> Var {
        self.bind.var(id)
    }
}

pub(crate) fn he_normal(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Tensor::from_shape_simple_fn(IxDyn(shape), || d.sample(rng))
}

pub(crate) fn glorot_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let d = Uniform::new_inclusive(-a, a).expect("valid range");
    Tensor::from_shape_simple_fn(IxDyn(shape), || rng.sample(d))
}

fn filled(shape: &[usize], v: f64) -> Tensor {
    Tensor::from_elem(IxDyn(shape), v)
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub pad: usize,
}

impl Conv {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), he_normal(rng, &[cout, cin, k, k], cin * k * k));
        let bias = store.add(format!("{name}.bias"), filled(&[cout], 0.0));
        Self { weight, bias, pad: k / 2 }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (w, b) = (ctx.p(self.weight), ctx.p(self.bias));
        Ok(ctx.g.conv2d(x, w, Some(b), self.pad)?)
    }
}

/// `x + PReLU(BN(conv3×3(x)))`.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv: Conv,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub alpha: ParamId,
}

impl ResBlock {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, c: usize) -> Self {
        let conv = Conv::new(store, rng, &format!("{name}.conv"), c, c, 3);
        Self {
            conv,
            gamma: store.add(format!("{name}.bn.gamma"), filled(&[c], 1.0)),
            beta: store.add(format!("{name}.bn.beta"), filled(&[c], 0.0)),
            running_mean: store.add_buffer(format!("{name}.bn.running_mean"), filled(&[c], 0.0)),
            running_var: store.add_buffer(format!("{name}.bn.running_var"), filled(&[c], 1.0)),
            alpha: store.add(format!("{name}.prelu.alpha"), filled(&[c], PRELU_INIT)),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let c = self.conv.forward(ctx, x)?;
        let (gamma, beta) = (ctx.p(self.gamma), ctx.p(self.beta));
        let y = match ctx.mode {
            Mode::Train => {
                let (y, stats) = ctx.g.batch_norm(c, gamma, beta, BN_EPS, None)?;
                let stats = stats.expect("training mode returns statistics");
                ctx.updates.push(BnUpdate { mean: self.running_mean, var: self.running_var, stats });
                y
            }
            Mode::Eval => {
                let to1 = |id| -> Array1<f64> { ctx.store.get(id).iter().copied().collect() };
                let (rm, rv) = (to1(self.running_mean), to1(self.running_var));
                ctx.g.batch_norm(c, gamma, beta, BN_EPS, Some((&rm, &rv)))?.0
            }
        };
        let alpha = ctx.p(self.alpha);
        let a = ctx.g.prelu(y, alpha)?;
        Ok(ctx.g.add(x, a)?)
    }
}

/// 2×2 stride-2 transposed convolution.
#[derive(Clone, Debug)]
pub struct UpConv {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl UpConv {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), he_normal(rng, &[cin, cout, 2, 2], cin));
        let bias = store.add(format!("{name}.bias"), filled(&[cout], 0.0));
        Self { weight, bias }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (w, b) = (ctx.p(self.weight), ctx.p(self.bias));
        Ok(ctx.g.upconv2x2(x, w, b)?)
    }
}

/// LSTM applied independently at every spatial location with shared weights.
/// Gates are ordered input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub w_x: [ParamId; 4],
    pub w_h: [ParamId; 4],
    pub b: [ParamId; 4],
    pub state: usize,
}

const GATES: [&str; 4] = ["i", "f", "g", "o"];

impl Lstm {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, input: usize, state: usize) -> Self {
        let mut mk = |kind: &str, f: &mut dyn FnMut(&mut ChaCha8Rng, usize) -> Tensor| -> [ParamId; 4] {
            std::array::from_fn(|k| {
                let t = f(rng, k);
                store.add(format!("{name}.{kind}_{}", GATES[k]), t)
            })
        };
        let w_x = mk("w_x", &mut |r, _| glorot_uniform(r, &[input, state], input, state));
        let w_h = mk("w_h", &mut |r, _| glorot_uniform(r, &[state, state], state, state));
        let b = mk("b", &mut |_, k| filled(&[state], if k == 1 { 1.0 } else { 0.0 }));
        Self { w_x, w_h, b, state }
    }

    /// `x` is `[B*steps, C, H, W]`; returns hidden states `[B*steps, S, H, W]`
    /// starting from zero state in every window.
    pub fn forward(&self, ctx: &mut Ctx, x: Var, steps: usize) -> Result<Var> {
        let shape = ctx.g.value(x).shape().to_vec();
        let (h, w) = (shape[2], shape[3]);
        let mut hidden: Option<Var> = None;
        let mut cell: Option<Var> = None;
        let mut outs = Vec::with_capacity(steps);
        for t in 0..steps {
            let xt = ctx.g.select_step(x, steps, t)?;
            let gate = |ctx: &mut Ctx, k: usize| -> Result<Var> {
                let wx = ctx.p(self.w_x[k]);
                let mut z = ctx.g.matmul(xt, wx)?;
                if let Some(hp) = hidden {
                    let wh = ctx.p(self.w_h[k]);
                    let r = ctx.g.matmul(hp, wh)?;
                    z = ctx.g.add(z, r)?;
                }
                let b = ctx.p(self.b[k]);
                Ok(ctx.g.add_row(z, b)?)
            };
            let zi = gate(ctx, 0)?;
            let zf = gate(ctx, 1)?;
            let zg = gate(ctx, 2)?;
            let zo = gate(ctx, 3)?;
            let i = ctx.g.sigmoid(zi);
            let f = ctx.g.sigmoid(zf);
            let gg = ctx.g.tanh(zg);
            let o = ctx.g.sigmoid(zo);
            let ig = ctx.g.mul(i, gg)?;
            let c = match cell {
                Some(cp) => {
                    let fc = ctx.g.mul(f, cp)?;
                    ctx.g.add(fc, ig)?
                }
                None => ig,
            };
            let tc = ctx.g.tanh(c);
            let ht = ctx.g.mul(o, tc)?;
            cell = Some(c);
            hidden = Some(ht);
            outs.push(ht);
        }
        Ok(ctx.g.stack_steps(&outs, h, w)?)
    }
}
