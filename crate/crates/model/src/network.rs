//! Encoder, recurrent transition layer and decoder.
//!
//! Tensors are NCHW with frames of one window contiguous: frame `t` of
//! window `b` sits at index `b * steps + t`.

use hossnet_autograd::{Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, OutputActivation, SkipMerge, Upsample};
use crate::layers::{apply_bn_updates, Binding, BnUpdate, Conv, Ctx, Lstm, Mode, ResBlock, UpConv};
use crate::{ModelError, Result};

#[derive(Clone, Debug)]
pub struct Network {
    config: ModelConfig,
    store: ParamStore,
    enc_in: Conv,
    enc_res1: Vec<ResBlock>,
    enc_mid: Conv,
    enc_res2: Vec<ResBlock>,
    enc_out: Conv,
    lstm: Option<Lstm>,
    proj: Option<Conv>,
    dec_in: Option<Conv>,
    up: Option<UpConv>,
    merge: Option<Conv>,
    dec_res: Vec<ResBlock>,
    dec_out: Conv,
    fc: Conv,
}

pub struct ForwardOutput {
    pub output: Var,
    /// Encoder latent before the recurrent layer, `[N, C, H/2, W/2]`.
    pub latent: Var,
    /// Pre-pool encoder activation, `[N, C, H, W]`.
    pub skip: Var,
    pub bn_updates: Vec<BnUpdate>,
}

fn res_stage(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, n: usize, c: usize) -> Vec<ResBlock> {
    (0..n).map(|i| ResBlock::new(store, rng, &format!("{name}.{i}"), c)).collect()
}

fn run_stage(ctx: &mut Ctx, blocks: &[ResBlock], mut x: Var) -> Result<Var> {
    for b in blocks {
        x = b.forward(ctx, x)?;
    }
    Ok(x)
}

fn conv_relu(ctx: &mut Ctx, conv: &Conv, x: Var) -> Result<Var> {
    let y = conv.forward(ctx, x)?;
    Ok(ctx.g.relu(y))
}

impl Network {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut s = ParamStore::new();
        let c = config.base_width;
        let n = config.n_res_blocks_per_stage;
        let enc_in = Conv::new(&mut s, &mut rng, "enc.conv_in", config.in_channels, c, 3);
        let enc_res1 = res_stage(&mut s, &mut rng, "enc.res1", n, c);
        let enc_mid = Conv::new(&mut s, &mut rng, "enc.conv_mid", c, c, 3);
        let enc_res2 = res_stage(&mut s, &mut rng, "enc.res2", n, c);
        let enc_out = Conv::new(&mut s, &mut rng, "enc.conv_out", c, c, 3);
        let (lstm, proj) = if config.use_rtl {
            let st = config.latent_state_size;
            let lstm = Lstm::new(&mut s, &mut rng, "rtl.lstm", c, st);
            let proj = (st != c).then(|| Conv::new(&mut s, &mut rng, "rtl.proj", st, c, 1));
            (Some(lstm), proj)
        } else {
            (None, None)
        };
        let (dec_in, up) = match config.upsample {
            Upsample::Nearest => (Some(Conv::new(&mut s, &mut rng, "dec.conv_in", c, c, 3)), None),
            Upsample::Transposed => (None, Some(UpConv::new(&mut s, &mut rng, "dec.upconv", c, c))),
        };
        let merge = (config.skip_merge == SkipMerge::Concat).then(|| Conv::new(&mut s, &mut rng, "dec.merge", 2 * c, c, 3));
        let dec_res = res_stage(&mut s, &mut rng, "dec.res", n, c);
        let dec_out = Conv::new(&mut s, &mut rng, "dec.conv_out", c, c, 3);
        let fc = Conv::new(&mut s, &mut rng, "dec.fc", c, 1, 1);
        Ok(Self { config, store: s, enc_in, enc_res1, enc_mid, enc_res2, enc_out, lstm, proj, dec_in, up, merge, dec_res, dec_out, fc })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        apply_bn_updates(&mut self.store, updates)
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Binding {
        Binding::new(g, &self.store, trainable)
    }

    pub fn check_input(&self, shape: &[usize], steps: usize) -> Result<()> {
        if shape.len() != 4 {
            return Err(ModelError::Input(format!("expected an NCHW tensor, got shape {shape:?}")));
        }
        let (f, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        if c != self.config.in_channels {
            return Err(ModelError::Input(format!("expected {} input channels, got {c}", self.config.in_channels)));
        }
        if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
            return Err(ModelError::Input(format!("spatial dims must be even and non-zero, got {h}×{w}")));
        }
        if steps == 0 || f == 0 || f % steps != 0 {
            return Err(ModelError::Input(format!("{f} frames do not form windows of {steps}")));
        }
        Ok(())
    }

    /// Returns `(latent, skip)`.
    pub fn encode(&self, ctx: &mut Ctx, x: Var) -> Result<(Var, Var)> {
        let h = conv_relu(ctx, &self.enc_in, x)?;
        let skip = run_stage(ctx, &self.enc_res1, h)?;
        let p = ctx.g.max_pool2x2(skip)?;
        let h = conv_relu(ctx, &self.enc_mid, p)?;
        let h = run_stage(ctx, &self.enc_res2, h)?;
        let latent = conv_relu(ctx, &self.enc_out, h)?;
        Ok((latent, skip))
    }

    pub fn rtl(&self, ctx: &mut Ctx, latent: Var, steps: usize) -> Result<Var> {
        let Some(lstm) = &self.lstm else { return Ok(latent) };
        let h = lstm.forward(ctx, latent, steps)?;
        match &self.proj {
            Some(p) => p.forward(ctx, h),
            None => Ok(h),
        }
    }

    pub fn decode(&self, ctx: &mut Ctx, latent: Var, skip: Var) -> Result<Var> {
        let up = match (&self.dec_in, &self.up) {
            (Some(conv), _) => {
                let h = conv_relu(ctx, conv, latent)?;
                ctx.g.upsample_nearest2x(h)?
            }
            (None, Some(upconv)) => {
                let h = upconv.forward(ctx, latent)?;
                ctx.g.relu(h)
            }
            (None, None) => unreachable!("one upsampling path is always built"),
        };
        if ctx.g.value(up).shape() != ctx.g.value(skip).shape() {
            return Err(ModelError::Input(format!(
                "upsampled latent {:?} does not match skip {:?}",
                ctx.g.value(up).shape(),
                ctx.g.value(skip).shape()
            )));
        }
        let merged = match &self.merge {
            None => ctx.g.add(up, skip)?,
            Some(conv) => {
                let cat = ctx.g.concat_channels(&[up, skip])?;
                conv_relu(ctx, conv, cat)?
            }
        };
        let h = run_stage(ctx, &self.dec_res, merged)?;
        let h = conv_relu(ctx, &self.dec_out, h)?;
        let y = self.fc.forward(ctx, h)?;
        Ok(match self.config.output_activation {
            OutputActivation::Sigmoid => ctx.g.sigmoid(y),
            OutputActivation::None => y,
        })
    }

    /// Full pass over `input` of shape `[B*steps, C_in, H, W]`.
    pub fn forward(&self, g: &mut Graph, bind: &Binding, input: Var, steps: usize, mode: Mode) -> Result<ForwardOutput> {
        self.check_input(g.value(input).shape(), steps)?;
        let mut ctx = Ctx { g, bind, store: &self.store, mode, updates: Vec::new() };
        let (latent, skip) = self.encode(&mut ctx, input)?;
        let z = self.rtl(&mut ctx, latent, steps)?;
        let output = self.decode(&mut ctx, z, skip)?;
        Ok(ForwardOutput { output, latent, skip, bn_updates: ctx.updates })
    }

    /// Inference with running statistics; returns `[B*steps, 1, H, W]`.
    pub fn predict(&self, input: &Tensor, steps: usize) -> Result<Tensor> {
        let mut g = Graph::new();
        let bind = self.bind(&mut g, false);
        let x = g.constant(input.clone());
        let out = self.forward(&mut g, &bind, x, steps, Mode::Eval)?;
        Ok(g.value(out.output).clone())
    }
}
