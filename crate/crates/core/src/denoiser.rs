//! Transformer noise predictor.
//!
//! Each trajectory becomes a sequence of `T + 2` tokens: a diffusion-step
//! token, a condition token, then one token per noisy waypoint (projected to
//! `d_model` plus a fixed sinusoidal position code). Pre-LN blocks run over the
//! sequence and a two-layer head maps every waypoint token back to 2D noise.

use rand::Rng;

use crate::diffusion::NoisePredictor;
use crate::encoder::{sinusoid_embed, time_embed, Linear};
use crate::error::{ensure_arg, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiserConfig {
    pub t_pred: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_hidden: usize,
    pub d_cond: usize,
    pub d_time: usize,
    pub num_steps: usize,
    pub lambda_max: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            t_pred: 12,
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            ffn_hidden: 128,
            d_cond: 64,
            d_time: 64,
            num_steps: 100,
            lambda_max: 10000.0,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_arg!(self.t_pred >= 1, "t_pred must be >= 1");
        ensure_arg!(self.n_heads >= 1 && self.n_layers >= 1, "need at least one layer and head");
        ensure_arg!(
            self.d_model >= 2 && self.d_model % 2 == 0 && self.d_model % self.n_heads == 0,
            "d_model {} must be even and divisible by n_heads {}",
            self.d_model,
            self.n_heads
        );
        ensure_arg!(self.d_time >= 2 && self.d_time % 2 == 0, "d_time must be even");
        ensure_arg!(self.ffn_hidden >= 1 && self.d_cond >= 1, "ffn_hidden and d_cond must be >= 1");
        ensure_arg!(self.num_steps >= 1, "num_steps must be >= 1");
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerNormParams {
    gamma: ParamId,
    beta: ParamId,
}

impl LayerNormParams {
    fn new(store: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(LayerNormParams {
            gamma: store.add(&format!("{name}.gamma"), Tensor::full(&[1, d], 1.0))?,
            beta: store.add(&format!("{name}.beta"), Tensor::zeros(&[1, d]))?,
        })
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (ga, be) = (g.param(store, self.gamma), g.param(store, self.beta));
        g.layernorm(x, ga, be, LN_EPS)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    ln1: LayerNormParams,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: LayerNormParams,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub cfg: DenoiserConfig,
    in_proj: Linear,
    time1: Linear,
    time2: Linear,
    cond_proj: Linear,
    blocks: Vec<Block>,
    ln_f: LayerNormParams,
    head1: Linear,
    head2: Linear,
    /// `T × d_model` position codes for the waypoint tokens.
    pos: Tensor,
}

impl Denoiser {
    pub fn new(store: &mut ParamStore, cfg: DenoiserConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let in_proj = Linear::new(store, "den.in", 2, d, rng)?;
        let time1 = Linear::new(store, "den.time1", cfg.d_time, d, rng)?;
        let time2 = Linear::new(store, "den.time2", d, d, rng)?;
        let cond_proj = Linear::new(store, "den.cond", cfg.d_cond, d, rng)?;
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = format!("den.block{l}");
            blocks.push(Block {
                ln1: LayerNormParams::new(store, &format!("{p}.ln1"), d)?,
                q: Linear::new(store, &format!("{p}.q"), d, d, rng)?,
                k: Linear::new(store, &format!("{p}.k"), d, d, rng)?,
                v: Linear::new(store, &format!("{p}.v"), d, d, rng)?,
                o: Linear::new(store, &format!("{p}.o"), d, d, rng)?,
                ln2: LayerNormParams::new(store, &format!("{p}.ln2"), d)?,
                ff1: Linear::new(store, &format!("{p}.ff1"), d, cfg.ffn_hidden, rng)?,
                ff2: Linear::new(store, &format!("{p}.ff2"), cfg.ffn_hidden, d, rng)?,
            });
        }
        let ln_f = LayerNormParams::new(store, "den.ln_f", d)?;
        let head1 = Linear::new(store, "den.head1", d, d / 2, rng)?;
        let head2 = Linear::new(store, "den.head2", d / 2, 2, rng)?;
        let mut pos = Vec::with_capacity(cfg.t_pred * d);
        for t in 0..cfg.t_pred {
            pos.extend(sinusoid_embed(t as f64, d, cfg.lambda_max)?);
        }
        Ok(Denoiser {
            cfg,
            in_proj,
            time1,
            time2,
            cond_proj,
            blocks,
            ln_f,
            head1,
            head2,
            pos: Tensor::matrix(cfg.t_pred, d, pos)?,
        })
    }

    fn block_forward(&self, g: &mut Graph, store: &ParamStore, b: &Block, h: Var) -> Result<Var> {
        let seq = self.cfg.t_pred + 2;
        let x = b.ln1.forward(g, store, h)?;
        let q = b.q.forward(g, store, x)?;
        let k = b.k.forward(g, store, x)?;
        let v = b.v.forward(g, store, x)?;
        let a = g.attention(q, k, v, seq, self.cfg.n_heads)?;
        let a = b.o.forward(g, store, a)?;
        let h = g.add(h, a)?;
        let x = b.ln2.forward(g, store, h)?;
        let f = b.ff1.forward(g, store, x)?;
        let f = g.gelu(f);
        let f = b.ff2.forward(g, store, f)?;
        g.add(h, f)
    }
}

impl NoisePredictor for Denoiser {
    fn predict_noise(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        ys: Var,
        steps: &[usize],
        cond: Var,
    ) -> Result<Var> {
        let n = steps.len();
        let t = self.cfg.t_pred;
        let d = self.cfg.d_model;
        ensure_arg!(n >= 1, "empty batch");
        ensure_arg!(
            g.value(ys).shape() == [n * t, 2],
            "noisy trajectories must be {}x2, got {:?}",
            n * t,
            g.value(ys).shape()
        );
        ensure_arg!(
            g.value(cond).shape() == [n, self.cfg.d_cond],
            "condition must be {n}x{}, got {:?}",
            self.cfg.d_cond,
            g.value(cond).shape()
        );

        let mut time_rows = Vec::with_capacity(n * self.cfg.d_time);
        for &s in steps {
            time_rows.extend(time_embed(s, self.cfg.num_steps, self.cfg.d_time, self.cfg.lambda_max)?);
        }
        let tf = g.input(Tensor::matrix(n, self.cfg.d_time, time_rows)?);
        let tt = self.time1.forward(g, store, tf)?;
        let tt = g.gelu(tt);
        let time_tok = self.time2.forward(g, store, tt)?;
        let cond_tok = self.cond_proj.forward(g, store, cond)?;

        let traj = self.in_proj.forward(g, store, ys)?;
        let mut pos = Vec::with_capacity(n * t * d);
        for _ in 0..n {
            pos.extend_from_slice(self.pos.data());
        }
        let pos = g.input(Tensor::matrix(n * t, d, pos)?);
        let traj = g.add(traj, pos)?;

        // Rows of `all`: time tokens, then condition tokens, then waypoints.
        let all = g.concat_rows(&[time_tok, cond_tok, traj])?;
        let seq = t + 2;
        let mut order = Vec::with_capacity(n * seq);
        for i in 0..n {
            order.push(i);
            order.push(n + i);
            order.extend((0..t).map(|j| 2 * n + i * t + j));
        }
        let mut h = g.gather_rows(all, &order)?;
        for b in &self.blocks {
            h = self.block_forward(g, store, b, h)?;
        }
        let h = self.ln_f.forward(g, store, h)?;
        let keep: Vec<usize> = (0..n)
            .flat_map(|i| (0..t).map(move |j| i * seq + 2 + j))
            .collect();
        let h = g.gather_rows(h, &keep)?;
        let h = self.head1.forward(g, store, h)?;
        let h = g.gelu(h);
        self.head2.forward(g, store, h)
    }
}
