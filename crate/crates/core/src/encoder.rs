//! Conditioning path: motion-state embedding of the observed window, the
//! target token built from a retrieved (or predicted) endpoint, and their
//! fusion into the condition vector `G` that the denoiser attends to.

use rand::Rng;

use crate::data::Point;
use crate::error::{ensure_arg, Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// `out[2j] = sin(p / λ^(2j/D))`, `out[2j+1] = cos(p / λ^(2j/D))`.
///
/// Wavelengths run geometrically from `2π` (j = 0) towards `2πλ`.
pub fn sinusoid_embed(p: f64, dim: usize, lambda: f64) -> Result<Vec<f64>> {
    ensure_arg!(dim % 2 == 0 && dim > 0, "embedding width must be even, got {dim}");
    ensure_arg!(lambda > 1.0, "lambda must exceed 1, got {lambda}");
    let mut out = Vec::with_capacity(dim);
    for j in 0..dim / 2 {
        let arg = p / lambda.powf(2.0 * j as f64 / dim as f64);
        out.push(arg.sin());
        out.push(arg.cos());
    }
    Ok(out)
}

/// Diffusion-step embedding, valid for `1 <= step <= num_steps`.
pub fn time_embed(step: usize, num_steps: usize, dim: usize, lambda: f64) -> Result<Vec<f64>> {
    ensure_arg!(
        (1..=num_steps).contains(&step),
        "diffusion step {step} outside 1..={num_steps}"
    );
    sinusoid_embed(step as f64, dim, lambda)
}

fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::matrix(fan_in, fan_out, data).expect("sizes agree")
}

/// `x · W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = store.add(&format!("{name}.w"), xavier(rng, fan_in, fan_out))?;
        let b = store.add(&format!("{name}.b"), Tensor::zeros(&[1, fan_out]))?;
        Ok(Linear {
            w,
            b,
            fan_in,
            fan_out,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.affine(x, w, b)
    }
}

/// Two affine layers with a GELU between them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: (usize, usize, usize),
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Mlp {
            l1: Linear::new(store, &format!("{name}.l1"), dims.0, dims.1, rng)?,
            l2: Linear::new(store, &format!("{name}.l2"), dims.1, dims.2, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.l1.forward(g, store, x)?;
        let h = g.gelu(h);
        self.l2.forward(g, store, h)
    }

    /// Sets the weights so the MLP is the identity map, using
    /// `gelu(x) - gelu(-x) = x`: `W1 = [I, -I]`, `W2 = [I; -I]`, zero biases.
    /// Needs `hidden == 2 * width`.
    pub fn set_identity(&self, store: &mut ParamStore) -> Result<()> {
        let n = self.l1.fan_in;
        ensure_arg!(
            self.l2.fan_out == n && self.l1.fan_out == 2 * n,
            "identity MLP needs dims (n, 2n, n)"
        );
        let w1 = store.values_mut(self.l1.w);
        w1.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            w1[i * 2 * n + i] = 1.0;
            w1[i * 2 * n + n + i] = -1.0;
        }
        let w2 = store.values_mut(self.l2.w);
        w2.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            w2[i * n + i] = 1.0;
            w2[(n + i) * n + i] = -1.0;
        }
        store.values_mut(self.l1.b).iter_mut().for_each(|v| *v = 0.0);
        store.values_mut(self.l2.b).iter_mut().for_each(|v| *v = 0.0);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub t_obs: usize,
    /// Motion-state embedding width.
    pub d_state: usize,
    /// Target token width; each coordinate gets half.
    pub d_token: usize,
    pub d_cond: usize,
    /// Maximum period factor of the sinusoid.
    pub lambda_max: f64,
    pub mlp_hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            t_obs: 8,
            d_state: 32,
            d_token: 32,
            d_cond: 64,
            lambda_max: 10000.0,
            mlp_hidden: 64,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_arg!(self.t_obs >= 1, "t_obs must be >= 1");
        ensure_arg!(
            self.d_state >= 2 && self.d_cond >= 2 && self.mlp_hidden >= 2,
            "encoder widths must be >= 2"
        );
        // Each coordinate is embedded with d_token / 2 dims, which must be even too.
        ensure_arg!(
            self.d_token >= 4 && self.d_token % 4 == 0,
            "d_token must be a positive multiple of 4, got {}",
            self.d_token
        );
        ensure_arg!(self.lambda_max > 1.0, "lambda_max must exceed 1");
        Ok(())
    }

    pub fn motion_features_len(&self) -> usize {
        4 * self.t_obs
    }
}

/// Positions followed by first differences (zero for the first step),
/// flattened as `x0 y0 ... | vx0 vy0 ...`.
pub fn motion_features(observed: &[Point]) -> Vec<f64> {
    let mut out: Vec<f64> = observed.iter().flat_map(|p| p.iter().copied()).collect();
    let mut prev = observed.first().copied().unwrap_or([0.0, 0.0]);
    for p in observed {
        out.push(p[0] - prev[0]);
        out.push(p[1] - prev[1]);
        prev = *p;
    }
    out
}

/// Per-coordinate sinusoid embeddings of a 2D target, x half then y half.
pub fn target_features(target: Point, d_token: usize, lambda: f64) -> Result<Vec<f64>> {
    ensure_arg!(
        target[0].is_finite() && target[1].is_finite(),
        "target must be finite"
    );
    let mut out = sinusoid_embed(target[0], d_token / 2, lambda)?;
    out.extend(sinusoid_embed(target[1], d_token / 2, lambda)?);
    Ok(out)
}

/// Parameters of the conditioning path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEncoder {
    pub cfg: EncoderConfig,
    pub state_mlp: Mlp,
    pub token_mlp: Mlp,
    pub fuse: Linear,
    /// Endpoint regressor on the motion state, used when no memory is available.
    pub endpoint_head: Linear,
}

impl ConditionEncoder {
    pub fn new(store: &mut ParamStore, cfg: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let state_mlp = Mlp::new(
            store,
            "enc.state",
            (cfg.motion_features_len(), cfg.mlp_hidden, cfg.d_state),
            rng,
        )?;
        let token_mlp = Mlp::new(store, "enc.token", (cfg.d_token, cfg.mlp_hidden, cfg.d_token), rng)?;
        let fuse = Linear::new(store, "enc.fuse", cfg.d_state + cfg.d_token, cfg.d_cond, rng)?;
        let endpoint_head = Linear::new(store, "enc.endpoint", cfg.d_state, 2, rng)?;
        Ok(ConditionEncoder {
            cfg,
            state_mlp,
            token_mlp,
            fuse,
            endpoint_head,
        })
    }

    /// Motion-state embeddings for a batch of observed windows, `B × d_state`.
    pub fn encode_motion_state(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        observed: &[&[Point]],
    ) -> Result<Var> {
        let rows = observed
            .iter()
            .map(|o| {
                ensure_arg!(
                    o.len() == self.cfg.t_obs,
                    "observed window has {} steps, expected {}",
                    o.len(),
                    self.cfg.t_obs
                );
                Ok(motion_features(o))
            })
            .collect::<Result<Vec<_>>>()?;
        let x = g.input(Tensor::from_rows(&rows)?);
        self.state_mlp.forward(g, store, x)
    }

    /// Target tokens for a batch of endpoints, `B × d_token`.
    pub fn target_token(&self, g: &mut Graph, store: &ParamStore, targets: &[Point]) -> Result<Var> {
        let rows = targets
            .iter()
            .map(|&t| target_features(t, self.cfg.d_token, self.cfg.lambda_max))
            .collect::<Result<Vec<_>>>()?;
        let x = g.input(Tensor::from_rows(&rows)?);
        self.token_mlp.forward(g, store, x)
    }

    /// `G = affine(state ‖ token)`.
    pub fn build_condition(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        state: Var,
        token: Var,
    ) -> Result<Var> {
        let (ss, ts) = (g.value(state).shape().to_vec(), g.value(token).shape().to_vec());
        if ss.len() != 2 || ts.len() != 2 || ss[1] != self.cfg.d_state || ts[1] != self.cfg.d_token || ss[0] != ts[0] {
            return Err(Error::Argument(format!(
                "build_condition: state {ss:?} / token {ts:?} do not match d_state {} / d_token {}",
                self.cfg.d_state, self.cfg.d_token
            )));
        }
        let cat = g.concat_cols(&[state, token])?;
        self.fuse.forward(g, store, cat)
    }

    pub fn predict_endpoint(&self, g: &mut Graph, store: &ParamStore, state: Var) -> Result<Var> {
        self.endpoint_head.forward(g, store, state)
    }
}
