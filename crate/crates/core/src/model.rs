//! The complete forecaster: condition encoder plus transformer denoiser, and
//! the glue that turns an observed window (and optionally a memory bank) into
//! K candidate futures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::Point;
use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::diffusion::{chain_rng, make_schedule, sample_chains, training_loss, Schedule};
use crate::encoder::{ConditionEncoder, EncoderConfig};
use crate::error::{ensure_arg, Error, Result};
use crate::memory::MemoryBank;
use crate::tensor::{Graph, ParamStore, Tensor, Var};
use crate::textio::{flat_config, Lines};

/// Every architecture and diffusion hyperparameter, flat so it maps directly
/// onto `key value` config lines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub t_obs: usize,
    pub t_pred: usize,
    pub d_state: usize,
    pub d_token: usize,
    pub d_cond: usize,
    pub mlp_hidden: usize,
    pub lambda_max: f64,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_hidden: usize,
    pub d_time: usize,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Futures are divided by this before diffusion and multiplied back after.
    pub traj_scale: f64,
    pub use_memory: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            t_obs: 8,
            t_pred: 12,
            d_state: 64,
            d_token: 32,
            d_cond: 64,
            mlp_hidden: 64,
            lambda_max: 10000.0,
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            ffn_hidden: 128,
            d_time: 32,
            diffusion_steps: 100,
            beta_start: 1e-4,
            beta_end: 5e-2,
            traj_scale: 1.0,
            use_memory: true,
        }
    }
}

flat_config!(
    ModelConfig,
    "model",
    [
        t_obs,
        t_pred,
        d_state,
        d_token,
        d_cond,
        mlp_hidden,
        lambda_max,
        d_model,
        n_layers,
        n_heads,
        ffn_hidden,
        d_time,
        diffusion_steps,
        beta_start,
        beta_end,
        traj_scale,
        use_memory,
    ]
);

impl ModelConfig {
    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            t_obs: self.t_obs,
            d_state: self.d_state,
            d_token: self.d_token,
            d_cond: self.d_cond,
            lambda_max: self.lambda_max,
            mlp_hidden: self.mlp_hidden,
        }
    }

    pub fn denoiser(&self) -> DenoiserConfig {
        DenoiserConfig {
            t_pred: self.t_pred,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            ffn_hidden: self.ffn_hidden,
            d_cond: self.d_cond,
            d_time: self.d_time,
            num_steps: self.diffusion_steps,
            lambda_max: self.lambda_max,
        }
    }

    pub fn schedule(&self) -> Result<Schedule> {
        make_schedule(self.diffusion_steps, self.beta_start, self.beta_end)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder().validate()?;
        self.denoiser().validate()?;
        self.schedule()?;
        ensure_arg!(
            self.traj_scale > 0.0 && self.traj_scale.is_finite(),
            "traj_scale must be positive"
        );
        Ok(())
    }

    pub(crate) fn read_text(lines: &mut Lines) -> Result<Self> {
        let cfg = Self::read_section(lines)?;
        cfg.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(cfg)
    }
}

/// Root-mean-square coordinate of the given futures, used as `traj_scale`.
pub fn rms_scale<'a>(futures: impl IntoIterator<Item = &'a [Point]>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for f in futures {
        for p in f {
            sum += p[0] * p[0] + p[1] * p[1];
            n += 2;
        }
    }
    if n == 0 || sum == 0.0 {
        1.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// One training example in normalized coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub observed: Vec<Point>,
    pub future: Vec<Point>,
    /// Endpoint mean retrieved from the bank (unused without memory).
    pub target: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossParts {
    pub diffusion: f64,
    /// Endpoint regression loss of the no-memory variant, zero otherwise.
    pub endpoint: f64,
}

/// Candidate futures for one window and the endpoint each was steered
/// towards, in the window's normalized frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub candidates: Vec<Vec<Point>>,
    pub targets: Vec<Point>,
}

/// Structure of the network; the weights live in a separate [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mp2mNet {
    pub cfg: ModelConfig,
    pub encoder: ConditionEncoder,
    pub denoiser: Denoiser,
    pub schedule: Schedule,
}

impl Mp2mNet {
    /// Builds the network with freshly initialized weights drawn from `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = ConditionEncoder::new(&mut store, cfg.encoder(), &mut rng)?;
        let denoiser = Denoiser::new(&mut store, cfg.denoiser(), &mut rng)?;
        let net = Mp2mNet {
            cfg,
            encoder,
            denoiser,
            schedule: cfg.schedule()?,
        };
        Ok((net, store))
    }

    /// Condition rows for a batch. With `targets` the token embeds them;
    /// without, it embeds the endpoint predicted from the motion state, whose
    /// value is detached from the token path. Returns the condition and, in
    /// the latter case, the endpoint prediction node.
    pub fn condition(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        observed: &[&[Point]],
        targets: Option<&[Point]>,
    ) -> Result<(Var, Option<Var>)> {
        let state = self.encoder.encode_motion_state(g, store, observed)?;
        let (token, endpoint) = match targets {
            Some(t) => {
                ensure_arg!(t.len() == observed.len(), "one target per window required");
                (self.encoder.target_token(g, store, t)?, None)
            }
            None => {
                let e = self.encoder.predict_endpoint(g, store, state)?;
                let pts: Vec<Point> = g.value(e).data().chunks(2).map(|c| [c[0], c[1]]).collect();
                (self.encoder.target_token(g, store, &pts)?, Some(e))
            }
        };
        let cond = self.encoder.build_condition(g, store, state, token)?;
        Ok((cond, endpoint))
    }

    /// Builds the training objective for a minibatch; returns the total loss
    /// node and its parts.
    pub fn loss(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &[TrainItem],
        rng: &mut impl Rng,
    ) -> Result<(Var, LossParts)> {
        ensure_arg!(!batch.is_empty(), "empty minibatch");
        let observed: Vec<&[Point]> = batch.iter().map(|b| b.observed.as_slice()).collect();
        let targets: Vec<Point> = batch.iter().map(|b| b.target).collect();
        let targets = self.cfg.use_memory.then_some(targets.as_slice());
        let (cond, endpoint) = self.condition(g, store, &observed, targets)?;
        let inv = 1.0 / self.cfg.traj_scale;
        let y0 = batch
            .iter()
            .map(|b| {
                ensure_arg!(b.future.len() == self.cfg.t_pred, "future has wrong length");
                Ok(b.future.iter().flat_map(|p| [p[0] * inv, p[1] * inv]).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let diff = training_loss(g, store, &self.denoiser, &self.schedule, &y0, cond, rng)?;
        let mut parts = LossParts {
            diffusion: g.value(diff).item(),
            endpoint: 0.0,
        };
        let total = match endpoint {
            Some(e) => {
                let gt: Vec<f64> = batch
                    .iter()
                    .flat_map(|b| *b.future.last().expect("non-empty future"))
                    .collect();
                let gt = g.input(Tensor::matrix(batch.len(), 2, gt)?);
                let aux = g.mse(e, gt)?;
                parts.endpoint = g.value(aux).item();
                g.add(diff, aux)?
            }
            None => diff,
        };
        Ok((total, parts))
    }

    /// `k` candidate futures for one normalized observed window.
    ///
    /// Candidate `j` uses RNG stream `j` of `seed` for everything it draws:
    /// first its target (memory mode, `j > 0`: a Gaussian draw from the
    /// addressed pattern's endpoint distribution; `j = 0` uses the mean), then
    /// its diffusion noise. So the first `m` candidates do not depend on `k`.
    pub fn predict(
        &self,
        store: &ParamStore,
        observed: &[Point],
        bank: Option<&MemoryBank>,
        k: usize,
        seed: u64,
    ) -> Result<Forecast> {
        ensure_arg!(k >= 1, "need at least one candidate");
        let mut rngs: Vec<ChaCha8Rng> = (0..k as u64).map(|j| chain_rng(seed, j)).collect();
        let targets = if self.cfg.use_memory {
            let bank = bank.ok_or_else(|| Error::State("model was trained with memory; a bank is required".into()))?;
            let (_, dist) = bank.address(observed)?;
            let mut t = Vec::with_capacity(k);
            for (j, rng) in rngs.iter_mut().enumerate() {
                if j == 0 {
                    t.push(dist.mean);
                } else {
                    let zx: f64 = rng.sample(StandardNormal);
                    let zy: f64 = rng.sample(StandardNormal);
                    t.push([
                        dist.mean[0] + dist.cov_diag[0].sqrt() * zx,
                        dist.mean[1] + dist.cov_diag[1].sqrt() * zy,
                    ]);
                }
            }
            Some(t)
        } else {
            None
        };
        let mut g = Graph::new();
        let obs: Vec<&[Point]> = vec![observed; k];
        let (cond, endpoint) = self.condition(&mut g, store, &obs, targets.as_deref())?;
        let targets = match (targets, endpoint) {
            (Some(t), _) => t,
            (None, Some(e)) => g.value(e).data().chunks(2).map(|c| [c[0], c[1]]).collect(),
            (None, None) => unreachable!("condition returns an endpoint when no targets are given"),
        };
        let cond = g.value(cond).clone();
        let len = 2 * self.cfg.t_pred;
        let ys = sample_chains(&self.denoiser, store, &self.schedule, &cond, &mut rngs, len)?;
        let s = self.cfg.traj_scale;
        let candidates = ys
            .into_iter()
            .map(|y| y.chunks(2).map(|c| [c[0] * s, c[1] * s]).collect())
            .collect();
        Ok(Forecast { candidates, targets })
    }
}
