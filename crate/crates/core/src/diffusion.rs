//! DDPM machinery over flattened trajectories: the variance schedule, forward
//! corruption, the posterior identities, the noise-prediction loss and the
//! ancestral sampling loop.
//!
//! Trajectories are plain `&[f64]` buffers (`T × 2` row-major), so the
//! formulas here are shape-agnostic. Steps are 1-indexed with `ᾱ_0 = 1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure_arg, Error, Result};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 5e-2;

/// Linear β from `beta_start` to `beta_end` inclusive.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<Schedule> {
    ensure_arg!(steps >= 1, "schedule needs at least one step");
    ensure_arg!(
        0.0 < beta_start && beta_start < 1.0 && beta_end < 1.0,
        "betas must lie in (0, 1): {beta_start}, {beta_end}"
    );
    ensure_arg!(
        steps == 1 || beta_start < beta_end,
        "beta_start must be below beta_end"
    );
    let betas: Vec<f64> = if steps == 1 {
        vec![beta_start]
    } else {
        (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect()
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alphas {
        acc *= a;
        alpha_bars.push(acc);
    }
    let s = Schedule {
        betas,
        alphas,
        alpha_bars,
    };
    s.check_invariants()?;
    Ok(s)
}

impl Default for Schedule {
    fn default() -> Self {
        make_schedule(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("valid defaults")
    }
}

impl Schedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check_step(&self, s: usize) -> Result<()> {
        ensure_arg!(
            (1..=self.steps()).contains(&s),
            "diffusion step {s} outside 1..={}",
            self.steps()
        );
        Ok(())
    }

    pub fn beta(&self, s: usize) -> f64 {
        self.betas[s - 1]
    }

    pub fn alpha(&self, s: usize) -> f64 {
        self.alphas[s - 1]
    }

    pub fn alpha_bar(&self, s: usize) -> f64 {
        self.alpha_bars[s - 1]
    }

    /// `ᾱ_{s-1}`, with `ᾱ_0 = 1`.
    pub fn alpha_bar_prev(&self, s: usize) -> f64 {
        if s == 1 {
            1.0
        } else {
            self.alpha_bars[s - 2]
        }
    }

    pub fn check_invariants(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Argument(format!("schedule invariant violated: {m}")));
        if self.betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return bad("beta outside (0, 1)");
        }
        if self.betas.windows(2).any(|w| w[1] <= w[0]) {
            return bad("beta not strictly increasing");
        }
        if self.alpha_bars.windows(2).any(|w| w[1] >= w[0]) {
            return bad("alpha_bar not strictly decreasing");
        }
        let mut prod = 1.0;
        for (a, ab) in self.alphas.iter().zip(&self.alpha_bars) {
            prod *= a;
            if (prod - ab).abs() > 1e-12 {
                return bad("alpha_bar is not the running product of alpha");
            }
        }
        Ok(())
    }
}

fn check_len(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    ensure_arg!(a.len() == b.len(), "{what}: lengths {} and {} differ", a.len(), b.len());
    Ok(())
}

/// `Ys = √ᾱ_s · Y0 + √(1−ᾱ_s) · z`.
pub fn q_sample(y0: &[f64], s: usize, z: &[f64], sched: &Schedule) -> Result<Vec<f64>> {
    sched.check_step(s)?;
    check_len(y0, z, "q_sample")?;
    let ab = sched.alpha_bar(s);
    let (c0, cz) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(y0.iter().zip(z).map(|(y, z)| c0 * y + cz * z).collect())
}

/// Mean of `q(Y_{s-1} | Ys, Y0)`.
pub fn posterior_mean(y0: &[f64], ys: &[f64], s: usize, sched: &Schedule) -> Result<Vec<f64>> {
    sched.check_step(s)?;
    check_len(y0, ys, "posterior_mean")?;
    let (ab, ab_prev) = (sched.alpha_bar(s), sched.alpha_bar_prev(s));
    let c0 = ab_prev.sqrt() * sched.beta(s) / (1.0 - ab);
    let cs = sched.alpha(s).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    Ok(y0.iter().zip(ys).map(|(a, b)| c0 * a + cs * b).collect())
}

/// Variance `β̃_s` of `q(Y_{s-1} | Ys, Y0)`. Zero at `s = 1`.
pub fn posterior_var(s: usize, sched: &Schedule) -> Result<f64> {
    sched.check_step(s)?;
    Ok((1.0 - sched.alpha_bar_prev(s)) / (1.0 - sched.alpha_bar(s)) * sched.beta(s))
}

/// `μ_θ = (Ys − β_s/√(1−ᾱ_s) · ε) / √α_s`.
pub fn mu_theta(ys: &[f64], s: usize, eps_pred: &[f64], sched: &Schedule) -> Result<Vec<f64>> {
    sched.check_step(s)?;
    check_len(ys, eps_pred, "mu_theta")?;
    let ce = sched.beta(s) / (1.0 - sched.alpha_bar(s)).sqrt();
    let inv = 1.0 / sched.alpha(s).sqrt();
    Ok(ys.iter().zip(eps_pred).map(|(y, e)| inv * (y - ce * e)).collect())
}

/// One reverse step with variance `β_s`. The noise `z` is ignored at `s = 1`.
pub fn ddpm_step(
    ys: &[f64],
    s: usize,
    eps_pred: &[f64],
    z: &[f64],
    sched: &Schedule,
) -> Result<Vec<f64>> {
    let mut out = mu_theta(ys, s, eps_pred, sched)?;
    if s > 1 {
        check_len(ys, z, "ddpm_step")?;
        let sd = sched.beta(s).sqrt();
        for (o, z) in out.iter_mut().zip(z) {
            *o += sd * z;
        }
    }
    Ok(out)
}

/// A conditional noise predictor `ε_θ(Ys, s, G)`.
///
/// `ys` stacks `n` trajectories as an `(n·T) × 2` matrix, `steps[i]` is the
/// diffusion step of trajectory `i`, and `cond` is `n × d_cond`. The output
/// has the shape of `ys`.
pub trait NoisePredictor {
    fn predict_noise(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        ys: Var,
        steps: &[usize],
        cond: Var,
    ) -> Result<Var>;
}

fn normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Noise-prediction MSE over a batch. Each element draws `s ~ U{1..S}` then
/// `z ~ N(0, I)` from `rng`, in batch order.
pub fn training_loss<M: NoisePredictor + ?Sized>(
    g: &mut Graph,
    store: &ParamStore,
    model: &M,
    sched: &Schedule,
    y0: &[Vec<f64>],
    cond: Var,
    rng: &mut impl Rng,
) -> Result<Var> {
    ensure_arg!(!y0.is_empty(), "training_loss on an empty batch");
    let len = y0[0].len();
    ensure_arg!(len % 2 == 0 && len > 0, "trajectory buffer must hold 2D points");
    let mut steps = Vec::with_capacity(y0.len());
    let mut noisy = Vec::with_capacity(y0.len() * len);
    let mut noise = Vec::with_capacity(y0.len() * len);
    for y in y0 {
        ensure_arg!(y.len() == len, "ragged trajectory batch");
        let s = rng.gen_range(1..=sched.steps());
        let z = normal_vec(rng, len);
        noisy.extend(q_sample(y, s, &z, sched)?);
        noise.extend(z);
        steps.push(s);
    }
    let rows = y0.len() * len / 2;
    let ys = g.input(Tensor::matrix(rows, 2, noisy)?);
    let target = g.input(Tensor::matrix(rows, 2, noise)?);
    let eps = model.predict_noise(g, store, ys, &steps, cond)?;
    g.mse(eps, target)
}

/// RNG stream of chain `k` under `seed`; chains never share draws.
pub fn chain_rng(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

/// Runs one reverse chain per row of `cond`, chain `i` drawing its initial
/// noise and every injected noise from `rngs[i]`. Each returned buffer holds
/// `len` values.
///
/// Rows of the batched forward pass do not interact, so a chain's result
/// depends only on its own condition and RNG.
pub fn sample_chains<M: NoisePredictor + ?Sized>(
    model: &M,
    store: &ParamStore,
    sched: &Schedule,
    cond: &Tensor,
    rngs: &mut [ChaCha8Rng],
    len: usize,
) -> Result<Vec<Vec<f64>>> {
    let n = rngs.len();
    ensure_arg!(
        cond.is_matrix() && cond.rows() == n,
        "need one condition row per chain ({n}), got {:?}",
        cond.shape()
    );
    ensure_arg!(len % 2 == 0 && len > 0, "trajectory buffer must hold 2D points");
    let mut ys: Vec<Vec<f64>> = rngs.iter_mut().map(|r| normal_vec(r, len)).collect();
    if n == 0 {
        return Ok(ys);
    }
    for s in (1..=sched.steps()).rev() {
        let mut g = Graph::new();
        let flat: Vec<f64> = ys.iter().flatten().copied().collect();
        let yv = g.input(Tensor::matrix(n * len / 2, 2, flat)?);
        let cv = g.input(cond.clone());
        let eps = model.predict_noise(&mut g, store, yv, &vec![s; n], cv)?;
        let eps = g.value(eps).data();
        ensure_arg!(eps.len() == n * len, "noise predictor returned the wrong shape");
        for (i, (y, rng)) in ys.iter_mut().zip(rngs.iter_mut()).enumerate() {
            let z = if s > 1 { normal_vec(rng, len) } else { Vec::new() };
            *y = ddpm_step(y, s, &eps[i * len..(i + 1) * len], &z, sched)?;
        }
    }
    Ok(ys)
}

/// `n_samples` chains under `seed`, chain `k` on stream `k`.
pub fn sample<M: NoisePredictor + ?Sized>(
    model: &M,
    store: &ParamStore,
    sched: &Schedule,
    cond: &Tensor,
    seed: u64,
    len: usize,
) -> Result<Vec<Vec<f64>>> {
    let n = if cond.is_matrix() { cond.rows() } else { 0 };
    let mut rngs: Vec<ChaCha8Rng> = (0..n as u64).map(|k| chain_rng(seed, k)).collect();
    sample_chains(model, store, sched, cond, &mut rngs, len)
}
