//! Adam training loop, gradient clipping and versioned checkpoints.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{normalize, Point, Sample, Split};
use crate::error::{ensure_arg, Error, Result};
use crate::memory::MemoryBank;
use crate::model::{rms_scale, LossParts, ModelConfig, Mp2mNet, TrainItem};
use crate::tensor::{Graph, Gradients, ParamStore};
use crate::textio::{flat_config, Lines};

const CKPT_MAGIC: &str = "mp2m-ckpt v1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Gradients are rescaled when their global norm exceeds this.
    pub clip_norm: f64,
    /// Replace the model's `traj_scale` by the RMS of the training futures.
    pub auto_scale: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 64,
            steps: 2000,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 10.0,
            auto_scale: true,
        }
    }
}

flat_config!(
    TrainConfig,
    "train",
    [lr, batch_size, steps, seed, beta1, beta2, adam_eps, clip_norm, auto_scale]
);

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_arg!(self.lr >= 0.0, "lr must be non-negative");
        ensure_arg!(self.batch_size >= 1, "batch_size must be >= 1");
        ensure_arg!(
            (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2),
            "Adam betas must lie in [0, 1)"
        );
        ensure_arg!(self.adam_eps > 0.0, "adam_eps must be positive");
        ensure_arg!(self.clip_norm > 0.0, "clip_norm must be positive");
        Ok(())
    }
}

/// First and second moment estimates, one tensor per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: ParamStore,
    pub v: ParamStore,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let mut zero = store.clone();
        let ids: Vec<_> = zero.ids().collect();
        for id in ids {
            zero.values_mut(id).iter_mut().for_each(|x| *x = 0.0);
        }
        AdamState {
            t: 0,
            m: zero.clone(),
            v: zero,
        }
    }
}

/// One bias-corrected Adam update: `w -= lr · m̂ / (√v̂ + ε)`.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    ensure_arg!(
        grads.len() == store.len() && state.m.len() == store.len() && state.v.len() == store.len(),
        "Adam: parameter, gradient and moment counts differ"
    );
    let ids: Vec<_> = store.ids().collect();
    for &id in &ids {
        let n = store.get(id).numel();
        ensure_arg!(
            grads.get(id).numel() == n && state.m.get(id).numel() == n && state.v.get(id).numel() == n,
            "Adam: shape mismatch for {}",
            store.name(id)
        );
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for id in ids {
        let g = grads.get(id).data();
        let m = state.m.values_mut(id);
        for (m, g) in m.iter_mut().zip(g) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        }
        let v = state.v.values_mut(id);
        for (v, g) in v.iter_mut().zip(g) {
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        }
        let (m, v) = (state.m.get(id).data(), state.v.get(id).data());
        let w = store.values_mut(id);
        for i in 0..w.len() {
            w[i] -= cfg.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Rescales `grads` to `max_norm` if their global norm is larger. Returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Serializable position of a ChaCha stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub step: u64,
    /// Content hash of the bank used for training, if any.
    pub bank_hash: Option<String>,
    pub rng: RngState,
    pub params: ParamStore,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(CKPT_MAGIC);
        out.push('\n');
        out.push_str(&format!("step {}\n", self.step));
        out.push_str(&format!("bank_hash {}\n", self.bank_hash.as_deref().unwrap_or("-")));
        out.push_str(&format!(
            "rng {} {} {}\n",
            hex::encode(self.rng.seed),
            self.rng.stream,
            self.rng.word_pos
        ));
        self.model.write_section(&mut out);
        self.train.write_section(&mut out);
        self.params.write_text(&mut out);
        out.push_str(&format!("adam_t {}\n", self.adam.t));
        self.adam.m.write_text(&mut out);
        self.adam.v.write_text(&mut out);
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let (_, magic) = lines.next_line()?;
        if magic != CKPT_MAGIC {
            return Err(Error::Format(format!(
                "not a checkpoint or unsupported version: {magic:?} (expected {CKPT_MAGIC:?})"
            )));
        }
        let step: u64 = lines.keyed("step")?;
        let hash: String = lines.keyed("bank_hash")?;
        let bank_hash = (hash != "-").then_some(hash);
        let (n, line) = lines.next_line()?;
        let bad_rng = || Error::Format(format!("line {n}: bad rng state {line:?}"));
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "rng" {
            return Err(bad_rng());
        }
        let seed: [u8; 32] = hex::decode(parts[1])
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or_else(bad_rng)?;
        let rng = RngState {
            seed,
            stream: parts[2].parse().map_err(|_| bad_rng())?,
            word_pos: parts[3].parse().map_err(|_| bad_rng())?,
        };
        let model = ModelConfig::read_text(&mut lines)?;
        let train = TrainConfig::read_section(&mut lines)?;
        let params = ParamStore::read_text(&mut lines)?;
        let t: u64 = lines.keyed("adam_t")?;
        let m = ParamStore::read_text(&mut lines)?;
        let v = ParamStore::read_text(&mut lines)?;
        lines.expect("end")?;
        lines.finish()?;
        let ckpt = Checkpoint {
            model,
            train,
            step,
            bank_hash,
            rng,
            params,
            adam: AdamState { t, m, v },
        };
        // The parameter layout must be exactly what this model config builds.
        let (_, mut fresh) = Mp2mNet::new(model, 0).map_err(|e| Error::Format(e.to_string()))?;
        fresh.load_values_from(&ckpt.params)?;
        fresh.load_values_from(&ckpt.adam.m)?;
        fresh.load_values_from(&ckpt.adam.v)?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// The network with this checkpoint's weights.
    pub fn network(&self) -> Result<(Mp2mNet, ParamStore)> {
        let (net, mut store) = Mp2mNet::new(self.model, 0)?;
        store.load_values_from(&self.params)?;
        Ok((net, store))
    }

    /// Errors unless `bank` is the one this model was trained with. Models
    /// trained without memory accept any bank or none.
    pub fn check_bank(&self, bank: Option<&MemoryBank>) -> Result<()> {
        if !self.model.use_memory {
            return Ok(());
        }
        let bank = bank.ok_or_else(|| Error::State("checkpoint was trained with a memory bank; pass --bank".into()))?;
        let hash = bank.content_hash();
        match &self.bank_hash {
            Some(h) if *h == hash => Ok(()),
            Some(h) => Err(Error::State(format!(
                "bank does not match checkpoint: checkpoint expects {h}, bank is {hash}"
            ))),
            None => Err(Error::State("checkpoint records no bank".into())),
        }
    }
}

/// Normalized training items; memory targets come from addressing each
/// observed window in `bank`.
pub fn prepare_items(
    samples: &[Sample],
    bank: Option<&MemoryBank>,
    t_obs: usize,
    t_pred: usize,
) -> Result<Vec<TrainItem>> {
    ensure_arg!(!samples.is_empty(), "no training samples");
    if let Some(b) = bank {
        if b.t_obs() != t_obs || b.t_pred() != t_pred {
            return Err(Error::State(format!(
                "bank windows are {}+{}, model expects {t_obs}+{t_pred}",
                b.t_obs(),
                b.t_pred()
            )));
        }
    }
    samples
        .iter()
        .map(|s| {
            if s.split != Split::Train {
                return Err(Error::State("training uses train-split samples only".into()));
            }
            if s.t_obs() != t_obs || s.t_pred() != t_pred {
                return Err(Error::State(format!(
                    "sample windows are {}+{}, model expects {t_obs}+{t_pred}",
                    s.t_obs(),
                    s.t_pred()
                )));
            }
            let n = normalize(s).0;
            let target: Point = match bank {
                Some(b) => b.address(&n.observed)?.1.mean,
                None => [0.0, 0.0],
            };
            Ok(TrainItem {
                observed: n.observed,
                future: n.future,
                target,
            })
        })
        .collect()
}

/// Mutable training run: weights, optimizer state and the minibatch RNG.
pub struct Trainer {
    pub net: Mp2mNet,
    pub store: ParamStore,
    pub cfg: TrainConfig,
    pub adam: AdamState,
    pub step: u64,
    pub bank_hash: Option<String>,
    items: Vec<TrainItem>,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: LossParts,
    pub grad_norm: f64,
}

impl Trainer {
    /// Fresh run. Weights are initialized from `cfg.seed`; minibatches and
    /// diffusion noise come from stream 1 of the same seed.
    pub fn new(
        mut model: ModelConfig,
        cfg: TrainConfig,
        samples: &[Sample],
        bank: Option<&MemoryBank>,
    ) -> Result<Self> {
        cfg.validate()?;
        if model.use_memory && bank.is_none() {
            return Err(Error::State("use_memory is set but no bank was given".into()));
        }
        let bank = if model.use_memory { bank } else { None };
        let items = prepare_items(samples, bank, model.t_obs, model.t_pred)?;
        if cfg.auto_scale {
            model.traj_scale = rms_scale(items.iter().map(|i| i.future.as_slice()));
        }
        let (net, store) = Mp2mNet::new(model, cfg.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(Trainer {
            adam: AdamState::new(&store),
            net,
            store,
            cfg,
            step: 0,
            bank_hash: bank.map(MemoryBank::content_hash),
            items,
            rng,
        })
    }

    /// Continues from a checkpoint on the same data.
    pub fn resume(ckpt: &Checkpoint, samples: &[Sample], bank: Option<&MemoryBank>) -> Result<Self> {
        ckpt.check_bank(bank)?;
        let bank = if ckpt.model.use_memory { bank } else { None };
        let items = prepare_items(samples, bank, ckpt.model.t_obs, ckpt.model.t_pred)?;
        let (net, store) = ckpt.network()?;
        Ok(Trainer {
            net,
            store,
            cfg: ckpt.train,
            adam: ckpt.adam.clone(),
            step: ckpt.step,
            bank_hash: ckpt.bank_hash.clone(),
            items,
            rng: ckpt.rng.restore(),
        })
    }

    pub fn train_step(&mut self) -> Result<StepReport> {
        let n = self.items.len();
        let batch: Vec<TrainItem> = (0..self.cfg.batch_size)
            .map(|_| self.items[self.rng.gen_range(0..n)].clone())
            .collect();
        let mut g = Graph::new();
        let (loss, parts) = self.net.loss(&mut g, &self.store, &batch, &mut self.rng)?;
        let mut grads = g.backward(loss, &self.store)?;
        let grad_norm = clip_grad_norm(&mut grads, self.cfg.clip_norm);
        adam_step(&mut self.store, &grads, &mut self.adam, &self.cfg)?;
        self.step += 1;
        Ok(StepReport {
            step: self.step,
            loss: parts,
            grad_norm,
        })
    }

    /// Runs until `cfg.steps` total steps, calling `log` after each one.
    pub fn run(&mut self, mut log: impl FnMut(&StepReport)) -> Result<Vec<f64>> {
        let mut curve = Vec::new();
        while self.step < self.cfg.steps {
            let r = self.train_step()?;
            curve.push(r.loss.diffusion);
            log(&r);
        }
        Ok(curve)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.net.cfg,
            train: self.cfg,
            step: self.step,
            bank_hash: self.bank_hash.clone(),
            rng: RngState::capture(&self.rng),
            params: self.store.clone(),
            adam: self.adam.clone(),
        }
    }
}

/// Trains from scratch; returns the final checkpoint and the per-step
/// diffusion loss.
pub fn train(
    model: ModelConfig,
    cfg: TrainConfig,
    samples: &[Sample],
    bank: Option<&MemoryBank>,
) -> Result<(Checkpoint, Vec<f64>)> {
    let mut t = Trainer::new(model, cfg, samples, bank)?;
    let curve = t.run(|_| {})?;
    Ok((t.checkpoint(), curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};
    use crate::memory::build_bank;
    use crate::tensor::Tensor;

    fn scalar_store(w: f64) -> (ParamStore, crate::tensor::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(w)).unwrap();
        (s, id)
    }

    fn grad_of(store: &ParamStore, id: crate::tensor::ParamId, g: f64) -> Gradients {
        let mut grads = Gradients::zeros_like(store);
        grads.get_mut(id).data_mut()[0] = g;
        grads
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let (mut s, id) = scalar_store(1.5);
        let mut st = AdamState::new(&s);
        let g = Gradients::zeros_like(&s);
        adam_step(&mut s, &g, &mut st, &TrainConfig::default()).unwrap();
        assert_eq!(s.get(id).item(), 1.5);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        for g in [0.003, -250.0] {
            let (mut s, id) = scalar_store(0.0);
            let mut st = AdamState::new(&s);
            let cfg = TrainConfig::default();
            let grads = grad_of(&s, id, g);
            adam_step(&mut s, &grads, &mut st, &cfg).unwrap();
            assert!((s.get(id).item() + cfg.lr * g.signum()).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_minimizes_quadratic_like_scalar_recurrence() {
        let cfg = TrainConfig {
            lr: 0.1,
            ..Default::default()
        };
        let (mut s, id) = scalar_store(0.0);
        let mut st = AdamState::new(&s);
        // Independent scalar oracle of the same recurrence.
        let (mut w, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = 2.0 * (s.get(id).item() - 3.0);
            let grads = grad_of(&s, id, g);
            adam_step(&mut s, &grads, &mut st, &cfg).unwrap();
            let go = 2.0 * (w - 3.0);
            m = 0.9 * m + 0.1 * go;
            v = 0.999 * v + 0.001 * go * go;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((s.get(id).item() - w).abs() < 1e-12);
        assert!((w - 3.0).abs() < 0.1, "{w}");
    }

    #[test]
    fn adam_rejects_mismatched_state() {
        let (mut s, id) = scalar_store(0.0);
        let (other, _) = {
            let mut o = ParamStore::new();
            let i = o.add("w", Tensor::zeros(&[1, 2])).unwrap();
            (o, i)
        };
        let mut st = AdamState::new(&other);
        let grads = grad_of(&s, id, 1.0);
        assert!(matches!(
            adam_step(&mut s, &grads, &mut st, &TrainConfig::default()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn clipping_caps_the_norm() {
        let (s, id) = scalar_store(0.0);
        let mut g = grad_of(&s, id, -40.0);
        assert_eq!(clip_grad_norm(&mut g, 10.0), 40.0);
        assert_eq!(g.get(id).item(), -10.0);
        let mut g = grad_of(&s, id, 3.0);
        clip_grad_norm(&mut g, 10.0);
        assert_eq!(g.get(id).item(), 3.0);
    }

    pub(crate) fn tiny_model() -> ModelConfig {
        ModelConfig {
            t_obs: 4,
            t_pred: 3,
            d_state: 8,
            d_token: 8,
            d_cond: 8,
            mlp_hidden: 8,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            ffn_hidden: 8,
            d_time: 8,
            diffusion_steps: 10,
            ..ModelConfig::default()
        }
    }

    fn data() -> (Vec<Sample>, MemoryBank) {
        let cfg = SynthConfig {
            t_obs: 4,
            t_pred: 3,
            n_patterns: 4,
            n_per_pattern: 10,
            ..Default::default()
        };
        let samples = synth_generate(&cfg).unwrap();
        let norm: Vec<Sample> = samples.iter().map(|s| normalize(s).0).collect();
        let bank = build_bank(&norm, 4, 0, 1e-6).unwrap();
        (samples, bank)
    }

    fn tcfg(steps: u64) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: 4,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let (samples, bank) = data();
        let (ckpt, curve) = train(tiny_model(), tcfg(0), &samples, Some(&bank)).unwrap();
        assert!(curve.is_empty());
        let model = ModelConfig {
            traj_scale: ckpt.model.traj_scale,
            ..tiny_model()
        };
        let (_, init) = Mp2mNet::new(model, 3).unwrap();
        assert_eq!(ckpt.params, init);
        assert_eq!(ckpt.bank_hash, Some(bank.content_hash()));
    }

    #[test]
    fn training_is_deterministic_and_respects_lr_zero() {
        let (samples, bank) = data();
        let (a, ca) = train(tiny_model(), tcfg(20), &samples, Some(&bank)).unwrap();
        let (b, cb) = train(tiny_model(), tcfg(20), &samples, Some(&bank)).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a, b);
        let (init, _) = train(tiny_model(), tcfg(0), &samples, Some(&bank)).unwrap();
        let (frozen, _) = train(tiny_model(), TrainConfig { lr: 0.0, ..tcfg(20) }, &samples, Some(&bank)).unwrap();
        assert_eq!(frozen.params, init.params);
        assert_ne!(a.params, init.params);
    }

    #[test]
    fn training_refuses_mismatched_inputs() {
        let (samples, bank) = data();
        let bad = ModelConfig { t_obs: 5, ..tiny_model() };
        assert!(matches!(train(bad, tcfg(1), &samples, Some(&bank)), Err(Error::State(_))));
        assert!(matches!(train(tiny_model(), tcfg(1), &samples, None), Err(Error::State(_))));
        let mut test = samples.clone();
        test[0].split = Split::Test;
        assert!(matches!(train(tiny_model(), tcfg(1), &test, Some(&bank)), Err(Error::State(_))));
        let nomem = ModelConfig { use_memory: false, ..tiny_model() };
        assert!(train(nomem, tcfg(2), &samples, None).is_ok());
    }

    #[test]
    fn training_does_not_touch_bank_or_data() {
        let (samples, bank) = data();
        let (s0, b0) = (samples.clone(), bank.to_text());
        train(tiny_model(), tcfg(5), &samples, Some(&bank)).unwrap();
        assert_eq!(samples, s0);
        assert_eq!(bank.to_text(), b0);
    }

    #[test]
    fn checkpoint_round_trip_and_version() {
        let (samples, bank) = data();
        let (ckpt, _) = train(tiny_model(), tcfg(7), &samples, Some(&bank)).unwrap();
        let text = ckpt.to_text();
        let back = Checkpoint::from_text(&text).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_text(), text);
        let v2 = text.replacen(CKPT_MAGIC, "mp2m-ckpt v2", 1);
        assert!(matches!(Checkpoint::from_text(&v2), Err(Error::Format(_))));
        let cut = &text[..text.len() / 2];
        assert!(matches!(Checkpoint::from_text(cut), Err(Error::Format(_))));
        let renamed = text.replacen("den.head2.w", "den.head9.w", 1);
        assert!(matches!(Checkpoint::from_text(&renamed), Err(Error::Format(_))));
    }

    #[test]
    fn reloaded_weights_forward_identically() {
        let (samples, bank) = data();
        let (ckpt, _) = train(tiny_model(), tcfg(4), &samples, Some(&bank)).unwrap();
        let back = Checkpoint::from_text(&ckpt.to_text()).unwrap();
        let obs = normalize(&samples[5]).0.observed;
        let (n1, s1) = ckpt.network().unwrap();
        let (n2, s2) = back.network().unwrap();
        assert_eq!(
            n1.predict(&s1, &obs, Some(&bank), 3, 1).unwrap(),
            n2.predict(&s2, &obs, Some(&bank), 3, 1).unwrap()
        );
    }

    #[test]
    fn resumed_run_matches_unbroken_run() {
        let (samples, bank) = data();
        let mut full = Trainer::new(tiny_model(), tcfg(100), &samples, Some(&bank)).unwrap();
        let full_curve = full.run(|_| {}).unwrap();

        let mut first = Trainer::new(tiny_model(), tcfg(40), &samples, Some(&bank)).unwrap();
        let mut curve = first.run(|_| {}).unwrap();
        let mut ckpt = Checkpoint::from_text(&first.checkpoint().to_text()).unwrap();
        ckpt.train.steps = 100;
        let mut second = Trainer::resume(&ckpt, &samples, Some(&bank)).unwrap();
        curve.extend(second.run(|_| {}).unwrap());
        assert_eq!(curve, full_curve);
        assert_eq!(second.store, full.store);
    }

    #[test]
    fn bank_hash_is_checked() {
        let (samples, bank) = data();
        let (ckpt, _) = train(tiny_model(), tcfg(1), &samples, Some(&bank)).unwrap();
        assert!(ckpt.check_bank(Some(&bank)).is_ok());
        assert!(matches!(ckpt.check_bank(None), Err(Error::State(_))));
        let norm: Vec<Sample> = samples.iter().map(|s| normalize(s).0).collect();
        let other = build_bank(&norm, 3, 0, 1e-6).unwrap();
        assert!(matches!(ckpt.check_bank(Some(&other)), Err(Error::State(_))));
    }
}
