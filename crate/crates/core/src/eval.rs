//! Displacement metrics, best-of-K scoring, batch prediction over a sample
//! set, and the prediction file format.

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{normalize, Point, Sample};
use crate::error::{ensure_arg, Error, Result};
use crate::memory::MemoryBank;
use crate::model::{Forecast, Mp2mNet};
use crate::tensor::ParamStore;
use crate::textio::{fmt_f64, Lines};

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check_pair(pred: &[Point], gt: &[Point]) -> Result<()> {
    ensure_arg!(
        pred.len() == gt.len() && !gt.is_empty(),
        "prediction has {} steps, ground truth {}",
        pred.len(),
        gt.len()
    );
    Ok(())
}

/// Mean L2 distance over all predicted steps.
pub fn ade(pred: &[Point], gt: &[Point]) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(p, g)| dist(*p, *g)).sum::<f64>() / gt.len() as f64)
}

/// L2 distance at the final step.
pub fn fde(pred: &[Point], gt: &[Point]) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok(dist(pred[pred.len() - 1], gt[gt.len() - 1]))
}

/// `(min ADE, min FDE)` over candidates, each minimum taken independently.
pub fn best_of_k(preds: &[Vec<Point>], gt: &[Point]) -> Result<(f64, f64)> {
    ensure_arg!(!preds.is_empty(), "best_of_k needs at least one candidate");
    let mut best = (f64::INFINITY, f64::INFINITY);
    for p in preds {
        best.0 = best.0.min(ade(p, gt)?);
        best.1 = best.1.min(fde(p, gt)?);
    }
    Ok(best)
}

/// Compensated running sum, so aggregates do not drift with sample order
/// or count.
#[derive(Debug, Default, Clone, Copy)]
struct Neumaier {
    sum: f64,
    c: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.c
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = Neumaier::default();
    let mut n = 0usize;
    for v in values {
        acc.add(v);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        acc.total() / n as f64
    }
}

/// Seed for the sample at `index` of an evaluation run under `seed`.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng.next_u64()
}

/// Scores over the first `k` candidates of every sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixScore {
    #[serde(rename = "K")]
    pub k: usize,
    pub ade: f64,
    pub fde: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub ade: f64,
    pub fde: f64,
    pub n: usize,
    pub seed: u64,
    /// The same metrics for nested candidate prefixes.
    pub nested: Vec<PrefixScore>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("bad report: {e}")))
    }
}

/// Prefix sizes reported alongside `k`.
pub fn nested_sizes(k: usize) -> Vec<usize> {
    let mut v: Vec<usize> = [1, 5, 20].into_iter().filter(|&m| m < k).collect();
    v.push(k);
    v
}

/// World-frame candidates and targets for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PredRecord {
    pub scene_id: String,
    pub agent_id: i64,
    pub observed: Vec<Point>,
    pub future: Vec<Point>,
    pub targets: Vec<Point>,
    pub candidates: Vec<Vec<Point>>,
}

/// Runs `predict` on every sample's normalized window and maps the results
/// back to world coordinates. `predict` gets the normalized sample and its
/// per-sample seed. Samples are spread over `workers` threads; results keep
/// sample order and do not depend on the worker count.
pub fn predict_samples<F>(samples: &[Sample], seed: u64, workers: usize, predict: F) -> Result<Vec<PredRecord>>
where
    F: Fn(&Sample, u64) -> Result<Forecast> + Sync,
{
    ensure_arg!(workers >= 1, "workers must be >= 1");
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::State(format!("thread pool: {e}")))?;
    pool.install(|| {
        samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let (norm, tf) = normalize(s);
                let f = predict(&norm, sample_seed(seed, i))?;
                Ok(PredRecord {
                    scene_id: s.scene_id.clone(),
                    agent_id: s.agent_id,
                    observed: s.observed.clone(),
                    future: s.future.clone(),
                    targets: tf.invert_traj(&f.targets),
                    candidates: f.candidates.iter().map(|c| tf.invert_traj(c)).collect(),
                })
            })
            .collect()
    })
}

/// Network predictions for every sample.
pub fn predict_with_model(
    net: &Mp2mNet,
    store: &ParamStore,
    bank: Option<&MemoryBank>,
    samples: &[Sample],
    k: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<PredRecord>> {
    predict_samples(samples, seed, workers, |s, sd| net.predict(store, &s.observed, bank, k, sd))
}

/// Aggregates best-of-K metrics over prediction records, with all
/// candidates and with each nested prefix.
pub fn score_records(records: &[PredRecord], split: &str, seed: u64) -> Result<EvalReport> {
    ensure_arg!(!records.is_empty(), "nothing to evaluate");
    let k = records[0].candidates.len();
    ensure_arg!(
        records.iter().all(|r| r.candidates.len() == k),
        "records disagree on the number of candidates"
    );
    let mut nested = Vec::new();
    for m in nested_sizes(k) {
        let per = records
            .iter()
            .map(|r| best_of_k(&r.candidates[..m], &r.future))
            .collect::<Result<Vec<_>>>()?;
        nested.push(PrefixScore {
            k: m,
            ade: mean(per.iter().map(|p| p.0)),
            fde: mean(per.iter().map(|p| p.1)),
        });
    }
    let full = nested.last().expect("nested includes k").clone();
    Ok(EvalReport {
        split: split.to_string(),
        k,
        ade: full.ade,
        fde: full.fde,
        n: records.len(),
        seed,
        nested,
    })
}

/// Predicts with the network and scores against ground truth. The bank must
/// be the one the checkpoint was trained with (checked by the caller via
/// [`crate::train::Checkpoint::check_bank`]).
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    net: &Mp2mNet,
    store: &ParamStore,
    bank: Option<&MemoryBank>,
    samples: &[Sample],
    split: &str,
    k: usize,
    seed: u64,
    workers: usize,
) -> Result<EvalReport> {
    let records = predict_with_model(net, store, bank, samples, k, seed, workers)?;
    score_records(&records, split, seed)
}

const PRED_MAGIC: &str = "mp2m-pred v1";

fn write_points(out: &mut String, tag: &str, pts: &[Point]) {
    out.push_str(tag);
    for p in pts {
        out.push(' ');
        out.push_str(&fmt_f64(p[0]));
        out.push(' ');
        out.push_str(&fmt_f64(p[1]));
    }
    out.push('\n');
}

fn read_points(lines: &mut Lines, tag: &str, count: usize) -> Result<Vec<Point>> {
    let (n, line) = lines.next_line()?;
    let mut it = line.split_whitespace();
    if it.next() != Some(tag) {
        return Err(Error::Format(format!("line {n}: expected `{tag} ...`, found {line:?}")));
    }
    let vals = it
        .map(|s| crate::textio::parse_f64(s).ok_or_else(|| Error::Format(format!("line {n}: bad number {s:?}"))))
        .collect::<Result<Vec<f64>>>()?;
    if vals.len() != 2 * count {
        return Err(Error::Format(format!(
            "line {n}: expected {count} points, found {} values",
            vals.len()
        )));
    }
    Ok(vals.chunks(2).map(|c| [c[0], c[1]]).collect())
}

/// Text form of prediction records.
pub fn write_predictions(records: &[PredRecord]) -> Result<String> {
    let k = records.first().map_or(0, |r| r.candidates.len());
    let t_obs = records.first().map_or(0, |r| r.observed.len());
    let t_pred = records.first().map_or(0, |r| r.future.len());
    let mut out = format!("{PRED_MAGIC}\nK {k}\nt_obs {t_obs}\nt_pred {t_pred}\nsamples {}\n", records.len());
    for r in records {
        ensure_arg!(
            r.candidates.len() == k
                && r.targets.len() == k
                && r.observed.len() == t_obs
                && r.future.len() == t_pred
                && r.candidates.iter().all(|c| c.len() == t_pred),
            "inconsistent prediction record for agent {}",
            r.agent_id
        );
        ensure_arg!(
            !r.scene_id.is_empty() && !r.scene_id.contains(char::is_whitespace),
            "scene ids must be non-empty without whitespace"
        );
        out.push_str(&format!("sample {} {}\n", r.scene_id, r.agent_id));
        write_points(&mut out, "obs", &r.observed);
        write_points(&mut out, "gt", &r.future);
        write_points(&mut out, "targets", &r.targets);
        for c in &r.candidates {
            write_points(&mut out, "cand", c);
        }
    }
    Ok(out)
}

pub fn read_predictions(text: &str) -> Result<Vec<PredRecord>> {
    let mut lines = Lines::new(text);
    let (_, magic) = lines.next_line()?;
    if magic != PRED_MAGIC {
        return Err(Error::Format(format!(
            "not a prediction file or unsupported version: {magic:?}"
        )));
    }
    let k: usize = lines.keyed("K")?;
    let t_obs: usize = lines.keyed("t_obs")?;
    let t_pred: usize = lines.keyed("t_pred")?;
    let n: usize = lines.keyed("samples")?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, line) = lines.next_line()?;
        let f: Vec<&str> = line.split_whitespace().collect();
        let agent_id = match f.as_slice() {
            ["sample", _, a] => a.parse::<i64>().ok(),
            _ => None,
        }
        .ok_or_else(|| Error::Format(format!("line {ln}: expected `sample <scene> <agent>`")))?;
        let scene_id = f[1].to_string();
        let observed = read_points(&mut lines, "obs", t_obs)?;
        let future = read_points(&mut lines, "gt", t_pred)?;
        let targets = read_points(&mut lines, "targets", k)?;
        let candidates = (0..k)
            .map(|_| read_points(&mut lines, "cand", t_pred))
            .collect::<Result<Vec<_>>>()?;
        out.push(PredRecord {
            scene_id,
            agent_id,
            observed,
            future,
            targets,
            candidates,
        });
    }
    lines.finish()?;
    Ok(out)
}

pub fn save_predictions(records: &[PredRecord], path: &Path) -> Result<()> {
    std::fs::write(path, write_predictions(records)?).map_err(|e| Error::io(path, e))
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_predictions(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};
    use proptest::prelude::*;
    use rand::Rng;

    fn line(n: usize, off: Point) -> Vec<Point> {
        (0..n).map(|i| [i as f64 + off[0], 0.5 * i as f64 + off[1]]).collect()
    }

    #[test]
    fn ade_examples() {
        let gt = line(12, [0.0, 0.0]);
        assert_eq!(ade(&gt, &gt).unwrap(), 0.0);
        assert!((ade(&line(12, [3.0, 4.0]), &gt).unwrap() - 5.0).abs() < 1e-12);
        let mut half = gt.clone();
        for p in half.iter_mut().take(6) {
            p[0] += 1.0;
        }
        assert!((ade(&half, &gt).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(ade(&gt[..3], &gt), Err(Error::Argument(_))));
    }

    #[test]
    fn fde_examples() {
        let gt = line(12, [0.0, 0.0]);
        assert_eq!(fde(&gt, &gt).unwrap(), 0.0);
        let mut p = gt.clone();
        p[11][1] += 2.0;
        assert_eq!(fde(&p, &gt).unwrap(), 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a: Vec<Point> = (0..12).map(|_| [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]).collect();
        let want = ((a[11][0] - gt[11][0]).powi(2) + (a[11][1] - gt[11][1]).powi(2)).sqrt();
        assert!((fde(&a, &gt).unwrap() - want).abs() < 1e-12);
        assert!(fde(&[], &[]).is_err());
    }

    #[test]
    fn best_of_k_examples() {
        let gt = line(5, [0.0, 0.0]);
        let cands = vec![line(5, [1.0, 0.0]), gt.clone(), line(5, [0.0, -2.0])];
        assert_eq!(best_of_k(&cands, &gt).unwrap(), (0.0, 0.0));
        let one = vec![line(5, [3.0, 4.0])];
        let (a, f) = best_of_k(&one, &gt).unwrap();
        assert_eq!((a, f), (ade(&one[0], &gt).unwrap(), fde(&one[0], &gt).unwrap()));
        assert!(matches!(best_of_k(&[], &gt), Err(Error::Argument(_))));
    }

    #[test]
    fn best_of_k_minima_are_independent() {
        let gt = vec![[0.0, 0.0], [0.0, 0.0]];
        // First is better on average, second is better at the end.
        let cands = vec![vec![[0.0, 0.0], [1.0, 0.0]], vec![[3.0, 0.0], [0.5, 0.0]]];
        assert_eq!(best_of_k(&cands, &gt).unwrap(), (0.5, 0.5));
    }

    proptest! {
        #[test]
        fn metric_symmetry_and_translation(
            pts in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 24),
            shift in (-100.0..100.0f64, -100.0..100.0f64),
        ) {
            let p: Vec<Point> = pts[..12].iter().map(|&(x, y)| [x, y]).collect();
            let g: Vec<Point> = pts[12..].iter().map(|&(x, y)| [x, y]).collect();
            prop_assert_eq!(ade(&p, &g).unwrap(), ade(&g, &p).unwrap());
            let sp: Vec<Point> = p.iter().map(|q| [q[0] + shift.0, q[1] + shift.1]).collect();
            let sg: Vec<Point> = g.iter().map(|q| [q[0] + shift.0, q[1] + shift.1]).collect();
            prop_assert!((ade(&sp, &sg).unwrap() - ade(&p, &g).unwrap()).abs() < 1e-9);
            prop_assert!((fde(&sp, &sg).unwrap() - fde(&p, &g).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn min_ade_is_monotone_in_nested_k(
            pts in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 20 * 4 + 4),
        ) {
            let pts: Vec<Point> = pts.iter().map(|&(x, y)| [x, y]).collect();
            let gt = pts[..4].to_vec();
            let cands: Vec<Vec<Point>> = pts[4..].chunks(4).map(|c| c.to_vec()).collect();
            let k1 = best_of_k(&cands[..1], &gt).unwrap().0;
            let k5 = best_of_k(&cands[..5], &gt).unwrap().0;
            let k20 = best_of_k(&cands, &gt).unwrap().0;
            prop_assert!(k20 <= k5 && k5 <= k1);
        }
    }

    fn test_samples() -> Vec<Sample> {
        synth_generate(&SynthConfig {
            n_per_pattern: 3,
            ..Default::default()
        })
        .unwrap()
    }

    fn stub(offset: Point, k: usize) -> impl Fn(&Sample, u64) -> Result<Forecast> + Sync {
        move |s: &Sample, _| {
            let c: Vec<Point> = s.future.iter().map(|p| [p[0] + offset[0], p[1] + offset[1]]).collect();
            Ok(Forecast {
                candidates: vec![c; k],
                targets: vec![s.endpoint(); k],
            })
        }
    }

    #[test]
    fn perfect_stub_scores_zero() {
        let samples = test_samples();
        let recs = predict_samples(&samples, 0, 1, stub([0.0, 0.0], 20)).unwrap();
        let r = score_records(&recs, "test", 0).unwrap();
        assert!(r.ade.abs() < 1e-12 && r.fde.abs() < 1e-12, "{r:?}");
        assert_eq!((r.n, r.k), (samples.len(), 20));
        assert_eq!(recs[0].future, samples[0].future);
    }

    #[test]
    fn offset_stub_scores_five() {
        let samples = test_samples();
        let recs = predict_samples(&samples, 0, 2, stub([3.0, 4.0], 3)).unwrap();
        let r = score_records(&recs, "test", 0).unwrap();
        assert!((r.ade - 5.0).abs() < 1e-12 && (r.fde - 5.0).abs() < 1e-12);
        assert_eq!(r.nested.iter().map(|p| p.k).collect::<Vec<_>>(), vec![1, 3]);
    }

    #[test]
    fn aggregate_is_mean_of_per_sample_values() {
        let samples = test_samples();
        let noisy = |s: &Sample, sd: u64| -> Result<Forecast> {
            let mut rng = ChaCha8Rng::seed_from_u64(sd);
            let c: Vec<Vec<Point>> = (0..4)
                .map(|_| s.future.iter().map(|p| [p[0] + rng.gen_range(-1.0..1.0), p[1]]).collect())
                .collect();
            Ok(Forecast {
                targets: vec![[0.0, 0.0]; 4],
                candidates: c,
            })
        };
        let recs = predict_samples(&samples, 7, 1, noisy).unwrap();
        let r = score_records(&recs, "test", 7).unwrap();
        let per: Vec<f64> = recs.iter().map(|x| best_of_k(&x.candidates, &x.future).unwrap().0).collect();
        let naive = per.iter().sum::<f64>() / per.len() as f64;
        assert!((r.ade - naive).abs() < 1e-12);
        let again = predict_samples(&samples, 7, 3, noisy).unwrap();
        assert_eq!(recs, again);
    }

    #[test]
    fn report_json_fields() {
        let r = EvalReport {
            split: "test".into(),
            k: 20,
            ade: 0.25,
            fde: 0.5,
            n: 10,
            seed: 3,
            nested: vec![],
        };
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in ["split", "K", "ade", "fde", "n", "seed"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(EvalReport::from_json(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn prediction_file_round_trip() {
        let samples = test_samples();
        let recs = predict_samples(&samples[..4], 0, 1, stub([0.1, -0.2], 2)).unwrap();
        let text = write_predictions(&recs).unwrap();
        let back = read_predictions(&text).unwrap();
        assert_eq!(back, recs);
        assert_eq!(write_predictions(&back).unwrap(), text);
        assert!(read_predictions(&text.replacen("v1", "v9", 1)).is_err());
        assert!(read_predictions(&text[..text.len() - 40]).is_err());
    }
}
