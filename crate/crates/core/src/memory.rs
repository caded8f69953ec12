//! Motion-pattern priors memory: k-means over normalized training
//! trajectories, per-cluster Gaussian statistics, and addressing by minimum
//! Gaussian negative log-likelihood of the observed window.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::data::{Point, Sample, Split};
use crate::error::{ensure_arg, Error, Result};
use crate::textio::{fmt_f64, Lines};

pub const DEFAULT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub sse_history: Vec<f64>,
    pub converged: bool,
}

impl KMeansResult {
    pub fn sse(&self) -> f64 {
        self.sse_history.last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tol: f64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            seed,
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid, lowest index on ties.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(point, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's algorithm with greedy farthest-point seeding.
///
/// The first seed is a uniformly random point (from `seed`); each further seed
/// is the point farthest from all seeds chosen so far. A cluster that empties
/// during assignment takes the point farthest from its own centroid among
/// clusters with more than one member, so every cluster ends non-empty.
pub fn kmeans(points: &[Vec<f64>], cfg: &KMeansConfig) -> Result<KMeansResult> {
    let n = points.len();
    ensure_arg!(cfg.k >= 1, "k must be >= 1");
    ensure_arg!(cfg.k <= n, "k = {} exceeds the {} trajectories", cfg.k, n);
    let dim = points[0].len();
    ensure_arg!(
        points.iter().all(|p| p.len() == dim),
        "all trajectories must have the same length"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let first = rng.gen_range(0..n);
    let mut centroids = vec![points[first].clone()];
    let mut min_d: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while centroids.len() < cfg.k {
        let mut far = 0;
        for (i, &d) in min_d.iter().enumerate() {
            if d > min_d[far] {
                far = i;
            }
        }
        centroids.push(points[far].clone());
        for (m, p) in min_d.iter_mut().zip(points) {
            *m = m.min(sq_dist(p, &points[far]));
        }
    }

    let mut assignments = vec![0; n];
    let mut sse_history = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        let mut dist = vec![0.0; n];
        let mut counts = vec![0usize; cfg.k];
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            assignments[i] = c;
            dist[i] = d;
            counts[c] += 1;
        }
        for c in 0..cfg.k {
            if counts[c] > 0 {
                continue;
            }
            let mut donor: Option<usize> = None;
            for i in 0..n {
                if counts[assignments[i]] > 1 && donor.map_or(true, |d| dist[i] > dist[d]) {
                    donor = Some(i);
                }
            }
            let i = donor.expect("k <= n guarantees a multi-member cluster");
            counts[assignments[i]] -= 1;
            assignments[i] = c;
            counts[c] = 1;
            dist[i] = 0.0;
        }

        let mut sums = vec![vec![0.0; dim]; cfg.k];
        for (p, &c) in points.iter().zip(&assignments) {
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        let new_centroids: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &cnt)| s.into_iter().map(|v| v / cnt as f64).collect())
            .collect();
        let shift = centroids
            .iter()
            .zip(&new_centroids)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = new_centroids;
        let sse = points
            .iter()
            .zip(&assignments)
            .map(|(p, &c)| sq_dist(p, &centroids[c]))
            .sum();
        sse_history.push(sse);
        if shift < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(KMeansResult {
        assignments,
        centroids,
        sse_history,
        converged,
    })
}

/// Gaussian over a full `(t_obs + t_pred) × 2` trajectory with diagonal variance.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionPattern {
    pub mu: Vec<Point>,
    pub var: Vec<Point>,
    pub member_count: usize,
}

/// Diagonal Gaussian over the final future position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetDistribution {
    pub mean: Point,
    pub cov_diag: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    patterns: Vec<MotionPattern>,
    targets: Vec<TargetDistribution>,
    t_obs: usize,
    t_pred: usize,
    eps: f64,
}

impl MemoryBank {
    pub fn new(
        patterns: Vec<MotionPattern>,
        targets: Vec<TargetDistribution>,
        t_obs: usize,
        t_pred: usize,
        eps: f64,
    ) -> Result<Self> {
        let bad = |m: String| Err(Error::Argument(m));
        if patterns.len() != targets.len() {
            return bad(format!(
                "{} patterns but {} targets",
                patterns.len(),
                targets.len()
            ));
        }
        if t_obs == 0 || t_pred == 0 {
            return bad("t_obs and t_pred must be >= 1".into());
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return bad(format!("eps must be positive, got {eps}"));
        }
        for (k, p) in patterns.iter().enumerate() {
            if p.mu.len() != t_obs + t_pred || p.var.len() != t_obs + t_pred {
                return bad(format!("pattern {k} has the wrong number of steps"));
            }
            if p.var.iter().flatten().any(|v| !(*v >= 0.0)) {
                return bad(format!("pattern {k} has a negative variance"));
            }
            if p.member_count == 0 {
                return bad(format!("pattern {k} has no members"));
            }
        }
        if targets.iter().any(|t| !(t.cov_diag[0] >= 0.0 && t.cov_diag[1] >= 0.0)) {
            return bad("target variance must be >= 0".into());
        }
        Ok(MemoryBank {
            patterns,
            targets,
            t_obs,
            t_pred,
            eps,
        })
    }

    pub fn k(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn patterns(&self) -> &[MotionPattern] {
        &self.patterns
    }

    pub fn targets(&self) -> &[TargetDistribution] {
        &self.targets
    }

    pub fn t_obs(&self) -> usize {
        self.t_obs
    }

    pub fn t_pred(&self) -> usize {
        self.t_pred
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Pattern index with the lowest NLL for an observed window (already
    /// normalized), lowest index on ties, together with that pattern's target.
    pub fn address(&self, observed: &[Point]) -> Result<(usize, TargetDistribution)> {
        if self.patterns.is_empty() {
            return Err(Error::State("cannot address an empty memory bank".into()));
        }
        ensure_arg!(
            observed.len() == self.t_obs,
            "query has {} steps, bank expects {}",
            observed.len(),
            self.t_obs
        );
        let mut best = (0, f64::INFINITY);
        for (k, p) in self.patterns.iter().enumerate() {
            let s = nll_score(observed, &p.mu[..self.t_obs], &p.var[..self.t_obs], self.eps)?;
            if s < best.1 {
                best = (k, s);
            }
        }
        Ok((best.0, self.targets[best.0]))
    }

    /// Versioned text serialization; floats are written in shortest
    /// round-trip form so loading reproduces every bit.
    ///
    /// ```text
    /// mp2m-bank v1
    /// K <k>
    /// t_obs <t_obs>
    /// t_pred <t_pred>
    /// eps <eps>
    /// pattern <index> <member_count>      (then, per pattern, three lines:)
    /// <mu: 2(t_obs+t_pred) values, x y per step>
    /// <var: 2(t_obs+t_pred) values>
    /// <target: mean_x mean_y var_x var_y>
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{BANK_MAGIC}\nK {}\nt_obs {}\nt_pred {}\neps {}\n",
            self.k(),
            self.t_obs,
            self.t_pred,
            fmt_f64(self.eps)
        );
        let line = |vals: &mut dyn Iterator<Item = f64>| {
            vals.map(fmt_f64).collect::<Vec<_>>().join(" ") + "\n"
        };
        for (k, (p, t)) in self.patterns.iter().zip(&self.targets).enumerate() {
            out.push_str(&format!("pattern {k} {}\n", p.member_count));
            out.push_str(&line(&mut p.mu.iter().flatten().copied()));
            out.push_str(&line(&mut p.var.iter().flatten().copied()));
            out.push_str(&line(
                &mut [t.mean[0], t.mean[1], t.cov_diag[0], t.cov_diag[1]].into_iter(),
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        lines.expect(BANK_MAGIC)?;
        let k: usize = lines.keyed("K")?;
        let t_obs: usize = lines.keyed("t_obs")?;
        let t_pred: usize = lines.keyed("t_pred")?;
        let eps: f64 = lines.keyed("eps")?;
        let steps = t_obs + t_pred;
        let mut patterns = Vec::with_capacity(k);
        let mut targets = Vec::with_capacity(k);
        for idx in 0..k {
            let (n, header) = lines.next_line()?;
            let f: Vec<&str> = header.split_whitespace().collect();
            let member_count = match f.as_slice() {
                ["pattern", i, m] if i.parse::<usize>().ok() == Some(idx) => m
                    .parse::<usize>()
                    .map_err(|_| Error::Format(format!("line {n}: bad member count")))?,
                _ => {
                    return Err(Error::Format(format!(
                        "line {n}: expected `pattern {idx} <members>`, found {header:?}"
                    )))
                }
            };
            let to_points = |v: Vec<f64>| v.chunks(2).map(|c| [c[0], c[1]]).collect::<Vec<_>>();
            let mu = to_points(lines.values(2 * steps)?);
            let var = to_points(lines.values(2 * steps)?);
            let t = lines.values(4)?;
            patterns.push(MotionPattern {
                mu,
                var,
                member_count,
            });
            targets.push(TargetDistribution {
                mean: [t[0], t[1]],
                cov_diag: [t[2], t[3]],
            });
        }
        lines.finish()?;
        MemoryBank::new(patterns, targets, t_obs, t_pred, eps).map_err(|e| Error::Format(e.to_string()))
    }

    /// SHA-256 of the text serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

const BANK_MAGIC: &str = "mp2m-bank v1";

/// Mean over all `2·T` entries of `½ (ln v' + (x − μ)² / v')` with
/// `v' = max(v, eps)`, where `v` is the stored per-step variance.
pub fn nll_score(x: &[Point], mu: &[Point], var: &[Point], eps: f64) -> Result<f64> {
    ensure_arg!(
        x.len() == mu.len() && x.len() == var.len(),
        "nll_score: lengths {} / {} / {} differ",
        x.len(),
        mu.len(),
        var.len()
    );
    ensure_arg!(!x.is_empty(), "nll_score: empty window");
    ensure_arg!(eps > 0.0, "nll_score: eps must be positive");
    let mut total = 0.0;
    for ((xp, mp), vp) in x.iter().zip(mu).zip(var) {
        for c in 0..2 {
            let v = vp[c].max(eps);
            let r = xp[c] - mp[c];
            total += 0.5 * (v.ln() + r * r / v);
        }
    }
    Ok(total / (2 * x.len()) as f64)
}

/// Clusters the (already normalized) training windows and summarizes each
/// cluster. Every sample must carry [`Split::Train`].
pub fn build_bank(samples: &[Sample], k: usize, seed: u64, eps: f64) -> Result<MemoryBank> {
    ensure_arg!(!samples.is_empty(), "cannot build a bank from no samples");
    if let Some(s) = samples.iter().find(|s| s.split != Split::Train) {
        return Err(Error::State(format!(
            "bank construction got a {} sample (agent {}); only training windows are allowed",
            s.split, s.agent_id
        )));
    }
    let t_obs = samples[0].t_obs();
    let t_pred = samples[0].t_pred();
    for s in samples {
        s.validate(t_obs, t_pred)?;
    }
    let flat: Vec<Vec<f64>> = samples.iter().map(Sample::flat_full).collect();
    let km = kmeans(&flat, &KMeansConfig::new(k, seed))?;
    let steps = t_obs + t_pred;
    let mut patterns = Vec::with_capacity(k);
    let mut targets = Vec::with_capacity(k);
    for c in 0..k {
        let members: Vec<&Vec<f64>> = flat
            .iter()
            .zip(&km.assignments)
            .filter(|(_, &a)| a == c)
            .map(|(f, _)| f)
            .collect();
        let (mean, var) = mean_var(&members, 2 * steps);
        let pts = |v: &[f64]| v.chunks(2).map(|c| [c[0], c[1]]).collect::<Vec<Point>>();
        let last = 2 * (steps - 1);
        targets.push(TargetDistribution {
            mean: [mean[last], mean[last + 1]],
            cov_diag: [var[last], var[last + 1]],
        });
        patterns.push(MotionPattern {
            mu: pts(&mean),
            var: pts(&var),
            member_count: members.len(),
        });
    }
    MemoryBank::new(patterns, targets, t_obs, t_pred, eps)
}

/// Per-coordinate mean and population variance (divide by n; zero for one member).
fn mean_var(members: &[&Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = members.len() as f64;
    let mut mean = vec![0.0; dim];
    for m in members {
        for (a, v) in mean.iter_mut().zip(m.iter()) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n);
    let mut var = vec![0.0; dim];
    for m in members {
        for ((a, v), mu) in var.iter_mut().zip(m.iter()).zip(&mean) {
            *a += (v - mu) * (v - mu);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{normalize, synth_generate, synth_template, SynthConfig};
    use proptest::prelude::*;
    use rand::Rng;

    fn normalized(samples: &[Sample]) -> Vec<Sample> {
        samples.iter().map(|s| normalize(s).0).collect()
    }

    fn synth(n_per: usize, n_test: usize, seed: u64) -> (Vec<Sample>, Vec<Sample>) {
        let cfg = SynthConfig {
            n_per_pattern: n_per,
            n_test_per_pattern: n_test,
            noise_std: 0.05,
            seed,
            ..Default::default()
        };
        let all = normalized(&synth_generate(&cfg).unwrap());
        all.into_iter().partition(|s| s.split == Split::Train)
    }

    /// Fraction of points whose cluster maps to their label under a greedy
    /// one-to-one matching of (cluster, label) pairs by co-occurrence count.
    fn greedy_agreement(assign: &[usize], labels: &[usize], k: usize) -> f64 {
        let mut counts = vec![vec![0usize; k]; k];
        for (&a, &l) in assign.iter().zip(labels) {
            counts[a][l] += 1;
        }
        let mut pairs: Vec<(usize, usize, usize)> = (0..k)
            .flat_map(|a| (0..k).map(move |l| (a, l)))
            .map(|(a, l)| (counts[a][l], a, l))
            .collect();
        pairs.sort_by(|x, y| y.cmp(x));
        let (mut used_a, mut used_l) = (vec![false; k], vec![false; k]);
        let mut hit = 0;
        for (c, a, l) in pairs {
            if !used_a[a] && !used_l[l] {
                used_a[a] = true;
                used_l[l] = true;
                hit += c;
            }
        }
        hit as f64 / assign.len() as f64
    }

    #[test]
    fn kmeans_single_cluster_is_the_mean() {
        let pts = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, -1.0]];
        let r = kmeans(&pts, &KMeansConfig::new(1, 5)).unwrap();
        assert_eq!(r.centroids[0], vec![2.0, 1.0]);
        assert_eq!(r.assignments, vec![0, 0, 0]);
    }

    #[test]
    fn kmeans_k_equals_n_has_zero_sse() {
        let pts: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let r = kmeans(&pts, &KMeansConfig::new(7, 1)).unwrap();
        assert_eq!(r.sse(), 0.0);
        let mut a = r.assignments.clone();
        a.sort();
        a.dedup();
        assert_eq!(a.len(), 7);
    }

    #[test]
    fn kmeans_rejects_k_above_n() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            kmeans(&pts, &KMeansConfig::new(3, 0)),
            Err(Error::Argument(_))
        ));
        assert!(kmeans(&[vec![0.0], vec![1.0, 2.0]], &KMeansConfig::new(1, 0)).is_err());
    }

    #[test]
    fn kmeans_recovers_synthetic_patterns() {
        let (train, _) = synth(60, 0, 3);
        let flat: Vec<Vec<f64>> = train.iter().map(Sample::flat_full).collect();
        let labels: Vec<usize> = train.iter().map(|s| s.pattern_label.unwrap()).collect();
        let r = kmeans(&flat, &KMeansConfig::new(8, 9)).unwrap();
        assert!(greedy_agreement(&r.assignments, &labels, 8) >= 0.99);
    }

    #[test]
    fn kmeans_is_deterministic_given_seed() {
        let (train, _) = synth(10, 0, 4);
        let flat: Vec<Vec<f64>> = train.iter().map(Sample::flat_full).collect();
        let a = kmeans(&flat, &KMeansConfig::new(5, 2)).unwrap();
        let b = kmeans(&flat, &KMeansConfig::new(5, 2)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn kmeans_sse_never_increases(
            pts in proptest::collection::vec(proptest::collection::vec(-10.0..10.0f64, 3), 6..40),
            k in 1usize..6,
            seed in any::<u64>(),
        ) {
            let k = k.min(pts.len());
            let r = kmeans(&pts, &KMeansConfig::new(k, seed)).unwrap();
            for w in r.sse_history.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", r.sse_history);
            }
            let mut counts = vec![0; k];
            r.assignments.iter().for_each(|&a| counts[a] += 1);
            prop_assert!(counts.iter().all(|&c| c >= 1));
        }
    }

    #[test]
    fn identical_samples_collapse() {
        let cfg = SynthConfig {
            noise_std: 0.0,
            n_per_pattern: 6,
            n_patterns: 2,
            ..Default::default()
        };
        let one: Vec<Sample> = normalized(&synth_generate(&cfg).unwrap())
            .into_iter()
            .filter(|s| s.pattern_label == Some(0))
            .collect();
        let bank = build_bank(&one, 3, 1, DEFAULT_EPS).unwrap();
        for p in bank.patterns() {
            assert_eq!(p.mu, bank.patterns()[0].mu);
            assert!(p.var.iter().flatten().all(|&v| v == 0.0));
        }
        assert_eq!(bank.patterns().iter().map(|p| p.member_count).sum::<usize>(), 6);
    }

    #[test]
    fn two_straight_patterns_targets_match_templates() {
        let cfg = SynthConfig {
            n_patterns: 2,
            n_per_pattern: 200,
            noise_std: 0.05,
            seed: 8,
            ..Default::default()
        };
        let train = normalized(&synth_generate(&cfg).unwrap());
        let bank = build_bank(&train, 2, 0, DEFAULT_EPS).unwrap();
        let ends: Vec<Point> = (0..2).map(|k| *synth_template(&cfg, k).last().unwrap()).collect();
        for t in bank.targets() {
            let d = ends
                .iter()
                .map(|e| ((e[0] - t.mean[0]).powi(2) + (e[1] - t.mean[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(d <= cfg.noise_std, "target {:?} is {d} from nearest template end", t.mean);
            // Endpoint variance is noise² from the endpoint plus noise² from the
            // subtracted last observed point.
            for v in t.cov_diag {
                assert!((v - 2.0 * 0.05f64.powi(2)).abs() < 0.002, "{v}");
            }
        }
        assert_eq!(bank.patterns().iter().map(|p| p.member_count).sum::<usize>(), 400);
    }

    #[test]
    fn build_bank_refuses_test_windows() {
        let (mut train, test) = synth(3, 1, 0);
        train.push(test[0].clone());
        assert!(matches!(build_bank(&train, 2, 0, DEFAULT_EPS), Err(Error::State(_))));
    }

    #[test]
    fn nll_examples() {
        let x = vec![[0.3, -0.2]; 8];
        let ones = vec![[1.0, 1.0]; 8];
        assert_eq!(nll_score(&x, &x, &ones, 1e-6).unwrap(), 0.0);
        let shifted: Vec<Point> = x.iter().map(|p| [p[0] + 1.0, p[1] - 1.0]).collect();
        assert!((nll_score(&shifted, &x, &ones, 1e-6).unwrap() - 0.5).abs() < 1e-15);
        let zeros = vec![[0.0, 0.0]; 8];
        // ½·ln(1e-6) = -3·ln(10) = -6.907755278982137
        let want = -3.0 * std::f64::consts::LN_10;
        assert!((nll_score(&x, &x, &zeros, 1e-6).unwrap() - want).abs() < 1e-12);
        assert!((want + 6.907755278982137).abs() < 1e-12);
        assert!(nll_score(&x[..3], &x, &ones, 1e-6).is_err());
    }

    #[test]
    fn nll_is_minimized_at_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mu: Vec<Point> = (0..8).map(|_| [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).collect();
        let var: Vec<Point> = (0..8).map(|_| [rng.gen_range(0.0..0.5), rng.gen_range(0.0..0.5)]).collect();
        let at_mu = nll_score(&mu, &mu, &var, DEFAULT_EPS).unwrap();
        for _ in 0..100 {
            let x: Vec<Point> = mu
                .iter()
                .map(|p| [p[0] + rng.gen_range(-0.1..0.1), p[1] + rng.gen_range(-0.1..0.1)])
                .collect();
            assert!(nll_score(&x, &mu, &var, DEFAULT_EPS).unwrap() > at_mu);
        }
    }

    fn pattern(mu: Vec<Point>, v: f64) -> MotionPattern {
        let n = mu.len();
        MotionPattern {
            mu,
            var: vec![[v, v]; n],
            member_count: 1,
        }
    }

    fn target(x: f64) -> TargetDistribution {
        TargetDistribution {
            mean: [x, 0.0],
            cov_diag: [0.0, 0.0],
        }
    }

    #[test]
    fn address_examples() {
        let a: Vec<Point> = (0..3).map(|i| [i as f64, 0.0]).collect();
        let b: Vec<Point> = (0..3).map(|i| [0.0, i as f64]).collect();
        let bank = MemoryBank::new(
            vec![pattern(a.clone(), 0.3), pattern(b.clone(), 0.3)],
            vec![target(1.0), target(2.0)],
            2,
            1,
            DEFAULT_EPS,
        )
        .unwrap();
        let (k, t) = bank.address(&a[..2]).unwrap();
        assert_eq!((k, t), (0, target(1.0)));
        assert_eq!(bank.address(&b[..2]).unwrap().0, 1);

        let single = MemoryBank::new(vec![pattern(a.clone(), 0.3)], vec![target(1.0)], 2, 1, DEFAULT_EPS).unwrap();
        assert_eq!(single.address(&[[50.0, -9.0], [1.0, 1.0]]).unwrap().0, 0);

        let dup = MemoryBank::new(
            vec![pattern(b.clone(), 0.1), pattern(a.clone(), 0.2), pattern(a.clone(), 0.2)],
            vec![target(0.0), target(1.0), target(2.0)],
            2,
            1,
            DEFAULT_EPS,
        )
        .unwrap();
        for _ in 0..3 {
            assert_eq!(dup.address(&a[..2]).unwrap().0, 1);
        }

        let empty = MemoryBank::new(vec![], vec![], 2, 1, DEFAULT_EPS).unwrap();
        assert!(matches!(empty.address(&a[..2]), Err(Error::State(_))));
        assert!(matches!(bank.address(&a), Err(Error::Argument(_))));
    }

    #[test]
    fn held_out_addressing_accuracy() {
        let (train, test) = synth(100, 63, 21);
        let bank = build_bank(&train, 8, 0, DEFAULT_EPS).unwrap();
        // Map each pattern to the majority label of its members via the training data.
        let mut votes = vec![vec![0usize; 8]; 8];
        for s in &train {
            let (k, _) = bank.address(&s.observed).unwrap();
            votes[k][s.pattern_label.unwrap()] += 1;
        }
        let label_of: Vec<usize> = votes
            .iter()
            .map(|v| (0..8).max_by_key(|&l| (v[l], std::cmp::Reverse(l))).unwrap())
            .collect();
        let test = &test[..500];
        let hits = test
            .iter()
            .filter(|s| label_of[bank.address(&s.observed).unwrap().0] == s.pattern_label.unwrap())
            .count();
        assert!(hits as f64 / 500.0 >= 0.95, "{hits}/500");
    }

    #[test]
    fn addressing_is_translation_invariant() {
        let (train, _) = synth(30, 0, 5);
        let bank = build_bank(&train, 8, 1, DEFAULT_EPS).unwrap();
        let raw = synth_generate(&SynthConfig {
            n_per_pattern: 4,
            seed: 77,
            ..Default::default()
        })
        .unwrap();
        for s in &raw {
            let mut moved = s.clone();
            for p in moved.observed.iter_mut().chain(moved.future.iter_mut()) {
                p[0] += 123.25;
                p[1] -= 40.5;
            }
            let a = bank.address(&normalize(s).0.observed).unwrap().0;
            let b = bank.address(&normalize(&moved).0.observed).unwrap().0;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn bank_text_round_trip() {
        let (train, _) = synth(5, 0, 6);
        let bank = build_bank(&train, 4, 2, DEFAULT_EPS).unwrap();
        let text = bank.to_text();
        let back = MemoryBank::from_text(&text).unwrap();
        assert_eq!(back, bank);
        assert_eq!(back.to_text(), text);
        assert_eq!(back.content_hash(), bank.content_hash());
    }

    #[test]
    fn bank_rejects_bad_headers() {
        let (train, _) = synth(2, 0, 6);
        let text = build_bank(&train, 2, 2, DEFAULT_EPS).unwrap().to_text();
        let wrong = text.replacen("mp2m-bank v1", "mp2m-bank v2", 1);
        assert!(matches!(MemoryBank::from_text(&wrong), Err(Error::Format(_))));
        let cut: String = text.lines().take(8).collect::<Vec<_>>().join("\n");
        assert!(matches!(MemoryBank::from_text(&cut), Err(Error::Format(_))));
        let neg = text.replacen("\npattern 0", "\npattern 3", 1);
        assert!(matches!(MemoryBank::from_text(&neg), Err(Error::Format(_))));
    }

    #[test]
    fn hand_written_bank_loads() {
        let mu: Vec<String> = (0..20).flat_map(|i| [format!("{}", i as f64 * 0.5 - 3.5), "0".into()]).collect();
        let var = vec!["0.01"; 40];
        let text = format!(
            "mp2m-bank v1\nK 1\nt_obs 8\nt_pred 12\neps 1e-6\npattern 0 17\n{}\n{}\n6 0 0.02 0.03\n",
            mu.join(" "),
            var.join(" ")
        );
        let bank = MemoryBank::from_text(&text).unwrap();
        assert_eq!(bank.k(), 1);
        assert_eq!(bank.patterns()[0].mu.len(), 20);
        assert_eq!(bank.patterns()[0].var.len(), 20);
        assert_eq!(bank.patterns()[0].member_count, 17);
        assert_eq!(bank.targets()[0].mean, [6.0, 0.0]);
        assert_eq!(bank.eps(), 1e-6);
    }
}
