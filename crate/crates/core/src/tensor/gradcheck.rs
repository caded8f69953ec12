use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Gradients, ParamId, ParamStore};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    pub tol_rel: f64,
    /// Number of coordinates to probe. Every parameter tensor gets at least one.
    pub n_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            tol_rel: 1e-4,
            n_coords: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Offender {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub passed: bool,
    pub checked: usize,
    /// Distinct parameter tensors that had at least one coordinate probed.
    pub groups_covered: usize,
    pub max_rel_err: f64,
    /// Largest errors first, at most ten.
    pub worst: Vec<Offender>,
}

/// Compares the analytic gradient returned by `f` against central finite
/// differences of its value on sampled coordinates.
///
/// Error per coordinate is `|a - n| / max(1, |a|, |n|)`.
pub fn grad_check<F>(store: &ParamStore, mut f: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(f64, Gradients)>,
{
    let (_, analytic) = f(store)?;
    let coords = sample_coords(store, opts.n_coords, opts.seed);
    let mut probe = store.clone();
    let mut offenders = Vec::with_capacity(coords.len());
    for &(id, idx) in &coords {
        let orig = store.get(id).data()[idx];
        probe.values_mut(id)[idx] = orig + opts.h;
        let (plus, _) = f(&probe)?;
        probe.values_mut(id)[idx] = orig - opts.h;
        let (minus, _) = f(&probe)?;
        probe.values_mut(id)[idx] = orig;
        let numeric = (plus - minus) / (2.0 * opts.h);
        let a = analytic.get(id).data()[idx];
        let rel_err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        offenders.push(Offender {
            param: store.name(id).to_string(),
            index: idx,
            analytic: a,
            numeric,
            rel_err,
        });
    }
    let mut groups: Vec<ParamId> = coords.iter().map(|c| c.0).collect();
    groups.dedup();
    offenders.sort_by(|a, b| b.rel_err.total_cmp(&a.rel_err));
    let max_rel_err = offenders.first().map_or(0.0, |o| o.rel_err);
    offenders.truncate(10);
    Ok(GradCheckReport {
        passed: max_rel_err < opts.tol_rel,
        checked: coords.len(),
        groups_covered: groups.len(),
        max_rel_err,
        worst: offenders,
    })
}

/// One random coordinate per tensor, then uniform draws over all scalars
/// until `n` coordinates; everything if the store is smaller than `n`.
/// Returned sorted by (tensor, index).
fn sample_coords(store: &ParamStore, n: usize, seed: u64) -> Vec<(ParamId, usize)> {
    let total = store.num_scalars();
    let mut coords: Vec<(ParamId, usize)> = Vec::new();
    if total <= n {
        for id in store.ids() {
            coords.extend((0..store.get(id).numel()).map(|i| (id, i)));
        }
        return coords;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = BTreeSet::new();
    for id in store.ids() {
        let len = store.get(id).numel();
        if len > 0 {
            chosen.insert((id, rng.gen_range(0..len)));
        }
    }
    let offsets: Vec<usize> = store
        .ids()
        .scan(0, |acc, id| {
            let start = *acc;
            *acc += store.get(id).numel();
            Some(start)
        })
        .collect();
    while chosen.len() < n {
        let flat = rng.gen_range(0..total);
        let t = offsets.partition_point(|&o| o <= flat) - 1;
        chosen.insert((ParamId(t), flat - offsets[t]));
    }
    chosen.into_iter().collect()
}
