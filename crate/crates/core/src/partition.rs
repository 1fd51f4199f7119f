//! Separated sets, two-scale Birkhoff integrals, partition sums and pressure fits.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Flow, Potential};
use crate::segments::SliceSource;

/// Tuning knobs shared by the partition-function routines.
#[derive(Clone, Debug)]
pub struct PartitionOptions {
    /// Probe density for `Φ_ε`: `⌈n_probe / 8⌉` probes per octave of the scale ladder.
    pub n_probe: usize,
    pub seed: u64,
    /// Samples per trace (`None` = backend default).
    pub n_samples: Option<usize>,
    /// Candidates whose traces are built together before sequential admission.
    pub chunk: usize,
    /// Deterministic subsample cap on the candidate list.
    pub max_candidates: Option<usize>,
}

impl Default for PartitionOptions {
    fn default() -> Self {
        PartitionOptions {
            n_probe: 16,
            seed: 0,
            n_samples: None,
            chunk: 512,
            max_candidates: None,
        }
    }
}

pub(crate) fn mix_seed(seed: u64, i: u64) -> u64 {
    let mut z = seed ^ i.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `Φ₀(x, t) = ∫₀ᵗ φ(f_s x) ds`.
pub fn birkhoff<F: Flow>(flow: &F, phi: &Potential, x: &F::Point, t: f64) -> Result<f64> {
    if t == 0.0 {
        return Ok(0.0);
    }
    flow.birkhoff(phi, x, t)
}

/// Octaves of the probe ladder below the flow diameter.
const LADDER_OCTAVES: i32 = 16;

/// `Φ_ε(x, t)`: the largest `∫₀ᵗ φ(f_s y) ds` over `x` and the probes `y`
/// verified to satisfy `d_t(x, y) < ε`.
///
/// Probes are drawn at the fixed scales `diameter · 2^{-j}`, `0 ≤ j ≤ 16`, each
/// level from its own stream, and a call at `ε` uses every level `≤ ε`. The
/// probe set therefore grows with `ε` and `Φ_ε` is nondecreasing in `ε`.
pub fn phi_eps<F: Flow>(
    flow: &F,
    phi: &Potential,
    x: &F::Point,
    t: f64,
    eps: f64,
    n_probe: usize,
    seed: u64,
) -> Result<f64> {
    let tr = flow.trace(x, t)?;
    phi_eps_traced(flow, phi, &tr, t, eps, n_probe, seed, None)
}

#[allow(clippy::too_many_arguments)]
fn phi_eps_traced<F: Flow>(
    flow: &F,
    phi: &Potential,
    tr: &F::Trace,
    t: f64,
    eps: f64,
    n_probe: usize,
    seed: u64,
    n_samples: Option<usize>,
) -> Result<f64> {
    if t == 0.0 {
        return Ok(0.0);
    }
    if let Some(c) = phi.is_constant() {
        return Ok(c * t);
    }
    let mut best = flow.birkhoff_trace(phi, tr)?;
    if eps <= 0.0 || n_probe == 0 {
        return Ok(best);
    }
    let per_level = n_probe.div_ceil(8);
    let top = flow.diameter();
    for j in 0..=LADDER_OCTAVES {
        let scale = top * 2f64.powi(-j);
        if scale > eps {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, j as u64));
        for y in flow.probes(flow.trace_start(tr), t, scale, per_level, &mut rng) {
            let Ok(ty) = flow.trace_sampled(&y, t, n_samples) else {
                continue;
            };
            if flow.trace_distance(tr, &ty, eps) < eps {
                if let Ok(v) = flow.birkhoff_trace(phi, &ty) {
                    best = best.max(v);
                }
            }
        }
    }
    Ok(best)
}

/// A greedy `(t, δ)`-separated set with its weights `Φ_ε`.
#[derive(Clone, Debug)]
pub struct SeparatedSet<P> {
    pub points: Vec<P>,
    pub t: f64,
    pub delta: f64,
    pub eps: f64,
    pub weights: Vec<f64>,
    /// Candidate index of each admitted point (seeds first), in admission order.
    pub order: Vec<usize>,
    pub certificate: MaximalityCertificate,
}

/// Witnesses that the greedy set is maximal, hence `(t, δ)`-spanning for the
/// candidate cloud: every rejected candidate lies within `δ` of an admitted point.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MaximalityCertificate {
    pub n_candidates: usize,
    /// `(candidate index, admitted position, d_t)` for each rejected candidate.
    pub witnesses: Vec<(usize, usize, f64)>,
}

impl<P> SeparatedSet<P> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `log Σ e^{Φ_ε(x, t)}`.
    pub fn log_lambda(&self) -> f64 {
        log_sum_exp(&self.weights)
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Deterministic evenly spaced subsample.
pub(crate) fn subsample<P: Clone>(points: Vec<P>, cap: Option<usize>) -> Vec<P> {
    match cap {
        Some(cap) if points.len() > cap && cap > 0 => {
            let stride = points.len() as f64 / cap as f64;
            (0..cap)
                .map(|i| points[(i as f64 * stride) as usize].clone())
                .collect()
        }
        _ => points,
    }
}

/// Greedy separated set of `(C)_t` drawn from `source`.
pub fn build_separated<F: Flow, S: SliceSource<F> + ?Sized>(
    flow: &F,
    phi: &Potential,
    source: &S,
    t: f64,
    delta: f64,
    eps: f64,
    opts: &PartitionOptions,
) -> Result<SeparatedSet<F::Point>> {
    let candidates = subsample(source.slice(flow, t)?, opts.max_candidates);
    separated_from_candidates(flow, phi, candidates, t, delta, eps, opts)
}

/// Stable per-point stream for the `Φ_ε` probes, so a point gets the same
/// weight whichever list it appears in.
pub(crate) fn point_seed<F: Flow>(flow: &F, seed: u64, x: &F::Point) -> u64 {
    let bytes = serde_json::to_vec(&flow.point_to_json(x)).unwrap_or_default();
    let hash = bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    });
    mix_seed(seed, hash)
}

/// Greedy separated set over an explicit candidate list: candidates are taken
/// in descending `Φ_ε` order (ties by index) and admitted when `d_t > δ` to
/// every admitted point.
pub fn separated_from_candidates<F: Flow>(
    flow: &F,
    phi: &Potential,
    candidates: Vec<F::Point>,
    t: f64,
    delta: f64,
    eps: f64,
    opts: &PartitionOptions,
) -> Result<SeparatedSet<F::Point>> {
    separated_with_seeds(flow, phi, Vec::new(), candidates, t, delta, eps, opts)
}

/// As [`separated_from_candidates`], with `seeds` offered first in their given
/// order. A seed list that is already `(t, δ)`-separated is admitted whole, so
/// the result's `λ` is at least the seeds' own sum.
#[allow(clippy::too_many_arguments)]
pub fn separated_with_seeds<F: Flow>(
    flow: &F,
    phi: &Potential,
    seeds: Vec<F::Point>,
    candidates: Vec<F::Point>,
    t: f64,
    delta: f64,
    eps: f64,
    opts: &PartitionOptions,
) -> Result<SeparatedSet<F::Point>> {
    let n_seeds = seeds.len();
    let mut candidates = candidates;
    candidates.splice(0..0, seeds);
    if candidates.is_empty() {
        return Err(Error::EmptySlice(t));
    }
    let weights = candidates
        .par_iter()
        .map(|x| {
            let tr = flow.trace_sampled(x, t, opts.n_samples)?;
            let seed = point_seed(flow, opts.seed, x);
            phi_eps_traced(flow, phi, &tr, t, eps, opts.n_probe, seed, opts.n_samples)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order[n_seeds..].sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));

    let mut admitted: Vec<usize> = Vec::new();
    let mut traces: Vec<F::Trace> = Vec::new();
    let mut by_key: HashMap<Vec<u8>, Vec<usize>> = HashMap::new();
    let mut by_cell: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    let mut keyless: Vec<usize> = Vec::new();
    let mut cellless: Vec<usize> = Vec::new();
    let mut witnesses = Vec::new();

    for chunk in order.chunks(opts.chunk.max(1)) {
        let prepared = chunk
            .par_iter()
            .map(|&c| {
                let x = &candidates[c];
                let tr = flow.trace_sampled(x, t, opts.n_samples)?;
                Ok((
                    tr,
                    flow.separation_key(x, t, delta),
                    flow.coarse_cell(x, delta),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        for (&c, (tr, key, cell)) in chunk.iter().zip(prepared) {
            let mut pool: Vec<usize> = Vec::new();
            match (&key, &cell) {
                (Some(k), _) => {
                    pool.extend(by_key.get(k).into_iter().flatten());
                    pool.extend(&keyless);
                }
                (None, Some(q)) => {
                    for dx in -1..=1 {
                        for dy in -1..=1 {
                            for dz in -1..=1 {
                                let nb = [q[0] + dx, q[1] + dy, q[2] + dz];
                                pool.extend(by_cell.get(&nb).into_iter().flatten());
                            }
                        }
                    }
                    pool.extend(&cellless);
                    pool.sort_unstable();
                }
                (None, None) => pool.extend(0..admitted.len()),
            }
            let hit = pool.iter().find_map(|&a| {
                let d = flow.trace_distance(&traces[a], &tr, delta);
                (d <= delta).then_some((a, d))
            });
            match hit {
                Some((a, d)) => witnesses.push((c, a, d)),
                None => {
                    let pos = admitted.len();
                    match key {
                        Some(k) => by_key.entry(k).or_default().push(pos),
                        None => keyless.push(pos),
                    }
                    match cell {
                        Some(q) => by_cell.entry(q).or_default().push(pos),
                        None => cellless.push(pos),
                    }
                    admitted.push(c);
                    traces.push(tr);
                }
            }
        }
    }
    Ok(SeparatedSet {
        points: admitted.iter().map(|&c| candidates[c].clone()).collect(),
        weights: admitted.iter().map(|&c| weights[c]).collect(),
        t,
        delta,
        eps,
        certificate: MaximalityCertificate {
            n_candidates: candidates.len(),
            witnesses,
        },
        order: admitted,
    })
}

/// Smallest pairwise `d_t` among `points` (`+∞` for fewer than two points).
pub fn min_pairwise_distance<F: Flow>(
    flow: &F,
    points: &[F::Point],
    t: f64,
    n_samples: Option<usize>,
) -> Result<f64> {
    let traces = points
        .par_iter()
        .map(|x| flow.trace_sampled(x, t, n_samples))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..traces.len())
        .into_par_iter()
        .map(|i| {
            (i + 1..traces.len())
                .map(|j| flow.trace_distance(&traces[i], &traces[j], f64::INFINITY))
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| f64::INFINITY, f64::min))
}

/// `λ(C, φ, δ, ε, t)` on the greedy set, in log form.
#[derive(Clone, Debug)]
pub struct PartitionSum<P> {
    pub log_lambda: f64,
    pub set: SeparatedSet<P>,
}

impl<P> PartitionSum<P> {
    pub fn lambda(&self) -> f64 {
        self.log_lambda.exp()
    }
}

pub fn partition_sum<F: Flow, S: SliceSource<F> + ?Sized>(
    flow: &F,
    phi: &Potential,
    source: &S,
    delta: f64,
    eps: f64,
    t: f64,
    opts: &PartitionOptions,
) -> Result<PartitionSum<F::Point>> {
    let set = build_separated(flow, phi, source, t, delta, eps, opts)?;
    Ok(PartitionSum {
        log_lambda: set.log_lambda(),
        set,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PressureEstimate {
    /// Least-squares slope of `log λ` against `t`.
    pub value: f64,
    pub intercept: f64,
    pub t_grid: Vec<f64>,
    pub log_lambda: Vec<f64>,
    pub n_points: Vec<usize>,
    /// Root-mean-square residual of the fit.
    pub residual: f64,
    pub delta: f64,
    pub eps: f64,
}

/// Least-squares line through `(x, y)`: `(slope, intercept, rms residual)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::DegenerateFit(format!(
            "need at least two points, got {n}"
        )));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("t-grid has no spread".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    Ok((slope, intercept, (ss / n as f64).sqrt()))
}

/// Pressure as the slope of `log λ` over `t_grid`. Empty slices give `λ = 0`
/// and are left out of the fit.
pub fn pressure<F: Flow, S: SliceSource<F> + ?Sized>(
    flow: &F,
    phi: &Potential,
    source: &S,
    delta: f64,
    eps: f64,
    t_grid: &[f64],
    opts: &PartitionOptions,
) -> Result<PressureEstimate> {
    if t_grid.len() < 4 || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(
            "t-grid needs at least 4 increasing entries".into(),
        ));
    }
    let mut log_lambda = Vec::with_capacity(t_grid.len());
    let mut n_points = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        match partition_sum(flow, phi, source, delta, eps, t, opts) {
            Ok(p) => {
                n_points.push(p.set.len());
                log_lambda.push(p.log_lambda);
            }
            Err(Error::EmptySlice(_)) => {
                n_points.push(0);
                log_lambda.push(f64::NEG_INFINITY);
            }
            Err(e) => return Err(e),
        }
    }
    let (ts, ls): (Vec<f64>, Vec<f64>) = t_grid
        .iter()
        .zip(&log_lambda)
        .filter(|(_, l)| l.is_finite())
        .map(|(t, l)| (*t, *l))
        .unzip();
    if ts.len() < 2 {
        return Err(Error::DegenerateFit(
            "partition sums vanish on the t-grid".into(),
        ));
    }
    let (value, intercept, residual) = linear_fit(&ts, &ls)?;
    Ok(PressureEstimate {
        value,
        intercept,
        t_grid: t_grid.to_vec(),
        log_lambda,
        n_points,
        residual,
        delta,
        eps,
    })
}

/// Pressure at each scale of a decreasing `δ`-ladder (`ε` fixed).
pub fn pressure_ladder<F: Flow, S: SliceSource<F> + ?Sized>(
    flow: &F,
    phi: &Potential,
    source: &S,
    deltas: &[f64],
    eps: f64,
    t_grid: &[f64],
    opts: &PartitionOptions,
) -> Result<Vec<PressureEstimate>> {
    deltas
        .iter()
        .map(|&d| pressure(flow, phi, source, d, eps, t_grid, opts))
        .collect()
}

/// Evenly spaced grid `tmin, …, tmax` with `steps` entries.
pub fn t_grid(tmin: f64, tmax: f64, steps: usize) -> Vec<f64> {
    if steps <= 1 {
        return vec![tmin];
    }
    (0..steps)
        .map(|i| tmin + (tmax - tmin) * i as f64 / (steps - 1) as f64)
        .collect()
}
