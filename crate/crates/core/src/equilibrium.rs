//! Weighted empirical measures `ν_t`, `μ_t`, their weak* limit candidate and
//! the Gibbs-property checks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Flow, Neighborhood, Potential};
use crate::partition::{mix_seed, phi_eps, separated_from_candidates, subsample, PartitionOptions};
use crate::segments::{OrbitSegment, SliceSource};

/// Scales tied to `δ`: `ρ = 22δ`, `ρ₁ = 20δ`, `γ = 10δ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    pub delta: f64,
    pub rho: f64,
    pub rho1: f64,
    pub gamma: f64,
}

impl Scales {
    pub fn from_delta(delta: f64) -> Self {
        Scales {
            delta,
            rho: 22.0 * delta,
            rho1: 20.0 * delta,
            gamma: 10.0 * delta,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureKind {
    NuT,
    MuT,
    LimitCandidate,
}

/// A probability measure given by weighted atoms.
#[derive(Clone, Debug)]
pub struct EmpiricalMeasure<P> {
    pub atoms: Vec<P>,
    pub weights: Vec<f64>,
    pub kind: MeasureKind,
    pub t: f64,
}

impl<P: Clone + Send + Sync> EmpiricalMeasure<P> {
    pub fn point_mass(x: P, kind: MeasureKind, t: f64) -> Self {
        EmpiricalMeasure {
            atoms: vec![x],
            weights: vec![1.0],
            kind,
            t,
        }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, g: impl Fn(&P) -> f64 + Sync) -> f64 {
        ordered_sum(
            self.atoms
                .par_iter()
                .zip(&self.weights)
                .map(|(x, w)| w * g(x))
                .collect(),
        )
    }

    /// Weighted fraction of atoms inside `region`.
    pub fn fraction_in(&self, region: &Neighborhood<P>) -> f64 {
        self.integrate(|x| if region.contains(x) { 1.0 } else { 0.0 })
    }
}

/// Sum in index order, so results do not depend on the thread count.
fn ordered_sum(values: Vec<f64>) -> f64 {
    values.iter().sum()
}

const REDUCE_CHUNK: usize = 4096;

/// Normalised weights `e^{v_i} / Σ e^{v_j}`.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `ν_t`: weights `∝ e^{Φ₀(x, t)}` on a greedy `(t, ρ₁)`-separated set of `(O(U₁))_t`.
pub fn build_nu<F: Flow, S: SliceSource<F> + ?Sized>(
    flow: &F,
    phi: &Potential,
    source: &S,
    t: f64,
    rho1: f64,
    opts: &PartitionOptions,
) -> Result<EmpiricalMeasure<F::Point>> {
    let candidates = subsample(source.slice(flow, t)?, opts.max_candidates);
    let set = separated_from_candidates(flow, phi, candidates, t, rho1, 0.0, opts)?;
    Ok(EmpiricalMeasure {
        weights: softmax(&set.weights),
        atoms: set.points,
        kind: MeasureKind::NuT,
        t,
    })
}

/// `μ_t = (1/t) ∫₀ᵗ (f_s)_* ν_t ds` by a left Riemann sum over `n_slices` times `s = jt/n`.
pub fn time_average<F: Flow>(
    flow: &F,
    nu: &EmpiricalMeasure<F::Point>,
    t: f64,
    n_slices: usize,
) -> Result<EmpiricalMeasure<F::Point>> {
    let n = n_slices.max(1);
    let h = t / n as f64;
    let per_atom = nu
        .atoms
        .par_iter()
        .zip(&nu.weights)
        .map(|(x, &w)| {
            let mut out = Vec::with_capacity(n);
            let mut p = x.clone();
            for j in 0..n {
                if j > 0 {
                    p = flow.evolve(x, j as f64 * h)?;
                }
                out.push((p.clone(), w / n as f64));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut atoms = Vec::with_capacity(nu.len() * n);
    let mut weights = Vec::with_capacity(nu.len() * n);
    for (p, w) in per_atom.into_iter().flatten() {
        atoms.push(p);
        weights.push(w);
    }
    Ok(EmpiricalMeasure {
        atoms,
        weights,
        kind: MeasureKind::MuT,
        t,
    })
}

/// 64 Lipschitz test functions on the feature embedding: 3 coordinates,
/// tent bumps at 16 anchors with 3 widths, and 13 cosines.
#[derive(Clone, Debug)]
pub struct Dictionary {
    lo: [f64; 3],
    span: [f64; 3],
    anchors: Vec<[f64; 3]>,
}

pub const DICTIONARY_SIZE: usize = 64;
const WIDTHS: [f64; 3] = [0.1, 0.25, 0.5];

impl Dictionary {
    /// Anchors are 16 evenly spaced points of `points`; the box spans their features.
    pub fn from_points<F: Flow>(flow: &F, points: &[F::Point]) -> Self {
        let feats: Vec<[f64; 3]> = points.iter().map(|p| flow.features(p)).collect();
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for f in &feats {
            for c in 0..3 {
                lo[c] = lo[c].min(f[c]);
                hi[c] = hi[c].max(f[c]);
            }
        }
        let span = std::array::from_fn(|c| if hi[c] > lo[c] { hi[c] - lo[c] } else { 1.0 });
        let lo = std::array::from_fn(|c| if lo[c].is_finite() { lo[c] } else { 0.0 });
        let norm = |f: &[f64; 3]| -> [f64; 3] { std::array::from_fn(|c| (f[c] - lo[c]) / span[c]) };
        let anchors = if feats.is_empty() {
            vec![[0.5; 3]; 16]
        } else {
            (0..16)
                .map(|i| norm(&feats[i * feats.len() / 16]))
                .collect()
        };
        Dictionary { lo, span, anchors }
    }

    /// All 64 test-function values at feature vector `f`.
    pub fn eval(&self, f: &[f64; 3]) -> [f64; DICTIONARY_SIZE] {
        let u: [f64; 3] = std::array::from_fn(|c| (f[c] - self.lo[c]) / self.span[c]);
        let mut out = [0.0; DICTIONARY_SIZE];
        out[..3].copy_from_slice(&u);
        let mut k = 3;
        for a in &self.anchors {
            let d = ((u[0] - a[0]).powi(2) + (u[1] - a[1]).powi(2) + (u[2] - a[2]).powi(2)).sqrt();
            for w in WIDTHS {
                out[k] = (1.0 - d / w).max(0.0);
                k += 1;
            }
        }
        for uc in u {
            for freq in 1..=4 {
                out[k] = (std::f64::consts::PI * freq as f64 * uc).cos();
                k += 1;
            }
        }
        out[k] = (std::f64::consts::PI * (u[0] + u[1] + u[2])).cos();
        out
    }

    /// `∫ g dμ` for every dictionary function.
    pub fn integrals<F: Flow>(&self, flow: &F, mu: &EmpiricalMeasure<F::Point>) -> Vec<f64> {
        let partials: Vec<Vec<f64>> = mu
            .atoms
            .par_chunks(REDUCE_CHUNK)
            .zip(mu.weights.par_chunks(REDUCE_CHUNK))
            .map(|(xs, ws)| {
                let mut acc = vec![0.0; DICTIONARY_SIZE];
                for (x, w) in xs.iter().zip(ws) {
                    let v = self.eval(&flow.features(x));
                    for (a, g) in acc.iter_mut().zip(v) {
                        *a += w * g;
                    }
                }
                acc
            })
            .collect();
        let mut total = vec![0.0; DICTIONARY_SIZE];
        for p in partials {
            total.iter_mut().zip(p).for_each(|(x, y)| *x += y);
        }
        total
    }
}

pub fn sup_difference(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `max_g |∫ g∘f_s dμ − ∫ g dμ|` over the dictionary.
pub fn invariance_defect<F: Flow>(
    flow: &F,
    mu: &EmpiricalMeasure<F::Point>,
    dict: &Dictionary,
    s: f64,
) -> Result<f64> {
    let moved = mu
        .atoms
        .par_iter()
        .map(|x| flow.evolve(x, s))
        .collect::<Result<Vec<_>>>()?;
    let pushed = EmpiricalMeasure {
        atoms: moved,
        weights: mu.weights.clone(),
        kind: mu.kind,
        t: mu.t,
    };
    Ok(sup_difference(
        &dict.integrals(flow, &pushed),
        &dict.integrals(flow, mu),
    ))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceDiagnostics {
    pub t_grid: Vec<f64>,
    /// `(i, j, sup_g |∫g dμ_{t_i} − ∫g dμ_{t_j}|)` for `i < j`.
    pub discrepancies: Vec<(usize, usize, f64)>,
    /// Discrepancy between the last two grid times.
    pub tail: f64,
    /// The tail discrepancy exceeds 0.05.
    pub non_cauchy: bool,
    pub masses: Vec<f64>,
}

pub const CAUCHY_THRESHOLD: f64 = 0.05;

/// `μ_t` at the largest grid time, with weak* Cauchy diagnostics across the grid.
/// Each `μ_t` uses `⌈slices_per_unit · t⌉` time slices.
pub fn limit_candidate<F: Flow, S: SliceSource<F> + ?Sized>(
    flow: &F,
    phi: &Potential,
    source: &S,
    t_grid: &[f64],
    slices_per_unit: f64,
    rho1: f64,
    opts: &PartitionOptions,
) -> Result<(
    EmpiricalMeasure<F::Point>,
    ConvergenceDiagnostics,
    Dictionary,
)> {
    if t_grid.len() < 3 || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(
            "limit candidate needs at least 3 increasing times".into(),
        ));
    }
    let mut dict: Option<Dictionary> = None;
    let mut integrals = Vec::new();
    let mut masses = Vec::new();
    let mut last = None;
    for &t in t_grid {
        let nu = build_nu(flow, phi, source, t, rho1, opts)?;
        let mu = time_average(flow, &nu, t, (slices_per_unit * t).ceil() as usize)?;
        let d = dict.get_or_insert_with(|| Dictionary::from_points(flow, &mu.atoms));
        integrals.push(d.integrals(flow, &mu));
        masses.push(mu.total_mass());
        last = Some(mu);
    }
    let mut discrepancies = Vec::new();
    for i in 0..integrals.len() {
        for j in i + 1..integrals.len() {
            discrepancies.push((i, j, sup_difference(&integrals[i], &integrals[j])));
        }
    }
    let n = integrals.len();
    let tail = sup_difference(&integrals[n - 2], &integrals[n - 1]);
    let mut mu = last.unwrap();
    mu.kind = MeasureKind::LimitCandidate;
    Ok((
        mu,
        ConvergenceDiagnostics {
            t_grid: t_grid.to_vec(),
            discrepancies,
            tail,
            non_cauchy: tail > CAUCHY_THRESHOLD,
            masses,
        },
        dict.unwrap(),
    ))
}

/// `μ(B_t(x, r))` for the open Bowen ball.
pub fn ball_mass<F: Flow>(
    flow: &F,
    mu: &EmpiricalMeasure<F::Point>,
    x: &F::Point,
    t: f64,
    r: f64,
    n_samples: Option<usize>,
) -> Result<f64> {
    let tx = flow.trace_sampled(x, t, n_samples)?;
    let coarse = flow.coarse_cell(x, r);
    mu.atoms
        .par_iter()
        .zip(&mu.weights)
        .map(|(y, &w)| {
            if let (Some(a), Some(b)) = (coarse, flow.coarse_cell(y, r)) {
                if (0..3).any(|c| (a[c] - b[c]).abs() > 1) {
                    return Ok(0.0);
                }
            }
            if flow.distance(x, y) >= r {
                return Ok(0.0);
            }
            let ty = flow.trace_sampled(y, t, n_samples)?;
            Ok(if flow.trace_distance(&tx, &ty, r) < r {
                w
            } else {
                0.0
            })
        })
        .collect::<Result<Vec<f64>>>()
        .map(ordered_sum)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GibbsRecord {
    pub t: f64,
    pub mass: f64,
    /// `−t P̂ + Φ(x, t)` with `Φ = Φ₀` (lower) or `Φ_γ` (upper).
    pub log_bound: f64,
    pub ratio: f64,
    /// `μ(B) / e^{−tP̂+Φ₀}` on upper-bound segments flagged as good.
    pub ratio_phi0: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GibbsReport {
    /// `"lower"` or `"upper"`.
    pub kind: String,
    pub scale: f64,
    pub p_hat: f64,
    pub p_source: String,
    pub records: Vec<GibbsRecord>,
    /// Minimum ratio (lower) or maximum ratio (upper).
    pub q_hat: f64,
    pub t_range: (f64, f64),
    pub threshold: Option<f64>,
    pub pass: Option<bool>,
}

fn t_range<P>(segments: &[OrbitSegment<P>]) -> (f64, f64) {
    segments
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| {
            (a.min(s.t), b.max(s.t))
        })
}

/// Lower Gibbs ratios `μ(B_t(x, ρ)) / e^{−tP̂+Φ₀(x,t)}`; `Q̂` is their minimum.
#[allow(clippy::too_many_arguments)]
pub fn gibbs_lower<F: Flow>(
    flow: &F,
    phi: &Potential,
    mu: &EmpiricalMeasure<F::Point>,
    segments: &[OrbitSegment<F::Point>],
    rho: f64,
    p_hat: f64,
    p_source: &str,
    floor: Option<f64>,
) -> Result<GibbsReport> {
    let records = segments
        .iter()
        .map(|seg| {
            let mass = ball_mass(flow, mu, &seg.start, seg.t, rho, None)?;
            let log_bound = -seg.t * p_hat + flow.birkhoff(phi, &seg.start, seg.t)?;
            Ok(GibbsRecord {
                t: seg.t,
                mass,
                log_bound,
                ratio: mass / log_bound.exp(),
                ratio_phi0: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let q_hat = records
        .iter()
        .map(|r| r.ratio)
        .fold(f64::INFINITY, f64::min);
    Ok(GibbsReport {
        kind: "lower".into(),
        scale: rho,
        p_hat,
        p_source: p_source.into(),
        q_hat,
        t_range: t_range(segments),
        threshold: floor,
        pass: floor.map(|f| q_hat >= f && q_hat > 0.0),
        records,
    })
}

/// Upper Gibbs ratios `μ(B_t(x, γ)) / e^{−tP̂+Φ_γ(x,t)}`; `Q̂` is their maximum.
/// Segments flagged in `good` also get the ratio against `Φ₀`.
#[allow(clippy::too_many_arguments)]
pub fn gibbs_upper<F: Flow>(
    flow: &F,
    phi: &Potential,
    mu: &EmpiricalMeasure<F::Point>,
    segments: &[OrbitSegment<F::Point>],
    gamma: f64,
    p_hat: f64,
    p_source: &str,
    good: Option<&[bool]>,
    opts: &PartitionOptions,
    ceiling: Option<f64>,
) -> Result<GibbsReport> {
    let records = segments
        .iter()
        .enumerate()
        .map(|(i, seg)| {
            let mass = ball_mass(flow, mu, &seg.start, seg.t, gamma, None)?;
            let seed = mix_seed(opts.seed, i as u64);
            let phi_g = phi_eps(flow, phi, &seg.start, seg.t, gamma, opts.n_probe, seed)?;
            let log_bound = -seg.t * p_hat + phi_g;
            let ratio_phi0 = match good {
                Some(g) if g.get(i).copied().unwrap_or(false) => {
                    let b0 = -seg.t * p_hat + flow.birkhoff(phi, &seg.start, seg.t)?;
                    Some(mass / b0.exp())
                }
                _ => None,
            };
            Ok(GibbsRecord {
                t: seg.t,
                mass,
                log_bound,
                ratio: mass / log_bound.exp(),
                ratio_phi0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let q_hat = records.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(GibbsReport {
        kind: "upper".into(),
        scale: gamma,
        p_hat,
        p_source: p_source.into(),
        q_hat,
        t_range: t_range(segments),
        threshold: ceiling,
        pass: ceiling.map(|c| q_hat <= c),
        records,
    })
}

/// The `q′` lattice `q − k − (2i/N)τ`, `k ≤ 2⌊M⌋`, `i ≤ N`, restricted to `q′ ≥ 0`.
pub fn mixing_lattice(q: f64, tau: f64, m: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for k in 0..=(2 * m.floor() as usize) {
        for i in 0..=n {
            let qp = q - k as f64 - (2.0 * i as f64 / n.max(1) as f64) * tau;
            if qp >= 0.0 && !out.contains(&qp) {
                out.push(qp);
            }
        }
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixingRecord {
    pub q_prime: f64,
    pub mass: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixingReport {
    pub q: f64,
    pub rho: f64,
    pub p_hat: f64,
    pub log_bound: f64,
    pub records: Vec<MixingRecord>,
    pub best_q_prime: f64,
    pub best_mass: f64,
    pub best_ratio: f64,
}

/// `μ(B_{t₁}(x₁, ρ) ∩ {y : f_{t₁+q′} y ∈ B_{t₂}(x₂, ρ)})` over the `q′` lattice,
/// against `e^{−(t₁+t₂)P̂+Φ₀(x₁,t₁)+Φ₀(x₂,t₂)}`.
#[allow(clippy::too_many_arguments)]
pub fn gibbs_mixing<F: Flow>(
    flow: &F,
    phi: &Potential,
    mu: &EmpiricalMeasure<F::Point>,
    first: &OrbitSegment<F::Point>,
    second: &OrbitSegment<F::Point>,
    q: f64,
    rho: f64,
    p_hat: f64,
    lattice: &[f64],
) -> Result<MixingReport> {
    let t1 = flow.trace(&first.start, first.t)?;
    let t2 = flow.trace(&second.start, second.t)?;
    let in_first: Vec<usize> = (0..mu.len())
        .into_par_iter()
        .filter(|&i| {
            let y = &mu.atoms[i];
            flow.distance(&first.start, y) < rho
                && flow
                    .trace(y, first.t)
                    .map(|ty| flow.trace_distance(&t1, &ty, rho) < rho)
                    .unwrap_or(false)
        })
        .collect();
    let log_bound = -(first.t + second.t) * p_hat
        + flow.birkhoff(phi, &first.start, first.t)?
        + flow.birkhoff(phi, &second.start, second.t)?;
    let records = lattice
        .iter()
        .map(|&qp| {
            let mass = ordered_sum(
                in_first
                    .par_iter()
                    .map(|&i| {
                        let Ok(z) = flow.evolve(&mu.atoms[i], first.t + qp) else {
                            return 0.0;
                        };
                        if flow.distance(&second.start, &z) >= rho {
                            return 0.0;
                        }
                        match flow.trace(&z, second.t) {
                            Ok(tz) if flow.trace_distance(&t2, &tz, rho) < rho => mu.weights[i],
                            _ => 0.0,
                        }
                    })
                    .collect(),
            );
            MixingRecord {
                q_prime: qp,
                mass,
                ratio: mass / log_bound.exp(),
            }
        })
        .collect::<Vec<_>>();
    let best = records
        .iter()
        .cloned()
        .max_by(|a, b| a.ratio.total_cmp(&b.ratio))
        .unwrap_or(MixingRecord {
            q_prime: q,
            mass: 0.0,
            ratio: 0.0,
        });
    Ok(MixingReport {
        q,
        rho,
        p_hat,
        log_bound,
        records,
        best_q_prime: best.q_prime,
        best_mass: best.mass,
        best_ratio: best.ratio,
    })
}
