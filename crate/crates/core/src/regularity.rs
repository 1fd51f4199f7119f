//! Distortion (Bowen property), potential variation, non-expansivity and the
//! obstruction pressure.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::flow::{graph_pressure, Flow, Potential, SymPoint, SymbolicSuspension};
use crate::partition::{linear_fit, mix_seed, pressure, PartitionOptions};
use crate::segments::{CloudSlices, SegmentCollection};

/// `−∞` survives JSON as the string `"-inf"`.
pub mod sentinel {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("unexpected {s}"))),
        }
    }
}

/// `max |φ(x) − φ(y)|` over sampled pairs with `d(x, y) < ε`, based at `points`.
/// A lower bound for `Var(φ, ε)`.
pub fn variation<F: Flow>(
    flow: &F,
    phi: &Potential,
    eps: f64,
    points: &[F::Point],
    n_pairs: usize,
    seed: u64,
) -> Result<f64> {
    if phi.is_constant().is_some() || points.is_empty() || eps <= 0.0 {
        return Ok(0.0);
    }
    let radius = eps * (1.0 - 1e-9);
    let diffs = (0..n_pairs)
        .into_par_iter()
        .map(|i| {
            let x = &points[i % points.len()];
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64));
            let y = flow.perturb(x, radius, &mut rng);
            if flow.distance(x, &y) >= eps {
                return Ok(0.0);
            }
            Ok((flow.potential(phi, x)? - flow.potential(phi, &y)?).abs())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(diffs.into_iter().fold(0.0, f64::max))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistortionRecord {
    pub segment: usize,
    pub t: f64,
    pub diff: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistortionReport {
    pub eps: f64,
    pub n_samples: usize,
    /// `K̂ = max |Φ₀(x, t) − Φ₀(y, t)|`.
    pub k_hat: f64,
    pub records: Vec<DistortionRecord>,
    /// `Var(φ, ε)` as sampled by [`variation`].
    pub variation: f64,
    /// Slope of the per-length maximum against `t` (0 with fewer than two lengths).
    pub growth_slope: f64,
    /// Heuristic: the slope exceeds `0.01·‖φ‖`.
    pub unbounded: bool,
}

impl DistortionReport {
    /// `K(M) = K̂ + 2M·Var(φ, ε)`.
    pub fn k_m(&self, m: f64) -> f64 {
        self.k_hat + 2.0 * m * self.variation
    }
}

/// Distortion of Birkhoff integrals over Bowen balls of the segments in `c`.
pub fn bowen_distortion<F: Flow>(
    flow: &F,
    phi: &Potential,
    c: &SegmentCollection<F::Point>,
    eps: f64,
    n_probe: usize,
    seed: u64,
) -> Result<DistortionReport> {
    let per_segment = c
        .segments
        .par_iter()
        .enumerate()
        .map(|(i, seg)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64));
            let tx = flow.trace(&seg.start, seg.t)?;
            let base = flow.birkhoff_trace(phi, &tx)?;
            let mut out = Vec::new();
            for y in flow.probes(&seg.start, seg.t, eps, n_probe, &mut rng) {
                let Ok(ty) = flow.trace(&y, seg.t) else {
                    continue;
                };
                if flow.trace_distance(&tx, &ty, eps) < eps {
                    let diff = (base - flow.birkhoff_trace(phi, &ty)?).abs();
                    out.push(DistortionRecord {
                        segment: i,
                        t: seg.t,
                        diff,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<DistortionRecord> = per_segment.into_iter().flatten().collect();
    let k_hat = records.iter().map(|r| r.diff).fold(0.0, f64::max);

    let starts: Vec<F::Point> = c.segments.iter().map(|s| s.start.clone()).collect();
    let var = variation(flow, phi, eps, &starts, 256, seed)?;
    let norm = starts
        .iter()
        .map(|x| flow.potential(phi, x).map(f64::abs))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let mut by_t: Vec<(f64, f64)> = Vec::new();
    for r in &records {
        match by_t.iter_mut().find(|(t, _)| *t == r.t) {
            Some(e) => e.1 = e.1.max(r.diff),
            None => by_t.push((r.t, r.diff)),
        }
    }
    let growth_slope = if by_t.len() >= 2 {
        let (ts, ms): (Vec<f64>, Vec<f64>) = by_t.into_iter().unzip();
        linear_fit(&ts, &ms).map(|f| f.0).unwrap_or(0.0)
    } else {
        0.0
    };
    Ok(DistortionReport {
        eps,
        n_samples: records.len(),
        k_hat,
        records,
        variation: var,
        growth_slope,
        unbounded: growth_slope > 0.01 * norm,
    })
}

/// Outcome of the finite-window expansivity test at one point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NeTest {
    pub non_expansive: bool,
    /// Probes that stayed `ε`-close over the whole window.
    pub survivors: usize,
    /// Largest distance of a survivor from the orbit arc of `x`.
    pub max_gap: f64,
    /// Backward extent actually used; shorter than the window when backward
    /// integration leaves the bounding box.
    pub back_window: f64,
}

/// Largest backward time up to `window` for which `x` can be evolved, halving on divergence.
fn backward_reach<F: Flow>(flow: &F, x: &F::Point, window: f64) -> f64 {
    let mut back = window;
    while back > 1e-3 {
        match flow.evolve(x, -back) {
            Ok(_) => return back,
            Err(crate::Error::Diverged { at }) => back = (0.5 * at.abs()).min(0.5 * back),
            Err(_) => back *= 0.5,
        }
    }
    0.0
}

/// Finite-window surrogate for `Γ_ε(x) ⊄ f_{[−s,s]}(x)`: some probe stays within
/// `ε` of `x` for `t ∈ [−T_win, T_win]` yet lies more than `ε/10` from the arc.
/// The backward half shrinks to what the backend can integrate.
pub fn nonexpansive_test<F: Flow>(
    flow: &F,
    x: &F::Point,
    eps: f64,
    window: f64,
    n_probe: usize,
    seed: u64,
) -> Result<NeTest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tube_tol = eps / 10.0;
    let reach = backward_reach(flow, x, window);
    let back = flow.evolve(x, -reach)?;
    let tx = flow.trace(&back, reach + window)?;
    let end_x = flow.evolve(x, window)?;
    let mut survivors = 0;
    let mut max_gap: f64 = 0.0;
    for y in flow.ne_probes(x, window, eps, n_probe, &mut rng) {
        let Ok(yb) = flow.evolve(&y, -reach) else {
            continue;
        };
        let Ok(ty) = flow.trace(&yb, reach + window) else {
            continue;
        };
        if flow.trace_distance(&tx, &ty, eps) > eps {
            continue;
        }
        let Ok(end_y) = flow.evolve(&y, window) else {
            continue;
        };
        if flow.distance(&end_x, &end_y) > eps {
            continue;
        }
        survivors += 1;
        max_gap = max_gap.max(flow.orbit_gap(x, &y, reach, window, tube_tol / 4.0)?);
    }
    Ok(NeTest {
        non_expansive: max_gap > tube_tol,
        survivors,
        max_gap,
        back_window: reach,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExpansivityReport {
    pub eps: f64,
    pub window: f64,
    pub tested: usize,
    pub flags: Vec<bool>,
    pub ne_fraction: f64,
    /// `P⊥_exp`; `−∞` when no non-expansive point was found.
    #[serde(with = "sentinel")]
    pub p_perp: f64,
    /// `"empty"`, `"exact"` or `"proxy"`.
    pub label: String,
}

pub fn ne_flags<F: Flow>(
    flow: &F,
    points: &[F::Point],
    eps: f64,
    window: f64,
    n_probe: usize,
    seed: u64,
) -> Result<Vec<bool>> {
    points
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            nonexpansive_test(flow, x, eps, window, n_probe, mix_seed(seed, i as u64))
                .map(|r| r.non_expansive)
        })
        .collect()
}

fn summarize(
    eps: f64,
    window: f64,
    flags: Vec<bool>,
    p_perp: f64,
    label: &str,
) -> ExpansivityReport {
    let tested = flags.len();
    let ne = flags.iter().filter(|&&f| f).count();
    ExpansivityReport {
        eps,
        window,
        tested,
        ne_fraction: if tested == 0 {
            0.0
        } else {
            ne as f64 / tested as f64
        },
        flags,
        p_perp,
        label: label.to_string(),
    }
}

/// Exact obstruction pressure on a suspension: `−∞` when every tested point is
/// expansive, else the pressure of the sub-SFT on the symbols seen at
/// non-expansive points.
pub fn obstruction_pressure_symbolic(
    flow: &SymbolicSuspension,
    phi: &Potential,
    points: &[SymPoint],
    eps: f64,
    window: f64,
    n_probe: usize,
    seed: u64,
) -> Result<ExpansivityReport> {
    let flags = ne_flags(flow, points, eps, window, n_probe, seed)?;
    if !flags.iter().any(|&f| f) {
        return Ok(summarize(eps, window, flags, f64::NEG_INFINITY, "empty"));
    }
    let k = flow.ambient().alphabet();
    let mut seen = vec![false; k];
    for (x, _) in points.iter().zip(&flags).filter(|(_, f)| **f) {
        for &s in x.word.iter() {
            seen[s as usize] = true;
        }
    }
    let symbols: Vec<usize> = (0..k).filter(|&s| seen[s]).collect();
    let sub: Vec<Vec<bool>> = symbols
        .iter()
        .map(|&a| {
            symbols
                .iter()
                .map(|&b| flow.ambient().allows(a as u8, b as u8))
                .collect()
        })
        .collect();
    let values: Vec<f64> = match phi {
        Potential::Constant { value } => vec![*value; symbols.len()],
        Potential::FirstSymbol { values } => symbols.iter().map(|&s| values[s]).collect(),
        _ => symbols
            .iter()
            .map(|&s| {
                let p = SymPoint::new(vec![s as u8], 0, 0.0);
                flow.potential(phi, &p)
            })
            .collect::<Result<_>>()?,
    };
    let roofs: Vec<f64> = symbols.iter().map(|&s| flow.roofs()[s]).collect();
    let p = graph_pressure(&sub, &values, &roofs);
    Ok(summarize(eps, window, flags, p, "exact"))
}

/// Proxy obstruction pressure for numeric backends: the pressure estimate of
/// the segments starting at non-expansive points.
#[allow(clippy::too_many_arguments)]
pub fn obstruction_pressure_proxy<F: Flow>(
    flow: &F,
    phi: &Potential,
    points: &[F::Point],
    eps: f64,
    window: f64,
    n_probe: usize,
    t_grid: &[f64],
    delta: f64,
    opts: &PartitionOptions,
) -> Result<ExpansivityReport> {
    let flags = ne_flags(flow, points, eps, window, n_probe, opts.seed)?;
    let ne: Vec<F::Point> = points
        .iter()
        .zip(&flags)
        .filter(|(_, f)| **f)
        .map(|(p, _)| p.clone())
        .collect();
    if ne.is_empty() {
        return Ok(summarize(eps, window, flags, f64::NEG_INFINITY, "empty"));
    }
    let source = CloudSlices {
        points: ne,
        neighborhood: crate::flow::Neighborhood::new(
            crate::flow::RegionLabel::U,
            crate::flow::Everywhere,
        ),
        n_samples: opts.n_samples,
    };
    let est = pressure(flow, phi, &source, delta, 0.0, t_grid, opts)?;
    Ok(summarize(eps, window, flags, est.value, "proxy"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{OdeFlow, VectorField};
    use crate::segments::{OrbitSegment, Provenance};

    fn full2() -> SymbolicSuspension {
        SymbolicSuspension::full_shift(2, 1.0, 0.01).unwrap()
    }

    #[test]
    fn k_of_m_is_affine() {
        let r = DistortionReport {
            eps: 0.1,
            n_samples: 0,
            k_hat: 0.3,
            records: vec![],
            variation: 0.05,
            growth_slope: 0.0,
            unbounded: false,
        };
        assert_eq!(r.k_m(0.0), 0.3);
        assert!((r.k_m(2.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_potential_has_no_distortion() {
        let flow = OdeFlow::lorenz();
        let c = SegmentCollection::new(
            vec![OrbitSegment::new([1.0, 1.0, 20.0], 1.0)],
            Provenance::U,
        );
        let r =
            bowen_distortion(&flow, &Potential::Constant { value: 3.0 }, &c, 0.1, 8, 0).unwrap();
        assert_eq!((r.k_hat, r.variation, r.unbounded), (0.0, 0.0, false));
    }

    #[test]
    fn first_symbol_distortion_is_height_only() {
        let f = full2();
        let a = [0.5, -1.0];
        let phi = Potential::FirstSymbol { values: a.to_vec() };
        let c = SegmentCollection::new(
            (2..6)
                .map(|t| {
                    OrbitSegment::new(SymPoint::new(vec![0, 1, 1, 0, 1, 0, 0], 0, 0.25), t as f64)
                })
                .collect(),
            Provenance::Lambda,
        );
        let eps = 0.005;
        let r = bowen_distortion(&f, &phi, &c, eps, 16, 1).unwrap();
        assert!(r.n_samples > 0);
        assert!(r.k_hat <= 2.0 * eps * 1.5 + 1e-12, "{}", r.k_hat);
        assert_eq!(r.variation, 0.0);
        assert!(!r.unbounded);
    }

    #[test]
    fn graph_pressure_components() {
        let acyclic = vec![vec![false, true], vec![false, false]];
        assert_eq!(
            graph_pressure(&acyclic, &[0.0, 0.0], &[1.0, 1.0]),
            f64::NEG_INFINITY
        );
        let loops = vec![vec![true, false], vec![false, true]];
        assert!((graph_pressure(&loops, &[0.3, 0.7], &[1.0, 1.0]) - 0.7).abs() < 1e-12);
        assert!((graph_pressure(&loops, &[0.3, 0.7], &[1.0, 2.0]) - 0.7).abs() < 1e-12);
        let two_cycle = vec![vec![false, true], vec![true, false]];
        assert!((graph_pressure(&two_cycle, &[0.0, 0.0], &[1.0, 3.0])).abs() < 1e-12);
    }

    #[test]
    fn rotation_axis_is_non_expansive() {
        let flow = OdeFlow::new(VectorField::rotation(), 1e-3, 200.0).unwrap();
        let r = nonexpansive_test(&flow, &[0.0, 0.0, 0.0], 0.5, 2.0, 16, 0).unwrap();
        assert!(r.non_expansive && r.survivors > 0);
        assert_eq!(r.back_window, 2.0);
    }

    #[test]
    fn suspension_is_expansive_at_small_scale() {
        let f = full2();
        let pts: Vec<SymPoint> = (0..8u8)
            .map(|i| SymPoint::new(vec![i & 1, (i >> 1) & 1, (i >> 2) & 1, 1, 0], 0, 0.3))
            .collect();
        let r =
            obstruction_pressure_symbolic(&f, &Potential::zero(), &pts, 0.005, 4.0, 16, 0).unwrap();
        assert_eq!(r.label, "empty");
        assert_eq!(r.p_perp, f64::NEG_INFINITY);
        assert_eq!(r.ne_fraction, 0.0);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"-inf\""));
        let back: ExpansivityReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.p_perp, f64::NEG_INFINITY);
    }

    #[test]
    fn coarse_scale_sees_the_fixed_orbit() {
        let f = full2();
        let x = SymPoint::new(vec![0], 0, 0.0);
        let phi = Potential::FirstSymbol {
            values: vec![0.5, 2.0],
        };
        let r = obstruction_pressure_symbolic(&f, &phi, &[x], 5.0, 4.0, 16, 0).unwrap();
        assert_eq!(r.label, "exact");
        assert!((r.p_perp - 0.5).abs() < 1e-12);
    }

    #[test]
    fn proxy_is_empty_for_expansive_samples() {
        let flow = OdeFlow::new(
            VectorField::Linear([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]]),
            1e-3,
            200.0,
        )
        .unwrap();
        let pts = vec![[0.3, 0.3, 0.0]];
        let r = obstruction_pressure_proxy(
            &flow,
            &Potential::zero(),
            &pts,
            0.05,
            4.0,
            16,
            &[1.0, 2.0, 3.0, 4.0],
            0.01,
            &PartitionOptions::default(),
        )
        .unwrap();
        assert_eq!(r.tested, 1);
        assert_eq!(r.label, "empty");
    }

    #[test]
    fn neutral_direction_is_flagged_by_the_proxy() {
        let flow = OdeFlow::new(
            VectorField::Linear([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0; 3]]),
            1e-3,
            200.0,
        )
        .unwrap();
        let r = obstruction_pressure_proxy(
            &flow,
            &Potential::zero(),
            &[[0.3, 0.3, 0.0]],
            0.05,
            2.0,
            16,
            &[1.0, 2.0, 3.0, 4.0],
            0.01,
            &PartitionOptions::default(),
        )
        .unwrap();
        assert_eq!((r.label.as_str(), r.ne_fraction), ("proxy", 1.0));
        assert!(r.p_perp.is_finite());
    }
}
