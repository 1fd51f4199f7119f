//! Search and verification of specification (shadowing) certificates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{
    Flow, Neighborhood, OdeFlow, OdePoint, RegionLabel, SymPoint, SymbolicSuspension,
};
use crate::partition::mix_seed;
use crate::segments::{bowen_distance, segment_in_neighborhood, OrbitSegment};

/// A point `y` with gluing times such that `f_{s_{j−1}+τ_{j−1}} y` shadows
/// each input segment `(x_j, t_j)` at scale `δ`.
#[derive(Clone, Debug)]
pub struct ShadowingCertificate<P> {
    pub inputs: Vec<OrbitSegment<P>>,
    pub y: P,
    /// `τ₁, …, τ_{k−1}`.
    pub gluing: Vec<f64>,
    /// `s₁, …, s_k` with `s_j = Σ_{i≤j} t_i + Σ_{i<j} τ_i`.
    pub transfer: Vec<f64>,
    pub delta: f64,
    pub container: RegionLabel,
    /// `δ − d_{t_j}(f_{s_{j−1}+τ_{j−1}} y, x_j)` per segment, as found by the search.
    pub margins: Vec<f64>,
}

impl<P> ShadowingCertificate<P> {
    /// Time at which `y` starts shadowing segment `j` (0-based).
    pub fn start_time(&self, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else {
            self.transfer[j - 1] + self.gluing[j - 1]
        }
    }

    pub fn total_time(&self) -> f64 {
        self.transfer.last().copied().unwrap_or(0.0)
    }
}

pub fn transfer_times(lengths: &[f64], gluing: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(lengths.len());
    let mut acc = 0.0;
    for (j, t) in lengths.iter().enumerate() {
        if j > 0 {
            acc += gluing[j - 1];
        }
        acc += t;
        out.push(acc);
    }
    out
}

/// Budget of the randomized search used by numeric backends.
#[derive(Clone, Debug)]
pub struct SearchBudget {
    pub starts: usize,
    pub iterations: usize,
    /// The `τ` grid has spacing `τ_max / tau_resolution`.
    pub tau_resolution: usize,
    pub seed: u64,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            starts: 64,
            iterations: 200,
            tau_resolution: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GlueParams<P> {
    pub delta: f64,
    pub tau_max: f64,
    pub t0: f64,
    pub container: Neighborhood<P>,
    pub budget: SearchBudget,
    pub n_samples: Option<usize>,
}

/// Backends able to search for shadowing orbits.
pub trait Glue: Flow {
    fn glue(
        &self,
        segments: &[OrbitSegment<Self::Point>],
        params: &GlueParams<Self::Point>,
    ) -> Result<ShadowingCertificate<Self::Point>>;
}

fn check_inputs<P>(segments: &[OrbitSegment<P>], t0: f64) -> Result<()> {
    if segments.is_empty() {
        return Err(Error::Config("need at least one segment to glue".into()));
    }
    if let Some(s) = segments.iter().find(|s| s.t < t0) {
        return Err(Error::Config(format!(
            "segment length {} is below T₀ = {t0}",
            s.t
        )));
    }
    Ok(())
}

fn margins<F: Flow>(
    flow: &F,
    y: &F::Point,
    segments: &[OrbitSegment<F::Point>],
    gluing: &[f64],
    delta: f64,
    n_samples: Option<usize>,
) -> Result<Vec<f64>> {
    let lengths: Vec<f64> = segments.iter().map(|s| s.t).collect();
    let transfer = transfer_times(&lengths, gluing);
    let mut out = Vec::with_capacity(segments.len());
    let mut cur = y.clone();
    let mut at = 0.0;
    for (j, seg) in segments.iter().enumerate() {
        let start = if j == 0 {
            0.0
        } else {
            transfer[j - 1] + gluing[j - 1]
        };
        cur = flow.evolve(&cur, start - at)?;
        at = start;
        out.push(delta - bowen_distance(flow, &cur, &seg.start, seg.t, n_samples)?);
    }
    Ok(out)
}

impl Glue for SymbolicSuspension {
    /// Splices the visited symbol blocks with shortest connecting words. Each
    /// block keeps `m` context symbols on both sides, where `θ^{m+1} < δ`.
    fn glue(
        &self,
        segments: &[OrbitSegment<SymPoint>],
        params: &GlueParams<SymPoint>,
    ) -> Result<ShadowingCertificate<SymPoint>> {
        check_inputs(segments, params.t0)?;
        let delta = params.delta;
        let m = (0..64)
            .find(|&m| self.theta().powi(m + 1) < delta)
            .unwrap_or(64) as i64;
        let outer = m.max(self.region_radius(params.container.label) as i64);
        let sft = self.lambda_sft();
        let max_len = (params.tau_max / self.roof_min()).ceil() as usize;
        let k = segments.len();

        let first = &segments[0].start;
        let mut word: Vec<u8> = first.window(-outer, 0);
        let mut gluing = Vec::with_capacity(k - 1);
        // time left in the previous segment's final fiber plus its trailing context
        let mut pending = 0.0;
        for (j, seg) in segments.iter().enumerate() {
            let x = &seg.start;
            if j > 0 {
                let head = x.window(-m, 0);
                let from = *word.last().unwrap();
                let to = head.first().copied().unwrap_or(x.symbol(0));
                let connector = sft.connector(from, to, max_len)?;
                let tau = pending
                    + connector
                        .iter()
                        .chain(&head)
                        .map(|&s| self.roof_of(s))
                        .sum::<f64>()
                    + x.height;
                if tau > params.tau_max {
                    return Err(Error::InfeasibleGap { from, to, max_len });
                }
                gluing.push(tau);
                word.extend(connector);
                word.extend(head);
            }
            let n = self.segment_points(x, seg.t, None)?.len().max(1) as i64;
            let end = self.evolve(x, seg.t)?;
            let tail = x.window(n, n + if j + 1 == k { outer } else { m });
            word.extend(x.window(0, n));
            word.extend(&tail);
            pending = if end.height > 0.0 {
                self.roof_of(end.symbol(0)) - end.height
            } else {
                0.0
            } + tail
                .iter()
                .take(m as usize)
                .map(|&s| self.roof_of(s))
                .sum::<f64>();
        }
        let cycle = self.ambient().close_cycle(&word)?;
        let y = SymPoint::new(cycle, outer as usize, first.height);
        let lengths: Vec<f64> = segments.iter().map(|s| s.t).collect();
        let transfer = transfer_times(&lengths, &gluing);
        let margins = margins(self, &y, segments, &gluing, delta, params.n_samples)?;
        Ok(ShadowingCertificate {
            inputs: segments.to_vec(),
            y,
            gluing,
            transfer,
            delta,
            container: params.container.label,
            margins,
        })
    }
}

impl Glue for OdeFlow {
    /// Multi-start coordinate descent over `y` near `x₁` and the gluing times on
    /// a grid; the lowest-indexed successful start wins.
    fn glue(
        &self,
        segments: &[OrbitSegment<OdePoint>],
        params: &GlueParams<OdePoint>,
    ) -> Result<ShadowingCertificate<OdePoint>> {
        check_inputs(segments, params.t0)?;
        let k = segments.len();
        let delta = params.delta;
        let budget = &params.budget;
        let grid = params.tau_max / budget.tau_resolution.max(1) as f64;
        let lengths: Vec<f64> = segments.iter().map(|s| s.t).collect();
        let total_len: f64 = lengths.iter().sum();

        let score = |y: &OdePoint, taus: &[f64]| -> f64 {
            match margins(self, y, segments, taus, delta, params.n_samples) {
                Ok(m) => m.iter().cloned().fold(f64::INFINITY, f64::min),
                Err(_) => f64::NEG_INFINITY,
            }
        };
        let contained = |y: &OdePoint, taus: &[f64]| -> bool {
            let total = total_len + taus.iter().sum::<f64>();
            let seg = OrbitSegment::new(*y, total);
            segment_in_neighborhood(self, &seg, &params.container, params.n_samples)
                .unwrap_or(false)
        };

        let found = (0..budget.starts.max(1))
            .into_par_iter()
            .find_map_first(|start| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(budget.seed, start as u64));
                let mut y = if start == 0 {
                    segments[0].start
                } else {
                    self.perturb(&segments[0].start, 0.5 * delta, &mut rng)
                };
                let mut taus: Vec<usize> = (1..k)
                    .map(|_| {
                        if start == 0 {
                            0
                        } else {
                            rng.gen_range(0..=budget.tau_resolution)
                        }
                    })
                    .collect();
                let to_times =
                    |ix: &[usize]| ix.iter().map(|&i| i as f64 * grid).collect::<Vec<_>>();
                let mut best = score(&y, &to_times(&taus));
                let mut step = 0.25 * delta;
                for _ in 0..budget.iterations {
                    if best > 0.0 {
                        break;
                    }
                    let mut improved = false;
                    for c in 0..3 {
                        for dir in [1.0, -1.0] {
                            let mut cand = y;
                            cand[c] += dir * step;
                            if crate::flow::ode_distance(&cand, &segments[0].start) >= delta {
                                continue;
                            }
                            let v = score(&cand, &to_times(&taus));
                            if v > best {
                                best = v;
                                y = cand;
                                improved = true;
                            }
                        }
                    }
                    for i in 0..taus.len() {
                        for dir in [1i64, -1] {
                            let next = taus[i] as i64 + dir;
                            if next < 0 || next > budget.tau_resolution as i64 {
                                continue;
                            }
                            let mut cand = taus.clone();
                            cand[i] = next as usize;
                            let v = score(&y, &to_times(&cand));
                            if v > best {
                                best = v;
                                taus = cand;
                                improved = true;
                            }
                        }
                    }
                    if !improved {
                        step *= 0.5;
                        if step < 1e-12 {
                            break;
                        }
                    }
                }
                let times = to_times(&taus);
                (best > 0.0 && contained(&y, &times)).then_some((y, times))
            });

        let (y, gluing) = found.ok_or(Error::NoCertificate {
            attempts: budget.starts,
        })?;
        let transfer = transfer_times(&lengths, &gluing);
        let margins = margins(self, &y, segments, &gluing, delta, params.n_samples)?;
        Ok(ShadowingCertificate {
            inputs: segments.to_vec(),
            y,
            gluing,
            transfer,
            delta,
            container: params.container.label,
            margins,
        })
    }
}

/// Independent re-check of a certificate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyReport {
    /// `δ − d_{t_j}` per segment; positive means the inequality holds.
    pub margins: Vec<f64>,
    pub gluing_ok: bool,
    pub container: RegionLabel,
    pub container_ok: bool,
    pub passed: bool,
}

/// Recomputes every shadowing inequality and the membership of `(y, s_k)` in `container`.
pub fn verify<F: Flow>(
    flow: &F,
    cert: &ShadowingCertificate<F::Point>,
    container: &Neighborhood<F::Point>,
    tau_max: f64,
    n_samples: Option<usize>,
) -> Result<VerifyReport> {
    let margins = margins(
        flow,
        &cert.y,
        &cert.inputs,
        &cert.gluing,
        cert.delta,
        n_samples,
    )?;
    let lengths: Vec<f64> = cert.inputs.iter().map(|s| s.t).collect();
    let total = transfer_times(&lengths, &cert.gluing)
        .last()
        .copied()
        .unwrap_or(0.0);
    let container_ok = segment_in_neighborhood(
        flow,
        &OrbitSegment::new(cert.y.clone(), total),
        container,
        n_samples,
    )?;
    let gluing_ok = cert.gluing.len() + 1 == cert.inputs.len()
        && cert.gluing.iter().all(|&t| (0.0..=tau_max).contains(&t));
    let passed = gluing_ok && container_ok && margins.iter().all(|&m| m > 0.0);
    Ok(VerifyReport {
        margins,
        gluing_ok,
        container: container.label,
        container_ok,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{Everywhere, Sft, VectorField};

    fn params<P: 'static>(delta: f64, tau_max: f64) -> GlueParams<P> {
        GlueParams {
            delta,
            tau_max,
            t0: 1.0,
            container: Neighborhood::new(RegionLabel::U, Everywhere),
            budget: SearchBudget::default(),
            n_samples: None,
        }
    }

    #[test]
    fn transfer_time_bookkeeping() {
        assert_eq!(
            transfer_times(&[2.0, 3.0, 1.0], &[0.5, 0.25]),
            vec![2.0, 5.5, 6.75]
        );
        assert_eq!(transfer_times(&[4.0], &[]), vec![4.0]);
    }

    #[test]
    fn full_shift_glues_without_gaps() {
        let f = SymbolicSuspension::full_shift(2, 1.0, 0.01).unwrap();
        let segs = vec![
            OrbitSegment::new(SymPoint::new(vec![0, 1, 1, 0, 1], 0, 0.0), 3.0),
            OrbitSegment::new(SymPoint::new(vec![1, 1, 0], 0, 0.5), 2.0),
            OrbitSegment::new(SymPoint::new(vec![0, 0, 1], 1, 0.0), 4.0),
        ];
        let p = params(0.05, 2.0);
        let cert = f.glue(&segs, &p).unwrap();
        assert_eq!(cert.gluing.len(), 2);
        assert!(cert.margins.iter().all(|&m| m > 0.0));
        let report = verify(&f, &cert, &p.container, p.tau_max, None).unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(cert.start_time(1), cert.transfer[0] + cert.gluing[0]);
    }

    #[test]
    fn golden_mean_needs_a_connector() {
        let f = SymbolicSuspension::new(Sft::golden_mean(), vec![1.0, 1.0], 0.01).unwrap();
        let ones = SymPoint::new(vec![1, 0], 0, 0.0);
        let segs = vec![
            OrbitSegment::new(ones.clone(), 3.0),
            OrbitSegment::new(ones.clone(), 3.0),
        ];
        let cert = f.glue(&segs, &params(0.05, 2.0)).unwrap();
        assert_eq!(cert.gluing, vec![1.0]);
        assert!(
            verify(&f, &cert, &params(0.05, 2.0).container, 2.0, None)
                .unwrap()
                .passed
        );
        assert!(matches!(
            f.glue(&segs, &params(0.05, 0.5)),
            Err(Error::InfeasibleGap { .. })
        ));
    }

    #[test]
    fn short_segments_are_rejected() {
        let f = SymbolicSuspension::full_shift(2, 1.0, 0.01).unwrap();
        let segs = vec![OrbitSegment::new(SymPoint::new(vec![0], 0, 0.0), 0.5)];
        assert!(matches!(
            f.glue(&segs, &params(0.05, 1.0)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            f.glue(&[], &params(0.05, 1.0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn rotation_gluing_finds_the_phase() {
        let flow = OdeFlow::new(VectorField::rotation(), 1e-3, 200.0).unwrap();
        let angle: f64 = 1.5;
        let segs = vec![
            OrbitSegment::new([1.0, 0.0, 0.0], 1.0),
            OrbitSegment::new([angle.cos(), angle.sin(), 0.0], 1.0),
        ];
        let p = params(0.1, 2.0);
        let cert = flow.glue(&segs, &p).unwrap();
        assert!(
            (cert.gluing[0] - 0.5).abs() <= 2.0 * p.delta + 1e-9,
            "{:?}",
            cert.gluing
        );
        let report = verify(&flow, &cert, &p.container, p.tau_max, None).unwrap();
        assert!(report.passed);

        let mut forged = cert.clone();
        forged.gluing[0] += 1.0;
        let bad = verify(&flow, &forged, &p.container, p.tau_max, None).unwrap();
        assert!(!bad.passed && bad.margins[1] < 0.0);
    }

    #[test]
    fn unreachable_targets_give_no_certificate() {
        let flow = OdeFlow::new(VectorField::rotation(), 1e-3, 200.0).unwrap();
        let segs = vec![
            OrbitSegment::new([1.0, 0.0, 0.0], 1.0),
            OrbitSegment::new([2.0, 0.0, 0.0], 1.0),
        ];
        let mut p = params(0.1, 1.0);
        p.budget.starts = 4;
        p.budget.iterations = 20;
        assert!(matches!(
            flow.glue(&segs, &p),
            Err(Error::NoCertificate { attempts: 4 })
        ));
    }
}
