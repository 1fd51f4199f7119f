//! `(P, G, S)` decompositions of segment collections.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Flow, Neighborhood, OdeFlow, OdePoint};
use crate::segments::{segment_in_neighborhood, OrbitSegment, Provenance, SegmentCollection};

/// Prefix, good core and suffix lengths with `p + g + s = t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub p: f64,
    pub g: f64,
    pub s: f64,
}

impl Split {
    /// Builds a split of `t` from `p` and `s` with `p + g + s == t` in floating
    /// point. Whichever of `p + g` and `s` is at least `t/2` is kept, so the other
    /// is an exact difference; only `s` or `g` move, by rounding amounts.
    pub fn exact(t: f64, p: f64, s: f64) -> Self {
        let p = p.clamp(0.0, t);
        let s = s.clamp(0.0, t - p);
        let g = (t - p - s).max(0.0);
        let head = p + g;
        if head >= 0.5 * t && head <= t {
            let s = t - head;
            if head + s == t {
                return Split { p, g, s };
            }
        }
        // s ≥ t/2 here, so t − s is exact; ties-to-even can make a given target
        // unreachable from p, hence the walk over neighbouring s as well
        let mut s_down = s;
        let mut s_up = s;
        for _ in 0..ULP_SEARCH {
            for s in [s_down, s_up] {
                if s > t {
                    continue;
                }
                let target = t - s;
                if target < p || target + s != t {
                    continue;
                }
                let g = target - p;
                let (mut up, mut down) = (g, g);
                for _ in 0..4 {
                    if p + up == target {
                        return Split { p, g: up, s };
                    }
                    if p + down == target {
                        return Split { p, g: down, s };
                    }
                    up = next_up(up);
                    down = next_down(down);
                }
            }
            s_down = next_down(s_down);
            s_up = next_up(s_up);
        }
        Split {
            p: 0.0,
            g: t,
            s: 0.0,
        }
    }

    pub fn total(&self) -> f64 {
        self.p + self.g + self.s
    }
}

const ULP_SEARCH: usize = 64;

fn next_up(x: f64) -> f64 {
    if x == 0.0 {
        return f64::from_bits(1);
    }
    f64::from_bits(x.to_bits() + 1)
}

fn next_down(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    f64::from_bits(x.to_bits() - 1)
}

/// A rule `(x, t) ↦ (p, g, s)`.
pub trait Splitter<F: Flow>: Sync {
    fn split(&self, flow: &F, seg: &OrbitSegment<F::Point>) -> Result<Split>;
}

/// Everything is good: `(x, t) ↦ (0, t, 0)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrivialSplitter;

impl<F: Flow> Splitter<F> for TrivialSplitter {
    fn split(&self, _: &F, seg: &OrbitSegment<F::Point>) -> Result<Split> {
        Ok(Split {
            p: 0.0,
            g: seg.t,
            s: 0.0,
        })
    }
}

/// Prefix and suffix are the initial and final stretches spent within `r0` of
/// `center` (the origin equilibrium of Lorenz by default).
#[derive(Clone, Debug)]
pub struct SingularityAvoidance {
    pub center: OdePoint,
    pub r0: f64,
    /// Grid spacing for the exit-time search.
    pub dt: f64,
}

impl Default for SingularityAvoidance {
    fn default() -> Self {
        SingularityAvoidance {
            center: [0.0; 3],
            r0: 3.0,
            dt: 1e-3,
        }
    }
}

impl SingularityAvoidance {
    fn near(&self, x: &OdePoint) -> bool {
        crate::flow::ode_distance(x, &self.center) < self.r0
    }
}

impl Splitter<OdeFlow> for SingularityAvoidance {
    fn split(&self, flow: &OdeFlow, seg: &OrbitSegment<OdePoint>) -> Result<Split> {
        let t = seg.t;
        if t == 0.0 {
            return Ok(Split {
                p: 0.0,
                g: 0.0,
                s: 0.0,
            });
        }
        let n = ((t / self.dt).ceil() as usize).max(1);
        let h = t / n as f64;
        let mut first_out = None;
        let mut last_out = None;
        let mut x = seg.start;
        for i in 0..=n {
            if !self.near(&x) {
                first_out.get_or_insert(i);
                last_out = Some(i);
            }
            if i < n {
                x = flow.evolve(&x, h)?;
            }
        }
        match (first_out, last_out) {
            (Some(a), Some(b)) => {
                let p = if a == 0 { 0.0 } else { a as f64 * h };
                let s = if b == n { 0.0 } else { t - (b + 1) as f64 * h };
                Ok(Split::exact(t, p, s))
            }
            _ => Ok(Split {
                p: t,
                g: 0.0,
                s: 0.0,
            }),
        }
    }
}

/// A decomposition evaluated on its domain `D`.
#[derive(Clone, Debug)]
pub struct Decomposition<P> {
    pub domain: SegmentCollection<P>,
    pub splits: Vec<Split>,
}

pub fn decompose_collection<F: Flow, S: Splitter<F>>(
    flow: &F,
    splitter: &S,
    domain: SegmentCollection<F::Point>,
) -> Result<Decomposition<F::Point>> {
    let splits = domain
        .segments
        .par_iter()
        .map(|seg| splitter.split(flow, seg))
        .collect::<Result<Vec<_>>>()?;
    Ok(Decomposition { domain, splits })
}

/// Result of restricting a decomposition to `Λ×ℝ⁺`; `D₀` may be empty.
#[derive(Clone, Debug)]
pub struct Induced<P> {
    pub decomposition: Decomposition<P>,
    pub empty: bool,
}

impl<P: Clone + PartialEq + Send + Sync> Decomposition<P> {
    pub fn len(&self) -> usize {
        self.splits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splits.is_empty()
    }

    /// The split of a domain segment.
    pub fn decompose(&self, seg: &OrbitSegment<P>) -> Result<Split> {
        self.domain
            .segments
            .iter()
            .position(|d| d == seg)
            .map(|i| self.splits[i])
            .ok_or(Error::NotInDomain)
    }

    /// `G^M = {(x, t) ∈ D : p ≤ M, s ≤ M}`; `M = ∞` keeps everything.
    pub fn filter_gm(&self, m: f64) -> SegmentCollection<P> {
        let segments = self
            .domain
            .segments
            .iter()
            .zip(&self.splits)
            .filter(|(_, sp)| sp.p <= m && sp.s <= m)
            .map(|(seg, _)| seg.clone())
            .collect();
        SegmentCollection::new(segments, Provenance::Derived)
    }

    /// `P = {(x, p)}`.
    pub fn prefixes(&self) -> SegmentCollection<P> {
        let segments = self
            .domain
            .segments
            .iter()
            .zip(&self.splits)
            .map(|(seg, sp)| OrbitSegment::new(seg.start.clone(), sp.p))
            .collect();
        SegmentCollection::new(segments, Provenance::Derived)
    }

    /// `G = {(f_p x, g)}`.
    pub fn cores<F: Flow<Point = P>>(&self, flow: &F) -> Result<SegmentCollection<P>> {
        self.shifted(flow, |sp| (sp.p, sp.g))
    }

    /// `S = {(f_{p+g} x, s)}`.
    pub fn suffixes<F: Flow<Point = P>>(&self, flow: &F) -> Result<SegmentCollection<P>> {
        self.shifted(flow, |sp| (sp.p + sp.g, sp.s))
    }

    fn shifted<F: Flow<Point = P>>(
        &self,
        flow: &F,
        pick: impl Fn(&Split) -> (f64, f64) + Sync,
    ) -> Result<SegmentCollection<P>> {
        let segments = self
            .domain
            .segments
            .par_iter()
            .zip(&self.splits)
            .map(|(seg, sp)| {
                let (shift, len) = pick(sp);
                Ok(OrbitSegment::new(flow.evolve(&seg.start, shift)?, len))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SegmentCollection::new(segments, Provenance::Derived))
    }

    /// Restriction to `D₀ = D₁ ∩ Λ×ℝ⁺`, keeping each segment's split.
    pub fn induce_on_lambda<F: Flow<Point = P>>(
        &self,
        flow: &F,
        lambda: &Neighborhood<P>,
        n_samples: Option<usize>,
    ) -> Result<Induced<P>> {
        let keep = self
            .domain
            .segments
            .par_iter()
            .map(|seg| segment_in_neighborhood(flow, seg, lambda, n_samples))
            .collect::<Result<Vec<bool>>>()?;
        let (segments, splits): (Vec<_>, Vec<_>) = self
            .domain
            .segments
            .iter()
            .zip(&self.splits)
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|((seg, sp), _)| (seg.clone(), *sp))
            .unzip();
        let empty = segments.is_empty();
        Ok(Induced {
            decomposition: Decomposition {
                domain: SegmentCollection::new(segments, Provenance::Lambda),
                splits,
            },
            empty,
        })
    }
}
