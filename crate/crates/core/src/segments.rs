//! Orbit segments `(x, t)`, Bowen distances and segment collections.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::flow::{Flow, Neighborhood, RegionLabel, SymPoint, SymbolicSuspension};

/// Grid resolution for the shift `s ∈ [0, 1)` in [`discretize`].
pub const DISCRETIZE_GRID: usize = 64;

/// The orbit piece `f_{[0,t)}(x)`. `t = 0` is the empty segment.
#[derive(Clone, Debug, PartialEq)]
pub struct OrbitSegment<P> {
    pub start: P,
    pub t: f64,
}

impl<P> OrbitSegment<P> {
    pub fn new(start: P, t: f64) -> Self {
        OrbitSegment { start, t }
    }

    pub fn is_empty(&self) -> bool {
        self.t == 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Lambda,
    U1,
    U,
    Derived,
}

impl From<RegionLabel> for Provenance {
    fn from(l: RegionLabel) -> Self {
        match l {
            RegionLabel::Lambda => Provenance::Lambda,
            RegionLabel::U1 => Provenance::U1,
            RegionLabel::U => Provenance::U,
        }
    }
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Lambda => "lambda",
            Provenance::U1 => "u1",
            Provenance::U => "u",
            Provenance::Derived => "derived",
        }
    }
}

/// A finite collection of orbit segments.
#[derive(Clone, Debug)]
pub struct SegmentCollection<P> {
    pub segments: Vec<OrbitSegment<P>>,
    pub label: Provenance,
}

impl<P: Clone> SegmentCollection<P> {
    pub fn new(segments: Vec<OrbitSegment<P>>, label: Provenance) -> Self {
        SegmentCollection { segments, label }
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// `(C)_t = {x : (x, t) ∈ C}`.
    pub fn slice(&self, t: f64) -> Vec<P> {
        self.segments
            .iter()
            .filter(|s| s.t == t)
            .map(|s| s.start.clone())
            .collect()
    }

    pub fn lengths(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self.segments.iter().map(|s| s.t).collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }
}

/// `d_t(x, y) = sup_s d(f_s x, f_s y)`; exact on symbolic backends.
pub fn bowen_distance<F: Flow>(
    flow: &F,
    x: &F::Point,
    y: &F::Point,
    t: f64,
    n_samples: Option<usize>,
) -> Result<f64> {
    let a = flow.trace_sampled(x, t, n_samples)?;
    let b = flow.trace_sampled(y, t, n_samples)?;
    Ok(flow.trace_distance(&a, &b, f64::INFINITY))
}

/// Whether `f_s x ∈ N` for every sampled `s ∈ [0, t)`.
pub fn segment_in_neighborhood<F: Flow>(
    flow: &F,
    seg: &OrbitSegment<F::Point>,
    n: &Neighborhood<F::Point>,
    n_samples: Option<usize>,
) -> Result<bool> {
    if seg.is_empty() {
        return Ok(true);
    }
    Ok(flow
        .segment_points(&seg.start, seg.t, n_samples)?
        .iter()
        .all(|p| n.contains(p)))
}

/// `[C]`: integer-length segments `(f_s y, n)` with `n + s ≤ ℓ < n + s + 1`
/// for `(y, ℓ) ∈ C` and `s` on a uniform grid of `[0, 1)`.
pub fn discretize<F: Flow>(
    flow: &F,
    c: &SegmentCollection<F::Point>,
) -> Result<SegmentCollection<F::Point>> {
    let per_segment: Vec<Vec<OrbitSegment<F::Point>>> = c
        .segments
        .par_iter()
        .map(|seg| {
            let mut out = Vec::new();
            let lo = (seg.t.ceil() - 2.0).max(0.0) as u64;
            let hi = seg.t.floor().max(0.0) as u64;
            for j in 0..DISCRETIZE_GRID {
                let s = j as f64 / DISCRETIZE_GRID as f64;
                let mut shifted = None;
                for n in lo..=hi {
                    let rest = seg.t - n as f64 - s;
                    if (0.0..1.0).contains(&rest) {
                        if shifted.is_none() {
                            shifted = Some(flow.evolve(&seg.start, s)?);
                        }
                        out.push(OrbitSegment::new(shifted.clone().unwrap(), n as f64));
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(SegmentCollection::new(
        per_segment.into_iter().flatten().collect(),
        Provenance::Derived,
    ))
}

/// `f_{i,j}(C) = {(f_i x, t − (i + j)) : (x, t) ∈ C, t ≥ i + j}`.
pub fn trim<F: Flow>(
    flow: &F,
    c: &SegmentCollection<F::Point>,
    i: f64,
    j: f64,
) -> Result<SegmentCollection<F::Point>> {
    let cut = i + j;
    let segments = c
        .segments
        .par_iter()
        .filter(|s| s.t >= cut)
        .map(|s| Ok(OrbitSegment::new(flow.evolve(&s.start, i)?, s.t - cut)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SegmentCollection::new(segments, c.label))
}

/// Produces candidate points for the slice `(C)_t` of a collection.
pub trait SliceSource<F: Flow>: Sync {
    fn label(&self) -> Provenance;

    fn slice(&self, flow: &F, t: f64) -> Result<Vec<F::Point>>;
}

/// Exhaustive cylinder representatives of `Λ×ℝ⁺`, `O(U₁)` or `O(U)` on a suspension.
#[derive(Clone, Copy, Debug)]
pub struct CylinderSlices(pub RegionLabel);

impl SliceSource<SymbolicSuspension> for CylinderSlices {
    fn label(&self) -> Provenance {
        self.0.into()
    }

    fn slice(&self, flow: &SymbolicSuspension, t: f64) -> Result<Vec<SymPoint>> {
        flow.cylinder_candidates(self.0, t)
    }
}

/// A fixed point cloud filtered by segment membership in a neighborhood.
#[derive(Clone, Debug)]
pub struct CloudSlices<P> {
    pub points: Vec<P>,
    pub neighborhood: Neighborhood<P>,
    pub n_samples: Option<usize>,
}

impl<F: Flow> SliceSource<F> for CloudSlices<F::Point> {
    fn label(&self) -> Provenance {
        self.neighborhood.label.into()
    }

    fn slice(&self, flow: &F, t: f64) -> Result<Vec<F::Point>> {
        let keep = self
            .points
            .par_iter()
            .map(|x| {
                let seg = OrbitSegment::new(x.clone(), t);
                segment_in_neighborhood(flow, &seg, &self.neighborhood, self.n_samples)
            })
            .collect::<Result<Vec<bool>>>()?;
        Ok(self
            .points
            .iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|(p, _)| p.clone())
            .collect())
    }
}

impl<F: Flow> SliceSource<F> for SegmentCollection<F::Point> {
    fn label(&self) -> Provenance {
        self.label
    }

    fn slice(&self, _: &F, t: f64) -> Result<Vec<F::Point>> {
        Ok(SegmentCollection::slice(self, t))
    }
}
