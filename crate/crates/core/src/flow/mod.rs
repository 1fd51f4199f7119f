//! Dynamical systems under study: a flow with a metric, a time-t map and a
//! continuous potential, plus the isolating neighborhoods `U ⊃ U₁ ⊃ Λ`.
//!
//! Two backends ship with the crate: [`SymbolicSuspension`], an exact
//! suspension flow over a subshift of finite type, and [`OdeFlow`], a
//! fixed-step RK4 integration of a vector field on ℝ³ (Lorenz by default).

mod ode;
mod symbolic;

use std::fmt::Debug;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ode::{
    euclid as ode_distance, lorenz_cloud, BallUnion, OdeFlow, OdePoint, OdeTrace, SublevelSet,
    VectorField,
};
pub use symbolic::{
    graph_pressure, perron_root, symbolic_pressure, Sft, SymPoint, SymbolicRegion,
    SymbolicSuspension, SymbolicTrace,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    SymbolicSuspension,
    Ode,
}

/// A continuous potential `φ`. Symbolic variants read the sequence at the
/// current fiber and ignore the height, so Birkhoff integrals are exact sums.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Potential {
    Constant {
        value: f64,
    },
    /// `φ(x) = a[x₀]`.
    FirstSymbol {
        values: Vec<f64>,
    },
    /// `φ(x) = Σ_{i=0}^{depth} decay^i · w[x_i]`, Hölder for the θ-metric when `decay ≤ θ⁻¹`.
    SymbolHolder {
        weights: Vec<f64>,
        decay: f64,
        depth: usize,
    },
    /// `φ(x) = x[index]` on ℝⁿ.
    Coordinate {
        index: usize,
    },
    /// `φ(x) = offset + Σ coeffs[i]·x[i]`.
    Affine {
        offset: f64,
        coeffs: Vec<f64>,
    },
}

impl Potential {
    pub fn zero() -> Self {
        Potential::Constant { value: 0.0 }
    }

    pub fn is_constant(&self) -> Option<f64> {
        match self {
            Potential::Constant { value } => Some(*value),
            _ => None,
        }
    }
}

/// Which of the nested sets a neighborhood stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionLabel {
    Lambda,
    U1,
    U,
}

impl RegionLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            RegionLabel::Lambda => "lambda",
            RegionLabel::U1 => "u1",
            RegionLabel::U => "u",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lambda" => Some(RegionLabel::Lambda),
            "u1" => Some(RegionLabel::U1),
            "u" => Some(RegionLabel::U),
            _ => None,
        }
    }
}

pub trait Region<P>: Send + Sync {
    fn contains(&self, x: &P) -> bool;
}

/// A membership test tagged with the set it represents.
#[derive(Clone)]
pub struct Neighborhood<P> {
    pub label: RegionLabel,
    region: Arc<dyn Region<P>>,
}

impl<P> Neighborhood<P> {
    pub fn new(label: RegionLabel, region: impl Region<P> + 'static) -> Self {
        Neighborhood {
            label,
            region: Arc::new(region),
        }
    }

    pub fn contains(&self, x: &P) -> bool {
        self.region.contains(x)
    }
}

impl<P> Debug for Neighborhood<P> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Neighborhood")
            .field("label", &self.label)
            .finish()
    }
}

/// Region accepting every point.
pub struct Everywhere;

impl<P> Region<P> for Everywhere {
    fn contains(&self, _: &P) -> bool {
        true
    }
}

/// An evolvable system with a metric. Implementations must be immutable after
/// construction; every query is pure and may run on any worker.
pub trait Flow: Send + Sync {
    type Point: Clone + Debug + Send + Sync;
    /// Precomputed data for repeated Bowen-distance evaluations of one orbit segment.
    type Trace: Send + Sync;

    fn kind(&self) -> BackendKind;

    fn state_dim(&self) -> usize;

    fn invertible(&self) -> bool {
        true
    }

    /// `f_t(x)`.
    fn evolve(&self, x: &Self::Point, t: f64) -> Result<Self::Point>;

    fn distance(&self, x: &Self::Point, y: &Self::Point) -> f64;

    /// Upper bound on `distance`.
    fn diameter(&self) -> f64;

    /// Trace of `(x, t)` for Bowen distances; `n_samples` only matters for sampled backends.
    fn trace_sampled(
        &self,
        x: &Self::Point,
        t: f64,
        n_samples: Option<usize>,
    ) -> Result<Self::Trace>;

    fn trace(&self, x: &Self::Point, t: f64) -> Result<Self::Trace> {
        self.trace_sampled(x, t, None)
    }

    /// `sup_s d(f_s x, f_s y)` over the two traces (same `t`). Implementations
    /// may stop as soon as the running value exceeds `cap` and return it.
    fn trace_distance(&self, a: &Self::Trace, b: &Self::Trace, cap: f64) -> f64;

    /// Point the trace starts from.
    fn trace_start<'a>(&self, tr: &'a Self::Trace) -> &'a Self::Point;

    /// Points `f_s x` for `s` on a grid of `[0, t)` whose membership in a
    /// region certifies membership of the whole segment (exact for symbolic backends).
    fn segment_points(
        &self,
        x: &Self::Point,
        t: f64,
        n_samples: Option<usize>,
    ) -> Result<Vec<Self::Point>> {
        if t <= 0.0 {
            return Ok(Vec::new());
        }
        let n = n_samples
            .unwrap_or_else(|| 64.max((t / 0.01).ceil() as usize))
            .max(1);
        let h = t / n as f64;
        let mut out = Vec::with_capacity(n);
        out.push(x.clone());
        for _ in 1..n {
            let next = self.evolve(out.last().unwrap(), h)?;
            out.push(next);
        }
        Ok(out)
    }

    fn potential(&self, phi: &Potential, x: &Self::Point) -> Result<f64>;

    /// `∫₀ᵗ φ(f_s x) ds`.
    fn birkhoff(&self, phi: &Potential, x: &Self::Point, t: f64) -> Result<f64>;

    /// `∫₀ᵗ φ(f_s x) ds` over the segment a trace was built from.
    fn birkhoff_trace(&self, phi: &Potential, tr: &Self::Trace) -> Result<f64>;

    /// Grid cell of `x` at `scale`. Contract: if both cells are `Some` and
    /// `distance(x, y) ≤ scale`, the cells differ by at most one in each coordinate.
    fn coarse_cell(&self, _x: &Self::Point, _scale: f64) -> Option<[i64; 3]> {
        None
    }

    /// Bucketing key for greedy separation. Contract: if both keys are `Some`
    /// and `d_t(x, y) ≤ scale`, the keys are equal.
    fn separation_key(&self, _x: &Self::Point, _t: f64, _scale: f64) -> Option<Vec<u8>> {
        None
    }

    /// Candidate points near `x` (within roughly `eps` in `d_t`). Callers verify
    /// membership in the Bowen ball; probes are deterministic given the RNG.
    fn probes<R: Rng>(
        &self,
        x: &Self::Point,
        t: f64,
        eps: f64,
        n: usize,
        rng: &mut R,
    ) -> Vec<Self::Point>;

    /// Candidates for `Γ_ε(x)` over the window `[−window, window]`; callers verify them.
    fn ne_probes<R: Rng>(
        &self,
        x: &Self::Point,
        _window: f64,
        eps: f64,
        n: usize,
        rng: &mut R,
    ) -> Vec<Self::Point> {
        (0..n).map(|_| self.perturb(x, eps, rng)).collect()
    }

    /// `inf_{−back ≤ s ≤ fwd} d(y, f_s x)`, sampled on a grid of spacing `h` and
    /// refined by ternary search around the best sample.
    fn orbit_gap(
        &self,
        x: &Self::Point,
        y: &Self::Point,
        back: f64,
        fwd: f64,
        h: f64,
    ) -> Result<f64> {
        let span = back + fwd;
        let n = ((span / h).ceil() as usize).max(1);
        let step = span / n as f64;
        let mut p = self.evolve(x, -back)?;
        let mut best = (self.distance(y, &p), 0usize);
        for i in 1..=n {
            p = self.evolve(&p, step)?;
            let d = self.distance(y, &p);
            if d < best.0 {
                best = (d, i);
            }
        }
        let centre = -back + best.1 as f64 * step;
        let (mut lo, mut hi) = ((centre - step).max(-back), (centre + step).min(fwd));
        let origin = lo;
        let base = self.evolve(x, origin)?;
        let at = |s: f64| self.evolve(&base, s - origin).map(|q| self.distance(y, &q));
        for _ in 0..40 {
            let a = lo + (hi - lo) / 3.0;
            let b = hi - (hi - lo) / 3.0;
            if at(a)? < at(b)? {
                hi = b;
            } else {
                lo = a;
            }
        }
        Ok(best.0.min(at(0.5 * (lo + hi))?))
    }

    /// Random point within distance `radius` of `x` (exact for ODE, best effort for symbolic).
    fn perturb<R: Rng>(&self, x: &Self::Point, radius: f64, rng: &mut R) -> Self::Point;

    /// A 3-vector embedding, Lipschitz in `distance`, used by test-function dictionaries.
    fn features(&self, x: &Self::Point) -> [f64; 3];

    fn point_to_json(&self, x: &Self::Point) -> serde_json::Value;

    fn point_from_json(&self, v: &serde_json::Value) -> Result<Self::Point>;
}

/// `φ(x)`, refusing points outside the domain `U`.
pub fn eval_potential<F: Flow>(
    flow: &F,
    phi: &Potential,
    x: &F::Point,
    domain: &Neighborhood<F::Point>,
) -> Result<f64> {
    if !domain.contains(x) {
        return Err(Error::OutsideDomain);
    }
    flow.potential(phi, x)
}

/// Composite Simpson rule on equally spaced samples (trapezoid on a trailing odd interval).
pub(crate) fn simpson(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let intervals = n - 1;
    let even = intervals - intervals % 2;
    let mut acc = 0.0;
    let mut i = 0;
    while i < even {
        acc += values[i] + 4.0 * values[i + 1] + values[i + 2];
        i += 2;
    }
    acc *= h / 3.0;
    if even < intervals {
        acc += 0.5 * h * (values[n - 2] + values[n - 1]);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_is_exact_on_cubics() {
        let h = 0.25;
        let values: Vec<f64> = (0..9).map(|i| (i as f64 * h).powi(3)).collect();
        assert!((simpson(&values, h) - 4.0).abs() < 1e-12);
        assert!((simpson(&[1.0, 1.0, 1.0, 1.0], 0.5) - 1.5).abs() < 1e-15);
        assert_eq!(simpson(&[3.0], 1.0), 0.0);
    }

    #[test]
    fn potential_outside_domain() {
        let flow = OdeFlow::lorenz();
        let ball = Neighborhood::new(RegionLabel::U, BallUnion::new(vec![[0.0; 3]], 1.0));
        let phi = Potential::Coordinate { index: 2 };
        assert_eq!(
            eval_potential(&flow, &phi, &[0.0, 0.0, 0.5], &ball).unwrap(),
            0.5
        );
        assert!(matches!(
            eval_potential(&flow, &phi, &[5.0, 0.0, 0.0], &ball),
            Err(Error::OutsideDomain)
        ));
    }

    #[test]
    fn labels_round_trip() {
        for l in [RegionLabel::Lambda, RegionLabel::U1, RegionLabel::U] {
            assert_eq!(RegionLabel::parse(l.as_str()), Some(l));
        }
        assert_eq!(RegionLabel::parse("V"), None);
    }

    #[test]
    fn potential_serde() {
        let phi: Potential =
            serde_json::from_str(r#"{"kind":"first-symbol","values":[0.0,1.0]}"#).unwrap();
        assert_eq!(
            phi,
            Potential::FirstSymbol {
                values: vec![0.0, 1.0]
            }
        );
        assert_eq!(Potential::zero().is_constant(), Some(0.0));
    }
}
