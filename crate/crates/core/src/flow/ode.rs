use std::collections::HashMap;

use rand::Rng;
use serde_json::json;

use super::{simpson, BackendKind, Flow, Potential, Region};
use crate::error::{Error, Result};

pub type OdePoint = [f64; 3];

/// Default grid spacing for sampled Bowen distances.
pub const BOWEN_DT: f64 = 0.01;
/// Minimum number of samples per trace.
pub const MIN_SAMPLES: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub enum VectorField {
    Lorenz {
        sigma: f64,
        rho: f64,
        beta: f64,
    },
    /// `ẋ = A x`.
    Linear([[f64; 3]; 3]),
}

impl VectorField {
    pub fn lorenz() -> Self {
        VectorField::Lorenz {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
        }
    }

    /// Rotation about the z-axis; every point of the axis is fixed.
    pub fn rotation() -> Self {
        VectorField::Linear([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    }

    #[inline]
    pub fn eval(&self, x: &OdePoint) -> OdePoint {
        match self {
            VectorField::Lorenz { sigma, rho, beta } => [
                sigma * (x[1] - x[0]),
                x[0] * (rho - x[2]) - x[1],
                x[0] * x[1] - beta * x[2],
            ],
            VectorField::Linear(a) => {
                let mut out = [0.0; 3];
                for (i, row) in a.iter().enumerate() {
                    out[i] = row[0] * x[0] + row[1] * x[1] + row[2] * x[2];
                }
                out
            }
        }
    }
}

#[inline]
fn axpy(x: &OdePoint, h: f64, v: &OdePoint) -> OdePoint {
    [x[0] + h * v[0], x[1] + h * v[1], x[2] + h * v[2]]
}

#[inline]
pub fn euclid(x: &OdePoint, y: &OdePoint) -> f64 {
    let d = [x[0] - y[0], x[1] - y[1], x[2] - y[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Fixed-step RK4 integration of a vector field on ℝ³. Backward time negates the field.
#[derive(Clone, Debug)]
pub struct OdeFlow {
    field: VectorField,
    dt: f64,
    bound: f64,
}

impl OdeFlow {
    pub fn new(field: VectorField, dt: f64, bound: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Backend("time step must be positive".into()));
        }
        if bound.is_nan() || bound <= 0.0 {
            return Err(Error::Backend("bounding box must be positive".into()));
        }
        Ok(OdeFlow { field, dt, bound })
    }

    pub fn lorenz() -> Self {
        OdeFlow {
            field: VectorField::lorenz(),
            dt: 1e-3,
            bound: 200.0,
        }
    }

    pub fn field(&self) -> &VectorField {
        &self.field
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn with_dt(&self, dt: f64) -> Self {
        OdeFlow { dt, ..self.clone() }
    }

    fn rk4(&self, x: &OdePoint, h: f64) -> OdePoint {
        let k1 = self.field.eval(x);
        let k2 = self.field.eval(&axpy(x, 0.5 * h, &k1));
        let k3 = self.field.eval(&axpy(x, 0.5 * h, &k2));
        let k4 = self.field.eval(&axpy(x, h, &k3));
        let mut out = *x;
        for i in 0..3 {
            out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out
    }

    fn inside(&self, x: &OdePoint) -> bool {
        x.iter().all(|c| c.is_finite() && c.abs() <= self.bound)
    }

    pub fn speed(&self, x: &OdePoint) -> f64 {
        let v = self.field.eval(x);
        (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
    }
}

impl Flow for OdeFlow {
    type Point = OdePoint;
    type Trace = OdeTrace;

    fn kind(&self) -> BackendKind {
        BackendKind::Ode
    }

    fn state_dim(&self) -> usize {
        3
    }

    fn evolve(&self, x: &OdePoint, t: f64) -> Result<OdePoint> {
        if t == 0.0 {
            return Ok(*x);
        }
        let h = self.dt.copysign(t);
        let steps = (t.abs() / self.dt).floor() as u64;
        let rem = t.abs() - steps as f64 * self.dt;
        let mut y = *x;
        for i in 0..steps {
            y = self.rk4(&y, h);
            if !self.inside(&y) {
                return Err(Error::Diverged {
                    at: (i + 1) as f64 * h,
                });
            }
        }
        if rem > 0.0 {
            y = self.rk4(&y, rem.copysign(t));
            if !self.inside(&y) {
                return Err(Error::Diverged { at: t });
            }
        }
        Ok(y)
    }

    fn distance(&self, x: &OdePoint, y: &OdePoint) -> f64 {
        euclid(x, y)
    }

    fn diameter(&self) -> f64 {
        2.0 * self.bound * 3f64.sqrt()
    }

    fn trace_sampled(&self, x: &OdePoint, t: f64, n_samples: Option<usize>) -> Result<OdeTrace> {
        if t < 0.0 {
            return Err(Error::NonInvertible(t));
        }
        if t == 0.0 {
            return Ok(OdeTrace {
                samples: vec![*x],
                t,
            });
        }
        let n = n_samples
            .unwrap_or_else(|| MIN_SAMPLES.max((t / BOWEN_DT).ceil() as usize + 1))
            .max(2);
        let h = t / (n - 1) as f64;
        let mut samples = Vec::with_capacity(n);
        samples.push(*x);
        for _ in 1..n {
            let next = self.evolve(samples.last().unwrap(), h)?;
            samples.push(next);
        }
        Ok(OdeTrace { samples, t })
    }

    fn trace_distance(&self, a: &OdeTrace, b: &OdeTrace, cap: f64) -> f64 {
        let mut best: f64 = 0.0;
        if a.samples.len() == b.samples.len() {
            for (p, q) in a.samples.iter().zip(&b.samples) {
                best = best.max(euclid(p, q));
                if best > cap {
                    break;
                }
            }
        } else {
            // resample the coarser grid onto the finer one by nearest time
            let (fine, coarse) = if a.samples.len() > b.samples.len() {
                (a, b)
            } else {
                (b, a)
            };
            let m = (coarse.samples.len() - 1).max(1) as f64;
            let n = (fine.samples.len() - 1).max(1) as f64;
            for (i, p) in fine.samples.iter().enumerate() {
                let j = ((i as f64 / n) * m).round() as usize;
                best = best.max(euclid(p, &coarse.samples[j.min(coarse.samples.len() - 1)]));
                if best > cap {
                    break;
                }
            }
        }
        best
    }

    fn trace_start<'a>(&self, tr: &'a OdeTrace) -> &'a OdePoint {
        &tr.samples[0]
    }

    fn potential(&self, phi: &Potential, x: &OdePoint) -> Result<f64> {
        match phi {
            Potential::Constant { value } => Ok(*value),
            Potential::Coordinate { index } => x
                .get(*index)
                .copied()
                .ok_or_else(|| Error::Backend(format!("coordinate {index} out of range"))),
            Potential::Affine { offset, coeffs } => {
                if coeffs.len() > 3 {
                    return Err(Error::Backend(
                        "affine potential has too many coefficients".into(),
                    ));
                }
                Ok(offset + coeffs.iter().zip(x).map(|(c, v)| c * v).sum::<f64>())
            }
            Potential::FirstSymbol { .. } | Potential::SymbolHolder { .. } => Err(Error::Backend(
                "symbolic potentials need a symbolic backend".into(),
            )),
        }
    }

    fn birkhoff(&self, phi: &Potential, x: &OdePoint, t: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::NonInvertible(t));
        }
        if t == 0.0 {
            return Ok(0.0);
        }
        if let Some(c) = phi.is_constant() {
            return Ok(c * t);
        }
        let tr = self.trace(x, t)?;
        tr.birkhoff(self, phi)
    }

    fn birkhoff_trace(&self, phi: &Potential, tr: &OdeTrace) -> Result<f64> {
        if let Some(c) = phi.is_constant() {
            return Ok(c * tr.t);
        }
        tr.birkhoff(self, phi)
    }

    fn coarse_cell(&self, x: &OdePoint, scale: f64) -> Option<[i64; 3]> {
        (scale > 0.0).then(|| {
            [
                (x[0] / scale).floor() as i64,
                (x[1] / scale).floor() as i64,
                (x[2] / scale).floor() as i64,
            ]
        })
    }

    fn probes<R: Rng>(
        &self,
        x: &OdePoint,
        _t: f64,
        eps: f64,
        n: usize,
        rng: &mut R,
    ) -> Vec<OdePoint> {
        if eps <= 0.0 {
            return Vec::new();
        }
        let speed = self.speed(x).max(1e-12);
        (0..n)
            .filter_map(|i| {
                // shrink geometrically so some probes survive strong expansion
                let scale = eps * 0.5f64.powi((i / 2 % 12) as i32);
                if i % 2 == 0 {
                    let eta = rng.gen_range(-1.0..1.0) * scale / speed;
                    self.evolve(x, eta).ok()
                } else {
                    Some(self.perturb(x, scale, rng))
                }
            })
            .collect()
    }

    fn perturb<R: Rng>(&self, x: &OdePoint, radius: f64, rng: &mut R) -> OdePoint {
        loop {
            let v = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let r2: f64 = v.iter().map(|c| c * c).sum();
            if r2 <= 1.0 && r2 > 0.0 {
                return axpy(x, radius * 0.999, &v);
            }
        }
    }

    fn features(&self, x: &OdePoint) -> [f64; 3] {
        *x
    }

    fn point_to_json(&self, x: &OdePoint) -> serde_json::Value {
        json!(x)
    }

    fn point_from_json(&self, v: &serde_json::Value) -> Result<OdePoint> {
        Ok(serde_json::from_value(v.clone())?)
    }
}

/// Uniformly sampled orbit segment on the closed grid `{0, t/(n−1), …, t}`.
#[derive(Clone, Debug)]
pub struct OdeTrace {
    pub samples: Vec<OdePoint>,
    pub t: f64,
}

impl OdeTrace {
    pub fn step(&self) -> f64 {
        if self.samples.len() < 2 {
            0.0
        } else {
            self.t / (self.samples.len() - 1) as f64
        }
    }

    pub fn birkhoff(&self, flow: &OdeFlow, phi: &Potential) -> Result<f64> {
        let values = self
            .samples
            .iter()
            .map(|p| flow.potential(phi, p))
            .collect::<Result<Vec<_>>>()?;
        Ok(simpson(&values, self.step()))
    }
}

/// Union of closed Euclidean balls of a common radius, hashed on a grid.
#[derive(Clone, Debug)]
pub struct BallUnion {
    centers: Vec<OdePoint>,
    radius: f64,
    cells: HashMap<[i64; 3], Vec<u32>>,
}

impl BallUnion {
    pub fn new(centers: Vec<OdePoint>, radius: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        for (i, c) in centers.iter().enumerate() {
            cells
                .entry(Self::cell(c, radius))
                .or_default()
                .push(i as u32);
        }
        BallUnion {
            centers,
            radius,
            cells,
        }
    }

    fn cell(x: &OdePoint, radius: f64) -> [i64; 3] {
        [
            (x[0] / radius).floor() as i64,
            (x[1] / radius).floor() as i64,
            (x[2] / radius).floor() as i64,
        ]
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn centers(&self) -> &[OdePoint] {
        &self.centers
    }

    /// Distance from `x` to the nearest center within one cell ring, if any.
    pub fn nearest(&self, x: &OdePoint) -> Option<f64> {
        let c = Self::cell(x, self.radius);
        let mut best: Option<f64> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        for &i in ids {
                            let d = euclid(x, &self.centers[i as usize]);
                            best = Some(best.map_or(d, |b| b.min(d)));
                        }
                    }
                }
            }
        }
        best
    }
}

impl Region<OdePoint> for BallUnion {
    fn contains(&self, x: &OdePoint) -> bool {
        self.nearest(x).is_some_and(|d| d <= self.radius)
    }
}

/// `{x : Σ ((x_i − c_i)/s_i)² ≤ level}`.
#[derive(Clone, Debug)]
pub struct SublevelSet {
    pub center: OdePoint,
    pub scales: [f64; 3],
    pub level: f64,
}

impl Region<OdePoint> for SublevelSet {
    fn contains(&self, x: &OdePoint) -> bool {
        let q: f64 = (0..3)
            .map(|i| ((x[i] - self.center[i]) / self.scales[i]).powi(2))
            .sum();
        q <= self.level
    }
}

/// `n` points along the orbit of `(1,1,1)` after a burn-in, spaced `cloud_dt` apart.
pub fn lorenz_cloud(
    flow: &OdeFlow,
    n: usize,
    burn_in: f64,
    cloud_dt: f64,
) -> Result<Vec<OdePoint>> {
    let mut x = flow.evolve(&[1.0, 1.0, 1.0], burn_in)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(x);
        x = flow.evolve(&x, cloud_dt)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_lorenz(x: OdePoint, t: f64, n: usize) -> OdePoint {
        let f = |p: &OdePoint| {
            [
                10.0 * (p[1] - p[0]),
                p[0] * (28.0 - p[2]) - p[1],
                p[0] * p[1] - 8.0 / 3.0 * p[2],
            ]
        };
        let h = t / n as f64;
        let mut y = x;
        for _ in 0..n {
            let k1 = f(&y);
            let k2 = f(&axpy(&y, h / 2.0, &k1));
            let k3 = f(&axpy(&y, h / 2.0, &k2));
            let k4 = f(&axpy(&y, h, &k3));
            for i in 0..3 {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        y
    }

    #[test]
    fn lorenz_matches_richardson_reference() {
        let x = [1.0, 1.0, 1.0];
        let coarse = reference_lorenz(x, 1.0, 20_000);
        let fine = reference_lorenz(x, 1.0, 40_000);
        let oracle: Vec<f64> = (0..3)
            .map(|i| (16.0 * fine[i] - coarse[i]) / 15.0)
            .collect();
        let y = OdeFlow::lorenz().evolve(&x, 1.0).unwrap();
        for i in 0..3 {
            assert!(
                (y[i] - oracle[i]).abs() < 1e-6,
                "{i}: {} vs {}",
                y[i],
                oracle[i]
            );
        }
    }

    #[test]
    fn rotation_is_exact_to_rk4_accuracy() {
        let flow = OdeFlow::new(VectorField::rotation(), 1e-3, 200.0).unwrap();
        let t = 2.345;
        let y = flow.evolve(&[1.0, 0.0, 0.5], t).unwrap();
        assert!((y[0] - t.cos()).abs() < 1e-10);
        assert!((y[1] - t.sin()).abs() < 1e-10);
        assert_eq!(y[2], 0.5);
    }

    #[test]
    fn composition_and_reversal() {
        let flow = OdeFlow::lorenz();
        let x = [1.0, 2.0, 20.0];
        let a = flow.evolve(&flow.evolve(&x, 0.3).unwrap(), 0.2).unwrap();
        let b = flow.evolve(&x, 0.5).unwrap();
        assert!(euclid(&a, &b) < 1e-8);
        let back = flow.evolve(&b, -0.5).unwrap();
        assert!(euclid(&back, &x) < 1e-6);
        assert_eq!(flow.evolve(&x, 0.0).unwrap(), x);
    }

    #[test]
    fn euclidean_distance() {
        assert_eq!(
            OdeFlow::lorenz().distance(&[0.0, 0.0, 0.0], &[3.0, 4.0, 0.0]),
            5.0
        );
    }

    #[test]
    fn leaving_the_box_is_divergence() {
        let flow = OdeFlow::new(
            VectorField::Linear([[1.0, 0.0, 0.0], [0.0; 3], [0.0; 3]]),
            1e-3,
            10.0,
        )
        .unwrap();
        match flow.evolve(&[1.0, 0.0, 0.0], 5.0) {
            Err(Error::Diverged { at }) => assert!((at - 10f64.ln()).abs() < 0.01),
            other => panic!("{other:?}"),
        }
        assert!(OdeFlow::new(VectorField::rotation(), 0.0, 1.0).is_err());
    }

    #[test]
    fn trace_grid_and_birkhoff() {
        let flow = OdeFlow::new(VectorField::rotation(), 1e-3, 200.0).unwrap();
        let tr = flow.trace(&[1.0, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(tr.samples.len(), 101);
        assert!((tr.step() - 0.01).abs() < 1e-15);
        let short = flow.trace(&[1.0, 0.0, 0.0], 0.1).unwrap();
        assert_eq!(short.samples.len(), MIN_SAMPLES);
        let phi = Potential::Coordinate { index: 0 };
        let s = flow.birkhoff(&phi, &[1.0, 0.0, 0.0], 1.0).unwrap();
        assert!((s - 1f64.sin()).abs() < 1e-8);
        assert!(flow.trace(&[1.0, 0.0, 0.0], -1.0).is_err());
    }

    #[test]
    fn ball_union_membership() {
        let u = BallUnion::new(vec![[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]], 1.0);
        assert!(u.contains(&[0.5, 0.5, 0.5]));
        assert!(u.contains(&[9.0, 0.0, 0.0]));
        assert!(!u.contains(&[5.0, 0.0, 0.0]));
        assert!(!u.contains(&[0.8, 0.8, 0.0]));
        assert_eq!(u.nearest(&[50.0, 0.0, 0.0]), None);
    }

    #[test]
    fn cloud_stays_on_the_attractor() {
        let flow = OdeFlow::lorenz();
        let cloud = lorenz_cloud(&flow, 500, 10.0, 0.01).unwrap();
        assert_eq!(cloud.len(), 500);
        assert!(cloud
            .iter()
            .all(|p| p[2] > 0.0 && p[2] < 50.0 && p[0].abs() < 25.0));
    }
}
