use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use serde_json::json;

use super::{BackendKind, Flow, Potential, Region};
use crate::error::{Error, Result};

/// Cylinder words longer than this are refused by the enumerators.
pub const CYLINDER_CAP: usize = 22;

/// A subshift of finite type given by a 0/1 transition matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Sft {
    allowed: Vec<Vec<bool>>,
}

impl Sft {
    pub fn new(allowed: Vec<Vec<bool>>) -> Result<Self> {
        let k = allowed.len();
        if k == 0 || allowed.iter().any(|row| row.len() != k) {
            return Err(Error::Backend(
                "transition matrix must be square and non-empty".into(),
            ));
        }
        let sft = Sft { allowed };
        if !sft.is_irreducible() {
            return Err(Error::Backend(
                "transition matrix is not irreducible".into(),
            ));
        }
        Ok(sft)
    }

    pub fn full(k: usize) -> Self {
        Sft {
            allowed: vec![vec![true; k]; k],
        }
    }

    pub fn golden_mean() -> Self {
        Sft {
            allowed: vec![vec![true, true], vec![true, false]],
        }
    }

    pub fn alphabet(&self) -> usize {
        self.allowed.len()
    }

    pub fn allows(&self, a: u8, b: u8) -> bool {
        let k = self.alphabet();
        (a as usize) < k && (b as usize) < k && self.allowed[a as usize][b as usize]
    }

    pub fn matrix(&self) -> &[Vec<bool>] {
        &self.allowed
    }

    fn reachable_from(&self, s: usize) -> Vec<bool> {
        let k = self.alphabet();
        let mut seen = vec![false; k];
        let mut queue = VecDeque::from([s]);
        while let Some(a) = queue.pop_front() {
            for b in 0..k {
                if self.allowed[a][b] && !seen[b] {
                    seen[b] = true;
                    queue.push_back(b);
                }
            }
        }
        seen
    }

    pub fn is_irreducible(&self) -> bool {
        (0..self.alphabet()).all(|s| self.reachable_from(s).iter().all(|&r| r))
    }

    /// Shortest word `c` with `from → c₀ → … → c_last → to` admissible (empty when `from → to`).
    pub fn connector(&self, from: u8, to: u8, max_len: usize) -> Result<Vec<u8>> {
        if self.allows(from, to) {
            return Ok(Vec::new());
        }
        let k = self.alphabet();
        let mut prev: Vec<Option<usize>> = vec![None; k];
        let mut depth = vec![usize::MAX; k];
        let mut queue = VecDeque::new();
        for b in 0..k {
            if self.allowed[from as usize][b] {
                depth[b] = 1;
                queue.push_back(b);
            }
        }
        while let Some(a) = queue.pop_front() {
            if self.allowed[a][to as usize] {
                if depth[a] > max_len {
                    break;
                }
                let mut word = vec![a as u8];
                let mut cur = a;
                while let Some(p) = prev[cur] {
                    word.push(p as u8);
                    cur = p;
                }
                word.reverse();
                return Ok(word);
            }
            for b in 0..k {
                if self.allowed[a][b] && depth[b] == usize::MAX {
                    depth[b] = depth[a] + 1;
                    prev[b] = Some(a);
                    queue.push_back(b);
                }
            }
        }
        Err(Error::InfeasibleGap { from, to, max_len })
    }

    /// Longest shortest-connector length over all symbol pairs.
    pub fn connector_diameter(&self) -> usize {
        let k = self.alphabet() as u8;
        let mut worst = 0;
        for a in 0..k {
            for b in 0..k {
                if let Ok(c) = self.connector(a, b, usize::MAX) {
                    worst = worst.max(c.len());
                }
            }
        }
        worst
    }

    pub fn is_admissible(&self, word: &[u8]) -> bool {
        word.iter().all(|&s| (s as usize) < self.alphabet())
            && word.windows(2).all(|w| self.allows(w[0], w[1]))
    }

    /// Closes `word` into an admissible cycle by appending a shortest connector.
    pub fn close_cycle(&self, word: &[u8]) -> Result<Vec<u8>> {
        let mut out = word.to_vec();
        let last = *word
            .last()
            .ok_or_else(|| Error::Backend("empty word".into()))?;
        out.extend(self.connector(last, word[0], self.alphabet() + 1)?);
        Ok(out)
    }
}

/// Spectral radius of a nonnegative irreducible matrix by power iteration on `M + I`.
pub fn perron_root(m: &[Vec<f64>]) -> f64 {
    let k = m.len();
    let mut v = vec![1.0 / k as f64; k];
    let mut lambda = 0.0;
    for _ in 0..100_000 {
        let mut w = v.clone();
        for i in 0..k {
            for j in 0..k {
                w[i] += m[i][j] * v[j];
            }
        }
        let norm: f64 = w.iter().sum();
        let next = norm / v.iter().sum::<f64>() - 1.0;
        w.iter_mut().for_each(|x| *x /= norm);
        let done = (next - lambda).abs() <= 1e-15 * next.abs().max(1.0);
        lambda = next;
        v = w;
        if done {
            break;
        }
    }
    lambda
}

/// Exact topological pressure of a first-symbol potential `a` for the suspension
/// flow with roof `r` over `sft`: the root `s` of `log ρ(A ∘ e^{(a−s)r}) = 0`.
pub fn symbolic_pressure(sft: &Sft, values: &[f64], roof: &[f64]) -> f64 {
    graph_pressure(&sft.allowed, values, roof)
}

/// Whether the transition graph has a cycle (peeling sinks until none remain).
fn has_cycle(allowed: &[Vec<bool>]) -> bool {
    let k = allowed.len();
    let mut alive = vec![true; k];
    loop {
        let sink = (0..k).find(|&i| alive[i] && !(0..k).any(|j| alive[j] && allowed[i][j]));
        match sink {
            Some(i) => alive[i] = false,
            None => return alive.iter().any(|&a| a),
        }
    }
}

/// Pressure of a first-symbol potential over an arbitrary transition graph:
/// the maximum over its irreducible components, `−∞` without cycles.
pub fn graph_pressure(allowed: &[Vec<bool>], values: &[f64], roof: &[f64]) -> f64 {
    if !has_cycle(allowed) {
        return f64::NEG_INFINITY;
    }
    let k = allowed.len();
    let log_rho = |s: f64| {
        let m: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| {
                        if allowed[i][j] {
                            ((values[i] - s) * roof[i]).exp()
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        perron_root(&m).ln()
    };
    let (mut lo, mut hi) = (-1.0, 1.0);
    while log_rho(lo) < 0.0 {
        lo *= 2.0;
    }
    while log_rho(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if log_rho(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// A point `(a, u)` of the suspension. The sequence `a` is the periodic
/// extension of `word`, read from `index`; `u ∈ [0, roof(a₀))`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymPoint {
    pub word: Arc<[u8]>,
    pub index: usize,
    pub height: f64,
}

impl SymPoint {
    pub fn new(word: Vec<u8>, index: usize, height: f64) -> Self {
        let index = index % word.len();
        SymPoint {
            word: word.into(),
            index,
            height,
        }
    }

    /// Symbol at position `i` relative to the current fiber.
    #[inline]
    pub fn symbol(&self, i: i64) -> u8 {
        let len = self.word.len() as i64;
        self.word[(self.index as i64 + i).rem_euclid(len) as usize]
    }

    pub fn period(&self) -> usize {
        self.word.len()
    }

    /// Symbols at positions `lo..hi`.
    pub fn window(&self, lo: i64, hi: i64) -> Vec<u8> {
        (lo..hi).map(|i| self.symbol(i)).collect()
    }
}

/// Smallest `|i|` with `a_{i+da} ≠ b_{i+db}`, or `None` if the sequences coincide.
fn first_disagreement(a: &SymPoint, da: i64, b: &SymPoint, db: i64) -> Option<u32> {
    if a.symbol(da) != b.symbol(db) {
        return Some(0);
    }
    let limit = (a.period() + b.period()) as i64;
    for i in 1..=limit {
        if a.symbol(da + i) != b.symbol(db + i) || a.symbol(da - i) != b.symbol(db - i) {
            return Some(i as u32);
        }
    }
    None
}

/// Suspension flow over an SFT with a symbol-dependent roof.
///
/// The ambient shift carries the flow; `lambda` is the sub-SFT whose suspension
/// plays the role of `Λ`. `U` and `U₁` are the points whose central windows of
/// radius `k_u ≤ k_u1` are `lambda`-admissible.
#[derive(Clone, Debug)]
pub struct SymbolicSuspension {
    ambient: Sft,
    lambda: Sft,
    roof: Vec<f64>,
    theta: f64,
    k_u1: usize,
    k_u: usize,
    hull_k: usize,
}

impl SymbolicSuspension {
    pub fn new(ambient: Sft, roof: Vec<f64>, theta: f64) -> Result<Self> {
        let lambda = ambient.clone();
        Self::with_lambda(ambient, lambda, roof, theta, 1, 0)
    }

    pub fn with_lambda(
        ambient: Sft,
        lambda: Sft,
        roof: Vec<f64>,
        theta: f64,
        k_u1: usize,
        k_u: usize,
    ) -> Result<Self> {
        let k = ambient.alphabet();
        if lambda.alphabet() > k {
            return Err(Error::Backend("Λ alphabet exceeds ambient alphabet".into()));
        }
        for a in 0..lambda.alphabet() as u8 {
            for b in 0..lambda.alphabet() as u8 {
                if lambda.allows(a, b) && !ambient.allows(a, b) {
                    return Err(Error::Backend(
                        "Λ transitions must be ambient transitions".into(),
                    ));
                }
            }
        }
        if roof.len() != k || roof.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::Backend(
                "roof needs one positive value per symbol".into(),
            ));
        }
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::Backend("θ must lie in (0, 1)".into()));
        }
        if k_u1 < k_u {
            return Err(Error::Backend(
                "U₁ radius must be at least the U radius".into(),
            ));
        }
        Ok(SymbolicSuspension {
            ambient,
            lambda,
            roof,
            theta,
            k_u1,
            k_u,
            hull_k: k_u1.max(8),
        })
    }

    /// Full shift on `k` symbols with constant roof.
    pub fn full_shift(k: usize, roof: f64, theta: f64) -> Result<Self> {
        Self::new(Sft::full(k), vec![roof; k], theta)
    }

    pub fn ambient(&self) -> &Sft {
        &self.ambient
    }

    pub fn lambda_sft(&self) -> &Sft {
        &self.lambda
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn roofs(&self) -> &[f64] {
        &self.roof
    }

    #[inline]
    pub fn roof_of(&self, s: u8) -> f64 {
        self.roof[s as usize]
    }

    pub fn roof_min(&self) -> f64 {
        self.roof.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn roof_max(&self) -> f64 {
        self.roof.iter().cloned().fold(0.0, f64::max)
    }

    pub fn constant_roof(&self) -> Option<f64> {
        let r = self.roof[0];
        self.roof.iter().all(|&q| q == r).then_some(r)
    }

    /// Radius of the membership window for each region.
    pub fn region_radius(&self, label: super::RegionLabel) -> usize {
        match label {
            super::RegionLabel::Lambda => self.hull_k,
            super::RegionLabel::U1 => self.k_u1,
            super::RegionLabel::U => self.k_u,
        }
    }

    pub fn region(&self, label: super::RegionLabel) -> SymbolicRegion {
        SymbolicRegion {
            sft: self.lambda.clone(),
            radius: self.region_radius(label),
        }
    }

    /// Exact pressure of a first-symbol (or constant) potential on the Λ suspension.
    pub fn oracle_pressure(&self, phi: &Potential) -> Option<f64> {
        let k = self.lambda.alphabet();
        let values = match phi {
            Potential::Constant { value } => vec![*value; k],
            Potential::FirstSymbol { values } => values[..k].to_vec(),
            _ => return None,
        };
        Some(symbolic_pressure(&self.lambda, &values, &self.roof[..k]))
    }

    /// Number of fibers entered during `[0, t)` by an orbit starting at height 0
    /// with symbols `word` (at least one).
    fn frames_needed(&self, word: &[u8], t: f64) -> Option<usize> {
        let mut acc = 0.0;
        for (i, &s) in word.iter().enumerate() {
            acc += self.roof_of(s);
            if acc >= t {
                return Some(i + 1);
            }
        }
        None
    }

    /// Height-0 representatives of the slice `(C)_t` for `C ∈ {Λ×ℝ⁺, O(U₁), O(U)}`:
    /// one periodic point per admissible word covering the visited fibers plus
    /// a margin equal to the region radius on both sides (none for Λ).
    pub fn cylinder_candidates(&self, label: super::RegionLabel, t: f64) -> Result<Vec<SymPoint>> {
        let margin = match label {
            super::RegionLabel::Lambda => 0,
            _ => self.region_radius(label),
        };
        let closer = match label {
            super::RegionLabel::Lambda => &self.lambda,
            _ => &self.ambient,
        };
        let mut out = Vec::new();
        let mut word = Vec::with_capacity(CYLINDER_CAP);
        self.enumerate(&mut word, margin, t, closer, &mut out)?;
        Ok(out)
    }

    fn enumerate(
        &self,
        word: &mut Vec<u8>,
        margin: usize,
        t: f64,
        closer: &Sft,
        out: &mut Vec<SymPoint>,
    ) -> Result<()> {
        let complete = word.len() > margin
            && self
                .frames_needed(&word[margin..], t.max(f64::MIN_POSITIVE))
                .is_some_and(|w| word.len() == margin + w + margin);
        if complete {
            let cycle = closer.close_cycle(word)?;
            out.push(SymPoint::new(cycle, margin, 0.0));
            return Ok(());
        }
        if word.len() >= CYLINDER_CAP {
            return Err(Error::Backend(format!(
                "cylinder words at t = {t} exceed the {CYLINDER_CAP}-symbol cap"
            )));
        }
        for s in 0..self.lambda.alphabet() as u8 {
            if word.last().is_none_or(|&p| self.lambda.allows(p, s)) {
                word.push(s);
                // once the core covers [0, t) only the suffix margin may follow
                let core_done = word.len() > margin + 1
                    && self
                        .frames_needed(&word[margin..word.len() - 1], t)
                        .is_some();
                let over = core_done && {
                    let w = self.frames_needed(&word[margin..], t).unwrap();
                    word.len() > margin + w + margin
                };
                if !over {
                    self.enumerate(word, margin, t, closer, out)?;
                }
                word.pop();
            }
        }
        Ok(())
    }

    fn advance(&self, p: &mut SymPoint, step: f64) {
        let r = self.roof_of(p.symbol(0));
        let h = p.height + step;
        if h >= r {
            p.height = 0.0;
            p.index = (p.index + 1) % p.period();
        } else {
            p.height = h;
        }
    }

    /// Flip the symbol at relative position `pos` if an admissible replacement
    /// exists, unrolling the sequence over `lo..hi` first so the change stays local.
    fn flipped(&self, x: &SymPoint, lo: i64, hi: i64, pos: i64) -> Option<SymPoint> {
        let mut word = x.window(lo, hi);
        let j = (pos - lo) as usize;
        let old = word[j];
        let k = self.ambient.alphabet() as u8;
        let replacement = (1..k).map(|d| (old + d) % k).find(|&c| {
            (j == 0 || self.ambient.allows(word[j - 1], c))
                && (j + 1 == word.len() || self.ambient.allows(c, word[j + 1]))
        })?;
        word[j] = replacement;
        let cycle = self.ambient.close_cycle(&word).ok()?;
        Some(SymPoint::new(cycle, (-lo) as usize, x.height))
    }

    /// Number of frames visited from `x` during `[0, t)` (at least one).
    fn frames_visited(&self, x: &SymPoint, t: f64) -> usize {
        let mut acc = self.roof_of(x.symbol(0)) - x.height;
        let mut n = 1;
        while acc < t {
            acc += self.roof_of(x.symbol(n as i64));
            n += 1;
        }
        n
    }

    fn base_coordinate(&self, x: &SymPoint, shift: i64) -> f64 {
        let k = (self.ambient.alphabet() - 1).max(1) as f64;
        (-4..=4)
            .map(|i: i64| 0.5f64.powi(i.unsigned_abs() as i32) * x.symbol(i + shift) as f64 / k)
            .sum::<f64>()
            / 3.0
    }
}

/// Points whose central window of the given radius is admissible for `sft`.
#[derive(Clone, Debug)]
pub struct SymbolicRegion {
    sft: Sft,
    radius: usize,
}

impl Region<SymPoint> for SymbolicRegion {
    fn contains(&self, x: &SymPoint) -> bool {
        let r = self.radius as i64;
        let k = self.sft.alphabet();
        (-r..=r).all(|i| (x.symbol(i) as usize) < k)
            && (-r..r).all(|i| self.sft.allows(x.symbol(i), x.symbol(i + 1)))
    }
}

/// Orbit segment `(x, t)` kept for exact breakpoint evaluation.
#[derive(Clone, Debug)]
pub struct SymbolicTrace {
    pub start: SymPoint,
    pub t: f64,
}

impl Flow for SymbolicSuspension {
    type Point = SymPoint;
    type Trace = SymbolicTrace;

    fn kind(&self) -> BackendKind {
        BackendKind::SymbolicSuspension
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn evolve(&self, x: &SymPoint, t: f64) -> Result<SymPoint> {
        if t == 0.0 {
            return Ok(x.clone());
        }
        let mut idx = x.index as i64;
        let len = x.period() as i64;
        let sym = |i: i64| x.word[i.rem_euclid(len) as usize];
        let mut h = x.height + t;
        loop {
            let r = self.roof_of(sym(idx));
            if h < r {
                break;
            }
            h -= r;
            idx += 1;
        }
        while h < 0.0 {
            idx -= 1;
            h += self.roof_of(sym(idx));
        }
        // rounding can land exactly on the roof after the backward loop
        if h >= self.roof_of(sym(idx)) {
            h = 0.0;
            idx += 1;
        }
        Ok(SymPoint {
            word: x.word.clone(),
            index: idx.rem_euclid(len) as usize,
            height: h,
        })
    }

    fn distance(&self, x: &SymPoint, y: &SymPoint) -> f64 {
        let pow = |n: Option<u32>| n.map_or(0.0, |n| self.theta.powi(n as i32));
        let same = (x.height - y.height).abs();
        let mut best = same + pow(first_disagreement(x, 0, y, 0));
        let x_back = (x.height + self.roof_of(x.symbol(-1)) - y.height).abs();
        if x_back < best {
            best = best.min(x_back + pow(first_disagreement(x, -1, y, 0)));
        }
        let y_back = (y.height + self.roof_of(y.symbol(-1)) - x.height).abs();
        if y_back < best {
            best = best.min(y_back + pow(first_disagreement(x, 0, y, -1)));
        }
        best
    }

    fn diameter(&self) -> f64 {
        1.0 + self.roof_max()
    }

    fn trace_sampled(&self, x: &SymPoint, t: f64, _: Option<usize>) -> Result<SymbolicTrace> {
        Ok(SymbolicTrace {
            start: x.clone(),
            t,
        })
    }

    /// Exact `sup` over `{0} ∪ [0, t)`: the distance is constant between roof
    /// crossings of either orbit, so it suffices to evaluate at breakpoints.
    fn trace_distance(&self, a: &SymbolicTrace, b: &SymbolicTrace, cap: f64) -> f64 {
        let t = a.t.min(b.t);
        let mut best = self.distance(&a.start, &b.start);
        if best > cap {
            return best;
        }
        let (mut p, mut q) = (a.start.clone(), b.start.clone());
        let mut s = 0.0;
        loop {
            let dp = self.roof_of(p.symbol(0)) - p.height;
            let dq = self.roof_of(q.symbol(0)) - q.height;
            let step = dp.min(dq);
            if s + step >= t {
                break;
            }
            s += step;
            if dp == step {
                p.height = 0.0;
                p.index = (p.index + 1) % p.period();
            } else {
                self.advance(&mut p, step);
            }
            if dq == step {
                q.height = 0.0;
                q.index = (q.index + 1) % q.period();
            } else {
                self.advance(&mut q, step);
            }
            best = best.max(self.distance(&p, &q));
            if best > cap {
                return best;
            }
        }
        best
    }

    fn trace_start<'a>(&self, tr: &'a SymbolicTrace) -> &'a SymPoint {
        &tr.start
    }

    /// `x` and every fiber entry in `(0, t)`: region membership is constant along fibers.
    fn segment_points(&self, x: &SymPoint, t: f64, _: Option<usize>) -> Result<Vec<SymPoint>> {
        if t <= 0.0 {
            return Ok(Vec::new());
        }
        let n = self.frames_visited(x, t);
        Ok((0..n)
            .map(|i| {
                if i == 0 {
                    x.clone()
                } else {
                    SymPoint {
                        word: x.word.clone(),
                        index: (x.index + i) % x.period(),
                        height: 0.0,
                    }
                }
            })
            .collect())
    }

    fn potential(&self, phi: &Potential, x: &SymPoint) -> Result<f64> {
        let lookup = |v: &[f64], s: u8| {
            v.get(s as usize)
                .copied()
                .ok_or_else(|| Error::Backend(format!("potential has no value for symbol {s}")))
        };
        match phi {
            Potential::Constant { value } => Ok(*value),
            Potential::FirstSymbol { values } => lookup(values, x.symbol(0)),
            Potential::SymbolHolder {
                weights,
                decay,
                depth,
            } => {
                let mut acc = 0.0;
                for i in 0..=*depth {
                    acc += decay.powi(i as i32) * lookup(weights, x.symbol(i as i64))?;
                }
                Ok(acc)
            }
            Potential::Coordinate { .. } | Potential::Affine { .. } => Err(Error::Backend(
                "coordinate potentials need a Euclidean backend".into(),
            )),
        }
    }

    /// Exact: symbolic potentials are constant along each fiber.
    fn birkhoff(&self, phi: &Potential, x: &SymPoint, t: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::NonInvertible(t));
        }
        if let Some(c) = phi.is_constant() {
            return Ok(c * t);
        }
        let mut p = x.clone();
        let mut remaining = t;
        let mut acc = 0.0;
        while remaining > 0.0 {
            let room = self.roof_of(p.symbol(0)) - p.height;
            let dt = room.min(remaining);
            acc += dt * self.potential(phi, &p)?;
            remaining -= dt;
            p.height = 0.0;
            p.index = (p.index + 1) % p.period();
        }
        Ok(acc)
    }

    fn birkhoff_trace(&self, phi: &Potential, tr: &SymbolicTrace) -> Result<f64> {
        self.birkhoff(phi, &tr.start, tr.t)
    }

    fn separation_key(&self, x: &SymPoint, t: f64, scale: f64) -> Option<Vec<u8>> {
        if x.height != 0.0 || scale >= 1.0 || scale >= self.roof_min() {
            return None;
        }
        let n = self.frames_visited(x, t);
        Some(x.window(0, n as i64))
    }

    fn probes<R: Rng>(
        &self,
        x: &SymPoint,
        t: f64,
        eps: f64,
        n: usize,
        rng: &mut R,
    ) -> Vec<SymPoint> {
        if eps <= 0.0 || n == 0 {
            return Vec::new();
        }
        let frames = self.frames_visited(x, t) as i64;
        // symbols beyond distance m from every visited fiber cost at most θ^m < eps
        let m = (eps.ln() / self.theta.ln()).floor().max(0.0) as i64 + 1;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            if i % 2 == 0 {
                let eta = rng.gen_range(-1.0..1.0) * eps * 0.999;
                if let Ok(p) = self.evolve(x, eta) {
                    out.push(p);
                }
            } else {
                let (lo, hi) = (-m - 2, frames + m + 2);
                let pos = if rng.gen_bool(0.5) { lo } else { hi - 1 };
                if let Some(p) = self.flipped(x, lo, hi, pos) {
                    out.push(p);
                }
            }
        }
        out
    }

    /// Stays in the current fiber: a height change below `radius/2` and possibly
    /// a symbol flip far enough out to cost less than `radius/2`.
    fn perturb<R: Rng>(&self, x: &SymPoint, radius: f64, rng: &mut R) -> SymPoint {
        let m = ((0.5 * radius).ln() / self.theta.ln()).floor().max(0.0) as i64 + 1;
        let mut p = if rng.gen_bool(0.5) {
            let pos = if rng.gen_bool(0.5) { -m } else { m };
            self.flipped(x, -m, m + 1, pos).unwrap_or_else(|| x.clone())
        } else {
            x.clone()
        };
        let r = self.roof_of(p.symbol(0));
        let eta = rng.gen_range(-0.5..0.5) * radius;
        p.height = (x.height + eta).clamp(0.0, r * (1.0 - 1e-12));
        p
    }

    /// Height shifts, symbol flips inside the window, and unrelated random words.
    fn ne_probes<R: Rng>(
        &self,
        x: &SymPoint,
        window: f64,
        eps: f64,
        n: usize,
        rng: &mut R,
    ) -> Vec<SymPoint> {
        let frames = (window / self.roof_min()).ceil() as i64 + 1;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            match i % 3 {
                0 => {
                    let eta = rng.gen_range(-1.0..1.0) * eps.min(self.roof_min()) * 0.999;
                    if let Ok(p) = self.evolve(x, eta) {
                        out.push(p);
                    }
                }
                1 => {
                    let pos = if i % 6 == 1 {
                        0
                    } else {
                        rng.gen_range(-frames..=frames)
                    };
                    let (lo, hi) = (pos.min(0) - 2, pos.max(0) + 3);
                    if let Some(p) = self.flipped(x, lo, hi, pos) {
                        out.push(p);
                    }
                }
                _ => {
                    let len = 2 * frames as usize + 1;
                    let k = self.ambient.alphabet() as u8;
                    let mut word = vec![rng.gen_range(0..k)];
                    while word.len() < len {
                        let last = *word.last().unwrap();
                        let next: Vec<u8> =
                            (0..k).filter(|&b| self.ambient.allows(last, b)).collect();
                        word.push(next[rng.gen_range(0..next.len())]);
                    }
                    if let Ok(cycle) = self.ambient.close_cycle(&word) {
                        let h = rng.gen_range(0.0..1.0) * self.roof_of(cycle[frames as usize]);
                        out.push(SymPoint::new(cycle, frames as usize, h));
                    }
                }
            }
        }
        out
    }

    /// Exact up to roof variation: compares `y` with the orbit point of each
    /// visited fiber at `y`'s height.
    fn orbit_gap(&self, x: &SymPoint, y: &SymPoint, back: f64, fwd: f64, _: f64) -> Result<f64> {
        let start = self.evolve(x, -back)?;
        let n = self.frames_visited(&start, back + fwd) + 1;
        let mut best = f64::INFINITY;
        for i in 0..n {
            let index = (start.index + i) % start.period();
            let r = self.roof_of(start.word[index]);
            let height = if i == 0 {
                y.height.max(start.height)
            } else {
                y.height
            };
            let p = SymPoint {
                word: start.word.clone(),
                index,
                height: height.min(r * (1.0 - 1e-12)),
            };
            best = best.min(self.distance(y, &p));
        }
        Ok(best)
    }

    fn features(&self, x: &SymPoint) -> [f64; 3] {
        let r = self.roof_of(x.symbol(0));
        let frac = x.height / r;
        let angle = std::f64::consts::TAU * frac;
        let base = (1.0 - frac) * self.base_coordinate(x, 0) + frac * self.base_coordinate(x, 1);
        [angle.cos(), angle.sin(), base]
    }

    fn point_to_json(&self, x: &SymPoint) -> serde_json::Value {
        json!({ "word": x.word.to_vec(), "index": x.index, "height": x.height })
    }

    fn point_from_json(&self, v: &serde_json::Value) -> Result<SymPoint> {
        let bad = || Error::Io(format!("malformed symbolic point {v}"));
        let word: Vec<u8> = serde_json::from_value(v.get("word").ok_or_else(bad)?.clone())?;
        let index = v.get("index").and_then(|i| i.as_u64()).ok_or_else(bad)? as usize;
        let height = v.get("height").and_then(|h| h.as_f64()).ok_or_else(bad)?;
        if word.is_empty() || index >= word.len() {
            return Err(bad());
        }
        Ok(SymPoint::new(word, index, height))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::RegionLabel;

    fn full2() -> SymbolicSuspension {
        SymbolicSuspension::full_shift(2, 1.0, 0.5).unwrap()
    }

    #[test]
    fn roof_crossing_lands_on_next_fiber() {
        let f = full2();
        let x = SymPoint::new(vec![0], 0, 0.4);
        let y = f.evolve(&x, 0.6).unwrap();
        assert_eq!(y.height, 0.0);
        assert_eq!(y.symbol(0), 0);
        assert_eq!(f.evolve(&x, 0.0).unwrap(), x);
    }

    #[test]
    fn evolve_moves_along_the_word() {
        let f = full2();
        let x = SymPoint::new(vec![0, 1, 1, 0, 1], 0, 0.25);
        let y = f.evolve(&x, 2.5).unwrap();
        assert_eq!((y.index, y.height), (2, 0.75));
        let back = f.evolve(&y, -2.5).unwrap();
        assert_eq!(back, x);
        let wrapped = f.evolve(&x, 5.0).unwrap();
        assert_eq!((wrapped.index, wrapped.height), (0, 0.25));
    }

    #[test]
    fn distance_uses_first_disagreement() {
        let f = full2();
        let mut w = vec![0u8; 32];
        let x = SymPoint::new(w.clone(), 0, 0.3);
        w[5] = 1;
        let y = SymPoint::new(w, 0, 0.3);
        assert_eq!(f.distance(&x, &y), 0.03125);
        assert_eq!(f.distance(&x, &x), 0.0);
    }

    #[test]
    fn distance_across_a_roof_is_the_time_gap() {
        let f = full2();
        let x = SymPoint::new(vec![0, 1, 1, 0], 0, 0.95);
        let y = f.evolve(&x, 0.1).unwrap();
        assert!((f.distance(&x, &y) - 0.1).abs() < 1e-12);
        assert!((f.distance(&y, &x) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn first_symbol_lookup() {
        let f = full2();
        let phi = Potential::FirstSymbol {
            values: vec![2f64.ln(), 3f64.ln()],
        };
        let x = SymPoint::new(vec![1, 0], 0, 0.0);
        assert_eq!(f.potential(&phi, &x).unwrap(), 3f64.ln());
        assert!(f
            .potential(&Potential::Coordinate { index: 0 }, &x)
            .is_err());
    }

    #[test]
    fn birkhoff_counts_symbols() {
        let f = full2();
        let phi = Potential::FirstSymbol {
            values: vec![0.0, 2f64.ln()],
        };
        let x = SymPoint::new(vec![0, 1, 1, 0, 0, 0], 0, 0.0);
        assert!((f.birkhoff(&phi, &x, 4.0).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert_eq!(f.birkhoff(&phi, &x, 0.0).unwrap(), 0.0);
        let half = f
            .birkhoff(&phi, &SymPoint::new(vec![1, 0], 0, 0.5), 1.0)
            .unwrap();
        assert!((half - 0.5 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn reducible_matrix_is_rejected() {
        assert!(Sft::new(vec![vec![true, false], vec![false, true]]).is_err());
        assert!(Sft::new(vec![vec![true, true]]).is_err());
        assert!(Sft::new(Sft::golden_mean().matrix().to_vec()).is_ok());
    }

    #[test]
    fn connectors() {
        let gm = Sft::golden_mean();
        assert_eq!(gm.connector(1, 1, 4).unwrap(), vec![0]);
        assert_eq!(gm.connector(0, 1, 4).unwrap(), Vec::<u8>::new());
        assert_eq!(Sft::full(3).connector(2, 1, 0).unwrap(), Vec::<u8>::new());
        let cyc = Sft::new(vec![
            vec![false, true, false],
            vec![false, false, true],
            vec![true, false, false],
        ])
        .unwrap();
        assert_eq!(cyc.connector(0, 0, 4).unwrap(), vec![1, 2]);
        assert!(matches!(
            cyc.connector(0, 0, 1),
            Err(Error::InfeasibleGap { .. })
        ));
        assert_eq!(cyc.connector_diameter(), 2);
    }

    #[test]
    fn perron_roots() {
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        let m = vec![vec![1.0, 1.0], vec![1.0, 0.0]];
        assert!((perron_root(&m) - golden).abs() < 1e-12);
        assert!((perron_root(&[vec![3.0]]) - 3.0).abs() < 1e-12);
        assert!(
            (symbolic_pressure(&Sft::full(2), &[0.0, 0.0], &[1.0, 1.0]) - 2f64.ln()).abs() < 1e-12
        );
        assert!(
            (symbolic_pressure(&Sft::full(2), &[0.0, 0.0], &[2.0, 2.0]) - 0.5 * 2f64.ln()).abs()
                < 1e-12
        );
        let a = [0.3f64, -0.7];
        let expected = (a[0].exp() + a[1].exp()).ln();
        assert!((symbolic_pressure(&Sft::full(2), &a, &[1.0, 1.0]) - expected).abs() < 1e-12);
    }

    #[test]
    fn cylinder_counts() {
        let f = full2();
        assert_eq!(
            f.cylinder_candidates(RegionLabel::Lambda, 3.0)
                .unwrap()
                .len(),
            8
        );
        assert_eq!(
            f.cylinder_candidates(RegionLabel::Lambda, 2.5)
                .unwrap()
                .len(),
            8
        );
        assert_eq!(
            f.cylinder_candidates(RegionLabel::U1, 3.0).unwrap().len(),
            32
        );
        let gm = SymbolicSuspension::new(Sft::golden_mean(), vec![1.0, 1.0], 0.5).unwrap();
        let fib = [2, 3, 5, 8, 13, 21];
        for (n, &count) in fib.iter().enumerate() {
            assert_eq!(
                gm.cylinder_candidates(RegionLabel::Lambda, (n + 1) as f64)
                    .unwrap()
                    .len(),
                count
            );
        }
        assert!(f.cylinder_candidates(RegionLabel::Lambda, 30.0).is_err());
    }

    #[test]
    fn variable_roof_cylinders_cover_the_time_window() {
        let f = SymbolicSuspension::new(Sft::full(2), vec![1.0, 2.0], 0.5).unwrap();
        for x in f.cylinder_candidates(RegionLabel::Lambda, 3.0).unwrap() {
            let n = f.segment_points(&x, 3.0, None).unwrap().len();
            let covered: f64 = (0..n as i64).map(|i| f.roof_of(x.symbol(i))).sum();
            let before: f64 = (0..n as i64 - 1).map(|i| f.roof_of(x.symbol(i))).sum();
            assert!(covered >= 3.0 && before < 3.0);
        }
    }

    #[test]
    fn regions_nest() {
        let amb = Sft::full(3);
        let lam = Sft::golden_mean();
        let f = SymbolicSuspension::with_lambda(amb, lam, vec![1.0; 3], 0.5, 2, 1).unwrap();
        let inside = SymPoint::new(vec![0, 1, 0, 0, 1, 0], 0, 0.0);
        let edge = SymPoint::new(vec![0, 1, 0, 0, 2, 1, 1], 0, 0.0);
        let far = SymPoint::new(vec![2, 2], 0, 0.0);
        let u1 = f.region(RegionLabel::U1);
        let u = f.region(RegionLabel::U);
        assert!(u1.contains(&inside) && u.contains(&inside));
        assert!(!u1.contains(&edge) && u.contains(&edge));
        assert!(!u.contains(&far));
    }

    #[test]
    fn json_round_trip() {
        let f = full2();
        let x = SymPoint::new(vec![0, 1, 1], 2, 0.1 + 0.2);
        assert_eq!(f.point_from_json(&f.point_to_json(&x)).unwrap(), x);
        assert!(f
            .point_from_json(&serde_json::json!({"word": [], "index": 0, "height": 0.0}))
            .is_err());
    }

    #[test]
    fn exact_bowen_distance_is_half_open() {
        let f = full2();
        let x = SymPoint::new(vec![0, 0, 0, 0], 0, 0.0);
        let y = SymPoint::new(vec![0, 0, 1, 0], 0, 0.0);
        let tx = f.trace(&x, 2.0).unwrap();
        let ty = f.trace(&y, 2.0).unwrap();
        assert_eq!(f.trace_distance(&tx, &ty, f64::INFINITY), 0.5);
        let tx = f.trace(&x, 2.5).unwrap();
        let ty = f.trace(&y, 2.5).unwrap();
        assert_eq!(f.trace_distance(&tx, &ty, f64::INFINITY), 1.0);
    }

    #[test]
    fn one_symbol_suspension_is_an_isometry() {
        let f = SymbolicSuspension::full_shift(1, 1.0, 0.5).unwrap();
        let x = SymPoint::new(vec![0], 0, 0.1);
        let y = SymPoint::new(vec![0], 0, 0.35);
        let d = f.distance(&x, &y);
        for t in [0.5, 3.0, 10.25] {
            let (a, b) = (f.trace(&x, t).unwrap(), f.trace(&y, t).unwrap());
            assert!((f.trace_distance(&a, &b, f64::INFINITY) - d).abs() < 1e-12);
        }
    }
}
