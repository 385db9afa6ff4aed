//! Isoenergetic geometry: the non-resonance angle set Θ₁ from the circle
//! S₀(λ), self-intersections of the translated circles, and tracing of the
//! distorted circles κ_n(λ, ν) on which λ^(n)(κν) = λ.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::{assemble_on, oracle_eigs, oracle_state, BlochMatrix};
use crate::error::{Error, Result};
use crate::lattice::{reduce_to_cell, CellSpec, Index, LevelSchedule, ModelParams, Quasimomentum};
use crate::perturb::{eigenvalue_series, SeriesConfig};
use crate::potential::{windows, PotentialSpec, WindowedPotential};

const TWO_PI: f64 = 2.0 * PI;

/// Angle in [0, 2π).
pub fn wrap(phi: f64) -> f64 {
    let r = phi.rem_euclid(TWO_PI);
    if r >= TWO_PI {
        0.0
    } else {
        r
    }
}

pub fn direction(phi: f64) -> [f64; 2] {
    [phi.cos(), phi.sin()]
}

/// Union of closed intervals in [0, 2π], sorted and disjoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleDomain {
    pub level: u32,
    pub intervals: Vec<(f64, f64)>,
    /// λ below the scale where deletions are small; the domain is still exact.
    pub below_regime: bool,
}

/// Merges possibly wrapping open intervals into sorted disjoint pieces of [0, 2π].
pub fn normalize_holes(holes: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pieces: Vec<(f64, f64)> = Vec::with_capacity(holes.len() + 2);
    for &(a, b) in holes {
        if !(b > a) {
            continue;
        }
        if b - a >= TWO_PI {
            return vec![(0.0, TWO_PI)];
        }
        let s = a.rem_euclid(TWO_PI);
        let e = s + (b - a);
        if e > TWO_PI {
            pieces.push((s, TWO_PI));
            pieces.push((0.0, e - TWO_PI));
        } else {
            pieces.push((s, e));
        }
    }
    pieces.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(pieces.len());
    for p in pieces {
        match out.last_mut() {
            Some(last) if p.0 < last.1 => last.1 = last.1.max(p.1),
            _ => out.push(p),
        }
    }
    out
}

impl AngleDomain {
    pub fn full(level: u32) -> Self {
        Self {
            level,
            intervals: vec![(0.0, TWO_PI)],
            below_regime: false,
        }
    }

    /// The closed window [a, b] ⊂ [0, 2π].
    pub fn window(level: u32, a: f64, b: f64) -> Self {
        Self {
            level,
            intervals: vec![(a.max(0.0), b.min(TWO_PI))],
            below_regime: false,
        }
    }

    pub fn length(&self) -> f64 {
        self.intervals.iter().map(|(a, b)| b - a).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, phi: f64) -> bool {
        let p = wrap(phi);
        self.intervals.iter().any(|(a, b)| p >= *a && p <= *b)
            || (p == 0.0 && self.intervals.iter().any(|(_, b)| *b >= TWO_PI))
    }

    /// Removes open holes (a, b), which may wrap around 2π.
    pub fn remove(&self, level: u32, holes: &[(f64, f64)]) -> Self {
        let holes = normalize_holes(holes);
        let mut out = Vec::new();
        for &(a, b) in &self.intervals {
            let mut cur = a;
            let mut open = true;
            for &(ha, hb) in &holes {
                if hb <= cur || ha >= b {
                    continue;
                }
                if ha > cur {
                    out.push((cur, ha));
                }
                cur = hb;
                if cur >= b {
                    open = false;
                    break;
                }
            }
            if open && cur <= b {
                out.push((cur, b));
            }
        }
        // isolated endpoints between touching holes have zero length
        out.retain(|(a, b)| b > a);
        Self {
            level,
            intervals: out,
            below_regime: self.below_regime,
        }
    }

    /// Complement in [0, 2π) as open intervals.
    pub fn holes(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut cur = 0.0;
        for &(a, b) in &self.intervals {
            if a > cur {
                out.push((cur, a));
            }
            cur = b;
        }
        if cur < TWO_PI {
            out.push((cur, TWO_PI));
        }
        out
    }

    /// Intersection with the window [a, b] ⊂ [0, 2π].
    pub fn restrict(&self, a: f64, b: f64) -> Self {
        let intervals = self
            .intervals
            .iter()
            .map(|(c, d)| (c.max(a), d.min(b)))
            .filter(|(c, d)| c < d)
            .collect();
        Self {
            level: self.level,
            intervals,
            below_regime: self.below_regime,
        }
    }

    /// Interval containment: every interval lies inside one of `other`'s.
    pub fn is_subset_of(&self, other: &AngleDomain) -> bool {
        let tol = 1e-12;
        self.intervals.iter().all(|(a, b)| {
            other
                .intervals
                .iter()
                .any(|(c, d)| *a >= c - tol && *b <= d + tol)
        })
    }

    /// Points of the uniform grid 2π(i + ½)/n lying in the domain.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| TWO_PI * (i as f64 + 0.5) / n as f64)
            .filter(|p| self.intervals.iter().any(|(a, b)| p > a && p < b))
            .collect()
    }
}

/// Quasimomentum where two lattice circles of radius k meet, with the indices
/// of both circles: p_j(t) and p_q(t) have length k.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfIntersection {
    pub t: [f64; 2],
    pub j: Index,
    pub q: Index,
    /// Direction of p_j(t).
    pub phi: f64,
}

/// Nonzero dual vectors 2πq/(N̂a) with length at most `radius`.
pub fn dual_vectors(cell: &CellSpec<f64>, radius: f64) -> Vec<(Index, [f64; 2])> {
    let w = cell.widths();
    let n0 = (radius / w[0]).floor() as i64;
    let n1 = (radius / w[1]).floor() as i64;
    let mut out = Vec::new();
    for q0 in -n0..=n0 {
        for q1 in -n1..=n1 {
            if q0 == 0 && q1 == 0 {
                continue;
            }
            let v = [q0 as f64 * w[0], q1 as f64 * w[1]];
            if v[0] * v[0] + v[1] * v[1] <= radius * radius {
                out.push(([q0, q1], v));
            }
        }
    }
    out
}

/// All points κ with |κ| = |κ + v| = k, reduced to the cell.
pub fn self_intersections(lambda: f64, l: u32, cell: &CellSpec<f64>) -> Vec<SelfIntersection> {
    let k = lambda.powf(1.0 / (2.0 * l as f64));
    let mut out = Vec::new();
    for (q, v) in dual_vectors(cell, 2.0 * k) {
        let nv = (v[0] * v[0] + v[1] * v[1]).sqrt();
        let h2 = k * k - nv * nv / 4.0;
        if h2 < 0.0 {
            continue;
        }
        let h = h2.sqrt();
        let perp = [-v[1] / nv, v[0] / nv];
        for s in [1.0, -1.0] {
            if h == 0.0 && s < 0.0 {
                continue;
            }
            let kv = [-v[0] / 2.0 + s * h * perp[0], -v[1] / 2.0 + s * h * perp[1]];
            let (t, j) = reduce_to_cell(kv, cell);
            out.push(SelfIntersection {
                t: t.t,
                j,
                q: [j[0] + q[0], j[1] + q[1]],
                phi: wrap(kv[1].atan2(kv[0])),
            });
        }
    }
    out
}

/// Half-width 2k^{−4s₁−δ} of the level-1 gap condition on |p_j|² − |p_i|².
pub fn gap_threshold(k: f64, params: &ModelParams<f64>) -> f64 {
    2.0 * k.powf(-4.0 * params.s1 - params.delta)
}

/// Open arc of directions φ where |k² − |kν(φ) + v|²| ≤ T.
fn gap_arcs(k: f64, v: [f64; 2], thr: f64) -> Vec<(f64, f64)> {
    let nv = (v[0] * v[0] + v[1] * v[1]).sqrt();
    let lo = (-thr - nv * nv) / (2.0 * k * nv);
    let hi = (thr - nv * nv) / (2.0 * k * nv);
    if lo > 1.0 || hi < -1.0 {
        return vec![];
    }
    let phv = v[1].atan2(v[0]);
    let a_in = hi.min(1.0).acos();
    let a_out = lo.max(-1.0).acos();
    if a_in == 0.0 && a_out == PI {
        return vec![(0.0, TWO_PI)];
    }
    if a_in == 0.0 {
        return vec![(phv - a_out, phv + a_out)];
    }
    if a_out == PI {
        return vec![(phv + a_in, phv + TWO_PI - a_in)];
    }
    vec![(phv + a_in, phv + a_out), (phv - a_out, phv - a_in)]
}

/// Θ₁: directions whose point kν(φ) satisfies min_{i≠j} |p_j² − p_i²| > 2k^{−4s₁−δ}.
/// Arc endpoints come from the closed-form solution of the gap condition.
pub fn chi1(lambda: f64, params: &ModelParams<f64>, cell: &CellSpec<f64>) -> AngleDomain {
    let k = lambda.powf(1.0 / (2.0 * params.l as f64));
    let w = cell.widths();
    if 2.0 * k < w[0].min(w[1]) {
        // no two circles meet: nothing to delete, far from the asymptotic regime
        let mut d = AngleDomain::full(1);
        d.below_regime = true;
        return d;
    }
    let thr = gap_threshold(k, params);
    let holes: Vec<(f64, f64)> = dual_vectors(cell, 2.0 * k + thr)
        .into_iter()
        .flat_map(|(_, v)| gap_arcs(k, v, thr))
        .collect();
    let mut d = AngleDomain::full(1).remove(1, &holes);
    d.below_regime = d.length() < PI;
    d
}

/// Evaluates λ^(n)(κ⃗) = |κ⃗|^{2l} + f₁ + … + f_n by the perturbation series on
/// a ball of fixed relative indices around κ⃗ at each level.
#[derive(Clone, Debug)]
pub struct Dispersion {
    pub params: ModelParams<f64>,
    pub sched: LevelSchedule<f64>,
    pub windows: Vec<WindowedPotential<f64>>,
    pub cfg: SeriesConfig<f64>,
    /// Coupling of the top level's window; lower windows enter at full strength.
    pub alpha: f64,
    /// Ball radius per level.
    pub rho: Vec<f64>,
    /// Series order per level.
    pub orders: Vec<usize>,
    rel: Vec<Vec<Index>>,
}

/// Indices r with |2πr/(N̂a)| ≤ ρ, ordered by length then index.
pub(crate) fn relative_ball(cell: &CellSpec<f64>, rho: f64) -> Vec<Index> {
    let mut v: Vec<(f64, Index)> = dual_vectors(cell, rho)
        .into_iter()
        .map(|(q, p)| (p[0] * p[0] + p[1] * p[1], q))
        .collect();
    v.push((0.0, [0, 0]));
    v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    v.into_iter().map(|x| x.1).collect()
}

impl Dispersion {
    pub fn new(
        spec: &PotentialSpec<f64>,
        k: f64,
        levels: u32,
        cfg: SeriesConfig<f64>,
        rho: Vec<f64>,
    ) -> Result<Self> {
        if levels < 1 || rho.len() < levels as usize {
            return Err(Error::InvalidParams(
                "one ball radius per level is required".into(),
            ));
        }
        let sched = LevelSchedule::new(&spec.params, k, levels);
        let w = windows(spec, levels, k)?;
        let rel = (1..=levels)
            .map(|n| relative_ball(&sched.cell(n), rho[(n - 1) as usize]))
            .collect();
        let orders = (1..=levels)
            .map(|n| if n == 1 { cfg.order } else { 2 })
            .collect();
        Ok(Self {
            params: spec.params,
            sched,
            windows: w,
            cfg,
            alpha: 1.0,
            rho,
            orders,
            rel,
        })
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn levels(&self) -> u32 {
        self.sched.levels()
    }

    pub fn k(&self) -> f64 {
        self.sched.k
    }

    pub fn l(&self) -> u32 {
        self.params.l
    }

    /// |κ⃗|^{2l}.
    pub fn free(&self, kv: [f64; 2]) -> f64 {
        (kv[0] * kv[0] + kv[1] * kv[1]).powi(self.params.l as i32)
    }

    pub fn basis_size(&self, level: u32) -> usize {
        self.rel[(level - 1) as usize].len()
    }

    /// H^(level) at the quasimomentum of κ⃗, with κ⃗ = p_j(t).
    pub fn matrix(
        &self,
        level: u32,
        kv: [f64; 2],
        alpha: f64,
    ) -> Result<(BlochMatrix<f64>, Index)> {
        let cell = self.sched.cell(level);
        let (t, j) = reduce_to_cell(kv, &cell);
        let basis: Vec<Index> = self.rel[(level - 1) as usize]
            .iter()
            .map(|r| [j[0] + r[0], j[1] + r[1]])
            .collect();
        let m = assemble_on(level, &t, &self.windows, &cell, self.params.l, basis, alpha)?;
        Ok((m, j))
    }

    fn alpha_at(&self, level: u32, top: u32) -> f64 {
        if level == top {
            self.alpha
        } else {
            1.0
        }
    }

    fn level_cfg(&self, level: u32) -> SeriesConfig<f64> {
        let mut c = self.cfg.clone();
        c.order = self.orders[(level - 1) as usize];
        c
    }

    /// f₁, …, f_level at κ⃗.
    pub fn increments(&self, level: u32, kv: [f64; 2]) -> Result<Vec<f64>> {
        let mut f = Vec::with_capacity(level as usize);
        let free = self.free(kv);
        for n in 1..=level {
            let a = self.alpha_at(n, level);
            let (m, j) = self.matrix(n, kv, a)?;
            let base = if n == 1 {
                None
            } else {
                Some(free + f.iter().sum::<f64>())
            };
            let e = eigenvalue_series(n, &m, j, a, base, &self.level_cfg(n))?;
            f.push(e.increment);
        }
        Ok(f)
    }

    /// λ^(level)(κ⃗).
    pub fn value(&self, level: u32, kv: [f64; 2]) -> Result<f64> {
        Ok(self.free(kv) + self.increments(level, kv)?.iter().sum::<f64>())
    }

    /// Oracle eigenvalue of H^(level) continuing e_j, with its plane-wave overlap.
    pub fn oracle(&self, level: u32, kv: [f64; 2]) -> Result<(f64, f64)> {
        let (m, j) = self.matrix(level, kv, self.alpha)?;
        let (v, _, ov) = oracle_state(&m, j)?;
        Ok((v, ov))
    }

    /// Number of oracle eigenvalues within `half` of λ at κ⃗.
    pub fn count_near(&self, level: u32, kv: [f64; 2], lambda: f64, half: f64) -> Result<usize> {
        let (m, _) = self.matrix(level, kv, self.alpha)?;
        Ok(oracle_eigs(&m, (lambda - half, lambda + half))?.len())
    }

    /// Contour radius at a level, mapped to a κ-interval half-width.
    pub fn bracket_halfwidth(&self, level: u32) -> f64 {
        let l = self.params.l as f64;
        let k = self.k();
        self.cfg.radius(level) / (2.0 * l * k.powf(2.0 * l - 1.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaRoot {
    pub kappa: f64,
    pub dkappa: f64,
    /// |λ^(n)(κν) − λ|.
    pub residual: f64,
    pub iterations: usize,
    pub bisection: bool,
}

fn shifted(kappa: f64, phi: f64) -> [f64; 2] {
    let d = direction(phi);
    [kappa * d[0], kappa * d[1]]
}

/// κ with λ^(level)(κν(φ)) = λ in [center − w, center + w] by bisection to full precision.
pub fn bisect_kappa(
    disp: &Dispersion,
    level: u32,
    lambda: f64,
    phi: f64,
    center: f64,
    w: f64,
) -> Result<f64> {
    let f = |x: f64| -> Result<f64> { Ok(disp.value(level, shifted(x, phi))? - lambda) };
    let (mut a, mut b) = (center - w, center + w);
    let (fa, fb) = (f(a)?, f(b)?);
    if fa.signum() == fb.signum() {
        return Err(Error::BracketFailure { phi });
    }
    let mut sa = fa.signum();
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m)?;
        if fm == 0.0 {
            return Ok(m);
        }
        if fm.signum() == sa {
            a = m;
            sa = fm.signum();
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// Root κ_n(λ, ν(φ)) near `guess` and dκ/dφ from the implicit-function quotient.
pub fn trace_kappa(
    disp: &Dispersion,
    level: u32,
    lambda: f64,
    phi: f64,
    guess: Option<f64>,
) -> Result<KappaRoot> {
    let l = disp.l() as f64;
    let k0 = lambda.powf(1.0 / (2.0 * l));
    let center = guess.unwrap_or(k0);
    let w = disp.bracket_halfwidth(level.max(1));
    let fsum =
        |x: f64| -> Result<f64> { Ok(disp.increments(level, shifted(x, phi))?.iter().sum()) };

    // Newton on κ^{2l} + f(κ) = λ with f′ from secants
    let mut x = center;
    let mut fx = fsum(x)?;
    let mut fprime = 0.0;
    let mut it = 0;
    let mut ok = false;
    while it < 40 {
        it += 1;
        let big = x.powf(2.0 * l) + fx - lambda;
        let slope = 2.0 * l * x.powf(2.0 * l - 1.0) + fprime;
        let nx = x - big / slope;
        if !(nx - center).abs().le(&w) {
            break;
        }
        let nf = fsum(nx)?;
        if nx != x {
            fprime = (nf - fx) / (nx - x);
        }
        let done = (nx - x).abs() <= 4.0 * f64::EPSILON * nx;
        x = nx;
        fx = nf;
        if done {
            ok = true;
            break;
        }
    }
    let mut residual = (x.powf(2.0 * l) + fx - lambda).abs();
    let mut bisection = false;
    if !ok || residual > 1e-10 * lambda {
        x = bisect_kappa(disp, level, lambda, phi, center, w)?;
        fx = fsum(x)?;
        residual = (x.powf(2.0 * l) + fx - lambda).abs();
        bisection = true;
    }
    // dκ/dφ = −∂f/∂φ / (2lκ^{2l−1} + ∂f/∂κ)
    let dkappa = if disp
        .windows
        .iter()
        .take(level as usize)
        .all(|w| w.is_zero())
    {
        0.0
    } else {
        let h = 1e-5;
        let fp = disp
            .increments(level, shifted(x, phi + h))?
            .iter()
            .sum::<f64>();
        let fm = disp
            .increments(level, shifted(x, phi - h))?
            .iter()
            .sum::<f64>();
        let hk = 1e-6 * x;
        let kp = fsum(x + hk)?;
        let km = fsum(x - hk)?;
        let df_dphi = (fp - fm) / (2.0 * h);
        let df_dk = (kp - km) / (2.0 * hk);
        -df_dphi / (2.0 * l * x.powf(2.0 * l - 1.0) + df_dk)
    };
    Ok(KappaRoot {
        kappa: x,
        dkappa,
        residual,
        iterations: it,
        bisection,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub phi: f64,
    pub kappa: f64,
    pub dkappa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoCurve {
    pub level: u32,
    pub lambda: f64,
    pub samples: Vec<CurveSample>,
    /// Open φ-intervals excluded from the domain.
    pub holes: Vec<(f64, f64)>,
    pub domain: AngleDomain,
    pub grid: usize,
    pub depth: u32,
    /// Angles where tracing failed; each is cut out of the domain.
    pub failures: Vec<f64>,
}

impl IsoCurve {
    /// ∫√(κ² + κ′²) dφ over the domain, trapezoid on the samples of each
    /// interval with the end pieces taken from the nearest sample.
    pub fn length(&self) -> f64 {
        let g = |s: &CurveSample| (s.kappa * s.kappa + s.dkappa * s.dkappa).sqrt();
        if self.domain.intervals.len() == 1
            && self.domain.length() >= TWO_PI
            && !self.samples.is_empty()
        {
            let n = self.samples.len();
            let mut sum = 0.0;
            for i in 0..n {
                let a = &self.samples[i];
                let b = &self.samples[(i + 1) % n];
                let mut d = b.phi - a.phi;
                if d <= 0.0 {
                    d += TWO_PI;
                }
                sum += 0.5 * d * (g(a) + g(b));
            }
            return sum;
        }
        let mut total = 0.0;
        for &(a, b) in &self.domain.intervals {
            let s: Vec<&CurveSample> = self
                .samples
                .iter()
                .filter(|s| s.phi >= a && s.phi <= b)
                .collect();
            if s.is_empty() {
                // unsampled interval: integrand of the nearest sample
                let mid = 0.5 * (a + b);
                if let Some(n) = self.samples.iter().min_by(|x, y| {
                    (x.phi - mid)
                        .abs()
                        .partial_cmp(&(y.phi - mid).abs())
                        .unwrap()
                }) {
                    total += (b - a) * g(n);
                }
                continue;
            }
            total += (s[0].phi - a) * g(s[0]) + (b - s[s.len() - 1].phi) * g(s[s.len() - 1]);
            for w in s.windows(2) {
                total += 0.5 * (w[1].phi - w[0].phi) * (g(w[0]) + g(w[1]));
            }
        }
        total
    }

    /// κ at φ by linear interpolation of the samples.
    pub fn kappa_at(&self, phi: f64) -> Option<f64> {
        let s = &self.samples;
        let i = s.partition_point(|x| x.phi < phi);
        if i < s.len() && s[i].phi == phi {
            return Some(s[i].kappa);
        }
        if i == 0 || i >= s.len() {
            return None;
        }
        let (a, b) = (&s[i - 1], &s[i]);
        let u = (phi - a.phi) / (b.phi - a.phi);
        Some(a.kappa + u * (b.kappa - a.kappa))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveGrid {
    pub base: usize,
    pub depth: u32,
    /// Split when neighbors differ in κ by more than this times k.
    pub split: f64,
}

impl Default for CurveGrid {
    fn default() -> Self {
        Self {
            base: 2048,
            depth: 6,
            split: 1e-3,
        }
    }
}

/// Samples κ_n over the domain; failed angles are cut out as small holes.
/// `prev` supplies κ_{n−1} as the starting guess.
pub fn curve(
    disp: &Dispersion,
    level: u32,
    lambda: f64,
    domain: &AngleDomain,
    grid: CurveGrid,
    prev: Option<&IsoCurve>,
) -> IsoCurve {
    let k = lambda.powf(1.0 / (2.0 * disp.l() as f64));
    let solve = |phi: f64| -> (f64, Result<KappaRoot>) {
        let guess = prev.and_then(|c| c.kappa_at(phi));
        (phi, trace_kappa(disp, level, lambda, phi, guess))
    };
    let mut pts: Vec<f64> = domain.grid(grid.base);
    // intervals missed by the grid get their midpoint while that stays cheap
    let missed: Vec<f64> = domain
        .intervals
        .iter()
        .filter(|(a, b)| !pts.iter().any(|p| p > a && p < b))
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    if missed.len() <= grid.base / 4 {
        pts.extend(missed);
    }
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.dedup();
    let mut results: Vec<(f64, Result<KappaRoot>)> = pts.par_iter().map(|p| solve(*p)).collect();
    let mut step = TWO_PI / grid.base as f64;
    for _ in 0..grid.depth {
        step /= 2.0;
        let mut extra = Vec::new();
        for w in results.windows(2) {
            if let (Ok(a), Ok(b)) = (&w[0].1, &w[1].1) {
                let gap = w[1].0 - w[0].0;
                let mid = 0.5 * (w[0].0 + w[1].0);
                if (a.kappa - b.kappa).abs() > grid.split * k
                    && gap > 1.5 * step
                    && domain.contains(mid)
                {
                    extra.push(mid);
                }
            }
        }
        if extra.is_empty() {
            break;
        }
        let more: Vec<(f64, Result<KappaRoot>)> = extra.par_iter().map(|p| solve(*p)).collect();
        results.extend(more);
        results.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    }
    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for (phi, r) in results {
        match r {
            Ok(root) => samples.push(CurveSample {
                phi,
                kappa: root.kappa,
                dkappa: root.dkappa,
            }),
            Err(_) => failures.push(phi),
        }
    }
    let half = 0.5 * TWO_PI / grid.base as f64;
    let cut: Vec<(f64, f64)> = failures.iter().map(|p| (p - half, p + half)).collect();
    let dom = domain.remove(level, &cut);
    samples.retain(|s| dom.contains(s.phi));
    IsoCurve {
        level,
        lambda,
        holes: dom.holes(),
        samples,
        domain: dom,
        grid: grid.base,
        depth: grid.depth,
        failures,
    }
}

/// Per-level lengths, decrements and a check that the domains are nested.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureRow {
    pub level: u32,
    pub length: f64,
    pub decrement: f64,
    /// S_n = 2Σ_{i<n}(1 + s_i), the exponent of the decrement rate k^{−S_n}.
    pub rate_exponent: f64,
}

pub fn measure_report(
    domains: &[AngleDomain],
    params: &ModelParams<f64>,
) -> Result<Vec<MeasureRow>> {
    let mut rows = Vec::with_capacity(domains.len());
    for (i, d) in domains.iter().enumerate() {
        if i > 0 {
            let p = &domains[i - 1];
            if d.level <= p.level || !d.is_subset_of(p) {
                return Err(Error::NotNested(d.level));
            }
        }
        let s_n: f64 = (1..d.level).map(|m| 2.0 * (1.0 + params.s(m))).sum();
        rows.push(MeasureRow {
            level: d.level,
            length: d.length(),
            decrement: if i == 0 {
                0.0
            } else {
                domains[i - 1].length() - d.length()
            },
            rate_exponent: s_n,
        });
    }
    Ok(rows)
}

/// Least-squares slope and intercept of log y against log x.
pub fn fit_loglog(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Smallest distance between reduced quasimomenta of distinct curve samples.
/// Zero signals a self-intersection of the traced set in the cell.
pub fn injectivity_gap(curve: &IsoCurve, cell: &CellSpec<f64>) -> f64 {
    let mut pts: Vec<[f64; 2]> = curve
        .samples
        .iter()
        .map(|s| reduce_to_cell(shifted(s.kappa, s.phi), cell).0.t)
        .collect();
    pts.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
    let mut best = f64::INFINITY;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let dx = pts[j][0] - pts[i][0];
            if dx >= best {
                break;
            }
            let d = (dx * dx + (pts[j][1] - pts[i][1]).powi(2)).sqrt();
            best = best.min(d);
        }
    }
    best
}

/// Point of the curve in the level's quasimomentum cell.
pub fn reduced_point(kappa: f64, phi: f64, cell: &CellSpec<f64>) -> (Quasimomentum<f64>, Index) {
    reduce_to_cell(shifted(kappa, phi), cell)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::CellSpec;
    use crate::potential::{build_potential, Decay, Recipe};
    use proptest::prelude::*;

    fn params() -> ModelParams<f64> {
        ModelParams::new(2, TWO_PI, TWO_PI, 3.0, 0.5, 0.2).unwrap()
    }

    fn unit_cell() -> CellSpec<f64> {
        CellSpec::new(1, 1, [TWO_PI, TWO_PI]).unwrap()
    }

    fn disp(recipe: Recipe<f64>, k: f64) -> Dispersion {
        let p = params();
        let spec = build_potential(&p, &recipe, 1, &Decay::Relaxed(vec![1.0])).unwrap();
        Dispersion::new(&spec, k, 1, SeriesConfig::desk(p, k), vec![3.0]).unwrap()
    }

    #[test]
    fn enlarging_the_ball_keeps_eigenvalues() {
        let p = params();
        let k: f64 = 10.0;
        let spec = build_potential(&p, &Recipe::cosine(0.05), 1, &Decay::Relaxed(vec![1.0])).unwrap();
        let lam = k.powi(4);
        let theta = chi1(lam, &p, &unit_cell());
        let small = Dispersion::new(&spec, k, 1, SeriesConfig::desk(p, k), vec![3.0]).unwrap();
        let large = Dispersion::new(&spec, k, 1, SeriesConfig::desk(p, k), vec![3.6]).unwrap();
        for phi in theta.grid(64) {
            let d = direction(phi);
            let kv = [k * d[0], k * d[1]];
            let (a, b) = (small.value(1, kv).unwrap(), large.value(1, kv).unwrap());
            assert!((a - b).abs() <= 1e-8 * lam, "phi = {phi}: {a} vs {b}");
        }
    }

    #[test]
    fn domain_arithmetic() {
        let d = AngleDomain::full(1).remove(1, &[(1.0, 2.0), (1.5, 2.5), (-0.5, 0.25)]);
        assert_eq!(d.intervals, vec![(0.25, 1.0), (2.5, TWO_PI - 0.5)]);
        assert!((d.length() - (0.75 + TWO_PI - 3.0)).abs() < 1e-15);
        assert!(d.contains(1.0) && !d.contains(1.2) && !d.contains(0.1));
        let holes = d.holes();
        assert_eq!(holes.len(), 3);
        let smaller = d.remove(2, &[(3.0, 3.1)]);
        assert!(smaller.is_subset_of(&d));
        assert!(!d.is_subset_of(&smaller));
    }

    #[test]
    fn no_intersections_below_lattice_scale() {
        assert!(self_intersections(0.4f64.powi(4), 2, &unit_cell()).is_empty());
        let d = chi1(0.4f64.powi(4), &params(), &unit_cell());
        assert_eq!(d.length(), TWO_PI);
        assert!(d.below_regime);
    }

    #[test]
    fn unit_circles_meet_at_analytic_points() {
        let pts = self_intersections(1.0, 2, &unit_cell());
        let y = 3f64.sqrt() / 2.0;
        for target in [[0.5, y], [0.5, TWO_PI / TWO_PI - y]] {
            assert!(pts
                .iter()
                .any(|s| (s.t[0] - target[0]).abs() < 1e-12 && (s.t[1] - target[1]).abs() < 1e-12));
        }
    }

    #[test]
    fn intersections_satisfy_both_circles_and_grow() {
        let cell = unit_cell();
        let mut last = 0;
        for k in [2.0f64, 4.0, 8.0] {
            let pts = self_intersections(k.powi(4), 2, &cell);
            assert!(pts.len() > last);
            last = pts.len();
            for s in &pts {
                let p = |j: Index| [j[0] as f64 + s.t[0], j[1] as f64 + s.t[1]];
                for q in [s.j, s.q] {
                    let v = p(q);
                    assert!(((v[0] * v[0] + v[1] * v[1]) - k * k).abs() <= 1e-10 * k * k);
                }
            }
        }
    }

    #[test]
    fn every_hole_holds_an_intersection_angle() {
        let k = 6.0f64;
        let d = chi1(k.powi(4), &params(), &unit_cell());
        let angles: Vec<f64> = self_intersections(k.powi(4), 2, &unit_cell())
            .iter()
            .map(|s| s.phi)
            .collect();
        for (a, b) in d.holes() {
            assert!(
                angles.iter().any(|p| *p > a && *p < b),
                "hole ({a}, {b}) without intersection"
            );
        }
        for p in angles {
            assert!(!d.contains(p));
        }
    }

    /// Direct minimum of |k² − |kν + v|²| over dual vectors.
    fn min_gap(k: f64, phi: f64) -> f64 {
        let kv = shifted(k, phi);
        dual_vectors(&unit_cell(), 2.0 * k + 2.0)
            .iter()
            .map(|(_, v)| (k * k - ((kv[0] + v[0]).powi(2) + (kv[1] + v[1]).powi(2))).abs())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn deleted_fraction_shrinks_with_k() {
        let frac = |k: f64| 1.0 - chi1(k.powi(4), &params(), &unit_cell()).length() / TWO_PI;
        let f = [frac(8.0), frac(16.0), frac(32.0)];
        assert!(f[0] > f[1] && f[1] > f[2] && f[2] > 0.0);
    }

    #[test]
    fn free_curve_is_a_circle() {
        let d = disp(Recipe::Empty, 7.0);
        let lambda = 7f64.powi(4);
        let r = trace_kappa(&d, 1, lambda, 0.7, None).unwrap();
        assert!((r.kappa - 7.0).abs() <= 1e-14 * 7.0);
        assert_eq!(r.dkappa, 0.0);
        let c = curve(
            &d,
            1,
            lambda,
            &AngleDomain::full(1),
            CurveGrid {
                base: 64,
                depth: 0,
                split: 1e-3,
            },
            None,
        );
        assert!((c.length() / (TWO_PI * 7.0) - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn potential_pulls_the_curve_inside() {
        let k = 10.0f64;
        let d = disp(Recipe::cosine(0.3), k);
        let lambda = k.powi(4);
        let dom = chi1(lambda, &params(), &unit_cell());
        for phi in dom.grid(40) {
            let r = trace_kappa(&d, 1, lambda, phi, None).unwrap();
            assert!(r.residual <= 1e-10 * lambda);
            assert!(r.kappa < k, "h1 >= 0 at {phi}");
            let b = bisect_kappa(&d, 1, lambda, phi, k, d.bracket_halfwidth(1)).unwrap();
            assert!((b - r.kappa).abs() <= 1e-12 * k);
        }
    }

    #[test]
    fn implicit_derivative_matches_finite_difference() {
        let k = 10.0f64;
        let d = disp(Recipe::cosine(0.3), k);
        let lambda = k.powi(4);
        let dom = chi1(lambda, &params(), &unit_cell());
        let h = 1e-4;
        for phi in dom.grid(12) {
            if !(dom.contains(phi - 2.0 * h) && dom.contains(phi + 2.0 * h)) {
                continue;
            }
            let r = trace_kappa(&d, 1, lambda, phi, None).unwrap();
            let p = trace_kappa(&d, 1, lambda, phi + h, None).unwrap().kappa;
            let m = trace_kappa(&d, 1, lambda, phi - h, None).unwrap().kappa;
            let fd = (p - m) / (2.0 * h);
            assert!((fd - r.dkappa).abs() <= 1e-6, "{fd} vs {}", r.dkappa);
        }
    }

    #[test]
    fn measure_report_checks_nesting() {
        let p = params();
        let full = AngleDomain::full(1);
        let rows = measure_report(std::slice::from_ref(&full), &p).unwrap();
        assert_eq!(rows[0].length, TWO_PI);
        assert_eq!(rows[0].decrement, 0.0);
        let l2 = full.remove(2, &[(1.0, 1.1)]);
        let l3 = l2.remove(3, &[(2.0, 2.01)]);
        let rows = measure_report(&[full.clone(), l2.clone(), l3.clone()], &p).unwrap();
        assert!(rows[1].decrement > rows[2].decrement && rows[2].decrement > 0.0);
        let wider = AngleDomain::full(3);
        assert_eq!(measure_report(&[l2, wider], &p), Err(Error::NotNested(3)));
    }

    #[test]
    fn loglog_fit_recovers_power() {
        let x = [2.0, 4.0, 8.0, 16.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.7)).collect();
        let (s, c) = fit_loglog(&x, &y);
        assert!((s + 0.7).abs() < 1e-12 && (c - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn traced_points_do_not_collide_in_the_cell() {
        let k = 8.0f64;
        let d = disp(Recipe::cosine(0.2), k);
        let lambda = k.powi(4);
        let dom = chi1(lambda, &params(), &unit_cell());
        let c = curve(
            &d,
            1,
            lambda,
            &dom,
            CurveGrid {
                base: 128,
                depth: 1,
                split: 1e-3,
            },
            None,
        );
        assert!(injectivity_gap(&c, &unit_cell()) > 0.0);
        assert!(c.failures.is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn retained_directions_satisfy_gap(phi in 0.0f64..TWO_PI, k in 4.0f64..20.0) {
            let d = chi1(k.powi(4), &params(), &unit_cell());
            let thr = gap_threshold(k, &params());
            if d.contains(phi) {
                prop_assert!(min_gap(k, phi) >= thr * (1.0 - 1e-9));
            } else {
                prop_assert!(min_gap(k, phi) <= thr * (1.0 + 1e-9));
            }
        }

        #[test]
        fn one_eigenvalue_near_lambda_on_the_curve(phi in 0.0f64..TWO_PI) {
            let k = 8.0f64;
            let d = disp(Recipe::cosine(0.2), k);
            let lambda = k.powi(4);
            let dom = chi1(lambda, &params(), &unit_cell());
            if dom.contains(phi) {
                let r = trace_kappa(&d, 1, lambda, phi, None).unwrap();
                let half = d.cfg.radius(1);
                prop_assert_eq!(d.count_near(1, shifted(r.kappa, phi), lambda, half).unwrap(), 1);
            }
        }
    }
}
