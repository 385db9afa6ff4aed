//! Resonance maps in the complex angle strip: seeds from the unperturbed
//! quasi-intersection equation, disk sets around them, argument-principle
//! zero counting for the determinant of the shifted operator, Newton
//! polishing, poles for small offsets and real resonance arcs.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::oracle_state;
use crate::error::{Error, Result};
use crate::isoenergetic::{
    direction, dual_vectors, trace_kappa, wrap, AngleDomain, Dispersion, IsoCurve,
};
use crate::lattice::{CellSpec, Index, ModelParams};

pub type C64 = num_complex::Complex<f64>;

const TWO_PI: f64 = 2.0 * PI;

/// Φ₀ half-width k^{−2−4s₁}.
pub fn strip_half_width(k: f64, params: &ModelParams<f64>) -> f64 {
    k.powf(-2.0 - 4.0 * params.s1)
}

/// Half-width k^{−2−4s₁−2δ} of the neighborhood Φ₁ of Θ₁.
pub fn phi1_width(k: f64, params: &ModelParams<f64>) -> f64 {
    k.powf(-2.0 - 4.0 * params.s1 - 2.0 * params.delta)
}

/// r^(1) = k^{−4−6s₁−3δ}, r^(m+1) = r^(m)·k^{−2−4s_{m+1}−δ}.
pub fn disk_radius(level: u32, k: f64, params: &ModelParams<f64>) -> f64 {
    let mut r = k.powf(-4.0 - 6.0 * params.s1 - 3.0 * params.delta);
    for m in 2..=level {
        r *= k.powf(-2.0 - 4.0 * params.s(m) - params.delta);
    }
    r
}

/// Level-1 disk cap c₀k^{2+2s₁} with c₀ = 32b₁b₂.
pub fn disk_cap(k: f64, params: &ModelParams<f64>) -> f64 {
    32.0 * params.b1 * params.b2 * k.powf(2.0 + 2.0 * params.s1)
}

/// Distance from b⃗ to the nearest vertex of the cell.
pub fn vertex_distance(b: [f64; 2], cell: &CellSpec<f64>) -> f64 {
    let w = cell.widths();
    let mut best = f64::INFINITY;
    for m0 in [0.0, 1.0] {
        for m1 in [0.0, 1.0] {
            let d = ((b[0] - m0 * w[0]).powi(2) + (b[1] - m1 * w[1]).powi(2)).sqrt();
            best = best.min(d);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexStrip {
    pub level: u32,
    pub half_width: f64,
    /// Removed disks (center, radius) accumulated over levels.
    pub excluded: Vec<(C64, f64)>,
}

impl ComplexStrip {
    pub fn level_zero(k: f64, params: &ModelParams<f64>) -> Self {
        Self {
            level: 0,
            half_width: strip_half_width(k, params),
            excluded: vec![],
        }
    }

    pub fn contains(&self, z: C64) -> bool {
        z.im.abs() < self.half_width && self.excluded.iter().all(|(c, r)| (z - c).norm() >= *r)
    }

    /// The strip of the next level: the disks of `set` removed as well.
    pub fn minus(&self, set: &DiskSet) -> Self {
        let mut excluded = self.excluded.clone();
        excluded.extend(set.disks.iter().map(|d| (d.center, d.radius)));
        Self {
            level: set.level,
            half_width: self.half_width,
            excluded,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedKind {
    Unperturbed,
    Polished,
    SmallBPole,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: C64,
    pub radius: f64,
    pub kind: SeedKind,
    /// Lattice index of the resonating mode b⃗ + p_m(0).
    pub m: Index,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiskSet {
    pub level: u32,
    pub b: [f64; 2],
    pub b0: f64,
    pub radius: f64,
    pub disks: Vec<Disk>,
    pub cap: f64,
}

impl DiskSet {
    /// Connected components of the union of disks, each a list of disk indices.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.disks.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        // disks are sorted by real part, so only a sliding window can overlap
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (&self.disks[i], &self.disks[j]);
                if b.center.re - a.center.re > a.radius + b.radius {
                    break;
                }
                if (a.center - b.center).norm() < a.radius + b.radius {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        parent[ri.max(rj)] = ri.min(rj);
                    }
                }
            }
        }
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for i in 0..n {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
        groups.into_values().collect()
    }

    /// Circle (center, radius) enclosing a component.
    pub fn enclosing(&self, comp: &[usize]) -> (C64, f64) {
        let c = comp.iter().map(|&i| self.disks[i].center).sum::<C64>() / comp.len() as f64;
        let r = comp
            .iter()
            .map(|&i| (self.disks[i].center - c).norm() + self.disks[i].radius)
            .fold(0.0, f64::max);
        (c, r)
    }

    fn sort(&mut self) {
        self.disks.sort_by(|a, b| {
            a.center
                .re
                .partial_cmp(&b.center.re)
                .unwrap()
                .then(a.center.im.partial_cmp(&b.center.im).unwrap())
                .then(a.m.cmp(&b.m))
        });
    }
}

/// Roots in the strip of |kν(φ) + c|*² = k_eff², c = b⃗ + p_m(0).
///
/// With w = e^{i(φ−φ_c)} the equation is w² − 2Cw + 1 = 0,
/// C = (k_eff² − k² − |c|²)/(2k|c|).
pub fn unperturbed_zeros(
    c: [f64; 2],
    k: f64,
    k_eff: f64,
    strip: &ComplexStrip,
) -> Result<Vec<C64>> {
    let nc = (c[0] * c[0] + c[1] * c[1]).sqrt();
    if nc == 0.0 {
        return Err(Error::VertexOffset);
    }
    if nc >= 4.0 * k {
        return Ok(vec![]);
    }
    let phc = c[1].atan2(c[0]);
    let cc = (k_eff * k_eff - k * k - nc * nc) / (2.0 * k * nc);
    let s = C64::new(cc * cc - 1.0, 0.0).sqrt();
    let mut out = Vec::with_capacity(2);
    for w in [C64::new(cc, 0.0) + s, C64::new(cc, 0.0) - s] {
        // φ = φ_c − i log w
        let z = C64::new(phc + w.arg(), -w.norm().ln());
        let z = C64::new(wrap(z.re), z.im);
        if strip.contains(z) && !out.iter().any(|x: &C64| (x - z).norm() < 1e-15) {
            out.push(z);
        }
    }
    Ok(out)
}

/// |kν(φ) + c|*² at complex φ (the analytic square, not the modulus).
pub fn analytic_square(kappa: C64, phi: C64, c: [f64; 2]) -> C64 {
    let x = kappa * phi.cos() + c[0];
    let y = kappa * phi.sin() + c[1];
    x * x + y * y
}

/// Disks of radius r^(1) around all unperturbed zeros, keeping the components
/// that meet Φ₁ (the complex neighborhood of Θ₁).
#[allow(clippy::too_many_arguments)]
pub fn build_o_level_one(
    b: [f64; 2],
    lambda: f64,
    eps: f64,
    params: &ModelParams<f64>,
    cell: &CellSpec<f64>,
    strip: &ComplexStrip,
    theta1: &AngleDomain,
) -> Result<DiskSet> {
    let b0 = vertex_distance(b, cell);
    if b0 == 0.0 {
        return Err(Error::VertexOffset);
    }
    let l = params.l as f64;
    let k = lambda.powf(1.0 / (2.0 * l));
    let k_eff = (lambda + eps).powf(1.0 / (2.0 * l));
    let radius = disk_radius(1, k, params);
    let cap = disk_cap(k, params);
    let mut disks = Vec::new();
    for (m, p) in dual_vectors(cell, 4.0 * k + 1.0)
        .into_iter()
        .chain(std::iter::once(([0, 0], [0.0, 0.0])))
    {
        let c = [b[0] + p[0], b[1] + p[1]];
        for z in unperturbed_zeros(c, k, k_eff, strip)? {
            disks.push(Disk {
                center: z,
                radius,
                kind: SeedKind::Unperturbed,
                m,
            });
        }
    }
    if disks.len() as f64 > 4.0 * cap {
        return Err(Error::TooManyDisks {
            count: disks.len(),
            cap,
        });
    }
    let mut set = DiskSet {
        level: 1,
        b,
        b0,
        radius,
        disks,
        cap,
    };
    set.sort();
    let w = phi1_width(k, params);
    let keep: Vec<bool> = {
        let comps = set.components();
        let mut keep = vec![false; set.disks.len()];
        for comp in comps {
            let meets = comp.iter().any(|&i| {
                let d = &set.disks[i];
                d.center.im.abs() - d.radius < w && near_domain(theta1, d.center.re, w + d.radius)
            });
            for i in comp {
                keep[i] = meets;
            }
        }
        keep
    };
    let mut i = 0;
    set.disks.retain(|_| {
        i += 1;
        keep[i - 1]
    });
    Ok(set)
}

fn near_domain(d: &AngleDomain, x: f64, w: f64) -> bool {
    let x = wrap(x);
    d.intervals.iter().any(|(a, b)| {
        let inside = x >= a - w && x <= b + w;
        inside || x + TWO_PI <= b + w || x - TWO_PI >= a - w
    })
}

/// Level m ≥ 2: the union over refinement offsets of the prior sets,
/// contracted to the level's radius. Centers are kept (polished when known).
pub fn build_o_next(
    level: u32,
    b: [f64; 2],
    prior: &[DiskSet],
    k: f64,
    params: &ModelParams<f64>,
) -> Result<DiskSet> {
    if level < 2 {
        return Err(Error::LevelTooLow(level));
    }
    let radius = disk_radius(level, k, params);
    let mut disks = Vec::new();
    for set in prior {
        if set.level + 1 != level {
            return Err(Error::LevelMismatch {
                got: set.level,
                want: level - 1,
            });
        }
        for d in &set.disks {
            disks.push(Disk {
                center: d.center,
                radius,
                kind: d.kind,
                m: d.m,
            });
        }
    }
    let cap = 4.0 * prior.iter().map(|s| s.cap).fold(0.0, f64::max) * prior.len().max(1) as f64;
    if disks.len() as f64 > 4.0 * cap {
        return Err(Error::TooManyDisks {
            count: disks.len(),
            cap,
        });
    }
    let b0 = prior.iter().map(|s| s.b0).fold(f64::INFINITY, f64::min);
    let mut set = DiskSet {
        level,
        b,
        b0,
        radius,
        disks,
        cap,
    };
    set.sort();
    Ok(set)
}

/// Every disk of `inner` lies inside some disk of `outer`.
pub fn nested_in(inner: &DiskSet, outer: &[DiskSet]) -> bool {
    inner.disks.iter().all(|d| {
        outer
            .iter()
            .flat_map(|s| s.disks.iter())
            .any(|o| (d.center - o.center).norm() + d.radius <= o.radius * (1.0 + 1e-12))
    })
}

/// κ(φ) at complex φ from the quadratic through three real samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaExt {
    pub phi0: f64,
    pub kappa: f64,
    pub d1: f64,
    pub d2: f64,
}

impl KappaExt {
    pub fn constant(kappa: f64) -> Self {
        Self {
            phi0: 0.0,
            kappa,
            d1: 0.0,
            d2: 0.0,
        }
    }

    /// Samples at φ₀ − h, φ₀, φ₀ + h.
    pub fn from_samples(phi0: f64, h: f64, s: [f64; 3]) -> Self {
        Self {
            phi0,
            kappa: s[1],
            d1: (s[2] - s[0]) / (2.0 * h),
            d2: (s[2] - 2.0 * s[1] + s[0]) / (h * h),
        }
    }

    /// Traces κ_level at three real angles around Re φ₀.
    pub fn traced(disp: &Dispersion, level: u32, lambda: f64, phi0: f64, h: f64) -> Result<Self> {
        let mut s = [0.0; 3];
        for (i, d) in [-1.0, 0.0, 1.0].iter().enumerate() {
            s[i] = trace_kappa(disp, level, lambda, phi0 + d * h, None)?.kappa;
        }
        Ok(Self::from_samples(phi0, h, s))
    }

    /// Quadratic through the three curve samples nearest to φ.
    pub fn from_curve(curve: &IsoCurve, phi: f64) -> Option<Self> {
        let s = &curve.samples;
        if s.len() < 3 {
            return None;
        }
        let i = s.partition_point(|x| x.phi < phi);
        let i = if i == 0 {
            1
        } else if i >= s.len() - 1 {
            s.len() - 2
        } else if (s[i].phi - phi).abs() < (s[i - 1].phi - phi).abs() {
            i
        } else {
            i.max(2) - 1
        };
        let (x0, x1, x2) = (s[i - 1].phi, s[i].phi, s[i + 1].phi);
        let (y0, y1, y2) = (s[i - 1].kappa, s[i].kappa, s[i + 1].kappa);
        let (h0, h1) = (x1 - x0, x2 - x1);
        // divided differences of the interpolant, expanded at x1
        let a = (y1 - y0) / h0;
        let b = (y2 - y1) / h1;
        let d2 = 2.0 * (b - a) / (h0 + h1);
        let d1 = a + 0.5 * d2 * h0;
        Some(Self {
            phi0: x1,
            kappa: y1,
            d1,
            d2,
        })
    }

    pub fn eval(&self, phi: C64) -> (C64, C64) {
        let d = phi - self.phi0;
        (
            self.kappa + d * self.d1 + d * d * (0.5 * self.d2),
            d * self.d2 + self.d1,
        )
    }
}

/// det((H^(level)(y) − λ − ε)(H₀(y) + λ)^{−1}) for y(φ) = κ(φ)ν(φ) + b⃗, on a
/// fixed finite set of modes of the level lattice.
#[derive(Clone, Debug)]
pub struct DetEvaluator {
    pub lambda: f64,
    pub eps: f64,
    pub l: u32,
    pub b: [f64; 2],
    pub kappa: KappaExt,
    /// p_m(0) for the modes.
    pub momenta: Vec<[f64; 2]>,
    pub modes: Vec<Index>,
    /// Off-diagonal couplings (row, col, value).
    pub coupling: Vec<(usize, usize, C64)>,
}

impl DetEvaluator {
    /// Modes m with |p_m(0) − p_{m₀}(0)| ≤ ρ around each resonating index;
    /// `alpha` scales the top window, lower windows enter at full strength.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        disp: &Dispersion,
        level: u32,
        alpha: f64,
        b: [f64; 2],
        lambda: f64,
        eps: f64,
        kappa: KappaExt,
        centers: &[Index],
        rho: f64,
    ) -> Self {
        let cell = disp.sched.cell(level);
        let w = cell.widths();
        let mut modes: Vec<Index> = Vec::new();
        let rel: Vec<Index> = dual_vectors(&cell, rho)
            .into_iter()
            .map(|x| x.0)
            .chain(std::iter::once([0, 0]))
            .collect();
        for c in centers {
            for r in &rel {
                modes.push([c[0] + r[0], c[1] + r[1]]);
            }
        }
        modes.sort();
        modes.dedup();
        let lookup: std::collections::HashMap<Index, usize> =
            modes.iter().enumerate().map(|(i, m)| (*m, i)).collect();
        let momenta: Vec<[f64; 2]> = modes
            .iter()
            .map(|m| [m[0] as f64 * w[0], m[1] as f64 * w[1]])
            .collect();
        let m_top = disp.windows[(level - 1) as usize].m_hi;
        let mut coupling = Vec::new();
        for (wi, win) in disp.windows.iter().take(level as usize).enumerate() {
            let a = if wi + 1 == level as usize { alpha } else { 1.0 };
            if win.is_zero() || a == 0.0 {
                continue;
            }
            let shift = m_top.saturating_sub(win.m_hi);
            for (row, m) in modes.iter().enumerate() {
                for (q, v) in win.embedded(shift) {
                    if let Some(&col) = lookup.get(&[m[0] - q[0], m[1] - q[1]]) {
                        coupling.push((row, col, v * a));
                    }
                }
            }
        }
        Self {
            lambda,
            eps,
            l: disp.l(),
            b,
            kappa,
            momenta,
            modes,
            coupling,
        }
    }

    fn diag(&self, phi: C64) -> (Vec<C64>, Vec<C64>) {
        let (kap, dkap) = self.kappa.eval(phi);
        let (c, s) = (phi.cos(), phi.sin());
        let y = [kap * c + self.b[0], kap * s + self.b[1]];
        // dy/dφ = κ′ν + κν⊥
        let dy = [dkap * c - kap * s, dkap * s + kap * c];
        let l = self.l as i32;
        let mut d = Vec::with_capacity(self.momenta.len());
        let mut dd = Vec::with_capacity(self.momenta.len());
        for p in &self.momenta {
            let u = [y[0] + p[0], y[1] + p[1]];
            let sq = u[0] * u[0] + u[1] * u[1];
            let dsq = (u[0] * dy[0] + u[1] * dy[1]) * 2.0;
            d.push(sq.powi(l));
            dd.push(sq.powi(l - 1) * dsq * self.l as f64);
        }
        (d, dd)
    }

    fn matrix(&self, d: &[C64]) -> DMatrix<C64> {
        let n = d.len();
        let mut a = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
        let shift = self.lambda + self.eps;
        for i in 0..n {
            a[(i, i)] = d[i] - shift;
        }
        for &(r, c, v) in &self.coupling {
            a[(r, c)] += v;
        }
        a
    }

    /// log det, branch unspecified.
    pub fn log_det(&self, phi: C64) -> C64 {
        let (d, _) = self.diag(phi);
        let a = self.matrix(&d);
        let lu = a.lu();
        let u = lu.u();
        let mut s = C64::new(0.0, 0.0);
        for i in 0..u.nrows() {
            s += u[(i, i)].ln();
        }
        if lu.p().determinant::<f64>() < 0.0 {
            s += C64::new(0.0, PI);
        }
        for di in &d {
            s -= (di + self.lambda).ln();
        }
        s
    }

    /// d log det/dφ = Tr((H − λ − ε)^{−1} dH/dφ) − Σ d′/(d + λ).
    pub fn log_det_derivative(&self, phi: C64) -> Result<C64> {
        let (d, dd) = self.diag(phi);
        let a = self.matrix(&d);
        let inv = a.try_inverse().ok_or(Error::Pole)?;
        let mut s = C64::new(0.0, 0.0);
        for i in 0..d.len() {
            s += inv[(i, i)] * dd[i] - dd[i] / (d[i] + self.lambda);
        }
        Ok(s)
    }
}

/// Winding number of f along |z − c| = r from log f on trapezoid nodes;
/// Q doubles until phase steps stay below π/2 and the count is integral.
pub fn count_zeros<F>(log_f: F, center: C64, radius: f64, q0: usize) -> Result<i64>
where
    F: Fn(C64) -> C64 + Sync,
{
    let mut q = q0.max(8);
    loop {
        let vals: Vec<C64> = (0..q)
            .into_par_iter()
            .map(|i| {
                let th = TWO_PI * i as f64 / q as f64;
                log_f(center + C64::from_polar(radius, th))
            })
            .collect();
        let mx = vals.iter().map(|v| v.re).fold(f64::NEG_INFINITY, f64::max);
        let mn = vals.iter().map(|v| v.re).fold(f64::INFINITY, f64::min);
        if !mn.is_finite() || mn < mx + 1e-12f64.ln() {
            return Err(Error::ZeroOnContour);
        }
        let mut total = 0.0;
        let mut coarse = false;
        for i in 0..q {
            let mut d = vals[(i + 1) % q].im - vals[i].im;
            d = (d + PI).rem_euclid(TWO_PI) - PI;
            if d.abs() > PI / 2.0 {
                coarse = true;
            }
            total += d;
        }
        let w = total / TWO_PI;
        if !coarse && (w - w.round()).abs() <= 0.01 {
            return Ok(w.round() as i64);
        }
        if q >= 1 << 16 {
            return Err(Error::ContourTooCoarse {
                winding: w,
                nodes: q,
            });
        }
        q *= 2;
    }
}

/// Winding count of a plain analytic function.
pub fn count_zeros_fn<F>(f: F, center: C64, radius: f64, q0: usize) -> Result<i64>
where
    F: Fn(C64) -> C64 + Sync,
{
    count_zeros(|z| f(z).ln(), center, radius, q0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolishedZero {
    pub seed: C64,
    pub zero: Option<C64>,
    pub escaped: bool,
    pub steps: usize,
}

/// Newton on log det from each seed: z ← z − 1/(log det)′.
pub fn polish(eval: &DetEvaluator, seed: C64, radius: f64) -> PolishedZero {
    let start = eval.log_det(seed).re;
    let mut z = seed;
    for it in 1..=60 {
        let g = match eval.log_det_derivative(z) {
            Ok(g) => g,
            // an exact singular matrix is a zero
            Err(_) => {
                return PolishedZero {
                    seed,
                    zero: Some(z),
                    escaped: false,
                    steps: it,
                }
            }
        };
        let step = C64::new(1.0, 0.0) / g;
        z -= step;
        if (z - seed).norm() > radius {
            return PolishedZero {
                seed,
                zero: None,
                escaped: true,
                steps: it,
            };
        }
        let small = step.norm() <= 1e-15 * (1.0 + z.norm());
        if small || eval.log_det(z).re < start + 1e-10f64.ln() && step.norm() <= 1e-13 {
            return PolishedZero {
                seed,
                zero: Some(z),
                escaped: false,
                steps: it,
            };
        }
    }
    PolishedZero {
        seed,
        zero: Some(z),
        escaped: false,
        steps: 60,
    }
}

/// One polished zero per disk of a component, with its determinant.
pub fn polished_zeros(eval: &DetEvaluator, set: &DiskSet, comp: &[usize]) -> Vec<PolishedZero> {
    comp.iter()
        .map(|&i| polish(eval, set.disks[i].center, set.radius))
        .collect()
}

/// min |det| on a ring of radius `far`·R around the component against the
/// min on its boundary circle.
pub fn outside_ratio(eval: &DetEvaluator, center: C64, radius: f64, far: f64, q: usize) -> f64 {
    let ring = |r: f64| {
        (0..q)
            .map(|i| {
                eval.log_det(center + C64::from_polar(r, TWO_PI * i as f64 / q as f64))
                    .re
            })
            .fold(f64::INFINITY, f64::min)
    };
    (ring(far * radius) - ring(radius)).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallBPole {
    pub phi: C64,
    /// +1 where λ^(1)(y(φ)) increases through λ + ε, −1 where it decreases.
    pub sign: i32,
    /// dλ^(1)(y(φ))/dφ at the root.
    pub slope: f64,
}

/// Below this b₀ the offset counts as small: k^{−2l+9+12s₁+7δ}.
pub fn small_b_threshold(k: f64, params: &ModelParams<f64>) -> f64 {
    k.powf(-2.0 * params.l as f64 + 9.0 + 12.0 * params.s1 + 7.0 * params.delta)
}

/// Roots of λ^(1)(κ₁(φ)ν + b⃗) = λ + ε near φ_b ± π/2 for a small offset b⃗.
pub fn small_b_poles(
    disp: &Dispersion,
    b: [f64; 2],
    lambda: f64,
    eps: f64,
) -> Result<Vec<SmallBPole>> {
    let b0 = (b[0] * b[0] + b[1] * b[1]).sqrt();
    if b0 == 0.0 {
        return Err(Error::VertexOffset);
    }
    let k = disp.k();
    let phb = b[1].atan2(b[0]);
    let g = |phi: f64| -> Result<f64> {
        let kap = trace_kappa(disp, 1, lambda, phi, None)?.kappa;
        let d = direction(phi);
        Ok(disp.value(1, [kap * d[0] + b[0], kap * d[1] + b[1]])? - lambda - eps)
    };
    let l = disp.l() as f64;
    let slope0 = 2.0 * l * b0 * k.powf(2.0 * l - 1.0);
    let mut out = Vec::new();
    for side in [1.0, -1.0] {
        // unperturbed root of k² + 2kb₀cos(φ − φ_b) + b₀² = k_eff²
        let k_eff = (lambda + eps).powf(1.0 / (2.0 * l));
        let c = ((k_eff * k_eff - k * k - b0 * b0) / (2.0 * k * b0)).clamp(-1.0, 1.0);
        let mut phi = phb + side * c.acos();
        let mut slope = -side * slope0;
        let mut ok = false;
        for _ in 0..50 {
            let v = g(phi)?;
            let h = 1e-7;
            slope = (g(phi + h)? - g(phi - h)?) / (2.0 * h);
            if slope == 0.0 {
                break;
            }
            let step = v / slope;
            phi -= step;
            // g carries roundoff of order eps·λ
            if step.abs() <= 1e-12 || v.abs() <= 8.0 * f64::EPSILON * lambda {
                ok = true;
                break;
            }
        }
        if ok {
            out.push(SmallBPole {
                phi: C64::new(wrap(phi), 0.0),
                sign: slope.signum() as i32,
                slope,
            });
        }
    }
    if out.len() > 2 {
        return Err(Error::TooManyPoles(out.len()));
    }
    Ok(out)
}

/// Crossing of the oracle eigenvalue at κ₁(φ)ν + b⃗ through λ + ε by bisection.
pub fn pole_by_bisection(
    disp: &Dispersion,
    b: [f64; 2],
    lambda: f64,
    eps: f64,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    let g = |phi: f64| -> Result<f64> {
        let kap = trace_kappa(disp, 1, lambda, phi, None)?.kappa;
        let d = direction(phi);
        let (m, j) = disp.matrix(1, [kap * d[0] + b[0], kap * d[1] + b[1]], disp.alpha)?;
        Ok(oracle_state(&m, j)?.0 - lambda - eps)
    };
    let (mut a, mut c) = (lo, hi);
    let ga = g(a)?;
    if ga.signum() == g(c)?.signum() {
        return Err(Error::BracketFailure {
            phi: 0.5 * (lo + hi),
        });
    }
    for _ in 0..100 {
        let m = 0.5 * (a + c);
        if m <= a || m >= c {
            break;
        }
        if g(m)?.signum() == ga.signum() {
            a = m;
        } else {
            c = m;
        }
    }
    Ok(0.5 * (a + c))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub lo: f64,
    pub hi: f64,
    pub root: f64,
    /// Offset momentum u (a point of a nonzero coset).
    pub u: [f64; 2],
    pub m: Index,
    pub slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceArcs {
    pub level: u32,
    pub eps: f64,
    pub arcs: Vec<Arc>,
}

impl ResonanceArcs {
    pub fn total_length(&self) -> f64 {
        crate::isoenergetic::normalize_holes(&self.holes())
            .iter()
            .map(|(a, b)| b - a)
            .sum()
    }

    pub fn holes(&self) -> Vec<(f64, f64)> {
        self.arcs.iter().map(|a| (a.lo, a.hi)).collect()
    }
}

/// Arcs of Θ_{n−1} where λ^(n−1)(κ_{n−1}(φ)ν + u) is within ε of λ for a
/// momentum u of a nonzero coset of the level-(n−1) lattice in the level-n
/// lattice. Each crossing is solved by Newton from the unperturbed angle
/// φ_u ± arccos(−|u|/2k) on the oracle eigenvalue of H^(n−1).
pub fn resonance_arcs(
    disp: &Dispersion,
    level: u32,
    lambda: f64,
    prev: &IsoCurve,
    eps: f64,
) -> Result<ResonanceArcs> {
    if level < 2 {
        return Err(Error::LevelTooLow(level));
    }
    let k = disp.k();
    let cell = disp.sched.cell(level);
    let w = cell.widths();
    let n = disp.sched.refinement(level) as i64;
    let domain = &prev.domain;
    let candidates: Vec<(Index, [f64; 2], f64)> = dual_vectors(&cell, 2.0 * k)
        .into_iter()
        .filter(|(m, _)| m[0].rem_euclid(n) != 0 || m[1].rem_euclid(n) != 0)
        .flat_map(|(m, u)| {
            let nu = (u[0] * u[0] + u[1] * u[1]).sqrt();
            let phu = u[1].atan2(u[0]);
            let a = (-nu / (2.0 * k)).clamp(-1.0, 1.0).acos();
            [(m, u, wrap(phu + a)), (m, u, wrap(phu - a))]
        })
        .filter(|(_, _, phi)| domain.contains(*phi) || domain_near(domain, *phi, 1e-3))
        .collect();
    let kappa_at = |phi: f64| -> f64 {
        prev.kappa_at(phi).unwrap_or_else(|| {
            prev.samples
                .iter()
                .min_by(|a, b| {
                    (a.phi - phi)
                        .abs()
                        .partial_cmp(&(b.phi - phi).abs())
                        .unwrap()
                })
                .map(|s| s.kappa)
                .unwrap_or(k)
        })
    };
    let below = level - 1;
    let solve = |(m, u, phi0): &(Index, [f64; 2], f64)| -> Option<Arc> {
        let g = |phi: f64| -> Option<f64> {
            let kap = kappa_at(phi);
            let d = direction(phi);
            let (mat, j) = disp
                .matrix(below, [kap * d[0] + u[0], kap * d[1] + u[1]], 1.0)
                .ok()?;
            Some(oracle_state(&mat, j).ok()?.0 - lambda)
        };
        let mut phi = *phi0;
        let mut slope = 0.0;
        for _ in 0..30 {
            let v = g(phi)?;
            let h = 1e-8;
            slope = (g(phi + h)? - g(phi - h)?) / (2.0 * h);
            if slope == 0.0 {
                return None;
            }
            let step = v / slope;
            phi -= step;
            if step.abs() < 1e-12 || v.abs() <= 8.0 * f64::EPSILON * lambda {
                break;
            }
        }
        let phi = wrap(phi);
        if !domain.contains(phi) {
            return None;
        }
        let half = eps / slope.abs();
        let _ = w;
        Some(Arc {
            lo: phi - half,
            hi: phi + half,
            root: phi,
            u: *u,
            m: *m,
            slope,
        })
    };
    let mut arcs: Vec<Arc> = candidates.par_iter().filter_map(solve).collect();
    arcs.sort_by(|a, b| a.root.partial_cmp(&b.root).unwrap().then(a.m.cmp(&b.m)));
    Ok(ResonanceArcs { level, eps, arcs })
}

/// Θ_n = Θ_{n−1} minus the level-n resonance arcs at width ε_{n−1}.
pub fn theta_next(
    disp: &Dispersion,
    level: u32,
    lambda: f64,
    prev: &IsoCurve,
) -> Result<(AngleDomain, ResonanceArcs)> {
    let eps = disp.cfg.eps.eps(level - 1, disp.k(), &disp.params);
    let arcs = resonance_arcs(disp, level, lambda, prev, eps)?;
    let dom = prev.domain.remove(level, &arcs.holes());
    Ok((dom, arcs))
}

fn domain_near(d: &AngleDomain, x: f64, w: f64) -> bool {
    near_domain(d, x, w)
}
