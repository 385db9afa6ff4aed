//! Perturbation series for a non-resonant eigenvalue and its spectral
//! projection, with coefficients from trapezoid quadrature on a circle:
//!
//! g_r = (−1)^r/(2πi r) Tr∮((H̃ − z)^{-1}W)^r dz,
//! G_r = (−1)^{r+1}/(2πi) ∮((H̃ − z)^{-1}W)^r (H̃ − z)^{-1} dz.
//!
//! At level 1 H̃ = H₀ is diagonal. At level n ≥ 2 H̃ = H^(n−1) embedded in
//! the level-n basis; it is diagonalized once and the integrals run in its
//! eigenbasis, where the resolvent is diagonal.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bloch::{assemble_on, eigh, BlochMatrix, ContourSpec};
use crate::error::{Error, Result};
use crate::lattice::{CellSpec, Index, ModelParams, Quasimomentum};
use crate::potential::WindowedPotential;
use crate::scalar::{ComplexExt, Real, C};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Asymptotic inequalities with their k-power rates.
    Strict,
    /// Oracle equivalence with computed tail estimates.
    Desk,
}

/// How ε_n is obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EpsilonPolicy {
    /// exp(−k^{ηs_n}/4), floored.
    Strict { floor: f64 },
    /// rel_n·λ; the last entry repeats.
    Desk { rel: Vec<f64> },
}

impl Default for EpsilonPolicy {
    fn default() -> Self {
        EpsilonPolicy::Desk { rel: vec![1e-8] }
    }
}

impl EpsilonPolicy {
    /// ln ε_n = −k^{ηs_n}/4.
    pub fn log_strict<T: Real>(n: u32, k: T, params: &ModelParams<T>) -> f64 {
        let e = params.eta.to_f64_lossy() * params.s(n).to_f64_lossy();
        -k.to_f64_lossy().powf(e) / 4.0
    }

    pub fn eps<T: Real>(&self, n: u32, k: T, params: &ModelParams<T>) -> T {
        match self {
            EpsilonPolicy::Strict { floor } => {
                T::lit(Self::log_strict(n, k, params).exp().max(*floor))
            }
            EpsilonPolicy::Desk { rel } => {
                let i = ((n as usize).max(1) - 1).min(rel.len().saturating_sub(1));
                let lam = T::pow2l(k * k, params.l);
                T::lit(rel.get(i).copied().unwrap_or(1e-8)) * lam
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesConfig<T> {
    pub params: ModelParams<T>,
    /// λ = k^{2l}; sets the level-1 radius and ε_n.
    pub k: T,
    pub mode: Mode,
    pub order: usize,
    pub nodes: usize,
    pub max_nodes: usize,
    pub eps: EpsilonPolicy,
}

impl<T: Real> SeriesConfig<T> {
    pub fn desk(params: ModelParams<T>, k: T) -> Self {
        Self {
            params,
            k,
            mode: Mode::Desk,
            order: 4,
            nodes: 32,
            max_nodes: 4096,
            eps: EpsilonPolicy::default(),
        }
    }

    pub fn with_order(mut self, order: usize) -> Self {
        self.order = order;
        self
    }

    pub fn lambda(&self) -> T {
        T::pow2l(self.k * self.k, self.params.l)
    }

    /// Contour radius at a level.
    pub fn radius(&self, level: u32) -> T {
        if level <= 1 {
            ContourSpec::level_one(self.k, &self.params, self.nodes).radius
        } else {
            self.eps.eps(level - 1, self.k, &self.params) / T::lit(2.0)
        }
    }

    /// Level-1 bound k^{2l−2−4s₁−γ₀r−δ} on |g_r|.
    pub fn level_one_term_bound(&self, r: usize) -> T {
        let p = &self.params;
        let l = T::from_int(p.l as i64);
        let e = T::lit(2.0) * l
            - T::lit(2.0)
            - T::lit(4.0) * p.s1
            - p.gamma0() * T::from_int(r as i64)
            - p.delta;
        self.k.powf(e)
    }
}

/// Unperturbed data in the basis where the unperturbed resolvent is diagonal.
#[derive(Clone, Debug)]
pub struct Prepared<T: Real> {
    pub level: u32,
    /// Unperturbed eigenvalues.
    pub d: Vec<T>,
    /// Unperturbed eigenvectors as columns (identity at level 1).
    pub u: Option<DMatrix<C<T>>>,
    /// W_n in the unperturbed basis.
    pub w: DMatrix<C<T>>,
    /// Position of the enclosed state.
    pub jpos: usize,
    /// Position of e_j in the plane-wave basis.
    pub plane_pos: usize,
    pub contour: ContourSpec<T>,
}

impl<T: Real> Prepared<T> {
    /// Checks that the contour encloses exactly the chosen state with a margin.
    pub fn check_contour(&self) -> Result<()> {
        let c = self.contour.center;
        let r = self.contour.radius;
        let mut inside = 1usize;
        let mut worst: Option<(T, T)> = None;
        for (i, di) in self.d.iter().enumerate() {
            if i == self.jpos {
                continue;
            }
            let dist = (*di - c).abs();
            if dist < r * T::lit(0.9) {
                inside += 1;
            } else if (dist - r).abs() < r / T::lit(10.0) {
                worst = Some((*di, (dist - r).abs()));
            }
        }
        if inside != 1 {
            return Err(Error::ContourCount(inside));
        }
        if let Some((e, g)) = worst {
            return Err(Error::ResonantContour {
                eigenvalue: e.to_f64_lossy(),
                gap: g.to_f64_lossy(),
                radius: r.to_f64_lossy(),
            });
        }
        Ok(())
    }
}

/// Builds the unperturbed representation for the state continuing e_j.
pub fn prepare<T: Real>(
    level: u32,
    m: &BlochMatrix<T>,
    j: Index,
    cfg: &SeriesConfig<T>,
) -> Result<Prepared<T>> {
    let plane_pos = m.position(j).ok_or(Error::EmptyBasis)?;
    let (d, u, w, jpos) = if level <= 1 {
        (m.diag.clone(), None, m.top.clone(), plane_pos)
    } else {
        let (vals, vecs) = eigh(&m.lower);
        let mut best = 0;
        let mut best_ov = -T::one();
        for c in 0..vals.len() {
            let ov = vecs[(plane_pos, c)].norm_r();
            if ov > best_ov + T::lit(1e-12) {
                best_ov = ov;
                best = c;
            }
        }
        let w = vecs.adjoint() * &m.top * &vecs;
        (vals, Some(vecs), w, best)
    };
    let contour = ContourSpec {
        center: d[jpos],
        radius: cfg.radius(level),
        nodes: cfg.nodes,
    };
    let p = Prepared {
        level,
        d,
        u,
        w,
        jpos,
        plane_pos,
        contour,
    };
    p.check_contour()?;
    Ok(p)
}

/// Quadrature results: g_r, optional G_r (unperturbed basis) and G_r v.
#[derive(Clone, Debug)]
pub struct Coefficients<T: Real> {
    pub g: Vec<T>,
    /// Imaginary parts of the g_r quadratures (zero up to rounding).
    pub g_imag: Vec<T>,
    pub big_g: Vec<DMatrix<C<T>>>,
    pub applied: Vec<DVector<C<T>>>,
    pub nodes: usize,
    /// max over nodes of ‖(H̃ − z)^{-1}‖.
    pub max_resolvent: T,
}

struct Sums<T: Real> {
    g: Vec<C<T>>,
    gmax: Vec<T>,
    mats: Vec<DMatrix<C<T>>>,
    mmax: T,
    vecs: Vec<DVector<C<T>>>,
    vmax: T,
    count: usize,
    max_res: T,
}

fn node_contrib<T: Real>(
    p: &Prepared<T>,
    order: usize,
    zeta: C<T>,
    want_mats: bool,
    v: Option<&DVector<C<T>>>,
    s: &mut Sums<T>,
) {
    let n = p.d.len();
    let c = p.contour.center;
    let res: Vec<C<T>> =
        p.d.iter()
            .map(|di| {
                let den = C::new(*di - c, T::zero()) - zeta;
                C::new(T::one(), T::zero()) / den
            })
            .collect();
    for r in &res {
        s.max_res = s.max_res.max(r.norm_r());
    }
    let mut a = p.w.clone();
    for i in 0..n {
        for k in 0..n {
            a[(i, k)] *= res[i];
        }
    }
    // powers A^1..A^h, h = ceil(order/2), or all of them when G_r are wanted
    let h = if want_mats { order } else { order.div_ceil(2) };
    let mut pw: Vec<DMatrix<C<T>>> = vec![a.clone()];
    for _ in 1..h {
        let next = pw.last().unwrap() * &a;
        pw.push(next);
    }
    for r in 1..=order {
        let tr = if want_mats || r == 1 {
            pw[r - 1].trace()
        } else {
            // Tr(A^r) = Tr(A^a A^b) with a + b = r
            let x = &pw[r.div_ceil(2) - 1];
            let y = &pw[r / 2 - 1];
            let mut acc = C::default();
            for i in 0..n {
                for k in 0..n {
                    acc += x[(i, k)] * y[(k, i)];
                }
            }
            acc
        };
        let sign = if r % 2 == 0 { T::one() } else { -T::one() };
        let f = tr * zeta * C::new(sign / T::from_int(r as i64), T::zero());
        s.gmax[r - 1] = s.gmax[r - 1].max(f.norm_r());
        s.g[r - 1] += f;
    }
    if want_mats {
        for r in 1..=order {
            let sign = if r % 2 == 1 { T::one() } else { -T::one() };
            let mut m = pw[r - 1].clone();
            for k in 0..n {
                let f = res[k] * zeta * C::new(sign, T::zero());
                for i in 0..n {
                    m[(i, k)] *= f;
                }
            }
            s.mmax = s.mmax.max(m.norm());
            s.mats[r - 1] += m;
        }
    }
    if let Some(v) = v {
        let mut x = DVector::from_fn(n, |i, _| res[i] * v[i]);
        for r in 1..=order {
            x = &a * &x;
            let sign = if r % 2 == 1 { T::one() } else { -T::one() };
            let y = x.map(|e| e * zeta * C::new(sign, T::zero()));
            s.vmax = s.vmax.max(y.norm());
            s.vecs[r - 1] += y;
        }
    }
    s.count += 1;
}

/// Trapezoid quadrature of g_r (and optionally G_r, G_r v) for r = 1..=order,
/// doubling the node count until successive values agree to 1e-10.
pub fn quadrature<T: Real>(
    p: &Prepared<T>,
    order: usize,
    want_mats: bool,
    v: Option<&DVector<C<T>>>,
    max_nodes: usize,
) -> Result<Coefficients<T>> {
    let n = p.d.len();
    let mut s = Sums {
        g: vec![C::default(); order],
        gmax: vec![T::zero(); order],
        mats: if want_mats {
            vec![DMatrix::from_element(n, n, C::default()); order]
        } else {
            vec![]
        },
        mmax: T::zero(),
        vecs: if v.is_some() {
            vec![DVector::from_element(n, C::default()); order]
        } else {
            vec![]
        },
        vmax: T::zero(),
        count: 0,
        max_res: T::zero(),
    };
    let rho = p.contour.radius;
    let node = |k: usize, q: usize| {
        let th = T::two_pi() * T::from_int(k as i64) / T::from_int(q as i64);
        C::new(rho * th.cos(), rho * th.sin())
    };
    let mut q = p.contour.nodes.max(16);
    for k in 0..q {
        node_contrib(p, order, node(k, q), want_mats, v, &mut s);
    }
    let snapshot = |s: &Sums<T>| -> (Vec<C<T>>, Vec<DMatrix<C<T>>>, Vec<DVector<C<T>>>) {
        let inv = C::new(T::one() / T::from_int(s.count as i64), T::zero());
        (
            s.g.iter().map(|x| *x * inv).collect(),
            s.mats.iter().map(|m| m.map(|e| e * inv)).collect(),
            s.vecs.iter().map(|m| m.map(|e| e * inv)).collect(),
        )
    };
    let mut prev = snapshot(&s);
    let tol = T::lit(1e-10);
    let noise = T::lit(256.0) * T::eps();
    loop {
        if 2 * q > max_nodes {
            let change = prev.0.iter().fold(T::zero(), |m, x| m.max(x.norm_r()));
            return Err(Error::NonConvergence {
                change: change.to_f64_lossy(),
                nodes: q,
            });
        }
        for k in 0..q {
            node_contrib(p, order, node(2 * k + 1, 2 * q), want_mats, v, &mut s);
        }
        q *= 2;
        let cur = snapshot(&s);
        let mut ok = true;
        let mut worst = T::zero();
        for r in 0..order {
            let d = (cur.0[r] - prev.0[r]).norm_r();
            let lim = tol * cur.0[r].norm_r() + noise * s.gmax[r];
            if d > lim {
                ok = false;
                worst = worst.max(d);
            }
        }
        for r in 0..cur.1.len() {
            let d = (&cur.1[r] - &prev.1[r]).norm();
            if d > tol * cur.1[r].norm() + noise * s.mmax {
                ok = false;
                worst = worst.max(d);
            }
        }
        for r in 0..cur.2.len() {
            let d = (&cur.2[r] - &prev.2[r]).norm();
            if d > tol * cur.2[r].norm() + noise * s.vmax {
                ok = false;
                worst = worst.max(d);
            }
        }
        prev = cur;
        if ok {
            break;
        }
        if q >= max_nodes {
            return Err(Error::NonConvergence {
                change: worst.to_f64_lossy(),
                nodes: q,
            });
        }
    }
    Ok(Coefficients {
        g: prev.0.iter().map(|x| x.re).collect(),
        g_imag: prev.0.iter().map(|x| x.im).collect(),
        big_g: prev.1,
        applied: prev.2,
        nodes: q,
        max_resolvent: s.max_res,
    })
}

/// (g_r, G_r) for r = 1..=order; G_r are returned in the plane-wave basis.
pub fn series_coefficients<T: Real>(
    level: u32,
    m: &BlochMatrix<T>,
    j: Index,
    cfg: &SeriesConfig<T>,
) -> Result<(Vec<T>, Vec<DMatrix<C<T>>>)> {
    let p = prepare(level, m, j, cfg)?;
    let c = quadrature(&p, cfg.order, true, None, cfg.max_nodes)?;
    let big = c.big_g.iter().map(|g| to_plane_basis(&p, g)).collect();
    Ok((c.g, big))
}

fn to_plane_basis<T: Real>(p: &Prepared<T>, g: &DMatrix<C<T>>) -> DMatrix<C<T>> {
    match &p.u {
        None => g.clone(),
        Some(u) => u * g * u.adjoint(),
    }
}

/// g₂ = Σ_q |w_q|²/(p_j^{2l} − p_{j+q}^{2l}) over the truncated basis.
pub fn g2_closed_form<T: Real>(m: &BlochMatrix<T>, j: Index) -> Result<T> {
    let pos = m.position(j).ok_or(Error::EmptyBasis)?;
    let dj = m.diag[pos];
    let mut acc = T::zero();
    for i in 0..m.dim() {
        let w = m.top[(i, pos)];
        if i == pos || w.norm_r() == T::zero() {
            continue;
        }
        let den = dj - m.diag[i];
        if den.abs() <= T::lit(1e-12) * dj.abs() {
            let q = m.basis[i];
            return Err(Error::ResonantPair {
                j0: j[0],
                j1: j[1],
                q0: q[0] - j[0],
                q1: q[1] - j[1],
            });
        }
        acc += (w.re * w.re + w.im * w.im) / den;
    }
    Ok(acc)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesEigenvalue<T> {
    pub level: u32,
    /// p_j^{2l}(t) at level 1, λ^(n−1) at level n.
    pub base: T,
    /// g_r, r = 1..=R (unscaled by α).
    pub terms: Vec<T>,
    pub alpha: T,
    /// Σ α^r g_r.
    pub increment: T,
    pub tail_bound: T,
    pub total: T,
    pub nodes: usize,
    pub contour_center: T,
    pub contour_radius: T,
}

fn tail_estimate<T: Real>(
    level: u32,
    cfg: &SeriesConfig<T>,
    alpha: T,
    w_norm: T,
    max_res: T,
    radius: T,
) -> T {
    let r_max = cfg.order;
    let a = alpha.abs();
    match (cfg.mode, level) {
        (Mode::Strict, 1) => {
            let ratio = cfg.k.powf(-cfg.params.gamma0());
            let first = cfg.level_one_term_bound(r_max + 1) * a.powi(r_max as i32 + 1);
            first / (T::one() - ratio * a)
        }
        (Mode::Strict, _) => {
            // (3/2)ε(4ε³)^r summed over r > R, in log-space
            let le = EpsilonPolicy::log_strict(level - 1, cfg.k, &cfg.params);
            let log_first = (1.5f64).ln() + le + (r_max as f64 + 1.0) * (4f64.ln() + 3.0 * le);
            T::lit(log_first.exp() * 2.0)
        }
        (Mode::Desk, _) => {
            let q = a * w_norm * max_res;
            if q >= T::one() {
                T::max_value().unwrap()
            } else {
                radius * q.powi(r_max as i32 + 1) / (T::one() - q)
            }
        }
    }
}

/// Max absolute row sum, an upper bound on the operator norm.
pub fn row_norm<T: Real>(w: &DMatrix<C<T>>) -> T {
    (0..w.nrows())
        .map(|i| (0..w.ncols()).fold(T::zero(), |s, k| s + w[(i, k)].norm_r()))
        .fold(T::zero(), |m, v| m.max(v))
}

/// λ^(n)(α) = base + Σ α^r g_r. `base` defaults to the enclosed unperturbed
/// eigenvalue; at level n ≥ 2 pass the previous-level series value.
pub fn eigenvalue_series<T: Real>(
    level: u32,
    m: &BlochMatrix<T>,
    j: Index,
    alpha: T,
    base: Option<T>,
    cfg: &SeriesConfig<T>,
) -> Result<SeriesEigenvalue<T>> {
    let p = prepare(level, m, j, cfg)?;
    let base = base.unwrap_or(p.d[p.jpos]);
    if alpha == T::zero() || p.w.iter().all(|x| x.norm_r() == T::zero()) {
        return Ok(SeriesEigenvalue {
            level,
            base,
            terms: vec![T::zero(); cfg.order],
            alpha,
            increment: T::zero(),
            tail_bound: T::zero(),
            total: base,
            nodes: 0,
            contour_center: p.contour.center,
            contour_radius: p.contour.radius,
        });
    }
    let c = quadrature(&p, cfg.order, false, None, cfg.max_nodes)?;
    let mut inc = T::zero();
    let mut ap = T::one();
    for g in &c.g {
        ap *= alpha;
        inc += ap * *g;
    }
    let tail = tail_estimate(
        level,
        cfg,
        alpha,
        row_norm(&p.w),
        c.max_resolvent,
        p.contour.radius,
    );
    Ok(SeriesEigenvalue {
        level,
        base,
        terms: c.g,
        alpha,
        increment: inc,
        tail_bound: tail,
        total: base + inc,
        nodes: c.nodes,
        contour_center: p.contour.center,
        contour_radius: p.contour.radius,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesProjection<T: Real> {
    pub level: u32,
    /// Rank-one unperturbed projector.
    pub base: DMatrix<C<T>>,
    /// G_r (plane-wave basis, unscaled by α).
    pub corrections: Vec<DMatrix<C<T>>>,
    pub alpha: T,
    pub total: DMatrix<C<T>>,
    pub nodes: usize,
}

impl<T: Real> SeriesProjection<T> {
    pub fn trace(&self) -> T {
        self.total.trace().re
    }

    /// ‖E² − E‖ / ‖E‖ (Frobenius).
    pub fn idempotence_defect(&self) -> T {
        let e2 = &self.total * &self.total;
        (e2 - &self.total).norm() / self.total.norm()
    }
}

fn base_projector<T: Real>(p: &Prepared<T>) -> DMatrix<C<T>> {
    let n = p.d.len();
    match &p.u {
        None => {
            let mut e = DMatrix::from_element(n, n, C::default());
            e[(p.jpos, p.jpos)] = C::new(T::one(), T::zero());
            e
        }
        Some(u) => {
            let col = u.column(p.jpos);
            col * col.adjoint()
        }
    }
}

/// E^(n)(α) = E_base + Σ α^r G_r on the truncated basis.
pub fn projection_series<T: Real>(
    level: u32,
    m: &BlochMatrix<T>,
    j: Index,
    alpha: T,
    cfg: &SeriesConfig<T>,
) -> Result<SeriesProjection<T>> {
    let p = prepare(level, m, j, cfg)?;
    let base = base_projector(&p);
    if alpha == T::zero() {
        return Ok(SeriesProjection {
            level,
            base: base.clone(),
            corrections: vec![],
            alpha,
            total: base,
            nodes: 0,
        });
    }
    let c = quadrature(&p, cfg.order, true, None, cfg.max_nodes)?;
    let corrections: Vec<DMatrix<C<T>>> = c.big_g.iter().map(|g| to_plane_basis(&p, g)).collect();
    let mut total = base.clone();
    let mut ap = T::one();
    for g in &corrections {
        ap *= alpha;
        let s = C::new(ap, T::zero());
        total += g.map(|x| x * s);
    }
    Ok(SeriesProjection {
        level,
        base,
        corrections,
        alpha,
        total,
        nodes: c.nodes,
    })
}

/// E^(n)(α) v without forming the matrix (matrix–vector work per node).
pub fn projection_apply<T: Real>(
    level: u32,
    m: &BlochMatrix<T>,
    j: Index,
    alpha: T,
    v: &DVector<C<T>>,
    cfg: &SeriesConfig<T>,
) -> Result<DVector<C<T>>> {
    let p = prepare(level, m, j, cfg)?;
    let vb = match &p.u {
        None => v.clone(),
        Some(u) => u.adjoint() * v,
    };
    let mut out = DVector::from_element(vb.len(), C::default());
    out[p.jpos] = vb[p.jpos];
    if alpha != T::zero() {
        let c = quadrature(&p, cfg.order, false, Some(&vb), cfg.max_nodes)?;
        let mut ap = T::one();
        for x in &c.applied {
            ap *= alpha;
            out += x.map(|e| e * C::new(ap, T::zero()));
        }
    }
    Ok(match &p.u {
        None => out,
        Some(u) => u * out,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeReport<T> {
    pub fd_gradient: [T; 2],
    /// 2l|p_j|^{2l−2} p_j.
    pub leading: [T; 2],
    pub relative_deviation: T,
    /// Max |∂²λ/∂t_i²| by second differences, and the bound 4l²|p_j|^{2l−2}.
    pub second_max: T,
    pub second_bound: T,
    /// |D(h) − D(h/2)| / |D(h/2) − D(h/4)| against the leading term.
    pub richardson_ratio: T,
    pub step: T,
}

/// Central finite-difference gradient of λ^(1)(α, t) against the leading term.
#[allow(clippy::too_many_arguments)]
pub fn derivative_checks<T: Real>(
    t: &Quasimomentum<T>,
    j: Index,
    windows: &[WindowedPotential<T>],
    cell: &CellSpec<T>,
    basis: &[Index],
    alpha: T,
    step: T,
    cfg: &SeriesConfig<T>,
) -> Result<DerivativeReport<T>> {
    if !(step > T::eps() * T::lit(1e3) * cfg.k) {
        return Err(Error::StepUnderflow);
    }
    let l = cfg.params.l;
    let eval = |dt: [T; 2]| -> Result<T> {
        let tt = Quasimomentum {
            t: [t.t[0] + dt[0], t.t[1] + dt[1]],
            level: t.level,
        };
        let m = assemble_on(1, &tt, windows, cell, l, basis.to_vec(), alpha)?;
        Ok(eigenvalue_series(1, &m, j, alpha, None, cfg)?.total)
    };
    let grad = |h: T| -> Result<[T; 2]> {
        let mut g = [T::zero(); 2];
        for i in 0..2 {
            let mut e = [T::zero(); 2];
            e[i] = h;
            let plus = eval(e)?;
            e[i] = -h;
            let minus = eval(e)?;
            g[i] = (plus - minus) / (T::lit(2.0) * h);
        }
        Ok(g)
    };
    let m0 = assemble_on(1, t, windows, cell, l, basis.to_vec(), alpha)?;
    let pos = m0.position(j).ok_or(Error::EmptyBasis)?;
    let pj = m0.momenta[pos];
    let sq = pj[0] * pj[0] + pj[1] * pj[1];
    let lf = T::from_int(l as i64);
    let coef = T::lit(2.0) * lf * T::pow2l(sq, l - 1);
    let leading = [coef * pj[0], coef * pj[1]];
    let g1 = grad(step)?;
    let g2 = grad(step / T::lit(2.0))?;
    let g4 = grad(step / T::lit(4.0))?;
    let norm = |v: [T; 2]| (v[0] * v[0] + v[1] * v[1]).sqrt();
    let dev = norm([g1[0] - leading[0], g1[1] - leading[1]]) / norm(leading);
    let center = eval([T::zero(), T::zero()])?;
    let mut second = T::zero();
    for i in 0..2 {
        let mut e = [T::zero(); 2];
        e[i] = step;
        let plus = eval(e)?;
        e[i] = -step;
        let minus = eval(e)?;
        second = second.max(((plus - T::lit(2.0) * center + minus) / (step * step)).abs());
    }
    let num = norm([g1[0] - g2[0], g1[1] - g2[1]]);
    let den = norm([g2[0] - g4[0], g2[1] - g4[1]]);
    let ratio = if den > T::zero() {
        num / den
    } else {
        T::zero()
    };
    Ok(DerivativeReport {
        fd_gradient: g1,
        leading,
        relative_deviation: dev,
        second_max: second,
        second_bound: T::lit(4.0) * lf * lf * T::pow2l(sq, l - 1),
        richardson_ratio: ratio,
        step,
    })
}

/// |λ^(1) − p_j^{2l}| ≤ 2α²k^{2l−2−4s₁−2γ₀−δ}.
pub fn strict_eigenvalue_bound<T: Real>(cfg: &SeriesConfig<T>, alpha: T) -> T {
    let p = &cfg.params;
    let l = T::from_int(p.l as i64);
    let e = T::lit(2.0) * l - T::lit(2.0) - T::lit(4.0) * p.s1 - T::lit(2.0) * p.gamma0() - p.delta;
    T::lit(2.0) * alpha * alpha * cfg.k.powf(e)
}

/// ‖E^(1) − E_j‖ ≤ 2αk^{−γ₀}.
pub fn strict_projection_bound<T: Real>(cfg: &SeriesConfig<T>, alpha: T) -> T {
    T::lit(2.0) * alpha.abs() * cfg.k.powf(-cfg.params.gamma0())
}
