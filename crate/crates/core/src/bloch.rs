//! Truncated plane-wave matrices of H^(n)(t), the dense eigensolver used as
//! the independent oracle, and resolvent-norm diagnostics.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{dual_point_raw, CellSpec, Index, ModelParams, Quasimomentum};
use crate::potential::WindowedPotential;
use crate::scalar::{ComplexExt, Real, C};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationParams<T> {
    /// Basis cutoff: j with |p_j(t) − center| ≤ rho.
    pub rho: T,
    /// Series order R.
    pub order: usize,
    /// Initial quadrature nodes per contour.
    pub contour_points: usize,
    pub max_dim: usize,
    /// Ball center in absolute momentum; the origin when absent.
    pub center: Option<[T; 2]>,
}

impl<T: Real> TruncationParams<T> {
    /// Ball of radius c_ρ·k around the origin, c_ρ = 3.
    pub fn global(k: T) -> Self {
        Self {
            rho: T::lit(3.0) * k,
            order: 4,
            contour_points: 32,
            max_dim: 4000,
            center: None,
        }
    }

    /// Ball of radius `rho` around a target momentum.
    pub fn local(center: [T; 2], rho: T) -> Self {
        Self {
            rho,
            order: 4,
            contour_points: 32,
            max_dim: 4000,
            center: Some(center),
        }
    }

    pub fn with_center(&self, center: [T; 2]) -> Self {
        Self {
            center: Some(center),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > T::zero()) {
            return Err(Error::InvalidParams("rho must be positive".into()));
        }
        if self.order < 1 {
            return Err(Error::InvalidParams(
                "series order must be at least 1".into(),
            ));
        }
        if self.contour_points < 16 || !self.contour_points.is_multiple_of(2) {
            return Err(Error::InvalidParams(
                "contour points must be even and at least 16".into(),
            ));
        }
        Ok(())
    }
}

/// Circle |z − center| = radius with `nodes` trapezoid nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourSpec<T> {
    pub center: T,
    pub radius: T,
    pub nodes: usize,
}

impl<T: Real> ContourSpec<T> {
    /// Level 1: radius k^{2l−2−4s₁−δ} around k^{2l}.
    pub fn level_one(k: T, params: &ModelParams<T>, nodes: usize) -> Self {
        let l = T::from_int(params.l as i64);
        let e = T::lit(2.0) * l - T::lit(2.0) - T::lit(4.0) * params.s1 - params.delta;
        Self {
            center: T::pow2l(k * k, params.l),
            radius: k.powf(e),
            nodes,
        }
    }

    /// Level n ≥ 2: radius ε_{n−1}/2 around the previous-level eigenvalue.
    pub fn level_n(center: T, eps_prev: T, nodes: usize) -> Self {
        Self {
            center,
            radius: eps_prev / T::lit(2.0),
            nodes,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlochMatrix<T: Real> {
    pub level: u32,
    pub l: u32,
    pub t: Quasimomentum<T>,
    pub cell: CellSpec<T>,
    /// Ordered by |p_j(t)|, then j.
    pub basis: Vec<Index>,
    pub momenta: Vec<[T; 2]>,
    /// |p_m(t)|^{2l}.
    pub diag: Vec<T>,
    /// H₀ + W₁ + … + W_{n−1}.
    pub lower: DMatrix<C<T>>,
    /// W_n, unscaled.
    pub top: DMatrix<C<T>>,
    pub alpha: T,
    lookup: HashMap<Index, usize>,
}

impl<T: Real> BlochMatrix<T> {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// H₀ + W₁ + … + W_{n−1} + αW_n.
    pub fn matrix(&self) -> DMatrix<C<T>> {
        let a = C::new(self.alpha, T::zero());
        &self.lower + self.top.map(|v| v * a)
    }

    pub fn position(&self, j: Index) -> Option<usize> {
        self.lookup.get(&j).copied()
    }

    /// Max Σ|w| bound of the full potential part; also a scale for tolerances.
    pub fn scale(&self) -> T {
        let dmax = self.diag.iter().fold(T::zero(), |m, d| m.max(*d));
        let vmax = (0..self.dim())
            .map(|i| {
                (0..self.dim()).filter(|&k| k != i).fold(T::zero(), |s, k| {
                    s + self.lower[(i, k)].norm_r() + self.top[(i, k)].norm_r()
                })
            })
            .fold(T::zero(), |m, v| m.max(v));
        dmax + vmax
    }
}

/// Lattice indices j with |p_j(t) − center| ≤ ρ, ordered by |p_j(t)| then j.
pub fn basis_indices<T: Real>(
    t: [T; 2],
    cell: &CellSpec<T>,
    trunc: &TruncationParams<T>,
) -> Vec<Index> {
    let w = cell.widths();
    let c = trunc.center.unwrap_or([T::zero(), T::zero()]);
    let rho = trunc.rho;
    let lo: Vec<i64> = (0..2)
        .map(|i| ((c[i] - rho - t[i]) / w[i]).floor().to_i64().unwrap())
        .collect();
    let hi: Vec<i64> = (0..2)
        .map(|i| ((c[i] + rho - t[i]) / w[i]).ceil().to_i64().unwrap())
        .collect();
    let mut out: Vec<(T, Index)> = Vec::new();
    for j0 in lo[0]..=hi[0] {
        for j1 in lo[1]..=hi[1] {
            let p = dual_point_raw([j0, j1], t, cell);
            let d0 = p[0] - c[0];
            let d1 = p[1] - c[1];
            if d0 * d0 + d1 * d1 <= rho * rho {
                out.push((p[0] * p[0] + p[1] * p[1], [j0, j1]));
            }
        }
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    out.into_iter().map(|x| x.1).collect()
}

/// Matrix of H₀ + W₁ + … + W_{level−1} + αW_level on the truncated basis.
///
/// `windows[i]` holds W_{i+1} on its own lattice; it is embedded into the
/// level lattice by the period ratio 2^{M_level − M_{i+1}}.
pub fn assemble<T: Real>(
    level: u32,
    t: &Quasimomentum<T>,
    windows: &[WindowedPotential<T>],
    cell: &CellSpec<T>,
    l: u32,
    trunc: &TruncationParams<T>,
    alpha: T,
) -> Result<BlochMatrix<T>> {
    trunc.validate()?;
    if t.level != cell.level {
        return Err(Error::LevelMismatch {
            got: t.level,
            want: cell.level,
        });
    }
    if alpha < -T::one() || alpha > T::one() {
        return Err(Error::InvalidParams("alpha must lie in [-1, 1]".into()));
    }
    if windows.len() < level as usize {
        return Err(Error::InvalidParams(format!(
            "need {level} windowed potentials"
        )));
    }
    let basis = basis_indices(t.t, cell, trunc);
    if basis.len() > trunc.max_dim {
        return Err(Error::DimensionTooLarge {
            dim: basis.len(),
            max: trunc.max_dim,
        });
    }
    assemble_on(level, t, windows, cell, l, basis, alpha)
}

/// As [`assemble`] on an explicit basis (kept fixed under small moves of t).
pub fn assemble_on<T: Real>(
    level: u32,
    t: &Quasimomentum<T>,
    windows: &[WindowedPotential<T>],
    cell: &CellSpec<T>,
    l: u32,
    basis: Vec<Index>,
    alpha: T,
) -> Result<BlochMatrix<T>> {
    if t.level != cell.level {
        return Err(Error::LevelMismatch {
            got: t.level,
            want: cell.level,
        });
    }
    if windows.len() < level as usize {
        return Err(Error::InvalidParams(format!(
            "need {level} windowed potentials"
        )));
    }
    if basis.is_empty() {
        return Err(Error::EmptyBasis);
    }
    let d = basis.len();
    let lookup: HashMap<Index, usize> = basis.iter().enumerate().map(|(i, j)| (*j, i)).collect();
    let momenta: Vec<[T; 2]> = basis
        .iter()
        .map(|j| dual_point_raw(*j, t.t, cell))
        .collect();
    let diag: Vec<T> = momenta
        .iter()
        .map(|p| T::pow2l(p[0] * p[0] + p[1] * p[1], l))
        .collect();
    let mut lower = DMatrix::from_element(d, d, C::default());
    let mut top = DMatrix::from_element(d, d, C::default());
    for (i, v) in diag.iter().enumerate() {
        lower[(i, i)] = C::new(*v, T::zero());
    }
    let m_top = windows[(level - 1) as usize].m_hi;
    for (wi, w) in windows.iter().take(level as usize).enumerate() {
        if w.is_zero() {
            continue;
        }
        let shift = m_top.saturating_sub(w.m_hi);
        let coeffs = w.embedded(shift);
        let target = if wi + 1 == level as usize {
            &mut top
        } else {
            &mut lower
        };
        for (row, m) in basis.iter().enumerate() {
            for (q, v) in &coeffs {
                let col_idx = [m[0] - q[0], m[1] - q[1]];
                if let Some(&col) = lookup.get(&col_idx) {
                    target[(row, col)] += *v;
                }
            }
        }
    }
    Ok(BlochMatrix {
        level,
        l,
        t: *t,
        cell: *cell,
        basis,
        momenta,
        diag,
        lower,
        top,
        alpha,
        lookup,
    })
}

/// max |A − A*| over entries.
pub fn hermitian_deviation<T: Real>(a: &DMatrix<C<T>>) -> T {
    let n = a.nrows();
    let mut dev = T::zero();
    for i in 0..n {
        for k in i..n {
            dev = dev.max((a[(i, k)] - a[(k, i)].conj()).norm_r());
        }
    }
    dev
}

/// Eigen-decomposition of a Hermitian matrix, block by block over the
/// connected components of its sparsity pattern. Eigenvalues ascending.
pub fn eigh<T: Real>(a: &DMatrix<C<T>>) -> (Vec<T>, DMatrix<C<T>>) {
    let n = a.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for k in i + 1..n {
            if a[(i, k)].norm_r() != T::zero() || a[(k, i)].norm_r() != T::zero() {
                let (ri, rk) = (find(&mut parent, i), find(&mut parent, k));
                if ri != rk {
                    parent[ri.max(rk)] = ri.min(rk);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        let g = *slot.entry(r).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    let mut pairs: Vec<(T, usize, Vec<(usize, C<T>)>)> = Vec::with_capacity(n);
    for g in &groups {
        let m = g.len();
        let sub = DMatrix::from_fn(m, m, |r, c| a[(g[r], g[c])]);
        let eig = SymmetricEigen::new(sub);
        for e in 0..m {
            let v: Vec<(usize, C<T>)> = (0..m).map(|r| (g[r], eig.eigenvectors[(r, e)])).collect();
            pairs.push((eig.eigenvalues[e], g[0], v));
        }
    }
    pairs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
    let mut vecs = DMatrix::from_element(n, n, C::default());
    let mut vals = Vec::with_capacity(n);
    for (col, (val, _, v)) in pairs.into_iter().enumerate() {
        vals.push(val);
        for (r, x) in v {
            vecs[(r, col)] = x;
        }
    }
    (vals, vecs)
}

fn check_hermitian<T: Real>(m: &BlochMatrix<T>, a: &DMatrix<C<T>>) -> Result<()> {
    let dev = hermitian_deviation(a);
    let tol = T::lit(1e-13) * m.scale();
    if dev > tol {
        return Err(Error::NonHermitian {
            deviation: dev.to_f64_lossy(),
            tolerance: tol.to_f64_lossy(),
        });
    }
    Ok(())
}

/// All eigenpairs with eigenvalue in `window`, ascending, unit eigenvectors.
pub fn oracle_eigs<T: Real>(m: &BlochMatrix<T>, window: (T, T)) -> Result<Vec<(T, DVector<C<T>>)>> {
    let a = m.matrix();
    check_hermitian(m, &a)?;
    let (vals, vecs) = eigh(&a);
    Ok(vals
        .iter()
        .enumerate()
        .filter(|(_, v)| **v >= window.0 && **v <= window.1)
        .map(|(i, v)| (*v, vecs.column(i).into_owned()))
        .collect())
}

/// The eigenpair with the largest overlap |⟨e_j, v⟩| with the plane wave e_j.
pub fn oracle_state<T: Real>(m: &BlochMatrix<T>, j: Index) -> Result<(T, DVector<C<T>>, T)> {
    let pos = m.position(j).ok_or(Error::EmptyBasis)?;
    let a = m.matrix();
    check_hermitian(m, &a)?;
    let (vals, vecs) = eigh(&a);
    let mut best = 0usize;
    let mut best_ov = -T::one();
    for c in 0..vals.len() {
        let ov = vecs[(pos, c)].norm_r();
        if ov > best_ov + T::lit(1e-12) {
            best_ov = ov;
            best = c;
        }
    }
    Ok((vals[best], vecs.column(best).into_owned(), best_ov))
}

/// 1/min|λ_i − z|: the resolvent norm of the truncated Hermitian matrix.
pub fn resolvent_gap<T: Real>(m: &BlochMatrix<T>, z: C<T>) -> Result<T> {
    let a = m.matrix();
    check_hermitian(m, &a)?;
    let (vals, _) = eigh(&a);
    let gap = vals
        .iter()
        .map(|v| (C::new(*v, T::zero()) - z).norm_r())
        .fold(T::max_value().unwrap(), |a, b| a.min(b));
    if gap <= T::lit(1e-12) * m.scale() {
        return Err(Error::Pole);
    }
    Ok(T::one() / gap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{reduce_to_cell, LevelSchedule};
    use crate::potential::{build_potential, windows, Decay, Recipe};
    use std::f64::consts::PI;

    fn params() -> ModelParams<f64> {
        ModelParams::new(2, 2.0 * PI, 2.0 * PI, 3.0, 0.5, 0.2).unwrap()
    }

    fn setup(
        recipe: Recipe<f64>,
        k: f64,
        levels: u32,
    ) -> (LevelSchedule<f64>, Vec<WindowedPotential<f64>>) {
        let p = params();
        let sched = LevelSchedule::new(&p, k, levels);
        let spec = build_potential(
            &p,
            &recipe,
            sched.m_of(levels),
            &Decay::Relaxed(vec![1.0, 1e-2, 1e-4]),
        )
        .unwrap();
        let w = windows(&spec, levels, k).unwrap();
        (sched, w)
    }

    #[test]
    fn free_operator_is_diagonal() {
        let (sched, w) = setup(Recipe::Empty, 5.0, 1);
        let cell = sched.cell(1);
        let t = Quasimomentum {
            t: [0.13, 0.41],
            level: 1,
        };
        let m = assemble(1, &t, &w, &cell, 2, &TruncationParams::global(1.0), 1.0).unwrap();
        for i in 0..m.dim() {
            let p = m.momenta[i];
            assert_eq!(m.matrix()[(i, i)].re, (p[0] * p[0] + p[1] * p[1]).powi(2));
            for k in 0..m.dim() {
                if k != i {
                    assert_eq!(m.matrix()[(i, k)], C::default());
                }
            }
        }
        let eigs = oracle_eigs(&m, (f64::MIN, f64::MAX)).unwrap();
        let mut d = m.diag.clone();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (e, x) in eigs.iter().zip(d) {
            assert_eq!(e.0, x);
        }
    }

    #[test]
    fn cosine_has_symmetric_off_diagonals() {
        let (sched, w) = setup(Recipe::cosine(0.1), 5.0, 1);
        let t = Quasimomentum {
            t: [0.13, 0.41],
            level: 1,
        };
        let m = assemble(
            1,
            &t,
            &w,
            &sched.cell(1),
            2,
            &TruncationParams::global(1.0),
            1.0,
        )
        .unwrap();
        let a = m.matrix();
        assert!(hermitian_deviation(&a) == 0.0);
        let i = m.position([0, 0]).unwrap();
        let k = m.position([1, 0]).unwrap();
        assert_eq!(a[(i, k)], C::new(0.1, 0.0));
        assert_eq!(a[(k, i)], C::new(0.1, 0.0));
        let nnz = (0..m.dim())
            .filter(|&c| c != i && a[(i, c)] != C::default())
            .count();
        assert!(nnz <= 4);
    }

    #[test]
    fn one_by_one_truncation() {
        let (sched, w) = setup(Recipe::cosine(0.1), 5.0, 1);
        let t = Quasimomentum {
            t: [0.3, 0.2],
            level: 1,
        };
        let trunc = TruncationParams::local([0.3, 0.2], 0.1);
        let m = assemble(1, &t, &w, &sched.cell(1), 2, &trunc, 1.0).unwrap();
        assert_eq!(m.dim(), 1);
        let e = oracle_eigs(&m, (f64::MIN, f64::MAX)).unwrap();
        assert_eq!(e[0].0, (0.09f64 + 0.04).powi(2));
    }

    #[test]
    fn two_by_two_matches_closed_form() {
        let (sched, w) = setup(Recipe::cosine(0.05), 5.0, 1);
        // momenta (0.5, 0.2) and (−0.5, 0.2) are degenerate; the ball keeps only them
        let t = Quasimomentum {
            t: [0.5, 0.2],
            level: 1,
        };
        let trunc = TruncationParams::local([0.0, 0.2], 0.55);
        let m = assemble(1, &t, &w, &sched.cell(1), 2, &trunc, 1.0).unwrap();
        assert_eq!(m.dim(), 2);
        let e = oracle_eigs(&m, (f64::MIN, f64::MAX)).unwrap();
        let d0 = m.diag[0];
        let d1 = m.diag[1];
        let mean = 0.5 * (d0 + d1);
        let half = 0.5 * (d0 - d1);
        let r = (half * half + 0.05f64 * 0.05).sqrt();
        assert!((e[0].0 - (mean - r)).abs() < 1e-14 * mean);
        assert!((e[1].0 - (mean + r)).abs() < 1e-14 * mean);
    }

    #[test]
    fn alpha_zero_level_two_embeds_level_one() {
        let rec = Recipe::Explicit(vec![
            Recipe::cosine_block(1, 0.1),
            Recipe::cosine_block(2, 0.004),
        ]);
        let (sched, w) = setup(rec, 10.0, 2);
        let kappa = [7.31, 6.77];
        let trunc = TruncationParams::local(kappa, 2.0);
        let (t1, _) = reduce_to_cell(kappa, &sched.cell(1));
        let (t2, _) = reduce_to_cell(kappa, &sched.cell(2));
        let m1 = assemble(1, &t1, &w, &sched.cell(1), 2, &trunc, 1.0).unwrap();
        let m2 = assemble(2, &t2, &w, &sched.cell(2), 2, &trunc, 0.0).unwrap();
        let a1 = m1.matrix();
        let a2 = m2.matrix();
        // match by absolute momentum
        let find = |m: &BlochMatrix<f64>, p: [f64; 2]| {
            m.momenta
                .iter()
                .position(|q| (q[0] - p[0]).abs() < 1e-12 && (q[1] - p[1]).abs() < 1e-12)
        };
        for i in 0..m1.dim() {
            let ii = find(&m2, m1.momenta[i]).unwrap();
            for k in 0..m1.dim() {
                let kk = find(&m2, m1.momenta[k]).unwrap();
                assert!((a1[(i, k)] - a2[(ii, kk)]).norm_r() < 1e-9);
            }
        }
    }

    #[test]
    fn resolvent_of_free_operator() {
        let (sched, w) = setup(Recipe::Empty, 5.0, 1);
        let t = Quasimomentum {
            t: [0.13, 0.41],
            level: 1,
        };
        let m = assemble(
            1,
            &t,
            &w,
            &sched.cell(1),
            2,
            &TruncationParams::global(1.0),
            1.0,
        )
        .unwrap();
        let k2l = 625.0;
        let gap = m
            .diag
            .iter()
            .map(|d| (d - k2l).abs())
            .fold(f64::MAX, f64::min);
        let r = resolvent_gap(&m, C::new(k2l, 0.0)).unwrap();
        assert!((r - 1.0 / gap).abs() < 1e-12 * r);
        assert_eq!(resolvent_gap(&m, C::new(m.diag[0], 0.0)), Err(Error::Pole));
    }

    #[test]
    fn dimension_cap_rejects() {
        let (sched, w) = setup(Recipe::Empty, 5.0, 1);
        let t = Quasimomentum {
            t: [0.1, 0.1],
            level: 1,
        };
        let mut trunc = TruncationParams::global(5.0);
        trunc.max_dim = 10;
        match assemble(1, &t, &w, &sched.cell(1), 2, &trunc, 1.0) {
            Err(Error::DimensionTooLarge { max: 10, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_precision_assembly() {
        let p = ModelParams::<f32>::new(
            2,
            std::f32::consts::TAU,
            std::f32::consts::TAU,
            3.0,
            0.5,
            0.2,
        )
        .unwrap();
        let sched = LevelSchedule::new(&p, 5.0f32, 1);
        let spec =
            build_potential(&p, &Recipe::cosine(0.05f32), 1, &Decay::Relaxed(vec![1.0])).unwrap();
        let w = windows(&spec, 1, 5.0f32).unwrap();
        let t = Quasimomentum {
            t: [0.13f32, 0.41],
            level: 1,
        };
        let m = assemble(
            1,
            &t,
            &w,
            &sched.cell(1),
            2,
            &TruncationParams::local([3.0f32, 4.0], 2.0),
            1.0,
        )
        .unwrap();
        let e = oracle_eigs(&m, (0.0, 1e6)).unwrap();
        assert_eq!(e.len(), m.dim());
        assert!(e.windows(2).all(|p| p[0].0 <= p[1].0));
    }
}
