//! Near-plane-wave eigenfunctions Ψ_n(κ⃗, x) = e^{i⟨κ⃗, x⟩}(1 + u_n(x)) with
//! u_n = ũ₁ + … + ũ_n, assembled level by level.
//!
//! Coefficients live on relative indices r of the level lattice: the mode r
//! carries momentum κ⃗ + r⊙w_n. Unit coefficient norm is the same as
//! ‖Ψ_n‖_{L₂(Q_n)} = |Q_n|^{1/2}.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::{assemble_on, oracle_state, BlochMatrix};
use crate::error::{Error, Result};
use crate::isoenergetic::{relative_ball, Dispersion};
use crate::lattice::{reduce_to_cell, Index};
use crate::perturb::{eigenvalue_series, projection_apply};
use crate::swisscheese::C64;

/// Samples per axis for sup norms; the coarse grid gives the error bar.
pub const GRID: usize = 256;
pub const COARSE_GRID: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Projection series applied to the plane wave, eigenvalue from the series.
    Series,
    /// Oracle eigenvector of maximal plane-wave overlap.
    Oracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupNorm {
    pub value: f64,
    /// |fine − coarse| between the two grids.
    pub error: f64,
}

/// Level-n slice of an eigenfunction record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSlice {
    pub level: u32,
    pub kappa: [f64; 2],
    pub alpha: f64,
    pub source: Source,
    /// Dual widths w_n and periods of Q_n.
    pub widths: [f64; 2],
    pub periods: [f64; 2],
    /// Relative indices and Ψ_n coefficients, Σ|c|² = 1.
    pub rel: Vec<Index>,
    pub coeffs: Vec<C64>,
    /// Fourier map of ũ_n on the level lattice.
    #[serde(with = "entries")]
    pub u_tilde: BTreeMap<Index, C64>,
    pub u_tilde_sup: SupNorm,
    pub eigenvalue: f64,
    pub tail_bound: f64,
    pub overlap: f64,
    pub residual: f64,
}

impl LevelSlice {
    pub fn coefficient(&self, r: Index) -> C64 {
        self.rel
            .iter()
            .position(|x| *x == r)
            .map(|i| self.coeffs[i])
            .unwrap_or_default()
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// u_n coefficients: c_r − δ_{r0}.
    pub fn u(&self) -> BTreeMap<Index, C64> {
        let mut m: BTreeMap<Index, C64> = self
            .rel
            .iter()
            .copied()
            .zip(self.coeffs.iter().copied())
            .collect();
        *m.entry([0, 0]).or_default() -= 1.0;
        m
    }

    /// ⟨Ψ_n, Ψ_{n−1}⟩ over Q_n divided by |Q_n|, with `prev` refined by `n`.
    pub fn inner_with(&self, prev: &LevelSlice, n: i64) -> C64 {
        prev.rel
            .iter()
            .zip(&prev.coeffs)
            .map(|(r, c)| self.coefficient([r[0] * n, r[1] * n]) * c.conj())
            .sum()
    }
}

/// Index-keyed maps as lists of (index, value) pairs, since JSON keys are strings.
mod entries {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        m: &BTreeMap<Index, C64>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(m.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<BTreeMap<Index, C64>, D::Error> {
        let v: Vec<(Index, C64)> = Vec::deserialize(d)?;
        Ok(v.into_iter().collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenfunctionRecord {
    pub kappa: [f64; 2],
    pub levels: Vec<LevelSlice>,
}

impl EigenfunctionRecord {
    /// Levels 1..=`levels` at κ⃗, each phase-fixed against the one below.
    pub fn build(disp: &Dispersion, kappa: [f64; 2], levels: u32, source: Source) -> Result<Self> {
        let mut out: Vec<LevelSlice> = Vec::with_capacity(levels as usize);
        for n in 1..=levels {
            let s = assemble_psi(disp, n, kappa, out.last(), source)?;
            out.push(s);
        }
        Ok(Self { kappa, levels: out })
    }
}

/// Basis of relative indices: the level ball plus the refined support of the
/// previous level so that ũ_n = u_n − u_{n−1} is not a truncation artifact.
fn level_rel(disp: &Dispersion, level: u32, prev: Option<&LevelSlice>) -> Vec<Index> {
    let cell = disp.sched.cell(level);
    let mut set: BTreeSet<Index> = BTreeSet::new();
    let mut rel = relative_ball(&cell, disp.rho[(level - 1) as usize]);
    if let Some(p) = prev {
        let n = disp.sched.refinement(level) as i64;
        for r in &p.rel {
            let q = [r[0] * n, r[1] * n];
            if !rel.contains(&q) {
                rel.push(q);
            }
        }
    }
    rel.retain(|r| set.insert(*r));
    rel
}

fn matrix_for(
    disp: &Dispersion,
    level: u32,
    kappa: [f64; 2],
    rel: &[Index],
    alpha: f64,
) -> Result<(BlochMatrix<f64>, Index)> {
    let cell = disp.sched.cell(level);
    let (t, j) = reduce_to_cell(kappa, &cell);
    let basis: Vec<Index> = rel.iter().map(|r| [j[0] + r[0], j[1] + r[1]]).collect();
    let m = assemble_on(level, &t, &disp.windows, &cell, disp.l(), basis, alpha)?;
    Ok((m, j))
}

/// Ψ_n at κ⃗. The top window enters with `disp.alpha`; `prev` (level n − 1)
/// fixes the phase and the ũ_n map.
pub fn assemble_psi(
    disp: &Dispersion,
    level: u32,
    kappa: [f64; 2],
    prev: Option<&LevelSlice>,
    source: Source,
) -> Result<LevelSlice> {
    if let Some(p) = prev {
        if p.level + 1 != level {
            return Err(Error::LevelMismatch {
                got: p.level,
                want: level - 1,
            });
        }
        if p.kappa != kappa {
            return Err(Error::IncompatibleRecords);
        }
    }
    let alpha = disp.alpha;
    let rel = level_rel(disp, level, prev);
    let (m, j) = matrix_for(disp, level, kappa, &rel, alpha)?;
    let jpos = m.position(j).ok_or(Error::EmptyBasis)?;
    let mut cfg = disp.cfg.clone();
    cfg.order = disp.orders[(level - 1) as usize];
    let (mut v, eigenvalue, tail) = match source {
        Source::Oracle => {
            let (val, vec, _) = oracle_state(&m, j)?;
            (vec, val, 0.0)
        }
        Source::Series => {
            let base = prev.map(|p| p.eigenvalue);
            let e = eigenvalue_series(level, &m, j, alpha, base, &cfg)?;
            // column j of the projection, E e_j
            let mut ej = DVector::from_element(m.dim(), C64::new(0.0, 0.0));
            ej[jpos] = C64::new(1.0, 0.0);
            let col = projection_apply(level, &m, j, alpha, &ej, &cfg)?;
            (col, e.total, e.tail_bound)
        }
    };
    let nrm = v.norm();
    if nrm == 0.0 {
        return Err(Error::ResonantPoint { overlap: 0.0 });
    }
    v /= C64::new(nrm, 0.0);
    let overlap = v[jpos].norm();
    if overlap < 0.5 {
        return Err(Error::ResonantPoint { overlap });
    }
    let cell = disp.sched.cell(level);
    let mut slice = LevelSlice {
        level,
        kappa,
        alpha,
        source,
        widths: cell.widths(),
        periods: cell.periods(),
        rel,
        coeffs: v.iter().copied().collect(),
        u_tilde: BTreeMap::new(),
        u_tilde_sup: SupNorm {
            value: 0.0,
            error: 0.0,
        },
        eigenvalue,
        tail_bound: tail,
        overlap,
        residual: 0.0,
    };
    // phase: ⟨Ψ_n, Ψ̃_{n−1}⟩ real positive, Ψ̃₀ the plane wave
    let ip = match prev {
        Some(p) => slice.inner_with(p, disp.sched.refinement(level) as i64),
        None => slice.coeffs[jpos],
    };
    if ip.norm() > 0.0 {
        let ph = ip.conj() / ip.norm();
        for c in slice.coeffs.iter_mut() {
            *c *= ph;
        }
    }
    let mut ut = slice.u();
    if let Some(p) = prev {
        let n = disp.sched.refinement(level) as i64;
        for (r, c) in p.u() {
            *ut.entry([r[0] * n, r[1] * n]).or_default() -= c;
        }
    }
    ut.retain(|_, c| c.norm() > 0.0);
    slice.u_tilde = ut;
    slice.u_tilde_sup = sup_norm(&slice.u_tilde, slice.widths, slice.periods);
    slice.residual = residual_with(&m, &slice);
    Ok(slice)
}

fn residual_with(m: &BlochMatrix<f64>, s: &LevelSlice) -> f64 {
    let v = DVector::from_vec(s.coeffs.clone());
    let mut r = m.matrix() * &v;
    r -= v.map(|c| c * s.eigenvalue);
    r.norm() / (v.norm() * s.eigenvalue.abs().max(1.0))
}

/// ‖(H^(n) − λ^(n))Ψ_n‖ / (λ^(n)‖Ψ_n‖) on the slice's truncated basis.
pub fn residual(disp: &Dispersion, s: &LevelSlice) -> Result<f64> {
    let (m, _) = matrix_for(disp, s.level, s.kappa, &s.rel, s.alpha)?;
    Ok(residual_with(&m, s))
}

/// max over an n×n grid of Q of |Σ_r a_r e^{i⟨r⊙w, x⟩}|, separable per axis.
pub fn grid_sup(
    coeffs: &BTreeMap<Index, C64>,
    widths: [f64; 2],
    periods: [f64; 2],
    n: usize,
) -> f64 {
    if coeffs.is_empty() {
        return 0.0;
    }
    let terms: Vec<(Index, C64)> = coeffs.iter().map(|(r, c)| (*r, *c)).collect();
    let phase = |r: i64, w: f64, x: f64| C64::from_polar(1.0, r as f64 * w * x);
    (0..n)
        .into_par_iter()
        .map(|iy| {
            let y = periods[1] * iy as f64 / n as f64;
            // fold the y factor into the coefficients for this row
            let row: Vec<(i64, C64)> = terms
                .iter()
                .map(|(r, c)| (r[0], c * phase(r[1], widths[1], y)))
                .collect();
            (0..n)
                .map(|ix| {
                    let x = periods[0] * ix as f64 / n as f64;
                    row.iter()
                        .map(|(r0, c)| c * phase(*r0, widths[0], x))
                        .sum::<C64>()
                        .norm()
                })
                .fold(0.0, f64::max)
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .fold(0.0, f64::max)
}

pub fn sup_norm(coeffs: &BTreeMap<Index, C64>, widths: [f64; 2], periods: [f64; 2]) -> SupNorm {
    let fine = grid_sup(coeffs, widths, periods, GRID);
    let coarse = grid_sup(coeffs, widths, periods, COARSE_GRID);
    SupNorm {
        value: fine,
        error: (fine - coarse).abs(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub level: u32,
    /// sup |Ψ_n − Ψ_{n−1}| = sup |ũ_n| on the level-n grid.
    pub sup_diff: SupNorm,
    pub eigen_diff: f64,
    /// ‖W_n‖ as the sum of absolute coefficients.
    pub w_norm: f64,
    pub within_drift: bool,
    /// eigen_diff of this level over that of the previous one.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub kappa: [f64; 2],
    pub rows: Vec<ConvergenceRow>,
    pub non_monotone: bool,
}

/// Differences between consecutive levels of one κ⃗.
pub fn convergence_report(slices: &[LevelSlice], disp: &Dispersion) -> Result<ConvergenceReport> {
    if slices.len() < 2 {
        return Err(Error::InvalidParams(
            "at least two levels are needed".into(),
        ));
    }
    let kappa = slices[0].kappa;
    if slices.iter().any(|s| s.kappa != kappa) {
        return Err(Error::IncompatibleRecords);
    }
    for w in slices.windows(2) {
        if w[1].level != w[0].level + 1 {
            return Err(Error::LevelMismatch {
                got: w[1].level,
                want: w[0].level + 1,
            });
        }
    }
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for w in slices.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let d = (b.eigenvalue - a.eigenvalue).abs();
        let w_norm = disp.windows[(b.level - 1) as usize].l1() * b.alpha.abs();
        let ratio = rows.last().map(|r| d / r.eigen_diff);
        rows.push(ConvergenceRow {
            level: b.level,
            sup_diff: b.u_tilde_sup,
            eigen_diff: d,
            w_norm,
            within_drift: d <= w_norm * (1.0 + 1e-12) + 1e-12 * b.eigenvalue.abs(),
            ratio,
        });
    }
    let non_monotone = rows
        .windows(2)
        .any(|r| r[1].eigen_diff > r[0].eigen_diff || r[1].sup_diff.value > r[0].sup_diff.value);
    Ok(ConvergenceReport {
        kappa,
        rows,
        non_monotone,
    })
}

/// Embedded coefficients of level n − 1 sit on the coset 0 mod N of level n.
pub fn coset_consistent(prev: &LevelSlice, next: &LevelSlice, n: i64) -> bool {
    let embedded: BTreeMap<Index, C64> = prev
        .u()
        .into_iter()
        .map(|(r, c)| ([r[0] * n, r[1] * n], c))
        .collect();
    embedded
        .keys()
        .all(|r| r[0].rem_euclid(n) == 0 && r[1].rem_euclid(n) == 0)
        && next.rel.len() >= prev.rel.len()
}
