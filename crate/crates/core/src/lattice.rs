//! Dual lattices, quasimomentum cells at every refinement level, the
//! parallel shift into a cell and the refinement offset sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::choose_m;
use crate::scalar::Real;

pub type Index = [i64; 2];

/// Global problem data. `l` is the operator order: λ = k^{2l}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    pub l: u32,
    pub b1: T,
    pub b2: T,
    pub eta: T,
    pub delta: T,
    pub s1: T,
}

impl<T: Real> ModelParams<T> {
    /// Rejects inputs violating 2δ < 2l − 2 − 4s₁.
    pub fn new(l: u32, b1: T, b2: T, eta: T, delta: T, s1: T) -> Result<Self> {
        let p = Self {
            l,
            b1,
            b2,
            eta,
            delta,
            s1,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let two = T::lit(2.0);
        if self.l < 1 {
            return Err(Error::InvalidParams("l must be a positive integer".into()));
        }
        if !(self.b1 > T::zero() && self.b2 > T::zero()) {
            return Err(Error::InvalidParams(
                "periods b1, b2 must be positive".into(),
            ));
        }
        if !(self.eta > two) {
            return Err(Error::InvalidParams("eta must exceed 2".into()));
        }
        if !(self.delta > T::zero()) || !(self.s1 > T::zero()) {
            return Err(Error::InvalidParams("delta and s1 must be positive".into()));
        }
        let lhs = two * self.delta;
        let rhs = T::from_int(2 * self.l as i64 - 2) - T::lit(4.0) * self.s1;
        if !(lhs < rhs) {
            return Err(Error::InvalidParams(format!(
                "2*delta = {} must be below 2l-2-4s1 = {}",
                lhs.to_f64_lossy(),
                rhs.to_f64_lossy()
            )));
        }
        Ok(())
    }

    fn lf(&self) -> T {
        T::from_int(self.l as i64)
    }

    /// γ₀ = 2l − 2 − 4s₁ − 2δ.
    pub fn gamma0(&self) -> T {
        T::lit(2.0) * self.lf() - T::lit(2.0) - T::lit(4.0) * self.s1 - T::lit(2.0) * self.delta
    }

    /// γ₁ = 2l − 4 − 7s₁ − 2δ.
    pub fn gamma1(&self) -> T {
        T::lit(2.0) * self.lf() - T::lit(4.0) - T::lit(7.0) * self.s1 - T::lit(2.0) * self.delta
    }

    /// γ₂ = 2l − 2 − 4s₁ − 3δ.
    pub fn gamma2(&self) -> T {
        T::lit(2.0) * self.lf() - T::lit(2.0) - T::lit(4.0) * self.s1 - T::lit(3.0) * self.delta
    }

    /// γ₃ = δ/2.
    pub fn gamma3(&self) -> T {
        self.delta / T::lit(2.0)
    }

    /// γ₄ = (4l − 3 − 4s₁ − 3δ)/2l.
    pub fn gamma4(&self) -> T {
        (T::lit(4.0) * self.lf() - T::lit(3.0) - T::lit(4.0) * self.s1 - T::lit(3.0) * self.delta)
            / (T::lit(2.0) * self.lf())
    }

    /// γ₅ = (4l − 5 − 8s₁ − 4δ)/2l.
    pub fn gamma5(&self) -> T {
        (T::lit(4.0) * self.lf() - T::lit(5.0) - T::lit(8.0) * self.s1 - T::lit(4.0) * self.delta)
            / (T::lit(2.0) * self.lf())
    }

    /// s_n = 2^{n−1} s₁.
    pub fn s(&self, n: u32) -> T {
        self.s1 * T::lit(2f64.powi(n as i32 - 1))
    }
}

/// Quasimomentum cell of level `level`: box [0, 2π/(N̂a₁)) × [0, 2π/(N̂a₂)).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSpec<T> {
    pub level: u32,
    pub n_hat: u64,
    pub a: [T; 2],
}

impl<T: Real> CellSpec<T> {
    pub fn new(level: u32, n_hat: u64, a: [T; 2]) -> Result<Self> {
        if level < 1 || n_hat < 1 || !(a[0] > T::zero() && a[1] > T::zero()) {
            return Err(Error::InvalidParams(
                "cell needs level >= 1, N >= 1, a > 0".into(),
            ));
        }
        Ok(Self { level, n_hat, a })
    }

    /// Periods of the level: N̂·a.
    pub fn periods(&self) -> [T; 2] {
        let n = T::from_u64(self.n_hat).unwrap();
        [n * self.a[0], n * self.a[1]]
    }

    /// Cell side lengths 2π/(N̂aᵢ); also the dual-lattice spacing.
    pub fn widths(&self) -> [T; 2] {
        let p = self.periods();
        [T::two_pi() / p[0], T::two_pi() / p[1]]
    }

    pub fn area(&self) -> T {
        let w = self.widths();
        w[0] * w[1]
    }

    pub fn contains(&self, t: [T; 2]) -> bool {
        let w = self.widths();
        (0..2).all(|i| t[i] >= T::zero() && t[i] < w[i])
    }
}

/// A point of the cell of the given level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quasimomentum<T> {
    pub t: [T; 2],
    pub level: u32,
}

/// p_j(t) = 2πj/(N̂a) + t.
pub fn dual_point<T: Real>(j: Index, t: &Quasimomentum<T>, cell: &CellSpec<T>) -> Result<[T; 2]> {
    if t.level != cell.level {
        return Err(Error::LevelMismatch {
            got: t.level,
            want: cell.level,
        });
    }
    Ok(dual_point_raw(j, t.t, cell))
}

pub(crate) fn dual_point_raw<T: Real>(j: Index, t: [T; 2], cell: &CellSpec<T>) -> [T; 2] {
    let w = cell.widths();
    [
        T::from_int(j[0]) * w[0] + t[0],
        T::from_int(j[1]) * w[1] + t[1],
    ]
}

/// The parallel shift of a momentum into the cell: κ = p_j(t) with t in the box.
pub fn reduce_to_cell<T: Real>(kappa: [T; 2], cell: &CellSpec<T>) -> (Quasimomentum<T>, Index) {
    let w = cell.widths();
    let mut t = [T::zero(); 2];
    let mut j = [0i64; 2];
    for i in 0..2 {
        let q = (kappa[i] / w[i]).floor();
        let mut ji = q.to_i64().expect("momentum within integer range");
        let mut ti = kappa[i] - T::from_int(ji) * w[i];
        if ti < T::zero() {
            ji -= 1;
            ti += w[i];
        }
        if ti >= w[i] {
            ji += 1;
            ti -= w[i];
        }
        // snap rounding spill at the box edges
        let tol = T::eps() * T::lit(4.0) * (w[i] + kappa[i].abs());
        if ti < T::zero() {
            ti = T::zero();
        }
        if w[i] - ti <= tol {
            ji += 1;
            ti = T::zero();
        }
        t[i] = ti;
        j[i] = ji;
    }
    (
        Quasimomentum {
            t,
            level: cell.level,
        },
        j,
    )
}

/// Periods and cells for the levels 1..=n_max at a given k.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSchedule<T> {
    pub k: T,
    /// M₁, M₂, … (entry n−1 holds M_n).
    pub m: Vec<u32>,
    /// Level-1 periods a = 2^{M₁−1} b.
    pub a: [T; 2],
}

impl<T: Real> LevelSchedule<T> {
    pub fn new(params: &ModelParams<T>, k: T, n_max: u32) -> Self {
        let m: Vec<u32> = (1..=n_max.max(1)).map(|n| choose_m(n, k, params)).collect();
        let scale = T::lit(2f64.powi(m[0] as i32 - 1));
        Self {
            k,
            m,
            a: [scale * params.b1, scale * params.b2],
        }
    }

    pub fn levels(&self) -> u32 {
        self.m.len() as u32
    }

    pub fn m_of(&self, n: u32) -> u32 {
        self.m[(n - 1) as usize]
    }

    /// N̂ at level n: 2^{M_n − M₁}.
    pub fn n_hat(&self, n: u32) -> u64 {
        1u64 << (self.m_of(n) - self.m[0])
    }

    /// N_{n−1} = 2^{M_n − M_{n−1}}, the refinement factor from level n−1 to n.
    pub fn refinement(&self, n: u32) -> u64 {
        1u64 << (self.m_of(n) - self.m_of(n - 1))
    }

    pub fn cell(&self, n: u32) -> CellSpec<T> {
        CellSpec {
            level: n,
            n_hat: self.n_hat(n),
            a: self.a,
        }
    }
}

/// Offsets 2πp/(N̂a), p ∈ {0…N−1}², splitting a level-(m−1) cell into level-m cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementOffsets<T> {
    pub level: u32,
    pub n: u64,
    pub p: Vec<Index>,
    pub offsets: Vec<[T; 2]>,
}

impl<T: Real> RefinementOffsets<T> {
    /// Offsets of a refinement by `n` of a cell with cumulative factor `n_hat_prev`.
    pub fn from_factor(level: u32, n: u64, n_hat_prev: u64, a: [T; 2]) -> Self {
        let fine = CellSpec {
            level,
            n_hat: n_hat_prev * n,
            a,
        };
        let w = fine.widths();
        let mut p = Vec::with_capacity((n * n) as usize);
        let mut offsets = Vec::with_capacity((n * n) as usize);
        for p1 in 0..n as i64 {
            for p2 in 0..n as i64 {
                p.push([p1, p2]);
                offsets.push([T::from_int(p1) * w[0], T::from_int(p2) * w[1]]);
            }
        }
        Self {
            level,
            n,
            p,
            offsets,
        }
    }
}

/// Offsets P for the step from level−1 to level, with N from the period schedule.
pub fn refinement_offsets<T: Real>(
    level: u32,
    params: &ModelParams<T>,
    k: T,
) -> Result<RefinementOffsets<T>> {
    if level < 2 {
        return Err(Error::LevelTooLow(level));
    }
    let sched = LevelSchedule::new(params, k, level);
    Ok(RefinementOffsets::from_factor(
        level,
        sched.refinement(level),
        sched.n_hat(level - 1),
        sched.a,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cell(n_hat: u64, a: [f64; 2]) -> CellSpec<f64> {
        CellSpec::new(1, n_hat, a).unwrap()
    }

    #[test]
    fn dual_point_examples() {
        let c = cell(1, [2.0 * PI, 2.0 * PI]);
        let q = Quasimomentum {
            t: [0.1, 0.2],
            level: 1,
        };
        assert_eq!(dual_point([0, 0], &q, &c).unwrap(), [0.1, 0.2]);
        let q0 = Quasimomentum {
            t: [0.0, 0.0],
            level: 1,
        };
        let p = dual_point([1, 0], &q0, &c).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] == 0.0);
        let c2 = cell(2, [4.0 * PI, 2.0 * PI]);
        let q2 = Quasimomentum {
            t: [0.05, 0.03],
            level: 1,
        };
        let p = dual_point([2, -1], &q2, &c2).unwrap();
        // independent scalar arithmetic: 2·2π/(2·4π) = 0.5, −2π/(2·2π) = −0.5
        assert!((p[0] - 0.55).abs() < 1e-15);
        assert!((p[1] + 0.47).abs() < 1e-15);
    }

    #[test]
    fn dual_point_rejects_level_mismatch() {
        let c = cell(1, [2.0 * PI, 2.0 * PI]);
        let q = Quasimomentum {
            t: [0.1, 0.2],
            level: 2,
        };
        assert_eq!(
            dual_point([0, 0], &q, &c),
            Err(Error::LevelMismatch { got: 2, want: 1 })
        );
    }

    #[test]
    fn reduce_examples() {
        let c = cell(1, [2.0 * PI, 2.0 * PI]);
        let (t, j) = reduce_to_cell([0.3, 0.4], &c);
        assert_eq!(j, [0, 0]);
        assert!((t.t[0] - 0.3).abs() < 1e-15 && (t.t[1] - 0.4).abs() < 1e-15);
        let (t, j) = reduce_to_cell([1.3, 0.4], &c);
        assert_eq!(j, [1, 0]);
        assert!((t.t[0] - 0.3).abs() < 1e-15);
        let c2 = cell(2, [2.0 * PI, 2.0 * PI]);
        let (t, j) = reduce_to_cell([-0.2, 2.15], &c2);
        assert!(c2.contains(t.t));
        let back = dual_point(j, &t, &c2).unwrap();
        assert!((back[0] + 0.2).abs() < 1e-14 && (back[1] - 2.15).abs() < 1e-14);
        assert_eq!(j, [-1, 4]);
    }

    #[test]
    fn boundary_snaps_into_cell() {
        let c = cell(1, [2.0 * PI, 2.0 * PI]);
        let (t, j) = reduce_to_cell([1.0, -1.0], &c);
        assert!(c.contains(t.t));
        assert_eq!(j, [1, -1]);
        assert_eq!(t.t, [0.0, 0.0]);
    }

    #[test]
    fn params_reject_violations() {
        assert!(ModelParams::new(2, 6.0, 6.0, 3.0, 0.7, 0.2).is_err());
        assert!(ModelParams::new(2, 6.0, 6.0, 1.5, 0.1, 0.2).is_err());
        let p: ModelParams<f64> = ModelParams::new(2, 6.0, 6.0, 3.0, 0.5, 0.2).unwrap();
        assert!((p.gamma0() - 0.2).abs() < 1e-12);
        assert!((p.gamma3() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn offsets_quartering() {
        let o = RefinementOffsets::<f64>::from_factor(2, 2, 1, [2.0 * PI, 2.0 * PI]);
        assert_eq!(o.offsets.len(), 4);
        assert_eq!(o.offsets[0], [0.0, 0.0]);
        let want = [[0.0, 0.0], [0.0, 0.5], [0.5, 0.0], [0.5, 0.5]];
        for (g, w) in o.offsets.iter().zip(want) {
            assert!((g[0] - w[0]).abs() < 1e-15 && (g[1] - w[1]).abs() < 1e-15);
        }
        let single = RefinementOffsets::<f64>::from_factor(2, 1, 1, [2.0 * PI, 2.0 * PI]);
        assert_eq!(single.offsets, vec![[0.0, 0.0]]);
    }

    #[test]
    fn offsets_by_four_are_separated() {
        let a = [2.0 * PI, 3.0 * PI];
        let o = RefinementOffsets::<f64>::from_factor(2, 4, 1, a);
        assert_eq!(o.offsets.len(), 16);
        let min_sep = 2.0 * PI / (4.0 * a[0].max(a[1]));
        for i in 0..16 {
            for k in i + 1..16 {
                let d = ((o.offsets[i][0] - o.offsets[k][0]).powi(2)
                    + (o.offsets[i][1] - o.offsets[k][1]).powi(2))
                .sqrt();
                assert!(d >= min_sep - 1e-15);
            }
        }
    }

    #[test]
    fn level_one_rejected_for_offsets() {
        let p = ModelParams::new(2, 2.0 * PI, 2.0 * PI, 3.0, 0.5, 0.2).unwrap();
        assert_eq!(refinement_offsets(1, &p, 10.0), Err(Error::LevelTooLow(1)));
        let o = refinement_offsets(2, &p, 10.0).unwrap();
        assert_eq!(o.n * o.n, o.offsets.len() as u64);
    }

    #[test]
    fn works_in_single_precision() {
        let c = CellSpec::<f32>::new(1, 2, [std::f32::consts::TAU, std::f32::consts::TAU]).unwrap();
        let (t, j) = reduce_to_cell([1.3f32, -0.7], &c);
        assert!(c.contains(t.t));
        let back = dual_point(j, &t, &c).unwrap();
        assert!((back[0] - 1.3).abs() < 1e-6 && (back[1] + 0.7).abs() < 1e-6);
    }
}
