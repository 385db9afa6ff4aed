//! Limit-periodic potential V = Σ V_r with doubling periods: block r has
//! periods 2^{r−1}(b₁, b₂) and is stored as Fourier coefficients on its
//! own dual lattice.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Index, LevelSchedule, ModelParams};
use crate::scalar::{ComplexExt, Real, C};

/// Per-block budget for Σ_q |v_{r,q}|.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Decay {
    /// exp(−2^{ηr}).
    Strict,
    /// User budgets for r = 1, 2, …; the last entry repeats.
    Relaxed(Vec<f64>),
}

impl Decay {
    pub fn log_budget<T: Real>(&self, r: u32, params: &ModelParams<T>) -> f64 {
        match self {
            Decay::Strict => -(2f64.powf(params.eta.to_f64_lossy() * r as f64)),
            Decay::Relaxed(b) => {
                let i = ((r as usize).max(1) - 1).min(b.len().saturating_sub(1));
                b.get(i).copied().unwrap_or(0.0).ln()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockRecipe<T> {
    pub r: u32,
    pub coeffs: Vec<(Index, [T; 2])>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomBlock<T> {
    pub r: u32,
    /// Modes with max(|q₁|, |q₂|) ≤ radius.
    pub radius: i64,
    pub amplitude: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Recipe<T> {
    Empty,
    Explicit(Vec<BlockRecipe<T>>),
    Random {
        seed: u64,
        blocks: Vec<RandomBlock<T>>,
    },
}

impl<T: Real> Recipe<T> {
    /// v_{±e₁} = v_{±e₂} = c on block r: V_r = 2c(cos + cos).
    pub fn cosine_block(r: u32, c: T) -> BlockRecipe<T> {
        let z = T::zero();
        BlockRecipe {
            r,
            coeffs: vec![
                ([1, 0], [c, z]),
                ([-1, 0], [c, z]),
                ([0, 1], [c, z]),
                ([0, -1], [c, z]),
            ],
        }
    }

    pub fn cosine(c: T) -> Self {
        Recipe::Explicit(vec![Self::cosine_block(1, c)])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block<T> {
    pub r: u32,
    pub coeffs: BTreeMap<Index, C<T>>,
    /// Factor applied to fit the decay budget (1 when untouched).
    pub scale: f64,
    pub log_budget: f64,
}

impl<T: Real> Block<T> {
    pub fn l1(&self) -> T {
        self.coeffs.values().fold(T::zero(), |s, v| s + v.norm_r())
    }

    pub fn log_l1(&self) -> f64 {
        self.l1().to_f64_lossy().ln()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec<T> {
    pub params: ModelParams<T>,
    pub decay: Decay,
    /// Blocks r = 1..=r_max (entry r−1).
    pub blocks: Vec<Block<T>>,
}

impl<T: Real> PotentialSpec<T> {
    pub fn r_max(&self) -> u32 {
        self.blocks.len() as u32
    }

    pub fn is_zero(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| b.coeffs.values().all(|v| v.norm_r() == T::zero()))
    }

    /// Rows (r, q₁, q₂, re, im) in block then index order.
    pub fn coefficient_rows(&self) -> Vec<(u32, i64, i64, T, T)> {
        let mut rows = Vec::new();
        for b in &self.blocks {
            for (q, v) in &b.coeffs {
                rows.push((b.r, q[0], q[1], v.re, v.im));
            }
        }
        rows
    }
}

fn neg(q: Index) -> Index {
    [-q[0], -q[1]]
}

/// Builds V from a recipe, enforcing zero mean, Hermitian symmetry and the
/// per-block decay budget (proportional scaling, recorded in `Block::scale`).
pub fn build_potential<T: Real>(
    params: &ModelParams<T>,
    recipe: &Recipe<T>,
    r_max: u32,
    decay: &Decay,
) -> Result<PotentialSpec<T>> {
    params.validate()?;
    let mut raw: Vec<BTreeMap<Index, C<T>>> = vec![BTreeMap::new(); r_max as usize];
    match recipe {
        Recipe::Empty => {}
        Recipe::Explicit(blocks) => {
            for b in blocks {
                if b.r < 1 || b.r > r_max {
                    return Err(Error::InvalidParams(format!(
                        "block r={} outside 1..={}",
                        b.r, r_max
                    )));
                }
                let map = &mut raw[(b.r - 1) as usize];
                for (q, v) in &b.coeffs {
                    let entry = map.entry(*q).or_default();
                    *entry += C::new(v[0], v[1]);
                }
            }
        }
        Recipe::Random { seed, blocks } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            for b in blocks {
                if b.r < 1 || b.r > r_max {
                    return Err(Error::InvalidParams(format!(
                        "block r={} outside 1..={}",
                        b.r, r_max
                    )));
                }
                let map = &mut raw[(b.r - 1) as usize];
                let amp = b.amplitude.to_f64_lossy();
                for q1 in -b.radius..=b.radius {
                    for q2 in -b.radius..=b.radius {
                        if !(q1 > 0 || (q1 == 0 && q2 > 0)) {
                            continue;
                        }
                        let re: f64 = rng.gen_range(-amp..=amp);
                        let im: f64 = rng.gen_range(-amp..=amp);
                        let v = C::new(T::lit(re), T::lit(im));
                        map.insert([q1, q2], v);
                        map.insert([-q1, -q2], v.conj());
                    }
                }
            }
        }
    }

    let mut blocks = Vec::with_capacity(r_max as usize);
    for (i, mut map) in raw.into_iter().enumerate() {
        let r = i as u32 + 1;
        map.retain(|_, v| v.norm_r() != T::zero());
        if let Some(v0) = map.get(&[0, 0]) {
            if v0.norm_r() != T::zero() {
                return Err(Error::InvalidParams(format!(
                    "block r={r} has a nonzero mean"
                )));
            }
        }
        let scale_ref = map.values().fold(T::zero(), |m, v| m.max(v.norm_r()));
        for (q, v) in &map {
            let partner = map.get(&neg(*q)).copied().unwrap_or_default();
            if (partner - v.conj()).norm_r() > T::lit(1e-12) * scale_ref {
                return Err(Error::NonHermitianRecipe {
                    r,
                    q1: q[0],
                    q2: q[1],
                });
            }
        }
        let log_budget = decay.log_budget(r, params);
        let mut block = Block {
            r,
            coeffs: map,
            scale: 1.0,
            log_budget,
        };
        let log_l1 = block.log_l1();
        if log_l1 > log_budget {
            let scale = (log_budget - log_l1).exp();
            let s = T::lit(scale);
            for v in block.coeffs.values_mut() {
                *v = v.scale(s);
            }
            block.coeffs.retain(|_, v| v.norm_r() != T::zero());
            block.scale = scale;
        }
        blocks.push(block);
    }
    Ok(PotentialSpec {
        params: *params,
        decay: decay.clone(),
        blocks,
    })
}

/// M_n = max(M_{n−1} + 1, round(s_n log₂ k)), M₀ = 0, ties rounding up.
pub fn choose_m<T: Real>(n: u32, k: T, params: &ModelParams<T>) -> u32 {
    let log2k = k.to_f64_lossy().log2();
    let s1 = params.s1.to_f64_lossy();
    let mut m = 0u32;
    for i in 1..=n.max(1) {
        let target = (s1 * 2f64.powi(i as i32 - 1) * log2k + 0.5).floor();
        let target = if target < 0.0 { 0 } else { target as u32 };
        m = (m + 1).max(target);
    }
    m
}

/// W_n = Σ_{r=M_{n−1}+1}^{M_n} V_r on the level-n dual lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowedPotential<T> {
    pub level: u32,
    /// M_{n−1} (exclusive lower block) and M_n.
    pub m_lo: u32,
    pub m_hi: u32,
    pub coeffs: BTreeMap<Index, C<T>>,
    /// log of exp(−k^{η s_{n−1}}) for n ≥ 2.
    pub log_bound: Option<f64>,
}

impl<T: Real> WindowedPotential<T> {
    pub fn zero(level: u32) -> Self {
        Self {
            level,
            m_lo: 0,
            m_hi: 0,
            coeffs: BTreeMap::new(),
            log_bound: None,
        }
    }

    pub fn l1(&self) -> T {
        self.coeffs.values().fold(T::zero(), |s, v| s + v.norm_r())
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn get(&self, q: Index) -> C<T> {
        self.coeffs.get(&q).copied().unwrap_or_default()
    }

    /// Coefficients on a lattice refined by 2^shift (indices scale by 2^shift).
    pub fn embedded(&self, shift: u32) -> BTreeMap<Index, C<T>> {
        let f = 1i64 << shift;
        self.coeffs
            .iter()
            .map(|(q, v)| ([q[0] * f, q[1] * f], *v))
            .collect()
    }

    /// Σ|coefficients| ≤ exp(−k^{η s_{n−1}}), compared in log-space; true for n = 1.
    pub fn within_bound(&self) -> bool {
        match self.log_bound {
            None => true,
            Some(b) => self.is_zero() || self.l1().to_f64_lossy().ln() <= b,
        }
    }

    /// W(x) = Σ w_m e^{2πi⟨m, x/P⟩} with P the level periods.
    pub fn evaluate(&self, x: [T; 2], periods: [T; 2]) -> C<T> {
        let mut s = C::default();
        for (m, w) in &self.coeffs {
            let ph = T::two_pi()
                * (T::from_int(m[0]) * x[0] / periods[0] + T::from_int(m[1]) * x[1] / periods[1]);
            s += *w * C::new(ph.cos(), ph.sin());
        }
        s
    }
}

pub fn window_sum<T: Real>(spec: &PotentialSpec<T>, n: u32, k: T) -> Result<WindowedPotential<T>> {
    if n < 1 {
        return Err(Error::LevelTooLow(n));
    }
    let sched = LevelSchedule::new(&spec.params, k, n);
    let m_hi = sched.m_of(n);
    let m_lo = if n == 1 { 0 } else { sched.m_of(n - 1) };
    // V = 0 has every block, all zero
    if m_hi > spec.r_max() && !spec.is_zero() {
        return Err(Error::MissingBlocks {
            from: m_lo + 1,
            to: m_hi,
            available: spec.r_max(),
        });
    }
    let mut coeffs: BTreeMap<Index, C<T>> = BTreeMap::new();
    for r in m_lo + 1..=m_hi.min(spec.r_max()) {
        let f = 1i64 << (m_hi - r);
        for (q, v) in &spec.blocks[(r - 1) as usize].coeffs {
            *coeffs.entry([q[0] * f, q[1] * f]).or_default() += *v;
        }
    }
    coeffs.remove(&[0, 0]);
    coeffs.retain(|_, v| v.norm_r() != T::zero());
    let log_bound = if n >= 2 {
        let e = spec.params.eta.to_f64_lossy() * spec.params.s(n - 1).to_f64_lossy();
        Some(-k.to_f64_lossy().powf(e))
    } else {
        None
    };
    Ok(WindowedPotential {
        level: n,
        m_lo,
        m_hi,
        coeffs,
        log_bound,
    })
}

/// W₁ … W_n for one k.
pub fn windows<T: Real>(
    spec: &PotentialSpec<T>,
    n_max: u32,
    k: T,
) -> Result<Vec<WindowedPotential<T>>> {
    (1..=n_max).map(|n| window_sum(spec, n, k)).collect()
}
