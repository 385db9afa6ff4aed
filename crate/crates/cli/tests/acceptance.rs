//! Acceptance suite. Each test prints one line `criterion NN PASS|FAIL ...`
//! to stderr (bypassing the harness capture) and asserts unless the
//! criterion is listed in `ALLOWED_FAIL`.
//!
//! All runs use desk mode; criterion 9 additionally uses relaxed decay.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use kamspectra::bloch::{assemble_on, eigh, oracle_state};
use kamspectra::eigenfunction::{EigenfunctionRecord, Source};
use kamspectra::isoenergetic::{
    chi1, curve, direction, trace_kappa, AngleDomain, CurveGrid, Dispersion,
};
use kamspectra::lattice::{CellSpec, Index, Quasimomentum};
use kamspectra::perturb::{eigenvalue_series, g2_closed_form, Mode};
use kamspectra::potential::WindowedPotential;
use kamspectra::swisscheese::{disk_radius, pole_by_bisection, small_b_poles};
use kamspectra_cli::commands::{cmd_trace, lambda_of, offset_map, run_sweep, run_trace, theta_one};
use kamspectra_cli::config::PotentialKind;
use kamspectra_cli::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria whose failure is recorded rather than asserted.
const ALLOWED_FAIL: &[u32] = &[];

fn report(id: u32, name: &str, pass: bool, t0: Instant, budget: f64, detail: String) {
    let secs = t0.elapsed().as_secs_f64();
    let ok = pass && secs <= budget;
    let line = format!(
        "criterion {id:02} {} {name}: {detail} [{secs:.1} s of {budget:.0} s]\n",
        if ok { "PASS" } else { "FAIL" }
    );
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    if !ALLOWED_FAIL.contains(&id) {
        assert!(ok, "{line}");
    }
}

fn sci(v: &[f64]) -> String {
    let s: Vec<String> = v.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", s.join(", "))
}

fn desk(k: f64) -> RunConfig {
    RunConfig {
        k,
        mode: Mode::Desk,
        ..RunConfig::default()
    }
}

fn at(kappa: f64, phi: f64) -> [f64; 2] {
    let d = direction(phi);
    [kappa * d[0], kappa * d[1]]
}

/// The twenty sampled points of each (l, k) in the oracle run.
fn oracle_points() -> Vec<(RunConfig, Dispersion, Vec<f64>)> {
    let mut out = Vec::new();
    for l in [2u32, 3, 6] {
        for k in [5.0, 10.0, 20.0] {
            let mut cfg = desk(k);
            cfg.model.l = l;
            let disp = cfg.dispersion(k, 1).unwrap();
            let theta = chi1(lambda_of(&cfg, k), &disp.params, &disp.sched.cell(1));
            let grid = theta.grid(4096);
            let stride = (grid.len() / 20).max(1);
            let phis: Vec<f64> = grid.into_iter().step_by(stride).take(20).collect();
            out.push((cfg, disp, phis));
        }
    }
    out
}

/// Three-level relaxed-decay ladder on a φ-window. Amplitudes keep every
/// κ-shift above f64 resolution at κ ≈ 10 while ‖W_{n+1}‖ ≪ ε_n.
fn recursion_config() -> RunConfig {
    let mut cfg = desk(10.0);
    cfg.levels = 3;
    cfg.potential.kind = PotentialKind::Ladder;
    cfg.potential.amplitudes = vec![0.05, 1e-2, 1e-3];
    cfg.potential.decay = vec![1.0, 0.1, 0.01];
    cfg.truncation.eps_rel = vec![1e-4, 1e-5];
    cfg.curve.window = Some([0.30, 0.36]);
    cfg.curve.base = 2048;
    cfg.curve.depth = 2;
    cfg
}

#[test]
fn c01_oracle_equivalence() {
    let t0 = Instant::now();
    let mut tested = 0;
    let mut bad = Vec::new();
    let mut worst: f64 = 0.0;
    for (cfg, disp, phis) in oracle_points() {
        let k = cfg.k;
        let lambda = lambda_of(&cfg, k);
        let series = cfg.series(k).unwrap();
        for &phi in &phis {
            tested += 1;
            let (m, j) = disp.matrix(1, at(k, phi), 1.0).unwrap();
            let res = eigenvalue_series(1, &m, j, 1.0, None, &series.clone().with_order(4));
            match res {
                Ok(e) => {
                    let (o, _, _) = oracle_state(&m, j).unwrap();
                    let err = (e.total - o).abs();
                    worst = worst.max(err / lambda);
                    if err > e.tail_bound.max(1e-6 * lambda) {
                        bad.push(format!("l={} k={k} phi={phi:.4}: {err:e}", cfg.model.l));
                    }
                }
                Err(e) => bad.push(format!("l={} k={k} phi={phi:.4}: {e}", cfg.model.l)),
            }
        }
    }
    report(
        1,
        "oracle equivalence",
        tested == 180 && bad.is_empty(),
        t0,
        120.0,
        format!("{tested} points, max |series − oracle|/λ = {worst:.2e}, violations {bad:?}"),
    );
}

#[test]
fn c02_closed_form_g2() {
    let t0 = Instant::now();
    let mut cfg = desk(10.0);
    cfg.potential.kind = PotentialKind::Random;
    cfg.potential.radius = 2;
    cfg.seed = 7;
    let k = cfg.k;
    let disp = cfg.dispersion(k, 1).unwrap();
    let lambda = lambda_of(&cfg, k);
    let theta = chi1(lambda, &disp.params, &disp.sched.cell(1));
    let series = cfg.series(k).unwrap().with_order(2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    while n < 50 {
        let phi = rng.gen_range(0.0..2.0 * PI);
        if !theta.contains(phi) {
            continue;
        }
        let (m, j) = disp.matrix(1, at(k, phi), 1.0).unwrap();
        let q = eigenvalue_series(1, &m, j, 1.0, None, &series)
            .unwrap()
            .terms[1];
        let c = g2_closed_form(&m, j).unwrap();
        worst = worst.max((q - c).abs() / c.abs());
        n += 1;
    }
    report(
        2,
        "closed-form g2",
        worst <= 1e-9,
        t0,
        30.0,
        format!("{n} points, max relative difference {worst:.2e}"),
    );
}

#[test]
fn c03_sign_invariants() {
    let t0 = Instant::now();
    let cfg = desk(10.0);
    let k = cfg.k;
    let disp = cfg.dispersion(k, 1).unwrap();
    let lambda = lambda_of(&cfg, k);
    let series = cfg.series(k).unwrap();
    let theta = theta_one(&cfg, &disp, lambda);
    let c = curve(
        &disp,
        1,
        lambda,
        &theta,
        CurveGrid {
            base: 256,
            ..cfg.grid()
        },
        None,
    );
    let (mut g1_max, mut g2_neg, mut h1_pos) = (0.0f64, 0usize, 0usize);
    let mut g2_min = f64::INFINITY;
    let mut h1_max = f64::NEG_INFINITY;
    let mut first_bad = None;
    for s in &c.samples {
        let (m, j) = disp.matrix(1, at(k, s.phi), 1.0).unwrap();
        let e = eigenvalue_series(1, &m, j, 1.0, None, &series).unwrap();
        g1_max = g1_max.max(e.terms[0].abs());
        let g2 = g2_closed_form(&m, j).unwrap();
        let h1 = s.kappa - k;
        g2_min = g2_min.min(g2);
        h1_max = h1_max.max(h1);
        if g2 <= 0.0 {
            g2_neg += 1;
        }
        if h1 >= 0.0 {
            h1_pos += 1;
            first_bad.get_or_insert(s.phi);
        }
    }
    let pass = g1_max <= 1e-12 * lambda && g2_neg == 0 && h1_pos == 0 && !c.samples.is_empty();
    report(
        3,
        "sign invariants",
        pass,
        t0,
        60.0,
        format!(
            "{} traced angles, max |g1| = {g1_max:.2e}, min g2 = {g2_min:.3e} ({g2_neg} with g2 <= 0), \
             max h1 = {h1_max:.3e} ({h1_pos} with h1 >= 0, first at phi = {:?})",
            c.samples.len(),
            first_bad
        ),
    );
}

#[test]
fn c04_bloch_union() {
    let t0 = Instant::now();
    let mut cfg = desk(10.0);
    cfg.potential.kind = PotentialKind::Random;
    cfg.potential.radius = 2;
    cfg.seed = 11;
    let disp = cfg.dispersion(10.0, 1).unwrap();
    let l = disp.l();
    let w1 = disp.windows[0].clone();
    let cell1 = disp.sched.cell(1);
    let cell2 = CellSpec::new(2, 2 * cell1.n_hat, cell1.a).unwrap();
    let w2 = cell2.widths();
    // W₁ seen from the level-2 lattice through an empty level-2 window
    let empty = WindowedPotential {
        level: 2,
        m_lo: w1.m_hi,
        m_hi: w1.m_hi + 1,
        coeffs: BTreeMap::new(),
        log_bound: None,
    };
    let windows = vec![w1.clone(), empty];
    let center = at(10.0, 0.4);
    let radius = 5.5;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut max_dim = 0;
    for _ in 0..10 {
        let tau = [rng.gen_range(0.0..w2[0]), rng.gen_range(0.0..w2[1])];
        let mut basis2: Vec<Index> = Vec::new();
        let lo = |i: usize| ((center[i] - radius - tau[i]) / w2[i]).floor() as i64;
        let hi = |i: usize| ((center[i] + radius - tau[i]) / w2[i]).ceil() as i64;
        for m0 in lo(0)..=hi(0) {
            for m1 in lo(1)..=hi(1) {
                let p = [
                    tau[0] + m0 as f64 * w2[0] - center[0],
                    tau[1] + m1 as f64 * w2[1] - center[1],
                ];
                if p[0] * p[0] + p[1] * p[1] <= radius * radius {
                    basis2.push([m0, m1]);
                }
            }
        }
        max_dim = max_dim.max(basis2.len());
        let q2 = Quasimomentum { t: tau, level: 2 };
        let m2 = assemble_on(2, &q2, &windows, &cell2, l, basis2.clone(), 1.0).unwrap();
        let mut fine = eigh(&m2.matrix()).0;
        let mut union = Vec::new();
        for p in [[0i64, 0], [1, 0], [0, 1], [1, 1]] {
            let t1 = [tau[0] + p[0] as f64 * w2[0], tau[1] + p[1] as f64 * w2[1]];
            let basis1: Vec<Index> = basis2
                .iter()
                .filter(|m| m[0].rem_euclid(2) == p[0] && m[1].rem_euclid(2) == p[1])
                .map(|m| [(m[0] - p[0]).div_euclid(2), (m[1] - p[1]).div_euclid(2)])
                .collect();
            if basis1.is_empty() {
                continue;
            }
            let q1 = Quasimomentum { t: t1, level: 1 };
            let m1 =
                assemble_on(1, &q1, std::slice::from_ref(&w1), &cell1, l, basis1, 1.0).unwrap();
            union.extend(eigh(&m1.matrix()).0);
        }
        fine.sort_by(f64::total_cmp);
        union.sort_by(f64::total_cmp);
        if fine.len() != union.len() {
            worst = f64::INFINITY;
            continue;
        }
        for (a, b) in fine.iter().zip(&union) {
            worst = worst.max((a - b).abs() / b.abs());
        }
    }
    report(
        4,
        "Bloch union",
        worst <= 1e-9 && max_dim <= 400,
        t0,
        60.0,
        format!("10 quasimomenta, dimension <= {max_dim}, max relative mismatch {worst:.2e}"),
    );
}

#[test]
fn c05_measure_trend() {
    let t0 = Instant::now();
    let cfg = desk(10.0);
    let params = cfg.params().unwrap();
    let ks = [8.0, 16.0, 32.0, 64.0];
    let mut fr = Vec::new();
    for &k in &ks {
        let disp = cfg.dispersion(k, 1).unwrap();
        let theta = chi1(lambda_of(&cfg, k), &params, &disp.sched.cell(1));
        fr.push(1.0 - theta.length() / (2.0 * PI));
    }
    let monotone = fr.windows(2).all(|w| w[1] < w[0]);
    let (slope, _) = kamspectra::isoenergetic::fit_loglog(&ks, &fr);
    let bound = -params.delta / 4.0;
    report(
        5,
        "measure trend",
        monotone && slope <= bound && fr.iter().all(|f| *f > 0.0),
        t0,
        180.0,
        format!("deleted fractions {fr:.4?}, slope {slope:.3} (bound {bound})"),
    );
}

#[test]
fn c06_zero_count_conservation() {
    let t0 = Instant::now();
    let mut cfg = desk(10.0);
    cfg.curve.window = Some([0.25, 0.75]);
    cfg.curve.base = 8192;
    cfg.curve.depth = 0;
    let k = cfg.k;
    let disp = cfg.dispersion(k, 1).unwrap();
    let lambda = lambda_of(&cfg, k);
    let theta = theta_one(&cfg, &disp, lambda);
    let c1 = curve(&disp, 1, lambda, &theta, cfg.grid(), None);
    let rho = cfg.rho(1)[0];
    let r1 = disk_radius(1, k, &disp.params);
    let res = offset_map(&disp, &c1, &theta, [0.31, 0.17], lambda, 0.0, rho, 0).unwrap();
    let n = res.analysed.len();
    let mismatched = res
        .analysed
        .iter()
        .filter(|c| c.count_free != c.count_full)
        .count();
    let far = res
        .analysed
        .iter()
        .filter(|c| c.max_shift > r1 / 2.0 || c.max_shift.is_nan())
        .count();
    let shift = res.analysed.iter().map(|c| c.max_shift).fold(0.0, f64::max);
    report(
        6,
        "zero-count conservation",
        n >= 20 && mismatched == 0 && far == 0,
        t0,
        180.0,
        format!(
            "{n} components analysed of {} in the run, {mismatched} count mismatches, \
             max polish shift {shift:.2e} vs r1/2 = {:.2e}",
            res.components,
            r1 / 2.0
        ),
    );
}

#[test]
fn c07_small_b_poles() {
    let t0 = Instant::now();
    let cfg = desk(10.0);
    let k = cfg.k;
    let disp = cfg.dispersion(k, 1).unwrap();
    let lambda = lambda_of(&cfg, k);
    let theta = theta_one(&cfg, &disp, lambda);
    let l = disp.l() as f64;
    let inside = |phi: f64| (-2..=2).all(|i| theta.contains(phi + 0.005 * i as f64));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut cases, mut bad) = (0, Vec::new());
    let (mut worst_phi, mut worst_slope) = (0.0f64, 0.0f64);
    while cases < 10 {
        let b0 = rng.gen_range(0.01..0.05);
        let phb = rng.gen_range(0.0..2.0 * PI);
        if !(inside(phb + PI / 2.0) && inside(phb - PI / 2.0)) {
            continue;
        }
        cases += 1;
        let b = [b0 * phb.cos(), b0 * phb.sin()];
        let expect = 2.0 * l * b0 * k.powf(2.0 * l - 1.0);
        let poles = match small_b_poles(&disp, b, lambda, 0.0) {
            Ok(p) => p,
            Err(e) => {
                bad.push(format!("b0 = {b0:.4}: {e}"));
                continue;
            }
        };
        if poles.is_empty() || poles.len() > 2 {
            bad.push(format!("b0 = {b0:.4}: {} poles", poles.len()));
        }
        let signs: i32 = poles.iter().map(|p| p.sign).sum();
        if poles.len() == 2 && signs != 0 {
            bad.push(format!("b0 = {b0:.4}: signs do not alternate"));
        }
        for p in &poles {
            let phi = p.phi.re;
            match pole_by_bisection(&disp, b, lambda, 0.0, phi - 1e-5, phi + 1e-5) {
                Ok(o) => worst_phi = worst_phi.max((o - phi).abs()),
                Err(e) => bad.push(format!("b0 = {b0:.4}: oracle {e}")),
            }
            let rel = (p.slope.abs() - expect).abs() / expect;
            worst_slope = worst_slope.max(rel);
            if p.slope.signum() != p.sign as f64 {
                bad.push(format!("b0 = {b0:.4}: slope sign"));
            }
        }
    }
    report(
        7,
        "small-b pole count",
        bad.is_empty() && worst_phi <= 1e-8 && worst_slope <= 0.2,
        t0,
        60.0,
        format!("{cases} offsets, max |phi − oracle| = {worst_phi:.2e}, max slope deviation {worst_slope:.3}, issues {bad:?}"),
    );
}

#[test]
fn c08_curve_geometry() {
    let t0 = Instant::now();
    let mut free = desk(10.0);
    free.potential.kind = PotentialKind::Empty;
    let k = free.k;
    let disp = free.dispersion(k, 1).unwrap();
    let c0 = curve(
        &disp,
        1,
        lambda_of(&free, k),
        &AngleDomain::full(1),
        CurveGrid {
            base: 256,
            ..free.grid()
        },
        None,
    );
    let free_err = (c0.length() - 2.0 * PI * k).abs() / (2.0 * PI * k);
    let mut cfg = desk(10.0);
    cfg.k_grid = vec![8.0, 16.0, 32.0];
    let sweep = run_sweep(&cfg).unwrap();
    let ratios: Vec<f64> = sweep.rows.iter().map(|r| r.length_ratio).collect();
    let toward_one = ratios
        .windows(2)
        .all(|w| (1.0 - w[1]).abs() < (1.0 - w[0]).abs());
    report(
        8,
        "curve geometry",
        free_err <= 1e-10 && toward_one,
        t0,
        60.0,
        format!(
            "V = 0: relative length error {free_err:.2e}; L(D1)/2πk over k = {:?}: {ratios:.4?}",
            cfg.k_grid
        ),
    );
}

struct Recursion {
    cfg: RunConfig,
    disp: Dispersion,
    nested: bool,
    /// (φ, [κ₁, κ₂, κ₃]) on angles of the top-level curve.
    samples: Vec<(f64, [f64; 3])>,
}

/// The level-recursion run, shared by the recursion and residual criteria.
fn recursion() -> &'static Recursion {
    static RUN: OnceLock<Recursion> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = recursion_config();
        let disp = cfg.dispersion(cfg.k, 3).unwrap();
        let lambda = lambda_of(&cfg, cfg.k);
        let run = run_trace(&cfg).unwrap();
        let d: Vec<&AngleDomain> = run.outputs.levels.iter().map(|l| &l.domain).collect();
        let nested =
            d.len() == 3 && d[2].is_subset_of(d[1]) && d[1].is_subset_of(d[0]) && !d[2].is_empty();
        let top = &run.curves[2];
        let stride = (top.samples.len() / 16).max(1);
        let mut samples = Vec::new();
        for s in top.samples.iter().step_by(stride) {
            let mut kap = [0.0; 3];
            let mut guess = None;
            let mut ok = true;
            for n in 1..=3 {
                match trace_kappa(&disp, n, lambda, s.phi, guess) {
                    Ok(r) => {
                        kap[(n - 1) as usize] = r.kappa;
                        guess = Some(r.kappa);
                    }
                    Err(_) => ok = false,
                }
            }
            if ok {
                samples.push((s.phi, kap));
            }
        }
        Recursion {
            cfg,
            disp,
            nested,
            samples,
        }
    })
}

#[test]
fn c09_level_recursion() {
    let t0 = Instant::now();
    let Recursion {
        cfg,
        disp,
        nested,
        samples,
    } = recursion();
    let (k, nested) = (cfg.k, *nested);
    let mut dk = [0.0f64; 3];
    let mut drift_ok = true;
    let mut drift = [0.0f64; 2];
    for (phi, kap) in samples.iter() {
        dk[0] = dk[0].max((kap[0] - k).abs());
        dk[1] = dk[1].max((kap[1] - kap[0]).abs());
        dk[2] = dk[2].max((kap[2] - kap[1]).abs());
        let f = disp.increments(3, at(kap[2], *phi)).unwrap();
        for n in 0..2 {
            drift[n] = drift[n].max(f[n + 1].abs());
            drift_ok &= f[n + 1].abs() <= disp.windows[n + 1].l1();
        }
    }
    let shrink = dk[1] * 10.0 <= dk[0] && dk[2] * 10.0 <= dk[1];
    report(
        9,
        "level recursion",
        nested && shrink && drift_ok && samples.len() >= 8,
        t0,
        300.0,
        format!(
            "nested {nested}, {} angles, max |κ1 − k|, |κ2 − κ1|, |κ3 − κ2| = {}, \
             max |λ(n+1) − λ(n)| = {} vs ‖W2‖, ‖W3‖ = [{:.2e}, {:.2e}]",
            samples.len(),
            sci(&dk),
            sci(&drift),
            disp.windows[1].l1(),
            disp.windows[2].l1()
        ),
    );
}

#[test]
fn c10_semiaxis_coverage() {
    let t0 = Instant::now();
    let cfg = desk(10.0);
    let l = cfg.model.l as i32;
    let hat = (2.0 * cfg.k).powi(2 * l);
    let mut misses = Vec::new();
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let lambda = hat * (1.0 + 0.2 * i as f64 / 199.0);
        let k = lambda.powf(1.0 / (2 * l) as f64);
        let disp = cfg.dispersion(k, 1).unwrap();
        let theta = chi1(lambda, &disp.params, &disp.sched.cell(1));
        let hit = theta.grid(64).into_iter().find_map(|phi| {
            let r = trace_kappa(&disp, 1, lambda, phi, None).ok()?;
            let (m, j) = disp.matrix(1, at(r.kappa, phi), 1.0).ok()?;
            let (e, _, _) = oracle_state(&m, j).ok()?;
            Some((e - lambda).abs() / lambda)
        });
        match hit {
            Some(d) if !theta.is_empty() && d <= 1e-6 => worst = worst.max(d),
            other => misses.push((i, other)),
        }
    }
    report(
        10,
        "semiaxis coverage",
        misses.is_empty(),
        t0,
        300.0,
        format!("200 energies in [λ̂, 1.2λ̂], λ̂ = {hat:e}: max |oracle − λ|/λ = {worst:.2e}, misses {misses:?}"),
    );
}

#[test]
fn c11_eigenfunction_residuals() {
    // the shared run is traced and timed by the recursion criterion
    let Recursion {
        disp: rdisp,
        samples: rsamples,
        ..
    } = recursion();
    let t0 = Instant::now();
    let mut count = 0usize;
    let mut bad = Vec::new();
    let mut worst: f64 = 0.0;
    let check = |rec: &EigenfunctionRecord,
                 tag: String,
                 count: &mut usize,
                 worst: &mut f64,
                 bad: &mut Vec<String>| {
        for s in &rec.levels {
            *count += 1;
            *worst = worst.max(s.residual);
            if s.residual > (s.tail_bound / s.eigenvalue).max(1e-8) {
                bad.push(format!("{tag} level {}: {:e}", s.level, s.residual));
            }
        }
    };
    for (cfg, disp, phis) in oracle_points() {
        for &phi in &phis {
            let tag = format!("l={} k={} phi={phi:.4}", cfg.model.l, cfg.k);
            match EigenfunctionRecord::build(&disp, at(cfg.k, phi), 1, Source::Series) {
                Ok(r) => check(&r, tag, &mut count, &mut worst, &mut bad),
                Err(e) => bad.push(format!("{tag}: {e}")),
            }
        }
    }
    let split = t0.elapsed().as_secs_f64();
    for (phi, kap) in rsamples {
        let tag = format!("ladder phi={phi:.4}");
        match EigenfunctionRecord::build(rdisp, at(kap[2], *phi), 3, Source::Series) {
            Ok(r) => check(&r, tag, &mut count, &mut worst, &mut bad),
            Err(e) => bad.push(format!("{tag}: {e}")),
        }
    }
    report(
        11,
        "eigenfunction residuals",
        bad.is_empty() && count > 0,
        t0,
        60.0,
        format!("{count} slices, max relative residual {worst:.2e}, violations {bad:?}, oracle-run part {split:.1} s"),
    );
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn c12_determinism() {
    let t0 = Instant::now();
    let mut cfg = desk(10.0);
    cfg.levels = 2;
    cfg.seed = 3;
    cfg.curve.window = Some([0.3, 0.6]);
    cfg.curve.base = 512;
    cfg.curve.depth = 1;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_trace(&cfg, a.path()).unwrap();
    cmd_trace(&cfg, b.path()).unwrap();
    let (fa, fb) = (files(a.path()), files(b.path()));
    let same = !fa.is_empty() && fa == fb;
    report(
        12,
        "determinism",
        same,
        t0,
        60.0,
        format!(
            "{} artifacts compared: {:?}",
            fa.len(),
            fa.keys().collect::<Vec<_>>()
        ),
    );
}
