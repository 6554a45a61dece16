//! Acceptance suite: one test per criterion, each writing a single
//! `criterion N: PASS|FAIL …` line to stdout (uncaptured) before asserting.
//!
//! The sweep used by the Grönwall, rate and determinism criteria is computed
//! once and shared.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use inviscid_core::audit::gronwall_envelope;
use inviscid_core::boundary_layer::{bl_divergence_residual, bl_scaling_report, build_bl, loglog_slope};
use inviscid_core::fields::{read_snapshot, Disc, Field, Grid};
use inviscid_core::flow::{build_correctors, FlowKind};
use inviscid_core::geometry::ProfileKind;
use inviscid_core::harness::{cmd_sweep, execute, setup, RunConfig, SweepOutcome};
use inviscid_core::profiles::{build_profiles, scaled_norm, scaled_norm_quadrature, ScaledKind};
use inviscid_core::solver::{
    sandwich_check, scaled_form, solve, SolveOptions, Solver, SolverState, ViscosityKind, ViscositySpec, ZeroForcing,
};
use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {criterion}: {verdict} — {detail}").unwrap();
    out.flush().unwrap();
}

/// Admissible cosine-wall configuration with `δ^(α−1)[Λ⁻² + K₀Λ⁻⁵L²] ≤ 1/4`.
fn cosine_config() -> RunConfig {
    RunConfig::default()
}

/// Cosine wall under the vortex flow, whose wall trace has nonzero horizontal
/// divergence; under the shear flow the normal layer component vanishes.
fn layer_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.flow.kind = FlowKind::Vortex;
    c
}

/// The smoke run: cosine wall, checkerboard viscosity, `T* = 0.25`.
fn smoke_config(n: usize, dt: f64) -> RunConfig {
    let mut c = RunConfig::default();
    c.grid.n1 = n;
    c.grid.n2 = n;
    c.time.t_end = 0.25;
    c.time.dt = dt;
    c
}

/// The rate sweep: flat wall, `ν = η³`, `δ = η`, `β` shrinking by `√2`.
fn sweep_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.geometry.profile = ProfileKind::Flat;
    c.time.t_end = 0.25;
    c.time.dt = 0.01;
    c.sweep.eta.start = 0.1;
    c.sweep.eta.ratio = 0.5;
    c.sweep.eta.count = 6;
    c
}

fn shared_sweep() -> &'static (SweepOutcome, f64) {
    static SWEEP: OnceLock<(SweepOutcome, f64)> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let mut c = sweep_config();
        c.out = dir.path().to_path_buf();
        let clock = Instant::now();
        let out = cmd_sweep(&c, 1).unwrap();
        (out, clock.elapsed().as_secs_f64())
    })
}

#[test]
fn criterion_1_ellipticity_sandwich() {
    let clock = Instant::now();
    let cfg = cosine_config();
    let s = setup(&cfg).unwrap();
    let p = s.params;
    let smallness = s.map.sandwich_smallness(p.lambda, p.k0);
    let h1 = cfg.grid.period / cfg.grid.n1 as f64;
    let v = &cfg.viscosity;
    let spec = ViscositySpec::new(ViscosityKind::Checkerboard, v.eta, v.nu, v.lambda)
        .unwrap()
        .with_checkerboard(v.perturbation, v.cell_spacings * h1, v.flip_interval)
        .unwrap();
    let sampled = sandwich_check(&spec, &s.map, cfg.grid.period, cfg.grid.height, 1.0, 1_000_000, 11);

    // Oracle: at 10³ points, the smallest eigenvalue of the scaled form
    // against a brute-force minimum of its Rayleigh quotient.
    let dirs: Vec<[f64; 3]> = (0..4000)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / 4000.0;
            let r = (1.0 - z * z).sqrt();
            let phi = i as f64 * PI * (3.0 - 5f64.sqrt());
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_gap: f64 = 0.0;
    let mut min_eig = f64::INFINITY;
    for _ in 0..1000 {
        let t = rng.gen::<f64>();
        let y = [rng.gen::<f64>() * cfg.grid.period, rng.gen::<f64>() * cfg.grid.period, rng.gen::<f64>() * 2.0];
        let m = scaled_form(&spec, &s.map, t, y);
        let eig = SymmetricEigen::new(Matrix3::from_fn(|i, j| m[i][j])).eigenvalues.min();
        let brute = dirs
            .iter()
            .map(|d| (0..3).map(|i| (0..3).map(|j| d[i] * m[i][j] * d[j]).sum::<f64>()).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        worst_gap = worst_gap.max((brute - eig).abs() / eig);
        min_eig = min_eig.min(eig);
    }
    let secs = clock.elapsed().as_secs_f64();
    let (lower, violations) = match &sampled {
        Ok(r) => (r.lower, 0),
        Err(_) => (f64::NAN, 1),
    };
    let pass = smallness <= 0.25
        && violations == 0
        && lower >= 0.5 * p.lambda
        && min_eig >= 0.5 * p.lambda
        && worst_gap <= 0.05
        && secs < 30.0;
    report(
        1,
        pass,
        &format!(
            "smallness {smallness:.4} ≤ 0.25; 10⁶ samples: min lower ratio {lower:.4} vs Λ/2 = {:.3}, \
             {violations} violations; eigen oracle min {min_eig:.4}, worst disagreement {:.2}% at 10³ points; {secs:.1} s",
            0.5 * p.lambda,
            100.0 * worst_gap
        ),
    );
    assert!(pass, "{sampled:?}");
}

#[test]
fn criterion_2_corrector_identities() {
    let clock = Instant::now();
    let profiles = Arc::new(build_profiles().unwrap());
    let mut worst = [0.0f64; 3];
    for delta in [0.1, 0.05, 0.025] {
        let mut cfg = cosine_config();
        cfg.geometry.delta = delta;
        let s = setup(&cfg).unwrap();
        let pair = Arc::new(build_correctors(Arc::clone(&s.flow), &s.params, s.map.clone()).unwrap());
        let bl = build_bl(Arc::clone(&pair), Arc::clone(&profiles), &s.params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<[f64; 3]> = (0..10_000)
            .map(|_| {
                let y3 = -rng.gen::<f64>().max(1e-300).ln();
                [rng.gen::<f64>() * 2.0 * PI, rng.gen::<f64>() * 2.0 * PI, y3]
            })
            .collect();
        let t = 0.3;
        worst[0] = worst[0].max(pts.iter().map(|y| pair.div_bw_at(t, *y).abs()).fold(0.0, f64::max));
        worst[1] = worst[1].max(bl_divergence_residual(&bl, t, &pts));
        worst[2] = worst[2].max(pts.iter().map(|y| pair.boundary_identity_at(t, [y[0], y[1]]).abs()).fold(0.0, f64::max));
    }
    let secs = clock.elapsed().as_secs_f64();
    let pass = worst.iter().all(|w| *w <= 1e-10) && secs < 10.0;
    report(
        2,
        pass,
        &format!(
            "δ ∈ {{0.1, 0.05, 0.025}}, 10⁴ points: sup|div(Bw)| {:.2e}, sup|div(B layer)| {:.2e}, sup|wall identity| {:.2e} (≤ 1e-10); {secs:.1} s",
            worst[0], worst[1], worst[2]
        ),
    );
    assert!(pass);
}

fn theta_nu_decades() -> Vec<f64> {
    (0..=8).map(|i| 10f64.powf(-8.0 + 0.5 * i as f64)).collect()
}

const LAYER_NORMAL_L2: &str = "‖[B𝓑]₃‖_L2";

#[test]
fn criterion_3_profile_and_layer_scalings() {
    let clock = Instant::now();
    let profiles = build_profiles().unwrap();
    let s = setup(&layer_config()).unwrap();
    let pair = build_correctors(Arc::clone(&s.flow), &s.params, s.map.clone()).unwrap();
    let rows = bl_scaling_report(&pair, &profiles, &theta_nu_decades(), 0.3).unwrap();
    let mut failures = Vec::new();
    let mut layer_ok = 0;
    for r in &rows {
        if r.quantity == LAYER_NORMAL_L2 {
            continue;
        }
        if r.passes(0.02) {
            layer_ok += 1;
        } else {
            failures.push(format!("{} slope {:.4} (target {})", r.quantity, r.fitted_slope, r.target_slope));
        }
    }
    // Profile norms: slope in the length scale a over four decades, and
    // closed form against quadrature.
    let a: Vec<f64> = (0..=8).map(|i| 10f64.powf(-5.0 + 0.5 * i as f64)).collect();
    let mut worst_rel: f64 = 0.0;
    for kind in ScaledKind::ALL {
        let closed: Vec<f64> = a.iter().map(|x| scaled_norm(&profiles, *x, kind).unwrap()).collect();
        for (x, c) in a.iter().zip(&closed) {
            let q = scaled_norm_quadrature(&profiles, *x, kind).unwrap();
            worst_rel = worst_rel.max((q - c).abs() / c.abs());
        }
        let slope = loglog_slope(&a, &closed).unwrap();
        if (slope - kind.exponent()).abs() > 0.02 {
            failures.push(format!("profile {} slope {slope:.4} (target {})", kind.label(), kind.exponent()));
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    let normal = rows.iter().find(|r| r.quantity == LAYER_NORMAL_L2).unwrap();
    let normal_ok = normal.passes(0.02);
    let pass = failures.is_empty() && worst_rel <= 1e-8 && secs < 30.0 && normal_ok;
    report(
        3,
        pass,
        &format!(
            "{layer_ok}/8 other layer slopes and 8/8 profile slopes within ±0.02, quadrature vs closed form {worst_rel:.1e}; \
             {LAYER_NORMAL_L2}: slope {:.4} vs target {} ({}); {secs:.1} s {}",
            normal.fitted_slope,
            normal.target_slope,
            if normal_ok { "ok" } else { "decays faster than the stated rate" },
            failures.join("; ")
        ),
    );
    assert!(failures.is_empty() && worst_rel <= 1e-8, "{failures:?}");
}

/// The one layer quantity whose fitted slope does not match its target:
/// `[B𝓑]₃` is `aψ(y₃/a)` times a trace, so its `L²` norm scales like
/// `(θν)^{3/4}` rather than `(θν)^{1/2}`. Kept as a faithful, failing check.
#[test]
fn criterion_3_layer_normal_component_l2_slope() {
    let profiles = build_profiles().unwrap();
    let s = setup(&layer_config()).unwrap();
    let pair = build_correctors(Arc::clone(&s.flow), &s.params, s.map.clone()).unwrap();
    let rows = bl_scaling_report(&pair, &profiles, &theta_nu_decades(), 0.3).unwrap();
    let r = rows.iter().find(|r| r.quantity == LAYER_NORMAL_L2).unwrap();
    assert!(
        r.passes(0.02),
        "{LAYER_NORMAL_L2}: fitted slope {:.4}, target {} ± 0.02",
        r.fitted_slope,
        r.target_slope
    );
}

fn final_snapshot(dir: &Path) -> (Grid, Field) {
    let mut snaps: Vec<_> = std::fs::read_dir(dir.join("snapshots"))
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    snaps.sort();
    let (h, u) = read_snapshot(snaps.last().unwrap()).unwrap();
    (Grid::from_nodes(h.dims[0], h.dims[1], h.period, h.z).unwrap(), u)
}

#[test]
fn criterion_4_solver_contracts() {
    let clock = Instant::now();
    // Zero data stays zero.
    let cfg = smoke_config(16, 0.01);
    let s = setup(&cfg).unwrap();
    let grid = Grid::graded(16, 16, 2.0 * PI, 6.0, s.params.layer_width() / 20.0, None).unwrap();
    let spec = ViscositySpec::new(ViscosityKind::Checkerboard, 0.05, 0.01, 0.7)
        .unwrap()
        .with_checkerboard(0.1, 8.0 * grid.h1(), 0.1)
        .unwrap();
    let mut solver = Solver::new(Arc::new(Disc::new(grid.clone())), s.map.clone(), spec).unwrap();
    let zero = Field::zeros(&grid, 3);
    let mut state = SolverState::new(zero.clone(), 0.0, solver.projector().multiplier_len());
    let opts = SolveOptions { t_end: 0.05, dt: 0.01, snapshot_every: None, snapshot_dir: None };
    solve(&mut solver, &mut state, &ZeroForcing(zero), &opts, &mut |_, _| Ok(())).unwrap();
    let zero_max = state.u.max_abs();

    // Smoke run at three step sizes: contracts on every step, and the
    // self-convergence factor of the final velocity.
    let dts = [0.01, 0.005, 0.0025];
    let mut finals = Vec::new();
    let mut max_div: f64 = 0.0;
    let mut max_work: f64 = 0.0;
    let dir = tempfile::tempdir().unwrap();
    for (i, dt) in dts.iter().enumerate() {
        let mut c = smoke_config(16, *dt);
        c.time.snapshot_every = Some(usize::MAX);
        let d = dir.path().join(format!("dt{i}"));
        let o = execute(&c, &d, "smoke").unwrap();
        max_div = max_div.max(o.record.max_div_residual);
        max_work = max_work.max(o.record.max_advection_work).max(o.record.max_pressure_work);
        finals.push(final_snapshot(&d));
    }
    let disc = Disc::new(finals[0].0.clone());
    let e1 = disc.l2(&finals[0].1.sub(&finals[1].1).unwrap());
    let e2 = disc.l2(&finals[1].1.sub(&finals[2].1).unwrap());
    let factor = e1 / e2;
    let secs = clock.elapsed().as_secs_f64();
    let pass = zero_max <= 1e-14 && max_div <= 1e-10 && max_work <= 1e-8 && factor >= 3.5 && secs < 300.0;
    report(
        4,
        pass,
        &format!(
            "zero data max|u| {zero_max:.1e}; max div(Bu) residual {max_div:.2e} (≤ 1e-10); \
             max advection/pressure work {max_work:.1e} (≤ 1e-8); dt self-convergence factor {factor:.3} (≥ 3.5); {secs:.1} s"
        ),
    );
    assert!(pass);
}

/// The resolved closure run: shear flow on a 32×32 grid, iterated pressure
/// correction.
fn closure_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.grid.n1 = 32;
    c.grid.n2 = 32;
    c.time.t_end = 0.04;
    c.time.dt = 0.0025;
    c.time.pressure_sweeps = 60;
    c
}

#[test]
fn criterion_5_energy_closure() {
    let clock = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let resolved = execute(&closure_config(), dir.path(), "closure").unwrap().record;
    // Order of the closure defect under step refinement, with a single
    // pressure correction per step so that the splitting error is visible.
    let dts = [0.01, 0.005, 0.0025];
    let mut defects = Vec::new();
    for (i, dt) in dts.iter().enumerate() {
        let mut c = RunConfig::default();
        c.time.t_end = 0.1;
        c.time.dt = *dt;
        c.time.pressure_sweeps = 1;
        let rows_dir = dir.path().join(format!("order{i}"));
        execute(&c, &rows_dir, "order").unwrap();
        let rows: Vec<inviscid_core::audit::LedgerRow> =
            inviscid_core::audit::read_csv(&rows_dir.join("ledger.csv")).unwrap();
        defects.push(rows.last().unwrap().closure);
    }
    let order = loglog_slope(&dts, &defects).unwrap();
    let secs = clock.elapsed().as_secs_f64();
    let pass = resolved.max_closure <= 1e-6 && order >= 1.5;
    report(
        5,
        pass,
        &format!(
            "resolved run max closure {:.2e} (≤ 1e-6); final-time closure {:.2e} → {:.2e} → {:.2e} under dt halving, order {order:.3} (≥ 1.5); {secs:.1} s",
            resolved.max_closure, defects[0], defects[1], defects[2]
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_gronwall_envelope() {
    // Closed forms: y′ = cy gives √y = √y₀e^{ct/2}; y′ = k√y gives
    // √y = √y₀ + kt/2; y′ = m gives √y = √(y₀ + mt).
    let t: Vec<f64> = (0..=50).map(|i| 0.02 * i as f64).collect();
    let zeros = vec![0.0; t.len()];
    let ones = |c: f64| vec![c; t.len()];
    let exp = gronwall_envelope(&t, &ones(1.3), &zeros, &zeros, 0.7, 1.0).unwrap();
    let lin = gronwall_envelope(&t, &zeros, &ones(0.9), &zeros, 0.7, 1.0).unwrap();
    let src = gronwall_envelope(&t, &zeros, &zeros, &ones(2.0), 0.7, 1.0).unwrap();
    let mut worst: f64 = 0.0;
    for (i, ti) in t.iter().enumerate() {
        let rel = |got: f64, want: f64| (got - want).abs() / want;
        worst = worst.max(rel(exp.sqrt_y[i], 0.7 * (0.65 * ti).exp()));
        worst = worst.max(rel(lin.sqrt_y[i], 0.7 + 0.45 * ti));
        worst = worst.max(rel(src.sqrt_y[i], (0.49 + 2.0 * ti).sqrt()));
    }
    let (sweep, _) = shared_sweep();
    let excess = sweep.records.iter().map(|r| r.envelope_excess).fold(f64::NEG_INFINITY, f64::max);
    let pass = worst <= 1e-8 && excess <= 0.0;
    report(
        6,
        pass,
        &format!(
            "closed-form envelopes agree to {worst:.1e} (≤ 1e-8); worst excess of ‖v‖ over the measured envelope {excess:.3e} over {} runs (≤ 0)",
            sweep.records.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_convergence_rate() {
    let (sweep, secs) = shared_sweep();
    let f = &sweep.fit;
    let grad_ratios: Vec<f64> = sweep.records.iter().map(|r| r.grad_v_ratio).collect();
    let grad_spread = grad_ratios.iter().cloned().fold(0.0, f64::max) / grad_ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let pass = f.points >= 4 && (0.8..=1.2).contains(&f.slope) && f.m_ratio <= 4.0 && grad_spread <= 4.0;
    report(
        7,
        pass,
        &format!(
            "{} runs: slope {:.4} ∈ [0.8, 1.2]; M ∈ [{:.4}, {:.4}], max/min {:.3} (≤ 4); gradient ratio max/min {grad_spread:.3} (≤ 4), gradient slope {:.3}; {secs:.1} s",
            f.points, f.slope, f.m_min, f.m_max, f.m_ratio, f.grad_slope
        ),
    );
    assert!(pass, "{f:?}");
}

fn bytes(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn criterion_8_determinism() {
    let clock = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut c = RunConfig::default();
    c.time.t_end = 0.05;
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    execute(&c, &a, "run").unwrap();
    execute(&c, &b, "run").unwrap();
    let runs_equal = ["ledger.csv", "record.csv"].iter().all(|f| bytes(&a.join(f)) == bytes(&b.join(f)));

    let mut s = sweep_config();
    s.sweep.eta.count = 4;
    s.time.t_end = 0.05;
    let mut sweeps = Vec::new();
    for name in ["s1", "s2"] {
        s.out = dir.path().join(name);
        cmd_sweep(&s, 2).unwrap();
        sweeps.push(s.out.clone());
    }
    let sweeps_equal = ["sweep.csv", "table.csv", "fit.csv", "skipped.csv"]
        .iter()
        .all(|f| bytes(&sweeps[0].join(f)) == bytes(&sweeps[1].join(f)));
    let secs = clock.elapsed().as_secs_f64();
    let pass = runs_equal && sweeps_equal;
    report(
        8,
        pass,
        &format!(
            "repeated run: ledger and record {}; repeated 4-point sweep on 2 threads: outputs {}; {secs:.1} s",
            if runs_equal { "byte-identical" } else { "differ" },
            if sweeps_equal { "byte-identical" } else { "differ" }
        ),
    );
    assert!(pass);
}
