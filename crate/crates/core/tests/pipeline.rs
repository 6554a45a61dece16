//! End-to-end checks of the drivers and of the corrector/audit plumbing.

use std::sync::Arc;

use approx::assert_abs_diff_eq;
use inviscid_core::audit::compute_v;
use inviscid_core::boundary_layer::build_bl;
use inviscid_core::fields::{Disc, Field, Grid};
use inviscid_core::flow::build_correctors;
use inviscid_core::geometry::ProfileKind;
use inviscid_core::harness::{cmd_check, cmd_report, cmd_sweep, execute, setup, RunConfig};
use inviscid_core::profiles::build_profiles;
use inviscid_core::solver::{
    seeded_bump, solve, transformed_viscosity, SolveOptions, Solver, SolverState, ViscosityKind, ViscositySpec,
    ZeroForcing,
};
use inviscid_core::Error;

#[test]
fn config_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.grid.n1 = 24;
    cfg.viscosity.eta = 0.03;
    cfg.seed = 42;
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    assert_eq!(RunConfig::load(&path).unwrap(), cfg);
}

#[test]
fn partial_config_keeps_defaults() {
    let cfg = RunConfig::from_json(r#"{ "grid": { "n1": 8 } }"#).unwrap();
    assert_eq!(cfg.grid.n1, 8);
    assert_eq!(cfg.grid.n2, RunConfig::default().grid.n2);
}

#[test]
fn tabulated_profiles_are_rejected_as_configuration_errors() {
    let mut cfg = RunConfig::default();
    cfg.geometry.profile = ProfileKind::Tabulated;
    cfg.geometry.values = vec![0.0, 0.1, 0.0, -0.1];
    assert!(matches!(setup(&cfg), Err(Error::Config(_))));
}

#[test]
fn report_on_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_report(dir.path()).unwrap_err();
    assert!(err.to_string().contains("no runs found"), "{err}");
}

#[test]
fn report_names_a_corrupt_record() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("run_00");
    std::fs::create_dir_all(&bad).unwrap();
    std::fs::write(bad.join("record.csv"), "not,a\nrecord\n").unwrap();
    let err = cmd_report(dir.path()).unwrap_err();
    assert!(err.to_string().contains("run_00"), "{err}");
}

#[test]
fn default_check_passes() {
    let report = cmd_check(&RunConfig::default()).unwrap();
    assert!(report.passed(), "{:?}", report.first_failure());
}

#[test]
fn sweep_with_too_few_admissible_points_fails() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.out = dir.path().to_path_buf();
    cfg.sweep.eta.count = 2;
    assert!(matches!(cmd_sweep(&cfg, 1), Err(Error::Validation(_))));
}

#[test]
fn short_run_writes_its_artifacts_and_merges_into_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.grid.n1 = 8;
    cfg.grid.n2 = 8;
    cfg.time.t_end = 0.02;
    let out = execute(&cfg, dir.path(), "short").unwrap();
    assert_eq!(out.manifest.status, "completed");
    assert_eq!(out.record.steps, 2);
    for f in ["ledger.csv", "record.csv", "manifest.json"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let report = cmd_report(dir.path()).unwrap();
    assert_eq!(report.records.len(), 1);
    assert!(dir.path().join("summary.txt").is_file());
}

#[test]
fn remainder_of_the_corrector_sum_is_zero() {
    let cfg = RunConfig::default();
    let s = setup(&cfg).unwrap();
    let pair = Arc::new(build_correctors(Arc::clone(&s.flow), &s.params, s.map.clone()).unwrap());
    let bl = build_bl(Arc::clone(&pair), Arc::new(build_profiles().unwrap()), &s.params).unwrap();
    let grid = Grid::graded(8, 8, cfg.grid.period, cfg.grid.height, s.params.layer_width() / 10.0, None).unwrap();
    let t = 0.37;
    let u = Field::vector_from_fn(&grid, |y| {
        let w = pair.w_at(t, y);
        let b = bl.at(t, y);
        [w[0] + b[0], w[1] + b[1], w[2] + b[2]]
    });
    let v = compute_v(&u, &grid, &pair, &bl, t).unwrap();
    assert_abs_diff_eq!(v.max_abs(), 0.0, epsilon = 1e-15);
}

#[test]
fn isotropic_viscosity_matches_diagonal_with_equal_coefficients() {
    let s = setup(&RunConfig::default()).unwrap();
    let iso = ViscositySpec::new(ViscosityKind::Isotropic, 0.02, 0.02, 0.7).unwrap();
    let diag = ViscositySpec::new(ViscosityKind::Diagonal, 0.02, 0.02, 0.7).unwrap();
    for y in [[0.1, 0.2, 0.0], [3.0, 1.0, 0.5], [5.5, 4.0, 2.0]] {
        let a = transformed_viscosity(&iso, &s.map, 0, y);
        let b = transformed_viscosity(&diag, &s.map, 0, y);
        assert_eq!(a, b);
    }
    let grid = Grid::graded(8, 8, 2.0 * std::f64::consts::PI, 6.0, 0.05, Some(24)).unwrap();
    let run = |spec: ViscositySpec| {
        let mut solver = Solver::new(Arc::new(Disc::new(grid.clone())), s.map.clone(), spec).unwrap();
        let u0 = seeded_bump(&solver, 3).unwrap();
        let mut state = SolverState::new(u0, 0.0, solver.projector().multiplier_len());
        let opts = SolveOptions { t_end: 0.03, dt: 0.01, snapshot_every: None, snapshot_dir: None };
        solve(&mut solver, &mut state, &ZeroForcing(Field::zeros(&grid, 3)), &opts, &mut |_, _| Ok(())).unwrap();
        state.u
    };
    let (a, b) = (run(iso), run(diag));
    assert_eq!(a.data(), b.data());
}
