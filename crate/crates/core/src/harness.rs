//! Run configuration and the `check` / `run` / `sweep` / `report` drivers.
//!
//! A run directory holds `manifest.json`, `ledger.csv` (one row per time
//! step), `record.csv` (one [`ConvergenceRecord`]) and, when requested,
//! binary velocity snapshots under `snapshots/`. A sweep directory holds one
//! run directory per admissible point plus `sweep.csv`, `table.csv`,
//! `fit.csv` and `skipped.csv`.
//!
//! Every CSV is a pure function of the configuration and seed; wall-clock
//! timings only appear in the JSON manifests.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audit::{convergence_metrics, read_csv, write_csv, Auditor, ConvergenceRecord, RunSummary};
use crate::boundary_layer::{bl_divergence_residual, build_bl, loglog_slope};
use crate::error::{Error, Result};
use crate::fields::{Disc, Grid, GridInfo};
use crate::flow::{build_correctors, manufactured_euler, wprop_report, FlowKind, Modulation, ReferenceFlow};
use crate::geometry::{BoundaryProfile, FlatteningMap, ProfileKind};
use crate::params::{is_admissible, BetaChoice, ParamTriple, Verdict};
use crate::profiles::{build_profiles, scaled_norm, scaled_norm_quadrature, ScaledKind};
use crate::solver::{
    init_state, sandwich_check, solve, EnergyInequality, InitReport, ReferenceForcing, SolveOptions, Solver,
    ViscosityKind, ViscositySpec,
};

/// Tolerance of the closed-form identity checks.
pub const IDENTITY_TOL: f64 = 1e-10;
/// Relative tolerance between closed-form and quadrature profile norms.
pub const PROFILE_RTOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub profile: ProfileKind,
    /// Amplitude of the cosine profile.
    pub amplitude: f64,
    /// Period of `g` in the fast variable.
    pub period: f64,
    /// Samples of a tabulated profile (`table_n²` values, row-major).
    pub values: Vec<f64>,
    pub table_n: usize,
    pub delta: f64,
    pub alpha: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            profile: ProfileKind::Cosine,
            amplitude: 0.2,
            period: 2.0 * PI,
            values: Vec::new(),
            table_n: 0,
            delta: 0.1,
            alpha: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViscosityConfig {
    pub kind: ViscosityKind,
    pub eta: f64,
    pub nu: f64,
    pub lambda: f64,
    /// Checkerboard amplitude as a fraction of `ν`.
    pub perturbation: f64,
    /// Checkerboard cell size in horizontal grid spacings.
    pub cell_spacings: f64,
    pub flip_interval: f64,
}

impl Default for ViscosityConfig {
    fn default() -> Self {
        Self {
            kind: ViscosityKind::Checkerboard,
            eta: 0.05,
            nu: 0.01,
            lambda: 0.7,
            perturbation: 0.1,
            cell_spacings: 8.0,
            flip_interval: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsConfig {
    pub k0: f64,
    pub delta0: f64,
    pub epsilon: f64,
    pub beta: BetaChoice,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        Self { k0: 3.0, delta0: 0.5, epsilon: 0.5, beta: BetaChoice::Default }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub kind: FlowKind,
    pub amplitude: f64,
    pub decay: f64,
    /// Coefficient of the Euler pressure; 0 means `q ≡ 0`.
    pub pressure: f64,
    pub modulation: Modulation,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { kind: FlowKind::Shear, amplitude: 0.5, decay: 1.0, pressure: 0.0, modulation: Modulation::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n1: usize,
    pub n2: usize,
    /// Vertical intervals; `None` picks the smallest count with mild
    /// stretching.
    pub n3: Option<usize>,
    pub height: f64,
    /// Horizontal period of the box.
    pub period: f64,
    /// Wall spacing is the layer width divided by this.
    pub layer_cells: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n1: 16, n2: 16, n3: None, height: 6.0, period: 2.0 * PI, layer_cells: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub t_end: f64,
    pub dt: f64,
    /// Write a snapshot every this many steps (and at the end).
    pub snapshot_every: Option<usize>,
    pub pressure_sweeps: usize,
    pub pressure_rtol: f64,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self { t_end: 0.1, dt: 0.01, snapshot_every: None, pressure_sweeps: 20, pressure_rtol: 2e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    /// Size of the seeded perturbation as a fraction of the budget.
    pub perturbation: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { perturbation: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    /// Random samples of the ellipticity sandwich.
    pub samples: usize,
    /// Random points for the pointwise identities.
    pub points: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self { samples: 20_000, points: 2_000 }
    }
}

/// `start, start·ratio, …` with `count` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometricGrid {
    pub start: f64,
    pub ratio: f64,
    pub count: usize,
}

impl Default for GeometricGrid {
    fn default() -> Self {
        Self { start: 0.1, ratio: 0.5, count: 6 }
    }
}

impl GeometricGrid {
    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.start * self.ratio.powi(i as i32)).collect()
    }
}

/// Sweep over `η`, with `ν = c_ν η^{p_ν}` and `δ = c_δ η^{p_δ}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub eta: GeometricGrid,
    pub nu_factor: f64,
    pub nu_exponent: f64,
    pub delta_factor: f64,
    pub delta_exponent: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { eta: GeometricGrid::default(), nu_factor: 1.0, nu_exponent: 3.0, delta_factor: 1.0, delta_exponent: 1.0 }
    }
}

impl SweepConfig {
    /// The `(η, ν, δ)` points of the sweep.
    pub fn points(&self) -> Vec<(f64, f64, f64)> {
        self.eta
            .values()
            .into_iter()
            .map(|e| (e, self.nu_factor * e.powf(self.nu_exponent), self.delta_factor * e.powf(self.delta_exponent)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub viscosity: ViscosityConfig,
    pub params: ParamsConfig,
    pub flow: FlowConfig,
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub init: InitConfig,
    pub check: CheckConfig,
    pub sweep: SweepConfig,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            geometry: GeometryConfig::default(),
            viscosity: ViscosityConfig::default(),
            params: ParamsConfig::default(),
            flow: FlowConfig::default(),
            grid: GridConfig::default(),
            time: TimeConfig::default(),
            init: InitConfig::default(),
            check: CheckConfig::default(),
            sweep: SweepConfig::default(),
            out: PathBuf::from("runs"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serialises")
    }

    /// Reject values no run could use.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("geometry.delta", self.geometry.delta),
            ("geometry.period", self.geometry.period),
            ("geometry.alpha", self.geometry.alpha),
            ("viscosity.lambda", self.viscosity.lambda),
            ("viscosity.cell_spacings", self.viscosity.cell_spacings),
            ("viscosity.flip_interval", self.viscosity.flip_interval),
            ("params.k0", self.params.k0),
            ("params.delta0", self.params.delta0),
            ("params.epsilon", self.params.epsilon),
            ("flow.decay", self.flow.decay),
            ("grid.height", self.grid.height),
            ("grid.period", self.grid.period),
            ("grid.layer_cells", self.grid.layer_cells),
            ("time.t_end", self.time.t_end),
            ("time.dt", self.time.dt),
            ("time.pressure_rtol", self.time.pressure_rtol),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.viscosity.lambda > 1.0 {
            return Err(Error::Config(format!("viscosity.lambda must lie in (0, 1], got {}", self.viscosity.lambda)));
        }
        if self.grid.n1 < 4 || self.grid.n2 < 4 {
            return Err(Error::Config("grid.n1 and grid.n2 must be at least 4".into()));
        }
        if self.time.dt > self.time.t_end {
            return Err(Error::Config("time.dt exceeds time.t_end".into()));
        }
        if self.time.snapshot_every == Some(0) {
            return Err(Error::Config("time.snapshot_every must be positive".into()));
        }
        if self.geometry.profile == ProfileKind::Tabulated {
            return Err(Error::Config(
                "tabulated wall profiles have no closed-form correctors; use a flat or cosine profile".into(),
            ));
        }
        Ok(())
    }

    fn with_point(&self, eta: f64, nu: f64, delta: f64) -> Self {
        let mut c = self.clone();
        c.viscosity.eta = eta;
        c.viscosity.nu = nu;
        c.geometry.delta = delta;
        c
    }
}

/// The objects every driver needs before touching a grid.
pub struct Setup {
    pub map: FlatteningMap,
    pub flow: Arc<ReferenceFlow>,
    pub params: ParamTriple,
    pub verdict: Verdict,
}

pub fn setup(cfg: &RunConfig) -> Result<Setup> {
    cfg.validate()?;
    let g = &cfg.geometry;
    let profile = match g.profile {
        ProfileKind::Flat => BoundaryProfile::flat(),
        ProfileKind::Cosine => BoundaryProfile::cosine(g.amplitude, g.period)?,
        ProfileKind::Tabulated => BoundaryProfile::tabulated(g.values.clone(), g.table_n, g.period)?,
    };
    let map = FlatteningMap::new(Arc::new(profile), g.delta, g.alpha)?;
    let f = &cfg.flow;
    let flow = manufactured_euler(f.kind, f.amplitude, f.decay)?
        .with_pressure(f.pressure)
        .with_modulation(f.modulation)
        .with_period(cfg.grid.period)?;
    let v = &cfg.viscosity;
    let pc = &cfg.params;
    let params = ParamTriple::new(v.eta, v.nu, g.delta, g.alpha, v.lambda, pc.k0, pc.delta0, pc.epsilon)
        .with_derived(flow.sup_w0_h3(cfg.time.t_end), pc.beta);
    let beta = pc.beta;
    let verdict = is_admissible(&params, &|e, n| beta.eval(e, n))?;
    Ok(Setup { map, flow: Arc::new(flow), params, verdict })
}

fn viscosity_spec(cfg: &RunConfig, grid_h1: f64) -> Result<ViscositySpec> {
    let v = &cfg.viscosity;
    let spec = ViscositySpec::new(v.kind, v.eta, v.nu, v.lambda)?;
    if v.kind == ViscosityKind::Checkerboard {
        spec.with_checkerboard(v.perturbation, v.cell_spacings * grid_h1, v.flip_interval)
    } else {
        Ok(spec)
    }
}

fn require_admissible(s: &Setup) -> Result<()> {
    if s.verdict.admissible {
        Ok(())
    } else {
        Err(Error::Validation(format!("inadmissible parameters: {}", s.verdict.reason)))
    }
}

/// One line of the `check` report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckLine {
    pub check: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
    pub detail: String,
}

impl CheckLine {
    fn at_most(check: &str, value: f64, limit: f64) -> Self {
        Self { check: check.into(), value, limit, pass: value <= limit, detail: String::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub lines: Vec<CheckLine>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| l.pass)
    }

    pub fn first_failure(&self) -> Option<&CheckLine> {
        self.lines.iter().find(|l| !l.pass)
    }
}

/// Random points in one period cell with exponentially distributed height.
fn sample_points(period: f64, decay: f64, n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let y1 = rng.gen::<f64>() * period;
            let y2 = rng.gen::<f64>() * period;
            let y3 = -rng.gen::<f64>().max(1e-300).ln() / decay;
            [y1, y2, y3]
        })
        .collect()
}

/// All static verifications of a configuration: admissibility, the
/// ellipticity sandwich, profile norms, and the corrector identities.
/// An inadmissible triple is an error naming the violated clause.
pub fn cmd_check(cfg: &RunConfig) -> Result<CheckReport> {
    let s = setup(cfg)?;
    require_admissible(&s)?;
    let p = s.params;
    let mut lines = vec![CheckLine {
        check: "admissible".into(),
        value: 1.0,
        limit: 1.0,
        pass: true,
        detail: s.verdict.reason.clone(),
    }];

    let h1 = cfg.grid.period / cfg.grid.n1 as f64;
    let spec = viscosity_spec(cfg, h1)?;
    let smallness = s.map.sandwich_smallness(p.lambda, p.k0);
    let mut line = CheckLine::at_most("sandwich smallness", smallness, 0.25);
    line.detail = "δ^(α−1)[Λ⁻² + K₀Λ⁻⁵L²]".into();
    lines.push(line);
    let sw = sandwich_check(
        &spec,
        &s.map,
        cfg.grid.period,
        cfg.grid.height,
        cfg.time.t_end,
        cfg.check.samples,
        cfg.seed,
    );
    match sw {
        Ok(r) => lines.push(CheckLine {
            check: "sandwich lower ratio".into(),
            value: r.lower,
            limit: 0.5 * p.lambda,
            pass: r.lower >= 0.5 * p.lambda,
            detail: format!("{} samples, upper ratio {:.4}", r.samples, r.upper),
        }),
        Err(Error::CheckFailed(w)) => lines.push(CheckLine {
            check: "sandwich lower ratio".into(),
            value: f64::NAN,
            limit: 0.5 * p.lambda,
            pass: false,
            detail: w,
        }),
        Err(e) => return Err(e),
    }

    let profiles = Arc::new(build_profiles()?);
    let a = p.layer_width();
    for kind in ScaledKind::ALL {
        let closed = scaled_norm(&profiles, a, kind)?;
        let quad = scaled_norm_quadrature(&profiles, a, kind)?;
        let rel = (closed - quad).abs() / closed.abs().max(f64::MIN_POSITIVE);
        let mut line = CheckLine::at_most(&format!("profile norm {}", kind.label()), rel, PROFILE_RTOL);
        line.detail = format!("closed form {closed:.10e}, quadrature {quad:.10e}");
        lines.push(line);
    }

    let pair = Arc::new(build_correctors(Arc::clone(&s.flow), &p, s.map.clone())?);
    let bl = build_bl(Arc::clone(&pair), Arc::clone(&profiles), &p)?;
    let pts = sample_points(cfg.grid.period, cfg.flow.decay, cfg.check.points, cfg.seed);
    for t in [0.0, cfg.time.t_end] {
        let div_bw = pts.iter().map(|y| pair.div_bw_at(t, *y).abs()).fold(0.0, f64::max);
        lines.push(CheckLine::at_most(&format!("div(Bw) at t = {t}"), div_bw, IDENTITY_TOL));
        let div_bl = bl_divergence_residual(&bl, t, &pts);
        lines.push(CheckLine::at_most(&format!("div(B layer) at t = {t}"), div_bl, IDENTITY_TOL));
        let wall = pts.iter().map(|y| pair.boundary_identity_at(t, [y[0], y[1]]).abs()).fold(0.0, f64::max);
        lines.push(CheckLine::at_most(&format!("wall identity at t = {t}"), wall, IDENTITY_TOL));
    }
    match wprop_report(&pair, cfg.time.t_end, cfg.check.points, cfg.seed) {
        Ok(rows) => {
            for r in rows {
                lines.push(CheckLine {
                    check: format!("corrector bound {}", r.item),
                    value: r.ratio,
                    limit: f64::INFINITY,
                    pass: r.ratio.is_finite(),
                    detail: format!("measured {:.4e}, shape {:.4e}", r.lhs, r.rhs),
                });
            }
        }
        Err(Error::Config(_)) => {}
        Err(e) => return Err(e),
    }
    Ok(CheckReport { lines })
}

/// Everything a finished run leaves behind, besides the CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run: String,
    /// `"completed"` or `"failed"`.
    pub status: String,
    pub error: Option<String>,
    pub config: RunConfig,
    pub params: ParamTriple,
    pub grid: GridInfo,
    pub warnings: Vec<String>,
    pub init: InitReport,
    pub steps: usize,
    pub last_t: f64,
    pub energy: Option<EnergyInequality>,
    pub snapshots: Vec<PathBuf>,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub record: ConvergenceRecord,
    pub manifest: Manifest,
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

/// Integrate and audit one parameter point, writing its artifacts to `dir`.
/// A solver failure still writes the manifest and the partial ledger before
/// the error is returned.
pub fn execute(cfg: &RunConfig, dir: &Path, run: &str) -> Result<RunOutcome> {
    let clock = Instant::now();
    let s = setup(cfg)?;
    require_admissible(&s)?;
    let p = s.params;
    std::fs::create_dir_all(dir)?;

    let profiles = Arc::new(build_profiles()?);
    let pair = Arc::new(build_correctors(Arc::clone(&s.flow), &p, s.map.clone())?);
    let bl = build_bl(Arc::clone(&pair), Arc::clone(&profiles), &p)?;
    let a = p.layer_width();
    let gc = &cfg.grid;
    let grid = Grid::graded(gc.n1, gc.n2, gc.period, gc.height, a / gc.layer_cells, gc.n3)?;
    let oscillation = match cfg.geometry.profile {
        ProfileKind::Flat => None,
        _ => Some(cfg.geometry.delta * cfg.geometry.period),
    };
    let warnings = grid.resolution_warnings(Some(a), oscillation);
    let spec = viscosity_spec(cfg, grid.h1())?;
    let mut solver = Solver::new(Arc::new(Disc::new(grid.clone())), s.map.clone(), spec)?;
    solver.max_pressure_sweeps = cfg.time.pressure_sweeps;
    solver.pressure_rtol = cfg.time.pressure_rtol;
    let base = Arc::new(s.flow.sample_base(&grid));
    let (mut state, init) = init_state(&solver, &s.flow, &profiles, &base, &p, cfg.init.perturbation, cfg.seed)?;
    let forcing = ReferenceForcing::new(Arc::clone(&s.flow), Arc::clone(&base));
    let mut auditor = Auditor::new(run, &solver, Arc::clone(&pair), &bl, Arc::clone(&base), p, cfg.time.t_end)?;
    let start = auditor.start(&solver, &state.u)?;
    let opts = SolveOptions {
        t_end: cfg.time.t_end,
        dt: cfg.time.dt,
        snapshot_every: cfg.time.snapshot_every,
        snapshot_dir: cfg.time.snapshot_every.map(|_| dir.join("snapshots")),
    };
    let result = solve(&mut solver, &mut state, &forcing, &opts, &mut |sv, ctx| {
        auditor.observe(sv, ctx)?;
        Ok(())
    });
    let mut manifest = Manifest {
        run: run.into(),
        status: "completed".into(),
        error: None,
        config: cfg.clone(),
        params: p,
        grid: grid.info(),
        warnings,
        init,
        steps: state.step,
        last_t: state.t,
        energy: None,
        snapshots: Vec::new(),
        elapsed_seconds: 0.0,
    };
    write_csv(&dir.join("ledger.csv"), auditor.rows())?;
    let traj = match result {
        Ok(t) => t,
        Err(e) => {
            manifest.status = "failed".into();
            manifest.error = Some(e.to_string());
            manifest.elapsed_seconds = clock.elapsed().as_secs_f64();
            write_json(&dir.join("manifest.json"), &manifest)?;
            return Err(e);
        }
    };
    let summary = RunSummary { init: &init, energy: &traj.energy, steps: &traj.steps, t_end: cfg.time.t_end, dt: cfg.time.dt };
    let record = convergence_metrics(run, &start, auditor.rows(), summary, &s.flow, &p)?;
    write_csv(&dir.join("record.csv"), std::slice::from_ref(&record))?;
    manifest.energy = Some(traj.energy);
    manifest.snapshots = traj.snapshots.iter().map(|q| q.strip_prefix(dir).unwrap_or(q).to_path_buf()).collect();
    manifest.elapsed_seconds = clock.elapsed().as_secs_f64();
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(RunOutcome { record, manifest })
}

/// A single run into `cfg.out`.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunOutcome> {
    execute(cfg, &cfg.out, "run")
}

/// A sweep point that was not run, and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub eta: f64,
    pub nu: f64,
    pub delta: f64,
    pub reason: String,
}

/// Plot-ready row: error and gradient budget against the budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub run: String,
    pub beta: f64,
    pub delta_power: f64,
    pub budget: f64,
    pub sup_error: f64,
    pub error_ratio: f64,
    pub grad_v: f64,
    pub grad_v_ratio: f64,
}

impl From<&ConvergenceRecord> for TableRow {
    fn from(r: &ConvergenceRecord) -> Self {
        Self {
            run: r.run.clone(),
            beta: r.beta,
            delta_power: r.delta_power,
            budget: r.budget,
            sup_error: r.sup_error,
            error_ratio: r.error_ratio,
            grad_v: r.grad_v,
            grad_v_ratio: r.grad_v_ratio,
        }
    }
}

/// Fitted rate and constant stability over a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFit {
    pub points: usize,
    /// Log-log slope of `sup‖u − w⁰‖` against the budget.
    pub slope: f64,
    pub m_min: f64,
    pub m_max: f64,
    pub m_ratio: f64,
    /// Log-log slope of the gradient budget against the squared budget.
    pub grad_slope: f64,
    pub grad_m_max: f64,
}

pub fn fit_records(records: &[ConvergenceRecord]) -> Result<SweepFit> {
    if records.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: records.len() });
    }
    let budget: Vec<f64> = records.iter().map(|r| r.budget).collect();
    let budget_sq: Vec<f64> = budget.iter().map(|b| b * b).collect();
    let err: Vec<f64> = records.iter().map(|r| r.sup_error).collect();
    let grad: Vec<f64> = records.iter().map(|r| r.grad_v).collect();
    let m_min = records.iter().map(|r| r.error_ratio).fold(f64::INFINITY, f64::min);
    let m_max = records.iter().map(|r| r.error_ratio).fold(0.0, f64::max);
    Ok(SweepFit {
        points: records.len(),
        slope: loglog_slope(&budget, &err)?,
        m_min,
        m_max,
        m_ratio: m_max / m_min,
        grad_slope: loglog_slope(&budget_sq, &grad)?,
        grad_m_max: records.iter().map(|r| r.grad_v_ratio).fold(0.0, f64::max),
    })
}

fn sort_by_beta(records: &mut [ConvergenceRecord]) {
    records.sort_by(|a, b| a.beta.total_cmp(&b.beta).then_with(|| a.run.cmp(&b.run)));
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub records: Vec<ConvergenceRecord>,
    pub skipped: Vec<Skipped>,
    pub fit: SweepFit,
}

/// Run every admissible sweep point on `jobs` worker threads. Inadmissible
/// points and failed runs are listed in `skipped.csv` with their reasons.
pub fn cmd_sweep(cfg: &RunConfig, jobs: usize) -> Result<SweepOutcome> {
    cfg.validate()?;
    let mut skipped = Vec::new();
    let mut todo = Vec::new();
    for (eta, nu, delta) in cfg.sweep.points() {
        let point = cfg.with_point(eta, nu, delta);
        match setup(&point) {
            Ok(s) if s.verdict.admissible => todo.push(point),
            Ok(s) => skipped.push(Skipped { eta, nu, delta, reason: s.verdict.reason }),
            Err(e) => skipped.push(Skipped { eta, nu, delta, reason: e.to_string() }),
        }
    }
    if todo.is_empty() {
        let reasons: Vec<String> = skipped.iter().map(|s| format!("η = {:e}: {}", s.eta, s.reason)).collect();
        return Err(Error::Validation(format!("no admissible sweep points ({})", reasons.join("; "))));
    }
    if todo.len() < 4 {
        return Err(Error::Validation(format!(
            "a sweep needs at least 4 admissible points, got {}",
            todo.len()
        )));
    }
    std::fs::create_dir_all(&cfg.out)?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<ConvergenceRecord>>>> = Mutex::new((0..todo.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, todo.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= todo.len() {
                    break;
                }
                let name = format!("run_{i:02}");
                let r = execute(&todo[i], &cfg.out.join(&name), &name).map(|o| o.record);
                results.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    let mut records = Vec::new();
    for (point, r) in todo.iter().zip(results.into_inner().expect("workers finished")) {
        match r.expect("every point ran") {
            Ok(rec) => records.push(rec),
            Err(e) => skipped.push(Skipped {
                eta: point.viscosity.eta,
                nu: point.viscosity.nu,
                delta: point.geometry.delta,
                reason: format!("run failed: {e}"),
            }),
        }
    }
    sort_by_beta(&mut records);
    write_csv(&cfg.out.join("sweep.csv"), &records)?;
    write_csv(&cfg.out.join("table.csv"), &records.iter().map(TableRow::from).collect::<Vec<_>>())?;
    write_csv(&cfg.out.join("skipped.csv"), &skipped)?;
    let fit = fit_records(&records)?;
    write_csv(&cfg.out.join("fit.csv"), std::slice::from_ref(&fit))?;
    Ok(SweepOutcome { records, skipped, fit })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub records: Vec<ConvergenceRecord>,
    pub fit: Option<SweepFit>,
    pub text: String,
}

/// Merge every `record.csv` in `dir` and its immediate subdirectories into
/// `report.csv` (sorted by `β`) and `summary.txt`.
pub fn cmd_report(dir: &Path) -> Result<Report> {
    let mut files = Vec::new();
    if dir.join("record.csv").is_file() {
        files.push(dir.join("record.csv"));
    }
    if dir.is_dir() {
        let mut subs: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("record.csv").is_file())
            .collect();
        subs.sort();
        files.extend(subs.into_iter().map(|p| p.join("record.csv")));
    }
    if files.is_empty() {
        return Err(Error::Validation(format!("no runs found in {}", dir.display())));
    }
    let mut records = Vec::new();
    for f in &files {
        let rows: Vec<ConvergenceRecord> =
            read_csv(f).map_err(|e| Error::Validation(format!("corrupt record file {}: {e}", f.display())))?;
        if rows.is_empty() {
            return Err(Error::Validation(format!("corrupt record file {}: no rows", f.display())));
        }
        records.extend(rows);
    }
    sort_by_beta(&mut records);
    write_csv(&dir.join("report.csv"), &records)?;
    let fit = if records.len() >= 2 { fit_records(&records).ok() } else { None };
    let mut text = String::new();
    text.push_str(&format!("{} run(s)\n", records.len()));
    text.push_str("run            beta          budget        sup_error     error_ratio   grad_v_ratio  max_closure\n");
    for r in &records {
        text.push_str(&format!(
            "{:<14} {:<13.6e} {:<13.6e} {:<13.6e} {:<13.6e} {:<13.6e} {:.3e}\n",
            r.run, r.beta, r.budget, r.sup_error, r.error_ratio, r.grad_v_ratio, r.max_closure
        ));
    }
    if let Some(f) = &fit {
        text.push_str(&format!(
            "slope of error vs budget {:.4}; M in [{:.4e}, {:.4e}] (max/min {:.3}); gradient slope {:.4}\n",
            f.slope, f.m_min, f.m_max, f.m_ratio, f.grad_slope
        ));
    }
    std::fs::write(dir.join("summary.txt"), &text)?;
    Ok(Report { records, fit, text })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let c = RunConfig::default();
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let r = RunConfig::from_json(r#"{"grid": {"n1": 8, "nx": 3}}"#);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn geometric_grid_values() {
        let g = GeometricGrid { start: 1.0, ratio: 0.5, count: 3 };
        assert_eq!(g.values(), vec![1.0, 0.5, 0.25]);
    }
}
