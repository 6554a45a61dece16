//! Energy audit of the remainder `v = u − w − 𝓑`.
//!
//! Testing the transformed equation with `v` gives
//!
//! `½ d/dt‖v‖² + ⟨A∇v, ∇v⟩ = Σ (named terms)`,
//!
//! with the named terms listed on [`LedgerRow`]. The discrete ledger uses
//! the scheme's own time difference for `½ d/dt‖v‖²` and evaluates every
//! named term independently by grid quadrature; terms that vanish only in
//! the continuum (skew advection, pressure, the Euler residual of the
//! sampled reference flow) are evaluated and kept in the sum. What is left,
//! the closure defect, is the splitting error of the time stepper and is
//! reported rather than thrown.
//!
//! All correctors share the time factor `s(t)`, so their samples and all
//! products among them are computed once.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::boundary_layer::BoundaryLayerField;
use crate::error::{Error, Result};
use crate::fields::{Disc, Field, Grad, Grid};
use crate::flow::{BaseSamples, CorrectorPair, ReferenceFlow};
use crate::params::ParamTriple;
use crate::solver::{anisotropic_form, EnergyInequality, InitReport, Solver, StepContext, StepInfo};

/// `ε` used for the cross-diffusion split in the term-bound table.
pub const CROSS_DIFFUSION_EPS: f64 = 0.1;

fn zero_top(f: &mut Field) {
    let [n1, n2, nz] = f.dims();
    let p = n1 * n2;
    for c in 0..f.ncomp() {
        f.comp_mut(c)[(nz - 1) * p..].fill(0.0);
    }
}

/// `v = u − w(t) − 𝓑(t)` from pointwise closed-form evaluation.
pub fn compute_v(u: &Field, grid: &Grid, pair: &CorrectorPair, bl: &BoundaryLayerField, t: f64) -> Result<Field> {
    u.check_grid(grid)?;
    if u.ncomp() != 3 {
        return Err(Error::GridMismatch("compute_v needs a vector field".into()));
    }
    let z = Field::vector_from_fn(grid, |y| {
        let w = pair.w_at(t, y);
        let b = bl.at(t, y);
        [w[0] + b[0], w[1] + b[1], w[2] + b[2]]
    });
    let mut v = u.sub(&z)?;
    v.time = t;
    Ok(v)
}

/// Steady samples of the correctors (`X(t) = s(t)·X_b`) with the top
/// level set to zero, so that `v` vanishes on both walls.
#[derive(Debug, Clone)]
pub struct CorrectorFields {
    pub w0: Field,
    pub wt: Field,
    pub w: Field,
    pub bl: Field,
    pub z: Field,
    /// `Bᵀ∇q` and `(B − I)ᵀ∇q`.
    pub bt_grad_q: Field,
    pub bgt_grad_q: Field,
}

pub fn sample_correctors(
    solver: &Solver,
    pair: &CorrectorPair,
    bl: &BoundaryLayerField,
    base: &BaseSamples,
) -> Result<CorrectorFields> {
    let grid = solver.disc().grid();
    let mut w0 = base.wb.clone();
    zero_top(&mut w0);
    let mut wt = pair.sample_wt_base(grid, base);
    zero_top(&mut wt);
    let mut w = w0.clone();
    w.axpy(-pair.d(), &wt)?;
    let mut blf = bl.sample_base(grid);
    zero_top(&mut blf);
    let z = w.add(&blf)?;
    let bt_grad_q = solver.b_rows().apply_t(&base.grad_q);
    let bgt_grad_q = bt_grad_q.sub(&base.grad_q)?;
    Ok(CorrectorFields { w0, wt, w, bl: blf, z, bt_grad_q, bgt_grad_q })
}

/// One time step of the energy ledger. `T_*` fields are the named terms
/// of the identity; `skew`, `pressure` and `euler_residual` vanish in the
/// continuum and are included in `rhs_sum`; `splitting` and `time_lag`
/// are the identified parts of `defect`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub run: String,
    pub step: usize,
    pub t: f64,
    pub v_l2: f64,
    /// `⟨A∇v, ∇v⟩`.
    pub dissipation: f64,
    /// `⟨D_t v, v⟩ + ⟨A∇v, ∇v⟩` with the scheme's time difference `D_t`.
    pub lhs: f64,
    /// `−⟨N(Bw,𝓑) + N(B𝓑,𝓑) + N(B𝓑,w), v⟩`.
    pub t_adv_layer: f64,
    /// `−⟨N(Bv,w), v⟩`.
    pub t_vw: f64,
    /// `−⟨∂ₜ𝓑, v⟩`.
    pub t_dt_layer: f64,
    /// `−⟨A∇(w + 𝓑), ∇v⟩`.
    pub t_cross_diffusion: f64,
    /// `−⟨N(Bv,𝓑), v⟩`.
    pub t_v_layer: f64,
    /// `⟨F − F⁰, v⟩`.
    pub t_forcing: f64,
    /// `δ^{α−5/2}⟨∂ₜw̃, v⟩`.
    pub t_dt_wt: f64,
    /// `δ^{α−5/2}⟨N(w⁰,w̃), v⟩`.
    pub t_w0_wt: f64,
    /// `δ^{α−5/2}⟨N(w̃,w), v⟩`.
    pub t_wt_w: f64,
    /// `−⟨N((B − I)w, w), v⟩`.
    pub t_bg: f64,
    /// `−⟨(B − I)ᵀ∇q, v⟩`.
    pub t_q: f64,
    /// `−⟨N(Bu,v), v⟩`.
    pub skew: f64,
    /// `−⟨B*∇p, v⟩ + ⟨Bᵀ∇q, v⟩`.
    pub pressure: f64,
    /// `⟨(w⁰·∇)w⁰ − N(w⁰,w⁰), v⟩`.
    pub euler_residual: f64,
    pub rhs_sum: f64,
    pub defect: f64,
    /// `|defect| / max(|lhs|, 1)`.
    pub closure: f64,
    /// Extrapolated advection and pressure-correction part of the defect.
    pub splitting: f64,
    /// `⟨∂ₜz − D_t z, v⟩`, the time-difference part of the defect.
    pub time_lag: f64,
    pub w0_h3: f64,
    pub f0_h2: f64,
    pub f0_l2: f64,
    pub forcing_mismatch: f64,
    pub layer_l2: f64,
    pub u_minus_w0: f64,
    /// `η‖D_{y′}u‖² + ν‖D₃u‖²`.
    pub grad_u: f64,
    pub grad_v: f64,
    /// Measured coefficients with `½d/dt‖v‖² ≤ f₀‖v‖² + f₁‖v‖ + f₂ + defect`.
    pub f0_measured: f64,
    pub f1_measured: f64,
    pub f2_measured: f64,
    /// The same coefficients in closed form with unit constants.
    pub f0_shape: f64,
    pub f1_shape: f64,
    pub f2_shape: f64,
}

/// Initial-time quantities of an audited run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditStart {
    pub v_l2: f64,
    pub u_minus_w0: f64,
    pub grad_u: f64,
    pub grad_v: f64,
    pub layer_l2: f64,
}

/// Per-run energy audit driven from the solver's step observer.
pub struct Auditor {
    run: String,
    disc: Arc<Disc>,
    flow: Arc<ReferenceFlow>,
    pair: Arc<CorrectorPair>,
    p: ParamTriple,
    base: Arc<BaseSamples>,
    fields: CorrectorFields,
    grad_w: Grad,
    grad_bl: Grad,
    /// Steady products, to be scaled by `s²`.
    adv_layer: Field,
    w0_wt: Field,
    wt_w: Field,
    bg: Field,
    w0_w0: Field,
    layer_l2_base: f64,
    sup_w0_h3: f64,
    start: Option<AuditStart>,
    rows: Vec<LedgerRow>,
}

impl Auditor {
    pub fn new(
        run: impl Into<String>,
        solver: &Solver,
        pair: Arc<CorrectorPair>,
        bl: &BoundaryLayerField,
        base: Arc<BaseSamples>,
        p: ParamTriple,
        t_end: f64,
    ) -> Result<Self> {
        let disc = Arc::clone(solver.disc());
        let fields = sample_correctors(solver, &pair, bl, &base)?;
        let b = solver.b_rows();
        let grad_w = disc.gradient_vec(&fields.w);
        let grad_bl = disc.gradient_vec(&fields.bl);
        let grad_wt = disc.gradient_vec(&fields.wt);
        let grad_w0 = disc.gradient_vec(&fields.w0);
        let vel = |f: &Field| -> [Vec<f64>; 3] { [f.comp(0).to_vec(), f.comp(1).to_vec(), b.third(f.comps())] };
        let adv = |a: &[Vec<f64>; 3], f: &Field, g: &Grad| disc.advect([&a[0], &a[1], &a[2]], f, Some(g));
        let (bw, bbl) = (vel(&fields.w), vel(&fields.bl));
        let mut adv_layer = adv(&bw, &fields.bl, &grad_bl);
        adv_layer.axpy(1.0, &adv(&bbl, &fields.bl, &grad_bl))?;
        adv_layer.axpy(1.0, &adv(&bbl, &fields.w, &grad_w))?;
        let plain = |f: &Field| [f.comp(0).to_vec(), f.comp(1).to_vec(), f.comp(2).to_vec()];
        let w0_wt = adv(&plain(&fields.w0), &fields.wt, &grad_wt);
        let wt_w = adv(&plain(&fields.wt), &fields.w, &grad_w);
        let bgw = b.apply_minus_identity(&fields.w);
        let bg = adv(&plain(&bgw), &fields.w, &grad_w);
        let w0_w0 = adv(&plain(&fields.w0), &fields.w0, &grad_w0);
        let layer_l2_base = disc.l2(&fields.bl);
        let flow = pair.flow_arc();
        let sup_w0_h3 = flow.sup_w0_h3(t_end);
        Ok(Self {
            run: run.into(),
            disc,
            flow,
            pair,
            p,
            base,
            fields,
            grad_w,
            grad_bl,
            adv_layer,
            w0_wt,
            wt_w,
            bg,
            w0_w0,
            layer_l2_base,
            sup_w0_h3,
            start: None,
            rows: Vec::new(),
        })
    }

    pub fn fields(&self) -> &CorrectorFields {
        &self.fields
    }

    pub fn rows(&self) -> &[LedgerRow] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<LedgerRow> {
        self.rows
    }

    pub fn initial(&self) -> Option<&AuditStart> {
        self.start.as_ref()
    }

    /// `v` from the cached samples.
    pub fn v_of(&self, u: &Field, t: f64) -> Result<Field> {
        let mut v = u.clone();
        v.axpy(-self.flow.s(t), &self.fields.z)?;
        v.time = t;
        Ok(v)
    }

    fn u_minus_w0(&self, u: &Field, t: f64) -> Result<f64> {
        let mut d = u.clone();
        d.axpy(-self.flow.s(t), &self.base.wb)?;
        Ok(self.disc.l2(&d))
    }

    /// Record the initial state.
    pub fn start(&mut self, solver: &Solver, u0: &Field) -> Result<AuditStart> {
        let t = u0.time;
        let v = self.v_of(u0, t)?;
        let (eta, nu) = (self.p.eta, self.p.nu);
        let s = AuditStart {
            v_l2: self.disc.l2(&v),
            u_minus_w0: self.u_minus_w0(u0, t)?,
            grad_u: anisotropic_form(solver.disc(), u0, eta, nu),
            grad_v: anisotropic_form(solver.disc(), &v, eta, nu),
            layer_l2: self.flow.s(t).abs() * self.layer_l2_base,
        };
        self.start = Some(s);
        Ok(s)
    }

    /// Evaluate the identity at the step described by `ctx`.
    pub fn observe(&mut self, solver: &mut Solver, ctx: &StepContext) -> Result<&LedgerRow> {
        let info = ctx.info;
        let t1 = info.t;
        let flow = Arc::clone(&self.flow);
        let (s, ds) = (flow.s(t1), flow.ds(t1));
        let disc = Arc::clone(&self.disc);
        let u = ctx.u_new;
        let v = self.v_of(u, t1)?;
        let inner = |a: &Field, b: &Field| disc.inner(a, b);

        // Discrete ½d/dt‖v‖² from the scheme's time difference.
        let du = ctx.time_difference(u, ctx.u_old, ctx.u_older)?;
        let s_old = flow.s(t1 - info.dt);
        let s_older = flow.s(t1 - 2.0 * info.dt);
        let ds_disc = if info.order == 2 && ctx.u_older.is_some() {
            (1.5 * s - 2.0 * s_old + 0.5 * s_older) / info.dt
        } else {
            (s - s_old) / info.dt
        };
        let mut dv = du;
        dv.axpy(-ds_disc, &self.fields.z)?;
        let epoch = ctx.epoch;
        let dissipation = solver.diffusion().bilinear(epoch, &v, &v);
        let lhs = inner(&dv, &v)? + dissipation;

        let b = solver.b_rows().clone();
        let bv3 = b.third(v.comps());
        let adv_v = |f: &Field, g: &Grad| disc.advect([v.comp(0), v.comp(1), &bv3], f, Some(g));
        let z = self.fields.z.scaled(s);
        let s2 = s * s;
        let d = self.pair.d();

        let t_adv_layer = -s2 * inner(&self.adv_layer, &v)?;
        let t_vw = -s * inner(&adv_v(&self.fields.w, &self.grad_w), &v)?;
        let t_v_layer = -s * inner(&adv_v(&self.fields.bl, &self.grad_bl), &v)?;
        let t_dt_layer = -ds * inner(&self.fields.bl, &v)?;
        let t_cross_diffusion = -solver.diffusion().bilinear(epoch, &z, &v);
        let f0 = {
            let mut f = self.base.wb.scaled(ds);
            f.axpy(s2, &self.base.conv)?;
            f.axpy(1.0, &self.base.grad_q)?;
            f
        };
        let mismatch = ctx.forcing.sub(&f0)?;
        let t_forcing = inner(&mismatch, &v)?;
        let t_dt_wt = d * ds * inner(&self.fields.wt, &v)?;
        let t_w0_wt = d * s2 * inner(&self.w0_wt, &v)?;
        let t_wt_w = d * s2 * inner(&self.wt_w, &v)?;
        let t_bg = -s2 * inner(&self.bg, &v)?;
        let t_q = -inner(&self.fields.bgt_grad_q, &v)?;

        let bu3 = b.third(u.comps());
        let skew = -inner(&disc.advect([u.comp(0), u.comp(1), &bu3], &v, None), &v)?;
        let grad_p = solver.projector().gradient(ctx.lambda);
        let pressure = -inner(&grad_p, &v)? + inner(&self.fields.bt_grad_q, &v)?;
        let mut euler = self.base.conv.scaled(s2);
        euler.axpy(-s2, &self.w0_w0)?;
        let euler_residual = inner(&euler, &v)?;

        let named = [
            t_adv_layer,
            t_vw,
            t_dt_layer,
            t_cross_diffusion,
            t_v_layer,
            t_forcing,
            t_dt_wt,
            t_w0_wt,
            t_wt_w,
            t_bg,
            t_q,
        ];
        let rhs_sum = named.iter().sum::<f64>() + skew + pressure + euler_residual;
        let defect = lhs - rhs_sum;
        let splitting = inner(&ctx.advection_new.sub(ctx.advection)?, &v)?
            - solver.diffusion().bilinear(epoch, ctx.correction, &v);
        let time_lag = (ds - ds_disc) * inner(&self.fields.z, &v)?;

        let v_l2 = disc.l2(&v);
        let (w0_h3, f0_h2, f0_l2) = (flow.w0_hk(t1, 3), flow.f0_hk(t1, 2), flow.f0_hk(t1, 0));
        let forcing_mismatch = disc.l2(&mismatch);
        let (f0m, f1m, f2m) = if v_l2 > 0.0 {
            let quad = t_vw.abs() + t_v_layer.abs();
            let lin = t_adv_layer.abs()
                + t_dt_layer.abs()
                + t_forcing.abs()
                + t_dt_wt.abs()
                + t_w0_wt.abs()
                + t_wt_w.abs()
                + t_bg.abs()
                + t_q.abs()
                + skew.abs()
                + pressure.abs()
                + euler_residual.abs();
            (quad / (v_l2 * v_l2), lin / v_l2, (t_cross_diffusion.abs() - dissipation).max(0.0))
        } else {
            (0.0, 0.0, t_cross_diffusion.abs())
        };
        let p = &self.p;
        let tn = p.theta * p.nu;
        let f0_shape = w0_h3 + p.nu;
        let f1_shape = (tn.powf(0.25) + p.delta_power()) * (w0_h3 * w0_h3 + f0_h2) + forcing_mismatch;
        let f2_shape = (p.eta + (p.nu / p.eta).sqrt() * self.sup_w0_h3) * w0_h3 * w0_h3;

        let (eta, nu) = (p.eta, p.nu);
        let grad_u = solver.diffusion().anisotropic_form(u, eta, nu);
        let grad_v = solver.diffusion().anisotropic_form(&v, eta, nu);
        let row = LedgerRow {
            run: self.run.clone(),
            step: info.step,
            t: t1,
            v_l2,
            dissipation,
            lhs,
            t_adv_layer,
            t_vw,
            t_dt_layer,
            t_cross_diffusion,
            t_v_layer,
            t_forcing,
            t_dt_wt,
            t_w0_wt,
            t_wt_w,
            t_bg,
            t_q,
            skew,
            pressure,
            euler_residual,
            rhs_sum,
            defect,
            closure: defect.abs() / lhs.abs().max(1.0),
            splitting,
            time_lag,
            w0_h3,
            f0_h2,
            f0_l2,
            forcing_mismatch,
            layer_l2: s.abs() * self.layer_l2_base,
            u_minus_w0: self.u_minus_w0(u, t1)?,
            grad_u,
            grad_v,
            f0_measured: f0m,
            f1_measured: f1m,
            f2_measured: f2m,
            f0_shape,
            f1_shape,
            f2_shape,
        };
        if let Some(last) = self.rows.last() {
            if !(row.t > last.t) {
                return Err(Error::Validation(format!("ledger rows must advance in time: {} after {}", row.t, last.t)));
            }
        }
        self.rows.push(row);
        Ok(self.rows.last().expect("just pushed"))
    }
}

/// One line of the term-bound table: the measured term, its bound shape with unit
/// constant, and their ratio (the measured constant).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermBoundRow {
    pub bound: String,
    pub max_term: f64,
    pub max_ratio: f64,
    pub mean_ratio: f64,
}

/// Names of the bounds in [`term_bounds_report`], in order.
pub const TERM_BOUNDS: [&str; 7] = [
    "layer_advection",
    "v_advects_w",
    "layer_time_derivative_and_skew",
    "cross_diffusion",
    "v_advects_layer",
    "corrector_terms",
    "wall_coupling_terms",
];

/// Ratio of every bounded group of terms to its bound shape, per row,
/// reduced to max and mean over the ledger. Rows with `v = 0` are skipped.
pub fn term_bounds_report(rows: &[LedgerRow], p: &ParamTriple) -> Vec<TermBoundRow> {
    let tn = p.theta * p.nu;
    let cp = p.delta.powf(p.alpha - 1.0);
    let d = p.delta_power();
    let eps = CROSS_DIFFUSION_EPS;
    let mut acc = vec![(0.0f64, 0.0f64, 0.0f64, 0usize); TERM_BOUNDS.len()];
    for r in rows.iter().filter(|r| r.v_l2 > 0.0) {
        let (w, v) = (r.w0_h3, r.v_l2);
        let pairs = [
            (r.t_adv_layer.abs(), tn.powf(0.25) * w * w * v),
            (r.t_vw.abs(), w * v * v),
            (r.t_dt_layer.abs() + r.skew.abs(), tn.powf(0.25) * (w * w + r.f0_l2) * v),
            (
                r.t_cross_diffusion.abs(),
                eps * r.dissipation
                    + (p.eta * (1.0 + tn.sqrt()) + p.nu * (1.0 + 1.0 / tn.sqrt())) * w * w / eps,
            ),
            (r.t_v_layer.abs(), w * v * v + p.epsilon * r.dissipation + p.epsilon * p.nu * v * v),
            (
                r.t_dt_wt.abs() + r.t_w0_wt.abs() + r.t_wt_w.abs(),
                d * (w * w + r.f0_h2) * v,
            ),
            (r.t_bg.abs() + r.t_q.abs(), cp * (r.f0_l2 + w * w) * v),
        ];
        for (a, (term, shape)) in acc.iter_mut().zip(pairs) {
            let ratio = if shape > 0.0 { term / shape } else { 0.0 };
            a.0 = a.0.max(term);
            a.1 = a.1.max(ratio);
            a.2 += ratio;
            a.3 += 1;
        }
    }
    TERM_BOUNDS
        .iter()
        .zip(acc)
        .map(|(name, (mt, mr, sr, n))| TermBoundRow {
            bound: name.to_string(),
            max_term: mt,
            max_ratio: mr,
            mean_ratio: if n > 0 { sr / n as f64 } else { 0.0 },
        })
        .collect()
}

/// Growth of each term-bound ratio along a refinement sequence (ordered from
/// coarse to fine); flagged when the last ratio exceeds the first by more
/// than `tolerance` (relative).
pub fn ratio_growth_flags(sequence: &[Vec<TermBoundRow>], tolerance: f64) -> Vec<(String, f64, bool)> {
    if sequence.len() < 2 {
        return Vec::new();
    }
    let (first, last) = (&sequence[0], &sequence[sequence.len() - 1]);
    first
        .iter()
        .zip(last)
        .map(|(a, b)| {
            let g = if a.max_ratio > 0.0 { b.max_ratio / a.max_ratio } else if b.max_ratio > 0.0 { f64::INFINITY } else { 1.0 };
            (a.bound.clone(), g, g > 1.0 + tolerance)
        })
        .collect()
}

/// Comparison solution of `y′ = f₀y + f₁√y + f₂`, `y(0) = f_init²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub t: Vec<f64>,
    /// `√y` at the sample times.
    pub sqrt_y: Vec<f64>,
    /// Smallest `M` with `sup √y ≤ Mγ`.
    pub m: f64,
    /// RK4 substeps per sample interval used at convergence.
    pub substeps: usize,
}

const ENVELOPE_RTOL: f64 = 1e-12;
const ENVELOPE_MAX_HALVINGS: usize = 16;

fn lerp(t: &[f64], f: &[f64], i: usize, s: f64) -> f64 {
    let w = (s - t[i]) / (t[i + 1] - t[i]);
    f[i] * (1.0 - w) + f[i + 1] * w
}

fn envelope_pass(t: &[f64], f: [&[f64]; 3], y0: f64, sub: usize) -> Vec<f64> {
    let mut y = y0;
    let mut out = Vec::with_capacity(t.len());
    out.push(y);
    for i in 0..t.len() - 1 {
        let h = (t[i + 1] - t[i]) / sub as f64;
        let rhs = |s: f64, y: f64| {
            let y = y.max(0.0);
            lerp(t, f[0], i, s) * y + lerp(t, f[1], i, s) * y.sqrt() + lerp(t, f[2], i, s)
        };
        for k in 0..sub {
            let s = t[i] + k as f64 * h;
            let k1 = rhs(s, y);
            let k2 = rhs(s + 0.5 * h, y + 0.5 * h * k1);
            let k3 = rhs(s + 0.5 * h, y + 0.5 * h * k2);
            let k4 = rhs(s + h, y + h * k3);
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        out.push(y);
    }
    out
}

/// Integrate the comparison problem through sampled, piecewise-linear
/// coefficients with RK4, halving the substep until successive passes
/// agree to `1e-12` relative.
pub fn gronwall_envelope(t: &[f64], f0: &[f64], f1: &[f64], f2: &[f64], f_init: f64, gamma: f64) -> Result<Envelope> {
    let n = t.len();
    if n == 0 || f0.len() != n || f1.len() != n || f2.len() != n {
        return Err(Error::Validation("envelope series must be non-empty and of equal length".into()));
    }
    if t.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Validation("envelope times must increase strictly".into()));
    }
    for (name, f) in [("f0", f0), ("f1", f1), ("f2", f2)] {
        if let Some(x) = f.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
            return Err(Error::Domain(format!("envelope coefficient {name} must be finite and nonnegative, got {x}")));
        }
    }
    if !(f_init >= 0.0 && f_init.is_finite()) {
        return Err(Error::Domain(format!("initial value must be nonnegative, got {f_init}")));
    }
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("budget γ must be positive, got {gamma}")));
    }
    let y0 = f_init * f_init;
    let mut sub = 1;
    let mut prev = envelope_pass(t, [f0, f1, f2], y0, sub);
    for _ in 0..ENVELOPE_MAX_HALVINGS {
        sub *= 2;
        let next = envelope_pass(t, [f0, f1, f2], y0, sub);
        let change = prev.iter().zip(&next).map(|(a, b)| (a - b).abs() / b.abs().max(1e-300)).fold(0.0, f64::max);
        prev = next;
        if change <= ENVELOPE_RTOL {
            break;
        }
    }
    let sqrt_y: Vec<f64> = prev.iter().map(|y| y.max(0.0).sqrt()).collect();
    let m = sqrt_y.iter().cloned().fold(0.0, f64::max) / gamma;
    Ok(Envelope { t: t.to_vec(), sqrt_y, m, substeps: sub })
}

/// Envelope driven by the ledger's measured coefficients, and the worst
/// excess of `‖v‖` over it once the accumulated closure defect is allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    pub envelope: Envelope,
    /// `max(‖v(t)‖ − √y(t) − √(2∫|defect|))`; nonpositive means dominated.
    pub worst_excess: f64,
}

pub fn ledger_envelope(start: &AuditStart, rows: &[LedgerRow], gamma: f64) -> Result<EnvelopeCheck> {
    let first = rows.first().ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
    // The initial sample reuses the first step's coefficients.
    let mut t = vec![0.0];
    let mut f = [vec![2.0 * first.f0_measured], vec![2.0 * first.f1_measured], vec![2.0 * first.f2_measured]];
    for r in rows {
        t.push(r.t);
        f[0].push(2.0 * r.f0_measured);
        f[1].push(2.0 * r.f1_measured);
        f[2].push(2.0 * r.f2_measured);
    }
    let env = gronwall_envelope(&t, &f[0], &f[1], &f[2], start.v_l2, gamma)?;
    let mut acc = 0.0;
    let mut worst = f64::NEG_INFINITY;
    let mut prev_t = 0.0;
    for (i, r) in rows.iter().enumerate() {
        acc += (r.t - prev_t) * r.defect.abs();
        prev_t = r.t;
        worst = worst.max(r.v_l2 - env.sqrt_y[i + 1] - (2.0 * acc).sqrt());
    }
    Ok(EnvelopeCheck { envelope: env, worst_excess: worst })
}

/// Per-run summary of the convergence metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub run: String,
    pub eta: f64,
    pub nu: f64,
    pub delta: f64,
    pub alpha: f64,
    pub theta: f64,
    pub beta: f64,
    pub delta_power: f64,
    pub budget: f64,
    pub t_end: f64,
    pub dt: f64,
    pub steps: usize,
    /// `sup_t ‖u − w⁰‖_{L²}` and its ratio to the budget.
    pub sup_error: f64,
    pub error_ratio: f64,
    /// `∫(η‖D_{y′}u‖² + ν‖D₃u‖²)dt` and its ratio to the squared budget.
    pub grad_u: f64,
    pub grad_u_ratio: f64,
    pub grad_v: f64,
    pub grad_v_ratio: f64,
    pub sup_v: f64,
    pub v_ratio: f64,
    /// `sup_t ‖𝓑‖_{L²}` against `(θν)^{1/4} sup‖w⁰‖_{H³}`.
    pub layer_sup: f64,
    pub layer_ratio: f64,
    pub envelope_m: f64,
    pub envelope_excess: f64,
    pub energy_constant: f64,
    pub max_closure: f64,
    pub max_div_residual: f64,
    pub max_advection_work: f64,
    pub max_pressure_work: f64,
    pub init_deviation: f64,
    pub lift_norm: f64,
}

fn trapezoid(t: &[f64], f: &[f64]) -> f64 {
    t.windows(2).zip(f.windows(2)).map(|(t, f)| 0.5 * (t[1] - t[0]) * (f[0] + f[1])).sum()
}

/// Inputs to [`convergence_metrics`] that come from the solver.
#[derive(Debug, Clone, Copy)]
pub struct RunSummary<'a> {
    pub init: &'a InitReport,
    pub energy: &'a EnergyInequality,
    pub steps: &'a [StepInfo],
    pub t_end: f64,
    pub dt: f64,
}

pub fn convergence_metrics(
    run: &str,
    start: &AuditStart,
    rows: &[LedgerRow],
    summary: RunSummary,
    flow: &ReferenceFlow,
    p: &ParamTriple,
) -> Result<ConvergenceRecord> {
    if rows.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let gamma = p.budget();
    let mut t = vec![0.0];
    t.extend(rows.iter().map(|r| r.t));
    let series = |first: f64, f: fn(&LedgerRow) -> f64| -> Vec<f64> {
        std::iter::once(first).chain(rows.iter().map(f)).collect()
    };
    let sup_error = series(start.u_minus_w0, |r| r.u_minus_w0).into_iter().fold(0.0, f64::max);
    let sup_v = series(start.v_l2, |r| r.v_l2).into_iter().fold(0.0, f64::max);
    let layer_sup = series(start.layer_l2, |r| r.layer_l2).into_iter().fold(0.0, f64::max);
    let grad_u = trapezoid(&t, &series(start.grad_u, |r| r.grad_u));
    let grad_v = trapezoid(&t, &series(start.grad_v, |r| r.grad_v));
    let env = ledger_envelope(start, rows, gamma)?;
    let tn = p.theta * p.nu;
    let layer_shape = tn.powf(0.25) * flow.sup_w0_h3(summary.t_end);
    let max_of = |f: fn(&StepInfo) -> f64| summary.steps.iter().map(f).fold(0.0, f64::max);
    Ok(ConvergenceRecord {
        run: run.to_string(),
        eta: p.eta,
        nu: p.nu,
        delta: p.delta,
        alpha: p.alpha,
        theta: p.theta,
        beta: p.beta_value,
        delta_power: p.delta_power(),
        budget: gamma,
        t_end: summary.t_end,
        dt: summary.dt,
        steps: rows.len(),
        sup_error,
        error_ratio: sup_error / gamma,
        grad_u,
        grad_u_ratio: grad_u / (gamma * gamma),
        grad_v,
        grad_v_ratio: grad_v / (gamma * gamma),
        sup_v,
        v_ratio: sup_v / gamma,
        layer_sup,
        layer_ratio: if layer_shape > 0.0 { layer_sup / layer_shape } else { 0.0 },
        envelope_m: env.envelope.m,
        envelope_excess: env.worst_excess,
        energy_constant: summary.energy.constant,
        max_closure: rows.iter().map(|r| r.closure).fold(0.0, f64::max),
        max_div_residual: max_of(|s| s.div_residual),
        max_advection_work: max_of(|s| s.advection_work.abs()),
        max_pressure_work: max_of(|s| s.pressure_work.abs()),
        init_deviation: summary.init.deviation,
        lift_norm: summary.init.lift_norm,
    })
}

/// Write any serialisable rows as a CSV file with a header.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Read rows written by [`write_csv`].
pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_of_zero_coefficients_is_constant() {
        let t: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let z = vec![0.0; 11];
        let e = gronwall_envelope(&t, &z, &z, &z, 0.3, 1.0).unwrap();
        assert!(e.sqrt_y.iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn envelope_matches_exponential() {
        let t: Vec<f64> = (0..21).map(|i| i as f64 * 0.05).collect();
        let c = vec![1.7; 21];
        let z = vec![0.0; 21];
        let e = gronwall_envelope(&t, &c, &z, &z, 0.4, 1.0).unwrap();
        for (ti, v) in t.iter().zip(&e.sqrt_y) {
            let exact = 0.4 * (0.5 * 1.7 * ti).exp();
            assert!((v - exact).abs() < 1e-8 * exact);
        }
    }

    #[test]
    fn negative_coefficients_are_rejected() {
        let t = [0.0, 1.0];
        let r = gronwall_envelope(&t, &[0.0, -1.0], &[0.0, 0.0], &[0.0, 0.0], 1.0, 1.0);
        assert!(matches!(r, Err(Error::Domain(_))));
    }
}
