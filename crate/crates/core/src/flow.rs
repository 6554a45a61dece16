//! Manufactured Euler flows `(w⁰, q, F⁰)` and the correctors `w̃^δ`, `w`.
//!
//! Flows are `w⁰(t, y) = s(t)·w_b(y)` with a time modulation
//! `s(t) = 1 + μ sin(ωt)` and a steady, divergence-free base `w_b` that is
//! a finite sum of separable terms; `F⁰ = s′w_b + s²(w_b·∇)w_b + ∇q` makes
//! the Euler system hold identically.
//!
//! The correctors are
//! `w̃ = −w⁰ + (δ^{3/2} + δ^{α−1})(0, 0, −G₁w⁰₁ − G₂w⁰₂)` with
//! `G_k(y′) = D_kg(y′/δ)`, and `w = w⁰ − δ^{α−5/2}w̃`, so that
//! `Bw = (1 + δ^{α−5/2})w⁰` is divergence-free with no normal flux.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{Field, Grid};
use crate::geometry::{FlatteningMap, ProfileKind};
use crate::params::ParamTriple;
use crate::sep::{PolyExp, SepSum, Term, Trig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowKind {
    /// `w⁰ = (m(y₃) sin y₂, m(y₃) sin y₁, 0)`, `m = A e^{−k y₃}`.
    Shear,
    /// `w⁰ = curl(ρ(y₃) sin y₂, 0, 0)`, `ρ = A y₃ e^{−k y₃}`.
    Vortex,
}

/// `s(t) = 1 + amplitude·sin(ω t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Modulation {
    pub amplitude: f64,
    pub omega: f64,
}

impl Default for Modulation {
    fn default() -> Self {
        Self { amplitude: 0.5, omega: 1.0 }
    }
}

impl Modulation {
    pub const STEADY: Modulation = Modulation { amplitude: 0.0, omega: 0.0 };

    pub fn s(&self, t: f64) -> f64 {
        1.0 + self.amplitude * (self.omega * t).sin()
    }

    pub fn ds(&self, t: f64) -> f64 {
        self.amplitude * self.omega * (self.omega * t).cos()
    }

    /// `max |s|` over `[0, t_end]`.
    pub fn sup_abs(&self, t_end: f64) -> f64 {
        if self.amplitude == 0.0 || self.omega == 0.0 {
            return 1.0;
        }
        let peak = PI / (2.0 * self.omega.abs());
        let mut m = self.s(0.0).abs().max(self.s(t_end).abs());
        if t_end >= peak {
            m = m.max(1.0 + self.amplitude.abs());
        }
        m
    }
}

pub type Vec3Sep = [SepSum; 3];

fn sep_vec_scale(v: &Vec3Sep, s: f64) -> Vec3Sep {
    [v[0].scale(s), v[1].scale(s), v[2].scale(s)]
}

fn sep_vec_add(a: &Vec3Sep, b: &Vec3Sep) -> Vec3Sep {
    [a[0].add(&b[0]), a[1].add(&b[1]), a[2].add(&b[2])]
}

/// `(a·∇)b` for separable vector fields.
pub fn sep_convect(a: &Vec3Sep, b: &Vec3Sep) -> Vec3Sep {
    let comp = |i: usize| {
        let mut s = SepSum::zero();
        for k in 0..3 {
            s = s.add(&a[k].mul(&b[i].deriv(k)));
        }
        s
    };
    [comp(0), comp(1), comp(2)]
}

/// Squared `H^k` norm of a separable vector field.
pub fn sep_vec_hk_sq(v: &Vec3Sep, k: usize, period: f64) -> f64 {
    v.iter().map(|c| c.hk_sq_norm(k, period)).sum()
}

/// A manufactured solution of the Euler system on the half-space.
#[derive(Debug, Clone)]
pub struct ReferenceFlow {
    kind: FlowKind,
    amplitude: f64,
    decay: f64,
    q_coef: f64,
    modulation: Modulation,
    period: f64,
    base: Vec3Sep,
    grad_base: [[SepSum; 3]; 3],
    conv: Vec3Sep,
    q: SepSum,
    grad_q: Vec3Sep,
}

/// Build the steady base of a manufactured flow; `q ≡ 0`, `s ≡ 1`, and the
/// box period is `2π`. See [`ReferenceFlow::with_pressure`] and
/// [`ReferenceFlow::with_modulation`].
pub fn manufactured_euler(kind: FlowKind, amplitude: f64, decay: f64) -> Result<ReferenceFlow> {
    if !(amplitude.is_finite() && amplitude > 0.0 && decay.is_finite() && decay > 0.0) {
        return Err(Error::Validation(format!(
            "flow amplitude and decay must be positive, got {amplitude}, {decay}"
        )));
    }
    let one = PolyExp::new(vec![1.0], decay);
    let base: Vec3Sep = match kind {
        FlowKind::Shear => [
            SepSum::single(Term::new(amplitude, Trig::ONE, Trig::Sin(1), one.clone())),
            SepSum::single(Term::new(amplitude, Trig::Sin(1), Trig::ONE, one)),
            SepSum::zero(),
        ],
        FlowKind::Vortex => {
            let rho = PolyExp::new(vec![0.0, amplitude], decay);
            [
                SepSum::zero(),
                SepSum::single(Term::new(1.0, Trig::ONE, Trig::Sin(1), rho.deriv())),
                SepSum::single(Term::new(-1.0, Trig::ONE, Trig::Cos(1), rho)),
            ]
        }
    };
    let grad_base = [0, 1, 2].map(|i| [0, 1, 2].map(|j| base[i].deriv(j)));
    let conv = sep_convect(&base, &base);
    let mut f = ReferenceFlow {
        kind,
        amplitude,
        decay,
        q_coef: 0.0,
        modulation: Modulation::STEADY,
        period: 2.0 * PI,
        base,
        grad_base,
        conv,
        q: SepSum::zero(),
        grad_q: [SepSum::zero(), SepSum::zero(), SepSum::zero()],
    };
    f = f.with_pressure(0.0);
    Ok(f)
}

impl ReferenceFlow {
    /// Use `q = c·cos y₁·e^{−y₃}` (zero for `c = 0`).
    pub fn with_pressure(mut self, c: f64) -> Self {
        self.q_coef = c;
        if c == 0.0 {
            self.q = SepSum::zero();
        } else {
            self.q = SepSum::single(Term::new(c, Trig::Cos(1), Trig::ONE, PolyExp::new(vec![1.0], 1.0)));
        }
        self.grad_q = [self.q.deriv(0), self.q.deriv(1), self.q.deriv(2)];
        self
    }

    pub fn with_modulation(mut self, m: Modulation) -> Self {
        self.modulation = m;
        self
    }

    /// Periodic box side; must be a multiple of `2π`.
    pub fn with_period(mut self, period: f64) -> Result<Self> {
        let r = period / (2.0 * PI);
        if !(r >= 1.0 && (r - r.round()).abs() < 1e-9 * r) {
            return Err(Error::Config(format!("box period {period} is not a multiple of 2π")));
        }
        self.period = period;
        Ok(self)
    }

    pub fn kind(&self) -> FlowKind {
        self.kind
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn pressure_coef(&self) -> f64 {
        self.q_coef
    }

    pub fn modulation(&self) -> Modulation {
        self.modulation
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn base(&self) -> &Vec3Sep {
        &self.base
    }

    pub fn base_convection(&self) -> &Vec3Sep {
        &self.conv
    }

    pub fn grad_q_sep(&self) -> &Vec3Sep {
        &self.grad_q
    }

    pub fn s(&self, t: f64) -> f64 {
        self.modulation.s(t)
    }

    pub fn ds(&self, t: f64) -> f64 {
        self.modulation.ds(t)
    }

    pub fn base_at(&self, y: [f64; 3]) -> [f64; 3] {
        [self.base[0].eval(y), self.base[1].eval(y), self.base[2].eval(y)]
    }

    pub fn base_grad_at(&self, y: [f64; 3]) -> [[f64; 3]; 3] {
        let g = &self.grad_base;
        [0, 1, 2].map(|i| [0, 1, 2].map(|j| g[i][j].eval(y)))
    }

    pub fn w0_at(&self, t: f64, y: [f64; 3]) -> [f64; 3] {
        self.base_at(y).map(|v| self.s(t) * v)
    }

    pub fn dt_w0_at(&self, t: f64, y: [f64; 3]) -> [f64; 3] {
        self.base_at(y).map(|v| self.ds(t) * v)
    }

    pub fn grad_w0_at(&self, t: f64, y: [f64; 3]) -> [[f64; 3]; 3] {
        let s = self.s(t);
        self.base_grad_at(y).map(|r| r.map(|v| s * v))
    }

    pub fn q_at(&self, _t: f64, y: [f64; 3]) -> f64 {
        self.q.eval(y)
    }

    pub fn grad_q_at(&self, _t: f64, y: [f64; 3]) -> [f64; 3] {
        [self.grad_q[0].eval(y), self.grad_q[1].eval(y), self.grad_q[2].eval(y)]
    }

    /// `F⁰(t, y)`.
    pub fn f0_at(&self, t: f64, y: [f64; 3]) -> [f64; 3] {
        let (s, ds) = (self.s(t), self.ds(t));
        let gq = self.grad_q_at(t, y);
        [0, 1, 2].map(|i| ds * self.base[i].eval(y) + s * s * self.conv[i].eval(y) + gq[i])
    }

    /// `F⁰(t, ·)` as a separable sum.
    pub fn f0_sep(&self, t: f64) -> Vec3Sep {
        let a = sep_vec_scale(&self.base, self.ds(t));
        let b = sep_vec_scale(&self.conv, self.s(t).powi(2));
        sep_vec_add(&sep_vec_add(&a, &b), &self.grad_q)
    }

    /// `‖w_b‖_{H^k}` over the box times the half-line, closed form.
    pub fn base_hk(&self, k: usize) -> f64 {
        sep_vec_hk_sq(&self.base, k, self.period).sqrt()
    }

    /// `‖w⁰(t)‖_{H^k}`.
    pub fn w0_hk(&self, t: f64, k: usize) -> f64 {
        self.s(t).abs() * self.base_hk(k)
    }

    /// `sup_{[0, t_end]} ‖w⁰‖_{H³}`.
    pub fn sup_w0_h3(&self, t_end: f64) -> f64 {
        self.modulation.sup_abs(t_end) * self.base_hk(3)
    }

    /// `‖F⁰(t)‖_{H^k}`.
    pub fn f0_hk(&self, t: f64, k: usize) -> f64 {
        sep_vec_hk_sq(&self.f0_sep(t), k, self.period).sqrt()
    }

    /// `‖∂ₜw⁰(t)‖_{H^k}`.
    pub fn dt_w0_hk(&self, t: f64, k: usize) -> f64 {
        self.ds(t).abs() * self.base_hk(k)
    }

    /// Grid samples of the steady pieces.
    pub fn sample_base(&self, grid: &Grid) -> BaseSamples {
        let (x1, x2, z) = (grid.x1(), grid.x2(), grid.z().to_vec());
        let vec = |v: &Vec3Sep| {
            Field::from_components(grid, v.iter().map(|c| c.sample(&x1, &x2, &z)).collect())
                .expect("sample sizes match the grid")
        };
        BaseSamples { wb: vec(&self.base), conv: vec(&self.conv), grad_q: vec(&self.grad_q) }
    }
}

/// Steady grid samples of `w_b`, `(w_b·∇)w_b` and `∇q`.
#[derive(Debug, Clone)]
pub struct BaseSamples {
    pub wb: Field,
    pub conv: Field,
    pub grad_q: Field,
}

/// Check that `x` is a positive integer multiple of `unit`.
fn is_multiple(x: f64, unit: f64) -> bool {
    let r = x / unit;
    r >= 1.0 - 1e-9 && (r - r.round()).abs() < 1e-9 * r.max(1.0)
}

/// Closed-form correctors `w̃^δ`, `w` and the boundary divergence `A`.
#[derive(Debug, Clone)]
pub struct CorrectorPair {
    flow: Arc<ReferenceFlow>,
    map: FlatteningMap,
    d: f64,
    c: f64,
    osc: Option<[SepSum; 2]>,
    wt_sep: Option<Vec3Sep>,
    w_sep: Option<Vec3Sep>,
    a_sep: SepSum,
}

pub fn build_correctors(flow: Arc<ReferenceFlow>, p: &ParamTriple, map: FlatteningMap) -> Result<CorrectorPair> {
    if (p.delta - map.delta()).abs() > 1e-15 || (p.alpha - map.alpha()).abs() > 1e-15 {
        return Err(Error::Config(format!(
            "parameter δ, α = ({}, {}) differ from the flattening map ({}, {})",
            p.delta,
            p.alpha,
            map.delta(),
            map.alpha()
        )));
    }
    let box_p = flow.period();
    if !is_multiple(box_p, 2.0 * PI) {
        return Err(Error::Config(format!("box period {box_p} is not a multiple of the flow period 2π")));
    }
    let prof = map.profile();
    if prof.kind() != ProfileKind::Flat {
        let cell = map.delta() * prof.period();
        if !is_multiple(box_p, cell) {
            return Err(Error::Config(format!(
                "box period {box_p} is not a multiple of the oscillation period δ·P_g = {cell}"
            )));
        }
    }
    let delta = map.delta();
    let alpha = map.alpha();
    let d = delta.powf(alpha - 2.5);
    let c = delta.powf(1.5) + delta.powf(alpha - 1.0);
    let osc = oscillation_sep(&map);
    let base = flow.base();
    let (wt_sep, w_sep) = match &osc {
        Some([g1, g2]) => {
            let third = base[2].scale(-1.0).add(&g1.mul(&base[0]).add(&g2.mul(&base[1])).scale(-c));
            let wt = [base[0].scale(-1.0), base[1].scale(-1.0), third];
            let w = sep_vec_add(base, &sep_vec_scale(&wt, -d));
            (Some(wt), Some(w))
        }
        None => (None, None),
    };
    let a_sep = base[0].deriv(0).add(&base[1].deriv(1)).scale(1.0 + d);
    Ok(CorrectorPair { flow, map, d, c, osc, wt_sep, w_sep, a_sep })
}

/// `G₁`, `G₂` as separable sums, available for flat and cosine walls whose
/// fast frequency is an integer.
fn oscillation_sep(map: &FlatteningMap) -> Option<[SepSum; 2]> {
    let prof = map.profile();
    match prof.kind() {
        ProfileKind::Flat => Some([SepSum::zero(), SepSum::zero()]),
        ProfileKind::Cosine => {
            let kappa = 2.0 * PI / prof.period();
            let n = kappa / map.delta();
            if (n - n.round()).abs() > 1e-9 * n || n.round() < 1.0 {
                return None;
            }
            let n = n.round() as u32;
            let a = prof.amplitude() * kappa;
            let flat = PolyExp::new(vec![1.0], 0.0);
            Some([
                SepSum::single(Term::new(-a, Trig::Sin(n), Trig::Cos(n), flat.clone())),
                SepSum::single(Term::new(-a, Trig::Cos(n), Trig::Sin(n), flat)),
            ])
        }
        ProfileKind::Tabulated => None,
    }
}

impl CorrectorPair {
    pub fn flow(&self) -> &ReferenceFlow {
        &self.flow
    }

    pub fn flow_arc(&self) -> Arc<ReferenceFlow> {
        Arc::clone(&self.flow)
    }

    pub fn map(&self) -> &FlatteningMap {
        &self.map
    }

    /// `δ^{α−5/2}`.
    pub fn d(&self) -> f64 {
        self.d
    }

    /// `δ^{3/2} + δ^{α−1}`.
    pub fn c(&self) -> f64 {
        self.c
    }

    /// Separable forms of the steady bases of `w̃` and `w`, when available.
    pub fn separable(&self) -> Option<(&Vec3Sep, &Vec3Sep)> {
        match (&self.wt_sep, &self.w_sep) {
            (Some(a), Some(b)) => Some((a, b)),
            _ => None,
        }
    }

    pub fn oscillation(&self) -> Option<&[SepSum; 2]> {
        self.osc.as_ref()
    }

    /// Steady base of `A`: `A(t, y′) = s(t)·A_b(y′)`.
    pub fn a_sep(&self) -> &SepSum {
        &self.a_sep
    }

    /// `w̃_b(y)`, the steady part of `w̃ = s(t)·w̃_b`.
    pub fn wt_base_at(&self, y: [f64; 3]) -> [f64; 3] {
        let b = self.flow.base_at(y);
        let g = self.map.g_at([y[0], y[1]]);
        [-b[0], -b[1], -b[2] - self.c * (g.d1 * b[0] + g.d2 * b[1])]
    }

    pub fn wt_base_grad_at(&self, y: [f64; 3]) -> [[f64; 3]; 3] {
        let b = self.flow.base_at(y);
        let gb = self.flow.base_grad_at(y);
        let g = self.map.g_at([y[0], y[1]]);
        let inv = 1.0 / self.map.delta();
        let dg1 = [g.d11 * inv, g.d12 * inv, 0.0];
        let dg2 = [g.d12 * inv, g.d22 * inv, 0.0];
        let mut out = [[0.0; 3]; 3];
        for j in 0..3 {
            out[0][j] = -gb[0][j];
            out[1][j] = -gb[1][j];
            out[2][j] = -gb[2][j] - self.c * (dg1[j] * b[0] + g.d1 * gb[0][j] + dg2[j] * b[1] + g.d2 * gb[1][j]);
        }
        out
    }

    pub fn w_tilde_at(&self, t: f64, y: [f64; 3]) -> [f64; 3] {
        let s = self.flow.s(t);
        self.wt_base_at(y).map(|v| s * v)
    }

    pub fn dt_w_tilde_at(&self, t: f64, y: [f64; 3]) -> [f64; 3] {
        let s = self.flow.ds(t);
        self.wt_base_at(y).map(|v| s * v)
    }

    pub fn w_base_at(&self, y: [f64; 3]) -> [f64; 3] {
        let b = self.flow.base_at(y);
        let t = self.wt_base_at(y);
        [0, 1, 2].map(|i| b[i] - self.d * t[i])
    }

    pub fn w_at(&self, t: f64, y: [f64; 3]) -> [f64; 3] {
        let s = self.flow.s(t);
        self.w_base_at(y).map(|v| s * v)
    }

    pub fn grad_w_base_at(&self, y: [f64; 3]) -> [[f64; 3]; 3] {
        let gb = self.flow.base_grad_at(y);
        let gt = self.wt_base_grad_at(y);
        [0, 1, 2].map(|i| [0, 1, 2].map(|j| gb[i][j] - self.d * gt[i][j]))
    }

    pub fn grad_w_at(&self, t: f64, y: [f64; 3]) -> [[f64; 3]; 3] {
        let s = self.flow.s(t);
        self.grad_w_base_at(y).map(|r| r.map(|v| s * v))
    }

    pub fn grad_w_tilde_at(&self, t: f64, y: [f64; 3]) -> [[f64; 3]; 3] {
        let s = self.flow.s(t);
        self.wt_base_grad_at(y).map(|r| r.map(|v| s * v))
    }

    /// `A(t, y′) = D₁w₁(t, y′, 0) + D₂w₂(t, y′, 0)`.
    pub fn a_at(&self, t: f64, y: [f64; 2]) -> f64 {
        self.flow.s(t) * self.a_sep.eval([y[0], y[1], 0.0])
    }

    /// `(D₁A, D₂A)` at time `t`.
    pub fn grad_a_at(&self, t: f64, y: [f64; 2]) -> [f64; 2] {
        let s = self.flow.s(t);
        let p = [y[0], y[1], 0.0];
        [s * self.a_sep.deriv(0).eval(p), s * self.a_sep.deriv(1).eval(p)]
    }

    /// `div(Bw)` at a point, from the closed-form gradients.
    pub fn div_bw_at(&self, t: f64, y: [f64; 3]) -> f64 {
        let gw = self.grad_w_at(t, y);
        let g = self.map.g_at([y[0], y[1]]);
        let cp = self.map.coupling();
        // B only mixes into the third row and is independent of y₃, so
        // div(Bw) = D₁w₁ + D₂w₂ + D₃w₃ − δ^{α−1}(G₁D₃w₁ + G₂D₃w₂).
        gw[0][0] + gw[1][1] + gw[2][2] - cp * (g.d1 * gw[0][2] + g.d2 * gw[1][2])
    }

    /// `w₃(y′,0) − δ^{α−1}(D₁g w₁ + D₂g w₂)(y′,0)`.
    pub fn boundary_identity_at(&self, t: f64, y: [f64; 2]) -> f64 {
        let w = self.w_at(t, [y[0], y[1], 0.0]);
        let g = self.map.g_at(y);
        w[2] - self.map.coupling() * (g.d1 * w[0] + g.d2 * w[1])
    }

    /// Steady grid samples of `w̃_b`, built from the flow samples.
    pub fn sample_wt_base(&self, grid: &Grid, base: &BaseSamples) -> Field {
        let p = grid.plane();
        let (x1, x2) = (grid.x1(), grid.x2());
        let mut g1 = Vec::with_capacity(p);
        let mut g2 = Vec::with_capacity(p);
        for y2 in &x2 {
            for y1 in &x1 {
                let g = self.map.g_at([*y1, *y2]);
                g1.push(g.d1);
                g2.push(g.d2);
            }
        }
        let mut wt = base.wb.scaled(-1.0);
        let (b1, b2) = (base.wb.comp(0).to_vec(), base.wb.comp(1).to_vec());
        for (i, v) in wt.comp_mut(2).iter_mut().enumerate() {
            *v -= self.c * (g1[i % p] * b1[i] + g2[i % p] * b2[i]);
        }
        wt
    }
}

/// One line of the corrector bound report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub item: String,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

impl BoundRow {
    fn new(item: &str, lhs: f64, rhs: f64) -> Self {
        Self { item: item.into(), lhs, rhs, ratio: lhs / rhs }
    }
}

/// Measured left-hand sides of the corrector bounds against their
/// right-hand-side shapes (constant omitted), at time `t`. `L²`/`H¹` norms
/// are closed-form; sup norms come from `samples` seeded random points.
pub fn wprop_report(pair: &CorrectorPair, t: f64, samples: usize, seed: u64) -> Result<Vec<BoundRow>> {
    let flow = pair.flow();
    let (wt, w) = pair.separable().ok_or_else(|| {
        Error::Config("closed-form corrector norms need a flat or cosine wall with an integer fast frequency".into())
    })?;
    let p = flow.period();
    let s = flow.s(t);
    let w0_h3 = flow.w0_hk(t, 3);
    let forcing = w0_h3 * w0_h3 + flow.f0_hk(t, 2);
    let trace_w: Vec3Sep = [0, 1, 2].map(|i| w[i].scale(s));
    let trace_h1 = {
        let mut acc = 0.0;
        for c in &trace_w {
            acc += c.trace_sq_norm(p) + c.deriv(0).trace_sq_norm(p) + c.deriv(1).trace_sq_norm(p);
        }
        acc.sqrt()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sup_w, mut sup_gw, mut sup_tr) = (0.0f64, 0.0f64, 0.0f64);
    let decay = flow.decay();
    for _ in 0..samples {
        let y1 = rng.gen::<f64>() * p;
        let y2 = rng.gen::<f64>() * p;
        let y3 = -rng.gen::<f64>().max(1e-300).ln() / decay;
        let wv = pair.w_at(t, [y1, y2, y3]);
        sup_w = sup_w.max(wv.iter().fold(0.0, |m, v| m.max(v.abs())));
        let gw = pair.grad_w_at(t, [y1, y2, y3]);
        sup_gw = sup_gw.max(gw.iter().flatten().fold(0.0, |m, v| m.max(v.abs())));
        let wt0 = pair.w_at(t, [y1, y2, 0.0]);
        sup_tr = sup_tr.max(wt0.iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    Ok(vec![
        BoundRow::new("c: ‖∂ₜw̃‖_L2", flow.ds(t).abs() * sep_vec_hk_sq(wt, 0, p).sqrt(), forcing),
        BoundRow::new("c: ‖∂ₜw⁰‖_H1", flow.dt_w0_hk(t, 1), forcing),
        BoundRow::new("d: ‖w(·,0)‖_H1(R2)", trace_h1, w0_h3),
        BoundRow::new("e: ‖w̃‖_H1", s.abs() * sep_vec_hk_sq(wt, 1, p).sqrt(), w0_h3),
        BoundRow::new("e: ‖w‖_H1", s.abs() * sep_vec_hk_sq(w, 1, p).sqrt(), w0_h3),
        BoundRow::new("f: ‖w‖_Linf", sup_w, w0_h3),
        BoundRow::new("f: ‖∇w‖_Linf", sup_gw, w0_h3),
        BoundRow::new("g: ‖w(·,0)‖_Linf(R2)", sup_tr, w0_h3),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundaryProfile;

    fn pair(kind: FlowKind, delta: f64) -> CorrectorPair {
        let flow = Arc::new(manufactured_euler(kind, 1.0, 1.0).unwrap().with_modulation(Modulation::default()));
        let map = FlatteningMap::new(Arc::new(BoundaryProfile::cosine(0.2, 2.0 * PI).unwrap()), delta, 3.0).unwrap();
        let p = ParamTriple::new(0.1, 1e-3, delta, 3.0, 0.7, 1.0, 0.5, 0.1);
        build_correctors(flow, &p, map).unwrap()
    }

    #[test]
    fn euler_residual_vanishes() {
        for kind in [FlowKind::Shear, FlowKind::Vortex] {
            let f = manufactured_euler(kind, 1.3, 0.8).unwrap().with_pressure(0.4).with_modulation(Modulation::default());
            let t = 0.37;
            for y in [[0.1, 0.2, 0.3], [2.0, 5.0, 1.7], [4.0, 1.0, 0.0]] {
                let w = f.w0_at(t, y);
                let g = f.grad_w0_at(t, y);
                let dt = f.dt_w0_at(t, y);
                let gq = f.grad_q_at(t, y);
                let f0 = f.f0_at(t, y);
                for i in 0..3 {
                    let conv: f64 = (0..3).map(|k| w[k] * g[i][k]).sum();
                    assert!((dt[i] + conv + gq[i] - f0[i]).abs() < 1e-13);
                }
                assert!((g[0][0] + g[1][1] + g[2][2]).abs() < 1e-13);
            }
            assert!(f.w0_at(t, [0.3, 0.9, 0.0])[2].abs() < 1e-15);
        }
    }

    #[test]
    fn separable_forms_match_pointwise() {
        let c = pair(FlowKind::Vortex, 0.1);
        let (wt, w) = c.separable().unwrap();
        for y in [[0.3, 1.1, 0.2], [5.0, 2.2, 0.05]] {
            let a = c.wt_base_at(y);
            let b = c.w_base_at(y);
            for i in 0..3 {
                assert!((wt[i].eval(y) - a[i]).abs() < 1e-12);
                assert!((w[i].eval(y) - b[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn corrector_identities() {
        let c = pair(FlowKind::Vortex, 0.1);
        for y in [[0.3, 1.1, 0.2], [5.0, 2.2, 0.05], [1.0, 4.0, 2.5]] {
            assert!(c.div_bw_at(0.2, y).abs() < 1e-12);
            assert!(c.boundary_identity_at(0.2, [y[0], y[1]]).abs() < 1e-14);
        }
    }

    #[test]
    fn period_mismatch_is_config_error() {
        let flow = Arc::new(manufactured_euler(FlowKind::Shear, 1.0, 1.0).unwrap());
        let map = FlatteningMap::new(Arc::new(BoundaryProfile::cosine(0.2, 2.0 * PI).unwrap()), 0.3, 3.0).unwrap();
        let p = ParamTriple::new(0.1, 1e-3, 0.3, 3.0, 0.7, 1.0, 0.5, 0.1);
        assert!(matches!(build_correctors(flow, &p, map), Err(Error::Config(_))));
    }
}
