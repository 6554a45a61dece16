//! The boundary-layer corrector `𝓑` and its scaling report.
//!
//! With `a = √(θν)` and `A(t, y′) = D₁w₁(t, y′, 0) + D₂w₂(t, y′, 0)`,
//!
//! `𝓑(t, y) = −w(t, y′, 0)·φ(y₃/a) + a·e₃·ψ(y₃/a)·A(t, y′)`,
//!
//! so `𝓑 = −w` on the wall, `𝓑 = 0` for `y₃ ≥ a`, and `div(B𝓑) = 0`.
//! Every quantity is a short sum of products `T(y′)·P(y₃/a)`; `L²` norms
//! follow from trace inner products times profile inner products, which
//! makes the scaling in `a` exact up to quadrature.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{Field, Grid};
use crate::flow::CorrectorPair;
use crate::params::ParamTriple;
use crate::profiles::ProfilePair;
use crate::quad::{maximize, CompositeGl};
use crate::sep::SepSum;

/// Horizontal samples per direction used for sup norms of traces.
const SUP_GRID: usize = 256;
/// Vertical samples of the profile variable for sup scans.
const SUP_Z: usize = 2000;

#[derive(Debug, Clone)]
pub struct BoundaryLayerField {
    pair: Arc<CorrectorPair>,
    profiles: Arc<ProfilePair>,
    a: f64,
}

pub fn build_bl(pair: Arc<CorrectorPair>, profiles: Arc<ProfilePair>, p: &ParamTriple) -> Result<BoundaryLayerField> {
    let tn = p.theta * p.nu;
    if !(tn > 0.0 && tn < 1.0) {
        return Err(Error::Domain(format!("θν must lie in (0,1), got {tn:e}")));
    }
    BoundaryLayerField::with_width(pair, profiles, tn.sqrt())
}

impl BoundaryLayerField {
    /// Build with an explicit layer width `a = √(θν)`.
    pub fn with_width(pair: Arc<CorrectorPair>, profiles: Arc<ProfilePair>, a: f64) -> Result<Self> {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::Domain(format!("layer width must lie in (0,1), got {a:e}")));
        }
        Ok(Self { pair, profiles, a })
    }

    pub fn width(&self) -> f64 {
        self.a
    }

    pub fn pair(&self) -> &CorrectorPair {
        &self.pair
    }

    pub fn profiles(&self) -> &ProfilePair {
        &self.profiles
    }

    /// Steady base `𝓑_b`, with `𝓑(t) = s(t)·𝓑_b`.
    pub fn base_at(&self, y: [f64; 3]) -> [f64; 3] {
        let z = y[2] / self.a;
        if z >= 1.0 {
            return [0.0; 3];
        }
        let w = self.pair.w_base_at([y[0], y[1], 0.0]);
        let (phi, psi) = (self.profiles.phi(z), self.profiles.psi(z));
        let a_b = self.pair.a_sep().eval([y[0], y[1], 0.0]);
        [-w[0] * phi, -w[1] * phi, -w[2] * phi + self.a * psi * a_b]
    }

    pub fn at(&self, t: f64, y: [f64; 3]) -> [f64; 3] {
        let s = self.pair.flow().s(t);
        self.base_at(y).map(|v| s * v)
    }

    pub fn dt_at(&self, t: f64, y: [f64; 3]) -> [f64; 3] {
        let s = self.pair.flow().ds(t);
        self.base_at(y).map(|v| s * v)
    }

    /// `g[i][j] = D_j𝓑_i`.
    pub fn grad_at(&self, t: f64, y: [f64; 3]) -> [[f64; 3]; 3] {
        let z = y[2] / self.a;
        if z >= 1.0 {
            return [[0.0; 3]; 3];
        }
        let s = self.pair.flow().s(t);
        let y0 = [y[0], y[1], 0.0];
        let w = self.pair.w_base_at(y0);
        let gw = self.pair.grad_w_base_at(y0);
        let a_s = self.pair.a_sep();
        let a_b = a_s.eval(y0);
        let da = [a_s.deriv(0).eval(y0), a_s.deriv(1).eval(y0)];
        let (phi, dphi, psi) = (self.profiles.phi(z), self.profiles.dphi(z), self.profiles.psi(z));
        let mut g = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..2 {
                g[i][j] = -gw[i][j] * phi;
            }
            g[i][2] = -w[i] * dphi / self.a;
        }
        for j in 0..2 {
            g[2][j] += self.a * psi * da[j];
        }
        g[2][2] += a_b * phi;
        g.map(|r| r.map(|v| s * v))
    }

    /// `B𝓑`.
    pub fn b_at(&self, t: f64, y: [f64; 3]) -> [f64; 3] {
        let v = self.at(t, y);
        let (b31, b32) = self.pair.map().b_row([y[0], y[1]]);
        [v[0], v[1], v[2] + b31 * v[0] + b32 * v[1]]
    }

    /// `√(θν)·A(t, y′)·ψ(y₃/√(θν))`, the closed form of `[B𝓑]₃`.
    pub fn b3_closed_at(&self, t: f64, y: [f64; 3]) -> f64 {
        let z = y[2] / self.a;
        if z >= 1.0 {
            return 0.0;
        }
        self.a * self.pair.a_at(t, [y[0], y[1]]) * self.profiles.psi(z)
    }

    /// `div 𝓑 − δ^{α−1}(D₁g·D₃𝓑₁ + D₂g·D₃𝓑₂)`, which equals `div(B𝓑)`.
    pub fn divergence_defect_at(&self, t: f64, y: [f64; 3]) -> f64 {
        let g = self.grad_at(t, y);
        let gd = self.pair.map().g_at([y[0], y[1]]);
        let cp = self.pair.map().coupling();
        g[0][0] + g[1][1] + g[2][2] - cp * (gd.d1 * g[0][2] + gd.d2 * g[1][2])
    }

    /// Grid samples of the steady base `𝓑_b`.
    pub fn sample_base(&self, grid: &Grid) -> Field {
        let p = grid.plane();
        let (x1, x2) = (grid.x1(), grid.x2());
        let mut tr = [vec![0.0; p], vec![0.0; p], vec![0.0; p]];
        let mut ab = vec![0.0; p];
        for (j2, y2) in x2.iter().enumerate() {
            for (j1, y1) in x1.iter().enumerate() {
                let y0 = [*y1, *y2, 0.0];
                let w = self.pair.w_base_at(y0);
                let i = j2 * x1.len() + j1;
                for c in 0..3 {
                    tr[c][i] = w[c];
                }
                ab[i] = self.pair.a_sep().eval(y0);
            }
        }
        let mut f = Field::zeros(grid, 3);
        for (k, &zk) in grid.z().iter().enumerate() {
            let z = zk / self.a;
            if z >= 1.0 {
                break;
            }
            let (phi, psi) = (self.profiles.phi(z), self.a * self.profiles.psi(z));
            for c in 0..3 {
                let out = &mut f.comp_mut(c)[k * p..(k + 1) * p];
                for i in 0..p {
                    out[i] = -tr[c][i] * phi + if c == 2 { psi * ab[i] } else { 0.0 };
                }
            }
        }
        f
    }
}

/// Sup over a sample set of `|div(B𝓑)|` at time `t`.
pub fn bl_divergence_residual(bl: &BoundaryLayerField, t: f64, points: &[[f64; 3]]) -> f64 {
    points.iter().map(|y| bl.divergence_defect_at(t, *y).abs()).fold(0.0, f64::max)
}

/// Vertical factor of a separable piece.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Prof {
    Phi,
    DPhi,
    Psi,
}

/// `coef·T(y′)·P(y₃/a)`, with `T` given by the trace of a separable sum.
#[derive(Debug, Clone)]
struct Piece {
    trace: SepSum,
    prof: Prof,
    coef: f64,
}

fn piece(trace: &SepSum, prof: Prof, coef: f64) -> Piece {
    Piece { trace: trace.clone(), prof, coef }
}

fn trace_inner(a: &SepSum, b: &SepSum, period: f64) -> f64 {
    0.25 * (a.add(b).trace_sq_norm(period) - a.add(&b.scale(-1.0)).trace_sq_norm(period))
}

fn trace_sup(f: &SepSum, period: f64) -> f64 {
    let h = period / SUP_GRID as f64;
    let mut m = 0.0f64;
    for j2 in 0..SUP_GRID {
        for j1 in 0..SUP_GRID {
            m = m.max(f.eval([j1 as f64 * h, j2 as f64 * h, 0.0]).abs());
        }
    }
    m
}

/// Evaluates separable norms at a layer width `a`.
struct Separable<'a> {
    profiles: &'a ProfilePair,
    period: f64,
    rule: CompositeGl,
}

impl Separable<'_> {
    fn prof(&self, p: Prof, z: f64) -> f64 {
        match p {
            Prof::Phi => self.profiles.phi(z),
            Prof::DPhi => self.profiles.dphi(z),
            Prof::Psi => self.profiles.psi(z),
        }
    }

    /// `‖Σ pieces‖²_{L²(y₃^{2m})}` for one component at width `a`.
    fn l2_sq(&self, pieces: &[Piece], a: f64, m: i32) -> f64 {
        let mut s = 0.0;
        for p in pieces {
            for q in pieces {
                let t = trace_inner(&p.trace, &q.trace, self.period);
                if t == 0.0 {
                    continue;
                }
                let v = self.rule.integrate(0.0, 1.0, 512, |z| self.prof(p.prof, z) * self.prof(q.prof, z) * z.powi(2 * m));
                s += p.coef * q.coef * t * v * a.powi(2 * m + 1);
            }
        }
        s
    }

    /// `sup |y₃^m·Σ pieces|` for one component at width `a`.
    fn sup(&self, pieces: &[Piece], a: f64, m: i32) -> f64 {
        match pieces {
            [] => 0.0,
            [p] => {
                let tsup = trace_sup(&p.trace, self.period);
                let zs = maximize(&|z| (z.powi(m) * self.prof(p.prof, z)).abs(), 0.0, 1.0 - 1e-12, 4000).1;
                p.coef.abs() * tsup * zs * a.powi(m)
            }
            _ => {
                let h = self.period / SUP_GRID as f64;
                let zs: Vec<f64> = (0..SUP_Z).map(|i| i as f64 / SUP_Z as f64).collect();
                let cols: Vec<Vec<f64>> = pieces
                    .iter()
                    .map(|p| zs.iter().map(|&z| p.coef * z.powi(m) * self.prof(p.prof, z)).collect())
                    .collect();
                let mut best = 0.0f64;
                for j2 in 0..SUP_GRID {
                    for j1 in 0..SUP_GRID {
                        let y = [j1 as f64 * h, j2 as f64 * h, 0.0];
                        let tv: Vec<f64> = pieces.iter().map(|p| p.trace.eval(y)).collect();
                        for k in 0..SUP_Z {
                            let v: f64 = tv.iter().zip(&cols).map(|(t, c)| t * c[k]).sum();
                            best = best.max(v.abs());
                        }
                    }
                }
                best * a.powi(m)
            }
        }
    }
}

/// The nine reported quantities.
pub const BL_QUANTITIES: [(&str, f64); 9] = [
    ("‖∂ₜ𝓑‖_L2", 0.25),
    ("‖D_j𝓑‖_L2", 0.25),
    ("‖D₃𝓑‖_L2(y₃²)", 0.25),
    ("‖D₃𝓑‖_L2", -0.25),
    ("‖D₃𝓑‖_Linf(y₃²)", 0.5),
    ("‖B𝓑‖_L2", 0.25),
    ("‖[B𝓑]₃‖_L2", 0.5),
    ("‖[B𝓑]_j‖_Linf", 0.0),
    ("‖[B𝓑]₃‖_Linf", 0.5),
];

/// Values of the nine quantities for one layer width, at time `t`.
pub fn bl_quantities(pair: &CorrectorPair, profiles: &ProfilePair, a: f64, t: f64) -> Result<[f64; 9]> {
    let (_, w) = pair.separable().ok_or_else(|| {
        Error::Config("separable layer norms need a flat or cosine wall with an integer fast frequency".into())
    })?;
    let osc = pair.oscillation().expect("separable correctors carry the oscillation factors");
    let flow = pair.flow();
    let (s, ds) = (flow.s(t), flow.ds(t));
    let ab = pair.a_sep();
    let cp = pair.map().coupling();
    let sep = Separable { profiles, period: flow.period(), rule: CompositeGl::new(10) };
    let ia = 1.0 / a;

    // 𝓑 = s·(−w_i φ, …, −w₃φ + aψA)
    let bl = |c: f64| -> [Vec<Piece>; 3] {
        [
            vec![piece(&w[0], Prof::Phi, -c)],
            vec![piece(&w[1], Prof::Phi, -c)],
            vec![piece(&w[2], Prof::Phi, -c), piece(ab, Prof::Psi, c * a)],
        ]
    };
    let l2 = |comps: &[Vec<Piece>], m: i32| comps.iter().map(|p| sep.l2_sq(p, a, m)).sum::<f64>();

    let dt = l2(&bl(ds), 0).sqrt();
    let mut dj = 0.0;
    for j in 0..2 {
        let comps = [
            vec![piece(&w[0].deriv(j), Prof::Phi, -s)],
            vec![piece(&w[1].deriv(j), Prof::Phi, -s)],
            vec![piece(&w[2].deriv(j), Prof::Phi, -s), piece(&ab.deriv(j), Prof::Psi, s * a)],
        ];
        dj += l2(&comps, 0);
    }
    let dj = dj.sqrt();
    let d3 = [
        vec![piece(&w[0], Prof::DPhi, -s * ia)],
        vec![piece(&w[1], Prof::DPhi, -s * ia)],
        vec![piece(&w[2], Prof::DPhi, -s * ia), piece(ab, Prof::Phi, s)],
    ];
    let d3_l2w = l2(&d3, 1).sqrt();
    let d3_l2 = l2(&d3, 0).sqrt();
    let d3_sup = d3.iter().map(|p| sep.sup(p, a, 2)).fold(0.0, f64::max);
    // [B𝓑]₃ = −(w₃ − δ^{α−1}(G₁w₁ + G₂w₂))φ + aψA; the wall factor vanishes
    // identically but is kept so that the norms are measured, not assumed.
    let wall = w[2].add(&osc[0].mul(&w[0]).add(&osc[1].mul(&w[1])).scale(-cp));
    let b3 = vec![piece(&wall, Prof::Phi, -s), piece(ab, Prof::Psi, s * a)];
    let b = bl(s);
    let b_l2 = (sep.l2_sq(&b[0], a, 0) + sep.l2_sq(&b[1], a, 0) + sep.l2_sq(&b3, a, 0)).sqrt();
    let b3_l2 = sep.l2_sq(&b3, a, 0).sqrt();
    let bj_sup = sep.sup(&b[0], a, 0).max(sep.sup(&b[1], a, 0));
    let b3_sup = sep.sup(&b3, a, 0);
    Ok([dt, dj, d3_l2w, d3_l2, d3_sup, b_l2, b3_l2, bj_sup, b3_sup])
}

/// One row of the slope table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeRow {
    pub quantity: String,
    pub target_slope: f64,
    pub fitted_slope: f64,
    /// `max over θν of value / ((θν)^{target}·‖w⁰(t)‖_{H³})`.
    pub max_ratio: f64,
}

impl SlopeRow {
    pub fn passes(&self, tol: f64) -> bool {
        (self.fitted_slope - self.target_slope).abs() <= tol
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: x.len().min(y.len()) });
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if !(sxx > 0.0 && sxy.is_finite()) {
        return Err(Error::Domain("log-log fit needs distinct positive abscissae".into()));
    }
    Ok(sxy / sxx)
}

/// Fit the nine layer quantities against `θν` over the given values.
pub fn bl_scaling_report(pair: &CorrectorPair, profiles: &ProfilePair, theta_nu: &[f64], t: f64) -> Result<Vec<SlopeRow>> {
    if theta_nu.len() < 4 {
        return Err(Error::InsufficientData { needed: 4, got: theta_nu.len() });
    }
    let mut values = Vec::with_capacity(theta_nu.len());
    for &tn in theta_nu {
        if !(tn > 0.0 && tn < 1.0) {
            return Err(Error::Domain(format!("θν must lie in (0,1), got {tn:e}")));
        }
        values.push(bl_quantities(pair, profiles, tn.sqrt(), t)?);
    }
    let h3 = pair.flow().w0_hk(t, 3);
    let mut rows = Vec::with_capacity(9);
    for (q, (name, target)) in BL_QUANTITIES.iter().enumerate() {
        let ys: Vec<f64> = values.iter().map(|v| v[q]).collect();
        let fitted = loglog_slope(theta_nu, &ys)?;
        let max_ratio = theta_nu.iter().zip(&ys).map(|(tn, y)| y / (tn.powf(*target) * h3)).fold(0.0, f64::max);
        rows.push(SlopeRow { quantity: (*name).into(), target_slope: *target, fitted_slope: fitted, max_ratio });
    }
    Ok(rows)
}

/// `(‖𝓑₁(t)‖_{L²}, ‖w₁(t,·,0)‖_{L²(ℝ²)}·‖φ(·/a)‖_{L²(ℝ₊)})`, the two sides
/// of the separable-norm identity.
pub fn separable_identity(bl: &BoundaryLayerField, t: f64) -> Result<(f64, f64)> {
    let pair = bl.pair();
    let q = bl_component_l2(bl, t, 0)?;
    let (_, w) = pair.separable().ok_or_else(|| Error::Config("separable correctors required".into()))?;
    let tr = pair.flow().s(t).abs() * w[0].trace_sq_norm(pair.flow().period()).sqrt();
    Ok((q, tr * bl.width().sqrt() * bl.profiles().norms().phi_l2))
}

/// `‖𝓑_c(t)‖_{L²}` by tensor quadrature: the rectangle rule in `y′` (exact
/// for the trigonometric traces) and Gauss–Legendre in `y₃`.
pub fn bl_component_l2(bl: &BoundaryLayerField, t: f64, c: usize) -> Result<f64> {
    let pair = bl.pair();
    let period = pair.flow().period();
    let freq = pair.oscillation().map(|o| max_frequency(&o[0]).max(max_frequency(&o[1]))).unwrap_or(0);
    let n = (4 * (freq as usize + 4)).next_power_of_two().max(32);
    let h = period / n as f64;
    let rule = CompositeGl::new(10);
    let mut acc = 0.0;
    for j2 in 0..n {
        for j1 in 0..n {
            let (y1, y2) = (j1 as f64 * h, j2 as f64 * h);
            acc += rule.integrate(0.0, bl.width(), 64, |y3| bl.at(t, [y1, y2, y3])[c].powi(2));
        }
    }
    let v = acc * h * h;
    if !v.is_finite() {
        return Err(Error::Quadrature("layer component norm".into()));
    }
    Ok(v.sqrt())
}

fn max_frequency(s: &SepSum) -> u32 {
    use crate::sep::Trig;
    let f = |t: Trig| match t {
        Trig::Cos(n) | Trig::Sin(n) => n,
    };
    s.terms.iter().map(|t| f(t.t1).max(f(t.t2))).max().unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{build_correctors, manufactured_euler, FlowKind, Modulation};
    use crate::geometry::{BoundaryProfile, FlatteningMap};
    use crate::profiles::build_profiles;
    use std::f64::consts::PI;

    fn setup(delta: f64, flat: bool) -> (Arc<CorrectorPair>, Arc<ProfilePair>) {
        let flow = Arc::new(manufactured_euler(FlowKind::Vortex, 1.0, 1.0).unwrap().with_modulation(Modulation::default()));
        let prof = if flat { BoundaryProfile::flat() } else { BoundaryProfile::cosine(0.2, 2.0 * PI).unwrap() };
        let map = FlatteningMap::new(Arc::new(prof), delta, 3.0).unwrap();
        let p = ParamTriple::new(0.1, 1e-3, delta, 3.0, 0.7, 1.0, 0.5, 0.1);
        (Arc::new(build_correctors(flow, &p, map).unwrap()), Arc::new(build_profiles().unwrap()))
    }

    #[test]
    fn wall_and_support_invariants() {
        let (pair, prof) = setup(0.1, false);
        let bl = BoundaryLayerField::with_width(pair.clone(), prof, 0.01).unwrap();
        for y in [[0.3, 1.2], [4.0, 5.5]] {
            let b = bl.at(0.4, [y[0], y[1], 0.0]);
            let w = pair.w_at(0.4, [y[0], y[1], 0.0]);
            for i in 0..3 {
                assert!((b[i] + w[i]).abs() < 1e-14);
            }
            assert_eq!(bl.at(0.4, [y[0], y[1], 0.02]), [0.0; 3]);
            let y3 = [y[0], y[1], 0.0037];
            assert!((bl.b_at(0.4, y3)[2] - bl.b3_closed_at(0.4, y3)).abs() < 1e-12);
        }
    }

    #[test]
    fn divergence_defect_vanishes() {
        let (pair, prof) = setup(0.1, false);
        let bl = BoundaryLayerField::with_width(pair, prof, 0.01).unwrap();
        let pts: Vec<[f64; 3]> = (0..200).map(|i| [0.031 * i as f64, 0.017 * i as f64 + 0.2, 0.00005 * i as f64]).collect();
        assert!(bl_divergence_residual(&bl, 0.3, &pts) < 1e-10);
    }

    #[test]
    fn separable_identity_holds() {
        let (pair, prof) = setup(0.1, true);
        let bl = BoundaryLayerField::with_width(pair, prof, 0.05).unwrap();
        let (lhs, rhs) = separable_identity(&bl, 0.5).unwrap();
        assert!((lhs - rhs).abs() < 1e-10 * rhs.max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn too_few_points_is_rejected() {
        let (pair, prof) = setup(0.1, true);
        assert!(matches!(
            bl_scaling_report(&pair, &prof, &[1e-2, 1e-3, 1e-4], 0.5),
            Err(Error::InsufficientData { needed: 4, got: 3 })
        ));
    }
}
