//! Boundary profile `g`, the flattening maps `Φ₀`/`Ψ₀` and the matrices
//! `B`, `B_g`, `dg`.
//!
//! The physical domain is `Ω = {x₃ > δ^α g(x′/δ)}`. The map
//! `Ψ₀(y) = (y′, y₃ + δ^α g(y′/δ))` sends the half-space onto `Ω` and
//! `Φ₀ = Ψ₀⁻¹`. Its Jacobian `B = DΦ₀∘Ψ₀` is unit lower triangular,
//! `B = I + δ^{α−1} B_g`, where only the third row of `B_g` is non-zero and
//! equals `dg = (−D₁g, −D₂g, 0)` evaluated at `y′/δ`. Because `B_g² = 0`, the
//! inverse is exactly `I − δ^{α−1} B_g` and `det B = 1`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples per period and direction used to estimate `L` and `sup g`.
pub const L_SAMPLES: usize = 1024;

/// Largest |x′| (in periods) accepted by a tabulated profile before the
/// periodic reduction loses precision.
const TABLE_RANGE_PERIODS: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Flat,
    Cosine,
    Tabulated,
}

/// Value and derivatives of `g` up to second order at one point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GDerivs {
    pub g: f64,
    pub d1: f64,
    pub d2: f64,
    pub d11: f64,
    pub d12: f64,
    pub d22: f64,
}

/// Periodic tensor-product cubic B-spline interpolant on an `n × n` table.
#[derive(Debug, Clone)]
struct PeriodicSpline {
    n: usize,
    period: f64,
    coeffs: Vec<f64>,
}

impl PeriodicSpline {
    fn new(values: &[f64], n: usize, period: f64) -> Self {
        // Interpolation conditions (c[i-1] + 4c[i] + c[i+1]) / 6 = f[i] in each
        // direction are circulant, so they diagonalise under the 2-D DFT.
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_2d(&mut buf, n, fwd.as_ref());
        for m2 in 0..n {
            let l2 = (4.0 + 2.0 * (2.0 * PI * m2 as f64 / n as f64).cos()) / 6.0;
            for m1 in 0..n {
                let l1 = (4.0 + 2.0 * (2.0 * PI * m1 as f64 / n as f64).cos()) / 6.0;
                buf[m2 * n + m1] /= l1 * l2;
            }
        }
        fft_2d(&mut buf, n, inv.as_ref());
        let scale = 1.0 / (n * n) as f64;
        let coeffs = buf.iter().map(|c| c.re * scale).collect();
        Self { n, period, coeffs }
    }

    fn basis(t: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
        let s = 1.0 - t;
        let b = [
            s * s * s / 6.0,
            (3.0 * t * t * t - 6.0 * t * t + 4.0) / 6.0,
            (-3.0 * t * t * t + 3.0 * t * t + 3.0 * t + 1.0) / 6.0,
            t * t * t / 6.0,
        ];
        let db = [-s * s / 2.0, 1.5 * t * t - 2.0 * t, -1.5 * t * t + t + 0.5, t * t / 2.0];
        let ddb = [s, 3.0 * t - 2.0, -3.0 * t + 1.0, t];
        (b, db, ddb)
    }

    fn eval(&self, x: [f64; 2]) -> GDerivs {
        let n = self.n as i64;
        let h = self.period / self.n as f64;
        let locate = |x: f64| {
            let u = (x / h).rem_euclid(self.n as f64);
            let i = u.floor();
            (i as i64, u - i)
        };
        let (i1, t1) = locate(x[0]);
        let (i2, t2) = locate(x[1]);
        let (b1, db1, ddb1) = Self::basis(t1);
        let (b2, db2, ddb2) = Self::basis(t2);
        let mut out = GDerivs::default();
        for (a, m2) in (-1..=2).enumerate() {
            let row = ((i2 + m2).rem_euclid(n) as usize) * self.n;
            for (b, m1) in (-1..=2).enumerate() {
                let c = self.coeffs[row + (i1 + m1).rem_euclid(n) as usize];
                out.g += c * b1[b] * b2[a];
                out.d1 += c * db1[b] * b2[a];
                out.d2 += c * b1[b] * db2[a];
                out.d11 += c * ddb1[b] * b2[a];
                out.d12 += c * db1[b] * db2[a];
                out.d22 += c * b1[b] * ddb2[a];
            }
        }
        out.d1 /= h;
        out.d2 /= h;
        out.d11 /= h * h;
        out.d12 /= h * h;
        out.d22 /= h * h;
        out
    }
}

fn fft_2d(buf: &mut [Complex64], n: usize, fft: &dyn rustfft::Fft<f64>) {
    fft.process(buf);
    let mut t = vec![Complex64::default(); n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = buf[i * n + j];
        }
    }
    fft.process(&mut t);
    for i in 0..n {
        for j in 0..n {
            buf[j * n + i] = t[i * n + j];
        }
    }
}

/// The boundary profile `g ≥ 0`, periodic with period `period` in both
/// directions.
#[derive(Debug, Clone)]
pub struct BoundaryProfile {
    kind: ProfileKind,
    amplitude: f64,
    period: f64,
    spline: Option<PeriodicSpline>,
    l_const: f64,
    sup_g: f64,
}

impl BoundaryProfile {
    pub fn flat() -> Self {
        Self {
            kind: ProfileKind::Flat,
            amplitude: 0.0,
            period: 2.0 * PI,
            spline: None,
            l_const: 0.0,
            sup_g: 0.0,
        }
    }

    /// `g(x′) = A(1 + cos(2πx₁/P) cos(2πx₂/P))`.
    pub fn cosine(amplitude: f64, period: f64) -> Result<Self> {
        if !(amplitude.is_finite() && amplitude >= 0.0) {
            return Err(Error::Validation(format!(
                "profile amplitude must be finite and nonnegative, got {amplitude}"
            )));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::Validation(format!("profile period must be positive, got {period}")));
        }
        let mut p = Self {
            kind: ProfileKind::Cosine,
            amplitude,
            period,
            spline: None,
            l_const: 0.0,
            sup_g: 0.0,
        };
        p.sample_constants()?;
        Ok(p)
    }

    /// Periodic table of `n × n` samples over one period (row-major, `x₂`
    /// slowest), interpolated by a C² periodic cubic spline.
    pub fn tabulated(values: Vec<f64>, n: usize, period: f64) -> Result<Self> {
        if n < 4 || values.len() != n * n {
            return Err(Error::Validation(format!(
                "tabulated profile needs n ≥ 4 and n² samples (n = {n}, got {})",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tabulated profile".into()));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::Validation(format!("profile period must be positive, got {period}")));
        }
        let amplitude = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut p = Self {
            kind: ProfileKind::Tabulated,
            amplitude,
            period,
            spline: Some(PeriodicSpline::new(&values, n, period)),
            l_const: 0.0,
            sup_g: 0.0,
        };
        p.sample_constants()?;
        Ok(p)
    }

    pub fn kind(&self) -> ProfileKind {
        self.kind
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// `L = Σ_{1≤|γ|≤2} sup|D^γ g|`, estimated on a dense periodic sample.
    pub fn l_const(&self) -> f64 {
        self.l_const
    }

    pub fn sup_g(&self) -> f64 {
        self.sup_g
    }

    /// Dense-sample `L`, `sup g` and `inf g` (the latter must be ≥ 0).
    fn sample_constants(&mut self) -> Result<()> {
        let n = L_SAMPLES;
        let h = self.period / n as f64;
        let mut sup = [0.0f64; 5];
        let (mut gmax, mut gmin) = (f64::NEG_INFINITY, f64::INFINITY);
        for j2 in 0..n {
            for j1 in 0..n {
                let d = self.derivs_unchecked([j1 as f64 * h, j2 as f64 * h]);
                for (s, v) in sup.iter_mut().zip([d.d1, d.d2, d.d11, d.d12, d.d22]) {
                    *s = s.max(v.abs());
                }
                gmax = gmax.max(d.g);
                gmin = gmin.min(d.g);
            }
        }
        if gmin < -1e-12 * gmax.abs().max(1.0) {
            return Err(Error::Validation(format!(
                "boundary profile must be nonnegative; sampled minimum {gmin:.3e}"
            )));
        }
        self.l_const = sup.iter().sum();
        self.sup_g = gmax.max(0.0);
        Ok(())
    }

    /// Value and derivatives of `g`; tabulated profiles wrap periodically.
    pub fn derivs_unchecked(&self, x: [f64; 2]) -> GDerivs {
        match self.kind {
            ProfileKind::Flat => GDerivs::default(),
            ProfileKind::Cosine => {
                let k = 2.0 * PI / self.period;
                let (s1, c1) = (k * x[0]).sin_cos();
                let (s2, c2) = (k * x[1]).sin_cos();
                let a = self.amplitude;
                GDerivs {
                    g: a * (1.0 + c1 * c2),
                    d1: -a * k * s1 * c2,
                    d2: -a * k * c1 * s2,
                    d11: -a * k * k * c1 * c2,
                    d12: a * k * k * s1 * s2,
                    d22: -a * k * k * c1 * c2,
                }
            }
            ProfileKind::Tabulated => self.spline.as_ref().map(|s| s.eval(x)).unwrap_or_default(),
        }
    }

    /// Range-checked evaluation of `g` and its derivatives.
    pub fn derivs(&self, x: [f64; 2]) -> Result<GDerivs> {
        if self.kind == ProfileKind::Tabulated {
            let lim = TABLE_RANGE_PERIODS * self.period;
            if !(x[0].is_finite() && x[1].is_finite()) || x[0].abs() > lim || x[1].abs() > lim {
                return Err(Error::OutOfRange { x1: x[0], x2: x[1] });
            }
        }
        Ok(self.derivs_unchecked(x))
    }
}

/// `g(x′)`; tabulated profiles reject queries outside their usable range.
pub fn eval_boundary(profile: &BoundaryProfile, x: [f64; 2]) -> Result<f64> {
    profile.derivs(x).map(|d| d.g)
}

/// `B`, `B_g` and `dg` at one point `y′`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformMatrices {
    pub b: [[f64; 3]; 3],
    pub bg: [[f64; 3]; 3],
    pub dg: [f64; 3],
}

impl TransformMatrices {
    pub fn det_b(&self) -> f64 {
        let b = &self.b;
        b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
            + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0])
    }

    /// `B⁻¹ = I − (B − I)`, exact because `B_g` is nilpotent.
    pub fn b_inv(&self) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let id = if i == j { 1.0 } else { 0.0 };
                *v = id - (self.b[i][j] - id);
            }
        }
        m
    }

    pub fn sup_entry(&self) -> f64 {
        self.b.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// The flattening map pair `Φ₀`, `Ψ₀` for a profile, `δ` and `α`.
#[derive(Debug, Clone)]
pub struct FlatteningMap {
    profile: Arc<BoundaryProfile>,
    delta: f64,
    alpha: f64,
}

impl FlatteningMap {
    pub fn new(profile: Arc<BoundaryProfile>, delta: f64, alpha: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Validation(format!("δ must lie in (0,1), got {delta}")));
        }
        if !(alpha.is_finite() && alpha > 2.5) {
            return Err(Error::Validation(format!("α must exceed 5/2, got {alpha}")));
        }
        Ok(Self { profile, delta, alpha })
    }

    pub fn profile(&self) -> &BoundaryProfile {
        &self.profile
    }

    pub fn profile_arc(&self) -> Arc<BoundaryProfile> {
        Arc::clone(&self.profile)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `δ^{α−1}`, the size of the off-diagonal part of `B`.
    pub fn coupling(&self) -> f64 {
        self.delta.powf(self.alpha - 1.0)
    }

    /// Wall height `δ^α g(y′/δ)`.
    pub fn wall_height(&self, y: [f64; 2]) -> f64 {
        let d = self.delta;
        d.powf(self.alpha) * self.profile.derivs_unchecked([y[0] / d, y[1] / d]).g
    }

    /// `Ψ₀(y) = (y′, y₃ + δ^α g(y′/δ))`.
    pub fn psi0(&self, y: [f64; 3]) -> [f64; 3] {
        [y[0], y[1], y[2] + self.wall_height([y[0], y[1]])]
    }

    /// `Φ₀(x) = (x′, x₃ − δ^α g(x′/δ))`.
    pub fn phi0(&self, x: [f64; 3]) -> [f64; 3] {
        [x[0], x[1], x[2] - self.wall_height([x[0], x[1]])]
    }

    /// Compose a field on `Ω` with `Ψ₀`, giving a field on the half-space.
    pub fn pullback<'a, T, F>(&'a self, f: F) -> impl Fn([f64; 3]) -> T + 'a
    where
        F: Fn([f64; 3]) -> T + 'a,
    {
        move |y| f(self.psi0(y))
    }

    /// Derivatives of `g` at the fast variable `y′/δ`.
    pub fn g_at(&self, y: [f64; 2]) -> GDerivs {
        self.profile.derivs_unchecked([y[0] / self.delta, y[1] / self.delta])
    }

    /// Third row of `B` below the diagonal: `(b₃₁, b₃₂) = −δ^{α−1}∇g(y′/δ)`.
    pub fn b_row(&self, y: [f64; 2]) -> (f64, f64) {
        let d = self.g_at(y);
        let c = self.coupling();
        (-c * d.d1, -c * d.d2)
    }

    pub fn matrices_at(&self, y: [f64; 2]) -> TransformMatrices {
        let d = self.g_at(y);
        let c = self.coupling();
        let dg = [-d.d1, -d.d2, 0.0];
        let bg = [[0.0; 3], [0.0; 3], dg];
        let mut b = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        b[2][0] = c * dg[0];
        b[2][1] = c * dg[1];
        TransformMatrices { b, bg, dg }
    }

    /// Explicit sufficient smallness condition for the ellipticity sandwich,
    /// `δ^{α−1}[Λ⁻² + K₀Λ⁻⁵L²]`, to be compared with `1/4`.
    pub fn sandwich_smallness(&self, lambda: f64, k0: f64) -> f64 {
        let l = self.profile.l_const();
        self.coupling() * (lambda.powi(-2) + k0 * lambda.powi(-5) * l * l)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_profile_is_identity() {
        let map = FlatteningMap::new(Arc::new(BoundaryProfile::flat()), 0.1, 3.0).unwrap();
        let y = [0.3, -1.2, 0.7];
        assert_eq!(map.psi0(y), y);
        let m = map.matrices_at([0.3, 0.4]);
        assert_eq!(m.b, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    }

    #[test]
    fn cosine_value_and_l() {
        let p = BoundaryProfile::cosine(1.0, 2.0 * PI).unwrap();
        assert_eq!(eval_boundary(&p, [0.0, 0.0]).unwrap(), 2.0);
        assert!((p.l_const() - 5.0).abs() < 5e-3);
        assert!((p.sup_g() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn psi0_worked_example() {
        let p = Arc::new(BoundaryProfile::cosine(1.0, 2.0 * PI).unwrap());
        let map = FlatteningMap::new(p, 0.1, 3.0).unwrap();
        let x = map.psi0([0.0, 0.0, 1.0]);
        assert!((x[2] - 1.002).abs() < 1e-14);
    }

    #[test]
    fn b_inverse_is_exact() {
        let p = Arc::new(BoundaryProfile::cosine(0.7, 2.0 * PI).unwrap());
        let map = FlatteningMap::new(p, 0.3, 2.75).unwrap();
        let m = map.matrices_at([0.41, 1.9]);
        let inv = m.b_inv();
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| m.b[i][k] * inv[k][j]).sum();
                let id = if i == j { 1.0 } else { 0.0 };
                assert!((s - id).abs() <= 1e-14);
            }
        }
        assert_eq!(m.det_b(), 1.0);
    }

    #[test]
    fn tabulated_spline_reproduces_trig_table() {
        let n = 64;
        let per = 2.0 * PI;
        let vals: Vec<f64> = (0..n * n)
            .map(|i| {
                let (j2, j1) = (i / n, i % n);
                let (x1, x2) = (j1 as f64 * per / n as f64, j2 as f64 * per / n as f64);
                1.0 + x1.cos() * x2.cos()
            })
            .collect();
        let p = BoundaryProfile::tabulated(vals, n, per).unwrap();
        let q = BoundaryProfile::cosine(1.0, per).unwrap();
        for x in [[0.1, 0.2], [3.0, 5.5], [-1.0, 7.0]] {
            let a = p.derivs(x).unwrap();
            let b = q.derivs(x).unwrap();
            assert!((a.g - b.g).abs() < 1e-5);
            assert!((a.d1 - b.d1).abs() < 1e-3);
            assert!((a.d12 - b.d12).abs() < 2e-2);
        }
        assert!(matches!(p.derivs([f64::NAN, 0.0]), Err(Error::OutOfRange { .. })));
        assert!(matches!(p.derivs([1e12, 0.0]), Err(Error::OutOfRange { .. })));
    }
}
