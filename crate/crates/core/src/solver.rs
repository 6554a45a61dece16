//! Time integration of the transformed Navier–Stokes system
//! `∂ₜu + [(Bu)·∇]u − div[A∇u] + Bᵀ∇p = F`, `div(Bu) = 0`, `u = 0` on the
//! walls, with `A = B A₀ Bᵀ`.
//!
//! Each step is BDF2 (BDF1 on the first step) with implicit diffusion,
//! second-order extrapolated skew-symmetric advection and an incremental
//! pressure correction: the viscous predictor uses the previous pressure,
//! and the `W`-orthogonal no-slip projection removes the remaining
//! constraint violation.
//!
//! Diffusion uses gradients on the vertical mid-levels (spectral horizontal
//! derivatives averaged to the mid-level, a two-point vertical difference),
//! so `⟨Lu, u⟩ = ⟨A G u, G u⟩` is a quadrature of the dissipation with no
//! vertical odd–even null space.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::linalg::{pcg, BandCholesky};
use crate::fields::{write_snapshot, BRows, Disc, Field, Grid, ProjectionMode, Projector};
use crate::flow::{BaseSamples, ReferenceFlow};
use crate::geometry::FlatteningMap;
use crate::params::ParamTriple;
use crate::profiles::ProfilePair;

/// Largest admissible value of `dt·(|U₁|k₁ + |U₂|k₂ + |U₃|/h₃)`.
pub const CFL_LIMIT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViscosityKind {
    /// `A₀ = ν I`.
    Isotropic,
    /// `A₀ = diag(η, η, ν)`.
    Diagonal,
    /// `A₀ = diag(η, η, ν) + H` with a piecewise-constant, sign-flipping
    /// symmetric `H` of size `perturbation·ν` on cubes in physical space.
    Checkerboard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViscositySpec {
    pub kind: ViscosityKind,
    pub eta: f64,
    pub nu: f64,
    pub lambda: f64,
    /// Size of `H` relative to `ν`.
    pub perturbation: f64,
    /// Side of the checkerboard cubes.
    pub cell: f64,
    /// The pattern flips sign after each interval of this length.
    pub flip_interval: f64,
}

impl ViscositySpec {
    pub fn new(kind: ViscosityKind, eta: f64, nu: f64, lambda: f64) -> Result<Self> {
        if !(eta > 0.0 && nu > 0.0 && eta.is_finite() && nu.is_finite()) {
            return Err(Error::Validation(format!("viscosities must be positive, got η = {eta}, ν = {nu}")));
        }
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::Validation(format!("Λ must lie in (0,1], got {lambda}")));
        }
        Ok(Self { kind, eta, nu, lambda, perturbation: 0.1, cell: 1.0, flip_interval: 0.1 })
    }

    pub fn with_checkerboard(mut self, perturbation: f64, cell: f64, flip_interval: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&perturbation) {
            return Err(Error::Validation(format!(
                "checkerboard perturbation must be a fraction of ν in [0,1), got {perturbation}"
            )));
        }
        if !(cell > 0.0 && flip_interval > 0.0) {
            return Err(Error::Validation("checkerboard cell and flip interval must be positive".into()));
        }
        self.perturbation = perturbation;
        self.cell = cell;
        self.flip_interval = flip_interval;
        Ok(self)
    }

    /// Index of the flip interval containing `t`.
    pub fn epoch(&self, t: f64) -> i64 {
        match self.kind {
            ViscosityKind::Checkerboard => (t / self.flip_interval).floor() as i64,
            _ => 0,
        }
    }

    /// `A₀` at physical point `x` during flip interval `epoch`.
    pub fn a0_epoch(&self, epoch: i64, x: [f64; 3]) -> [[f64; 3]; 3] {
        match self.kind {
            ViscosityKind::Isotropic => {
                let n = self.nu;
                [[n, 0.0, 0.0], [0.0, n, 0.0], [0.0, 0.0, n]]
            }
            ViscosityKind::Diagonal => [[self.eta, 0.0, 0.0], [0.0, self.eta, 0.0], [0.0, 0.0, self.nu]],
            ViscosityKind::Checkerboard => {
                let c = |v: f64| (v / self.cell).floor() as i64;
                let parity = (c(x[0]) + c(x[1]) + c(x[2]) + epoch).rem_euclid(2);
                let h = if parity == 0 { 1.0 } else { -1.0 } * self.perturbation * self.nu;
                [[self.eta, 0.0, h], [0.0, self.eta, h], [h, h, self.nu + h]]
            }
        }
    }

    pub fn a0(&self, t: f64, x: [f64; 3]) -> [[f64; 3]; 3] {
        self.a0_epoch(self.epoch(t), x)
    }
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

fn transpose(a: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|i| [0, 1, 2].map(|j| a[j][i]))
}

/// `A = B A₀ Bᵀ` at a point of the flattened domain.
pub fn transformed_viscosity(spec: &ViscositySpec, map: &FlatteningMap, epoch: i64, y: [f64; 3]) -> [[f64; 3]; 3] {
    let b = map.matrices_at([y[0], y[1]]).b;
    let a0 = spec.a0_epoch(epoch, map.psi0(y));
    mat_mul(&mat_mul(&b, &a0), &transpose(&b))
}

/// `S^{−1/2} B A₀ Bᵀ S^{−1/2}` with `S = diag(η, η, ν)`: its eigenvalues
/// are the extreme ratios of the ellipticity sandwich at this point.
pub fn scaled_form(spec: &ViscositySpec, map: &FlatteningMap, t: f64, y: [f64; 3]) -> [[f64; 3]; 3] {
    let a = transformed_viscosity(spec, map, spec.epoch(t), y);
    let s = [spec.eta.sqrt(), spec.eta.sqrt(), spec.nu.sqrt()];
    [0, 1, 2].map(|i| [0, 1, 2].map(|j| a[i][j] / (s[i] * s[j])))
}

/// Worst ratios of the ellipticity sandwich over random samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SandwichReport {
    pub samples: usize,
    pub lambda: f64,
    /// `min ⟨A₀ξ,ξ⟩ / (η|ξ′|² + ν|ξ₃|²)`.
    pub a0_lower: f64,
    /// `max ⟨A₀ξ,ξ⟩ / (η|ξ′|² + ν|ξ₃|²)`.
    pub a0_upper: f64,
    /// `min ⟨A₀B*ξ,B*ξ⟩ / (η|ξ′|² + ν|ξ₃|²)`; must be at least `Λ/2`.
    pub lower: f64,
    pub upper: f64,
    /// Worst ratio of `|⟨A₀B*ξ,B*ζ⟩|` to the cross-term shape.
    pub cross: f64,
}

/// Sample `(t, y, ξ, ζ)` and check the transformed ellipticity bounds.
/// Any sample below `Λ/2` is a hard failure naming the witness.
pub fn sandwich_check(
    spec: &ViscositySpec,
    map: &FlatteningMap,
    period: f64,
    height: f64,
    t_end: f64,
    samples: usize,
    seed: u64,
) -> Result<SandwichReport> {
    if samples == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (eta, nu) = (spec.eta, spec.nu);
    let cp = map.coupling();
    let mut r = SandwichReport {
        samples,
        lambda: spec.lambda,
        a0_lower: f64::INFINITY,
        a0_upper: 0.0,
        lower: f64::INFINITY,
        upper: 0.0,
        cross: 0.0,
    };
    let gauss = |rng: &mut ChaCha8Rng| -> [f64; 3] { [0, 1, 2].map(|_| rng.gen::<f64>() * 2.0 - 1.0) };
    for _ in 0..samples {
        let t = rng.gen::<f64>() * t_end;
        let y = [rng.gen::<f64>() * period, rng.gen::<f64>() * period, rng.gen::<f64>() * height];
        let xi = gauss(&mut rng);
        let zeta = gauss(&mut rng);
        let epoch = spec.epoch(t);
        let a0 = spec.a0_epoch(epoch, map.psi0(y));
        let a = transformed_viscosity(spec, map, epoch, y);
        let quad = |m: &[[f64; 3]; 3], u: &[f64; 3], v: &[f64; 3]| -> f64 {
            (0..3).map(|i| (0..3).map(|j| m[i][j] * u[i] * v[j]).sum::<f64>()).sum()
        };
        let h2 = |u: &[f64; 3]| u[0] * u[0] + u[1] * u[1];
        let shape = eta * h2(&xi) + nu * xi[2] * xi[2];
        let ra0 = quad(&a0, &xi, &xi) / shape;
        let ra = quad(&a, &xi, &xi) / shape;
        r.a0_lower = r.a0_lower.min(ra0);
        r.a0_upper = r.a0_upper.max(ra0);
        r.lower = r.lower.min(ra);
        r.upper = r.upper.max(ra);
        let (xh, zh) = (h2(&xi).sqrt(), h2(&zeta).sqrt());
        let cshape = eta * xh * zh + nu * (xi[2] * zeta[2]).abs() + (cp * eta + nu) * (xi[2].abs() * zh + zeta[2].abs() * xh);
        r.cross = r.cross.max(quad(&a, &xi, &zeta).abs() / cshape);
        if !(ra >= 0.5 * spec.lambda) {
            return Err(Error::CheckFailed(format!(
                "ellipticity sandwich violated: ratio {ra:.6} < Λ/2 = {:.6} at t = {t:.6}, y = ({:.6}, {:.6}, {:.6}), ξ = ({:.4}, {:.4}, {:.4})",
                0.5 * spec.lambda,
                y[0],
                y[1],
                y[2],
                xi[0],
                xi[1],
                xi[2]
            )));
        }
    }
    Ok(r)
}

/// Symmetric coefficient field on the mid-levels, entries
/// `(11, 22, 33, 12, 13, 23)`.
#[derive(Debug, Clone)]
struct Coefficients {
    a: [Vec<f64>; 6],
    mean: [f64; 6],
}

const SYM: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

/// Gradient of a scalar on the mid-levels.
pub type MidGrad = [Vec<f64>; 3];

/// Gradient of a scalar on the vertical mid-levels: horizontal spectral
/// derivatives averaged to the mid-level, two-point vertical difference.
pub fn mid_gradient(disc: &Disc, f: &[f64]) -> MidGrad {
    let g = disc.grid();
    let p = g.plane();
    let nm = g.n3();
    let (d1, d2) = disc.spectral().grad_h(f);
    let z = g.z();
    let mut out: MidGrad = std::array::from_fn(|_| vec![0.0; nm * p]);
    for k in 0..nm {
        let ih = 1.0 / (z[k + 1] - z[k]);
        for i in 0..p {
            let (a, b) = (k * p + i, (k + 1) * p + i);
            out[0][a] = 0.5 * (d1[a] + d1[b]);
            out[1][a] = 0.5 * (d2[a] + d2[b]);
            out[2][a] = (f[b] - f[a]) * ih;
        }
    }
    out
}

/// `η(‖D₁f‖² + ‖D₂f‖²) + ν‖D₃f‖²` summed over components, from the
/// mid-level gradients.
pub fn anisotropic_form(disc: &Disc, f: &Field, eta: f64, nu: f64) -> f64 {
    let grid = disc.grid();
    let p = grid.plane();
    let z = grid.z();
    let mut s = 0.0;
    for comp in 0..f.ncomp() {
        let g = mid_gradient(disc, f.comp(comp));
        for k in 0..grid.n3() {
            let hm = z[k + 1] - z[k];
            let acc: f64 = (k * p..(k + 1) * p)
                .map(|i| eta * (g[0][i] * g[0][i] + g[1][i] * g[1][i]) + nu * g[2][i] * g[2][i])
                .sum();
            s += hm * acc;
        }
    }
    s * grid.area()
}

/// The implicit diffusion operator `L = W⁻¹GᵀW_mA G`.
pub struct Diffusion {
    disc: Arc<Disc>,
    map: FlatteningMap,
    spec: ViscositySpec,
    coef: HashMap<i64, Coefficients>,
    precond: HashMap<(u64, i64), (Vec<usize>, Vec<BandCholesky>)>,
    pub rtol: f64,
    pub max_iter: usize,
}

impl Diffusion {
    pub fn new(disc: Arc<Disc>, map: FlatteningMap, spec: ViscositySpec) -> Self {
        Self { disc, map, spec, coef: HashMap::new(), precond: HashMap::new(), rtol: 1e-12, max_iter: 2000 }
    }

    fn coefficients(&mut self, epoch: i64) -> &Coefficients {
        let disc = &self.disc;
        let (map, spec) = (&self.map, &self.spec);
        self.coef.entry(epoch).or_insert_with(|| {
            let g = disc.grid();
            let p = g.plane();
            let (x1, x2) = (g.x1(), g.x2());
            let z = g.z();
            let nm = g.n3();
            let mut a: [Vec<f64>; 6] = std::array::from_fn(|_| vec![0.0; nm * p]);
            let mut sum = [0.0; 6];
            for k in 0..nm {
                let zm = 0.5 * (z[k] + z[k + 1]);
                for (j2, y2) in x2.iter().enumerate() {
                    for (j1, y1) in x1.iter().enumerate() {
                        let m = transformed_viscosity(spec, map, epoch, [*y1, *y2, zm]);
                        let i = k * p + j2 * x1.len() + j1;
                        for (e, (r, c)) in SYM.iter().enumerate() {
                            a[e][i] = m[*r][*c];
                            sum[e] += m[*r][*c];
                        }
                    }
                }
            }
            let mean = sum.map(|s| s / (nm * p) as f64);
            Coefficients { a, mean }
        })
    }

    /// Mid-level gradient of a scalar array.
    pub fn grad(&self, f: &[f64]) -> MidGrad {
        mid_gradient(&self.disc, f)
    }

    /// `Σ_mid h_m·area·(A g)·q`.
    fn form(&self, c: &Coefficients, g: &MidGrad, q: &MidGrad) -> f64 {
        let grid = self.disc.grid();
        let p = grid.plane();
        let z = grid.z();
        let mut s = 0.0;
        for k in 0..grid.n3() {
            let hm = z[k + 1] - z[k];
            let mut acc = 0.0;
            for i in k * p..(k + 1) * p {
                let a = |e: usize| c.a[e][i];
                let ag = [
                    a(0) * g[0][i] + a(3) * g[1][i] + a(4) * g[2][i],
                    a(3) * g[0][i] + a(1) * g[1][i] + a(5) * g[2][i],
                    a(4) * g[0][i] + a(5) * g[1][i] + a(2) * g[2][i],
                ];
                acc += ag[0] * q[0][i] + ag[1] * q[1][i] + ag[2] * q[2][i];
            }
            s += hm * acc;
        }
        s * grid.area()
    }

    /// `⟨A G f, G g⟩` summed over components, with `A` of flip interval
    /// `epoch`.
    pub fn bilinear(&mut self, epoch: i64, f: &Field, g: &Field) -> f64 {
        self.coefficients(epoch);
        let c = &self.coef[&epoch];
        let mut s = 0.0;
        for comp in 0..f.ncomp() {
            let gf = self.grad(f.comp(comp));
            let gg = if std::ptr::eq(f, g) { gf.clone() } else { self.grad(g.comp(comp)) };
            s += self.form(c, &gf, &gg);
        }
        s
    }

    /// See [`anisotropic_form`].
    pub fn anisotropic_form(&self, f: &Field, eta: f64, nu: f64) -> f64 {
        anisotropic_form(&self.disc, f, eta, nu)
    }

    /// `L f` for a scalar array (nodal, all levels).
    fn apply_scalar(&self, c: &Coefficients, f: &[f64]) -> Vec<f64> {
        let grid = self.disc.grid();
        let p = grid.plane();
        let z = grid.z();
        let nz = grid.nz();
        let g = self.grad(f);
        let mut r1 = vec![0.0; nz * p];
        let mut r2 = vec![0.0; nz * p];
        let mut out = vec![0.0; nz * p];
        for k in 0..grid.n3() {
            let hm = z[k + 1] - z[k];
            for i in 0..p {
                let m = k * p + i;
                let a = |e: usize| c.a[e][m];
                let q1 = hm * (a(0) * g[0][m] + a(3) * g[1][m] + a(4) * g[2][m]);
                let q2 = hm * (a(3) * g[0][m] + a(1) * g[1][m] + a(5) * g[2][m]);
                let q3 = a(4) * g[0][m] + a(5) * g[1][m] + a(2) * g[2][m];
                let (lo, hi) = (k * p + i, (k + 1) * p + i);
                r1[lo] += 0.5 * q1;
                r1[hi] += 0.5 * q1;
                r2[lo] += 0.5 * q2;
                r2[hi] += 0.5 * q2;
                out[lo] -= q3;
                out[hi] += q3;
            }
        }
        let dh = self.disc.spectral().div_h(&r1, &r2);
        let wz = grid.wz();
        for (i, v) in out.iter_mut().enumerate() {
            *v = (*v - dh[i]) / wz[i / p];
        }
        out
    }

    /// `L f` for every component of a field, with `A` of flip interval
    /// `epoch`.
    pub fn apply(&mut self, epoch: i64, f: &Field) -> Field {
        self.coefficients(epoch);
        let c = &self.coef[&epoch];
        let comps = (0..f.ncomp()).map(|k| self.apply_scalar(c, f.comp(k))).collect();
        let mut r = Field::from_components(self.disc.grid(), comps).expect("sizes match");
        r.time = f.time;
        r
    }

    fn build_precond(&mut self, shift: f64, epoch: i64) {
        let key = (shift.to_bits(), epoch);
        if self.precond.contains_key(&key) {
            return;
        }
        self.coefficients(epoch);
        let mean = self.coef[&epoch].mean;
        let grid = self.disc.grid();
        let sp = self.disc.spectral();
        let p = grid.plane();
        let z = grid.z();
        let wz = grid.wz();
        let n = grid.n3() - 1;
        let mut keys: HashMap<u64, usize> = HashMap::new();
        let mut factors = Vec::new();
        let mut of = Vec::with_capacity(p);
        for s in 0..p {
            let (k1, k2) = sp.kappa(s);
            let hq = mean[0] * k1 * k1 + 2.0 * mean[3] * k1 * k2 + mean[1] * k2 * k2;
            let idx = *keys.entry(hq.to_bits()).or_insert_with(|| {
                // Interior levels 1..n3−1, tridiagonal in W-form.
                let mut band = vec![vec![0.0; 2]; n];
                for (r, row) in band.iter_mut().enumerate() {
                    row[0] = shift * wz[r + 1];
                }
                for m in 0..grid.n3() {
                    let hm = z[m + 1] - z[m];
                    let (avg, dif) = (0.25 * hm * hq, mean[2] / hm);
                    // Mid-level m couples nodes m and m+1.
                    for (a, b) in [(m, m), (m + 1, m + 1), (m + 1, m)] {
                        if a == 0 || a > n || b == 0 || b > n {
                            continue;
                        }
                        let v = if a == b { avg + dif } else { avg - dif };
                        band[a - 1][a - b] += v;
                    }
                }
                factors.push(BandCholesky::factor(band, 1).expect("shifted diffusion is positive definite"));
                factors.len() - 1
            });
            of.push(idx);
        }
        self.precond.insert(key, (of, factors));
    }

    fn precondition(&self, shift: f64, epoch: i64, r: &[f64]) -> Vec<f64> {
        let grid = self.disc.grid();
        let p = grid.plane();
        let sp = self.disc.spectral();
        let (of, factors) = &self.precond[&(shift.to_bits(), epoch)];
        let wz = grid.wz();
        let wr: Vec<f64> = r.iter().enumerate().map(|(i, v)| v * wz[i / p]).collect();
        let spec = sp.forward(&wr, None);
        let mut re: Vec<f64> = spec.iter().map(|c| c.re).collect();
        let mut im: Vec<f64> = spec.iter().map(|c| c.im).collect();
        for s in 0..p {
            let f = &factors[of[s]];
            f.solve_strided(&mut re, p + s, p);
            f.solve_strided(&mut im, p + s, p);
        }
        let mut out: Vec<Complex64> = re.into_iter().zip(im).map(|(a, b)| Complex64::new(a, b)).collect();
        let nz = grid.nz();
        out[..p].fill(Complex64::default());
        out[(nz - 1) * p..].fill(Complex64::default());
        sp.inverse_real(out)
    }

    /// Solve `(shift·I + L)x = rhs` on the interior levels with `x = 0` on
    /// the walls; `x` holds the initial guess. Returns CG iterations.
    pub fn solve(&mut self, shift: f64, epoch: i64, rhs: &Field, x: &mut Field) -> Result<usize> {
        self.build_precond(shift, epoch);
        self.coefficients(epoch);
        let grid = self.disc.grid();
        let p = grid.plane();
        let nz = grid.nz();
        let c = &self.coef[&epoch];
        let disc = &self.disc;
        let mut iters = 0;
        for comp in 0..rhs.ncomp() {
            let mut b = rhs.comp(comp).to_vec();
            b[..p].fill(0.0);
            b[(nz - 1) * p..].fill(0.0);
            let xs = x.comp_mut(comp);
            xs[..p].fill(0.0);
            xs[(nz - 1) * p..].fill(0.0);
            let apply = |v: &[f64]| -> Vec<f64> {
                let mut o = self.apply_scalar(c, v);
                for (a, b) in o.iter_mut().zip(v) {
                    *a += shift * b;
                }
                o[..p].fill(0.0);
                o[(nz - 1) * p..].fill(0.0);
                o
            };
            let bnorm = disc.wdot(&b, &b).sqrt();
            let stats = pcg(
                "implicit diffusion CG",
                &apply,
                &|r| self.precondition(shift, epoch, r),
                &|a, b| disc.wdot(a, b),
                &|a| disc.wdot(a, a).max(0.0).sqrt(),
                &b,
                xs,
                self.rtol,
                64.0 * f64::EPSILON * bnorm,
                self.max_iter,
            )?;
            iters += stats.iterations;
        }
        Ok(iters)
    }
}

/// The discrete system: grid, `B`, viscosity and the two linear solvers.
pub struct Solver {
    disc: Arc<Disc>,
    b: BRows,
    map: FlatteningMap,
    spec: ViscositySpec,
    projector: Projector,
    diffusion: Diffusion,
    /// Pressure-correction sweeps per step stop once the correction is at
    /// most `pressure_rtol` times the new velocity (weighted `L²`).
    pub pressure_rtol: f64,
    pub max_pressure_sweeps: usize,
}

impl Solver {
    pub fn new(disc: Arc<Disc>, map: FlatteningMap, spec: ViscositySpec) -> Result<Self> {
        let b = BRows::from_map(disc.grid(), &map);
        let projector = Projector::new(Arc::clone(&disc), b.clone(), ProjectionMode::NoSlip)?;
        let diffusion = Diffusion::new(Arc::clone(&disc), map.clone(), spec);
        Ok(Self { disc, b, map, spec, projector, diffusion, pressure_rtol: 1e-10, max_pressure_sweeps: 1 })
    }

    pub fn disc(&self) -> &Arc<Disc> {
        &self.disc
    }

    pub fn b_rows(&self) -> &BRows {
        &self.b
    }

    pub fn map(&self) -> &FlatteningMap {
        &self.map
    }

    pub fn spec(&self) -> &ViscositySpec {
        &self.spec
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    pub fn diffusion(&mut self) -> &mut Diffusion {
        &mut self.diffusion
    }

    /// Flip interval whose operator is used on the step `(t, t + dt]`.
    pub fn step_epoch(&self, t: f64, dt: f64) -> i64 {
        self.spec.epoch(t + 0.5 * dt)
    }

    /// Skew advection `N(Bu, u)`.
    pub fn advection(&self, u: &Field) -> Field {
        let bu = self.b.third(u.comps());
        self.disc.advect([u.comp(0), u.comp(1), &bu], u, None)
    }

    /// Skew advection `N(Ba, b)`.
    pub fn advection_of(&self, a: &Field, b: &Field) -> Field {
        let ba = self.b.third(a.comps());
        self.disc.advect([a.comp(0), a.comp(1), &ba], b, None)
    }

    /// `dt·max(|U₁|k₁ + |U₂|k₂ + |U₃|/h₃)` with `U = Bu`.
    pub fn cfl_number(&self, u: &Field, dt: f64) -> f64 {
        let g = self.disc.grid();
        let p = g.plane();
        let k1 = std::f64::consts::PI / g.h1();
        let k2 = std::f64::consts::PI / g.h2();
        let u3 = self.b.third(u.comps());
        let z = g.z();
        let nz = g.nz();
        let mut m = 0.0f64;
        for k in 0..nz {
            let below = if k > 0 { z[k] - z[k - 1] } else { f64::INFINITY };
            let above = if k + 1 < nz { z[k + 1] - z[k] } else { f64::INFINITY };
            let h3 = below.min(above);
            for i in k * p..(k + 1) * p {
                m = m.max(u.comp(0)[i].abs() * k1 + u.comp(1)[i].abs() * k2 + u3[i].abs() / h3);
            }
        }
        m * dt
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub order: usize,
    pub cfl: f64,
    pub diffusion_iterations: usize,
    pub projection_iterations: usize,
    pub pressure_sweeps: usize,
    /// Weighted norm of the discrete `div(Bu)` after the step.
    pub div_residual: f64,
    /// `⟨N(Bu, u), u⟩`, zero up to rounding by skew symmetry.
    pub advection_work: f64,
    /// `⟨W⁻¹Cᵀλ, u⟩ = λ·Cu`, zero up to the projection tolerance.
    pub pressure_work: f64,
    /// `½‖u‖²`.
    pub energy: f64,
    /// `⟨A∇u, ∇u⟩`.
    pub dissipation: f64,
    /// `⟨F, u⟩`.
    pub forcing_work: f64,
    pub forcing_norm: f64,
    /// Largest `|u|` on the walls.
    pub wall_max: f64,
}

/// Velocity history and pressure of a run.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub u: Field,
    pub t: f64,
    pub step: usize,
    /// Pressure multipliers; `W⁻¹Cᵀλ` is the discrete `Bᵀ∇p`.
    pub lambda: Vec<f64>,
    prev: Option<Field>,
    adv: Option<Field>,
    adv_prev: Option<Field>,
    dt_prev: Option<f64>,
    epoch_prev: Option<i64>,
}

impl SolverState {
    pub fn new(u: Field, t: f64, lambda_len: usize) -> Self {
        Self {
            u,
            t,
            step: 0,
            lambda: vec![0.0; lambda_len],
            prev: None,
            adv: None,
            adv_prev: None,
            dt_prev: None,
            epoch_prev: None,
        }
    }

    pub fn previous(&self) -> Option<&Field> {
        self.prev.as_ref()
    }
}

/// Everything a step observer needs: the new state, the previous two
/// velocities and the time-difference formula used.
pub struct StepContext<'a> {
    pub info: &'a StepInfo,
    pub u_new: &'a Field,
    pub u_old: &'a Field,
    pub u_older: Option<&'a Field>,
    pub forcing: &'a Field,
    /// Advection used in the step (extrapolated).
    pub advection: &'a Field,
    /// `N(Bu)` at the new state.
    pub advection_new: &'a Field,
    /// Pressure-correction increment removed by the projection.
    pub correction: &'a Field,
    pub lambda: &'a [f64],
    pub epoch: i64,
}

impl StepContext<'_> {
    /// The scheme's time difference of any field sampled at the same three
    /// times: BDF1 on the first step, BDF2 after.
    pub fn time_difference(&self, new: &Field, old: &Field, older: Option<&Field>) -> Result<Field> {
        let dt = self.info.dt;
        match (self.info.order, older) {
            (2, Some(o)) => {
                let mut d = new.scaled(1.5 / dt);
                d.axpy(-2.0 / dt, old)?;
                d.axpy(0.5 / dt, o)?;
                Ok(d)
            }
            _ => {
                let mut d = new.scaled(1.0 / dt);
                d.axpy(-1.0 / dt, old)?;
                Ok(d)
            }
        }
    }
}

/// Source of `F(t)` on the grid.
pub trait Forcing {
    fn at(&self, t: f64) -> Field;
}

/// No forcing.
pub struct ZeroForcing(pub Field);

impl Forcing for ZeroForcing {
    fn at(&self, t: f64) -> Field {
        let mut f = self.0.scaled(0.0);
        f.time = t;
        f
    }
}

/// What one step produced besides the new state.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub info: StepInfo,
    pub u_old: Field,
    pub u_older: Option<Field>,
    pub forcing: Field,
    /// The advection actually used: `N(Bu)` extrapolated to the new time.
    pub advection: Field,
    /// The pressure-correction increment `W⁻¹Cᵀφ` removed by the projection.
    pub correction: Field,
    pub epoch: i64,
}

/// Advance one step of size `dt`.
pub fn step(solver: &mut Solver, state: &mut SolverState, forcing: &dyn Forcing, dt: f64) -> Result<StepOutput> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Validation(format!("time step must be positive, got {dt}")));
    }
    let cfl = solver.cfl_number(&state.u, dt);
    if cfl > CFL_LIMIT {
        return Err(Error::Cfl { dt, suggested: 0.9 * dt * CFL_LIMIT / cfl });
    }
    let epoch = solver.step_epoch(state.t, dt);
    // The viscosity jumps between flip intervals, so `∂ₜu` does too; a
    // two-step history straddling the jump would cost an order. Restart
    // with one BDF1 step instead.
    let order = match (&state.prev, state.dt_prev) {
        (Some(_), Some(d)) if (d - dt).abs() <= 1e-12 * dt && state.epoch_prev == Some(epoch) => 2,
        _ => 1,
    };
    let adv = match state.adv.take() {
        Some(a) => a,
        None => solver.advection(&state.u),
    };
    let t1 = state.t + dt;
    let f = forcing.at(t1);
    let (shift, mut rhs, extrapolated) = if order == 2 {
        let prev = state.prev.as_ref().expect("order 2 has history");
        let mut h = state.u.scaled(2.0 / dt);
        h.axpy(-0.5 / dt, prev)?;
        let mut n = adv.scaled(2.0);
        n.axpy(-1.0, state.adv_prev.as_ref().expect("order 2 has advection history"))?;
        (1.5 / dt, h, n)
    } else {
        (1.0 / dt, state.u.scaled(1.0 / dt), adv.clone())
    };
    rhs.axpy(-1.0, &extrapolated)?;
    rhs.axpy(1.0, &f)?;
    let mut guess = state.u.clone();
    if let Some(prev) = &state.prev {
        guess.scale(2.0);
        guess.axpy(-1.0, prev)?;
    }
    // Incremental pressure correction, repeated until the correction is
    // negligible; every sweep leaves the same discrete identity with the
    // last correction in the splitting term.
    let mut diffusion_iterations = 0;
    let mut projection_iterations = 0;
    let mut sweeps = 0;
    let (u_new, correction, residual) = loop {
        sweeps += 1;
        let mut r = rhs.clone();
        r.axpy(-1.0, &solver.projector.gradient(&state.lambda))?;
        diffusion_iterations += solver.diffusion.solve(shift, epoch, &r, &mut guess)?;
        let proj = solver.projector.project(&guess)?;
        projection_iterations += proj.iterations;
        let mut correction = solver.projector.gradient(&proj.multiplier);
        correction.zero_walls();
        let mut u_new = proj.field;
        u_new.time = t1;
        if !u_new.is_finite() {
            return Err(Error::NonFinite(format!("velocity at t = {t1}")));
        }
        for (l, phi) in state.lambda.iter_mut().zip(&proj.multiplier) {
            *l += shift * phi;
        }
        let small = solver.disc.l2(&correction) <= solver.pressure_rtol * solver.disc.l2(&u_new);
        if small || sweeps >= solver.max_pressure_sweeps.max(1) {
            break (u_new, correction, proj.residual);
        }
    };
    let adv_new = solver.advection(&u_new);
    let advection_work = solver.disc.inner(&adv_new, &u_new)?;
    let cu = solver.projector.constraint(&u_new);
    let pressure_work: f64 = state.lambda.iter().zip(&cu).map(|(a, b)| a * b).sum();
    let dissipation = solver.diffusion.bilinear(epoch, &u_new, &u_new);
    let p = solver.disc.grid().plane();
    let nz = solver.disc.grid().nz();
    let wall_max = (0..3)
        .flat_map(|c| {
            let s = u_new.comp(c);
            s[..p].iter().chain(&s[(nz - 1) * p..]).map(|v| v.abs()).collect::<Vec<_>>()
        })
        .fold(0.0, f64::max);
    let info = StepInfo {
        step: state.step + 1,
        t: t1,
        dt,
        order,
        cfl,
        diffusion_iterations,
        projection_iterations,
        pressure_sweeps: sweeps,
        div_residual: residual,
        advection_work,
        pressure_work,
        energy: 0.5 * solver.disc.inner(&u_new, &u_new)?,
        dissipation,
        forcing_work: solver.disc.inner(&f, &u_new)?,
        forcing_norm: solver.disc.l2(&f),
        wall_max,
    };
    let u_old = std::mem::replace(&mut state.u, u_new);
    let older = state.prev.replace(u_old.clone());
    state.adv_prev = Some(adv);
    state.adv = Some(adv_new);
    state.dt_prev = Some(dt);
    state.epoch_prev = Some(epoch);
    state.t = t1;
    state.step += 1;
    Ok(StepOutput { info, u_old, u_older: older, forcing: f, advection: extrapolated, correction, epoch })
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub t_end: f64,
    pub dt: f64,
    /// Write a snapshot every this many steps (and at the end).
    pub snapshot_every: Option<usize>,
    pub snapshot_dir: Option<PathBuf>,
}

/// Measured constant of the energy inequality
/// `sup‖u‖² + ∫⟨A∇u,∇u⟩ ≤ C(‖U‖² + ∫‖F‖²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyInequality {
    pub sup_u2: f64,
    pub int_dissipation: f64,
    pub u0_sq: f64,
    pub int_f2: f64,
    pub constant: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<StepInfo>,
    pub energy: EnergyInequality,
    pub snapshots: Vec<PathBuf>,
}

fn snapshot(dir: &Path, solver: &Solver, u: &Field, step: usize) -> Result<PathBuf> {
    let path = dir.join(format!("u_{step:06}.bin"));
    write_snapshot(&path, solver.disc.grid(), u, &format!("velocity at step {step}"))?;
    Ok(path)
}

/// Integrate to `t_end`, calling `observe` after every step.
pub fn solve(
    solver: &mut Solver,
    state: &mut SolverState,
    forcing: &dyn Forcing,
    opts: &SolveOptions,
    observe: &mut dyn FnMut(&mut Solver, &StepContext) -> Result<()>,
) -> Result<Trajectory> {
    let span = opts.t_end - state.t;
    let n = (span / opts.dt).round() as usize;
    if !(opts.dt > 0.0) || n == 0 || (n as f64 * opts.dt - span).abs() > 1e-9 * span.max(1.0) {
        return Err(Error::Validation(format!(
            "time step {} does not divide the interval [{}, {}]",
            opts.dt, state.t, opts.t_end
        )));
    }
    if let Some(d) = &opts.snapshot_dir {
        std::fs::create_dir_all(d)?;
    }
    let u0_sq = solver.disc.inner(&state.u, &state.u)?;
    let f0 = forcing.at(state.t);
    let mut prev_f2 = solver.disc.inner(&f0, &f0)?;
    let mut prev_diss = solver.diffusion.bilinear(solver.step_epoch(state.t, opts.dt), &state.u, &state.u);
    let mut e = EnergyInequality { sup_u2: u0_sq, int_dissipation: 0.0, u0_sq, int_f2: 0.0, constant: 0.0 };
    let mut steps = Vec::with_capacity(n);
    let mut snapshots = Vec::new();
    for i in 0..n {
        let last_valid = state.u.clone();
        let out = match step(solver, state, forcing, opts.dt) {
            Ok(r) => r,
            Err(err) => {
                if let (Error::NonFinite(_), Some(d)) = (&err, &opts.snapshot_dir) {
                    snapshot(d, solver, &last_valid, state.step)?;
                }
                return Err(err);
            }
        };
        let info = out.info;
        e.sup_u2 = e.sup_u2.max(2.0 * info.energy);
        e.int_dissipation += 0.5 * opts.dt * (prev_diss + info.dissipation);
        e.int_f2 += 0.5 * opts.dt * (prev_f2 + info.forcing_norm.powi(2));
        prev_diss = info.dissipation;
        prev_f2 = info.forcing_norm.powi(2);
        let ctx = StepContext {
            info: &info,
            u_new: &state.u,
            u_old: &out.u_old,
            u_older: out.u_older.as_ref(),
            forcing: &out.forcing,
            advection: &out.advection,
            advection_new: state.adv.as_ref().expect("a step caches the new advection"),
            correction: &out.correction,
            lambda: &state.lambda,
            epoch: out.epoch,
        };
        observe(solver, &ctx)?;
        if let (Some(every), Some(d)) = (opts.snapshot_every, &opts.snapshot_dir) {
            if every > 0 && ((i + 1) % every == 0 || i + 1 == n) {
                snapshots.push(snapshot(d, solver, &state.u, state.step)?);
            }
        }
        steps.push(info);
    }
    let denom = e.u0_sq + e.int_f2;
    e.constant = if denom > 0.0 { (e.sup_u2 + e.int_dissipation) / denom } else { 0.0 };
    Ok(Trajectory { steps, energy: e, snapshots })
}

/// The layer-supported field that brings `W⁰` to rest on the wall:
/// `−W⁰(y′,0)φ(y₃/a) + a·ψ(y₃/a)(D₁W⁰₁ + D₂W⁰₂)(y′,0)e₃` at time `t`.
pub fn layer_lift(grid: &Grid, flow: &ReferenceFlow, profiles: &ProfilePair, a: f64, t: f64) -> Field {
    let s = flow.s(t);
    let p = grid.plane();
    let (x1, x2) = (grid.x1(), grid.x2());
    let mut trace = vec![[0.0; 4]; p];
    for (j2, y2) in x2.iter().enumerate() {
        for (j1, y1) in x1.iter().enumerate() {
            let y0 = [*y1, *y2, 0.0];
            let w = flow.base_at(y0);
            let g = flow.base_grad_at(y0);
            trace[j2 * x1.len() + j1] = [w[0], w[1], w[2], g[0][0] + g[1][1]];
        }
    }
    let mut f = Field::zeros(grid, 3);
    for (k, &zk) in grid.z().iter().enumerate() {
        let z = zk / a;
        if z >= 1.0 {
            break;
        }
        let (phi, psi) = (profiles.phi(z), a * profiles.psi(z));
        for c in 0..3 {
            let out = &mut f.comp_mut(c)[k * p..(k + 1) * p];
            for (o, tr) in out.iter_mut().zip(&trace) {
                *o = s * (-tr[c] * phi + if c == 2 { psi * tr[3] } else { 0.0 });
            }
        }
    }
    f.time = t;
    f
}

/// Seeded smooth field vanishing on both walls, projected and normalised
/// to unit `L²` norm.
pub fn seeded_bump(solver: &Solver, seed: u64) -> Result<Field> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = solver.disc.grid();
    let mut modes = Vec::new();
    for c in 0..3 {
        for _ in 0..3 {
            let (m1, m2) = (rng.gen_range(0..3) as f64, rng.gen_range(0..3) as f64);
            let (ph, amp) = (rng.gen::<f64>() * 2.0 * PI, rng.gen::<f64>() * 2.0 - 1.0);
            modes.push((c, m1, m2, ph, amp));
        }
    }
    let mut f = Field::vector_from_fn(grid, |y| {
        let env = y[2] * y[2] * (-y[2]).exp();
        let mut v = [0.0; 3];
        for &(c, m1, m2, ph, amp) in &modes {
            v[c] += amp * env * (m1 * y[0] + m2 * y[1] + ph).cos();
        }
        v
    });
    f.zero_walls();
    let pf = solver.projector.project(&f)?.field;
    let n = solver.disc.l2(&pf);
    if !(n > 0.0) {
        return Err(Error::NonFinite("seeded bump projected to zero".into()));
    }
    Ok(pf.scaled(1.0 / n))
}

/// Initial-data diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitReport {
    /// Fraction of the budget used by the smooth perturbation.
    pub perturbation: f64,
    /// `‖lift‖_{L²}`.
    pub lift_norm: f64,
    /// `‖U − W⁰‖_{L²}`.
    pub deviation: f64,
    /// `β + δ^{α−5/2}`.
    pub budget: f64,
    pub ratio: f64,
    /// Weighted norm of the discrete `div(BU)`.
    pub div_residual: f64,
}

/// Initial state `U = P[W⁰ + lift] + perturbation·γ·b̂`, where `P` is the
/// no-slip `B`-weighted projection, the lift is [`layer_lift`] with the
/// layer width of `p`, `γ = β + δ^{α−5/2}` and `b̂` is [`seeded_bump`].
pub fn init_state(
    solver: &Solver,
    flow: &ReferenceFlow,
    profiles: &ProfilePair,
    base: &BaseSamples,
    p: &ParamTriple,
    perturbation: f64,
    seed: u64,
) -> Result<(SolverState, InitReport)> {
    if !(0.0..=1.0).contains(&perturbation) {
        return Err(Error::Validation(format!(
            "initial perturbation must be a fraction of the budget in [0, 1], got {perturbation}"
        )));
    }
    let grid = solver.disc.grid();
    let budget = p.budget();
    let w0 = base.wb.scaled(flow.s(0.0));
    let lift = layer_lift(grid, flow, profiles, p.layer_width(), 0.0);
    let proj = solver.projector.project(&w0.add(&lift)?)?;
    let mut u = proj.field;
    if perturbation > 0.0 {
        u.axpy(perturbation * budget, &seeded_bump(solver, seed)?)?;
    }
    u.time = 0.0;
    let deviation = solver.disc.l2(&u.sub(&w0)?);
    let report = InitReport {
        perturbation,
        lift_norm: solver.disc.l2(&lift),
        deviation,
        budget,
        ratio: deviation / budget,
        div_residual: solver.projector.residual_norm(&solver.projector.constraint(&u)),
    };
    if !(deviation <= budget) {
        return Err(Error::CheckFailed(format!(
            "initial data too far from W⁰: ‖U − W⁰‖ = {deviation:.6e} > β + δ^(α−5/2) = {budget:.6e}"
        )));
    }
    let n = solver.projector.constraint(&u).len();
    Ok((SolverState::new(u, 0.0, n), report))
}

/// `F(t) = F⁰(t) + F_extra`, with `F⁰ = s′w_b + s²(w_b·∇)w_b + ∇q` from
/// grid samples.
pub struct ReferenceForcing {
    flow: Arc<ReferenceFlow>,
    base: Arc<BaseSamples>,
    extra: Option<Field>,
}

impl ReferenceForcing {
    pub fn new(flow: Arc<ReferenceFlow>, base: Arc<BaseSamples>) -> Self {
        Self { flow, base, extra: None }
    }

    /// Add a steady perturbation `F − F⁰`.
    pub fn with_perturbation(mut self, extra: Field) -> Self {
        self.extra = Some(extra);
        self
    }

    pub fn perturbation(&self) -> Option<&Field> {
        self.extra.as_ref()
    }

    /// `F⁰(t)` on the grid.
    pub fn reference(&self, t: f64) -> Field {
        let mut f = self.base.wb.scaled(self.flow.ds(t));
        f.axpy(self.flow.s(t).powi(2), &self.base.conv).expect("same grid");
        f.axpy(1.0, &self.base.grad_q).expect("same grid");
        f.time = t;
        f
    }
}

impl Forcing for ReferenceForcing {
    fn at(&self, t: f64) -> Field {
        let mut f = self.reference(t);
        if let Some(e) = &self.extra {
            f.axpy(1.0, e).expect("same grid");
        }
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundaryProfile;

    fn solver(kind: ViscosityKind, flat: bool) -> Solver {
        let grid = Grid::graded(8, 8, 2.0 * PI, 4.0, 0.02, Some(25)).unwrap();
        let prof = if flat { BoundaryProfile::flat() } else { BoundaryProfile::cosine(0.2, 2.0 * PI).unwrap() };
        let map = FlatteningMap::new(Arc::new(prof), 0.25, 3.0).unwrap();
        let spec = ViscositySpec::new(kind, 0.05, 0.01, 0.7).unwrap().with_checkerboard(0.1, 1.0, 0.1).unwrap();
        Solver::new(Arc::new(Disc::new(grid)), map, spec).unwrap()
    }

    fn smooth(g: &Grid) -> Field {
        let h = g.height();
        let mut f = Field::vector_from_fn(g, |y| {
            let s = (PI * y[2] / h).sin();
            [s * y[1].sin(), s * (y[0] + 0.3).cos(), 0.2 * s * (y[0] + y[1]).sin()]
        });
        f.zero_walls();
        f
    }

    #[test]
    fn diffusion_form_matches_operator() {
        let mut s = solver(ViscosityKind::Checkerboard, false);
        let f = smooth(s.disc().grid());
        let lf = s.diffusion().apply(0, &f);
        let lhs = s.disc().inner(&lf, &f).unwrap();
        let rhs = s.diffusion().bilinear(0, &f, &f);
        assert!(rhs > 0.0);
        assert!((lhs - rhs).abs() < 1e-12 * rhs, "{lhs} vs {rhs}");
    }

    #[test]
    fn implicit_solve_inverts_operator() {
        let mut s = solver(ViscosityKind::Checkerboard, false);
        let x0 = smooth(s.disc().grid());
        let mut rhs = s.diffusion().apply(0, &x0);
        rhs.axpy(20.0, &x0).unwrap();
        let mut x = Field::zeros(s.disc().grid(), 3);
        s.diffusion().solve(20.0, 0, &rhs, &mut x).unwrap();
        let err = x.sub(&x0).unwrap().max_abs();
        assert!(err < 1e-9, "max error {err}");
    }

    #[test]
    fn zero_state_stays_zero() {
        let mut s = solver(ViscosityKind::Diagonal, false);
        let g = s.disc().grid().clone();
        let n = s.projector().constraint(&Field::zeros(&g, 3)).len();
        let mut st = SolverState::new(Field::zeros(&g, 3), 0.0, n);
        let forcing = ZeroForcing(Field::zeros(&g, 3));
        for _ in 0..3 {
            step(&mut s, &mut st, &forcing, 0.01).unwrap();
        }
        assert!(st.u.max_abs() <= 1e-14);
    }

    #[test]
    fn cfl_violation_suggests_smaller_step() {
        let mut s = solver(ViscosityKind::Diagonal, true);
        let g = s.disc().grid().clone();
        let n = s.projector().constraint(&Field::zeros(&g, 3)).len();
        let mut st = SolverState::new(smooth(&g).scaled(100.0), 0.0, n);
        let forcing = ZeroForcing(Field::zeros(&g, 3));
        match step(&mut s, &mut st, &forcing, 0.1) {
            Err(Error::Cfl { dt, suggested }) => assert!(suggested < dt),
            other => panic!("expected a CFL error, got {other:?}"),
        }
    }
}
