//! Weighted orthogonal projections onto discretely `B`-divergence-free
//! fields.
//!
//! With `C` the discrete constraint operator and `W` the quadrature
//! weights, the projection is `P = I − W⁻¹Cᵀ(CW⁻¹Cᵀ)⁻¹C`. The Schur
//! complement `S = CW⁻¹Cᵀ` is solved by CG, preconditioned by its `B = I`
//! version, which decouples into one banded system per Fourier mode (and is
//! therefore exact when `B = I`).
//!
//! Multipliers are stored in `n3 + 2` horizontal planes. Without wall
//! conditions on the tangential components, slot 0 is the boundary row and
//! slot `k + 1` the divergence row at level `k`. With no-slip walls the
//! divergence is imposed on the cells between levels instead (slot `m` for
//! the cell `[z_m, z_{m+1}]`): the collocated centred constraint has an
//! odd–even null space that the projection would otherwise fill with a
//! level-alternating vertical velocity.

use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex64;

use super::linalg::{dot, pcg, BandCholesky};
use super::{BRows, Disc, Field};
use crate::error::{Error, Result};

/// Which constraint set the projection enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMode {
    /// All levels are free; divergence-free below the top level and
    /// `(Bf)₃ = 0` on the wall. The potential vanishes at the top.
    NoFlux,
    /// Wall levels are fixed at zero and the cell-integrated divergence
    /// vanishes in every vertical cell.
    NoSlip,
}

#[derive(Debug, Clone)]
pub struct ProjectionResult {
    pub field: Field,
    /// Multipliers `λ`; the removed part is `W⁻¹Cᵀλ`.
    pub multiplier: Vec<f64>,
    pub iterations: usize,
    /// Weighted `L²` norm of the discrete constraint residual of the output.
    pub residual: f64,
}

pub struct Projector {
    disc: Arc<Disc>,
    b: BRows,
    mode: ProjectionMode,
    lo: usize,
    hi: usize,
    factors: Vec<BandCholesky>,
    factor_of: Vec<usize>,
    /// CG stops at `min(rtol·‖C f‖, atol)` (weighted), or at the rounding
    /// floor if that is larger; `atol = 0` leaves only the relative target.
    pub rtol: f64,
    pub atol: f64,
    pub max_iter: usize,
}

impl std::fmt::Debug for Projector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Projector").field("mode", &self.mode).field("slots", &(self.lo, self.hi)).finish()
    }
}

const BAND: usize = 3;

impl Projector {
    pub fn new(disc: Arc<Disc>, b: BRows, mode: ProjectionMode) -> Result<Self> {
        let grid = disc.grid();
        let n3 = grid.n3();
        if b.b31.len() != grid.plane() {
            return Err(Error::GridMismatch("B rows do not match the grid plane".into()));
        }
        let (lo, hi) = match mode {
            ProjectionMode::NoFlux => (0, n3),
            ProjectionMode::NoSlip => (0, n3 - 1),
        };
        let wz = grid.wz();
        // Flat Schur complement per mode: `V W⁻¹Vᵀ + κ² H W⁻¹Hᵀ`, with `V`
        // the vertical and `H` the horizontal-divergence coefficients.
        let m = hi - lo + 1;
        let interior = |node: &(usize, f64)| node.0 > 0 && node.0 < n3;
        let vertical = |slot: usize| -> Vec<(usize, f64)> {
            match mode {
                ProjectionMode::NoFlux if slot == 0 => vec![(0, 1.0)],
                ProjectionMode::NoFlux => {
                    let st = grid.d3()[slot - 1];
                    (0..3).map(|j| (st.start + j, st.c[j])).collect()
                }
                ProjectionMode::NoSlip => [(slot, -1.0), (slot + 1, 1.0)].into_iter().filter(interior).collect(),
            }
        };
        let horizontal = |slot: usize| -> Vec<(usize, f64)> {
            match mode {
                ProjectionMode::NoFlux if slot == 0 => vec![],
                ProjectionMode::NoFlux => vec![(slot - 1, 1.0)],
                ProjectionMode::NoSlip => {
                    let h = 0.5 * grid.dz(slot);
                    [(slot, h), (slot + 1, h)].into_iter().filter(interior).collect()
                }
            }
        };
        let gram = |rows: &[Vec<(usize, f64)>]| {
            let mut band = vec![vec![0.0; BAND + 1]; m];
            for i in 0..m {
                for d in 0..=BAND.min(i) {
                    let mut s = 0.0;
                    for &(a, ca) in &rows[i] {
                        for &(b, cb) in &rows[i - d] {
                            if a == b {
                                s += ca * cb / wz[a];
                            }
                        }
                    }
                    band[i][d] = s;
                }
            }
            band
        };
        let base = gram(&(lo..=hi).map(vertical).collect::<Vec<_>>());
        let hpart = gram(&(lo..=hi).map(horizontal).collect::<Vec<_>>());
        let sp = disc.spectral();
        let p = grid.plane();
        let mut keys: HashMap<u64, usize> = HashMap::new();
        let mut factors = Vec::new();
        let mut factor_of = Vec::with_capacity(p);
        for s in 0..p {
            let (k1, k2) = sp.kappa(s);
            let kk = k1 * k1 + k2 * k2;
            let idx = match keys.get(&kk.to_bits()) {
                Some(&i) => i,
                None => {
                    let mut band = base.clone();
                    for (row, h) in band.iter_mut().zip(&hpart) {
                        for (a, b) in row.iter_mut().zip(h) {
                            *a += kk * b;
                        }
                    }
                    if mode == ProjectionMode::NoSlip && kk == 0.0 {
                        // Constant multipliers of the mean mode are
                        // annihilated by `Cᵀ`; pin them for the factor.
                        band[m - 1][0] *= 2.0;
                    }
                    let f = BandCholesky::factor(band, BAND).map_err(|e| {
                        Error::Validation(format!("singular projection operator for mode κ² = {kk}: {e}"))
                    })?;
                    factors.push(f);
                    keys.insert(kk.to_bits(), factors.len() - 1);
                    factors.len() - 1
                }
            };
            factor_of.push(idx);
        }
        Ok(Self { disc, b, mode, lo, hi, factors, factor_of, rtol: 1e-12, atol: 1e-11, max_iter: 10_000 })
    }

    pub fn mode(&self) -> ProjectionMode {
        self.mode
    }

    pub fn b_rows(&self) -> &BRows {
        &self.b
    }

    fn is_unknown(&self, k: usize) -> bool {
        match self.mode {
            ProjectionMode::NoFlux => true,
            ProjectionMode::NoSlip => k > 0 && k < self.disc.grid().n3(),
        }
    }

    fn slots(&self) -> usize {
        self.disc.grid().nz() + 1
    }

    /// Length of the multiplier vector (one value per slot and plane point).
    pub fn multiplier_len(&self) -> usize {
        self.slots() * self.disc.grid().plane()
    }

    /// Apply `C` to a vector field (values on fixed levels are ignored).
    pub fn constraint(&self, f: &Field) -> Vec<f64> {
        let g = self.disc.grid();
        let p = g.plane();
        let mut f = f.clone();
        if self.mode == ProjectionMode::NoSlip {
            f.zero_walls();
        }
        let t = self.b.third(f.comps());
        let mut out = vec![0.0; self.slots() * p];
        if self.mode == ProjectionMode::NoSlip {
            let dh = self.disc.spectral().div_h(f.comp(0), f.comp(1));
            for m in self.lo..=self.hi {
                let h = 0.5 * g.dz(m);
                let (lower, upper) = (m * p, (m + 1) * p);
                for (s, dst) in out[m * p..(m + 1) * p].iter_mut().enumerate() {
                    *dst = t[upper + s] - t[lower + s] + h * (dh[lower + s] + dh[upper + s]);
                }
            }
            return out;
        }
        let div = self.disc.divergence([f.comp(0), f.comp(1), &t]);
        for slot in self.lo..=self.hi {
            let dst = &mut out[slot * p..(slot + 1) * p];
            if slot == 0 {
                dst.copy_from_slice(&t[..p]);
            } else {
                dst.copy_from_slice(&div[(slot - 1) * p..slot * p]);
            }
        }
        out
    }

    /// Apply `Cᵀ`, returning a vector field zero on fixed levels.
    pub fn constraint_t(&self, lam: &[f64]) -> Field {
        let g = self.disc.grid();
        let p = g.plane();
        let n = g.len();
        if self.mode == ProjectionMode::NoSlip {
            return self.constraint_t_cells(lam);
        }
        let mut rows = vec![0.0; n];
        for slot in self.lo.max(1)..=self.hi {
            rows[(slot - 1) * p..slot * p].copy_from_slice(&lam[slot * p..(slot + 1) * p]);
        }
        let mut t3 = self.disc.d3t(&rows);
        if self.lo == 0 {
            for (a, b) in t3[..p].iter_mut().zip(&lam[..p]) {
                *a += b;
            }
        }
        let (d1, d2) = self.disc.spectral().grad_h(&rows);
        let mut g1 = vec![0.0; n];
        let mut g2 = vec![0.0; n];
        for i in 0..n {
            g1[i] = -d1[i] + self.b.b31[i % p] * t3[i];
            g2[i] = -d2[i] + self.b.b32[i % p] * t3[i];
        }
        let mut f = Field::from_components(g, vec![g1, g2, t3]).expect("sizes match");
        for k in 0..g.nz() {
            if !self.is_unknown(k) {
                for c in 0..3 {
                    f.comp_mut(c)[k * p..(k + 1) * p].fill(0.0);
                }
            }
        }
        f
    }

    fn constraint_t_cells(&self, lam: &[f64]) -> Field {
        let g = self.disc.grid();
        let p = g.plane();
        let n = g.len();
        let mut t3 = vec![0.0; n];
        let mut avg = vec![0.0; n];
        for k in 1..g.n3() {
            let (below, above) = (&lam[(k - 1) * p..k * p], &lam[k * p..(k + 1) * p]);
            let (hb, ha) = (0.5 * g.dz(k - 1), 0.5 * g.dz(k));
            for s in 0..p {
                t3[k * p + s] = below[s] - above[s];
                avg[k * p + s] = hb * below[s] + ha * above[s];
            }
        }
        let (d1, d2) = self.disc.spectral().grad_h(&avg);
        let mut g1 = vec![0.0; n];
        let mut g2 = vec![0.0; n];
        for i in p..n - p {
            g1[i] = -d1[i] + self.b.b31[i % p] * t3[i];
            g2[i] = -d2[i] + self.b.b32[i % p] * t3[i];
        }
        Field::from_components(g, vec![g1, g2, t3]).expect("sizes match")
    }

    /// `W⁻¹Cᵀλ`, the discrete `Bᵀ∇p`.
    pub fn gradient(&self, lam: &[f64]) -> Field {
        let g = self.disc.grid();
        let p = g.plane();
        let mut f = self.constraint_t(lam);
        for c in 0..3 {
            for (i, v) in f.comp_mut(c).iter_mut().enumerate() {
                *v /= g.wz()[i / p];
            }
        }
        f
    }

    fn schur(&self, lam: &[f64]) -> Vec<f64> {
        self.constraint(&self.gradient(lam))
    }

    fn precondition(&self, r: &[f64]) -> Vec<f64> {
        let p = self.disc.grid().plane();
        let sp = self.disc.spectral();
        let spec = sp.forward(r, None);
        let mut re: Vec<f64> = spec.iter().map(|c| c.re).collect();
        let mut im: Vec<f64> = spec.iter().map(|c| c.im).collect();
        for s in 0..p {
            let f = &self.factors[self.factor_of[s]];
            f.solve_strided(&mut re, self.lo * p + s, p);
            f.solve_strided(&mut im, self.lo * p + s, p);
        }
        let mut out: Vec<Complex64> = re.into_iter().zip(im).map(|(a, b)| Complex64::new(a, b)).collect();
        for slot in 0..self.slots() {
            if slot < self.lo || slot > self.hi {
                out[slot * p..(slot + 1) * p].fill(Complex64::default());
            }
        }
        sp.inverse_real(out)
    }

    /// Weighted norm of a multiplier-layout residual.
    pub fn residual_norm(&self, r: &[f64]) -> f64 {
        let g = self.disc.grid();
        let p = g.plane();
        let mut s = 0.0;
        for slot in self.lo..=self.hi {
            let w = match self.mode {
                ProjectionMode::NoSlip => 1.0 / g.dz(slot),
                ProjectionMode::NoFlux if slot == 0 => 1.0,
                ProjectionMode::NoFlux => g.wz()[slot - 1],
            };
            s += w * r[slot * p..(slot + 1) * p].iter().map(|v| v * v).sum::<f64>();
        }
        (s * g.area()).sqrt()
    }

    /// Project `f`. A previous multiplier may be passed as a warm start.
    pub fn project_with(&self, f: &Field, warm: Option<&[f64]>) -> Result<ProjectionResult> {
        f.check_grid(self.disc.grid())?;
        if f.ncomp() != 3 {
            return Err(Error::Validation("projection needs a vector field".into()));
        }
        if !f.is_finite() {
            return Err(Error::NonFinite("projection input".into()));
        }
        let g = self.disc.grid();
        let rhs = self.constraint(f);
        let mut lam = match warm {
            Some(w) if w.len() == rhs.len() => w.to_vec(),
            _ => vec![0.0; rhs.len()],
        };
        // Rounding floor of the weighted residual: the wall rows carry
        // coefficients of size 1/h₀.
        let fnorm = self.disc.l2(f) / g.height().sqrt().max(1.0);
        let floor = 64.0 * f64::EPSILON * fnorm / g.wall_spacing().sqrt();
        // Stop at the tighter of the relative and absolute targets, but
        // never below the rounding floor.
        let relative = self.rtol * self.residual_norm(&rhs);
        let target = if self.atol > 0.0 { relative.min(self.atol) } else { relative };
        let goal = target.max(floor);
        let solve = |rhs: &[f64], lam: &mut [f64]| {
            pcg(
                "Schur-complement CG",
                &|x| self.schur(x),
                &|r| self.precondition(r),
                &dot,
                &|r| self.residual_norm(r),
                rhs,
                lam,
                0.0,
                goal,
                self.max_iter,
            )
        };
        let mut iterations = solve(&rhs, &mut lam)?.iterations;
        let finish = |lam: &[f64], f: &Field| -> Result<Field> {
            let mut out = f.sub(&self.gradient(lam))?;
            if self.mode == ProjectionMode::NoSlip {
                out.zero_walls();
            }
            Ok(out)
        };
        let mut out = finish(&lam, f)?;
        let mut residual = self.residual_norm(&self.constraint(&out));
        // Iterative refinement: `W⁻¹Cᵀλ` differences multipliers across thin
        // wall cells, so a large `λ` loses digits that a second, small
        // correction recovers.
        for _ in 0..3 {
            if residual <= goal {
                break;
            }
            let r = self.constraint(&out);
            let mut d = vec![0.0; r.len()];
            iterations += solve(&r, &mut d)?.iterations;
            out = finish(&d, &out)?;
            for (l, x) in lam.iter_mut().zip(&d) {
                *l += x;
            }
            residual = self.residual_norm(&self.constraint(&out));
        }
        out.time = f.time;
        Ok(ProjectionResult { field: out, multiplier: lam, iterations, residual })
    }

    pub fn project(&self, f: &Field) -> Result<ProjectionResult> {
        self.project_with(f, None)
    }
}

/// Flat Helmholtz–Leray projection: divergence-free, no normal flux at the
/// wall, potential vanishing at the top of the box.
pub fn leray_project(disc: &Arc<Disc>, f: &Field) -> Result<ProjectionResult> {
    let b = BRows::identity(disc.grid());
    Projector::new(Arc::clone(disc), b, ProjectionMode::NoFlux)?.project(f)
}

/// Projection onto `div(Bf) = 0` with `(Bf)₃ = 0` on the wall.
pub fn b_weighted_project(disc: &Arc<Disc>, f: &Field, b: &BRows) -> Result<ProjectionResult> {
    Projector::new(Arc::clone(disc), b.clone(), ProjectionMode::NoFlux)?.project(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Grid;
    use std::f64::consts::PI;

    fn disc() -> Arc<Disc> {
        Arc::new(Disc::new(Grid::graded(8, 8, 2.0 * PI, 6.0, 0.01, Some(41)).unwrap()))
    }

    fn rough(g: &Grid) -> Field {
        Field::vector_from_fn(g, |y| {
            [
                (y[0] + 2.0 * y[1]).sin() * (-y[2]).exp() + 0.3,
                (3.0 * y[0]).cos() * y[2] / (1.0 + y[2] * y[2]),
                (y[1]).sin() * (1.0 + y[2]).recip(),
            ]
        })
    }

    #[test]
    fn flat_projection_is_exact_in_one_iteration() {
        let d = disc();
        let r = leray_project(&d, &rough(d.grid())).unwrap();
        assert!(r.iterations <= 1);
        assert!(r.residual < 1e-10, "residual {}", r.residual);
        let again = leray_project(&d, &r.field).unwrap();
        let diff = d.l2(&again.field.sub(&r.field).unwrap());
        assert!(diff < 1e-10, "not idempotent: {diff}");
    }

    #[test]
    fn no_slip_projection_has_no_level_alternating_mode() {
        // A field whose plane mean of `u₃` is a smooth nonzero profile: the
        // projection must remove it without leaving a sawtooth behind.
        let d = Arc::new(Disc::new(Grid::graded(8, 8, 2.0 * PI, 4.0, 0.02, Some(40)).unwrap()));
        let g = d.grid();
        let f = Field::vector_from_fn(g, |y| [0.1 * y[1].cos(), 0.0, y[2] * (-y[2]).exp() * (1.0 + 0.2 * y[0].sin())]);
        let pr = Projector::new(Arc::clone(&d), BRows::identity(g), ProjectionMode::NoSlip).unwrap();
        let r = pr.project(&f).unwrap();
        assert!(r.residual < 1e-10, "residual {}", r.residual);
        let p = g.plane();
        let mean = |k: usize| r.field.comp(2)[k * p..(k + 1) * p].iter().sum::<f64>() / p as f64;
        let jump = (1..g.n3() - 1).map(|k| (mean(k + 1) - 2.0 * mean(k) + mean(k - 1)).abs()).fold(0.0, f64::max);
        assert!(jump < 1e-10, "level-alternating plane mean {jump}");
    }

    #[test]
    fn no_slip_projection_with_b() {
        let d = disc();
        let map = crate::geometry::FlatteningMap::new(
            Arc::new(crate::geometry::BoundaryProfile::cosine(1.0, 2.0 * PI).unwrap()),
            0.5,
            3.0,
        )
        .unwrap();
        let b = BRows::from_map(d.grid(), &map);
        let pr = Projector::new(Arc::clone(&d), b, ProjectionMode::NoSlip).unwrap();
        let r = pr.project(&rough(d.grid())).unwrap();
        assert!(r.residual < 1e-10, "residual {} after {} its", r.residual, r.iterations);
        let p = d.grid().plane();
        assert!(r.field.comp(0)[..p].iter().all(|v| *v == 0.0));
    }
}
