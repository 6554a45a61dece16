//! Grid, sampled fields, differential operators, norms and projections.
//!
//! Horizontal directions are periodic and differentiated spectrally (the
//! Nyquist mode is dropped so derivatives stay real and skew-adjoint). The
//! vertical direction uses second-order differences on a graded grid, with
//! trapezoid weights; the centred interior rows are exactly skew with
//! respect to those weights, which makes the discrete advection form
//! energy-neutral.

mod grid;
pub mod linalg;
mod projection;
mod snapshot;
pub mod spectral;

use std::fmt;
use std::str::FromStr;

pub use grid::{Grid, GridInfo, Stencil, MAX_STRETCH};
pub use projection::{b_weighted_project, leray_project, ProjectionMode, ProjectionResult, Projector};
pub use snapshot::{read_snapshot, write_snapshot, SnapshotHeader};
pub use spectral::Spectral;

use crate::error::{Error, Result};
use crate::geometry::FlatteningMap;

/// Gradient of a vector field, `g[i][j] = D_j f_i`.
pub type Grad = [[Vec<f64>; 3]; 3];

/// Scalar (`ncomp = 1`) or vector (`ncomp = 3`) samples on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    dims: [usize; 3],
    ncomp: usize,
    data: Vec<f64>,
    pub time: f64,
}

impl Field {
    pub fn zeros(grid: &Grid, ncomp: usize) -> Self {
        Self { dims: grid.dims(), ncomp, data: vec![0.0; ncomp * grid.len()], time: 0.0 }
    }

    pub fn from_components(grid: &Grid, comps: Vec<Vec<f64>>) -> Result<Self> {
        let n = grid.len();
        if comps.iter().any(|c| c.len() != n) {
            return Err(Error::GridMismatch(format!("component length differs from {n}")));
        }
        let ncomp = comps.len();
        Ok(Self { dims: grid.dims(), ncomp, data: comps.concat(), time: 0.0 })
    }

    /// Sample a scalar function of `y`.
    pub fn scalar_from_fn(grid: &Grid, f: impl Fn([f64; 3]) -> f64) -> Self {
        let data = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        Self { dims: grid.dims(), ncomp: 1, data, time: 0.0 }
    }

    /// Sample a vector function of `y`.
    pub fn vector_from_fn(grid: &Grid, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let n = grid.len();
        let mut data = vec![0.0; 3 * n];
        for i in 0..n {
            let v = f(grid.point(i));
            for c in 0..3 {
                data[c * n + i] = v[c];
            }
        }
        Self { dims: grid.dims(), ncomp: 3, data, time: 0.0 }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    fn npts(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn comp(&self, c: usize) -> &[f64] {
        let n = self.npts();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn comp_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.npts();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn comps(&self) -> [&[f64]; 3] {
        [self.comp(0), self.comp(1), self.comp(2)]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        if self.dims != grid.dims() {
            return Err(Error::GridMismatch(format!("field {:?} vs grid {:?}", self.dims, grid.dims())));
        }
        Ok(())
    }

    fn check_like(&self, o: &Field) -> Result<()> {
        if self.dims != o.dims || self.ncomp != o.ncomp {
            return Err(Error::GridMismatch(format!(
                "{:?}×{} vs {:?}×{}",
                self.dims, self.ncomp, o.dims, o.ncomp
            )));
        }
        Ok(())
    }

    /// `self + s·o`.
    pub fn axpy(&mut self, s: f64, o: &Field) -> Result<()> {
        self.check_like(o)?;
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn sub(&self, o: &Field) -> Result<Field> {
        let mut r = self.clone();
        r.axpy(-1.0, o)?;
        Ok(r)
    }

    pub fn add(&self, o: &Field) -> Result<Field> {
        let mut r = self.clone();
        r.axpy(1.0, o)?;
        Ok(r)
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn scaled(&self, s: f64) -> Field {
        let mut r = self.clone();
        r.scale(s);
        r
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Zero all components on the wall levels `k = 0` and `k = n3`.
    pub fn zero_walls(&mut self) {
        let p = self.dims[0] * self.dims[1];
        let nz = self.dims[2];
        for c in 0..self.ncomp {
            let f = self.comp_mut(c);
            f[..p].fill(0.0);
            f[(nz - 1) * p..].fill(0.0);
        }
    }
}

/// The non-trivial row of `B`: `(Bf)₃ = b₃₁f₁ + b₃₂f₂ + f₃`, sampled on
/// one horizontal plane.
#[derive(Debug, Clone, PartialEq)]
pub struct BRows {
    pub b31: Vec<f64>,
    pub b32: Vec<f64>,
    identity: bool,
}

impl BRows {
    pub fn identity(grid: &Grid) -> Self {
        Self { b31: vec![0.0; grid.plane()], b32: vec![0.0; grid.plane()], identity: true }
    }

    pub fn from_map(grid: &Grid, map: &FlatteningMap) -> Self {
        let (x1, x2) = (grid.x1(), grid.x2());
        let mut b31 = Vec::with_capacity(grid.plane());
        let mut b32 = Vec::with_capacity(grid.plane());
        for y2 in &x2 {
            for y1 in &x1 {
                let (a, b) = map.b_row([*y1, *y2]);
                b31.push(a);
                b32.push(b);
            }
        }
        let identity = b31.iter().chain(&b32).all(|v| *v == 0.0);
        Self { b31, b32, identity }
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    /// `(Bf)₃` for a vector field given by components.
    pub fn third(&self, f: [&[f64]; 3]) -> Vec<f64> {
        let p = self.b31.len();
        f[2].iter()
            .enumerate()
            .map(|(i, &v)| v + self.b31[i % p] * f[0][i] + self.b32[i % p] * f[1][i])
            .collect()
    }

    pub fn apply(&self, f: &Field) -> Field {
        let mut r = f.clone();
        let t = self.third(f.comps());
        r.comp_mut(2).copy_from_slice(&t);
        r
    }

    /// `B_g f` scaled by `δ^{α−1}`, i.e. `(B − I)f`.
    pub fn apply_minus_identity(&self, f: &Field) -> Field {
        let mut r = Field { data: vec![0.0; f.data.len()], ..f.clone() };
        let p = self.b31.len();
        let (f1, f2) = (f.comp(0).to_vec(), f.comp(1).to_vec());
        for (i, v) in r.comp_mut(2).iter_mut().enumerate() {
            *v = self.b31[i % p] * f1[i] + self.b32[i % p] * f2[i];
        }
        r
    }

    /// `Bᵀf = (f₁ + b₃₁f₃, f₂ + b₃₂f₃, f₃)`.
    pub fn apply_t(&self, f: &Field) -> Field {
        let mut r = f.clone();
        let p = self.b31.len();
        let f3 = f.comp(2).to_vec();
        for (i, v) in r.comp_mut(0).iter_mut().enumerate() {
            *v += self.b31[i % p] * f3[i];
        }
        for (i, v) in r.comp_mut(1).iter_mut().enumerate() {
            *v += self.b32[i % p] * f3[i];
        }
        r
    }
}

/// Which norm [`Disc::norm`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    L2,
    Linf,
    /// Integer Sobolev norm `H^k`, `k ≤ 3`.
    H(u32),
    /// `(∫ y₃^γ |f|²)^{1/2}`.
    WeightedL2(f64),
    /// `sup y₃^γ |f|`.
    WeightedLinf(f64),
    /// `L²` norm of the trace at `y₃ = 0`.
    TraceL2,
    /// `H¹` norm of the trace at `y₃ = 0`.
    TraceH1,
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let weight = |rest: &str| {
            rest.parse::<f64>()
                .map_err(|_| Error::Domain(format!("bad weight exponent in norm kind {s:?}")))
        };
        Ok(match t.as_str() {
            "l2" => NormKind::L2,
            "linf" => NormKind::Linf,
            "h0" => NormKind::H(0),
            "h1" => NormKind::H(1),
            "h2" => NormKind::H(2),
            "h3" => NormKind::H(3),
            "trace-l2" => NormKind::TraceL2,
            "trace-h1" => NormKind::TraceH1,
            _ => {
                if let Some(r) = t.strip_prefix("wl2:") {
                    NormKind::WeightedL2(weight(r)?)
                } else if let Some(r) = t.strip_prefix("wlinf:") {
                    NormKind::WeightedLinf(weight(r)?)
                } else {
                    return Err(Error::Domain(format!("unknown norm kind {s:?}")));
                }
            }
        })
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormKind::L2 => write!(f, "l2"),
            NormKind::Linf => write!(f, "linf"),
            NormKind::H(k) => write!(f, "h{k}"),
            NormKind::WeightedL2(g) => write!(f, "wl2:{g}"),
            NormKind::WeightedLinf(g) => write!(f, "wlinf:{g}"),
            NormKind::TraceL2 => write!(f, "trace-l2"),
            NormKind::TraceH1 => write!(f, "trace-h1"),
        }
    }
}

/// A grid together with its transforms: the home of every discrete
/// operator.
#[derive(Debug)]
pub struct Disc {
    grid: Grid,
    sp: Spectral,
}

impl Disc {
    pub fn new(grid: Grid) -> Self {
        let sp = Spectral::new(&grid);
        Self { grid, sp }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn spectral(&self) -> &Spectral {
        &self.sp
    }

    /// Vertical difference of a scalar array.
    pub fn d3(&self, f: &[f64]) -> Vec<f64> {
        let p = self.grid.plane();
        let mut out = vec![0.0; f.len()];
        for (k, st) in self.grid.d3().iter().enumerate() {
            let o = &mut out[k * p..(k + 1) * p];
            for (j, &c) in st.c.iter().enumerate() {
                let src = &f[(st.start + j) * p..(st.start + j + 1) * p];
                for (a, b) in o.iter_mut().zip(src) {
                    *a += c * b;
                }
            }
        }
        out
    }

    /// Transpose of [`Disc::d3`].
    pub fn d3t(&self, f: &[f64]) -> Vec<f64> {
        let p = self.grid.plane();
        let mut out = vec![0.0; f.len()];
        for (k, st) in self.grid.d3().iter().enumerate() {
            let src = &f[k * p..(k + 1) * p];
            for (j, &c) in st.c.iter().enumerate() {
                let o = &mut out[(st.start + j) * p..(st.start + j + 1) * p];
                for (a, b) in o.iter_mut().zip(src) {
                    *a += c * b;
                }
            }
        }
        out
    }

    /// `D_dir f` for `dir ∈ {1, 2, 3}`, applied to every component.
    pub fn differentiate(&self, f: &Field, dir: usize) -> Result<Field> {
        f.check_grid(&self.grid)?;
        if !(1..=3).contains(&dir) {
            return Err(Error::Validation(format!("direction must be 1, 2 or 3, got {dir}")));
        }
        let comps = (0..f.ncomp())
            .map(|c| match dir {
                3 => self.d3(f.comp(c)),
                d => self.sp.d(f.comp(c), d - 1),
            })
            .collect();
        let mut r = Field::from_components(&self.grid, comps)?;
        r.time = f.time;
        Ok(r)
    }

    /// `(D₁f, D₂f, D₃f)` of a scalar array.
    pub fn gradient(&self, f: &[f64]) -> [Vec<f64>; 3] {
        let (a, b) = self.sp.grad_h(f);
        [a, b, self.d3(f)]
    }

    /// Full gradient of a vector field.
    pub fn gradient_vec(&self, f: &Field) -> Grad {
        let [a, b, c, d] = self.sp.grad_h2(f.comp(0), f.comp(1));
        let (e, g) = self.sp.grad_h(f.comp(2));
        [
            [a, b, self.d3(f.comp(0))],
            [c, d, self.d3(f.comp(1))],
            [e, g, self.d3(f.comp(2))],
        ]
    }

    /// `D₁x + D₂y + D₃z`.
    pub fn divergence(&self, f: [&[f64]; 3]) -> Vec<f64> {
        let mut d = self.sp.div_h(f[0], f[1]);
        for (a, b) in d.iter_mut().zip(self.d3(f[2])) {
            *a += b;
        }
        d
    }

    /// Discrete `div(Bf)`.
    pub fn div_b(&self, f: &Field, b: &BRows) -> Vec<f64> {
        let t = b.third(f.comps());
        self.divergence([f.comp(0), f.comp(1), &t])
    }

    /// Weighted sum `Σ w_k h₁h₂ a b` over all nodes.
    pub fn wdot(&self, a: &[f64], b: &[f64]) -> f64 {
        let p = self.grid.plane();
        let area = self.grid.area();
        self.grid
            .wz()
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let s: f64 = a[k * p..(k + 1) * p].iter().zip(&b[k * p..(k + 1) * p]).map(|(x, y)| x * y).sum();
                w * s
            })
            .sum::<f64>()
            * area
    }

    /// `∫⟨f, g⟩` over all components.
    pub fn inner(&self, f: &Field, g: &Field) -> Result<f64> {
        f.check_like(g)?;
        Ok((0..f.ncomp()).map(|c| self.wdot(f.comp(c), g.comp(c))).sum())
    }

    /// `∫ a:b` for two gradients.
    pub fn inner_grad(&self, a: &Grad, b: &Grad) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += self.wdot(&a[i][j], &b[i][j]);
            }
        }
        s
    }

    pub fn l2(&self, f: &Field) -> f64 {
        (0..f.ncomp()).map(|c| self.wdot(f.comp(c), f.comp(c))).sum::<f64>().max(0.0).sqrt()
    }

    pub fn norm(&self, f: &Field, kind: NormKind) -> Result<f64> {
        f.check_grid(&self.grid)?;
        let p = self.grid.plane();
        let z = self.grid.z();
        match kind {
            NormKind::L2 | NormKind::H(0) => Ok(self.l2(f)),
            NormKind::Linf => Ok(f.max_abs()),
            NormKind::H(k) => {
                if k > 3 {
                    return Err(Error::Domain(format!("H^{k} is not supported (k ≤ 3)")));
                }
                let mut s = 0.0;
                for c in 0..f.ncomp() {
                    s += self.hk_sq(f.comp(c), k as usize);
                }
                Ok(s.sqrt())
            }
            NormKind::WeightedL2(g) => {
                let wts: Vec<f64> = (0..self.grid.len()).map(|i| z[i / p].powf(g)).collect();
                let mut s = 0.0;
                for c in 0..f.ncomp() {
                    let fw: Vec<f64> = f.comp(c).iter().zip(&wts).map(|(a, w)| a * w).collect();
                    s += self.wdot(&fw, f.comp(c));
                }
                Ok(s.max(0.0).sqrt())
            }
            NormKind::WeightedLinf(g) => {
                let mut m = 0.0f64;
                for c in 0..f.ncomp() {
                    for (i, v) in f.comp(c).iter().enumerate() {
                        m = m.max(z[i / p].powf(g) * v.abs());
                    }
                }
                Ok(m)
            }
            NormKind::TraceL2 | NormKind::TraceH1 => {
                let area = self.grid.area();
                let mut s = 0.0;
                for c in 0..f.ncomp() {
                    let tr = &f.comp(c)[..p];
                    s += area * tr.iter().map(|v| v * v).sum::<f64>();
                    if kind == NormKind::TraceH1 {
                        let (a, b) = self.sp.grad_h(tr);
                        s += area * a.iter().chain(&b).map(|v| v * v).sum::<f64>();
                    }
                }
                Ok(s.sqrt())
            }
        }
    }

    /// Squared `H^k` norm of a scalar: `D₃` by repeated differences,
    /// horizontal derivatives exactly by Parseval.
    fn hk_sq(&self, f: &[f64], k: usize) -> f64 {
        let p = self.grid.plane();
        let scale = self.grid.area() / p as f64;
        let mut g = f.to_vec();
        let mut s = 0.0;
        for c in 0..=k {
            if c > 0 {
                g = self.d3(&g);
            }
            let spec = self.sp.forward(&g, None);
            let r = k - c;
            for (lvl, w) in self.grid.wz().iter().enumerate() {
                let mut acc = 0.0;
                for m in 0..p {
                    let (k1, k2) = self.sp.kappa(m);
                    let (a, b) = (k1 * k1, k2 * k2);
                    let mut fac = 0.0;
                    for i in 0..=r {
                        for j in 0..=(r - i) {
                            fac += a.powi(i as i32) * b.powi(j as i32);
                        }
                    }
                    acc += fac * spec[lvl * p + m].norm_sqr();
                }
                s += w * acc * scale;
            }
        }
        s
    }

    /// Skew-symmetric advection `N(a, b) = ½[(a·∇)b + Σ_k D_k(a_k b)]`.
    /// A precomputed gradient of `b` may be supplied.
    pub fn advect(&self, a: [&[f64]; 3], b: &Field, grad_b: Option<&Grad>) -> Field {
        let owned;
        let gb = match grad_b {
            Some(g) => g,
            None => {
                owned = self.gradient_vec(b);
                &owned
            }
        };
        let n = self.grid.len();
        let prod = |k: usize, i: usize| -> Vec<f64> { a[k].iter().zip(b.comp(i)).map(|(x, y)| x * y).collect() };
        let (d0, d1) = self.sp.div_h2(&prod(0, 0), &prod(1, 0), &prod(0, 1), &prod(1, 1));
        let d2 = self.sp.div_h(&prod(0, 2), &prod(1, 2));
        let mut out = vec![0.0; 3 * n];
        for (i, dh) in [d0, d1, d2].into_iter().enumerate() {
            let dz = self.d3(&prod(2, i));
            let o = &mut out[i * n..(i + 1) * n];
            for m in 0..n {
                let conv = a[0][m] * gb[i][0][m] + a[1][m] * gb[i][1][m] + a[2][m] * gb[i][2][m];
                o[m] = 0.5 * (conv + dh[m] + dz[m]);
            }
        }
        Field { dims: self.grid.dims(), ncomp: 3, data: out, time: b.time }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn disc(n3: usize) -> Disc {
        Disc::new(Grid::uniform(16, 16, n3, 2.0 * PI, 2.0).unwrap())
    }

    #[test]
    fn ramp_derivative_is_exact() {
        let d = Disc::new(Grid::graded(8, 8, 2.0 * PI, 3.0, 0.01, Some(21)).unwrap());
        let f = Field::scalar_from_fn(d.grid(), |y| 2.5 * y[2]);
        let g = d.differentiate(&f, 3).unwrap();
        assert!(g.data().iter().all(|v| (v - 2.5).abs() < 1e-11));
    }

    #[test]
    fn norm_kind_parsing() {
        assert_eq!("h3".parse::<NormKind>().unwrap(), NormKind::H(3));
        assert_eq!("wl2:2".parse::<NormKind>().unwrap(), NormKind::WeightedL2(2.0));
        assert!(matches!("h7".parse::<NormKind>(), Err(Error::Domain(_))));
        assert!(matches!("bogus".parse::<NormKind>(), Err(Error::Domain(_))));
    }

    #[test]
    fn constant_l2_norm() {
        let d = disc(8);
        let f = Field::scalar_from_fn(d.grid(), |_| 3.0);
        let exact = 3.0 * (4.0 * PI * PI * 2.0f64).sqrt();
        assert!((d.norm(&f, NormKind::L2).unwrap() - exact).abs() < 1e-12);
    }

    #[test]
    fn advection_is_energy_neutral() {
        let d = Disc::new(Grid::graded(8, 8, 2.0 * PI, 4.0, 0.02, Some(31)).unwrap());
        let a = Field::vector_from_fn(d.grid(), |y| [y[1].sin() + y[2], (y[0] + y[2]).cos(), y[0].sin() * y[2]]);
        let mut b = Field::vector_from_fn(d.grid(), |y| {
            let s = (y[2] * (4.0 - y[2])).sin();
            [s * y[0].cos(), s * (y[1] + 1.0).sin(), s]
        });
        b.zero_walls();
        let n = d.advect(a.comps(), &b, None);
        let e = d.inner(&n, &b).unwrap();
        assert!(e.abs() < 1e-12, "⟨N(a,b), b⟩ = {e}");
    }
}
