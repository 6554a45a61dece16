//! Level-by-level 2-D FFTs in `y′`.
//!
//! Physical layout is `[k][j₂][j₁]`; spectral layout is transposed,
//! `[k][m₁][m₂]`. Real fields are transformed two at a time by packing them
//! into the real and imaginary parts of one complex array.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::grid::Grid;

pub type Spec = Vec<Complex64>;

pub struct Spectral {
    n1: usize,
    n2: usize,
    nz: usize,
    f1: Arc<dyn Fft<f64>>,
    i1: Arc<dyn Fft<f64>>,
    f2: Arc<dyn Fft<f64>>,
    i2: Arc<dyn Fft<f64>>,
    k1: Vec<f64>,
    k2: Vec<f64>,
    neg1: Vec<usize>,
    neg2: Vec<usize>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral")
            .field("n1", &self.n1)
            .field("n2", &self.n2)
            .field("nz", &self.nz)
            .finish()
    }
}

/// Derivative wavenumbers with the Nyquist mode removed, so that the
/// derivative of a real field stays real and the operator stays skew.
fn wavenumbers(n: usize, period: f64) -> Vec<f64> {
    let base = 2.0 * PI / period;
    (0..n)
        .map(|m| {
            if 2 * m == n {
                0.0
            } else if 2 * m < n {
                base * m as f64
            } else {
                base * (m as f64 - n as f64)
            }
        })
        .collect()
}

impl Spectral {
    pub fn new(grid: &Grid) -> Self {
        let (n1, n2) = (grid.n1(), grid.n2());
        let mut planner = FftPlanner::new();
        Self {
            n1,
            n2,
            nz: grid.nz(),
            f1: planner.plan_fft_forward(n1),
            i1: planner.plan_fft_inverse(n1),
            f2: planner.plan_fft_forward(n2),
            i2: planner.plan_fft_inverse(n2),
            k1: wavenumbers(n1, grid.period()),
            k2: wavenumbers(n2, grid.period()),
            neg1: (0..n1).map(|m| (n1 - m) % n1).collect(),
            neg2: (0..n2).map(|m| (n2 - m) % n2).collect(),
        }
    }

    pub fn k1(&self) -> &[f64] {
        &self.k1
    }

    pub fn k2(&self) -> &[f64] {
        &self.k2
    }

    pub fn plane(&self) -> usize {
        self.n1 * self.n2
    }

    /// Number of levels in a buffer of length `len`.
    fn levels(&self, len: usize) -> usize {
        debug_assert_eq!(len % self.plane(), 0);
        len / self.plane()
    }

    /// Spectral index of mode `(m₁, m₂)` within one level.
    #[inline]
    pub fn mode(&self, m1: usize, m2: usize) -> usize {
        m1 * self.n2 + m2
    }

    /// `κ₁`, `κ₂` of the in-level spectral index `s`.
    #[inline]
    pub fn kappa(&self, s: usize) -> (f64, f64) {
        (self.k1[s / self.n2], self.k2[s % self.n2])
    }

    /// Forward transform of `re + i·im` (either may be absent).
    pub fn forward(&self, re: &[f64], im: Option<&[f64]>) -> Spec {
        let mut buf: Vec<Complex64> = match im {
            Some(im) => re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect(),
            None => re.iter().map(|&a| Complex64::new(a, 0.0)).collect(),
        };
        self.forward_in_place(&mut buf);
        buf
    }

    pub fn forward_in_place(&self, buf: &mut Spec) {
        let nz = self.levels(buf.len());
        self.f1.process(buf);
        let mut t = vec![Complex64::default(); buf.len()];
        for k in 0..nz {
            let off = k * self.plane();
            for j2 in 0..self.n2 {
                for m1 in 0..self.n1 {
                    t[off + m1 * self.n2 + j2] = buf[off + j2 * self.n1 + m1];
                }
            }
        }
        self.f2.process(&mut t);
        *buf = t;
    }

    /// Inverse transform, normalised, returning the complex physical field.
    pub fn inverse(&self, mut spec: Spec) -> Spec {
        let nz = self.levels(spec.len());
        self.i2.process(&mut spec);
        let mut t = vec![Complex64::default(); spec.len()];
        for k in 0..nz {
            let off = k * self.plane();
            for m1 in 0..self.n1 {
                for j2 in 0..self.n2 {
                    t[off + j2 * self.n1 + m1] = spec[off + m1 * self.n2 + j2];
                }
            }
        }
        self.i1.process(&mut t);
        let s = 1.0 / self.plane() as f64;
        for v in &mut t {
            *v *= s;
        }
        t
    }

    /// Split the transform of `a + i·b` into the transforms of `a` and `b`.
    pub fn split(&self, z: &Spec) -> (Spec, Spec) {
        let nz = self.levels(z.len());
        let p = self.plane();
        let mut a = vec![Complex64::default(); z.len()];
        let mut b = vec![Complex64::default(); z.len()];
        let half_i = Complex64::new(0.0, -0.5);
        for k in 0..nz {
            let off = k * p;
            for m1 in 0..self.n1 {
                for m2 in 0..self.n2 {
                    let s = off + m1 * self.n2 + m2;
                    let r = off + self.neg1[m1] * self.n2 + self.neg2[m2];
                    let zc = z[r].conj();
                    a[s] = 0.5 * (z[s] + zc);
                    b[s] = half_i * (z[s] - zc);
                }
            }
        }
        (a, b)
    }

    /// Inverse of two Hermitian spectra at the cost of one transform.
    pub fn inverse_pair(&self, a: &Spec, b: &Spec) -> (Vec<f64>, Vec<f64>) {
        let i = Complex64::new(0.0, 1.0);
        let z: Spec = a.iter().zip(b).map(|(&x, &y)| x + i * y).collect();
        let out = self.inverse(z);
        (out.iter().map(|c| c.re).collect(), out.iter().map(|c| c.im).collect())
    }

    pub fn inverse_real(&self, a: Spec) -> Vec<f64> {
        self.inverse(a).into_iter().map(|c| c.re).collect()
    }

    /// Multiply every mode by `i·κ₁` (`dir = 0`) or `i·κ₂` (`dir = 1`).
    pub fn ik(&self, s: &Spec, dir: usize) -> Spec {
        let p = self.plane();
        s.iter()
            .enumerate()
            .map(|(i, &v)| {
                let (a, b) = self.kappa(i % p);
                let k = if dir == 0 { a } else { b };
                Complex64::new(-k * v.im, k * v.re)
            })
            .collect()
    }

    /// `(D₁f, D₂f)` from one forward and one inverse transform.
    pub fn grad_h(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let s = self.forward(f, None);
        self.inverse_pair(&self.ik(&s, 0), &self.ik(&s, 1))
    }

    /// Horizontal gradients of two real fields.
    pub fn grad_h2(&self, f: &[f64], g: &[f64]) -> [Vec<f64>; 4] {
        let (a, b) = self.split(&self.forward(f, Some(g)));
        let (fa, fb) = self.inverse_pair(&self.ik(&a, 0), &self.ik(&a, 1));
        let (ga, gb) = self.inverse_pair(&self.ik(&b, 0), &self.ik(&b, 1));
        [fa, fb, ga, gb]
    }

    /// `D₁x + D₂y`.
    pub fn div_h(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let (a, b) = self.split(&self.forward(x, Some(y)));
        let (ka, kb) = (self.ik(&a, 0), self.ik(&b, 1));
        let s: Spec = ka.iter().zip(&kb).map(|(p, q)| p + q).collect();
        self.inverse_real(s)
    }

    /// `(D₁x₁ + D₂y₁, D₁x₂ + D₂y₂)` with two forward and one inverse transform.
    pub fn div_h2(&self, x1: &[f64], y1: &[f64], x2: &[f64], y2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (a1, b1) = self.split(&self.forward(x1, Some(y1)));
        let (a2, b2) = self.split(&self.forward(x2, Some(y2)));
        let s1: Spec = self.ik(&a1, 0).iter().zip(&self.ik(&b1, 1)).map(|(p, q)| p + q).collect();
        let s2: Spec = self.ik(&a2, 0).iter().zip(&self.ik(&b2, 1)).map(|(p, q)| p + q).collect();
        self.inverse_pair(&s1, &s2)
    }

    /// Single-direction derivative.
    pub fn d(&self, f: &[f64], dir: usize) -> Vec<f64> {
        let s = self.forward(f, None);
        self.inverse_real(self.ik(&s, dir))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_of_sine_is_spectral() {
        let g = Grid::uniform(16, 8, 4, 2.0 * PI, 1.0).unwrap();
        let sp = Spectral::new(&g);
        let f: Vec<f64> = (0..g.len()).map(|i| {
            let p = g.point(i);
            (2.0 * p[0]).sin() * p[1].cos() + p[2]
        }).collect();
        let (d1, d2) = sp.grad_h(&f);
        for i in 0..g.len() {
            let p = g.point(i);
            assert!((d1[i] - 2.0 * (2.0 * p[0]).cos() * p[1].cos()).abs() < 1e-12);
            assert!((d2[i] + (2.0 * p[0]).sin() * p[1].sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn pair_transforms_agree_with_single() {
        let g = Grid::uniform(8, 16, 4, 3.0, 1.0).unwrap();
        let sp = Spectral::new(&g);
        let f: Vec<f64> = (0..g.len()).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let h: Vec<f64> = (0..g.len()).map(|i| ((i * 104729) % 97) as f64 / 40.0 - 1.0).collect();
        let [a, b, c, d] = sp.grad_h2(&f, &h);
        let (a1, b1) = sp.grad_h(&f);
        let (c1, d1) = sp.grad_h(&h);
        for i in 0..g.len() {
            assert!((a[i] - a1[i]).abs() < 1e-11 && (b[i] - b1[i]).abs() < 1e-11);
            assert!((c[i] - c1[i]).abs() < 1e-11 && (d[i] - d1[i]).abs() < 1e-11);
        }
        let dv = sp.div_h(&f, &h);
        for i in 0..g.len() {
            assert!((dv[i] - a1[i] - d1[i]).abs() < 1e-11);
        }
    }
}
