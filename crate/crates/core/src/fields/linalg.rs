//! Banded Cholesky factorisation and preconditioned conjugate gradients.

use crate::error::{Error, Result};

/// Cholesky factor of a symmetric positive-definite band matrix stored by
/// lower diagonals: `band[i][d] = M[i][i−d]` for `d ≤ bw`.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    bw: usize,
    l: Vec<Vec<f64>>,
}

impl BandCholesky {
    pub fn factor(mut band: Vec<Vec<f64>>, bw: usize) -> Result<Self> {
        let n = band.len();
        for i in 0..n {
            for d in (1..=bw.min(i)).rev() {
                let j = i - d;
                // L[i][j] = (M[i][j] − Σ_{k<j} L[i][k]L[j][k]) / L[j][j]
                let mut s = band[i][d];
                for e in 1..=bw {
                    let k = match j.checked_sub(e) {
                        Some(k) => k,
                        None => break,
                    };
                    if i - k > bw {
                        break;
                    }
                    s -= band[i][i - k] * band[j][e];
                }
                band[i][d] = s / band[j][0];
            }
            let mut s = band[i][0];
            for d in 1..=bw.min(i) {
                s -= band[i][d] * band[i][d];
            }
            if !(s > 0.0) {
                return Err(Error::CheckFailed(format!(
                    "band matrix is not positive definite at row {i} (pivot {s:.3e})"
                )));
            }
            band[i][0] = s.sqrt();
        }
        Ok(Self { bw, l: band })
    }

    pub fn len(&self) -> usize {
        self.l.len()
    }

    pub fn is_empty(&self) -> bool {
        self.l.is_empty()
    }

    /// Solve in place, reading and writing `x[i·stride]`.
    pub fn solve_strided(&self, x: &mut [f64], offset: usize, stride: usize) {
        let n = self.l.len();
        for i in 0..n {
            let mut s = x[offset + i * stride];
            for d in 1..=self.bw.min(i) {
                s -= self.l[i][d] * x[offset + (i - d) * stride];
            }
            x[offset + i * stride] = s / self.l[i][0];
        }
        for i in (0..n).rev() {
            let mut s = x[offset + i * stride];
            for d in 1..=self.bw {
                if i + d >= n {
                    break;
                }
                s -= self.l[i + d][d] * x[offset + (i + d) * stride];
            }
            x[offset + i * stride] = s / self.l[i][0];
        }
    }

    pub fn solve(&self, x: &mut [f64]) {
        self.solve_strided(x, 0, 1);
    }
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final residual norm relative to the right-hand side.
    pub residual: f64,
}

/// Preconditioned CG for `A x = b`, where `A` is self-adjoint for `dot`.
/// Starts from the incoming `x`; converges when `norm(r) ≤ max(rtol·norm(b),
/// atol)`. The stopping norm may differ from the one induced by `dot`.
#[allow(clippy::too_many_arguments)]
pub fn pcg(
    what: &'static str,
    apply: &dyn Fn(&[f64]) -> Vec<f64>,
    precond: &dyn Fn(&[f64]) -> Vec<f64>,
    dot: &dyn Fn(&[f64], &[f64]) -> f64,
    norm: &dyn Fn(&[f64]) -> f64,
    b: &[f64],
    x: &mut [f64],
    rtol: f64,
    atol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let bnorm = norm(b);
    let tol = (rtol * bnorm).max(atol);
    let ax = apply(x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut rn = norm(&r);
    let rel = |rn: f64| if bnorm > 0.0 { rn / bnorm } else { rn };
    if rn <= tol {
        return Ok(SolveStats { iterations: 0, residual: rel(rn) });
    }
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap.is_finite() && pap > 0.0) {
            return Err(Error::NoConvergence { what, iterations: it, residual: rel(rn) });
        }
        let a = rz / pap;
        for ((xi, pi), (ri, api)) in x.iter_mut().zip(&p).zip(r.iter_mut().zip(&ap)) {
            *xi += a * pi;
            *ri -= a * api;
        }
        rn = norm(&r);
        if !rn.is_finite() {
            return Err(Error::NonFinite(what.into()));
        }
        if rn <= tol {
            return Ok(SolveStats { iterations: it, residual: rel(rn) });
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    Err(Error::NoConvergence { what, iterations: max_iter, residual: rel(rn) })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(band: &[Vec<f64>], bw: usize) -> Vec<Vec<f64>> {
        let n = band.len();
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            for d in 0..=bw.min(i) {
                m[i][i - d] = band[i][d];
                m[i - d][i] = band[i][d];
            }
        }
        m
    }

    #[test]
    fn band_cholesky_solves_spd_system() {
        let n = 12;
        let bw = 3;
        let band: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..=bw).map(|d| if d == 0 { 6.0 + i as f64 * 0.1 } else { 1.0 / (d + i % 3) as f64 }).collect())
            .collect();
        let m = dense(&band, bw);
        let x0: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut b: Vec<f64> = (0..n).map(|i| dot(&m[i], &x0)).collect();
        BandCholesky::factor(band, bw).unwrap().solve(&mut b);
        for i in 0..n {
            assert!((b[i] - x0[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn cg_converges_on_diagonal_system() {
        let d: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        let b = vec![1.0; 20];
        let mut x = vec![0.0; 20];
        let s = pcg(
            "test",
            &|v: &[f64]| v.iter().zip(&d).map(|(a, b)| a * b).collect(),
            &|v: &[f64]| v.to_vec(),
            &|a: &[f64], b: &[f64]| dot(a, b),
            &|a: &[f64]| dot(a, a).sqrt(),
            &b,
            &mut x,
            1e-12,
            0.0,
            100,
        )
        .unwrap();
        assert!(s.iterations <= 20);
        for i in 0..20 {
            assert!((x[i] - 1.0 / d[i]).abs() < 1e-10);
        }
    }
}
