//! Closed-form separable functions on the periodic half-space.
//!
//! A [`Term`] is `c · T₁(y₁) · T₂(y₂) · P(y₃)e^{−r y₃}` with trigonometric
//! factors of integer frequency. Sums of terms are closed under
//! differentiation and multiplication, and their `L²`/`H^k` norms over
//! `[0, P)² × ℝ₊` have exact closed forms (distinct trigonometric signatures
//! are orthogonal when `P` is a multiple of `2π`).

use std::collections::BTreeMap;

/// `cos(n·y)` or `sin(n·y)`; `Cos(0)` is the constant 1 and `Sin(0)` is 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Trig {
    Cos(u32),
    Sin(u32),
}

impl Trig {
    pub const ONE: Trig = Trig::Cos(0);

    pub fn eval(&self, y: f64) -> f64 {
        match *self {
            Trig::Cos(0) => 1.0,
            Trig::Sin(0) => 0.0,
            Trig::Cos(n) => (n as f64 * y).cos(),
            Trig::Sin(n) => (n as f64 * y).sin(),
        }
    }

    fn deriv(&self) -> (f64, Trig) {
        match *self {
            Trig::Cos(n) => (-(n as f64), Trig::Sin(n)),
            Trig::Sin(n) => (n as f64, Trig::Cos(n)),
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, Trig::Sin(0))
    }

    /// Product-to-sum: returns two `(coefficient, factor)` pairs.
    fn mul(self, o: Trig) -> [(f64, Trig); 2] {
        let diff = |a: u32, b: u32| (a as i64 - b as i64, a + b);
        match (self, o) {
            (Trig::Cos(a), Trig::Cos(b)) => {
                let (d, s) = diff(a, b);
                [(0.5, Trig::Cos(d.unsigned_abs() as u32)), (0.5, Trig::Cos(s))]
            }
            (Trig::Sin(a), Trig::Sin(b)) => {
                let (d, s) = diff(a, b);
                [(0.5, Trig::Cos(d.unsigned_abs() as u32)), (-0.5, Trig::Cos(s))]
            }
            (Trig::Sin(a), Trig::Cos(b)) | (Trig::Cos(b), Trig::Sin(a)) => {
                // sin a cos b = ½[sin(a+b) + sin(a−b)]
                let (d, s) = diff(a, b);
                let sign = if d < 0 { -0.5 } else { 0.5 };
                [(0.5, Trig::Sin(s)), (sign, Trig::Sin(d.unsigned_abs() as u32))]
            }
        }
    }

    /// `∫₀^P T²` for a period `P` that is a multiple of `2π`.
    fn sq_norm(&self, period: f64) -> f64 {
        match *self {
            Trig::Cos(0) => period,
            Trig::Sin(0) => 0.0,
            _ => 0.5 * period,
        }
    }
}

/// `(Σ cᵢ yⁱ) e^{−r y}` with `r > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyExp {
    pub coeffs: Vec<f64>,
    pub rate: f64,
}

impl PolyExp {
    pub fn new(coeffs: Vec<f64>, rate: f64) -> Self {
        Self { coeffs, rate }
    }

    pub fn eval(&self, y: f64) -> f64 {
        let p = self.coeffs.iter().rev().fold(0.0, |acc, c| acc * y + c);
        p * (-self.rate * y).exp()
    }

    pub fn deriv(&self) -> PolyExp {
        let n = self.coeffs.len();
        let coeffs = (0..n)
            .map(|i| {
                let up = if i + 1 < n { (i + 1) as f64 * self.coeffs[i + 1] } else { 0.0 };
                up - self.rate * self.coeffs[i]
            })
            .collect();
        PolyExp { coeffs, rate: self.rate }
    }

    pub fn mul(&self, o: &PolyExp) -> PolyExp {
        let mut coeffs = vec![0.0; self.coeffs.len() + o.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in o.coeffs.iter().enumerate() {
                coeffs[i + j] += a * b;
            }
        }
        PolyExp { coeffs, rate: self.rate + o.rate }
    }

    /// `∫₀^∞ f g dy`.
    pub fn inner(&self, o: &PolyExp) -> f64 {
        let r = self.rate + o.rate;
        let mut s = 0.0;
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in o.coeffs.iter().enumerate() {
                let n = i + j;
                let fact: f64 = (1..=n).map(|k| k as f64).product();
                s += a * b * fact / r.powi(n as i32 + 1);
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coef: f64,
    pub t1: Trig,
    pub t2: Trig,
    pub r: PolyExp,
}

impl Term {
    pub fn new(coef: f64, t1: Trig, t2: Trig, r: PolyExp) -> Self {
        Self { coef, t1, t2, r }
    }

    pub fn eval(&self, y: [f64; 3]) -> f64 {
        self.coef * self.t1.eval(y[0]) * self.t2.eval(y[1]) * self.r.eval(y[2])
    }
}

/// A finite sum of separable terms.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SepSum {
    pub terms: Vec<Term>,
}

impl SepSum {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn single(t: Term) -> Self {
        Self { terms: vec![t] }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, y: [f64; 3]) -> f64 {
        self.terms.iter().map(|t| t.eval(y)).sum()
    }

    pub fn scale(&self, s: f64) -> SepSum {
        let terms = self
            .terms
            .iter()
            .map(|t| Term { coef: t.coef * s, ..t.clone() })
            .collect();
        SepSum { terms }
    }

    pub fn add(&self, o: &SepSum) -> SepSum {
        let mut terms = self.terms.clone();
        terms.extend(o.terms.iter().cloned());
        SepSum { terms }
    }

    /// `∂/∂y_dir`, `dir ∈ {0, 1, 2}`.
    pub fn deriv(&self, dir: usize) -> SepSum {
        let mut out = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            let mut n = t.clone();
            match dir {
                0 => {
                    let (c, f) = t.t1.deriv();
                    n.coef *= c;
                    n.t1 = f;
                }
                1 => {
                    let (c, f) = t.t2.deriv();
                    n.coef *= c;
                    n.t2 = f;
                }
                _ => n.r = t.r.deriv(),
            }
            if n.coef != 0.0 && !n.t1.is_zero() && !n.t2.is_zero() {
                out.push(n);
            }
        }
        SepSum { terms: out }
    }

    pub fn deriv_multi(&self, a: usize, b: usize, c: usize) -> SepSum {
        let mut s = self.clone();
        for _ in 0..a {
            s = s.deriv(0);
        }
        for _ in 0..b {
            s = s.deriv(1);
        }
        for _ in 0..c {
            s = s.deriv(2);
        }
        s
    }

    pub fn mul(&self, o: &SepSum) -> SepSum {
        let mut out = Vec::new();
        for a in &self.terms {
            for b in &o.terms {
                let r = a.r.mul(&b.r);
                for (c1, f1) in a.t1.mul(b.t1) {
                    for (c2, f2) in a.t2.mul(b.t2) {
                        let coef = a.coef * b.coef * c1 * c2;
                        if coef != 0.0 && !f1.is_zero() && !f2.is_zero() {
                            out.push(Term::new(coef, f1, f2, r.clone()));
                        }
                    }
                }
            }
        }
        SepSum { terms: out }
    }

    /// `‖f‖²` over `[0, P)² × ℝ₊`.
    pub fn sq_norm(&self, period: f64) -> f64 {
        let mut groups: BTreeMap<(Trig, Trig), Vec<&Term>> = BTreeMap::new();
        for t in &self.terms {
            groups.entry((t.t1, t.t2)).or_default().push(t);
        }
        let mut s = 0.0;
        for ((t1, t2), ts) in groups {
            let mut radial = 0.0;
            for a in &ts {
                for b in &ts {
                    radial += a.coef * b.coef * a.r.inner(&b.r);
                }
            }
            s += t1.sq_norm(period) * t2.sq_norm(period) * radial;
        }
        s.max(0.0)
    }

    /// Squared `H^k` norm: sum over multi-indices `|γ| ≤ k`.
    pub fn hk_sq_norm(&self, k: usize, period: f64) -> f64 {
        let mut s = 0.0;
        for a in 0..=k {
            for b in 0..=(k - a) {
                for c in 0..=(k - a - b) {
                    s += self.deriv_multi(a, b, c).sq_norm(period);
                }
            }
        }
        s
    }

    /// Squared `L²(ℝ²)` norm of the trace at `y₃ = 0` over one box.
    pub fn trace_sq_norm(&self, period: f64) -> f64 {
        let mut groups: BTreeMap<(Trig, Trig), f64> = BTreeMap::new();
        for t in &self.terms {
            *groups.entry((t.t1, t.t2)).or_default() += t.coef * t.r.eval(0.0);
        }
        groups
            .into_iter()
            .map(|((t1, t2), c)| c * c * t1.sq_norm(period) * t2.sq_norm(period))
            .sum()
    }

    /// Sample on a tensor grid; layout `[k][j₂][j₁]`.
    pub fn sample(&self, y1: &[f64], y2: &[f64], y3: &[f64]) -> Vec<f64> {
        let (n1, n2) = (y1.len(), y2.len());
        let mut out = vec![0.0; n1 * n2 * y3.len()];
        for t in &self.terms {
            let a1: Vec<f64> = y1.iter().map(|&y| t.t1.eval(y)).collect();
            let a2: Vec<f64> = y2.iter().map(|&y| t.t2.eval(y)).collect();
            for (k, &z) in y3.iter().enumerate() {
                let rk = t.coef * t.r.eval(z);
                if rk == 0.0 {
                    continue;
                }
                let plane = &mut out[k * n1 * n2..(k + 1) * n1 * n2];
                for (j2, &b) in a2.iter().enumerate() {
                    let c = rk * b;
                    let row = &mut plane[j2 * n1..(j2 + 1) * n1];
                    for (v, &a) in row.iter_mut().zip(&a1) {
                        *v += c * a;
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn product_to_sum_is_pointwise_exact() {
        let a = SepSum::single(Term::new(1.3, Trig::Sin(2), Trig::Cos(1), PolyExp::new(vec![1.0, 2.0], 1.0)));
        let b = SepSum::single(Term::new(-0.7, Trig::Cos(3), Trig::Sin(1), PolyExp::new(vec![0.5], 2.0)));
        let p = a.mul(&b);
        for y in [[0.3, 1.1, 0.2], [2.0, -0.4, 1.7]] {
            assert!((p.eval(y) - a.eval(y) * b.eval(y)).abs() < 1e-14);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let a = SepSum::single(Term::new(1.0, Trig::Sin(1), Trig::Cos(2), PolyExp::new(vec![0.0, 1.0], 1.5)));
        let y = [0.4, 0.9, 0.6];
        let h = 1e-5;
        for d in 0..3 {
            let mut yp = y;
            let mut ym = y;
            yp[d] += h;
            ym[d] -= h;
            let fd = (a.eval(yp) - a.eval(ym)) / (2.0 * h);
            assert!((a.deriv(d).eval(y) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn norm_of_single_term() {
        // ∫∫ sin²y₂ · ∫ e^{−2y} = 2π·π · ½.
        let a = SepSum::single(Term::new(1.0, Trig::ONE, Trig::Sin(1), PolyExp::new(vec![1.0], 1.0)));
        assert!((a.sq_norm(2.0 * PI) - PI * PI).abs() < 1e-12);
    }
}
