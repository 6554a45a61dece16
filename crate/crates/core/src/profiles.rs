//! Boundary-layer profiles `φ`, `ψ` and their scaled norms.
//!
//! `ρ(z) = exp(1 − 1/(1 − z²))` on `[0, 1)` (zero beyond), `φ = ρ·(1 − λz)`
//! with `λ = ∫ρ / ∫zρ` so that `∫₀¹ φ = 0`, and `ψ(z) = ∫₀^z φ`. Hence
//! `φ(0) = 1`, `ψ(0) = 0`, `ψ′ = φ`, and both vanish for `z ≥ 1`.
//!
//! Weighted sup-norms are read as `‖f‖_{L∞(y²)} = sup y²|f(y)|`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{maximize, CompositeGl};

const PANELS: usize = 2048;
const GL_ORDER: usize = 10;

fn rho(z: f64) -> f64 {
    let z = z.abs();
    if z >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - z * z)).exp()
    }
}

fn drho(z: f64) -> f64 {
    if z.abs() >= 1.0 {
        0.0
    } else {
        let s = 1.0 - z * z;
        -rho(z) * 2.0 * z / (s * s)
    }
}

/// Reference norms of the unscaled profiles on `ℝ₊`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceNorms {
    pub phi_l2: f64,
    pub psi_l2: f64,
    pub dphi_l2: f64,
    pub dphi_l2_z2: f64,
    pub phi_l2_z2: f64,
    pub psi_linf: f64,
    pub dphi_linf_z2: f64,
    pub phi_linf_z2: f64,
}

/// The profile pair with its mean-correction constant and reference norms.
#[derive(Debug, Clone)]
pub struct ProfilePair {
    lambda: f64,
    cumulative: Vec<f64>,
    rule: CompositeGl,
    norms: ReferenceNorms,
}

impl ProfilePair {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn norms(&self) -> &ReferenceNorms {
        &self.norms
    }

    pub fn phi(&self, z: f64) -> f64 {
        if !(0.0..1.0).contains(&z) {
            return if z < 0.0 { f64::NAN } else { 0.0 };
        }
        rho(z) * (1.0 - self.lambda * z)
    }

    pub fn dphi(&self, z: f64) -> f64 {
        if !(0.0..1.0).contains(&z) {
            return if z < 0.0 { f64::NAN } else { 0.0 };
        }
        drho(z) * (1.0 - self.lambda * z) - self.lambda * rho(z)
    }

    /// `ψ(z) = ∫₀^z φ`: tabulated panel sums plus one partial panel.
    pub fn psi(&self, z: f64) -> f64 {
        if z < 0.0 {
            return f64::NAN;
        }
        if z >= 1.0 {
            return 0.0;
        }
        let h = 1.0 / PANELS as f64;
        let i = ((z / h) as usize).min(PANELS - 1);
        let a = i as f64 * h;
        self.cumulative[i] + self.rule.panel(a, z, |s| self.phi(s))
    }
}

/// Build `φ`, `ψ`, `λ` and the reference norms.
pub fn build_profiles() -> Result<ProfilePair> {
    let rule = CompositeGl::new(GL_ORDER);
    let i0 = rule.integrate(0.0, 1.0, PANELS, rho);
    let i1 = rule.integrate(0.0, 1.0, PANELS, |z| z * rho(z));
    if !(i0.is_finite() && i1.is_finite() && i1 > 0.0) {
        return Err(Error::Quadrature(format!("moments of ρ: ∫ρ = {i0}, ∫zρ = {i1}")));
    }
    let lambda = i0 / i1;
    let phi = |z: f64| rho(z) * (1.0 - lambda * z);
    let h = 1.0 / PANELS as f64;
    let mut cumulative = Vec::with_capacity(PANELS + 1);
    let mut acc = 0.0;
    cumulative.push(0.0);
    for i in 0..PANELS {
        acc += rule.panel(i as f64 * h, (i + 1) as f64 * h, phi);
        cumulative.push(acc);
    }
    if acc.abs() > 1e-12 {
        return Err(Error::Quadrature(format!("ψ(1) = {acc:.3e} does not vanish")));
    }
    let mut pair = ProfilePair {
        lambda,
        cumulative,
        rule,
        norms: ReferenceNorms {
            phi_l2: 0.0,
            psi_l2: 0.0,
            dphi_l2: 0.0,
            dphi_l2_z2: 0.0,
            phi_l2_z2: 0.0,
            psi_linf: 0.0,
            dphi_linf_z2: 0.0,
            phi_linf_z2: 0.0,
        },
    };
    let r = &pair.rule;
    let p = &pair;
    let l2 = |f: &dyn Fn(f64) -> f64| r.integrate(0.0, 1.0, PANELS, |z| f(z) * f(z)).sqrt();
    let norms = ReferenceNorms {
        phi_l2: l2(&|z| p.phi(z)),
        psi_l2: l2(&|z| p.psi(z)),
        dphi_l2: l2(&|z| p.dphi(z)),
        dphi_l2_z2: l2(&|z| z * p.dphi(z)),
        phi_l2_z2: l2(&|z| z * p.phi(z)),
        // ψ increases up to the zero of φ at z = 1/λ and decreases to 0 after.
        psi_linf: p.psi(1.0 / lambda).abs(),
        dphi_linf_z2: maximize(&|z| z * z * p.dphi(z).abs(), 0.0, 1.0 - 1e-12, 4000).1,
        phi_linf_z2: maximize(&|z| z * z * p.phi(z).abs(), 0.0, 1.0 - 1e-12, 4000).1,
    };
    pair.norms = norms;
    Ok(pair)
}

/// The eight scaled quantities, with `a = √(θν)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScaledKind {
    /// `‖φ(·/a)‖_{L²}`
    A,
    /// `‖aψ(·/a)‖_{L²}`
    B,
    /// `‖D₃[φ(·/a)]‖_{L²(y²)}`
    C,
    /// `‖D₃[φ(·/a)]‖_{L²}`
    D,
    /// `‖D₃[ψ(·/a)]‖_{L²(y²)}`
    E,
    /// `‖aψ(·/a)‖_{L∞}`
    F,
    /// `‖D₃[φ(·/a)]‖_{L∞(y²)}`
    G,
    /// `‖D₃[ψ(·/a)]‖_{L∞(y²)}`
    H,
}

impl ScaledKind {
    pub const ALL: [ScaledKind; 8] = [
        ScaledKind::A,
        ScaledKind::B,
        ScaledKind::C,
        ScaledKind::D,
        ScaledKind::E,
        ScaledKind::F,
        ScaledKind::G,
        ScaledKind::H,
    ];

    /// Exact exponent of `a` in the scaled quantity.
    pub fn exponent(&self) -> f64 {
        match self {
            ScaledKind::A | ScaledKind::C | ScaledKind::E => 0.5,
            ScaledKind::B => 1.5,
            ScaledKind::D => -0.5,
            ScaledKind::F | ScaledKind::G | ScaledKind::H => 1.0,
        }
    }

    /// Exponent of `a` in the bound stated for this quantity.
    pub fn bound_exponent(&self) -> f64 {
        match self {
            ScaledKind::A | ScaledKind::B | ScaledKind::C | ScaledKind::E => 0.5,
            ScaledKind::D => -0.5,
            ScaledKind::F | ScaledKind::G | ScaledKind::H => 1.0,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ScaledKind::A => "a",
            ScaledKind::B => "b",
            ScaledKind::C => "c",
            ScaledKind::D => "d",
            ScaledKind::E => "e",
            ScaledKind::F => "f",
            ScaledKind::G => "g",
            ScaledKind::H => "h",
        }
    }

    /// The scaled integrand as a function of `y` and whether the norm is a
    /// weighted sup (`true`) or an `L²` norm (`false`); `L²` weights are
    /// folded into the integrand.
    pub fn integrand<'a>(&self, pair: &'a ProfilePair, a: f64) -> (Box<dyn Fn(f64) -> f64 + 'a>, bool) {
        match self {
            ScaledKind::A => (Box::new(move |y| pair.phi(y / a)), false),
            ScaledKind::B => (Box::new(move |y| a * pair.psi(y / a)), false),
            ScaledKind::C => (Box::new(move |y| y * pair.dphi(y / a) / a), false),
            ScaledKind::D => (Box::new(move |y| pair.dphi(y / a) / a), false),
            ScaledKind::E => (Box::new(move |y| y * pair.phi(y / a) / a), false),
            ScaledKind::F => (Box::new(move |y| (a * pair.psi(y / a)).abs()), true),
            ScaledKind::G => (Box::new(move |y| (y * y * pair.dphi(y / a) / a).abs()), true),
            ScaledKind::H => (Box::new(move |y| (y * y * pair.phi(y / a) / a).abs()), true),
        }
    }
}

impl fmt::Display for ScaledKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ScaledKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScaledKind::ALL
            .iter()
            .copied()
            .find(|k| k.label() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Domain(format!("unknown scaled-norm kind '{s}'")))
    }
}

/// Closed-form value of a scaled quantity at length scale `a`.
pub fn scaled_norm(pair: &ProfilePair, a: f64, kind: ScaledKind) -> Result<f64> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Domain(format!("length scale must lie in (0,1), got {a}")));
    }
    let n = pair.norms();
    let r = a.sqrt();
    Ok(match kind {
        ScaledKind::A => r * n.phi_l2,
        ScaledKind::B => a * r * n.psi_l2,
        ScaledKind::C => r * n.dphi_l2_z2,
        ScaledKind::D => n.dphi_l2 / r,
        ScaledKind::E => r * n.phi_l2_z2,
        ScaledKind::F => a * n.psi_linf,
        ScaledKind::G => a * n.dphi_linf_z2,
        ScaledKind::H => a * n.phi_linf_z2,
    })
}

/// The same quantity by direct quadrature of the scaled integrand over the
/// support `[0, a]`.
pub fn scaled_norm_quadrature(pair: &ProfilePair, a: f64, kind: ScaledKind) -> Result<f64> {
    let (f, sup) = kind.integrand(pair, a);
    if sup {
        Ok(maximize(&*f, 0.0, a * (1.0 - 1e-12), 4000).1)
    } else {
        let rule = CompositeGl::new(GL_ORDER);
        let v = rule.integrate(0.0, a, PANELS, |y| {
            let v = f(y);
            v * v
        });
        if !v.is_finite() {
            return Err(Error::Quadrature(format!("scaled integrand for kind {kind}")));
        }
        Ok(v.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_constraints() {
        let p = build_profiles().unwrap();
        assert_eq!(p.phi(0.0), 1.0);
        assert_eq!(p.psi(0.0), 0.0);
        assert!(p.psi(1.0 - 1e-12).abs() < 1e-10);
        assert_eq!(p.phi(1.5), 0.0);
        assert_eq!(p.psi(1.5), 0.0);
    }

    #[test]
    fn unknown_kind_is_domain_error() {
        assert!(matches!("z".parse::<ScaledKind>(), Err(Error::Domain(_))));
        assert_eq!("D".parse::<ScaledKind>().unwrap(), ScaledKind::D);
    }

    #[test]
    fn kind_a_at_hundredth() {
        let p = build_profiles().unwrap();
        let v = scaled_norm(&p, 0.01, ScaledKind::A).unwrap();
        assert!((v - 0.1 * p.norms().phi_l2).abs() < 1e-15);
    }
}
