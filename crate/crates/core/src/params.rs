//! The admissible parameter set `E(K₀, δ₀, β)`, the default `β` and the
//! layer constant `θ`.
//!
//! A triple `(η, ν, δ)` is admissible when `0 < ν < η < 1`, `δ ∈ (0, δ₀)`,
//! `δ^{α−1}η ≤ K₀ν` and `η + √(ν/η) ≤ β(η, ν)²`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack for the clauses that hold with equality on natural
/// parameter families (the default `β`, and `δ = η`, `ν = η^α` for the
/// anisotropy clause), so that they do not flip on the last bit of rounding.
const CLAUSE_RTOL: f64 = 1e-12;

/// How `β(η, ν)` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BetaChoice {
    /// `β = (η + √(ν/η))^{1/2}`.
    Default,
    /// `β = factor·(η + √(ν/η))^{1/2}`.
    Scaled { factor: f64 },
    /// A constant `β`, independent of `(η, ν)`.
    Constant { value: f64 },
}

impl Default for BetaChoice {
    fn default() -> Self {
        BetaChoice::Default
    }
}

impl BetaChoice {
    pub fn eval(&self, eta: f64, nu: f64) -> f64 {
        let base = (eta + (nu / eta).sqrt()).sqrt();
        match *self {
            BetaChoice::Default => base,
            BetaChoice::Scaled { factor } => factor * base,
            BetaChoice::Constant { value } => value,
        }
    }
}

/// `β(η, ν) = (η + √(ν/η))^{1/2}`.
pub fn beta_default(eta: f64, nu: f64) -> Result<f64> {
    if !(eta.is_finite() && nu.is_finite()) {
        return Err(Error::Validation("β requires finite η and ν".into()));
    }
    if !(nu > 0.0 && nu < eta && eta < 1.0) {
        return Err(Error::Domain(format!("β needs 0 < ν < η < 1, got η = {eta}, ν = {nu}")));
    }
    Ok(BetaChoice::Default.eval(eta, nu))
}

/// `θ = Λ²ε²η / (4‖w⁰‖² + 1)`.
pub fn theta_of(epsilon: f64, eta: f64, lambda: f64, w0_sup_norm: f64) -> f64 {
    lambda * lambda * epsilon * epsilon * eta / (4.0 * w0_sup_norm * w0_sup_norm + 1.0)
}

/// One parameter point together with the derived constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamTriple {
    pub eta: f64,
    pub nu: f64,
    pub delta: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub k0: f64,
    pub delta0: f64,
    pub epsilon: f64,
    pub theta: f64,
    pub beta_value: f64,
}

impl ParamTriple {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        eta: f64,
        nu: f64,
        delta: f64,
        alpha: f64,
        lambda: f64,
        k0: f64,
        delta0: f64,
        epsilon: f64,
    ) -> Self {
        Self {
            eta,
            nu,
            delta,
            alpha,
            lambda,
            k0,
            delta0,
            epsilon,
            theta: f64::NAN,
            beta_value: f64::NAN,
        }
    }

    /// Fill `θ` from `sup_t ‖w⁰‖_{H³}` and `β` from the chosen rule.
    pub fn with_derived(mut self, w0_sup_norm: f64, beta: BetaChoice) -> Self {
        self.theta = theta_of(self.epsilon, self.eta, self.lambda, w0_sup_norm);
        self.beta_value = beta.eval(self.eta, self.nu);
        self
    }

    /// Layer width `√(θν)`.
    pub fn layer_width(&self) -> f64 {
        (self.theta * self.nu).sqrt()
    }

    /// `δ^{α−5/2}`.
    pub fn delta_power(&self) -> f64 {
        self.delta.powf(self.alpha - 2.5)
    }

    /// The error budget `γ = β + δ^{α−5/2}`.
    pub fn budget(&self) -> f64 {
        self.beta_value + self.delta_power()
    }

    fn values(&self) -> [(&'static str, f64); 8] {
        [
            ("η", self.eta),
            ("ν", self.nu),
            ("δ", self.delta),
            ("α", self.alpha),
            ("Λ", self.lambda),
            ("K₀", self.k0),
            ("δ₀", self.delta0),
            ("ε", self.epsilon),
        ]
    }
}

/// Which clause of the admissibility definition failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Clause {
    NuPositive,
    NuBelowEta,
    EtaBelowOne,
    DeltaRange,
    Anisotropy,
    BetaBound,
}

impl Clause {
    pub fn describe(&self) -> &'static str {
        match self {
            Clause::NuPositive => "0 < ν violated",
            Clause::NuBelowEta => "strict ν < η violated",
            Clause::EtaBelowOne => "η < 1 violated",
            Clause::DeltaRange => "δ ∈ (0, δ₀) violated",
            Clause::Anisotropy => "δ^{α−1}η ≤ K₀ν violated",
            Clause::BetaBound => "η + √(ν/η) ≤ β(η,ν)² violated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub admissible: bool,
    pub clause: Option<Clause>,
    pub reason: String,
}

impl Verdict {
    fn fail(clause: Clause, detail: String) -> Self {
        Self {
            admissible: false,
            clause: Some(clause),
            reason: format!("{} ({detail})", clause.describe()),
        }
    }
}

/// Decide membership in `E(K₀, δ₀, β)`.
pub fn is_admissible(p: &ParamTriple, beta: &dyn Fn(f64, f64) -> f64) -> Result<Verdict> {
    for (name, v) in p.values() {
        if !v.is_finite() {
            return Err(Error::Validation(format!("{name} is not finite ({v})")));
        }
    }
    let ParamTriple { eta, nu, delta, alpha, k0, delta0, .. } = *p;
    if nu <= 0.0 {
        return Ok(Verdict::fail(Clause::NuPositive, format!("ν = {nu}")));
    }
    if nu >= eta {
        return Ok(Verdict::fail(Clause::NuBelowEta, format!("ν = {nu}, η = {eta}")));
    }
    if eta >= 1.0 {
        return Ok(Verdict::fail(Clause::EtaBelowOne, format!("η = {eta}")));
    }
    if !(delta > 0.0 && delta < delta0) {
        return Ok(Verdict::fail(Clause::DeltaRange, format!("δ = {delta}, δ₀ = {delta0}")));
    }
    let lhs = delta.powf(alpha - 1.0) * eta;
    if lhs > k0 * nu * (1.0 + CLAUSE_RTOL) {
        return Ok(Verdict::fail(
            Clause::Anisotropy,
            format!("δ^(α−1)η = {lhs:.6e} > K₀ν = {:.6e}", k0 * nu),
        ));
    }
    let b = beta(eta, nu);
    if !(b.is_finite() && b > 0.0) {
        return Err(Error::Validation(format!("β(η,ν) must be positive and finite, got {b}")));
    }
    let need = eta + (nu / eta).sqrt();
    if need > b * b * (1.0 + CLAUSE_RTOL) {
        return Ok(Verdict::fail(
            Clause::BetaBound,
            format!("η + √(ν/η) = {need:.6e} > β² = {:.6e}", b * b),
        ));
    }
    Ok(Verdict {
        admissible: true,
        clause: None,
        reason: "admissible".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple(eta: f64, nu: f64, delta: f64) -> ParamTriple {
        ParamTriple::new(eta, nu, delta, 3.0, 0.5, 1.0, 0.5, 0.1)
    }

    fn beta(e: f64, n: f64) -> f64 {
        BetaChoice::Default.eval(e, n)
    }

    #[test]
    fn equal_viscosities_rejected() {
        let v = is_admissible(&triple(0.01, 0.01, 0.1), &beta).unwrap();
        assert!(!v.admissible);
        assert!(v.reason.starts_with("strict ν < η violated"));
    }

    #[test]
    fn delta_threshold_worked_example() {
        assert!(is_admissible(&triple(1e-2, 1e-3, 0.316), &beta).unwrap().admissible);
        let v = is_admissible(&triple(1e-2, 1e-3, 0.3163), &beta).unwrap();
        assert_eq!(v.clause, Some(Clause::Anisotropy));
        let b = beta_default(1e-2, 1e-3).unwrap();
        assert!((b * b - 0.32623).abs() < 1e-5);
    }

    #[test]
    fn anisotropy_clause_is_non_strict() {
        // δ² η = K₀ ν exactly with δ = 0.5, η = 0.04, ν = 0.01.
        let p = ParamTriple::new(0.04, 0.01, 0.5, 3.0, 0.5, 1.0, 0.9, 0.1);
        assert_eq!(0.5f64.powf(2.0) * 0.04, 0.01);
        assert!(is_admissible(&p, &beta).unwrap().admissible);
    }

    #[test]
    fn beta_values() {
        assert!((beta_default(1e-2, 1e-3).unwrap() - 0.5712).abs() < 1e-4);
        assert!((beta_default(1e-4, 1e-8).unwrap() - 0.1005).abs() < 1e-4);
        assert!(beta_default(0.1, 0.2).is_err());
    }

    #[test]
    fn theta_worked_example() {
        assert!((theta_of(0.1, 0.01, 0.5, 1.0) - 5e-6).abs() < 1e-20);
    }

    #[test]
    fn non_finite_is_validation_error() {
        assert!(is_admissible(&triple(f64::NAN, 0.1, 0.1), &beta).is_err());
    }
}
