//! Numerical laboratory for the inviscid limit of anisotropic Navier–Stokes
//! flow over an oscillatory wall.
//!
//! The pipeline is: flatten the wavy domain `x₃ > δ^α g(x′/δ)` onto the
//! half-space, integrate the transformed system `∂ₜu − div[A∇u] + [(Bu)·∇]u
//! + B*∇p = F`, `div(Bu) = 0`, subtract explicit correctors `w` and the
//! boundary layer `𝓑`, and audit the energy of the remainder
//! `v = u − w − 𝓑` term by term.
//!
//! Module map:
//! - [`geometry`]: boundary profiles, flattening maps, the matrices `B`, `B_g`.
//! - [`params`]: admissible parameter set, default `β`, the constant `θ`.
//! - [`profiles`]: the layer profiles `φ`, `ψ` and their scaled norms.
//! - [`fields`]: grid, fields, spectral/finite-difference operators, norms and
//!   projections.
//! - [`flow`]: manufactured Euler flows and the correctors `w̃`, `w`.
//! - [`boundary_layer`]: the corrector `𝓑` and its scaling report.
//! - [`solver`]: viscosity models and the IMEX time integrator.
//! - [`audit`]: energy ledger, term-bound ratios, Grönwall envelope, rate metrics.
//! - [`harness`]: configuration and the `check`/`run`/`sweep`/`report` drivers.

pub mod audit;
pub mod boundary_layer;
pub mod error;
pub mod fields;
pub mod flow;
pub mod geometry;
pub mod harness;
pub mod params;
pub mod profiles;
pub mod quad;
pub mod sep;
pub mod solver;

pub use error::{Error, Result};
