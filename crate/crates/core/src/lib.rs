//! Bayesian mixture-strategy transfer learning.
//!
//! The crate covers exact Bernoulli mixtures, a grid-posterior engine for the
//! mixture strategy with and without a source domain, the particle
//! approximation EMPU, a HomOTL-I baseline, Dirichlet-process transfer,
//! asymptotic regret calculators and a seeded Monte Carlo harness.
//! All regrets are in nats.

pub mod baselines;
pub mod bernoulli;
pub mod bounds;
pub mod dpm;
pub mod empu;
pub mod error;
pub mod family;
pub mod grid;
pub mod harness;
pub mod loss;
pub mod numeric;
pub mod prior;
pub mod quadrature;
pub mod rng;
pub mod scenario;
pub mod selftest;

pub use error::{Error, Result};
pub use family::{FamilyKind, FamilySpec, Observation, ParamBox, ParamPoint};
pub use loss::{LossKind, LossSpec};
pub use prior::{Conditional, Marginal, PriorSpec};
pub use scenario::{RegretCurve, Scenario, SourceSpec};
