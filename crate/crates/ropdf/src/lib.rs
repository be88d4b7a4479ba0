//! Uncertainty propagation for stochastic multimachine power-grid models.
//!
//! The crate simulates the correlated Ornstein–Uhlenbeck-driven swing
//! equations over Monte Carlo ensembles and, in parallel, solves data-driven
//! reduced-order PDF (RO-PDF) transport equations for transmission-line
//! energy quantities of interest. On top of those two routes it provides
//! failure-probability estimates (marginal, joint, and under an independence
//! assumption), kernel density benchmarks, space-time `L1` errors,
//! sample-complexity curves, and mutual-information diagnostics.
//!
//! Modules map onto the stages of the method:
//!
//! * [`case`] — reduced network description, case-bundle parsing, line removal
//! * [`sim`] — correlated-OU swing-equation SDE ensembles
//! * [`qoi`] — line-energy quantities of interest and their Itô responses
//! * [`closure`] — regression estimates of the conditional-expectation
//!   coefficients that close the RO-PDF equations
//! * [`grid`] — phase-space finite-volume grids
//! * [`solver`] — 1D/2D flux-limited finite-volume RO-PDF solvers
//! * [`metrics`] — KDE, exceedance probabilities, `L1` error, mutual
//!   information, sample complexity
//! * [`record`] — trajectory and density file formats
//! * [`config`] / [`pipeline`] — experiment configuration and end-to-end runs

pub mod case;
pub mod closure;
pub mod config;
pub mod grid;
pub mod metrics;
pub mod pipeline;
pub mod qoi;
pub mod record;
pub mod sim;
pub mod solver;

pub use case::{parse_case_bundle, CaseError, EquilibriumPoint, LineId, PowerCase};
pub use sim::{build_noise, EnsembleState, NoiseModel, ScenarioConfig, TrajectoryRecord};
