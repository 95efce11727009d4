//! Stochastic variational inference for models with piecewise-smooth
//! densities.
//!
//! Programs in a small probabilistic language are compiled into densities
//! whose regions are cut out by affine branch conditions. The ELBO gradient is
//! estimated by one of three estimators: SCORE, REPAR (reparameterization,
//! biased when the density jumps), and OURS, which adds a Monte Carlo estimate
//! of the surface integrals over branch boundaries and is unbiased.
//!
//! Everything numeric is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix `f64`.

pub mod benchmarks;
pub mod density;
pub mod deriv;
pub mod estimators;
pub mod frontend;
pub mod metrics;
pub mod optimize;
pub mod rng;
pub mod scalar;
pub mod variational;

pub use benchmarks::{compile_program, Benchmark, BuildError};
pub use density::{DataTable, RegionSignature, Side};
pub use estimators::EstimatorKind;
pub use frontend::SourceProgram;
pub use optimize::{run_svi, RunConfig, RunRecord, RunSummary};
pub use variational::Family;

pub type Model = density::CompiledModel<f64>;
pub type Params = variational::VariationalParams<f64>;
pub type Estimate = estimators::GradEstimate<f64>;
pub type Condition = density::BranchCondition<f64>;
pub type Dual = deriv::Dual<f64>;
