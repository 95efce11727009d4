//! Adam and the stochastic variational inference loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::density::CompiledModel;
use crate::estimators::{estimate, EstimatorError, EstimatorKind};
use crate::metrics::{estimate_elbo, grad_variance, smooth, VarianceReport};
use crate::rng::{self, substream, SviRng};
use crate::scalar::Real;
use crate::variational::{Family, VariationalParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum OptimizeError {
    #[error("gradient has a non-finite component")]
    NonFiniteGradient,
    #[error("gradient has length {got}, parameters have length {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Adam moment estimates. Steps ascend.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub stepsize: T,
}

impl<T: Real> AdamState<T> {
    pub fn new(dim: usize, stepsize: T, hyper: AdamHyper) -> Self {
        Self {
            m: vec![T::zero(); dim],
            v: vec![T::zero(); dim],
            t: 0,
            beta1: T::lit(hyper.beta1),
            beta2: T::lit(hyper.beta2),
            eps: T::lit(hyper.eps),
            stepsize,
        }
    }

    /// `θ ← θ + α·m̂/(√v̂ + ε)`. Leaves everything untouched on error.
    pub fn step(&mut self, grad: &[T], theta: &mut [T]) -> Result<(), OptimizeError> {
        if grad.len() != theta.len() || grad.len() != self.m.len() {
            return Err(OptimizeError::DimensionMismatch {
                expected: self.m.len(),
                got: grad.len(),
            });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(OptimizeError::NonFiniteGradient);
        }
        self.t += 1;
        let one = T::one();
        let exp = i32::try_from(self.t).unwrap_or(i32::MAX);
        let c1 = one - self.beta1.powi(exp);
        let c2 = one - self.beta2.powi(exp);
        for k in 0..grad.len() {
            let g = grad[k];
            self.m[k] = self.beta1 * self.m[k] + (one - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (one - self.beta2) * g * g;
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            theta[k] = theta[k] + self.stepsize * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub estimator: EstimatorKind,
    #[serde(rename = "N")]
    pub n_samples: usize,
    /// Boundary samples for OURS; `None` means equal to `n_samples`.
    #[serde(rename = "M")]
    pub m_samples: Option<usize>,
    pub iterations: usize,
    pub stepsize: f64,
    pub seed: u64,
    pub eval_interval: usize,
    pub variance_samples: usize,
    pub elbo_samples: usize,
    pub family: Family,
    pub adam: AdamHyper,
    /// Threads used for measurement invocations; 1 runs everything inline.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            estimator: EstimatorKind::Ours,
            n_samples: 1,
            m_samples: None,
            iterations: 10_000,
            stepsize: 0.001,
            seed: 0,
            eval_interval: 100,
            variance_samples: 16,
            elbo_samples: 1000,
            family: Family::MeanField,
            adam: AdamHyper::default(),
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{0} must be at least {1}")]
    TooSmall(&'static str, usize),
    #[error("stepsize must be positive and finite, got {0}")]
    BadStepsize(f64),
    #[error("initial parameters have latent dimension {got}, model has {expected}")]
    InitDimension { expected: usize, got: usize },
}

impl RunConfig {
    pub fn boundary_samples(&self) -> usize {
        self.m_samples.unwrap_or(self.n_samples)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let checks = [
            ("N", self.n_samples, 1),
            ("M", self.boundary_samples(), 1),
            ("eval_interval", self.eval_interval, 1),
            ("variance_samples", self.variance_samples, 2),
            ("elbo_samples", self.elbo_samples, 1),
            ("workers", self.workers, 1),
        ];
        for (name, value, min) in checks {
            if value < min {
                return Err(ConfigError::TooSmall(name, min));
            }
        }
        if !(self.stepsize > 0.0 && self.stepsize.is_finite()) {
            return Err(ConfigError::BadStepsize(self.stepsize));
        }
        Ok(())
    }
}

/// One optimization iteration. Measurement columns are filled every
/// `eval_interval` iterations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub iter: usize,
    /// Cumulative time spent in gradient estimation and Adam steps.
    pub elapsed_ms: f64,
    pub elbo: Option<f64>,
    pub var_cmp: Option<f64>,
    pub var_nrm: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutput<T> {
    pub records: Vec<RunRecord>,
    pub params: VariationalParams<T>,
    /// Boundary samples skipped because one side had zero density.
    pub skipped_boundary: usize,
    pub mean_iter_ms: f64,
}

#[derive(Clone, Debug, thiserror::Error)]
pub enum RunError<T: std::fmt::Debug> {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("run aborted at iteration {iteration}: {reason}")]
    Aborted {
        iteration: usize,
        reason: String,
        last_good: VariationalParams<T>,
        records: Vec<RunRecord>,
    },
}

/// Measures ELBO and gradient variance at `params` on streams reserved for
/// iteration `iter`.
fn measure<T: Real>(
    model: &CompiledModel<T>,
    params: &VariationalParams<T>,
    cfg: &RunConfig,
    iter: usize,
    pool: Option<&rayon::ThreadPool>,
) -> Result<(f64, VarianceReport), EstimatorError> {
    let elbo = estimate_elbo(model, params, cfg.elbo_samples, &mut substream(cfg.seed, rng::elbo_stream(iter)))?;
    let report = grad_variance(
        cfg.variance_samples,
        pool,
        |j| substream(cfg.seed, rng::variance_stream(iter, j)),
        |r: &mut SviRng| {
            estimate(cfg.estimator, model, params, cfg.n_samples, cfg.boundary_samples(), r).map(|e| e.g)
        },
    )?;
    Ok((elbo.as_f64(), report))
}

/// Runs Adam on the ELBO for `cfg.iterations` steps from `init` (μ = 0,
/// s = 0 when `None`). Deterministic in everything but timings.
pub fn run_svi<T: Real>(
    model: &CompiledModel<T>,
    cfg: &RunConfig,
    init: Option<VariationalParams<T>>,
) -> Result<RunOutput<T>, RunError<T>> {
    cfg.validate()?;
    let mut params = init.unwrap_or_else(|| VariationalParams::standard(model.dim(), cfg.family));
    if params.latent_dim() != model.dim() {
        return Err(ConfigError::InitDimension {
            expected: model.dim(),
            got: params.latent_dim(),
        }
        .into());
    }
    params.family = cfg.family;
    let pool = if cfg.workers > 1 {
        rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build().ok()
    } else {
        None
    };

    let mut opt_rng = substream(cfg.seed, rng::OPTIMIZATION_STREAM);
    let mut adam = AdamState::new(params.dim(), T::lit(cfg.stepsize), cfg.adam);
    let mut theta = params.flat();
    let mut records = Vec::with_capacity(cfg.iterations);
    let mut elapsed = std::time::Duration::ZERO;
    let mut skipped_boundary = 0;

    for iter in 1..=cfg.iterations {
        let abort = |reason: String, last_good: &VariationalParams<T>, records: Vec<RunRecord>| RunError::Aborted {
            iteration: iter,
            reason,
            last_good: last_good.clone(),
            records,
        };
        let start = Instant::now();
        let est = match estimate(
            cfg.estimator,
            model,
            &params,
            cfg.n_samples,
            cfg.boundary_samples(),
            &mut opt_rng,
        ) {
            Ok(e) => e,
            Err(e) => return Err(abort(e.to_string(), &params, records)),
        };
        if let Err(e) = adam.step(&est.g, &mut theta) {
            return Err(abort(e.to_string(), &params, records));
        }
        elapsed += start.elapsed();
        skipped_boundary += est.skipped_boundary;

        let previous = params.clone();
        params.set_flat(&theta);
        if !params.is_finite() {
            return Err(abort("variational parameters became non-finite".into(), &previous, records));
        }

        let mut record = RunRecord {
            iter,
            elapsed_ms: elapsed.as_secs_f64() * 1e3,
            elbo: None,
            var_cmp: None,
            var_nrm: None,
        };
        if iter % cfg.eval_interval == 0 {
            match measure(model, &params, cfg, iter, pool.as_ref()) {
                Ok((elbo, report)) => {
                    record.elbo = Some(elbo);
                    record.var_cmp = Some(report.var_cmp);
                    record.var_nrm = Some(report.var_nrm);
                }
                Err(e) => return Err(abort(format!("measurement failed: {e}"), &params, records)),
            }
        }
        records.push(record);
    }

    let mean_iter_ms = if cfg.iterations == 0 {
        0.0
    } else {
        elapsed.as_secs_f64() * 1e3 / cfg.iterations as f64
    };
    Ok(RunOutput {
        records,
        params,
        skipped_boundary,
        mean_iter_ms,
    })
}

/// FNV-1a over the bit patterns of the flattened parameters.
pub fn theta_hash<T: Real>(params: &VariationalParams<T>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in params.mu.iter().chain(&params.log_sd) {
        for byte in v.as_f64().to_bits().to_le_bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

#[derive(Serialize)]
struct TrajectoryRow<'a> {
    iter: usize,
    elapsed_ms: f64,
    elbo: Option<f64>,
    var_cmp: Option<f64>,
    var_nrm: Option<f64>,
    estimator: &'a str,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "M")]
    m: usize,
    seed: u64,
}

/// Writes `records` as CSV with header
/// `iter,elapsed_ms,elbo,var_cmp,var_nrm,estimator,N,M,seed`. Measurement
/// cells are empty on iterations without an evaluation.
pub fn write_trajectory<W: std::io::Write>(writer: W, records: &[RunRecord], cfg: &RunConfig) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in records {
        wtr.serialize(TrajectoryRow {
            iter: r.iter,
            elapsed_ms: r.elapsed_ms,
            elbo: r.elbo,
            var_cmp: r.var_cmp,
            var_nrm: r.var_nrm,
            estimator: cfg.estimator.name(),
            n: cfg.n_samples,
            m: cfg.boundary_samples(),
            seed: cfg.seed,
        })?;
    }
    if records.is_empty() {
        wtr.write_record(["iter", "elapsed_ms", "elbo", "var_cmp", "var_nrm", "estimator", "N", "M", "seed"])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Number of evaluation points averaged by [`final_smoothed_elbo`].
pub const SMOOTHING_WINDOW: usize = 50;

/// Last value of the trailing moving average of the recorded ELBOs.
pub fn final_smoothed_elbo(records: &[RunRecord], window: usize) -> Option<f64> {
    let elbos: Vec<f64> = records.iter().filter_map(|r| r.elbo).collect();
    smooth(&elbos, window).last().copied()
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Everything `summary.json` records about one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub model: String,
    pub estimator: EstimatorKind,
    #[serde(rename = "N")]
    pub n_samples: usize,
    #[serde(rename = "M")]
    pub m_samples: usize,
    pub stepsize: f64,
    pub iterations: usize,
    pub seed: u64,
    pub family: Family,
    pub eval_interval: usize,
    pub variance_samples: usize,
    pub elbo_samples: usize,
    pub latent_dim: usize,
    pub branch_count: usize,
    /// Factor applied to the single subsampled boundary term.
    pub boundary_scaling: String,
    pub status: String,
    pub abort_reason: Option<String>,
    pub completed_iterations: usize,
    pub final_mu: Vec<f64>,
    pub final_log_sd: Vec<f64>,
    pub theta_hash: String,
    pub final_elbo: Option<f64>,
    pub final_smoothed_elbo: Option<f64>,
    /// Mean over evaluation points of Var_cmp.
    pub mean_var_cmp: Option<f64>,
    pub mean_var_nrm: Option<f64>,
    pub mean_iter_ms: f64,
    pub skipped_boundary: usize,
}

impl RunSummary {
    /// Summary of a finished or aborted run. Configuration errors have no
    /// summary.
    pub fn from_result<T: Real>(
        model_name: &str,
        model: &CompiledModel<T>,
        cfg: &RunConfig,
        result: &Result<RunOutput<T>, RunError<T>>,
    ) -> Option<Self> {
        let (records, params, mean_iter_ms, skipped_boundary, abort_reason) = match result {
            Ok(out) => (&out.records, &out.params, out.mean_iter_ms, out.skipped_boundary, None),
            Err(RunError::Aborted {
                reason,
                last_good,
                records,
                ..
            }) => {
                let ms = records
                    .last()
                    .map_or(0.0, |r| r.elapsed_ms / records.len() as f64);
                (records, last_good, ms, 0, Some(reason.clone()))
            }
            Err(RunError::Config(_)) => return None,
        };
        Some(RunSummary {
            model: model_name.to_string(),
            estimator: cfg.estimator,
            n_samples: cfg.n_samples,
            m_samples: cfg.boundary_samples(),
            stepsize: cfg.stepsize,
            iterations: cfg.iterations,
            seed: cfg.seed,
            family: cfg.family,
            eval_interval: cfg.eval_interval,
            variance_samples: cfg.variance_samples,
            elbo_samples: cfg.elbo_samples,
            latent_dim: model.dim(),
            branch_count: model.branch_count(),
            boundary_scaling: "L".to_string(),
            status: if abort_reason.is_some() { "aborted" } else { "ok" }.to_string(),
            abort_reason,
            completed_iterations: records.len(),
            final_mu: params.mu.iter().map(|v| v.as_f64()).collect(),
            final_log_sd: params.log_sd.iter().map(|v| v.as_f64()).collect(),
            theta_hash: format!("{:016x}", theta_hash(params)),
            final_elbo: records.iter().rev().find_map(|r| r.elbo),
            final_smoothed_elbo: final_smoothed_elbo(records, SMOOTHING_WINDOW),
            mean_var_cmp: mean_of(records.iter().filter_map(|r| r.var_cmp)),
            mean_var_nrm: mean_of(records.iter().filter_map(|r| r.var_nrm)),
            mean_iter_ms,
            skipped_boundary,
        })
    }
}
