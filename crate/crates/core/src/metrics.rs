//! Gradient-variance and ELBO measurements, and the variance-ratio and
//! timing tables built from finished runs.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{CompiledModel, DensityError};
use crate::estimators::EstimatorKind;
use crate::optimize::RunSummary;
use crate::rng::SviRng;
use crate::scalar::Real;
use crate::variational::{sample_eps, VariationalParams};

/// Spread of repeated gradient estimates at a fixed θ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    /// Mean over components of the per-component sample variance.
    pub var_cmp: f64,
    /// Sample variance of the l2 norm.
    pub var_nrm: f64,
    pub samples: usize,
}

fn sample_variance(xs: impl Iterator<Item = f64> + Clone, count: usize) -> f64 {
    let n = count as f64;
    let mean = xs.clone().sum::<f64>() / n;
    xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

/// Unbiased variances of a set of gradient estimates.
///
/// # Panics
/// If fewer than two estimates are given or their lengths differ.
pub fn variance_report<T: Real>(estimates: &[Vec<T>]) -> VarianceReport {
    let s = estimates.len();
    assert!(s >= 2, "variance needs at least two estimates, got {s}");
    let d = estimates[0].len();
    assert!(estimates.iter().all(|g| g.len() == d), "estimates have different lengths");
    let var_cmp = if d == 0 {
        0.0
    } else {
        (0..d)
            .map(|k| sample_variance(estimates.iter().map(move |g| g[k].as_f64()), s))
            .sum::<f64>()
            / d as f64
    };
    let norms: Vec<f64> = estimates
        .iter()
        .map(|g| g.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt())
        .collect();
    VarianceReport {
        var_cmp,
        var_nrm: sample_variance(norms.iter().copied(), s),
        samples: s,
    }
}

/// Invokes `estimator` `samples` times, the `j`-th time on `rng_for(j)`, and
/// reports the variance of the results. With a pool the invocations run
/// concurrently; the result does not depend on scheduling.
///
/// # Panics
/// If `samples < 2`.
pub fn grad_variance<T, E, F, G>(
    samples: usize,
    pool: Option<&rayon::ThreadPool>,
    rng_for: G,
    estimator: F,
) -> Result<VarianceReport, E>
where
    T: Real,
    E: Send,
    F: Fn(&mut SviRng) -> Result<Vec<T>, E> + Sync,
    G: Fn(usize) -> SviRng + Sync,
{
    let run = |j: usize| estimator(&mut rng_for(j));
    let estimates: Vec<Vec<T>> = match pool {
        Some(pool) => pool.install(|| (0..samples).into_par_iter().map(run).collect::<Result<_, E>>())?,
        None => (0..samples).map(run).collect::<Result<_, E>>()?,
    };
    Ok(variance_report(&estimates))
}

/// Monte Carlo ELBO with its standard error.
pub fn estimate_elbo_with_se<T: Real, R: Rng + ?Sized>(
    model: &CompiledModel<T>,
    params: &VariationalParams<T>,
    samples: usize,
    rng: &mut R,
) -> Result<(T, T), DensityError> {
    assert!(samples >= 1, "ELBO needs at least one sample");
    let mut sum = T::zero();
    let mut sum_sq = T::zero();
    for _ in 0..samples {
        let eps = sample_eps::<T, _>(params.latent_dim(), rng);
        let z = params.transform(&eps);
        let w = model.log_density(&z)? - params.log_q(&z);
        sum = sum + w;
        sum_sq = sum_sq + w * w;
    }
    let s = T::from_usize(samples).unwrap();
    let mean = sum / s;
    let se = if samples > 1 {
        let var = (sum_sq - s * mean * mean) / (s - T::one());
        (var.max(T::zero()) / s).sqrt()
    } else {
        T::nan()
    };
    Ok((mean, se))
}

/// `(1/S) Σ log r(z) − log q_θ(z)` with `z ~ q_θ`.
pub fn estimate_elbo<T: Real, R: Rng + ?Sized>(
    model: &CompiledModel<T>,
    params: &VariationalParams<T>,
    samples: usize,
    rng: &mut R,
) -> Result<T, DensityError> {
    estimate_elbo_with_se(model, params, samples, rng).map(|(m, _)| m)
}

/// Trailing moving average over at most `window` points.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        acc += v;
        if i >= window {
            acc -= values[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum TableError {
    #[error("mismatched run configurations: {0}")]
    MismatchedRunConfigs(String),
}

/// One row of the variance-ratio table: each estimator's trajectory-averaged
/// variance divided by SCORE's.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub model: String,
    pub stepsize: f64,
    #[serde(rename = "N")]
    pub n_samples: usize,
    pub variance: String,
    pub score: f64,
    pub repar: Option<f64>,
    pub ours: Option<f64>,
}

/// One row of the timing table: mean milliseconds per iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub model: String,
    #[serde(rename = "N")]
    pub n_samples: usize,
    pub score_ms: Option<f64>,
    pub repar_ms: Option<f64>,
    pub ours_ms: Option<f64>,
    pub ours_over_repar: Option<f64>,
}

type GroupKey = (String, u64, usize);
type Column = fn(&RunSummary) -> Option<f64>;

fn group(runs: &[RunSummary]) -> Result<BTreeMap<GroupKey, BTreeMap<EstimatorKind, &RunSummary>>, TableError> {
    let mut groups: BTreeMap<GroupKey, BTreeMap<EstimatorKind, &RunSummary>> = BTreeMap::new();
    for run in runs {
        let key = (run.model.clone(), run.stepsize.to_bits(), run.n_samples);
        let slot = groups.entry(key).or_default();
        if slot.insert(run.estimator, run).is_some() {
            return Err(TableError::MismatchedRunConfigs(format!(
                "duplicate {} run for model {} (stepsize {}, N {})",
                run.estimator, run.model, run.stepsize, run.n_samples
            )));
        }
    }
    for ((model, step, n), slot) in &groups {
        let iters: Vec<usize> = slot.values().map(|r| r.iterations).collect();
        if iters.windows(2).any(|w| w[0] != w[1]) {
            return Err(TableError::MismatchedRunConfigs(format!(
                "runs for model {model} (stepsize {}, N {n}) have different iteration counts",
                f64::from_bits(*step)
            )));
        }
    }
    Ok(groups)
}

/// Variance ratios against SCORE, grouped by model, stepsize and N. Every
/// group needs a SCORE run with finite, positive variances.
pub fn variance_ratio_table(runs: &[RunSummary]) -> Result<Vec<RatioRow>, TableError> {
    let mut rows = Vec::new();
    for ((model, step, n), slot) in group(runs)? {
        let stepsize = f64::from_bits(step);
        let Some(score) = slot.get(&EstimatorKind::Score) else {
            return Err(TableError::MismatchedRunConfigs(format!(
                "no score run for model {model} (stepsize {stepsize}, N {n})"
            )));
        };
        let pick: [(&str, Column); 2] =
            [("var_cmp", |r| r.mean_var_cmp), ("var_nrm", |r| r.mean_var_nrm)];
        for (name, get) in pick {
            let base = get(score).filter(|b| b.is_finite() && *b > 0.0).ok_or_else(|| {
                TableError::MismatchedRunConfigs(format!("score run for model {model} has no usable {name}"))
            })?;
            let ratio = |k: EstimatorKind| slot.get(&k).and_then(|r| get(r)).map(|v| v / base);
            rows.push(RatioRow {
                model: model.clone(),
                stepsize,
                n_samples: n,
                variance: name.to_string(),
                score: 1.0,
                repar: ratio(EstimatorKind::Repar),
                ours: ratio(EstimatorKind::Ours),
            });
        }
    }
    Ok(rows)
}

/// Mean per-iteration wall time per model and N. Runs at different
/// stepsizes are pooled by taking the mean.
pub fn timing_table(runs: &[RunSummary]) -> Vec<TimingRow> {
    let mut acc: BTreeMap<(String, usize), BTreeMap<EstimatorKind, (f64, usize)>> = BTreeMap::new();
    for r in runs {
        let e = acc
            .entry((r.model.clone(), r.n_samples))
            .or_default()
            .entry(r.estimator)
            .or_insert((0.0, 0));
        e.0 += r.mean_iter_ms;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|((model, n), m)| {
            let get = |k| m.get(&k).map(|(s, c)| s / *c as f64);
            let repar_ms = get(EstimatorKind::Repar);
            let ours_ms = get(EstimatorKind::Ours);
            TimingRow {
                model,
                n_samples: n,
                score_ms: get(EstimatorKind::Score),
                repar_ms,
                ours_ms,
                ours_over_repar: repar_ms.zip(ours_ms).map(|(r, o)| o / r),
            }
        })
        .collect()
}

pub use csv::Error as CsvError;

/// Writes table rows as CSV with a header; `None` cells are left empty.
pub fn write_table<W: std::io::Write, S: Serialize>(writer: W, rows: &[S]) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}
