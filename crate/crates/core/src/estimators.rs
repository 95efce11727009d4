//! ELBO gradient estimators: SCORE, REPAR and OURS.
//!
//! OURS adds to REPAR a Monte Carlo estimate of the surface integral over one
//! branch hyperplane, chosen uniformly at random and scaled by `L`.
//!
//! Random number consumption is fixed: REPAR and the REPAR part of OURS draw
//! the same `N·n` normals first, so with equal seeds OURS and REPAR coincide
//! exactly on models without branches.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::{CompiledModel, DensityError};
use crate::deriv::{grad_h, grad_log_q, DerivError};
use crate::scalar::Real;
use crate::variational::{sample_eps, VariationalParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Score,
    Repar,
    Ours,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [EstimatorKind::Score, EstimatorKind::Repar, EstimatorKind::Ours];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Score => "score",
            EstimatorKind::Repar => "repar",
            EstimatorKind::Ours => "ours",
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "score" => Ok(EstimatorKind::Score),
            "repar" => Ok(EstimatorKind::Repar),
            "ours" => Ok(EstimatorKind::Ours),
            other => Err(format!("unknown estimator `{other}` (expected score, repar or ours)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Deriv(#[from] DerivError),
    #[error("{kind} estimate is not finite")]
    NonFiniteEstimate { kind: EstimatorKind },
    #[error("sample count must be at least 1")]
    ZeroSamples,
}

/// One gradient estimate with the settings that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct GradEstimate<T> {
    pub g: Vec<T>,
    pub kind: EstimatorKind,
    pub n_samples: usize,
    pub m_samples: usize,
    /// Branch whose boundary was sampled (OURS on models with branches).
    pub l_chosen: Option<usize>,
    /// Boundary samples dropped because the density was zero on one side.
    pub skipped_boundary: usize,
}

/// Boundary-term estimate for a single branch.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryEstimate<T> {
    pub g: Vec<T>,
    pub skipped: usize,
}

fn check_finite<T: Real>(g: &[T], kind: EstimatorKind) -> Result<(), EstimatorError> {
    if g.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(EstimatorError::NonFiniteEstimate { kind })
    }
}

fn scale_in_place<T: Real>(g: &mut [T], k: T) {
    for v in g {
        *v = *v * k;
    }
}

/// `(1/N) Σ (log r(z) − log q_θ(z)) ∇_θ log q_θ(z)` without baseline.
pub fn estimate_score<T: Real, R: Rng + ?Sized>(
    model: &CompiledModel<T>,
    params: &VariationalParams<T>,
    n_samples: usize,
    rng: &mut R,
) -> Result<GradEstimate<T>, EstimatorError> {
    if n_samples == 0 {
        return Err(EstimatorError::ZeroSamples);
    }
    let mut g = vec![T::zero(); params.dim()];
    for _ in 0..n_samples {
        let eps = sample_eps::<T, _>(params.latent_dim(), rng);
        let z = params.transform(&eps);
        let w = model.log_density(&z)? - params.log_q(&z);
        for (acc, d) in g.iter_mut().zip(grad_log_q(params, &z)) {
            *acc = *acc + w * d;
        }
    }
    scale_in_place(&mut g, T::from_usize(n_samples).unwrap().recip());
    check_finite(&g, EstimatorKind::Score)?;
    Ok(GradEstimate {
        g,
        kind: EstimatorKind::Score,
        n_samples,
        m_samples: 0,
        l_chosen: None,
        skipped_boundary: 0,
    })
}

fn repar_sum<T: Real, R: Rng + ?Sized>(
    model: &CompiledModel<T>,
    params: &VariationalParams<T>,
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<T>, EstimatorError> {
    if n_samples == 0 {
        return Err(EstimatorError::ZeroSamples);
    }
    let mut g = vec![T::zero(); params.dim()];
    for _ in 0..n_samples {
        let eps = sample_eps::<T, _>(params.latent_dim(), rng);
        let z = params.transform(&eps);
        if z.iter().any(|v| v.is_nan()) {
            return Err(DensityError::NonFiniteDensityInput.into());
        }
        let sig = model.region_signature(&z);
        for (acc, d) in g.iter_mut().zip(grad_h(model, params, &eps, &sig)?) {
            *acc = *acc + d;
        }
    }
    scale_in_place(&mut g, T::from_usize(n_samples).unwrap().recip());
    Ok(g)
}

/// `(1/N) Σ ∇_θ h_σ(ε, θ)` with σ the region of `f_θ(ε)`: the reparameterization
/// gradient that ignores region changes.
pub fn estimate_repar<T: Real, R: Rng + ?Sized>(
    model: &CompiledModel<T>,
    params: &VariationalParams<T>,
    n_samples: usize,
    rng: &mut R,
) -> Result<GradEstimate<T>, EstimatorError> {
    let g = repar_sum(model, params, n_samples, rng)?;
    check_finite(&g, EstimatorKind::Repar)?;
    Ok(GradEstimate {
        g,
        kind: EstimatorKind::Repar,
        n_samples,
        m_samples: 0,
        l_chosen: None,
        skipped_boundary: 0,
    })
}

/// Surface integral over the hyperplane of branch `l`, estimated with `m`
/// points drawn from the standard normal restricted to the hyperplane in
/// ε-space. A degenerate condition yields the zero vector.
pub fn estimate_boundary<T: Real, R: Rng + ?Sized>(
    model: &CompiledModel<T>,
    params: &VariationalParams<T>,
    l: usize,
    m_samples: usize,
    rng: &mut R,
) -> Result<BoundaryEstimate<T>, EstimatorError> {
    estimate_boundary_with_pivot(model, params, l, m_samples, None, rng)
}

/// [`estimate_boundary`] with an explicit pivot coordinate. `None` picks the
/// largest-magnitude coefficient. A pivot whose coefficient is zero is
/// replaced by the default one.
pub fn estimate_boundary_with_pivot<T: Real, R: Rng + ?Sized>(
    model: &CompiledModel<T>,
    params: &VariationalParams<T>,
    l: usize,
    m_samples: usize,
    pivot: Option<usize>,
    rng: &mut R,
) -> Result<BoundaryEstimate<T>, EstimatorError> {
    if m_samples == 0 {
        return Err(EstimatorError::ZeroSamples);
    }
    let d = params.dim();
    let Ok(plane) = params.hyperplane_in_eps(model.condition(l)) else {
        return Ok(BoundaryEstimate {
            g: vec![T::zero(); d],
            skipped: 0,
        });
    };
    let n = params.latent_dim();
    let j = match pivot {
        Some(j) if plane.a[j] != T::zero() => j,
        _ => plane.pivot(),
    };
    let aj = plane.a[j];
    // sgn(−a_j)·a/a_j = −a/|a_j|
    let normal: Vec<T> = plane.a.iter().map(|v| -*v / aj.abs()).collect();
    let inv_sqrt_tau = T::TAU().sqrt().recip();
    let half = T::lit(0.5);

    let mut g = vec![T::zero(); d];
    let mut skipped = 0;
    let mut eps = vec![T::zero(); n];
    // With n = 1 the hyperplane is a single point and every draw coincides.
    let draws = if n == 1 { 1 } else { m_samples };
    for _ in 0..draws {
        let mut dot = T::zero();
        for (i, (e, a)) in eps.iter_mut().zip(&plane.a).enumerate() {
            if i != j {
                *e = T::std_normal(rng);
                dot = dot + *a * *e;
            }
        }
        eps[j] = (plane.c - dot) / aj;
        let z = params.transform(&eps);
        if z.iter().any(|v| v.is_nan()) {
            return Err(DensityError::NonFiniteDensityInput.into());
        }
        let delta = model.branch_delta(&z, l);
        if !delta.is_finite() {
            skipped += 1;
            continue;
        }
        let weight = (-half * eps[j] * eps[j]).exp() * inv_sqrt_tau * delta;
        for (acc, v) in g.iter_mut().zip(params.v_apply(&eps, &normal)) {
            *acc = *acc + weight * v;
        }
    }
    scale_in_place(&mut g, T::from_usize(draws).unwrap().recip());
    Ok(BoundaryEstimate { g, skipped })
}

/// REPAR with `n_samples` plus `L` times the boundary term of one branch
/// drawn uniformly, estimated with `m_samples` points.
pub fn estimate_ours<T: Real, R: Rng + ?Sized>(
    model: &CompiledModel<T>,
    params: &VariationalParams<T>,
    n_samples: usize,
    m_samples: usize,
    rng: &mut R,
) -> Result<GradEstimate<T>, EstimatorError> {
    let mut g = repar_sum(model, params, n_samples, rng)?;
    let branches = model.branch_count();
    let mut l_chosen = None;
    let mut skipped_boundary = 0;
    if branches > 0 {
        let l = rng.random_range(0..branches);
        let b = estimate_boundary(model, params, l, m_samples, rng)?;
        let scale = T::from_usize(branches).unwrap();
        for (acc, v) in g.iter_mut().zip(&b.g) {
            *acc = *acc + scale * *v;
        }
        l_chosen = Some(l);
        skipped_boundary = b.skipped;
    }
    check_finite(&g, EstimatorKind::Ours)?;
    Ok(GradEstimate {
        g,
        kind: EstimatorKind::Ours,
        n_samples,
        m_samples,
        l_chosen,
        skipped_boundary,
    })
}

/// Dispatches on `kind`; `m_samples` is only used by OURS.
pub fn estimate<T: Real, R: Rng + ?Sized>(
    kind: EstimatorKind,
    model: &CompiledModel<T>,
    params: &VariationalParams<T>,
    n_samples: usize,
    m_samples: usize,
    rng: &mut R,
) -> Result<GradEstimate<T>, EstimatorError> {
    match kind {
        EstimatorKind::Score => estimate_score(model, params, n_samples, rng),
        EstimatorKind::Repar => estimate_repar(model, params, n_samples, rng),
        EstimatorKind::Ours => estimate_ours(model, params, n_samples, m_samples, rng),
    }
}
