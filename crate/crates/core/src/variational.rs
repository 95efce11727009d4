//! Mean-field normal variational family `q_θ(z) = Π_i N(z_i | μ_i, exp(s_i)²)`,
//! reparameterized as `z = μ + exp(s) ⊙ ε` with `ε ~ N(0, I)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::BranchCondition;
use crate::scalar::Real;

/// Which coordinates of θ are optimized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// θ = (μ, s), d = 2n.
    #[default]
    MeanField,
    /// θ = μ with the log-scales held fixed, d = n.
    LocationOnly,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::MeanField => "mean-field",
            Family::LocationOnly => "location-only",
        })
    }
}

impl std::str::FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean-field" => Ok(Family::MeanField),
            "location-only" => Ok(Family::LocationOnly),
            other => Err(format!("unknown variational family `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("branch {branch} has an all-zero coefficient vector")]
pub struct DegenerateCondition {
    pub branch: usize,
}

/// Variational parameters θ. The flat layout is `[μ_0..μ_{n-1}, s_0..s_{n-1}]`
/// for the mean-field family and `[μ_0..μ_{n-1}]` for location-only.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalParams<T> {
    pub mu: Vec<T>,
    pub log_sd: Vec<T>,
    pub family: Family,
}

/// The image `{ε | a·ε = c}` of branch `branch`'s hyperplane in ε-space.
/// `A·z + b > 0` holds exactly when `a·ε > c`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsHyperplane<T> {
    pub a: Vec<T>,
    pub c: T,
    pub branch: usize,
}

impl<T: Real> EpsHyperplane<T> {
    /// Index of the largest-magnitude coefficient; ties go to the smallest index.
    pub fn pivot(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.a.iter().enumerate() {
            if v.abs() > self.a[best].abs() {
                best = i;
            }
        }
        best
    }
}

impl<T: Real> VariationalParams<T> {
    /// μ = 0, s = 0.
    pub fn standard(n: usize, family: Family) -> Self {
        Self {
            mu: vec![T::zero(); n],
            log_sd: vec![T::zero(); n],
            family,
        }
    }

    pub fn new(mu: Vec<T>, log_sd: Vec<T>, family: Family) -> Self {
        assert_eq!(mu.len(), log_sd.len(), "μ and s must have the same length");
        Self { mu, log_sd, family }
    }

    pub fn latent_dim(&self) -> usize {
        self.mu.len()
    }

    /// Dimension d of θ.
    pub fn dim(&self) -> usize {
        match self.family {
            Family::MeanField => 2 * self.mu.len(),
            Family::LocationOnly => self.mu.len(),
        }
    }

    #[inline]
    pub fn sd(&self, i: usize) -> T {
        self.log_sd[i].exp()
    }

    pub fn flat(&self) -> Vec<T> {
        match self.family {
            Family::MeanField => self.mu.iter().chain(&self.log_sd).copied().collect(),
            Family::LocationOnly => self.mu.clone(),
        }
    }

    pub fn set_flat(&mut self, theta: &[T]) {
        assert_eq!(theta.len(), self.dim());
        let n = self.latent_dim();
        self.mu.copy_from_slice(&theta[..n]);
        if self.family == Family::MeanField {
            self.log_sd.copy_from_slice(&theta[n..]);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mu.iter().chain(&self.log_sd).all(|v| v.is_finite())
    }

    /// `z = μ + exp(s) ⊙ ε`.
    pub fn transform(&self, eps: &[T]) -> Vec<T> {
        eps.iter()
            .enumerate()
            .map(|(i, e)| self.mu[i] + self.sd(i) * *e)
            .collect()
    }

    /// `ε = (z − μ) ⊙ exp(−s)`.
    pub fn inverse_transform(&self, z: &[T]) -> Vec<T> {
        z.iter()
            .enumerate()
            .map(|(i, v)| (*v - self.mu[i]) * (-self.log_sd[i]).exp())
            .collect()
    }

    /// `log q_θ(z)`.
    pub fn log_q(&self, z: &[T]) -> T {
        let half = T::lit(0.5);
        let norm = half * T::TAU().ln();
        z.iter().enumerate().fold(T::zero(), |acc, (i, v)| {
            let r = (*v - self.mu[i]) * (-self.log_sd[i]).exp();
            acc - half * r * r - self.log_sd[i] - norm
        })
    }

    /// `V(ε, θ)`: the d×n Jacobian of `θ ↦ f_θ⁻¹(z)` at `z = f_θ(ε)`.
    pub fn v_matrix(&self, eps: &[T]) -> Vec<Vec<T>> {
        let n = self.latent_dim();
        let mut v = vec![vec![T::zero(); n]; self.dim()];
        for i in 0..n {
            v[i][i] = -(-self.log_sd[i]).exp();
            if self.family == Family::MeanField {
                v[n + i][i] = -eps[i];
            }
        }
        v
    }

    /// `V(ε, θ) · w` for an n-vector `w`, without forming V.
    pub fn v_apply(&self, eps: &[T], w: &[T]) -> Vec<T> {
        let n = self.latent_dim();
        let mut out = Vec::with_capacity(self.dim());
        out.extend((0..n).map(|i| -(-self.log_sd[i]).exp() * w[i]));
        if self.family == Family::MeanField {
            out.extend((0..n).map(|i| -eps[i] * w[i]));
        }
        out
    }

    /// Transports branch `cond`'s z-space hyperplane into ε-space:
    /// `a = A ⊙ exp(s)`, `c = −(A·μ + b)`.
    pub fn hyperplane_in_eps(&self, cond: &BranchCondition<T>) -> Result<EpsHyperplane<T>, DegenerateCondition> {
        if cond.is_degenerate() {
            return Err(DegenerateCondition { branch: cond.index });
        }
        let a = cond.coeffs.iter().enumerate().map(|(i, c)| *c * self.sd(i)).collect();
        let c = -(cond.phi(&self.mu));
        Ok(EpsHyperplane {
            a,
            c,
            branch: cond.index,
        })
    }
}

/// i.i.d. standard normal vector of length `n`.
pub fn sample_eps<T: Real, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<T> {
    (0..n).map(|_| T::std_normal(rng)).collect()
}
