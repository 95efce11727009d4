//! Forward-mode differentiation of `h(ε, θ) = log r_σ(f_θ(ε)) − log q_θ(f_θ(ε))`
//! with the region σ held fixed.
//!
//! The compiled density is evaluated on [`Dual`] numbers seeded with one
//! tangent direction per latent coordinate, giving `∇_z log r_σ(z)`. The chain
//! rule through `z = μ + exp(s) ⊙ ε` is applied in closed form.

use crate::density::{CompiledModel, RegionSignature};
use crate::scalar::{Real, Value};
use crate::variational::{Family, VariationalParams};

/// A value with a tangent vector. An empty tangent stands for zero, so
/// constants never allocate.
#[derive(Clone, Debug, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: Vec<T>,
}

impl<T: Real> Dual<T> {
    /// The `i`-th of `n` seeded input variables.
    pub fn var(re: T, i: usize, n: usize) -> Self {
        let mut eps = vec![T::zero(); n];
        eps[i] = T::one();
        Dual { re, eps }
    }

    /// Tangent of length `n`, zero-padded when the value is a constant.
    pub fn tangent(&self, n: usize) -> Vec<T> {
        if self.eps.is_empty() {
            vec![T::zero(); n]
        } else {
            self.eps.clone()
        }
    }

    fn scaled(&self, re: T, k: T) -> Self {
        Dual {
            re,
            eps: self.eps.iter().map(|d| *d * k).collect(),
        }
    }
}

/// `α·x + β·y` on tangents, treating empty as zero.
fn combine<T: Real>(x: &[T], alpha: T, y: &[T], beta: T) -> Vec<T> {
    match (x.is_empty(), y.is_empty()) {
        (true, true) => Vec::new(),
        (false, true) => x.iter().map(|a| *a * alpha).collect(),
        (true, false) => y.iter().map(|b| *b * beta).collect(),
        (false, false) => x.iter().zip(y).map(|(a, b)| *a * alpha + *b * beta).collect(),
    }
}

impl<T: Real> Value<T> for Dual<T> {
    fn constant(c: T) -> Self {
        Dual { re: c, eps: Vec::new() }
    }

    fn value(&self) -> T {
        self.re
    }

    fn add(&self, rhs: &Self) -> Self {
        let eps = match (self.eps.is_empty(), rhs.eps.is_empty()) {
            (_, true) => self.eps.clone(),
            (true, false) => rhs.eps.clone(),
            _ => self.eps.iter().zip(&rhs.eps).map(|(a, b)| *a + *b).collect(),
        };
        Dual { re: self.re + rhs.re, eps }
    }

    fn sub(&self, rhs: &Self) -> Self {
        Dual {
            re: self.re - rhs.re,
            eps: combine(&self.eps, T::one(), &rhs.eps, -T::one()),
        }
    }

    fn mul(&self, rhs: &Self) -> Self {
        Dual {
            re: self.re * rhs.re,
            eps: combine(&self.eps, rhs.re, &rhs.eps, self.re),
        }
    }

    fn div(&self, rhs: &Self) -> Self {
        let inv = rhs.re.recip();
        let q = self.re * inv;
        Dual {
            re: q,
            eps: combine(&self.eps, inv, &rhs.eps, -q * inv),
        }
    }

    fn neg(&self) -> Self {
        self.scaled(-self.re, -T::one())
    }

    fn exp(&self) -> Self {
        let e = self.re.exp();
        self.scaled(e, e)
    }

    fn ln(&self) -> Self {
        self.scaled(self.re.ln(), self.re.recip())
    }

    fn add_const(&self, c: T) -> Self {
        Dual {
            re: self.re + c,
            eps: self.eps.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum DerivError {
    #[error("gradient of h is not finite (log r_σ = {value})")]
    NonFiniteGradient { value: f64 },
}

/// `∇_z log r_σ(z)` together with `log r_σ(z)`.
pub fn grad_log_r<T: Real>(model: &CompiledModel<T>, z: &[T], sig: &RegionSignature) -> (T, Vec<T>) {
    let n = z.len();
    let zd: Vec<Dual<T>> = z.iter().enumerate().map(|(i, v)| Dual::var(*v, i, n)).collect();
    let out = model.eval_value(&zd, sig);
    (out.re, out.tangent(n))
}

/// `∇_θ h(ε, θ)` for the region function `r_σ`.
pub fn grad_h<T: Real>(
    model: &CompiledModel<T>,
    params: &VariationalParams<T>,
    eps: &[T],
    sig: &RegionSignature,
) -> Result<Vec<T>, DerivError> {
    let z = params.transform(eps);
    let (value, gz) = grad_log_r(model, &z, sig);
    if !value.is_finite() || gz.iter().any(|g| !g.is_finite()) {
        return Err(DerivError::NonFiniteGradient { value: value.as_f64() });
    }
    // log q(f_θ(ε)) = Σ log N(ε_i) − s_i depends on θ only through −Σ s_i.
    let mut g = gz.clone();
    if params.family == Family::MeanField {
        g.extend(gz.iter().enumerate().map(|(i, d)| *d * params.sd(i) * eps[i] + T::one()));
    }
    Ok(g)
}

/// `∇_θ log q_θ(z)` at fixed `z`.
pub fn grad_log_q<T: Real>(params: &VariationalParams<T>, z: &[T]) -> Vec<T> {
    let n = params.latent_dim();
    let inv_var: Vec<T> = (0..n).map(|i| (-(params.log_sd[i] + params.log_sd[i])).exp()).collect();
    let mut g: Vec<T> = (0..n).map(|i| (z[i] - params.mu[i]) * inv_var[i]).collect();
    if params.family == Family::MeanField {
        g.extend((0..n).map(|i| {
            let r = z[i] - params.mu[i];
            r * r * inv_var[i] - T::one()
        }));
    }
    g
}
