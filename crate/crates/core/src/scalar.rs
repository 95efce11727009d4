//! Scalar abstractions.
//!
//! [`Real`] is the floating-point type every public structure is generic over
//! (`f32` or `f64`). [`Value`] is what the compiled density evaluator computes
//! with: either a plain `Real` or a forward-mode [`Dual`](crate::deriv::Dual)
//! carrying tangents.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floating-point base type for models, parameters and estimates.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    /// One draw from N(0, 1).
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Natural log of the gamma function, used for Poisson normalizers.
    fn ln_gamma(self) -> Self;

    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in target float type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f64 {
    #[inline]
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn ln_gamma(self) -> Self {
        libm::lgamma(self)
    }
}

impl Real for f32 {
    #[inline]
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn ln_gamma(self) -> Self {
        libm::lgammaf(self)
    }
}

/// Arithmetic the density evaluator needs.
///
/// Methods take references so that tangent-carrying values are not cloned on
/// every operation.
pub trait Value<T: Real>: Clone + Debug {
    fn constant(c: T) -> Self;
    fn value(&self) -> T;

    fn add(&self, rhs: &Self) -> Self;
    fn sub(&self, rhs: &Self) -> Self;
    fn mul(&self, rhs: &Self) -> Self;
    fn div(&self, rhs: &Self) -> Self;
    fn neg(&self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;

    fn add_const(&self, c: T) -> Self {
        self.add(&Self::constant(c))
    }
}

impl<T: Real> Value<T> for T {
    #[inline]
    fn constant(c: T) -> Self {
        c
    }
    #[inline]
    fn value(&self) -> T {
        *self
    }
    #[inline]
    fn add(&self, rhs: &Self) -> Self {
        *self + *rhs
    }
    #[inline]
    fn sub(&self, rhs: &Self) -> Self {
        *self - *rhs
    }
    #[inline]
    fn mul(&self, rhs: &Self) -> Self {
        *self * *rhs
    }
    #[inline]
    fn div(&self, rhs: &Self) -> Self {
        *self / *rhs
    }
    #[inline]
    fn neg(&self) -> Self {
        -*self
    }
    #[inline]
    fn exp(&self) -> Self {
        Float::exp(*self)
    }
    #[inline]
    fn ln(&self) -> Self {
        Float::ln(*self)
    }
    #[inline]
    fn add_const(&self, c: T) -> Self {
        *self + c
    }
}

/// log N(x | mean, sd²). Returns −∞ (with zero tangent) when `sd` is not
/// strictly positive.
pub fn normal_log_pdf<T: Real, V: Value<T>>(x: &V, mean: &V, sd: &V) -> V {
    let s = sd.value();
    // also catches a NaN scale
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(s > T::zero()) {
        return V::constant(T::neg_infinity());
    }
    let half = T::lit(0.5);
    let r = x.sub(mean).div(sd);
    let quad = r.mul(&r).mul(&V::constant(half));
    quad.neg()
        .sub(&sd.ln())
        .add_const(-half * T::TAU().ln())
}

/// log Poisson(k | rate) for a fixed non-negative integer count `k`.
/// `log_k_factorial` is lnΓ(k + 1), precomputed by the caller.
pub fn poisson_log_pmf<T: Real, V: Value<T>>(k: T, log_k_factorial: T, rate: &V) -> V {
    let r = rate.value();
    if r.is_nan() || r < T::zero() {
        return V::constant(T::neg_infinity());
    }
    if r == T::zero() {
        let v = if k == T::zero() { T::zero() } else { T::neg_infinity() };
        return V::constant(v);
    }
    let k_log_rate = if k == T::zero() {
        V::constant(T::zero())
    } else {
        rate.ln().mul(&V::constant(k))
    };
    k_log_rate.sub(rate).add_const(-log_k_factorial)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_log_pdf_standard_mode() {
        let v: f64 = normal_log_pdf(&0.0, &0.0, &1.0);
        assert!((v + 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn normal_log_pdf_nonpositive_sd_is_neg_inf() {
        let v: f64 = normal_log_pdf(&0.0, &0.0, &0.0);
        assert_eq!(v, f64::NEG_INFINITY);
        let v: f64 = normal_log_pdf(&0.0, &0.0, &-1.0);
        assert_eq!(v, f64::NEG_INFINITY);
    }

    #[test]
    fn poisson_matches_direct_formula() {
        let k = 7.0_f64;
        let rate = 3.5_f64;
        let lf = Real::ln_gamma(k + 1.0);
        let direct = k * rate.ln() - rate - (1..=7).map(|i| (i as f64).ln()).sum::<f64>();
        let v: f64 = poisson_log_pmf(k, lf, &rate);
        assert!((v - direct).abs() < 1e-10);
    }

    #[test]
    fn poisson_zero_rate_edge_cases() {
        let v: f64 = poisson_log_pmf(0.0, 0.0, &0.0);
        assert_eq!(v, 0.0);
        let v: f64 = poisson_log_pmf(2.0, 2.0f64.ln(), &0.0);
        assert_eq!(v, f64::NEG_INFINITY);
    }

    #[test]
    fn f32_path_compiles_and_agrees() {
        let v32: f32 = normal_log_pdf(&1.0f32, &0.0, &1.0);
        let v64: f64 = normal_log_pdf(&1.0f64, &0.0, &1.0);
        assert!((v32 as f64 - v64).abs() < 1e-6);
    }
}
