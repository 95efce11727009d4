//! Reference values computed independently of the library: closed forms for
//! the one-latent jump model, root finding, and Gauss–Legendre quadrature of
//! hyperplane integrals.

#![allow(dead_code)]

use std::f64::consts::PI;

use nondiff_svi::{compile_program, DataTable, Model, SourceProgram};

/// `z ~ N(0,1)`, then `N(0 | 5, 1)` for `z > 0` and `N(0 | −2, 1)` otherwise.
pub const JUMP_MODEL: &str = "z ~ sample normal(0, 1);
if (z > 0) { observe normal(5, 1) = 0; } else { observe normal(-2, 1) = 0; }";

pub fn model(src: &str) -> Model {
    compile_program(&SourceProgram::inline(src), &DataTable::new()).expect("test model compiles")
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / 2f64.sqrt()))
}

pub fn log_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let r = (x - mean) / sd;
    -0.5 * r * r - sd.ln() - 0.5 * (2.0 * PI).ln()
}

/// log c₁ and log c₂: the likelihood constants on the two sides of the jump.
pub fn jump_constants() -> (f64, f64) {
    (log_normal_pdf(0.0, 5.0, 1.0), log_normal_pdf(0.0, -2.0, 1.0))
}

/// ELBO of the jump model for `q = N(θ, 1)`:
/// `−θ²/2 + Φ(θ)·log c₁ + (1 − Φ(θ))·log c₂`.
pub fn jump_elbo(theta: f64) -> f64 {
    let (c1, c2) = jump_constants();
    let p = std_normal_cdf(theta);
    -0.5 * theta * theta + p * c1 + (1.0 - p) * c2
}

/// Smooth part of the gradient: `−θ`.
pub fn jump_repar_mean(theta: f64) -> f64 {
    -theta
}

/// Boundary part of the gradient: `log(c₁/c₂)·φ(θ)`.
pub fn jump_correction(theta: f64) -> f64 {
    let (c1, c2) = jump_constants();
    (c1 - c2) * std_normal_pdf(theta)
}

pub fn jump_grad(theta: f64) -> f64 {
    jump_repar_mean(theta) + jump_correction(theta)
}

/// Root of `f` in `[lo, hi]` by bisection; `f(lo)` and `f(hi)` must differ in sign.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    assert!(flo * f(hi) < 0.0, "root not bracketed");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Stationary point of the jump model's true ELBO.
pub fn jump_stationary_point() -> f64 {
    bisect(jump_grad, -5.0, 0.0)
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// `∫_{−t}^{t} f` by composite Gauss–Legendre with `panels` panels.
pub fn integrate(f: impl Fn(f64) -> f64, t: f64, panels: usize, rule: &[(f64, f64)]) -> f64 {
    let h = 2.0 * t / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = -t + (p as f64 + 0.5) * h;
        for (x, w) in rule {
            total += w * 0.5 * h * f(mid + 0.5 * h * x);
        }
    }
    total
}

/// A mean-field Gaussian in plain vectors, so that oracles do not touch the
/// library's variational code.
#[derive(Clone, Debug)]
pub struct Gaussian {
    pub mu: Vec<f64>,
    pub log_sd: Vec<f64>,
}

impl Gaussian {
    pub fn z(&self, eps: &[f64]) -> Vec<f64> {
        eps.iter().enumerate().map(|(i, e)| self.mu[i] + self.log_sd[i].exp() * e).collect()
    }

    /// `V(ε)·w` with rows `[μ_0.., s_0..]`.
    pub fn v_dot(&self, eps: &[f64], w: &[f64]) -> Vec<f64> {
        let n = eps.len();
        let mut out: Vec<f64> = (0..n).map(|i| -(-self.log_sd[i]).exp() * w[i]).collect();
        out.extend((0..n).map(|i| -eps[i] * w[i]));
        out
    }

    /// Hyperplane `A·z + b = 0` as `a·ε = c`.
    pub fn plane(&self, coeffs: &[f64], offset: f64) -> (Vec<f64>, f64) {
        let a = coeffs.iter().enumerate().map(|(i, c)| c * self.log_sd[i].exp()).collect();
        let c = -(coeffs.iter().zip(&self.mu).map(|(x, m)| x * m).sum::<f64>() + offset);
        (a, c)
    }
}

/// Surface integral `∫_{a·ε=c} N(ε|0,I) Δh(z(ε)) V(ε)·ν dS` for n = 2, where ν
/// is the unit normal pointing out of `{a·ε > c}`. The line is parametrized
/// by arc length and integrated with Gauss–Legendre.
pub fn line_integral_2d(q: &Gaussian, coeffs: &[f64], offset: f64, delta_h: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let (a, c) = q.plane(coeffs, offset);
    let norm = (a[0] * a[0] + a[1] * a[1]).sqrt();
    let nu = [-a[0] / norm, -a[1] / norm];
    let p0 = [c * a[0] / (norm * norm), c * a[1] / (norm * norm)];
    let u = [-a[1] / norm, a[0] / norm];
    let base = std_normal_pdf(p0[0]) * std_normal_pdf(p0[1]) * (2.0 * PI).sqrt();
    let rule = gauss_legendre(20);
    (0..4)
        .map(|k| {
            integrate(
                |t| {
                    let eps = [p0[0] + t * u[0], p0[1] + t * u[1]];
                    base * std_normal_pdf(t) * delta_h(&q.z(&eps)) * q.v_dot(&eps, &nu)[k]
                },
                10.0,
                40,
                &rule,
            )
        })
        .collect()
}

/// The same surface integral for n = 3 over an orthonormal parametrization of
/// the plane, by tensor-product Gauss–Legendre.
pub fn plane_integral_3d(q: &Gaussian, coeffs: &[f64], offset: f64, delta_h: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let (a, c) = q.plane(coeffs, offset);
    let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nu: Vec<f64> = a.iter().map(|v| -v / norm).collect();
    let p0: Vec<f64> = a.iter().map(|v| c * v / (norm * norm)).collect();
    // two unit vectors orthogonal to a and each other
    let pick = if a[0].abs() < 0.9 * norm { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let n_hat: Vec<f64> = a.iter().map(|v| v / norm).collect();
    let proj = dot(&pick, &n_hat);
    let mut u: Vec<f64> = (0..3).map(|i| pick[i] - proj * n_hat[i]).collect();
    let un = dot(&u, &u).sqrt();
    u.iter_mut().for_each(|v| *v /= un);
    let w = [
        n_hat[1] * u[2] - n_hat[2] * u[1],
        n_hat[2] * u[0] - n_hat[0] * u[2],
        n_hat[0] * u[1] - n_hat[1] * u[0],
    ];
    let base = p0.iter().map(|v| std_normal_pdf(*v)).product::<f64>() * 2.0 * PI;
    let rule = gauss_legendre(20);
    (0..6)
        .map(|k| {
            integrate(
                |s| {
                    integrate(
                        |t| {
                            let eps: Vec<f64> = (0..3).map(|i| p0[i] + s * u[i] + t * w[i]).collect();
                            base * std_normal_pdf(s) * std_normal_pdf(t) * delta_h(&q.z(&eps)) * q.v_dot(&eps, &nu)[k]
                        },
                        9.0,
                        12,
                        &rule,
                    )
                },
                9.0,
                12,
                &rule,
            )
        })
        .collect()
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

