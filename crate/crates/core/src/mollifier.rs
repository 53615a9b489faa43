//! Gaussian mollifiers corrected by even derivatives.
//!
//! `rho_sigma = sum_{n=0}^{m} (-1)^n sigma^{2n} / (2^n n!) G_sigma^{(2n)}`.
//! Since `G^{(2n)}(x) = H_{2n}(u) G(x) / (2 sigma^2)^n` with `u = x/(sqrt2 sigma)`,
//! the kernel is `G(x) sum_n (-1)^n H_{2n}(u) / (4^n n!)`. For `m = 1` this is
//! `G(x) (3/2 - x^2 / (2 sigma^2))`.

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::quadrature::integrate;

/// Physicists' Hermite polynomial by the three-term recurrence.
pub fn hermite_eval(n: usize, x: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 2.0 * x;
    for k in 1..n {
        let next = 2.0 * x * cur - 2.0 * k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

pub fn gaussian(sigma: f64, x: f64) -> f64 {
    (-x * x / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MollifierSpec {
    pub order_m: usize,
    pub sigma: f64,
}

impl MollifierSpec {
    pub fn new(order_m: usize, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { order_m, sigma })
    }

    /// Half-width of the integration window; the kernel is treated as zero
    /// outside it.
    pub fn window(&self) -> f64 {
        10.0 * self.sigma * (1.0 + self.order_m as f64)
    }
}

pub fn rho_sigma_eval(spec: &MollifierSpec, x: f64) -> f64 {
    let u = x / (2f64.sqrt() * spec.sigma);
    let mut sum = 0.0;
    let mut weight = 1.0;
    for n in 0..=spec.order_m {
        if n > 0 {
            weight *= -1.0 / (4.0 * n as f64);
        }
        sum += weight * hermite_eval(2 * n, u);
    }
    gaussian(spec.sigma, x) * sum
}

const ABS_TOL: f64 = 1e-15;
const REL_TOL: f64 = 1e-13;

/// Total mass over the window and the mass of `|rho|` beyond `delta`.
pub fn rho_mass_and_tail(spec: &MollifierSpec, delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0) {
        return Err(invalid("delta must be positive"));
    }
    let w = spec.window();
    let f = |x: f64| rho_sigma_eval(spec, x);
    let half = integrate(f, 0.0, w, ABS_TOL, REL_TOL)?;
    let tail = if delta >= w {
        0.0
    } else {
        2.0 * integrate(|x| f(x).abs(), delta, w, ABS_TOL, REL_TOL)?
    };
    Ok((2.0 * half, tail))
}

/// `int rho_sigma phi` over the window.
pub fn mollify(spec: &MollifierSpec, phi: impl Fn(f64) -> f64) -> Result<f64> {
    let w = spec.window();
    let left = integrate(|x| rho_sigma_eval(spec, x) * phi(x), -w, 0.0, ABS_TOL, REL_TOL)?;
    let right = integrate(|x| rho_sigma_eval(spec, x) * phi(x), 0.0, w, ABS_TOL, REL_TOL)?;
    Ok(left + right)
}

/// Gaps `|int rho_sigma phi - phi(0)|` for each sigma.
pub fn delta_convergence_test(order_m: usize, sigmas: &[f64], phi: impl Fn(f64) -> f64 + Copy) -> Result<Vec<f64>> {
    sigmas
        .iter()
        .map(|&s| {
            let spec = MollifierSpec::new(order_m, s)?;
            Ok((mollify(&spec, phi)? - phi(0.0)).abs())
        })
        .collect()
}

/// `max |rho_sigma|` on `points` equally spaced nodes of the window.
pub fn sup_on_grid(spec: &MollifierSpec, points: usize) -> f64 {
    let w = spec.window();
    let n = points.max(2);
    (0..n)
        .map(|i| rho_sigma_eval(spec, -w + 2.0 * w * i as f64 / (n - 1) as f64).abs())
        .fold(0.0, f64::max)
}

/// The test function used by the convergence report.
pub fn smooth_test_function(x: f64) -> f64 {
    (-x * x).exp() * x.cos()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MollifierRow {
    pub order_m: usize,
    pub sigma: f64,
    pub mass: f64,
    pub tail: f64,
    pub gap: f64,
    pub sup: f64,
}

/// One row per sigma for the given order, tail measured beyond `delta`.
pub fn mollifier_report(order_m: usize, sigmas: &[f64], delta: f64) -> Result<Vec<MollifierRow>> {
    let gaps = delta_convergence_test(order_m, sigmas, smooth_test_function)?;
    sigmas
        .iter()
        .zip(gaps)
        .map(|(&sigma, gap)| {
            let spec = MollifierSpec::new(order_m, sigma)?;
            let (mass, tail) = rho_mass_and_tail(&spec, delta)?;
            Ok(MollifierRow {
                order_m,
                sigma,
                mass,
                tail,
                gap,
                sup: sup_on_grid(&spec, 2001),
            })
        })
        .collect()
}
