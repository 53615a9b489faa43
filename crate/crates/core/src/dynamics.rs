//! Fourth-order learning dynamics: dissipation weight, the Euler–Lagrange
//! right-hand side, explicit Euler steps, the reset plan, boundary residuals
//! and state checkpoints.
//!
//! The equation is integrated after dividing through by the dissipation
//! weight `tw(t) > 0`. Since `d/dt (tw X) = tw (theta X + X')`, every hatted
//! coefficient collapses to a constant (or to the raw motion block plus
//! `theta` times itself), which keeps long runs free of `e^{theta t}`
//! overflow.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discretization::{lift_apply, lift_apply_transposed, FilterShape, MotionMatrices};
use crate::error::{invalid, mismatch, MvqError, Result};
use crate::signal::BlurSchedule;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MVQS";

/// Default Euler step, one frame at 25 fps.
pub const DEFAULT_DT: f64 = 1.0 / 25.0;

/// Constant coefficients of the signal-free equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeParams {
    pub theta: f64,
    pub mu: f64,
    pub nu: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub k: f64,
}

impl FreeParams {
    pub fn gamma(&self) -> f64 {
        self.gamma1 * self.gamma2
    }

    /// Time rescaling by `rho`: the characteristic roots are multiplied by
    /// `rho` while `mu` is kept.
    pub fn rescaled(&self, rho: f64) -> FreeParams {
        FreeParams {
            theta: rho * self.theta,
            mu: self.mu,
            nu: rho * rho * self.nu,
            gamma1: rho * self.gamma1,
            gamma2: self.gamma2,
            k: rho.powi(4) * self.k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsParams {
    pub theta: f64,
    pub mu: f64,
    pub nu: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub k: f64,
    pub lambda_c: f64,
    pub lambda_m: f64,
    /// horizon `T` in seconds
    pub horizon: f64,
    pub dt: f64,
    /// reset thresholds on the squared norms of q', q'', q'''
    pub eps: [f64; 3],
}

impl DynamicsParams {
    pub fn from_free(free: FreeParams, n: usize) -> Self {
        let e = 300.0 * n as f64;
        Self {
            theta: free.theta,
            mu: free.mu,
            nu: free.nu,
            gamma1: free.gamma1,
            gamma2: free.gamma2,
            k: free.k,
            lambda_c: 1.0,
            lambda_m: 0.0,
            horizon: 45_000.0 * DEFAULT_DT,
            dt: DEFAULT_DT,
            eps: [e; 3],
        }
    }

    pub fn free(&self) -> FreeParams {
        FreeParams {
            theta: self.theta,
            mu: self.mu,
            nu: self.nu,
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            k: self.k,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma1 * self.gamma2
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.theta,
            self.mu,
            self.nu,
            self.gamma1,
            self.gamma2,
            self.k,
            self.lambda_c,
            self.lambda_m,
            self.horizon,
            self.dt,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(invalid("dynamics parameters must be finite"));
        }
        if self.mu == 0.0 {
            return Err(invalid("mu must be nonzero"));
        }
        if self.theta <= 0.0 || self.horizon <= 0.0 || self.dt <= 0.0 {
            return Err(invalid("theta, horizon and dt must be positive"));
        }
        if self.lambda_c < 0.0 || self.lambda_m < 0.0 {
            return Err(invalid("lambda_c and lambda_m must be nonnegative"));
        }
        if self.eps.iter().any(|e| !(*e > 0.0)) {
            return Err(invalid("reset thresholds must be positive"));
        }
        Ok(())
    }
}

/// Filters and their first three time derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub q: DVector<f64>,
    pub q1: DVector<f64>,
    pub q2: DVector<f64>,
    pub q3: DVector<f64>,
    pub t: f64,
}

impl FilterState {
    pub fn zeros(dim: usize) -> Self {
        Self::at_rest(DVector::zeros(dim))
    }

    pub fn at_rest(q: DVector<f64>) -> Self {
        let dim = q.len();
        Self {
            q,
            q1: DVector::zeros(dim),
            q2: DVector::zeros(dim),
            q3: DVector::zeros(dim),
            t: 0.0,
        }
    }

    /// `q` uniform on `[-0.1, 0.1]`, derivatives zero.
    pub fn seeded(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::at_rest(DVector::from_fn(dim, |_, _| rng.gen_range(-0.1..=0.1)))
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn derivative(&self, order: usize) -> &DVector<f64> {
        match order {
            0 => &self.q,
            1 => &self.q1,
            2 => &self.q2,
            3 => &self.q3,
            _ => panic!("state stores derivatives up to order 3"),
        }
    }

    /// `max_{k=1,2,3} ||q^(k)||`.
    pub fn max_derivative_norm(&self) -> f64 {
        self.q1.norm().max(self.q2.norm()).max(self.q3.norm())
    }

    /// Largest absolute entry over `q` and its derivatives.
    pub fn max_abs_entry(&self) -> f64 {
        [&self.q, &self.q1, &self.q2, &self.q3]
            .iter()
            .map(|v| v.amax())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && [&self.q, &self.q1, &self.q2, &self.q3]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// `tw(t) = theta e^{theta t} / (e^{theta T} - 1)` and its rate `theta tw`.
pub fn dissipation_weight(t: f64, theta: f64, horizon: f64) -> (f64, f64) {
    // expm1 keeps the small-theta limit 1/T accurate
    let tw = theta * (theta * t).exp() / (theta * horizon).exp_m1();
    (tw, theta * tw)
}

fn check_dims(state: &FilterState, other: &DVector<f64>) -> Result<()> {
    if state.q1.len() != state.dim() || state.q2.len() != state.dim() || state.q3.len() != state.dim() {
        return Err(mismatch("state vectors differ in length"));
    }
    if other.len() != state.dim() {
        return Err(mismatch(format!(
            "vector of length {} against state of length {}",
            other.len(),
            state.dim()
        )));
    }
    Ok(())
}

/// Signal-free part of the normalized equation, multiplied by `mu`.
fn free_terms(state: &FilterState, p: &FreeParams) -> DVector<f64> {
    let (th, mu, nu, g) = (p.theta, p.mu, p.nu, p.gamma());
    &state.q3 * (2.0 * th * mu)
        + &state.q2 * (th * th * mu + th * g - nu)
        + &state.q1 * (th * th * g - th * nu)
        + &state.q * p.k
}

/// Solves the normalized Euler–Lagrange equation for `q''''`.
///
/// `mats` carries the lifted motion blocks and their rates; `None` means null
/// signal. `grad_u` is the gradient of the unweighted potential.
pub fn el_fourth_derivative(
    state: &FilterState,
    params: &DynamicsParams,
    mats: Option<&MotionMatrices>,
    grad_u: &DVector<f64>,
) -> Result<DVector<f64>> {
    if params.mu == 0.0 {
        return Err(invalid("mu must be nonzero"));
    }
    check_dims(state, grad_u)?;
    let mut acc = free_terms(state, &params.free()) + grad_u;
    if let (Some(m), true) = (mats, params.lambda_m != 0.0) {
        let lm = params.lambda_m;
        let th = params.theta;
        // Z2: -lambda_M M
        acc -= lift_apply(&m.m, &state.q2)? * lm;
        // Z1: -lambda_M (theta M + M_dot + N' - N)
        let z1 = lift_apply(&m.m, &state.q1)? * th
            + lift_apply(&m.m_dot, &state.q1)?
            + lift_apply_transposed(&m.n, &state.q1)?
            - lift_apply(&m.n, &state.q1)?;
        acc -= z1 * lm;
        // Z0: lambda_M O - lambda_M (theta N' + N_dot')
        let z0 = lift_apply(&m.o, &state.q)?
            - lift_apply_transposed(&m.n, &state.q)? * th
            - lift_apply_transposed(&m.n_dot, &state.q)?;
        acc += z0 * lm;
    }
    Ok(acc / (-params.mu))
}

/// Right-hand side of the constant-coefficient equation used on signal-free
/// intervals.
pub fn free_dynamics_rhs(state: &FilterState, barred: &FreeParams) -> Result<DVector<f64>> {
    if barred.mu == 0.0 {
        return Err(invalid("mu must be nonzero"));
    }
    Ok(free_terms(state, barred) / (-barred.mu))
}

pub fn euler_step(state: &FilterState, q4: &DVector<f64>, dt: f64) -> FilterState {
    FilterState {
        q: &state.q + &state.q1 * dt,
        q1: &state.q1 + &state.q2 * dt,
        q2: &state.q2 + &state.q3 * dt,
        q3: &state.q3 + q4 * dt,
        t: state.t + dt,
    }
}

/// Integrates the free equation for `duration` with Euler sub-steps no
/// longer than `max_step`.
pub fn simulate_free(state: &FilterState, barred: &FreeParams, duration: f64, max_step: f64) -> Result<FilterState> {
    if !(max_step > 0.0) || duration < 0.0 {
        return Err(invalid("simulation needs a positive step and nonnegative duration"));
    }
    let steps = (duration / max_step).ceil() as usize;
    if steps == 0 {
        return Ok(state.clone());
    }
    let h = duration / steps as f64;
    let mut s = state.clone();
    for _ in 0..steps {
        let q4 = free_dynamics_rhs(&s, barred)?;
        s = euler_step(&s, &q4, h);
    }
    Ok(s)
}

/// Reset trigger: some squared derivative norm reached its threshold.
pub fn reset_check(state: &FilterState, eps: &[f64; 3]) -> bool {
    state.q1.norm_squared() >= eps[0] || state.q2.norm_squared() >= eps[1] || state.q3.norm_squared() >= eps[2]
}

/// Zeroes the derivatives and restarts the blurring plan from null signal.
pub fn reset_apply(state: &FilterState, schedule: &BlurSchedule) -> (FilterState, BlurSchedule) {
    let mut s = FilterState::at_rest(state.q.clone());
    s.t = state.t;
    let mut sched = *schedule;
    sched.tau = 0.0;
    (s, sched)
}

/// Left-hand sides of the two natural boundary conditions, normalized by
/// `tw`.
pub fn boundary_residual(
    state: &FilterState,
    params: &DynamicsParams,
    mats: Option<&MotionMatrices>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_dims(state, &state.q)?;
    let (th, mu, nu, g) = (params.theta, params.mu, params.nu, params.gamma());
    let r1 = &state.q2 * mu + &state.q1 * g;
    let mut r2 = &state.q3 * (-mu) - &state.q2 * (th * mu) + &state.q1 * (nu - th * g);
    if let (Some(m), true) = (mats, params.lambda_m != 0.0) {
        r2 += lift_apply(&m.m, &state.q1)? * params.lambda_m;
        r2 += lift_apply_transposed(&m.n, &state.q)? * params.lambda_m;
    }
    Ok((r1, r2))
}

/// Serializes `shape` and `state` as an "MVQS" checkpoint.
pub fn encode_checkpoint(shape: FilterShape, state: &FilterState) -> Result<Vec<u8>> {
    if state.dim() != shape.dim() {
        return Err(mismatch("state does not match the filter shape"));
    }
    let mut out = Vec::with_capacity(16 + 8 * (4 * state.dim() + 1));
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [shape.n, shape.m, shape.k] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for vec in [&state.q, &state.q1, &state.q2, &state.q3] {
        for x in vec.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out.extend_from_slice(&state.t.to_le_bytes());
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(FilterShape, FilterState)> {
    if bytes.len() < 16 {
        return Err(MvqError::MalformedHeader {
            offset: bytes.len(),
            reason: "checkpoint header needs 16 bytes".into(),
        });
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(MvqError::MalformedHeader {
            offset: 0,
            reason: "missing MVQS magic".into(),
        });
    }
    let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let shape = FilterShape::new(field(0), field(1), field(2)).map_err(|e| MvqError::MalformedHeader {
        offset: 4,
        reason: e.to_string(),
    })?;
    let dim = shape.dim();
    let expected = 16 + 8 * (4 * dim + 1);
    if bytes.len() != expected {
        return Err(MvqError::Truncated {
            offset: 16,
            expected,
            actual: bytes.len(),
        });
    }
    let mut vals = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut next_vec = || DVector::from_iterator(dim, vals.by_ref().take(dim));
    let q = next_vec();
    let q1 = next_vec();
    let q2 = next_vec();
    let q3 = next_vec();
    let t = f64::from_le_bytes(bytes[expected - 8..].try_into().unwrap());
    Ok((shape, FilterState { q, q1, q2, q3, t }))
}

pub fn write_checkpoint(path: impl AsRef<Path>, shape: FilterShape, state: &FilterState) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_checkpoint(shape, state)?)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(FilterShape, FilterState)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
