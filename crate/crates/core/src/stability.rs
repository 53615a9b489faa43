//! Parameter certification for the free dynamics and design of signal-free
//! reset intervals.
//!
//! The characteristic polynomial of the free equation is
//! `chi(x) = y^2 + w y + e` with `y = x (x + theta)`, `w = (theta gamma - nu)/mu`
//! and `e = k/mu`, so its reduced quartic never has a cubic-free linear term.
//! Root finding exploits that structure and falls back to Ferrari's method
//! otherwise.

use nalgebra::{DMatrix, DVector, Matrix3};
use num_complex::Complex64;
use serde::Serialize;

use crate::dynamics::{simulate_free, FilterState, FreeParams};
use crate::error::{invalid, Result};

/// Coercivity: `mu > gamma2^2`, `nu > gamma1^2`, `k > 0`.
pub fn coercivity_check(mu: f64, nu: f64, gamma1: f64, gamma2: f64, k: f64) -> bool {
    mu > gamma2 * gamma2 && nu > gamma1 * gamma1 && k > 0.0
}

/// The quadratic part of the free action, `1/2 mu |q''|^2 + 1/2 nu |q'|^2
/// + gamma q' q'' + 1/2 k |q|^2`, is positive definite.
pub fn energy_positive_definite(p: &FreeParams) -> bool {
    let g = p.gamma();
    let m = nalgebra::Matrix2::new(p.mu, g, g, p.nu);
    let min_eig = m.symmetric_eigenvalues().min();
    min_eig > 0.0 && p.k > 0.0
}

pub fn free_energy(state: &FilterState, p: &FreeParams) -> f64 {
    0.5 * p.mu * state.q2.norm_squared()
        + 0.5 * p.nu * state.q1.norm_squared()
        + p.gamma() * state.q1.dot(&state.q2)
        + 0.5 * p.k * state.q.norm_squared()
}

/// Monic quartic `x^4 + b x^3 + c x^2 + d x + e` and its reduced form
/// `z^4 + p z^2 + r z + s` under `x = z - b/4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuarticCoeffs {
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub p_red: f64,
    pub r_red: f64,
    pub s_red: f64,
}

impl QuarticCoeffs {
    pub fn monic(b: f64, c: f64, d: f64, e: f64) -> Self {
        let b2 = b * b;
        Self {
            b,
            c,
            d,
            e,
            p_red: c - 3.0 * b2 / 8.0,
            r_red: b2 * b / 8.0 - b * c / 2.0 + d,
            s_red: b2 * c / 16.0 - 3.0 * b2 * b2 / 256.0 - b * d / 4.0 + e,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.b.abs().max(self.c.abs()).max(self.d.abs()).max(self.e.abs())
    }

    pub fn eval(&self, x: Complex64) -> Complex64 {
        (((x + self.b) * x + self.c) * x + self.d) * x + self.e
    }

    fn eval_derivative(&self, x: Complex64) -> Complex64 {
        ((x * 4.0 + 3.0 * self.b) * x + 2.0 * self.c) * x + self.d
    }
}

/// Coefficients of the characteristic polynomial of the free equation.
pub fn characteristic_coeffs(theta: f64, mu: f64, nu: f64, gamma: f64, k: f64) -> Result<QuarticCoeffs> {
    if mu == 0.0 {
        return Err(invalid("mu must be nonzero"));
    }
    Ok(QuarticCoeffs::monic(
        2.0 * theta,
        (theta * theta * mu + theta * gamma - nu) / mu,
        (theta * theta * gamma - theta * nu) / mu,
        k / mu,
    ))
}

pub fn characteristic_coeffs_of(p: &FreeParams) -> Result<QuarticCoeffs> {
    characteristic_coeffs(p.theta, p.mu, p.nu, p.gamma(), p.k)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootReport {
    /// sorted by real part, then imaginary part
    #[serde(serialize_with = "serialize_roots")]
    pub roots: [Complex64; 4],
    pub stable: bool,
    pub real: bool,
    pub tolerance: f64,
}

fn serialize_roots<S: serde::Serializer>(roots: &[Complex64; 4], ser: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = ser.serialize_seq(Some(4))?;
    for r in roots {
        seq.serialize_element(&[r.re, r.im])?;
    }
    seq.end()
}

impl RootReport {
    /// Alias of `real`: real roots give non-oscillating solutions.
    pub fn aperiodic(&self) -> bool {
        self.real
    }
}

/// Roots of `x^2 + bb x + cc` without cancellation between the two terms of
/// the quadratic formula. A discriminant within `snap` of zero is treated
/// as zero.
fn stable_quadratic(bb: Complex64, cc: Complex64, snap: f64) -> [Complex64; 2] {
    let mut disc = bb * bb - cc * 4.0;
    if disc.norm() <= snap * (bb.norm_sqr() + 4.0 * cc.norm()) {
        disc = Complex64::new(0.0, 0.0);
    } else if disc.im.abs() <= snap * (bb.norm_sqr() + 4.0 * cc.norm()) {
        disc.im = 0.0;
    }
    let sq = disc.sqrt();
    // pick the sign that adds magnitudes
    let big = if (bb + sq).norm() >= (bb - sq).norm() {
        bb + sq
    } else {
        bb - sq
    };
    if big.norm() == 0.0 {
        return [Complex64::new(0.0, 0.0); 2];
    }
    let x1 = -big / 2.0;
    let x2 = cc / x1;
    [x1, x2]
}

const SNAP: f64 = 1e-12;

/// Positive root of the resolvent cubic `8m^3 + 8p m^2 + (2p^2 - 8s) m - r^2`.
fn resolvent_root(p: f64, r: f64, s: f64) -> f64 {
    let f = |m: f64| ((8.0 * m + 8.0 * p) * m + (2.0 * p * p - 8.0 * s)) * m - r * r;
    let mut hi = 1.0 + p.abs().max((2.0 * p * p - 8.0 * s).abs() / 8.0).max(r * r / 8.0);
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn polish(c: &QuarticCoeffs, mut x: Complex64) -> Complex64 {
    for _ in 0..8 {
        let d = c.eval_derivative(x);
        if d.norm() == 0.0 {
            break;
        }
        let step = c.eval(x) / d;
        let next = x - step;
        if !(next.re.is_finite() && next.im.is_finite()) || c.eval(next).norm() >= c.eval(x).norm() {
            break;
        }
        x = next;
    }
    x
}

/// All four roots with stability and reality flags. The reality tolerance is
/// `1e-9 (1 + max |coeff|)`.
pub fn quartic_roots(c: &QuarticCoeffs) -> RootReport {
    let tolerance = 1e-9 * (1.0 + c.max_abs());
    let scale = c
        .p_red
        .abs()
        .sqrt()
        .max(c.s_red.abs().powf(0.25))
        .max(c.r_red.abs().cbrt());
    let half_b = Complex64::new(c.b / 2.0, 0.0);

    let mut roots: Vec<Complex64> = if c.r_red.abs() <= 1e-12 * scale.powi(3) {
        // chi(x) = (x^2 + (b/2) x + C1)(x^2 + (b/2) x + C2) with C1 + C2 = c - b^2/4
        // and C1 C2 = e
        let sum = c.c - c.b * c.b / 4.0;
        let cs = stable_quadratic(Complex64::new(-sum, 0.0), Complex64::new(c.e, 0.0), SNAP);
        cs.iter().flat_map(|ci| stable_quadratic(half_b, *ci, SNAP)).collect()
    } else {
        let m = resolvent_root(c.p_red, c.r_red, c.s_red);
        let beta = (2.0 * m).sqrt();
        let shift = c.b / 4.0;
        [1.0, -1.0]
            .iter()
            .flat_map(|sign| {
                // z^2 + sign beta z + (p/2 + m - sign r / (2 beta)) in x = z - b/4
                let kappa = c.p_red / 2.0 + m - sign * c.r_red / (2.0 * beta);
                let lin = sign * beta;
                let bb = Complex64::new(2.0 * shift + lin, 0.0);
                let cc = Complex64::new(shift * shift + lin * shift + kappa, 0.0);
                stable_quadratic(bb, cc, SNAP)
            })
            .map(|x| polish(c, x))
            .collect()
    };
    roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    let roots: [Complex64; 4] = roots.try_into().expect("four roots");
    RootReport {
        stable: roots.iter().all(|r| r.re < 0.0),
        real: roots.iter().all(|r| r.im.abs() <= tolerance),
        roots,
        tolerance,
    }
}

/// Companion-matrix eigenvalues, sorted like [`quartic_roots`].
pub fn companion_roots(c: &QuarticCoeffs) -> Vec<Complex64> {
    let mut m = DMatrix::zeros(4, 4);
    for i in 1..4 {
        m[(i, i - 1)] = 1.0;
    }
    m[(0, 3)] = -c.e;
    m[(1, 3)] = -c.d;
    m[(2, 3)] = -c.c;
    m[(3, 3)] = -c.b;
    let mut r: Vec<Complex64> = m.complex_eigenvalues().iter().copied().collect();
    r.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    r
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropReport {
    pub certified: bool,
    /// names of the violated inequalities
    pub violated: Vec<&'static str>,
    pub coeffs: QuarticCoeffs,
    pub roots: RootReport,
}

fn prop_violations(p: &FreeParams, include_k: bool) -> Vec<&'static str> {
    let FreeParams {
        theta,
        mu,
        nu,
        gamma1,
        gamma2,
        k,
    } = *p;
    let tg = theta * gamma1 * gamma2;
    let mut out = Vec::new();
    if !(theta > 0.0) {
        out.push("theta > 0");
    }
    if !(mu > gamma2 * gamma2) {
        out.push("mu > gamma2^2");
    }
    if !(nu > gamma1 * gamma1) {
        out.push("nu > gamma1^2");
    }
    if !(nu < tg) {
        out.push("nu < theta gamma1 gamma2");
    }
    if include_k {
        if !(k > 0.0) {
            out.push("k > 0");
        }
        let bound = (nu - tg).powi(2) / (4.0 * mu);
        // a few ulps of slack so that a k typed at the bound is accepted
        if !(k <= bound * (1.0 + 4.0 * f64::EPSILON)) {
            out.push("k <= (nu - theta gamma1 gamma2)^2 / (4 mu)");
        }
    }
    let sign_ok = (gamma1 < 0.0 && gamma2 < gamma1 / theta) || (gamma1 > 0.0 && gamma2 > gamma1 / theta);
    if !sign_ok {
        out.push("gamma1, gamma2 sign alternative");
    }
    out
}

/// Checks the sufficient conditions for a stable, aperiodic free dynamics
/// and attaches the computed roots as a cross-check.
pub fn prop_coef_check(p: &FreeParams) -> Result<PropReport> {
    let coeffs = characteristic_coeffs_of(p)?;
    let violated = prop_violations(p, true);
    Ok(PropReport {
        certified: violated.is_empty(),
        violated,
        roots: quartic_roots(&coeffs),
        coeffs,
    })
}

/// Inverse of the Vandermonde matrix `V_{kj} = x_j^k`, `k = 0, 1, 2`, from
/// the Lagrange basis.
pub fn vandermonde_inverse(x: [f64; 3]) -> Matrix3<f64> {
    let mut inv = Matrix3::zeros();
    for j in 0..3 {
        let (a, b) = (x[(j + 1) % 3], x[(j + 2) % 3]);
        let den = (x[j] - a) * (x[j] - b);
        inv[(j, 0)] = a * b / den;
        inv[(j, 1)] = -(a + b) / den;
        inv[(j, 2)] = 1.0 / den;
    }
    inv
}

/// `max |V(lambda/rho)^{-1}|` entrywise.
pub fn c_lambda(lambdas: [f64; 3], rho: f64) -> f64 {
    vandermonde_inverse(lambdas.map(|l| l / rho)).amax()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResetDesign {
    pub rho: f64,
    /// rho from the displayed theorem bound after one refinement
    pub rho_theorem: f64,
    /// smallest rho whose exact modal displacement bound is below eps/2
    pub rho_displacement: f64,
    pub c_lambda: f64,
    /// whether `rho > sqrt(9 c_lambda(rho) max_k |q^(k)| / eps)` holds at the final rho
    pub theorem_condition_holds: bool,
    pub predicted_displacement: f64,
    /// nonzero roots of the base parameters
    pub base_roots: [f64; 3],
    pub params: FreeParams,
    /// interval length after which every derivative is below `1e-12` of
    /// its initial maximum
    pub duration: f64,
    pub max_step: f64,
}

/// Relative derivative level the designed interval reaches.
pub const RESET_DECAY: f64 = 1e-12;

fn base_nonzero_roots(base: &FreeParams) -> Result<[f64; 3]> {
    let mut v = prop_violations(base, false);
    v.retain(|s| *s != "k > 0");
    if !v.is_empty() {
        return Err(invalid(format!("base parameters not certified: {}", v.join(", "))));
    }
    if base.k != 0.0 {
        return Err(invalid("base parameters need k = 0 so that 0 is a characteristic root"));
    }
    let report = quartic_roots(&characteristic_coeffs_of(base)?);
    if !report.real {
        return Err(invalid("base parameters have complex roots"));
    }
    let mut re: Vec<f64> = report.roots.iter().map(|r| r.re).collect();
    // drop the root at zero (largest)
    re.sort_by(f64::total_cmp);
    let nonzero = [re[0], re[1], re[2]];
    let gap = (nonzero[0] - nonzero[1]).abs().min((nonzero[1] - nonzero[2]).abs());
    if gap <= 1e-9 * nonzero[0].abs() || nonzero[2] >= 0.0 {
        return Err(invalid("base roots must be distinct and negative apart from 0"));
    }
    Ok(nonzero)
}

/// Modal amplitudes `c_j` (one vector per root) of the derivative part of the
/// state for roots `roots`.
fn modal_amplitudes(state: &FilterState, roots: [f64; 3]) -> [DVector<f64>; 3] {
    let inv = vandermonde_inverse(roots);
    let d = [&state.q1, &state.q2, &state.q3];
    std::array::from_fn(|j| {
        let a = d[0] * inv[(j, 0)] + d[1] * inv[(j, 1)] + d[2] * inv[(j, 2)];
        a / roots[j]
    })
}

/// Chooses `rho` and the interval length so that the rescaled free dynamics
/// brings every derivative to rest while moving `q` by less than `eps`.
pub fn reset_design(state: &FilterState, eps: f64, base: &FreeParams) -> Result<ResetDesign> {
    if !(eps > 0.0) {
        return Err(invalid("eps must be positive"));
    }
    let lambdas = base_nonzero_roots(base)?;
    let m = state.max_derivative_norm();

    let c1 = c_lambda(lambdas, 1.0);
    let rho0 = (9.0 * c1 * m / eps).sqrt();
    let c0 = c_lambda(lambdas, rho0.max(1.0));
    let rho_theorem = (9.0 * c0 * m / eps).sqrt().max(1.0);

    // displacement = -sum_k s_k q^(k+1) / rho^(k+1)
    let inv = vandermonde_inverse(lambdas);
    let s: [f64; 3] = std::array::from_fn(|k| (0..3).map(|j| inv[(j, k)] / lambdas[j]).sum());
    let norms = [state.q1.norm(), state.q2.norm(), state.q3.norm()];
    let bound = |rho: f64| {
        (0..3)
            .map(|k| s[k].abs() * norms[k] / rho.powi(k as i32 + 1))
            .sum::<f64>()
    };
    let target = 0.5 * eps;
    let rho_displacement = if bound(1.0) <= target {
        1.0
    } else {
        let mut hi = 2.0;
        while bound(hi) > target {
            hi *= 2.0;
        }
        let mut lo = hi / 2.0;
        for _ in 0..100 {
            let mid = (lo * hi).sqrt();
            if bound(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };

    let rho = rho_theorem.max(rho_displacement);
    let c_final = c_lambda(lambdas, rho);
    let theorem_condition_holds = rho > (9.0 * c_final * m / eps).sqrt();
    let scaled = lambdas.map(|l| rho * l);
    let amps = modal_amplitudes(state, scaled);
    let predicted_displacement = (&amps[0] + &amps[1] + &amps[2]).norm();

    let level = |t: f64| {
        (1..=3)
            .map(|k| {
                (0..3)
                    .map(|j| amps[j].norm() * scaled[j].abs().powi(k) * (scaled[j] * t).exp())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    };
    let goal = RESET_DECAY * m;
    let duration = if m == 0.0 {
        0.0
    } else {
        let slow = scaled.iter().map(|l| l.abs()).fold(f64::INFINITY, f64::min);
        let mut hi = 1.0 / slow;
        while level(hi) > goal {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if level(mid) > goal {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };
    let fast = scaled.iter().map(|l| l.abs()).fold(0.0, f64::max);

    Ok(ResetDesign {
        rho,
        rho_theorem,
        rho_displacement,
        c_lambda: c_final,
        theorem_condition_holds,
        predicted_displacement,
        base_roots: lambdas,
        params: base.rescaled(rho),
        duration,
        max_step: 0.01 / fast,
    })
}

/// Runs the designed signal-free interval from `state`.
pub fn run_reset_interval(state: &FilterState, design: &ResetDesign) -> Result<FilterState> {
    simulate_free(state, &design.params, design.duration, design.max_step)
}

/// Base parameters for reset intervals: roots `{0, -0.2, -0.8, -1}`.
pub fn default_reset_base() -> FreeParams {
    FreeParams {
        theta: 1.0,
        mu: 7.0,
        nu: 1.38,
        gamma1: 1.0,
        gamma2: 2.5,
        k: 0.0,
    }
}
