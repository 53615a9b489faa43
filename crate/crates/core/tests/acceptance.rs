//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed.

use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mvq_core::discretization::{assemble_motion_matrices, motion_penalty, FilterShape, MotionMatrices};
use mvq_core::dynamics::{
    boundary_residual, dissipation_weight, euler_step, free_dynamics_rhs, DynamicsParams, FilterState, FreeParams,
};
use mvq_core::flow::{material_derivative, FlowField};
use mvq_core::mollifier::{delta_convergence_test, rho_mass_and_tail, smooth_test_function, MollifierSpec};
use mvq_core::pipeline::{batch_mi, train_layer, FrozenLayer, LayerConfig, Preset, ResetPolicy, VideoSource};
use mvq_core::potential::{
    causal_update, consistency_gap, grad_u, potential_u, CausalEstimator, FeatureField, TemporalDensity,
};
use mvq_core::quadrature::simpson;
use mvq_core::signal::{synth_texture, synth_translating_texture, uniform_attention, ColorField};
use mvq_core::stability::{default_reset_base, prop_coef_check, reset_design, run_reset_interval};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, ok: impl Into<String>, fail: impl Into<String>) -> Outcome {
    if cond {
        Ok(ok.into())
    } else {
        Err(fail.into())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Outcome {
    check(
        elapsed.as_secs_f64() < limit_s,
        "",
        format!("took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64()),
    )
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let shape = FilterShape::new(3, 1, 3).unwrap();
    let g = uniform_attention(5, 5).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = synth_texture(100 + seed, 5, 5, 1);
        let q = DVector::from_fn(shape.dim(), |_, _| rng.gen_range(-2.0..2.0));
        let exact = grad_u(&q, &c, &g, shape, 1.0).unwrap();
        let h = 1e-5;
        let fd = DVector::from_fn(shape.dim(), |i, _| {
            let mut plus = q.clone();
            let mut minus = q.clone();
            plus[i] += h;
            minus[i] -= h;
            (potential_u(&plus, &c, &g, shape, 1.0).unwrap() - potential_u(&minus, &c, &g, shape, 1.0).unwrap())
                / (2.0 * h)
        });
        worst = worst.max((&fd - &exact).norm() / exact.norm());
    }
    within(start.elapsed(), 5.0)?;
    check(
        worst <= 1e-5,
        format!("worst relative error {worst:.2e} over 20 instances"),
        format!("relative error {worst:.2e} > 1e-5"),
    )
}

fn integrator_order() -> Outcome {
    let start = Instant::now();
    // q'''' = -q from q(0) = 1 at rest: q(t) = cosh(t/sqrt2) cos(t/sqrt2)
    let free = FreeParams {
        theta: 0.0,
        mu: 1.0,
        nu: 0.0,
        gamma1: 0.0,
        gamma2: 0.0,
        k: 1.0,
    };
    let horizon = 2.0;
    let a = horizon / 2f64.sqrt();
    let exact = a.cosh() * a.cos();
    let error = |dt: f64| {
        let steps = (horizon / dt).round() as usize;
        let mut s = FilterState::at_rest(DVector::from_element(1, 1.0));
        for _ in 0..steps {
            let q4 = free_dynamics_rhs(&s, &free).unwrap();
            s = euler_step(&s, &q4, dt);
        }
        (s.q[0] - exact).abs()
    };
    let ratio = error(1.0 / 25.0) / error(1.0 / 50.0);
    within(start.elapsed(), 1.0)?;
    check(
        (1.7..=2.3).contains(&ratio),
        format!("error ratio {ratio:.4}"),
        format!("error ratio {ratio:.4} outside [1.7, 2.3]"),
    )
}

fn certified_point(rng: &mut ChaCha8Rng) -> FreeParams {
    let theta = 10f64.powf(rng.gen_range(-3.0..1.0));
    let g1 = rng.gen_range(0.05..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let g2 = g1 / theta * rng.gen_range(1.2..5.0);
    let nu = g1 * g1 + (theta * g1 * g2 - g1 * g1) * rng.gen_range(0.01..0.99);
    let mu = g2 * g2 * rng.gen_range(1.01..4.0);
    let bound = (nu - theta * g1 * g2).powi(2) / (4.0 * mu);
    FreeParams {
        theta,
        mu,
        nu,
        gamma1: g1,
        gamma2: g2,
        k: bound * rng.gen_range(1e-3..1.0),
    }
}

fn k_bound(p: &FreeParams) -> f64 {
    (p.nu - p.theta * p.gamma1 * p.gamma2).powi(2) / (4.0 * p.mu)
}

/// Breaks exactly one inequality of `p`; `which` cycles through the five
/// that can fail on their own.
fn violate(p: FreeParams, which: usize, rng: &mut ChaCha8Rng) -> FreeParams {
    let tg = p.theta * p.gamma1 * p.gamma2;
    let mut q = p;
    match which {
        0 => q.mu = p.gamma2 * p.gamma2 * rng.gen_range(0.2..1.0),
        1 => q.nu = p.gamma1 * p.gamma1 * rng.gen_range(0.2..1.0),
        2 => q.nu = tg * rng.gen_range(1.0..3.0),
        3 => q.k = -k_bound(&p) * rng.gen_range(0.0..1.0),
        _ => {
            q.k = k_bound(&p) * rng.gen_range(1.5..10.0);
            return q;
        }
    }
    if which != 3 {
        q.k = k_bound(&q) * rng.gen_range(1e-3..1.0);
    }
    q
}

fn proposition_content() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..200 {
        let p = certified_point(&mut rng);
        let rep = prop_coef_check(&p).map_err(|e| e.to_string())?;
        if !rep.certified {
            return Err(format!("generated point not certified: {:?}", rep.violated));
        }
        let scale = rep.roots.roots.iter().map(|r| r.norm()).fold(0.0, f64::max);
        for r in rep.roots.roots {
            if r.re >= 0.0 || r.re.is_nan() || r.im.abs() > 1e-9 * scale {
                return Err(format!("root {r} of certified point {p:?}"));
            }
        }
    }
    for i in 0..200 {
        let p = violate(certified_point(&mut rng), i % 5, &mut rng);
        let rep = prop_coef_check(&p).map_err(|e| e.to_string())?;
        if rep.violated.len() != 1 {
            return Err(format!("point {p:?} violates {:?}, not exactly one", rep.violated));
        }
        if rep.certified {
            return Err(format!("point violating {:?} reported certified", rep.violated));
        }
    }
    within(start.elapsed(), 5.0)?;
    Ok("200 certified points stable and real, 200 single violations rejected".into())
}

fn random_state(seed: u64, dim: usize) -> FilterState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = || DVector::from_fn(dim, |_, _| rng.gen_range(-10.0..=10.0));
    FilterState {
        q: v(),
        q1: v(),
        q2: v(),
        q3: v(),
        t: 0.0,
    }
}

fn reset_theorems() -> Outcome {
    let start = Instant::now();
    let eps = 1e-3;
    let mut worst_decay: f64 = 0.0;
    let mut worst_move: f64 = 0.0;
    for seed in 0..10 {
        let s = random_state(seed, 75);
        let design = reset_design(&s, eps, &default_reset_base()).map_err(|e| e.to_string())?;
        let out = run_reset_interval(&s, &design).map_err(|e| e.to_string())?;
        let initial = [&s.q1, &s.q2, &s.q3].iter().map(|v| v.norm()).fold(0.0, f64::max);
        worst_decay = worst_decay.max(out.max_derivative_norm() / initial);
        worst_move = worst_move.max((&out.q - &s.q).norm());
    }
    within(start.elapsed(), 30.0)?;
    check(
        worst_decay <= 1e-6 && worst_move < eps,
        format!("derivatives down to {worst_decay:.2e} of initial, |dq| <= {worst_move:.2e}"),
        format!("decay {worst_decay:.2e} (need 1e-6), |dq| {worst_move:.2e} (need < {eps})"),
    )
}

fn boundary_residuals() -> Outcome {
    let params = DynamicsParams::from_free(Preset::StableReal.free_params(), 5);
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let s = random_state(seed, 75);
        let design = reset_design(&s, 1e-3, &default_reset_base()).map_err(|e| e.to_string())?;
        let out = run_reset_interval(&s, &design).map_err(|e| e.to_string())?;
        let (r1, r2) = boundary_residual(&out, &params, None).map_err(|e| e.to_string())?;
        worst = worst.max(r1.norm().max(r2.norm()) / out.q.norm());
    }
    check(
        worst <= 1e-6,
        format!("residual norms <= {worst:.2e} |q|"),
        format!("residual {worst:.2e} |q| > 1e-6 |q|"),
    )
}

struct MotionTotals {
    o_norm: f64,
    penalty: f64,
}

fn motion_totals(frames: &[ColorField], flow: &FlowField, dt: f64, q: &DVector<f64>, k: usize) -> MotionTotals {
    let g = uniform_attention(frames[0].width(), frames[0].height()).unwrap();
    let zero = DVector::zeros(q.len());
    let mut o_sq = 0.0;
    let mut penalty = 0.0;
    for pair in frames.windows(2) {
        let (cdot, adv) = material_derivative(&pair[0], &pair[1], flow, dt).unwrap();
        let mats: MotionMatrices = assemble_motion_matrices(&pair[1], &cdot, &adv, &g, k).unwrap();
        o_sq += mats.o.norm_squared();
        penalty += motion_penalty(&mats, q, &zero).unwrap();
    }
    MotionTotals {
        o_norm: o_sq.sqrt(),
        penalty,
    }
}

fn motion_null_test() -> Outcome {
    let start = Instant::now();
    let (w, h, frames_n, dt) = (48, 48, 16, 0.04);
    let k = 5;
    let clip = synth_translating_texture(17, (1.0, 0.0), frames_n, w, h, 1);
    let flow = FlowField::uniform(w, h, 1.0 / dt, 0.0);
    let mut order: Vec<usize> = (0..frames_n).collect();
    // a fixed derangement that never places consecutive frames next to each other
    order.sort_by_key(|&i| (i * 7) % frames_n);
    let shuffled: Vec<ColorField> = order.iter().map(|&i| clip[i].clone()).collect();
    let shape = FilterShape::new(5, 1, k).unwrap();
    let q = FilterState::seeded(shape.dim(), 3).q;
    let moving = motion_totals(&clip, &flow, dt, &q, k);
    let baseline = motion_totals(&shuffled, &flow, dt, &q, k);
    let o_ratio = moving.o_norm / baseline.o_norm;
    let p_ratio = moving.penalty / baseline.penalty;
    within(start.elapsed(), 30.0)?;
    check(
        o_ratio <= 0.05 && p_ratio <= 0.05,
        format!("|O| ratio {o_ratio:.2e}, penalty ratio {p_ratio:.2e}"),
        format!("|O| ratio {o_ratio:.2e}, penalty ratio {p_ratio:.2e} (limit 0.05)"),
    )
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn mollifier_suite() -> Outcome {
    let start = Instant::now();
    let sigmas = [1.0, 0.1, 0.01];
    let mut worst_mass: f64 = 0.0;
    for m in 1..=3 {
        let mut tails = Vec::new();
        for &s in &sigmas {
            let spec = MollifierSpec::new(m, s).map_err(|e| e.to_string())?;
            let (mass, tail) = rho_mass_and_tail(&spec, 0.5).map_err(|e| e.to_string())?;
            worst_mass = worst_mass.max((mass - 1.0).abs());
            tails.push(tail);
        }
        if !strictly_decreasing(&tails) {
            return Err(format!("order {m}: tails {tails:?} not strictly decreasing"));
        }
        let gaps = delta_convergence_test(m, &sigmas, smooth_test_function).map_err(|e| e.to_string())?;
        if !strictly_decreasing(&gaps) {
            return Err(format!("order {m}: gaps {gaps:?} not strictly decreasing"));
        }
    }
    within(start.elapsed(), 10.0)?;
    check(
        worst_mass <= 1e-8,
        format!("mass error <= {worst_mass:.1e}, tails and gaps strictly decreasing"),
        format!("mass error {worst_mass:.1e} > 1e-8"),
    )
}

fn dissipation_normalization() -> Outcome {
    let mut worst: f64 = 0.0;
    for theta in [1e-4, 1e-2, 1.0] {
        for horizon in [10.0, 1800.0] {
            let integral = simpson(|t| dissipation_weight(t, theta, horizon).0, 0.0, horizon, 200_000);
            worst = worst.max((integral - 1.0).abs());
        }
    }
    check(
        worst <= 1e-9,
        format!("worst |integral - 1| = {worst:.1e}"),
        format!("|integral - 1| = {worst:.1e} > 1e-9"),
    )
}

/// Features fluctuating around fixed symbol probabilities.
fn stationary_frame(rng: &mut ChaCha8Rng, n: usize, pixels: usize) -> FeatureField {
    let base = [0.5, 0.3, 0.2];
    let probs = nalgebra::DMatrix::from_fn(pixels, n, |_, i| base[i] * rng.gen_range(0.8..1.2));
    let probs = nalgebra::DMatrix::from_fn(pixels, n, |p, i| probs[(p, i)] / probs.row(p).sum());
    FeatureField {
        width: pixels,
        height: 1,
        activations: probs.map(f64::ln),
        probs,
    }
}

fn causal_consistency() -> Outcome {
    let dt = 0.04;
    let g = uniform_attention(16, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut est = CausalEstimator::new(3, 1.0, TemporalDensity::Exponential { rate: 10.0 });
    let mut history = Vec::new();
    let mut gaps = Vec::new();
    for t in 1..=1000 {
        est = causal_update(&est, &stationary_frame(&mut rng, 3, 16), &g, dt).map_err(|e| e.to_string())?;
        history.push(est.s.clone());
        if [10, 100, 1000].contains(&t) {
            gaps.push(consistency_gap(&history, dt));
        }
    }
    check(
        strictly_decreasing(&gaps),
        format!("gaps {:.3e}, {:.3e}, {:.3e}", gaps[0], gaps[1], gaps[2]),
        format!("gaps {gaps:?} not decreasing"),
    )
}

fn mi_learning() -> Outcome {
    let start = Instant::now();
    let side = 24;
    let frames = synth_translating_texture(7, (1.0, 0.0), side, side, side, 1);
    let source = VideoSource::with_internal_flow(frames, 1.0, 50, 0.04).map_err(|e| e.to_string())?;
    let mut diffs = Vec::new();
    let (mut before, mut after) = (0.0, 0.0);
    for seed in 0..10u64 {
        let mut layer = LayerConfig::new(5, 5, 5000);
        layer.preset = Preset::StableReal;
        layer.lambda_m = 1e-6;
        layer.seed = seed;
        let run =
            train_layer(&layer, ResetPolicy::default(), &[], &source, 0, 5000, None).map_err(|e| e.to_string())?;
        let initial = FrozenLayer {
            shape: run.shape,
            q: run.initial.q.clone(),
        };
        let mi0 = batch_mi(&[], &initial, &source).map_err(|e| e.to_string())?;
        let mi1 = batch_mi(&[], &run.frozen(), &source).map_err(|e| e.to_string())?;
        before += mi0 / 10.0;
        after += mi1 / 10.0;
        diffs.push(mi1 - mi0);
    }
    let mean = diffs.iter().sum::<f64>() / 10.0;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 9.0).sqrt();
    let t_stat = mean / (sd / 10f64.sqrt());
    // one-sided 95% critical value of Student's t with 9 degrees of freedom
    let critical = 1.833;
    within(start.elapsed(), 600.0)?;
    check(
        mean > 0.01 && t_stat > critical,
        format!("mean MI {before:.4} -> {after:.4}, paired margin {mean:.4}, t = {t_stat:.2}"),
        format!("mean MI {before:.4} -> {after:.4}, margin {mean:.4}, t = {t_stat:.2}"),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient correctness", gradient_correctness),
        ("integrator order", integrator_order),
        ("certified stability region", proposition_content),
        ("reset interval design", reset_theorems),
        ("boundary residuals after reset", boundary_residuals),
        ("motion invariance null test", motion_null_test),
        ("mollifier suite", mollifier_suite),
        ("dissipation normalization", dissipation_normalization),
        ("causal entropy consistency", causal_consistency),
        ("MI learning", mi_learning),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} ({secs:.2} s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} ({secs:.2} s)", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
