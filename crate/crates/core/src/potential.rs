//! Feature activations, softmax features, the potential `U(q, C)` with its
//! gradient, MI metrics and the causal symbol-probability estimators.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::discretization::{patch_matrix_rows, row_partitions, FilterShape, PlaneView};
use crate::dynamics::dissipation_weight;
use crate::error::{invalid, mismatch, Result};
use crate::signal::{AttentionMap, ColorField};

/// Per-pixel activations and softmax probabilities of one frame.
///
/// Both matrices are `pixels x n` with pixels in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureField {
    pub width: usize,
    pub height: usize,
    pub activations: DMatrix<f64>,
    pub probs: DMatrix<f64>,
}

impl FeatureField {
    pub fn n(&self) -> usize {
        self.probs.ncols()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn phi(&self, pixel: usize) -> Vec<f64> {
        self.probs.row(pixel).iter().copied().collect()
    }

    /// The softmax features as an `n`-channel frame, the input of the next
    /// layer.
    pub fn to_color_field(&self) -> Result<ColorField> {
        // column-major storage already matches the channel-major plane layout
        let data = self.probs.as_slice().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        ColorField::new(self.width, self.height, self.n(), data)
    }
}

fn check_shape(q: &DVector<f64>, c: &ColorField, shape: FilterShape) -> Result<()> {
    if q.len() != shape.dim() {
        return Err(mismatch(format!(
            "q has length {}, shape needs {}",
            q.len(),
            shape.dim()
        )));
    }
    if c.channels() != shape.m {
        return Err(mismatch(format!(
            "frame has {} channels, filters expect {}",
            c.channels(),
            shape.m
        )));
    }
    Ok(())
}

/// Filters as a `(m k^2) x n` matrix, one column per feature.
fn filter_matrix(q: &DVector<f64>, shape: FilterShape) -> DMatrix<f64> {
    DMatrix::from_column_slice(shape.block_dim(), shape.n, q.as_slice())
}

/// Stabilized softmax.
pub fn softmax(a: &[f64]) -> Vec<f64> {
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = a.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn softmax_rows(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    for mut row in out.row_iter_mut() {
        let vals: Vec<f64> = row.iter().copied().collect();
        for (dst, v) in row.iter_mut().zip(softmax(&vals)) {
            *dst = v;
        }
    }
    out
}

/// Activations `A_i(x) = sum_{j, xi} phi_{i j xi} C_j(x - xi)` and their
/// softmax.
pub fn activations(q: &DVector<f64>, c: &ColorField, shape: FilterShape) -> Result<FeatureField> {
    check_shape(q, c, shape)?;
    let view = PlaneView::from(c);
    let filters = filter_matrix(q, shape);
    let blocks: Vec<DMatrix<f64>> = row_partitions(c.height())
        .into_par_iter()
        .map(|rows| patch_matrix_rows(&view, shape.k, rows) * &filters)
        .collect();
    let mut a = DMatrix::zeros(c.pixel_count(), shape.n);
    let mut start = 0;
    for b in blocks {
        a.rows_mut(start, b.nrows()).copy_from(&b);
        start += b.nrows();
    }
    let probs = softmax_rows(&a);
    Ok(FeatureField {
        width: c.width(),
        height: c.height(),
        activations: a,
        probs,
    })
}

fn check_attention(f: &FeatureField, g: &AttentionMap) -> Result<()> {
    if f.width != g.width() || f.height != g.height() {
        return Err(mismatch("attention map does not match the feature field"));
    }
    Ok(())
}

/// Attention-weighted symbol probabilities `p_i = <Phi_i>_g`.
pub fn symbol_probabilities(f: &FeatureField, g: &AttentionMap) -> Result<Vec<f64>> {
    check_attention(f, g)?;
    let w = DVector::from_column_slice(g.weights());
    Ok(f.probs.tr_mul(&w).as_slice().to_vec())
}

/// `U = 1/2 sum_i p_i^2 - lambda_c/2 sum_i <Phi_i^2>_g` for given features.
pub fn potential_from_features(f: &FeatureField, g: &AttentionMap, lambda_c: f64) -> Result<f64> {
    let p = symbol_probabilities(f, g)?;
    let w = g.weights();
    let mut second = 0.0;
    for (pix, row) in f.probs.row_iter().enumerate() {
        second += w[pix] * row.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(0.5 * p.iter().map(|v| v * v).sum::<f64>() - 0.5 * lambda_c * second)
}

pub fn potential_u(
    q: &DVector<f64>,
    c: &ColorField,
    g: &AttentionMap,
    shape: FilterShape,
    lambda_c: f64,
) -> Result<f64> {
    potential_from_features(&activations(q, c, shape)?, g, lambda_c)
}

/// Exact gradient of [`potential_u`] with respect to `q`.
pub fn grad_u(
    q: &DVector<f64>,
    c: &ColorField,
    g: &AttentionMap,
    shape: FilterShape,
    lambda_c: f64,
) -> Result<DVector<f64>> {
    let features = activations(q, c, shape)?;
    grad_u_with_features(&features, c, g, shape, lambda_c)
}

/// Gradient reusing activations already computed for this frame.
pub fn grad_u_with_features(
    features: &FeatureField,
    c: &ColorField,
    g: &AttentionMap,
    shape: FilterShape,
    lambda_c: f64,
) -> Result<DVector<f64>> {
    if c.channels() != shape.m || features.n() != shape.n {
        return Err(mismatch("features, frame and filter shape disagree"));
    }
    let p = symbol_probabilities(features, g)?;
    let w = g.weights();
    let n = shape.n;

    // dU/dA_r(x) = Phi_r (G_r - sum_i G_i Phi_i), G_i = g (p_i - lambda_c Phi_i)
    let mut b = DMatrix::zeros(features.pixel_count(), n);
    for (pix, phi) in features.probs.row_iter().enumerate() {
        let gi: Vec<f64> = (0..n).map(|i| w[pix] * (p[i] - lambda_c * phi[i])).collect();
        let mix: f64 = (0..n).map(|i| gi[i] * phi[i]).sum();
        for r in 0..n {
            b[(pix, r)] = phi[r] * (gi[r] - mix);
        }
    }

    let view = PlaneView::from(c);
    let width = c.width();
    let partials: Vec<DMatrix<f64>> = row_partitions(c.height())
        .into_par_iter()
        .map(|rows| {
            let start = rows.start * width;
            let len = rows.len() * width;
            let patches = patch_matrix_rows(&view, shape.k, rows);
            patches.tr_mul(&b.rows(start, len))
        })
        .collect();
    let mut grad = DMatrix::zeros(shape.block_dim(), n);
    for part in partials {
        grad += part;
    }
    Ok(DVector::from_column_slice(grad.as_slice()))
}

fn entropy(p: impl IntoIterator<Item = f64>) -> f64 {
    p.into_iter().filter(|v| *v > 0.0).map(|v| -v * v.ln()).sum()
}

/// Normalized mutual information between pixels and symbols over a set of
/// frames: `[H(mean Phi) - mean H(Phi)] / ln n`.
pub fn mi_index(frames: &[FeatureField], g: &AttentionMap) -> Result<f64> {
    let first = frames.first().ok_or_else(|| invalid("MI needs at least one frame"))?;
    let n = first.n();
    let mut pbar = vec![0.0; n];
    let mut cond = 0.0;
    for f in frames {
        if f.n() != n {
            return Err(mismatch("frames carry different feature counts"));
        }
        check_attention(f, g)?;
        for (pix, row) in f.probs.row_iter().enumerate() {
            let wx = g.weights()[pix];
            for (acc, v) in pbar.iter_mut().zip(row.iter()) {
                *acc += wx * v;
            }
            cond += wx * entropy(row.iter().copied());
        }
    }
    if n < 2 {
        return Ok(0.0);
    }
    let count = frames.len() as f64;
    let mi = entropy(pbar.iter().map(|v| v / count)) - cond / count;
    Ok((mi / (n as f64).ln()).max(0.0))
}

/// Temporal density `h(t)` weighting the causal probability estimate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TemporalDensity {
    /// The dissipation weight `theta e^{theta t} / (e^{theta T} - 1)`.
    Dissipation { theta: f64, horizon: f64 },
    /// `rate e^{-rate t}`, unit mass on `[0, inf)`.
    Exponential { rate: f64 },
}

impl TemporalDensity {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            TemporalDensity::Dissipation { theta, horizon } => dissipation_weight(t, theta, horizon).0,
            TemporalDensity::Exponential { rate } => rate * (-rate * t).exp(),
        }
    }

    /// Mass `int_t^{t+dt} h`.
    pub fn mass(&self, t: f64, dt: f64) -> f64 {
        match *self {
            TemporalDensity::Dissipation { theta, horizon } => {
                (theta * t).exp() * (theta * dt).exp_m1() / (theta * horizon).exp_m1()
            }
            TemporalDensity::Exponential { rate } => (-rate * t).exp() * -(-rate * dt).exp_m1(),
        }
    }
}

/// Running estimate `s_i(t) = int_0^t h(tau) <Phi_i>_g dtau`.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalEstimator {
    pub s: Vec<f64>,
    pub alpha: f64,
    pub t: f64,
    pub density: TemporalDensity,
}

impl CausalEstimator {
    pub fn new(n: usize, alpha: f64, density: TemporalDensity) -> Self {
        Self {
            s: vec![0.0; n],
            alpha,
            t: 0.0,
            density,
        }
    }

    /// Weighted constraint term `alpha (s_dot - h <Phi>)^2` for a candidate
    /// derivative.
    pub fn constraint_penalty(&self, s_dot: &[f64], probs: &[f64]) -> f64 {
        let h = self.density.at(self.t);
        self.alpha * s_dot.iter().zip(probs).map(|(sd, p)| (sd - h * p).powi(2)).sum::<f64>()
    }
}

/// One step of `s_dot = h(t) <Phi>_g` holding the frame fixed over `dt` and
/// integrating `h` exactly.
pub fn causal_update(
    est: &CausalEstimator,
    frame: &FeatureField,
    g: &AttentionMap,
    dt: f64,
) -> Result<CausalEstimator> {
    if dt <= 0.0 {
        return Err(invalid("dt must be positive"));
    }
    let p = symbol_probabilities(frame, g)?;
    if p.len() != est.s.len() {
        return Err(mismatch("estimator and frame feature counts differ"));
    }
    let w = est.density.mass(est.t, dt);
    let mut next = est.clone();
    for (s, pi) in next.s.iter_mut().zip(p) {
        *s += w * pi;
    }
    next.t += dt;
    Ok(next)
}

/// `sum_i |s_i(T)^2 - (1/T) int_0^T s_i^2|` from the estimates recorded
/// after each of the steps of size `dt`.
pub fn consistency_gap(history: &[Vec<f64>], dt: f64) -> f64 {
    let Some(last) = history.last() else {
        return 0.0;
    };
    let horizon = history.len() as f64 * dt;
    (0..last.len())
        .map(|i| {
            let integral: f64 = history.iter().map(|s| dt * s[i] * s[i]).sum();
            (last[i] * last[i] - integral / horizon).abs()
        })
        .sum()
}
