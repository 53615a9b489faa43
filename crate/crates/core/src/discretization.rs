//! Retina discretization: patch vectors, filter vectorization and the
//! motion matrices.
//!
//! A patch vector at pixel `x` lists `C_j(x - xi)` for every channel `j` and
//! every offset `xi` in the `k x k` filter support, channel-major then offset
//! row-major. Offsets falling outside the retina read as zero.
//!
//! The filter vector `q` stores the `n` per-feature segments back to back;
//! segment `i` uses the patch ordering, so the activation of feature `i` at
//! `x` is the dot product of segment `i` with the patch at `x`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{invalid, mismatch, Result};
use crate::flow::DerivativeField;
use crate::signal::{AttentionMap, ColorField};

/// Fixed partition count for pixel reductions; results depend on it but not
/// on the number of worker threads.
pub const ASSEMBLY_PARTITIONS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FilterShape {
    /// feature count
    pub n: usize,
    /// channel count
    pub m: usize,
    /// filter side in pixels
    pub k: usize,
}

impl FilterShape {
    pub fn new(n: usize, m: usize, k: usize) -> Result<Self> {
        if n == 0 || m == 0 || k == 0 {
            return Err(invalid(format!(
                "filter shape needs positive n, m, k; got {n}, {m}, {k}"
            )));
        }
        Ok(Self { n, m, k })
    }

    /// Length of one feature segment, `m * k^2`.
    pub fn block_dim(&self) -> usize {
        self.m * self.k * self.k
    }

    /// Length of `q`, `n * m * k^2`.
    pub fn dim(&self) -> usize {
        self.n * self.block_dim()
    }

    /// Flat position of coefficient `(feature, channel, row offset, col offset)`.
    pub fn index(&self, feature: usize, channel: usize, dr: usize, dc: usize) -> usize {
        ((feature * self.m + channel) * self.k + dr) * self.k + dc
    }
}

/// Filters `phi[i][j][xi]` as a tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub shape: FilterShape,
    coeffs: Vec<f64>,
}

impl FilterBank {
    pub fn new(shape: FilterShape, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != shape.dim() {
            return Err(mismatch(format!(
                "filter bank expects {} coefficients, got {}",
                shape.dim(),
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(invalid("filter coefficients must be finite"));
        }
        Ok(Self { shape, coeffs })
    }

    pub fn get(&self, feature: usize, channel: usize, dr: usize, dc: usize) -> f64 {
        self.coeffs[self.shape.index(feature, channel, dr, dc)]
    }

    pub fn pack(&self) -> DVector<f64> {
        DVector::from_vec(self.coeffs.clone())
    }

    pub fn unpack(shape: FilterShape, q: &DVector<f64>) -> Result<Self> {
        Self::new(shape, q.as_slice().to_vec())
    }
}

/// Borrowed multi-channel plane stack, shared by color and derivative fields.
#[derive(Debug, Clone, Copy)]
pub struct PlaneView<'a> {
    pub data: &'a [f64],
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl<'a> PlaneView<'a> {
    #[inline]
    fn value(&self, c: usize, row: i64, col: i64) -> f64 {
        if row < 0 || col < 0 || row >= self.height as i64 || col >= self.width as i64 {
            0.0
        } else {
            self.data[(c * self.height + row as usize) * self.width + col as usize]
        }
    }

    fn same_grid(&self, other: &PlaneView<'_>) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }
}

impl<'a> From<&'a ColorField> for PlaneView<'a> {
    fn from(f: &'a ColorField) -> Self {
        PlaneView {
            data: f.data(),
            width: f.width(),
            height: f.height(),
            channels: f.channels(),
        }
    }
}

impl<'a> From<&'a DerivativeField> for PlaneView<'a> {
    fn from(f: &'a DerivativeField) -> Self {
        PlaneView {
            data: &f.data,
            width: f.width,
            height: f.height,
            channels: f.channels,
        }
    }
}

fn fill_patch(view: &PlaneView<'_>, row: usize, col: usize, k: usize, out: &mut [f64]) {
    let mut idx = 0;
    for c in 0..view.channels {
        for dr in 0..k {
            for dc in 0..k {
                out[idx] = view.value(c, row as i64 - dr as i64, col as i64 - dc as i64);
                idx += 1;
            }
        }
    }
}

/// Patch vector at pixel `(row, col)`: entry `(j, dr, dc)` is
/// `C_j(row - dr, col - dc)`, zero outside the retina.
pub fn patch_vector<'a>(field: impl Into<PlaneView<'a>>, row: usize, col: usize, k: usize) -> DVector<f64> {
    let view = field.into();
    let mut out = DVector::zeros(view.channels * k * k);
    fill_patch(&view, row, col, k, out.as_mut_slice());
    out
}

/// Patch vectors of the pixel rows `rows`, one per matrix row, pixels in
/// row-major order.
pub fn patch_matrix_rows(view: &PlaneView<'_>, k: usize, rows: std::ops::Range<usize>) -> DMatrix<f64> {
    let d = view.channels * k * k;
    let npix = rows.len() * view.width;
    // column-major storage: fill the transpose then flip
    let mut t = DMatrix::zeros(d, npix);
    let mut p = 0;
    for row in rows {
        for col in 0..view.width {
            fill_patch(view, row, col, k, t.column_mut(p).as_mut_slice());
            p += 1;
        }
    }
    t.transpose()
}

pub fn patch_matrix(view: &PlaneView<'_>, k: usize) -> DMatrix<f64> {
    patch_matrix_rows(view, k, 0..view.height)
}

/// Row ranges of the fixed pixel partition.
pub(crate) fn row_partitions(height: usize) -> Vec<std::ops::Range<usize>> {
    let parts = ASSEMBLY_PARTITIONS.min(height).max(1);
    let base = height / parts;
    let extra = height % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}

/// Per-frame motion blocks of size `m k^2` together with their time rates.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionMatrices {
    /// Gram matrix of the patches, `sum_x g_x gamma gamma^T`
    pub m: DMatrix<f64>,
    /// `sum_x g_x D gamma^T` with `D` the material-derivative patch
    pub n: DMatrix<f64>,
    /// `sum_x g_x D D^T`
    pub o: DMatrix<f64>,
    pub m_dot: DMatrix<f64>,
    pub n_dot: DMatrix<f64>,
}

impl MotionMatrices {
    pub fn zeros(block_dim: usize) -> Self {
        let z = DMatrix::zeros(block_dim, block_dim);
        Self {
            m: z.clone(),
            n: z.clone(),
            o: z.clone(),
            m_dot: z.clone(),
            n_dot: z,
        }
    }

    pub fn block_dim(&self) -> usize {
        self.m.nrows()
    }

    /// Fills `m_dot` and `n_dot` from the previous frame's blocks.
    pub fn with_rates(mut self, prev: Option<&MotionMatrices>, dt: f64) -> Self {
        let (m_dot, n_dot) = rate_matrices(prev, &self, dt);
        self.m_dot = m_dot;
        self.n_dot = n_dot;
        self
    }
}

/// Assembles `M`, `N`, `O` for one frame. Rates are left at zero.
pub fn assemble_motion_matrices(
    c: &ColorField,
    cdot: &DerivativeField,
    adv: &DerivativeField,
    g: &AttentionMap,
    k: usize,
) -> Result<MotionMatrices> {
    let cv = PlaneView::from(c);
    let dv = PlaneView::from(cdot);
    let av = PlaneView::from(adv);
    if !cv.same_grid(&dv) || !cv.same_grid(&av) {
        return Err(mismatch("motion assembly fields differ in shape"));
    }
    if g.width() != c.width() || g.height() != c.height() {
        return Err(mismatch("attention map does not match the retina"));
    }
    let d = c.channels() * k * k;
    let width = c.width();
    let weights = g.weights();

    let partials: Vec<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> = row_partitions(c.height())
        .into_par_iter()
        .map(|rows| {
            let offset = rows.start * width;
            let gamma = patch_matrix_rows(&cv, k, rows.clone());
            let dpatch = patch_matrix_rows(&dv, k, rows.clone()) + patch_matrix_rows(&av, k, rows);
            let mut gamma_w = gamma.clone();
            let mut d_w = dpatch.clone();
            for p in 0..gamma.nrows() {
                let w = weights[offset + p];
                gamma_w.row_mut(p).scale_mut(w);
                d_w.row_mut(p).scale_mut(w);
            }
            (gamma_w.tr_mul(&gamma), d_w.tr_mul(&gamma), d_w.tr_mul(&dpatch))
        })
        .collect();

    let mut mats = MotionMatrices::zeros(d);
    for (m, n, o) in partials {
        mats.m += m;
        mats.n += n;
        mats.o += o;
    }
    symmetrize(&mut mats.m);
    symmetrize(&mut mats.o);
    Ok(mats)
}

fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Finite-difference rates `(cur - prev)/dt` of `M` and `N`; zero when there
/// is no previous frame.
pub fn rate_matrices(prev: Option<&MotionMatrices>, cur: &MotionMatrices, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    match prev {
        Some(p) => ((&cur.m - &p.m) / dt, (&cur.n - &p.n) / dt),
        None => {
            let d = cur.block_dim();
            (DMatrix::zeros(d, d), DMatrix::zeros(d, d))
        }
    }
}

fn check_lift(block: &DMatrix<f64>, v: &DVector<f64>) -> Result<usize> {
    let d = block.nrows();
    if block.ncols() != d || d == 0 || !v.len().is_multiple_of(d) {
        return Err(mismatch(format!(
            "cannot lift a {}x{} block onto a vector of length {}",
            block.nrows(),
            block.ncols(),
            v.len()
        )));
    }
    Ok(v.len() / d)
}

/// Applies `block` to every per-feature segment of `v`, i.e. multiplies by the
/// block-diagonal lift without forming it.
pub fn lift_apply(block: &DMatrix<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    let n = check_lift(block, v)?;
    let segments = DMatrix::from_column_slice(block.nrows(), n, v.as_slice());
    Ok(DVector::from_vec((block * segments).as_slice().to_vec()))
}

/// Same as [`lift_apply`] with the transposed block.
pub fn lift_apply_transposed(block: &DMatrix<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    let n = check_lift(block, v)?;
    let segments = DMatrix::from_column_slice(block.nrows(), n, v.as_slice());
    Ok(DVector::from_vec(block.tr_mul(&segments).as_slice().to_vec()))
}

/// Motion penalty `1/2 qdot M qdot + q N qdot + 1/2 q O q` with lifted blocks.
pub fn motion_penalty(mats: &MotionMatrices, q: &DVector<f64>, q_dot: &DVector<f64>) -> Result<f64> {
    let mq = lift_apply(&mats.m, q_dot)?;
    let nq = lift_apply(&mats.n, q_dot)?;
    let oq = lift_apply(&mats.o, q)?;
    Ok(0.5 * q_dot.dot(&mq) + q.dot(&nq) + 0.5 * q.dot(&oq))
}
