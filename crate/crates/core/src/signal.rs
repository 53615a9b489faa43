//! Frames, attention, the blurring plan, and raw video IO.
//!
//! Raw video layout: the 4-byte magic `MVQ1`, then little-endian `u32`
//! width, height, channels and frame count, then one byte per intensity,
//! frame-major, channel-major within a frame, rows top to bottom.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, mismatch, MvqError, Result};

pub const RAW_VIDEO_MAGIC: &[u8; 4] = b"MVQ1";
const RAW_HEADER_LEN: usize = 20;

/// An m-channel intensity grid at one instant, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorField {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ColorField {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(invalid(format!(
                "color field needs positive dimensions, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(mismatch(format!(
                "color field data has {} values, expected {}",
                data.len(),
                width * height * channels
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(invalid(format!("intensity {} at index {i} is outside [0, 1]", data[i])));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for c in 0..channels {
            for row in 0..height {
                for col in 0..width {
                    data.push(f(c, row, col));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.pixel_count();
        &self.data[c * plane..(c + 1) * plane]
    }

    #[inline]
    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.height + row) * self.width + col]
    }

    pub fn same_shape(&self, other: &ColorField) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Channel average, the grayscale conversion used for multi-channel sources.
    pub fn to_grayscale(&self) -> ColorField {
        let plane = self.pixel_count();
        let mut out = vec![0.0; plane];
        for c in 0..self.channels {
            for (o, v) in out.iter_mut().zip(self.channel(c)) {
                *o += v;
            }
        }
        let m = self.channels as f64;
        out.iter_mut().for_each(|v| *v /= m);
        ColorField {
            width: self.width,
            height: self.height,
            channels: 1,
            data: out,
        }
    }

    /// Cyclic shift: content moves `dx` columns right and `dy` rows down.
    pub fn shifted(&self, dx: i64, dy: i64) -> ColorField {
        let (w, h) = (self.width as i64, self.height as i64);
        let mut data = vec![0.0; self.data.len()];
        for c in 0..self.channels {
            for row in 0..self.height {
                let src_row = (row as i64 - dy).rem_euclid(h) as usize;
                for col in 0..self.width {
                    let src_col = (col as i64 - dx).rem_euclid(w) as usize;
                    data[(c * self.height + row) * self.width + col] = self.get(c, src_row, src_col);
                }
            }
        }
        ColorField { data, ..*self }
    }

    pub(crate) fn from_raw_unchecked(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        Self {
            width,
            height,
            channels,
            data,
        }
    }
}

/// Per-pixel attention weights, a probability distribution over the retina.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    width: usize,
    height: usize,
    weights: Vec<f64>,
}

impl AttentionMap {
    pub fn new(width: usize, height: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != width * height {
            return Err(mismatch(format!(
                "attention has {} weights for a {width}x{height} retina",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid("attention weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("attention weights sum to {total}, not 1")));
        }
        Ok(Self { width, height, weights })
    }

    /// All mass on one pixel.
    pub fn one_hot(width: usize, height: usize, row: usize, col: usize) -> Result<Self> {
        let mut weights = vec![0.0; width * height];
        let idx = row * width + col;
        if idx >= weights.len() {
            return Err(invalid(format!("pixel ({row}, {col}) outside retina")));
        }
        weights[idx] = 1.0;
        Self::new(width, height, weights)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Uniform attention: every pixel weighs the inverse of the frame area.
pub fn uniform_attention(width: usize, height: usize) -> Result<AttentionMap> {
    let area = width * height;
    if area == 0 {
        return Err(invalid("uniform attention needs a non-empty retina"));
    }
    Ok(AttentionMap {
        width,
        height,
        weights: vec![1.0 / area as f64; area],
    })
}

/// Level-of-detail plan: `tau` grows toward 1 and the blur width is
/// `(1 - tau) * delta` pixels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BlurSchedule {
    pub tau: f64,
    pub eta: f64,
    pub delta: f64,
}

impl BlurSchedule {
    pub const DEFAULT_ETA: f64 = 0.0005;
    pub const DEFAULT_DELTA: f64 = 9.0;

    pub fn new(tau: f64, eta: f64, delta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(invalid(format!("tau = {tau} outside [0, 1]")));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(invalid(format!("eta = {eta} outside [0, 1]")));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(invalid(format!("delta = {delta} must be nonnegative")));
        }
        Ok(Self { tau, eta, delta })
    }

    /// Starts from a null signal.
    pub fn starting(eta: f64, delta: f64) -> Result<Self> {
        Self::new(0.0, eta, delta)
    }

    /// No blurring at all: `tau = 1` is a fixed point.
    pub fn full_detail() -> Self {
        Self {
            tau: 1.0,
            eta: 0.0,
            delta: 0.0,
        }
    }

    pub fn sigma(&self) -> f64 {
        (1.0 - self.tau) * self.delta
    }
}

pub fn advance_tau(schedule: BlurSchedule) -> BlurSchedule {
    let tau = schedule.tau + schedule.eta * (1.0 - schedule.tau);
    BlurSchedule {
        tau: tau.min(1.0),
        ..schedule
    }
}

/// Normalized Gaussian taps truncated at three standard deviations.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if !(sigma > 0.0) {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Separable Gaussian blur of one plane with replicated edges.
pub fn blur_plane(plane: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let taps = gaussian_kernel(sigma);
    if taps.len() == 1 {
        return plane.to_vec();
    }
    let radius = (taps.len() / 2) as i64;
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;

    let mut horizontal = vec![0.0; plane.len()];
    for row in 0..height {
        let line = &plane[row * width..(row + 1) * width];
        for col in 0..width {
            let mut acc = 0.0;
            for (t, tap) in taps.iter().enumerate() {
                acc += tap * line[clamp(col as i64 + t as i64 - radius, width)];
            }
            horizontal[row * width + col] = acc;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for row in 0..height {
        for col in 0..width {
            let mut acc = 0.0;
            for (t, tap) in taps.iter().enumerate() {
                acc += tap * horizontal[clamp(row as i64 + t as i64 - radius, height) * width + col];
            }
            out[row * width + col] = acc;
        }
    }
    out
}

/// `tau` times the Gaussian blur of `raw` at width `(1 - tau) * delta`.
pub fn blur_frame(raw: &ColorField, schedule: &BlurSchedule) -> ColorField {
    let tau = schedule.tau.clamp(0.0, 1.0);
    if tau == 0.0 {
        return ColorField::zeros(raw.width, raw.height, raw.channels);
    }
    let sigma = (1.0 - tau) * schedule.delta;
    let mut data = Vec::with_capacity(raw.data.len());
    for c in 0..raw.channels {
        let blurred = blur_plane(raw.channel(c), raw.width, raw.height, sigma);
        data.extend(blurred.into_iter().map(|v| (tau * v).clamp(0.0, 1.0)));
    }
    ColorField::from_raw_unchecked(raw.width, raw.height, raw.channels, data)
}

/// Decodes an in-memory raw video.
pub fn decode_raw_video(bytes: &[u8]) -> Result<Vec<ColorField>> {
    if bytes.len() < 4 || &bytes[..4] != RAW_VIDEO_MAGIC {
        return Err(MvqError::MalformedHeader {
            offset: 0,
            reason: "missing MVQ1 magic".into(),
        });
    }
    if bytes.len() < RAW_HEADER_LEN {
        return Err(MvqError::MalformedHeader {
            offset: bytes.len(),
            reason: format!("header needs {RAW_HEADER_LEN} bytes, file has {}", bytes.len()),
        });
    }
    let field = |i: usize| -> usize {
        let o = 4 + 4 * i;
        u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
    };
    let (width, height, channels, frames) = (field(0), field(1), field(2), field(3));
    for (i, (name, v)) in [("width", width), ("height", height), ("channels", channels)]
        .iter()
        .enumerate()
    {
        if *v == 0 {
            return Err(MvqError::MalformedHeader {
                offset: 4 + 4 * i,
                reason: format!("{name} is zero"),
            });
        }
    }
    if frames == 0 {
        return Err(MvqError::ZeroFrames { offset: 16 });
    }
    let frame_len = width * height * channels;
    let expected = RAW_HEADER_LEN + frames * frame_len;
    let actual = bytes.len();
    if actual < expected {
        return Err(MvqError::Truncated {
            offset: RAW_HEADER_LEN + (actual - RAW_HEADER_LEN) / frame_len * frame_len,
            expected,
            actual,
        });
    }
    if actual > expected {
        return Err(MvqError::MalformedHeader {
            offset: expected,
            reason: format!("{} trailing bytes after the declared frames", actual - expected),
        });
    }
    Ok(bytes[RAW_HEADER_LEN..]
        .chunks_exact(frame_len)
        .map(|chunk| {
            let data = chunk.iter().map(|&b| b as f64 / 255.0).collect();
            ColorField::from_raw_unchecked(width, height, channels, data)
        })
        .collect())
}

pub fn encode_raw_video(frames: &[ColorField]) -> Result<Vec<u8>> {
    let first = frames
        .first()
        .ok_or_else(|| invalid("cannot encode an empty frame sequence"))?;
    let mut out = Vec::with_capacity(RAW_HEADER_LEN + frames.len() * first.data.len());
    out.extend_from_slice(RAW_VIDEO_MAGIC);
    for v in [first.width, first.height, first.channels, frames.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for (i, f) in frames.iter().enumerate() {
        if !f.same_shape(first) {
            return Err(mismatch(format!("frame {i} shape differs from frame 0")));
        }
        out.extend(f.data.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    Ok(out)
}

pub fn load_raw_video(path: impl AsRef<Path>) -> Result<Vec<ColorField>> {
    decode_raw_video(&std::fs::read(path)?)
}

pub fn write_raw_video(path: impl AsRef<Path>, frames: &[ColorField]) -> Result<()> {
    std::fs::write(path, encode_raw_video(frames)?)?;
    Ok(())
}

/// Smooth periodic texture made of a few low-frequency plane waves per
/// channel, mapped into `[0.1, 0.9]`.
pub fn synth_texture(seed: u64, width: usize, height: usize, channels: usize) -> ColorField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(width * height * channels);
    for _ in 0..channels {
        let waves: Vec<(f64, f64, f64, f64)> = (0..4)
            .map(|_| {
                let (fx, fy) = loop {
                    let fx = rng.gen_range(0..=2u32);
                    let fy = rng.gen_range(0..=2u32);
                    if fx + fy > 0 {
                        break (fx as f64, fy as f64);
                    }
                };
                (fx, fy, rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.5..1.0))
            })
            .collect();
        let norm: f64 = waves.iter().map(|w| w.3).sum();
        for row in 0..height {
            for col in 0..width {
                let v: f64 = waves
                    .iter()
                    .map(|&(fx, fy, phase, amp)| {
                        amp * (2.0 * PI * (fx * col as f64 / width as f64 + fy * row as f64 / height as f64) + phase)
                            .sin()
                    })
                    .sum();
                data.push(0.5 + 0.4 * v / norm);
            }
        }
    }
    ColorField::from_raw_unchecked(width, height, channels, data)
}

/// Frame `t` is frame 0 cyclically shifted by `round(t * velocity)` pixels.
/// Velocity is `(columns, rows)` per frame.
pub fn synth_translating_texture(
    seed: u64,
    velocity: (f64, f64),
    frames: usize,
    width: usize,
    height: usize,
    channels: usize,
) -> Vec<ColorField> {
    let base = synth_texture(seed, width, height, channels);
    (0..frames)
        .map(|t| {
            let dx = (t as f64 * velocity.0).round() as i64;
            let dy = (t as f64 * velocity.1).round() as i64;
            base.shifted(dx, dy)
        })
        .collect()
}
