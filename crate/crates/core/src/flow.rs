//! Optical flow and the temporal / advective derivative fields.
//!
//! Flow is expressed in pixels per second: the per-frame displacement
//! divided by the frame step `dt`. Component `u` runs along columns (x),
//! `v` along rows (y).

use std::path::Path;
use std::str::FromStr;

use crate::error::{invalid, mismatch, MvqError, Result};
use crate::signal::ColorField;

pub const FLOW_MAGIC: &[u8; 4] = b"MVF1";
const FLOW_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != width * height || v.len() != width * height {
            return Err(mismatch(format!(
                "flow components must have {} entries",
                width * height
            )));
        }
        if let Some(p) = u.iter().zip(&v).position(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(MvqError::NonFiniteFlow { frame: 0, pixel: p });
        }
        Ok(Self { width, height, u, v })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    pub fn uniform(width: usize, height: usize, u: f64, v: f64) -> Self {
        Self {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn matches(&self, field: &ColorField) -> bool {
        self.width == field.width() && self.height == field.height()
    }
}

/// Per-pixel, per-channel rate field (intensity per second).
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeField {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl DerivativeField {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.width * self.height;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn rms(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        (self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64).sqrt()
    }
}

/// Central differences in the interior, one-sided at the borders.
pub fn spatial_gradient(plane: &[f64], width: usize, height: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; plane.len()];
    let mut gy = vec![0.0; plane.len()];
    let at = |r: usize, c: usize| plane[r * width + c];
    for r in 0..height {
        for c in 0..width {
            let i = r * width + c;
            gx[i] = if width < 2 {
                0.0
            } else if c == 0 {
                at(r, 1) - at(r, 0)
            } else if c == width - 1 {
                at(r, c) - at(r, c - 1)
            } else {
                0.5 * (at(r, c + 1) - at(r, c - 1))
            };
            gy[i] = if height < 2 {
                0.0
            } else if r == 0 {
                at(1, c) - at(0, c)
            } else if r == height - 1 {
                at(r, c) - at(r - 1, c)
            } else {
                0.5 * (at(r + 1, c) - at(r - 1, c))
            };
        }
    }
    (gx, gy)
}

fn neighbour_mean(field: &[f64], width: usize, height: usize) -> Vec<f64> {
    let mut out = vec![0.0; field.len()];
    for r in 0..height {
        let up = r.saturating_sub(1);
        let down = (r + 1).min(height - 1);
        for c in 0..width {
            let left = c.saturating_sub(1);
            let right = (c + 1).min(width - 1);
            out[r * width + c] = 0.25
                * (field[up * width + c]
                    + field[down * width + c]
                    + field[r * width + left]
                    + field[r * width + right]);
        }
    }
    out
}

/// Horn–Schunck flow by Jacobi iteration from a zero initial field.
///
/// Multi-channel frames are reduced to their channel average first. The
/// spatial gradient is the mean of the two frames' gradients, the temporal
/// derivative is the frame difference.
pub fn horn_schunck(
    prev: &ColorField,
    next: &ColorField,
    smoothness: f64,
    iterations: usize,
    dt: f64,
) -> Result<FlowField> {
    if !prev.same_shape(next) {
        return Err(mismatch("horn_schunck frames differ in shape"));
    }
    if !(smoothness > 0.0) || iterations == 0 || !(dt > 0.0) {
        return Err(invalid("horn_schunck needs smoothness > 0, iterations >= 1, dt > 0"));
    }
    let (w, h) = (prev.width(), prev.height());
    let a = prev.to_grayscale();
    let b = next.to_grayscale();
    let (ax, ay) = spatial_gradient(a.data(), w, h);
    let (bx, by) = spatial_gradient(b.data(), w, h);
    let ix: Vec<f64> = ax.iter().zip(&bx).map(|(p, q)| 0.5 * (p + q)).collect();
    let iy: Vec<f64> = ay.iter().zip(&by).map(|(p, q)| 0.5 * (p + q)).collect();
    let it: Vec<f64> = b.data().iter().zip(a.data()).map(|(q, p)| q - p).collect();
    let alpha2 = smoothness * smoothness;

    let mut u = vec![0.0; w * h];
    let mut v = vec![0.0; w * h];
    for _ in 0..iterations {
        let ub = neighbour_mean(&u, w, h);
        let vb = neighbour_mean(&v, w, h);
        for i in 0..w * h {
            let common = (ix[i] * ub[i] + iy[i] * vb[i] + it[i]) / (alpha2 + ix[i] * ix[i] + iy[i] * iy[i]);
            u[i] = ub[i] - ix[i] * common;
            v[i] = vb[i] - iy[i] * common;
        }
    }
    u.iter_mut().for_each(|x| *x /= dt);
    v.iter_mut().for_each(|x| *x /= dt);
    FlowField::new(w, h, u, v)
}

/// Returns `(cdot, adv)`: the forward temporal difference `(cur - prev)/dt`
/// and the advective term `u * dC/dx + v * dC/dy` evaluated on `cur`.
pub fn material_derivative(
    prev: &ColorField,
    cur: &ColorField,
    flow: &FlowField,
    dt: f64,
) -> Result<(DerivativeField, DerivativeField)> {
    if !prev.same_shape(cur) || !flow.matches(cur) {
        return Err(mismatch("material_derivative inputs differ in shape"));
    }
    if !(dt > 0.0) {
        return Err(invalid("dt must be positive"));
    }
    let (w, h, m) = (cur.width(), cur.height(), cur.channels());
    let cdot: Vec<f64> = cur.data().iter().zip(prev.data()).map(|(c, p)| (c - p) / dt).collect();
    let mut adv = Vec::with_capacity(w * h * m);
    for c in 0..m {
        let (gx, gy) = spatial_gradient(cur.channel(c), w, h);
        adv.extend((0..w * h).map(|i| flow.u[i] * gx[i] + flow.v[i] * gy[i]));
    }
    Ok((
        DerivativeField {
            width: w,
            height: h,
            channels: m,
            data: cdot,
        },
        DerivativeField {
            width: w,
            height: h,
            channels: m,
            data: adv,
        },
    ))
}

pub fn encode_flow(flows: &[FlowField]) -> Result<Vec<u8>> {
    let (w, h) = flows.first().map(|f| (f.width, f.height)).unwrap_or((0, 0));
    let mut out = Vec::with_capacity(FLOW_HEADER_LEN + flows.len() * w * h * 8);
    out.extend_from_slice(FLOW_MAGIC);
    for v in [w, h, flows.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for (i, f) in flows.iter().enumerate() {
        if f.width != w || f.height != h {
            return Err(mismatch(format!("flow frame {i} shape differs from frame 0")));
        }
        for p in 0..w * h {
            out.extend_from_slice(&(f.u[p] as f32).to_le_bytes());
            out.extend_from_slice(&(f.v[p] as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_flow(bytes: &[u8]) -> Result<Vec<FlowField>> {
    if bytes.len() < 4 || &bytes[..4] != FLOW_MAGIC {
        return Err(MvqError::MalformedHeader {
            offset: 0,
            reason: "missing MVF1 magic".into(),
        });
    }
    if bytes.len() < FLOW_HEADER_LEN {
        return Err(MvqError::MalformedHeader {
            offset: bytes.len(),
            reason: format!("header needs {FLOW_HEADER_LEN} bytes"),
        });
    }
    let word = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize;
    let (w, h, frames) = (word(4), word(8), word(12));
    if frames > 0 && (w == 0 || h == 0) {
        return Err(MvqError::MalformedHeader {
            offset: 4,
            reason: "zero flow dimensions".into(),
        });
    }
    let frame_len = w * h * 8;
    let expected = FLOW_HEADER_LEN + frames * frame_len;
    if bytes.len() != expected {
        return Err(MvqError::Truncated {
            offset: FLOW_HEADER_LEN,
            expected,
            actual: bytes.len(),
        });
    }
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let base = FLOW_HEADER_LEN + f * frame_len;
        let mut u = Vec::with_capacity(w * h);
        let mut v = Vec::with_capacity(w * h);
        for p in 0..w * h {
            let o = base + 8 * p;
            let a = f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
            let b = f32::from_le_bytes([bytes[o + 4], bytes[o + 5], bytes[o + 6], bytes[o + 7]]);
            if !a.is_finite() || !b.is_finite() {
                return Err(MvqError::NonFiniteFlow { frame: f, pixel: p });
            }
            u.push(a as f64);
            v.push(b as f64);
        }
        out.push(FlowField {
            width: w,
            height: h,
            u,
            v,
        });
    }
    Ok(out)
}

pub fn load_flow_file(path: impl AsRef<Path>) -> Result<Vec<FlowField>> {
    decode_flow(&std::fs::read(path)?)
}

pub fn write_flow_file(path: impl AsRef<Path>, flows: &[FlowField]) -> Result<()> {
    std::fs::write(path, encode_flow(flows)?)?;
    Ok(())
}

/// Where per-frame flow comes from: estimated in-process or read from an
/// `MVF1` file. Parses from `internal` or `file:<path>`.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FlowSource {
    #[default]
    Internal,
    File(std::path::PathBuf),
}

impl FromStr for FlowSource {
    type Err = MvqError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "internal" {
            Ok(FlowSource::Internal)
        } else if let Some(p) = s.strip_prefix("file:") {
            if p.is_empty() {
                return Err(invalid("flow source file: needs a path"));
            }
            Ok(FlowSource::File(p.into()))
        } else {
            Err(invalid(format!(
                "unknown flow source '{s}', expected internal or file:<path>"
            )))
        }
    }
}

impl TryFrom<String> for FlowSource {
    type Error = MvqError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FlowSource> for String {
    fn from(f: FlowSource) -> String {
        match f {
            FlowSource::Internal => "internal".into(),
            FlowSource::File(p) => format!("file:{}", p.display()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ramp(w: usize, h: usize, shift: f64) -> ColorField {
        let a = 1.0 / (w as f64 + 4.0);
        ColorField::from_fn(w, h, 1, |_, _, c| a * (c as f64 + 2.0 - shift)).unwrap()
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let f = crate::signal::synth_texture(5, 12, 9, 1);
        let flow = horn_schunck(&f, &f, 0.1, 50, 0.04).unwrap();
        assert!(flow.u().iter().chain(flow.v()).all(|x| *x == 0.0));
    }

    #[test]
    fn recovers_translating_ramp() {
        let dt = 0.04;
        let (w, h) = (20, 12);
        let flow = horn_schunck(&ramp(w, h, 0.0), &ramp(w, h, 1.0), 0.05, 400, dt).unwrap();
        let target = 1.0 / dt;
        for r in 2..h - 2 {
            for c in 2..w - 2 {
                let i = r * w + c;
                assert!((flow.u()[i] - target).abs() <= 0.2 * target, "u={}", flow.u()[i]);
                assert!(flow.v()[i].abs() <= 0.2 * target);
            }
        }
    }

    fn variance(x: &[f64]) -> f64 {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
    }

    #[test]
    fn strong_smoothness_flattens_flow() {
        let clip = crate::signal::synth_translating_texture(2, (1.0, 0.0), 2, 16, 12, 1);
        let loose = horn_schunck(&clip[0], &clip[1], 0.01, 100, 0.04).unwrap();
        let stiff = horn_schunck(&clip[0], &clip[1], 100.0, 100, 0.04).unwrap();
        assert!(variance(stiff.u()) < 1e-3 * variance(loose.u()));
    }

    #[test]
    fn flow_invariant_to_intensity_offset() {
        let clip = crate::signal::synth_translating_texture(9, (1.0, 0.0), 2, 14, 10, 1);
        let lift = |f: &ColorField| {
            ColorField::new(
                f.width(),
                f.height(),
                1,
                f.data().iter().map(|v| v * 0.8 + 0.15).collect(),
            )
            .unwrap()
        };
        let base = |f: &ColorField| {
            ColorField::new(f.width(), f.height(), 1, f.data().iter().map(|v| v * 0.8).collect()).unwrap()
        };
        let a = horn_schunck(&base(&clip[0]), &base(&clip[1]), 0.2, 60, 0.04).unwrap();
        let b = horn_schunck(&lift(&clip[0]), &lift(&clip[1]), 0.2, 60, 0.04).unwrap();
        for (x, y) in a.u().iter().zip(b.u()).chain(a.v().iter().zip(b.v())) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn horn_schunck_rejects_mismatch() {
        let a = ColorField::zeros(4, 4, 1);
        let b = ColorField::zeros(5, 4, 1);
        assert!(matches!(
            horn_schunck(&a, &b, 1.0, 1, 0.04),
            Err(MvqError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn static_frames_have_zero_cdot_and_zero_flow_zero_adv() {
        let f = crate::signal::synth_texture(1, 8, 8, 2);
        let (cdot, adv) = material_derivative(&f, &f, &FlowField::uniform(8, 8, 3.0, -2.0), 0.04).unwrap();
        assert!(cdot.data.iter().all(|v| *v == 0.0));
        assert!(adv.data.iter().any(|v| *v != 0.0));
        let g = crate::signal::synth_texture(2, 8, 8, 2);
        let (_, adv) = material_derivative(&f, &g, &FlowField::zeros(8, 8), 0.04).unwrap();
        assert!(adv.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn transport_equation_holds_on_smooth_translation() {
        // one wavelength across 128 columns keeps central differences accurate
        let (w, h, dt) = (128, 16, 0.04);
        let wave = |shift: f64| {
            ColorField::from_fn(w, h, 1, |_, r, c| {
                0.5 + 0.3 * (2.0 * PI * (c as f64 - shift) / w as f64).sin()
                    + 0.1 * (2.0 * PI * r as f64 / h as f64).cos()
            })
            .unwrap()
        };
        let prev = wave(0.0);
        let cur = wave(1.0);
        let flow = FlowField::uniform(w, h, 1.0 / dt, 0.0);
        let (cdot, adv) = material_derivative(&prev, &cur, &flow, dt).unwrap();
        let mut res = 0.0;
        let mut base = 0.0;
        let mut count = 0.0;
        for r in 1..h - 1 {
            for c in 1..w - 1 {
                let i = r * w + c;
                res += (cdot.data[i] + adv.data[i]).powi(2);
                base += cdot.data[i].powi(2);
                count += 1.0;
            }
        }
        let ratio = (res / count).sqrt() / (base / count).sqrt();
        assert!(ratio <= 0.05, "ratio {ratio}");
    }

    #[test]
    fn material_derivative_is_linear_in_frames() {
        let a = crate::signal::synth_texture(4, 9, 7, 1);
        let b = crate::signal::synth_texture(5, 9, 7, 1);
        let half = |f: &ColorField| ColorField::new(9, 7, 1, f.data().iter().map(|v| 0.5 * v).collect()).unwrap();
        let flow = FlowField::uniform(9, 7, 2.0, 1.0);
        let (c1, a1) = material_derivative(&a, &b, &flow, 0.04).unwrap();
        let (c2, a2) = material_derivative(&half(&a), &half(&b), &flow, 0.04).unwrap();
        for (x, y) in c1.data.iter().zip(&c2.data).chain(a1.data.iter().zip(&a2.data)) {
            assert!((0.5 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn flow_file_round_trip_and_zeros() {
        let flows = vec![FlowField::zeros(3, 2), FlowField::uniform(3, 2, 1.5, -0.25)];
        let bytes = encode_flow(&flows).unwrap();
        let back = decode_flow(&bytes).unwrap();
        assert_eq!(back, flows);
        assert!(back[0].u().iter().all(|x| *x == 0.0));
        assert_eq!(encode_flow(&back).unwrap(), bytes);
    }

    #[test]
    fn flow_file_nan_is_located() {
        let flows = vec![FlowField::zeros(3, 2), FlowField::zeros(3, 2)];
        let mut bytes = encode_flow(&flows).unwrap();
        let o = 16 + 48 + 8 * 4 + 4;
        bytes[o..o + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        match decode_flow(&bytes) {
            Err(MvqError::NonFiniteFlow { frame, pixel }) => assert_eq!((frame, pixel), (1, 4)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn flow_source_parsing() {
        assert_eq!("internal".parse::<FlowSource>().unwrap(), FlowSource::Internal);
        assert_eq!(
            "file:/tmp/x.mvf".parse::<FlowSource>().unwrap(),
            FlowSource::File("/tmp/x.mvf".into())
        );
        assert!("opencv".parse::<FlowSource>().is_err());
    }
}
