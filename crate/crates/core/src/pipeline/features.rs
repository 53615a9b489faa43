//! Per-pixel feature export in the "MVQF" format.
//!
//! Layout, little endian: magic `MVQF`, `u32` width, height, features per
//! pixel and frame count, then `f32` values ordered frame, row, column,
//! feature.

use std::path::Path;

use super::train::{layer_input, FrozenLayer};
use crate::error::{mismatch, MvqError, Result};
use crate::signal::ColorField;

pub const FEATURE_MAGIC: &[u8; 4] = b"MVQF";
const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    pub width: usize,
    pub height: usize,
    pub features: usize,
    pub frames: usize,
    pub data: Vec<f32>,
}

impl FeatureVolume {
    pub fn pixel(&self, frame: usize, row: usize, col: usize) -> &[f32] {
        let start = ((frame * self.height + row) * self.width + col) * self.features;
        &self.data[start..start + self.features]
    }
}

/// Concatenated softmax features of every layer in `stack`, layer 1 first.
pub fn export_features(stack: &[FrozenLayer], frames: &[ColorField]) -> Result<FeatureVolume> {
    let first = frames.first().ok_or(MvqError::ZeroFrames { offset: 0 })?;
    if stack.is_empty() {
        return Err(mismatch("feature export needs at least one layer"));
    }
    let mut expected = first.channels();
    for (l, layer) in stack.iter().enumerate() {
        if layer.shape.m != expected || layer.q.len() != layer.shape.dim() {
            return Err(mismatch(format!(
                "layer {} expects {} input channels, receives {expected}",
                l + 1,
                layer.shape.m
            )));
        }
        expected = layer.shape.n;
    }
    let (w, h) = (first.width(), first.height());
    let total: usize = stack.iter().map(|l| l.shape.n).sum();
    let mut data = vec![0f32; frames.len() * w * h * total];
    for (f, raw) in frames.iter().enumerate() {
        if !raw.same_shape(first) {
            return Err(mismatch(format!("frame {f} differs in shape from frame 0")));
        }
        let mut offset = 0;
        for l in 0..stack.len() {
            let input = layer_input(&stack[..l], raw)?;
            let feats = stack[l].features(&input)?;
            let n = stack[l].shape.n;
            for pix in 0..w * h {
                let base = (f * w * h + pix) * total + offset;
                for i in 0..n {
                    data[base + i] = feats.probs[(pix, i)] as f32;
                }
            }
            offset += n;
        }
    }
    Ok(FeatureVolume {
        width: w,
        height: h,
        features: total,
        frames: frames.len(),
        data,
    })
}

pub fn encode_features(v: &FeatureVolume) -> Result<Vec<u8>> {
    if v.data.len() != v.frames * v.width * v.height * v.features {
        return Err(mismatch("feature payload does not match the declared sizes"));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * v.data.len());
    out.extend_from_slice(FEATURE_MAGIC);
    for x in [v.width, v.height, v.features, v.frames] {
        out.extend_from_slice(&(x as u32).to_le_bytes());
    }
    for x in &v.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureVolume> {
    if bytes.len() < 4 || &bytes[..4] != FEATURE_MAGIC {
        return Err(MvqError::MalformedHeader {
            offset: 0,
            reason: "missing MVQF magic".into(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(MvqError::MalformedHeader {
            offset: bytes.len(),
            reason: format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
        });
    }
    let field = |i: usize| {
        let o = 4 + 4 * i;
        u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
    };
    let (width, height, features, frames) = (field(0), field(1), field(2), field(3));
    if width == 0 || height == 0 || features == 0 {
        return Err(MvqError::MalformedHeader {
            offset: 4,
            reason: "zero width, height or feature count".into(),
        });
    }
    if frames == 0 {
        return Err(MvqError::ZeroFrames { offset: 16 });
    }
    let expected = HEADER_LEN + 4 * frames * width * height * features;
    if bytes.len() < expected {
        return Err(MvqError::Truncated {
            offset: bytes.len(),
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(MvqError::MalformedHeader {
            offset: expected,
            reason: format!("{} trailing bytes", bytes.len() - expected),
        });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(FeatureVolume {
        width,
        height,
        features,
        frames,
        data,
    })
}

pub fn write_features(path: impl AsRef<Path>, v: &FeatureVolume) -> Result<()> {
    std::fs::write(path, encode_features(v)?)?;
    Ok(())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureVolume> {
    decode_features(&std::fs::read(path)?)
}
