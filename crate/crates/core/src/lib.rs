//! Online unsupervised learning of convolutional filter banks from a video
//! stream.
//!
//! Filters evolve by integrating a fourth-order Euler–Lagrange system whose
//! forcing combines an information-based potential (softmax features spread
//! over the retina, confident at each pixel) with a motion-coherence penalty
//! built from optical flow. The crate also ships the parameter-design toolkit
//! used to certify the free dynamics and to design signal-free reset
//! intervals, and a numerical verifier for Gaussian mollifier kernels.
//!
//! Modules:
//!
//! - [`signal`]: frames, attention, blurring plan, raw video IO, synthetic clips
//! - [`flow`]: Horn–Schunck flow, flow files, material derivatives
//! - [`discretization`]: patch vectors, motion matrices, block lifts
//! - [`potential`]: activations, softmax, potential and gradient, MI metrics
//! - [`dynamics`]: Euler–Lagrange integrator, resets, boundary residuals
//! - [`stability`]: coercivity, characteristic quartic, reset-interval design
//! - [`mollifier`]: Hermite polynomials and Gaussian mollifier checks
//! - [`pipeline`]: layer training, stacking, metrics, feature export

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod discretization;
pub mod dynamics;
pub mod error;
pub mod flow;
pub mod mollifier;
pub mod pipeline;
pub mod potential;
pub mod quadrature;
pub mod signal;
pub mod stability;

pub use discretization::{FilterShape, MotionMatrices};
pub use dynamics::{DynamicsParams, FilterState};
pub use error::{MvqError, Result};
pub use flow::{DerivativeField, FlowField};
pub use signal::{AttentionMap, BlurSchedule, ColorField};
