//! Online training of one layer and sequential stacking of layers.

use nalgebra::DVector;
use serde::Serialize;

use super::config::{LayerConfig, ResetMode, RunConfig};
use super::metrics::MetricsRow;
use crate::discretization::{assemble_motion_matrices, motion_penalty, FilterShape, MotionMatrices};
use crate::dynamics::{el_fourth_derivative, euler_step, reset_apply, reset_check, FilterState};
use crate::error::{mismatch, MvqError, Result};
use crate::flow::{horn_schunck, load_flow_file, material_derivative, FlowField, FlowSource};
use crate::potential::{activations, grad_u_with_features, mi_index, potential_from_features, FeatureField};
use crate::signal::{advance_tau, blur_frame, uniform_attention, AttentionMap, ColorField};
use crate::stability::{default_reset_base, free_energy, reset_design, run_reset_interval};

/// A clip and the flow into each of its frames. `flows[i]` maps frame
/// `i - 1` (cyclically) onto frame `i`. Global frame indices wrap around,
/// which loops the clip.
#[derive(Debug, Clone)]
pub struct VideoSource {
    frames: Vec<ColorField>,
    flows: Vec<FlowField>,
}

impl VideoSource {
    pub fn new(frames: Vec<ColorField>, flows: Vec<FlowField>) -> Result<Self> {
        let first = frames.first().ok_or(MvqError::ZeroFrames { offset: 0 })?;
        if flows.len() != frames.len() {
            return Err(mismatch(format!(
                "{} frames but {} flow fields",
                frames.len(),
                flows.len()
            )));
        }
        for (i, (f, v)) in frames.iter().zip(&flows).enumerate() {
            if !f.same_shape(first) || !v.matches(f) {
                return Err(mismatch(format!("frame {i} or its flow differs in shape from frame 0")));
            }
        }
        Ok(Self { frames, flows })
    }

    /// Horn–Schunck flow between consecutive raw frames.
    pub fn with_internal_flow(frames: Vec<ColorField>, smoothness: f64, iterations: usize, dt: f64) -> Result<Self> {
        let len = frames.len();
        let flows = (0..len)
            .map(|i| horn_schunck(&frames[(i + len - 1) % len], &frames[i], smoothness, iterations, dt))
            .collect::<Result<Vec<_>>>()?;
        Self::new(frames, flows)
    }

    pub fn from_config(cfg: &RunConfig, frames: Vec<ColorField>, dt: f64) -> Result<Self> {
        match &cfg.flow {
            FlowSource::Internal => Self::with_internal_flow(frames, cfg.flow_smoothness, cfg.flow_iterations, dt),
            FlowSource::File(path) => Self::new(frames, load_flow_file(path)?),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[ColorField] {
        &self.frames
    }

    pub fn frame(&self, global: usize) -> &ColorField {
        &self.frames[global % self.frames.len()]
    }

    pub fn flow(&self, global: usize) -> &FlowField {
        &self.flows[global % self.flows.len()]
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn channels(&self) -> usize {
        self.frames[0].channels()
    }
}

/// A trained layer whose filters no longer change.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenLayer {
    pub shape: FilterShape,
    pub q: DVector<f64>,
}

impl FrozenLayer {
    pub fn features(&self, input: &ColorField) -> Result<FeatureField> {
        activations(&self.q, input, self.shape)
    }
}

/// Input of the layer above `lower`: the raw frame, or the softmax features
/// of the frozen stack as an `n`-channel frame.
pub fn layer_input(lower: &[FrozenLayer], raw: &ColorField) -> Result<ColorField> {
    let mut cur = raw.clone();
    for layer in lower {
        cur = layer.features(&cur)?.to_color_field()?;
    }
    Ok(cur)
}

/// Reset behaviour shared by all layers of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResetPolicy {
    pub mode: ResetMode,
    /// displacement budget of a designed interval
    pub eps: f64,
}

impl ResetPolicy {
    pub fn of(cfg: &RunConfig) -> Self {
        Self {
            mode: cfg.reset_mode,
            eps: cfg.reset_eps,
        }
    }
}

impl Default for ResetPolicy {
    fn default() -> Self {
        Self {
            mode: ResetMode::Zero,
            eps: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRun {
    pub shape: FilterShape,
    pub initial: FilterState,
    pub state: FilterState,
    pub metrics: Vec<MetricsRow>,
    pub resets: usize,
}

impl LayerRun {
    pub fn frozen(&self) -> FrozenLayer {
        FrozenLayer {
            shape: self.shape,
            q: self.state.q.clone(),
        }
    }
}

/// Trains one layer on global frames `start..start + frames` of `source`,
/// seen through the frozen `lower` stack. `init` defaults to
/// `FilterState::seeded(dim, layer.seed)`.
pub fn train_layer(
    layer: &LayerConfig,
    policy: ResetPolicy,
    lower: &[FrozenLayer],
    source: &VideoSource,
    start: usize,
    frames: usize,
    init: Option<FilterState>,
) -> Result<LayerRun> {
    layer.validate()?;
    let channels = lower.last().map(|l| l.shape.n).unwrap_or_else(|| source.channels());
    let shape = layer.shape(channels)?;
    let params = layer.dynamics()?;
    let free = params.free();
    let mut schedule = layer.schedule()?;
    let g = uniform_attention(source.width(), source.height())?;
    let reset_base = default_reset_base();

    let initial = match init {
        Some(s) if s.dim() != shape.dim() => {
            return Err(mismatch(format!(
                "initial state has {} entries, layer needs {}",
                s.dim(),
                shape.dim()
            )))
        }
        Some(s) => s,
        None => FilterState::seeded(shape.dim(), layer.seed),
    };
    let mut state = initial.clone();
    let mut metrics = Vec::with_capacity(frames);
    let mut resets = 0;
    let mut prev_input: Option<ColorField> = None;
    let mut prev_mats: Option<MotionMatrices> = None;

    for i in 0..frames {
        let frame = start + i;
        let input = blur_frame(&layer_input(lower, source.frame(frame))?, &schedule);
        let prev = prev_input.as_ref().unwrap_or(&input);
        let mats = if params.lambda_m > 0.0 {
            let (cdot, adv) = material_derivative(prev, &input, source.flow(frame), params.dt)?;
            Some(assemble_motion_matrices(&input, &cdot, &adv, &g, shape.k)?.with_rates(prev_mats.as_ref(), params.dt))
        } else {
            None
        };

        let features = activations(&state.q, &input, shape)?;
        let grad = grad_u_with_features(&features, &input, &g, shape, params.lambda_c)?;
        let q4 = el_fourth_derivative(&state, &params, mats.as_ref(), &grad)?;
        let action_motion = match &mats {
            Some(m) => params.lambda_m * motion_penalty(m, &state.q, &state.q1)?,
            None => 0.0,
        };
        state = euler_step(&state, &q4, params.dt);
        if !state.is_finite() {
            return Err(MvqError::NonFiniteState {
                frame,
                detail: format!("max |grad U| = {:.3e}, max |q''''| = {:.3e}", grad.amax(), q4.amax()),
            });
        }

        let tau = schedule.tau;
        let reset = reset_check(&state, &params.eps);
        if reset {
            if policy.mode == ResetMode::BInterval {
                let design = reset_design(&state, policy.eps, &reset_base)?;
                let t = state.t;
                state = run_reset_interval(&state, &design)?;
                state.t = t;
            }
            (state, schedule) = reset_apply(&state, &schedule);
            resets += 1;
            prev_input = None;
            prev_mats = None;
        } else {
            prev_input = Some(input);
            prev_mats = mats;
        }

        metrics.push(MetricsRow {
            frame,
            t: state.t,
            mi_frame: mi_index(std::slice::from_ref(&features), &g)?,
            u: potential_from_features(&features, &g, params.lambda_c)?,
            action_reg: free_energy(&state, &free),
            action_motion,
            q_norm: state.q.norm(),
            reset_flag: reset,
            resets_per_1000: 1000.0 * resets as f64 / (i + 1) as f64,
            tau,
        });
        if !reset {
            schedule = advance_tau(schedule);
        }
    }

    Ok(LayerRun {
        shape,
        initial,
        state,
        metrics,
        resets,
    })
}

/// MI of frozen filters over one repetition of the clip at full detail.
pub fn batch_mi(lower: &[FrozenLayer], layer: &FrozenLayer, source: &VideoSource) -> Result<f64> {
    let g: AttentionMap = uniform_attention(source.width(), source.height())?;
    let features = source
        .frames()
        .iter()
        .map(|raw| layer.features(&layer_input(lower, raw)?))
        .collect::<Result<Vec<_>>>()?;
    mi_index(&features, &g)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub lambda_m: f64,
    pub batch_mi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutcome {
    /// configuration that was kept, with the selected `lambda_m`
    pub config: LayerConfig,
    pub start: usize,
    pub run: LayerRun,
    pub batch_mi: f64,
    /// every candidate tried when a grid was given
    pub sweep: Vec<SweepPoint>,
}

/// Trains the layers one after another. Layer `l` starts at the global frame
/// where layer `l - 1` stopped and sees it frozen.
pub fn run_multilayer(cfg: &RunConfig, source: &VideoSource) -> Result<Vec<LayerOutcome>> {
    cfg.validate()?;
    let policy = ResetPolicy::of(cfg);
    let mut frozen: Vec<FrozenLayer> = Vec::new();
    let mut outcomes = Vec::with_capacity(cfg.layers.len());
    let mut start = 0;
    for layer in &cfg.layers {
        let candidates: Vec<f64> = match &cfg.lambda_m_grid {
            Some(grid) => grid.clone(),
            None => vec![layer.lambda_m],
        };
        let mut best: Option<LayerOutcome> = None;
        let mut sweep = Vec::with_capacity(candidates.len());
        for lambda_m in candidates {
            let config = LayerConfig {
                lambda_m,
                ..layer.clone()
            };
            let run = train_layer(&config, policy, &frozen, source, start, layer.activation_frames, None)?;
            let mi = batch_mi(&frozen, &run.frozen(), source)?;
            sweep.push(SweepPoint { lambda_m, batch_mi: mi });
            if best.as_ref().is_none_or(|b| mi > b.batch_mi) {
                best = Some(LayerOutcome {
                    config,
                    start,
                    run,
                    batch_mi: mi,
                    sweep: Vec::new(),
                });
            }
        }
        let mut chosen = best.expect("at least one candidate");
        chosen.sweep = sweep;
        frozen.push(chosen.run.frozen());
        start += layer.activation_frames;
        outcomes.push(chosen);
    }
    Ok(outcomes)
}
