//! Versioned JSON run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::presets::Preset;
use crate::discretization::FilterShape;
use crate::dynamics::{DynamicsParams, FreeParams, DEFAULT_DT};
use crate::error::{MvqError, Result};
use crate::flow::FlowSource;
use crate::signal::BlurSchedule;

pub const CONFIG_VERSION: u32 = 1;

/// What happens when a derivative norm crosses its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetMode {
    /// zero the derivatives at once
    #[default]
    Zero,
    /// run a designed signal-free interval of the rescaled free dynamics
    BInterval,
}

fn default_lambda_c() -> f64 {
    1.0
}
fn default_dt() -> f64 {
    DEFAULT_DT
}
fn default_eta() -> f64 {
    BlurSchedule::DEFAULT_ETA
}
fn default_delta() -> f64 {
    BlurSchedule::DEFAULT_DELTA
}
fn default_smoothness() -> f64 {
    1.0
}
fn default_flow_iterations() -> usize {
    50
}
fn default_reset_eps() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub n: usize,
    pub k: usize,
    #[serde(default)]
    pub lambda_m: f64,
    #[serde(default = "default_lambda_c")]
    pub lambda_c: f64,
    /// frames this layer trains before the next one starts
    pub activation_frames: usize,
    #[serde(default)]
    pub preset: Preset,
    /// explicit free parameters; overrides `preset`
    #[serde(default)]
    pub params: Option<FreeParams>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// defaults to 45000 frames
    #[serde(default)]
    pub horizon: Option<f64>,
    /// defaults to `300 n` each
    #[serde(default)]
    pub eps: Option<[f64; 3]>,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
}

impl LayerConfig {
    pub fn new(n: usize, k: usize, activation_frames: usize) -> Self {
        Self {
            n,
            k,
            lambda_m: 0.0,
            lambda_c: 1.0,
            activation_frames,
            preset: Preset::default(),
            params: None,
            dt: DEFAULT_DT,
            horizon: None,
            eps: None,
            eta: BlurSchedule::DEFAULT_ETA,
            delta: BlurSchedule::DEFAULT_DELTA,
            seed: 0,
        }
    }

    pub fn shape(&self, channels: usize) -> Result<FilterShape> {
        FilterShape::new(self.n, channels, self.k)
    }

    pub fn dynamics(&self) -> Result<DynamicsParams> {
        let free = self.params.unwrap_or_else(|| self.preset.free_params());
        let mut p = DynamicsParams::from_free(free, self.n);
        p.lambda_c = self.lambda_c;
        p.lambda_m = self.lambda_m;
        p.dt = self.dt;
        p.horizon = self.horizon.unwrap_or(45_000.0 * self.dt);
        if let Some(eps) = self.eps {
            p.eps = eps;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn schedule(&self) -> Result<BlurSchedule> {
        BlurSchedule::starting(self.eta, self.delta)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 {
            return Err(MvqError::Config("n and k must be positive".into()));
        }
        if self.activation_frames == 0 {
            return Err(MvqError::Config("activation_frames must be at least 1".into()));
        }
        if self.lambda_m < 0.0 {
            return Err(MvqError::Config("lambda_m must be nonnegative".into()));
        }
        self.dynamics()?;
        self.schedule()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub flow: FlowSource,
    #[serde(default = "default_smoothness")]
    pub flow_smoothness: f64,
    #[serde(default = "default_flow_iterations")]
    pub flow_iterations: usize,
    #[serde(default)]
    pub reset_mode: ResetMode,
    /// displacement budget of a designed reset interval
    #[serde(default = "default_reset_eps")]
    pub reset_eps: f64,
    /// when set, each layer is trained once per value and the best batch MI wins
    #[serde(default)]
    pub lambda_m_grid: Option<Vec<f64>>,
    pub layers: Vec<LayerConfig>,
}

impl RunConfig {
    pub fn single(layer: LayerConfig) -> Self {
        Self {
            version: CONFIG_VERSION,
            flow: FlowSource::Internal,
            flow_smoothness: default_smoothness(),
            flow_iterations: default_flow_iterations(),
            reset_mode: ResetMode::Zero,
            reset_eps: default_reset_eps(),
            lambda_m_grid: None,
            layers: vec![layer],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(MvqError::Config(format!(
                "unsupported config version {}, expected {CONFIG_VERSION}",
                self.version
            )));
        }
        if self.layers.is_empty() {
            return Err(MvqError::Config("at least one layer is required".into()));
        }
        if !(self.flow_smoothness > 0.0) || self.flow_iterations == 0 {
            return Err(MvqError::Config(
                "flow_smoothness and flow_iterations must be positive".into(),
            ));
        }
        if !(self.reset_eps > 0.0) {
            return Err(MvqError::Config("reset_eps must be positive".into()));
        }
        if let Some(grid) = &self.lambda_m_grid {
            if grid.is_empty() || grid.iter().any(|v| !(*v >= 0.0)) {
                return Err(MvqError::Config("lambda_m_grid needs nonnegative values".into()));
            }
        }
        for l in &self.layers {
            l.validate()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| MvqError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// The λ_M values swept in the multi-layer experiments.
pub const LAMBDA_M_GRID: [f64; 7] = [0.0, 1e-8, 1e-6, 1e-4, 1e-2, 1.0, 1e2];
