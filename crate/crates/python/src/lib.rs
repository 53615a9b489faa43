//! Python bindings: synthetic clips, stability analysis, layer training and
//! feature export.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use mvq_core::discretization::FilterShape;
use mvq_core::dynamics::{read_checkpoint, write_checkpoint, FilterState};
use mvq_core::mollifier::mollifier_report as core_mollifier_report;
use mvq_core::pipeline::{self, FrozenLayer, RunConfig, VideoSource};
use mvq_core::potential::{activations, mi_index as core_mi_index};
use mvq_core::signal::{load_raw_video, synth_translating_texture, uniform_attention, write_raw_video, ColorField};
use mvq_core::stability::{characteristic_coeffs_of, coercivity_check, prop_coef_check, quartic_roots};
use mvq_core::MvqError;

fn err(e: MvqError) -> PyErr {
    match e {
        MvqError::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

#[pyclass(name = "FreeParams", get_all, set_all, from_py_object)]
#[derive(Clone, Copy)]
struct PyFreeParams {
    theta: f64,
    mu: f64,
    nu: f64,
    gamma1: f64,
    gamma2: f64,
    k: f64,
}

impl From<mvq_core::dynamics::FreeParams> for PyFreeParams {
    fn from(p: mvq_core::dynamics::FreeParams) -> Self {
        Self {
            theta: p.theta,
            mu: p.mu,
            nu: p.nu,
            gamma1: p.gamma1,
            gamma2: p.gamma2,
            k: p.k,
        }
    }
}

impl From<PyFreeParams> for mvq_core::dynamics::FreeParams {
    fn from(p: PyFreeParams) -> Self {
        Self {
            theta: p.theta,
            mu: p.mu,
            nu: p.nu,
            gamma1: p.gamma1,
            gamma2: p.gamma2,
            k: p.k,
        }
    }
}

#[pymethods]
impl PyFreeParams {
    #[new]
    fn new(theta: f64, mu: f64, nu: f64, gamma1: f64, gamma2: f64, k: f64) -> Self {
        Self {
            theta,
            mu,
            nu,
            gamma1,
            gamma2,
            k,
        }
    }

    /// Parameters of a named preset.
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        let p: pipeline::Preset = name.parse().map_err(PyValueError::new_err)?;
        Ok(p.free_params().into())
    }

    fn coercive(&self) -> bool {
        coercivity_check(self.mu, self.nu, self.gamma1, self.gamma2, self.k)
    }

    /// "stable_real", "stable_complex", "unstable_real" or "unstable_complex".
    fn classify(&self) -> Option<&'static str> {
        pipeline::classify(&(*self).into()).map(|p| p.name())
    }

    /// Characteristic roots as `(re, im)` pairs.
    fn roots(&self) -> PyResult<Vec<(f64, f64)>> {
        let c = characteristic_coeffs_of(&(*self).into()).map_err(err)?;
        Ok(quartic_roots(&c).roots.iter().map(|r| (r.re, r.im)).collect())
    }

    /// `(certified, violated inequalities)`.
    fn certify(&self) -> PyResult<(bool, Vec<String>)> {
        let rep = prop_coef_check(&(*self).into()).map_err(err)?;
        Ok((rep.certified, rep.violated.iter().map(|s| s.to_string()).collect()))
    }

    fn __repr__(&self) -> String {
        format!(
            "FreeParams(theta={}, mu={}, nu={}, gamma1={}, gamma2={}, k={})",
            self.theta, self.mu, self.nu, self.gamma1, self.gamma2, self.k
        )
    }
}

/// A clip of frames with values in [0, 1].
#[pyclass(name = "Video")]
struct PyVideo {
    frames: Vec<ColorField>,
}

#[pymethods]
impl PyVideo {
    #[staticmethod]
    #[pyo3(signature = (seed, vx, vy, frames, width, height, channels=1))]
    fn synth(
        seed: u64,
        vx: f64,
        vy: f64,
        frames: usize,
        width: usize,
        height: usize,
        channels: usize,
    ) -> PyResult<Self> {
        if frames == 0 || width == 0 || height == 0 || channels == 0 {
            return Err(PyValueError::new_err(
                "frames, width, height and channels must be positive",
            ));
        }
        Ok(Self {
            frames: synth_translating_texture(seed, (vx, vy), frames, width, height, channels),
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            frames: load_raw_video(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        write_raw_video(path, &self.frames).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.frames.len()
    }

    /// `(width, height, channels)`.
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        let f = &self.frames[0];
        (f.width(), f.height(), f.channels())
    }

    /// Channel-major values of one frame.
    fn frame(&self, index: usize) -> PyResult<Vec<f64>> {
        self.frames
            .get(index)
            .map(|f| f.data().to_vec())
            .ok_or_else(|| PyValueError::new_err(format!("frame {index} out of range")))
    }
}

/// Filters of a trained layer, frozen.
#[pyclass(name = "Layer")]
struct PyLayer {
    layer: FrozenLayer,
    #[pyo3(get)]
    batch_mi: f64,
    #[pyo3(get)]
    resets: usize,
    #[pyo3(get)]
    lambda_m: f64,
    rows: Vec<pipeline::MetricsRow>,
}

#[pymethods]
impl PyLayer {
    /// `(n, m, k)`.
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        let s = self.layer.shape;
        (s.n, s.m, s.k)
    }

    #[getter]
    fn q(&self) -> Vec<f64> {
        self.layer.q.as_slice().to_vec()
    }

    /// The training log in CSV form.
    fn metrics_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        pipeline::write_metrics_csv(&mut buf, &self.rows).map_err(err)?;
        String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// MI of the frozen filters over one pass of `video`.
    fn mi(&self, video: &PyVideo) -> PyResult<f64> {
        let f = &video.frames[0];
        let g = uniform_attention(f.width(), f.height()).map_err(err)?;
        let feats = video
            .frames
            .iter()
            .map(|c| activations(&self.layer.q, c, self.layer.shape))
            .collect::<Result<Vec<_>, _>>()
            .map_err(err)?;
        core_mi_index(&feats, &g).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        write_checkpoint(path, self.layer.shape, &FilterState::at_rest(self.layer.q.clone())).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (shape, state) = read_checkpoint(path).map_err(err)?;
        Ok(Self {
            layer: FrozenLayer { shape, q: state.q },
            batch_mi: f64::NAN,
            resets: 0,
            lambda_m: f64::NAN,
            rows: Vec::new(),
        })
    }
}

/// Trains every layer of a JSON run configuration on `video`.
#[pyfunction]
fn run_multilayer(config_json: &str, video: &PyVideo) -> PyResult<Vec<PyLayer>> {
    let cfg = RunConfig::from_json(config_json).map_err(err)?;
    let source = VideoSource::from_config(&cfg, video.frames.clone(), cfg.layers[0].dt).map_err(err)?;
    let runs = pipeline::run_multilayer(&cfg, &source).map_err(err)?;
    Ok(runs
        .into_iter()
        .map(|o| PyLayer {
            layer: o.run.frozen(),
            batch_mi: o.batch_mi,
            resets: o.run.resets,
            lambda_m: o.config.lambda_m,
            rows: o.run.metrics,
        })
        .collect())
}

/// Writes the concatenated features of `layers` on `video` as MVQF and
/// returns the number of features per pixel.
#[pyfunction]
fn export_features(layers: Vec<PyRef<'_, PyLayer>>, video: &PyVideo, path: &str) -> PyResult<usize> {
    let stack: Vec<FrozenLayer> = layers.iter().map(|l| l.layer.clone()).collect();
    let v = pipeline::export_features(&stack, &video.frames).map_err(err)?;
    pipeline::write_features(path, &v).map_err(err)?;
    Ok(v.features)
}

/// Reads an MVQF file as `(width, height, features, frames, values)`.
#[pyfunction]
fn read_features(path: &str) -> PyResult<(usize, usize, usize, usize, Vec<f32>)> {
    let v = pipeline::read_features(path).map_err(err)?;
    Ok((v.width, v.height, v.features, v.frames, v.data))
}

type ReportRow = (usize, f64, f64, f64, f64, f64);

/// Rows `(order_m, sigma, mass, tail, gap, sup)`.
#[pyfunction]
#[pyo3(signature = (order_m, sigmas, delta=0.5))]
fn mollifier_report(order_m: usize, sigmas: Vec<f64>, delta: f64) -> PyResult<Vec<ReportRow>> {
    Ok(core_mollifier_report(order_m, &sigmas, delta)
        .map_err(err)?
        .into_iter()
        .map(|r| (r.order_m, r.sigma, r.mass, r.tail, r.gap, r.sup))
        .collect())
}

/// Filter vector length for `n` features, `m` channels and `k x k` patches.
#[pyfunction]
fn filter_dim(n: usize, m: usize, k: usize) -> PyResult<usize> {
    Ok(FilterShape::new(n, m, k).map_err(err)?.dim())
}

#[pymodule]
fn mvq(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFreeParams>()?;
    m.add_class::<PyVideo>()?;
    m.add_class::<PyLayer>()?;
    m.add_function(wrap_pyfunction!(run_multilayer, m)?)?;
    m.add_function(wrap_pyfunction!(export_features, m)?)?;
    m.add_function(wrap_pyfunction!(read_features, m)?)?;
    m.add_function(wrap_pyfunction!(mollifier_report, m)?)?;
    m.add_function(wrap_pyfunction!(filter_dim, m)?)?;
    Ok(())
}
