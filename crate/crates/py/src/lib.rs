//! Python bindings: images, target features, masking, the model, pretraining,
//! few-shot probing and the command-line entry point.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use sarjepa::eval::{self, ProbeConfig, ProbeMode};
use sarjepa::features::{self, KernelKind, TargetKind, TargetSpec};
use sarjepa::imagery::{self, CorpusSpec, Dataset, SceneSpec};
use sarjepa::masking::{self, PatchGrid};
use sarjepa::model::{CheckpointMeta, ModelConfig, ModelState, RngState};
use sarjepa::trainer;

fn py_err(e: sarjepa::Error) -> PyErr {
    if e.is_divergence() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn json_map(text: Option<&str>) -> PyResult<serde_json::Map<String, serde_json::Value>> {
    match text {
        None => Ok(Default::default()),
        Some(t) => match serde_json::from_str(t) {
            Ok(serde_json::Value::Object(m)) => Ok(m),
            Ok(_) => Err(PyValueError::new_err("config must be a JSON object")),
            Err(e) => Err(PyValueError::new_err(e.to_string())),
        },
    }
}

/// Non-negative amplitude image, row-major.
#[pyclass(name = "SarImage", from_py_object)]
#[derive(Clone)]
struct PySarImage {
    inner: imagery::SarImage,
}

#[pymethods]
impl PySarImage {
    #[new]
    fn new(height: usize, width: usize, data: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: imagery::SarImage::new(height, width, data).map_err(py_err)?,
        })
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn scaled(&self, c: f64) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.scaled(c).map_err(py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("SarImage({}x{})", self.inner.height(), self.inner.width())
    }
}

fn images(list: &[PySarImage]) -> Vec<imagery::SarImage> {
    list.iter().map(|i| i.inner.clone()).collect()
}

/// One speckled scene of shape class `class_id`; returns `(image, label)`.
#[pyfunction]
#[pyo3(signature = (image_size, class_id, looks=1, seed=0))]
fn generate_scene(image_size: usize, class_id: usize, looks: u32, seed: u64) -> PyResult<(PySarImage, usize)> {
    let (img, label) = imagery::generate_scene(&SceneSpec::new(image_size, class_id, looks), seed).map_err(py_err)?;
    Ok((PySarImage { inner: img }, label))
}

/// Balanced synthetic corpus; returns `(images, labels, class_names)`.
#[pyfunction]
#[pyo3(signature = (images, classes=5, image_size=64, looks=1, seed=0))]
fn generate_corpus(
    images: usize,
    classes: usize,
    image_size: usize,
    looks: u32,
    seed: u64,
) -> PyResult<(Vec<PySarImage>, Vec<usize>, Vec<String>)> {
    let spec = CorpusSpec {
        images,
        classes,
        image_size,
        looks,
        ..CorpusSpec::default()
    };
    let ds = imagery::generate_corpus(&spec, seed).map_err(py_err)?;
    Ok((
        ds.images.into_iter().map(|inner| PySarImage { inner }).collect(),
        ds.labels,
        ds.class_names,
    ))
}

#[pyfunction]
#[pyo3(signature = (img, looks=1, seed=0))]
fn apply_speckle(img: &PySarImage, looks: u32, seed: u64) -> PyResult<PySarImage> {
    Ok(PySarImage {
        inner: imagery::apply_speckle(&img.inner, looks, seed).map_err(py_err)?,
    })
}

fn kernel(kind: &str) -> PyResult<KernelKind> {
    match kind {
        "linear" => Ok(KernelKind::Linear),
        "gaussian" => Ok(KernelKind::Gaussian),
        _ => Err(PyValueError::new_err(format!("unknown kernel '{kind}' (linear or gaussian)"))),
    }
}

/// Log-ratio gradients at one scale: `(g_h, g_v, g_m)` as row-major lists.
#[pyfunction]
#[pyo3(signature = (img, r, kernel_kind="linear", epsilon=0.01))]
fn gr_single_scale(img: &PySarImage, r: usize, kernel_kind: &str, epsilon: f64) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let g = features::gr_single_scale(&img.inner, r, kernel(kernel_kind)?, epsilon).map_err(py_err)?;
    Ok((g.g_h, g.g_v, g.g_m))
}

fn target_spec(kind: &str, scales: Vec<usize>, epsilon: f64) -> PyResult<TargetSpec> {
    Ok(TargetSpec {
        kind: TargetKind::parse(kind).map_err(py_err)?,
        scales,
        epsilon,
        ..TargetSpec::default()
    })
}

/// Target feature raster: `(channels, height, width, channel-major data)`.
#[pyfunction]
#[pyo3(signature = (img, kind="grlin", scales=vec![5, 9, 13, 17], epsilon=0.01, patch_side=8))]
fn target_feature(
    img: &PySarImage,
    kind: &str,
    scales: Vec<usize>,
    epsilon: f64,
    patch_side: usize,
) -> PyResult<(usize, usize, usize, Vec<f64>)> {
    let tf = target_spec(kind, scales, epsilon)?.feature(&img.inner, patch_side).map_err(py_err)?;
    Ok((tf.channels(), tf.height(), tf.width(), tf.data().to_vec()))
}

/// Per-patch target vectors, one list per patch in row-major patch order.
#[pyfunction]
#[pyo3(signature = (img, kind="grlin", scales=vec![5, 9, 13, 17], epsilon=0.01, patch_side=8))]
fn patch_targets(img: &PySarImage, kind: &str, scales: Vec<usize>, epsilon: f64, patch_side: usize) -> PyResult<Vec<Vec<f64>>> {
    let t = target_spec(kind, scales, epsilon)?
        .patch_targets(&img.inner, patch_side)
        .map_err(py_err)?;
    Ok((0..t.len()).map(|i| t.vector(i).to_vec()).collect())
}

/// Local mask plan on a `rows x cols` grid as JSON.
#[pyfunction]
#[pyo3(signature = (rows, cols, windows=4, window_side=4, mask_ratio=0.75, seed=0))]
fn mask_plan(rows: usize, cols: usize, windows: usize, window_side: usize, mask_ratio: f64, seed: u64) -> PyResult<String> {
    let grid = PatchGrid::new(rows, cols, 1).map_err(py_err)?;
    let w = masking::sample_local_windows(&grid, windows, window_side, seed).map_err(py_err)?;
    masking::mask_plan(&w, mask_ratio, seed.wrapping_add(1))
        .and_then(|p| p.to_json())
        .map_err(py_err)
}

/// Encoder/predictor parameters.
#[pyclass(name = "Model")]
struct PyModel {
    state: ModelState<f32>,
}

#[pymethods]
impl PyModel {
    /// Fresh model from a JSON `ModelConfig` (default: desk model with GR_lin targets).
    #[staticmethod]
    #[pyo3(signature = (config=None, seed=0))]
    fn init(config: Option<&str>, seed: u64) -> PyResult<Self> {
        let cfg = match config {
            Some(c) => serde_json::from_str::<ModelConfig>(c).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => ModelConfig::desk_default(TargetSpec::default().dim(8)),
        };
        Ok(Self {
            state: ModelState::init(&cfg, seed).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            state: ModelState::load(&path).map_err(py_err)?.0,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let meta = CheckpointMeta {
            global_step: 0,
            rng_state: RngState {
                seed: 0,
                epoch: 0,
                step: 0,
            },
        };
        self.state.save(&path, meta).map_err(py_err)
    }

    fn config(&self) -> PyResult<String> {
        serde_json::to_string(self.state.config()).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.state.num_params()
    }

    /// Mean-pooled encoder features, one list per image.
    fn encode(&self, images_: Vec<PySarImage>) -> PyResult<Vec<Vec<f32>>> {
        let f = eval::encode_dataset(&self.state, &images(&images_)).map_err(py_err)?;
        Ok(f.rows().into_iter().map(|r| r.to_vec()).collect())
    }

    /// `(layer, head, mean_distance_px)` per encoder head.
    fn attention_distance(&self, images_: Vec<PySarImage>) -> PyResult<Vec<(usize, usize, f64)>> {
        let rows = eval::attention_distance(&self.state, &images(&images_)).map_err(py_err)?;
        Ok(rows.into_iter().map(|r| (r.layer, r.head, r.mean_distance_px)).collect())
    }

    /// Few-shot probe over seeded splits: `[(shots, mean, std)]`.
    #[pyo3(signature = (images_, labels, shots=vec![10], repeats=10, mode="linear", seed=0, config=None))]
    #[allow(clippy::too_many_arguments)]
    fn evaluate_few_shot(
        &self,
        images_: Vec<PySarImage>,
        labels: Vec<usize>,
        shots: Vec<usize>,
        repeats: usize,
        mode: &str,
        seed: u64,
        config: Option<&str>,
    ) -> PyResult<Vec<(usize, f64, f64)>> {
        let mut cfg: ProbeConfig = match config {
            Some(c) => serde_json::from_str(c).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => ProbeConfig::default(),
        };
        cfg.mode = ProbeMode::parse(mode).map_err(py_err)?;
        if images_.len() != labels.len() {
            return Err(PyValueError::new_err("images and labels differ in length"));
        }
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        let ds = Dataset {
            class_names: (0..n_classes).map(|c| format!("class_{c}")).collect(),
            images: images(&images_),
            labels,
        };
        let report = eval::evaluate_few_shot(&self.state, &ds, &shots, repeats, &cfg, seed).map_err(py_err)?;
        Ok(report.summary.into_iter().map(|s| (s.shots, s.mean, s.std)).collect())
    }
}

/// Pretrains on `images`. `config` is the flat JSON accepted by the
/// `pretrain` subcommand. Returns the model and `[(epoch, loss, lr,
/// seconds, pred_variance)]`.
#[pyfunction]
#[pyo3(signature = (images_, config=None, seed=0, out=None))]
fn pretrain(
    images_: Vec<PySarImage>,
    config: Option<&str>,
    seed: u64,
    out: Option<PathBuf>,
) -> PyResult<(PyModel, Vec<(usize, f64, f64, f64, f64)>)> {
    let run = sarjepa::cli::resolve_pretrain(
        json_map(config)?,
        &Default::default(),
        &Default::default(),
        Some(seed),
        None,
        false,
    )
    .map_err(py_err)?;
    let outcome = trainer::pretrain(&images(&images_), &run.train, &run.model, out.as_deref()).map_err(py_err)?;
    let log = outcome
        .log
        .records
        .iter()
        .map(|r| (r.epoch, r.loss, r.lr, r.seconds, r.pred_variance))
        .collect();
    Ok((PyModel { state: outcome.state }, log))
}

/// Runs the command-line interface with `argv` (without the program name)
/// and returns its exit code.
#[pyfunction]
fn cli(argv: Vec<String>) -> i32 {
    sarjepa::cli::dispatch(std::iter::once("sarjepa".to_string()).chain(argv))
}

#[pymodule]
fn sarjepa_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySarImage>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(apply_speckle, m)?)?;
    m.add_function(wrap_pyfunction!(gr_single_scale, m)?)?;
    m.add_function(wrap_pyfunction!(target_feature, m)?)?;
    m.add_function(wrap_pyfunction!(patch_targets, m)?)?;
    m.add_function(wrap_pyfunction!(mask_plan, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(cli, m)?)?;
    Ok(())
}
