//! Python bindings: models, ODS directions, white-box and black-box attacks,
//! and the experiment pipeline.

use std::path::PathBuf;

use ods_core::blackbox::{
    boundary_attack, rgf_attack, simba_attack, BoundaryConfig, DecisionOracle, Goal, RgfConfig,
    Sampler, SamplerKind, ScoreOracle, SimbaConfig,
};
use ods_core::harness::{self, ExperimentConfig, ResultTree};
use ods_core::ods::{self, DirectionVector, SurrogateEnsemble};
use ods_core::rng::seeded;
use ods_core::whitebox::{
    run_cw_with_restarts, run_pgd_with_restarts, CwConfig, CwInit, InitKind, Norm,
    WhiteboxAttackConfig,
};
use ods_core::{models, AttackResult, Error, Tensor};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Dimension(_)
        | Error::Index { .. }
        | Error::InvalidInput(_)
        | Error::Precondition(_)
        | Error::EmptyDataset
        | Error::Malformed { .. }
        | Error::Version { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn norm(name: &str) -> PyResult<Norm> {
    match name {
        "linf" => Ok(Norm::Linf),
        "l2" => Ok(Norm::L2),
        _ => Err(PyValueError::new_err(format!(
            "unknown norm `{name}`; use `linf` or `l2`"
        ))),
    }
}

fn sampler_kind(name: &str) -> PyResult<SamplerKind> {
    match name {
        "pixel_basis" => Ok(SamplerKind::PixelBasis),
        "gaussian" => Ok(SamplerKind::Gaussian),
        "ods" => Ok(SamplerKind::Ods),
        "multi_targeted" => Ok(SamplerKind::MultiTargeted),
        _ => Err(PyValueError::new_err(format!(
            "unknown sampler `{name}`; use pixel_basis, gaussian, ods or multi_targeted"
        ))),
    }
}

/// Dense ReLU classifier.
#[pyclass(name = "MlpClassifier", module = "ods_py", from_py_object)]
#[derive(Clone)]
struct PyMlp {
    inner: models::MlpClassifier,
}

#[pymethods]
impl PyMlp {
    #[new]
    fn new(layer_sizes: Vec<usize>, seed: u64) -> PyResult<Self> {
        let inner = models::MlpClassifier::new(&layer_sizes, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: models::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        models::save(&self.inner, &path).map_err(to_py)
    }

    #[getter]
    fn layer_sizes(&self) -> Vec<usize> {
        self.inner.layer_sizes().to_vec()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn logits(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.logits(&x).map_err(to_py)
    }

    fn predict(&self, x: Vec<f64>) -> PyResult<usize> {
        self.inner.predict(&Tensor::vector(x)).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("MlpClassifier(layer_sizes={:?})", self.inner.layer_sizes())
    }
}

/// Outcome of an attack run.
#[pyclass(name = "AttackResult", module = "ods_py", get_all, skip_from_py_object)]
struct PyAttackResult {
    adversarial: Vec<f64>,
    success: bool,
    perturbation_norm: f64,
    restarts_used: usize,
    best_loss: f64,
    queries: usize,
    gradient_evals: usize,
    success_step: Option<usize>,
}

#[pymethods]
impl PyAttackResult {
    fn __repr__(&self) -> String {
        format!(
            "AttackResult(success={}, perturbation_norm={:.6}, queries={}, gradient_evals={})",
            self.success, self.perturbation_norm, self.queries, self.gradient_evals
        )
    }
}

impl From<AttackResult> for PyAttackResult {
    fn from(r: AttackResult) -> Self {
        Self {
            adversarial: r.adversarial.into_data(),
            success: r.success,
            perturbation_norm: r.perturbation_norm,
            restarts_used: r.restarts_used,
            best_loss: r.best_loss,
            queries: r.queries,
            gradient_evals: r.gradient_evals,
            success_step: r.success_step,
        }
    }
}

fn ensemble(surrogates: &[PyMlp]) -> PyResult<Option<SurrogateEnsemble>> {
    if surrogates.is_empty() {
        return Ok(None);
    }
    let models = surrogates.iter().map(|m| m.inner.clone()).collect();
    SurrogateEnsemble::from_models(models)
        .map(Some)
        .map_err(to_py)
}

fn sampler(kind: &str, surrogates: &[PyMlp], seed: u64) -> PyResult<Sampler> {
    let ens = ensemble(surrogates)?;
    Sampler::of_kind(sampler_kind(kind)?, ens.as_ref(), seeded(seed)).map_err(to_py)
}

fn goal(label: usize, target: Option<usize>) -> Goal {
    match target {
        Some(t) => Goal::targeted(label, t),
        None => Goal::untargeted(label),
    }
}

/// Normalised input gradient of `w · f(x)`.
#[pyfunction]
fn ods_vector(model: &PyMlp, x: Vec<f64>, w: Vec<f64>) -> PyResult<Vec<f64>> {
    let w = DirectionVector::new(w).map_err(to_py)?;
    Ok(ods::ods_vector(&Tensor::vector(x), &model.inner, &w)
        .map_err(to_py)?
        .into_data())
}

/// ODS vector for a direction drawn uniformly from [-1, 1]^C.
#[pyfunction]
fn sample_ods_vector(model: &PyMlp, x: Vec<f64>, seed: u64) -> PyResult<Vec<f64>> {
    let mut rng = seeded(seed);
    Ok(
        ods::sample_ods_vector(&Tensor::vector(x), &model.inner, &mut rng)
            .map_err(to_py)?
            .into_data(),
    )
}

/// PGD with margin loss and sign/normalised steps. `init` is `uniform`, `odi`
/// or `multi_targeted`; ODI uses two steps of size ε.
#[pyfunction]
#[pyo3(signature = (model, x, label, epsilon, step, steps, restarts = 1, norm_name = "linf", init = "uniform", seed = 0))]
#[allow(clippy::too_many_arguments)]
fn pgd(
    model: &PyMlp,
    x: Vec<f64>,
    label: usize,
    epsilon: f64,
    step: f64,
    steps: usize,
    restarts: usize,
    norm_name: &str,
    init: &str,
    seed: u64,
) -> PyResult<PyAttackResult> {
    let init = match init {
        "uniform" => InitKind::Uniform,
        "odi" => InitKind::odi_default(epsilon),
        "multi_targeted" => InitKind::MultiTargeted {
            steps: 2,
            step_size: epsilon,
        },
        _ => return Err(PyValueError::new_err(format!("unknown init `{init}`"))),
    };
    let cfg =
        WhiteboxAttackConfig::pgd(norm(norm_name)?, epsilon, step, steps, restarts).with_init(init);
    let (r, _) = run_pgd_with_restarts(
        &model.inner,
        &Tensor::vector(x),
        label,
        &cfg,
        &mut seeded(seed),
    )
    .map_err(to_py)?;
    Ok(r.into())
}

/// C&W ℓ2 with the standard hyperparameters. `init` is `clean`, `naive` or `odi`.
#[pyfunction]
#[pyo3(signature = (model, x, label, init = "naive", init_epsilon = 0.03, restarts = 1, seed = 0))]
fn cw(
    model: &PyMlp,
    x: Vec<f64>,
    label: usize,
    init: &str,
    init_epsilon: f64,
    restarts: usize,
    seed: u64,
) -> PyResult<PyAttackResult> {
    let init = match init {
        "clean" => CwInit::Clean,
        "naive" => CwInit::Naive,
        "odi" => CwInit::Odi {
            steps: 2,
            step_size: init_epsilon,
        },
        _ => return Err(PyValueError::new_err(format!("unknown init `{init}`"))),
    };
    let cfg = CwConfig::standard(init, init_epsilon, restarts);
    let (r, _) = run_cw_with_restarts(
        &model.inner,
        &Tensor::vector(x),
        label,
        &cfg,
        &mut seeded(seed),
    )
    .map_err(to_py)?;
    Ok(r.into())
}

/// SimBA against a score oracle over `model`.
#[pyfunction]
#[pyo3(signature = (model, x, label, sampler_name = "pixel_basis", surrogates = Vec::new(), budget = 20000, step = 0.2, target = None, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn simba(
    model: &PyMlp,
    x: Vec<f64>,
    label: usize,
    sampler_name: &str,
    surrogates: Vec<PyMlp>,
    budget: usize,
    step: f64,
    target: Option<usize>,
    seed: u64,
) -> PyResult<PyAttackResult> {
    let mut s = sampler(sampler_name, &surrogates, seed)?;
    let mut oracle = ScoreOracle::new(&model.inner, budget);
    let cfg = SimbaConfig {
        step,
        ..SimbaConfig::standard()
    };
    let (r, _) = simba_attack(
        &mut oracle,
        &Tensor::vector(x),
        goal(label, target),
        &mut s,
        &cfg,
    )
    .map_err(to_py)?;
    Ok(r.into())
}

/// RGF with the default settings for the chosen norm.
#[pyfunction]
#[pyo3(signature = (model, x, label, sampler_name = "gaussian", surrogates = Vec::new(), budget = 10000, norm_name = "l2", epsilon = None, target = None, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn rgf(
    model: &PyMlp,
    x: Vec<f64>,
    label: usize,
    sampler_name: &str,
    surrogates: Vec<PyMlp>,
    budget: usize,
    norm_name: &str,
    epsilon: Option<f64>,
    target: Option<usize>,
    seed: u64,
) -> PyResult<PyAttackResult> {
    let mut cfg = match norm(norm_name)? {
        Norm::L2 => RgfConfig::l2(x.len()),
        Norm::Linf => RgfConfig::linf(0.05),
    };
    if let Some(e) = epsilon {
        cfg.epsilon = e;
    }
    let mut s = sampler(sampler_name, &surrogates, seed)?;
    let mut oracle = ScoreOracle::new(&model.inner, budget);
    let (r, _) = rgf_attack(
        &mut oracle,
        &Tensor::vector(x),
        goal(label, target),
        &mut s,
        &cfg,
    )
    .map_err(to_py)?;
    Ok(r.into())
}

/// Untargeted Boundary Attack against a label-only oracle. Returns the result
/// and the `(queries, distance)` trace of accepted steps.
#[pyfunction]
#[pyo3(signature = (model, x, label, sampler_name = "gaussian", surrogates = Vec::new(), budget = 2000, seed = 0))]
fn boundary(
    model: &PyMlp,
    x: Vec<f64>,
    label: usize,
    sampler_name: &str,
    surrogates: Vec<PyMlp>,
    budget: usize,
    seed: u64,
) -> PyResult<(PyAttackResult, Vec<(usize, f64)>)> {
    let mut s = sampler(sampler_name, &surrogates, seed)?;
    let mut oracle = DecisionOracle::new(&model.inner, budget);
    let (r, trace) = boundary_attack(
        &mut oracle,
        &Tensor::vector(x),
        Goal::untargeted(label),
        None,
        &mut s,
        &BoundaryConfig::default(),
        &mut seeded(seed.wrapping_add(1)),
    )
    .map_err(to_py)?;
    Ok((
        r.into(),
        trace.into_iter().map(|p| (p.queries, p.distance)).collect(),
    ))
}

/// Runs every stage of the experiment in `config` into `out` and returns report.txt.
#[pyfunction]
#[pyo3(signature = (config, out, seed = None))]
fn run_experiment(
    py: Python<'_>,
    config: PathBuf,
    out: PathBuf,
    seed: Option<u64>,
) -> PyResult<String> {
    let mut cfg = ExperimentConfig::load(&config).map_err(to_py)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let res = py
        .detach(|| harness::run_experiment(&cfg, &out))
        .map_err(to_py)?;
    Ok(res.report.to_text())
}

/// Rebuilds summaries from the traces under `out` and returns report.txt.
#[pyfunction]
fn report(out: PathBuf) -> PyResult<String> {
    Ok(harness::report(&ResultTree::new(out))
        .map_err(to_py)?
        .to_text())
}

#[pymodule]
fn ods_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMlp>()?;
    m.add_class::<PyAttackResult>()?;
    m.add_function(wrap_pyfunction!(ods_vector, m)?)?;
    m.add_function(wrap_pyfunction!(sample_ods_vector, m)?)?;
    m.add_function(wrap_pyfunction!(pgd, m)?)?;
    m.add_function(wrap_pyfunction!(cw, m)?)?;
    m.add_function(wrap_pyfunction!(simba, m)?)?;
    m.add_function(wrap_pyfunction!(rgf, m)?)?;
    m.add_function(wrap_pyfunction!(boundary, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    Ok(())
}
