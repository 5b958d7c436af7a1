//! Python bindings: configuration, population generation, the three
//! learning paradigms, aggregation weights and model gradients.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use fedlorar::experiment::{self, ExperimentConfig};
use fedlorar::metrics::EvalReport;
use fedlorar::{
    compute_weights as core_weights, run_federated as core_federated, Activation, Batch,
    ClientDataset, ClientUpdate, Error, ModelKind, ModelSpec, ParamVector, Targets,
    WeightingMechanism,
};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidConfig(_)
        | Error::InvalidSpec(_)
        | Error::DimensionMismatch { .. }
        | Error::EmptyInput(_)
        | Error::NotClassification
        | Error::EmptyPopulation => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Experiment configuration, built from `key = value` text.
#[pyclass(name = "Config", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyConfig(ExperimentConfig);

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (text = ""))]
    fn new(text: &str) -> PyResult<Self> {
        ExperimentConfig::from_kv(text).map(Self).map_err(to_py)
    }

    /// The default eight-client configuration with the given seed.
    #[staticmethod]
    fn standard(seed: u64) -> Self {
        Self(ExperimentConfig::standard(seed))
    }

    /// A copy with the seed (and data seed) replaced.
    fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.0.clone();
        c.seed = seed;
        c.population.seed = seed;
        Self(c)
    }

    fn to_kv(&self) -> String {
        self.0.to_kv()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[getter]
    fn label(&self) -> String {
        self.0.label()
    }

    #[getter]
    fn sizes(&self) -> Vec<usize> {
        self.0.population.sizes.clone()
    }

    fn __repr__(&self) -> String {
        format!("Config(label={:?}, seed={})", self.0.label(), self.0.seed)
    }
}

#[pyclass(name = "ClientData", frozen)]
struct PyClientData(ClientDataset);

#[pymethods]
impl PyClientData {
    #[getter]
    fn client_id(&self) -> usize {
        self.0.client_id
    }

    #[getter]
    fn train_size(&self) -> usize {
        self.0.size()
    }

    /// `(rows, labels)` of one split: "train", "dev" or "test".
    fn split(&self, name: &str) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
        let s = match name {
            "train" => &self.0.train,
            "dev" => &self.0.dev,
            "test" => &self.0.test,
            _ => return Err(PyValueError::new_err(format!("unknown split `{name}`"))),
        };
        Ok((
            (0..s.len()).map(|i| s.row(i).to_vec()).collect(),
            s.labels().to_vec(),
        ))
    }
}

#[pyclass(name = "Report", frozen)]
struct PyReport(EvalReport);

#[pymethods]
impl PyReport {
    #[getter]
    fn macro_avg(&self) -> f64 {
        self.0.macro_avg
    }

    #[getter]
    fn micro_avg(&self) -> f64 {
        self.0.micro_avg
    }

    /// Per-client `(client_id, test_size, correct, accuracy)`.
    #[getter]
    fn per_client(&self) -> Vec<(usize, usize, usize, f64)> {
        self.0
            .per_client
            .iter()
            .map(|c| (c.client_id, c.test_size, c.correct, c.accuracy))
            .collect()
    }

    fn table(&self, label: &str) -> String {
        self.0.to_table(label)
    }
}

#[pyfunction]
fn generate_population(config: &PyConfig) -> PyResult<Vec<PyClientData>> {
    Ok(experiment::population(&config.0)
        .map_err(to_py)?
        .into_iter()
        .map(PyClientData)
        .collect())
}

#[pyfunction]
fn run_finetune(py: Python<'_>, config: &PyConfig) -> PyResult<PyReport> {
    let cfg = config.0.clone();
    py.detach(move || {
        let pop = experiment::population(&cfg)?;
        experiment::run_finetune(&cfg, &pop)
    })
    .map(PyReport)
    .map_err(to_py)
}

#[pyfunction]
fn run_centralized(py: Python<'_>, config: &PyConfig) -> PyResult<PyReport> {
    let cfg = config.0.clone();
    py.detach(move || {
        let pop = experiment::population(&cfg)?;
        experiment::run_centralized(&cfg, &pop)
    })
    .map(PyReport)
    .map_err(to_py)
}

/// Federated run in-process; returns the test report of the best dev
/// checkpoint.
#[pyfunction]
fn run_federated(py: Python<'_>, config: &PyConfig) -> PyResult<PyReport> {
    let cfg = config.0.clone();
    py.detach(move || {
        let pop = experiment::population(&cfg)?;
        let run = core_federated(&cfg.algo, &cfg.model, &pop, cfg.seed, cfg.eval_every)?;
        fedlorar::evaluate_all(&cfg.model, &run.best_model, &pop)
    })
    .map(PyReport)
    .map_err(to_py)
}

/// Aggregation weights from client sizes and loss reductions. Returns
/// `(weights, fallback)`.
#[pyfunction]
#[pyo3(signature = (sizes, loss_reductions, mechanism = "lorar"))]
fn compute_weights(
    sizes: Vec<usize>,
    loss_reductions: Vec<f64>,
    mechanism: &str,
) -> PyResult<(Vec<f64>, bool)> {
    if sizes.len() != loss_reductions.len() {
        return Err(PyValueError::new_err(
            "sizes and loss_reductions differ in length",
        ));
    }
    let mechanism: WeightingMechanism = mechanism.parse().map_err(to_py)?;
    let updates: Vec<ClientUpdate> = sizes
        .iter()
        .zip(&loss_reductions)
        .enumerate()
        .map(|(i, (&size, &dl))| {
            Ok(ClientUpdate {
                client_id: i,
                delta: ParamVector::new(vec![0.0])?,
                weighted_loss_reduction: size as f64 * dl,
                train_size: size,
                epoch_losses: Vec::new(),
            })
        })
        .collect::<Result<_, Error>>()
        .map_err(to_py)?;
    let w = core_weights(&updates, mechanism).map_err(to_py)?;
    Ok((w.values, w.fallback))
}

/// A differentiable model: "linear-regression", "logistic-regression" or
/// "mlp-1-hidden".
#[pyclass(name = "Model", frozen)]
struct PyModel(ModelSpec);

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (kind, input_dim, num_classes = 1, hidden_dim = 0, activation = "relu"))]
    fn new(
        kind: &str,
        input_dim: usize,
        num_classes: usize,
        hidden_dim: usize,
        activation: &str,
    ) -> PyResult<Self> {
        let kind: ModelKind = kind.parse().map_err(to_py)?;
        let activation: Activation = activation.parse().map_err(to_py)?;
        let spec = match kind {
            ModelKind::LinearRegression => ModelSpec::linear_regression(input_dim),
            ModelKind::LogisticRegression => ModelSpec::logistic_regression(input_dim, num_classes),
            ModelKind::Mlp => ModelSpec::mlp(input_dim, hidden_dim, num_classes, activation),
        };
        spec.validate().map_err(to_py)?;
        Ok(Self(spec))
    }

    #[getter]
    fn param_dim(&self) -> usize {
        self.0.param_dim()
    }

    fn init(&self, seed: u64) -> PyResult<Vec<f64>> {
        Ok(fedlorar::init_params(&self.0, seed)
            .map_err(to_py)?
            .into_vec())
    }

    /// Mean loss and its gradient. `targets` are class indices for
    /// classifiers and real values for regression.
    fn loss_and_grad(
        &self,
        weights: Vec<f64>,
        inputs: Vec<Vec<f64>>,
        targets: Bound<'_, PyAny>,
    ) -> PyResult<(f64, Vec<f64>)> {
        let targets = if self.0.is_classification() {
            Targets::Classes(targets.extract()?)
        } else {
            Targets::Values(targets.extract()?)
        };
        let flat: Vec<f64> = inputs.concat();
        let batch = Batch::new(flat, self.0.input_dim, targets).map_err(to_py)?;
        let w = ParamVector::new(weights).map_err(to_py)?;
        let (loss, grad) = fedlorar::loss_and_grad(&self.0, &w, &batch).map_err(to_py)?;
        Ok((loss, grad.into_vec()))
    }
}

#[pymodule]
fn pyfedlorar(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyClientData>()?;
    m.add_class::<PyReport>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate_population, m)?)?;
    m.add_function(wrap_pyfunction!(run_finetune, m)?)?;
    m.add_function(wrap_pyfunction!(run_centralized, m)?)?;
    m.add_function(wrap_pyfunction!(run_federated, m)?)?;
    m.add_function(wrap_pyfunction!(compute_weights, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
