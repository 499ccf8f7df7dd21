//! Python bindings. Reports and summaries cross the boundary as plain
//! dicts; vectors as lists of floats.

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rmpfusion::experiment::{self, ModelKind};
use rmpfusion::learn::Split;
use rmpfusion::sim::{self, Policy};
use rmpfusion::verify::{self, Suite};
use rmpfusion::Error;

create_exception!(rmpfusion_py, ContractViolation, PyRuntimeError);

fn py_err(e: Error) -> PyErr {
    if e.is_contract_violation() {
        return ContractViolation::new_err(e.to_string());
    }
    match e.root_cause() {
        Error::Config(_) | Error::Json(_) | Error::Dimension(_) | Error::Io(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_dict(py: Python<'_>, value: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn parse<T: std::str::FromStr>(what: &str, s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

fn parse_split(s: &str) -> PyResult<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(PyValueError::new_err(format!("split must be `train` or `test`, got `{s}`"))),
    }
}

/// A weighted motion policy tree.
#[pyclass(frozen)]
struct Tree {
    inner: rmpfusion::Tree,
}

#[pymethods]
impl Tree {
    /// Builds a tree from its JSON spec.
    #[new]
    fn new(spec_json: &str) -> PyResult<Self> {
        let spec = rmpfusion::TreeSpec::from_json(spec_json).map_err(py_err)?;
        Ok(Tree {
            inner: rmpfusion::Tree::new(spec).map_err(py_err)?,
        })
    }

    /// One of the shipped trees, e.g. `ytree` or `2d2level.learner`.
    #[staticmethod]
    fn fixture(name: &str) -> PyResult<Self> {
        let spec = rmpfusion::fixtures::tree_spec(name).map_err(py_err)?;
        Ok(Tree {
            inner: rmpfusion::Tree::new(spec).map_err(py_err)?,
        })
    }

    #[getter]
    fn name(&self) -> &str {
        self.inner.name()
    }

    #[getter]
    fn root_dim(&self) -> usize {
        self.inner.root_dim()
    }

    #[getter]
    fn aux_dim(&self) -> usize {
        self.inner.aux_dim()
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.n_params()
    }

    fn to_json(&self) -> String {
        self.inner.spec().to_json()
    }

    fn init_params(&self, seed: u64) -> Vec<f64> {
        self.inner.init_params(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Same tree with every weight set to one.
    fn reduce_to_rmpflow(&self) -> PyResult<Tree> {
        Ok(Tree {
            inner: rmpfusion::Tree::new(self.inner.spec().reduce_to_rmpflow()).map_err(py_err)?,
        })
    }

    /// Equivalent tree in which every map is split into two stages.
    fn decompose_two_step(&self) -> PyResult<Tree> {
        Ok(Tree {
            inner: rmpfusion::Tree::new(self.inner.spec().decompose_two_step()).map_err(py_err)?,
        })
    }

    /// Root acceleration, force, inertia and Lyapunov value at one state.
    #[pyo3(signature = (q, qd, aux = Vec::new(), params = Vec::new()))]
    fn evaluate(&self, py: Python<'_>, q: Vec<f64>, qd: Vec<f64>, aux: Vec<f64>, params: Vec<f64>) -> PyResult<Py<PyAny>> {
        let ev = self.inner.evaluate_policy(&q, &qd, &aux, &params).map_err(py_err)?;
        let m = &ev.root.m;
        let rows: Vec<Vec<f64>> = (0..m.rows()).map(|i| (0..m.cols()).map(|j| m.get(i, j)).collect()).collect();
        let out = serde_json::json!({
            "a": ev.a,
            "f": ev.root.f,
            "m": rows,
            "v": ev.root.v,
            "min_eig": ev.min_eig,
        });
        to_dict(py, &out)
    }

    #[pyo3(signature = (q, qd, aux = Vec::new(), params = Vec::new()))]
    fn lyapunov(&self, q: Vec<f64>, qd: Vec<f64>, aux: Vec<f64>, params: Vec<f64>) -> PyResult<f64> {
        self.inner.lyapunov_root(&q, &qd, &aux, &params).map_err(py_err)
    }
}

/// Demonstration records as JSON lines.
#[pyclass(frozen)]
struct Dataset {
    inner: rmpfusion::learn::Dataset,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Dataset {
            inner: rmpfusion::learn::Dataset::load(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Trained parameters of either model.
#[pyclass(frozen)]
struct Checkpoint {
    inner: experiment::Checkpoint,
}

#[pymethods]
impl Checkpoint {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Checkpoint {
            inner: experiment::Checkpoint::load(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    #[getter]
    fn kind(&self) -> String {
        format!("{:?}", self.inner.kind()).to_lowercase()
    }

    #[getter]
    fn iteration(&self) -> usize {
        self.inner.state.iteration
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.params().to_vec()
    }
}

/// Experiment config with its expert and learner trees.
#[pyclass(frozen)]
struct Experiment {
    inner: experiment::Experiment,
}

impl Experiment {
    fn policy(&self, model: &Bound<'_, PyAny>) -> PyResult<Box<dyn Policy>> {
        if let Ok(c) = model.cast::<Checkpoint>() {
            return c.get().inner.policy().map_err(py_err);
        }
        match model.extract::<String>() {
            Ok(s) if s == "expert" => Ok(Box::new(self.inner.expert_policy())),
            _ => Err(PyValueError::new_err("model must be a Checkpoint or \"expert\"")),
        }
    }
}

#[pymethods]
impl Experiment {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Experiment {
            inner: experiment::Experiment::load(path).map_err(py_err)?,
        })
    }

    /// A shipped experiment: `2d1level`, `2d2level` or `arm3`.
    #[staticmethod]
    fn fixture(name: &str) -> PyResult<Self> {
        Ok(Experiment {
            inner: rmpfusion::fixtures::experiment(name).map_err(py_err)?,
        })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.config.name
    }

    #[getter]
    fn digest(&self) -> String {
        self.inner.digest()
    }

    #[getter]
    fn expert(&self) -> Tree {
        Tree {
            inner: self.inner.expert.clone(),
        }
    }

    #[getter]
    fn learner(&self) -> Tree {
        Tree {
            inner: self.inner.learner.clone(),
        }
    }

    /// Expert demonstrations for `train` or `test`.
    fn generate(&self, py: Python<'_>, split: &str) -> PyResult<Dataset> {
        let split = parse_split(split)?;
        let (inner, _) = py.detach(|| self.inner.generate(split)).map_err(py_err)?;
        Ok(Dataset { inner })
    }

    /// Behaviour cloning of `rmp` or `unstructured`; returns the final checkpoint.
    #[pyo3(signature = (dataset, model = "rmp", iterations = None, resume = None))]
    fn train(
        &self,
        py: Python<'_>,
        dataset: &Dataset,
        model: &str,
        iterations: Option<usize>,
        resume: Option<&Checkpoint>,
    ) -> PyResult<Checkpoint> {
        let kind: ModelKind = parse("model", model)?;
        let mut exp = self.inner.clone();
        if let Some(n) = iterations {
            exp.config.train.iterations = n;
        }
        let resume = resume.map(|c| c.inner.clone());
        let run = py
            .detach(|| experiment::train_model(&exp, kind, &dataset.inner, resume, |_| Ok(())))
            .map_err(py_err)?;
        Ok(Checkpoint { inner: run.checkpoint })
    }

    /// Batch and online losses, rates and metric ratios on `test`.
    fn evaluate(&self, py: Python<'_>, model: &Bound<'_, PyAny>, test: &Dataset) -> PyResult<Py<PyAny>> {
        let policy = self.policy(model)?;
        let label = if model.cast::<Checkpoint>().is_ok() { "checkpoint" } else { "expert" };
        let ev = py
            .detach(|| experiment::evaluate(&self.inner, label, policy.as_ref(), &test.inner))
            .map_err(py_err)?;
        to_dict(py, &ev.report)
    }

    /// One rollout in a sampled environment. Returns the outcome, the
    /// environment and the sampled trajectory.
    #[pyo3(signature = (model, seed = 0, start = None))]
    fn rollout(
        &self,
        py: Python<'_>,
        model: &Bound<'_, PyAny>,
        seed: u64,
        start: Option<(Vec<f64>, Vec<f64>)>,
    ) -> PyResult<Py<PyAny>> {
        let policy = self.policy(model)?;
        let cfg = &self.inner.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let env = sim::sample_env(&cfg.sampling, &mut rng).map_err(py_err)?;
        let (q0, qd0) = match start {
            Some(s) => s,
            None => sim::sample_start(&env, &cfg.sampling, &mut rng).map_err(py_err)?,
        };
        let traj = py
            .detach(|| sim::rollout(policy.as_ref(), &env, &q0, &qd0, &cfg.rollout))
            .map_err(py_err)?;
        let out = serde_json::json!({
            "outcome": traj.outcome(),
            "environment": env,
            "t": traj.samples.iter().map(|s| s.t).collect::<Vec<_>>(),
            "q": traj.samples.iter().map(|s| &s.q).collect::<Vec<_>>(),
            "qd": traj.samples.iter().map(|s| &s.qd).collect::<Vec<_>>(),
            "v": traj.samples.iter().map(|s| s.v).collect::<Vec<_>>(),
        });
        to_dict(py, &out)
    }
}

/// Runs a property suite and returns its report.
#[pyfunction]
#[pyo3(signature = (suite, seed = 0))]
fn run_suite(py: Python<'_>, suite: &str, seed: u64) -> PyResult<Py<PyAny>> {
    let suite: Suite = parse("suite", suite)?;
    let report = py.detach(|| verify::run(suite, seed, None)).map_err(py_err)?;
    to_dict(py, &report)
}

#[pymodule]
fn rmpfusion_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Tree>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<Checkpoint>()?;
    m.add_class::<Experiment>()?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    m.add("ContractViolation", m.py().get_type::<ContractViolation>())?;
    Ok(())
}
