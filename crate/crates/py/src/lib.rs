//! Python bindings: quality oracles, TSQM and impact transformation, the
//! simulation harness and result summaries.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dtas_core::config::{default_config_text, ConfigFile};
use dtas_core::impact::{self, estimate_w_exact};
use dtas_core::model::{AgentId, AtomicTask, CompositeTask, CompositeTypeId, TaskTypeId};
use dtas_core::quality::{self, AllocationMap, ConcurrencyLaw, DEFAULT_BUDGET};
use dtas_core::report::{self, ResultRow};
use dtas_core::sim::{self, EpisodeResult, Scenario, ScenarioConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn load_config(scenario: &str, config: Option<&str>) -> PyResult<ScenarioConfig> {
    let s = Scenario::parse(scenario)
        .ok_or_else(|| PyValueError::new_err(format!("unknown scenario `{scenario}`")))?;
    match config {
        Some(text) => ConfigFile::parse(text)
            .and_then(|f| f.scenario(s))
            .map_err(value_err),
        None => Ok(ScenarioConfig::for_scenario(s)),
    }
}

fn tasks_of(types: &[u16]) -> Vec<AtomicTask> {
    let ids: Vec<TaskTypeId> = types.iter().map(|&t| TaskTypeId(t)).collect();
    CompositeTask::new(CompositeTypeId(0), &ids, 0).tasks
}

/// Base qualities per (agent, task type) with a concurrency law.
#[pyclass(name = "QualityModel")]
struct PyQualityModel {
    inner: quality::QualityModel,
}

#[pymethods]
impl PyQualityModel {
    /// `power` selects base / k^power; the default is base / k.
    #[new]
    #[pyo3(signature = (power=None))]
    fn new(power: Option<f64>) -> Self {
        let law = power.map_or(ConcurrencyLaw::EvenSplit, ConcurrencyLaw::Power);
        Self {
            inner: quality::QualityModel::new(law),
        }
    }

    fn set_base(&mut self, agent: u32, task_type: u16, q: f64) -> PyResult<()> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(PyValueError::new_err("quality must lie in (0, 1]"));
        }
        self.inner
            .set_base(AgentId(agent), TaskTypeId(task_type), q);
        Ok(())
    }

    fn base(&self, agent: u32, task_type: u16) -> Option<f64> {
        self.inner.base(AgentId(agent), TaskTypeId(task_type))
    }

    /// Quality of allocating `task_types[i]` to `agents[i]`.
    fn ql(&self, task_types: Vec<u16>, agents: Vec<u32>) -> PyResult<f64> {
        if task_types.len() != agents.len() {
            return Err(PyValueError::new_err(
                "task_types and agents differ in length",
            ));
        }
        let tasks = tasks_of(&task_types);
        let alloc =
            AllocationMap::from_pairs(tasks.iter().copied().zip(agents.into_iter().map(AgentId)));
        quality::ql(&self.inner, &tasks, &alloc).map_err(value_err)
    }

    /// Locally-optimal allocation of the tasks among `agents`: the agent per
    /// task and the resulting quality.
    fn oq(&self, task_types: Vec<u16>, agents: Vec<u32>) -> PyResult<(Vec<u32>, f64)> {
        let tasks = tasks_of(&task_types);
        let agents: Vec<AgentId> = agents.into_iter().map(AgentId).collect();
        let empty = AllocationMap::new();
        let best =
            quality::ol(&self.inner, &tasks, &agents, &empty, DEFAULT_BUDGET).map_err(value_err)?;
        let q = quality::ql(&self.inner, &tasks, &best).map_err(value_err)?;
        Ok((tasks.iter().map(|t| best.get(t).unwrap().0).collect(), q))
    }
}

/// Time-summarised quality matrix.
#[pyclass(name = "Tsqm")]
struct PyTsqm {
    inner: impact::Tsqm,
}

#[pymethods]
impl PyTsqm {
    #[new]
    #[pyo3(signature = (rows=10, cols=10))]
    fn new(rows: usize, cols: usize) -> PyResult<Self> {
        if rows == 0 || cols == 0 {
            return Err(PyValueError::new_err("shape must be positive"));
        }
        Ok(Self {
            inner: impact::Tsqm::new(rows, cols),
        })
    }

    fn update(&mut self, quality: f64) {
        self.inner.update(quality);
    }

    fn row_average(&self, i: usize) -> Option<f64> {
        self.inner.row_average(i)
    }

    #[pyo3(signature = (x, decay=1.0))]
    fn impact_transform(&self, x: f64, decay: f64) -> PyResult<f64> {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&decay) {
            return Err(PyValueError::new_err("x and decay must lie in [0, 1]"));
        }
        Ok(impact::impact_transform(&self.inner, decay, x))
    }
}

/// Action-impact weights (LINK, INFO) as exact fractions.
#[pyfunction]
fn estimate_w<'py>(
    py: Python<'py>,
    agents: u64,
    neighbourhood: u64,
    knowledge: u64,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let (link, info) = estimate_w_exact(agents, neighbourhood, knowledge).map_err(value_err)?;
    let fraction = py.import("fractions")?.getattr("Fraction")?;
    Ok((
        fraction.call1((*link.numer(), *link.denom()))?,
        fraction.call1((*info.numer(), *info.denom()))?,
    ))
}

/// TOML text holding every scenario's defaults.
#[pyfunction]
fn default_config() -> String {
    default_config_text()
}

fn row_dict<'py>(py: Python<'py>, r: &ResultRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("scenario", r.scenario.name())?;
    d.set_item("label", &r.label)?;
    d.set_item("run", r.run)?;
    d.set_item("episode", r.episode)?;
    d.set_item("utility", r.utility)?;
    d.set_item("optimal_utility", r.optimal_utility)?;
    d.set_item("failed_fraction", r.failed_fraction)?;
    d.set_item("seed", r.seed)?;
    Ok(d)
}

fn episode_dict<'py>(py: Python<'py>, e: &EpisodeResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("episode", e.episode)?;
    d.set_item("utility", e.utility)?;
    d.set_item("optimal_utility", e.optimal_utility)?;
    d.set_item("failed_fraction", e.failed_fraction)?;
    Ok(d)
}

/// Runs a scenario and returns one dict per (label, run, episode).
#[pyfunction]
#[pyo3(signature = (scenario, runs=None, episodes=None, seed=None, labels=None, config=None))]
fn run_scenario<'py>(
    py: Python<'py>,
    scenario: &str,
    runs: Option<usize>,
    episodes: Option<usize>,
    seed: Option<u64>,
    labels: Option<Vec<String>>,
    config: Option<&str>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut cfg = load_config(scenario, config)?;
    cfg.runs = runs.unwrap_or(cfg.runs);
    cfg.episodes = episodes.unwrap_or(cfg.episodes);
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.validate().map_err(value_err)?;
    let results = py
        .detach(|| sim::run_labels(&cfg, labels.as_deref()))
        .map_err(runtime_err)?;
    report::rows_from_runs(cfg.scenario, cfg.seed, &results)
        .iter()
        .map(|r| row_dict(py, r))
        .collect()
}

/// Final-episode statistics per label as a JSON string.
#[pyfunction]
fn summarize_csv(path: &str) -> PyResult<String> {
    let rows = report::read_rows_file(std::path::Path::new(path)).map_err(runtime_err)?;
    let s = report::summarize(&rows).map_err(runtime_err)?;
    serde_json::to_string(&s).map_err(runtime_err)
}

/// One variant of a scenario, stepped an episode at a time.
#[pyclass(name = "Simulation")]
struct PySimulation {
    inner: sim::Simulation,
}

#[pymethods]
impl PySimulation {
    #[new]
    #[pyo3(signature = (scenario, label, run=0, seed=None, config=None))]
    fn new(
        scenario: &str,
        label: &str,
        run: usize,
        seed: Option<u64>,
        config: Option<&str>,
    ) -> PyResult<Self> {
        let mut cfg = load_config(scenario, config)?;
        cfg.seed = seed.unwrap_or(cfg.seed);
        let variants = sim::scenario_variants(&cfg);
        let (index, variant) = variants
            .iter()
            .enumerate()
            .find(|(_, v)| v.label == label)
            .ok_or_else(|| PyValueError::new_err(format!("unknown label `{label}`")))?;
        let world = sim::prepare(&cfg, variant, run).map_err(value_err)?;
        let rng = sim::policy_rng(cfg.seed, run, index);
        Ok(Self {
            inner: sim::Simulation::new(world, variant.clone(), cfg, rng),
        })
    }

    fn run_episode<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let e = self.inner.run_episode().map_err(runtime_err)?;
        episode_dict(py, &e)
    }

    fn parents(&self) -> Vec<u32> {
        self.inner.world().parents.iter().map(|a| a.0).collect()
    }

    fn children(&self) -> Vec<u32> {
        self.inner.world().children.iter().map(|a| a.0).collect()
    }

    /// Current (knowledge, neighbourhood) of an agent.
    fn agent_state(&self, agent: u32) -> PyResult<(Vec<u32>, Vec<u32>)> {
        let st = self
            .inner
            .world()
            .system
            .agent_state(AgentId(agent))
            .map_err(value_err)?;
        Ok((
            st.knowledge.iter().map(|a| a.0).collect(),
            st.neighbourhood.iter().map(|a| a.0).collect(),
        ))
    }

    fn theoretical_utility(&self) -> f64 {
        self.inner.world().theoretical_utility()
    }
}

#[pymodule]
fn dtas(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyQualityModel>()?;
    m.add_class::<PyTsqm>()?;
    m.add_class::<PySimulation>()?;
    m.add_function(wrap_pyfunction!(estimate_w, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(summarize_csv, m)?)?;
    Ok(())
}
