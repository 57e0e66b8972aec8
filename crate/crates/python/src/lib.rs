//! Python module `fsrlab`: the CLI commands as functions returning plain
//! Python objects.

use std::path::PathBuf;

use fsrlab_cli::{cmd_budget, cmd_report, cmd_run, cmd_select_demo, BudgetArgs, CliError, RunArgs, SelectArgs};
use fsrlab_core::memory::{GradientProbe, SelectionStrategy, StorageMode};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

fn py_err(e: CliError) -> PyErr {
    match e {
        CliError::Usage(m) => PyValueError::new_err(m),
        CliError::Runtime(m) => PyRuntimeError::new_err(m),
    }
}

/// Examples per task that fit in EWC's storage for a model.
#[pyfunction]
#[pyo3(signature = (model, d, k, tasks, storage = "float32"))]
fn budget<'py>(py: Python<'py>, model: &str, d: u64, k: u64, tasks: u64, storage: &str) -> PyResult<Bound<'py, PyDict>> {
    let storage = match storage {
        "float32" => StorageMode::Float32,
        "uint8" => StorageMode::Uint8,
        other => return Err(PyValueError::new_err(format!("unknown storage '{other}' (float32, uint8)"))),
    };
    let r = cmd_budget(&BudgetArgs {
        model: model.into(),
        d,
        k,
        n_tasks: tasks,
        storage,
    })
    .map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("params", r.params)?;
    out.set_item("ewc_floats", r.ewc_floats)?;
    out.set_item("floats_per_image", r.floats_per_image)?;
    out.set_item("images_per_task", r.images_per_task)?;
    out.set_item("exact_images_per_task", r.exact_images_per_task)?;
    Ok(out)
}

/// Runs a config file; returns one dict per (arm, seed).
#[pyfunction]
#[pyo3(signature = (config, overrides = Vec::new(), out = "runs".into(), jobs = 1, seeds = None, checkpoint = false))]
fn run<'py>(
    py: Python<'py>,
    config: PathBuf,
    overrides: Vec<String>,
    out: PathBuf,
    jobs: usize,
    seeds: Option<Vec<u64>>,
    checkpoint: bool,
) -> PyResult<Bound<'py, PyList>> {
    let args = RunArgs {
        config,
        overrides,
        out,
        jobs,
        checkpoint,
        seeds,
    };
    let outcomes = py.detach(|| cmd_run(&args)).map_err(py_err)?;
    let list = PyList::empty(py);
    for o in outcomes {
        let d = PyDict::new(py);
        d.set_item("arm", o.arm)?;
        d.set_item("seed", o.seed)?;
        d.set_item("dir", o.dir.display().to_string())?;
        match o.result {
            Ok(acc) => d.set_item("final_avg_accuracy", acc)?,
            Err(e) => d.set_item("error", e)?,
        }
        list.append(d)?;
    }
    Ok(list)
}

/// Selects `m` examples per class; returns the chosen row indices.
#[pyfunction]
#[pyo3(signature = (dataset, strategy, m, seed = 0, labels = None, out = "selection".into()))]
fn select_demo(
    py: Python<'_>,
    dataset: PathBuf,
    strategy: &str,
    m: usize,
    seed: u64,
    labels: Option<PathBuf>,
    out: PathBuf,
) -> PyResult<Vec<usize>> {
    let strategy: SelectionStrategy = strategy.parse().map_err(|e: fsrlab_core::Error| PyValueError::new_err(e.to_string()))?;
    let args = SelectArgs {
        dataset,
        labels,
        strategy,
        m,
        seed,
        out,
        hidden: vec![256, 256],
        probe: GradientProbe::default(),
    };
    py.detach(|| cmd_select_demo(&args)).map(|s| s.indices).map_err(py_err)
}

/// Aggregates a run root; returns `{arm: json summary}`.
#[pyfunction]
fn report<'py>(py: Python<'py>, run_dir: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let r = py.detach(|| cmd_report(&run_dir)).map_err(py_err)?;
    let out = PyDict::new(py);
    let json = py.import("json")?;
    for a in r.arms {
        let text = serde_json::to_string(&a).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        out.set_item(a.arm.clone(), json.call_method1("loads", (text,))?)?;
    }
    Ok(out)
}

#[pymodule]
fn fsrlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(budget, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(select_demo, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    Ok(())
}
