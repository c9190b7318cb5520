//! Python bindings (`aspca_py`).
//!
//! Matrices cross the boundary as lists of rows. Structured results come back
//! as plain dicts.

use std::path::PathBuf;

use aspca::data::fit_preprocess_rows;
use aspca::detector::ThresholdRule;
use aspca::global_opt::{self, GlobalOptConfig};
use aspca::interpret::{interpret_with_cutoff, render_all};
use aspca::sdp::{self, SdpProblem, Sense, SolverConfig};
use aspca::{
    apply_preprocess, covariance, group_by_signature, ColumnConfig, DetectionModel, FitConfig,
    Matrix, RawTable, Variant,
};
use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(aspca_py, NumericalError, PyRuntimeError);

fn err(e: aspca::Error) -> PyErr {
    match e {
        aspca::Error::Io(io) => PyOSError::new_err(io.to_string()),
        e if e.is_numerical() => NumericalError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    Matrix::from_rows(rows).map_err(err)
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// Serializable value → Python objects via the `json` module.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn variant(name: &str) -> PyResult<Variant> {
    name.parse().map_err(err)
}

#[allow(clippy::too_many_arguments)]
fn fit_config(
    v: &str,
    d: usize,
    lam: f64,
    max_iter: usize,
    tol: f64,
    seed: u64,
    require_convergence: bool,
) -> PyResult<FitConfig> {
    let mut cfg = FitConfig::new(variant(v)?, d, lam);
    cfg.solver.max_iter = max_iter;
    cfg.solver.tol = tol;
    cfg.global_opt.seed = seed;
    cfg.require_convergence = require_convergence;
    Ok(cfg)
}

/// A fitted detector: preprocessing, abnormal loadings and an SPE threshold.
#[pyclass(name = "Model", module = "aspca_py")]
pub struct PyModel {
    inner: DetectionModel,
}

impl PyModel {
    fn prepared(&self, rows: &[Vec<f64>]) -> PyResult<Matrix> {
        let t: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| self.inner.preprocessing.transform_numeric(r))
            .collect::<aspca::Result<_>>()
            .map_err(err)?;
        matrix(&t)
    }
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: aspca::load_model(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        aspca::save_model(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.inner.threshold
    }

    #[setter]
    fn set_threshold(&mut self, t: f64) -> PyResult<()> {
        self.inner = self
            .inner
            .clone()
            .with_threshold(t, ThresholdRule::Explicit)
            .map_err(err)?;
        Ok(())
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn variant(&self) -> Option<String> {
        self.inner.variant.map(|v| v.short_name().to_string())
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names.clone()
    }

    /// Abnormal loading matrix, p rows by d columns.
    #[getter]
    fn loadings(&self) -> Vec<Vec<f64>> {
        rows_of(&self.inner.v_abnormal)
    }

    #[pyo3(signature = (cutoff = 0.1))]
    fn components(&self, cutoff: f64) -> PyResult<Vec<String>> {
        render_all(&self.inner, cutoff).map_err(err)
    }

    /// SPE of raw numeric rows (the model's centering and scaling are applied).
    fn score(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let m = self.prepared(&rows)?;
        Ok(self
            .inner
            .score_batch(&m)
            .map_err(err)?
            .into_iter()
            .map(|s| s.spe)
            .collect())
    }

    /// Scores of a CSV read with the model's fitted preprocessing.
    #[pyo3(signature = (path, config = None))]
    fn score_csv(&self, path: PathBuf, config: Option<PathBuf>) -> PyResult<Vec<f64>> {
        let raw = RawTable::read_path(&path).map_err(err)?;
        let cfg = load_config(config, &raw)?;
        let (table, _) =
            apply_preprocess(&self.inner.preprocessing, &raw, Some(&cfg)).map_err(err)?;
        Ok(self
            .inner
            .score_batch(&table.matrix)
            .map_err(err)?
            .into_iter()
            .map(|s| s.spe)
            .collect())
    }

    /// Ranked contributions and signature of one raw row.
    #[pyo3(signature = (row, cutoff = 0.1))]
    fn interpret<'py>(
        &self,
        py: Python<'py>,
        row: Vec<f64>,
        cutoff: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let m = self.prepared(&[row])?;
        let rep = interpret_with_cutoff(&self.inner, m.row(0), cutoff).map_err(err)?;
        let mut value =
            serde_json::to_value(&rep).map_err(|e| PyValueError::new_err(e.to_string()))?;
        value["signature_text"] = rep.signature.to_string().into();
        to_py(py, &value)
    }

    /// Signature groups of the rows above the threshold; members index `rows`.
    fn group<'py>(&self, py: Python<'py>, rows: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
        let m = self.prepared(&rows)?;
        let mut ids = Vec::new();
        let mut reports = Vec::new();
        for i in 0..m.rows() {
            let rep = aspca::interpret(&self.inner, m.row(i)).map_err(err)?;
            if rep.spe > self.inner.threshold {
                ids.push(i);
                reports.push(rep);
            }
        }
        let groups = group_by_signature(&reports, &ids).map_err(err)?;
        let value: Vec<serde_json::Value> = groups
            .iter()
            .map(|g| {
                serde_json::json!({
                    "signature": g.signature.to_string(),
                    "count": g.count,
                    "members": g.members,
                })
            })
            .collect();
        to_py(py, &value)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(variant={}, p={}, d={}, threshold={})",
            self.variant().unwrap_or_else(|| "?".into()),
            self.p(),
            self.d(),
            self.inner.threshold
        )
    }
}

/// The config file, or `label`/`category` columns picked up by name.
fn load_config(path: Option<PathBuf>, raw: &RawTable) -> PyResult<ColumnConfig> {
    if let Some(p) = path {
        return ColumnConfig::load(&p).map_err(err);
    }
    let has = |name: &str| raw.headers.iter().any(|h| h == name);
    Ok(ColumnConfig {
        label_column: has("label").then(|| "label".into()),
        category_column: has("category").then(|| "category".into()),
        ..ColumnConfig::default()
    })
}

/// Fits on the normal rows of a CSV (all rows with `include_anomalies`).
#[pyfunction]
#[pyo3(signature = (path, variant, d, lam = 0.0, config = None, quantile = 0.95,
    include_anomalies = false, max_iter = 5000, tol = 1e-6, seed = 0, require_convergence = true))]
#[allow(clippy::too_many_arguments)]
fn fit_csv(
    py: Python<'_>,
    path: PathBuf,
    variant: &str,
    d: usize,
    lam: f64,
    config: Option<PathBuf>,
    quantile: f64,
    include_anomalies: bool,
    max_iter: usize,
    tol: f64,
    seed: u64,
    require_convergence: bool,
) -> PyResult<PyModel> {
    let raw = RawTable::read_path(&path).map_err(err)?;
    let cols = load_config(config, &raw)?;
    let cfg = fit_config(variant, d, lam, max_iter, tol, seed, require_convergence)?;
    py.detach(|| -> aspca::Result<PyModel> {
        let labels = raw.labels(&cols)?;
        let rows: Vec<usize> = match (&labels, include_anomalies) {
            (Some(l), false) => (0..l.len()).filter(|&i| !l[i]).collect(),
            _ => (0..raw.rows.len()).collect(),
        };
        let spec = fit_preprocess_rows(&raw, &cols, Some(&rows))?;
        let (table, _) = apply_preprocess(&spec, &raw, Some(&cols))?;
        let train = table.subset(&rows);
        finish_fit(&train, spec, &cfg, quantile)
    })
    .map_err(err)
}

fn finish_fit(
    train: &aspca::DataTable,
    spec: aspca::PreprocessSpec,
    cfg: &FitConfig,
    quantile: f64,
) -> aspca::Result<PyModel> {
    let sub = aspca::fit(&covariance(&train.matrix)?, cfg)?;
    let mut det = DetectionModel::from_subspace(&sub, 0.0, train.feature_names.clone(), spec)?;
    det.lambda = Some(cfg.lambda);
    let scores: Vec<f64> = det
        .score_batch(&train.matrix)?
        .into_iter()
        .map(|s| s.spe)
        .collect();
    let t = aspca::choose_threshold(&scores, quantile, None)?;
    Ok(PyModel {
        inner: det.with_threshold(t, ThresholdRule::Quantile { q: quantile })?,
    })
}

/// Fits on numeric rows. Columns are centered, and scaled to max-abs one when `scale`.
#[pyfunction]
#[pyo3(signature = (rows, variant, d, lam = 0.0, feature_names = None, scale = false,
    quantile = 0.95, max_iter = 5000, tol = 1e-6, seed = 0, require_convergence = true))]
#[allow(clippy::too_many_arguments)]
fn fit_matrix(
    py: Python<'_>,
    rows: Vec<Vec<f64>>,
    variant: &str,
    d: usize,
    lam: f64,
    feature_names: Option<Vec<String>>,
    scale: bool,
    quantile: f64,
    max_iter: usize,
    tol: f64,
    seed: u64,
    require_convergence: bool,
) -> PyResult<PyModel> {
    let m = matrix(&rows)?;
    let names = feature_names.unwrap_or_else(|| (1..=m.cols()).map(|j| format!("x{j}")).collect());
    let cfg = fit_config(variant, d, lam, max_iter, tol, seed, require_convergence)?;
    py.detach(|| -> aspca::Result<PyModel> {
        let table = aspca::DataTable::new(m, names, None, None)?;
        let all: Vec<usize> = (0..table.n()).collect();
        let spec = aspca::data::fit_numeric(&table, &all, scale)?;
        let train = aspca::data::apply_numeric(&spec, &table)?;
        finish_fit(&train, spec, &cfg, quantile)
    })
    .map_err(err)
}

/// The synthetic set as a dict with `rows`, `feature_names`, `labels`, `categories`.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn gen_synthetic(py: Python<'_>, seed: u64) -> PyResult<Bound<'_, PyAny>> {
    let t = aspca::gen_synthetic(seed);
    to_py(
        py,
        &serde_json::json!({
            "rows": rows_of(&t.matrix),
            "feature_names": t.feature_names,
            "labels": t.labels,
            "categories": t.category,
        }),
    )
}

/// `(auc, [(fpr, tpr), ...])`.
#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<(f64, Vec<(f64, f64)>)> {
    let r = aspca::roc_auc(&scores, &labels).map_err(err)?;
    Ok((r.auc, r.points))
}

#[pyfunction]
#[pyo3(name = "covariance")]
fn py_covariance(rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows_of(&covariance(&matrix(&rows)?).map_err(err)?))
}

/// Ascending eigenvalues and eigenvectors (as columns) of a symmetric matrix.
#[pyfunction]
fn sym_eigen(a: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let e = aspca::sym_eigen(&matrix(&a)?).map_err(err)?;
    Ok((e.values.clone(), rows_of(&e.vectors)))
}

/// One relaxed sparse-component problem; `r` is the deflation projector.
#[pyfunction]
#[pyo3(signature = (a, lam = 0.0, r = None, maximize = true, max_iter = 5000, tol = 1e-6))]
fn solve_sdp<'py>(
    py: Python<'py>,
    a: Vec<Vec<f64>>,
    lam: f64,
    r: Option<Vec<Vec<f64>>>,
    maximize: bool,
    max_iter: usize,
    tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let a = matrix(&a)?;
    let r = match r {
        Some(r) => matrix(&r)?,
        None => Matrix::zeros(a.rows(), a.rows()),
    };
    let sense = if maximize {
        Sense::Maximize
    } else {
        Sense::Minimize
    };
    let problem = SdpProblem::new(a, r.clone(), lam, sense).map_err(err)?;
    let cfg = SolverConfig {
        max_iter,
        tol,
        ..SolverConfig::default()
    };
    let sol = py.detach(|| sdp::solve(&problem, &cfg)).map_err(err)?;
    let v = sdp::extract_leading_vector(&sol.x, &r).map_err(err)?;
    to_py(
        py,
        &serde_json::json!({
            "x": rows_of(&sol.x),
            "vector": v,
            "objective": sol.objective,
            "converged": sol.converged,
            "iterations": sol.iterations,
            "violation": sol.violation.max(),
        }),
    )
}

/// Sparsest orthonormal basis of span(V) found by the alternating rotation search.
#[pyfunction]
#[pyo3(signature = (v, seed = 0))]
fn global_optimize<'py>(
    py: Python<'py>,
    v: Vec<Vec<f64>>,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let v = matrix(&v)?;
    let cfg = GlobalOptConfig {
        seed,
        ..GlobalOptConfig::default()
    };
    let out = global_opt::optimize(&v, &cfg).map_err(err)?;
    to_py(
        py,
        &serde_json::json!({ "basis": rows_of(&out.basis), "report": out.report }),
    )
}

#[pymodule]
fn aspca_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_function(wrap_pyfunction!(fit_csv, m)?)?;
    m.add_function(wrap_pyfunction!(fit_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(gen_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(py_covariance, m)?)?;
    m.add_function(wrap_pyfunction!(sym_eigen, m)?)?;
    m.add_function(wrap_pyfunction!(solve_sdp, m)?)?;
    m.add_function(wrap_pyfunction!(global_optimize, m)?)?;
    Ok(())
}
