//! Python bindings: positions, losses, metrics, the synthetic generator, the
//! re-ranker model, training, evaluation and obedience.
//!
//! Structured results (reports, logs, breakdowns) are returned as plain
//! Python dicts with the same field names as the JSON files the CLI writes.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rerank_core::data::{self, SynthConfig};
use rerank_core::losses::{self, PrincipleWeights};
use rerank_core::metrics::{self, AucMode};
use rerank_core::model::{HeadMode, PositionMode};
use rerank_core::obedience::SwapTrials;
use rerank_core::training::{self, GradCheckOptions, Objective, TrainConfig};
use rerank_core::{
    checkpoint, Dataset, Error, ListSample, Matrix, PositionVector, RerankerConfig, RerankerParams, SplitTag,
};
use serde::Serialize;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Numerical(m) => PyRuntimeError::new_err(m),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn positions(v: Vec<usize>) -> PyResult<PositionVector> {
    PositionVector::new(v).map_err(err)
}

fn items_matrix(items: &[Vec<f64>]) -> PyResult<Matrix> {
    let cols = items.first().map_or(0, Vec::len);
    if items.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("item rows have different lengths"));
    }
    Ok(Matrix::from_vec(items.len(), cols, items.concat()))
}

fn parse_trials(v: &Bound<'_, PyAny>) -> PyResult<SwapTrials> {
    if let Ok(s) = v.extract::<String>() {
        return match s.as_str() {
            "all" | "strict" => Ok(SwapTrials::Strict),
            _ => Err(PyValueError::new_err(format!(
                "p2_trials must be a count or 'all', got '{s}'"
            ))),
        };
    }
    match v.extract::<usize>()? {
        0 => Err(PyValueError::new_err("p2_trials must be at least 1")),
        t => Ok(SwapTrials::Sampled(t)),
    }
}

/// Positions after sorting by descending score; ties keep their order in `tie_ref`.
#[pyfunction]
fn scores_to_positions(scores: Vec<f64>, tie_ref: Vec<usize>) -> PyResult<Vec<usize>> {
    let p = rerank_core::scores_to_positions(&scores, &positions(tie_ref)?).map_err(err)?;
    Ok(p.into_inner())
}

/// Exchanges the items at ranks `k` and `k + 1`.
#[pyfunction]
fn adjacent_swap(pos: Vec<usize>, k: usize) -> PyResult<Vec<usize>> {
    Ok(rerank_core::adjacent_swap(&positions(pos)?, k)
        .map_err(err)?
        .into_inner())
}

#[pyfunction]
fn log_loss(scores: Vec<f64>, labels: Vec<f64>) -> PyResult<f64> {
    losses::log_loss(&scores, &labels).map_err(err)
}

#[pyfunction]
fn cs_loss(pos_a: Vec<usize>, pos_b: Vec<usize>, s_a: Vec<f64>, s_b: Vec<f64>) -> PyResult<f64> {
    losses::cs_loss(&positions(pos_a)?, &positions(pos_b)?, &s_a, &s_b).map_err(err)
}

#[pyfunction]
fn list_auc(scores: Vec<f64>, labels: Vec<f64>) -> PyResult<Option<f64>> {
    metrics::list_auc(&scores, &labels).map_err(err)
}

#[pyfunction]
fn list_ndcg(ranking: Vec<usize>, labels: Vec<f64>) -> PyResult<Option<f64>> {
    metrics::list_ndcg(&positions(ranking)?, &labels).map_err(err)
}

#[pyfunction]
fn list_map_at_k(ranking: Vec<usize>, labels: Vec<f64>, k: usize) -> PyResult<Option<f64>> {
    metrics::list_map_at_k(&positions(ranking)?, &labels, k).map_err(err)
}

#[pyfunction]
fn list_precision_at_k(ranking: Vec<usize>, labels: Vec<f64>, k: usize) -> PyResult<f64> {
    metrics::list_precision_at_k(&positions(ranking)?, &labels, k).map_err(err)
}

/// A collection of ranked lists.
#[pyclass(name = "Dataset", module = "pyrerank")]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: data::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        data::save(&self.inner, path).map_err(err)
    }

    /// Builds a dataset from `(items, user, labels, init_pos)` tuples.
    #[staticmethod]
    #[allow(clippy::type_complexity)]
    fn from_lists(lists: Vec<(Vec<Vec<f64>>, Vec<f64>, Vec<u8>, Vec<usize>)>) -> PyResult<Self> {
        let samples = lists
            .into_iter()
            .enumerate()
            .map(|(i, (items, user, labels, init_pos))| ListSample {
                list_id: i.to_string(),
                items,
                user,
                labels,
                init_pos,
            })
            .collect();
        Ok(Self {
            inner: Dataset::new(samples, SplitTag::Train).map_err(err)?,
        })
    }

    /// Seeded partition into train, validation and test datasets.
    fn split(&self, train: f64, valid: f64, test: f64, seed: u64) -> PyResult<(Self, Self, Self)> {
        let (a, b, c) = data::split(&self.inner, (train, valid, test), seed).map_err(err)?;
        Ok((Self { inner: a }, Self { inner: b }, Self { inner: c }))
    }

    /// Lists as dicts with keys list_id, items, user, labels, init_pos.
    fn lists(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.samples)
    }

    #[getter]
    fn d_item(&self) -> usize {
        self.inner.d_item
    }

    #[getter]
    fn d_user(&self) -> usize {
        self.inner.d_user
    }

    fn click_rate(&self) -> f64 {
        self.inner.click_rate()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset({} lists, d_item={}, d_user={})",
            self.inner.len(),
            self.inner.d_item,
            self.inner.d_user
        )
    }
}

/// Synthetic click data; returns the dataset and its latent click model.
#[pyfunction]
#[pyo3(signature = (n_lists=1000, n=10, d_item=6, d_user=8, context_weight=0.5, ranker_noise=0.5, click_scale=1.0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn generate(
    py: Python<'_>,
    n_lists: usize,
    n: usize,
    d_item: usize,
    d_user: usize,
    context_weight: f64,
    ranker_noise: f64,
    click_scale: f64,
    seed: u64,
) -> PyResult<(PyDataset, Py<PyAny>)> {
    let cfg = SynthConfig {
        n_lists,
        n,
        d_item,
        d_user,
        context_weight,
        ranker_noise,
        click_scale,
        seed,
    };
    let (inner, truth) = data::generate(&cfg).map_err(err)?;
    Ok((PyDataset { inner }, to_py(py, &truth)?))
}

/// The list re-ranker and its parameters.
#[pyclass(name = "Reranker", module = "pyrerank")]
struct PyReranker {
    inner: RerankerParams,
}

fn head_mode(s: &str) -> PyResult<HeadMode> {
    match s {
        "softmax_list" => Ok(HeadMode::SoftmaxList),
        "sigmoid_item" => Ok(HeadMode::SigmoidItem),
        _ => Err(PyValueError::new_err(format!("unknown head_mode '{s}'"))),
    }
}

fn position_mode(s: &str) -> PyResult<PositionMode> {
    match s {
        "learned_add" => Ok(PositionMode::LearnedAdd),
        "off" => Ok(PositionMode::Off),
        _ => Err(PyValueError::new_err(format!("unknown position_mode '{s}'"))),
    }
}

#[pymethods]
impl PyReranker {
    #[new]
    #[pyo3(signature = (d_item, d_user, n_max, d_model=32, n_heads=2, n_blocks=1, mlp_hidden=vec![32], head_mode="softmax_list", position_mode="learned_add", seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        d_item: usize,
        d_user: usize,
        n_max: usize,
        d_model: usize,
        n_heads: usize,
        n_blocks: usize,
        mlp_hidden: Vec<usize>,
        head_mode: &str,
        position_mode: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = RerankerConfig {
            d_item,
            d_user,
            d_model,
            n_heads,
            n_blocks,
            mlp_hidden,
            n_max,
            head_mode: self::head_mode(head_mode)?,
            position_mode: self::position_mode(position_mode)?,
            seed,
        };
        Ok(Self {
            inner: rerank_core::init_params(&cfg).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: checkpoint::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        checkpoint::save(&self.inner, path).map_err(err)
    }

    /// Scores of the items of one list shown at positions `pos`.
    fn forward(&self, items: Vec<Vec<f64>>, user: Vec<f64>, pos: Vec<usize>) -> PyResult<Vec<f64>> {
        let s = self
            .inner
            .forward(&items_matrix(&items)?, &user, &positions(pos)?)
            .map_err(err)?;
        Ok(s.0)
    }

    /// The five loss terms and visited orders for one list.
    fn principled_loss(
        &self,
        py: Python<'_>,
        items: Vec<Vec<f64>>,
        user: Vec<f64>,
        labels: Vec<u8>,
        init_pos: Vec<usize>,
        swap_k: usize,
    ) -> PyResult<Py<PyAny>> {
        let sample = ListSample {
            list_id: String::new(),
            items,
            user,
            labels,
            init_pos,
        };
        let list = sample.prepare().map_err(err)?;
        to_py(py, &losses::principled_loss(&self.inner, &list, swap_k).map_err(err)?)
    }

    /// Zeroes the position table, making the model ignore the input order.
    fn clear_positions(&mut self) {
        self.inner.weights.pos_table.data.iter_mut().for_each(|v| *v = 0.0);
    }

    fn config(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.cfg)
    }

    #[getter]
    fn n_parameters(&self) -> usize {
        self.inner.weights.n_scalars()
    }

    fn __repr__(&self) -> String {
        let c = &self.inner.cfg;
        format!(
            "Reranker(d_item={}, d_user={}, d_model={}, n_max={}, {} parameters)",
            c.d_item,
            c.d_user,
            c.d_model,
            c.n_max,
            self.inner.weights.n_scalars()
        )
    }
}

/// Trains `model` on `data`; returns the trained model and the epoch log.
#[pyfunction]
#[pyo3(signature = (model, data, epochs=30, learning_rate=1e-4, batch_size=16, seed=0, p1=1.0, p2=1.0, log_loss_only=false, valid=None))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    model: &PyReranker,
    data: &PyDataset,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    seed: u64,
    p1: f64,
    p2: f64,
    log_loss_only: bool,
    valid: Option<&PyDataset>,
) -> PyResult<(PyReranker, Py<PyAny>)> {
    let cfg = TrainConfig {
        epochs,
        learning_rate,
        batch_size,
        seed,
        principle_weights: PrincipleWeights { p1, p2 },
        objective: if log_loss_only {
            Objective::LogLoss
        } else {
            Objective::Principled
        },
        ..TrainConfig::default()
    };
    let init = model.inner.clone();
    let valid = valid.map(|v| v.inner.clone());
    let train_data = data.inner.clone();
    let (params, log) = py
        .detach(|| training::train_from(&cfg, init, &train_data, valid.as_ref()))
        .map_err(err)?;
    Ok((PyReranker { inner: params }, to_py(py, &log)?))
}

#[pyfunction]
#[pyo3(signature = (model, data, auc_mode="per_list"))]
fn evaluate(py: Python<'_>, model: &PyReranker, data: &PyDataset, auc_mode: &str) -> PyResult<Py<PyAny>> {
    let mode = match auc_mode {
        "per_list" => AucMode::PerList,
        "pooled" => AucMode::Pooled,
        _ => return Err(PyValueError::new_err(format!("unknown auc_mode '{auc_mode}'"))),
    };
    to_py(py, &metrics::evaluate(&model.inner, &data.inner, mode).map_err(err)?)
}

/// P1 and P2 obedience rates; `p2_trials` is a count or `"all"`.
#[pyfunction]
#[pyo3(signature = (model, data, p2_trials=None, eval_seed=0))]
fn obedience(
    py: Python<'_>,
    model: &PyReranker,
    data: &PyDataset,
    p2_trials: Option<&Bound<'_, PyAny>>,
    eval_seed: u64,
) -> PyResult<Py<PyAny>> {
    let trials = p2_trials.map(parse_trials).transpose()?.unwrap_or_default();
    to_py(
        py,
        &rerank_core::obedience::obedience(&model.inner, &data.inner, trials, eval_seed).map_err(err)?,
    )
}

/// Analytic against central-difference gradients on one list.
#[pyfunction]
#[pyo3(signature = (model, items, user, labels, init_pos, swap_k, h=1e-5, threshold=1e-4))]
#[allow(clippy::too_many_arguments)]
fn gradient_check(
    py: Python<'_>,
    model: &PyReranker,
    items: Vec<Vec<f64>>,
    user: Vec<f64>,
    labels: Vec<u8>,
    init_pos: Vec<usize>,
    swap_k: usize,
    h: f64,
    threshold: f64,
) -> PyResult<Py<PyAny>> {
    let sample = ListSample {
        list_id: String::new(),
        items,
        user,
        labels,
        init_pos,
    };
    let list = sample.prepare().map_err(err)?;
    let opts = GradCheckOptions {
        h,
        threshold,
        ..GradCheckOptions::default()
    };
    to_py(
        py,
        &training::gradient_check(&model.inner, &list, swap_k, &opts).map_err(err)?,
    )
}

#[pymodule]
fn pyrerank(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyReranker>()?;
    m.add_function(wrap_pyfunction!(scores_to_positions, m)?)?;
    m.add_function(wrap_pyfunction!(adjacent_swap, m)?)?;
    m.add_function(wrap_pyfunction!(log_loss, m)?)?;
    m.add_function(wrap_pyfunction!(cs_loss, m)?)?;
    m.add_function(wrap_pyfunction!(list_auc, m)?)?;
    m.add_function(wrap_pyfunction!(list_ndcg, m)?)?;
    m.add_function(wrap_pyfunction!(list_map_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(list_precision_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(obedience, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_check, m)?)?;
    Ok(())
}
