//! Python bindings: datasets, models, losses, training and retrieval.
//!
//! Matrices cross the boundary as lists of rows. Config keys are passed as
//! keyword arguments using the same names as the `key=value` files.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use xmodal_core::config::{KvConfig, KvMap};
use xmodal_core::data::{self, SplitConfig, SynthConfig, TupleDataset};
use xmodal_core::gradcheck::{run_gradcheck, GradcheckConfig};
use xmodal_core::losses::{self, FrozenNeighbors, LossWeights};
use xmodal_core::model::{ModelConfig, ModelParams};
use xmodal_core::retrieval::{self, EmbeddingIndex};
use xmodal_core::tensor::{Tape, Tensor};
use xmodal_core::trainer::{self, Checkpoint, TrainConfig, TrainState};
use xmodal_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    Tensor::from_rows(&rows).map_err(py_err)
}

fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.rows().map(<[f64]>::to_vec).collect()
}

/// Keyword arguments as a config map; lists become comma-separated values
/// and booleans lower-case.
fn kwargs_to_kv(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<KvMap> {
    let mut kv = KvMap::new();
    let Some(kwargs) = kwargs else {
        return Ok(kv);
    };
    for (k, v) in kwargs.iter() {
        let key: String = k.extract()?;
        let value = if let Ok(list) = v.cast::<PyList>() {
            list.iter()
                .map(|x| x.str().map(|s| s.to_string()))
                .collect::<PyResult<Vec<_>>>()?
                .join(",")
        } else if let Ok(b) = v.extract::<bool>() {
            b.to_string()
        } else {
            v.str()?.to_string()
        };
        kv.insert(key, value);
    }
    Ok(kv)
}

#[pyclass(name = "Dataset", module = "xmodal", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: TupleDataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: data::load_dataset(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        data::save_dataset(&self.inner, &path).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn num_modalities(&self) -> usize {
        self.inner.num_modalities()
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.inner.dims().to_vec()
    }

    fn tuple_ids(&self) -> Vec<u64> {
        self.inner.tuples().iter().map(|t| t.id).collect()
    }

    fn labels(&self) -> Vec<Vec<u32>> {
        self.inner
            .tuples()
            .iter()
            .map(|t| t.labels.iter().copied().collect())
            .collect()
    }

    /// Feature rows of one modality, in tuple order.
    fn features(&self, modality: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&self.inner.full_matrix(modality).map_err(py_err)?))
    }

    #[pyo3(signature = (fractions = (0.52, 0.24, 0.24), seed = 0))]
    fn split(&self, fractions: (f64, f64, f64), seed: u64) -> PyResult<(Self, Self, Self)> {
        let cfg = SplitConfig {
            fractions: [fractions.0, fractions.1, fractions.2],
            seed,
        };
        let (a, b, c) = data::split(&self.inner, &cfg).map_err(py_err)?;
        Ok((Self { inner: a }, Self { inner: b }, Self { inner: c }))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(tuples={}, dims={:?})",
            self.inner.len(),
            self.inner.dims()
        )
    }
}

/// Synthetic paired dataset; keyword arguments override the generator
/// defaults (`num_tuples`, `num_classes`, `noise_sigma`, `seed`, ...).
#[pyfunction]
#[pyo3(signature = (**kwargs))]
fn generate_synthetic(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<PyDataset> {
    let cfg = SynthConfig::from_kv(kwargs_to_kv(kwargs)?).map_err(py_err)?;
    Ok(PyDataset {
        inner: data::generate_synthetic(&cfg).map_err(py_err)?,
    })
}

#[pyclass(name = "Model", module = "xmodal", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: ModelParams,
    train_config: TrainConfig,
}

#[pymethods]
impl PyModel {
    /// Freshly initialized parameters; keyword arguments are model config
    /// keys.
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let cfg = ModelConfig::from_kv(kwargs_to_kv(kwargs)?).map_err(py_err)?;
        Ok(Self {
            inner: ModelParams::init(&cfg).map_err(py_err)?,
            train_config: TrainConfig::default(),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = trainer::load_checkpoint(&path).map_err(py_err)?;
        Ok(Self {
            inner: ck.state.params,
            train_config: ck.train_config,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let ck = Checkpoint {
            train_config: self.train_config.clone(),
            state: TrainState::fresh(self.inner.clone()),
        };
        trainer::save_checkpoint(&ck, &path).map_err(py_err)
    }

    /// Resolved model config as `key=value` strings.
    fn config(&self) -> Vec<(String, String)> {
        self.inner
            .config()
            .to_kv()
            .iter()
            .map(|(k, v)| (k.to_owned(), v.to_owned()))
            .collect()
    }

    fn num_parameters(&self) -> usize {
        self.inner.tensors().iter().map(|t| t.numel()).sum()
    }

    fn features(&self, modality: usize, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let y = self
            .inner
            .forward_backbone(modality, &matrix(rows)?)
            .map_err(py_err)?;
        Ok(to_rows(&y))
    }

    fn embed(&self, modality: usize, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let z = self.inner.embed(modality, &matrix(rows)?).map_err(py_err)?;
        Ok(to_rows(&z))
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

/// Trains fresh parameters. `model` and `train` are dicts of config keys.
/// Returns the model and one dict per epoch.
#[pyfunction]
#[pyo3(signature = (train_set, val_set = None, model = None, train = None))]
fn train<'py>(
    py: Python<'py>,
    train_set: &PyDataset,
    val_set: Option<&PyDataset>,
    model: Option<&Bound<'py, PyDict>>,
    train: Option<&Bound<'py, PyDict>>,
) -> PyResult<(PyModel, Vec<Bound<'py, PyDict>>)> {
    let mut model_kv = kwargs_to_kv(model)?;
    if model_kv.get("input_dims").is_none() {
        model_kv.insert(
            "input_dims",
            xmodal_core::config::join_list(train_set.inner.dims()),
        );
    }
    let model_cfg = ModelConfig::from_kv(model_kv).map_err(py_err)?;
    let train_cfg = TrainConfig::from_kv(kwargs_to_kv(train)?).map_err(py_err)?;
    let (params, report) = trainer::train(
        &train_set.inner,
        val_set.map(|v| &v.inner),
        &model_cfg,
        &train_cfg,
    )
    .map_err(py_err)?;
    let rows = report
        .epochs
        .iter()
        .map(|e| {
            let d = PyDict::new(py);
            d.set_item("epoch", e.epoch)?;
            d.set_item("mim", e.train.mim)?;
            d.set_item("mde", e.train.mde)?;
            d.set_item("msp", e.train.msp)?;
            d.set_item("total", e.train.total)?;
            d.set_item("alpha", e.train.alpha)?;
            d.set_item("beta", e.train.beta)?;
            d.set_item("val_total", e.val_total)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((
        PyModel {
            inner: params,
            train_config: train_cfg,
        },
        rows,
    ))
}

fn with_pair<T>(
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    f: impl FnOnce(
        &mut Tape,
        xmodal_core::tensor::Var,
        xmodal_core::tensor::Var,
    ) -> xmodal_core::Result<T>,
) -> PyResult<T> {
    let mut tape = Tape::new();
    let va = tape.constant(matrix(a)?);
    let vb = tape.constant(matrix(b)?);
    f(&mut tape, va, vb).map_err(py_err)
}

/// Contrastive loss between two batches of embeddings.
#[pyfunction]
#[pyo3(signature = (z_j, z_k, tau = losses::DEFAULT_TAU, include_positive_in_denominator = false))]
fn loss_mim(
    z_j: Vec<Vec<f64>>,
    z_k: Vec<Vec<f64>>,
    tau: f64,
    include_positive_in_denominator: bool,
) -> PyResult<f64> {
    let w = LossWeights {
        tau,
        include_positive_in_denominator,
        ..LossWeights::default()
    };
    w.validate().map_err(py_err)?;
    with_pair(z_j, z_k, |t, a, b| {
        let l = losses::loss_mim(t, a, b, &w)?;
        t.scalar(l)
    })
}

/// Decorrelation loss between paired features.
#[pyfunction]
fn loss_mde(y_j: Vec<Vec<f64>>, y_k: Vec<Vec<f64>>) -> PyResult<f64> {
    with_pair(y_j, y_k, |t, a, b| {
        let l = losses::loss_mde(t, a, b)?;
        t.scalar(l)
    })
}

/// Intra-modal neighbor similarity loss.
#[pyfunction]
fn loss_msp(y_j: Vec<Vec<f64>>, y_k: Vec<Vec<f64>>) -> PyResult<f64> {
    with_pair(y_j, y_k, |t, a, b| {
        let l = losses::loss_msp(t, a, b)?;
        t.scalar(l)
    })
}

/// All three losses and their weighted total, as a dict.
#[pyfunction]
#[pyo3(signature = (z_j, z_k, y_j, y_k, alpha = 1.0, beta = 1.0, tau = losses::DEFAULT_TAU))]
#[allow(clippy::too_many_arguments)]
fn combined_loss<'py>(
    py: Python<'py>,
    z_j: Vec<Vec<f64>>,
    z_k: Vec<Vec<f64>>,
    y_j: Vec<Vec<f64>>,
    y_k: Vec<Vec<f64>>,
    alpha: f64,
    beta: f64,
    tau: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let w = LossWeights::new(alpha, beta, tau).map_err(py_err)?;
    let mut tape = Tape::new();
    let vars = [
        tape.constant(matrix(z_j)?),
        tape.constant(matrix(z_k)?),
        tape.constant(matrix(y_j)?),
        tape.constant(matrix(y_k)?),
    ];
    let (_, b) =
        losses::combined_loss(&mut tape, vars[0], vars[1], vars[2], vars[3], &w).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("mim", b.mim)?;
    d.set_item("mde", b.mde)?;
    d.set_item("msp", b.msp)?;
    d.set_item("total", b.total)?;
    Ok(d)
}

/// Index of each row's nearest other row (Euclidean, ties to lowest index).
#[pyfunction]
fn nearest_neighbors(rows: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
    let t = matrix(rows)?;
    let nn = FrozenNeighbors::select(&t, &t).map_err(py_err)?;
    Ok(nn.j)
}

#[pyfunction]
fn schedule_weight(epoch: usize, total_epochs: usize, initial: f64) -> PyResult<f64> {
    losses::schedule_weight(epoch, total_epochs, initial).map_err(py_err)
}

#[pyclass(name = "Index", module = "xmodal")]
struct PyIndex {
    inner: EmbeddingIndex,
}

#[pymethods]
impl PyIndex {
    /// Embeds every tuple of `dataset` with `model`.
    #[staticmethod]
    fn build(model: &PyModel, dataset: &PyDataset) -> PyResult<Self> {
        Ok(Self {
            inner: retrieval::build_index(&model.inner, &dataset.inner).map_err(py_err)?,
        })
    }

    fn __len__(&self) -> usize {
        if self.inner.num_modalities() == 0 {
            0
        } else {
            self.inner.len(0)
        }
    }

    /// Top-`k` `(tuple_id, score)` pairs from `target` modality.
    #[pyo3(signature = (query, target, k = retrieval::DEFAULT_K, exclude = None))]
    fn retrieve(
        &self,
        query: Vec<f64>,
        target: usize,
        k: usize,
        exclude: Option<u64>,
    ) -> PyResult<Vec<(u64, f64)>> {
        let r = retrieval::retrieve(&self.inner, &query, target, k, exclude).map_err(py_err)?;
        Ok(r.hits.iter().map(|h| (h.tuple_id, h.score)).collect())
    }

    /// Mean F1@k and NDCG@k of `queries` embedded in `source`, searched in
    /// `target`.
    #[pyo3(signature = (model, queries, source, target, k = retrieval::DEFAULT_K, exclude_self_tuple = true))]
    fn evaluate(
        &self,
        model: &PyModel,
        queries: &PyDataset,
        source: usize,
        target: usize,
        k: usize,
        exclude_self_tuple: bool,
    ) -> PyResult<(f64, f64)> {
        let r = retrieval::evaluate_cross_modal(
            &model.inner,
            &self.inner,
            &queries.inner,
            source,
            target,
            k,
            exclude_self_tuple,
        )
        .map_err(py_err)?;
        Ok((r.mean_f1, r.mean_ndcg))
    }

    #[pyo3(signature = (modality, k = retrieval::DEFAULT_K))]
    fn neighbor_purity(&self, modality: usize, k: usize) -> PyResult<f64> {
        retrieval::neighbor_purity(&self.inner, modality, k).map_err(py_err)
    }
}

#[pyfunction]
fn pair_f1(query: Vec<u32>, item: Vec<u32>) -> PyResult<f64> {
    retrieval::pair_f1(&query.into_iter().collect(), &item.into_iter().collect()).map_err(py_err)
}

#[pyfunction]
fn ndcg_at_k(relevances: Vec<f64>, k: usize) -> PyResult<f64> {
    retrieval::ndcg_at_k(&relevances, k).map_err(py_err)
}

/// Finite-difference check; returns `(passed, {loss: max_relative_error})`.
#[pyfunction]
#[pyo3(signature = (trials = 20, batch = 4, dims = 8, seed = 0))]
fn gradcheck(
    trials: usize,
    batch: usize,
    dims: usize,
    seed: u64,
) -> PyResult<(bool, Vec<(String, f64)>)> {
    let cfg = GradcheckConfig {
        trials,
        batch,
        dims,
        seed,
        ..GradcheckConfig::default()
    };
    let r = run_gradcheck(&cfg, None).map_err(py_err)?;
    Ok((
        r.passed(),
        r.checks
            .iter()
            .map(|c| (c.loss.to_owned(), c.max_relative_error))
            .collect(),
    ))
}

#[pymodule]
fn xmodal(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyIndex>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(loss_mim, m)?)?;
    m.add_function(wrap_pyfunction!(loss_mde, m)?)?;
    m.add_function(wrap_pyfunction!(loss_msp, m)?)?;
    m.add_function(wrap_pyfunction!(combined_loss, m)?)?;
    m.add_function(wrap_pyfunction!(nearest_neighbors, m)?)?;
    m.add_function(wrap_pyfunction!(schedule_weight, m)?)?;
    m.add_function(wrap_pyfunction!(pair_f1, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
