//! Python bindings: `import oodx`.
//!
//! Matrices cross the boundary as lists of rows. Scores are `ScoreVector`
//! objects with `values` (higher means more in-distribution).

use std::path::PathBuf;

use oodx_core::datastore::{read_token_logprobs, validate_pair, PairConfig, Stored};
use oodx_core::detectors::{self, EnergyForm, DEFAULT_K, DEFAULT_K_LOF, DEFAULT_TEMPERATURE};
use oodx_core::gaussian::DEFAULT_SHRINKAGE;
use oodx_core::synthbench::{self, OodMode, SynthSpec};
use oodx_core::{data, Aggregator, Matrix, Normalization, OodError, SampleId};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(oodx, OodxError, PyException);

fn err(e: OodError) -> PyErr {
    OodxError::new_err(format!("{}: {e}", e.name()))
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for oodx_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

#[derive(Clone, FromPyObject, IntoPyObject)]
enum Id {
    Int(i64),
    Str(String),
}

impl From<Id> for SampleId {
    fn from(id: Id) -> Self {
        match id {
            Id::Int(i) => SampleId::Int(i),
            Id::Str(s) => SampleId::Str(s),
        }
    }
}

impl From<&SampleId> for Id {
    fn from(id: &SampleId) -> Self {
        match id {
            SampleId::Int(i) => Id::Int(*i),
            SampleId::Str(s) => Id::Str(s.clone()),
        }
    }
}

fn to_ids(ids: Option<Vec<Id>>, n: usize) -> Vec<SampleId> {
    match ids {
        Some(ids) => ids.into_iter().map(SampleId::from).collect(),
        None => data::sequential_ids(n),
    }
}

fn from_ids(ids: &[SampleId]) -> Vec<Id> {
    ids.iter().map(Id::from).collect()
}

fn matrix(rows: Vec<Vec<f32>>) -> PyResult<Matrix> {
    if rows.is_empty() {
        return Err(PyValueError::new_err("need at least one row"));
    }
    Matrix::from_rows(&rows).py()
}

fn to_rows(m: &Matrix) -> Vec<Vec<f32>> {
    m.row_iter().map(<[f32]>::to_vec).collect()
}

#[pyclass(module = "oodx", from_py_object)]
#[derive(Clone)]
struct ScoreVector(oodx_core::ScoreVector);

#[pymethods]
impl ScoreVector {
    #[new]
    #[pyo3(signature = (detector, values, ids=None))]
    fn new(detector: String, values: Vec<f64>, ids: Option<Vec<Id>>) -> PyResult<Self> {
        let ids = to_ids(ids, values.len());
        oodx_core::ScoreVector::new(detector, ids, values)
            .py()
            .map(Self)
    }

    /// Scores `-d` from distances `d`.
    #[staticmethod]
    #[pyo3(signature = (detector, distances, ids=None))]
    fn from_distances(
        detector: String,
        distances: Vec<f64>,
        ids: Option<Vec<Id>>,
    ) -> PyResult<Self> {
        let ids = to_ids(ids, distances.len());
        oodx_core::ScoreVector::from_distances(detector, ids, distances)
            .py()
            .map(Self)
    }

    #[getter]
    fn detector(&self) -> String {
        self.0.detector.clone()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.0.values.clone()
    }

    #[getter]
    fn distances(&self) -> Option<Vec<f64>> {
        self.0.distances.clone()
    }

    #[getter]
    fn ids(&self) -> Vec<Id> {
        from_ids(&self.0.ids)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).py()
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        oodx_core::ScoreVector::load(&path).py().map(Self)
    }
}

#[pyclass(module = "oodx", from_py_object)]
#[derive(Clone)]
struct FeatureSet(oodx_core::FeatureSet);

#[pymethods]
impl FeatureSet {
    #[new]
    #[pyo3(signature = (rows, labels=None, ids=None, model_name=String::new()))]
    fn new(
        rows: Vec<Vec<f32>>,
        labels: Option<Vec<u32>>,
        ids: Option<Vec<Id>>,
        model_name: String,
    ) -> PyResult<Self> {
        let m = matrix(rows)?;
        let n = m.rows();
        let mut fs = oodx_core::FeatureSet::new(m)
            .with_model_name(model_name)
            .with_ids(to_ids(ids, n))
            .py()?;
        if let Some(labels) = labels {
            fs = fs.with_labels(labels).py()?;
        }
        Ok(Self(fs))
    }

    #[getter]
    fn rows(&self) -> Vec<Vec<f32>> {
        to_rows(&self.0.features)
    }

    #[getter]
    fn labels(&self) -> Option<Vec<u32>> {
        self.0.labels.clone()
    }

    #[getter]
    fn ids(&self) -> Vec<Id> {
        from_ids(&self.0.ids)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn model_name(&self) -> String {
        self.0.model_name.clone()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).py()
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        oodx_core::FeatureSet::load(&path).py().map(Self)
    }
}

#[pyclass(module = "oodx", from_py_object)]
#[derive(Clone)]
struct LogitSet(oodx_core::LogitSet);

#[pymethods]
impl LogitSet {
    #[new]
    #[pyo3(signature = (rows, ids=None))]
    fn new(rows: Vec<Vec<f32>>, ids: Option<Vec<Id>>) -> PyResult<Self> {
        let m = matrix(rows)?;
        let ids = to_ids(ids, m.rows());
        oodx_core::LogitSet::with_ids(m, ids).py().map(Self)
    }

    #[getter]
    fn rows(&self) -> Vec<Vec<f32>> {
        to_rows(&self.0.logits)
    }

    #[getter]
    fn classes(&self) -> usize {
        self.0.classes()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).py()
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        oodx_core::LogitSet::load(&path).py().map(Self)
    }
}

#[pyclass(module = "oodx", from_py_object)]
#[derive(Clone)]
struct GaussianModel(oodx_core::GaussianModel);

#[pymethods]
impl GaussianModel {
    /// Class means and shrunk pooled covariance from labeled features.
    #[staticmethod]
    #[pyo3(signature = (train, shrinkage=DEFAULT_SHRINKAGE))]
    fn fit(train: &FeatureSet, shrinkage: f64) -> PyResult<Self> {
        oodx_core::GaussianModel::fit(&train.0, shrinkage)
            .py()
            .map(Self)
    }

    /// Minimum Mahalanobis distance and the nearest class.
    fn distance(&self, z: Vec<f32>) -> PyResult<(f64, usize)> {
        self.0.distance(&z).py()
    }

    fn score(&self, features: &FeatureSet) -> PyResult<ScoreVector> {
        self.0.score_batch(&features.0).py().map(ScoreVector)
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.0.class_count()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn centroids(&self) -> Vec<Vec<f32>> {
        to_rows(self.0.centroids())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).py()
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        oodx_core::GaussianModel::load(&path).py().map(Self)
    }
}

#[pyclass(module = "oodx", from_py_object)]
#[derive(Clone)]
struct KnnIndex(detectors::KnnIndex);

#[pymethods]
impl KnnIndex {
    #[staticmethod]
    #[pyo3(signature = (train, k=DEFAULT_K))]
    fn fit(train: &FeatureSet, k: usize) -> PyResult<Self> {
        detectors::KnnIndex::fit_features(&train.0, k)
            .py()
            .map(Self)
    }

    /// Mean distance to the k nearest normalized training rows.
    fn mean_distance(&self, z: Vec<f32>) -> PyResult<f64> {
        self.0.mean_distance(&z).py()
    }

    fn score(&self, features: &FeatureSet) -> PyResult<ScoreVector> {
        self.0.score_batch(&features.0).py().map(ScoreVector)
    }

    #[getter]
    fn k(&self) -> usize {
        self.0.k()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).py()
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        detectors::KnnIndex::load(&path).py().map(Self)
    }
}

#[pyclass(module = "oodx", from_py_object)]
#[derive(Clone)]
struct LofModel(detectors::LofModel);

#[pymethods]
impl LofModel {
    #[staticmethod]
    #[pyo3(signature = (train, k=DEFAULT_K_LOF, normalize=false))]
    fn fit(train: &FeatureSet, k: usize, normalize: bool) -> PyResult<Self> {
        detectors::LofModel::fit_features(&train.0, k, normalize)
            .py()
            .map(Self)
    }

    /// Local outlier factor of one query against the training set.
    fn factor(&self, z: Vec<f32>) -> PyResult<f64> {
        self.0.factor(&z).py()
    }

    fn score(&self, features: &FeatureSet) -> PyResult<ScoreVector> {
        self.0.score_batch(&features.0).py().map(ScoreVector)
    }

    #[getter]
    fn k(&self) -> usize {
        self.0.k()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).py()
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        detectors::LofModel::load(&path).py().map(Self)
    }
}

#[pyclass(module = "oodx", from_py_object)]
#[derive(Clone)]
struct CalibrationStats(oodx_core::CalibrationStats);

#[pymethods]
impl CalibrationStats {
    #[getter]
    fn mean(&self) -> f64 {
        self.0.mean
    }

    #[getter]
    fn std(&self) -> f64 {
        self.0.std
    }

    #[getter]
    fn min(&self) -> f64 {
        self.0.min
    }

    #[getter]
    fn max(&self) -> f64 {
        self.0.max
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n
    }

    #[getter]
    fn detector(&self) -> String {
        self.0.detector.clone()
    }

    fn __repr__(&self) -> String {
        let s = &self.0;
        format!(
            "CalibrationStats(detector={:?}, n={}, mean={}, std={}, min={}, max={})",
            s.detector, s.n, s.mean, s.std, s.min, s.max
        )
    }
}

#[pyclass(module = "oodx", get_all, from_py_object)]
#[derive(Clone)]
struct EvalReport {
    pair: String,
    detector: String,
    auroc: f64,
    far95: f64,
    gamma_at_95tpr: f64,
    n_id: usize,
    n_ood: usize,
    table_row: String,
}

#[pymethods]
impl EvalReport {
    fn __repr__(&self) -> String {
        format!("EvalReport({})", self.table_row)
    }
}

#[pyfunction]
fn msp(logits: &LogitSet) -> ScoreVector {
    ScoreVector(detectors::msp(&logits.0))
}

#[pyfunction]
#[pyo3(signature = (logits, temperature=DEFAULT_TEMPERATURE))]
fn scaled_msp(logits: &LogitSet, temperature: f64) -> PyResult<ScoreVector> {
    detectors::scaled_msp(&logits.0, temperature)
        .py()
        .map(ScoreVector)
}

/// Energy scores and the rows whose exponent hit the clamp.
#[pyfunction]
#[pyo3(signature = (logits, logsumexp=false))]
fn energy(logits: &LogitSet, logsumexp: bool) -> (ScoreVector, Vec<usize>) {
    let form = if logsumexp {
        EnergyForm::LogSumExp
    } else {
        EnergyForm::Verbatim
    };
    let r = detectors::energy(&logits.0, form);
    (ScoreVector(r.value), r.flagged_rows)
}

#[pyfunction]
fn d2u(logits: &LogitSet) -> ScoreVector {
    ScoreVector(detectors::d2u(&logits.0))
}

/// Perplexity-based confidence from per-sample token log-probabilities.
#[pyfunction]
#[pyo3(signature = (logprobs, ids=None))]
fn ppl(logprobs: Vec<Vec<f64>>, ids: Option<Vec<Id>>) -> PyResult<ScoreVector> {
    let ids = to_ids(ids, logprobs.len());
    let set = oodx_core::TokenLogProbSet::new(ids, logprobs).py()?;
    detectors::ppl_score(&set).py().map(ScoreVector)
}

/// Token log-probabilities from a JSON Lines file, as `(ids, logprobs)`.
#[pyfunction]
fn read_tokens(path: PathBuf) -> PyResult<(Vec<Id>, Vec<Vec<f64>>)> {
    let set = read_token_logprobs(&path).py()?;
    Ok((from_ids(&set.ids), set.logprobs))
}

/// Population statistics of the distances in `scores`.
///
/// Zero spread raises unless `allow_degenerate` is set.
#[pyfunction]
#[pyo3(signature = (scores, split="val", allow_degenerate=false))]
fn calibrate(
    scores: &ScoreVector,
    split: &str,
    allow_degenerate: bool,
) -> PyResult<CalibrationStats> {
    match oodx_core::calibrate(&scores.0, split) {
        Ok(s) => Ok(CalibrationStats(s)),
        Err(OodError::DegenerateCalibration { stats }) if allow_degenerate => {
            Ok(CalibrationStats(stats))
        }
        Err(e) => Err(err(e)),
    }
}

fn parse_norm(norm: &str) -> PyResult<Normalization> {
    match norm {
        "standardize" => Ok(Normalization::Standardize),
        "minmax" => Ok(Normalization::Minmax),
        "none" => Ok(Normalization::None),
        _ => Err(PyValueError::new_err(format!(
            "unknown normalization {norm:?}"
        ))),
    }
}

fn parse_agg(agg: &str, weights: Option<Vec<f64>>) -> PyResult<Aggregator> {
    match (agg, weights) {
        ("mean", None) => Ok(Aggregator::Mean),
        ("max", None) => Ok(Aggregator::Max),
        ("weighted", Some(w)) => Ok(Aggregator::Weighted(w)),
        ("weighted", None) => Err(PyValueError::new_err("weighted needs weights")),
        (_, Some(_)) => Err(PyValueError::new_err("weights only apply to weighted")),
        _ => Err(PyValueError::new_err(format!("unknown aggregator {agg:?}"))),
    }
}

/// Normalizes and aggregates aligned distance components.
#[pyfunction]
#[pyo3(signature = (components, stats=Vec::new(), agg="mean", norm="standardize", weights=None))]
fn fuse(
    components: Vec<ScoreVector>,
    stats: Vec<CalibrationStats>,
    agg: &str,
    norm: &str,
    weights: Option<Vec<f64>>,
) -> PyResult<ScoreVector> {
    let c: Vec<&oodx_core::ScoreVector> = components.iter().map(|s| &s.0).collect();
    let s: Vec<&oodx_core::CalibrationStats> = stats.iter().map(|s| &s.0).collect();
    let fused = oodx_core::fuse(&c, &s, parse_agg(agg, weights)?, parse_norm(norm)?).py()?;
    Ok(ScoreVector(fused.scores))
}

/// Fuses pre-trained and fine-tuned Mahalanobis distances.
#[pyfunction]
#[pyo3(signature = (md_pre, md_ft, stats_pre, stats_ft, agg="mean", norm="standardize", weights=None))]
fn gnome(
    md_pre: &ScoreVector,
    md_ft: &ScoreVector,
    stats_pre: &CalibrationStats,
    stats_ft: &CalibrationStats,
    agg: &str,
    norm: &str,
    weights: Option<Vec<f64>>,
) -> PyResult<ScoreVector> {
    let fused = oodx_core::gnome(
        &md_pre.0,
        &md_ft.0,
        &stats_pre.0,
        &stats_ft.0,
        parse_agg(agg, weights)?,
        parse_norm(norm)?,
    )
    .py()?;
    Ok(ScoreVector(fused.scores))
}

/// Probability that an ID sample outscores an OOD sample, ties counted half.
#[pyfunction]
fn auroc(id_scores: Vec<f64>, ood_scores: Vec<f64>) -> PyResult<f64> {
    oodx_core::auroc(&id_scores, &ood_scores).py()
}

/// `(far, gamma)`: OOD acceptance rate at the 95% TPR threshold.
#[pyfunction]
fn far95(id_scores: Vec<f64>, ood_scores: Vec<f64>) -> PyResult<(f64, f64)> {
    let r = oodx_core::far95(&id_scores, &ood_scores).py()?;
    Ok((r.far, r.gamma))
}

#[pyfunction]
#[pyo3(signature = (id_scores, ood_scores, pair="pair"))]
fn evaluate(id_scores: &ScoreVector, ood_scores: &ScoreVector, pair: &str) -> PyResult<EvalReport> {
    let r = oodx_core::EvalReport::evaluate(pair, &id_scores.0, &ood_scores.0).py()?;
    Ok(EvalReport {
        table_row: r.table_row(),
        pair: r.pair,
        detector: r.detector,
        auroc: r.auroc,
        far95: r.far95,
        gamma_at_95tpr: r.gamma_at_95tpr,
        n_id: r.n_id,
        n_ood: r.n_ood,
    })
}

/// Writes a synthetic pair into `out` and returns its config path.
#[pyfunction]
#[pyo3(signature = (out, mode="shifted-manifold", seed=0, train_per_class=None, eval_per_class=None, ood_count=None))]
fn synth(
    out: PathBuf,
    mode: &str,
    seed: u64,
    train_per_class: Option<usize>,
    eval_per_class: Option<usize>,
    ood_count: Option<usize>,
) -> PyResult<PathBuf> {
    let mode = match mode {
        "shifted-manifold" => OodMode::ShiftedManifold,
        "held-out-class" => OodMode::HeldOutClass,
        _ => return Err(PyValueError::new_err(format!("unknown mode {mode:?}"))),
    };
    let mut spec = SynthSpec::new(mode, seed);
    spec.train_per_class = train_per_class.unwrap_or(spec.train_per_class);
    spec.eval_per_class = eval_per_class.unwrap_or(spec.eval_per_class);
    spec.ood_count = ood_count.unwrap_or(spec.ood_count);
    std::fs::create_dir_all(&out).map_err(|e| err(e.into()))?;
    synthbench::generate(&spec).py()?.write(&out).py()
}

/// Problems found in a pair config, one message each.
#[pyfunction]
fn validate(pair: PathBuf) -> PyResult<Vec<String>> {
    let cfg = PairConfig::load(&pair).py()?;
    Ok(validate_pair(&cfg).into_iter().map(|i| i.message).collect())
}

#[pymodule]
fn oodx(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("OodxError", m.py().get_type::<OodxError>())?;
    m.add_class::<ScoreVector>()?;
    m.add_class::<FeatureSet>()?;
    m.add_class::<LogitSet>()?;
    m.add_class::<GaussianModel>()?;
    m.add_class::<KnnIndex>()?;
    m.add_class::<LofModel>()?;
    m.add_class::<CalibrationStats>()?;
    m.add_class::<EvalReport>()?;
    m.add_function(wrap_pyfunction!(msp, m)?)?;
    m.add_function(wrap_pyfunction!(scaled_msp, m)?)?;
    m.add_function(wrap_pyfunction!(energy, m)?)?;
    m.add_function(wrap_pyfunction!(d2u, m)?)?;
    m.add_function(wrap_pyfunction!(ppl, m)?)?;
    m.add_function(wrap_pyfunction!(read_tokens, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(gnome, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(far95, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    Ok(())
}
