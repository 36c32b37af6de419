//! On-disk formats: `.oodx` containers for dense data and fitted models,
//! `.jsonl` for token log-probabilities, `.pair.json` for benchmark pairs.

mod container;
mod pair;
mod tokens;

use std::path::Path;

pub use container::{
    decode, encode, read_container, write_container, ContainerKind, Manifest, FORMAT_VERSION, MAGIC,
};
pub use pair::{
    validate_pair, EvalRefs, IdRefs, IssueCode, OodRefs, PairConfig, PairIssue, ShiftType,
    SplitRefs,
};
pub use tokens::{read_token_logprobs, write_token_logprobs};

use crate::data::{
    sequential_ids, CalibrationState, FeatureKind, FeatureSet, LogitSet, SampleId, ScoreVector,
    Split,
};
use crate::detectors::{KnnIndex, LofModel};
use crate::error::{OodError, Result};
use crate::gaussian::GaussianModel;
use crate::linalg::{Cholesky, Matrix};

/// Types persisted as a single `.oodx` container.
pub trait Stored: Sized {
    const KIND: ContainerKind;

    fn to_parts(&self) -> Result<(Manifest, Vec<f32>)>;

    fn from_parts(manifest: Manifest, payload: Vec<f32>) -> Result<Self>;

    fn to_bytes(&self) -> Result<Vec<u8>> {
        let (m, p) = self.to_parts()?;
        encode(&m, &p)
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (m, p) = decode(bytes)?;
        m.expect_kind(Self::KIND)?;
        Self::from_parts(m, p)
    }

    fn save(&self, path: &Path) -> Result<()> {
        let (m, p) = self.to_parts()?;
        write_container(path, &m, &p)
    }

    fn load(path: &Path) -> Result<Self> {
        let (m, p) = read_container(path)?;
        m.expect_kind(Self::KIND)?;
        Self::from_parts(m, p)
    }
}

fn shape(m: &Manifest) -> (usize, usize) {
    (m.rows as usize, m.cols as usize)
}

fn ids_or_sequential(m: &Manifest, rows: usize) -> Result<Vec<SampleId>> {
    let ids: Vec<SampleId> = m.get_opt("ids")?.unwrap_or_else(|| sequential_ids(rows));
    if ids.len() != rows {
        return Err(OodError::MalformedContainer(format!(
            "{} manifest has {} ids for {rows} rows",
            m.kind,
            ids.len()
        )));
    }
    Ok(ids)
}

fn saturate_f32(v: f64) -> f32 {
    if v.is_nan() {
        return f32::NAN;
    }
    v.clamp(f32::MIN as f64, f32::MAX as f64) as f32
}

impl Stored for FeatureSet {
    const KIND: ContainerKind = ContainerKind::FeatureSet;

    fn to_parts(&self) -> Result<(Manifest, Vec<f32>)> {
        self.validate()?;
        let mut m = Manifest::new(Self::KIND, self.len(), self.dim());
        m.insert("feature_kind", self.feature_kind)?;
        m.insert("model_name", &self.model_name)?;
        m.insert("split", self.split)?;
        m.insert("ids", &self.ids)?;
        if let Some(labels) = &self.labels {
            m.insert("labels", labels)?;
        }
        Ok((m, self.features.as_slice().to_vec()))
    }

    fn from_parts(m: Manifest, payload: Vec<f32>) -> Result<Self> {
        let (rows, cols) = shape(&m);
        let fs = FeatureSet {
            features: Matrix::new(rows, cols, payload)?,
            feature_kind: m.get::<FeatureKind>("feature_kind")?,
            model_name: m.get_opt("model_name")?.unwrap_or_default(),
            split: m.get::<Split>("split")?,
            labels: m.get_opt("labels")?,
            ids: ids_or_sequential(&m, rows)?,
        };
        fs.validate()?;
        Ok(fs)
    }
}

impl Stored for LogitSet {
    const KIND: ContainerKind = ContainerKind::LogitSet;

    fn to_parts(&self) -> Result<(Manifest, Vec<f32>)> {
        let mut m = Manifest::new(Self::KIND, self.len(), self.classes());
        m.insert("ids", &self.ids)?;
        Ok((m, self.logits.as_slice().to_vec()))
    }

    fn from_parts(m: Manifest, payload: Vec<f32>) -> Result<Self> {
        let (rows, cols) = shape(&m);
        let ids = ids_or_sequential(&m, rows)?;
        LogitSet::with_ids(Matrix::new(rows, cols, payload)?, ids)
    }
}

/// Scores are stored as one column, or two when the positive distances are
/// kept (`[score, distance]` per row). Values beyond the `f32` range
/// saturate at `±f32::MAX`.
impl Stored for ScoreVector {
    const KIND: ContainerKind = ContainerKind::Scores;

    fn to_parts(&self) -> Result<(Manifest, Vec<f32>)> {
        if self.values.iter().any(|v| v.is_nan()) {
            return Err(OodError::invalid(format!(
                "{} scores contain NaN",
                self.detector
            )));
        }
        let cols = if self.distances.is_some() { 2 } else { 1 };
        let mut m = Manifest::new(Self::KIND, self.len(), cols);
        m.insert("detector", &self.detector)?;
        m.insert("calibration", self.calibration)?;
        m.insert("ids", &self.ids)?;
        let mut payload = Vec::with_capacity(self.len() * cols);
        let mut saturated = 0usize;
        let mut push = |v: f64, out: &mut Vec<f32>| {
            let s = saturate_f32(v);
            if (s as f64) != v && v.abs() > f32::MAX as f64 {
                saturated += 1;
            }
            out.push(s);
        };
        match &self.distances {
            Some(d) => {
                for (&v, &dist) in self.values.iter().zip(d) {
                    push(v, &mut payload);
                    push(dist, &mut payload);
                }
            }
            None => {
                for &v in &self.values {
                    push(v, &mut payload);
                }
            }
        }
        if saturated > 0 {
            log::warn!(
                "{}: {saturated} values saturated to the f32 range",
                self.detector
            );
        }
        Ok((m, payload))
    }

    fn from_parts(m: Manifest, payload: Vec<f32>) -> Result<Self> {
        let (rows, cols) = shape(&m);
        if cols != 1 && cols != 2 {
            return Err(OodError::MalformedContainer(format!(
                "scores container has {cols} columns; expected 1 or 2"
            )));
        }
        let ids = ids_or_sequential(&m, rows)?;
        let mut values = Vec::with_capacity(rows);
        let mut distances = Vec::with_capacity(if cols == 2 { rows } else { 0 });
        for row in payload.chunks_exact(cols) {
            values.push(row[0] as f64);
            if cols == 2 {
                distances.push(row[1] as f64);
            }
        }
        Ok(ScoreVector {
            detector: m.get("detector")?,
            ids,
            values,
            distances: (cols == 2).then_some(distances),
            calibration: m.get::<CalibrationState>("calibration")?,
        })
    }
}

/// Payload: `C` centroid rows followed by the `d` rows of the lower Cholesky
/// factor of the shrunk covariance (`rows = C + d`, `cols = d`).
impl Stored for GaussianModel {
    const KIND: ContainerKind = ContainerKind::GaussianModel;

    fn to_parts(&self) -> Result<(Manifest, Vec<f32>)> {
        let (c, d) = (self.class_count(), self.dim());
        let mut m = Manifest::new(Self::KIND, c + d, d);
        m.insert("classes", c)?;
        m.insert("dim", d)?;
        m.insert("fit_sample_count", self.fit_sample_count())?;
        m.insert("shrinkage_epsilon", self.shrinkage_epsilon())?;
        m.insert("feature_kind", self.feature_kind())?;
        let mut payload = self.centroids().as_slice().to_vec();
        payload.extend(self.factor().lower().iter().map(|&v| v as f32));
        Ok((m, payload))
    }

    fn from_parts(m: Manifest, payload: Vec<f32>) -> Result<Self> {
        let c: usize = m.get("classes")?;
        let d: usize = m.get("dim")?;
        if m.rows as usize != c + d || m.cols as usize != d {
            return Err(OodError::MalformedContainer(format!(
                "gaussian-model shape {}×{} does not match classes {c}, dim {d}",
                m.rows, m.cols
            )));
        }
        let centroids = Matrix::new(c, d, payload[..c * d].to_vec())?;
        let lower = payload[c * d..].iter().map(|&v| v as f64).collect();
        let factor = Cholesky::from_lower(d, lower)?;
        GaussianModel::from_factor(
            centroids,
            factor,
            m.get("shrinkage_epsilon")?,
            m.get("feature_kind")?,
            m.get("fit_sample_count")?,
        )
    }
}

/// Payload: the L2-normalized training rows.
impl Stored for KnnIndex {
    const KIND: ContainerKind = ContainerKind::KnnIndex;

    fn to_parts(&self) -> Result<(Manifest, Vec<f32>)> {
        let rows = self.normalized_rows();
        let mut m = Manifest::new(Self::KIND, rows.rows(), rows.cols());
        m.insert("k", self.k())?;
        Ok((m, rows.as_slice().to_vec()))
    }

    fn from_parts(m: Manifest, payload: Vec<f32>) -> Result<Self> {
        let (rows, cols) = shape(&m);
        KnnIndex::from_normalized(Matrix::new(rows, cols, payload)?, m.get("k")?)
    }
}

/// Payload: the reference rows as searched. Densities are recomputed on load.
impl Stored for LofModel {
    const KIND: ContainerKind = ContainerKind::LofModel;

    fn to_parts(&self) -> Result<(Manifest, Vec<f32>)> {
        let rows = self.train_rows();
        let mut m = Manifest::new(Self::KIND, rows.rows(), rows.cols());
        m.insert("k_lof", self.k())?;
        m.insert("normalize", self.normalize())?;
        Ok((m, rows.as_slice().to_vec()))
    }

    fn from_parts(m: Manifest, payload: Vec<f32>) -> Result<Self> {
        let (rows, cols) = shape(&m);
        LofModel::from_reference(
            Matrix::new(rows, cols, payload)?,
            m.get("k_lof")?,
            m.get("normalize")?,
        )
    }
}
