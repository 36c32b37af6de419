//! In-memory datasets: features, logits, token log-probabilities and scores.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{OodError, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SampleId {
    Int(i64),
    Str(String),
}

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleId::Int(i) => write!(f, "{i}"),
            SampleId::Str(s) => f.write_str(s),
        }
    }
}

impl From<i64> for SampleId {
    fn from(v: i64) -> Self {
        SampleId::Int(v)
    }
}

impl From<&str> for SampleId {
    fn from(v: &str) -> Self {
        SampleId::Str(v.to_owned())
    }
}

/// `0, 1, ..., n-1` as integer ids.
pub fn sequential_ids(n: usize) -> Vec<SampleId> {
    (0..n as i64).map(SampleId::Int).collect()
}

pub(crate) fn check_unique_ids(ids: &[SampleId]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id) {
            return Err(OodError::invalid(format!("duplicate sample id {id}")));
        }
    }
    Ok(())
}

pub(crate) fn check_aligned(a: &[SampleId], b: &[SampleId], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(OodError::AlignmentError(format!(
            "{what}: {} vs {} samples",
            a.len(),
            b.len()
        )));
    }
    if let Some(i) = a.iter().zip(b).position(|(x, y)| x != y) {
        return Err(OodError::AlignmentError(format!(
            "{what}: id {} vs {} at position {i}",
            a[i], b[i]
        )));
    }
    Ok(())
}

/// Pooling recipe that produced a sentence vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    LastCls,
    LastAvg,
    FirstLastAvg,
    FinetunedCls,
    #[default]
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    #[default]
    Test,
}

/// Per-sample feature vectors with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub features: Matrix,
    pub feature_kind: FeatureKind,
    pub model_name: String,
    pub split: Split,
    pub labels: Option<Vec<u32>>,
    pub ids: Vec<SampleId>,
}

impl FeatureSet {
    /// Unlabeled set with sequential ids.
    pub fn new(features: Matrix) -> Self {
        let ids = sequential_ids(features.rows());
        Self {
            features,
            feature_kind: FeatureKind::Other,
            model_name: String::new(),
            split: Split::Test,
            labels: None,
            ids,
        }
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != self.features.rows() {
            return Err(OodError::dim(
                "label count",
                self.features.rows(),
                labels.len(),
            ));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_ids(mut self, ids: Vec<SampleId>) -> Result<Self> {
        if ids.len() != self.features.rows() {
            return Err(OodError::dim("id count", self.features.rows(), ids.len()));
        }
        check_unique_ids(&ids)?;
        self.ids = ids;
        Ok(self)
    }

    pub fn with_kind(mut self, kind: FeatureKind) -> Self {
        self.feature_kind = kind;
        self
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn with_model_name(mut self, name: impl Into<String>) -> Self {
        self.model_name = name.into();
        self
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ids.len() != self.len() {
            return Err(OodError::dim("id count", self.len(), self.ids.len()));
        }
        check_unique_ids(&self.ids)?;
        if let Some(labels) = &self.labels {
            if labels.len() != self.len() {
                return Err(OodError::dim("label count", self.len(), labels.len()));
            }
        }
        Ok(())
    }

    /// Number of classes implied by dense labels `0..C`.
    ///
    /// Fails when labels are missing or some class in `0..=max` has no sample.
    pub fn dense_class_count(&self) -> Result<usize> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| OodError::invalid("feature set has no labels"))?;
        dense_class_count(labels)
    }
}

pub(crate) fn dense_class_count(labels: &[u32]) -> Result<usize> {
    let Some(&max) = labels.iter().max() else {
        return Err(OodError::invalid("no labeled samples"));
    };
    let classes = max as usize + 1;
    let mut seen = vec![false; classes];
    for &l in labels {
        seen[l as usize] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(OodError::invalid(format!(
            "labels are not dense: class {missing} of 0..{classes} has no samples"
        )));
    }
    Ok(classes)
}

/// Classifier logits, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitSet {
    pub logits: Matrix,
    pub ids: Vec<SampleId>,
}

impl LogitSet {
    pub fn new(logits: Matrix) -> Result<Self> {
        let ids = sequential_ids(logits.rows());
        Self::with_ids(logits, ids)
    }

    pub fn with_ids(logits: Matrix, ids: Vec<SampleId>) -> Result<Self> {
        if logits.cols() < 2 && !logits.is_empty() {
            return Err(OodError::invalid(format!(
                "logits need at least 2 classes, got {}",
                logits.cols()
            )));
        }
        if ids.len() != logits.rows() {
            return Err(OodError::dim("id count", logits.rows(), ids.len()));
        }
        check_unique_ids(&ids)?;
        Ok(Self { logits, ids })
    }

    pub fn len(&self) -> usize {
        self.logits.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.logits.cols()
    }
}

/// Natural-log next-token probabilities, ragged per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLogProbSet {
    pub ids: Vec<SampleId>,
    pub logprobs: Vec<Vec<f64>>,
}

impl TokenLogProbSet {
    pub fn new(ids: Vec<SampleId>, logprobs: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != logprobs.len() {
            return Err(OodError::dim("id count", logprobs.len(), ids.len()));
        }
        check_unique_ids(&ids)?;
        for (id, lp) in ids.iter().zip(&logprobs) {
            if lp.is_empty() {
                return Err(OodError::invalid(format!(
                    "sample {id} has no token log-probabilities"
                )));
            }
            if let Some(bad) = lp.iter().find(|v| **v > 0.0 || !v.is_finite()) {
                return Err(OodError::invalid(format!(
                    "sample {id} has log-probability {bad}; entries must be finite and <= 0"
                )));
            }
        }
        Ok(Self { ids, logprobs })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// What has been done to a score vector's values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationState {
    /// Detector output as computed.
    #[default]
    Raw,
    /// Fused from standardized components.
    Standardized,
    /// Fused from min-max normalized components.
    Minmax,
    /// Fused without normalization.
    Unnormalized,
}

/// Per-sample confidence scores `S(x)`: higher means more in-distribution.
///
/// Distance-based detectors also keep the positive distance they negated
/// (`distances`), so calibration never has to undo a sign flip.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub detector: String,
    pub ids: Vec<SampleId>,
    pub values: Vec<f64>,
    pub distances: Option<Vec<f64>>,
    pub calibration: CalibrationState,
}

impl ScoreVector {
    pub fn new(detector: impl Into<String>, ids: Vec<SampleId>, values: Vec<f64>) -> Result<Self> {
        if ids.len() != values.len() {
            return Err(OodError::dim("score id count", values.len(), ids.len()));
        }
        Ok(Self {
            detector: detector.into(),
            ids,
            values,
            distances: None,
            calibration: CalibrationState::Raw,
        })
    }

    /// Scores `-d` for each distance `d`, keeping the distances alongside.
    pub fn from_distances(
        detector: impl Into<String>,
        ids: Vec<SampleId>,
        distances: Vec<f64>,
    ) -> Result<Self> {
        let values = distances.iter().map(|d| -d).collect();
        let mut sv = Self::new(detector, ids, values)?;
        sv.distances = Some(distances);
        Ok(sv)
    }

    /// Unlabeled scores with sequential ids.
    pub fn from_values(detector: impl Into<String>, values: Vec<f64>) -> Self {
        let ids = sequential_ids(values.len());
        Self {
            detector: detector.into(),
            ids,
            values,
            distances: None,
            calibration: CalibrationState::Raw,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Distance-like values: stored distances when present, else `-S`.
    pub fn distance_values(&self) -> Vec<f64> {
        match &self.distances {
            Some(d) => d.clone(),
            None => self.values.iter().map(|v| -v).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_labels() {
        assert_eq!(dense_class_count(&[0, 1, 1, 2]).unwrap(), 3);
        assert!(dense_class_count(&[0, 2]).is_err());
        assert!(dense_class_count(&[]).is_err());
    }

    #[test]
    fn token_set_contract() {
        assert!(TokenLogProbSet::new(vec![1.into()], vec![vec![]]).is_err());
        assert!(TokenLogProbSet::new(vec![1.into()], vec![vec![0.1]]).is_err());
        assert!(TokenLogProbSet::new(vec![1.into()], vec![vec![0.0, -2.0]]).is_ok());
    }

    #[test]
    fn ids_must_be_unique() {
        let fs = FeatureSet::new(Matrix::zeros(2, 1));
        assert!(fs.with_ids(vec!["a".into(), "a".into()]).is_err());
    }

    #[test]
    fn sample_id_json_forms() {
        let ids: Vec<SampleId> = serde_json::from_str(r#"[3, "x"]"#).unwrap();
        assert_eq!(ids, vec![SampleId::Int(3), SampleId::Str("x".into())]);
    }

    #[test]
    fn logits_need_two_classes() {
        assert!(LogitSet::new(Matrix::zeros(3, 1)).is_err());
    }
}
