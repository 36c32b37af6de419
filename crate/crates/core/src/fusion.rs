//! Score-level fusion of distances from two feature spaces.
//!
//! Each component is normalized with statistics taken from its ID
//! validation distances, the normalized distances are aggregated, and the
//! aggregate is negated once to give a confidence score:
//! `S(x) = -Agg(Norm(d_pre(x)), Norm(d_ft(x)))`.

use serde::{Deserialize, Serialize};

use crate::data::{check_aligned, CalibrationState, FeatureKind, FeatureSet, ScoreVector};
use crate::error::{OodError, Result};
use crate::linalg::Matrix;

pub const GNOME_DETECTOR: &str = "gnome";

/// Tolerance on `Σ w = 1` for weighted aggregation.
const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Population statistics of a detector's distances on ID validation data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub detector: String,
    pub split: String,
    pub n: usize,
}

impl CalibrationStats {
    pub fn is_degenerate(&self, mode: Normalization) -> bool {
        match mode {
            Normalization::Standardize => self.std.is_nan() || self.std <= 0.0,
            Normalization::Minmax => self.max.is_nan() || self.min.is_nan() || self.max <= self.min,
            Normalization::None => false,
        }
    }
}

/// Computes mean, population std, min and max of the distance values.
///
/// Zero spread is reported as [`OodError::DegenerateCalibration`], which
/// carries the stats so callers can keep going with normalized values of 0.
pub fn calibrate(scores: &ScoreVector, split: &str) -> Result<CalibrationStats> {
    let values = scores.distance_values();
    if values.len() < 2 {
        return Err(OodError::invalid(format!(
            "calibration needs at least 2 samples, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let stats = CalibrationStats {
        mean,
        std: var.sqrt(),
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        detector: scores.detector.clone(),
        split: split.to_owned(),
        n: values.len(),
    };
    if stats.std == 0.0 {
        return Err(OodError::DegenerateCalibration { stats });
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// `(v - mean) / std`
    #[default]
    Standardize,
    /// `(v - min) / (max - min)`, unclamped.
    Minmax,
    /// Values pass through unchanged.
    None,
}

impl Normalization {
    fn calibration_state(self) -> CalibrationState {
        match self {
            Normalization::Standardize => CalibrationState::Standardized,
            Normalization::Minmax => CalibrationState::Minmax,
            Normalization::None => CalibrationState::Unnormalized,
        }
    }
}

/// Normalizes one distance. Degenerate stats give 0.
pub fn normalize(value: f64, stats: &CalibrationStats, mode: Normalization) -> f64 {
    if stats.is_degenerate(mode) {
        return 0.0;
    }
    match mode {
        Normalization::Standardize => (value - stats.mean) / stats.std,
        Normalization::Minmax => (value - stats.min) / (stats.max - stats.min),
        Normalization::None => value,
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Aggregator {
    #[default]
    Mean,
    Max,
    /// Non-negative weights summing to one, one per component.
    Weighted(Vec<f64>),
}

impl Aggregator {
    fn validate(&self, components: usize) -> Result<()> {
        match self {
            Aggregator::Mean | Aggregator::Max if components < 2 => Err(OodError::invalid(
                format!("aggregation needs at least 2 components, got {components}"),
            )),
            Aggregator::Weighted(w) => {
                if w.len() != components {
                    return Err(OodError::dim("weight count", components, w.len()));
                }
                if w.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                    return Err(OodError::invalid("weights must be finite and non-negative"));
                }
                let sum: f64 = w.iter().sum();
                if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                    return Err(OodError::invalid(format!("weights sum to {sum}, not 1")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn apply(&self, xs: &[f64]) -> f64 {
        match self {
            Aggregator::Mean => xs.iter().sum::<f64>() / xs.len() as f64,
            Aggregator::Max => xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Aggregator::Weighted(w) => w.iter().zip(xs).map(|(w, x)| w * x).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedScore {
    /// Fused confidence; `distances` holds the aggregate before negation.
    pub scores: ScoreVector,
    pub aggregator: Aggregator,
    pub normalization: Normalization,
    pub components: Vec<String>,
    /// Components whose stats were degenerate for the chosen normalization.
    pub degenerate_components: Vec<usize>,
}

/// Normalizes and aggregates any number of aligned distance components.
///
/// `stats` must hold one entry per component unless `mode` is `None`.
pub fn fuse(
    components: &[&ScoreVector],
    stats: &[&CalibrationStats],
    aggregator: Aggregator,
    mode: Normalization,
) -> Result<FusedScore> {
    let Some(first) = components.first() else {
        return Err(OodError::invalid("nothing to fuse"));
    };
    aggregator.validate(components.len())?;
    if mode != Normalization::None && stats.len() != components.len() {
        return Err(OodError::dim(
            "calibration stats count",
            components.len(),
            stats.len(),
        ));
    }
    for c in &components[1..] {
        check_aligned(&first.ids, &c.ids, "fused components")?;
    }

    let degenerate: Vec<usize> = match mode {
        Normalization::None => Vec::new(),
        _ => (0..components.len())
            .filter(|&i| stats[i].is_degenerate(mode))
            .collect(),
    };
    for &i in &degenerate {
        log::warn!(
            "component {} has degenerate calibration; its normalized values are 0",
            components[i].detector
        );
    }

    let distances: Vec<Vec<f64>> = components.iter().map(|c| c.distance_values()).collect();
    let mut row = vec![0.0; components.len()];
    let fused: Vec<f64> = (0..first.len())
        .map(|s| {
            for (j, d) in distances.iter().enumerate() {
                row[j] = match mode {
                    Normalization::None => d[s],
                    _ => normalize(d[s], stats[j], mode),
                };
            }
            aggregator.apply(&row)
        })
        .collect();

    let mut scores = ScoreVector::from_distances(GNOME_DETECTOR, first.ids.clone(), fused)?;
    scores.calibration = mode.calibration_state();
    Ok(FusedScore {
        scores,
        aggregator,
        normalization: mode,
        components: components.iter().map(|c| c.detector.clone()).collect(),
        degenerate_components: degenerate,
    })
}

/// Fuses pre-trained-space and fine-tuned-space distances.
pub fn gnome(
    md_pre: &ScoreVector,
    md_ft: &ScoreVector,
    stats_pre: &CalibrationStats,
    stats_ft: &CalibrationStats,
    aggregator: Aggregator,
    mode: Normalization,
) -> Result<FusedScore> {
    fuse(&[md_pre, md_ft], &[stats_pre, stats_ft], aggregator, mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFusion {
    Concat,
    Average,
}

/// Combines two aligned feature sets row by row.
pub fn feature_fuse(pre: &FeatureSet, ft: &FeatureSet, mode: FeatureFusion) -> Result<FeatureSet> {
    check_aligned(&pre.ids, &ft.ids, "feature fusion")?;
    if let (Some(a), Some(b)) = (&pre.labels, &ft.labels) {
        if a != b {
            return Err(OodError::AlignmentError(
                "feature fusion: label vectors differ".into(),
            ));
        }
    }
    let n = pre.len();
    let features = match mode {
        FeatureFusion::Concat => {
            let d = pre.dim() + ft.dim();
            let mut data = Vec::with_capacity(n * d);
            for i in 0..n {
                data.extend_from_slice(pre.features.row(i));
                data.extend_from_slice(ft.features.row(i));
            }
            Matrix::new(n, d, data)?
        }
        FeatureFusion::Average => {
            if pre.dim() != ft.dim() {
                return Err(OodError::dim("feature dimension", pre.dim(), ft.dim()));
            }
            let data = pre
                .features
                .as_slice()
                .iter()
                .zip(ft.features.as_slice())
                .map(|(&a, &b)| ((a as f64 + b as f64) / 2.0) as f32)
                .collect();
            Matrix::new(n, pre.dim(), data)?
        }
    };
    Ok(FeatureSet {
        features,
        feature_kind: FeatureKind::Other,
        model_name: format!("{}+{}", pre.model_name, ft.model_name),
        split: pre.split,
        labels: pre.labels.clone().or_else(|| ft.labels.clone()),
        ids: pre.ids.clone(),
    })
}

/// Elementwise sum of aligned score vectors from the same detector family.
pub fn ensemble_sum(scores: &[ScoreVector]) -> Result<ScoreVector> {
    if scores.len() < 2 {
        return Err(OodError::invalid(format!(
            "ensemble needs at least 2 score vectors, got {}",
            scores.len()
        )));
    }
    let first = &scores[0];
    for s in &scores[1..] {
        check_aligned(&first.ids, &s.ids, "ensemble members")?;
        if s.detector != first.detector {
            return Err(OodError::invalid(format!(
                "ensemble mixes detectors {} and {}",
                first.detector, s.detector
            )));
        }
    }
    let mut values = first.values.clone();
    for s in &scores[1..] {
        for (acc, v) in values.iter_mut().zip(&s.values) {
            *acc += v;
        }
    }
    let distances = if scores.iter().all(|s| s.distances.is_some()) {
        let mut d = first.distances.clone().unwrap();
        for s in &scores[1..] {
            for (acc, v) in d.iter_mut().zip(s.distances.as_ref().unwrap()) {
                *acc += v;
            }
        }
        Some(d)
    } else {
        None
    };
    let mut out = ScoreVector::new(first.detector.clone(), first.ids.clone(), values)?;
    out.distances = distances;
    Ok(out)
}
