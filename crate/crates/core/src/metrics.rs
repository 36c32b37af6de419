//! Detection metrics. ID samples are the positive class and a sample is
//! accepted as ID when `S(x) >= γ`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::data::ScoreVector;
use crate::error::{OodError, Result};

/// Below this many ID samples the 95% threshold is coarse.
pub const FAR95_MIN_RECOMMENDED_ID: usize = 20;

fn check_sides(id: &[f64], ood: &[f64]) -> Result<()> {
    if id.is_empty() || ood.is_empty() {
        return Err(OodError::invalid(format!(
            "metrics need both sides non-empty (id: {}, ood: {})",
            id.len(),
            ood.len()
        )));
    }
    if id.iter().chain(ood).any(|v| v.is_nan()) {
        return Err(OodError::invalid("NaN score"));
    }
    Ok(())
}

fn sorted(v: &[f64]) -> Vec<f64> {
    // + 0.0 folds -0.0 into 0.0 so total_cmp agrees with `==`
    let mut s: Vec<f64> = v.iter().map(|x| x + 0.0).collect();
    s.sort_by(f64::total_cmp);
    s
}

/// Probability that a random ID score exceeds a random OOD score, ties
/// counting one half.
///
/// Sort-and-merge in O(n log n); the pair counts are exact integers, so the
/// result equals the pairwise definition up to the final division.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_sides(id_scores, ood_scores)?;
    let id = sorted(id_scores);
    let ood = sorted(ood_scores);

    // doubled Mann-Whitney U: 2 per win, 1 per tie
    let mut twice_u: u128 = 0;
    let mut j = 0usize; // ood strictly below the current id value
    let mut i = 0usize;
    while i < id.len() {
        let v = id[i];
        while j < ood.len() && ood[j].total_cmp(&v) == Ordering::Less {
            j += 1;
        }
        let mut equal_end = j;
        while equal_end < ood.len() && ood[equal_end].total_cmp(&v) == Ordering::Equal {
            equal_end += 1;
        }
        let ties = equal_end - j;
        let mut run = 0usize;
        while i < id.len() && id[i].total_cmp(&v) == Ordering::Equal {
            run += 1;
            i += 1;
        }
        twice_u += run as u128 * (2 * j as u128 + ties as u128);
    }
    let pairs = id.len() as u128 * ood.len() as u128;
    Ok(twice_u as f64 / (2 * pairs) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Far95 {
    /// Fraction of OOD samples with `S >= γ`.
    pub far: f64,
    /// Threshold reaching 95% TPR: the ⌈0.95·N_id⌉-th largest ID score.
    pub gamma: f64,
    /// Set when fewer than [`FAR95_MIN_RECOMMENDED_ID`] ID samples were given.
    pub coarse: bool,
}

/// Count of ID samples that must be accepted: `⌈0.95·n⌉`, in integers.
pub fn tpr95_count(n_id: usize) -> usize {
    (95 * n_id).div_ceil(100)
}

/// False-alarm rate on OOD at the threshold giving 95% TPR on ID.
pub fn far95(id_scores: &[f64], ood_scores: &[f64]) -> Result<Far95> {
    check_sides(id_scores, ood_scores)?;
    let mut id = id_scores.to_vec();
    id.sort_by(|a, b| b.total_cmp(a));
    let gamma = id[tpr95_count(id.len()) - 1];
    let accepted = ood_scores.iter().filter(|&&s| s >= gamma).count();
    let coarse = id.len() < FAR95_MIN_RECOMMENDED_ID;
    if coarse {
        log::warn!(
            "FAR95 from {} ID samples; the 95% threshold is coarse",
            id.len()
        );
    }
    Ok(Far95 {
        far: accepted as f64 / ood_scores.len() as f64,
        gamma,
        coarse,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "ID")]
    InDistribution,
    #[serde(rename = "OOD")]
    OutOfDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdDetector {
    pub gamma: f64,
    pub detector: String,
}

impl ThresholdDetector {
    pub fn new(gamma: f64, detector: impl Into<String>) -> Self {
        Self {
            gamma,
            detector: detector.into(),
        }
    }

    pub fn decide(&self, score: f64) -> Decision {
        if score >= self.gamma {
            Decision::InDistribution
        } else {
            Decision::OutOfDistribution
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pair: String,
    pub detector: String,
    pub auroc: f64,
    pub far95: f64,
    pub gamma_at_95tpr: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

impl EvalReport {
    pub fn evaluate(pair: &str, id: &ScoreVector, ood: &ScoreVector) -> Result<Self> {
        let auroc = auroc(&id.values, &ood.values)?;
        let far = far95(&id.values, &ood.values)?;
        Ok(Self {
            pair: pair.to_owned(),
            detector: id.detector.clone(),
            auroc,
            far95: far.far,
            gamma_at_95tpr: far.gamma,
            n_id: id.len(),
            n_ood: ood.len(),
        })
    }

    /// `pair detector AUROC FAR95`, metrics as percentages with two decimals.
    pub fn table_row(&self) -> String {
        format!(
            "{} {} {:.2} {:.2}",
            self.pair,
            self.detector,
            self.auroc * 100.0,
            self.far95 * 100.0
        )
    }

    pub fn threshold_detector(&self) -> ThresholdDetector {
        ThresholdDetector::new(self.gamma_at_95tpr, self.detector.clone())
    }
}
