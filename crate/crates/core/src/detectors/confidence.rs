//! Scores computed from classifier logits.

use crate::data::{LogitSet, ScoreVector};
use crate::error::{OodError, Result};
use crate::linalg::Flagged;

pub const DEFAULT_TEMPERATURE: f64 = 1000.0;

/// Exponent arguments above this are clamped in the verbatim energy sum.
pub const ENERGY_EXP_CLAMP: f64 = 700.0;

fn log_sum_exp(row: &[f32], temperature: f64) -> f64 {
    let max = row
        .iter()
        .map(|&f| f as f64 / temperature)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row
        .iter()
        .map(|&f| (f as f64 / temperature - max).exp())
        .sum();
    max + sum.ln()
}

fn max_softmax(row: &[f32], temperature: f64) -> f64 {
    let scaled = row.iter().map(|&f| f as f64 / temperature);
    let max = scaled.clone().fold(f64::NEG_INFINITY, f64::max);
    // the max entry contributes exp(0) = 1
    1.0 / scaled.map(|f| (f - max).exp()).sum::<f64>()
}

fn map_rows(logits: &LogitSet, detector: &str, f: impl Fn(&[f32]) -> f64) -> ScoreVector {
    let values = logits.logits.row_iter().map(f).collect();
    ScoreVector::new(detector, logits.ids.clone(), values).expect("one score per row")
}

/// Maximum softmax probability.
pub fn msp(logits: &LogitSet) -> ScoreVector {
    map_rows(logits, "msp", |row| max_softmax(row, 1.0))
}

/// Maximum softmax probability of `logits / temperature`.
pub fn scaled_msp(logits: &LogitSet, temperature: f64) -> Result<ScoreVector> {
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(OodError::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    Ok(map_rows(logits, "scaling", |row| {
        max_softmax(row, temperature)
    }))
}

/// Which closed form the energy detector evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnergyForm {
    /// `S = -Σ exp(f_i)`, exponent clamped at [`ENERGY_EXP_CLAMP`].
    #[default]
    Verbatim,
    /// `S = -logsumexp(f)`; same ranking, never saturates.
    LogSumExp,
}

/// Energy score. Rows whose exponent hit the clamp are flagged.
pub fn energy(logits: &LogitSet, form: EnergyForm) -> Flagged<ScoreVector> {
    let mut saturated = Vec::new();
    let values = logits
        .logits
        .row_iter()
        .enumerate()
        .map(|(i, row)| match form {
            EnergyForm::Verbatim => {
                let mut hit = false;
                let sum: f64 = row
                    .iter()
                    .map(|&f| {
                        let f = f as f64;
                        if f > ENERGY_EXP_CLAMP {
                            hit = true;
                            ENERGY_EXP_CLAMP.exp()
                        } else {
                            f.exp()
                        }
                    })
                    .sum();
                if hit {
                    saturated.push(i);
                }
                -sum
            }
            EnergyForm::LogSumExp => -log_sum_exp(row, 1.0),
        })
        .collect();
    if !saturated.is_empty() {
        log::warn!(
            "energy: {} rows saturated the exponent clamp",
            saturated.len()
        );
    }
    Flagged {
        value: ScoreVector::new("energy", logits.ids.clone(), values).expect("one score per row"),
        flagged_rows: saturated,
    }
}

/// KL divergence of the softmax distribution from uniform, `Σ p ln(p C)`.
pub fn d2u(logits: &LogitSet) -> ScoreVector {
    map_rows(logits, "d2u", |row| {
        let lse = log_sum_exp(row, 1.0);
        let ln_c = (row.len() as f64).ln();
        row.iter()
            .map(|&f| {
                let log_p = f as f64 - lse;
                let p = log_p.exp();
                if p == 0.0 {
                    0.0
                } else {
                    p * (log_p + ln_c)
                }
            })
            .sum::<f64>()
            .max(0.0)
    })
}
