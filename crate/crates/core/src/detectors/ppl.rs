use crate::data::{ScoreVector, TokenLogProbSet};
use crate::error::{OodError, Result};

/// Inverse perplexity, `exp(mean log p)`, per sample.
pub fn ppl_score(set: &TokenLogProbSet) -> Result<ScoreVector> {
    let values = set
        .ids
        .iter()
        .zip(&set.logprobs)
        .map(|(id, lp)| {
            if lp.is_empty() {
                return Err(OodError::invalid(format!(
                    "sample {id} has no token log-probabilities"
                )));
            }
            let mean = lp.iter().sum::<f64>() / lp.len() as f64;
            Ok(mean.exp())
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreVector::new("ppl", set.ids.clone(), values)
}
