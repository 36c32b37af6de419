//! Token log-probabilities as JSON Lines: one `{"id": ..., "logprobs": [...]}`
//! object per sample.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{SampleId, TokenLogProbSet};
use crate::error::{OodError, Result};

#[derive(Serialize, Deserialize)]
struct Line {
    id: SampleId,
    logprobs: Vec<f64>,
}

pub fn read_token_logprobs(path: &Path) -> Result<TokenLogProbSet> {
    let reader = BufReader::new(File::open(path)?);
    let mut ids = Vec::new();
    let mut logprobs = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line)
            .map_err(|e| OodError::invalid(format!("{} line {}: {e}", path.display(), n + 1)))?;
        ids.push(parsed.id);
        logprobs.push(parsed.logprobs);
    }
    TokenLogProbSet::new(ids, logprobs)
}

pub fn write_token_logprobs(path: &Path, set: &TokenLogProbSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (id, lp) in set.ids.iter().zip(&set.logprobs) {
        serde_json::to_writer(
            &mut w,
            &Line {
                id: id.clone(),
                logprobs: lp.clone(),
            },
        )?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
