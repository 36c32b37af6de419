//! Detectors other than the Mahalanobis score.

mod confidence;
mod knn;
mod lof;
mod ppl;

pub use confidence::{
    d2u, energy, msp, scaled_msp, EnergyForm, DEFAULT_TEMPERATURE, ENERGY_EXP_CLAMP,
};
pub use knn::{KnnIndex, SearchBackend, DEFAULT_K};
pub use lof::{LofModel, DEFAULT_K_LOF, LOF_ZERO_DISTANCE_EPSILON};
pub use ppl::ppl_score;

use crate::linalg::Matrix;

/// One neighbor: training row index and Euclidean distance.
pub type Neighbor = (usize, f64);

#[inline]
fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let t = x as f64 - y as f64;
            t * t
        })
        .sum()
}

/// `k` nearest rows of `data` to `query`, ascending by distance then row
/// index. `exclude` skips one row (a training point's own entry).
///
/// Keeps a sorted buffer of the best `k` squared distances and abandons a
/// candidate once its partial sum reaches the current k-th best. Partial sums
/// only grow and later rows lose ties, so the result is identical to a full
/// scan.
pub(crate) fn nearest_pruned(
    data: &Matrix,
    query: &[f32],
    k: usize,
    exclude: Option<usize>,
) -> Vec<Neighbor> {
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    if k == 0 {
        return Vec::new();
    }
    'rows: for (i, row) in data.row_iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        let bound = if best.len() == k {
            best[k - 1].0
        } else {
            f64::INFINITY
        };
        let mut acc = 0.0f64;
        for (&x, &y) in row.iter().zip(query) {
            let t = x as f64 - y as f64;
            acc += t * t;
            if acc >= bound {
                continue 'rows;
            }
        }
        let pos = best.partition_point(|e| e.0 <= acc);
        best.insert(pos, (acc, i));
        best.truncate(k);
    }
    best.into_iter().map(|(sq, i)| (i, sq.sqrt())).collect()
}

/// Same contract as [`nearest_pruned`], computing every distance and sorting.
pub(crate) fn nearest_exhaustive(
    data: &Matrix,
    query: &[f32],
    k: usize,
    exclude: Option<usize>,
) -> Vec<Neighbor> {
    let mut all: Vec<(f64, usize)> = data
        .row_iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, row)| (squared_distance(row, query), i))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.truncate(k);
    all.into_iter().map(|(sq, i)| (i, sq.sqrt())).collect()
}
