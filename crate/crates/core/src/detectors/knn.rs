//! Nearest-neighbor detector in L2-normalized feature space.
//!
//! `S(x) = -(1/k) Σ_j ‖x̂ - t̂_j‖` over the `k` nearest normalized training
//! rows. Euclidean distance between unit vectors is a monotone function of
//! cosine similarity, so rankings match a cosine formulation.

use rayon::prelude::*;

use super::{nearest_exhaustive, nearest_pruned, Neighbor};
use crate::data::{FeatureSet, ScoreVector};
use crate::error::{OodError, Result};
use crate::linalg::{l2_normalize_rows, Matrix, Vector};

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchBackend {
    /// Compute every distance, sort.
    #[default]
    Exhaustive,
    /// Bounded buffer with early abandoning of partial distances.
    Pruned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnIndex {
    normalized: Matrix,
    k: usize,
    zero_rows: Vec<usize>,
    backend: SearchBackend,
}

impl KnnIndex {
    pub fn fit(train: &Matrix, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(OodError::invalid("k must be at least 1"));
        }
        if k > train.rows() {
            return Err(OodError::invalid(format!(
                "k = {k} exceeds the {} training rows",
                train.rows()
            )));
        }
        let normalized = l2_normalize_rows(train);
        Ok(Self {
            normalized: normalized.value,
            k,
            zero_rows: normalized.flagged_rows,
            backend: SearchBackend::default(),
        })
    }

    pub fn fit_features(train: &FeatureSet, k: usize) -> Result<Self> {
        Self::fit(&train.features, k)
    }

    /// Wraps rows that are already normalized (e.g. loaded from disk).
    pub fn from_normalized(normalized: Matrix, k: usize) -> Result<Self> {
        if k == 0 || k > normalized.rows() {
            return Err(OodError::invalid(format!(
                "k = {k} invalid for {} training rows",
                normalized.rows()
            )));
        }
        let zero_rows = normalized
            .row_iter()
            .enumerate()
            .filter(|(_, r)| r.iter().all(|&v| v == 0.0))
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            normalized,
            k,
            zero_rows,
            backend: SearchBackend::default(),
        })
    }

    pub fn with_backend(mut self, backend: SearchBackend) -> Self {
        self.backend = backend;
        self
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.normalized.cols()
    }

    pub fn len(&self) -> usize {
        self.normalized.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.normalized.is_empty()
    }

    pub fn normalized_rows(&self) -> &Matrix {
        &self.normalized
    }

    /// Training rows that had zero norm and were left unnormalized.
    pub fn zero_rows(&self) -> &[usize] {
        &self.zero_rows
    }

    fn normalize_query(&self, query: &[f32]) -> Result<Vec<f32>> {
        if query.len() != self.dim() {
            return Err(OodError::dim("query dimension", self.dim(), query.len()));
        }
        let norm = query
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            return Ok(query.to_vec());
        }
        Ok(query.iter().map(|&v| (v as f64 / norm) as f32).collect())
    }

    /// The `k` nearest training rows to the normalized query.
    pub fn neighbors(&self, query: &[f32]) -> Result<Vec<Neighbor>> {
        let q = self.normalize_query(query)?;
        Ok(match self.backend {
            SearchBackend::Exhaustive => nearest_exhaustive(&self.normalized, &q, self.k, None),
            SearchBackend::Pruned => nearest_pruned(&self.normalized, &q, self.k, None),
        })
    }

    /// Mean distance to the `k` nearest neighbors.
    pub fn mean_distance(&self, query: &[f32]) -> Result<f64> {
        let nn = self.neighbors(query)?;
        Ok(nn.iter().map(|(_, d)| d).sum::<f64>() / self.k as f64)
    }

    pub fn score(&self, query: &Vector) -> Result<f64> {
        Ok(-self.mean_distance(query.as_slice())?)
    }

    pub fn score_batch(&self, features: &FeatureSet) -> Result<ScoreVector> {
        let distances = (0..features.len())
            .into_par_iter()
            .map(|i| self.mean_distance(features.features.row(i)))
            .collect::<Result<Vec<_>>>()?;
        ScoreVector::from_distances("knn", features.ids.clone(), distances)
    }
}
