//! Local outlier factor in novelty mode: the training set is the reference
//! population and queries are scored against it.
//!
//! For a point `p` with neighbor set `N_k(p)`:
//! - `reach(p, o) = max(kdist(o), d(p, o))`
//! - `lrd(p) = 1 / mean_{o ∈ N_k(p)} reach(p, o)`
//! - `LOF(p) = mean_{o ∈ N_k(p)} lrd(o) / lrd(p)`
//!
//! Neighbor sets hold exactly `k` points, ties broken by lower training index.
//! The confidence score is `-LOF`.

use rayon::prelude::*;

use super::{nearest_pruned, Neighbor};
use crate::data::{FeatureSet, ScoreVector};
use crate::error::{OodError, Result};
use crate::linalg::{l2_normalize_rows, Matrix, Vector};

pub const DEFAULT_K_LOF: usize = 20;

/// Floor for the mean reachability distance before it is inverted.
pub const LOF_ZERO_DISTANCE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LofModel {
    train: Matrix,
    k: usize,
    normalize: bool,
    k_distance: Vec<f64>,
    lrd: Vec<f64>,
}

fn density(neighbors: &[Neighbor], k_distance: &[f64]) -> f64 {
    let mean_reach = neighbors
        .iter()
        .map(|&(o, d)| d.max(k_distance[o]))
        .sum::<f64>()
        / neighbors.len() as f64;
    1.0 / mean_reach.max(LOF_ZERO_DISTANCE_EPSILON)
}

impl LofModel {
    /// Fits on raw features, or on L2-normalized ones when `normalize` is set.
    pub fn fit(train: &Matrix, k: usize, normalize: bool) -> Result<Self> {
        if k == 0 {
            return Err(OodError::invalid("k_lof must be at least 1"));
        }
        if k >= train.rows() {
            return Err(OodError::invalid(format!(
                "k_lof = {k} must be smaller than the {} training rows",
                train.rows()
            )));
        }
        let train = if normalize {
            l2_normalize_rows(train).value
        } else {
            train.clone()
        };
        Self::from_reference(train, k, normalize)
    }

    /// Builds the model on reference rows used as-is (already normalized
    /// when `normalize` is set).
    pub fn from_reference(train: Matrix, k: usize, normalize: bool) -> Result<Self> {
        if k == 0 || k >= train.rows() {
            return Err(OodError::invalid(format!(
                "k_lof = {k} invalid for {} training rows",
                train.rows()
            )));
        }
        let neighborhoods: Vec<Vec<Neighbor>> = (0..train.rows())
            .into_par_iter()
            .map(|i| nearest_pruned(&train, train.row(i), k, Some(i)))
            .collect();
        let k_distance: Vec<f64> = neighborhoods.iter().map(|nn| nn[k - 1].1).collect();
        let lrd = neighborhoods
            .iter()
            .map(|nn| density(nn, &k_distance))
            .collect();

        Ok(Self {
            train,
            k,
            normalize,
            k_distance,
            lrd,
        })
    }

    pub fn fit_features(train: &FeatureSet, k: usize, normalize: bool) -> Result<Self> {
        Self::fit(&train.features, k, normalize)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn normalize(&self) -> bool {
        self.normalize
    }

    pub fn dim(&self) -> usize {
        self.train.cols()
    }

    /// Reference rows as used for neighbor search (normalized if configured).
    pub fn train_rows(&self) -> &Matrix {
        &self.train
    }

    pub fn k_distances(&self) -> &[f64] {
        &self.k_distance
    }

    pub fn local_reachability_densities(&self) -> &[f64] {
        &self.lrd
    }

    /// LOF of each training point against the rest of the training set.
    pub fn training_factors(&self) -> Vec<f64> {
        (0..self.train.rows())
            .map(|i| {
                let nn = nearest_pruned(&self.train, self.train.row(i), self.k, Some(i));
                let mean_lrd = nn.iter().map(|&(o, _)| self.lrd[o]).sum::<f64>() / self.k as f64;
                mean_lrd / self.lrd[i]
            })
            .collect()
    }

    pub fn factor(&self, query: &[f32]) -> Result<f64> {
        if query.len() != self.dim() {
            return Err(OodError::dim("query dimension", self.dim(), query.len()));
        }
        let q: Vec<f32> = if self.normalize {
            let norm = query
                .iter()
                .map(|&v| (v as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            if norm == 0.0 {
                query.to_vec()
            } else {
                query.iter().map(|&v| (v as f64 / norm) as f32).collect()
            }
        } else {
            query.to_vec()
        };
        let nn = nearest_pruned(&self.train, &q, self.k, None);
        let lrd_q = density(&nn, &self.k_distance);
        let mean_lrd = nn.iter().map(|&(o, _)| self.lrd[o]).sum::<f64>() / self.k as f64;
        Ok(mean_lrd / lrd_q)
    }

    pub fn score(&self, query: &Vector) -> Result<f64> {
        Ok(-self.factor(query.as_slice())?)
    }

    pub fn score_batch(&self, features: &FeatureSet) -> Result<ScoreVector> {
        let factors = (0..features.len())
            .into_par_iter()
            .map(|i| self.factor(features.features.row(i)))
            .collect::<Result<Vec<_>>>()?;
        ScoreVector::from_distances("lof", features.ids.clone(), factors)
    }
}
