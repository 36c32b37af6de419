//! Class-conditional Gaussian model with a shared covariance and the
//! Mahalanobis confidence score `S(x) = -min_c (z - μ_c)ᵀ Σ⁻¹ (z - μ_c)`.

use rayon::prelude::*;

use crate::data::{dense_class_count, FeatureKind, FeatureSet, ScoreVector};
use crate::error::{OodError, Result};
use crate::linalg::{pooled_covariance, shrink_in_place, Cholesky, Matrix, Vector};

pub const DEFAULT_SHRINKAGE: f64 = 1e-3;

pub const MD_DETECTOR: &str = "md";

/// Per-class centroids plus the Cholesky factor of the shrunk pooled
/// covariance. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    centroids: Matrix,
    factor: Cholesky,
    shrinkage_epsilon: f64,
    feature_kind: FeatureKind,
    fit_sample_count: usize,
}

impl GaussianModel {
    /// Fits centroids and the pooled population covariance on labeled
    /// training features, then shrinks and factorizes it.
    pub fn fit(train: &FeatureSet, epsilon: f64) -> Result<Self> {
        train.validate()?;
        if train.is_empty() || train.dim() == 0 {
            return Err(OodError::invalid("cannot fit on an empty feature set"));
        }
        let labels = train
            .labels
            .as_ref()
            .ok_or_else(|| OodError::invalid("fitting requires labeled features"))?;
        let classes = dense_class_count(labels)?;
        let d = train.dim();

        let mut sums = vec![0.0f64; classes * d];
        let mut counts = vec![0usize; classes];
        for (row, &label) in train.features.row_iter().zip(labels) {
            let c = label as usize;
            counts[c] += 1;
            for (s, &x) in sums[c * d..(c + 1) * d].iter_mut().zip(row) {
                *s += x as f64;
            }
        }
        for (c, &n) in counts.iter().enumerate() {
            for s in &mut sums[c * d..(c + 1) * d] {
                *s /= n as f64;
            }
        }
        let centroids = Matrix::from_f64(classes, d, &sums)?;

        let class_of: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
        let mut cov = pooled_covariance(&train.features, &centroids, &class_of)?;
        shrink_in_place(&mut cov, d, epsilon)?;
        let factor = Cholesky::factor_f64(&cov, d)?;

        Ok(Self {
            centroids,
            factor,
            shrinkage_epsilon: epsilon,
            feature_kind: train.feature_kind,
            fit_sample_count: train.len(),
        })
    }

    /// Builds a model from explicit centroids and an (unshrunk) covariance.
    pub fn from_parts(
        centroids: Matrix,
        covariance: &Matrix,
        epsilon: f64,
        feature_kind: FeatureKind,
        fit_sample_count: usize,
    ) -> Result<Self> {
        let d = centroids.cols();
        if centroids.rows() == 0 || d == 0 {
            return Err(OodError::invalid(
                "model needs at least one class and dimension",
            ));
        }
        if covariance.rows() != d || covariance.cols() != d {
            return Err(OodError::dim("covariance size", d, covariance.rows()));
        }
        let mut cov: Vec<f64> = covariance.as_slice().iter().map(|&v| v as f64).collect();
        shrink_in_place(&mut cov, d, epsilon)?;
        let factor = Cholesky::factor_f64(&cov, d)?;
        Ok(Self {
            centroids,
            factor,
            shrinkage_epsilon: epsilon,
            feature_kind,
            fit_sample_count,
        })
    }

    /// Reassembles a model from a stored factor of the already-shrunk covariance.
    pub fn from_factor(
        centroids: Matrix,
        factor: Cholesky,
        shrinkage_epsilon: f64,
        feature_kind: FeatureKind,
        fit_sample_count: usize,
    ) -> Result<Self> {
        if centroids.rows() == 0 {
            return Err(OodError::invalid("model needs at least one class"));
        }
        if factor.dim() != centroids.cols() {
            return Err(OodError::dim("factor size", centroids.cols(), factor.dim()));
        }
        Ok(Self {
            centroids,
            factor,
            shrinkage_epsilon,
            feature_kind,
            fit_sample_count,
        })
    }

    pub fn class_count(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    pub fn centroids(&self) -> &Matrix {
        &self.centroids
    }

    pub fn factor(&self) -> &Cholesky {
        &self.factor
    }

    pub fn shrinkage_epsilon(&self) -> f64 {
        self.shrinkage_epsilon
    }

    pub fn feature_kind(&self) -> FeatureKind {
        self.feature_kind
    }

    pub fn fit_sample_count(&self) -> usize {
        self.fit_sample_count
    }

    /// Reconstructs the shrunk covariance `L Lᵀ`.
    pub fn covariance(&self) -> Matrix {
        let d = self.dim();
        let l = self.factor.lower();
        let mut out = vec![0.0f64; d * d];
        for i in 0..d {
            for j in 0..=i {
                let s: f64 = (0..=j).map(|k| l[i * d + k] * l[j * d + k]).sum();
                out[i * d + j] = s;
                out[j * d + i] = s;
            }
        }
        Matrix::from_f64(d, d, &out).expect("finite factor")
    }

    /// Squared Mahalanobis distance from `z` to every class centroid.
    pub fn class_distances(&self, z: &[f32]) -> Result<Vec<f64>> {
        let d = self.dim();
        if z.len() != d {
            return Err(OodError::dim("feature dimension", d, z.len()));
        }
        let mut dev = vec![0.0f64; d];
        Ok(self
            .centroids
            .row_iter()
            .map(|mu| {
                for ((out, &x), &m) in dev.iter_mut().zip(z).zip(mu) {
                    *out = x as f64 - m as f64;
                }
                self.factor.inverse_quadratic_form(&mut dev)
            })
            .collect())
    }

    /// Minimum squared Mahalanobis distance and the class that attains it.
    /// Ties resolve to the lower class index.
    pub fn distance(&self, z: &[f32]) -> Result<(f64, usize)> {
        let dists = self.class_distances(z)?;
        let mut best = (f64::INFINITY, 0);
        for (c, &v) in dists.iter().enumerate() {
            if v < best.0 {
                best = (v, c);
            }
        }
        Ok(best)
    }

    pub fn mahalanobis_score(&self, z: &Vector) -> Result<f64> {
        Ok(-self.distance(z.as_slice())?.0)
    }

    /// Scores every row; the result carries the positive distances too.
    pub fn score_batch(&self, features: &FeatureSet) -> Result<ScoreVector> {
        if !features.is_empty() && features.dim() != self.dim() {
            return Err(OodError::dim(
                "feature dimension",
                self.dim(),
                features.dim(),
            ));
        }
        let distances = (0..features.len())
            .into_par_iter()
            .map(|i| self.distance(features.features.row(i)).map(|(md, _)| md))
            .collect::<Result<Vec<f64>>>()?;
        ScoreVector::from_distances(MD_DETECTOR, features.ids.clone(), distances)
    }
}
