//! Deterministic learners: k-nearest-neighbour classification and ridge
//! regression, both on standardized features.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const VARIANCE_FLOOR: f64 = 1e-12;

/// Per-feature affine standardization using training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Validation("no training samples".into()))?;
        let d = first.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Validation("feature vectors differ in length".into()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var.iter().map(|s| (s / n).max(VARIANCE_FLOOR).sqrt()).collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnClassifier {
    pub k: usize,
    pub classes: usize,
    pub standardizer: Standardizer,
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl KnnClassifier {
    /// `classes` is the number of class labels; every label in `0..classes`
    /// needs at least one training sample.
    pub fn fit(train: &[(Vec<f64>, usize)], classes: usize, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("k", "must be >= 1"));
        }
        let mut counts = vec![0usize; classes];
        for (_, c) in train {
            if *c >= classes {
                return Err(Error::Validation(format!("label {c} outside 0..{classes}")));
            }
            counts[*c] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::config("classes", format!("class {empty} has no training samples")));
        }
        let rows: Vec<Vec<f64>> = train.iter().map(|(f, _)| f.clone()).collect();
        let standardizer = Standardizer::fit(&rows)?;
        Ok(KnnClassifier {
            k,
            classes,
            points: rows.iter().map(|r| standardizer.apply(r)).collect(),
            labels: train.iter().map(|(_, c)| *c).collect(),
            standardizer,
        })
    }

    /// Majority vote among the k nearest training points (Euclidean,
    /// standardized). Ties go to the smallest mean distance, then the lowest
    /// class index. Equidistant neighbours are ordered by training index.
    pub fn classify(&self, features: &[f64]) -> usize {
        let q = self.standardizer.apply(features);
        let mut dist: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        let k = self.k.min(dist.len());
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes = vec![0usize; self.classes];
        let mut total = vec![0.0; self.classes];
        for &(d2, i) in &dist[..k] {
            votes[self.labels[i]] += 1;
            total[self.labels[i]] += d2.sqrt();
        }
        let best = *votes.iter().max().unwrap_or(&0);
        (0..self.classes)
            .filter(|&c| votes[c] == best)
            .min_by(|&a, &b| {
                let ma = total[a] / votes[a] as f64;
                let mb = total[b] / votes[b] as f64;
                ma.total_cmp(&mb).then(a.cmp(&b))
            })
            .unwrap_or(0)
    }
}

/// Linear model on standardized features with an unpenalized bias, one
/// coefficient vector per target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeRegressor {
    pub standardizer: Standardizer,
    /// `weights[t]` holds the coefficients of target `t`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl RidgeRegressor {
    /// Fits every target with the same ridge weight.
    pub fn fit(train: &[(Vec<f64>, Vec<f64>)], lambda: f64) -> Result<Self> {
        let targets = train.first().map(|s| s.1.len()).unwrap_or(0);
        Self::fit_per_target(train, &vec![lambda; targets])
    }

    /// Solves the normal equations `(X^T X + lambda I) w = X^T y` on centered,
    /// standardized data. When there are more features than samples the
    /// equivalent dual system `(X X^T + lambda I) a = y, w = X^T a` is solved
    /// instead (only valid for lambda > 0).
    pub fn fit_per_target(train: &[(Vec<f64>, Vec<f64>)], lambdas: &[f64]) -> Result<Self> {
        if train.len() < 2 {
            return Err(Error::Validation("ridge regression needs at least 2 samples".into()));
        }
        if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::config("lambda", "must be >= 0"));
        }
        let t = train[0].1.len();
        if lambdas.len() != t || train.iter().any(|s| s.1.len() != t) {
            return Err(Error::Validation("inconsistent target dimensions".into()));
        }
        let rows: Vec<Vec<f64>> = train.iter().map(|s| s.0.clone()).collect();
        let standardizer = Standardizer::fit(&rows)?;
        let n = rows.len();
        let d = standardizer.mean.len();
        let x = DMatrix::from_fn(n, d, |i, j| (rows[i][j] - standardizer.mean[j]) / standardizer.scale[j]);
        let y_mean: Vec<f64> = (0..t)
            .map(|k| train.iter().map(|s| s.1[k]).sum::<f64>() / n as f64)
            .collect();
        let y = DMatrix::from_fn(n, t, |i, k| train[i].1[k] - y_mean[k]);

        let dual = d > n;
        let gram = if dual { &x * x.transpose() } else { x.transpose() * &x };
        let rhs_all = if dual { y.clone() } else { x.transpose() * &y };
        let mut weights = Vec::with_capacity(t);
        for k in 0..t {
            let lambda = lambdas[k];
            if lambda == 0.0 && dual {
                return Err(Error::RankDeficient);
            }
            let mut a = gram.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda;
            }
            let chol = a.cholesky().ok_or(Error::RankDeficient)?;
            if lambda == 0.0 {
                let diag = chol.l_dirty().diagonal();
                let max = diag.iter().cloned().fold(0.0, f64::max);
                let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
                if !(min > 1e-7 * max) {
                    return Err(Error::RankDeficient);
                }
            }
            let rhs = DVector::from_column_slice(rhs_all.column(k).as_slice());
            let sol = chol.solve(&rhs);
            let w = if dual { x.transpose() * sol } else { sol };
            weights.push(w.iter().cloned().collect());
        }
        Ok(RidgeRegressor {
            standardizer,
            weights,
            bias: y_mean,
            lambdas: lambdas.to_vec(),
        })
    }

    pub fn predict(&self, features: &[f64]) -> Vec<f64> {
        let z = self.standardizer.apply(features);
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(&z).map(|(a, c)| a * c).sum::<f64>())
            .collect()
    }

    /// Picks, per target, the grid value with the lowest validation MAE, then
    /// refits on `train` and `validation` together. Ties go to the larger lambda.
    pub fn fit_select(
        train: &[(Vec<f64>, Vec<f64>)],
        validation: &[(Vec<f64>, Vec<f64>)],
        grid: &[f64],
    ) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::config("lambda_grid", "must not be empty"));
        }
        let t = train.first().map(|s| s.1.len()).unwrap_or(0);
        let mut best = vec![(f64::INFINITY, grid[0]); t];
        if validation.is_empty() {
            best.iter_mut().for_each(|b| b.1 = grid[grid.len() - 1]);
        } else {
            for &lambda in grid {
                let model = match Self::fit(train, lambda) {
                    Ok(m) => m,
                    Err(Error::RankDeficient) => continue,
                    Err(e) => return Err(e),
                };
                let mut err = vec![0.0; t];
                for (f, y) in validation {
                    for (k, p) in model.predict(f).iter().enumerate() {
                        err[k] += (p - y[k]).abs();
                    }
                }
                for k in 0..t {
                    if err[k] <= best[k].0 {
                        best[k] = (err[k], lambda);
                    }
                }
            }
        }
        let all: Vec<(Vec<f64>, Vec<f64>)> = train.iter().chain(validation).cloned().collect();
        let lambdas: Vec<f64> = best.iter().map(|b| b.1).collect();
        Self::fit_per_target(&all, &lambdas)
    }
}
