//! L2-regularized multinomial logistic regression.
//!
//! Maximizes the weighted mean log-likelihood of the softmax model minus
//! `(l2 / 2) ‖W‖²` (biases are not penalized) by full-batch gradient ascent
//! with a backtracking line search, starting from zero weights.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax_lowest, check_training, softmax};
use crate::error::{Error, Result};
use crate::text::FeatureVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitParams {
    pub l2: f64,
    pub max_iter: usize,
    /// Stop once the gradient max-norm falls below this.
    pub tol: f64,
    /// Multiply sample weights by `N / (K n_k)`.
    pub balanced: bool,
}

impl Default for LogitParams {
    fn default() -> Self {
        LogitParams {
            l2: 1e-4,
            max_iter: 100,
            tol: 1e-4,
            balanced: true,
        }
    }
}

/// Objective and gradient over a flat parameter vector `[W (K×V row-major), b (K)]`.
pub struct LogitProblem<'a> {
    x: &'a [FeatureVector],
    y: &'a [usize],
    /// Sample weights normalized to sum to one.
    weights: Vec<f64>,
    n_classes: usize,
    n_features: usize,
    l2: f64,
}

impl<'a> LogitProblem<'a> {
    pub fn new(
        x: &'a [FeatureVector],
        y: &'a [usize],
        n_features: usize,
        l2: f64,
        balanced: bool,
        sample_weights: Option<&[f64]>,
    ) -> Result<Self> {
        check_training(x, y, sample_weights)?;
        if !(l2 >= 0.0 && l2.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "l2 must be non-negative, got {l2}"
            )));
        }
        let n_classes = y.iter().max().map_or(0, |m| m + 1);
        let mut class_count = vec![0usize; n_classes];
        for &label in y {
            class_count[label] += 1;
        }
        let present = class_count.iter().filter(|&&c| c > 0).count();
        if present < 2 {
            return Err(Error::SingleClass);
        }
        let mut weights: Vec<f64> = match sample_weights {
            Some(w) => w.to_vec(),
            None => vec![1.0; x.len()],
        };
        if balanced {
            let n = x.len() as f64;
            for (w, &label) in weights.iter_mut().zip(y) {
                *w *= n / (present as f64 * class_count[label] as f64);
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(LogitProblem {
            x,
            y,
            weights,
            n_classes,
            n_features,
            l2,
        })
    }

    pub fn n_params(&self) -> usize {
        self.n_classes * (self.n_features + 1)
    }

    fn scores(&self, theta: &[f64], doc: &FeatureVector) -> Vec<f64> {
        scores(theta, self.n_classes, self.n_features, doc)
    }

    fn penalty(&self, theta: &[f64]) -> f64 {
        let w = &theta[..self.n_classes * self.n_features];
        0.5 * self.l2 * w.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn objective(&self, theta: &[f64]) -> f64 {
        // per-sample terms are computed in parallel, summed in index order
        let terms: Vec<f64> = (0..self.x.len())
            .into_par_iter()
            .map(|n| {
                let s = self.scores(theta, &self.x[n]);
                let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                self.weights[n] * (s[self.y[n]] - lse)
            })
            .collect();
        terms.iter().sum::<f64>() - self.penalty(theta)
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let (k, v) = (self.n_classes, self.n_features);
        let residuals: Vec<Vec<f64>> = (0..self.x.len())
            .into_par_iter()
            .map(|n| {
                let mut r = softmax(&self.scores(theta, &self.x[n]));
                r.iter_mut().for_each(|p| *p = -*p);
                r[self.y[n]] += 1.0;
                r.iter_mut().for_each(|p| *p *= self.weights[n]);
                r
            })
            .collect();
        let mut g = vec![0.0; self.n_params()];
        for (doc, r) in self.x.iter().zip(&residuals) {
            for (c, rc) in r.iter().enumerate() {
                for (i, count) in doc.iter().filter(|&(i, _)| i < v) {
                    g[c * v + i] += rc * count as f64;
                }
                g[k * v + c] += rc;
            }
        }
        for (gi, wi) in g.iter_mut().zip(&theta[..k * v]) {
            *gi -= self.l2 * wi;
        }
        g
    }
}

fn scores(theta: &[f64], k: usize, v: usize, doc: &FeatureVector) -> Vec<f64> {
    (0..k)
        .map(|c| {
            let row = &theta[c * v..(c + 1) * v];
            theta[k * v + c]
                + doc
                    .iter()
                    .filter(|&(i, _)| i < v)
                    .map(|(i, n)| row[i] * n as f64)
                    .sum::<f64>()
        })
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitModel {
    n_classes: usize,
    n_features: usize,
    /// `[W (K×V row-major), b (K)]`
    params: Vec<f64>,
    pub l2: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
}

impl LogitModel {
    pub fn fit(
        x: &[FeatureVector],
        y: &[usize],
        n_features: usize,
        params: &LogitParams,
        sample_weights: Option<&[f64]>,
    ) -> Result<Self> {
        if params.max_iter == 0 {
            return Err(Error::InvalidParameter(
                "max_iter must be at least 1".into(),
            ));
        }
        let problem =
            LogitProblem::new(x, y, n_features, params.l2, params.balanced, sample_weights)?;
        let mut theta = vec![0.0; problem.n_params()];
        let mut f = problem.objective(&theta);
        let mut g = problem.gradient(&theta);
        let mut trace = vec![f];
        let mut step = 1.0;
        let mut iterations = 0;
        while iterations < params.max_iter && max_abs(&g) >= params.tol {
            let gg: f64 = g.iter().map(|v| v * v).sum();
            let mut accepted = None;
            while step > 1e-12 {
                let cand: Vec<f64> = theta.iter().zip(&g).map(|(t, d)| t + step * d).collect();
                let fc = problem.objective(&cand);
                // Armijo sufficient increase
                if fc >= f + 1e-4 * step * gg {
                    accepted = Some((cand, fc));
                    break;
                }
                step *= 0.5;
            }
            let Some((cand, fc)) = accepted else { break };
            theta = cand;
            f = fc;
            g = problem.gradient(&theta);
            trace.push(f);
            iterations += 1;
            step *= 2.0;
        }
        Ok(LogitModel {
            n_classes: problem.n_classes,
            n_features,
            params: theta,
            l2: params.l2,
            iterations,
            converged: max_abs(&g) < params.tol,
            objective_trace: trace,
        })
    }

    /// Build directly from weights (`K` rows of `V`) and biases.
    pub fn from_parts(weights: &[Vec<f64>], bias: &[f64]) -> Result<Self> {
        let k = bias.len();
        let v = weights.first().map_or(0, Vec::len);
        if weights.len() != k || weights.iter().any(|r| r.len() != v) {
            return Err(Error::DimensionMismatch {
                left: weights.len(),
                right: k,
            });
        }
        let mut params: Vec<f64> = weights.iter().flatten().copied().collect();
        params.extend_from_slice(bias);
        Ok(LogitModel {
            n_classes: k,
            n_features: v,
            params,
            l2: 0.0,
            iterations: 0,
            converged: false,
            objective_trace: Vec::new(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn weight(&self, class: usize, feature: usize) -> f64 {
        self.params[class * self.n_features + feature]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[self.n_classes * self.n_features..]
    }

    pub fn scores(&self, x: &FeatureVector) -> Vec<f64> {
        scores(&self.params, self.n_classes, self.n_features, x)
    }

    pub fn predict_proba(&self, x: &FeatureVector) -> Vec<f64> {
        softmax(&self.scores(x))
    }

    pub fn predict(&self, x: &FeatureVector) -> usize {
        argmax_lowest(&self.predict_proba(x))
    }
}
