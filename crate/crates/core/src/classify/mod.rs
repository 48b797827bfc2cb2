//! Multiclass classifiers over sparse count vectors. Labels are dense
//! integers `0..K` (quadtree leaf ids).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::FeatureVector;

pub mod logit;
pub mod mnb;

pub use logit::{LogitModel, LogitParams, LogitProblem};
pub use mnb::MnbModel;

/// Scores closer than this (relative) count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

/// Index of the largest score; near-equal scores resolve to the lowest index.
pub fn argmax_lowest(scores: &[f64]) -> usize {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return 0;
    }
    let slack = TIE_TOLERANCE * max.abs().max(1.0);
    scores.iter().position(|&s| s >= max - slack).unwrap_or(0)
}

/// Normalize log-scores into probabilities via log-sum-exp.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub(crate) fn check_training(
    x: &[FeatureVector],
    y: &[usize],
    weights: Option<&[f64]>,
) -> Result<()> {
    if x.is_empty() {
        return Err(Error::EmptyTraining);
    }
    if x.len() != y.len() {
        return Err(Error::LabelMismatch {
            features: x.len(),
            labels: y.len(),
        });
    }
    if let Some(w) = weights {
        if w.len() != x.len() {
            return Err(Error::LabelMismatch {
                features: x.len(),
                labels: w.len(),
            });
        }
        if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(
                "sample weights must be positive".into(),
            ));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Mnb,
    Logit,
}

impl ClassifierKind {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Mnb => "mnb",
            ClassifierKind::Logit => "logit",
        }
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mnb" => Ok(ClassifierKind::Mnb),
            "logit" => Ok(ClassifierKind::Logit),
            other => Err(Error::Config(format!("unknown classifier {other:?}"))),
        }
    }
}

/// A fitted model of either kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Classifier {
    Mnb(MnbModel),
    Logit(LogitModel),
}

impl Classifier {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            Classifier::Mnb(_) => ClassifierKind::Mnb,
            Classifier::Logit(_) => ClassifierKind::Logit,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Classifier::Mnb(m) => m.n_classes(),
            Classifier::Logit(m) => m.n_classes(),
        }
    }

    pub fn predict(&self, x: &FeatureVector) -> usize {
        match self {
            Classifier::Mnb(m) => m.predict(x),
            Classifier::Logit(m) => m.predict(x),
        }
    }

    pub fn predict_proba(&self, x: &FeatureVector) -> Vec<f64> {
        match self {
            Classifier::Mnb(m) => m.posterior(x),
            Classifier::Logit(m) => m.predict_proba(x),
        }
    }

    /// Label chosen with no evidence at all: the prior argmax for MNB, the
    /// bias argmax for logistic regression.
    pub fn prior_label(&self) -> usize {
        self.predict(&FeatureVector::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax_lowest(&[0.2, 0.5, 0.3]), 1);
        assert_eq!(argmax_lowest(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax_lowest(&[0.1, 0.4, 0.4]), 1);
        assert_eq!(argmax_lowest(&[f64::NEG_INFINITY, -3.0]), 1);
    }

    #[test]
    fn softmax_normalizes() {
        let p = softmax(&[1000.0, 1000.0, 999.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(p[0], p[1]);
        let q = softmax(&[0.0, f64::NEG_INFINITY]);
        assert_eq!(q, [1.0, 0.0]);
    }
}
