//! Multinomial Naive Bayes with additive smoothing.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::{argmax_lowest, check_training, softmax};
use crate::error::{Error, Result};
use crate::text::FeatureVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnbModel {
    /// (Weighted) number of training documents per class.
    class_mass: Vec<f64>,
    /// `log p_{k,i}`, one row per class.
    feature_log_prob: Vec<Vec<f64>>,
    alpha: f64,
    n_features: usize,
}

impl MnbModel {
    /// Fit on `x` with labels `y` in `0..K`, where `K = max(y) + 1`.
    ///
    /// `p_{k,i} = (alpha + n_{k,i}) / (alpha V + n_k)` with `n` the weighted
    /// feature counts; priors are weighted class frequencies. Weights are
    /// rescaled to mean one first, so only their ratios matter.
    pub fn fit(
        x: &[FeatureVector],
        y: &[usize],
        n_features: usize,
        alpha: f64,
        sample_weights: Option<&[f64]>,
    ) -> Result<Self> {
        check_training(x, y, sample_weights)?;
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if n_features == 0 {
            return Err(Error::InvalidParameter("no features".into()));
        }
        let weights = sample_weights.and_then(normalize_weights);
        let k = y.iter().max().map_or(0, |m| m + 1);
        let mut class_mass = vec![0.0; k];
        let mut counts = vec![vec![0.0; n_features]; k];
        for (n, (doc, &label)) in x.iter().zip(y).enumerate() {
            let w = weights.as_ref().map_or(1.0, |ws| ws[n]);
            class_mass[label] += w;
            for (i, c) in doc.iter() {
                if i < n_features {
                    counts[label][i] += w * c as f64;
                }
            }
        }
        let feature_log_prob = counts
            .into_iter()
            .map(|row| {
                let total: f64 = row.iter().sum();
                let denom = (alpha * n_features as f64 + total).ln();
                row.into_iter().map(|c| (alpha + c).ln() - denom).collect()
            })
            .collect();
        Ok(MnbModel {
            class_mass,
            feature_log_prob,
            alpha,
            n_features,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.class_mass.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn log_priors(&self) -> Vec<f64> {
        let total: f64 = self.class_mass.iter().sum();
        self.class_mass.iter().map(|m| (m / total).ln()).collect()
    }

    pub fn feature_log_prob(&self, class: usize) -> &[f64] {
        &self.feature_log_prob[class]
    }

    fn dot(&self, class: usize, x: &FeatureVector) -> f64 {
        let row = &self.feature_log_prob[class];
        x.iter()
            .filter(|&(i, _)| i < self.n_features)
            .map(|(i, c)| c as f64 * row[i])
            .sum()
    }

    /// Multinomial log-likelihood of the histogram `x` under class `k`,
    /// including the `(Σx)! / Π x_i!` coefficient.
    pub fn log_likelihood(&self, x: &FeatureVector, class: usize) -> Result<f64> {
        if class >= self.n_classes() {
            return Err(Error::UnknownLabel(class));
        }
        let counts: Vec<f64> = x
            .iter()
            .filter(|&(i, _)| i < self.n_features)
            .map(|(_, c)| c as f64)
            .collect();
        let total: f64 = counts.iter().sum();
        let coef = ln_factorial(total) - counts.iter().map(|&c| ln_factorial(c)).sum::<f64>();
        Ok(coef + self.dot(class, x))
    }

    /// `log P(C_k) + Σ x_i log p_{k,i}` per class.
    pub fn joint_log_likelihood(&self, x: &FeatureVector) -> Vec<f64> {
        self.log_priors()
            .into_iter()
            .enumerate()
            .map(|(k, lp)| lp + self.dot(k, x))
            .collect()
    }

    pub fn predict(&self, x: &FeatureVector) -> usize {
        argmax_lowest(&self.joint_log_likelihood(x))
    }

    pub fn posterior(&self, x: &FeatureVector) -> Vec<f64> {
        softmax(&self.joint_log_likelihood(x))
    }
}

fn ln_factorial(n: f64) -> f64 {
    if n < 2.0 {
        0.0
    } else {
        ln_gamma(n + 1.0)
    }
}

/// Mean-one rescaling; `None` when all weights are equal.
fn normalize_weights(w: &[f64]) -> Option<Vec<f64>> {
    if w.iter().all(|&v| v == w[0]) {
        return None;
    }
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    Some(w.iter().map(|v| v / mean).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fv(dense: &[u32]) -> FeatureVector {
        FeatureVector::from_dense(dense)
    }

    fn toy() -> MnbModel {
        // vocab {x, y}; class A = "x x", class B = "y y"
        MnbModel::fit(&[fv(&[2, 0]), fv(&[0, 2])], &[0, 1], 2, 1.0, None).unwrap()
    }

    #[test]
    fn smoothed_estimates() {
        let m = toy();
        assert!((m.feature_log_prob(0)[0].exp() - 0.75).abs() < 1e-15);
        assert!((m.feature_log_prob(0)[1].exp() - 0.25).abs() < 1e-15);
        let priors: Vec<f64> = m.log_priors().iter().map(|l| l.exp()).collect();
        assert_eq!(priors, [0.5, 0.5]);
    }

    #[test]
    fn predictions_on_toy_model() {
        let m = toy();
        assert_eq!(m.predict(&fv(&[1, 0])), 0);
        let post = m.posterior(&fv(&[1, 0]));
        assert!((post[0] - 0.75).abs() < 1e-12);
        assert_eq!(m.predict(&FeatureVector::default()), 0);

        // unequal priors: empty input follows the prior
        let m = MnbModel::fit(
            &[fv(&[1, 0]), fv(&[0, 1]), fv(&[0, 3])],
            &[0, 1, 1],
            2,
            1.0,
            None,
        )
        .unwrap();
        assert_eq!(m.predict(&FeatureVector::default()), 1);
    }

    #[test]
    fn log_likelihood_includes_multinomial_coefficient() {
        // p_k = (0.5, 0.5): both classes see one x and one y
        let m = MnbModel::fit(&[fv(&[1, 1]), fv(&[1, 1])], &[0, 1], 2, 1.0, None).unwrap();
        let ll = m.log_likelihood(&fv(&[2, 0]), 0).unwrap();
        assert!((ll - 0.25f64.ln()).abs() < 1e-12);
        let ll = m.log_likelihood(&fv(&[1, 1]), 0).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-12);
        assert_eq!(m.log_likelihood(&FeatureVector::default(), 1).unwrap(), 0.0);
        assert!(matches!(
            m.log_likelihood(&fv(&[1]), 2),
            Err(Error::UnknownLabel(2))
        ));
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(
            MnbModel::fit(&[], &[], 2, 1.0, None),
            Err(Error::EmptyTraining)
        ));
        assert!(matches!(
            MnbModel::fit(&[fv(&[1])], &[0, 1], 2, 1.0, None),
            Err(Error::LabelMismatch { .. })
        ));
        assert!(MnbModel::fit(&[fv(&[1])], &[0], 2, 0.0, None).is_err());
    }

    // direct probability products, no logarithms
    fn brute_force_posterior(docs: &[Vec<u32>], labels: &[usize], x: &[u32]) -> Vec<f64> {
        let k = labels.iter().max().unwrap() + 1;
        let v = x.len();
        let mut joint = vec![0.0; k];
        for (c, j) in joint.iter_mut().enumerate() {
            let members: Vec<&Vec<u32>> = docs
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == c)
                .map(|(d, _)| d)
                .collect();
            let prior = members.len() as f64 / docs.len() as f64;
            let totals: Vec<f64> = (0..v)
                .map(|i| members.iter().map(|d| d[i] as f64).sum())
                .collect();
            let all: f64 = totals.iter().sum();
            let mut p = prior;
            for i in 0..v {
                p *= ((1.0 + totals[i]) / (v as f64 + all)).powi(x[i] as i32);
            }
            *j = p;
        }
        let z: f64 = joint.iter().sum();
        joint.iter().map(|j| j / z).collect()
    }

    #[test]
    fn matches_brute_force_on_five_document_corpus() {
        let docs = vec![
            vec![3, 0, 1, 0],
            vec![2, 1, 0, 0],
            vec![0, 2, 2, 1],
            vec![0, 0, 1, 3],
            vec![1, 0, 0, 2],
        ];
        let labels = vec![0, 0, 1, 2, 2];
        let x: Vec<FeatureVector> = docs.iter().map(|d| fv(d)).collect();
        let m = MnbModel::fit(&x, &labels, 4, 1.0, None).unwrap();
        for q in [
            [1, 0, 0, 0],
            [0, 1, 1, 0],
            [0, 0, 0, 2],
            [1, 1, 1, 1],
            [0, 0, 0, 0],
        ] {
            let oracle = brute_force_posterior(&docs, &labels, &q);
            let post = m.posterior(&fv(&q));
            for (a, b) in post.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12);
            }
            let best = oracle
                .iter()
                .enumerate()
                .fold(
                    (0, -1.0),
                    |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc },
                )
                .0;
            assert_eq!(m.predict(&fv(&q)), best);
        }
    }

    proptest! {
        #[test]
        fn posterior_normalized_and_scale_invariant(
            docs in prop::collection::vec(prop::collection::vec(0u32..4, 5), 2..12),
            q in prop::collection::vec(0u32..4, 5),
            scale in 0.1f64..20.0,
        ) {
            let labels: Vec<usize> = (0..docs.len()).map(|i| i % 3).collect();
            let x: Vec<FeatureVector> = docs.iter().map(|d| fv(d)).collect();
            let m = MnbModel::fit(&x, &labels, 5, 1.0, None).unwrap();
            let post = m.posterior(&fv(&q));
            prop_assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let k = m.n_classes();
            for c in 0..k {
                let row: f64 = m.feature_log_prob(c).iter().map(|l| l.exp()).sum();
                prop_assert!((row - 1.0).abs() < 1e-9);
            }

            let w = vec![scale; x.len()];
            let mw = MnbModel::fit(&x, &labels, 5, 1.0, Some(&w)).unwrap();
            prop_assert_eq!(mw.predict(&fv(&q)), m.predict(&fv(&q)));
            for c in 0..k {
                prop_assert_eq!(m.feature_log_prob(c), mw.feature_log_prob(c));
            }

            // adding the class-constant coefficient never changes the argmax
            let with_coef: Vec<f64> = (0..k)
                .map(|c| m.log_likelihood(&fv(&q), c).unwrap() + m.log_priors()[c])
                .collect();
            prop_assert_eq!(argmax_lowest(&with_coef), m.predict(&fv(&q)));
        }
    }

    #[test]
    fn equal_weights_give_identical_model() {
        let x = vec![fv(&[2, 0, 1]), fv(&[0, 2, 1]), fv(&[1, 1, 1])];
        let y = vec![0, 1, 1];
        let plain = MnbModel::fit(&x, &y, 3, 1.0, None).unwrap();
        let weighted = MnbModel::fit(&x, &y, 3, 1.0, Some(&[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(plain, weighted);
        let scaled = MnbModel::fit(&x, &y, 3, 1.0, Some(&[4.5, 4.5, 4.5])).unwrap();
        assert_eq!(plain, scaled);
    }
}
