//! Error-distance metrics, stratified k-fold cross-validation and per-leaf
//! diagnostics.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{Classifier, ClassifierKind, LogitModel, LogitParams, MnbModel};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureSpace};
use crate::geo::{haversine_km, BoundingBox, GeoPoint, KM_PER_MILE};
use crate::quadtree::{IndexedPoint, LeafStat, QuadtreePartition};
use crate::text::{FeatureVector, Record};

/// Threshold of the ACC@161 metric (100 miles).
pub const ACC_RADIUS_KM: f64 = 161.0;

fn non_empty(errors: &[f64]) -> Result<()> {
    if errors.is_empty() {
        Err(Error::EmptyInput)
    } else {
        Ok(())
    }
}

/// Average error distance.
pub fn aed(errors: &[f64]) -> Result<f64> {
    non_empty(errors)?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

/// Median error distance; even counts average the two middle values.
pub fn med(errors: &[f64]) -> Result<f64> {
    non_empty(errors)?;
    let mut v = errors.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Fraction of errors at most `d` km.
pub fn acc_at(errors: &[f64], d: f64) -> Result<f64> {
    non_empty(errors)?;
    Ok(errors.iter().filter(|&&e| e <= d).count() as f64 / errors.len() as f64)
}

/// Smallest distance reaching accuracy `q`: the `⌈qN⌉`-th order statistic.
pub fn error_at_accuracy(errors: &[f64], q: f64) -> Result<f64> {
    non_empty(errors)?;
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "accuracy level {q} outside (0, 1]"
        )));
    }
    let mut v = errors.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(v[rank.min(v.len()) - 1])
}

pub fn km_to_miles(km: f64) -> f64 {
    km / KM_PER_MILE
}

/// Inverse-frequency weights `N / (K n_k)`.
pub fn bias_weights(leaf_counts: &BTreeMap<usize, usize>) -> BTreeMap<usize, f64> {
    let n: usize = leaf_counts.values().sum();
    let k = leaf_counts.len();
    leaf_counts
        .iter()
        .map(|(&leaf, &count)| (leaf, n as f64 / (k as f64 * count as f64)))
        .collect()
}

/// Stratified k-fold split over sample indices.
///
/// Each label's members are shuffled, then all labels are dealt round-robin
/// into folds with one running counter, so fold sizes differ by at most one
/// and every fold holds `⌊n_k / k⌋` or `⌈n_k / k⌉` members of label `k`.
pub fn kfold_split(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidParameter("k must be at least 2".into()));
    }
    if labels.len() < k {
        return Err(Error::TooFewRecords {
            records: labels.len(),
            folds: k,
        });
    }
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for members in by_label.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Pearson correlation; `None` for fewer than two pairs or zero variance.
pub fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    let n = pairs.len() as f64;
    if pairs.len() < 2 {
        return None;
    }
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    let cov = n * sxy - sx * sy;
    let vx = n * sxx - sx * sx;
    let vy = n * syy - sy * sy;
    if vx <= 0.0 || vy <= 0.0 {
        return None;
    }
    Some(cov / (vx.sqrt() * vy.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionOutcome {
    pub fold: usize,
    pub record_id: u64,
    pub actual: GeoPoint,
    /// Leaf of the fold's partition that holds the actual location.
    pub true_leaf: usize,
    pub predicted_leaf: usize,
    pub predicted_point: GeoPoint,
    pub error_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafDiagnostic {
    pub fold: usize,
    pub leaf_id: usize,
    pub count: usize,
    pub log_count: f64,
    pub predicted: usize,
    pub correct: usize,
    pub support: usize,
    /// `None` when nothing was predicted into the leaf.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDiagnostics {
    pub leaves: Vec<LeafDiagnostic>,
    /// Pearson r between log leaf count and precision over leaves with a
    /// defined precision; `None` when undefined.
    pub correlation: Option<f64>,
}

/// Per-leaf precision and the count/precision correlation for one partition.
pub fn grid_diagnostics(
    outcomes: &[PredictionOutcome],
    stats: &[LeafStat],
) -> Result<GridDiagnostics> {
    let fold = outcomes.first().map_or(0, |o| o.fold);
    let mut predicted = vec![0usize; stats.len()];
    let mut correct = vec![0usize; stats.len()];
    let mut support = vec![0usize; stats.len()];
    for o in outcomes {
        predicted[o.predicted_leaf] += 1;
        support[o.true_leaf] += 1;
        if o.predicted_leaf == o.true_leaf {
            correct[o.predicted_leaf] += 1;
        }
    }
    if predicted.iter().filter(|&&p| p > 0).count() < 2 {
        return Err(Error::InsufficientLeaves);
    }
    let leaves: Vec<LeafDiagnostic> = stats
        .iter()
        .map(|s| {
            let i = s.leaf_id;
            LeafDiagnostic {
                fold,
                leaf_id: i,
                count: s.point_count,
                log_count: (s.point_count as f64).ln(),
                predicted: predicted[i],
                correct: correct[i],
                support: support[i],
                precision: (predicted[i] > 0).then(|| correct[i] as f64 / predicted[i] as f64),
                recall: (support[i] > 0).then(|| correct[i] as f64 / support[i] as f64),
            }
        })
        .collect();
    let pairs: Vec<(f64, f64)> = leaves
        .iter()
        .filter_map(|l| l.precision.map(|p| (l.log_count, p)))
        .collect();
    Ok(GridDiagnostics {
        correlation: pearson(&pairs),
        leaves,
    })
}

/// Everything a trainer sees for one fold.
pub struct TrainingFold<'a> {
    pub fold: usize,
    pub partition: &'a QuadtreePartition,
    pub features: &'a [FeatureVector],
    pub labels: &'a [usize],
    pub n_features: usize,
    pub sample_weights: Option<&'a [f64]>,
}

pub trait LeafPredictor: Send {
    fn predict(&self, record: &Record, features: &FeatureVector) -> usize;
}

/// Produces a leaf predictor from one fold's training data.
pub trait LeafTrainer: Sync {
    fn name(&self) -> String;
    fn train(&self, fold: &TrainingFold<'_>) -> Result<Box<dyn LeafPredictor>>;
}

impl LeafPredictor for Classifier {
    fn predict(&self, _record: &Record, features: &FeatureVector) -> usize {
        Classifier::predict(self, features)
    }
}

/// Hyperparameters of the built-in classifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    pub alpha: f64,
    pub logit: LogitParams,
}

impl ClassifierSpec {
    pub fn fit(
        &self,
        x: &[FeatureVector],
        y: &[usize],
        n_features: usize,
        weights: Option<&[f64]>,
    ) -> Result<Classifier> {
        Ok(match self.kind {
            ClassifierKind::Mnb => {
                Classifier::Mnb(MnbModel::fit(x, y, n_features, self.alpha, weights)?)
            }
            ClassifierKind::Logit => match single_label(y) {
                // a one-leaf partition leaves nothing to discriminate
                Some(only) => {
                    let k = only + 1;
                    let mut bias = vec![0.0; k];
                    bias[only] = 1.0;
                    Classifier::Logit(LogitModel::from_parts(
                        &vec![vec![0.0; n_features]; k],
                        &bias,
                    )?)
                }
                None => Classifier::Logit(LogitModel::fit(x, y, n_features, &self.logit, weights)?),
            },
        })
    }
}

fn single_label(y: &[usize]) -> Option<usize> {
    let first = *y.first()?;
    y.iter().all(|&l| l == first).then_some(first)
}

impl LeafTrainer for ClassifierSpec {
    fn name(&self) -> String {
        self.kind.name().to_owned()
    }

    fn train(&self, fold: &TrainingFold<'_>) -> Result<Box<dyn LeafPredictor>> {
        let model = self.fit(
            fold.features,
            fold.labels,
            fold.n_features,
            fold.sample_weights,
        )?;
        Ok(Box::new(model))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub capacity: usize,
    pub max_depth: u32,
    /// Root box; defaults to the box enclosing every record.
    pub bounds: Option<BoundingBox>,
    pub folds: usize,
    pub seed: u64,
    pub features: FeatureConfig,
    /// Inverse-frequency leaf weights as training sample weights.
    pub bias_train: bool,
    /// Report leaf-weighted metrics next to the plain ones.
    pub bias_report: bool,
    /// Build one partition on all records instead of one per training fold.
    pub global_partition: bool,
    /// Measure wall-clock fit time (makes reports run-dependent).
    pub timing: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            capacity: 5000,
            max_depth: crate::quadtree::DEFAULT_MAX_DEPTH,
            bounds: None,
            folds: 10,
            seed: 0,
            features: FeatureConfig::default(),
            bias_train: false,
            bias_report: true,
            global_partition: false,
            timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_leaves: usize,
    pub n_features: usize,
    pub aed_km: f64,
    pub med_km: f64,
    pub acc_at_161: f64,
    pub fit_seconds: Option<f64>,
}

/// Metrics with each test record weighted by the bias weight of its true leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedMetrics {
    pub aed_km: f64,
    pub med_km: f64,
    pub acc_at_161: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fingerprint: String,
    pub capacity: usize,
    pub classifier: String,
    pub n_records: usize,
    pub aed_km: f64,
    pub med_km: f64,
    pub acc_at_161: f64,
    pub err_at_acc90_km: f64,
    pub err_at_acc90_miles: f64,
    pub weighted: Option<WeightedMetrics>,
    pub grid_correlation: Option<f64>,
    pub train_seconds: Option<f64>,
    pub folds: Vec<FoldMetrics>,
    pub leaves: Vec<LeafDiagnostic>,
    pub outcomes: Vec<PredictionOutcome>,
}

struct FoldResult {
    metrics: FoldMetrics,
    outcomes: Vec<PredictionOutcome>,
    leaves: Vec<LeafDiagnostic>,
    /// `(weight, error)` per test record.
    weighted: Vec<(f64, f64)>,
}

fn weighted_median(pairs: &[(f64, f64)]) -> f64 {
    let mut v = pairs.to_vec();
    v.sort_by(|a, b| a.1.total_cmp(&b.1));
    let half = v.iter().map(|p| p.0).sum::<f64>() / 2.0;
    let mut acc = 0.0;
    for (w, e) in &v {
        acc += w;
        if acc >= half {
            return *e;
        }
    }
    v.last().map_or(0.0, |p| p.1)
}

/// Stratified k-fold evaluation.
///
/// For every fold the quadtree is built from the training records only;
/// test records are assigned to leaves by `locate` (nearest-centroid fallback
/// in pruned regions) and their error is measured to the predicted leaf's
/// training centroid. Folds run in parallel and are aggregated in fold order.
pub fn cross_validate(
    records: &[Record],
    config: &CvConfig,
    trainer: &dyn LeafTrainer,
    embedding: Option<&EmbeddingTable>,
    fingerprint: &str,
) -> Result<EvalReport> {
    let points: Vec<IndexedPoint> = records
        .iter()
        .map(|r| IndexedPoint {
            id: r.record_id,
            point: r.point,
        })
        .collect();
    let bounds = match config.bounds {
        Some(b) => b,
        None => BoundingBox::enclosing(points.iter().map(|p| p.point))?,
    };
    // the global partition only stratifies folds unless global_partition is set
    let global = QuadtreePartition::build(&points, bounds, config.capacity, config.max_depth)?;
    let global_labels = global.record_labels();
    let strata: Vec<usize> = records
        .iter()
        .map(|r| global_labels[&r.record_id])
        .collect();
    let folds = kfold_split(&strata, config.folds, config.seed)?;

    let docs: Vec<Vec<String>> = records
        .par_iter()
        .map(|r| config.features.tokenize(&r.text))
        .collect();

    let start = Instant::now();
    let results: Vec<FoldResult> = folds
        .par_iter()
        .enumerate()
        .map(|(f, test_idx)| {
            run_fold(
                f, test_idx, records, &points, &docs, bounds, &global, config, trainer, embedding,
            )
            .map_err(|e| e.in_fold(f))
        })
        .collect::<Result<_>>()?;
    let train_seconds = config.timing.then(|| start.elapsed().as_secs_f64());

    let mut outcomes = Vec::with_capacity(records.len());
    let mut leaves = Vec::new();
    let mut weighted = Vec::new();
    let mut fold_metrics = Vec::new();
    for r in results {
        outcomes.extend(r.outcomes);
        leaves.extend(r.leaves);
        weighted.extend(r.weighted);
        fold_metrics.push(r.metrics);
    }
    let errors: Vec<f64> = outcomes.iter().map(|o| o.error_km).collect();
    let pairs: Vec<(f64, f64)> = leaves
        .iter()
        .filter_map(|l| l.precision.map(|p| (l.log_count, p)))
        .collect();
    let weighted = config.bias_report.then(|| {
        let total: f64 = weighted.iter().map(|p| p.0).sum();
        WeightedMetrics {
            aed_km: weighted.iter().map(|(w, e)| w * e).sum::<f64>() / total,
            med_km: weighted_median(&weighted),
            acc_at_161: weighted
                .iter()
                .filter(|p| p.1 <= ACC_RADIUS_KM)
                .map(|p| p.0)
                .sum::<f64>()
                / total,
        }
    });
    let err90 = error_at_accuracy(&errors, 0.9)?;
    Ok(EvalReport {
        fingerprint: fingerprint.to_owned(),
        capacity: config.capacity,
        classifier: trainer.name(),
        n_records: records.len(),
        aed_km: aed(&errors)?,
        med_km: med(&errors)?,
        acc_at_161: acc_at(&errors, ACC_RADIUS_KM)?,
        err_at_acc90_km: err90,
        err_at_acc90_miles: km_to_miles(err90),
        weighted,
        grid_correlation: pearson(&pairs),
        train_seconds,
        folds: fold_metrics,
        leaves,
        outcomes,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_fold(
    fold: usize,
    test_idx: &[usize],
    records: &[Record],
    points: &[IndexedPoint],
    docs: &[Vec<String>],
    bounds: BoundingBox,
    global: &QuadtreePartition,
    config: &CvConfig,
    trainer: &dyn LeafTrainer,
    embedding: Option<&EmbeddingTable>,
) -> Result<FoldResult> {
    let mut is_test = vec![false; records.len()];
    for &i in test_idx {
        is_test[i] = true;
    }
    let train_idx: Vec<usize> = (0..records.len()).filter(|&i| !is_test[i]).collect();
    let train_points: Vec<IndexedPoint> = train_idx.iter().map(|&i| points[i]).collect();

    let owned;
    let partition = if config.global_partition {
        global
    } else {
        owned = QuadtreePartition::build(&train_points, bounds, config.capacity, config.max_depth)?;
        &owned
    };
    let leaf_of = partition.record_labels();
    let labels: Vec<usize> = train_idx
        .iter()
        .map(|&i| leaf_of[&records[i].record_id])
        .collect();

    let train_docs: Vec<Vec<String>> = train_idx.iter().map(|&i| docs[i].clone()).collect();
    let space = FeatureSpace::fit(&train_docs, &config.features, embedding)?;
    let x_train: Vec<FeatureVector> = train_docs.iter().map(|d| space.transform(d)).collect();

    let mut leaf_counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in &labels {
        *leaf_counts.entry(l).or_insert(0) += 1;
    }
    let leaf_weights = bias_weights(&leaf_counts);
    let sample_weights: Option<Vec<f64>> = config
        .bias_train
        .then(|| labels.iter().map(|l| leaf_weights[l]).collect());

    let started = Instant::now();
    let predictor = trainer.train(&TrainingFold {
        fold,
        partition,
        features: &x_train,
        labels: &labels,
        n_features: space.n_features(),
        sample_weights: sample_weights.as_deref(),
    })?;
    let fit_seconds = config.timing.then(|| started.elapsed().as_secs_f64());

    let mut outcomes = Vec::with_capacity(test_idx.len());
    let mut weighted = Vec::with_capacity(test_idx.len());
    for &i in test_idx {
        let r = &records[i];
        let x = space.transform(&docs[i]);
        let predicted_leaf = predictor.predict(r, &x);
        let leaf = partition
            .leaf(predicted_leaf)
            .ok_or(Error::UnknownLabel(predicted_leaf))?;
        let true_leaf = partition.locate(r.point)?;
        let error_km = haversine_km(r.point, leaf.centroid);
        // test points in leaves without training weight fall back to weight 1
        weighted.push((
            leaf_weights.get(&true_leaf).copied().unwrap_or(1.0),
            error_km,
        ));
        outcomes.push(PredictionOutcome {
            fold,
            record_id: r.record_id,
            actual: r.point,
            true_leaf,
            predicted_leaf,
            predicted_point: leaf.centroid,
            error_km,
        });
    }

    let errors: Vec<f64> = outcomes.iter().map(|o| o.error_km).collect();
    let stats = partition.leaf_stats();
    let leaves = match grid_diagnostics(&outcomes, &stats) {
        Ok(d) => d.leaves,
        Err(Error::InsufficientLeaves) => {
            // fewer than two predicted leaves: keep the rows, skip the correlation
            let mut d = GridDiagnostics {
                leaves: Vec::new(),
                correlation: None,
            };
            for s in &stats {
                let mine: Vec<_> = outcomes
                    .iter()
                    .filter(|o| o.predicted_leaf == s.leaf_id)
                    .collect();
                let correct = mine.iter().filter(|o| o.true_leaf == s.leaf_id).count();
                let support = outcomes.iter().filter(|o| o.true_leaf == s.leaf_id).count();
                d.leaves.push(LeafDiagnostic {
                    fold,
                    leaf_id: s.leaf_id,
                    count: s.point_count,
                    log_count: (s.point_count as f64).ln(),
                    predicted: mine.len(),
                    correct,
                    support,
                    precision: (!mine.is_empty()).then(|| correct as f64 / mine.len() as f64),
                    recall: (support > 0).then(|| correct as f64 / support as f64),
                });
            }
            d.leaves
        }
        Err(e) => return Err(e),
    };
    Ok(FoldResult {
        metrics: FoldMetrics {
            fold,
            n_train: train_idx.len(),
            n_test: test_idx.len(),
            n_leaves: partition.num_leaves(),
            n_features: space.n_features(),
            aed_km: aed(&errors)?,
            med_km: med(&errors)?,
            acc_at_161: acc_at(&errors, ACC_RADIUS_KM)?,
            fit_seconds,
        },
        outcomes,
        leaves,
        weighted,
    })
}
