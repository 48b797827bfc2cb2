//! Configuration, corpus ingestion, artifact persistence and the four
//! top-level commands (partition, train, evaluate, predict).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{Classifier, ClassifierKind, LogitParams};
use crate::embedding::{CbowParams, EmbeddingTable, ReduceParams};
use crate::error::{Error, Result};
use crate::eval::{cross_validate, ClassifierSpec, CvConfig, EvalReport, LeafTrainer};
use crate::features::{EmbeddingSource, FeatureConfig, FeatureSpace};
use crate::geo::{BoundingBox, GeoPoint};
use crate::quadtree::{IndexedPoint, LeafStat, QuadtreePartition, DEFAULT_MAX_DEPTH};
use crate::text::{dedup_corpus, vectorize, Record, TokenizerConfig, Vocabulary};

/// Every knob of a run. Keys of [`PipelineConfig::set`] match the field
/// names, with the nested tokenizer, embedding and classifier settings
/// flattened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub corpus: Option<PathBuf>,
    pub col_user: usize,
    pub col_lat: usize,
    pub col_lon: usize,
    pub col_text: usize,
    pub header: bool,
    pub capacity: usize,
    /// Capacity sweep for `evaluate`; empty means just `capacity`.
    pub capacities: Vec<usize>,
    pub max_depth: u32,
    pub bounds: Option<BoundingBox>,
    pub tokenizer: TokenizerConfig,
    pub min_df: usize,
    pub embedding: EmbeddingSource,
    pub cbow: CbowParams,
    pub reduce: ReduceParams,
    pub classifier: ClassifierKind,
    /// Classifier sweep for `evaluate`; empty means just `classifier`.
    pub classifiers: Vec<ClassifierKind>,
    pub alpha: f64,
    pub logit: LogitParams,
    pub folds: usize,
    pub seed: u64,
    pub bias_train: bool,
    pub bias_report: bool,
    pub global_partition: bool,
    pub timing: bool,
    pub out_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: None,
            col_user: 0,
            col_lat: 1,
            col_lon: 2,
            col_text: 3,
            header: false,
            capacity: 5000,
            capacities: Vec::new(),
            max_depth: DEFAULT_MAX_DEPTH,
            bounds: None,
            tokenizer: TokenizerConfig::default(),
            min_df: 5,
            embedding: EmbeddingSource::Train,
            cbow: CbowParams::default(),
            reduce: ReduceParams::default(),
            classifier: ClassifierKind::Logit,
            classifiers: Vec::new(),
            alpha: 1.0,
            logit: LogitParams::default(),
            folds: 10,
            seed: 0,
            bias_train: false,
            bias_report: true,
            global_partition: false,
            timing: false,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Every settable key with a one-line description; `true` marks boolean
/// settings.
pub const SETTINGS: &[(&str, bool, &str)] = &[
    ("corpus", false, "TSV corpus path"),
    ("col_user", false, "zero-based column of the user id"),
    ("col_lat", false, "zero-based column of the latitude"),
    ("col_lon", false, "zero-based column of the longitude"),
    ("col_text", false, "zero-based column of the message text"),
    ("header", true, "skip the first corpus line"),
    ("capacity", false, "maximum points per quadtree leaf"),
    (
        "capacities",
        false,
        "comma-separated capacity sweep for evaluate",
    ),
    ("max_depth", false, "maximum quadtree depth"),
    (
        "bounds",
        false,
        "root box min_lat,max_lat,min_lon,max_lon or auto",
    ),
    ("min_len", false, "shortest token kept"),
    ("strip_urls", true, "drop URLs before tokenizing"),
    ("strip_mentions", true, "drop @-mentions before tokenizing"),
    ("stop_words", true, "remove English stop words"),
    (
        "min_df",
        false,
        "minimum document frequency of a vocabulary token",
    ),
    (
        "embedding",
        false,
        "word vectors for reduction: off, train or load:<path>",
    ),
    ("dim", false, "CBOW vector size"),
    ("window", false, "CBOW context window"),
    ("epochs", false, "CBOW passes over the corpus"),
    ("negatives", false, "CBOW negative samples per target"),
    ("learning_rate", false, "CBOW initial learning rate"),
    (
        "cos_threshold",
        false,
        "cosine similarity needed to merge synonyms",
    ),
    (
        "jac_threshold",
        false,
        "character n-gram Jaccard similarity needed to merge misspellings",
    ),
    ("ngram_n", false, "character n-gram length"),
    (
        "neighbors",
        false,
        "embedding neighbours examined per token",
    ),
    ("classifier", false, "mnb or logit"),
    (
        "classifiers",
        false,
        "comma-separated classifier sweep for evaluate",
    ),
    ("alpha", false, "Naive Bayes additive smoothing"),
    ("l2", false, "logistic regression L2 penalty"),
    ("max_iter", false, "logistic regression iteration cap"),
    ("tol", false, "logistic regression gradient tolerance"),
    (
        "balanced",
        true,
        "inverse-frequency class weights in logistic regression",
    ),
    ("folds", false, "cross-validation folds"),
    ("seed", false, "seed for fold shuffling and CBOW"),
    (
        "bias_train",
        true,
        "train with inverse-frequency leaf weights",
    ),
    ("bias_report", true, "report leaf-weighted metrics"),
    (
        "global_partition",
        true,
        "build one quadtree on all records instead of per fold",
    ),
    ("timing", true, "record wall-clock fit time"),
    ("out_dir", false, "output directory"),
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid boolean {value:?} for {key}"
        ))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl PipelineConfig {
    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "corpus" => self.corpus = (!v.is_empty()).then(|| PathBuf::from(v)),
            "col_user" => self.col_user = parse(key, v)?,
            "col_lat" => self.col_lat = parse(key, v)?,
            "col_lon" => self.col_lon = parse(key, v)?,
            "col_text" => self.col_text = parse(key, v)?,
            "header" => self.header = parse_bool(key, v)?,
            "capacity" => self.capacity = parse(key, v)?,
            "capacities" => self.capacities = parse_list(key, v)?,
            "max_depth" => self.max_depth = parse(key, v)?,
            "bounds" => {
                self.bounds = if v.is_empty() || v == "auto" {
                    None
                } else {
                    let b: Vec<f64> = parse_list(key, v)?;
                    if b.len() != 4 {
                        return Err(Error::Config(
                            "bounds takes min_lat,max_lat,min_lon,max_lon".into(),
                        ));
                    }
                    Some(
                        BoundingBox::new(b[0], b[1], b[2], b[3])
                            .map_err(|e| Error::Config(format!("bounds: {e}")))?,
                    )
                }
            }
            "min_len" => self.tokenizer.min_len = parse(key, v)?,
            "strip_urls" => self.tokenizer.strip_urls = parse_bool(key, v)?,
            "strip_mentions" => self.tokenizer.strip_mentions = parse_bool(key, v)?,
            "stop_words" => self.tokenizer.remove_stop_words = parse_bool(key, v)?,
            "min_df" => self.min_df = parse(key, v)?,
            "embedding" => self.embedding = v.parse()?,
            "dim" => self.cbow.dim = parse(key, v)?,
            "window" => self.cbow.window = parse(key, v)?,
            "epochs" => self.cbow.epochs = parse(key, v)?,
            "negatives" => self.cbow.negatives = parse(key, v)?,
            "learning_rate" => self.cbow.learning_rate = parse(key, v)?,
            "cos_threshold" => self.reduce.cos_threshold = parse(key, v)?,
            "jac_threshold" => self.reduce.jac_threshold = parse(key, v)?,
            "ngram_n" => self.reduce.ngram_n = parse(key, v)?,
            "neighbors" => self.reduce.neighbors = parse(key, v)?,
            "classifier" => self.classifier = v.parse()?,
            "classifiers" => {
                self.classifiers = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "alpha" => self.alpha = parse(key, v)?,
            "l2" => self.logit.l2 = parse(key, v)?,
            "max_iter" => self.logit.max_iter = parse(key, v)?,
            "tol" => self.logit.tol = parse(key, v)?,
            "balanced" => self.logit.balanced = parse_bool(key, v)?,
            "folds" => self.folds = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "bias_train" => self.bias_train = parse_bool(key, v)?,
            "bias_report" => self.bias_report = parse_bool(key, v)?,
            "global_partition" => self.global_partition = parse_bool(key, v)?,
            "timing" => self.timing = parse_bool(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            other => return Err(Error::Config(format!("unknown setting {other:?}"))),
        }
        Ok(())
    }

    /// Apply a `key = value` file; blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .map_err(|_| Error::Config(format!("cannot read {}", path.display())))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected key = value",
                    path.display(),
                    n + 1
                ))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Canonical `key=value` lines in a fixed order; feeding them back
    /// through [`PipelineConfig::set`] reproduces the config.
    pub fn to_kv(&self) -> String {
        let b = self
            .bounds
            .map(|b| format!("{},{},{},{}", b.min_lat, b.max_lat, b.min_lon, b.max_lon))
            .unwrap_or_else(|| "auto".into());
        let pairs: Vec<(&str, String)> = vec![
            (
                "corpus",
                self.corpus
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("col_user", self.col_user.to_string()),
            ("col_lat", self.col_lat.to_string()),
            ("col_lon", self.col_lon.to_string()),
            ("col_text", self.col_text.to_string()),
            ("header", self.header.to_string()),
            ("capacity", self.capacity.to_string()),
            ("capacities", join(&self.capacities)),
            ("max_depth", self.max_depth.to_string()),
            ("bounds", b),
            ("min_len", self.tokenizer.min_len.to_string()),
            ("strip_urls", self.tokenizer.strip_urls.to_string()),
            ("strip_mentions", self.tokenizer.strip_mentions.to_string()),
            ("stop_words", self.tokenizer.remove_stop_words.to_string()),
            ("min_df", self.min_df.to_string()),
            ("embedding", self.embedding.to_string()),
            ("dim", self.cbow.dim.to_string()),
            ("window", self.cbow.window.to_string()),
            ("epochs", self.cbow.epochs.to_string()),
            ("negatives", self.cbow.negatives.to_string()),
            ("learning_rate", self.cbow.learning_rate.to_string()),
            ("cos_threshold", self.reduce.cos_threshold.to_string()),
            ("jac_threshold", self.reduce.jac_threshold.to_string()),
            ("ngram_n", self.reduce.ngram_n.to_string()),
            ("neighbors", self.reduce.neighbors.to_string()),
            ("classifier", self.classifier.name().to_string()),
            (
                "classifiers",
                self.classifiers
                    .iter()
                    .map(|c| c.name())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("alpha", self.alpha.to_string()),
            ("l2", self.logit.l2.to_string()),
            ("max_iter", self.logit.max_iter.to_string()),
            ("tol", self.logit.tol.to_string()),
            ("balanced", self.logit.balanced.to_string()),
            ("folds", self.folds.to_string()),
            ("seed", self.seed.to_string()),
            ("bias_train", self.bias_train.to_string()),
            ("bias_report", self.bias_report.to_string()),
            ("global_partition", self.global_partition.to_string()),
            ("timing", self.timing.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
        ];
        pairs.into_iter().fold(String::new(), |mut s, (k, v)| {
            let _ = writeln!(s, "{k}={v}");
            s
        })
    }

    /// Short digest of the settings and the corpus contents. The corpus
    /// path and output directory do not contribute.
    pub fn fingerprint(&self, corpus_digest: &str) -> String {
        let mut h = Sha256::new();
        for line in self.to_kv().lines() {
            if !(line.starts_with("corpus=") || line.starts_with("out_dir=")) {
                h.update(line.as_bytes());
                h.update(b"\n");
            }
        }
        h.update(corpus_digest.as_bytes());
        hex::encode(h.finalize())[..16].to_owned()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.capacity == 0 || self.capacities.contains(&0) {
            return bad("capacity must be at least 1");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1");
        }
        if self.folds < 2 {
            return bad("folds must be at least 2");
        }
        for (name, t) in [
            ("cos_threshold", self.reduce.cos_threshold),
            ("jac_threshold", self.reduce.jac_threshold),
        ] {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {t}")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.logit.l2 >= 0.0 && self.logit.tol >= 0.0) {
            return bad("l2 and tol must be non-negative");
        }
        if self.min_df == 0 || self.reduce.ngram_n == 0 || self.cbow.dim == 0 {
            return bad("min_df, ngram_n and dim must be at least 1");
        }
        let cols = [self.col_user, self.col_lat, self.col_lon, self.col_text];
        if (1..4).any(|i| cols[..i].contains(&cols[i])) {
            return bad("corpus columns must be distinct");
        }
        Ok(())
    }

    pub fn capacity_sweep(&self) -> Vec<usize> {
        if self.capacities.is_empty() {
            vec![self.capacity]
        } else {
            self.capacities.clone()
        }
    }

    pub fn classifier_sweep(&self) -> Vec<ClassifierKind> {
        if self.classifiers.is_empty() {
            vec![self.classifier]
        } else {
            self.classifiers.clone()
        }
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            tokenizer: self.tokenizer.clone(),
            min_df: self.min_df,
            embedding: self.embedding.clone(),
            cbow: CbowParams {
                seed: self.seed,
                ..self.cbow.clone()
            },
            reduce: self.reduce.clone(),
        }
    }

    pub fn classifier_spec(&self, kind: ClassifierKind) -> ClassifierSpec {
        ClassifierSpec {
            kind,
            alpha: self.alpha,
            logit: self.logit.clone(),
        }
    }

    pub fn cv_config(&self, capacity: usize) -> CvConfig {
        CvConfig {
            capacity,
            max_depth: self.max_depth,
            bounds: self.bounds,
            folds: self.folds,
            seed: self.seed,
            features: self.feature_config(),
            bias_train: self.bias_train,
            bias_report: self.bias_report,
            global_partition: self.global_partition,
            timing: self.timing,
        }
    }

    fn corpus_path(&self) -> Result<&Path> {
        self.corpus
            .as_deref()
            .ok_or_else(|| Error::Config("no corpus given".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    /// Non-blank lines read (header excluded).
    pub read: usize,
    pub parsed: usize,
    pub malformed: usize,
    pub deduped: usize,
    pub kept: usize,
    /// SHA-256 of the raw file.
    pub digest: String,
}

fn anonymize(user: &str) -> String {
    hex::encode(Sha256::digest(user.as_bytes()))[..12].to_owned()
}

fn parse_line(line: &str, config: &PipelineConfig) -> Option<(String, GeoPoint, String)> {
    let fields: Vec<&str> = line.split('\t').collect();
    let get = |i: usize| fields.get(i).copied();
    let lat: f64 = get(config.col_lat)?.trim().parse().ok()?;
    let lon: f64 = get(config.col_lon)?.trim().parse().ok()?;
    let point = GeoPoint::new(lat, lon).ok()?;
    Some((
        get(config.col_user)?.to_owned(),
        point,
        get(config.col_text)?.to_owned(),
    ))
}

/// Read a TSV corpus. Malformed lines are skipped and counted, duplicate
/// texts are dropped, user ids are replaced by a hash prefix, and each
/// record's id is its zero-based line number.
pub fn load_corpus(config: &PipelineConfig) -> Result<(Vec<Record>, IngestReport)> {
    let path = config.corpus_path()?;
    let bytes = fs::read(path).map_err(|_| Error::FileNotFound(path.to_owned()))?;
    let digest = hex::encode(Sha256::digest(&bytes));
    let text =
        String::from_utf8(bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut read = 0;
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if (config.header && n == 0) || line.trim().is_empty() {
            continue;
        }
        read += 1;
        if let Some((user, point, text)) = parse_line(line, config) {
            records.push(Record {
                record_id: n as u64,
                user_id: anonymize(&user),
                point,
                text,
            });
        }
    }
    let parsed = records.len();
    let records = dedup_corpus(records);
    if records.is_empty() {
        return Err(Error::NoValidRecords);
    }
    let report = IngestReport {
        read,
        parsed,
        malformed: read - parsed,
        deduped: parsed - records.len(),
        kept: records.len(),
        digest,
    };
    Ok((records, report))
}

fn root_bounds(config: &PipelineConfig, records: &[Record]) -> Result<BoundingBox> {
    match config.bounds {
        Some(b) => Ok(b),
        None => BoundingBox::enclosing(records.iter().map(|r| r.point)),
    }
}

fn build_partition(config: &PipelineConfig, records: &[Record]) -> Result<QuadtreePartition> {
    let points: Vec<IndexedPoint> = records
        .iter()
        .map(|r| IndexedPoint {
            id: r.record_id,
            point: r.point,
        })
        .collect();
    QuadtreePartition::build(
        &points,
        root_bounds(config, records)?,
        config.capacity,
        config.max_depth,
    )
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn nan_or<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "NaN".to_owned(), |x| x.to_string())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionArtifact {
    pub fingerprint: String,
    pub ingest: IngestReport,
    pub partition: QuadtreePartition,
}

/// Paths of the files a command wrote.
#[derive(Debug, Clone, Default)]
pub struct Outputs {
    pub fingerprint: String,
    pub files: Vec<PathBuf>,
}

pub fn leaf_stats_csv(fingerprint: &str, stats: &[LeafStat]) -> String {
    let mut s = String::from(
        "fingerprint,leaf_id,count,depth,min_lat,max_lat,min_lon,max_lon,centroid_lat,centroid_lon\n",
    );
    for l in stats {
        let _ = writeln!(
            s,
            "{fingerprint},{},{},{},{},{},{},{},{},{}",
            l.leaf_id,
            l.point_count,
            l.depth,
            l.bbox.min_lat,
            l.bbox.max_lat,
            l.bbox.min_lon,
            l.bbox.max_lon,
            l.centroid.lat,
            l.centroid.lon
        );
    }
    s
}

/// Build the quadtree on the whole corpus and write `partition.json`,
/// `partition.geojson` and `leaf_stats.csv`.
pub fn cmd_partition(config: &PipelineConfig) -> Result<Outputs> {
    config.validate()?;
    let (records, ingest) = load_corpus(config)?;
    let fingerprint = config.fingerprint(&ingest.digest);
    let partition = build_partition(config, &records)?;
    fs::create_dir_all(&config.out_dir)?;
    let files = vec![
        config.out_dir.join("partition.json"),
        config.out_dir.join("partition.geojson"),
        config.out_dir.join("leaf_stats.csv"),
    ];
    fs::write(
        &files[2],
        leaf_stats_csv(&fingerprint, &partition.leaf_stats()),
    )?;
    write_json(&files[1], &partition.to_geojson(Some(&fingerprint)))?;
    write_json(
        &files[0],
        &PartitionArtifact {
            fingerprint: fingerprint.clone(),
            ingest,
            partition,
        },
    )?;
    Ok(Outputs { fingerprint, files })
}

pub const BUNDLE_FORMAT_VERSION: u32 = 1;
const BUNDLE_MODEL: &str = "model.json";
const BUNDLE_VOCAB: &str = "vocabulary.tsv";
const BUNDLE_MERGES: &str = "merge_map.tsv";

/// A trained model directory: `model.json`, `vocabulary.tsv` and
/// `merge_map.tsv`. The vocabulary is stored beside the JSON and its hash
/// recorded inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: u32,
    pub fingerprint: String,
    pub vocab_hash: String,
    pub tokenizer: TokenizerConfig,
    pub leaves: Vec<LeafStat>,
    pub classifier: Classifier,
    #[serde(skip)]
    pub vocab: Option<Vocabulary>,
}

impl ModelBundle {
    pub fn save(&self, dir: &Path, space: &FeatureSpace) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let files = vec![
            dir.join(BUNDLE_MODEL),
            dir.join(BUNDLE_VOCAB),
            dir.join(BUNDLE_MERGES),
        ];
        write_json(&files[0], self)?;
        fs::write(&files[1], space.vocab.to_tsv())?;
        fs::write(&files[2], space.merges.to_tsv())?;
        Ok(files)
    }

    /// Load a bundle and check its vocabulary against the recorded hash.
    pub fn load(dir: &Path) -> Result<Self> {
        let model_path = dir.join(BUNDLE_MODEL);
        let json =
            fs::read_to_string(&model_path).map_err(|_| Error::FileNotFound(model_path.clone()))?;
        let mut bundle: ModelBundle = serde_json::from_str(&json)
            .map_err(|e| Error::Format(format!("{}: {e}", model_path.display())))?;
        if bundle.format_version != BUNDLE_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "bundle format {} is not supported",
                bundle.format_version
            )));
        }
        let vocab_path = dir.join(BUNDLE_VOCAB);
        let tsv = fs::read_to_string(&vocab_path).map_err(|_| Error::FileNotFound(vocab_path))?;
        let vocab = Vocabulary::from_tsv(&tsv)?;
        let found = vocab.hash();
        if found != bundle.vocab_hash {
            return Err(Error::VocabularyMismatch {
                expected: bundle.vocab_hash,
                found,
            });
        }
        if bundle.classifier.n_classes() > bundle.leaves.len() {
            return Err(Error::Format(
                "classifier has more classes than the bundle has leaves".into(),
            ));
        }
        bundle.vocab = Some(vocab);
        Ok(bundle)
    }

    pub fn predict_text(&self, text: &str) -> Prediction {
        let tokens = crate::text::normalize_tokenize(text, &self.tokenizer);
        let x = match &self.vocab {
            Some(v) => vectorize(&tokens, v),
            None => Default::default(),
        };
        let low_evidence = x.is_empty();
        let leaf_id = if low_evidence {
            self.classifier.prior_label()
        } else {
            self.classifier.predict(&x)
        };
        let confidence = self.classifier.predict_proba(&x)[leaf_id];
        let c = self.leaves[leaf_id].centroid;
        Prediction {
            leaf_id,
            lat: c.lat,
            lon: c.lon,
            confidence,
            low_evidence,
            fingerprint: self.fingerprint.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub leaf_id: usize,
    pub lat: f64,
    pub lon: f64,
    pub confidence: f64,
    pub low_evidence: bool,
    pub fingerprint: String,
}

/// Fit partition, features and the configured classifier on the whole
/// corpus and write a bundle to `out_dir/model`.
pub fn cmd_train(config: &PipelineConfig) -> Result<(ModelBundle, Outputs)> {
    config.validate()?;
    let features = config.feature_config();
    let embedding = features.load_embedding()?;
    let (records, ingest) = load_corpus(config)?;
    let fingerprint = config.fingerprint(&ingest.digest);
    let partition = build_partition(config, &records)?;
    let labels_of = partition.record_labels();
    let labels: Vec<usize> = records.iter().map(|r| labels_of[&r.record_id]).collect();
    let docs: Vec<Vec<String>> = records.iter().map(|r| features.tokenize(&r.text)).collect();
    let space = FeatureSpace::fit(&docs, &features, embedding.as_ref())?;
    let x: Vec<_> = docs.iter().map(|d| space.transform(d)).collect();
    let weights = config.bias_train.then(|| {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &l in &labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        let w = crate::eval::bias_weights(&counts);
        labels.iter().map(|l| w[l]).collect::<Vec<f64>>()
    });
    let classifier = config.classifier_spec(config.classifier).fit(
        &x,
        &labels,
        space.n_features(),
        weights.as_deref(),
    )?;
    let bundle = ModelBundle {
        format_version: BUNDLE_FORMAT_VERSION,
        fingerprint: fingerprint.clone(),
        vocab_hash: space.vocab.hash(),
        tokenizer: config.tokenizer.clone(),
        leaves: partition.leaf_stats(),
        classifier,
        vocab: Some(space.vocab.clone()),
    };
    let files = bundle.save(&config.out_dir.join("model"), &space)?;
    Ok((bundle, Outputs { fingerprint, files }))
}

/// One JSON prediction per input line.
pub fn cmd_predict<R: BufRead, W: Write>(
    bundle_dir: &Path,
    input: R,
    mut output: W,
) -> Result<usize> {
    let bundle = ModelBundle::load(bundle_dir)?;
    let mut n = 0;
    for line in input.lines() {
        let p = bundle.predict_text(&line?);
        serde_json::to_writer(&mut output, &p)?;
        output.write_all(b"\n")?;
        n += 1;
    }
    output.flush()?;
    Ok(n)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateArtifact {
    pub fingerprint: String,
    pub ingest: IngestReport,
    pub reports: Vec<EvalReport>,
}

pub fn metrics_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from(
        "fingerprint,capacity,classifier,n_records,med_km,aed_km,acc_at_161,err_at_acc90_km,time_mins\n",
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.fingerprint,
            r.capacity,
            r.classifier,
            r.n_records,
            r.med_km,
            r.aed_km,
            r.acc_at_161,
            r.err_at_acc90_km,
            r.train_seconds
                .map(|t| (t / 60.0).to_string())
                .unwrap_or_default()
        );
    }
    s
}

pub fn leaf_diagnostics_csv(reports: &[EvalReport]) -> String {
    let mut s =
        String::from("fingerprint,capacity,classifier,fold,leaf_id,count,log_count,precision\n");
    for r in reports {
        for l in &r.leaves {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.fingerprint,
                r.capacity,
                r.classifier,
                l.fold,
                l.leaf_id,
                l.count,
                l.log_count,
                nan_or(l.precision)
            );
        }
    }
    s
}

/// Cross-validate every built-in classifier of the sweep at every capacity.
pub fn cmd_evaluate(config: &PipelineConfig) -> Result<(EvaluateArtifact, Outputs)> {
    let specs: Vec<ClassifierSpec> = config
        .classifier_sweep()
        .into_iter()
        .map(|k| config.classifier_spec(k))
        .collect();
    let trainers: Vec<&dyn LeafTrainer> = specs.iter().map(|s| s as &dyn LeafTrainer).collect();
    cmd_evaluate_with(config, &trainers)
}

/// [`cmd_evaluate`] with caller-supplied trainers in place of the
/// configured classifiers. Writes `report.json`, `metrics.csv` and
/// `leaf_diagnostics.csv`.
pub fn cmd_evaluate_with(
    config: &PipelineConfig,
    trainers: &[&dyn LeafTrainer],
) -> Result<(EvaluateArtifact, Outputs)> {
    config.validate()?;
    let embedding: Option<EmbeddingTable> = config.feature_config().load_embedding()?;
    let (records, ingest) = load_corpus(config)?;
    let fingerprint = config.fingerprint(&ingest.digest);
    let mut reports = Vec::new();
    for capacity in config.capacity_sweep() {
        let cv = config.cv_config(capacity);
        for trainer in trainers {
            reports.push(cross_validate(
                &records,
                &cv,
                *trainer,
                embedding.as_ref(),
                &fingerprint,
            )?);
        }
    }
    fs::create_dir_all(&config.out_dir)?;
    let files = vec![
        config.out_dir.join("report.json"),
        config.out_dir.join("metrics.csv"),
        config.out_dir.join("leaf_diagnostics.csv"),
    ];
    fs::write(&files[1], metrics_csv(&reports))?;
    fs::write(&files[2], leaf_diagnostics_csv(&reports))?;
    let artifact = EvaluateArtifact {
        fingerprint: fingerprint.clone(),
        ingest,
        reports,
    };
    write_json(&files[0], &artifact)?;
    Ok((artifact, Outputs { fingerprint, files }))
}
