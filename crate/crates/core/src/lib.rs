//! Text-based geolocation over quadtree partitions.
//!
//! Geotagged messages are partitioned with a capacity-bounded point-region
//! quadtree whose leaves become class labels. Message text is turned into
//! bag-of-words count vectors (optionally shrunk by merging misspellings and
//! near-synonyms), a Multinomial Naive Bayes or logistic-regression model
//! predicts the leaf, and predictions are scored by great-circle error
//! distance.

pub mod classify;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod features;
pub mod geo;
pub mod pipeline;
pub mod quadtree;
pub mod synth;
pub mod text;

pub use classify::{Classifier, ClassifierKind, LogitModel, LogitParams, MnbModel};
pub use embedding::{EmbeddingTable, MergeMap};
pub use error::{Error, Result};
pub use eval::{cross_validate, CvConfig, EvalReport};
pub use features::{EmbeddingSource, FeatureConfig, FeatureSpace};
pub use geo::{haversine_km, BoundingBox, GeoPoint};
pub use pipeline::{ModelBundle, PipelineConfig};
pub use quadtree::{LeafStat, QuadtreePartition};
pub use text::{FeatureVector, Record, Vocabulary};
