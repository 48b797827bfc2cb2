//! Text to feature vectors: vocabulary, optional similarity reduction.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::{
    reduce_vocabulary, train_cbow, CbowParams, EmbeddingTable, MergeMap, ReduceParams,
};
use crate::error::{Error, Result};
use crate::text::{normalize_tokenize, vectorize, FeatureVector, TokenizerConfig, Vocabulary};

/// Where word vectors for the synonym pass come from. `Off` disables
/// vocabulary reduction altogether.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbeddingSource {
    Off,
    Train,
    Load(PathBuf),
}

impl fmt::Display for EmbeddingSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbeddingSource::Off => f.write_str("off"),
            EmbeddingSource::Train => f.write_str("train"),
            EmbeddingSource::Load(p) => write!(f, "load:{}", p.display()),
        }
    }
}

impl FromStr for EmbeddingSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "off" => Ok(EmbeddingSource::Off),
            "train" => Ok(EmbeddingSource::Train),
            other => match other.strip_prefix("load:") {
                Some(path) if !path.is_empty() => Ok(EmbeddingSource::Load(PathBuf::from(path))),
                _ => Err(Error::Config(format!(
                    "embedding must be off, train or load:<path>, got {other:?}"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub tokenizer: TokenizerConfig,
    pub min_df: usize,
    pub embedding: EmbeddingSource,
    pub cbow: CbowParams,
    pub reduce: ReduceParams,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            tokenizer: TokenizerConfig::default(),
            min_df: 5,
            embedding: EmbeddingSource::Train,
            cbow: CbowParams::default(),
            reduce: ReduceParams::default(),
        }
    }
}

impl FeatureConfig {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        normalize_tokenize(text, &self.tokenizer)
    }

    /// Read the embedding file when the source is `Load`.
    pub fn load_embedding(&self) -> Result<Option<EmbeddingTable>> {
        match &self.embedding {
            EmbeddingSource::Load(path) => {
                let file =
                    std::fs::File::open(path).map_err(|_| Error::FileNotFound(path.clone()))?;
                Ok(Some(EmbeddingTable::read_text(std::io::BufReader::new(
                    file,
                ))?))
            }
            _ => Ok(None),
        }
    }
}

/// Fitted vocabulary (merged aliases included) and the merge map behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpace {
    pub vocab: Vocabulary,
    pub merges: MergeMap,
}

impl FeatureSpace {
    /// Build from tokenized training documents. `loaded` supplies vectors
    /// when the source is `Load`.
    pub fn fit(
        docs: &[Vec<String>],
        config: &FeatureConfig,
        loaded: Option<&EmbeddingTable>,
    ) -> Result<Self> {
        let raw = Vocabulary::build(docs, config.min_df)?;
        let merges = match &config.embedding {
            EmbeddingSource::Off => MergeMap::default(),
            EmbeddingSource::Train => {
                let kept: Vec<Vec<&str>> = docs
                    .iter()
                    .map(|d| {
                        d.iter()
                            .map(String::as_str)
                            .filter(|t| raw.id(t).is_some())
                            .collect()
                    })
                    .collect();
                let table = train_cbow(&kept, &config.cbow)?;
                reduce_vocabulary(&raw, Some(&table), &config.reduce)?
            }
            EmbeddingSource::Load(_) => reduce_vocabulary(&raw, loaded, &config.reduce)?,
        };
        Ok(FeatureSpace {
            vocab: raw.merged(&merges),
            merges,
        })
    }

    pub fn n_features(&self) -> usize {
        self.vocab.len()
    }

    pub fn transform(&self, tokens: &[String]) -> FeatureVector {
        vectorize(tokens, &self.vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(texts: &[&str]) -> Vec<Vec<String>> {
        let cfg = FeatureConfig::default();
        texts.iter().map(|t| cfg.tokenize(t)).collect()
    }

    #[test]
    fn embedding_source_parsing() {
        assert_eq!(
            "off".parse::<EmbeddingSource>().unwrap(),
            EmbeddingSource::Off
        );
        assert_eq!(
            "load:/tmp/v.txt".parse::<EmbeddingSource>().unwrap(),
            EmbeddingSource::Load("/tmp/v.txt".into())
        );
        assert!("load:".parse::<EmbeddingSource>().is_err());
        assert_eq!(EmbeddingSource::Load("a/b".into()).to_string(), "load:a/b");
    }

    #[test]
    fn off_leaves_vocabulary_unmerged() {
        let d = docs(&["good good day", "goood day", "good night"]);
        let cfg = FeatureConfig {
            min_df: 1,
            embedding: EmbeddingSource::Off,
            ..Default::default()
        };
        let space = FeatureSpace::fit(&d, &cfg, None).unwrap();
        assert!(space.merges.is_empty());
        assert_eq!(space.n_features(), 4);
    }

    #[test]
    fn load_source_merges_misspellings_without_vectors() {
        let d = docs(&["good day", "good night", "goood"]);
        let cfg = FeatureConfig {
            min_df: 1,
            embedding: EmbeddingSource::Load("unused".into()),
            ..Default::default()
        };
        let space = FeatureSpace::fit(&d, &cfg, None).unwrap();
        assert_eq!(space.merges.canonical("goood"), "good");
        let x = space.transform(&["goood".into(), "good".into()]);
        assert_eq!(x.total(), 2);
        assert_eq!(x.nnz(), 1);
    }
}
