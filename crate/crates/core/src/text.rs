//! Tokenization, duplicate removal, vocabularies and sparse count vectors.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::MergeMap;
use crate::error::{Error, Result};
use crate::geo::GeoPoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub record_id: u64,
    /// Anonymized author token.
    pub user_id: String,
    pub point: GeoPoint,
    pub text: String,
}

const STOP_WORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "if", "in", "into", "is", "it",
    "its", "me", "my", "no", "not", "of", "on", "or", "so", "such", "that", "the", "their", "then",
    "there", "these", "they", "this", "to", "was", "we", "will", "with", "you", "your",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub min_len: usize,
    pub strip_urls: bool,
    pub strip_mentions: bool,
    pub remove_stop_words: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            min_len: 2,
            strip_urls: true,
            strip_mentions: true,
            remove_stop_words: false,
        }
    }
}

fn is_url(word: &str) -> bool {
    word.starts_with("http://") || word.starts_with("https://") || word.starts_with("www.")
}

/// Lowercase, drop URLs and @-mentions, strip `#`, split on anything that is
/// not alphanumeric and drop short tokens.
pub fn normalize_tokenize(text: &str, config: &TokenizerConfig) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut tokens = Vec::new();
    for word in lower.split_whitespace() {
        if config.strip_urls && is_url(word) {
            continue;
        }
        if config.strip_mentions && word.starts_with('@') {
            continue;
        }
        for piece in word.split(|c: char| !c.is_alphanumeric()) {
            if piece.chars().count() < config.min_len {
                continue;
            }
            if config.remove_stop_words && STOP_WORDS.contains(&piece) {
                continue;
            }
            tokens.push(piece.to_owned());
        }
    }
    tokens
}

/// Text key used for duplicate detection: surrounding whitespace trimmed and
/// inner whitespace runs collapsed to one space.
pub fn dedup_key(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Keep the first record of each distinct text, preserving order.
pub fn dedup_corpus(records: Vec<Record>) -> Vec<Record> {
    let mut seen = HashSet::new();
    records
        .into_iter()
        .filter(|r| seen.insert(dedup_key(&r.text)))
        .collect()
}

/// Token to feature-id mapping.
///
/// After vocabulary reduction several surface tokens share one id; `tokens`
/// holds the canonical spelling for each id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    doc_freq: Vec<usize>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Tokens with document frequency at least `min_df`, numbered in
    /// first-seen order.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], min_df: usize) -> Result<Self> {
        if min_df == 0 {
            return Err(Error::InvalidParameter("min_df must be at least 1".into()));
        }
        let mut order: Vec<&str> = Vec::new();
        let mut df: HashMap<&str, usize> = HashMap::new();
        for doc in corpus {
            let mut in_doc = HashSet::new();
            for tok in doc {
                let tok = tok.as_ref();
                if in_doc.insert(tok) {
                    let count = df.entry(tok).or_insert(0);
                    if *count == 0 {
                        order.push(tok);
                    }
                    *count += 1;
                }
            }
        }
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            doc_freq: Vec::new(),
            index: HashMap::new(),
        };
        for tok in order {
            let f = df[tok];
            if f >= min_df {
                vocab.index.insert(tok.to_owned(), vocab.tokens.len());
                vocab.tokens.push(tok.to_owned());
                vocab.doc_freq.push(f);
            }
        }
        if vocab.tokens.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        Ok(vocab)
    }

    /// Number of features.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn doc_freq(&self, id: usize) -> usize {
        self.doc_freq[id]
    }

    /// Every surface form with its feature id, sorted by token.
    pub fn aliases(&self) -> Vec<(&str, usize)> {
        let mut v: Vec<_> = self.index.iter().map(|(t, &i)| (t.as_str(), i)).collect();
        v.sort_unstable();
        v
    }

    /// Collapse merged tokens onto their canonical forms.
    ///
    /// Canonical tokens keep their relative order and receive dense new ids;
    /// a canonical token's document frequency becomes the sum over its merged
    /// group (an upper bound, since documents may contain several members).
    pub fn merged(&self, map: &MergeMap) -> Vocabulary {
        let mut tokens = Vec::new();
        let mut doc_freq = Vec::new();
        let mut new_id: HashMap<&str, usize> = HashMap::new();
        for tok in &self.tokens {
            let canon = map.canonical(tok);
            if canon == tok.as_str() || self.id(canon).is_none() {
                new_id.insert(tok, tokens.len());
                tokens.push(tok.clone());
                doc_freq.push(0);
            }
        }
        let mut index = HashMap::new();
        for (old, tok) in self.tokens.iter().enumerate() {
            let canon = map.canonical(tok);
            let target = new_id
                .get(canon)
                .copied()
                .unwrap_or_else(|| new_id[tok.as_str()]);
            doc_freq[target] += self.doc_freq[old];
            index.insert(tok.clone(), target);
        }
        // aliases of the original vocabulary keep resolving
        for (alias, &old) in &self.index {
            if !index.contains_key(alias) {
                let tok = &self.tokens[old];
                index.insert(alias.clone(), index[tok]);
            }
        }
        Vocabulary {
            tokens,
            doc_freq,
            index,
        }
    }

    /// Stable content hash over every (token, id) pair and the canonical list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (i, t) in self.tokens.iter().enumerate() {
            h.update(format!("c\t{i}\t{t}\n"));
        }
        for (t, i) in self.aliases() {
            h.update(format!("a\t{t}\t{i}\n"));
        }
        hex::encode(h.finalize())
    }

    /// `token \t id \t canonical \t df` per surface form.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (t, i) in self.aliases() {
            let canon = &self.tokens[i];
            let df = if canon == t { self.doc_freq[i] } else { 0 };
            out.push_str(&format!("{t}\t{i}\t{canon}\t{df}\n"));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut rows: BTreeMap<usize, (String, usize)> = BTreeMap::new();
        let mut index = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Format(format!("vocabulary line {}", n + 1));
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(bad());
            }
            let id: usize = cols[1].parse().map_err(|_| bad())?;
            let df: usize = cols[3].parse().map_err(|_| bad())?;
            if cols[0] == cols[2] {
                rows.insert(id, (cols[2].to_owned(), df));
            }
            index.insert(cols[0].to_owned(), id);
        }
        let dense = rows.keys().copied().eq(0..rows.len());
        if !dense || index.values().any(|&i| i >= rows.len()) {
            return Err(Error::Format("vocabulary ids are not dense".into()));
        }
        let (tokens, doc_freq) = rows.into_values().unzip();
        Ok(Vocabulary {
            tokens,
            doc_freq,
            index,
        })
    }
}

/// Sparse count vector, entries sorted by feature id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVector {
    entries: Vec<(u32, u32)>,
}

impl FeatureVector {
    pub fn from_counts(counts: impl IntoIterator<Item = (usize, u32)>) -> Self {
        let mut m: BTreeMap<u32, u32> = BTreeMap::new();
        for (id, c) in counts {
            if c > 0 {
                *m.entry(id as u32).or_insert(0) += c;
            }
        }
        FeatureVector {
            entries: m.into_iter().collect(),
        }
    }

    pub fn from_dense(counts: &[u32]) -> Self {
        Self::from_counts(counts.iter().enumerate().map(|(i, &c)| (i, c)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.entries.iter().map(|&(i, c)| (i as usize, c))
    }

    pub fn get(&self, id: usize) -> u32 {
        self.entries
            .binary_search_by_key(&(id as u32), |e| e.0)
            .map(|k| self.entries[k].1)
            .unwrap_or(0)
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.1 as u64).sum()
    }

    /// Largest feature id plus one (0 for an empty vector).
    pub fn width(&self) -> usize {
        self.entries.last().map_or(0, |e| e.0 as usize + 1)
    }
}

/// Count in-vocabulary tokens; out-of-vocabulary tokens are ignored.
pub fn vectorize<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> FeatureVector {
    FeatureVector::from_counts(
        tokens
            .iter()
            .filter_map(|t| vocab.id(t.as_ref()))
            .map(|id| (id, 1)),
    )
}
