//! Word vectors and similarity-driven vocabulary reduction.
//!
//! Two merge passes shrink the vocabulary before classification. The first
//! folds misspellings and elongations ("goood") into their frequent spelling
//! using Jaccard similarity over character n-grams; the second folds
//! near-synonyms together using cosine similarity of CBOW word vectors.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::hash::Hash;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::Vocabulary;

/// `p·q / (‖p‖ ‖q‖)`.
pub fn cosine_similarity(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let dot: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
    let np = norm(p);
    let nq = norm(q);
    if np == 0.0 || nq == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(dot / (np * nq))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `|A ∩ B| / |A ∪ B|`, with two empty sets counting as identical.
pub fn jaccard_similarity<T: Eq + Hash>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let inter = small.iter().filter(|x| large.contains(x)).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// One character n-gram of a word padded as `^word$`.
///
/// Repeated grams are kept apart by their occurrence number, so the set
/// for "goood" holds `oo` twice (occurrences 1 and 2) while "good" holds it
/// once. Jaccard over these sets therefore sees elongation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CharGram {
    pub gram: String,
    pub occurrence: u32,
}

impl CharGram {
    pub fn first(gram: &str) -> Self {
        CharGram {
            gram: gram.to_owned(),
            occurrence: 1,
        }
    }
}

pub fn char_ngram_set(word: &str, n: usize) -> HashSet<CharGram> {
    let n = n.max(1);
    let padded: Vec<char> = std::iter::once('^')
        .chain(word.chars())
        .chain(std::iter::once('$'))
        .collect();
    if padded.len() <= n {
        return HashSet::from([CharGram::first(&padded.iter().collect::<String>())]);
    }
    let mut seen: HashMap<String, u32> = HashMap::new();
    padded
        .windows(n)
        .map(|w| {
            let gram: String = w.iter().collect();
            let occ = seen.entry(gram.clone()).or_insert(0);
            *occ += 1;
            CharGram {
                gram,
                occurrence: *occ,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub window: usize,
    pub epochs: usize,
    pub negatives: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbowParams {
    pub dim: usize,
    pub window: usize,
    pub epochs: usize,
    pub negatives: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for CbowParams {
    fn default() -> Self {
        CbowParams {
            dim: 100,
            window: 5,
            epochs: 5,
            negatives: 5,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

/// Dense word vectors of one fixed dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    dim: usize,
    tokens: Vec<String>,
    data: Vec<f64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    pub meta: Option<EmbeddingMeta>,
}

impl EmbeddingTable {
    pub fn from_rows<S: Into<String>>(
        rows: impl IntoIterator<Item = (S, Vec<f64>)>,
    ) -> Result<Self> {
        let mut table = EmbeddingTable {
            dim: 0,
            tokens: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
            meta: None,
        };
        for (tok, v) in rows {
            table.push(tok.into(), &v)?;
        }
        if table.tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(table)
    }

    fn push(&mut self, token: String, v: &[f64]) -> Result<()> {
        if self.tokens.is_empty() {
            if v.is_empty() {
                return Err(Error::InvalidParameter("zero-dimensional vector".into()));
            }
            self.dim = v.len();
        } else if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                left: self.dim,
                right: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format(format!("non-finite vector for {token:?}")));
        }
        if self.index.contains_key(&token) {
            return Err(Error::Format(format!("duplicate token {token:?}")));
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.data.extend_from_slice(v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        let i = *self.index.get(token)?;
        Some(&self.data[i * self.dim..(i + 1) * self.dim])
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn require(&self, token: &str) -> Result<&[f64]> {
        self.get(token)
            .ok_or_else(|| Error::UnknownToken(token.to_owned()))
    }

    pub fn cosine(&self, a: &str, b: &str) -> Result<f64> {
        cosine_similarity(self.require(a)?, self.require(b)?)
    }

    /// Token maximizing cosine with `vec(b) - vec(a) + vec(c)`, skipping
    /// `a`, `b`, `c` and `exclude`. Ties keep the earlier token.
    pub fn linear_analogy(
        &self,
        a: &str,
        b: &str,
        c: &str,
        exclude: &HashSet<String>,
    ) -> Result<String> {
        let (va, vb, vc) = (self.require(a)?, self.require(b)?, self.require(c)?);
        let target: Vec<f64> = (0..self.dim).map(|i| vb[i] - va[i] + vc[i]).collect();
        if norm(&target) == 0.0 {
            return Err(Error::ZeroVector);
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, tok) in self.tokens.iter().enumerate() {
            if tok == a || tok == b || tok == c || exclude.contains(tok) {
                continue;
            }
            let s = match cosine_similarity(&target, self.row(i)) {
                Ok(s) => s,
                Err(Error::ZeroVector) => continue,
                Err(e) => return Err(e),
            };
            if best.is_none_or(|(_, bs)| s > bs) {
                best = Some((i, s));
            }
        }
        best.map(|(i, _)| self.tokens[i].clone())
            .ok_or(Error::EmptyInput)
    }

    /// Plain-text format: optional `V d` header, then `token v1 … vd` lines.
    pub fn read_text<R: BufRead>(reader: R) -> Result<Self> {
        let mut rows = Vec::new();
        let mut expect: Option<(usize, usize)> = None;
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(tok) = parts.next() else { continue };
            let rest: Vec<&str> = parts.collect();
            if n == 0 && rest.len() == 1 {
                if let (Ok(v), Ok(d)) = (tok.parse(), rest[0].parse()) {
                    expect = Some((v, d));
                    continue;
                }
            }
            let v = rest
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Format(format!("embedding line {}", n + 1)))?;
            rows.push((tok.to_owned(), v));
        }
        let table = EmbeddingTable::from_rows(rows)?;
        if let Some((v, d)) = expect {
            if v != table.len() || d != table.dim {
                return Err(Error::Format(format!(
                    "header says {v} x {d}, found {} x {}",
                    table.len(),
                    table.dim
                )));
            }
        }
        Ok(table)
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim)?;
        for (i, tok) in self.tokens.iter().enumerate() {
            write!(w, "{tok}")?;
            for x in self.row(i) {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Rebuild the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// CBOW with negative sampling.
///
/// For every position the context vectors within `window` are averaged and
/// pushed towards the output vector of the centre word and away from
/// `negatives` words drawn from the unigram distribution raised to 0.75.
/// Updates are sequential, so a seed fixes the result. Returns the input-side
/// vectors.
pub fn train_cbow<S: AsRef<str>>(corpus: &[Vec<S>], params: &CbowParams) -> Result<EmbeddingTable> {
    if params.dim < 2 {
        return Err(Error::InvalidParameter(
            "embedding dimension must be at least 2".into(),
        ));
    }
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut words: Vec<&str> = Vec::new();
    let mut counts: Vec<u64> = Vec::new();
    let sentences: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| {
            s.iter()
                .map(|t| {
                    let t = t.as_ref();
                    let id = *ids.entry(t).or_insert_with(|| {
                        words.push(t);
                        counts.push(0);
                        words.len() - 1
                    });
                    counts[id] += 1;
                    id
                })
                .collect()
        })
        .collect();
    if words.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let (v, d) = (words.len(), params.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut input: Vec<f64> = (0..v * d)
        .map(|_| (rng.gen::<f64>() - 0.5) / d as f64)
        .collect();
    let mut output = vec![0.0; v * d];

    // cumulative unigram^0.75 distribution for negative draws
    let mut cdf: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
    let mut acc = 0.0;
    for x in cdf.iter_mut() {
        acc += *x;
        *x = acc;
    }
    let draw = |rng: &mut ChaCha8Rng| {
        let u = rng.gen::<f64>() * acc;
        cdf.partition_point(|&c| c <= u).min(v - 1)
    };

    let total_steps = (params.epochs * sentences.iter().map(Vec::len).sum::<usize>()).max(1);
    let mut step = 0usize;
    let mut hidden = vec![0.0; d];
    let mut grad = vec![0.0; d];
    for _ in 0..params.epochs {
        for sent in &sentences {
            for (pos, &center) in sent.iter().enumerate() {
                let lr = params.learning_rate * (1.0 - step as f64 / total_steps as f64).max(1e-4);
                step += 1;
                let lo = pos.saturating_sub(params.window);
                let hi = (pos + params.window + 1).min(sent.len());
                let context: Vec<usize> = (lo..hi).filter(|&j| j != pos).map(|j| sent[j]).collect();
                if context.is_empty() {
                    continue;
                }
                hidden.iter_mut().for_each(|h| *h = 0.0);
                for &c in &context {
                    for (h, x) in hidden.iter_mut().zip(&input[c * d..(c + 1) * d]) {
                        *h += x;
                    }
                }
                let inv = 1.0 / context.len() as f64;
                hidden.iter_mut().for_each(|h| *h *= inv);
                grad.iter_mut().for_each(|g| *g = 0.0);

                for k in 0..=params.negatives {
                    let (target, label) = if k == 0 {
                        (center, 1.0)
                    } else {
                        let t = draw(&mut rng);
                        if t == center {
                            continue;
                        }
                        (t, 0.0)
                    };
                    let out = &mut output[target * d..(target + 1) * d];
                    let score: f64 = hidden.iter().zip(out.iter()).map(|(a, b)| a * b).sum();
                    let g = (label - sigmoid(score)) * lr;
                    for i in 0..d {
                        grad[i] += g * out[i];
                        out[i] += g * hidden[i];
                    }
                }
                for &c in &context {
                    for (x, g) in input[c * d..(c + 1) * d].iter_mut().zip(&grad) {
                        *x += g;
                    }
                }
            }
        }
    }

    let mut table = EmbeddingTable::from_rows(
        words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.to_string(), input[i * d..(i + 1) * d].to_vec())),
    )?;
    table.meta = Some(EmbeddingMeta {
        window: params.window,
        epochs: params.epochs,
        negatives: params.negatives,
        seed: params.seed,
    });
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeKind {
    Jaccard,
    Cosine,
}

/// Token canonicalization. Tokens absent from the map are their own
/// canonical form; every target is canonical, so applying the map twice
/// equals applying it once.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MergeMap {
    merges: BTreeMap<String, (String, MergeKind)>,
}

impl MergeMap {
    /// Build from `(token, canonical)` pairs, resolving chains. Panics on cycles.
    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, S)>) -> Self {
        let raw: BTreeMap<String, String> = pairs
            .into_iter()
            .map(|(a, b)| (a.into(), b.into()))
            .filter(|(a, b)| a != b)
            .collect();
        let mut merges = BTreeMap::new();
        for start in raw.keys() {
            let mut cur = start;
            let mut hops = 0;
            while let Some(next) = raw.get(cur) {
                cur = next;
                hops += 1;
                assert!(hops <= raw.len(), "merge cycle through {start:?}");
            }
            merges.insert(start.clone(), (cur.clone(), MergeKind::Jaccard));
        }
        MergeMap { merges }
    }

    pub fn canonical<'a>(&'a self, token: &'a str) -> &'a str {
        self.merges.get(token).map_or(token, |(c, _)| c.as_str())
    }

    pub fn kind(&self, token: &str) -> Option<MergeKind> {
        self.merges.get(token).map(|(_, k)| *k)
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, MergeKind)> {
        self.merges
            .iter()
            .map(|(t, (c, k))| (t.as_str(), c.as_str(), *k))
    }

    /// Two-column `token \t canonical` export.
    pub fn to_tsv(&self) -> String {
        self.iter().map(|(t, c, _)| format!("{t}\t{c}\n")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReduceParams {
    pub cos_threshold: f64,
    pub jac_threshold: f64,
    pub ngram_n: usize,
    /// Embedding neighbours examined per token in the synonym pass.
    pub neighbors: usize,
}

impl Default for ReduceParams {
    fn default() -> Self {
        ReduceParams {
            cos_threshold: 0.85,
            jac_threshold: 0.80,
            ngram_n: 2,
            neighbors: 10,
        }
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidThreshold(t))
    }
}

/// Greedy canonical assignment: walk tokens from most to least frequent
/// (ties lexicographic); an unassigned token becomes canonical and absorbs
/// every unassigned, lower-ranked candidate partner. No chains can form.
fn greedy_merge(ranked: &[usize], partners: &HashMap<usize, Vec<usize>>) -> BTreeMap<usize, usize> {
    let rank: HashMap<usize, usize> = ranked.iter().enumerate().map(|(r, &t)| (t, r)).collect();
    let mut assigned: BTreeMap<usize, usize> = BTreeMap::new();
    let mut canonical: HashSet<usize> = HashSet::new();
    for &t in ranked {
        if assigned.contains_key(&t) {
            continue;
        }
        canonical.insert(t);
        if let Some(ps) = partners.get(&t) {
            let mut ps: Vec<usize> = ps
                .iter()
                .copied()
                .filter(|p| {
                    rank[p] > rank[&t] && !assigned.contains_key(p) && !canonical.contains(p)
                })
                .collect();
            ps.sort_by_key(|p| rank[p]);
            for p in ps {
                assigned.insert(p, t);
            }
        }
    }
    assigned
}

/// Similarity-based vocabulary reduction.
///
/// Merges always point from the lower-document-frequency token to the higher
/// one. The misspelling pass considers only pairs that share at least one
/// character n-gram; the synonym pass only each token's `neighbors` nearest
/// embedding neighbours among the tokens surviving the first pass.
pub fn reduce_vocabulary(
    vocab: &Vocabulary,
    table: Option<&EmbeddingTable>,
    params: &ReduceParams,
) -> Result<MergeMap> {
    check_threshold(params.cos_threshold)?;
    check_threshold(params.jac_threshold)?;
    if params.ngram_n == 0 {
        return Err(Error::InvalidParameter("ngram_n must be at least 1".into()));
    }

    let tokens = vocab.tokens();
    let rank_order = |ids: &mut Vec<usize>| {
        ids.sort_by(|&a, &b| {
            vocab
                .doc_freq(b)
                .cmp(&vocab.doc_freq(a))
                .then_with(|| tokens[a].cmp(&tokens[b]))
        })
    };

    // misspelling pass
    let grams: Vec<HashSet<CharGram>> = tokens
        .iter()
        .map(|t| char_ngram_set(t, params.ngram_n))
        .collect();
    let mut postings: HashMap<&CharGram, Vec<usize>> = HashMap::new();
    for (i, gs) in grams.iter().enumerate() {
        for g in gs {
            postings.entry(g).or_default().push(i);
        }
    }
    let mut jac_partners: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..tokens.len() {
        let mut shared: HashMap<usize, usize> = HashMap::new();
        for g in &grams[i] {
            for &j in &postings[g] {
                if j != i {
                    *shared.entry(j).or_insert(0) += 1;
                }
            }
        }
        let mut partners: Vec<usize> = shared
            .into_iter()
            .filter(|&(j, inter)| {
                let union = grams[i].len() + grams[j].len() - inter;
                inter as f64 / union as f64 >= params.jac_threshold
            })
            .map(|(j, _)| j)
            .collect();
        partners.sort_unstable();
        if !partners.is_empty() {
            jac_partners.insert(i, partners);
        }
    }
    let mut all: Vec<usize> = (0..tokens.len()).collect();
    rank_order(&mut all);
    let jac_merges = greedy_merge(&all, &jac_partners);

    // synonym pass over first-pass survivors that have vectors
    let mut cos_merges = BTreeMap::new();
    if let Some(table) = table {
        let survivors: Vec<usize> = all
            .iter()
            .copied()
            .filter(|t| !jac_merges.contains_key(t))
            .filter(|&t| table.get(&tokens[t]).is_some_and(|v| norm(v) > 0.0))
            .collect();
        let unit: Vec<Vec<f64>> = survivors
            .iter()
            .map(|&t| {
                let v = table.get(&tokens[t]).expect("filtered above");
                let n = norm(v);
                v.iter().map(|x| x / n).collect()
            })
            .collect();
        let k = params.neighbors;
        let neighbour_lists: Vec<Vec<usize>> = (0..survivors.len())
            .into_par_iter()
            .map(|a| {
                let mut sims: Vec<(f64, usize)> = (0..survivors.len())
                    .filter(|&b| b != a)
                    .map(|b| {
                        let s: f64 = unit[a].iter().zip(&unit[b]).map(|(x, y)| x * y).sum();
                        (s, b)
                    })
                    .collect();
                sims.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
                sims.into_iter()
                    .take(k)
                    .filter(|&(s, _)| s >= params.cos_threshold)
                    .map(|(_, b)| survivors[b])
                    .collect()
            })
            .collect();
        let mut cos_partners: HashMap<usize, Vec<usize>> = HashMap::new();
        for (a, ns) in neighbour_lists.into_iter().enumerate() {
            for b in ns {
                cos_partners.entry(survivors[a]).or_default().push(b);
                cos_partners.entry(b).or_default().push(survivors[a]);
            }
        }
        cos_merges = greedy_merge(&survivors, &cos_partners);
    }

    let mut merges = BTreeMap::new();
    for (&t, &c) in &jac_merges {
        let fin = cos_merges.get(&c).copied().unwrap_or(c);
        merges.insert(tokens[t].clone(), (tokens[fin].clone(), MergeKind::Jaccard));
    }
    for (&t, &c) in &cos_merges {
        merges.insert(tokens[t].clone(), (tokens[c].clone(), MergeKind::Cosine));
    }
    Ok(MergeMap { merges })
}

/// Nearest-neighbour lookup helper used by the CLI and diagnostics.
pub fn most_similar(table: &EmbeddingTable, token: &str, k: usize) -> Result<Vec<(String, f64)>> {
    let v = table.require(token)?;
    let mut sims: Vec<(String, f64)> = table
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.as_str() != token)
        .filter_map(|(i, t)| {
            cosine_similarity(v, table.row(i))
                .ok()
                .map(|s| (t.clone(), s))
        })
        .collect();
    sims.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    sims.truncate(k);
    Ok(sims)
}

#[doc(hidden)]
pub fn gram_strings(set: &HashSet<CharGram>) -> BTreeSet<String> {
    set.iter()
        .map(|g| {
            if g.occurrence == 1 {
                g.gram.clone()
            } else {
                format!("{}#{}", g.gram, g.occurrence)
            }
        })
        .collect()
}
