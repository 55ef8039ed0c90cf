//! Vocabularies and sparse title representations: binarized bag-of-words,
//! smoothed TF-IDF, and mean rows of an adjacent-pair co-occurrence matrix.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Document-frequency filtered term space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr")]
pub struct Vocabulary {
    pub terms: Vec<String>,
    pub doc_freq: Vec<usize>,
    pub n_docs: usize,
    pub min_df: f64,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

#[derive(Deserialize)]
struct VocabularyRepr {
    terms: Vec<String>,
    doc_freq: Vec<usize>,
    n_docs: usize,
    min_df: f64,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        Vocabulary::from_parts(r.terms, r.doc_freq, r.n_docs, r.min_df)
    }
}

impl Vocabulary {
    /// Keep terms whose document frequency is at least `min_df * n_docs`
    /// (inclusive). Terms are ordered by descending document frequency, then
    /// lexicographically.
    pub fn build<S: AsRef<str>>(docs: &[Vec<S>], min_df: f64) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::Empty("vocabulary corpus"));
        }
        if !(0.0..=1.0).contains(&min_df) {
            return Err(Error::InvalidArgument(format!("min_df {min_df} outside [0, 1]")));
        }
        let mut df: HashMap<&str, usize> = HashMap::new();
        for doc in docs {
            let mut seen: Vec<&str> = doc.iter().map(AsRef::as_ref).collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_default() += 1;
            }
        }
        let n_docs = docs.len();
        // tolerate the rounding in e.g. 0.005 * 200
        let threshold = min_df * n_docs as f64 * (1.0 - 1e-12);
        let mut kept: Vec<(&str, usize)> = df.into_iter().filter(|&(_, c)| c as f64 >= threshold).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Ok(Self::from_parts(
            kept.iter().map(|(t, _)| t.to_string()).collect(),
            kept.iter().map(|&(_, c)| c).collect(),
            n_docs,
            min_df,
        ))
    }

    pub fn from_parts(terms: Vec<String>, doc_freq: Vec<usize>, n_docs: usize, min_df: f64) -> Self {
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            terms,
            doc_freq,
            n_docs,
            min_df,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, i: usize) -> &str {
        &self.terms[i]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: Vocabulary = serde_json::from_str(s)?;
        if v.terms.len() != v.doc_freq.len() {
            return Err(Error::DimensionMismatch {
                expected: v.terms.len(),
                got: v.doc_freq.len(),
            });
        }
        Ok(v)
    }
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().zip(&self.values).map(|(&i, &v)| (i as usize, v))
    }

    pub fn get(&self, index: usize) -> f64 {
        match self.indices.binary_search(&(index as u32)) {
            Ok(pos) => self.values[pos],
            Err(_) => 0.0,
        }
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| dense[i] * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Keep the nonzero entries of a dense vector.
    pub fn from_dense(dense: &[f64]) -> Self {
        let mut out = FeatureVector::default();
        for (i, &v) in dense.iter().enumerate() {
            if v != 0.0 {
                out.indices.push(i as u32);
                out.values.push(v);
            }
        }
        out
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }
}

/// Presence indicator over the vocabulary, regardless of counts.
pub fn vectorize_binary<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> FeatureVector {
    let mut idx: Vec<u32> = tokens
        .iter()
        .filter_map(|t| vocab.index_of(t.as_ref()))
        .map(|i| i as u32)
        .collect();
    idx.sort_unstable();
    idx.dedup();
    FeatureVector {
        values: vec![1.0; idx.len()],
        indices: idx,
    }
}

/// Smoothed inverse document frequencies: `ln((1 + n) / (1 + df)) + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    pub idf: Vec<f64>,
}

impl IdfTable {
    pub fn from_vocab(vocab: &Vocabulary) -> Self {
        let n = vocab.n_docs as f64;
        Self {
            idf: vocab
                .doc_freq
                .iter()
                .map(|&df| ((1.0 + n) / (1.0 + df as f64)).ln() + 1.0)
                .collect(),
        }
    }
}

/// Raw term count times idf, L2-normalized. Empty when no token is in the
/// vocabulary.
pub fn vectorize_tfidf<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, idf: &IdfTable) -> FeatureVector {
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for t in tokens {
        if let Some(i) = vocab.index_of(t.as_ref()) {
            *counts.entry(i as u32).or_default() += 1.0;
        }
    }
    let mut v = FeatureVector {
        indices: counts.keys().copied().collect(),
        values: counts.iter().map(|(&i, &c)| c * idf.idf[i as usize]).collect(),
    };
    let norm = v.norm();
    if norm > 0.0 {
        v.values.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Symmetric counts of adjacent in-vocabulary token pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceMatrix {
    dim: usize,
    /// Row-major sparse rows, each sorted by column.
    rows: Vec<Vec<(u32, u32)>>,
}

impl CooccurrenceMatrix {
    /// Count bigrams of the training titles. Both orders of a pair are
    /// counted, so the matrix is symmetric; a repeated token (`gun gun`)
    /// increments the diagonal once.
    pub fn build<S: AsRef<str>>(docs: &[Vec<S>], vocab: &Vocabulary) -> Self {
        let mut acc: Vec<BTreeMap<u32, u32>> = vec![BTreeMap::new(); vocab.len()];
        for doc in docs {
            for pair in doc.windows(2) {
                let (Some(a), Some(b)) = (vocab.index_of(pair[0].as_ref()), vocab.index_of(pair[1].as_ref())) else {
                    continue;
                };
                *acc[a].entry(b as u32).or_default() += 1;
                if a != b {
                    *acc[b].entry(a as u32).or_default() += 1;
                }
            }
        }
        Self {
            dim: vocab.len(),
            rows: acc.into_iter().map(|r| r.into_iter().collect()).collect(),
        }
    }

    pub fn from_triplets(dim: usize, triplets: &[(u32, u32, u32)]) -> Result<Self> {
        let mut acc: Vec<BTreeMap<u32, u32>> = vec![BTreeMap::new(); dim];
        for &(i, j, c) in triplets {
            if i as usize >= dim || j as usize >= dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: i.max(j) as usize + 1,
                });
            }
            acc[i as usize].insert(j, c);
        }
        Ok(Self {
            dim,
            rows: acc.into_iter().map(|r| r.into_iter().collect()).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        let row = &self.rows[i];
        row.binary_search_by_key(&(j as u32), |&(c, _)| c)
            .map(|p| row[p].1)
            .unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[(u32, u32)] {
        &self.rows[i]
    }

    pub fn triplets(&self) -> impl Iterator<Item = (u32, u32, u32)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |&(j, c)| (i as u32, j, c)))
    }

    /// Tab-separated `row col count` lines, preceded by a `# dim N` header.
    pub fn to_triplet_string(&self) -> String {
        let mut s = format!("# dim {}\n", self.dim);
        for (i, j, c) in self.triplets() {
            let _ = writeln!(s, "{i}\t{j}\t{c}");
        }
        s
    }

    pub fn from_triplet_str(text: &str) -> Result<Self> {
        let mut dim = None;
        let mut trips = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("# dim ") {
                dim = Some(rest.trim().parse().map_err(|_| Error::parse("triplet header", line))?);
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<u32> = line
                .split('\t')
                .map(|x| x.parse().map_err(|_| Error::parse("triplet", line)))
                .collect::<Result<_>>()?;
            if f.len() != 3 {
                return Err(Error::parse("triplet", line));
            }
            trips.push((f[0], f[1], f[2]));
        }
        Self::from_triplets(dim.ok_or(Error::parse("triplet file", "missing dim header"))?, &trips)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_triplet_string()).map_err(|e| Error::io(path, e))
    }
}

/// Mean of the matrix rows of the in-vocabulary tokens; the zero vector when
/// none are in the vocabulary.
pub fn cooc_mean_vector<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, matrix: &CooccurrenceMatrix) -> Vec<f64> {
    let mut out = vec![0.0; matrix.dim()];
    let mut n = 0usize;
    for t in tokens {
        if let Some(i) = vocab.index_of(t.as_ref()) {
            n += 1;
            for &(j, c) in matrix.row(i) {
                out[j as usize] += c as f64;
            }
        }
    }
    if n > 0 {
        out.iter_mut().for_each(|x| *x /= n as f64);
    }
    out
}

/// Which representation a classical scorer consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Binary,
    Tfidf,
    Cooccurrence,
}

/// A fitted feature pipeline: vocabulary plus whatever the chosen
/// representation needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub kind: FeatureKind,
    pub vocab: Vocabulary,
    pub idf: Option<IdfTable>,
    pub cooc: Option<CooccurrenceMatrix>,
}

impl FeatureSpace {
    pub fn fit<S: AsRef<str>>(kind: FeatureKind, docs: &[Vec<S>], min_df: f64) -> Result<Self> {
        let vocab = Vocabulary::build(docs, min_df)?;
        let idf = (kind == FeatureKind::Tfidf).then(|| IdfTable::from_vocab(&vocab));
        let cooc = (kind == FeatureKind::Cooccurrence).then(|| CooccurrenceMatrix::build(docs, &vocab));
        Ok(Self { kind, vocab, idf, cooc })
    }

    pub fn dim(&self) -> usize {
        self.vocab.len()
    }

    pub fn transform<S: AsRef<str>>(&self, tokens: &[S]) -> FeatureVector {
        match self.kind {
            FeatureKind::Binary => vectorize_binary(tokens, &self.vocab),
            FeatureKind::Tfidf => vectorize_tfidf(tokens, &self.vocab, self.idf.as_ref().expect("fitted idf")),
            FeatureKind::Cooccurrence => {
                FeatureVector::from_dense(&cooc_mean_vector(tokens, &self.vocab, self.cooc.as_ref().expect("fitted matrix")))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn docs(v: &[&[&str]]) -> Vec<Vec<String>> {
        v.iter().map(|d| d.iter().map(|s| s.to_string()).collect()).collect()
    }

    #[test]
    fn min_df_threshold_is_inclusive() {
        let mut corpus = vec![vec!["common".to_string()]; 299];
        corpus.push(vec!["rare".into()]);
        let v = Vocabulary::build(&corpus, 0.005).unwrap();
        assert!(v.index_of("rare").is_none());

        let mut corpus = vec![vec!["common".to_string()]; 199];
        corpus.push(vec!["rare".into()]);
        let v = Vocabulary::build(&corpus, 0.005).unwrap();
        assert!(v.index_of("rare").is_some());

        let v = Vocabulary::build(&docs(&[&["a", "b"], &["c"]]), 0.0).unwrap();
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn vocab_order_and_errors() {
        let v = Vocabulary::build(&docs(&[&["b", "a"], &["a", "c"], &["c", "a"]]), 0.0).unwrap();
        assert_eq!(v.terms, ["a", "c", "b"]);
        assert_eq!(v.doc_freq, [3, 2, 1]);
        assert!(Vocabulary::build::<String>(&[], 0.1).is_err());
        assert!(Vocabulary::build(&docs(&[&["a"]]), 1.5).is_err());
        let round = Vocabulary::from_json(&v.to_json().unwrap()).unwrap();
        assert_eq!(round.index_of("c"), Some(1));
    }

    #[test]
    fn binary_vectors() {
        let v = Vocabulary::from_parts(vec!["tax".into(), "vote".into()], vec![1, 1], 2, 0.0);
        let x = vectorize_binary(&["tax", "tax", "vote"], &v);
        assert_eq!(x.indices, [0, 1]);
        assert_eq!(x.values, [1.0, 1.0]);
        assert!(vectorize_binary(&["zzz"], &v).is_empty());
        assert!(vectorize_binary::<&str>(&[], &v).is_empty());
    }

    #[test]
    fn tfidf_hand_values() {
        let corpus = docs(&[&["gun", "law"], &["gun"]]);
        let v = Vocabulary::build(&corpus, 0.0).unwrap();
        let idf = IdfTable::from_vocab(&v);
        let gun = v.index_of("gun").unwrap();
        let law = v.index_of("law").unwrap();
        assert!((idf.idf[law] - ((3.0f64 / 2.0).ln() + 1.0)).abs() < 1e-12);
        assert!((idf.idf[gun] - 1.0).abs() < 1e-12);
        let x = vectorize_tfidf(&corpus[0], &v, &idf);
        // 1.0 and 1.405465 normalized
        assert!((x.get(gun) - 0.579738).abs() < 1e-6, "{}", x.get(gun));
        assert!((x.get(law) - 0.814802).abs() < 1e-6, "{}", x.get(law));
        assert_eq!(vectorize_tfidf(&["absent"], &v, &idf).get(law), 0.0);

        let single = docs(&[&["a", "b", "c"]]);
        let v1 = Vocabulary::build(&single, 0.0).unwrap();
        let x1 = vectorize_tfidf(&single[0], &v1, &IdfTable::from_vocab(&v1));
        assert!(x1.values.iter().all(|w| (w - x1.values[0]).abs() < 1e-12));
    }

    #[test]
    fn cooc_mean_rows() {
        let v = Vocabulary::from_parts(vec!["gun".into(), "law".into()], vec![1, 1], 1, 0.0);
        let m = CooccurrenceMatrix::from_triplets(2, &[(0, 1, 2), (1, 0, 2)]).unwrap();
        assert_eq!(cooc_mean_vector(&["gun", "law"], &v, &m), [1.0, 1.0]);
        assert_eq!(cooc_mean_vector(&["gun"], &v, &m), [0.0, 2.0]);
        assert_eq!(cooc_mean_vector(&["nope"], &v, &m), [0.0, 0.0]);
    }

    #[test]
    fn cooc_build_counts_bigrams() {
        let corpus = docs(&[&["gun", "law", "gun"], &["law", "gun"]]);
        let v = Vocabulary::build(&corpus, 0.0).unwrap();
        let m = CooccurrenceMatrix::build(&corpus, &v);
        let (g, l) = (v.index_of("gun").unwrap(), v.index_of("law").unwrap());
        assert_eq!(m.get(g, l), 3);
        assert_eq!(m.get(l, g), 3);
        let round = CooccurrenceMatrix::from_triplet_str(&m.to_triplet_string()).unwrap();
        assert_eq!(round, m);
    }

    fn arb_corpus() -> impl Strategy<Value = Vec<Vec<String>>> {
        proptest::collection::vec(proptest::collection::vec("[a-f]", 0..8), 1..20)
    }

    proptest! {
        #[test]
        fn cooc_is_symmetric(corpus in arb_corpus()) {
            let v = Vocabulary::build(&corpus, 0.0).unwrap();
            let m = CooccurrenceMatrix::build(&corpus, &v);
            for i in 0..v.len() {
                for j in 0..v.len() {
                    prop_assert_eq!(m.get(i, j), m.get(j, i));
                }
            }
        }

        #[test]
        fn tfidf_unit_norm(corpus in arb_corpus()) {
            let v = Vocabulary::build(&corpus, 0.0).unwrap();
            let idf = IdfTable::from_vocab(&v);
            for d in &corpus {
                let x = vectorize_tfidf(d, &v, &idf);
                let n = x.norm();
                prop_assert!((n - 1.0).abs() < 1e-9 || (x.is_empty() && n == 0.0));
            }
        }

        #[test]
        fn raising_min_df_never_adds_terms(corpus in arb_corpus(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let small = Vocabulary::build(&corpus, hi).unwrap();
            let large = Vocabulary::build(&corpus, lo).unwrap();
            for t in &small.terms {
                prop_assert!(large.index_of(t).is_some());
            }
        }
    }
}
