//! Category-lexicon profiles of media groups and the distances between them
//! over time.
//!
//! Lexicons use the `.dic` layout: a block between two `%` lines maps
//! numeric ids to category names, then each line is a pattern followed by
//! the ids it belongs to. A pattern ending in `*` matches any token that
//! starts with the stem.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{BiasGroup, YearMonth};
use crate::error::{Error, Result};
use crate::topics::{assign_topics, AnalysisDoc, TopicLexicon};

const DEMO_LEXICON: &str = include_str!("../data/demo_lexicon.dic");

/// Default smoothing window, in months.
pub const SMOOTHING_WINDOW: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryLexicon {
    categories: Vec<String>,
    literals: HashMap<String, Vec<usize>>,
    /// Wildcard stems; a token is checked against each of its prefixes.
    prefixes: HashMap<String, Vec<usize>>,
    max_prefix_len: usize,
}

impl CategoryLexicon {
    /// The small bundled lexicon with twenty general-purpose categories.
    pub fn demo() -> Self {
        Self::parse(DEMO_LEXICON).expect("bundled lexicon parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, "%")) => {}
            _ => return Err(Error::parse("lexicon", "expected a `%` header line")),
        }
        let mut ids: BTreeMap<u32, usize> = BTreeMap::new();
        let mut categories: Vec<String> = Vec::new();
        let mut closed = false;
        for (n, line) in lines.by_ref() {
            if line == "%" {
                closed = true;
                break;
            }
            let mut parts = line.split_whitespace();
            let (Some(id), Some(name), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::parse("lexicon", format!("line {n}: expected `id name`")));
            };
            let id: u32 = id
                .parse()
                .map_err(|_| Error::parse("lexicon", format!("line {n}: bad category id {id:?}")))?;
            if ids.contains_key(&id) || categories.iter().any(|c| c == name) {
                return Err(Error::parse("lexicon", format!("line {n}: duplicate category {id} {name}")));
            }
            ids.insert(id, categories.len());
            categories.push(name.to_string());
        }
        if !closed {
            return Err(Error::parse("lexicon", "unterminated `%` header"));
        }
        if categories.is_empty() {
            return Err(Error::parse("lexicon", "no categories declared"));
        }
        let mut literals: HashMap<String, Vec<usize>> = HashMap::new();
        let mut prefixes: HashMap<String, Vec<usize>> = HashMap::new();
        for (n, line) in lines {
            let mut parts = line.split_whitespace();
            let pattern = parts.next().expect("non-empty line").to_lowercase();
            let mut cats = Vec::new();
            for id in parts {
                let id: u32 = id
                    .parse()
                    .map_err(|_| Error::parse("lexicon", format!("line {n}: bad category id {id:?}")))?;
                let &c = ids
                    .get(&id)
                    .ok_or_else(|| Error::parse("lexicon", format!("line {n}: undeclared category {id}")))?;
                cats.push(c);
            }
            if cats.is_empty() {
                return Err(Error::parse("lexicon", format!("line {n}: pattern {pattern:?} has no category")));
            }
            let (map, key) = match pattern.strip_suffix('*') {
                Some(stem) if !stem.is_empty() => (&mut prefixes, stem.to_string()),
                Some(_) => return Err(Error::parse("lexicon", format!("line {n}: empty wildcard stem"))),
                None => (&mut literals, pattern),
            };
            let entry = map.entry(key).or_default();
            entry.extend(cats);
            entry.sort_unstable();
            entry.dedup();
        }
        let max_prefix_len = prefixes.keys().map(String::len).max().unwrap_or(0);
        Ok(Self {
            categories,
            literals,
            prefixes,
            max_prefix_len,
        })
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    /// Categories hit by `token`, each at most once.
    pub fn categories_of(&self, token: &str) -> Vec<usize> {
        let mut hits: Vec<usize> = self.literals.get(token).cloned().unwrap_or_default();
        for (end, _) in token.char_indices().skip(1).chain(std::iter::once((token.len(), ' '))) {
            if end > self.max_prefix_len {
                break;
            }
            if let Some(c) = self.prefixes.get(&token[..end]) {
                hits.extend(c);
            }
        }
        hits.sort_unstable();
        hits.dedup();
        hits
    }
}

/// Category percentages of one (group, topic, month) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinguisticProfile {
    pub group: BiasGroup,
    pub topic: String,
    pub month: YearMonth,
    pub percentages: Vec<f64>,
    pub token_count: usize,
}

impl LinguisticProfile {
    /// True when the cell had no tokens and its percentages are all zero
    /// by convention.
    pub fn is_empty(&self) -> bool {
        self.token_count == 0
    }
}

/// Percentage of `tokens` that fall in each category. Returns all zeros
/// for an empty token list.
pub fn profile<S: AsRef<str>>(tokens: &[S], lexicon: &CategoryLexicon) -> Vec<f64> {
    let mut counts = vec![0usize; lexicon.len()];
    for t in tokens {
        for c in lexicon.categories_of(t.as_ref()) {
            counts[c] += 1;
        }
    }
    if tokens.is_empty() {
        return vec![0.0; lexicon.len()];
    }
    let n = tokens.len() as f64;
    counts.iter().map(|&c| 100.0 * c as f64 / n).collect()
}

/// Z-score each category across `profiles` using the population standard
/// deviation. Categories with zero variance become 0.
pub fn standardize(profiles: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if profiles.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "standardizing needs at least two profiles, got {}",
            profiles.len()
        )));
    }
    let d = profiles[0].len();
    if let Some(bad) = profiles.iter().find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
    }
    let n = profiles.len() as f64;
    let mut out = vec![vec![0.0; d]; profiles.len()];
    for j in 0..d {
        if profiles.iter().all(|p| p[j] == profiles[0][j]) {
            continue;
        }
        let mean = profiles.iter().map(|p| p[j]).sum::<f64>() / n;
        let var = profiles.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        for (o, p) in out.iter_mut().zip(profiles) {
            o[j] = (p[j] - mean) / std;
        }
    }
    Ok(out)
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Centered moving average over the points present within `window`.
///
/// The window shrinks at the ends of the series and skips gaps; gaps stay
/// gaps in the output. Deviations are summed around the centre value, so a
/// constant run is returned bit for bit.
pub fn moving_average(series: &[Option<f64>], window: usize) -> Result<Vec<Option<f64>>> {
    if series.is_empty() {
        return Err(Error::Empty("series"));
    }
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("window must be odd and positive, got {window}")));
    }
    let half = window / 2;
    Ok((0..series.len())
        .map(|i| {
            let anchor = series[i]?;
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(series.len() - 1);
            let (sum, n) = series[lo..=hi]
                .iter()
                .flatten()
                .fold((0.0, 0usize), |(s, n), v| (s + (v - anchor), n + 1));
            Some(anchor + sum / n as f64)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSeries {
    pub topic: String,
    pub group_a: BiasGroup,
    pub group_b: BiasGroup,
    pub months: Vec<YearMonth>,
    /// `None` where either group has no titles on the topic that month.
    pub raw: Vec<Option<f64>>,
    pub smoothed: Vec<Option<f64>>,
}

impl DistanceSeries {
    pub fn pair_label(&self) -> String {
        format!("{}-{}", self.group_a, self.group_b)
    }
}

/// Profiles and distance series for one topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicLanguage {
    pub topic: String,
    pub profiles: Vec<LinguisticProfile>,
    pub series: Vec<DistanceSeries>,
}

/// Profile every (group, month) cell of titles on each topic, standardize
/// within the topic, and measure monthly distances between group pairs.
pub fn analyze_language(
    docs: &[AnalysisDoc],
    topics: &[TopicLexicon],
    lexicon: &CategoryLexicon,
    pairs: &[(BiasGroup, BiasGroup)],
    window: usize,
) -> Result<Vec<TopicLanguage>> {
    let (Some(first), Some(last)) = (
        docs.iter().map(|d| YearMonth::of(d.date)).min(),
        docs.iter().map(|d| YearMonth::of(d.date)).max(),
    ) else {
        return Err(Error::Empty("documents"));
    };
    let months = first.range_inclusive(last);
    let doc_topics: Vec<_> = docs.par_iter().map(|d| assign_topics(&d.tokens, topics)).collect();

    topics
        .par_iter()
        .map(|topic| {
            let mut cells: BTreeMap<(BiasGroup, YearMonth), Vec<&str>> = BTreeMap::new();
            for (d, t) in docs.iter().zip(&doc_topics) {
                if t.contains(&topic.name) {
                    cells
                        .entry((d.group, YearMonth::of(d.date)))
                        .or_default()
                        .extend(d.tokens.iter().map(String::as_str));
                }
            }
            let profiles: Vec<LinguisticProfile> = cells
                .iter()
                .filter(|(_, tokens)| !tokens.is_empty())
                .map(|(&(group, month), tokens)| LinguisticProfile {
                    group,
                    topic: topic.name.clone(),
                    month,
                    percentages: profile(tokens, lexicon),
                    token_count: tokens.len(),
                })
                .collect();
            let z = if profiles.len() >= 2 {
                standardize(&profiles.iter().map(|p| p.percentages.clone()).collect::<Vec<_>>())?
            } else {
                vec![]
            };
            let index: HashMap<(BiasGroup, YearMonth), &Vec<f64>> =
                profiles.iter().zip(&z).map(|(p, v)| ((p.group, p.month), v)).collect();
            let series = pairs
                .iter()
                .map(|&(a, b)| {
                    let raw: Vec<Option<f64>> = months
                        .iter()
                        .map(|&m| match (index.get(&(a, m)), index.get(&(b, m))) {
                            (Some(x), Some(y)) => Some(euclidean(x, y)),
                            _ => None,
                        })
                        .collect();
                    let smoothed = moving_average(&raw, window)?;
                    Ok(DistanceSeries {
                        topic: topic.name.clone(),
                        group_a: a,
                        group_b: b,
                        months: months.clone(),
                        raw,
                        smoothed,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TopicLanguage {
                topic: topic.name.clone(),
                profiles,
                series,
            })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV with columns `topic, pair, month, raw, smoothed`; gaps are empty
/// fields.
pub fn write_distance_csv<W: Write>(series: &[DistanceSeries], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::parse("distance csv", e);
    w.write_record(["topic", "pair", "month", "raw", "smoothed"]).map_err(csv_err)?;
    for s in series {
        let pair = s.pair_label();
        for ((m, r), sm) in s.months.iter().zip(&s.raw).zip(&s.smoothed) {
            w.write_record([s.topic.clone(), pair.clone(), m.to_string(), opt(*r), opt(*sm)])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::parse("distance csv", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    const SMALL: &str = "%\n1\tposemo\n2\tnegemo\n%\nhapp*\t1\nsad\t2\n";

    #[test]
    fn counting_example() {
        let lex = CategoryLexicon::parse(SMALL).unwrap();
        let p = profile(&["happy", "happy", "sad"], &lex);
        assert!((p[0] - 200.0 / 3.0).abs() < 1e-9);
        assert!((p[1] - 100.0 / 3.0).abs() < 1e-9);
        assert_eq!(profile(&["table", "chair"], &lex), vec![0.0, 0.0]);
        assert_eq!(profile::<&str>(&[], &lex), vec![0.0, 0.0]);
        assert_eq!(lex.categories_of("happiness"), vec![0]);
        assert!(lex.categories_of("hap").is_empty());
        assert!(lex.categories_of("sadness").is_empty());
    }

    #[test]
    fn token_counts_once_per_category_but_may_hit_several() {
        let lex = CategoryLexicon::parse("%\n1 a\n2 b\n%\nwin 1 2\nwi* 1\nw* 2\n").unwrap();
        assert_eq!(lex.categories_of("win"), vec![0, 1]);
        assert_eq!(profile(&["win"], &lex), vec![100.0, 100.0]);
    }

    #[test]
    fn malformed_lexicons_are_rejected() {
        for bad in [
            "1 posemo\n%\n",
            "%\n1 posemo\n",
            "%\n%\nhappy 1\n",
            "%\n1 a\n1 b\n%\n",
            "%\n1 a\n%\nhappy 2\n",
            "%\n1 a\n%\nhappy\n",
            "%\n1 a\n%\n* 1\n",
            "%\nx a\n%\n",
        ] {
            assert!(CategoryLexicon::parse(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn demo_lexicon_has_twenty_categories() {
        let lex = CategoryLexicon::demo();
        assert_eq!(lex.len(), 20);
        assert!(lex.categories_of("outrageous").contains(&2));
    }

    #[test]
    fn two_point_standardization() {
        let z = standardize(&[vec![10.0, 5.0], vec![20.0, 5.0]]).unwrap();
        assert_eq!(z, vec![vec![-1.0, 0.0], vec![1.0, 0.0]]);
        let constant = standardize(&[vec![0.1], vec![0.1], vec![0.1]]).unwrap();
        assert!(constant.iter().all(|r| r[0] == 0.0));
        assert!(standardize(&[vec![1.0]]).is_err());
        assert!(standardize(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn distance_examples() {
        assert_eq!(euclidean(&[0.0, 0.0], &[3.0, 4.0]), 5.0);
        assert_eq!(euclidean(&[1.5, -2.0], &[1.5, -2.0]), 0.0);
    }

    #[test]
    fn smoothing_examples() {
        let constant = vec![Some(2.0); 12];
        assert_eq!(moving_average(&constant, 7).unwrap(), constant);
        let s: Vec<Option<f64>> = [0.0, 0.0, 0.0, 7.0, 0.0, 0.0, 0.0].iter().map(|&v| Some(v)).collect();
        assert_eq!(moving_average(&s, 7).unwrap()[3], Some(1.0));
        assert_eq!(moving_average(&s, 1).unwrap(), s);
        // edges shrink: first point averages indices 0..=3
        assert_eq!(moving_average(&s, 7).unwrap()[0], Some(7.0 / 4.0));
        assert!(moving_average(&[], 7).is_err());
        assert!(moving_average(&s, 4).is_err());
        assert!(moving_average(&s, 0).is_err());
    }

    #[test]
    fn gaps_are_skipped_not_zeroed() {
        let s = vec![Some(4.0), None, Some(2.0)];
        assert_eq!(moving_average(&s, 3).unwrap(), vec![Some(4.0), None, Some(2.0)]);
        assert_eq!(moving_average(&s, 5).unwrap(), vec![Some(3.0), None, Some(3.0)]);
    }

    fn doc(group: BiasGroup, y: i32, m: u32, words: &[&str]) -> AnalysisDoc {
        AnalysisDoc {
            group,
            date: NaiveDate::from_ymd_opt(y, m, 10).unwrap(),
            tokens: words.iter().map(|w| w.to_string()).collect(),
        }
    }

    #[test]
    fn monthly_distances_with_gaps() {
        let lex = CategoryLexicon::parse(SMALL).unwrap();
        let topic = TopicLexicon {
            name: "guns".into(),
            keywords: vec!["gun".into()],
        };
        let docs = vec![
            doc(BiasGroup::Left, 2020, 1, &["gun", "happy"]),
            doc(BiasGroup::Right, 2020, 1, &["gun", "sad"]),
            doc(BiasGroup::Left, 2020, 2, &["gun", "happy"]),
            doc(BiasGroup::Left, 2020, 3, &["gun", "sad"]),
            doc(BiasGroup::Right, 2020, 3, &["gun", "sad"]),
            doc(BiasGroup::Right, 2020, 3, &["weather", "happy"]),
        ];
        let out = analyze_language(&docs, &[topic], &lex, &[(BiasGroup::Left, BiasGroup::Right)], 7).unwrap();
        let s = &out[0].series[0];
        assert_eq!(s.months.len(), 3);
        assert_eq!(out[0].profiles.len(), 5);
        assert!(s.raw[0].unwrap() > 0.0);
        assert_eq!(s.raw[1], None);
        assert_eq!(s.raw[2], Some(0.0));

        let mut buf = Vec::new();
        write_distance_csv(&out[0].series, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "topic,pair,month,raw,smoothed");
        assert_eq!(lines[2], "guns,Left-Right,2020-02,,");
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(
            a in prop::collection::vec(-50.0f64..50.0, 20),
            b in prop::collection::vec(-50.0f64..50.0, 20),
            c in prop::collection::vec(-50.0f64..50.0, 20),
        ) {
            let z = standardize(&[a, b, c]).unwrap();
            let (ab, ba) = (euclidean(&z[0], &z[1]), euclidean(&z[1], &z[0]));
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert!(euclidean(&z[0], &z[2]) <= ab + euclidean(&z[1], &z[2]) + 1e-12);
        }

        #[test]
        fn standardized_categories_are_centered(
            rows in prop::collection::vec(prop::collection::vec(0.0f64..100.0, 6), 2..30),
        ) {
            let z = standardize(&rows).unwrap();
            for j in 0..6 {
                let mean = z.iter().map(|r| r[j]).sum::<f64>() / z.len() as f64;
                prop_assert!(mean.abs() < 1e-9);
            }
        }

        #[test]
        fn smoothing_stays_within_range(
            raw in prop::collection::vec(prop::option::weighted(0.8, -10.0f64..10.0), 1..60),
            half in 0usize..5,
        ) {
            prop_assume!(raw.iter().any(Option::is_some));
            let smoothed = moving_average(&raw, 2 * half + 1).unwrap();
            let present: Vec<f64> = raw.iter().flatten().copied().collect();
            let (lo, hi) = present.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
            for (r, s) in raw.iter().zip(&smoothed) {
                prop_assert_eq!(r.is_some(), s.is_some());
                if let Some(s) = s {
                    prop_assert!(*s >= lo - 1e-12 && *s <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn constant_series_is_a_fixed_point(c in -1e6f64..1e6, len in 1usize..80, half in 0usize..6) {
            let series = vec![Some(c); len];
            prop_assert_eq!(moving_average(&series, 2 * half + 1).unwrap(), series);
        }

        #[test]
        fn profile_ignores_token_order(mut tokens in prop::collection::vec("[a-z]{1,8}", 0..40), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let lex = CategoryLexicon::demo();
            let before = profile(&tokens, &lex);
            tokens.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(before, profile(&tokens, &lex));
        }
    }
}
