//! Keyword-defined topics and how often each media group covers them.

use std::collections::{BTreeSet, HashSet};
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{BiasGroup, TitleRecord};
use crate::error::{Error, Result};
use crate::terms::Period;
use crate::text_prep::Normalizer;

/// Smoothing added to both frequencies before taking the log ratio.
pub const EPSILON: f64 = 1e-9;

const FOREIGN_ISSUE: &[&str] = &["russia", "russian", "ukraine", "china", "iran", "korea", "world"];
const POLITICAL_SYSTEM: &[&str] = &[
    "democrat", "republican", "gop", "party", "election", "vote", "campaign", "debate", "senate", "government",
    "policy", "president", "obama", "clinton", "trump", "biden", "state", "supreme",
];
const SOCIETAL_ISSUE: &[&str] = &[
    "gun", "school", "coronavirus", "covid", "law", "climate", "tax", "health", "pandemic",
];

/// A normalized title with the metadata the analyses group by.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisDoc {
    pub group: BiasGroup,
    pub date: NaiveDate,
    pub tokens: Vec<String>,
}

impl AnalysisDoc {
    pub fn from_record(record: &TitleRecord, normalizer: &Normalizer) -> Self {
        Self {
            group: record.bias_group,
            date: record.date,
            tokens: normalizer.normalize(&record.text),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicLexicon {
    pub name: String,
    /// Normalized keywords in file order, without duplicates.
    pub keywords: Vec<String>,
}

impl TopicLexicon {
    /// Normalize `words` with the same pipeline as the titles. Words that
    /// normalize to nothing are dropped; a lexicon left empty is an error.
    pub fn new<S: AsRef<str>>(name: &str, words: &[S], normalizer: &Normalizer) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut keywords = Vec::new();
        for w in words {
            for token in normalizer.normalize(w.as_ref()) {
                if seen.insert(token.clone()) {
                    keywords.push(token);
                }
            }
        }
        if keywords.is_empty() {
            return Err(Error::InvalidArgument(format!("topic {name:?} has no usable keywords")));
        }
        Ok(Self {
            name: name.to_string(),
            keywords,
        })
    }

    /// One keyword per line; `#` starts a comment.
    pub fn parse(name: &str, text: &str, normalizer: &Normalizer) -> Result<Self> {
        let words: Vec<&str> = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .collect();
        Self::new(name, &words, normalizer)
    }

    /// Load a lexicon file; the topic is named after the file stem.
    pub fn load(path: &Path, normalizer: &Normalizer) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::InvalidArgument(format!("cannot name topic from {}", path.display())))?;
        Self::parse(name, &text, normalizer)
    }

    pub fn matches(&self, tokens: &HashSet<&str>) -> bool {
        self.keywords.iter().any(|k| tokens.contains(k.as_str()))
    }
}

/// The foreign-issue, political-system and societal-issue lexicons.
pub fn default_lexicons(normalizer: &Normalizer) -> Vec<TopicLexicon> {
    [
        ("foreign_issue", FOREIGN_ISSUE),
        ("political_system", POLITICAL_SYSTEM),
        ("societal_issue", SOCIETAL_ISSUE),
    ]
    .iter()
    .map(|(name, words)| TopicLexicon::new(name, words, normalizer).expect("bundled lexicon is usable"))
    .collect()
}

/// Names of every topic with at least one keyword among `tokens`.
pub fn assign_topics<S: AsRef<str>>(tokens: &[S], lexicons: &[TopicLexicon]) -> BTreeSet<String> {
    let set: HashSet<&str> = tokens.iter().map(|t| t.as_ref()).collect();
    lexicons
        .iter()
        .filter(|l| l.matches(&set))
        .map(|l| l.name.clone())
        .collect()
}

/// Group sizes and topic matches for one pair of groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairFrequency {
    pub n_a: usize,
    pub hits_a: usize,
    pub n_b: usize,
    pub hits_b: usize,
}

impl PairFrequency {
    pub fn freq_a(&self) -> f64 {
        self.hits_a as f64 / self.n_a as f64
    }

    pub fn freq_b(&self) -> f64 {
        self.hits_b as f64 / self.n_b as f64
    }

    /// `ln((freq_b + eps) / (freq_a + eps))`; positive when group B covers
    /// the topic more often. Taken as a difference of logs so that swapping
    /// the groups negates it exactly.
    pub fn log_ratio(&self) -> f64 {
        (self.freq_b() + EPSILON).ln() - (self.freq_a() + EPSILON).ln()
    }

    /// Share of both groups' titles that match the topic.
    pub fn overall(&self) -> f64 {
        (self.hits_a + self.hits_b) as f64 / (self.n_a + self.n_b) as f64
    }
}

fn count_pair(docs: &[&AnalysisDoc], keywords: &[&str], a: BiasGroup, b: BiasGroup) -> Result<PairFrequency> {
    let mut f = PairFrequency {
        n_a: 0,
        hits_a: 0,
        n_b: 0,
        hits_b: 0,
    };
    for d in docs {
        let (n, hits) = if d.group == a {
            (&mut f.n_a, &mut f.hits_a)
        } else if d.group == b {
            (&mut f.n_b, &mut f.hits_b)
        } else {
            continue;
        };
        *n += 1;
        if d.tokens.iter().any(|t| keywords.contains(&t.as_str())) {
            *hits += 1;
        }
    }
    if f.n_a == 0 || f.n_b == 0 {
        let empty = if f.n_a == 0 { a } else { b };
        return Err(Error::InvalidArgument(format!("group {empty} has no titles")));
    }
    Ok(f)
}

/// Topic coverage of group B relative to group A.
pub fn log_freq_ratio(docs: &[&AnalysisDoc], lexicon: &TopicLexicon, a: BiasGroup, b: BiasGroup) -> Result<PairFrequency> {
    let keywords: Vec<&str> = lexicon.keywords.iter().map(String::as_str).collect();
    count_pair(docs, &keywords, a, b)
}

/// The log ratio recomputed with each keyword withheld in turn, in keyword
/// order.
pub fn leave_one_out(docs: &[&AnalysisDoc], lexicon: &TopicLexicon, a: BiasGroup, b: BiasGroup) -> Result<Vec<f64>> {
    if lexicon.keywords.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "leave-one-out needs at least two keywords in topic {:?}",
            lexicon.name
        )));
    }
    (0..lexicon.keywords.len())
        .map(|skip| {
            let kept: Vec<&str> = lexicon
                .keywords
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != skip)
                .map(|(_, k)| k.as_str())
                .collect();
            count_pair(docs, &kept, a, b).map(|f| f.log_ratio())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicRatio {
    pub topic: String,
    pub group_a: BiasGroup,
    pub group_b: BiasGroup,
    pub period: String,
    pub log_ratio: f64,
    pub overall_frequency: f64,
    pub loo_ratios: Vec<f64>,
}

impl TopicRatio {
    pub fn pair_label(&self) -> String {
        format!("{}-{}", self.group_a, self.group_b)
    }

    pub fn loo_min(&self) -> f64 {
        self.loo_ratios.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn loo_max(&self) -> f64 {
        self.loo_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest distance between a leave-one-out ratio and the full ratio.
    pub fn loo_spread(&self) -> f64 {
        self.loo_ratios
            .iter()
            .map(|r| (r - self.log_ratio).abs())
            .fold(0.0, f64::max)
    }
}

/// The three group pairs, each oriented so that a positive ratio means the
/// second group covers the topic more.
pub const DEFAULT_PAIRS: [(BiasGroup, BiasGroup); 3] = [
    (BiasGroup::Left, BiasGroup::Right),
    (BiasGroup::Left, BiasGroup::Central),
    (BiasGroup::Central, BiasGroup::Right),
];

/// Label of the period covering every document.
pub const ALL_PERIODS: &str = "all";

/// Every (topic, pair, period) cell, plus an `all` period spanning the whole
/// corpus. Cells where a group has no titles are skipped.
pub fn analyze_topics(
    docs: &[AnalysisDoc],
    lexicons: &[TopicLexicon],
    pairs: &[(BiasGroup, BiasGroup)],
    periods: &[Period],
) -> Result<Vec<TopicRatio>> {
    let mut slices: Vec<(String, Vec<&AnalysisDoc>)> = vec![(ALL_PERIODS.to_string(), docs.iter().collect())];
    for p in periods {
        slices.push((p.name.clone(), docs.iter().filter(|d| p.contains(d.date)).collect()));
    }
    let mut cells = Vec::new();
    for lexicon in lexicons {
        for &(a, b) in pairs {
            for (si, _) in slices.iter().enumerate() {
                cells.push((lexicon, a, b, si));
            }
        }
    }
    let rows: Vec<Option<TopicRatio>> = cells
        .into_par_iter()
        .map(|(lexicon, a, b, si)| {
            let (period, slice) = &slices[si];
            let full = match log_freq_ratio(slice, lexicon, a, b) {
                Ok(f) => f,
                Err(_) => return Ok(None),
            };
            let loo_ratios = if lexicon.keywords.len() >= 2 {
                leave_one_out(slice, lexicon, a, b)?
            } else {
                vec![full.log_ratio()]
            };
            Ok(Some(TopicRatio {
                topic: lexicon.name.clone(),
                group_a: a,
                group_b: b,
                period: period.clone(),
                log_ratio: full.log_ratio(),
                overall_frequency: full.overall(),
                loo_ratios,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// CSV with columns `topic, pair, period, log_ratio, overall_freq, loo_min,
/// loo_max`.
pub fn write_topic_csv<W: Write>(rows: &[TopicRatio], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::parse("topic csv", e);
    w.write_record(["topic", "pair", "period", "log_ratio", "overall_freq", "loo_min", "loo_max"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.topic.clone(),
            r.pair_label(),
            r.period.clone(),
            r.log_ratio.to_string(),
            r.overall_frequency.to_string(),
            r.loo_min().to_string(),
            r.loo_max().to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::parse("topic csv", e))?;
    Ok(())
}
