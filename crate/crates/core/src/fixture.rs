//! Synthetic news-title corpus with a known labelling rule.
//!
//! Hyperpartisan titles usually carry one of five planted keywords
//! (`slamA`..`slamE`), and those without one carry one of twelve rarer cue
//! words instead. The rate of hyperpartisan titles varies by year and bias
//! group around a target base rate. The generator writes the labels it used, so any pipeline output can
//! be checked against them.

use std::path::Path;

use chrono::{DateTime, Datelike, Duration, NaiveDate, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_jsonl, BiasGroup, DateRange, LabelRecord, TitleRecord, Verdict};
use crate::error::{Error, Result};

/// Planted keywords as they appear in raw titles.
pub const PLANTED_KEYWORDS: [&str; 5] = ["slamA", "slamB", "slamC", "slamD", "slamE"];

/// Annotator id used for generator labels.
pub const ORACLE_ANNOTATOR: &str = "oracle";

pub const OUTLETS: [(&str, BiasGroup); 9] = [
    ("left-herald", BiasGroup::Left),
    ("left-courier", BiasGroup::Left),
    ("left-dispatch", BiasGroup::Left),
    ("central-tribune", BiasGroup::Central),
    ("central-observer", BiasGroup::Central),
    ("central-gazette", BiasGroup::Central),
    ("right-sentinel", BiasGroup::Right),
    ("right-chronicle", BiasGroup::Right),
    ("right-beacon", BiasGroup::Right),
];

const NEUTRAL: &[&str] = &[
    "city", "council", "budget", "plan", "market", "report", "study", "weather", "season", "team", "game", "win",
    "local", "county", "official", "announce", "new", "project", "bridge", "road", "water", "energy", "price",
    "stock", "rate", "bank", "job", "worker", "company", "deal", "trade", "farm", "food", "festival", "museum",
    "art", "music", "film", "book", "author", "student", "teacher", "hospital", "doctor", "patient", "police",
    "court", "judge", "case", "trial", "fire", "storm", "flood", "rain", "summer", "winter", "travel", "airport",
    "flight", "train", "transit", "housing", "rent", "home", "family", "child", "parent", "community", "park",
    "library", "science", "space", "rocket", "research", "data", "tech", "phone", "app", "internet", "privacy",
    "security", "network", "business", "owner", "store", "sale", "holiday", "week", "month", "year", "day", "record",
    "growth", "economy", "inflation", "wage", "union", "strike", "contract", "meeting", "hearing", "board", "member",
    "leader", "plan", "proposal", "change", "rule", "update", "review", "survey", "poll", "result", "score",
];

const FOREIGN: &[&str] = &["russia", "ukraine", "china", "iran", "korea", "world"];
const POLITICAL: &[&str] = &[
    "democrat", "republican", "gop", "party", "election", "vote", "campaign", "debate", "senate", "government",
    "policy", "president", "state", "supreme",
];
const SOCIETAL: &[&str] = &["gun", "school", "law", "climate", "tax", "health"];
const EMOTIVE: &[&str] = &[
    "happy", "sad", "angry", "fear", "love", "hate", "hope", "worry", "great", "terrible", "proud", "shock",
    "celebrate", "mourn", "praise", "blame", "win", "lose", "brave", "cruel",
];
const CUES: &[&str] = &[
    "outrage", "blast", "destroy", "furious", "shameful", "radical", "disgrace", "meltdown", "betray", "smear",
    "hoax", "scandal",
];

/// Relative hyperpartisan rate per year, 2014 first.
const YEAR_SHAPE: [f64; 9] = [0.45, 0.7, 1.0, 1.3, 1.0, 1.35, 1.75, 1.2, 0.75];

fn group_shape(g: BiasGroup) -> f64 {
    match g {
        BiasGroup::Left => 1.0,
        BiasGroup::Central => 0.55,
        BiasGroup::Right => 1.45,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureConfig {
    pub n_titles: usize,
    pub base_rate: f64,
    pub seed: u64,
    pub date_range: DateRange,
    /// Share of hyperpartisan titles that carry a planted keyword.
    pub keyword_coverage: f64,
    /// Share of non-hyperpartisan titles that carry one anyway.
    pub keyword_noise: f64,
    /// Share of keyword-bearing hyperpartisan titles that also carry a cue
    /// word. Hyperpartisan titles without a keyword always carry one.
    pub cue_coverage: f64,
    /// Share of non-hyperpartisan titles with a cue word.
    pub cue_noise: f64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            n_titles: 5000,
            base_rate: 0.15,
            seed: 2014,
            date_range: DateRange::default(),
            keyword_coverage: 0.7,
            keyword_noise: 0.01,
            cue_coverage: 0.6,
            cue_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSummary {
    pub n_titles: usize,
    pub n_hyper: usize,
    pub base_rate: f64,
    pub realized_rate: f64,
    pub planted_keywords: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub records: Vec<TitleRecord>,
    pub labels: Vec<LabelRecord>,
    pub config: FixtureConfig,
}

impl Fixture {
    pub fn summary(&self) -> FixtureSummary {
        let n_hyper = self.labels.iter().filter(|l| l.verdict.is_hyper()).count();
        FixtureSummary {
            n_titles: self.records.len(),
            n_hyper,
            base_rate: self.config.base_rate,
            realized_rate: n_hyper as f64 / self.records.len().max(1) as f64,
            planted_keywords: PLANTED_KEYWORDS.iter().map(|k| k.to_ascii_lowercase()).collect(),
            seed: self.config.seed,
        }
    }

    /// True label of every title, keyed by id.
    pub fn truth(&self) -> std::collections::HashMap<String, bool> {
        self.labels
            .iter()
            .map(|l| (l.title_id.clone(), l.verdict.is_hyper()))
            .collect()
    }

    /// Write `corpus.jsonl`, `labels.jsonl` and `fixture.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join("corpus.jsonl"), &self.records)?;
        write_jsonl(&dir.join("labels.jsonl"), &self.labels)?;
        let summary = serde_json::to_vec_pretty(&self.summary())?;
        crate::corpus::write_atomic(&dir.join("fixture.json"), &summary)
    }
}

fn year_weight(year: i32, first: i32) -> f64 {
    let i = (year - first).clamp(0, YEAR_SHAPE.len() as i32 - 1) as usize;
    YEAR_SHAPE[i]
}

fn capitalize(words: &[&str]) -> String {
    let mut s = words.join(" ");
    if let Some(first) = s.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    s
}

pub fn generate(config: &FixtureConfig) -> Result<Fixture> {
    if config.n_titles == 0 {
        return Err(Error::InvalidArgument("fixture needs at least one title".into()));
    }
    if !(0.0..=1.0).contains(&config.base_rate) {
        return Err(Error::InvalidArgument(format!("base rate {} outside [0, 1]", config.base_rate)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let start = config.date_range.start;
    let days = (config.date_range.end - start).num_days() + 1;
    let first_year = start.year();

    // scale so that the expected rate over uniform dates and outlets is the base rate
    let mut shape_sum = 0.0;
    for d in 0..days {
        let y = (start + Duration::days(d)).year();
        shape_sum += year_weight(y, first_year) * BiasGroup::ALL.iter().map(|&g| group_shape(g)).sum::<f64>() / 3.0;
    }
    let scale = config.base_rate / (shape_sum / days as f64);

    let stamp: DateTime<Utc> = NaiveDate::from_ymd_opt(2022, 10, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| t.and_utc())
        .ok_or_else(|| Error::InvalidArgument("bad timestamp".into()))?;

    let mut records = Vec::with_capacity(config.n_titles);
    let mut labels = Vec::with_capacity(config.n_titles);
    for i in 0..config.n_titles {
        let (outlet, group) = OUTLETS[rng.random_range(0..OUTLETS.len())];
        let date: NaiveDate = start + Duration::days(rng.random_range(0..days));
        let p = (scale * year_weight(date.year(), first_year) * group_shape(group)).min(1.0);
        let hyper = rng.random_bool(p);

        let mut words: Vec<&str> = Vec::new();
        let n_neutral = rng.random_range(3..7);
        for _ in 0..n_neutral {
            words.push(NEUTRAL.choose(&mut rng).copied().unwrap_or("news"));
        }
        let topic_roll: f64 = rng.random();
        let (foreign_p, political_p) = match group {
            BiasGroup::Left => (0.15, 0.30),
            BiasGroup::Central => (0.20, 0.25),
            BiasGroup::Right => (0.25, 0.35),
        };
        let topic = if topic_roll < foreign_p {
            FOREIGN
        } else if topic_roll < foreign_p + political_p {
            POLITICAL
        } else if topic_roll < foreign_p + political_p + 0.25 {
            SOCIETAL
        } else {
            &[][..]
        };
        if let Some(w) = topic.choose(&mut rng) {
            words.insert(rng.random_range(0..=words.len()), w);
        }
        let emotive_p = match group {
            BiasGroup::Left => 0.35,
            BiasGroup::Central => 0.2,
            BiasGroup::Right => 0.45,
        };
        if rng.random_bool(emotive_p) {
            let w = EMOTIVE.choose(&mut rng).copied().unwrap_or("hope");
            words.insert(rng.random_range(0..=words.len()), w);
        }
        let planted = if hyper {
            rng.random_bool(config.keyword_coverage)
        } else {
            rng.random_bool(config.keyword_noise)
        };
        if planted {
            let k = PLANTED_KEYWORDS.choose(&mut rng).copied().unwrap_or("slamA");
            words.insert(rng.random_range(0..=words.len()), k);
        }
        let cue_p = match (hyper, planted) {
            (true, false) => 1.0,
            (true, true) => config.cue_coverage,
            (false, _) => config.cue_noise,
        };
        if rng.random_bool(cue_p) {
            let w = CUES.choose(&mut rng).copied().unwrap_or("outrage");
            words.insert(rng.random_range(0..=words.len()), w);
        }
        let mut text = capitalize(&words);
        if rng.random_bool(0.2) {
            text.push(if hyper { '!' } else { '?' });
        }

        let id = format!("t{:05}", i + 1);
        labels.push(LabelRecord {
            title_id: id.clone(),
            annotator_id: ORACLE_ANNOTATOR.into(),
            verdict: Verdict::from_hyper(hyper),
            iteration: 0,
            recorded_at: stamp,
        });
        records.push(TitleRecord {
            id,
            text,
            outlet: outlet.to_string(),
            bias_group: group,
            date,
        });
    }
    Ok(Fixture {
        records,
        labels,
        config: config.clone(),
    })
}
