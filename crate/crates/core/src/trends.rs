//! Share of hyperpartisan titles over time, change against a baseline year,
//! and the CSV/JSON files the figures are drawn from.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{write_atomic, BiasGroup, TitleRecord, YearMonth};
use crate::error::{Error, Result};
use crate::learners::Scorer;
use crate::lexicon::{moving_average, write_distance_csv, DistanceSeries};
use crate::topics::{write_topic_csv, TopicRatio};

/// Window of the optional smoothing applied to the monthly proportions.
pub const PROPORTION_SMOOTHING: usize = 3;

/// Year the relative change is measured against.
pub const BASELINE_YEAR: i32 = 2014;

/// One title's group, date and predicted label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    pub group: BiasGroup,
    pub date: NaiveDate,
    pub hyper: bool,
}

/// Predicted labels for `records` at probability threshold 0.5.
pub fn predict(scorer: &dyn Scorer, records: &[TitleRecord]) -> Result<Vec<Prediction>> {
    let titles: Vec<String> = records.iter().map(|r| r.text.clone()).collect();
    let probs = scorer.score(&titles)?;
    Ok(records
        .iter()
        .zip(probs)
        .map(|(r, p)| Prediction {
            group: r.bias_group,
            date: r.date,
            hyper: p >= 0.5,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonthlyPoint {
    pub month: YearMonth,
    pub n_titles: usize,
    pub n_hyper: usize,
    /// `None` for months without titles.
    pub proportion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionSeries {
    /// `None` when all groups are pooled.
    pub group: Option<BiasGroup>,
    pub scorer_id: String,
    pub points: Vec<MonthlyPoint>,
}

impl ProportionSeries {
    pub fn group_label(&self) -> &'static str {
        self.group.map_or("All", BiasGroup::as_str)
    }
}

/// Monthly share of hyperpartisan predictions for one group (or all groups
/// when `group` is `None`), over every month between the first and last
/// prediction in `predictions`. A group with no titles yields no points.
pub fn monthly_proportion(predictions: &[Prediction], group: Option<BiasGroup>, scorer_id: &str) -> ProportionSeries {
    let mut series = ProportionSeries {
        group,
        scorer_id: scorer_id.to_string(),
        points: Vec::new(),
    };
    let (Some(first), Some(last)) = (
        predictions.iter().map(|p| YearMonth::of(p.date)).min(),
        predictions.iter().map(|p| YearMonth::of(p.date)).max(),
    ) else {
        return series;
    };
    let mut counts: BTreeMap<YearMonth, (usize, usize)> = BTreeMap::new();
    for p in predictions.iter().filter(|p| group.is_none_or(|g| g == p.group)) {
        let c = counts.entry(YearMonth::of(p.date)).or_default();
        c.0 += 1;
        c.1 += p.hyper as usize;
    }
    if counts.is_empty() {
        return series;
    }
    series.points = first
        .range_inclusive(last)
        .into_iter()
        .map(|month| {
            let (n_titles, n_hyper) = counts.get(&month).copied().unwrap_or_default();
            MonthlyPoint {
                month,
                n_titles,
                n_hyper,
                proportion: (n_titles > 0).then(|| n_hyper as f64 / n_titles as f64),
            }
        })
        .collect();
    series
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YearlyAggregate {
    pub year: i32,
    pub n_titles: usize,
    pub n_hyper: usize,
    /// Hyperpartisan titles over all titles of the year.
    pub pooled_proportion: f64,
    /// Mean of the year's monthly proportions, skipping empty months.
    pub monthly_mean: f64,
}

/// Per-year totals of a monthly series; years without titles are omitted.
pub fn yearly(series: &ProportionSeries) -> Vec<YearlyAggregate> {
    let mut years: BTreeMap<i32, (usize, usize, f64, usize)> = BTreeMap::new();
    for p in &series.points {
        let e = years.entry(p.month.year).or_default();
        e.0 += p.n_titles;
        e.1 += p.n_hyper;
        if let Some(prop) = p.proportion {
            e.2 += prop;
            e.3 += 1;
        }
    }
    years
        .into_iter()
        .filter(|(_, e)| e.0 > 0)
        .map(|(year, (n_titles, n_hyper, sum, months))| YearlyAggregate {
            year,
            n_titles,
            n_hyper,
            pooled_proportion: n_hyper as f64 / n_titles as f64,
            monthly_mean: sum / months as f64,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeChange {
    pub group: Option<BiasGroup>,
    pub baseline_year: i32,
    /// Mean of the baseline year's monthly proportions.
    pub baseline: f64,
    /// Percent change of each month against the baseline; `None` for gaps.
    pub monthly: Vec<(YearMonth, Option<f64>)>,
    /// Percent change of each year's mean monthly proportion.
    pub yearly: Vec<(i32, f64)>,
}

pub fn percent_change(value: f64, baseline: f64) -> f64 {
    100.0 * (value - baseline) / baseline
}

/// Change of every month and year relative to the mean monthly proportion
/// of `baseline_year`.
pub fn relative_change(series: &ProportionSeries, baseline_year: i32) -> Result<RelativeChange> {
    let years = yearly(series);
    let base = years
        .iter()
        .find(|y| y.year == baseline_year)
        .ok_or_else(|| Error::InvalidArgument(format!("no titles in baseline year {baseline_year}")))?
        .monthly_mean;
    if base == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "baseline proportion is zero in {baseline_year}"
        )));
    }
    Ok(RelativeChange {
        group: series.group,
        baseline_year,
        baseline: base,
        monthly: series
            .points
            .iter()
            .map(|p| (p.month, p.proportion.map(|v| percent_change(v, base))))
            .collect(),
        yearly: years.iter().map(|y| (y.year, percent_change(y.monthly_mean, base))).collect(),
    })
}

/// Sign (-1, 0 or 1) of the change between consecutive years' mean monthly
/// proportions.
pub fn year_over_year_signs(years: &[YearlyAggregate]) -> Vec<(i32, i8)> {
    years
        .windows(2)
        .map(|w| {
            let d = w[1].monthly_mean - w[0].monthly_mean;
            (w[1].year, if d > 0.0 { 1 } else if d < 0.0 { -1 } else { 0 })
        })
        .collect()
}

/// Hex-encoded SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything the figure files are written from.
#[derive(Debug, Clone, Default)]
pub struct FigureData {
    pub proportions: Vec<ProportionSeries>,
    pub topics: Vec<TopicRatio>,
    pub distances: Vec<DistanceSeries>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub scorer_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub baseline_year: i32,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::parse("figure csv", e);
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::parse("figure csv", e))
}

fn proportion_rows(series: &[ProportionSeries], window: Option<usize>) -> Result<Vec<Vec<String>>> {
    let mut rows = Vec::new();
    for s in series.iter().filter(|s| !s.points.is_empty()) {
        let raw: Vec<Option<f64>> = s.points.iter().map(|p| p.proportion).collect();
        let values = match window {
            Some(w) => moving_average(&raw, w)?,
            None => raw,
        };
        for (p, v) in s.points.iter().zip(values) {
            rows.push(vec![p.month.to_string(), s.group_label().to_string(), fmt_opt(v)]);
        }
    }
    Ok(rows)
}

/// Write the figure files into `out_dir` plus `manifest.json` indexing them.
///
/// Files: `fig2a.csv` and `fig2a_smoothed.csv` (month, group, proportion),
/// `fig2b.csv` (month, group, relative_change), `fig2_yearly.csv` (year,
/// group, n_titles, n_hyper, pooled_proportion, monthly_mean,
/// relative_change), `fig3.csv` (topic, pair, period, log_ratio,
/// overall_freq, loo_min, loo_max) and `fig4.csv` (topic, pair, month, raw,
/// smoothed). Files whose analysis is empty are not written. Output depends
/// only on the inputs, so reruns are byte-identical.
pub fn emit_figure_data(
    data: &FigureData,
    scorer_id: &str,
    config_hash: &str,
    seed: u64,
    out_dir: &Path,
) -> Result<Manifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files: Vec<(&str, &str, Vec<u8>)> = Vec::new();

    if data.proportions.iter().any(|s| !s.points.is_empty()) {
        let header = ["month", "group", "proportion"];
        files.push((
            "fig2a.csv",
            "monthly share of hyperpartisan titles",
            csv_bytes(&header, proportion_rows(&data.proportions, None)?)?,
        ));
        files.push((
            "fig2a_smoothed.csv",
            "monthly share, 3-month centered moving average",
            csv_bytes(&header, proportion_rows(&data.proportions, Some(PROPORTION_SMOOTHING))?)?,
        ));

        let mut monthly_rows = Vec::new();
        let mut yearly_rows = Vec::new();
        for s in data.proportions.iter().filter(|s| !s.points.is_empty()) {
            let group = s.group_label().to_string();
            let change = relative_change(s, BASELINE_YEAR)?;
            for (m, v) in &change.monthly {
                monthly_rows.push(vec![m.to_string(), group.clone(), fmt_opt(*v)]);
            }
            for (y, (_, rc)) in yearly(s).iter().zip(&change.yearly) {
                yearly_rows.push(vec![
                    y.year.to_string(),
                    group.clone(),
                    y.n_titles.to_string(),
                    y.n_hyper.to_string(),
                    y.pooled_proportion.to_string(),
                    y.monthly_mean.to_string(),
                    rc.to_string(),
                ]);
            }
        }
        files.push((
            "fig2b.csv",
            "monthly percent change against the baseline year",
            csv_bytes(&["month", "group", "relative_change"], monthly_rows)?,
        ));
        files.push((
            "fig2_yearly.csv",
            "yearly totals and percent change against the baseline year",
            csv_bytes(
                &["year", "group", "n_titles", "n_hyper", "pooled_proportion", "monthly_mean", "relative_change"],
                yearly_rows,
            )?,
        ));
    }
    if !data.topics.is_empty() {
        let mut buf = Vec::new();
        write_topic_csv(&data.topics, &mut buf)?;
        files.push(("fig3.csv", "log frequency ratio of topic coverage between groups", buf));
    }
    if !data.distances.is_empty() {
        let mut buf = Vec::new();
        write_distance_csv(&data.distances, &mut buf)?;
        files.push(("fig4.csv", "monthly linguistic distance between groups", buf));
    }

    let mut entries = Vec::new();
    for (name, description, bytes) in &files {
        write_atomic(&out_dir.join(name), bytes)?;
        entries.push(ManifestEntry {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
            description: description.to_string(),
        });
    }
    let manifest = Manifest {
        scorer_id: scorer_id.to_string(),
        config_hash: config_hash.to_string(),
        seed,
        baseline_year: BASELINE_YEAR,
        files: entries,
    };
    write_atomic(&manifest_path(out_dir), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn manifest_path(out_dir: &Path) -> PathBuf {
    out_dir.join("manifest.json")
}
