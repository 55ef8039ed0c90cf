//! Title corpus storage.
//!
//! A store is a directory of append-only JSONL files plus a small partition
//! manifest:
//!
//! ```text
//! <dir>/
//! ├── records.jsonl     # TitleRecord, one per line, insertion order
//! ├── votes.jsonl       # LabelRecord, one per annotator verdict
//! ├── consensus.jsonl   # ConsensusLabel, one per resolved title
//! └── partition.json    # labeled / unlabeled / validation id sets
//! ```
//!
//! The in-memory index is rebuilt from these files on open. All mutation goes
//! through `&mut self`, so callers sharing a store across threads wrap it in a
//! lock and get single-writer semantics for free.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const RECORDS_FILE: &str = "records.jsonl";
const VOTES_FILE: &str = "votes.jsonl";
const CONSENSUS_FILE: &str = "consensus.jsonl";
const PARTITION_FILE: &str = "partition.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BiasGroup {
    Left,
    Central,
    Right,
}

impl BiasGroup {
    pub const ALL: [BiasGroup; 3] = [BiasGroup::Left, BiasGroup::Central, BiasGroup::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            BiasGroup::Left => "Left",
            BiasGroup::Central => "Central",
            BiasGroup::Right => "Right",
        }
    }
}

impl fmt::Display for BiasGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BiasGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Left" => Ok(BiasGroup::Left),
            "Central" => Ok(BiasGroup::Central),
            "Right" => Ok(BiasGroup::Right),
            other => Err(Error::parse("bias group", other)),
        }
    }
}

/// Annotator or model verdict. Serialized as `"H"` / `"N"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "H")]
    Hyper,
    #[serde(rename = "N")]
    NonHyper,
}

impl Verdict {
    pub fn is_hyper(self) -> bool {
        self == Verdict::Hyper
    }

    pub fn from_hyper(hyper: bool) -> Self {
        if hyper {
            Verdict::Hyper
        } else {
            Verdict::NonHyper
        }
    }
}

/// Calendar month, serialized as `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Self {
        assert!((1..=12).contains(&month), "month out of range: {month}");
        Self { year, month }
    }

    pub fn of(date: NaiveDate) -> Self {
        Self::new(date.year(), date.month())
    }

    pub fn succ(self) -> Self {
        if self.month == 12 {
            Self::new(self.year + 1, 1)
        } else {
            Self::new(self.year, self.month + 1)
        }
    }

    /// Every month from `self` through `last`, inclusive.
    pub fn range_inclusive(self, last: YearMonth) -> Vec<YearMonth> {
        let mut out = Vec::new();
        let mut m = self;
        while m <= last {
            out.push(m);
            m = m.succ();
        }
        out
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (y, m) = s.split_once('-').ok_or_else(|| Error::parse("month", s))?;
        let year = y.parse().map_err(|_| Error::parse("month", s))?;
        let month: u32 = m.parse().map_err(|_| Error::parse("month", s))?;
        if !(1..=12).contains(&month) {
            return Err(Error::parse("month", s));
        }
        Ok(Self { year, month })
    }
}

impl Serialize for YearMonth {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Inclusive day range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start > end {
            return Err(Error::InvalidArgument(format!("date range {start}..{end} is reversed")));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }

    pub fn years(&self) -> std::ops::RangeInclusive<i32> {
        self.start.year()..=self.end.year()
    }
}

impl Default for DateRange {
    fn default() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2014, 1, 1).unwrap(),
            end: NaiveDate::from_ymd_opt(2022, 9, 30).unwrap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TitleRecord {
    pub id: String,
    pub text: String,
    pub outlet: String,
    pub bias_group: BiasGroup,
    pub date: NaiveDate,
}

/// One annotator's verdict on one title in one iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub title_id: String,
    pub annotator_id: String,
    pub verdict: Verdict,
    pub iteration: u32,
    pub recorded_at: DateTime<Utc>,
}

/// Resolved label for a title.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusLabel {
    pub title_id: String,
    pub verdict: Verdict,
    pub iteration: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionKind {
    Labeled,
    Unlabeled,
    Validation,
}

/// Pairwise-disjoint id sets. Records may sit in none of them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusPartition {
    pub labeled_ids: BTreeSet<String>,
    pub unlabeled_ids: BTreeSet<String>,
    pub validation_ids: BTreeSet<String>,
}

impl CorpusPartition {
    pub fn set(&self, kind: PartitionKind) -> &BTreeSet<String> {
        match kind {
            PartitionKind::Labeled => &self.labeled_ids,
            PartitionKind::Unlabeled => &self.unlabeled_ids,
            PartitionKind::Validation => &self.validation_ids,
        }
    }

    pub fn kind_of(&self, id: &str) -> Option<PartitionKind> {
        [PartitionKind::Labeled, PartitionKind::Unlabeled, PartitionKind::Validation]
            .into_iter()
            .find(|k| self.set(*k).contains(id))
    }

    /// Move `id` into `kind`, removing it from the other two sets.
    pub fn assign(&mut self, id: &str, kind: PartitionKind) {
        self.labeled_ids.remove(id);
        self.unlabeled_ids.remove(id);
        self.validation_ids.remove(id);
        let target = match kind {
            PartitionKind::Labeled => &mut self.labeled_ids,
            PartitionKind::Unlabeled => &mut self.unlabeled_ids,
            PartitionKind::Validation => &mut self.validation_ids,
        };
        target.insert(id.to_string());
    }

    pub fn is_disjoint(&self) -> bool {
        self.labeled_ids.is_disjoint(&self.unlabeled_ids)
            && self.labeled_ids.is_disjoint(&self.validation_ids)
            && self.unlabeled_ids.is_disjoint(&self.validation_ids)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IngestFormat {
    Jsonl,
    Csv,
}

impl FromStr for IngestFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(IngestFormat::Jsonl),
            "csv" => Ok(IngestFormat::Csv),
            other => Err(Error::parse("ingest format", other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based line number in the source file.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub count: usize,
    pub rejected: Vec<RejectedRow>,
}

/// Predicates for [`CorpusStore::query`]; absent fields match everything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordFilter {
    pub bias_group: Option<BiasGroup>,
    pub outlet: Option<String>,
    pub date_range: Option<DateRange>,
    pub partition: Option<PartitionKind>,
}

impl RecordFilter {
    pub fn group(group: BiasGroup) -> Self {
        Self {
            bias_group: Some(group),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearCounts {
    pub year: i32,
    pub hyper: usize,
    pub non_hyper: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<YearCounts>,
}

impl SummaryTable {
    pub fn total(&self) -> usize {
        self.rows.iter().map(|r| r.hyper + r.non_hyper).sum()
    }

    pub fn row(&self, year: i32) -> Option<&YearCounts> {
        self.rows.iter().find(|r| r.year == year)
    }
}

/// Result of recording one vote.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoteOutcome {
    Recorded,
    /// The identical vote was already on file.
    Duplicate,
}

#[derive(Deserialize)]
struct RawRow {
    id: String,
    text: String,
    outlet: String,
    bias_group: String,
    date: String,
}

pub struct CorpusStore {
    dir: PathBuf,
    date_range: DateRange,
    records: Vec<TitleRecord>,
    index: HashMap<String, usize>,
    votes: Vec<LabelRecord>,
    vote_index: HashMap<(String, String, u32), usize>,
    consensus: BTreeMap<String, ConsensusLabel>,
    partition: CorpusPartition,
}

impl fmt::Debug for CorpusStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CorpusStore")
            .field("dir", &self.dir)
            .field("records", &self.records.len())
            .field("votes", &self.votes.len())
            .field("consensus", &self.consensus.len())
            .finish()
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::parse("store file", format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

fn append_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if items.is_empty() {
        return Ok(());
    }
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    file.sync_data().map_err(|e| Error::io(path, e))
}

/// Write `bytes` to `path` via a temporary sibling and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl CorpusStore {
    /// Open (or create) a store rooted at `dir`.
    pub fn open(dir: impl AsRef<Path>, date_range: DateRange) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let records: Vec<TitleRecord> = read_jsonl(&dir.join(RECORDS_FILE))?;
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if index.insert(r.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        let votes: Vec<LabelRecord> = read_jsonl(&dir.join(VOTES_FILE))?;
        let vote_index = votes
            .iter()
            .enumerate()
            .map(|(i, v)| ((v.title_id.clone(), v.annotator_id.clone(), v.iteration), i))
            .collect();
        let consensus = read_jsonl::<ConsensusLabel>(&dir.join(CONSENSUS_FILE))?
            .into_iter()
            .map(|c| (c.title_id.clone(), c))
            .collect();
        let partition_path = dir.join(PARTITION_FILE);
        let partition = if partition_path.exists() {
            let text = fs::read_to_string(&partition_path).map_err(|e| Error::io(&partition_path, e))?;
            serde_json::from_str(&text)?
        } else {
            CorpusPartition::default()
        };
        Ok(Self {
            dir,
            date_range,
            records,
            index,
            votes,
            vote_index,
            consensus,
            partition,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn date_range(&self) -> DateRange {
        self.date_range
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[TitleRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&TitleRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn partition(&self) -> &CorpusPartition {
        &self.partition
    }

    pub fn votes(&self) -> &[LabelRecord] {
        &self.votes
    }

    pub fn consensus(&self) -> &BTreeMap<String, ConsensusLabel> {
        &self.consensus
    }

    pub fn label_of(&self, id: &str) -> Option<Verdict> {
        self.consensus.get(id).map(|c| c.verdict)
    }

    fn validate(&self, row: RawRow) -> std::result::Result<TitleRecord, String> {
        if row.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if row.text.trim().is_empty() {
            return Err("empty text".into());
        }
        let bias_group: BiasGroup = row.bias_group.parse().map_err(|e: Error| e.to_string())?;
        let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d")
            .map_err(|e| format!("invalid date {:?}: {e}", row.date))?;
        if !self.date_range.contains(date) {
            return Err(format!("date {date} outside {}..{}", self.date_range.start, self.date_range.end));
        }
        Ok(TitleRecord {
            id: row.id,
            text: row.text,
            outlet: row.outlet,
            bias_group,
            date,
        })
    }

    /// Append valid rows from `source`. Malformed rows and duplicate ids are
    /// rejected individually; the rest are kept and placed in the unlabeled
    /// pool.
    pub fn ingest(&mut self, source: &Path, format: IngestFormat) -> Result<IngestReport> {
        let text = fs::read_to_string(source).map_err(|e| Error::io(source, e))?;
        let rows: Vec<(usize, std::result::Result<RawRow, String>)> = match format {
            IngestFormat::Jsonl => text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| (i + 1, serde_json::from_str::<RawRow>(l).map_err(|e| e.to_string())))
                .collect(),
            IngestFormat::Csv => {
                let mut reader = csv::ReaderBuilder::new()
                    .has_headers(true)
                    .flexible(true)
                    .from_reader(text.as_bytes());
                reader
                    .records()
                    .map(|rec| match rec {
                        Ok(rec) => {
                            let line = rec.position().map_or(0, |p| p.line() as usize);
                            (line, rec.deserialize::<RawRow>(None).map_err(|e| e.to_string()))
                        }
                        Err(e) => {
                            let line = e.position().map_or(0, |p| p.line() as usize);
                            (line, Err(e.to_string()))
                        }
                    })
                    .collect()
            }
        };

        let mut report = IngestReport::default();
        let mut accepted: Vec<TitleRecord> = Vec::new();
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for (line, row) in rows {
            let outcome = row.and_then(|r| self.validate(r)).and_then(|rec| {
                if self.index.contains_key(&rec.id) || !seen.insert(rec.id.clone()) {
                    Err(format!("duplicate id {}", rec.id))
                } else {
                    Ok(rec)
                }
            });
            match outcome {
                Ok(rec) => accepted.push(rec),
                Err(reason) => report.rejected.push(RejectedRow { line, reason }),
            }
        }
        self.append_records(accepted.clone())?;
        report.count = accepted.len();
        Ok(report)
    }

    /// Append already-validated records (used by the fixture generator and
    /// tests). Fails without writing anything if any id is taken.
    pub fn append_records(&mut self, records: Vec<TitleRecord>) -> Result<()> {
        let mut fresh = BTreeSet::new();
        for r in &records {
            if self.index.contains_key(&r.id) || !fresh.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        append_jsonl(&self.dir.join(RECORDS_FILE), &records)?;
        for r in records {
            self.partition.assign(&r.id, PartitionKind::Unlabeled);
            self.index.insert(r.id.clone(), self.records.len());
            self.records.push(r);
        }
        self.save_partition()
    }

    /// Write every record as JSONL in insertion order.
    pub fn export_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n").map_err(|e| Error::io(&self.dir, e))?;
        }
        Ok(())
    }

    /// Records matching every present predicate, ordered by date then id.
    pub fn query(&self, filter: &RecordFilter) -> Vec<TitleRecord> {
        let mut out: Vec<TitleRecord> = self
            .records
            .iter()
            .filter(|r| filter.bias_group.is_none_or(|g| r.bias_group == g))
            .filter(|r| filter.outlet.as_deref().is_none_or(|o| r.outlet == o))
            .filter(|r| filter.date_range.is_none_or(|d| d.contains(r.date)))
            .filter(|r| filter.partition.is_none_or(|k| self.partition.set(k).contains(&r.id)))
            .cloned()
            .collect();
        out.sort_by(|a, b| a.date.cmp(&b.date).then_with(|| a.id.cmp(&b.id)));
        out
    }

    /// Per-year Hyper/NonHyper counts of resolved labels in `kind`.
    pub fn summarize(&self, kind: PartitionKind) -> SummaryTable {
        let mut rows: BTreeMap<i32, YearCounts> = self
            .date_range
            .years()
            .map(|year| {
                (
                    year,
                    YearCounts {
                        year,
                        hyper: 0,
                        non_hyper: 0,
                    },
                )
            })
            .collect();
        for id in self.partition.set(kind) {
            let (Some(rec), Some(label)) = (self.get(id), self.consensus.get(id)) else {
                continue;
            };
            let row = rows.entry(rec.date.year()).or_insert(YearCounts {
                year: rec.date.year(),
                hyper: 0,
                non_hyper: 0,
            });
            match label.verdict {
                Verdict::Hyper => row.hyper += 1,
                Verdict::NonHyper => row.non_hyper += 1,
            }
        }
        SummaryTable {
            rows: rows.into_values().collect(),
        }
    }

    pub fn vote(&self, title_id: &str, annotator_id: &str, iteration: u32) -> Option<&LabelRecord> {
        self.vote_index
            .get(&(title_id.to_string(), annotator_id.to_string(), iteration))
            .map(|&i| &self.votes[i])
    }

    /// Durably record one vote. Replaying an identical vote is a no-op;
    /// changing a verdict is a conflict.
    pub fn record_vote(&mut self, vote: LabelRecord) -> Result<VoteOutcome> {
        if !self.index.contains_key(&vote.title_id) {
            return Err(Error::UnknownTitle(vote.title_id));
        }
        if let Some(existing) = self.vote(&vote.title_id, &vote.annotator_id, vote.iteration) {
            return if existing.verdict == vote.verdict {
                Ok(VoteOutcome::Duplicate)
            } else {
                Err(Error::LabelConflict(format!(
                    "{} already voted {:?} on {} in iteration {}",
                    vote.annotator_id, existing.verdict, vote.title_id, vote.iteration
                )))
            };
        }
        append_jsonl(&self.dir.join(VOTES_FILE), std::slice::from_ref(&vote))?;
        self.vote_index.insert(
            (vote.title_id.clone(), vote.annotator_id.clone(), vote.iteration),
            self.votes.len(),
        );
        self.votes.push(vote);
        Ok(VoteOutcome::Recorded)
    }

    /// Votes cast in `iteration`, grouped by title id.
    pub fn votes_for_iteration(&self, iteration: u32) -> BTreeMap<String, Vec<&LabelRecord>> {
        let mut out: BTreeMap<String, Vec<&LabelRecord>> = BTreeMap::new();
        for v in self.votes.iter().filter(|v| v.iteration == iteration) {
            out.entry(v.title_id.clone()).or_default().push(v);
        }
        out
    }

    /// Store resolved labels and move their titles into `kind`. Re-recording an
    /// identical label is skipped, so a replayed close is harmless.
    pub fn record_consensus(&mut self, labels: &[ConsensusLabel], kind: PartitionKind) -> Result<()> {
        for l in labels {
            if !self.index.contains_key(&l.title_id) {
                return Err(Error::UnknownTitle(l.title_id.clone()));
            }
            if let Some(existing) = self.consensus.get(&l.title_id) {
                if existing.verdict != l.verdict {
                    return Err(Error::LabelConflict(format!(
                        "{} already resolved as {:?}",
                        l.title_id, existing.verdict
                    )));
                }
            }
        }
        let fresh: Vec<ConsensusLabel> = labels
            .iter()
            .filter(|l| !self.consensus.contains_key(&l.title_id))
            .cloned()
            .collect();
        append_jsonl(&self.dir.join(CONSENSUS_FILE), &fresh)?;
        for l in labels {
            self.consensus.insert(l.title_id.clone(), l.clone());
            self.partition.assign(&l.title_id, kind);
        }
        self.save_partition()
    }

    /// Move ids between partitions.
    pub fn move_to(&mut self, ids: &[String], kind: PartitionKind) -> Result<()> {
        for id in ids {
            if !self.index.contains_key(id) {
                return Err(Error::UnknownTitle(id.clone()));
            }
        }
        for id in ids {
            self.partition.assign(id, kind);
        }
        self.save_partition()
    }

    fn save_partition(&self) -> Result<()> {
        let bytes = serde_json::to_vec(&self.partition)?;
        write_atomic(&self.dir.join(PARTITION_FILE), &bytes)
    }
}

/// Read a label file (one [`LabelRecord`] per line).
pub fn read_label_file(path: &Path) -> Result<Vec<LabelRecord>> {
    read_jsonl(path)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn read_jsonl_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, group: BiasGroup, date: &str) -> TitleRecord {
        TitleRecord {
            id: id.into(),
            text: format!("title {id}"),
            outlet: format!("outlet-{}", group.as_str().to_lowercase()),
            bias_group: group,
            date: NaiveDate::parse_from_str(date, "%Y-%m-%d").unwrap(),
        }
    }

    fn store() -> (tempfile::TempDir, CorpusStore) {
        let dir = tempfile::tempdir().unwrap();
        let s = CorpusStore::open(dir.path().join("store"), DateRange::default()).unwrap();
        (dir, s)
    }

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    const THREE: &str = r#"{"id":"a","text":"Gun law fails","outlet":"cnn","bias_group":"Left","date":"2016-03-01"}
{"id":"b","text":"Senate votes","outlet":"fox","bias_group":"Right","date":"2016-05-02"}
{"id":"c","text":"Markets rally","outlet":"fox","bias_group":"Right","date":"2018-07-09"}
"#;

    #[test]
    fn ingest_and_reingest() {
        let (dir, mut s) = store();
        let src = write(dir.path(), "in.jsonl", THREE);
        let r = s.ingest(&src, IngestFormat::Jsonl).unwrap();
        assert_eq!((r.count, r.rejected.len()), (3, 0));
        let r = s.ingest(&src, IngestFormat::Jsonl).unwrap();
        assert_eq!((r.count, r.rejected.len()), (0, 3));
        // survives reopen
        let s2 = CorpusStore::open(s.dir(), DateRange::default()).unwrap();
        assert_eq!(s2.len(), 3);
        assert_eq!(s2.partition().unlabeled_ids.len(), 3);
    }

    #[test]
    fn invalid_date_rejects_row_only() {
        let (dir, mut s) = store();
        let body = THREE.replace("2016-05-02", "2013-13-40");
        let src = write(dir.path(), "in.jsonl", &body);
        let r = s.ingest(&src, IngestFormat::Jsonl).unwrap();
        assert_eq!(r.count, 2);
        assert_eq!(r.rejected.len(), 1);
        assert_eq!(r.rejected[0].line, 2);
        assert!(s.get("b").is_none());
    }

    #[test]
    fn out_of_range_and_bad_group_and_garbage() {
        let (dir, mut s) = store();
        let body = r#"{"id":"x","text":"t","outlet":"o","bias_group":"Left","date":"2010-01-01"}
{"id":"y","text":"t","outlet":"o","bias_group":"Centre","date":"2015-01-01"}
not json
{"id":"z","text":"   ","outlet":"o","bias_group":"Left","date":"2015-01-01"}
"#;
        let src = write(dir.path(), "in.jsonl", body);
        let r = s.ingest(&src, IngestFormat::Jsonl).unwrap();
        assert_eq!(r.count, 0);
        assert_eq!(r.rejected.len(), 4);
    }

    #[test]
    fn csv_ingest() {
        let (dir, mut s) = store();
        let body = "id,text,outlet,bias_group,date\na,\"Gun law, again\",cnn,Left,2016-03-01\nb,Vote,fox,Right,2016-99-01\n";
        let src = write(dir.path(), "in.csv", body);
        let r = s.ingest(&src, IngestFormat::Csv).unwrap();
        assert_eq!(r.count, 1);
        assert_eq!(r.rejected.len(), 1);
        assert_eq!(s.get("a").unwrap().text, "Gun law, again");
    }

    #[test]
    fn unreadable_file_is_an_error() {
        let (dir, mut s) = store();
        assert!(matches!(
            s.ingest(&dir.path().join("missing.jsonl"), IngestFormat::Jsonl),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn query_filters() {
        let (_dir, mut s) = store();
        s.append_records(vec![
            rec("r2", BiasGroup::Right, "2016-02-01"),
            rec("l1", BiasGroup::Left, "2015-02-01"),
            rec("r1", BiasGroup::Right, "2017-02-01"),
        ])
        .unwrap();
        let right = s.query(&RecordFilter::group(BiasGroup::Right));
        assert_eq!(right.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["r2", "r1"]);
        let all = s.query(&RecordFilter::default());
        assert_eq!(all.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["l1", "r2", "r1"]);
        let y2016 = DateRange::new(
            NaiveDate::from_ymd_opt(2016, 1, 1).unwrap(),
            NaiveDate::from_ymd_opt(2016, 12, 31).unwrap(),
        )
        .unwrap();
        let only = s.query(&RecordFilter {
            date_range: Some(y2016),
            ..Default::default()
        });
        assert_eq!(only.len(), 1);
        assert_eq!(only[0].id, "r2");
    }

    #[test]
    fn summarize_counts_per_year() {
        let (_dir, mut s) = store();
        let mut recs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..220 {
            let id = format!("t{i:03}");
            recs.push(rec(&id, BiasGroup::Central, "2014-06-01"));
            labels.push(ConsensusLabel {
                title_id: id,
                verdict: Verdict::from_hyper(i < 71),
                iteration: 1,
            });
        }
        s.append_records(recs).unwrap();
        assert!(s.summarize(PartitionKind::Labeled).rows.iter().all(|r| r.hyper + r.non_hyper == 0));
        s.record_consensus(&labels, PartitionKind::Labeled).unwrap();
        let table = s.summarize(PartitionKind::Labeled);
        assert_eq!(table.row(2014).copied().map(|r| (r.year, r.hyper, r.non_hyper)), Some((2014, 71, 149)));
        assert_eq!(table.rows.len(), 9);
        assert_eq!(table.total(), s.query(&RecordFilter {
            partition: Some(PartitionKind::Labeled),
            ..Default::default()
        }).len());
    }

    #[test]
    fn summarize_single_year() {
        let (_dir, mut s) = store();
        let recs: Vec<_> = (0..10).map(|i| rec(&format!("x{i}"), BiasGroup::Left, "2020-01-05")).collect();
        let labels: Vec<_> = recs
            .iter()
            .map(|r| ConsensusLabel {
                title_id: r.id.clone(),
                verdict: Verdict::Hyper,
                iteration: 1,
            })
            .collect();
        s.append_records(recs).unwrap();
        s.record_consensus(&labels, PartitionKind::Labeled).unwrap();
        let t = s.summarize(PartitionKind::Labeled);
        for row in &t.rows {
            let want = if row.year == 2020 { (10, 0) } else { (0, 0) };
            assert_eq!((row.hyper, row.non_hyper), want);
        }
    }

    #[test]
    fn votes_are_unique_per_annotator_and_iteration() {
        let (_dir, mut s) = store();
        s.append_records(vec![rec("a", BiasGroup::Left, "2015-01-01")]).unwrap();
        let v = LabelRecord {
            title_id: "a".into(),
            annotator_id: "ann1".into(),
            verdict: Verdict::Hyper,
            iteration: 1,
            recorded_at: Utc::now(),
        };
        assert_eq!(s.record_vote(v.clone()).unwrap(), VoteOutcome::Recorded);
        assert_eq!(s.record_vote(v.clone()).unwrap(), VoteOutcome::Duplicate);
        let flipped = LabelRecord {
            verdict: Verdict::NonHyper,
            ..v.clone()
        };
        assert!(matches!(s.record_vote(flipped), Err(Error::LabelConflict(_))));
        let unknown = LabelRecord {
            title_id: "zz".into(),
            ..v
        };
        assert!(matches!(s.record_vote(unknown), Err(Error::UnknownTitle(_))));
        let reopened = CorpusStore::open(s.dir(), DateRange::default()).unwrap();
        assert_eq!(reopened.votes().len(), 1);
    }

    #[test]
    fn label_file_schema() {
        let line = r#"{"title_id":"a","annotator_id":"r1","verdict":"H","iteration":2,"recorded_at":"2022-10-01T12:00:00Z"}"#;
        let l: LabelRecord = serde_json::from_str(line).unwrap();
        assert_eq!(l.verdict, Verdict::Hyper);
        assert_eq!(l.iteration, 2);
    }

    fn arb_record() -> impl Strategy<Value = TitleRecord> {
        (
            "[a-z0-9]{1,8}",
            "[ -~]{1,30}",
            "[a-z]{2,6}",
            0usize..3,
            0i64..3195,
        )
            .prop_filter("non-blank text", |(_, t, _, _, _)| !t.trim().is_empty())
            .prop_map(|(id, text, outlet, g, day)| TitleRecord {
                id,
                text,
                outlet,
                bias_group: BiasGroup::ALL[g],
                date: NaiveDate::from_ymd_opt(2014, 1, 1).unwrap() + chrono::Duration::days(day),
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn ingest_export_round_trip(records in proptest::collection::vec(arb_record(), 1..20)) {
            let mut unique = BTreeMap::new();
            for r in records {
                unique.entry(r.id.clone()).or_insert(r);
            }
            let records: Vec<_> = unique.into_values().collect();
            let mut src = Vec::new();
            for r in &records {
                serde_json::to_writer(&mut src, r).unwrap();
                src.push(b'\n');
            }
            let (dir, mut s) = store();
            let p = dir.path().join("src.jsonl");
            fs::write(&p, &src).unwrap();
            let report = s.ingest(&p, IngestFormat::Jsonl).unwrap();
            prop_assert_eq!(report.count, records.len());
            let mut out = Vec::new();
            s.export_jsonl(&mut out).unwrap();
            prop_assert_eq!(out, src);
        }

        #[test]
        fn partition_stays_disjoint(ops in proptest::collection::vec((0usize..12, 0usize..3), 0..60)) {
            let mut p = CorpusPartition::default();
            let kinds = [PartitionKind::Labeled, PartitionKind::Unlabeled, PartitionKind::Validation];
            for (id, k) in ops {
                p.assign(&format!("t{id}"), kinds[k]);
                prop_assert!(p.is_disjoint());
                prop_assert_eq!(p.kind_of(&format!("t{id}")), Some(kinds[k]));
            }
        }
    }
}
