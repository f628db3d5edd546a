//! Questions, forecasts and time-conditioned retrieval.
//!
//! Forecast CSVs follow the Good Judgment layout: one row per forecast with
//! the probability vector spread over `p0..pN` columns (wide), or one row per
//! option with `option_index`/`value` columns (long). Question files carry the
//! answer options pipe-separated.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDate, NaiveDateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::aggregate;
use crate::error::{Error, Result};

/// Probability vectors whose sum is within this distance of 1 are
/// renormalized on ingest; anything further out is rejected.
pub const SUM_TOLERANCE: f64 = 1e-3;

/// Mean past Brier assigned to forecasters with no resolved history.
pub const COLD_START_BRIER: f64 = 0.5;

/// First instant of `date` (UTC midnight).
pub fn day_start(date: NaiveDate) -> DateTime<Utc> {
    date.and_hms_opt(0, 0, 0).unwrap().and_utc()
}

/// Last representable instant of `date` in UTC.
pub fn day_end(date: NaiveDate) -> DateTime<Utc> {
    date.and_hms_nano_opt(23, 59, 59, 999_999_999)
        .unwrap()
        .and_utc()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub description: String,
    pub open_date: NaiveDate,
    pub close_date: NaiveDate,
    pub options: Vec<String>,
    pub is_ordered: bool,
    pub outcome_index: Option<usize>,
}

impl Question {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        description: impl Into<String>,
        open_date: NaiveDate,
        close_date: NaiveDate,
        options: Vec<String>,
        is_ordered: bool,
        outcome_index: Option<usize>,
    ) -> Result<Self> {
        let q = Question {
            id: id.into(),
            text: text.into(),
            description: description.into(),
            open_date,
            close_date,
            options,
            is_ordered,
            outcome_index,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.options.len() < 2 {
            return Err(Error::invalid(format!(
                "question {}: needs at least 2 options",
                self.id
            )));
        }
        if self.open_date > self.close_date {
            return Err(Error::invalid(format!(
                "question {}: open date after close date",
                self.id
            )));
        }
        if let Some(o) = self.outcome_index {
            if o >= self.options.len() {
                return Err(Error::invalid(format!(
                    "question {}: outcome index {o} out of range",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn num_options(&self) -> usize {
        self.options.len()
    }

    pub fn is_resolved(&self) -> bool {
        self.outcome_index.is_some()
    }

    pub fn outcome(&self) -> Result<usize> {
        self.outcome_index
            .ok_or_else(|| Error::Unresolved(self.id.clone()))
    }

    /// Whether `ts` falls inside the open window. Resolution is taken to be
    /// the end of the close date, so this also excludes post-resolution
    /// records.
    pub fn in_window(&self, ts: DateTime<Utc>) -> bool {
        ts >= day_start(self.open_date) && ts <= day_end(self.close_date)
    }

    /// Calendar days the question is open, inclusive.
    pub fn open_days(&self) -> impl Iterator<Item = NaiveDate> {
        let close = self.close_date;
        self.open_date.iter_days().take_while(move |d| *d <= close)
    }

    /// Text fed to the topic model: question text followed by description.
    pub fn document(&self) -> String {
        format!("{} {}", self.text, self.description)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub question_id: String,
    pub forecaster_id: String,
    pub timestamp: DateTime<Utc>,
    pub probabilities: Vec<f64>,
    pub confidence: u8,
}

impl ForecastRecord {
    /// Validates the record, renormalizing probabilities whose sum is within
    /// [`SUM_TOLERANCE`] of 1.
    pub fn new(
        question_id: impl Into<String>,
        forecaster_id: impl Into<String>,
        timestamp: DateTime<Utc>,
        probabilities: Vec<f64>,
        confidence: u8,
    ) -> Result<Self> {
        if !(1..=5).contains(&confidence) {
            return Err(Error::invalid(format!(
                "confidence {confidence} outside 1..=5"
            )));
        }
        let probabilities = normalize_probabilities(probabilities)?;
        Ok(ForecastRecord {
            question_id: question_id.into(),
            forecaster_id: forecaster_id.into(),
            timestamp,
            probabilities,
            confidence,
        })
    }

    pub fn date(&self) -> NaiveDate {
        self.timestamp.date_naive()
    }
}

fn normalize_probabilities(mut p: Vec<f64>) -> Result<Vec<f64>> {
    if p.len() < 2 {
        return Err(Error::invalid("fewer than 2 probabilities"));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("negative or non-finite probability"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::invalid(format!(
            "probabilities sum to {sum}, outside 1 ± {SUM_TOLERANCE}"
        )));
    }
    // Already-normalized vectors are left bit-for-bit intact so that
    // serialization round-trips.
    if (sum - 1.0).abs() > 1e-12 {
        p.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecasterStats {
    pub forecaster_id: String,
    pub as_of: NaiveDate,
    pub mean_past_brier: f64,
    pub prior_forecast_count: u32,
}

impl ForecasterStats {
    pub fn cold_start(forecaster_id: impl Into<String>, as_of: NaiveDate) -> Self {
        ForecasterStats {
            forecaster_id: forecaster_id.into(),
            as_of,
            mean_past_brier: COLD_START_BRIER,
            prior_forecast_count: 0,
        }
    }

    pub fn has_history(&self) -> bool {
        self.prior_forecast_count > 0
    }
}

/// Source of per-forecaster history features.
pub trait StatsProvider {
    fn stats(&self, forecaster_id: &str, as_of: NaiveDate) -> ForecasterStats;
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbabilityLayout {
    /// One column per option: `<prefix>0`, `<prefix>1`, ... Empty trailing
    /// cells are ignored, so questions with fewer options leave them blank.
    Wide { prefix: String },
    /// One row per option.
    Long {
        option_column: String,
        value_column: String,
    },
}

/// Maps logical fields to CSV column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSchema {
    pub question_column: String,
    pub forecaster_column: String,
    pub timestamp_column: String,
    pub confidence_column: String,
    pub layout: ProbabilityLayout,
}

impl Default for ForecastSchema {
    fn default() -> Self {
        ForecastSchema {
            question_column: "ifp_id".into(),
            forecaster_column: "user_id".into(),
            timestamp_column: "timestamp".into(),
            confidence_column: "confidence".into(),
            layout: ProbabilityLayout::Wide { prefix: "p".into() },
        }
    }
}

impl ForecastSchema {
    pub fn long() -> Self {
        ForecastSchema {
            layout: ProbabilityLayout::Long {
                option_column: "option_index".into(),
                value_column: "value".into(),
            },
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedForecasts {
    pub records: Vec<ForecastRecord>,
    /// Source line of each record (first line of the group in long layout).
    pub lines: Vec<u64>,
    pub rejects: Vec<Reject>,
}

pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(dt.and_utc());
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(day_start(d));
    }
    Err(Error::invalid(format!("unparseable timestamp `{s}`")))
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MalformedHeader(name.to_string()))
}

struct CommonColumns {
    question: usize,
    forecaster: usize,
    timestamp: usize,
    confidence: usize,
}

struct RowHead {
    question: String,
    forecaster: String,
    timestamp: DateTime<Utc>,
    confidence: u8,
}

impl CommonColumns {
    fn read(&self, row: &csv::StringRecord) -> std::result::Result<RowHead, String> {
        let get = |i: usize| row.get(i).map(str::trim).unwrap_or("");
        let question = get(self.question);
        let forecaster = get(self.forecaster);
        if question.is_empty() || forecaster.is_empty() {
            return Err("missing question or forecaster id".into());
        }
        let timestamp = parse_timestamp(get(self.timestamp)).map_err(|e| e.to_string())?;
        let confidence = get(self.confidence)
            .parse::<u8>()
            .map_err(|_| format!("bad confidence `{}`", get(self.confidence)))?;
        Ok(RowHead {
            question: question.to_string(),
            forecaster: forecaster.to_string(),
            timestamp,
            confidence,
        })
    }
}

/// Parses a forecast CSV. A header missing a required column is fatal; rows
/// that fail validation land in `rejects` and parsing continues.
pub fn parse_forecasts<R: Read>(reader: R, schema: &ForecastSchema) -> Result<ParsedForecasts> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let common = CommonColumns {
        question: column(&headers, &schema.question_column)?,
        forecaster: column(&headers, &schema.forecaster_column)?,
        timestamp: column(&headers, &schema.timestamp_column)?,
        confidence: column(&headers, &schema.confidence_column)?,
    };
    match &schema.layout {
        ProbabilityLayout::Wide { prefix } => parse_wide(rdr, &headers, &common, prefix),
        ProbabilityLayout::Long {
            option_column,
            value_column,
        } => {
            let opt = column(&headers, option_column)?;
            let val = column(&headers, value_column)?;
            parse_long(rdr, &common, opt, val)
        }
    }
}

fn parse_wide<R: Read>(
    mut rdr: csv::Reader<R>,
    headers: &csv::StringRecord,
    common: &CommonColumns,
    prefix: &str,
) -> Result<ParsedForecasts> {
    let mut prob_cols: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            let idx = h.trim().strip_prefix(prefix)?.parse::<usize>().ok()?;
            Some((idx, i))
        })
        .collect();
    prob_cols.sort_unstable();
    if prob_cols.len() < 2 || prob_cols.iter().enumerate().any(|(k, (idx, _))| *idx != k) {
        return Err(Error::MalformedHeader(format!("{prefix}0..{prefix}N")));
    }

    let mut out = ParsedForecasts::default();
    for (n, row) in rdr.records().enumerate() {
        let line = n as u64 + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                out.rejects.push(Reject {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let parsed = common.read(&row).and_then(|head| {
            let cells: Vec<&str> = prob_cols
                .iter()
                .map(|(_, i)| row.get(*i).map(str::trim).unwrap_or(""))
                .collect();
            let used = cells.iter().rposition(|c| !c.is_empty()).map_or(0, |p| p + 1);
            let probs = cells[..used]
                .iter()
                .map(|c| c.parse::<f64>().map_err(|_| format!("bad probability `{c}`")))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            ForecastRecord::new(
                head.question,
                head.forecaster,
                head.timestamp,
                probs,
                head.confidence,
            )
            .map_err(|e| e.to_string())
        });
        match parsed {
            Ok(rec) => {
                out.records.push(rec);
                out.lines.push(line);
            }
            Err(reason) => out.rejects.push(Reject { line, reason }),
        }
    }
    Ok(out)
}

fn parse_long<R: Read>(
    mut rdr: csv::Reader<R>,
    common: &CommonColumns,
    opt_col: usize,
    val_col: usize,
) -> Result<ParsedForecasts> {
    struct Group {
        line: u64,
        head: RowHead,
        values: BTreeMap<usize, f64>,
        error: Option<String>,
    }
    let mut groups: Vec<Group> = Vec::new();
    let mut index: HashMap<(String, String, DateTime<Utc>), usize> = HashMap::new();
    let mut out = ParsedForecasts::default();

    for (n, row) in rdr.records().enumerate() {
        let line = n as u64 + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                out.rejects.push(Reject {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let head = match common.read(&row) {
            Ok(h) => h,
            Err(reason) => {
                out.rejects.push(Reject { line, reason });
                continue;
            }
        };
        let cell = |i: usize| row.get(i).map(str::trim).unwrap_or("");
        let entry = cell(opt_col)
            .parse::<usize>()
            .map_err(|_| format!("bad option index `{}`", cell(opt_col)))
            .and_then(|o| {
                cell(val_col)
                    .parse::<f64>()
                    .map(|v| (o, v))
                    .map_err(|_| format!("bad probability `{}`", cell(val_col)))
            });
        let (opt, value) = match entry {
            Ok(e) => e,
            Err(reason) => {
                out.rejects.push(Reject { line, reason });
                continue;
            }
        };
        let key = (head.question.clone(), head.forecaster.clone(), head.timestamp);
        let gi = *index.entry(key).or_insert_with(|| {
            groups.push(Group {
                line,
                head,
                values: BTreeMap::new(),
                error: None,
            });
            groups.len() - 1
        });
        let group = &mut groups[gi];
        if group.values.insert(opt, value).is_some() {
            group.error = Some(format!("duplicate option index {opt}"));
        }
    }

    for g in groups {
        let result = match g.error {
            Some(e) => Err(e),
            None => {
                let r = g.values.len();
                if g.values.keys().enumerate().any(|(k, idx)| k != *idx) {
                    Err(format!("option indices not contiguous from 0 (have {r})"))
                } else {
                    ForecastRecord::new(
                        g.head.question,
                        g.head.forecaster,
                        g.head.timestamp,
                        g.values.into_values().collect(),
                        g.head.confidence,
                    )
                    .map_err(|e| e.to_string())
                }
            }
        };
        match result {
            Ok(rec) => {
                out.records.push(rec);
                out.lines.push(g.line);
            }
            Err(reason) => out.rejects.push(Reject {
                line: g.line,
                reason,
            }),
        }
    }
    Ok(out)
}

/// Writes records in the default wide layout.
pub fn write_forecasts<W: Write>(writer: W, records: &[ForecastRecord]) -> Result<()> {
    let width = records
        .iter()
        .map(|r| r.probabilities.len())
        .max()
        .unwrap_or(2);
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["ifp_id", "user_id", "timestamp", "confidence"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..width).map(|i| format!("p{i}")));
    wtr.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.question_id.clone(),
            r.forecaster_id.clone(),
            format_timestamp(&r.timestamp),
            r.confidence.to_string(),
        ];
        row.extend((0..width).map(|i| {
            r.probabilities
                .get(i)
                .map(|p| p.to_string())
                .unwrap_or_default()
        }));
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io("<forecasts>", e))?;
    Ok(())
}

pub fn write_rejects<W: Write>(writer: W, rejects: &[Reject]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["line", "reason"])?;
    for r in rejects {
        wtr.write_record([r.line.to_string(), r.reason.clone()])?;
    }
    wtr.flush().map_err(|e| Error::io("<rejects>", e))?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct QuestionRow {
    id: String,
    text: String,
    description: String,
    open_date: NaiveDate,
    close_date: NaiveDate,
    options: String,
    ordered: String,
    outcome_index: Option<usize>,
}

pub fn parse_questions<R: Read>(reader: R) -> Result<Vec<Question>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    for col in [
        "id",
        "text",
        "description",
        "open_date",
        "close_date",
        "options",
        "ordered",
        "outcome_index",
    ] {
        column(&headers, col)?;
    }
    let mut out = Vec::new();
    for (n, row) in rdr.deserialize::<QuestionRow>().enumerate() {
        let row = row?;
        let is_ordered = match row.ordered.trim().to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" => true,
            "false" | "0" | "no" | "" => false,
            other => {
                return Err(Error::invalid(format!(
                    "line {}: bad ordered flag `{other}`",
                    n + 2
                )))
            }
        };
        let q = Question::new(
            row.id,
            row.text,
            row.description,
            row.open_date,
            row.close_date,
            row.options.split('|').map(|s| s.trim().to_string()).collect(),
            is_ordered,
            row.outcome_index,
        )?;
        out.push(q);
    }
    Ok(out)
}

pub fn write_questions<W: Write>(writer: W, questions: &[Question]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for q in questions {
        wtr.serialize(QuestionRow {
            id: q.id.clone(),
            text: q.text.clone(),
            description: q.description.clone(),
            open_date: q.open_date,
            close_date: q.close_date,
            options: q.options.join("|"),
            ordered: q.is_ordered.to_string(),
            outcome_index: q.outcome_index,
        })?;
    }
    wtr.flush().map_err(|e| Error::io("<questions>", e))?;
    Ok(())
}

/// Rejects records whose question is unknown or whose option count does not
/// match the question. Returns the kept records.
pub fn check_against_questions(
    parsed: ParsedForecasts,
    questions: &[Question],
) -> (Vec<ForecastRecord>, Vec<Reject>) {
    let by_id: HashMap<&str, &Question> = questions.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut rejects = parsed.rejects;
    let mut kept = Vec::with_capacity(parsed.records.len());
    for (rec, line) in parsed.records.into_iter().zip(parsed.lines) {
        match by_id.get(rec.question_id.as_str()) {
            None => rejects.push(Reject {
                line,
                reason: format!("unknown question `{}`", rec.question_id),
            }),
            Some(q) if q.num_options() != rec.probabilities.len() => rejects.push(Reject {
                line,
                reason: format!(
                    "{} probabilities for a {}-option question",
                    rec.probabilities.len(),
                    q.num_options()
                ),
            }),
            Some(_) => kept.push(rec),
        }
    }
    rejects.sort_by_key(|r| r.line);
    (kept, rejects)
}

// ---------------------------------------------------------------------------
// Time-conditioned retrieval
// ---------------------------------------------------------------------------

/// Latest in-window record of each forecaster at or before `t`. Ties on
/// timestamp go to the record appearing last in `records`.
pub fn latest_per_forecaster<'a>(
    question: &Question,
    records: &'a [ForecastRecord],
    t: DateTime<Utc>,
) -> BTreeMap<&'a str, &'a ForecastRecord> {
    let mut latest: BTreeMap<&str, &ForecastRecord> = BTreeMap::new();
    for r in records {
        if r.question_id != question.id || r.timestamp > t || !question.in_window(r.timestamp) {
            continue;
        }
        match latest.get(r.forecaster_id.as_str()) {
            Some(prev) if prev.timestamp > r.timestamp => {}
            _ => {
                latest.insert(&r.forecaster_id, r);
            }
        }
    }
    latest
}

/// End-of-day latest forecasts for every open day of `question`, in a single
/// sweep. Equivalent to calling [`latest_per_forecaster`] at each
/// [`day_end`].
pub fn daily_latest<'a>(
    question: &Question,
    records: &'a [ForecastRecord],
) -> Vec<(NaiveDate, BTreeMap<&'a str, &'a ForecastRecord>)> {
    let mut sorted: Vec<&ForecastRecord> = records
        .iter()
        .filter(|r| r.question_id == question.id && question.in_window(r.timestamp))
        .collect();
    sorted.sort_by_key(|r| r.timestamp);

    let mut current: BTreeMap<&str, &ForecastRecord> = BTreeMap::new();
    let mut next = 0;
    let mut out = Vec::new();
    for day in question.open_days() {
        let end = day_end(day);
        while next < sorted.len() && sorted[next].timestamp <= end {
            current.insert(&sorted[next].forecaster_id, sorted[next]);
            next += 1;
        }
        out.push((day, current.clone()));
    }
    out
}

/// Groups records by question id, preserving input order within a group.
pub fn group_by_question(records: &[ForecastRecord]) -> HashMap<String, Vec<ForecastRecord>> {
    let mut out: HashMap<String, Vec<ForecastRecord>> = HashMap::new();
    for r in records {
        out.entry(r.question_id.clone()).or_default().push(r.clone());
    }
    out
}

// ---------------------------------------------------------------------------
// Past performance
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
struct PastScore {
    brier_sum: f64,
    days: u32,
    records: u32,
}

#[derive(Debug, Clone)]
struct ArchiveEntry {
    close_date: NaiveDate,
    scores: HashMap<String, PastScore>,
}

/// Per-question daily individual Brier totals for every resolved question,
/// used to answer "how did this forecaster do before date X".
#[derive(Debug, Clone, Default)]
pub struct Archive {
    entries: Vec<ArchiveEntry>,
}

impl Archive {
    pub fn build(questions: &[Question], records: &[ForecastRecord]) -> Self {
        let grouped = group_by_question(records);
        let empty = Vec::new();
        let mut entries: Vec<ArchiveEntry> = questions
            .iter()
            .filter(|q| q.is_resolved())
            .map(|q| {
                let recs = grouped.get(&q.id).unwrap_or(&empty);
                let mut scores: HashMap<String, PastScore> = HashMap::new();
                for (id, daily) in aggregate::daily_individual_scores(q, recs) {
                    let s = scores.entry(id).or_default();
                    s.brier_sum += daily.iter().map(|(_, b)| b).sum::<f64>();
                    s.days += daily.len() as u32;
                }
                for r in recs.iter().filter(|r| q.in_window(r.timestamp)) {
                    scores.entry(r.forecaster_id.clone()).or_default().records += 1;
                }
                ArchiveEntry {
                    close_date: q.close_date,
                    scores,
                }
            })
            .collect();
        entries.sort_by_key(|e| e.close_date);
        Archive { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl StatsProvider for Archive {
    fn stats(&self, forecaster_id: &str, as_of: NaiveDate) -> ForecasterStats {
        forecaster_stats(forecaster_id, self, as_of)
    }
}

/// Pooled mean of the forecaster's daily individual Brier scores over
/// questions resolved strictly before `as_of`.
pub fn forecaster_stats(forecaster_id: &str, history: &Archive, as_of: NaiveDate) -> ForecasterStats {
    let mut sum = 0.0;
    let mut days = 0u32;
    let mut records = 0u32;
    for e in history.entries.iter().take_while(|e| e.close_date < as_of) {
        if let Some(s) = e.scores.get(forecaster_id) {
            sum += s.brier_sum;
            days += s.days;
            records += s.records;
        }
    }
    if days == 0 {
        return ForecasterStats::cold_start(forecaster_id, as_of);
    }
    ForecasterStats {
        forecaster_id: forecaster_id.to_string(),
        as_of,
        mean_past_brier: sum / days as f64,
        prior_forecast_count: records,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2012, 1, day).unwrap()
    }

    fn ts(day: u32, hour: u32) -> DateTime<Utc> {
        d(day).and_hms_opt(hour, 0, 0).unwrap().and_utc()
    }

    fn question(outcome: Option<usize>) -> Question {
        Question::new(
            "q1",
            "Will it rain?",
            "",
            d(1),
            d(10),
            vec!["yes".into(), "no".into()],
            false,
            outcome,
        )
        .unwrap()
    }

    fn rec(f: &str, day: u32, hour: u32, p: f64) -> ForecastRecord {
        ForecastRecord::new("q1", f, ts(day, hour), vec![p, 1.0 - p], 3).unwrap()
    }

    #[test]
    fn parse_identity_row() {
        let csv = "ifp_id,user_id,timestamp,confidence,p0,p1\nq1,a,2012-01-02,3,0.7,0.3\n";
        let parsed = parse_forecasts(csv.as_bytes(), &ForecastSchema::default()).unwrap();
        assert!(parsed.rejects.is_empty());
        let r = &parsed.records[0];
        assert_eq!(r.confidence, 3);
        assert!((r.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parse_rejects_bad_sum_and_continues() {
        let csv = "ifp_id,user_id,timestamp,confidence,p0,p1,p2\n\
                   q1,a,2012-01-02,3,0.5,0.5,0.1\n\
                   q1,b,2012-01-02,6,0.5,0.5,\n\
                   q1,c,2012-01-02,2,0.5,0.5,\n";
        let parsed = parse_forecasts(csv.as_bytes(), &ForecastSchema::default()).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.records[0].forecaster_id, "c");
        assert_eq!(parsed.records[0].probabilities.len(), 2);
        let lines: Vec<u64> = parsed.rejects.iter().map(|r| r.line).collect();
        assert_eq!(lines, vec![2, 3]);
    }

    #[test]
    fn parse_renormalizes_near_one() {
        let csv = "ifp_id,user_id,timestamp,confidence,p0,p1\nq1,a,2012-01-02,3,0.3334,0.6667\n";
        let parsed = parse_forecasts(csv.as_bytes(), &ForecastSchema::default()).unwrap();
        let p = &parsed.records[0].probabilities;
        assert!((p[0] - 0.3334 / 1.0001).abs() < 1e-15);
        assert!((p[1] - 0.6667 / 1.0001).abs() < 1e-15);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn malformed_header_is_fatal() {
        let csv = "ifp,user_id,timestamp,confidence,p0,p1\n";
        let err = parse_forecasts(csv.as_bytes(), &ForecastSchema::default()).unwrap_err();
        assert!(matches!(err, Error::MalformedHeader(c) if c == "ifp_id"));
    }

    #[test]
    fn long_layout_groups_rows() {
        let csv = "ifp_id,user_id,timestamp,confidence,option_index,value\n\
                   q1,a,2012-01-02T10:00:00Z,4,0,0.2\n\
                   q1,a,2012-01-02T10:00:00Z,4,1,0.8\n\
                   q1,b,2012-01-03T10:00:00Z,1,1,0.5\n\
                   q1,b,2012-01-03T10:00:00Z,1,2,0.5\n";
        let parsed = parse_forecasts(csv.as_bytes(), &ForecastSchema::long()).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.records[0].probabilities, vec![0.2, 0.8]);
        assert_eq!(parsed.rejects.len(), 1);
        assert_eq!(parsed.rejects[0].line, 4);
    }

    #[test]
    fn latest_before_t() {
        let q = question(None);
        let records = vec![rec("a", 1, 12, 0.6), rec("a", 3, 12, 0.9)];
        let m = latest_per_forecaster(&q, &records, day_end(d(2)));
        assert_eq!(m["a"].probabilities[0], 0.6);
        assert!(latest_per_forecaster(&q, &records, ts(1, 0)).is_empty());
    }

    #[test]
    fn latest_ties_use_last_occurrence() {
        let q = question(None);
        let records = vec![rec("a", 2, 12, 0.6), rec("a", 2, 12, 0.7)];
        let m = latest_per_forecaster(&q, &records, day_end(d(5)));
        assert_eq!(m["a"].probabilities[0], 0.7);
    }

    #[test]
    fn out_of_window_records_are_ignored() {
        let q = question(None);
        let mut late = rec("a", 1, 12, 0.1);
        late.timestamp = ts(11, 1);
        let records = vec![rec("a", 2, 12, 0.6), late];
        let m = latest_per_forecaster(&q, &records, ts(20, 0));
        assert_eq!(m["a"].probabilities[0], 0.6);
    }

    #[test]
    fn daily_latest_matches_pointwise_queries() {
        let q = question(None);
        let records = vec![
            rec("a", 3, 5, 0.1),
            rec("b", 1, 23, 0.2),
            rec("a", 1, 1, 0.3),
            rec("b", 3, 5, 0.4),
            rec("b", 3, 5, 0.5),
            rec("c", 9, 0, 0.6),
        ];
        for (day, map) in daily_latest(&q, &records) {
            let direct = latest_per_forecaster(&q, &records, day_end(day));
            let a: Vec<_> = map.iter().map(|(k, v)| (*k, v.probabilities[0])).collect();
            let b: Vec<_> = direct.iter().map(|(k, v)| (*k, v.probabilities[0])).collect();
            assert_eq!(a, b, "day {day}");
        }
    }

    #[test]
    fn cold_start_stats() {
        let archive = Archive::build(&[], &[]);
        let s = forecaster_stats("x", &archive, d(5));
        assert_eq!(s.mean_past_brier, 0.5);
        assert_eq!(s.prior_forecast_count, 0);
    }

    #[test]
    fn perfect_forecaster_has_zero_past_brier() {
        let q = question(Some(0));
        let records = vec![rec("a", 1, 0, 1.0)];
        let archive = Archive::build(&[q], &records);
        let s = forecaster_stats("a", &archive, d(11));
        assert_eq!(s.mean_past_brier, 0.0);
        assert_eq!(s.prior_forecast_count, 1);
        // Not yet resolved on its close date.
        assert!(!forecaster_stats("a", &archive, d(10)).has_history());
    }

    #[test]
    fn past_brier_is_pooled_over_days() {
        // Question 1: days 1..=3, outcome 0. Forecast 0.5 on day 1, 1.0 on day 3.
        // Daily briers: 0.5, 0.5, 0.0.
        let q1 = Question::new(
            "q1", "", "", d(1), d(3),
            vec!["y".into(), "n".into()], false, Some(0),
        )
        .unwrap();
        // Question 2: days 2..=3, outcome 1. Forecast (0.8, 0.2) on day 2.
        // Daily briers: 2*0.64 = 1.28 twice.
        let q2 = Question::new(
            "q2", "", "", d(2), d(3),
            vec!["y".into(), "n".into()], false, Some(1),
        )
        .unwrap();
        let records = vec![
            ForecastRecord::new("q1", "a", ts(1, 9), vec![0.5, 0.5], 2).unwrap(),
            ForecastRecord::new("q1", "a", ts(3, 9), vec![1.0, 0.0], 2).unwrap(),
            ForecastRecord::new("q2", "a", ts(2, 9), vec![0.8, 0.2], 2).unwrap(),
        ];
        let archive = Archive::build(&[q1, q2], &records);
        let s = forecaster_stats("a", &archive, d(4));
        let expected = (0.5 + 0.5 + 0.0 + 1.28 + 1.28) / 5.0;
        assert!((s.mean_past_brier - expected).abs() < 1e-12);
        assert_eq!(s.prior_forecast_count, 3);
    }

    #[test]
    fn question_invariants() {
        let bad = Question::new("q", "", "", d(2), d(1), vec!["a".into(), "b".into()], false, None);
        assert!(bad.is_err());
        let bad = Question::new("q", "", "", d(1), d(2), vec!["a".into()], false, None);
        assert!(bad.is_err());
        let bad = Question::new("q", "", "", d(1), d(2), vec!["a".into(), "b".into()], false, Some(2));
        assert!(bad.is_err());
    }

    #[test]
    fn questions_csv_round_trip() {
        let q = question(Some(1));
        let mut buf = Vec::new();
        write_questions(&mut buf, std::slice::from_ref(&q)).unwrap();
        let back = parse_questions(buf.as_slice()).unwrap();
        assert_eq!(back, vec![q]);
    }
}
