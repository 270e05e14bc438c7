//! Right-censored lifetime records, CSV ingestion and descriptive summaries.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::mean_sd;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CovariateKind {
    Categorical { levels: Vec<String> },
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Covariate {
    pub name: String,
    #[serde(flatten)]
    pub kind: CovariateKind,
}

impl Covariate {
    pub fn categorical<S: Into<String>>(name: &str, levels: impl IntoIterator<Item = S>) -> Self {
        Covariate {
            name: name.to_string(),
            kind: CovariateKind::Categorical {
                levels: levels.into_iter().map(Into::into).collect(),
            },
        }
    }

    pub fn continuous(name: &str) -> Self {
        Covariate {
            name: name.to_string(),
            kind: CovariateKind::Continuous,
        }
    }

    pub fn levels(&self) -> Option<&[String]> {
        match &self.kind {
            CovariateKind::Categorical { levels } => Some(levels),
            CovariateKind::Continuous => None,
        }
    }
}

/// Ordered covariate inventory. Names are unique and every categorical
/// variable carries a non-empty, duplicate-free level list. The first level
/// is the reference level for dummy coding.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct CovariateSchema {
    covariates: Vec<Covariate>,
}

impl CovariateSchema {
    pub fn new(covariates: Vec<Covariate>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for c in &covariates {
            if c.name.is_empty() {
                return Err(Error::usage("covariate name must not be empty"));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::usage(format!("duplicate covariate name '{}'", c.name)));
            }
            if let CovariateKind::Categorical { levels } = &c.kind {
                if levels.is_empty() {
                    return Err(Error::usage(format!("categorical '{}' has no levels", c.name)));
                }
                let distinct: BTreeSet<_> = levels.iter().collect();
                if distinct.len() != levels.len() {
                    return Err(Error::usage(format!("categorical '{}' repeats a level", c.name)));
                }
            }
        }
        Ok(CovariateSchema { covariates })
    }

    pub fn len(&self) -> usize {
        self.covariates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Covariate> {
        self.covariates.iter()
    }

    pub fn get(&self, idx: usize) -> &Covariate {
        &self.covariates[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c.name == name)
    }

    /// Index and level list of a categorical variable, or a usage error.
    pub fn categorical(&self, name: &str) -> Result<(usize, &[String])> {
        let idx = self
            .index_of(name)
            .ok_or_else(|| Error::usage(format!("unknown variable '{name}'")))?;
        match self.covariates[idx].levels() {
            Some(levels) => Ok((idx, levels)),
            None => Err(Error::usage(format!("variable '{name}' is continuous, not categorical"))),
        }
    }
}

/// A covariate cell: level index into the schema's level list, or a number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovariateValue {
    Level(usize),
    Number(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalRecord {
    pub duration: f64,
    /// `true` when the death was observed, `false` when right-censored.
    pub event: bool,
    pub covariates: Vec<CovariateValue>,
}

impl SurvivalRecord {
    pub fn new(duration: f64, event: bool) -> Self {
        SurvivalRecord {
            duration,
            event,
            covariates: Vec::new(),
        }
    }

    pub fn with_covariates(duration: f64, event: bool, covariates: Vec<CovariateValue>) -> Self {
        SurvivalRecord {
            duration,
            event,
            covariates,
        }
    }
}

/// Immutable collection of records conforming to one schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    schema: CovariateSchema,
    records: Vec<SurvivalRecord>,
    time_column: String,
    event_column: String,
}

fn check_record(schema: &CovariateSchema, r: &SurvivalRecord) -> std::result::Result<(), String> {
    if !(r.duration >= 0.0) || !r.duration.is_finite() {
        return Err(format!("duration {} is not a finite non-negative number", r.duration));
    }
    if r.covariates.len() != schema.len() {
        return Err(format!(
            "record has {} covariates, schema declares {}",
            r.covariates.len(),
            schema.len()
        ));
    }
    for (c, v) in schema.iter().zip(&r.covariates) {
        match (&c.kind, v) {
            (CovariateKind::Categorical { levels }, CovariateValue::Level(i)) if *i < levels.len() => {}
            (CovariateKind::Continuous, CovariateValue::Number(x)) if x.is_finite() => {}
            _ => return Err(format!("value {v:?} does not conform to covariate '{}'", c.name)),
        }
    }
    Ok(())
}

impl Cohort {
    pub fn new(schema: CovariateSchema, records: Vec<SurvivalRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            check_record(&schema, r).map_err(|m| Error::data(format!("record {}: {m}", i + 1)))?;
        }
        Ok(Cohort {
            schema,
            records,
            time_column: "time".into(),
            event_column: "event".into(),
        })
    }

    /// Cohort without covariates built from parallel duration/event slices.
    pub fn from_durations(durations: &[f64], events: &[bool]) -> Result<Self> {
        if durations.len() != events.len() {
            return Err(Error::usage("durations and events differ in length"));
        }
        let records = durations
            .iter()
            .zip(events)
            .map(|(&d, &e)| SurvivalRecord::new(d, e))
            .collect();
        Cohort::new(CovariateSchema::default(), records)
    }

    pub fn with_column_names(mut self, time: &str, event: &str) -> Self {
        self.time_column = time.to_string();
        self.event_column = event.to_string();
        self
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn records(&self) -> &[SurvivalRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn time_column(&self) -> &str {
        &self.time_column
    }

    pub fn event_column(&self) -> &str {
        &self.event_column
    }

    pub fn durations(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.duration).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.event).collect()
    }

    pub fn event_count(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    /// Level index of every record for a categorical variable.
    pub fn level_indices(&self, variable: &str) -> Result<(Vec<usize>, Vec<String>)> {
        let (idx, levels) = self.schema.categorical(variable)?;
        let codes = self
            .records
            .iter()
            .map(|r| match r.covariates[idx] {
                CovariateValue::Level(l) => l,
                CovariateValue::Number(_) => unreachable!("schema checked at construction"),
            })
            .collect();
        Ok((codes, levels.to_vec()))
    }

    /// Same schema, different record subset.
    pub fn subset(&self, keep: impl Fn(&SurvivalRecord) -> bool) -> Cohort {
        Cohort {
            schema: self.schema.clone(),
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            time_column: self.time_column.clone(),
            event_column: self.event_column.clone(),
        }
    }

    pub fn mapped_durations(&self, f: impl Fn(f64) -> f64) -> Cohort {
        let mut out = self.clone();
        for r in &mut out.records {
            r.duration = f(r.duration);
        }
        out
    }
}

/// Partition a cohort by the levels of a categorical variable, in schema
/// level order. Empty levels yield empty sub-cohorts.
pub fn split_by_level(cohort: &Cohort, variable: &str) -> Result<Vec<(String, Cohort)>> {
    let (idx, levels) = cohort.schema.categorical(variable)?;
    let mut parts: Vec<(String, Cohort)> = levels
        .iter()
        .map(|l| {
            (
                l.clone(),
                Cohort {
                    schema: cohort.schema.clone(),
                    records: Vec::new(),
                    time_column: cohort.time_column.clone(),
                    event_column: cohort.event_column.clone(),
                },
            )
        })
        .collect();
    for r in &cohort.records {
        if let CovariateValue::Level(l) = r.covariates[idx] {
            parts[l].1.records.push(r.clone());
        }
    }
    Ok(parts)
}

// ---------------------------------------------------------------------------
// CSV

/// How a CSV column is interpreted. `Categorical(None)` infers the levels
/// from the data, ordered lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnKind {
    Categorical(Option<Vec<String>>),
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvConfig {
    pub duration_column: String,
    pub event_column: String,
    /// Columns with an explicit interpretation.
    pub columns: Vec<ColumnSpec>,
    /// When set, every other column becomes a covariate: categorical if any
    /// cell is non-numeric, continuous otherwise.
    pub include_unlisted: bool,
}

/// Categorical columns of the canonical organizational-network schema.
pub const CANONICAL_CATEGORICAL: [&str; 2] = ["form", "strategy"];

/// Column order of the canonical schema.
pub const CANONICAL_COLUMNS: [&str; 13] = [
    "age", "status", "form", "strategy", "profit", "mcost", "netbirths", "netdeaths",
    "nodebirths", "nodedeaths", "stock1", "stock2", "stock3",
];

impl CsvConfig {
    /// Duration and event columns only, no covariates.
    pub fn minimal(duration: &str, event: &str) -> Self {
        CsvConfig {
            duration_column: duration.into(),
            event_column: event.into(),
            columns: Vec::new(),
            include_unlisted: false,
        }
    }

    /// The canonical schema: `age`/`status`, `form` and `strategy`
    /// categorical, everything else inferred.
    pub fn canonical() -> Self {
        CsvConfig {
            duration_column: "age".into(),
            event_column: "status".into(),
            columns: CANONICAL_CATEGORICAL
                .iter()
                .map(|n| ColumnSpec {
                    name: n.to_string(),
                    kind: ColumnKind::Categorical(None),
                })
                .collect(),
            include_unlisted: true,
        }
    }
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Read a comma-separated file with a header row into a cohort.
pub fn load_csv<R: Read>(source: R, config: &CsvConfig) -> Result<Cohort> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::data(format!("cannot read header row: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.iter().all(|h| h.is_empty()) {
        return Err(Error::data("empty file: no header row"));
    }
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::usage(format!("missing column '{name}' in header")))
    };
    let time_col = column(&config.duration_column)?;
    let event_col = column(&config.event_column)?;

    let mut rows: Vec<(u64, csv::StringRecord)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Row {
                line,
                message: e.to_string(),
            }
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        rows.push((line, rec));
    }
    if rows.is_empty() {
        return Err(Error::data("empty file: no data rows"));
    }

    // Covariate columns: explicit specs first in header order, then unlisted.
    let mut covariate_cols: Vec<(usize, ColumnKind)> = Vec::new();
    for spec in &config.columns {
        if spec.name == config.duration_column || spec.name == config.event_column {
            return Err(Error::usage(format!("column '{}' cannot be both covariate and outcome", spec.name)));
        }
        if !headers.iter().any(|h| h == &spec.name) && config.include_unlisted {
            // listed as a hint only; absent columns are fine when inferring
            continue;
        }
        covariate_cols.push((column(&spec.name)?, spec.kind.clone()));
    }
    if config.include_unlisted {
        for i in 0..headers.len() {
            if i == time_col || i == event_col || covariate_cols.iter().any(|(c, _)| *c == i) {
                continue;
            }
            let numeric = rows.iter().all(|(_, r)| {
                let cell = r.get(i).unwrap_or("");
                cell.is_empty() || parse_number(cell).is_some()
            });
            let kind = if numeric {
                ColumnKind::Continuous
            } else {
                ColumnKind::Categorical(None)
            };
            covariate_cols.push((i, kind));
        }
    }
    covariate_cols.sort_by_key(|(i, _)| *i);

    let mut covariates = Vec::with_capacity(covariate_cols.len());
    for (i, kind) in &covariate_cols {
        let name = headers[*i].clone();
        covariates.push(match kind {
            ColumnKind::Continuous => Covariate::continuous(&name),
            ColumnKind::Categorical(Some(levels)) => Covariate::categorical(&name, levels.clone()),
            ColumnKind::Categorical(None) => {
                let levels: BTreeSet<&str> = rows
                    .iter()
                    .filter_map(|(_, r)| r.get(*i))
                    .filter(|c| !c.is_empty())
                    .collect();
                if levels.is_empty() {
                    return Err(Error::data(format!("column '{name}' has no values")));
                }
                Covariate::categorical(&name, levels)
            }
        });
    }
    let schema = CovariateSchema::new(covariates)?;
    let lookups: Vec<Option<HashMap<&str, usize>>> = schema
        .iter()
        .map(|c| {
            c.levels()
                .map(|ls| ls.iter().enumerate().map(|(k, l)| (l.as_str(), k)).collect())
        })
        .collect();

    let mut records = Vec::with_capacity(rows.len());
    for (line, row) in &rows {
        let row_err = |message: String| Error::Row {
            line: *line,
            message,
        };
        let cell = |i: usize| row.get(i).unwrap_or("");
        let raw_t = cell(time_col);
        let duration = parse_number(raw_t)
            .ok_or_else(|| row_err(format!("duration '{raw_t}' is not numeric")))?;
        if duration < 0.0 {
            return Err(row_err(format!("negative duration {duration}")));
        }
        let raw_e = cell(event_col);
        let event = match parse_number(raw_e) {
            Some(v) if v == 0.0 => false,
            Some(v) if v == 1.0 => true,
            _ => return Err(row_err(format!("event '{raw_e}' is not 0 or 1"))),
        };
        let mut values = Vec::with_capacity(schema.len());
        for (k, (col, _)) in covariate_cols.iter().enumerate() {
            let raw = cell(*col);
            let name = &schema.get(k).name;
            if raw.is_empty() {
                return Err(row_err(format!("missing value for '{name}'")));
            }
            values.push(match &lookups[k] {
                Some(map) => CovariateValue::Level(
                    *map.get(raw)
                        .ok_or_else(|| row_err(format!("'{raw}' is not a declared level of '{name}'")))?,
                ),
                None => CovariateValue::Number(
                    parse_number(raw).ok_or_else(|| row_err(format!("'{name}' value '{raw}' is not numeric")))?,
                ),
            });
        }
        records.push(SurvivalRecord::with_covariates(duration, event, values));
    }

    Ok(Cohort {
        schema,
        records,
        time_column: config.duration_column.clone(),
        event_column: config.event_column.clone(),
    })
}

/// Write a cohort as CSV. Numbers use the shortest representation that
/// parses back to the identical `f64`.
pub fn write_csv<W: Write>(cohort: &Cohort, sink: W) -> Result<()> {
    let io = |e: csv::Error| Error::data(format!("write failed: {e}"));
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec![cohort.time_column.clone(), cohort.event_column.clone()];
    header.extend(cohort.schema.iter().map(|c| c.name.clone()));
    w.write_record(&header).map_err(io)?;
    for r in &cohort.records {
        let mut row = vec![r.duration.to_string(), if r.event { "1" } else { "0" }.to_string()];
        for (c, v) in cohort.schema.iter().zip(&r.covariates) {
            row.push(match (v, c.levels()) {
                (CovariateValue::Level(l), Some(levels)) => levels[*l].clone(),
                (CovariateValue::Number(x), _) => x.to_string(),
                _ => unreachable!("schema checked at construction"),
            });
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::data(format!("write failed: {e}")))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Summaries

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelSummary {
    pub level: String,
    pub n: usize,
    pub percent: f64,
    pub censored: usize,
    pub censored_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoricalSummary {
    pub name: String,
    pub levels: Vec<LevelSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuousSummary {
    pub name: String,
    pub mean: f64,
    /// `None` when fewer than two records exist.
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryReport {
    pub n: usize,
    pub events: usize,
    pub censored: usize,
    pub censored_percent: f64,
    pub duration: ContinuousSummary,
    pub categorical: Vec<CategoricalSummary>,
    pub continuous: Vec<ContinuousSummary>,
}

fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

pub fn summarize(cohort: &Cohort) -> Result<SummaryReport> {
    let n = cohort.len();
    if n == 0 {
        return Err(Error::data("cannot summarize an empty cohort"));
    }
    let events = cohort.event_count();
    let (mean, sd) = mean_sd(&cohort.durations());
    let mut categorical = Vec::new();
    let mut continuous = Vec::new();
    for (k, c) in cohort.schema.iter().enumerate() {
        match &c.kind {
            CovariateKind::Categorical { levels } => {
                let mut counts = vec![(0usize, 0usize); levels.len()];
                for r in &cohort.records {
                    if let CovariateValue::Level(l) = r.covariates[k] {
                        counts[l].0 += 1;
                        if !r.event {
                            counts[l].1 += 1;
                        }
                    }
                }
                categorical.push(CategoricalSummary {
                    name: c.name.clone(),
                    levels: levels
                        .iter()
                        .zip(counts)
                        .map(|(level, (cnt, cens))| LevelSummary {
                            level: level.clone(),
                            n: cnt,
                            percent: percent(cnt, n),
                            censored: cens,
                            censored_percent: percent(cens, cnt),
                        })
                        .collect(),
                });
            }
            CovariateKind::Continuous => {
                let values: Vec<f64> = cohort
                    .records
                    .iter()
                    .map(|r| match r.covariates[k] {
                        CovariateValue::Number(x) => x,
                        CovariateValue::Level(_) => unreachable!("schema checked at construction"),
                    })
                    .collect();
                let (mean, sd) = mean_sd(&values);
                continuous.push(ContinuousSummary {
                    name: c.name.clone(),
                    mean,
                    sd,
                });
            }
        }
    }
    Ok(SummaryReport {
        n,
        events,
        censored: n - events,
        censored_percent: percent(n - events, n),
        duration: ContinuousSummary {
            name: cohort.time_column.clone(),
            mean,
            sd,
        },
        categorical,
        continuous,
    })
}
