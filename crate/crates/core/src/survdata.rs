//! Right-censored and longitudinal survival data, CSV ingestion and checks.
//!
//! Canonical CSV schema: a header row `time,status,x1,...,xp`, one subject
//! per row. Longitudinal files add `id` and `obs_time` and hold one row per
//! (subject, measurement).

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One subject: covariates `x_i`, observed time `y_i`, event indicator `δ_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub covariates: Vec<f64>,
    pub time: f64,
    /// `true` when the event was observed (status 1), `false` when censored.
    pub event: bool,
}

impl SurvivalRecord {
    pub fn new(covariates: Vec<f64>, time: f64, event: bool) -> Self {
        Self {
            covariates,
            time,
            event,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDataset {
    records: Vec<SurvivalRecord>,
    feature_names: Vec<String>,
}

impl SurvivalDataset {
    /// Builds a dataset, checking that every record shares the same `p`,
    /// that times are finite and nonnegative and covariates finite.
    ///
    /// Without explicit names, features are called `x1..xp`.
    pub fn new(records: Vec<SurvivalRecord>, feature_names: Option<Vec<String>>) -> Result<Self> {
        let p = match (&feature_names, records.first()) {
            (Some(names), _) => names.len(),
            (None, Some(r)) => r.covariates.len(),
            (None, None) => 0,
        };
        for (i, r) in records.iter().enumerate() {
            if r.covariates.len() != p {
                return Err(Error::Validation(format!(
                    "record {i} has {} covariates, expected {p}",
                    r.covariates.len()
                )));
            }
            if !r.time.is_finite() || r.time < 0.0 {
                return Err(Error::Validation(format!("record {i} has invalid time {}", r.time)));
            }
            if let Some(k) = r.covariates.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "record {i} has a non-finite value in covariate {}",
                    k + 1
                )));
            }
        }
        let feature_names = feature_names.unwrap_or_else(|| default_names(p));
        Ok(Self { records, feature_names })
    }

    pub fn records(&self) -> &[SurvivalRecord] {
        &self.records
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn p(&self) -> usize {
        self.feature_names.len()
    }

    pub fn event_count(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    pub fn censored_fraction(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        1.0 - self.event_count() as f64 / self.n() as f64
    }

    /// Sorted death times, duplicates kept.
    pub fn death_times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.records.iter().filter(|r| r.event).map(|r| r.time).collect();
        t.sort_by(f64::total_cmp);
        t
    }

    /// Same dataset with a different record order.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            records: order.iter().map(|&i| self.records[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Copy with each covariate column transformed by `f(column, value)`.
    pub fn map_covariates(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        let records = self
            .records
            .iter()
            .map(|r| SurvivalRecord {
                covariates: r.covariates.iter().enumerate().map(|(k, &v)| f(k, v)).collect(),
                ..r.clone()
            })
            .collect();
        Self {
            records,
            feature_names: self.feature_names.clone(),
        }
    }
}

fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|k| format!("x{k}")).collect()
}

/// One covariate measurement of a longitudinal subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub time: f64,
    pub covariates: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    /// Strictly increasing in time, starting at 0.
    pub measurements: Vec<Measurement>,
    pub time: f64,
    pub event: bool,
}

impl Subject {
    /// Covariates of the most recent measurement taken at or before `t`.
    pub fn covariates_at(&self, t: f64) -> Option<&[f64]> {
        let idx = self.measurements.partition_point(|m| m.time <= t);
        idx.checked_sub(1).map(|j| self.measurements[j].covariates.as_slice())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalDataset {
    subjects: Vec<Subject>,
    feature_names: Vec<String>,
}

impl LongitudinalDataset {
    pub fn new(subjects: Vec<Subject>, feature_names: Option<Vec<String>>) -> Result<Self> {
        let p = match (&feature_names, subjects.first()) {
            (Some(names), _) => names.len(),
            (None, Some(s)) => s.measurements.first().map_or(0, |m| m.covariates.len()),
            (None, None) => 0,
        };
        for s in &subjects {
            let id = &s.id;
            if !s.time.is_finite() || s.time < 0.0 {
                return Err(Error::Validation(format!("subject {id} has invalid time {}", s.time)));
            }
            let first = s
                .measurements
                .first()
                .ok_or_else(|| Error::Validation(format!("subject {id} has no measurements")))?;
            if first.time != 0.0 {
                return Err(Error::Validation(format!(
                    "subject {id}: first measurement at {} instead of 0",
                    first.time
                )));
            }
            for w in s.measurements.windows(2) {
                if w[1].time <= w[0].time {
                    return Err(Error::Validation(format!(
                        "subject {id}: measurement times not strictly increasing"
                    )));
                }
            }
            if s.measurements.last().is_some_and(|m| m.time > s.time) {
                return Err(Error::Validation(format!(
                    "subject {id}: measurement after terminal time {}",
                    s.time
                )));
            }
            for m in &s.measurements {
                if m.covariates.len() != p {
                    return Err(Error::Validation(format!(
                        "subject {id}: measurement has {} covariates, expected {p}",
                        m.covariates.len()
                    )));
                }
                if m.covariates.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Validation(format!("subject {id}: non-finite covariate")));
                }
            }
        }
        let feature_names = feature_names.unwrap_or_else(|| default_names(p));
        Ok(Self {
            subjects,
            feature_names,
        })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    pub fn p(&self) -> usize {
        self.feature_names.len()
    }

    /// Static dataset using each subject's time-0 covariates.
    pub fn baseline(&self) -> SurvivalDataset {
        let records = self
            .subjects
            .iter()
            .map(|s| SurvivalRecord::new(s.measurements[0].covariates.clone(), s.time, s.event))
            .collect();
        SurvivalDataset {
            records,
            feature_names: self.feature_names.clone(),
        }
    }
}

/// Which header columns hold time, status and covariates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub time: String,
    pub status: String,
    /// `None` takes every other column, in header order.
    pub covariates: Option<Vec<String>>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            time: "time".into(),
            status: "status".into(),
            covariates: None,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &ColumnMapping) -> Result<SurvivalDataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &ColumnMapping) -> Result<SurvivalDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Validation(format!("missing column '{name}'")))
    };
    let time_col = find(&schema.time)?;
    let status_col = find(&schema.status)?;
    let cov_cols: Vec<usize> = match &schema.covariates {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|&c| c != time_col && c != status_col)
            .collect(),
    };
    if cov_cols.is_empty() {
        return Err(Error::Validation("no covariate columns".into()));
    }

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        // header is line 1
        let line = i + 2;
        let cell = |c: usize| parse_cell(&row, c, line, &headers[c]);
        let time = cell(time_col)?;
        let event = parse_status(cell(status_col)?, line, &headers[status_col])?;
        let covariates = cov_cols.iter().map(|&c| cell(c)).collect::<Result<Vec<_>>>()?;
        records.push(SurvivalRecord::new(covariates, time, event));
    }
    let names = cov_cols.iter().map(|&c| headers[c].clone()).collect();
    SurvivalDataset::new(records, Some(names))
}

fn parse_cell(row: &csv::StringRecord, col: usize, line: usize, name: &str) -> Result<f64> {
    let raw = row.get(col).ok_or_else(|| Error::Parse {
        row: line,
        column: name.to_owned(),
        message: "missing cell".into(),
    })?;
    if raw.is_empty() {
        return Err(Error::Parse {
            row: line,
            column: name.to_owned(),
            message: "empty cell".into(),
        });
    }
    raw.parse::<f64>().map_err(|e| Error::Parse {
        row: line,
        column: name.to_owned(),
        message: format!("'{raw}': {e}"),
    })
}

fn parse_status(v: f64, line: usize, name: &str) -> Result<bool> {
    if v == 1.0 {
        Ok(true)
    } else if v == 0.0 {
        Ok(false)
    } else {
        Err(Error::Validation(format!(
            "row {line}, column '{name}': status must be 0 or 1, got {v}"
        )))
    }
}

pub fn write_csv<W: Write>(dataset: &SurvivalDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["time".to_owned(), "status".to_owned()];
    header.extend(dataset.feature_names().iter().cloned());
    w.write_record(&header)?;
    for r in dataset.records() {
        let mut row = vec![fmt_f64(r.time), status_str(r.event).to_owned()];
        row.extend(r.covariates.iter().map(|&v| fmt_f64(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(dataset: &SurvivalDataset, path: impl AsRef<Path>) -> Result<()> {
    write_csv(dataset, std::fs::File::create(path)?)
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn status_str(event: bool) -> &'static str {
    if event {
        "1"
    } else {
        "0"
    }
}

pub fn write_longitudinal_csv<W: Write>(dataset: &LongitudinalDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["id", "obs_time", "time", "status"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(dataset.feature_names().iter().cloned());
    w.write_record(&header)?;
    for s in dataset.subjects() {
        for m in &s.measurements {
            let mut row = vec![
                s.id.clone(),
                fmt_f64(m.time),
                fmt_f64(s.time),
                status_str(s.event).to_owned(),
            ];
            row.extend(m.covariates.iter().map(|&v| fmt_f64(v)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_longitudinal_csv<R: Read>(reader: R) -> Result<LongitudinalDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Validation(format!("missing column '{name}'")))
    };
    let id_col = find("id")?;
    let obs_col = find("obs_time")?;
    let time_col = find("time")?;
    let status_col = find("status")?;
    let cov_cols: Vec<usize> = (0..headers.len())
        .filter(|c| ![id_col, obs_col, time_col, status_col].contains(c))
        .collect();

    // subjects keep the order of their first appearance
    let mut order: Vec<String> = Vec::new();
    let mut by_id: BTreeMap<String, Subject> = BTreeMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let cell = |c: usize| parse_cell(&row, c, line, &headers[c]);
        let id = row.get(id_col).unwrap_or_default().to_owned();
        let obs_time = cell(obs_col)?;
        let time = cell(time_col)?;
        let event = parse_status(cell(status_col)?, line, &headers[status_col])?;
        let covariates = cov_cols.iter().map(|&c| cell(c)).collect::<Result<Vec<_>>>()?;
        let subject = by_id.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Subject {
                id: id.clone(),
                measurements: Vec::new(),
                time,
                event,
            }
        });
        if subject.time != time || subject.event != event {
            return Err(Error::Validation(format!(
                "row {line}: subject {id} has inconsistent time/status"
            )));
        }
        subject.measurements.push(Measurement {
            time: obs_time,
            covariates,
        });
    }
    let subjects = order
        .into_iter()
        .map(|id| by_id.remove(&id).expect("subject recorded in order"))
        .collect();
    let names = cov_cols.iter().map(|&c| headers[c].clone()).collect();
    LongitudinalDataset::new(subjects, Some(names))
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataWarning {
    /// Sizes of each group of tied death times.
    TiedDeathTimes {
        group_sizes: Vec<usize>,
    },
    ZeroVariance {
        column: String,
    },
    AllCensored,
}

impl fmt::Display for DataWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataWarning::TiedDeathTimes { group_sizes } => {
                let groups = group_sizes.len();
                let sizes: Vec<String> = group_sizes.iter().map(|s| s.to_string()).collect();
                if groups == 1 {
                    write!(f, "tied death times: 1 group of size {}", sizes[0])
                } else {
                    write!(f, "tied death times: {groups} groups of sizes {}", sizes.join(", "))
                }
            }
            DataWarning::ZeroVariance { column } => {
                write!(f, "zero-variance covariate column '{column}'")
            }
            DataWarning::AllCensored => write!(f, "all records are censored"),
        }
    }
}

pub fn validate(dataset: &SurvivalDataset) -> Vec<DataWarning> {
    let mut warnings = Vec::new();

    let deaths = dataset.death_times();
    let mut group_sizes = Vec::new();
    let mut i = 0;
    while i < deaths.len() {
        let mut j = i + 1;
        while j < deaths.len() && deaths[j] == deaths[i] {
            j += 1;
        }
        if j - i > 1 {
            group_sizes.push(j - i);
        }
        i = j;
    }
    if !group_sizes.is_empty() {
        warnings.push(DataWarning::TiedDeathTimes { group_sizes });
    }

    if dataset.n() > 0 {
        for (k, name) in dataset.feature_names().iter().enumerate() {
            let first = dataset.records()[0].covariates[k];
            if dataset.records().iter().all(|r| r.covariates[k] == first) {
                warnings.push(DataWarning::ZeroVariance { column: name.clone() });
            }
        }
    }

    if dataset.event_count() == 0 {
        warnings.push(DataWarning::AllCensored);
    }
    warnings
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<SurvivalDataset> {
        read_csv(s.as_bytes(), &ColumnMapping::default())
    }

    #[test]
    fn single_row() {
        let ds = parse("time,status,x1\n1.0,1,0.5").unwrap();
        assert_eq!(ds.n(), 1);
        assert_eq!(ds.p(), 1);
        assert_eq!(ds.records()[0], SurvivalRecord::new(vec![0.5], 1.0, true));
    }

    #[test]
    fn status_two_rejected() {
        let err = parse("time,status,x1\n1.0,2,0.5").unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn non_numeric_cell_names_row_and_column() {
        let err = parse("time,status,x1\n1.0,1,0.5\n2.0,0,abc").unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "x1");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_cell_is_parse_error() {
        let err = parse("time,status,x1\n1.0,1,").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn scientific_notation_and_column_order() {
        let ds = parse("x2,time,x1,status\n1e-3,2.5E1,-4,0").unwrap();
        assert_eq!(ds.feature_names(), ["x2", "x1"]);
        assert_eq!(ds.records()[0], SurvivalRecord::new(vec![1e-3, -4.0], 25.0, false));
    }

    #[test]
    fn explicit_covariate_selection() {
        let schema = ColumnMapping {
            time: "t".into(),
            status: "d".into(),
            covariates: Some(vec!["b".into()]),
        };
        let ds = read_csv("a,t,d,b\n9,1,1,3".as_bytes(), &schema).unwrap();
        assert_eq!(ds.p(), 1);
        assert_eq!(ds.records()[0].covariates, vec![3.0]);
    }

    #[test]
    fn negative_time_rejected() {
        assert!(parse("time,status,x1\n-1,1,0").is_err());
    }

    #[test]
    fn tie_warning() {
        let ds = parse("time,status,x1\n1,1,0\n1,1,1").unwrap();
        let w = validate(&ds);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].to_string(), "tied death times: 1 group of size 2");
    }

    #[test]
    fn censored_ties_are_not_death_ties() {
        let ds = parse("time,status,x1\n1,1,0\n1,0,1").unwrap();
        assert!(validate(&ds).is_empty());
    }

    #[test]
    fn zero_variance_and_all_censored() {
        let ds = parse("time,status,x1,x2\n1,0,3,1\n2,0,3,2").unwrap();
        let w = validate(&ds);
        assert!(w.contains(&DataWarning::ZeroVariance { column: "x1".into() }));
        assert!(w.contains(&DataWarning::AllCensored));
    }

    #[test]
    fn validate_does_not_mutate() {
        let ds = parse("time,status,x1\n1,1,0\n1,1,1").unwrap();
        let before = ds.clone();
        let _ = validate(&ds);
        assert_eq!(ds, before);
    }

    #[test]
    fn covariates_at_uses_closed_inequality() {
        let s = Subject {
            id: "a".into(),
            measurements: vec![
                Measurement {
                    time: 0.0,
                    covariates: vec![1.0],
                },
                Measurement {
                    time: 1.0,
                    covariates: vec![2.0],
                },
            ],
            time: 3.0,
            event: true,
        };
        assert_eq!(s.covariates_at(0.5), Some(&[1.0][..]));
        assert_eq!(s.covariates_at(1.0), Some(&[2.0][..]));
        assert_eq!(s.covariates_at(-0.1), None);
    }

    #[test]
    fn longitudinal_round_trip() {
        let csv = "id,obs_time,time,status,x1\na,0,2.5,1,1\na,1,2.5,1,2\nb,0,0.7,0,3\n";
        let ds = read_longitudinal_csv(csv.as_bytes()).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.subjects()[0].measurements.len(), 2);
        let mut out = Vec::new();
        write_longitudinal_csv(&ds, &mut out).unwrap();
        let again = read_longitudinal_csv(out.as_slice()).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn longitudinal_requires_time_zero() {
        let csv = "id,obs_time,time,status,x1\na,0.5,2.5,1,1\n";
        assert!(read_longitudinal_csv(csv.as_bytes()).is_err());
    }

    #[test]
    fn longitudinal_rejects_late_measurement() {
        let csv = "id,obs_time,time,status,x1\na,0,2.5,1,1\na,3,2.5,1,1\n";
        assert!(read_longitudinal_csv(csv.as_bytes()).is_err());
    }
}
