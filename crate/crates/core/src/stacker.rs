//! Risk-set stacking: turns right-censored data into one binary
//! classification problem with a block ("stratum") per uncensored event.
//!
//! Strata are ordered by increasing death time, ties broken by record
//! index. Rows inside a stratum follow record order. Risk sets use the
//! closed inequality `y_j >= y_i`, so tied deaths and censorings at the
//! same time belong to each other's risk sets and every tied death gets
//! its own stratum.

use std::io::Write;
use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{streams, SimRng};
use crate::survdata::{fmt_f64, LongitudinalDataset, SurvivalDataset};

#[derive(Clone, Debug, PartialEq)]
pub struct RiskSet {
    /// Index of the uncensored record that defines the set.
    pub anchor: usize,
    pub death_time: f64,
    /// Every record with `time >= death_time`, in record order.
    pub members: Vec<usize>,
}

impl RiskSet {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackForm {
    /// 0/1 response, one indicator column per stratum in front of the covariates.
    Indicator,
    /// Covariates and response centered by their within-stratum means.
    Centered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumInfo {
    pub death_time: f64,
    /// Record (or subject) index of the event that anchors the stratum.
    pub anchor: usize,
    pub rows: Range<usize>,
    /// Response mean of the stratum before centering (`deaths / size`).
    pub alpha: f64,
    /// Mean of the raw covariate rows of the stratum.
    pub covariate_means: Vec<f64>,
    /// Number of response-1 rows.
    pub deaths: usize,
}

impl StratumInfo {
    pub fn size(&self) -> usize {
        self.rows.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StackedData {
    form: StackForm,
    /// Covariate block, `rows x p`. Centered per stratum in the centered form.
    covariates: DMatrix<f64>,
    response: Vec<f64>,
    stratum_of_row: Vec<usize>,
    /// Source record of each row.
    record_of_row: Vec<usize>,
    strata: Vec<StratumInfo>,
    feature_names: Vec<String>,
}

impl StackedData {
    pub fn form(&self) -> StackForm {
        self.form
    }

    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn n_strata(&self) -> usize {
        self.strata.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn covariate_row(&self, row: usize) -> Vec<f64> {
        self.covariates.row(row).iter().copied().collect()
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn stratum_of_row(&self) -> &[usize] {
        &self.stratum_of_row
    }

    pub fn record_of_row(&self) -> &[usize] {
        &self.record_of_row
    }

    pub fn strata(&self) -> &[StratumInfo] {
        &self.strata
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Full design matrix. Indicator form: `[indicators | covariates]` with
    /// one indicator column per stratum. Centered form: the covariate block.
    pub fn design(&self) -> DMatrix<f64> {
        match self.form {
            StackForm::Centered => self.covariates.clone(),
            StackForm::Indicator => {
                let m = self.n_strata();
                let p = self.p();
                let mut d = DMatrix::zeros(self.n_rows(), m + p);
                for (r, &q) in self.stratum_of_row.iter().enumerate() {
                    d[(r, q)] = 1.0;
                    for k in 0..p {
                        d[(r, m + k)] = self.covariates[(r, k)];
                    }
                }
                d
            }
        }
    }

    /// Row of the stratum's anchoring event (the response-1 row of the anchor).
    pub fn anchor_row(&self, stratum: usize) -> usize {
        let s = &self.strata[stratum];
        s.rows
            .clone()
            .find(|&r| self.record_of_row[r] == s.anchor)
            .expect("anchor is a member of its own stratum")
    }

    /// CSV export: `stratum,response,ind_1..ind_m,x_1..x_p`; the centered
    /// form omits the indicator columns. Strata are numbered from 1.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let m = self.n_strata();
        let p = self.p();
        let mut header = vec!["stratum".to_owned(), "response".to_owned()];
        if self.form == StackForm::Indicator {
            header.extend((1..=m).map(|q| format!("ind_{q}")));
        }
        header.extend((1..=p).map(|k| format!("x_{k}")));
        w.write_record(&header)?;
        for r in 0..self.n_rows() {
            let q = self.stratum_of_row[r];
            let mut row = vec![(q + 1).to_string(), fmt_f64(self.response[r])];
            if self.form == StackForm::Indicator {
                row.extend((0..m).map(|j| if j == q { "1" } else { "0" }.to_owned()));
            }
            row.extend((0..p).map(|k| fmt_f64(self.covariates[(r, k)])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn build_risk_sets(dataset: &SurvivalDataset) -> Result<Vec<RiskSet>> {
    let times: Vec<(f64, bool)> = dataset.records().iter().map(|r| (r.time, r.event)).collect();
    risk_sets_from_times(&times)
}

fn risk_sets_from_times(times: &[(f64, bool)]) -> Result<Vec<RiskSet>> {
    let mut anchors: Vec<usize> = (0..times.len()).filter(|&i| times[i].1).collect();
    if anchors.is_empty() {
        return Err(Error::NoEvents);
    }
    anchors.sort_by(|&a, &b| times[a].0.total_cmp(&times[b].0).then(a.cmp(&b)));
    Ok(anchors
        .into_iter()
        .map(|anchor| {
            let t = times[anchor].0;
            RiskSet {
                anchor,
                death_time: t,
                members: (0..times.len()).filter(|&j| times[j].0 >= t).collect(),
            }
        })
        .collect())
}

/// Indicator-form stack of a static dataset.
pub fn stack(dataset: &SurvivalDataset) -> Result<StackedData> {
    let sets = build_risk_sets(dataset)?;
    assemble(&sets, dataset.p(), dataset.feature_names(), |j, _| {
        Ok(&dataset.records()[j].covariates)
    })
}

/// Centered-form stack of a static dataset.
pub fn stack_centered(dataset: &SurvivalDataset) -> Result<StackedData> {
    Ok(center(&stack(dataset)?))
}

/// Stack of longitudinal data: each risk-set member contributes its most
/// recent measurement at or before the stratum's death time.
pub fn stack_time_varying(dataset: &LongitudinalDataset, form: StackForm) -> Result<StackedData> {
    let times: Vec<(f64, bool)> = dataset.subjects().iter().map(|s| (s.time, s.event)).collect();
    let sets = risk_sets_from_times(&times)?;
    let stacked = assemble(&sets, dataset.p(), dataset.feature_names(), |j, t| {
        let s = &dataset.subjects()[j];
        s.covariates_at(t)
            .ok_or_else(|| Error::Internal(format!("subject {} has no measurement at or before {t}", s.id)))
    })?;
    Ok(match form {
        StackForm::Indicator => stacked,
        StackForm::Centered => center(&stacked),
    })
}

fn assemble<'a>(
    sets: &[RiskSet],
    p: usize,
    names: &[String],
    covariates_of: impl Fn(usize, f64) -> Result<&'a [f64]>,
) -> Result<StackedData> {
    let n_rows: usize = sets.iter().map(RiskSet::size).sum();
    let mut x = DMatrix::zeros(n_rows, p);
    let mut response = Vec::with_capacity(n_rows);
    let mut stratum_of_row = Vec::with_capacity(n_rows);
    let mut record_of_row = Vec::with_capacity(n_rows);
    let mut strata = Vec::with_capacity(sets.len());

    let mut r = 0;
    for (q, set) in sets.iter().enumerate() {
        let start = r;
        for &j in &set.members {
            let xj = covariates_of(j, set.death_time)?;
            for k in 0..p {
                x[(r, k)] = xj[k];
            }
            response.push(if j == set.anchor { 1.0 } else { 0.0 });
            stratum_of_row.push(q);
            record_of_row.push(j);
            r += 1;
        }
        strata.push(StratumInfo {
            death_time: set.death_time,
            anchor: set.anchor,
            rows: start..r,
            alpha: 0.0,
            covariate_means: Vec::new(),
            deaths: 0,
        });
    }
    let mut out = StackedData {
        form: StackForm::Indicator,
        covariates: x,
        response,
        stratum_of_row,
        record_of_row,
        strata,
        feature_names: names.to_vec(),
    };
    refresh_metadata(&mut out);
    Ok(out)
}

/// Recomputes sizes, response means and covariate means of every stratum
/// from the (uncentered) rows.
fn refresh_metadata(data: &mut StackedData) {
    let p = data.p();
    for s in data.strata.iter_mut() {
        let n = s.rows.len() as f64;
        let deaths = s.rows.clone().filter(|&r| data.response[r] == 1.0).count();
        s.deaths = deaths;
        s.alpha = deaths as f64 / n;
        s.covariate_means = (0..p)
            .map(|k| s.rows.clone().map(|r| data.covariates[(r, k)]).sum::<f64>() / n)
            .collect();
    }
}

fn center(data: &StackedData) -> StackedData {
    let mut out = data.clone();
    if data.form == StackForm::Centered {
        return out;
    }
    for s in &data.strata {
        for r in s.rows.clone() {
            for (k, m) in s.covariate_means.iter().enumerate() {
                out.covariates[(r, k)] -= m;
            }
            out.response[r] -= s.alpha;
        }
    }
    out.form = StackForm::Centered;
    out
}

/// Keeps every response-1 row and each response-0 row independently with
/// probability `keep_fraction`. One uniform is drawn per response-0 row in
/// row order from stream `streams::SUBSAMPLE` of `seed`.
pub fn subsample_controls(stacked: &StackedData, keep_fraction: f64, seed: u64) -> Result<StackedData> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep_fraction must lie in (0, 1], got {keep_fraction}"
        )));
    }
    if stacked.form != StackForm::Indicator {
        return Err(Error::InvalidArgument(
            "control subsampling needs indicator-form stacked data".into(),
        ));
    }
    let mut rng = SimRng::new(seed, streams::SUBSAMPLE);
    let keep: Vec<usize> = (0..stacked.n_rows())
        .filter(|&r| stacked.response[r] == 1.0 || rng.uniform() < keep_fraction)
        .collect();

    let p = stacked.p();
    let mut x = DMatrix::zeros(keep.len(), p);
    for (new, &old) in keep.iter().enumerate() {
        for k in 0..p {
            x[(new, k)] = stacked.covariates[(old, k)];
        }
    }
    let stratum_of_row: Vec<usize> = keep.iter().map(|&r| stacked.stratum_of_row[r]).collect();
    let mut strata = stacked.strata.clone();
    let mut start = 0;
    for (q, s) in strata.iter_mut().enumerate() {
        let len = stratum_of_row[start..].iter().take_while(|&&sq| sq == q).count();
        s.rows = start..start + len;
        start += len;
    }
    let mut out = StackedData {
        form: StackForm::Indicator,
        covariates: x,
        response: keep.iter().map(|&r| stacked.response[r]).collect(),
        stratum_of_row,
        record_of_row: keep.iter().map(|&r| stacked.record_of_row[r]).collect(),
        strata,
        feature_names: stacked.feature_names.clone(),
    };
    refresh_metadata(&mut out);
    Ok(out)
}
