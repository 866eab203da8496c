//! Harrell's concordance index and curve-based risk scores.
//!
//! All risk scores are oriented so that higher means an earlier expected
//! death. Tied risks within a comparable pair count as discordant.

use serde::{Deserialize, Serialize};

use crate::curves::SurvivalCurve;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskProvenance {
    LinearPredictor,
    OneMinusMidpointSurvival,
    NegativeCurveArea,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskScores {
    pub provenance: RiskProvenance,
    pub values: Vec<f64>,
}

impl RiskScores {
    pub fn new(provenance: RiskProvenance, values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("risk score {i} is not finite")));
        }
        Ok(Self { provenance, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Concordant comparable pairs over comparable pairs, where `(i', i)` is
/// comparable when `y_i' < y_i` and `i'` died.
pub fn c_index(times: &[f64], events: &[bool], risks: &[f64]) -> Result<f64> {
    if times.len() != events.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            got: events.len(),
        });
    }
    if times.len() != risks.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            got: risks.len(),
        });
    }
    let (concordant, comparable) = concordance_counts(times, events, risks);
    if comparable == 0 {
        return Err(Error::UndefinedMetric("no comparable pairs".into()));
    }
    Ok(concordant as f64 / comparable as f64)
}

/// `(concordant, comparable)` pair counts.
pub fn concordance_counts(times: &[f64], events: &[bool], risks: &[f64]) -> (u64, u64) {
    let mut concordant = 0u64;
    let mut comparable = 0u64;
    for (j, (&tj, &dj)) in times.iter().zip(events).enumerate() {
        if !dj {
            continue;
        }
        for (i, &ti) in times.iter().enumerate() {
            if ti > tj {
                comparable += 1;
                if risks[j] > risks[i] {
                    concordant += 1;
                }
            }
        }
    }
    (concordant, comparable)
}

/// Median of the death times (mean of the middle pair for even counts).
pub fn median_death_time(death_times: &[f64]) -> Result<f64> {
    if death_times.is_empty() {
        return Err(Error::NoEvents);
    }
    let mut t = death_times.to_vec();
    t.sort_by(f64::total_cmp);
    let m = t.len() / 2;
    Ok(if t.len() % 2 == 1 {
        t[m]
    } else {
        0.5 * (t[m - 1] + t[m])
    })
}

/// `1 - S(t_mid)`.
pub fn risk_from_midpoint(curve: &SurvivalCurve, t_mid: f64) -> f64 {
    1.0 - curve.at(t_mid)
}

/// Minus the area under the step curve from 0 to the last death time.
pub fn risk_from_area(curve: &SurvivalCurve) -> f64 {
    let mut prev_t = 0.0;
    let mut prev_s = 1.0;
    let mut area = 0.0;
    for (&t, &s) in curve.death_times.iter().zip(&curve.survival) {
        area += prev_s * (t - prev_t);
        prev_t = t;
        prev_s = s;
    }
    -area
}

/// Linear-predictor risks `x_iᵀβ`.
pub fn linear_predictor_risks(rows: &[Vec<f64>], beta: &[f64]) -> Result<RiskScores> {
    let values = rows
        .iter()
        .map(|x| {
            if x.len() != beta.len() {
                return Err(Error::DimensionMismatch {
                    expected: beta.len(),
                    got: x.len(),
                });
            }
            Ok(x.iter().zip(beta).map(|(a, b)| a * b).sum())
        })
        .collect::<Result<Vec<f64>>>()?;
    RiskScores::new(RiskProvenance::LinearPredictor, values)
}

pub fn midpoint_risks(curves: &[SurvivalCurve], t_mid: f64) -> Result<RiskScores> {
    RiskScores::new(
        RiskProvenance::OneMinusMidpointSurvival,
        curves.iter().map(|c| risk_from_midpoint(c, t_mid)).collect(),
    )
}

pub fn area_risks(curves: &[SurvivalCurve]) -> Result<RiskScores> {
    RiskScores::new(
        RiskProvenance::NegativeCurveArea,
        curves.iter().map(risk_from_area).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(times: &[f64], surv: &[f64]) -> SurvivalCurve {
        SurvivalCurve::from_survival(times.to_vec(), surv.to_vec())
    }

    #[test]
    fn perfect_and_reversed() {
        let t = [1.0, 2.0, 3.0];
        let d = [true; 3];
        assert_eq!(c_index(&t, &d, &[3.0, 2.0, 1.0]).unwrap(), 1.0);
        assert_eq!(c_index(&t, &d, &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn hand_example() {
        let c = c_index(&[1.0, 2.0, 3.0, 4.0], &[true, false, true, true], &[4.0, 3.0, 1.0, 2.0]).unwrap();
        assert_eq!(c, 0.75);
    }

    #[test]
    fn ties_count_zero() {
        assert_eq!(c_index(&[1.0, 2.0], &[true, true], &[1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn no_comparable_pairs() {
        assert!(matches!(
            c_index(&[1.0, 2.0], &[false, true], &[0.0, 1.0]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(c_index(&[1.0], &[true], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn midpoint_examples() {
        let times = [1.0, 2.0, 3.0];
        assert_eq!(risk_from_midpoint(&curve(&times, &[1.0, 1.0, 1.0]), 2.0), 0.0);
        assert_eq!(risk_from_midpoint(&curve(&times, &[0.0, 0.0, 0.0]), 2.0), 1.0);
        let a = curve(&times, &[0.9, 0.8, 0.7]);
        let b = curve(&times, &[0.7, 0.6, 0.5]);
        assert!(risk_from_midpoint(&b, 2.0) > risk_from_midpoint(&a, 2.0));
    }

    #[test]
    fn area_examples() {
        assert_eq!(risk_from_area(&curve(&[1.0, 2.0, 4.0], &[1.0, 1.0, 1.0])), -4.0);
        assert_eq!(risk_from_area(&curve(&[1.0, 2.0], &[0.0, 0.0])), -1.0);
        let hi = curve(&[1.0, 2.0, 3.0], &[0.9, 0.8, 0.7]);
        let lo = curve(&[1.0, 2.0, 3.0], &[0.9, 0.7, 0.7]);
        assert!(risk_from_area(&lo) > risk_from_area(&hi));
    }

    #[test]
    fn median() {
        assert_eq!(median_death_time(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median_death_time(&[4.0, 1.0, 2.0, 3.0]).unwrap(), 2.5);
        assert!(median_death_time(&[]).is_err());
    }

    #[test]
    fn non_finite_scores_rejected() {
        assert!(RiskScores::new(RiskProvenance::LinearPredictor, vec![f64::NAN]).is_err());
    }
}
