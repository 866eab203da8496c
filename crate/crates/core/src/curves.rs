//! Survival curves from a learner trained on centered stacked data.
//!
//! For a new subject the conditional death probability in stratum `q` is
//! `α_q + f(x_new - M_q)`, clamped to [0, 1]; the curve is the running
//! product of `1 - h_q`. Bands use Greenwood's formula with the training
//! risk-set sizes and death counts, on the plain survival scale.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::learners::Predictor;
use crate::stacker::StratumInfo;
use crate::survdata::fmt_f64;

pub const DEFAULT_LEVEL: f64 = 0.95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenwoodBand {
    pub level: f64,
    pub std_errors: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Periods at or after a stratum with `n_j == y_j`, where the variance
    /// term is infinite.
    pub undefined: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub death_times: Vec<f64>,
    pub survival: Vec<f64>,
    /// Conditional death probabilities before clamping.
    pub hazards_raw: Vec<f64>,
    pub hazards: Vec<f64>,
    pub band: Option<GreenwoodBand>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalHazards {
    pub raw: Vec<f64>,
    pub clamped: Vec<f64>,
}

impl SurvivalCurve {
    /// Product-limit curve from per-period conditional death probabilities.
    pub fn from_hazards(death_times: Vec<f64>, hazards_raw: Vec<f64>) -> Self {
        let hazards: Vec<f64> = hazards_raw.iter().map(|h| h.clamp(0.0, 1.0)).collect();
        let mut s = 1.0;
        let survival = hazards
            .iter()
            .map(|h| {
                s *= 1.0 - h;
                s
            })
            .collect();
        Self {
            death_times,
            survival,
            hazards_raw,
            hazards,
            band: None,
        }
    }

    /// Curve from survival values; hazards are the implied `1 - S_q / S_{q-1}`.
    pub fn from_survival(death_times: Vec<f64>, survival: Vec<f64>) -> Self {
        let mut prev = 1.0;
        let hazards: Vec<f64> = survival
            .iter()
            .map(|&s| {
                let h = if prev > 0.0 { 1.0 - s / prev } else { 1.0 };
                prev = s;
                h
            })
            .collect();
        Self {
            death_times,
            survival,
            hazards_raw: hazards.clone(),
            hazards,
            band: None,
        }
    }

    pub fn len(&self) -> usize {
        self.death_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.death_times.is_empty()
    }

    /// Step value at `t`: 1 before the first death time, otherwise the value
    /// at the last death time `<= t`.
    pub fn at(&self, t: f64) -> f64 {
        let idx = self.death_times.partition_point(|&d| d <= t);
        if idx == 0 {
            1.0
        } else {
            self.survival[idx - 1]
        }
    }

    /// Fraction of periods whose raw hazard fell outside [0, 1].
    pub fn clamped_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let n = self.hazards_raw.iter().filter(|h| !(0.0..=1.0).contains(*h)).count();
        n as f64 / self.len() as f64
    }

    pub fn with_greenwood(mut self, at_risk: &[usize], deaths: &[usize], level: f64) -> Result<Self> {
        self.band = Some(greenwood_band(&self.survival, at_risk, deaths, level)?);
        Ok(self)
    }

    /// `t,survival,sd,lower,upper,hazard_raw,hazard_clamped`; band columns
    /// are empty when the curve has no band.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "survival", "sd", "lower", "upper", "hazard_raw", "hazard_clamped"])?;
        for q in 0..self.len() {
            let (sd, lo, hi) = match &self.band {
                Some(b) => (fmt_f64(b.std_errors[q]), fmt_f64(b.lower[q]), fmt_f64(b.upper[q])),
                None => (String::new(), String::new(), String::new()),
            };
            w.write_record([
                fmt_f64(self.death_times[q]),
                fmt_f64(self.survival[q]),
                sd,
                lo,
                hi,
                fmt_f64(self.hazards_raw[q]),
                fmt_f64(self.hazards[q]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn predict_conditional_hazards(
    model: &dyn Predictor,
    strata: &[StratumInfo],
    x_new: &[f64],
) -> Result<ConditionalHazards> {
    let mut raw = Vec::with_capacity(strata.len());
    let mut shifted = vec![0.0; x_new.len()];
    for s in strata {
        if s.covariate_means.len() != x_new.len() {
            return Err(Error::DimensionMismatch {
                expected: s.covariate_means.len(),
                got: x_new.len(),
            });
        }
        for (d, (x, m)) in shifted.iter_mut().zip(x_new.iter().zip(&s.covariate_means)) {
            *d = x - m;
        }
        raw.push(s.alpha + model.predict(&shifted));
    }
    let clamped = raw.iter().map(|h| h.clamp(0.0, 1.0)).collect();
    Ok(ConditionalHazards { raw, clamped })
}

/// Curve for `x_new` with a Greenwood band at the default 95% level.
pub fn predict_survival_curve(model: &dyn Predictor, strata: &[StratumInfo], x_new: &[f64]) -> Result<SurvivalCurve> {
    predict_survival_curve_at_level(model, strata, x_new, DEFAULT_LEVEL)
}

pub fn predict_survival_curve_at_level(
    model: &dyn Predictor,
    strata: &[StratumInfo],
    x_new: &[f64],
    level: f64,
) -> Result<SurvivalCurve> {
    let hazards = predict_conditional_hazards(model, strata, x_new)?;
    let times = strata.iter().map(|s| s.death_time).collect();
    let (at_risk, deaths) = risk_counts(strata);
    SurvivalCurve::from_hazards(times, hazards.raw).with_greenwood(&at_risk, &deaths, level)
}

/// Risk-set sizes and death counts per stratum.
pub fn risk_counts(strata: &[StratumInfo]) -> (Vec<usize>, Vec<usize>) {
    strata.iter().map(|s| (s.size(), s.deaths)).unzip()
}

/// Greenwood standard errors `S_q (Σ_{j<=q} y_j / (n_j (n_j - y_j)))^{1/2}`
/// and the symmetric normal band, clamped to [0, 1].
pub fn greenwood_band(survival: &[f64], at_risk: &[usize], deaths: &[usize], level: f64) -> Result<GreenwoodBand> {
    if at_risk.len() != survival.len() {
        return Err(Error::DimensionMismatch {
            expected: survival.len(),
            got: at_risk.len(),
        });
    }
    if deaths.len() != survival.len() {
        return Err(Error::DimensionMismatch {
            expected: survival.len(),
            got: deaths.len(),
        });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level {level} not in (0, 1)"
        )));
    }
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);

    let mut sum = 0.0;
    let mut broken = false;
    let mut band = GreenwoodBand {
        level,
        std_errors: Vec::with_capacity(survival.len()),
        lower: Vec::with_capacity(survival.len()),
        upper: Vec::with_capacity(survival.len()),
        undefined: Vec::with_capacity(survival.len()),
    };
    for ((&s, &n), &y) in survival.iter().zip(at_risk).zip(deaths) {
        if n == 0 || y > n {
            return Err(Error::InvalidArgument(format!(
                "need n_j >= y_j and n_j > 0, got n_j = {n}, y_j = {y}"
            )));
        }
        if n == y {
            broken = true;
        } else {
            sum += y as f64 / (n as f64 * (n - y) as f64);
        }
        let sd = if broken { f64::INFINITY } else { s * sum.sqrt() };
        band.std_errors.push(sd);
        band.lower.push((s - z * sd).clamp(0.0, 1.0));
        band.upper.push((s + z * sd).clamp(0.0, 1.0));
        band.undefined.push(broken);
    }
    Ok(band)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::ZeroModel;

    fn strata(sizes: &[usize]) -> Vec<StratumInfo> {
        let mut start = 0;
        sizes
            .iter()
            .enumerate()
            .map(|(q, &n)| {
                let s = StratumInfo {
                    death_time: q as f64 + 1.0,
                    anchor: q,
                    rows: start..start + n,
                    alpha: 1.0 / n as f64,
                    covariate_means: vec![0.5, -0.5],
                    deaths: 1,
                };
                start += n;
                s
            })
            .collect()
    }

    struct Constant(f64);
    impl Predictor for Constant {
        fn predict(&self, _x: &[f64]) -> f64 {
            self.0
        }
    }

    #[test]
    fn null_learner_gives_alpha() {
        let st = strata(&[4, 3, 2]);
        let h = predict_conditional_hazards(&ZeroModel, &st, &[1.0, 2.0]).unwrap();
        assert_eq!(h.raw, vec![0.25, 1.0 / 3.0, 0.5]);
    }

    #[test]
    fn clamping() {
        let st = strata(&[50]);
        let h = predict_conditional_hazards(&Constant(-0.04), &st, &[0.0, 0.0]).unwrap();
        assert!((h.raw[0] + 0.02).abs() < 1e-15);
        assert_eq!(h.clamped[0], 0.0);
        let h = predict_conditional_hazards(&Constant(1.03), &st, &[0.0, 0.0]).unwrap();
        assert!((h.raw[0] - 1.05).abs() < 1e-15);
        assert_eq!(h.clamped[0], 1.0);
    }

    #[test]
    fn dimension_mismatch() {
        let st = strata(&[3]);
        assert!(matches!(
            predict_conditional_hazards(&ZeroModel, &st, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_hazards_keep_survival_at_one() {
        let c = SurvivalCurve::from_hazards(vec![1.0, 2.0, 3.0], vec![0.0; 3]);
        assert_eq!(c.survival, vec![1.0; 3]);
    }

    #[test]
    fn unit_hazard_is_absorbing() {
        let c = SurvivalCurve::from_hazards(vec![1.0, 2.0, 3.0, 4.0], vec![0.1, 1.0, 0.2, 0.0]);
        assert_eq!(&c.survival[1..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn step_evaluation() {
        let c = SurvivalCurve::from_hazards(vec![1.0, 2.0], vec![0.5, 0.5]);
        assert_eq!(c.at(0.5), 1.0);
        assert_eq!(c.at(1.0), 0.5);
        assert_eq!(c.at(1.7), 0.5);
        assert_eq!(c.at(9.0), 0.25);
    }

    #[test]
    fn clamped_fraction_counts_raw_excursions() {
        let c = SurvivalCurve::from_hazards(vec![1.0, 2.0, 3.0, 4.0], vec![-0.1, 0.2, 1.2, 0.3]);
        assert_eq!(c.clamped_fraction(), 0.5);
    }

    #[test]
    fn greenwood_single_period() {
        let b = greenwood_band(&[0.9], &[10], &[1], 0.95).unwrap();
        let expect = 0.9 * (1.0f64 / 90.0).sqrt();
        assert!((b.std_errors[0] - expect).abs() < 1e-12);
        assert!((b.lower[0] - (0.9 - 1.959963984540054 * expect)).abs() < 1e-9);
    }

    #[test]
    fn greenwood_no_deaths() {
        let b = greenwood_band(&[1.0, 1.0], &[5, 4], &[0, 0], 0.95).unwrap();
        assert_eq!(b.std_errors, vec![0.0, 0.0]);
        assert_eq!(b.lower, vec![1.0, 1.0]);
        assert_eq!(b.upper, vec![1.0, 1.0]);
    }

    #[test]
    fn greenwood_sd_grows_with_fixed_survival() {
        let b = greenwood_band(&[0.5; 4], &[10, 9, 8, 7], &[1, 2, 0, 1], 0.9).unwrap();
        assert!(b.std_errors.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn greenwood_all_die_flags_rest() {
        let b = greenwood_band(&[0.5, 0.0, 0.0], &[2, 1, 1], &[1, 1, 0], 0.95).unwrap();
        assert_eq!(b.undefined, vec![false, true, true]);
        assert_eq!(b.lower[1], 0.0);
        assert_eq!(b.upper[1], 1.0);
        assert!(b.std_errors[2].is_infinite());
    }

    #[test]
    fn greenwood_argument_errors() {
        assert!(greenwood_band(&[0.5], &[1, 2], &[0], 0.95).is_err());
        assert!(greenwood_band(&[0.5], &[1], &[2], 0.95).is_err());
        assert!(greenwood_band(&[0.5], &[3], &[1], 1.5).is_err());
    }

    #[test]
    fn csv_columns() {
        let c = SurvivalCurve::from_hazards(vec![1.0], vec![0.1])
            .with_greenwood(&[10], &[1], 0.95)
            .unwrap();
        let mut out = Vec::new();
        c.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("t,survival,sd,lower,upper,hazard_raw,hazard_clamped\n1,0.9,"));
    }
}
