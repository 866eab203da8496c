//! Seeded simulation designs.
//!
//! Covariates are multivariate normal with unit variances and
//! `corr(x_j, x_k) = rho_base^|j-k|`. Event times are exponential with a
//! covariate-dependent rate and are censored at `t_max`:
//!
//! - `model1`: `rate = exp(βᵀx)`
//! - `model2`: `rate = exp(β₁x₅x₆ + β₂x₁x₂ + β₃x₃² + β₄x₄ + β₅x₅ + β₆x₆)`
//! - `time_varying`: covariates are remeasured at `t = 0, 1, 2, ...`, each
//!   time adding independent `N(0, step_sd²)` steps, and the rate
//!   `exp(βᵀx(t))` is piecewise constant between measurements.
//!
//! Draws come from fixed streams of the config seed: covariates from
//! `streams::COVARIATES` (row-major), event times from
//! `streams::EVENT_TIMES` (one exponential per subject), steps from
//! `streams::COVARIATE_STEPS` (subject-major, then time, then column).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{streams, SimRng};
use crate::survdata::{LongitudinalDataset, Measurement, Subject, SurvivalDataset, SurvivalRecord};

pub const MODEL1_BETA: [f64; 6] = [-0.35, -0.2, 0.0, -0.4, 0.0, 0.0];
pub const MODEL2_BETA: [f64; 6] = [-0.35, 0.2, 0.45, 0.6, 0.8, 0.01];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Model1,
    Model2,
    TimeVarying,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: ModelKind,
    pub n: usize,
    pub p: usize,
    pub beta: Vec<f64>,
    pub rho_base: f64,
    pub t_max: f64,
    /// Random-walk step sd; used by `time_varying` only.
    pub step_sd: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn model1(seed: u64) -> Self {
        Self {
            model: ModelKind::Model1,
            n: 200,
            p: 6,
            beta: MODEL1_BETA.to_vec(),
            rho_base: 0.2,
            t_max: 1.5,
            step_sd: 0.5,
            seed,
        }
    }

    pub fn model2(seed: u64) -> Self {
        Self {
            model: ModelKind::Model2,
            beta: MODEL2_BETA.to_vec(),
            t_max: 2.0,
            ..Self::model1(seed)
        }
    }

    pub fn time_varying(seed: u64) -> Self {
        Self {
            model: ModelKind::TimeVarying,
            t_max: 3.0,
            ..Self::model1(seed)
        }
    }

    pub fn for_model(model: ModelKind, seed: u64) -> Self {
        match model {
            ModelKind::Model1 => Self::model1(seed),
            ModelKind::Model2 => Self::model2(seed),
            ModelKind::TimeVarying => Self::time_varying(seed),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument(format!("n must be >= 2, got {}", self.n)));
        }
        if self.p == 0 {
            return Err(Error::InvalidArgument("p must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.rho_base) {
            return Err(Error::InvalidArgument(format!(
                "rho_base must lie in [0, 1), got {}",
                self.rho_base
            )));
        }
        if !(self.t_max > 0.0) {
            return Err(Error::InvalidArgument(format!("t_max must be > 0, got {}", self.t_max)));
        }
        if !(self.step_sd >= 0.0) || !self.step_sd.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step_sd must be >= 0, got {}",
                self.step_sd
            )));
        }
        if self.beta.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: self.beta.len(),
            });
        }
        if self.model == ModelKind::Model2 && self.p != 6 {
            return Err(Error::InvalidArgument(format!("model2 needs p = 6, got {}", self.p)));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("beta must be finite".into()));
        }
        Ok(())
    }

    /// Hazard rate for a covariate vector (at a given time for `time_varying`).
    pub fn rate(&self, x: &[f64]) -> f64 {
        match self.model {
            ModelKind::Model2 => model2_rate(&self.beta, x),
            ModelKind::Model1 | ModelKind::TimeVarying => linear_rate(&self.beta, x),
        }
    }

    /// `S(t | x) = exp(-t · rate(x))`; the exponential models only.
    pub fn true_survival(&self, x: &[f64], t: f64) -> Result<f64> {
        if self.model == ModelKind::TimeVarying {
            return Err(Error::InvalidArgument(
                "true survival depends on the covariate path for time_varying".into(),
            ));
        }
        if x.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: x.len(),
            });
        }
        Ok((-t * self.rate(x)).exp())
    }
}

pub fn linear_rate(beta: &[f64], x: &[f64]) -> f64 {
    beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>().exp()
}

pub fn model2_rate(beta: &[f64], x: &[f64]) -> f64 {
    let lp = beta[0] * x[4] * x[5]
        + beta[1] * x[0] * x[1]
        + beta[2] * x[2] * x[2]
        + beta[3] * x[3]
        + beta[4] * x[4]
        + beta[5] * x[5];
    lp.exp()
}

/// One seeded stream per kind of draw.
#[derive(Clone, Debug)]
pub struct SimStreams {
    pub covariates: SimRng,
    pub event_times: SimRng,
    pub steps: SimRng,
}

impl SimStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            covariates: SimRng::new(seed, streams::COVARIATES),
            event_times: SimRng::new(seed, streams::EVENT_TIMES),
            steps: SimRng::new(seed, streams::COVARIATE_STEPS),
        }
    }
}

/// `n x p` draws with unit variances and `Σ_jk = rho_base^|j-k|`, as `L z`
/// with `L` the Cholesky factor of `Σ`.
pub fn gen_correlated_normals(n: usize, p: usize, rho_base: f64, rng: &mut SimRng) -> Result<DMatrix<f64>> {
    if !(0.0..1.0).contains(&rho_base) {
        return Err(Error::InvalidArgument(format!(
            "rho_base must lie in [0, 1), got {rho_base}"
        )));
    }
    let sigma = DMatrix::from_fn(p, p, |j, k| rho_base.powi((j as i32 - k as i32).abs()));
    let l = sigma
        .cholesky()
        .ok_or_else(|| Error::Internal("covariance is not positive definite".into()))?
        .l();
    let mut out = DMatrix::zeros(n, p);
    let mut z = vec![0.0; p];
    for i in 0..n {
        z.iter_mut().for_each(|v| *v = rng.standard_normal());
        for j in 0..p {
            out[(i, j)] = (0..=j).map(|k| l[(j, k)] * z[k]).sum();
        }
    }
    Ok(out)
}

fn feature_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

fn gen_exponential(config: &SimConfig, rng: &mut SimStreams) -> Result<SurvivalDataset> {
    config.validate()?;
    let x = gen_correlated_normals(config.n, config.p, config.rho_base, &mut rng.covariates)?;
    let records = (0..config.n)
        .map(|i| {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let t = rng.event_times.standard_exponential() / config.rate(&row);
            if t > config.t_max {
                SurvivalRecord::new(row, config.t_max, false)
            } else {
                SurvivalRecord::new(row, t, true)
            }
        })
        .collect();
    SurvivalDataset::new(records, Some(feature_names(config.p)))
}

pub fn gen_model1(config: &SimConfig, rng: &mut SimStreams) -> Result<SurvivalDataset> {
    if config.model != ModelKind::Model1 {
        return Err(Error::InvalidArgument("config is not a model1 config".into()));
    }
    gen_exponential(config, rng)
}

pub fn gen_model2(config: &SimConfig, rng: &mut SimStreams) -> Result<SurvivalDataset> {
    if config.model != ModelKind::Model2 {
        return Err(Error::InvalidArgument("config is not a model2 config".into()));
    }
    gen_exponential(config, rng)
}

pub fn gen_time_varying(config: &SimConfig, rng: &mut SimStreams) -> Result<LongitudinalDataset> {
    if config.model != ModelKind::TimeVarying {
        return Err(Error::InvalidArgument("config is not a time_varying config".into()));
    }
    config.validate()?;
    let p = config.p;
    let x0 = gen_correlated_normals(config.n, p, config.rho_base, &mut rng.covariates)?;
    // measurement times 0, 1, ..., strictly below t_max
    let k_max = (config.t_max.ceil() as usize).max(1);
    let subjects = (0..config.n)
        .map(|i| {
            let mut path: Vec<Vec<f64>> = Vec::with_capacity(k_max);
            path.push(x0.row(i).iter().copied().collect());
            for k in 1..k_max {
                let next = path[k - 1]
                    .iter()
                    .map(|v| v + config.step_sd * rng.steps.standard_normal())
                    .collect();
                path.push(next);
            }
            let target = rng.event_times.standard_exponential();
            let (time, event) = piecewise_exponential_time(config, &path, target);
            let measurements = path
                .into_iter()
                .enumerate()
                .filter(|(k, _)| (*k as f64) <= time)
                .map(|(k, covariates)| Measurement {
                    time: k as f64,
                    covariates,
                })
                .collect();
            Subject {
                id: format!("s{}", i + 1),
                measurements,
                time,
                event,
            }
        })
        .collect();
    LongitudinalDataset::new(subjects, Some(feature_names(p)))
}

/// First time the cumulative hazard reaches `target`, censored at `t_max`.
fn piecewise_exponential_time(config: &SimConfig, path: &[Vec<f64>], target: f64) -> (f64, bool) {
    let mut cumulative = 0.0;
    for (k, x) in path.iter().enumerate() {
        let start = k as f64;
        let end = if k + 1 == path.len() {
            config.t_max
        } else {
            (k + 1) as f64
        }
        .min(config.t_max);
        let rate = config.rate(x);
        let piece = rate * (end - start);
        if cumulative + piece >= target {
            let t = start + (target - cumulative) / rate;
            return if t > config.t_max {
                (config.t_max, false)
            } else {
                (t, true)
            };
        }
        cumulative += piece;
    }
    (config.t_max, false)
}

#[derive(Clone, Debug)]
pub enum SimulatedData {
    Static(SurvivalDataset),
    TimeVarying(LongitudinalDataset),
}

/// Generates the configured design from the config seed.
pub fn simulate(config: &SimConfig) -> Result<SimulatedData> {
    let mut rng = SimStreams::new(config.seed);
    Ok(match config.model {
        ModelKind::Model1 => SimulatedData::Static(gen_model1(config, &mut rng)?),
        ModelKind::Model2 => SimulatedData::Static(gen_model2(config, &mut rng)?),
        ModelKind::TimeVarying => SimulatedData::TimeVarying(gen_time_varying(config, &mut rng)?),
    })
}

/// `simulate` for the static designs.
pub fn simulate_static(config: &SimConfig) -> Result<SurvivalDataset> {
    match simulate(config)? {
        SimulatedData::Static(ds) => Ok(ds),
        SimulatedData::TimeVarying(_) => Err(Error::InvalidArgument("time_varying produces longitudinal data".into())),
    }
}

/// Fresh covariate rows from the design's covariate distribution.
pub fn draw_covariates(config: &SimConfig, n: usize, rng: &mut SimRng) -> Result<Vec<Vec<f64>>> {
    let x = gen_correlated_normals(n, config.p, config.rho_base, rng)?;
    Ok((0..n).map(|i| x.row(i).iter().copied().collect()).collect())
}
