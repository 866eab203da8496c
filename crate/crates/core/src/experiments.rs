//! Seeded replicate runners for the comparison experiments.
//!
//! Replicate `r` of an experiment with base seed `s` simulates from
//! `SimRng::derive_seed(s, r)`. Replicates run in parallel and are collected
//! in index order, so results do not depend on scheduling.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coxph::{
    breslow_baseline, cox_curve_from_baseline, cox_fit, cox_fit_l1, cox_fit_stacked, default_lambda_grid,
    BaselineHazard, CoxOptions, FitResult,
};
use crate::curves::{predict_survival_curve, SurvivalCurve};
use crate::error::{Error, Result};
use crate::learners::{
    GbmConfig, LearnerConfig, LeastSquaresConfig, MlpConfig, Predictor, RandomForestConfig, ZeroModel,
};
use crate::metrics::{c_index, median_death_time, risk_from_area, risk_from_midpoint};
use crate::rng::{streams, SimRng};
use crate::simgen::{draw_covariates, simulate, simulate_static, ModelKind, SimConfig, SimulatedData};
use crate::stacker::{stack, stack_centered, stack_time_varying, StackForm, StackedData, StratumInfo};
use crate::stacklogit::{
    logistic_fit, logistic_fit_l1, logistic_survival_curve, verify_equivalence, LogisticFit, LogisticOptions,
};
use crate::survdata::{fmt_f64, SurvivalDataset};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Cox,
    #[serde(alias = "stacked-logistic")]
    StackLogistic,
    StackLs,
    StackRf,
    StackGbm,
    StackMlp,
    /// `f ≡ 0` on the centered stack: Kaplan–Meier.
    Null,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Cox,
        Method::StackLogistic,
        Method::StackLs,
        Method::StackRf,
        Method::StackGbm,
        Method::StackMlp,
        Method::Null,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cox => "cox",
            Method::StackLogistic => "stack-logistic",
            Method::StackLs => "stack-ls",
            Method::StackRf => "stack-rf",
            Method::StackGbm => "stack-gbm",
            Method::StackMlp => "stack-mlp",
            Method::Null => "null",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == "stacked-logistic" {
            return Ok(Method::StackLogistic);
        }
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}

/// Hyperparameters for each stacked learner.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerSettings {
    pub least_squares: LeastSquaresConfig,
    pub random_forest: RandomForestConfig,
    pub gbm: GbmConfig,
    pub mlp: MlpConfig,
}

impl LearnerSettings {
    fn config(&self, method: Method) -> Option<LearnerConfig> {
        match method {
            Method::StackLs => Some(LearnerConfig::LeastSquares(self.least_squares)),
            Method::StackRf => Some(LearnerConfig::RandomForest(self.random_forest)),
            Method::StackGbm => Some(LearnerConfig::Gbm(self.gbm)),
            Method::StackMlp => Some(LearnerConfig::Mlp(self.mlp)),
            _ => None,
        }
    }
}

/// Everything a replicate-based experiment needs besides I/O.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub methods: Vec<Method>,
    pub learners: LearnerSettings,
    pub seed: u64,
    pub reps: usize,
    pub n_test: usize,
    /// Fixed evaluation point for curve experiments; drawn per replicate
    /// from the covariate distribution when absent.
    pub x_new: Option<Vec<f64>>,
    /// Held-out points drawn per replicate when `x_new` is absent; a
    /// method's ISE is averaged over them.
    pub n_eval: usize,
    pub cox: CoxOptions,
    pub logistic: LogisticOptions,
}

impl ExperimentConfig {
    pub fn new(sim: SimConfig) -> Self {
        Self {
            seed: sim.seed,
            sim,
            methods: vec![Method::Cox, Method::StackLogistic],
            learners: LearnerSettings::default(),
            reps: 10,
            n_test: 20,
            x_new: None,
            n_eval: 1,
            cox: CoxOptions::default(),
            logistic: LogisticOptions::default(),
        }
    }

    pub fn replicate_seed(&self, rep: usize) -> u64 {
        SimRng::derive_seed(self.seed, rep as u64)
    }

    fn replicate_sim(&self, rep: usize) -> SimConfig {
        self.sim.with_seed(self.replicate_seed(rep))
    }

    fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("no methods given".into()));
        }
        if self.n_eval == 0 {
            return Err(Error::InvalidArgument("n_eval must be >= 1".into()));
        }
        if let Some(x) = &self.x_new {
            if x.len() != self.sim.p {
                return Err(Error::DimensionMismatch {
                    expected: self.sim.p,
                    got: x.len(),
                });
            }
        }
        Ok(())
    }
}

fn run_replicates<T: Send>(reps: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..reps).into_par_iter().map(f).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ReplicateStatus {
    Ok,
    Failed { message: String },
}

// ---------------------------------------------------------------- coefficients

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientPair {
    pub feature: String,
    pub cox_coef: f64,
    pub cox_se: f64,
    pub cox_p: f64,
    pub logistic_coef: f64,
    pub logistic_se: f64,
    pub logistic_p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientReplicate {
    pub replicate: usize,
    pub seed: u64,
    pub status: ReplicateStatus,
    pub cox_converged: bool,
    pub logistic_converged: bool,
    pub pairs: Vec<CoefficientPair>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub replicates_ok: usize,
    pub replicates_failed: usize,
    /// Set when no replicate succeeded; the statistics are then NaN.
    pub empty: bool,
    pub coefficient_correlation: f64,
    pub max_abs_difference: f64,
    pub p_value_rank_correlation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientReport {
    pub replicates: Vec<CoefficientReplicate>,
    pub summary: CoefficientSummary,
}

/// Paired Cox and stacked-logistic fits. For `time_varying` designs both
/// use the counting-process stack.
pub fn run_compare_coefficients(config: &ExperimentConfig) -> Result<CoefficientReport> {
    config.validate()?;
    let replicates = run_replicates(config.reps, |rep| {
        let seed = config.replicate_seed(rep);
        let fits = fit_pair(config, rep);
        match fits {
            Ok((cox, logit)) => CoefficientReplicate {
                replicate: rep,
                seed,
                status: ReplicateStatus::Ok,
                cox_converged: cox.converged,
                logistic_converged: logit.converged,
                pairs: (0..cox.coefficients.len())
                    .map(|k| CoefficientPair {
                        feature: cox.feature_names[k].clone(),
                        cox_coef: cox.coefficients[k],
                        cox_se: cox.std_errors[k],
                        cox_p: cox.p_values[k],
                        logistic_coef: logit.coefficients[k],
                        logistic_se: logit.std_errors[k],
                        logistic_p: logit.p_values[k],
                    })
                    .collect(),
            },
            Err(e) => CoefficientReplicate {
                replicate: rep,
                seed,
                status: ReplicateStatus::Failed { message: e.to_string() },
                cox_converged: false,
                logistic_converged: false,
                pairs: Vec::new(),
            },
        }
    });
    let summary = summarize_coefficients(&replicates);
    Ok(CoefficientReport { replicates, summary })
}

fn fit_pair(config: &ExperimentConfig, rep: usize) -> Result<(FitResult, LogisticFit)> {
    let stacked = match simulate(&config.replicate_sim(rep))? {
        SimulatedData::Static(ds) => stack(&ds)?,
        SimulatedData::TimeVarying(long) => stack_time_varying(&long, StackForm::Indicator)?,
    };
    let cox = cox_fit_stacked(&stacked, &config.cox)?;
    let logit = logistic_fit(&stacked, &config.logistic)?;
    Ok((cox, logit))
}

pub fn summarize_coefficients(replicates: &[CoefficientReplicate]) -> CoefficientSummary {
    let ok: Vec<&CoefficientReplicate> = replicates.iter().filter(|r| r.status == ReplicateStatus::Ok).collect();
    let pairs: Vec<&CoefficientPair> = ok.iter().flat_map(|r| &r.pairs).collect();
    let cox: Vec<f64> = pairs.iter().map(|p| p.cox_coef).collect();
    let logit: Vec<f64> = pairs.iter().map(|p| p.logistic_coef).collect();
    let cox_p: Vec<f64> = pairs.iter().map(|p| p.cox_p).collect();
    let logit_p: Vec<f64> = pairs.iter().map(|p| p.logistic_p).collect();
    let max_abs_difference = if pairs.is_empty() {
        f64::NAN
    } else {
        cox.iter().zip(&logit).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    };
    CoefficientSummary {
        replicates_ok: ok.len(),
        replicates_failed: replicates.len() - ok.len(),
        empty: ok.is_empty(),
        coefficient_correlation: pearson(&cox, &logit),
        max_abs_difference,
        p_value_rank_correlation: spearman(&cox_p, &logit_p),
    }
}

impl CoefficientReport {
    /// One row per coefficient per replicate; failed replicates get one
    /// row with the message and empty value columns.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "replicate",
            "seed",
            "status",
            "feature",
            "cox_coef",
            "cox_se",
            "cox_p",
            "logistic_coef",
            "logistic_se",
            "logistic_p",
        ])?;
        for r in &self.replicates {
            match &r.status {
                ReplicateStatus::Ok => {
                    for p in &r.pairs {
                        w.write_record([
                            r.replicate.to_string(),
                            r.seed.to_string(),
                            "ok".to_string(),
                            p.feature.clone(),
                            fmt_f64(p.cox_coef),
                            fmt_f64(p.cox_se),
                            fmt_f64(p.cox_p),
                            fmt_f64(p.logistic_coef),
                            fmt_f64(p.logistic_se),
                            fmt_f64(p.logistic_p),
                        ])?;
                    }
                }
                ReplicateStatus::Failed { message } => {
                    let mut row = vec![
                        r.replicate.to_string(),
                        r.seed.to_string(),
                        format!("failed: {message}"),
                    ];
                    row.extend(std::iter::repeat_n(String::new(), 7));
                    w.write_record(row)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

// ---------------------------------------------------------------- paths

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathReplicate {
    pub replicate: usize,
    pub seed: u64,
    pub status: ReplicateStatus,
    pub feature_names: Vec<String>,
    pub lambdas: Vec<f64>,
    pub cox: Vec<Vec<f64>>,
    pub logistic: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathReport {
    pub replicates: Vec<PathReplicate>,
    /// Fraction of `(λ, coefficient)` points with equal signs (zero counts
    /// as its own sign), pooled over successful replicates.
    pub sign_agreement: f64,
}

/// L1 paths of both models on the Cox grid (`λ_max` is the same for both).
pub fn run_compare_paths(config: &ExperimentConfig) -> Result<PathReport> {
    config.validate()?;
    let replicates = run_replicates(config.reps, |rep| {
        let seed = config.replicate_seed(rep);
        let result = (|| -> Result<PathReplicate> {
            let ds = simulate_static(&config.replicate_sim(rep))?;
            let grid = default_lambda_grid(&ds)?;
            let cox = cox_fit_l1(&ds, &grid)?;
            let logit = logistic_fit_l1(&stack(&ds)?, &grid)?;
            Ok(PathReplicate {
                replicate: rep,
                seed,
                status: ReplicateStatus::Ok,
                feature_names: cox.feature_names,
                lambdas: grid,
                cox: cox.coefficients,
                logistic: logit.coefficients,
            })
        })();
        result.unwrap_or_else(|e| PathReplicate {
            replicate: rep,
            seed,
            status: ReplicateStatus::Failed { message: e.to_string() },
            feature_names: Vec::new(),
            lambdas: Vec::new(),
            cox: Vec::new(),
            logistic: Vec::new(),
        })
    });
    let (agree, total) = replicates
        .iter()
        .flat_map(|r| r.cox.iter().zip(&r.logistic))
        .flat_map(|(c, l)| c.iter().zip(l))
        .fold((0usize, 0usize), |(a, t), (c, l)| {
            (a + usize::from(sign(*c) == sign(*l)), t + 1)
        });
    let sign_agreement = if total == 0 {
        f64::NAN
    } else {
        agree as f64 / total as f64
    };
    Ok(PathReport {
        replicates,
        sign_agreement,
    })
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

impl PathReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "replicate",
            "lambda_index",
            "lambda",
            "feature",
            "cox_coef",
            "logistic_coef",
            "sign_agree",
        ])?;
        for r in &self.replicates {
            for (i, lambda) in r.lambdas.iter().enumerate() {
                for (k, name) in r.feature_names.iter().enumerate() {
                    let (c, l) = (r.cox[i][k], r.logistic[i][k]);
                    w.write_record([
                        r.replicate.to_string(),
                        i.to_string(),
                        fmt_f64(*lambda),
                        name.clone(),
                        fmt_f64(c),
                        fmt_f64(l),
                        (sign(c) == sign(l)).to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

// ---------------------------------------------------------------- curves

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodCurve {
    pub method: Method,
    pub status: ReplicateStatus,
    /// Curve at the first evaluation point.
    pub curve: Option<SurvivalCurve>,
    /// ISE at each evaluation point.
    pub ise_points: Vec<f64>,
    /// Mean of `ise_points`.
    pub ise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveReplicate {
    pub replicate: usize,
    pub seed: u64,
    /// Evaluation points; curves and `truth` refer to the first.
    pub x_eval: Vec<Vec<f64>>,
    pub death_times: Vec<f64>,
    pub truth: Vec<f64>,
    pub curves: Vec<MethodCurve>,
    /// Largest gap between the null-learner curve and an independently
    /// computed Kaplan–Meier estimate; NaN when `null` was not requested.
    pub km_max_abs_diff: f64,
}

impl CurveReplicate {
    pub fn curve(&self, method: Method) -> Option<&SurvivalCurve> {
        self.curves
            .iter()
            .find(|c| c.method == method)
            .and_then(|c| c.curve.as_ref())
    }

    /// Mean of `|S_a(t_q) - S_b(t_q)|` over the death-time grid.
    pub fn mean_abs_gap(&self, a: Method, b: Method) -> Option<f64> {
        let (ca, cb) = (self.curve(a)?, self.curve(b)?);
        let n = self.death_times.len();
        if n == 0 {
            return None;
        }
        Some(
            self.death_times
                .iter()
                .map(|&t| (ca.at(t) - cb.at(t)).abs())
                .sum::<f64>()
                / n as f64,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub replicates_ok: usize,
    pub mean_ise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub replicates: Vec<CurveReplicate>,
    pub summary: Vec<MethodSummary>,
}

impl CurveReport {
    pub fn mean_ise(&self, method: Method) -> Option<f64> {
        self.summary.iter().find(|s| s.method == method).map(|s| s.mean_ise)
    }

    /// `replicate,method,t,survival,lower,upper,truth`
    pub fn write_curves_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["replicate", "method", "t", "survival", "lower", "upper", "truth"])?;
        for r in &self.replicates {
            for q in 0..r.death_times.len() {
                w.write_record([
                    r.replicate.to_string(),
                    "truth".to_string(),
                    fmt_f64(r.death_times[q]),
                    fmt_f64(r.truth[q]),
                    String::new(),
                    String::new(),
                    fmt_f64(r.truth[q]),
                ])?;
            }
            for mc in &r.curves {
                let Some(c) = &mc.curve else { continue };
                for q in 0..c.len() {
                    let (lo, hi) = c
                        .band
                        .as_ref()
                        .map(|b| (fmt_f64(b.lower[q]), fmt_f64(b.upper[q])))
                        .unwrap_or_default();
                    w.write_record([
                        r.replicate.to_string(),
                        mc.method.name().to_string(),
                        fmt_f64(c.death_times[q]),
                        fmt_f64(c.survival[q]),
                        lo,
                        hi,
                        fmt_f64(r.truth[q]),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// `replicate,method,status,ise`
    pub fn write_ise_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["replicate", "method", "status", "ise"])?;
        for r in &self.replicates {
            for mc in &r.curves {
                let status = match &mc.status {
                    ReplicateStatus::Ok => "ok".to_string(),
                    ReplicateStatus::Failed { message } => format!("failed: {message}"),
                };
                w.write_record([
                    r.replicate.to_string(),
                    mc.method.name().to_string(),
                    status,
                    fmt_f64(mc.ise),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `Σ_q (Ŝ_q - S_true(t_q))² (t_q - t_{q-1})`, with `t_0 = 0`.
pub fn integrated_squared_error(death_times: &[f64], estimate: &[f64], truth: &[f64]) -> f64 {
    let mut prev = 0.0;
    death_times
        .iter()
        .zip(estimate.iter().zip(truth))
        .map(|(&t, (e, s))| {
            let v = (e - s).powi(2) * (t - prev);
            prev = t;
            v
        })
        .sum()
}

/// Product-limit estimate at each distinct death time, computed directly
/// from the records.
pub fn kaplan_meier(dataset: &SurvivalDataset) -> (Vec<f64>, Vec<f64>) {
    let times = dataset.death_times();
    let mut distinct: Vec<f64> = times.clone();
    distinct.dedup();
    let mut s = 1.0;
    let mut out = Vec::with_capacity(distinct.len());
    for &t in &distinct {
        let at_risk = dataset.records().iter().filter(|r| r.time >= t).count() as f64;
        let deaths = times.iter().filter(|&&d| d == t).count() as f64;
        s *= 1.0 - deaths / at_risk;
        out.push(s);
    }
    (distinct, out)
}

/// A method trained once, ready to produce curves for any `x_new`.
pub enum FittedMethod {
    Cox {
        fit: FitResult,
        baseline: BaselineHazard,
    },
    Logistic {
        fit: LogisticFit,
        stacked: StackedData,
    },
    Stacked {
        model: Box<dyn Predictor>,
        strata: Vec<StratumInfo>,
    },
}

impl FittedMethod {
    pub fn fit(
        method: Method,
        dataset: &SurvivalDataset,
        config: &ExperimentConfig,
        learner_seed: u64,
    ) -> Result<Self> {
        Ok(match method {
            Method::Cox => {
                let fit = cox_fit(dataset, &config.cox)?;
                if !fit.converged {
                    return Err(Error::Divergence("Cox fit did not converge".into()));
                }
                let baseline = breslow_baseline(&stack(dataset)?, &fit.coefficients);
                FittedMethod::Cox { fit, baseline }
            }
            Method::StackLogistic => {
                let stacked = stack(dataset)?;
                let fit = logistic_fit(&stacked, &config.logistic)?;
                if !fit.converged {
                    return Err(Error::Divergence("logistic fit did not converge".into()));
                }
                FittedMethod::Logistic { fit, stacked }
            }
            Method::Null => FittedMethod::Stacked {
                model: Box::new(ZeroModel),
                strata: stack_centered(dataset)?.strata().to_vec(),
            },
            _ => {
                let learner = config
                    .learners
                    .config(method)
                    .expect("stacked learner")
                    .with_seed(learner_seed);
                let stacked = stack_centered(dataset)?;
                FittedMethod::Stacked {
                    model: learner.fit(stacked.covariates(), stacked.response())?,
                    strata: stacked.strata().to_vec(),
                }
            }
        })
    }

    pub fn curve(&self, x_new: &[f64]) -> Result<SurvivalCurve> {
        match self {
            FittedMethod::Cox { fit, baseline } => cox_curve_from_baseline(fit, baseline, x_new),
            FittedMethod::Logistic { fit, stacked } => logistic_survival_curve(fit, stacked, x_new),
            FittedMethod::Stacked { model, strata } => predict_survival_curve(model.as_ref(), strata, x_new),
        }
    }

    /// Covariate coefficients of the proportional-hazards style fits.
    pub fn coefficients(&self) -> Option<&[f64]> {
        match self {
            FittedMethod::Cox { fit, .. } => Some(&fit.coefficients),
            FittedMethod::Logistic { fit, .. } => Some(&fit.coefficients),
            FittedMethod::Stacked { .. } => None,
        }
    }
}

/// Survival curve for `x_new` from one method trained on `dataset`.
pub fn fit_curve(
    method: Method,
    dataset: &SurvivalDataset,
    x_new: &[f64],
    config: &ExperimentConfig,
    learner_seed: u64,
) -> Result<SurvivalCurve> {
    FittedMethod::fit(method, dataset, config, learner_seed)?.curve(x_new)
}

fn check_static(config: &ExperimentConfig) -> Result<()> {
    if config.sim.model == ModelKind::TimeVarying {
        return Err(Error::InvalidArgument(
            "curve and auc experiments need a static design (model1 or model2)".into(),
        ));
    }
    Ok(())
}

pub fn run_curve_experiment(config: &ExperimentConfig) -> Result<CurveReport> {
    config.validate()?;
    check_static(config)?;
    let replicates = run_replicates(config.reps, |rep| -> Result<CurveReplicate> {
        let sim = config.replicate_sim(rep);
        let seed = sim.seed;
        let ds = simulate_static(&sim)?;
        let x_eval = match &config.x_new {
            Some(x) => vec![x.clone()],
            None => draw_covariates(&sim, config.n_eval, &mut SimRng::new(seed, streams::TEST_SET))?,
        };
        let death_times: Vec<f64> = stack(&ds)?.strata().iter().map(|s| s.death_time).collect();
        let truth_at = |x: &[f64]| {
            death_times
                .iter()
                .map(|&t| sim.true_survival(x, t))
                .collect::<Result<Vec<f64>>>()
        };
        let truth = truth_at(&x_eval[0])?;
        let learner_seed = SimRng::derive_seed(seed, streams::LEARNER);
        let curves = config
            .methods
            .iter()
            .map(|&method| {
                let result = (|| -> Result<(SurvivalCurve, Vec<f64>)> {
                    let fitted = FittedMethod::fit(method, &ds, config, learner_seed)?;
                    let mut first = None;
                    let mut ises = Vec::with_capacity(x_eval.len());
                    for x in &x_eval {
                        let curve = fitted.curve(x)?;
                        let est: Vec<f64> = death_times.iter().map(|&t| curve.at(t)).collect();
                        ises.push(integrated_squared_error(&death_times, &est, &truth_at(x)?));
                        first.get_or_insert(curve);
                    }
                    Ok((first.expect("at least one evaluation point"), ises))
                })();
                match result {
                    Ok((curve, ise_points)) => MethodCurve {
                        method,
                        status: ReplicateStatus::Ok,
                        curve: Some(curve),
                        ise: mean(&ise_points),
                        ise_points,
                    },
                    Err(e) => MethodCurve {
                        method,
                        status: ReplicateStatus::Failed { message: e.to_string() },
                        curve: None,
                        ise_points: Vec::new(),
                        ise: f64::NAN,
                    },
                }
            })
            .collect::<Vec<_>>();
        let km_max_abs_diff = curves
            .iter()
            .find(|c| c.method == Method::Null)
            .and_then(|c| c.curve.as_ref())
            .map(|c| {
                let (times, km) = kaplan_meier(&ds);
                times
                    .iter()
                    .zip(&km)
                    .fold(0.0_f64, |m, (&t, &s)| m.max((c.at(t) - s).abs()))
            })
            .unwrap_or(f64::NAN);
        Ok(CurveReplicate {
            replicate: rep,
            seed,
            x_eval,
            death_times,
            truth,
            curves,
            km_max_abs_diff,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let summary = config
        .methods
        .iter()
        .map(|&method| {
            let ises: Vec<f64> = replicates
                .iter()
                .flat_map(|r| r.curves.iter().filter(|c| c.method == method && c.curve.is_some()))
                .map(|c| c.ise)
                .collect();
            MethodSummary {
                method,
                replicates_ok: ises.len(),
                mean_ise: mean(&ises),
            }
        })
        .collect();
    Ok(CurveReport { replicates, summary })
}

// ---------------------------------------------------------------- auc

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucRow {
    pub method: String,
    pub status: ReplicateStatus,
    /// C-index from `x_iᵀβ`; Cox, stacked logistic and the true rate only.
    pub linear_predictor: Option<f64>,
    pub midpoint: Option<f64>,
    pub area: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucReplicate {
    pub replicate: usize,
    pub seed: u64,
    pub t_mid: f64,
    pub rows: Vec<AucRow>,
    /// Whether the Cox and stacked-logistic linear predictors order the
    /// test subjects identically.
    pub cox_logistic_same_order: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub replicates: Vec<AucReplicate>,
}

impl AucReport {
    /// Mean over replicates of a method's C-index column, ignoring
    /// undefined entries.
    pub fn mean(&self, method: &str, column: fn(&AucRow) -> Option<f64>) -> f64 {
        let v: Vec<f64> = self
            .replicates
            .iter()
            .flat_map(|r| r.rows.iter().filter(|row| row.method == method))
            .filter_map(column)
            .collect();
        mean(&v)
    }

    /// `replicate,method,status,c_linear_predictor,c_midpoint,c_area`
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_else(|| "undefined".into());
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "replicate",
            "method",
            "status",
            "c_linear_predictor",
            "c_midpoint",
            "c_area",
        ])?;
        for r in &self.replicates {
            for row in &r.rows {
                let status = match &row.status {
                    ReplicateStatus::Ok => "ok".to_string(),
                    ReplicateStatus::Failed { message } => format!("failed: {message}"),
                };
                w.write_record([
                    r.replicate.to_string(),
                    row.method.clone(),
                    status,
                    opt(row.linear_predictor),
                    opt(row.midpoint),
                    opt(row.area),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub const ORACLE_ROW: &str = "oracle";

/// Trains on each replicate's dataset and scores `n_test` fresh subjects
/// drawn from the same design. The `oracle` row ranks by the true rate.
pub fn run_auc_experiment(config: &ExperimentConfig) -> Result<AucReport> {
    config.validate()?;
    check_static(config)?;
    let replicates = run_replicates(config.reps, |rep| -> Result<AucReplicate> {
        let sim = config.replicate_sim(rep);
        let seed = sim.seed;
        let train = simulate_static(&sim)?;
        let test_sim = SimConfig {
            n: config.n_test.max(2),
            ..sim.with_seed(SimRng::derive_seed(seed, streams::TEST_SET))
        };
        let test = simulate_static(&test_sim)?;
        let test = if config.n_test < 2 {
            SurvivalDataset::new(
                test.records()[..config.n_test].to_vec(),
                Some(test.feature_names().to_vec()),
            )?
        } else {
            test
        };
        let times: Vec<f64> = test.records().iter().map(|r| r.time).collect();
        let events: Vec<bool> = test.records().iter().map(|r| r.event).collect();
        let t_mid = median_death_time(&train.death_times())?;
        let learner_seed = SimRng::derive_seed(seed, streams::LEARNER);
        let score = |risks: &[f64]| c_index(&times, &events, risks).ok();

        let mut rows = Vec::new();
        let mut lp_orders: Vec<(Method, Vec<f64>)> = Vec::new();
        for &method in &config.methods {
            let row = (|| -> Result<AucRow> {
                let fitted = FittedMethod::fit(method, &train, config, learner_seed)?;
                let curves = test
                    .records()
                    .iter()
                    .map(|r| fitted.curve(&r.covariates))
                    .collect::<Result<Vec<_>>>()?;
                let linear_predictor = fitted.coefficients().and_then(|b| {
                    let lp: Vec<f64> = test
                        .records()
                        .iter()
                        .map(|r| r.covariates.iter().zip(b).map(|(x, c)| x * c).sum())
                        .collect();
                    let c = score(&lp);
                    lp_orders.push((method, lp));
                    c
                });
                let mid: Vec<f64> = curves.iter().map(|c| risk_from_midpoint(c, t_mid)).collect();
                let area: Vec<f64> = curves.iter().map(risk_from_area).collect();
                Ok(AucRow {
                    method: method.name().to_string(),
                    status: ReplicateStatus::Ok,
                    linear_predictor,
                    midpoint: score(&mid),
                    area: score(&area),
                })
            })();
            rows.push(row.unwrap_or_else(|e| AucRow {
                method: method.name().to_string(),
                status: ReplicateStatus::Failed { message: e.to_string() },
                linear_predictor: None,
                midpoint: None,
                area: None,
            }));
        }
        let oracle: Vec<f64> = test.records().iter().map(|r| sim.rate(&r.covariates)).collect();
        let oracle_c = score(&oracle);
        rows.push(AucRow {
            method: ORACLE_ROW.to_string(),
            status: ReplicateStatus::Ok,
            linear_predictor: oracle_c,
            midpoint: oracle_c,
            area: oracle_c,
        });
        let find = |m: Method| lp_orders.iter().find(|(k, _)| *k == m).map(|(_, v)| v);
        let cox_logistic_same_order = match (find(Method::Cox), find(Method::StackLogistic)) {
            (Some(a), Some(b)) => Some(same_order(a, b)),
            _ => None,
        };
        Ok(AucReplicate {
            replicate: rep,
            seed,
            t_mid,
            rows,
            cox_logistic_same_order,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(AucReport { replicates })
}

/// Whether two score vectors induce the same strict pairwise ordering.
pub fn same_order(a: &[f64], b: &[f64]) -> bool {
    (0..a.len()).all(|i| (0..a.len()).all(|j| a[i].total_cmp(&a[j]) == b[i].total_cmp(&b[j])))
}

// ---------------------------------------------------------------- equivalence

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReplicate {
    pub replicate: usize,
    pub seed: u64,
    pub report: crate::stacklogit::EquivalenceReport,
    /// Intercept gap on the largest risk set.
    pub largest_set_gap: f64,
    /// Mean |intercept gap| over the smallest and largest decile of
    /// finite-gap risk sets by size.
    pub small_sets_mean_gap: f64,
    pub large_sets_mean_gap: f64,
}

/// Evaluates the intercept approximation at each replicate's Cox estimate.
pub fn run_verify_equivalence(config: &ExperimentConfig) -> Result<Vec<EquivalenceReplicate>> {
    config.validate()?;
    check_static(config)?;
    run_replicates(config.reps, |rep| -> Result<EquivalenceReplicate> {
        let sim = config.replicate_sim(rep);
        let ds = simulate_static(&sim)?;
        let beta = cox_fit(&ds, &config.cox)?.coefficients;
        let report = verify_equivalence(&ds, &beta)?;
        let mut finite: Vec<(usize, f64)> = report
            .risk_sets
            .iter()
            .filter(|g| g.exact_intercept.is_finite())
            .map(|g| (g.size, g.intercept_gap().abs()))
            .collect();
        if finite.is_empty() {
            return Err(Error::InvalidArgument("no risk set of size >= 2".into()));
        }
        finite.sort_by_key(|&(size, _)| size);
        let decile = (finite.len() / 10).max(1);
        let small = mean(&finite[..decile].iter().map(|g| g.1).collect::<Vec<_>>());
        let large = mean(&finite[finite.len() - decile..].iter().map(|g| g.1).collect::<Vec<_>>());
        let largest_set_gap = finite.last().map(|g| g.1).unwrap_or(f64::NAN);
        Ok(EquivalenceReplicate {
            replicate: rep,
            seed: sim.seed,
            report,
            largest_set_gap,
            small_sets_mean_gap: small,
            large_sets_mean_gap: large,
        })
    })
    .into_iter()
    .collect()
}

// ---------------------------------------------------------------- statistics

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() || a.len() < 2 {
        return f64::NAN;
    }
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Average ranks, 1-based; ties share the mean of their positions.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            out[i] = r;
        }
        start = end;
    }
    out
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}
