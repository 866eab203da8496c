//! Cox proportional hazards by Newton iteration on the log partial
//! likelihood, with Wald inference, an L1 path and Breslow baselines.
//!
//! Tied deaths follow the Breslow convention: each tied death is its own
//! term with the full risk-set denominator. All fits run on the risk-set
//! layout of an indicator-form stack, which also covers time-varying
//! covariates.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::curves::SurvivalCurve;
use crate::error::{Error, Result};
use crate::stacker::{stack, StackedData};
use crate::survdata::SurvivalDataset;

/// Gradient sup-norm required, next to the relative log-likelihood
/// change, before a Newton fit is declared converged.
pub(crate) const GRADIENT_TOL: f64 = 1e-8;

/// Largest per-SD coefficient (|β_k|·sd(x_k)) accepted as finite. Larger
/// values mean the partial likelihood is monotone along some direction.
const MONOTONE_BOUND: f64 = 10.0;
/// Standardized standard error beyond which the information along a
/// coordinate has collapsed, as it does when the likelihood is monotone.
const COLLAPSED_SE: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoxOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CoxOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub feature_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub z_scores: Vec<f64>,
    pub p_values: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Coefficients ran off towards infinity (monotone likelihood).
    pub diverging: bool,
}

/// Value, gradient and Hessian of the log partial likelihood.
#[derive(Clone, Debug)]
pub struct LogLik {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenalizedPath {
    pub feature_names: Vec<String>,
    /// Nonincreasing penalty levels.
    pub lambdas: Vec<f64>,
    /// One coefficient vector per penalty level.
    pub coefficients: Vec<Vec<f64>>,
    pub converged: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineHazard {
    pub death_times: Vec<f64>,
    pub increments: Vec<f64>,
    pub cumulative: Vec<f64>,
}

/// Risk-set view of a stack: covariate rows, stratum row ranges and the
/// row of each stratum's event.
pub(crate) struct RiskSetProblem<'a> {
    pub data: &'a StackedData,
    pub anchors: Vec<usize>,
}

impl<'a> RiskSetProblem<'a> {
    pub fn new(data: &'a StackedData) -> Self {
        let anchors = (0..data.n_strata()).map(|q| data.anchor_row(q)).collect();
        Self { data, anchors }
    }

    fn p(&self) -> usize {
        self.data.p()
    }

    pub fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        let x = self.data.covariates();
        (0..self.data.n_rows())
            .map(|r| (0..beta.len()).map(|k| x[(r, k)] * beta[k]).sum())
            .collect()
    }

    pub fn loglik(&self, beta: &[f64]) -> LogLik {
        let p = self.p();
        let x = self.data.covariates();
        let eta = self.linear_predictor(beta);
        let mut value = 0.0;
        let mut gradient = DVector::zeros(p);
        let mut hessian = DMatrix::zeros(p, p);
        let mut s1 = vec![0.0; p];
        let mut s2 = DMatrix::zeros(p, p);
        for (s, &anchor) in self.data.strata().iter().zip(&self.anchors) {
            let rows = s.rows.clone();
            let max = rows.clone().map(|r| eta[r]).fold(f64::NEG_INFINITY, f64::max);
            let mut s0 = 0.0;
            s1.iter_mut().for_each(|v| *v = 0.0);
            s2.fill(0.0);
            for r in rows {
                let w = (eta[r] - max).exp();
                s0 += w;
                for j in 0..p {
                    let wx = w * x[(r, j)];
                    s1[j] += wx;
                    for k in 0..=j {
                        s2[(j, k)] += wx * x[(r, k)];
                    }
                }
            }
            value += eta[anchor] - max - s0.ln();
            for j in 0..p {
                let mj = s1[j] / s0;
                gradient[j] += x[(anchor, j)] - mj;
                for k in 0..=j {
                    let c = s2[(j, k)] / s0 - mj * s1[k] / s0;
                    hessian[(j, k)] -= c;
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                hessian[(k, j)] = hessian[(j, k)];
            }
        }
        LogLik {
            value,
            gradient,
            hessian,
        }
    }

    fn value(&self, beta: &[f64]) -> f64 {
        let eta = self.linear_predictor(beta);
        self.data
            .strata()
            .iter()
            .zip(&self.anchors)
            .map(|(s, &a)| {
                let max = s.rows.clone().map(|r| eta[r]).fold(f64::NEG_INFINITY, f64::max);
                let s0: f64 = s.rows.clone().map(|r| (eta[r] - max).exp()).sum();
                eta[a] - max - s0.ln()
            })
            .sum()
    }

    fn column_sd(&self) -> Vec<f64> {
        let x = self.data.covariates();
        let n = x.nrows() as f64;
        (0..self.p())
            .map(|k| {
                let col = x.column(k);
                let mean = col.sum() / n;
                (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
            })
            .collect()
    }
}

pub fn cox_loglik(dataset: &SurvivalDataset, beta: &[f64]) -> Result<LogLik> {
    if beta.len() != dataset.p() {
        return Err(Error::DimensionMismatch {
            expected: dataset.p(),
            got: beta.len(),
        });
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidArgument("beta must be finite".into()));
    }
    let stacked = stack(dataset)?;
    Ok(RiskSetProblem::new(&stacked).loglik(beta))
}

pub fn cox_fit(dataset: &SurvivalDataset, options: &CoxOptions) -> Result<FitResult> {
    cox_fit_stacked(&stack(dataset)?, options)
}

/// Cox fit on an indicator-form stack, e.g. one built from time-varying
/// covariates or after control subsampling.
pub fn cox_fit_stacked(stacked: &StackedData, options: &CoxOptions) -> Result<FitResult> {
    let problem = RiskSetProblem::new(stacked);
    let p = problem.p();
    let mut beta = vec![0.0; p];
    let mut current = problem.loglik(&beta);
    check_information(&current.hessian)?;

    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iter {
        iterations += 1;
        let info = -&current.hessian;
        let Some(chol) = info.cholesky() else {
            break;
        };
        let step = chol.solve(&current.gradient);
        let mut t = 1.0;
        let (candidate, next) = loop {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let ll = problem.loglik(&cand);
            if ll.value.is_finite() && ll.value >= current.value - 1e-12 * current.value.abs() {
                break (cand, ll);
            }
            t *= 0.5;
            if t < 1e-10 {
                break (beta.clone(), current.clone());
            }
        };
        let change = (next.value - current.value).abs() / (next.value.abs() + 1e-300);
        let stalled = candidate == beta;
        beta = candidate;
        current = next;
        let grad = sup_norm(current.gradient.as_slice());
        if (change < options.tol && grad < GRADIENT_TOL) || (stalled && grad < 1e-6) {
            converged = true;
            break;
        }
        if stalled {
            break;
        }
    }

    let sd = problem.column_sd();
    let std_errors = wald_std_errors(&(-&current.hessian));
    let diverging =
        (0..p).any(|k| (beta[k] * sd[k]).abs() > MONOTONE_BOUND || !(std_errors[k] * sd[k] <= COLLAPSED_SE));
    Ok(wald_result(
        stacked.feature_names().to_vec(),
        beta,
        std_errors,
        current.value,
        iterations,
        converged && !diverging,
        diverging,
    ))
}

/// Fails with the null direction when the information at β = 0 is singular.
pub(crate) fn check_information(hessian: &DMatrix<f64>) -> Result<()> {
    let info = -hessian;
    let eig = SymmetricEigen::new(info);
    let (imin, min) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0, 0.0));
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    if eig.eigenvalues.is_empty() || min <= 1e-10 * max.max(1.0) {
        let direction = if eig.eigenvalues.is_empty() {
            Vec::new()
        } else {
            eig.eigenvectors.column(imin).iter().copied().collect()
        };
        return Err(Error::SingularInformation { direction });
    }
    Ok(())
}

pub(crate) fn wald_std_errors(information: &DMatrix<f64>) -> Vec<f64> {
    match information.clone().cholesky() {
        Some(chol) => chol.inverse().diagonal().iter().map(|v| v.sqrt()).collect(),
        None => vec![f64::NAN; information.nrows()],
    }
}

pub(crate) fn wald_result(
    feature_names: Vec<String>,
    coefficients: Vec<f64>,
    std_errors: Vec<f64>,
    log_likelihood: f64,
    iterations: usize,
    converged: bool,
    diverging: bool,
) -> FitResult {
    let z_scores: Vec<f64> = coefficients.iter().zip(&std_errors).map(|(b, s)| b / s).collect();
    let p_values = z_scores.iter().map(|&z| two_sided_p(z)).collect();
    FitResult {
        feature_names,
        coefficients,
        std_errors,
        z_scores,
        p_values,
        log_likelihood,
        iterations,
        converged,
        diverging,
    }
}

pub(crate) fn two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        f64::NAN
    } else {
        erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
    }
}

pub(crate) fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Smallest penalty at which every coefficient is zero: the sup-norm of
/// the score at β = 0.
pub fn cox_lambda_max(dataset: &SurvivalDataset) -> Result<f64> {
    let ll = cox_loglik(dataset, &vec![0.0; dataset.p()])?;
    Ok(sup_norm(ll.gradient.as_slice()))
}

/// `n` log-spaced penalties from `lambda_max` down to `ratio * lambda_max`.
pub fn log_lambda_grid(lambda_max: f64, ratio: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lambda_max];
    }
    let (hi, lo) = (lambda_max.ln(), (lambda_max * ratio).ln());
    (0..n)
        .map(|i| (hi + (lo - hi) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Default path: 50 points down to 0.01·λ_max.
pub fn default_lambda_grid(dataset: &SurvivalDataset) -> Result<Vec<f64>> {
    Ok(log_lambda_grid(cox_lambda_max(dataset)?, 0.01, 50))
}

pub(crate) fn check_grid(lambdas: &[f64]) -> Result<()> {
    if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::InvalidArgument("penalties must be finite and >= 0".into()));
    }
    if lambdas.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidArgument("penalty grid must be nonincreasing".into()));
    }
    Ok(())
}

/// L1-penalized path maximizing `loglik(β) - λ‖β‖₁` at each grid point by
/// cyclic coordinate descent on the local quadratic expansion, warm-started
/// from the previous point.
pub fn cox_fit_l1(dataset: &SurvivalDataset, lambda_grid: &[f64]) -> Result<PenalizedPath> {
    check_grid(lambda_grid)?;
    let stacked = stack(dataset)?;
    let problem = RiskSetProblem::new(&stacked);
    let null = problem.loglik(&vec![0.0; problem.p()]);
    check_information(&null.hessian)?;
    let lambda_max = sup_norm(null.gradient.as_slice());

    let mut beta = vec![0.0; problem.p()];
    let mut coefficients = Vec::with_capacity(lambda_grid.len());
    let mut converged = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        // β = 0 is optimal exactly when λ >= λ_max
        let ok = if lambda >= lambda_max {
            beta.iter_mut().for_each(|b| *b = 0.0);
            true
        } else {
            l1_solve(&problem, lambda, &mut beta)
        };
        coefficients.push(beta.clone());
        converged.push(ok);
    }
    Ok(PenalizedPath {
        feature_names: dataset.feature_names().to_vec(),
        lambdas: lambda_grid.to_vec(),
        coefficients,
        converged,
    })
}

fn l1_solve(problem: &RiskSetProblem<'_>, lambda: f64, beta: &mut Vec<f64>) -> bool {
    let p = beta.len();
    let penalized = |b: &[f64], ll: f64| ll - lambda * b.iter().map(|v| v.abs()).sum::<f64>();
    for _ in 0..200 {
        let LogLik {
            value,
            gradient,
            hessian,
        } = problem.loglik(beta);
        let objective = penalized(beta, value);
        let info = -hessian;

        // coordinate descent on the quadratic model around beta
        let mut target = beta.clone();
        for _ in 0..10_000 {
            let mut delta: f64 = 0.0;
            for k in 0..p {
                let akk = info[(k, k)];
                let old = target[k];
                if akk <= 0.0 {
                    target[k] = 0.0;
                } else {
                    let cross: f64 = (0..p)
                        .filter(|&j| j != k)
                        .map(|j| info[(k, j)] * (target[j] - beta[j]))
                        .sum();
                    let z = gradient[k] - cross + akk * beta[k];
                    target[k] = soft_threshold(z, lambda) / akk;
                }
                delta = delta.max((target[k] - old).abs());
            }
            if delta < 1e-13 {
                break;
            }
        }

        let mut t = 1.0;
        let next = loop {
            let cand: Vec<f64> = beta.iter().zip(&target).map(|(b, g)| b + t * (g - b)).collect();
            let obj = penalized(&cand, problem.value(&cand));
            if obj >= objective - 1e-12 * objective.abs() {
                break cand;
            }
            t *= 0.5;
            if t < 1e-10 {
                break beta.clone();
            }
        };
        let change = next
            .iter()
            .zip(beta.iter())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        *beta = next;
        if change < 1e-10 {
            return true;
        }
    }
    false
}

/// Breslow cumulative baseline hazard at the stratum death times.
pub fn breslow_baseline(stacked: &StackedData, beta: &[f64]) -> BaselineHazard {
    let problem = RiskSetProblem::new(stacked);
    let eta = problem.linear_predictor(beta);
    let mut cumulative = Vec::with_capacity(stacked.n_strata());
    let mut increments = Vec::with_capacity(stacked.n_strata());
    let mut total = 0.0;
    for s in stacked.strata() {
        let denom: f64 = s.rows.clone().map(|r| eta[r].exp()).sum();
        let inc = s.deaths as f64 / denom;
        total += inc;
        increments.push(inc);
        cumulative.push(total);
    }
    BaselineHazard {
        death_times: stacked.strata().iter().map(|s| s.death_time).collect(),
        increments,
        cumulative,
    }
}

/// `S(t | x) = exp(-Λ₀(t) exp(xᵀβ))` on the training death times.
pub fn cox_survival_curve(fit: &FitResult, dataset: &SurvivalDataset, x_new: &[f64]) -> Result<SurvivalCurve> {
    if !fit.converged {
        return Err(Error::InvalidArgument("Cox fit did not converge".into()));
    }
    let baseline = breslow_baseline(&stack(dataset)?, &fit.coefficients);
    cox_curve_from_baseline(fit, &baseline, x_new)
}

/// As [`cox_survival_curve`] with the baseline already computed.
pub fn cox_curve_from_baseline(fit: &FitResult, baseline: &BaselineHazard, x_new: &[f64]) -> Result<SurvivalCurve> {
    if x_new.len() != fit.coefficients.len() {
        return Err(Error::DimensionMismatch {
            expected: fit.coefficients.len(),
            got: x_new.len(),
        });
    }
    let risk: f64 = x_new
        .iter()
        .zip(&fit.coefficients)
        .map(|(x, b)| x * b)
        .sum::<f64>()
        .exp();
    let survival: Vec<f64> = baseline.cumulative.iter().map(|c| (-c * risk).exp()).collect();
    Ok(SurvivalCurve::from_survival(baseline.death_times.clone(), survival))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survdata::SurvivalRecord;

    fn three_obs() -> SurvivalDataset {
        SurvivalDataset::new(
            vec![
                SurvivalRecord::new(vec![0.3, -1.0], 1.0, true),
                SurvivalRecord::new(vec![1.2, 0.4], 2.0, false),
                SurvivalRecord::new(vec![-0.7, 2.0], 3.0, true),
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn three_obs_at_zero() {
        let ll = cox_loglik(&three_obs(), &[0.0, 0.0]).unwrap();
        assert!((ll.value + 3f64.ln()).abs() < 1e-15);
        // anchor minus risk-set mean; the singleton set contributes nothing
        let mean0 = (0.3 + 1.2 - 0.7) / 3.0;
        let mean1 = (-1.0 + 0.4 + 2.0) / 3.0;
        assert!((ll.gradient[0] - (0.3 - mean0)).abs() < 1e-15);
        assert!((ll.gradient[1] - (-1.0 - mean1)).abs() < 1e-15);
    }

    #[test]
    fn wrong_beta_length() {
        assert!(matches!(
            cox_loglik(&three_obs(), &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn constant_column_is_singular() {
        let ds = SurvivalDataset::new(
            vec![
                SurvivalRecord::new(vec![1.0, 0.2], 1.0, true),
                SurvivalRecord::new(vec![1.0, -0.5], 2.0, true),
                SurvivalRecord::new(vec![1.0, 0.9], 3.0, false),
            ],
            None,
        )
        .unwrap();
        match cox_fit(&ds, &CoxOptions::default()) {
            Err(Error::SingularInformation { direction }) => {
                assert!(direction[0].abs() > 0.99);
            }
            other => panic!("expected singular information, got {other:?}"),
        }
    }

    #[test]
    fn separated_covariate_flagged() {
        // x = 1 for the five earliest deaths, 0 for everyone after them
        let records = (0..12)
            .map(|i| {
                let x = if i < 5 { 1.0 } else { 0.0 };
                SurvivalRecord::new(vec![x], 1.0 + i as f64, i % 3 != 2)
            })
            .collect();
        let ds = SurvivalDataset::new(records, None).unwrap();
        let fit = cox_fit(&ds, &CoxOptions::default()).unwrap();
        assert!(!fit.converged);
        assert!(fit.diverging);
        assert!(fit.coefficients[0] > 5.0);
    }

    #[test]
    fn grid_checks() {
        assert!(check_grid(&[1.0, 0.5, 0.0]).is_ok());
        assert!(check_grid(&[0.5, 1.0]).is_err());
        assert!(check_grid(&[-1.0]).is_err());
        let g = log_lambda_grid(2.0, 0.01, 50);
        assert_eq!(g.len(), 50);
        assert!((g[0] - 2.0).abs() < 1e-12);
        assert!((g[49] - 0.02).abs() < 1e-12);
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
    }

    #[test]
    fn null_model_curve() {
        // no censoring, distinct times: S(t_q) = exp(-Σ_{j<=q} 1/n_j)
        let records = (0..5)
            .map(|i| SurvivalRecord::new(vec![(i as f64).sin()], 1.0 + i as f64, true))
            .collect();
        let ds = SurvivalDataset::new(records, None).unwrap();
        let fit = wald_result(vec!["x1".into()], vec![0.0], vec![1.0], 0.0, 0, true, false);
        let curve = cox_survival_curve(&fit, &ds, &[0.7]).unwrap();
        let mut cum = 0.0_f64;
        for (q, n) in [5.0, 4.0, 3.0, 2.0, 1.0].iter().enumerate() {
            cum += 1.0 / n;
            assert!((curve.survival[q] - (-cum).exp()).abs() < 1e-14);
        }
    }
}
