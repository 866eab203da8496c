//! No-intercept logistic regression on indicator-form stacks: one free
//! intercept per stratum plus shared covariate coefficients.
//!
//! The intercept block of the Hessian is diagonal, so every Newton step
//! profiles the intercepts out and solves a `p x p` Schur-complement
//! system. Strata without a response-0 row (a lone survivor at the last
//! death time, say) have an unbounded intercept; they are left out of the
//! fit and reported.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coxph::{check_grid, soft_threshold, sup_norm, two_sided_p, PenalizedPath, RiskSetProblem, GRADIENT_TOL};
use crate::curves::SurvivalCurve;
use crate::error::{Error, Result};
use crate::stacker::{stack, StackForm, StackedData};
use crate::survdata::{fmt_f64, SurvivalDataset};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub feature_names: Vec<String>,
    /// One per stratum; `+inf` for dropped strata.
    pub intercepts: Vec<f64>,
    pub dropped_strata: Vec<usize>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub z_scores: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Covariates with no variation inside any retained stratum; their
    /// coefficients are pinned at zero and their inference is NaN.
    pub aliased: Vec<usize>,
    pub log_likelihood: f64,
    pub deviance: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Rows of the retained strata, in the layout the solvers use.
struct Design<'a> {
    data: &'a StackedData,
    /// Retained strata, by stratum index.
    kept: Vec<usize>,
    dropped: Vec<usize>,
}

impl<'a> Design<'a> {
    fn new(data: &'a StackedData) -> Result<Self> {
        if data.form() != StackForm::Indicator {
            return Err(Error::InvalidArgument(
                "logistic fit needs indicator-form stacked data".into(),
            ));
        }
        let (kept, dropped) = (0..data.n_strata()).partition(|&q| {
            let s = &data.strata()[q];
            s.deaths > 0 && s.deaths < s.size()
        });
        Ok(Self { data, kept, dropped })
    }

    fn p(&self) -> usize {
        self.data.p()
    }

    fn eta(&self, intercepts: &[f64], beta: &[f64]) -> Vec<Vec<f64>> {
        let x = self.data.covariates();
        self.kept
            .iter()
            .zip(intercepts)
            .map(|(&q, &a)| {
                self.data.strata()[q]
                    .rows
                    .clone()
                    .map(|r| a + (0..beta.len()).map(|k| x[(r, k)] * beta[k]).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    fn loglik(&self, intercepts: &[f64], beta: &[f64]) -> f64 {
        let y = self.data.response();
        self.kept
            .iter()
            .zip(self.eta(intercepts, beta))
            .map(|(&q, eta)| {
                self.data.strata()[q]
                    .rows
                    .clone()
                    .zip(eta)
                    .map(|(r, e)| y[r] * e - softplus(e))
                    .sum::<f64>()
            })
            .sum()
    }

    /// Intercept gradient, β gradient, and the Hessian blocks
    /// `D` (diagonal), `B` (per stratum) and `C`, all for the negative
    /// log-likelihood curvature.
    fn derivatives(&self, intercepts: &[f64], beta: &[f64]) -> Derivatives {
        let p = self.p();
        let x = self.data.covariates();
        let y = self.data.response();
        let mut d = Derivatives {
            grad_a: vec![0.0; self.kept.len()],
            grad_b: DVector::zeros(p),
            diag: vec![0.0; self.kept.len()],
            cross: vec![DVector::zeros(p); self.kept.len()],
            gram: DMatrix::zeros(p, p),
        };
        for (i, (&q, eta)) in self.kept.iter().zip(self.eta(intercepts, beta)).enumerate() {
            for (r, e) in self.data.strata()[q].rows.clone().zip(eta) {
                let pr = sigmoid(e);
                let w = pr * (1.0 - pr);
                let res = y[r] - pr;
                d.grad_a[i] += res;
                d.diag[i] += w;
                for j in 0..p {
                    let xj = x[(r, j)];
                    d.grad_b[j] += res * xj;
                    d.cross[i][j] += w * xj;
                    for k in 0..=j {
                        d.gram[(j, k)] += w * xj * x[(r, k)];
                    }
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                d.gram[(k, j)] = d.gram[(j, k)];
            }
        }
        d
    }

    fn initial_intercepts(&self) -> Vec<f64> {
        self.kept
            .iter()
            .map(|&q| {
                let s = &self.data.strata()[q];
                (s.deaths as f64 / (s.size() - s.deaths) as f64).ln()
            })
            .collect()
    }
}

struct Derivatives {
    grad_a: Vec<f64>,
    grad_b: DVector<f64>,
    diag: Vec<f64>,
    cross: Vec<DVector<f64>>,
    gram: DMatrix<f64>,
}

impl Derivatives {
    /// `C - Σ_q B_q B_qᵀ / D_q`, the information for β with intercepts profiled.
    fn schur(&self) -> DMatrix<f64> {
        let mut s = self.gram.clone();
        for (b, &d) in self.cross.iter().zip(&self.diag) {
            s -= b * b.transpose() / d;
        }
        s
    }

    fn sup_gradient(&self, active: &[usize]) -> f64 {
        let b = active.iter().fold(0.0_f64, |m, &k| m.max(self.grad_b[k].abs()));
        b.max(sup_norm(&self.grad_a))
    }
}

fn aliased_columns(schur: &DMatrix<f64>, gram: &DMatrix<f64>) -> Vec<usize> {
    (0..schur.nrows())
        .filter(|&k| schur[(k, k)] <= 1e-10 * gram[(k, k)].max(f64::MIN_POSITIVE))
        .collect()
}

fn submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

pub fn logistic_fit(stacked: &StackedData, options: &LogisticOptions) -> Result<LogisticFit> {
    let design = Design::new(stacked)?;
    if design.kept.is_empty() {
        return Err(Error::InvalidArgument(
            "no stratum has both a response-1 and a response-0 row".into(),
        ));
    }
    let p = design.p();
    let mut warnings: Vec<String> = design
        .dropped
        .iter()
        .map(|&q| {
            let s = &stacked.strata()[q];
            format!(
                "stratum {} (death time {}, size {}) has no controls; its intercept is unbounded and it was left out",
                q + 1,
                s.death_time,
                s.size()
            )
        })
        .collect();

    let mut a = design.initial_intercepts();
    let mut beta = vec![0.0; p];
    let start = design.derivatives(&a, &beta);
    let aliased = aliased_columns(&start.schur(), &start.gram);
    let active: Vec<usize> = (0..p).filter(|k| !aliased.contains(k)).collect();
    for &k in &aliased {
        warnings.push(format!(
            "covariate '{}' does not vary within strata; coefficient fixed at 0",
            stacked.feature_names()[k]
        ));
    }
    if !active.is_empty() && submatrix(&start.schur(), &active).cholesky().is_none() {
        return Err(Error::SingularInformation { direction: Vec::new() });
    }

    let mut ll = design.loglik(&a, &beta);
    let mut deriv = start;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iter {
        iterations += 1;
        let schur = submatrix(&deriv.schur(), &active);
        // β right-hand side: g_β - Σ_q B_q g_a[q] / D_q
        let mut rhs = deriv.grad_b.clone();
        for ((b, &g), &d) in deriv.cross.iter().zip(&deriv.grad_a).zip(&deriv.diag) {
            rhs -= b * (g / d);
        }
        let rhs_active = DVector::from_iterator(active.len(), active.iter().map(|&k| rhs[k]));
        let Some(chol) = schur.cholesky() else {
            break;
        };
        let step_active = chol.solve(&rhs_active);
        let mut step_b = DVector::zeros(p);
        for (i, &k) in active.iter().enumerate() {
            step_b[k] = step_active[i];
        }
        let step_a: Vec<f64> = deriv
            .cross
            .iter()
            .zip(&deriv.grad_a)
            .zip(&deriv.diag)
            .map(|((b, &g), &d)| (g - b.dot(&step_b)) / d)
            .collect();

        let mut t = 1.0;
        let (na, nb, nll) = loop {
            let ca: Vec<f64> = a.iter().zip(&step_a).map(|(v, s)| v + t * s).collect();
            let cb: Vec<f64> = beta.iter().zip(step_b.iter()).map(|(v, s)| v + t * s).collect();
            let cll = design.loglik(&ca, &cb);
            if cll.is_finite() && cll >= ll - 1e-12 * ll.abs() {
                break (ca, cb, cll);
            }
            t *= 0.5;
            if t < 1e-10 {
                break (a.clone(), beta.clone(), ll);
            }
        };
        let stalled = na == a && nb == beta;
        let change = (nll - ll).abs() / (nll.abs() + 1e-300);
        a = na;
        beta = nb;
        ll = nll;
        deriv = design.derivatives(&a, &beta);
        let grad = deriv.sup_gradient(&active);
        if (change < options.tol && grad < GRADIENT_TOL) || (stalled && grad < 1e-6) {
            converged = true;
            break;
        }
        if stalled {
            break;
        }
    }

    let mut std_errors = vec![f64::NAN; p];
    if let Some(chol) = submatrix(&deriv.schur(), &active).cholesky() {
        let cov = chol.inverse();
        for (i, &k) in active.iter().enumerate() {
            std_errors[k] = cov[(i, i)].sqrt();
        }
    }
    let z_scores: Vec<f64> = beta.iter().zip(&std_errors).map(|(b, s)| b / s).collect();
    let p_values = z_scores.iter().map(|&z| two_sided_p(z)).collect();
    let mut intercepts = vec![f64::INFINITY; stacked.n_strata()];
    for (&q, &v) in design.kept.iter().zip(&a) {
        intercepts[q] = v;
    }
    Ok(LogisticFit {
        feature_names: stacked.feature_names().to_vec(),
        intercepts,
        dropped_strata: design.dropped,
        coefficients: beta,
        std_errors,
        z_scores,
        p_values,
        aliased,
        log_likelihood: ll,
        deviance: -2.0 * ll,
        iterations,
        converged,
        warnings,
    })
}

/// Stacks the dataset and fits it.
pub fn logistic_fit_dataset(dataset: &SurvivalDataset, options: &LogisticOptions) -> Result<LogisticFit> {
    logistic_fit(&stack(dataset)?, options)
}

/// Penalty above which every covariate coefficient is zero: the score of
/// the intercept-only fit.
pub fn logistic_lambda_max(stacked: &StackedData) -> Result<f64> {
    let design = Design::new(stacked)?;
    let a = design.initial_intercepts();
    let d = design.derivatives(&a, &vec![0.0; design.p()]);
    Ok(sup_norm(d.grad_b.as_slice()))
}

/// L1 path on the covariate coefficients; intercepts are unpenalized.
/// Each grid point runs IRLS, profiling the intercepts out of the weighted
/// quadratic and solving it by covariance-form coordinate descent.
pub fn logistic_fit_l1(stacked: &StackedData, lambda_grid: &[f64]) -> Result<PenalizedPath> {
    check_grid(lambda_grid)?;
    let design = Design::new(stacked)?;
    if design.kept.is_empty() {
        return Err(Error::InvalidArgument(
            "no stratum has both a response-1 and a response-0 row".into(),
        ));
    }
    let p = design.p();
    let mut a = design.initial_intercepts();
    let mut beta = vec![0.0; p];
    let null_intercepts = a.clone();
    let lambda_max = sup_norm(design.derivatives(&a, &beta).grad_b.as_slice());
    let mut coefficients = Vec::with_capacity(lambda_grid.len());
    let mut converged = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        // β = 0 with the intercept-only fit is optimal exactly when λ >= λ_max
        let ok = if lambda >= lambda_max {
            a.clone_from(&null_intercepts);
            beta.iter_mut().for_each(|b| *b = 0.0);
            true
        } else {
            l1_solve(&design, lambda, &mut a, &mut beta)
        };
        coefficients.push(beta.clone());
        converged.push(ok);
    }
    Ok(PenalizedPath {
        feature_names: stacked.feature_names().to_vec(),
        lambdas: lambda_grid.to_vec(),
        coefficients,
        converged,
    })
}

fn l1_solve(design: &Design<'_>, lambda: f64, a: &mut Vec<f64>, beta: &mut Vec<f64>) -> bool {
    let p = design.p();
    let x = design.data.covariates();
    let y = design.data.response();
    let penalized = |a: &[f64], b: &[f64]| design.loglik(a, b) - lambda * b.iter().map(|v| v.abs()).sum::<f64>();

    for _ in 0..200 {
        let objective = penalized(a, beta);
        // weighted quadratic: ½ Σ w (z - a_q - xβ)², z the working response
        let mut gram = DMatrix::<f64>::zeros(p, p);
        let mut score = DVector::<f64>::zeros(p);
        let mut stratum_stats = Vec::with_capacity(design.kept.len());
        for (&q, eta) in design.kept.iter().zip(design.eta(a, beta)) {
            let rows: Vec<usize> = design.data.strata()[q].rows.clone().collect();
            let mut sw = 0.0;
            let mut zbar = 0.0;
            let mut xbar = vec![0.0; p];
            let mut wz = Vec::with_capacity(rows.len());
            for (&r, &e) in rows.iter().zip(&eta) {
                let pr = sigmoid(e);
                let w = (pr * (1.0 - pr)).max(1e-300);
                let z = e + (y[r] - pr) / w;
                sw += w;
                zbar += w * z;
                for k in 0..p {
                    xbar[k] += w * x[(r, k)];
                }
                wz.push((w, z));
            }
            zbar /= sw;
            xbar.iter_mut().for_each(|v| *v /= sw);
            for (&r, &(w, z)) in rows.iter().zip(&wz) {
                let zc = z - zbar;
                for j in 0..p {
                    let xj = x[(r, j)] - xbar[j];
                    score[j] += w * xj * zc;
                    for k in 0..=j {
                        gram[(j, k)] += w * xj * (x[(r, k)] - xbar[k]);
                    }
                }
            }
            stratum_stats.push((zbar, xbar));
        }
        for j in 0..p {
            for k in 0..j {
                gram[(k, j)] = gram[(j, k)];
            }
        }

        let mut target = beta.clone();
        for _ in 0..10_000 {
            let mut delta: f64 = 0.0;
            for k in 0..p {
                let old = target[k];
                let gkk = gram[(k, k)];
                target[k] = if gkk <= 1e-12 {
                    0.0
                } else {
                    let cross: f64 = (0..p).filter(|&j| j != k).map(|j| gram[(k, j)] * target[j]).sum();
                    soft_threshold(score[k] - cross, lambda) / gkk
                };
                delta = delta.max((target[k] - old).abs());
            }
            if delta < 1e-13 {
                break;
            }
        }
        let target_a: Vec<f64> = stratum_stats
            .iter()
            .map(|(zbar, xbar)| zbar - xbar.iter().zip(&target).map(|(m, b)| m * b).sum::<f64>())
            .collect();

        let mut t = 1.0;
        let (na, nb) = loop {
            let ca: Vec<f64> = a.iter().zip(&target_a).map(|(v, g)| v + t * (g - v)).collect();
            let cb: Vec<f64> = beta.iter().zip(&target).map(|(v, g)| v + t * (g - v)).collect();
            let obj = penalized(&ca, &cb);
            if obj.is_finite() && obj >= objective - 1e-12 * objective.abs() {
                break (ca, cb);
            }
            t *= 0.5;
            if t < 1e-10 {
                break (a.clone(), beta.clone());
            }
        };
        let change = na
            .iter()
            .zip(a.iter())
            .chain(nb.iter().zip(beta.iter()))
            .fold(0.0_f64, |m, (u, v)| m.max((u - v).abs()));
        *a = na;
        *beta = nb;
        if change < 1e-10 {
            return true;
        }
    }
    false
}

/// Curve from the fitted discrete hazards `σ(a_q + x_newᵀβ)`; dropped
/// strata carry hazard 1, the limit of their unbounded intercepts.
pub fn logistic_survival_curve(fit: &LogisticFit, stacked: &StackedData, x_new: &[f64]) -> Result<SurvivalCurve> {
    if x_new.len() != fit.coefficients.len() {
        return Err(Error::DimensionMismatch {
            expected: fit.coefficients.len(),
            got: x_new.len(),
        });
    }
    let lp: f64 = x_new.iter().zip(&fit.coefficients).map(|(x, b)| x * b).sum();
    let hazards = fit
        .intercepts
        .iter()
        .map(|&a| if a.is_infinite() { 1.0 } else { sigmoid(a + lp) })
        .collect();
    let times = stacked.strata().iter().map(|s| s.death_time).collect();
    Ok(SurvivalCurve::from_hazards(times, hazards))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskSetGap {
    pub stratum: usize,
    pub death_time: f64,
    pub size: usize,
    /// Root of `Σ_j σ(b + η_j) = 1`; `+inf` for a singleton risk set.
    pub exact_intercept: f64,
    /// `-log Σ_j exp(η_j)`.
    pub approx_intercept: f64,
    /// Profiled binomial contribution minus (partial-likelihood
    /// contribution - 1); undefined for singleton risk sets.
    pub contribution_gap: Option<f64>,
}

impl RiskSetGap {
    pub fn intercept_gap(&self) -> f64 {
        self.exact_intercept - self.approx_intercept
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub beta: Vec<f64>,
    pub risk_sets: Vec<RiskSetGap>,
}

impl EquivalenceReport {
    /// `stratum,death_time,size,exact_intercept,approx_intercept,intercept_gap,contribution_gap`
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "stratum",
            "death_time",
            "size",
            "exact_intercept",
            "approx_intercept",
            "intercept_gap",
            "contribution_gap",
        ])?;
        for g in &self.risk_sets {
            w.write_record([
                (g.stratum + 1).to_string(),
                fmt_f64(g.death_time),
                g.size.to_string(),
                fmt_f64(g.exact_intercept),
                fmt_f64(g.approx_intercept),
                fmt_f64(g.intercept_gap()),
                g.contribution_gap.map(fmt_f64).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn verify_equivalence(dataset: &SurvivalDataset, beta: &[f64]) -> Result<EquivalenceReport> {
    if beta.len() != dataset.p() {
        return Err(Error::DimensionMismatch {
            expected: dataset.p(),
            got: beta.len(),
        });
    }
    verify_equivalence_stacked(&stack(dataset)?, beta)
}

pub fn verify_equivalence_stacked(stacked: &StackedData, beta: &[f64]) -> Result<EquivalenceReport> {
    let problem = RiskSetProblem::new(stacked);
    let eta = problem.linear_predictor(beta);
    let risk_sets = stacked
        .strata()
        .iter()
        .enumerate()
        .map(|(q, s)| {
            let etas: Vec<f64> = s.rows.clone().map(|r| eta[r]).collect();
            let anchor = eta[problem.anchors[q]];
            let max = etas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_sum = max + etas.iter().map(|e| (e - max).exp()).sum::<f64>().ln();
            let approx = -log_sum;
            let (exact, gap) = if etas.len() == 1 {
                (f64::INFINITY, None)
            } else {
                let b = profile_intercept(&etas, approx);
                let binomial = b + anchor - etas.iter().map(|e| softplus(b + e)).sum::<f64>();
                let partial = anchor - log_sum;
                (b, Some(binomial - (partial - 1.0)))
            };
            RiskSetGap {
                stratum: q,
                death_time: s.death_time,
                size: etas.len(),
                exact_intercept: exact,
                approx_intercept: approx,
                contribution_gap: gap,
            }
        })
        .collect();
    Ok(EquivalenceReport {
        beta: beta.to_vec(),
        risk_sets,
    })
}

/// Solves `Σ_j σ(b + η_j) = 1` for a risk set of size >= 2. The left side
/// is increasing in `b` and below 1 at `b = -log Σ exp(η_j)`, which
/// brackets the root from below.
fn profile_intercept(etas: &[f64], lower: f64) -> f64 {
    let f = |b: f64| etas.iter().map(|e| sigmoid(b + e)).sum::<f64>() - 1.0;
    let mut lo = lower;
    let mut step = 1.0;
    let mut hi = lower + step;
    while f(hi) < 0.0 {
        lo = hi;
        step *= 2.0;
        hi = lower + step;
    }
    let mut b = 0.5 * (lo + hi);
    for _ in 0..200 {
        let v = f(b);
        if v == 0.0 {
            return b;
        }
        if v < 0.0 {
            lo = b;
        } else {
            hi = b;
        }
        let slope: f64 = etas
            .iter()
            .map(|e| {
                let s = sigmoid(b + e);
                s * (1.0 - s)
            })
            .sum();
        let newton = b - v / slope;
        b = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-15 * (1.0 + b.abs()) {
            break;
        }
    }
    b
}
