//! Squared-error learners used as 0-1 regressors on centered stacked data.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{streams, SimRng};
use crate::tree::{RegressionTree, TreeParams};

/// A trained model.
pub trait Predictor: Send + Sync {
    fn predict(&self, x: &[f64]) -> f64;
}

/// Fits a [`Predictor`] to a design matrix and real response.
pub trait Learner {
    type Model: Predictor + 'static;

    fn fit(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<Self::Model>;
}

/// The model `f ≡ 0`. On centered stacks it reproduces Kaplan–Meier.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroModel;

impl Predictor for ZeroModel {
    fn predict(&self, _x: &[f64]) -> f64 {
        0.0
    }
}

fn check_inputs(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::InvalidArgument(
            "design matrix needs at least one row and one column".into(),
        ));
    }
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    Ok(())
}

fn row(x: &DMatrix<f64>, r: usize) -> Vec<f64> {
    x.row(r).iter().copied().collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LeastSquaresConfig {
    pub ridge_epsilon: f64,
}

impl Default for LeastSquaresConfig {
    fn default() -> Self {
        Self { ridge_epsilon: 1e-8 }
    }
}

/// `x ↦ xᵀβ`, no intercept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
}

impl Predictor for LinearModel {
    fn predict(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }
}

impl Learner for LeastSquaresConfig {
    type Model = LinearModel;

    fn fit(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<LinearModel> {
        fit_least_squares(x, y, self.ridge_epsilon)
    }
}

/// Solves `(XᵀX + εI)β = Xᵀy`.
pub fn fit_least_squares(x: &DMatrix<f64>, y: &[f64], ridge_epsilon: f64) -> Result<LinearModel> {
    check_inputs(x, y)?;
    if !(ridge_epsilon >= 0.0) {
        return Err(Error::InvalidArgument("ridge_epsilon must be >= 0".into()));
    }
    let yv = DVector::from_column_slice(y);
    let mut gram = x.transpose() * x;
    for k in 0..gram.nrows() {
        gram[(k, k)] += ridge_epsilon;
    }
    let rhs = x.transpose() * yv;
    let beta = match gram.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        // rank-deficient with ε = 0: minimum-norm solution
        None => gram.pseudo_inverse(1e-12).map_err(|e| Error::Internal(e.to_string()))? * rhs,
    };
    Ok(LinearModel {
        coefficients: beta.iter().copied().collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means ⌈p/3⌉.
    pub mtry: Option<usize>,
    pub seed: u64,
}

impl Default for RandomForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 6,
            min_leaf: 200,
            mtry: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RandomForest {
    pub trees: Vec<RegressionTree>,
}

impl Predictor for RandomForest {
    fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

impl Learner for RandomForestConfig {
    type Model = RandomForest;

    fn fit(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<RandomForest> {
        fit_random_forest(x, y, self)
    }
}

/// Bagged regression trees. Tree `i` draws its bootstrap sample and split
/// features from stream `streams::LEARNER` of `derive_seed(seed, i)`, so
/// trees can grow in parallel without changing the result.
pub fn fit_random_forest(x: &DMatrix<f64>, y: &[f64], config: &RandomForestConfig) -> Result<RandomForest> {
    check_inputs(x, y)?;
    if config.n_trees == 0 || config.min_leaf == 0 || config.mtry == Some(0) {
        return Err(Error::InvalidArgument(
            "n_trees, min_leaf and mtry must be positive".into(),
        ));
    }
    let n = x.nrows();
    let p = x.ncols();
    let params = TreeParams {
        max_depth: config.max_depth,
        min_leaf: config.min_leaf,
        mtry: config.mtry.unwrap_or(p.div_ceil(3)).min(p),
    };
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = SimRng::new(SimRng::derive_seed(config.seed, i as u64), streams::LEARNER);
            let sample: Vec<usize> = (0..n).map(|_| rng.below(n)).collect();
            RegressionTree::fit(x, y, sample, params, Some(&mut rng))
        })
        .collect();
    Ok(RandomForest { trees })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbmConfig {
    pub n_trees: usize,
    pub depth: usize,
    pub shrinkage: f64,
    pub min_leaf: usize,
    /// Fraction of rows drawn (without replacement) per round.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GbmConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            depth: 2,
            shrinkage: 0.02,
            min_leaf: 200,
            subsample: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BoostedTrees {
    pub init: f64,
    pub shrinkage: f64,
    pub trees: Vec<RegressionTree>,
}

impl BoostedTrees {
    /// Prediction using only the first `rounds` trees.
    pub fn predict_rounds(&self, x: &[f64], rounds: usize) -> f64 {
        self.init
            + self.shrinkage
                * self.trees[..rounds.min(self.trees.len())]
                    .iter()
                    .map(|t| t.predict(x))
                    .sum::<f64>()
    }
}

impl Predictor for BoostedTrees {
    fn predict(&self, x: &[f64]) -> f64 {
        self.predict_rounds(x, self.trees.len())
    }
}

impl Learner for GbmConfig {
    type Model = BoostedTrees;

    fn fit(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<BoostedTrees> {
        fit_gbm(x, y, self)
    }
}

/// Least-squares boosting from the response mean.
pub fn fit_gbm(x: &DMatrix<f64>, y: &[f64], config: &GbmConfig) -> Result<BoostedTrees> {
    check_inputs(x, y)?;
    if !(config.shrinkage > 0.0 && config.shrinkage <= 1.0) {
        return Err(Error::InvalidArgument("shrinkage must lie in (0, 1]".into()));
    }
    if !(config.subsample > 0.0 && config.subsample <= 1.0) {
        return Err(Error::InvalidArgument("subsample must lie in (0, 1]".into()));
    }
    if config.min_leaf == 0 {
        return Err(Error::InvalidArgument("min_leaf must be positive".into()));
    }
    let n = x.nrows();
    let init = y.iter().sum::<f64>() / n as f64;
    let params = TreeParams {
        max_depth: config.depth,
        min_leaf: config.min_leaf,
        mtry: x.ncols(),
    };
    let mut rng = SimRng::new(config.seed, streams::LEARNER);
    let n_sample = ((config.subsample * n as f64).round() as usize).clamp(1, n);
    let rows: Vec<Vec<f64>> = (0..n).map(|r| row(x, r)).collect();
    let mut fitted = vec![init; n];
    let mut residual = vec![0.0; n];
    let mut trees = Vec::with_capacity(config.n_trees);
    for _ in 0..config.n_trees {
        for i in 0..n {
            residual[i] = y[i] - fitted[i];
        }
        let sample = if n_sample == n {
            (0..n).collect()
        } else {
            rng.choose_indices(n, n_sample)
        };
        let tree = RegressionTree::fit(x, &residual, sample, params, None);
        for (f, r) in fitted.iter_mut().zip(&rows) {
            *f += config.shrinkage * tree.predict(r);
        }
        trees.push(tree);
    }
    Ok(BoostedTrees {
        init,
        shrinkage: config.shrinkage,
        trees,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden_units: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_units: 2,
            epochs: 2000,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

/// `x ↦ w₂ᵀ tanh(W₁x + b₁) + b₂`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    /// Hidden-by-input weights, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    inputs: usize,
}

impl Mlp {
    /// Weights uniform on ±1/√fan-in, drawn in the order W₁ (row-major),
    /// b₁, w₂, b₂ from stream `streams::LEARNER` of `seed`.
    pub fn init(inputs: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = SimRng::new(seed, streams::LEARNER);
        let a1 = 1.0 / (inputs as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        let w1 = (0..hidden * inputs).map(|_| rng.uniform_range(-a1, a1)).collect();
        let b1 = (0..hidden).map(|_| rng.uniform_range(-a1, a1)).collect();
        let w2 = (0..hidden).map(|_| rng.uniform_range(-a2, a2)).collect();
        let b2 = rng.uniform_range(-a2, a2);
        Self { w1, b1, w2, b2, inputs }
    }

    fn hidden(&self) -> usize {
        self.b1.len()
    }

    /// Flat parameter vector: W₁, b₁, w₂, b₂.
    pub fn params(&self) -> Vec<f64> {
        let mut v = self.w1.clone();
        v.extend(&self.b1);
        v.extend(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn set_params(&mut self, v: &[f64]) {
        let h = self.hidden();
        let nw = h * self.inputs;
        self.w1.copy_from_slice(&v[..nw]);
        self.b1.copy_from_slice(&v[nw..nw + h]);
        self.w2.copy_from_slice(&v[nw + h..nw + 2 * h]);
        self.b2 = v[nw + 2 * h];
    }

    /// Mean squared error and its gradient in the layout of [`Mlp::params`].
    pub fn loss_and_gradient(&self, rows: &[Vec<f64>], y: &[f64]) -> (f64, Vec<f64>) {
        let h = self.hidden();
        let p = self.inputs;
        let n = rows.len() as f64;
        let mut grad = vec![0.0; h * p + 2 * h + 1];
        let mut loss = 0.0;
        let mut z = vec![0.0; h];
        for (x, &target) in rows.iter().zip(y) {
            for (j, zj) in z.iter_mut().enumerate() {
                let a: f64 = self.b1[j] + (0..p).map(|k| self.w1[j * p + k] * x[k]).sum::<f64>();
                *zj = a.tanh();
            }
            let out = self.b2 + z.iter().zip(&self.w2).map(|(a, b)| a * b).sum::<f64>();
            let err = out - target;
            loss += err * err;
            let d = 2.0 * err / n;
            for j in 0..h {
                let da = d * self.w2[j] * (1.0 - z[j] * z[j]);
                for k in 0..p {
                    grad[j * p + k] += da * x[k];
                }
                grad[h * p + j] += da;
                grad[h * p + h + j] += d * z[j];
            }
            grad[h * p + 2 * h] += d;
        }
        (loss / n, grad)
    }
}

impl Predictor for Mlp {
    fn predict(&self, x: &[f64]) -> f64 {
        let p = self.inputs;
        self.b2
            + (0..self.hidden())
                .map(|j| {
                    let a: f64 = self.b1[j] + (0..p).map(|k| self.w1[j * p + k] * x[k]).sum::<f64>();
                    self.w2[j] * a.tanh()
                })
                .sum::<f64>()
    }
}

impl Learner for MlpConfig {
    type Model = Mlp;

    fn fit(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<Mlp> {
        fit_mlp(x, y, self)
    }
}

/// One hidden tanh layer trained by full-batch gradient descent on MSE
/// against the response divided by its root mean square.
pub fn fit_mlp(x: &DMatrix<f64>, y: &[f64], config: &MlpConfig) -> Result<Mlp> {
    check_inputs(x, y)?;
    if config.hidden_units == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::InvalidArgument(
            "hidden_units and learning_rate must be positive".into(),
        ));
    }
    let rows: Vec<Vec<f64>> = (0..x.nrows()).map(|r| row(x, r)).collect();
    // trained on y / rms(y); the scale is folded into the output layer
    let scale = (y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64).sqrt();
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let y: Vec<f64> = y.iter().map(|v| v / scale).collect();
    let y = y.as_slice();
    let mut net = Mlp::init(x.ncols(), config.hidden_units, config.seed);
    let mut params = net.params();
    for epoch in 0..config.epochs {
        let (loss, grad) = net.loss_and_gradient(&rows, y);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite loss at epoch {epoch}; lower the learning rate (now {})",
                config.learning_rate
            )));
        }
        for (w, g) in params.iter_mut().zip(&grad) {
            *w -= config.learning_rate * g;
        }
        net.set_params(&params);
    }
    let (loss, _) = net.loss_and_gradient(&rows, y);
    if !loss.is_finite() {
        return Err(Error::Divergence(format!(
            "non-finite final loss; lower the learning rate (now {})",
            config.learning_rate
        )));
    }
    net.w2.iter_mut().for_each(|w| *w *= scale);
    net.b2 *= scale;
    Ok(net)
}

/// Learner selection with its hyperparameters, as read from configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerConfig {
    LeastSquares(LeastSquaresConfig),
    RandomForest(RandomForestConfig),
    Gbm(GbmConfig),
    Mlp(MlpConfig),
}

impl LearnerConfig {
    pub fn fit(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<Box<dyn Predictor>> {
        Ok(match self {
            LearnerConfig::LeastSquares(c) => Box::new(c.fit(x, y)?),
            LearnerConfig::RandomForest(c) => Box::new(c.fit(x, y)?),
            LearnerConfig::Gbm(c) => Box::new(c.fit(x, y)?),
            LearnerConfig::Mlp(c) => Box::new(c.fit(x, y)?),
        })
    }

    /// Same learner with its seed replaced (least squares has none).
    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            LearnerConfig::LeastSquares(c) => LearnerConfig::LeastSquares(c),
            LearnerConfig::RandomForest(c) => LearnerConfig::RandomForest(RandomForestConfig { seed, ..c }),
            LearnerConfig::Gbm(c) => LearnerConfig::Gbm(GbmConfig { seed, ..c }),
            LearnerConfig::Mlp(c) => LearnerConfig::Mlp(MlpConfig { seed, ..c }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = SimRng::new(seed, 0);
        DMatrix::from_fn(n, p, |_, _| rng.standard_normal())
    }

    #[test]
    fn least_squares_exact_linear() {
        let x = toy(30, 3, 1);
        let c = [0.5, -1.25, 2.0];
        let y: Vec<f64> = (0..30).map(|r| (0..3).map(|k| x[(r, k)] * c[k]).sum()).collect();
        let m = fit_least_squares(&x, &y, 0.0).unwrap();
        for (a, b) in m.coefficients.iter().zip(c) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn least_squares_orthonormal_columns() {
        let s = 0.5f64;
        // columns (1,1,1,1)/2 and (1,-1,1,-1)/2
        let x = DMatrix::from_row_slice(4, 2, &[s, s, s, -s, s, s, s, -s]);
        let y = [0.3, -1.0, 2.0, 0.7];
        let m = fit_least_squares(&x, &y, 0.0).unwrap();
        let xty = x.transpose() * DVector::from_column_slice(&y);
        for k in 0..2 {
            assert!((m.coefficients[k] - xty[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn input_checks() {
        let x = toy(5, 2, 1);
        assert!(fit_least_squares(&x, &[1.0; 4], 1e-8).is_err());
        assert!(fit_gbm(
            &x,
            &[0.0; 5],
            &GbmConfig {
                shrinkage: 0.0,
                ..Default::default()
            }
        )
        .is_err());
        assert!(fit_random_forest(
            &x,
            &[0.0; 5],
            &RandomForestConfig {
                n_trees: 0,
                ..Default::default()
            }
        )
        .is_err());
        assert!(fit_least_squares(&DMatrix::zeros(0, 2), &[], 1e-8).is_err());
    }

    #[test]
    fn forest_constant_response() {
        let x = toy(40, 3, 2);
        let y = vec![0.37; 40];
        let f = fit_random_forest(
            &x,
            &y,
            &RandomForestConfig {
                n_trees: 10,
                ..Default::default()
            },
        )
        .unwrap();
        for r in 0..40 {
            assert!((f.predict(&row(&x, r)) - 0.37).abs() < 1e-15);
        }
    }

    #[test]
    fn forest_stump_predicts_bootstrap_mean() {
        let x = toy(25, 2, 3);
        let y: Vec<f64> = (0..25).map(|i| i as f64).collect();
        let cfg = RandomForestConfig {
            n_trees: 1,
            max_depth: 0,
            seed: 17,
            ..Default::default()
        };
        let f = fit_random_forest(&x, &y, &cfg).unwrap();
        let mut rng = SimRng::new(SimRng::derive_seed(17, 0), streams::LEARNER);
        let mean = (0..25).map(|_| y[rng.below(25)]).sum::<f64>() / 25.0;
        assert!((f.predict(&[9.0, -9.0]) - mean).abs() < 1e-12);
        assert!((f.predict(&[0.0, 0.0]) - mean).abs() < 1e-12);
    }

    #[test]
    fn forest_deterministic_under_seed() {
        let x = toy(60, 4, 4);
        let y: Vec<f64> = (0..60).map(|r| x[(r, 0)] * x[(r, 1)]).collect();
        let cfg = RandomForestConfig {
            n_trees: 20,
            min_leaf: 5,
            seed: 5,
            ..Default::default()
        };
        let a = fit_random_forest(&x, &y, &cfg).unwrap();
        let b = fit_random_forest(&x, &y, &cfg).unwrap();
        for r in 0..60 {
            let xr = row(&x, r);
            assert_eq!(a.predict(&xr).to_bits(), b.predict(&xr).to_bits());
        }
    }

    #[test]
    fn forest_leaves_respect_min_leaf() {
        let x = toy(80, 3, 6);
        let y: Vec<f64> = (0..80).map(|r| x[(r, 2)].sin()).collect();
        let cfg = RandomForestConfig {
            n_trees: 5,
            min_leaf: 7,
            max_depth: 10,
            ..Default::default()
        };
        let f = fit_random_forest(&x, &y, &cfg).unwrap();
        for t in &f.trees {
            assert!(t.leaf_counts().iter().all(|&c| c >= 7));
        }
    }

    #[test]
    fn gbm_zero_rounds_is_mean() {
        let x = toy(10, 2, 7);
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let m = fit_gbm(
            &x,
            &y,
            &GbmConfig {
                n_trees: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(m.predict(&[1.0, 1.0]), 4.5);
    }

    #[test]
    fn gbm_single_deep_tree_interpolates() {
        let x = toy(16, 2, 8);
        let y: Vec<f64> = (0..16).map(|r| x[(r, 0)] + x[(r, 1)].powi(2)).collect();
        let cfg = GbmConfig {
            n_trees: 1,
            depth: 20,
            shrinkage: 1.0,
            min_leaf: 1,
            subsample: 1.0,
            seed: 0,
        };
        let m = fit_gbm(&x, &y, &cfg).unwrap();
        for (r, target) in y.iter().enumerate() {
            assert!((m.predict(&row(&x, r)) - target).abs() < 1e-12);
        }
    }

    #[test]
    fn gbm_training_loss_nonincreasing() {
        let x = toy(120, 3, 9);
        let y: Vec<f64> = (0..120)
            .map(|r| x[(r, 0)] * x[(r, 1)] + 0.3 * x[(r, 2)].powi(2))
            .collect();
        let cfg = GbmConfig {
            n_trees: 60,
            depth: 2,
            shrinkage: 0.1,
            min_leaf: 5,
            subsample: 1.0,
            seed: 0,
        };
        let m = fit_gbm(&x, &y, &cfg).unwrap();
        let rows: Vec<Vec<f64>> = (0..120).map(|r| row(&x, r)).collect();
        let mse = |k: usize| {
            rows.iter()
                .zip(&y)
                .map(|(r, t)| (m.predict_rounds(r, k) - t).powi(2))
                .sum::<f64>()
                / 120.0
        };
        let losses: Vec<f64> = (0..=60).map(mse).collect();
        assert!(losses.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(losses[60] < 0.5 * losses[0]);
    }

    #[test]
    fn shift_equivariance_of_trees() {
        let x = toy(50, 3, 10);
        let y: Vec<f64> = (0..50).map(|r| x[(r, 0)].tanh() - x[(r, 2)]).collect();
        let c = 3.25;
        let y2: Vec<f64> = y.iter().map(|v| v + c).collect();
        let g = GbmConfig {
            n_trees: 30,
            min_leaf: 5,
            ..Default::default()
        };
        let a = fit_gbm(&x, &y, &g).unwrap();
        let b = fit_gbm(&x, &y2, &g).unwrap();
        let rf = RandomForestConfig {
            n_trees: 15,
            min_leaf: 5,
            seed: 2,
            ..Default::default()
        };
        let fa = fit_random_forest(&x, &y, &rf).unwrap();
        let fb = fit_random_forest(&x, &y2, &rf).unwrap();
        for r in 0..50 {
            let xr = row(&x, r);
            assert!((b.predict(&xr) - a.predict(&xr) - c).abs() < 1e-8);
            assert!((fb.predict(&xr) - fa.predict(&xr) - c).abs() < 1e-8);
        }
    }

    #[test]
    fn least_squares_ignores_shift_on_centered_columns() {
        let mut x = toy(40, 2, 11);
        for k in 0..2 {
            let m = x.column(k).mean();
            x.column_mut(k).add_scalar_mut(-m);
        }
        let y: Vec<f64> = (0..40).map(|r| 0.2 * x[(r, 0)] + (r % 3) as f64).collect();
        let y2: Vec<f64> = y.iter().map(|v| v + 5.0).collect();
        let a = fit_least_squares(&x, &y, 1e-8).unwrap();
        let b = fit_least_squares(&x, &y2, 1e-8).unwrap();
        for r in 0..40 {
            let xr = row(&x, r);
            assert!((a.predict(&xr) - b.predict(&xr)).abs() < 1e-8);
        }
    }

    #[test]
    fn mlp_zero_epochs_is_initial_network() {
        let x = toy(8, 3, 12);
        let y = vec![0.0; 8];
        let cfg = MlpConfig {
            epochs: 0,
            seed: 4,
            ..Default::default()
        };
        let m = fit_mlp(&x, &y, &cfg).unwrap();
        assert_eq!(m, Mlp::init(3, 2, 4));
        assert_eq!(
            m.predict(&[0.1, 0.2, 0.3]),
            fit_mlp(&x, &y, &cfg).unwrap().predict(&[0.1, 0.2, 0.3])
        );
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let x = toy(5, 2, 13);
        let rows: Vec<Vec<f64>> = (0..5).map(|r| row(&x, r)).collect();
        let y = [0.3, -0.2, 0.5, 0.1, -0.4];
        let mut net = Mlp::init(2, 2, 21);
        let theta = net.params();
        let (_, grad) = net.loss_and_gradient(&rows, &y);
        let h = 1e-5;
        for i in 0..theta.len() {
            let mut plus = theta.clone();
            plus[i] += h;
            net.set_params(&plus);
            let lp = net.loss_and_gradient(&rows, &y).0;
            let mut minus = theta.clone();
            minus[i] -= h;
            net.set_params(&minus);
            let lm = net.loss_and_gradient(&rows, &y).0;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(rel < 1e-4, "param {i}: fd {fd} vs analytic {}", grad[i]);
        }
    }

    #[test]
    fn mlp_fits_linear_target() {
        let x = toy(200, 2, 14);
        let y: Vec<f64> = (0..200).map(|r| 0.6 * x[(r, 0)] - 0.4 * x[(r, 1)]).collect();
        let m = fit_mlp(
            &x,
            &y,
            &MlpConfig {
                seed: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let mean = y.iter().sum::<f64>() / 200.0;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 200.0;
        let mse = (0..200).map(|r| (m.predict(&row(&x, r)) - y[r]).powi(2)).sum::<f64>() / 200.0;
        assert!(mse < 0.1 * var, "mse {mse} var {var}");
    }

    #[test]
    fn mlp_divergence_reported() {
        let x = toy(20, 2, 15) * 50.0;
        let y: Vec<f64> = (0..20).map(|r| 1e3 * x[(r, 0)]).collect();
        let cfg = MlpConfig {
            learning_rate: 1e6,
            epochs: 200,
            ..Default::default()
        };
        assert!(matches!(fit_mlp(&x, &y, &cfg), Err(Error::Divergence(_))));
    }

    #[test]
    fn config_json() {
        let c: LearnerConfig = serde_json::from_str(r#"{"kind":"random_forest","n_trees":7}"#).unwrap();
        assert_eq!(
            c,
            LearnerConfig::RandomForest(RandomForestConfig {
                n_trees: 7,
                ..Default::default()
            })
        );
        let g: LearnerConfig = serde_json::from_str(r#"{"kind":"gbm"}"#).unwrap();
        assert_eq!(g, LearnerConfig::Gbm(GbmConfig::default()));
    }
}
