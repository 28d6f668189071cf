//! Exact Gaussian-process regression primitives shared by every acquisition
//! function: ARD stationary kernels, posterior prediction, fantasy
//! conditioning on hypothetical batch inputs, the log marginal likelihood and
//! the differential entropy of a multivariate normal.
//!
//! Matrices hold one point per row. All routines are pure.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_jitter, log_det_from_cholesky, solve_lower_mut, solve_lower_transpose_mut, BASE_JITTER};

/// Smallest admissible observation-noise variance.
pub const NOISE_FLOOR: f64 = 1e-10;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    #[default]
    Matern52,
    Rbf,
}

impl KernelKind {
    /// Unit-variance kernel profile as a function of the scaled squared distance.
    #[inline]
    pub fn profile(self, r2: f64) -> f64 {
        match self {
            KernelKind::Matern52 => {
                let s5r = (5.0 * r2).sqrt();
                (1.0 + s5r + 5.0 * r2 / 3.0) * (-s5r).exp()
            }
            KernelKind::Rbf => (-0.5 * r2).exp(),
        }
    }

    /// `g(r2)` such that `d k(x, x') / d x_d = g(r2) (x_d - x'_d) / l_d^2`.
    #[inline]
    fn grad_factor(self, r2: f64) -> f64 {
        match self {
            KernelKind::Matern52 => {
                let s5r = (5.0 * r2).sqrt();
                -(5.0 / 3.0) * (1.0 + s5r) * (-s5r).exp()
            }
            KernelKind::Rbf => -(-0.5 * r2).exp(),
        }
    }
}

/// One draw of GP hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperSample {
    pub lengthscales: Vec<f64>,
    pub noise_var: f64,
    pub signal_var: f64,
    pub mean_const: f64,
    #[serde(default)]
    pub kernel: KernelKind,
}

impl HyperSample {
    /// Builds a validated sample; the noise variance is clamped to [`NOISE_FLOOR`].
    pub fn new(lengthscales: Vec<f64>, noise_var: f64, signal_var: f64, mean_const: f64) -> Result<Self> {
        let h = HyperSample {
            lengthscales,
            noise_var: if noise_var.is_finite() { noise_var.max(NOISE_FLOOR) } else { noise_var },
            signal_var,
            mean_const,
            kernel: KernelKind::Matern52,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn with_kernel(mut self, kernel: KernelKind) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.is_empty() {
            return Err(Error::invalid("hyper sample has no lengthscales"));
        }
        if let Some(l) = self.lengthscales.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::invalid(format!("lengthscale {l} is not positive and finite")));
        }
        if !(self.noise_var.is_finite() && self.noise_var >= NOISE_FLOOR) {
            return Err(Error::invalid(format!("noise variance {} below floor", self.noise_var)));
        }
        if !(self.signal_var.is_finite() && self.signal_var > 0.0) {
            return Err(Error::invalid(format!("signal variance {} not positive", self.signal_var)));
        }
        if !self.mean_const.is_finite() {
            return Err(Error::invalid("mean constant is not finite"));
        }
        Ok(())
    }

    fn inv_sq_lengthscales(&self) -> Vec<f64> {
        self.lengthscales.iter().map(|l| 1.0 / (l * l)).collect()
    }
}

/// Observed inputs in the unit cube plus scalar outcomes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DatasetFile", into = "DatasetFile")]
pub struct Dataset {
    points: DMatrix<f64>,
    outcomes: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    dim: Option<usize>,
    points: Vec<Vec<f64>>,
    outcomes: Vec<f64>,
}

impl TryFrom<DatasetFile> for Dataset {
    type Error = Error;

    fn try_from(f: DatasetFile) -> Result<Self> {
        let dim = match (f.dim, f.points.first()) {
            (Some(d), _) => d,
            (None, Some(p)) => p.len(),
            (None, None) => return Err(Error::invalid("empty dataset needs an explicit dim")),
        };
        Dataset::new(rows_to_matrix(&f.points, dim)?, DVector::from_vec(f.outcomes))
    }
}

impl From<Dataset> for DatasetFile {
    fn from(d: Dataset) -> Self {
        DatasetFile { dim: Some(d.dim()), points: matrix_to_rows(&d.points), outcomes: d.outcomes.iter().copied().collect() }
    }
}

/// Row-per-point matrix from nested vectors, checking every row has `dim` entries.
pub fn rows_to_matrix(rows: &[Vec<f64>], dim: usize) -> Result<DMatrix<f64>> {
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::invalid(format!("row of length {} in a {dim}-dimensional matrix", r.len())));
    }
    Ok(DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn check_unit_cube(points: &DMatrix<f64>, what: &str) -> Result<()> {
    if let Some(v) = points.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("{what} coordinate {v} outside [0, 1]")));
    }
    Ok(())
}

impl Dataset {
    pub fn new(points: DMatrix<f64>, outcomes: DVector<f64>) -> Result<Self> {
        if points.nrows() != outcomes.len() {
            return Err(Error::invalid(format!("{} points but {} outcomes", points.nrows(), outcomes.len())));
        }
        if points.ncols() == 0 {
            return Err(Error::invalid("dataset dimension must be at least 1"));
        }
        check_unit_cube(&points, "dataset")?;
        if outcomes.iter().any(|y| !y.is_finite()) {
            return Err(Error::invalid("non-finite outcome"));
        }
        Ok(Dataset { points, outcomes })
    }

    pub fn empty(dim: usize) -> Self {
        Dataset { points: DMatrix::zeros(0, dim), outcomes: DVector::zeros(0) }
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn outcomes(&self) -> &DVector<f64> {
        &self.outcomes
    }

    /// Appends a batch of observations.
    pub fn extend(&mut self, points: &DMatrix<f64>, outcomes: &[f64]) -> Result<()> {
        let extra = Dataset::new(points.clone(), DVector::from_column_slice(outcomes))?;
        if extra.dim() != self.dim() {
            return Err(Error::invalid("batch dimension does not match dataset"));
        }
        let n = self.len();
        let m = extra.len();
        let mut p = DMatrix::zeros(n + m, self.dim());
        p.rows_mut(0, n).copy_from(&self.points);
        p.rows_mut(n, m).copy_from(&extra.points);
        let mut y = DVector::zeros(n + m);
        y.rows_mut(0, n).copy_from(&self.outcomes);
        y.rows_mut(n, m).copy_from(&extra.outcomes);
        self.points = p;
        self.outcomes = y;
        Ok(())
    }

    /// Same inputs with outcomes mapped through `f`.
    pub fn map_outcomes(&self, f: impl Fn(f64) -> f64) -> Dataset {
        Dataset { points: self.points.clone(), outcomes: self.outcomes.map(f) }
    }
}

/// Affine outcome transform to zero mean and unit variance.
///
/// Identity when fewer than two outcomes are available.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub offset: f64,
    pub scale: f64,
}

impl Standardizer {
    pub const IDENTITY: Standardizer = Standardizer { offset: 0.0, scale: 1.0 };

    pub fn fit(outcomes: &DVector<f64>) -> Self {
        let n = outcomes.len();
        if n < 2 {
            return Self::IDENTITY;
        }
        let mean = outcomes.mean();
        let var = outcomes.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        Standardizer { offset: mean, scale: if sd > 1e-12 { sd } else { 1.0 } }
    }

    pub fn forward(&self, y: f64) -> f64 {
        (y - self.offset) / self.scale
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.scale + self.offset
    }

    pub fn standardize(&self, data: &Dataset) -> Dataset {
        data.map_outcomes(|y| self.forward(y))
    }
}

/// Mean vector and covariance of a joint Gaussian prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorGaussian {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl PosteriorGaussian {
    pub fn variances(&self) -> DVector<f64> {
        self.covariance.diagonal()
    }
}

fn check_hyper_input(m: &DMatrix<f64>, hyper: &HyperSample, what: &str) -> Result<()> {
    if m.ncols() != hyper.dim() {
        return Err(Error::invalid(format!(
            "{what} has {} columns but hyper sample has {} lengthscales",
            m.ncols(),
            hyper.dim()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite coordinate in {what}")));
    }
    Ok(())
}

/// Cross-covariance matrix `K(A, B)` under the ARD kernel of `hyper`.
pub fn kernel_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, hyper: &HyperSample) -> Result<DMatrix<f64>> {
    hyper.validate()?;
    check_hyper_input(a, hyper, "first input")?;
    check_hyper_input(b, hyper, "second input")?;
    Ok(kernel_unchecked(a, b, hyper))
}

pub(crate) fn kernel_unchecked(a: &DMatrix<f64>, b: &DMatrix<f64>, hyper: &HyperSample) -> DMatrix<f64> {
    let inv = hyper.inv_sq_lengthscales();
    let d = inv.len();
    let (r, s) = (a.nrows(), b.nrows());
    let mut k = DMatrix::zeros(r, s);
    for j in 0..s {
        for i in 0..r {
            let mut r2 = 0.0;
            for (t, w) in inv.iter().enumerate().take(d) {
                let diff = a[(i, t)] - b[(j, t)];
                r2 += diff * diff * w;
            }
            k[(i, j)] = hyper.signal_var * hyper.kernel.profile(r2);
        }
    }
    k
}

/// Symmetric `K(X, X)`, computing each pair once.
pub(crate) fn kernel_symmetric(x: &DMatrix<f64>, hyper: &HyperSample) -> DMatrix<f64> {
    let inv = hyper.inv_sq_lengthscales();
    let n = x.nrows();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        k[(j, j)] = hyper.signal_var;
        for i in (j + 1)..n {
            let mut r2 = 0.0;
            for (t, w) in inv.iter().enumerate() {
                let diff = x[(i, t)] - x[(j, t)];
                r2 += diff * diff * w;
            }
            let v = hyper.signal_var * hyper.kernel.profile(r2);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Adds `sum_ij gbar_ij d k(x_i, y_j) / d x_i` into `out` (rows of `x` move, `y` fixed).
pub(crate) fn accumulate_cross_grad(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    hyper: &HyperSample,
    gbar: &DMatrix<f64>,
    out: &mut DMatrix<f64>,
) {
    let inv = hyper.inv_sq_lengthscales();
    let d = inv.len();
    let mut diff = vec![0.0; d];
    for j in 0..y.nrows() {
        for i in 0..x.nrows() {
            let g = gbar[(i, j)];
            if g == 0.0 {
                continue;
            }
            let mut r2 = 0.0;
            for t in 0..d {
                diff[t] = x[(i, t)] - y[(j, t)];
                r2 += diff[t] * diff[t] * inv[t];
            }
            let f = g * hyper.signal_var * hyper.kernel.grad_factor(r2);
            for t in 0..d {
                out[(i, t)] += f * diff[t] * inv[t];
            }
        }
    }
}

/// Adds the gradient of `sum_ij gbar_ij K(X, X)_ij` with respect to `X` into `out`.
pub(crate) fn accumulate_symmetric_grad(x: &DMatrix<f64>, hyper: &HyperSample, gbar: &DMatrix<f64>, out: &mut DMatrix<f64>) {
    let inv = hyper.inv_sq_lengthscales();
    let d = inv.len();
    let n = x.nrows();
    let mut diff = vec![0.0; d];
    for i in 0..n {
        for j in (i + 1)..n {
            let g = gbar[(i, j)] + gbar[(j, i)];
            if g == 0.0 {
                continue;
            }
            let mut r2 = 0.0;
            for t in 0..d {
                diff[t] = x[(i, t)] - x[(j, t)];
                r2 += diff[t] * diff[t] * inv[t];
            }
            let f = g * hyper.signal_var * hyper.kernel.grad_factor(r2);
            for t in 0..d {
                let v = f * diff[t] * inv[t];
                out[(i, t)] += v;
                out[(j, t)] -= v;
            }
        }
    }
}

/// A GP conditioned on a fixed set of inputs for one hyper sample.
///
/// Holds the Cholesky factor of the (noisy) Gram matrix and the weight vector
/// `alpha = (K + s I)^{-1} (y - c)`. Everything a batch evaluation needs
/// beyond this is recomputed per batch.
#[derive(Clone, Debug)]
pub struct ConditionedGp {
    hyper: HyperSample,
    inputs: DMatrix<f64>,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    diag: f64,
}

/// Per-batch quantities from [`ConditionedGp::batch_terms`].
#[derive(Clone, Debug)]
pub struct BatchTerms {
    /// `K(Z, X)`, n x q
    pub k_zx: DMatrix<f64>,
    /// `L^{-1} K(Z, X)`, n x q
    pub b: DMatrix<f64>,
    /// Latent posterior mean at the batch.
    pub mean: DVector<f64>,
    /// Latent posterior covariance at the batch, q x q.
    pub cov: DMatrix<f64>,
}

/// Upstream gradients with respect to the pieces of [`BatchTerms`].
#[derive(Clone, Debug, Default)]
pub struct BatchAdjoint {
    pub mean: Option<DVector<f64>>,
    pub cov: Option<DMatrix<f64>>,
    pub b: Option<DMatrix<f64>>,
    pub k_zx: Option<DMatrix<f64>>,
}

/// Precomputed solves against a fixed set of test points.
#[derive(Clone, Debug)]
pub struct TestCache {
    pub points: DMatrix<f64>,
    /// `L^{-1} K(Z, T)`, n x T
    pub a: DMatrix<f64>,
    /// Latent posterior variance at each test point before any batch.
    pub prior_var: DVector<f64>,
}

/// Outcome-independent posterior variances after conditioning on a batch.
#[derive(Clone, Debug)]
pub struct FantasyTerms {
    pub terms: BatchTerms,
    /// Cholesky factor of the noisy batch covariance.
    pub s_chol: DMatrix<f64>,
    /// Posterior cross-covariance test x batch.
    pub cross: DMatrix<f64>,
    /// `cross * S^{-1}`
    pub p: DMatrix<f64>,
    /// Latent variance at each test point after conditioning on the batch.
    pub var: DVector<f64>,
}

impl ConditionedGp {
    /// Conditions on noisy observations.
    pub fn new(data: &Dataset, hyper: &HyperSample) -> Result<Self> {
        Self::build(data.points(), data.outcomes(), hyper, hyper.noise_var)
    }

    /// Conditions on exact latent values (only jitter on the diagonal).
    pub fn noiseless(inputs: &DMatrix<f64>, values: &DVector<f64>, hyper: &HyperSample) -> Result<Self> {
        Self::build(inputs, values, hyper, 0.0)
    }

    fn build(inputs: &DMatrix<f64>, values: &DVector<f64>, hyper: &HyperSample, noise: f64) -> Result<Self> {
        hyper.validate()?;
        check_hyper_input(inputs, hyper, "training inputs")?;
        let n = inputs.nrows();
        if values.len() != n {
            return Err(Error::invalid("training inputs and values differ in length"));
        }
        let mut gram = kernel_symmetric(inputs, hyper);
        for i in 0..n {
            gram[(i, i)] += noise;
        }
        let (chol, jit) = cholesky_with_jitter(&gram, hyper.signal_var, BASE_JITTER)?;
        let mut alpha = values.add_scalar(-hyper.mean_const);
        crate::linalg::solve_lower_vec(&chol, alpha.as_mut_slice());
        crate::linalg::solve_lower_transpose_vec(&chol, alpha.as_mut_slice());
        Ok(ConditionedGp { hyper: hyper.clone(), inputs: inputs.clone(), chol, alpha, diag: noise + jit })
    }

    pub fn hyper(&self) -> &HyperSample {
        &self.hyper
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Total diagonal added to the training Gram matrix (noise plus jitter).
    pub fn gram_diagonal(&self) -> f64 {
        self.diag
    }

    /// `K(Z, Q)` and `L^{-1} K(Z, Q)`.
    pub fn cross_solve(&self, query: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let k = kernel_unchecked(&self.inputs, query, &self.hyper);
        let mut b = k.clone();
        solve_lower_mut(&self.chol, &mut b);
        (k, b)
    }

    pub fn mean(&self, query: &DMatrix<f64>) -> DVector<f64> {
        if self.is_empty() {
            return DVector::from_element(query.nrows(), self.hyper.mean_const);
        }
        let k = kernel_unchecked(query, &self.inputs, &self.hyper);
        (k * &self.alpha).add_scalar(self.hyper.mean_const)
    }

    /// Latent mean and variance at each query point.
    pub fn predict_diag(&self, query: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
        let mean = self.mean(query);
        let mut var = DVector::from_element(query.nrows(), self.hyper.signal_var);
        if !self.is_empty() {
            let (_, b) = self.cross_solve(query);
            for j in 0..query.nrows() {
                var[j] -= b.column(j).norm_squared();
            }
        }
        (mean, var.map(|v| v.max(0.0)))
    }

    /// Latent posterior mean and covariance at the rows of `x`.
    pub fn batch_terms(&self, x: &DMatrix<f64>) -> BatchTerms {
        let mean = self.mean(x);
        let mut cov = kernel_symmetric(x, &self.hyper);
        let (k_zx, b) = if self.is_empty() {
            (DMatrix::zeros(0, x.nrows()), DMatrix::zeros(0, x.nrows()))
        } else {
            let (k, b) = self.cross_solve(x);
            cov -= b.transpose() * &b;
            (k, b)
        };
        let cov = (&cov + cov.transpose()) * 0.5;
        BatchTerms { k_zx, b, mean, cov }
    }

    /// Pulls gradients on the batch terms back to the batch coordinates.
    pub fn backprop(&self, x: &DMatrix<f64>, terms: &BatchTerms, adj: &BatchAdjoint) -> DMatrix<f64> {
        let q = x.nrows();
        let mut out = DMatrix::zeros(q, x.ncols());
        if let Some(cb) = &adj.cov {
            accumulate_symmetric_grad(x, &self.hyper, cb, &mut out);
        }
        if self.is_empty() {
            return out;
        }
        let n = self.len();
        let mut b_bar = adj.b.clone().unwrap_or_else(|| DMatrix::zeros(n, q));
        if let Some(cb) = &adj.cov {
            b_bar -= &terms.b * (cb + cb.transpose());
        }
        solve_lower_transpose_mut(&self.chol, &mut b_bar);
        let mut k_bar = b_bar;
        if let Some(mb) = &adj.mean {
            k_bar += &self.alpha * mb.transpose();
        }
        if let Some(kb) = &adj.k_zx {
            k_bar += kb;
        }
        accumulate_cross_grad(x, &self.inputs, &self.hyper, &k_bar.transpose(), &mut out);
        out
    }

    pub fn test_cache(&self, test: &DMatrix<f64>) -> TestCache {
        let t = test.nrows();
        let (a, prior_var) = if self.is_empty() {
            (DMatrix::zeros(0, t), DVector::from_element(t, self.hyper.signal_var))
        } else {
            let (_, a) = self.cross_solve(test);
            let v = DVector::from_fn(t, |j, _| (self.hyper.signal_var - a.column(j).norm_squared()).max(0.0));
            (a, v)
        };
        TestCache { points: test.clone(), a, prior_var }
    }

    /// Posterior variance at the cached test points after additionally
    /// observing noisy outcomes at the rows of `x`.
    pub fn fantasy(&self, cache: &TestCache, x: &DMatrix<f64>) -> Result<FantasyTerms> {
        let terms = self.batch_terms(x);
        let q = x.nrows();
        let mut s = terms.cov.clone();
        for i in 0..q {
            s[(i, i)] += self.hyper.noise_var;
        }
        let (s_chol, _) = cholesky_with_jitter(&s, self.hyper.signal_var, BASE_JITTER)?;
        let mut cross = kernel_unchecked(&cache.points, x, &self.hyper);
        if !self.is_empty() {
            cross -= cache.a.transpose() * &terms.b;
        }
        // P^T = S^{-1} C^T
        let mut pt = cross.transpose();
        solve_lower_mut(&s_chol, &mut pt);
        solve_lower_transpose_mut(&s_chol, &mut pt);
        let p = pt.transpose();
        let var = DVector::from_fn(cache.points.nrows(), |t, _| {
            let red: f64 = p.row(t).iter().zip(cross.row(t).iter()).map(|(a, b)| a * b).sum();
            (cache.prior_var[t] - red).max(0.0)
        });
        Ok(FantasyTerms { terms, s_chol, cross, p, var })
    }

    /// Gradient of `sum_t weights_t * var_t` with respect to the batch.
    pub fn fantasy_backprop(
        &self,
        cache: &TestCache,
        x: &DMatrix<f64>,
        f: &FantasyTerms,
        weights: &DVector<f64>,
    ) -> DMatrix<f64> {
        // var_t = v_t - c_t S^{-1} c_t^T
        let mut c_bar = f.p.clone();
        for (t, w) in weights.iter().enumerate() {
            c_bar.row_mut(t).scale_mut(-2.0 * w);
        }
        let mut wp = f.p.clone();
        for (t, w) in weights.iter().enumerate() {
            wp.row_mut(t).scale_mut(*w);
        }
        let s_bar = f.p.transpose() * wp;
        let adj = BatchAdjoint {
            cov: Some(s_bar),
            b: if self.is_empty() { None } else { Some(-(&cache.a * &c_bar)) },
            ..Default::default()
        };
        let mut out = self.backprop(x, &f.terms, &adj);
        accumulate_cross_grad(x, &cache.points, &self.hyper, &c_bar.transpose(), &mut out);
        out
    }
}

/// Posterior over `query` given `data`. With `include_noise` the covariance
/// is that of noisy observations `y` rather than latent `f`.
pub fn posterior(data: &Dataset, hyper: &HyperSample, query: &DMatrix<f64>, include_noise: bool) -> Result<PosteriorGaussian> {
    if query.nrows() == 0 {
        return Err(Error::invalid("posterior query is empty"));
    }
    hyper.validate()?;
    check_hyper_input(query, hyper, "query")?;
    let cond = ConditionedGp::new(data, hyper)?;
    let terms = cond.batch_terms(query);
    let mut covariance = terms.cov;
    if include_noise {
        for i in 0..query.nrows() {
            covariance[(i, i)] += hyper.noise_var;
        }
    }
    Ok(PosteriorGaussian { mean: terms.mean, covariance })
}

/// Latent posterior variance at each test point after conditioning on the
/// inputs of `data` and the (unobserved) rows of `batch`. With
/// `include_noise` the observation noise is added to each value.
pub fn fantasy_variance(
    data: &Dataset,
    hyper: &HyperSample,
    batch: &DMatrix<f64>,
    test: &DMatrix<f64>,
    include_noise: bool,
) -> Result<DVector<f64>> {
    if batch.nrows() == 0 {
        return Err(Error::invalid("fantasy batch is empty"));
    }
    check_hyper_input(batch, hyper, "batch")?;
    check_hyper_input(test, hyper, "test points")?;
    let cond = ConditionedGp::new(data, hyper)?;
    let cache = cond.test_cache(test);
    let f = cond.fantasy(&cache, batch)?;
    let mut v = f.var;
    if include_noise {
        v.add_scalar_mut(hyper.noise_var);
    }
    Ok(v)
}

/// Differential entropy (nats) of a multivariate normal with covariance `cov`.
pub fn gaussian_entropy(cov: &DMatrix<f64>) -> Result<f64> {
    let m = cov.nrows();
    if m == 0 || cov.ncols() != m {
        return Err(Error::invalid("entropy needs a non-empty square covariance"));
    }
    let scale = cov.diagonal().mean().abs();
    let asym = (cov - cov.transpose()).abs().max();
    if asym > 1e-9 * scale.max(1e-300) {
        return Err(Error::invalid(format!("covariance not symmetric (max asymmetry {asym:.3e})")));
    }
    let (l, _) = cholesky_with_jitter(cov, scale, 0.0)?;
    Ok(0.5 * (m as f64 * (LN_2PI + 1.0) + log_det_from_cholesky(&l)))
}

/// Entropy of a univariate normal with variance `var`.
#[inline]
pub fn gaussian_entropy_1d(var: f64) -> f64 {
    0.5 * (LN_2PI + 1.0 + var.ln())
}

/// `log N(y; c 1, K + s^2 I)`.
pub fn log_marginal_likelihood(data: &Dataset, hyper: &HyperSample) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("log marginal likelihood needs at least one observation"));
    }
    let cond = ConditionedGp::new(data, hyper)?;
    let resid = data.outcomes().add_scalar(-hyper.mean_const);
    let quad = resid.dot(&cond.alpha);
    let n = data.len() as f64;
    Ok(-0.5 * quad - 0.5 * log_det_from_cholesky(&cond.chol) - 0.5 * n * LN_2PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn hyper1(l: f64) -> HyperSample {
        HyperSample::new(vec![l], 1e-10, 1.0, 0.0).unwrap()
    }

    #[test]
    fn kernel_self_covariance_is_signal_variance() {
        let x = DMatrix::from_row_slice(1, 2, &[0.3, 0.7]);
        let h = HyperSample::new(vec![0.4, 0.9], 0.01, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(kernel_matrix(&x, &x, &h).unwrap()[(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn matern_unit_distance_value() {
        // direct evaluation: (1 + sqrt5 + 5/3) exp(-sqrt5)
        let s5 = 5f64.sqrt();
        let expected = (1.0 + s5 + 5.0 / 3.0) * (-s5).exp();
        let a = DMatrix::from_row_slice(1, 1, &[0.0]);
        let b = DMatrix::from_row_slice(1, 1, &[1.0]);
        let k = kernel_matrix(&a, &b, &hyper1(1.0)).unwrap()[(0, 0)];
        assert_abs_diff_eq!(k, expected, epsilon = 1e-14);
        assert_abs_diff_eq!(k, 0.523994, epsilon = 1e-6);
    }

    #[test]
    fn huge_lengthscale_ignores_coordinate() {
        let h = HyperSample::new(vec![0.3, 1e12], 0.01, 1.0, 0.0).unwrap();
        let a = DMatrix::from_row_slice(1, 2, &[0.2, 0.0]);
        let b1 = DMatrix::from_row_slice(1, 2, &[0.6, 0.0]);
        let b2 = DMatrix::from_row_slice(1, 2, &[0.6, 1.0]);
        let k1 = kernel_matrix(&a, &b1, &h).unwrap()[(0, 0)];
        let k2 = kernel_matrix(&a, &b2, &h).unwrap()[(0, 0)];
        assert_abs_diff_eq!(k1, k2, epsilon = 1e-12);
    }

    #[test]
    fn kernel_rejects_non_finite() {
        let a = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(matches!(kernel_matrix(&a, &a, &hyper1(1.0)), Err(Error::InvalidArgument(_))));
        let mut h = hyper1(1.0);
        h.lengthscales[0] = f64::INFINITY;
        let b = DMatrix::from_row_slice(1, 1, &[0.5]);
        assert!(kernel_matrix(&b, &b, &h).is_err());
    }

    #[test]
    fn empty_data_posterior_is_prior() {
        let h = HyperSample::new(vec![0.5], 0.1, 2.0, 0.0).unwrap();
        let q = DMatrix::from_row_slice(3, 1, &[0.1, 0.4, 0.9]);
        let p = posterior(&Dataset::empty(1), &h, &q, false).unwrap();
        assert!(p.mean.iter().all(|m| *m == 0.0));
        let k = kernel_matrix(&q, &q, &h).unwrap();
        assert!((p.covariance - k).abs().max() < 1e-15);
    }

    #[test]
    fn interpolates_single_point() {
        let data = Dataset::new(DMatrix::from_row_slice(1, 1, &[0.3]), DVector::from_vec(vec![1.7])).unwrap();
        let q = DMatrix::from_row_slice(1, 1, &[0.3]);
        let p = posterior(&data, &hyper1(0.5), &q, false).unwrap();
        assert_abs_diff_eq!(p.mean[0], 1.7, epsilon = 1e-6);
        assert!(p.covariance[(0, 0)].abs() < 1e-6);
    }

    #[test]
    fn noisy_posterior_adds_noise_to_diagonal() {
        let h = HyperSample::new(vec![0.3, 0.6], 0.05, 1.0, 0.2).unwrap();
        let data =
            Dataset::new(DMatrix::from_row_slice(3, 2, &[0.1, 0.2, 0.5, 0.5, 0.9, 0.3]), DVector::from_vec(vec![0.3, -0.1, 1.0]))
                .unwrap();
        let q = DMatrix::from_row_slice(2, 2, &[0.2, 0.2, 0.7, 0.8]);
        let a = posterior(&data, &h, &q, false).unwrap();
        let b = posterior(&data, &h, &q, true).unwrap();
        let d = b.covariance - a.covariance;
        assert_abs_diff_eq!(d[(0, 0)], 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(d[(1, 1)], 0.05, epsilon = 1e-15);
        assert_eq!(d[(0, 1)], 0.0);
    }

    #[test]
    fn fantasy_on_test_point_collapses_variance() {
        let test = DMatrix::from_row_slice(2, 1, &[0.25, 0.8]);
        let batch = DMatrix::from_row_slice(1, 1, &[0.25]);
        let v = fantasy_variance(&Dataset::empty(1), &hyper1(0.3), &batch, &test, false).unwrap();
        assert!(v[0] < 1e-6, "{}", v[0]);
        assert!(v[1] > 0.1);
    }

    #[test]
    fn fantasy_far_batch_keeps_prior_variance() {
        let test = DMatrix::from_row_slice(2, 1, &[0.0, 0.05]);
        let batch = DMatrix::from_row_slice(1, 1, &[1.0]);
        let v = fantasy_variance(&Dataset::empty(1), &hyper1(0.01), &batch, &test, false).unwrap();
        assert_abs_diff_eq!(v[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn entropy_closed_forms() {
        assert_abs_diff_eq!(gaussian_entropy(&DMatrix::identity(1, 1)).unwrap(), 1.418939, epsilon = 1e-6);
        assert_abs_diff_eq!(gaussian_entropy(&DMatrix::identity(2, 2)).unwrap(), 2.837877, epsilon = 1e-6);
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        // 2.837877 + 0.5 ln(0.75)
        assert_abs_diff_eq!(gaussian_entropy(&c).unwrap(), 2.694036, epsilon = 1e-6);
        assert_abs_diff_eq!(gaussian_entropy_1d(1.0), 1.418939, epsilon = 1e-6);
    }

    #[test]
    fn entropy_rejects_indefinite() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(gaussian_entropy(&c), Err(Error::Numerical(_))));
    }

    #[test]
    fn lml_standard_normal_at_mean() {
        let h = HyperSample::new(vec![1.0], 1e-10, 1.0, 0.4).unwrap();
        let data = Dataset::new(DMatrix::from_row_slice(1, 1, &[0.5]), DVector::from_vec(vec![0.4])).unwrap();
        assert_abs_diff_eq!(log_marginal_likelihood(&data, &h).unwrap(), -0.918939, epsilon = 1e-6);
        assert!(log_marginal_likelihood(&Dataset::empty(1), &h).is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(DMatrix::from_row_slice(1, 1, &[1.2]), DVector::from_vec(vec![0.0])).is_err());
        assert!(Dataset::new(DMatrix::from_row_slice(2, 1, &[0.2, 0.3]), DVector::from_vec(vec![0.0])).is_err());
        let mut d = Dataset::empty(2);
        d.extend(&DMatrix::from_row_slice(1, 2, &[0.1, 0.2]), &[3.0]).unwrap();
        assert_eq!(d.len(), 1);
        let json = serde_json::to_string(&d).unwrap();
        let back: Dataset = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
        let empty: Dataset = serde_json::from_str(r#"{"dim":3,"points":[],"outcomes":[]}"#).unwrap();
        assert_eq!(empty.dim(), 3);
    }

    #[test]
    fn standardizer_identity_below_two_points() {
        assert_eq!(Standardizer::fit(&DVector::from_vec(vec![5.0])), Standardizer::IDENTITY);
        let s = Standardizer::fit(&DVector::from_vec(vec![1.0, 3.0]));
        assert_abs_diff_eq!(s.forward(3.0), 2f64.sqrt() / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.inverse(s.forward(-4.2)), -4.2, epsilon = 1e-12);
    }
}
