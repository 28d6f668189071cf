//! Acquisition objectives on a frozen context: BALD, EPIG, NIPV, the
//! hyperparameter weight and HIPE, plus a brute-force joint information-gain
//! estimator used as a reference.
//!
//! Every objective is a deterministic function of the batch once the
//! context (ensemble, data, test points and base normal draws) is built.
//! Gradients with respect to the batch are computed in reverse mode.

mod bald;
mod beta;
mod fantasy;
mod oracle;

use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::batch::BatchCandidate;
use crate::design::Sobol;
use crate::error::{Error, Result};
use crate::gp::{check_unit_cube, ConditionedGp, Dataset, TestCache};
use crate::hyper::HyperEnsemble;
use crate::optimizer::BatchObjective;

pub use bald::{bald, bald_with_grad};
pub use beta::estimate_beta;
pub use fantasy::{epig, epig_with_grad, nipv, nipv_with_grad};
pub use oracle::joint_eig_oracle;

/// Weight of the BALD term in HIPE. Serialized as `"auto"` or a number.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum BetaSetting {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for BetaSetting {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BetaSetting::Auto => s.serialize_str("auto"),
            BetaSetting::Fixed(b) => s.serialize_f64(*b),
        }
    }
}

impl<'de> Deserialize<'de> for BetaSetting {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(b) => Ok(BetaSetting::Fixed(b)),
            Raw::Str(s) if s == "auto" => Ok(BetaSetting::Auto),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("expected \"auto\" or a number, got {s:?}"))),
        }
    }
}

/// How BALD estimates the expected conditional entropy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BaldEstimator {
    /// Evaluate the per-component log densities on the same mixture samples
    /// used for the marginal term, so sampling error cancels between the two.
    #[default]
    SharedSamples,
    /// Exact average Gaussian entropy of the components.
    ClosedForm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcqOptions {
    /// Include observation noise in the EPIG and BALD entropies.
    pub noisy_entropies: bool,
    /// Include observation noise in the marginals used for the weight.
    pub noisy_beta: bool,
    pub bald_estimator: BaldEstimator,
    pub beta: BetaSetting,
    /// Absolute tolerance of the per-point mixture entropy quadrature.
    pub quadrature_tol: f64,
}

impl Default for AcqOptions {
    fn default() -> Self {
        AcqOptions {
            noisy_entropies: true,
            noisy_beta: true,
            bald_estimator: BaldEstimator::SharedSamples,
            beta: BetaSetting::Auto,
            quadrature_tol: 1e-6,
        }
    }
}

/// Everything an acquisition evaluation needs apart from the batch.
#[derive(Debug)]
pub struct AcqContext {
    ensemble: HyperEnsemble,
    data: Dataset,
    test_points: DMatrix<f64>,
    base_draws: DMatrix<f64>,
    options: AcqOptions,
    models: Vec<ConditionedGp>,
    caches: Vec<TestCache>,
    beta: OnceLock<f64>,
}

/// `count` points drawn uniformly from the unit cube.
pub fn uniform_test_points(count: usize, dim: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Uniform::new(0.0, 1.0).expect("valid range");
    DMatrix::from_fn(count, dim, |_, _| u.sample(&mut rng))
}

/// `n` x `q` quasi-random standard normal draws: a scrambled Sobol sequence
/// pushed through the normal quantile function. Column `j` does not depend on
/// `q`.
pub fn normal_draws(n: usize, q: usize, seed: u64) -> Result<DMatrix<f64>> {
    let u = Sobol::scrambled(q, seed)?.take_matrix(n);
    let std = Normal::standard();
    Ok(u.map(|v| std.inverse_cdf(v.clamp(1e-12, 1.0 - 1e-12))))
}

impl AcqContext {
    pub fn new(
        ensemble: HyperEnsemble,
        data: Dataset,
        test_points: DMatrix<f64>,
        base_draws: DMatrix<f64>,
        options: AcqOptions,
    ) -> Result<Self> {
        if ensemble.is_empty() {
            return Err(Error::invalid("acquisition needs at least one hyper sample"));
        }
        let dim = ensemble.dim();
        if data.dim() != dim {
            return Err(Error::invalid(format!("data has dimension {} but ensemble {dim}", data.dim())));
        }
        if test_points.nrows() == 0 || test_points.ncols() != dim {
            return Err(Error::invalid(format!(
                "test points must be a non-empty T x {dim} matrix, got {}x{}",
                test_points.nrows(),
                test_points.ncols()
            )));
        }
        check_unit_cube(&test_points, "test point")?;
        if base_draws.nrows() == 0 || base_draws.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("base draws must be a non-empty finite matrix"));
        }
        if let BetaSetting::Fixed(b) = options.beta {
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::invalid(format!("beta must be a nonnegative number, got {b}")));
            }
        }
        let mut models = Vec::with_capacity(ensemble.len());
        let mut caches = Vec::with_capacity(ensemble.len());
        for h in &ensemble.samples {
            let m = ConditionedGp::new(&data, h)?;
            caches.push(m.test_cache(&test_points));
            models.push(m);
        }
        Ok(AcqContext { ensemble, data, test_points, base_draws, options, models, caches, beta: OnceLock::new() })
    }

    /// Context with uniform test points and freshly seeded base draws for batches of size `q`.
    pub fn with_sizes(
        ensemble: HyperEnsemble,
        data: Dataset,
        q: usize,
        n_test: usize,
        n_draws: usize,
        seed: u64,
        options: AcqOptions,
    ) -> Result<Self> {
        let dim = ensemble.dim();
        let test = uniform_test_points(n_test, dim, seed);
        let draws = normal_draws(n_draws, q, seed.wrapping_add(0x9e37_79b9_7f4a_7c15))?;
        Self::new(ensemble, data, test, draws, options)
    }

    pub fn ensemble(&self) -> &HyperEnsemble {
        &self.ensemble
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn test_points(&self) -> &DMatrix<f64> {
        &self.test_points
    }

    pub fn base_draws(&self) -> &DMatrix<f64> {
        &self.base_draws
    }

    pub fn options(&self) -> &AcqOptions {
        &self.options
    }

    pub fn dim(&self) -> usize {
        self.ensemble.dim()
    }

    /// The resolved BALD weight; estimated once on first use when set to auto.
    pub fn beta(&self) -> Result<f64> {
        match self.options.beta {
            BetaSetting::Fixed(b) => Ok(b),
            BetaSetting::Auto => {
                if let Some(b) = self.beta.get() {
                    return Ok(*b);
                }
                let b = estimate_beta(self)?;
                Ok(*self.beta.get_or_init(|| b))
            }
        }
    }

    pub(crate) fn models(&self) -> &[ConditionedGp] {
        &self.models
    }

    pub(crate) fn caches(&self) -> &[TestCache] {
        &self.caches
    }

    pub(crate) fn check_batch(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() == 0 || x.ncols() != self.dim() {
            return Err(Error::invalid(format!("batch must be q x {} with q >= 1, got {}x{}", self.dim(), x.nrows(), x.ncols())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite batch coordinate"));
        }
        Ok(())
    }
}

/// `epig + beta * bald` on the same frozen draws.
pub fn hipe(ctx: &AcqContext, batch: &BatchCandidate) -> Result<f64> {
    hipe_with_grad(ctx, batch.points(), false).map(|(v, _)| v)
}

pub fn hipe_with_grad(ctx: &AcqContext, x: &DMatrix<f64>, grad: bool) -> Result<(f64, Option<DMatrix<f64>>)> {
    let beta = ctx.beta()?;
    let (e, ge) = epig_with_grad(ctx, x, grad)?;
    if beta == 0.0 {
        return Ok((e, ge));
    }
    let (b, gb) = bald_with_grad(ctx, x, grad)?;
    let g = match (ge, gb) {
        (Some(ge), Some(gb)) => Some(ge + gb * beta),
        _ => None,
    };
    Ok((e + beta * b, g))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionKind {
    Hipe,
    Bald,
    Epig,
    Nipv,
}

impl AcquisitionKind {
    pub fn name(self) -> &'static str {
        match self {
            AcquisitionKind::Hipe => "hipe",
            AcquisitionKind::Bald => "bald",
            AcquisitionKind::Epig => "epig",
            AcquisitionKind::Nipv => "nipv",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "hipe" => AcquisitionKind::Hipe,
            "bald" => AcquisitionKind::Bald,
            "epig" => AcquisitionKind::Epig,
            "nipv" => AcquisitionKind::Nipv,
            _ => return None,
        })
    }
}

/// An acquisition bound to a context, usable as an optimizer objective.
#[derive(Clone, Copy, Debug)]
pub struct Acquisition<'a> {
    pub ctx: &'a AcqContext,
    pub kind: AcquisitionKind,
}

impl Acquisition<'_> {
    fn eval(&self, x: &DMatrix<f64>, grad: bool) -> Result<(f64, Option<DMatrix<f64>>)> {
        match self.kind {
            AcquisitionKind::Hipe => hipe_with_grad(self.ctx, x, grad),
            AcquisitionKind::Bald => bald_with_grad(self.ctx, x, grad),
            AcquisitionKind::Epig => epig_with_grad(self.ctx, x, grad),
            AcquisitionKind::Nipv => nipv_with_grad(self.ctx, x, grad),
        }
    }

    pub fn evaluate(&self, batch: &BatchCandidate) -> Result<f64> {
        self.value(batch.points())
    }
}

impl BatchObjective for Acquisition<'_> {
    fn value(&self, x: &DMatrix<f64>) -> Result<f64> {
        self.eval(x, false).map(|(v, _)| v)
    }

    fn value_and_gradient(&self, x: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        let (v, g) = self.eval(x, true)?;
        Ok((v, g.expect("gradient requested")))
    }
}
