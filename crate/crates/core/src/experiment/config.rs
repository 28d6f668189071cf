use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acquisition::{AcqOptions, AcquisitionKind, BaldEstimator, BetaSetting};
use crate::design::DesignMethod;
use crate::error::{Error, Result};
use crate::gp::KernelKind;
use crate::hyper::{HyperPriorSpec, McmcSchedule, SignalVarPrior};
use crate::optimizer::OptimizerConfig;

/// A batch-selection method: a model-free design or an optimized acquisition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algo {
    Sobol,
    Random,
    Lhs,
    LhsBeta,
    Bald,
    Nipv,
    Epig,
    Hipe,
}

impl Algo {
    pub const ALL: [Algo; 8] =
        [Algo::Sobol, Algo::Random, Algo::Lhs, Algo::LhsBeta, Algo::Bald, Algo::Nipv, Algo::Epig, Algo::Hipe];

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|a| a.name()).collect();
            Error::Config(format!("unknown algo {s:?}; expected one of {}", names.join("|")))
        })
    }

    pub fn design(self) -> Option<DesignMethod> {
        Some(match self {
            Algo::Sobol => DesignMethod::Sobol,
            Algo::Random => DesignMethod::Random,
            Algo::Lhs => DesignMethod::Lhs,
            Algo::LhsBeta => DesignMethod::LhsBeta,
            _ => return None,
        })
    }

    pub fn acquisition(self) -> Option<AcquisitionKind> {
        Some(match self {
            Algo::Bald => AcquisitionKind::Bald,
            Algo::Nipv => AcquisitionKind::Nipv,
            Algo::Epig => AcquisitionKind::Epig,
            Algo::Hipe => AcquisitionKind::Hipe,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match (self.design(), self.acquisition()) {
            (Some(d), _) => d.name(),
            (_, Some(a)) => a.name(),
            _ => unreachable!("every algo is a design or an acquisition"),
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Every batch is chosen by the algorithm.
    ActiveLearning,
    /// The first batch is chosen by the algorithm, later ones by the BO utility.
    TwoShot,
}

/// Flat experiment configuration. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: String,
    pub algo: String,
    pub mode: Mode,
    pub q: usize,
    pub batches: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,

    pub mcmc_burn_in: usize,
    pub mcmc_draws: usize,
    pub mcmc_thin: usize,
    pub kernel: KernelKind,
    pub prior_lengthscale_base: f64,
    pub prior_lengthscale_logsd: f64,
    pub prior_noise_sd_logmean: f64,
    pub prior_noise_sd_logsd: f64,
    pub prior_mean_var: f64,
    pub standardize: bool,

    /// Test points used inside the acquisitions (T).
    pub acq_test_points: usize,
    /// Frozen normal draws for BALD (N).
    pub acq_base_draws: usize,
    pub beta: BetaSetting,
    pub noisy_entropies: bool,
    pub noisy_beta: bool,
    pub bald_estimator: BaldEstimator,

    pub include_center: bool,
    pub lhs_beta_a: f64,
    pub lhs_beta_b: f64,
    pub lhs_beta_iters: usize,

    pub opt_restarts: usize,
    pub opt_raw_samples: usize,
    pub opt_max_iters: usize,
    pub opt_grad_tol: f64,

    /// Posterior samples per hyper sample in the BO utility.
    pub bo_mc_samples: usize,
    /// Smoothing temperature of the BO utility, in standardized units.
    pub bo_tau: f64,
    /// Extra raw batches drawn around the incumbent for the BO utility.
    pub bo_incumbent_samples: usize,
    pub bo_incumbent_sd: f64,

    /// Ground-truth test points for RMSE and NLL.
    pub eval_test_points: usize,
    /// Use the noisy predictive in the NLL.
    pub nll_noisy: bool,
    pub compute_inferred: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let prior = HyperPriorSpec::default();
        ExperimentConfig {
            benchmark: "hartmann6_6d".into(),
            algo: "hipe".into(),
            mode: Mode::ActiveLearning,
            q: 16,
            batches: 4,
            seeds: vec![0],
            out_dir: PathBuf::from("results"),
            mcmc_burn_in: 192,
            mcmc_draws: 288,
            mcmc_thin: 24,
            kernel: KernelKind::Matern52,
            prior_lengthscale_base: prior.lengthscale_base,
            prior_lengthscale_logsd: prior.lengthscale_logsd,
            prior_noise_sd_logmean: prior.noise_sd_logmean,
            prior_noise_sd_logsd: prior.noise_sd_logsd,
            prior_mean_var: prior.mean_prior_var,
            standardize: true,
            acq_test_points: 1024,
            acq_base_draws: 128,
            beta: BetaSetting::Auto,
            noisy_entropies: true,
            noisy_beta: true,
            bald_estimator: BaldEstimator::SharedSamples,
            include_center: true,
            lhs_beta_a: 2.0,
            lhs_beta_b: 5.0,
            lhs_beta_iters: 2000,
            opt_restarts: 4,
            opt_raw_samples: 384,
            opt_max_iters: 200,
            opt_grad_tol: 1e-6,
            bo_mc_samples: 128,
            bo_tau: 1e-3,
            bo_incumbent_samples: 384,
            bo_incumbent_sd: 0.1,
            eval_test_points: 2048,
            nll_noisy: false,
            compute_inferred: true,
        }
    }
}

impl ExperimentConfig {
    /// Defaults for the two-shot BO study.
    pub fn two_shot() -> Self {
        ExperimentConfig { mode: Mode::TwoShot, q: 24, batches: 2, ..Default::default() }
    }

    /// Smaller Monte Carlo sizes for quick runs.
    pub fn fast(mut self) -> Self {
        self.acq_test_points = 256;
        self.acq_base_draws = 64;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn algo(&self) -> Result<Algo> {
        Algo::parse(&self.algo)
    }

    pub fn prior(&self) -> HyperPriorSpec {
        HyperPriorSpec {
            lengthscale_base: self.prior_lengthscale_base,
            lengthscale_logsd: self.prior_lengthscale_logsd,
            noise_sd_logmean: self.prior_noise_sd_logmean,
            noise_sd_logsd: self.prior_noise_sd_logsd,
            mean_prior_mean: 0.0,
            mean_prior_var: self.prior_mean_var,
            signal_var: SignalVarPrior::Fixed { value: 1.0 },
            kernel: self.kernel,
        }
    }

    pub fn schedule(&self) -> McmcSchedule {
        McmcSchedule { burn_in: self.mcmc_burn_in, draws: self.mcmc_draws, thin: self.mcmc_thin }
    }

    pub fn optimizer(&self, seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            restarts: self.opt_restarts,
            raw_samples: self.opt_raw_samples,
            max_iters: self.opt_max_iters,
            grad_tol: self.opt_grad_tol,
            seed,
            ..Default::default()
        }
    }

    pub fn acq_options(&self) -> AcqOptions {
        AcqOptions {
            noisy_entropies: self.noisy_entropies,
            noisy_beta: self.noisy_beta,
            bald_estimator: self.bald_estimator,
            beta: self.beta,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.algo()?;
        crate::benchmarks::by_name(&self.benchmark)?;
        if self.q == 0 || self.batches == 0 {
            return bad("q and batches must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.mode == Mode::TwoShot && self.batches < 2 {
            return bad("two-shot runs need at least 2 batches".into());
        }
        for (name, v) in [
            ("acq_test_points", self.acq_test_points),
            ("acq_base_draws", self.acq_base_draws),
            ("bo_mc_samples", self.bo_mc_samples),
            ("eval_test_points", self.eval_test_points),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(self.bo_tau > 0.0 && self.bo_incumbent_sd > 0.0) {
            return bad("bo_tau and bo_incumbent_sd must be positive".into());
        }
        if let BetaSetting::Fixed(b) = self.beta {
            if !(b >= 0.0 && b.is_finite()) {
                return bad(format!("beta must be nonnegative, got {b}"));
            }
        }
        self.prior().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.schedule().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.optimizer(0).validate()?;
        Ok(())
    }
}

/// Parses `"a..b"` (exclusive), `"a..=b"` or a comma-separated list of seeds.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let err = || Error::Config(format!("bad seed list {s:?}; use 0..K, 0..=K or a,b,c"));
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| err())?;
        let (b, inclusive) = match b.strip_prefix('=') {
            Some(b) => (b, true),
            None => (b, false),
        };
        let b: u64 = b.trim().parse().map_err(|_| err())?;
        let seeds: Vec<u64> = if inclusive { (a..=b).collect() } else { (a..b).collect() };
        if seeds.is_empty() {
            return Err(err());
        }
        return Ok(seeds);
    }
    s.split(',').map(|p| p.trim().parse().map_err(|_| err())).collect()
}
