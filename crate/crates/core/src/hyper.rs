//! Hyperpriors, the unnormalized log-posterior over GP hyperparameters and a
//! coordinate-wise slice sampler that produces the fully Bayesian ensemble.
//!
//! Sampling happens in unconstrained coordinates: log-lengthscales, the log
//! noise standard deviation, the constant mean and (optionally) the log
//! signal variance. Densities in [`log_prior`] are stated in the natural
//! parameterization; the sampler adds the log-Jacobian of the exp transform.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{Dataset, HyperSample, KernelKind, NOISE_FLOOR};
use crate::linalg::{cholesky_with_jitter, log_det_from_cholesky, solve_lower_vec, BASE_JITTER};

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalVarPrior {
    Fixed { value: f64 },
    LogNormal { logmean: f64, logsd: f64 },
}

/// Prior over GP hyperparameters.
///
/// Lengthscales are log-normal with a dimension-scaled location
/// `lengthscale_base + ln(D) / 2`; the noise *standard deviation* is
/// log-normal; the constant mean is normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperPriorSpec {
    pub lengthscale_base: f64,
    pub lengthscale_logsd: f64,
    pub noise_sd_logmean: f64,
    pub noise_sd_logsd: f64,
    pub mean_prior_mean: f64,
    pub mean_prior_var: f64,
    pub signal_var: SignalVarPrior,
    pub kernel: KernelKind,
}

impl Default for HyperPriorSpec {
    fn default() -> Self {
        HyperPriorSpec {
            lengthscale_base: 0.75,
            lengthscale_logsd: 0.75,
            noise_sd_logmean: -5.5,
            noise_sd_logsd: 0.75,
            mean_prior_mean: 0.0,
            mean_prior_var: 0.25,
            signal_var: SignalVarPrior::Fixed { value: 1.0 },
            kernel: KernelKind::Matern52,
        }
    }
}

impl HyperPriorSpec {
    pub fn lengthscale_logmean(&self, dim: usize) -> f64 {
        self.lengthscale_base + (dim as f64).ln() / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.lengthscale_logsd, self.noise_sd_logsd, self.mean_prior_var];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("hyperprior scale parameters must be positive"));
        }
        match self.signal_var {
            SignalVarPrior::Fixed { value } if !(value.is_finite() && value > 0.0) => {
                Err(Error::invalid("fixed signal variance must be positive"))
            }
            SignalVarPrior::LogNormal { logsd, .. } if !(logsd.is_finite() && logsd > 0.0) => {
                Err(Error::invalid("signal variance log-sd must be positive"))
            }
            _ => Ok(()),
        }
    }

    fn signal_is_sampled(&self) -> bool {
        matches!(self.signal_var, SignalVarPrior::LogNormal { .. })
    }
}

/// Log density of LN(logmean, logsd) at `x > 0`, Jacobian included.
fn log_normal_density(x: f64, logmean: f64, logsd: f64) -> f64 {
    let z = (x.ln() - logmean) / logsd;
    -(x * logsd).ln() - 0.5 * LN_2PI - 0.5 * z * z
}

fn normal_density(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln()) - 0.5 * (x - mean).powi(2) / var
}

/// Log prior density of `hyper` in its natural parameterization.
pub fn log_prior(hyper: &HyperSample, spec: &HyperPriorSpec) -> Result<f64> {
    hyper.validate()?;
    spec.validate()?;
    let mu = spec.lengthscale_logmean(hyper.dim());
    let mut lp: f64 = hyper.lengthscales.iter().map(|l| log_normal_density(*l, mu, spec.lengthscale_logsd)).sum();
    lp += log_normal_density(hyper.noise_var.sqrt(), spec.noise_sd_logmean, spec.noise_sd_logsd);
    lp += normal_density(hyper.mean_const, spec.mean_prior_mean, spec.mean_prior_var);
    if let SignalVarPrior::LogNormal { logmean, logsd } = spec.signal_var {
        lp += log_normal_density(hyper.signal_var, logmean, logsd);
    }
    Ok(lp)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McmcSchedule {
    pub burn_in: usize,
    pub draws: usize,
    pub thin: usize,
}

impl Default for McmcSchedule {
    fn default() -> Self {
        McmcSchedule { burn_in: 192, draws: 288, thin: 24 }
    }
}

impl McmcSchedule {
    /// Number of retained samples.
    pub fn retained(&self) -> usize {
        self.draws.checked_div(self.thin).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.retained() == 0 {
            return Err(Error::invalid(format!("schedule draws={} thin={} retains no samples", self.draws, self.thin)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleSource {
    Prior,
    Posterior,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub seed: u64,
    pub log_posterior_evaluations: usize,
    pub mean_evaluations_per_update: f64,
    pub slice_widths: Vec<f64>,
    pub final_log_posterior: f64,
}

/// Equal-weight hyperparameter samples approximating `p(theta | D)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperEnsemble {
    pub samples: Vec<HyperSample>,
    pub source: EnsembleSource,
    pub diagnostics: Vec<ChainDiagnostics>,
}

impl HyperEnsemble {
    pub fn new(samples: Vec<HyperSample>, source: EnsembleSource) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("ensemble needs at least one sample"));
        }
        let d = samples[0].dim();
        for s in &samples {
            s.validate()?;
            if s.dim() != d {
                return Err(Error::invalid("ensemble samples differ in dimension"));
            }
        }
        Ok(HyperEnsemble { samples, source, diagnostics: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].dim()
    }

    /// Concatenates independently sampled ensembles.
    pub fn pool(parts: Vec<HyperEnsemble>) -> Result<Self> {
        let source = if parts.iter().all(|p| p.source == EnsembleSource::Prior) {
            EnsembleSource::Prior
        } else {
            EnsembleSource::Posterior
        };
        let mut samples = Vec::new();
        let mut diagnostics = Vec::new();
        for p in parts {
            samples.extend(p.samples);
            diagnostics.extend(p.diagnostics);
        }
        let mut e = HyperEnsemble::new(samples, source)?;
        e.diagnostics = diagnostics;
        Ok(e)
    }
}

/// Pairwise squared coordinate differences, reused across likelihood calls.
struct LikelihoodCache {
    n: usize,
    dim: usize,
    /// For each pair (i > j) in order, `dim` squared differences.
    sq_diffs: Vec<f64>,
    outcomes: Vec<f64>,
}

impl LikelihoodCache {
    fn new(data: &Dataset) -> Self {
        let n = data.len();
        let dim = data.dim();
        let p = data.points();
        let mut sq_diffs = Vec::with_capacity(n * n.saturating_sub(1) / 2 * dim);
        for i in 0..n {
            for j in 0..i {
                for d in 0..dim {
                    let v = p[(i, d)] - p[(j, d)];
                    sq_diffs.push(v * v);
                }
            }
        }
        LikelihoodCache { n, dim, sq_diffs, outcomes: data.outcomes().iter().copied().collect() }
    }

    fn log_likelihood(&self, hyper: &HyperSample) -> Option<f64> {
        let n = self.n;
        if n == 0 {
            return Some(0.0);
        }
        let inv: Vec<f64> = hyper.lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
        let mut gram = DMatrix::zeros(n, n);
        let mut idx = 0;
        for i in 0..n {
            gram[(i, i)] = hyper.signal_var + hyper.noise_var;
            for j in 0..i {
                let r2: f64 = self.sq_diffs[idx..idx + self.dim].iter().zip(&inv).map(|(a, b)| a * b).sum();
                idx += self.dim;
                let k = hyper.signal_var * hyper.kernel.profile(r2);
                gram[(i, j)] = k;
                gram[(j, i)] = k;
            }
        }
        let (l, _) = cholesky_with_jitter(&gram, hyper.signal_var, BASE_JITTER).ok()?;
        let mut r: Vec<f64> = self.outcomes.iter().map(|y| y - hyper.mean_const).collect();
        solve_lower_vec(&l, &mut r);
        let quad: f64 = r.iter().map(|v| v * v).sum();
        Some(-0.5 * quad - 0.5 * log_det_from_cholesky(&l) - 0.5 * n as f64 * LN_2PI)
    }
}

/// Unnormalized log posterior in unconstrained coordinates.
struct Target<'a> {
    spec: &'a HyperPriorSpec,
    dim: usize,
    cache: LikelihoodCache,
    evaluations: usize,
}

impl Target<'_> {
    fn n_params(&self) -> usize {
        self.dim + 2 + usize::from(self.spec.signal_is_sampled())
    }

    fn to_hyper(&self, u: &[f64]) -> Option<HyperSample> {
        let d = self.dim;
        let signal_var = match self.spec.signal_var {
            SignalVarPrior::Fixed { value } => value,
            SignalVarPrior::LogNormal { .. } => u[d + 2].exp(),
        };
        let noise_var = (2.0 * u[d]).exp();
        if noise_var < NOISE_FLOOR || !noise_var.is_finite() {
            return None;
        }
        HyperSample::new(u[..d].iter().map(|v| v.exp()).collect(), noise_var, signal_var, u[d + 1])
            .ok()
            .map(|h| h.with_kernel(self.spec.kernel))
    }

    fn log_density(&mut self, u: &[f64]) -> f64 {
        self.evaluations += 1;
        let Some(h) = self.to_hyper(u) else {
            return f64::NEG_INFINITY;
        };
        let Ok(lp) = log_prior(&h, self.spec) else {
            return f64::NEG_INFINITY;
        };
        // log-Jacobian of the exp transforms
        let mut jac: f64 = u[..self.dim].iter().sum::<f64>() + u[self.dim];
        if self.spec.signal_is_sampled() {
            jac += u[self.dim + 2];
        }
        match self.cache.log_likelihood(&h) {
            Some(ll) if ll.is_finite() => lp + jac + ll,
            _ => f64::NEG_INFINITY,
        }
    }
}

const MAX_STEP_OUT: usize = 20;
const MAX_SHRINK: usize = 200;

/// One univariate slice-sampling update of coordinate `i` (stepping out, then shrinkage).
fn slice_update(target: &mut Target<'_>, u: &mut [f64], current: f64, i: usize, width: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    let x0 = u[i];
    let level = current + rng.random::<f64>().max(f64::MIN_POSITIVE).ln();
    let mut lo = x0 - width * rng.random::<f64>();
    let mut hi = lo + width;
    let mut j = (MAX_STEP_OUT as f64 * rng.random::<f64>()) as usize;
    let mut k = MAX_STEP_OUT - 1 - j;
    loop {
        if j == 0 {
            break;
        }
        u[i] = lo;
        if target.log_density(u) <= level {
            break;
        }
        lo -= width;
        j -= 1;
    }
    loop {
        if k == 0 {
            break;
        }
        u[i] = hi;
        if target.log_density(u) <= level {
            break;
        }
        hi += width;
        k -= 1;
    }
    for _ in 0..MAX_SHRINK {
        let x1 = lo + (hi - lo) * rng.random::<f64>();
        u[i] = x1;
        let lp = target.log_density(u);
        if lp > level {
            return Ok(lp);
        }
        if x1 < x0 {
            lo = x1;
        } else {
            hi = x1;
        }
    }
    u[i] = x0;
    Err(Error::Inference(format!("slice shrinkage did not terminate for coordinate {i} at {x0:.4} (log posterior {current:.4})")))
}

/// Runs one slice-sampling chain and returns the thinned draws.
///
/// With empty data the chain targets the prior. Identical inputs give
/// bit-identical ensembles.
pub fn sample_ensemble(data: &Dataset, spec: &HyperPriorSpec, schedule: &McmcSchedule, seed: u64) -> Result<HyperEnsemble> {
    spec.validate()?;
    schedule.validate()?;
    let dim = data.dim();
    let mut target = Target { spec, dim, cache: LikelihoodCache::new(data), evaluations: 0 };
    let n_params = target.n_params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut u = vec![0.0; n_params];
    u[..dim].fill(spec.lengthscale_logmean(dim));
    u[dim] = spec.noise_sd_logmean;
    u[dim + 1] = spec.mean_prior_mean;
    if let SignalVarPrior::LogNormal { logmean, .. } = spec.signal_var {
        u[dim + 2] = logmean;
    }
    let mut lp = target.log_density(&u);
    let mut tries = 0;
    while !lp.is_finite() {
        tries += 1;
        if tries > 50 {
            return Err(Error::Inference(format!(
                "no finite log posterior near the prior centre after {tries} attempts (n = {}, D = {dim})",
                data.len()
            )));
        }
        // raise the noise until the Gram matrix is well conditioned
        u[dim] += 0.5;
        lp = target.log_density(&u);
    }

    let mut widths = vec![1.0; n_params];
    widths[dim + 1] = spec.mean_prior_var.sqrt();
    let mut jump_sums = vec![0.0; n_params];
    let mut samples = Vec::with_capacity(schedule.retained());
    let total = schedule.burn_in + schedule.draws;
    for sweep in 0..total {
        for i in 0..n_params {
            let before = u[i];
            lp = slice_update(&mut target, &mut u, lp, i, widths[i], &mut rng)?;
            jump_sums[i] += (u[i] - before).abs();
        }
        if sweep < schedule.burn_in && (sweep + 1) % 16 == 0 {
            for (w, s) in widths.iter_mut().zip(jump_sums.iter_mut()) {
                *w = (3.0 * *s / 16.0).clamp(0.05, 10.0);
                *s = 0.0;
            }
        }
        if sweep >= schedule.burn_in {
            let idx = sweep - schedule.burn_in + 1;
            if idx.is_multiple_of(schedule.thin) && samples.len() < schedule.retained() {
                let h = target
                    .to_hyper(&u)
                    .ok_or_else(|| Error::Inference("retained state maps to an invalid hyper sample".into()))?;
                samples.push(h);
            }
        }
    }
    let updates = (total * n_params).max(1);
    let diag = ChainDiagnostics {
        seed,
        log_posterior_evaluations: target.evaluations,
        mean_evaluations_per_update: target.evaluations as f64 / updates as f64,
        slice_widths: widths,
        final_log_posterior: lp,
    };
    let source = if data.is_empty() { EnsembleSource::Prior } else { EnsembleSource::Posterior };
    let mut ens = HyperEnsemble::new(samples, source)?;
    ens.diagnostics.push(diag);
    Ok(ens)
}

/// Independent draws from the prior (reference for chain diagnostics).
pub fn sample_prior(spec: &HyperPriorSpec, dim: usize, count: usize, seed: u64) -> Result<Vec<HyperSample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu = spec.lengthscale_logmean(dim);
    (0..count)
        .map(|_| {
            let mut z = || -> f64 { StandardNormal.sample(&mut rng) };
            let ls = (0..dim).map(|_| (mu + spec.lengthscale_logsd * z()).exp()).collect();
            let noise_sd = (spec.noise_sd_logmean + spec.noise_sd_logsd * z()).exp();
            let c = spec.mean_prior_mean + spec.mean_prior_var.sqrt() * z();
            let sv = match spec.signal_var {
                SignalVarPrior::Fixed { value } => value,
                SignalVarPrior::LogNormal { logmean, logsd } => (logmean + logsd * z()).exp(),
            };
            HyperSample::new(ls, noise_sd * noise_sd, sv, c).map(|h| h.with_kernel(spec.kernel))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn at_prior_centre(dim: usize, spec: &HyperPriorSpec) -> HyperSample {
        let l = spec.lengthscale_logmean(dim).exp();
        HyperSample::new(vec![l; dim], (-5.5f64).exp().powi(2), 1.0, 0.0).unwrap()
    }

    #[test]
    fn log_prior_at_zero_z_scores() {
        let spec = HyperPriorSpec::default();
        let d = 3;
        let h = at_prior_centre(d, &spec);
        let l = h.lengthscales[0];
        let s2pi = (2.0 * std::f64::consts::PI).sqrt();
        let mut expected = d as f64 * -(l * 0.75 * s2pi).ln();
        expected += -((-5.5f64).exp() * 0.75 * s2pi).ln();
        expected += -0.5 * (2.0 * std::f64::consts::PI * 0.25).ln();
        assert_abs_diff_eq!(log_prior(&h, &spec).unwrap(), expected, epsilon = 1e-9);
    }

    #[test]
    fn doubling_lengthscale_matches_analytic_increment() {
        let spec = HyperPriorSpec::default();
        let mut h = HyperSample::new(vec![0.7, 1.3], 0.01, 1.0, 0.1).unwrap();
        let before = log_prior(&h, &spec).unwrap();
        h.lengthscales[1] *= 2.0;
        let after = log_prior(&h, &spec).unwrap();
        // independently coded log-normal density
        let ln_pdf = |x: f64| {
            let mu = 0.75 + 2f64.ln() / 2.0;
            let s = 0.75;
            (1.0 / (x * s * (2.0 * std::f64::consts::PI).sqrt()) * (-(x.ln() - mu).powi(2) / (2.0 * s * s)).exp()).ln()
        };
        assert_abs_diff_eq!(after - before, ln_pdf(2.6) - ln_pdf(1.3), epsilon = 1e-10);
    }

    #[test]
    fn dimension_shift_is_location_shift() {
        let spec = HyperPriorSpec::default();
        assert_abs_diff_eq!(spec.lengthscale_logmean(16) - spec.lengthscale_logmean(4), 2f64.ln(), epsilon = 1e-14);
        let h4 = HyperSample::new(vec![0.9; 4], 0.01, 1.0, 0.0).unwrap();
        let h16 = HyperSample::new(vec![1.8; 16], 0.01, 1.0, 0.0).unwrap();
        let rest = log_prior(&HyperSample::new(vec![1.0], 0.01, 1.0, 0.0).unwrap(), &spec).unwrap()
            - log_normal_density(1.0, spec.lengthscale_logmean(1), 0.75);
        let per4 = (log_prior(&h4, &spec).unwrap() - rest) / 4.0;
        let per16 = (log_prior(&h16, &spec).unwrap() - rest) / 16.0;
        assert_abs_diff_eq!(per16, per4 - 2f64.ln(), epsilon = 1e-10);
    }

    #[test]
    fn default_schedule_keeps_twelve() {
        assert_eq!(McmcSchedule::default().retained(), 12);
        assert!(McmcSchedule { burn_in: 0, draws: 5, thin: 10 }.validate().is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_thinned() {
        let data = Dataset::new(
            DMatrix::from_row_slice(4, 2, &[0.1, 0.2, 0.4, 0.9, 0.8, 0.5, 0.3, 0.3]),
            DVector::from_vec(vec![0.5, -1.0, 0.8, 0.1]),
        )
        .unwrap();
        let sched = McmcSchedule { burn_in: 20, draws: 30, thin: 7 };
        let a = sample_ensemble(&data, &HyperPriorSpec::default(), &sched, 11).unwrap();
        let b = sample_ensemble(&data, &HyperPriorSpec::default(), &sched, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert_eq!(a.source, EnsembleSource::Posterior);
        let c = sample_ensemble(&data, &HyperPriorSpec::default(), &sched, 12).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn sampled_signal_variance_is_positive() {
        let spec = HyperPriorSpec { signal_var: SignalVarPrior::LogNormal { logmean: 0.0, logsd: 0.5 }, ..Default::default() };
        let e = sample_ensemble(&Dataset::empty(2), &spec, &McmcSchedule { burn_in: 5, draws: 20, thin: 5 }, 0).unwrap();
        assert_eq!(e.len(), 4);
        assert!(e.samples.iter().all(|h| h.signal_var > 0.0));
        assert!(e.samples.windows(2).any(|w| w[0].signal_var != w[1].signal_var));
    }
}
