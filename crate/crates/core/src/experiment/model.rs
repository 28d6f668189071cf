use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::batch::BatchCandidate;
use crate::error::{Error, Result};
use crate::gp::{BatchAdjoint, ConditionedGp, Dataset, Standardizer, NOISE_FLOOR};
use crate::hyper::{sample_ensemble, sample_prior, EnsembleSource, HyperEnsemble, HyperPriorSpec, McmcSchedule};
use crate::optimizer::{optimize_batch, BatchObjective, OptimizerConfig};

const LN_2PI: f64 = 1.8378770664093453;

/// A hyperparameter ensemble conditioned on (standardized) data.
#[derive(Clone, Debug)]
pub struct FittedModel {
    pub ensemble: HyperEnsemble,
    pub standardizer: Standardizer,
    /// Data in standardized units.
    pub data: Dataset,
    models: Vec<ConditionedGp>,
}

impl FittedModel {
    pub fn new(ensemble: HyperEnsemble, data: Dataset, standardizer: Standardizer) -> Result<Self> {
        let models = ensemble.samples.iter().map(|h| ConditionedGp::new(&data, h)).collect::<Result<_>>()?;
        Ok(FittedModel { ensemble, standardizer, data, models })
    }

    /// Prior draws for empty data, otherwise a slice-sampling chain on the
    /// standardized outcomes.
    pub fn fit(raw: &Dataset, prior: &HyperPriorSpec, schedule: &McmcSchedule, standardize: bool, seed: u64) -> Result<Self> {
        if raw.is_empty() {
            let samples = sample_prior(prior, raw.dim(), schedule.retained(), seed)?;
            let ens = HyperEnsemble::new(samples, EnsembleSource::Prior)?;
            return Self::new(ens, raw.clone(), Standardizer::IDENTITY);
        }
        let st = if standardize { Standardizer::fit(raw.outcomes()) } else { Standardizer::IDENTITY };
        let data = st.standardize(raw);
        let ens = sample_ensemble(&data, prior, schedule, seed)?;
        Self::new(ens, data, st)
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    pub fn models(&self) -> &[ConditionedGp] {
        &self.models
    }

    /// Per-sample latent means and variances in original outcome units.
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<(DVector<f64>, DVector<f64>)> {
        let s = self.standardizer;
        self.models
            .iter()
            .map(|m| {
                let (mu, var) = m.predict_diag(x);
                (mu.map(|v| s.inverse(v)), var * (s.scale * s.scale))
            })
            .collect()
    }

    /// Ensemble-averaged posterior mean in original units.
    pub fn mean(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let mut acc = DVector::zeros(x.nrows());
        for m in &self.models {
            acc += m.mean(x);
        }
        (acc / self.models.len() as f64).map(|v| self.standardizer.inverse(v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub rmse: f64,
    pub nll: f64,
    /// Predictive variances raised to the floor.
    pub clamped_variances: usize,
}

/// RMSE of the ensemble mean and the NLL of the equal-weight mixture
/// predictive at noiseless ground-truth values.
pub fn evaluate_model(model: &FittedModel, test: &DMatrix<f64>, truth: &[f64], noisy: bool) -> Result<ModelMetrics> {
    if test.nrows() == 0 || truth.len() != test.nrows() {
        return Err(Error::invalid("test set must be non-empty and match its targets"));
    }
    let preds = model.predict(test);
    let m = preds.len() as f64;
    let s2 = model.standardizer.scale * model.standardizer.scale;
    let floor = NOISE_FLOOR * s2;
    let mut clamped = 0;
    let mut se = 0.0;
    let mut nll = 0.0;
    let mut lp = vec![0.0; preds.len()];
    for (t, y) in truth.iter().enumerate() {
        let mean = preds.iter().map(|(mu, _)| mu[t]).sum::<f64>() / m;
        se += (mean - y).powi(2);
        for (k, ((mu, var), h)) in preds.iter().zip(&model.ensemble.samples).enumerate() {
            let mut v = var[t] + if noisy { h.noise_var * s2 } else { 0.0 };
            if v < floor {
                v = floor;
                clamped += 1;
            }
            lp[k] = -0.5 * (LN_2PI + v.ln() + (y - mu[t]).powi(2) / v);
        }
        let mx = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        nll -= mx + lp.iter().map(|a| (a - mx).exp()).sum::<f64>().ln() - m.ln();
    }
    if clamped > 0 {
        log::warn!("{clamped} predictive variances raised to the floor");
    }
    let n = truth.len() as f64;
    Ok(ModelMetrics { rmse: (se / n).sqrt(), nll: nll / n, clamped_variances: clamped })
}

/// Ensemble-averaged posterior mean (standardized units) at a single point.
struct EnsembleMean<'a>(&'a FittedModel);

impl BatchObjective for EnsembleMean<'_> {
    fn value(&self, x: &DMatrix<f64>) -> Result<f64> {
        let m = self.0.models.len() as f64;
        Ok(self.0.models.iter().map(|g| g.mean(x).sum()).sum::<f64>() / m)
    }

    fn value_and_gradient(&self, x: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        let m = self.0.models.len() as f64;
        let mut v = 0.0;
        let mut g = DMatrix::zeros(x.nrows(), x.ncols());
        for model in &self.0.models {
            let terms = model.batch_terms(x);
            v += terms.mean.sum();
            let adj = BatchAdjoint { mean: Some(DVector::from_element(x.nrows(), 1.0 / m)), ..Default::default() };
            g += model.backprop(x, &terms, &adj);
        }
        Ok((v / m, g))
    }
}

/// Maximizer of the ensemble-averaged posterior mean over the unit cube.
/// Returns the center when there is no data.
pub fn inferred_maximizer(model: &FittedModel, cfg: &OptimizerConfig) -> Result<Vec<f64>> {
    let dim = model.dim();
    if model.data.is_empty() {
        return Ok(vec![0.5; dim]);
    }
    let obj = EnsembleMean(model);
    let pts = model.data.points();
    let means = model.mean(pts);
    let best = means.argmax().0;
    let warm =
        vec![BatchCandidate::new(pts.rows(best, 1).into_owned())?, BatchCandidate::new(DMatrix::from_element(1, dim, 0.5))?];
    let r = optimize_batch(&obj, 1, dim, cfg, &warm)?;
    Ok(r.batch.points().row(0).iter().copied().collect())
}
