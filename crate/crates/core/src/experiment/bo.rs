use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::model::FittedModel;
use crate::batch::BatchCandidate;
use crate::error::{Error, Result};
use crate::gp::{BatchAdjoint, ConditionedGp};
use crate::linalg::{cholesky_adjoint, cholesky_with_jitter, solve_lower_mut, solve_lower_transpose_mut, BASE_JITTER};
use crate::optimizer::BatchObjective;

struct SampleSet {
    /// GP conditioned exactly on the observed inputs (values unused)
    gp: ConditionedGp,
    /// `K_ZZ^{-1} (s_j - c)`, one column per posterior sample
    weights: DMatrix<f64>,
    /// best sampled latent value at the observed inputs, per sample
    incumbent: Vec<f64>,
}

/// Smoothed Monte Carlo noisy expected improvement for a q-batch.
///
/// For every hyper sample, latent values at the observed inputs are drawn
/// from the posterior; each draw fixes an incumbent (its maximum) and a
/// conditional GP for the batch values. The improvement of the smoothed batch
/// maximum over the incumbent is passed through a softplus, averaged over
/// draws, logged, and averaged over hyper samples. Units are standardized.
pub struct BoUtility {
    sets: Vec<SampleSet>,
    /// J x q frozen normals for the batch values
    xi: DMatrix<f64>,
    tau: f64,
    dim: usize,
}

fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn ln_softplus(x: f64) -> f64 {
    if x < -35.0 {
        x
    } else {
        softplus(x).ln()
    }
}

/// d ln softplus(x) / dx
fn ln_softplus_grad(x: f64) -> f64 {
    if x < -35.0 {
        1.0
    } else {
        let s = 1.0 / (1.0 + (-x).exp());
        s / softplus(x)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + v.iter().map(|a| (a - mx).exp()).sum::<f64>().ln()
}

impl BoUtility {
    pub fn new(model: &FittedModel, q: usize, n_samples: usize, tau: f64, seed: u64) -> Result<Self> {
        if model.data.is_empty() {
            return Err(Error::invalid("the BO utility needs observed data"));
        }
        if q == 0 || n_samples == 0 || tau <= 0.0 {
            return Err(Error::invalid("BO utility needs q >= 1, samples >= 1 and tau > 0"));
        }
        let z = model.data.points();
        let n = z.nrows();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sets = Vec::with_capacity(model.models().len());
        for post in model.models() {
            let h = post.hyper();
            let terms = post.batch_terms(z);
            let (l, _) = cholesky_with_jitter(&terms.cov, h.signal_var, BASE_JITTER)?;
            let eta = DMatrix::from_fn(n, n_samples, |_, _| StandardNormal.sample(&mut rng));
            let mut s = &l * eta;
            for j in 0..n_samples {
                for i in 0..n {
                    s[(i, j)] += terms.mean[i];
                }
            }
            let incumbent = (0..n_samples).map(|j| s.column(j).max()).collect();
            let gp = ConditionedGp::noiseless(z, &terms.mean, h)?;
            let mut weights = s.add_scalar(-h.mean_const);
            solve_lower_mut(gp.chol(), &mut weights);
            solve_lower_transpose_mut(gp.chol(), &mut weights);
            sets.push(SampleSet { gp, weights, incumbent });
        }
        let xi = DMatrix::from_fn(n_samples, q, |_, _| StandardNormal.sample(&mut rng));
        Ok(BoUtility { sets, xi, tau, dim: model.dim() })
    }

    fn eval(&self, x: &DMatrix<f64>, grad: bool) -> Result<(f64, Option<DMatrix<f64>>, f64)> {
        let q = x.nrows();
        if q != self.xi.ncols() || x.ncols() != self.dim {
            return Err(Error::invalid(format!(
                "utility expects {}x{} batches, got {}x{}",
                self.xi.ncols(),
                self.dim,
                q,
                x.ncols()
            )));
        }
        let tau = self.tau;
        let n_s = self.xi.nrows();
        let m = self.sets.len() as f64;
        let mut total = 0.0;
        let mut plain = 0.0;
        let mut g = grad.then(|| DMatrix::zeros(q, x.ncols()));
        for set in &self.sets {
            let h = set.gp.hyper();
            let terms = set.gp.batch_terms(x);
            let (lc, _) = cholesky_with_jitter(&terms.cov, h.signal_var, BASE_JITTER)?;
            // q x J batch values
            let f = (terms.k_zx.transpose() * &set.weights + &lc * self.xi.transpose()).add_scalar(h.mean_const);
            let mut logs = vec![0.0; n_s];
            let mut xs = vec![0.0; n_s];
            let mut soft = DMatrix::zeros(q, n_s);
            for j in 0..n_s {
                let col: Vec<f64> = f.column(j).iter().map(|v| v / tau).collect();
                let lse = log_sum_exp(&col);
                for i in 0..q {
                    soft[(i, j)] = (col[i] - lse).exp();
                }
                xs[j] = (tau * lse - set.incumbent[j]) / tau;
                logs[j] = tau.ln() + ln_softplus(xs[j]);
                plain += tau * softplus(xs[j]) / (n_s as f64 * m);
            }
            let lse = log_sum_exp(&logs);
            total += lse - (n_s as f64).ln();
            if let Some(g) = g.as_mut() {
                let mut y_bar = soft;
                for j in 0..n_s {
                    let w = (logs[j] - lse).exp() / m;
                    let c = w * ln_softplus_grad(xs[j]) / tau;
                    y_bar.column_mut(j).scale_mut(c);
                }
                let k_bar = &set.weights * y_bar.transpose();
                let l_bar = &y_bar * &self.xi;
                let cov_bar = cholesky_adjoint(&lc, &l_bar);
                let adj = BatchAdjoint { cov: Some(cov_bar), k_zx: Some(k_bar), ..Default::default() };
                *g += set.gp.backprop(x, &terms, &adj);
            }
        }
        let v = total / m;
        if !v.is_finite() {
            return Err(Error::numerical("non-finite BO utility"));
        }
        Ok((v, g, plain))
    }

    /// Mean smoothed improvement (not logged), averaged over hyper samples.
    pub fn improvement(&self, x: &DMatrix<f64>) -> Result<f64> {
        self.eval(x, false).map(|(_, _, p)| p)
    }
}

impl BatchObjective for BoUtility {
    fn value(&self, x: &DMatrix<f64>) -> Result<f64> {
        self.eval(x, false).map(|(v, _, _)| v)
    }

    fn value_and_gradient(&self, x: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        let (v, g, _) = self.eval(x, true)?;
        Ok((v, g.expect("gradient requested")))
    }
}

/// Observed input with the highest ensemble-mean prediction.
pub fn incumbent(model: &FittedModel) -> Option<DVector<f64>> {
    let pts = model.data.points();
    if pts.nrows() == 0 {
        return None;
    }
    let best = model.mean(pts).argmax().0;
    Some(pts.row(best).transpose())
}

/// `count` q x D batches whose rows are Gaussian perturbations of `center`,
/// clipped to the unit cube.
pub fn perturbed_batches(center: &DVector<f64>, q: usize, count: usize, sd: f64, seed: u64) -> Result<Vec<BatchCandidate>> {
    let normal = Normal::new(0.0, sd).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let m = DMatrix::from_fn(q, center.len(), |_, j| center[j] + normal.sample(&mut rng));
            BatchCandidate::clamped(m)
        })
        .collect()
}
