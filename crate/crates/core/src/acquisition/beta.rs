use super::AcqContext;
use crate::error::Result;
use crate::gp::{gaussian_entropy_1d, NOISE_FLOOR};
use crate::quadrature::mixture_entropy_1d;

/// Mean over test points of the gap between the entropy of the ensemble
/// mixture predictive and the average per-sample predictive entropy,
/// clamped at zero. Does not depend on any batch.
#[allow(clippy::needless_range_loop)]
pub fn estimate_beta(ctx: &AcqContext) -> Result<f64> {
    let models = ctx.models();
    if models.len() == 1 {
        return Ok(0.0);
    }
    let noisy = ctx.options().noisy_beta;
    let test = ctx.test_points();
    let t = test.nrows();
    let means: Vec<_> = models.iter().map(|m| m.mean(test)).collect();
    let mut total = 0.0;
    let mut mu = vec![0.0; models.len()];
    let mut var = vec![0.0; models.len()];
    for j in 0..t {
        let mut avg = 0.0;
        for (k, (model, cache)) in models.iter().zip(ctx.caches()).enumerate() {
            mu[k] = means[k][j];
            let v = cache.prior_var[j] + if noisy { model.hyper().noise_var } else { 0.0 };
            var[k] = v.max(NOISE_FLOOR);
            avg += gaussian_entropy_1d(var[k]);
        }
        avg /= models.len() as f64;
        total += mixture_entropy_1d(&mu, &var, ctx.options().quadrature_tol)? - avg;
    }
    Ok((total / t as f64).max(0.0))
}
