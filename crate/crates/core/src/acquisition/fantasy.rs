use nalgebra::{DMatrix, DVector};

use super::AcqContext;
use crate::batch::BatchCandidate;
use crate::error::Result;
use crate::gp::{gaussian_entropy_1d, NOISE_FLOOR};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Target {
    Entropy,
    Variance,
}

/// Average over the ensemble and test points of either the negative fantasy
/// entropy or the negative latent fantasy variance.
fn fantasy_objective(ctx: &AcqContext, x: &DMatrix<f64>, target: Target, grad: bool) -> Result<(f64, Option<DMatrix<f64>>)> {
    ctx.check_batch(x)?;
    let t = ctx.test_points().nrows();
    let scale = 1.0 / (ctx.models().len() * t) as f64;
    let noisy = ctx.options().noisy_entropies;
    let mut total = 0.0;
    let mut g = grad.then(|| DMatrix::zeros(x.nrows(), x.ncols()));
    for (model, cache) in ctx.models().iter().zip(ctx.caches()) {
        let f = model.fantasy(cache, x)?;
        let mut w = DVector::zeros(t);
        let mut part = 0.0;
        for j in 0..t {
            let var = f.var[j];
            match target {
                Target::Variance => {
                    part -= var;
                    w[j] = -scale;
                }
                Target::Entropy => {
                    let v = if noisy { var + model.hyper().noise_var } else { var };
                    let vc = v.max(NOISE_FLOOR);
                    part -= gaussian_entropy_1d(vc);
                    if var > 0.0 && v > NOISE_FLOOR {
                        w[j] = -0.5 * scale / v;
                    }
                }
            }
        }
        total += part;
        if let Some(g) = g.as_mut() {
            *g += model.fantasy_backprop(cache, x, &f, &w);
        }
    }
    Ok((total * scale, g))
}

/// Negative expected predictive entropy at the test points after observing the batch.
pub fn epig(ctx: &AcqContext, batch: &BatchCandidate) -> Result<f64> {
    epig_with_grad(ctx, batch.points(), false).map(|(v, _)| v)
}

pub fn epig_with_grad(ctx: &AcqContext, x: &DMatrix<f64>, grad: bool) -> Result<(f64, Option<DMatrix<f64>>)> {
    fantasy_objective(ctx, x, Target::Entropy, grad)
}

/// Negative integrated latent posterior variance after observing the batch.
pub fn nipv(ctx: &AcqContext, batch: &BatchCandidate) -> Result<f64> {
    nipv_with_grad(ctx, batch.points(), false).map(|(v, _)| v)
}

pub fn nipv_with_grad(ctx: &AcqContext, x: &DMatrix<f64>, grad: bool) -> Result<(f64, Option<DMatrix<f64>>)> {
    fantasy_objective(ctx, x, Target::Variance, grad)
}
