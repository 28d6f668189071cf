use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::AcqContext;
use crate::error::{Error, Result};
use crate::gp::posterior;
use crate::linalg::{cholesky_with_jitter, log_det_from_cholesky, solve_lower_vec};

const LN_2PI: f64 = 1.8378770664093453;

struct Component {
    mu_x: DVector<f64>,
    chol_x: DMatrix<f64>,
    half_logdet_x: f64,
    /// marginal variance at each test point, before and after conditioning on y(X)
    var_t: DVector<f64>,
    cond_var_t: DVector<f64>,
}

/// Nested Monte Carlo estimate of the expected joint information gain
/// `E_{x*}[I((y(x*), theta); y(X))]` under the context's ensemble.
///
/// The hyperparameters are treated as a uniform discrete variable over the
/// ensemble. Outer samples of `(theta, y(X))` are stratified over the
/// ensemble; the posterior over `theta` given `y(X)` is exact, and the
/// Gaussian entropies are estimated with `n_inner` shared normal draws.
/// Only meant for small instances.
pub fn joint_eig_oracle(ctx: &AcqContext, batch: &DMatrix<f64>, n_outer: usize, n_inner: usize, seed: u64) -> Result<f64> {
    let m_count = ctx.models().len();
    let test = ctx.test_points();
    let q = batch.nrows();
    if q > 2 || m_count > 4 || test.nrows() > 32 {
        return Err(Error::invalid(format!(
            "oracle limited to q <= 2, M <= 4, T <= 32 (got q={q}, M={m_count}, T={})",
            test.nrows()
        )));
    }
    if n_outer == 0 || n_inner == 0 {
        return Err(Error::invalid("oracle needs at least one outer and one inner sample"));
    }
    if q == 0 {
        return Ok(0.0);
    }
    ctx.check_batch(batch)?;
    let t_count = test.nrows();
    let noisy_test = ctx.options().noisy_entropies;

    let mut query = DMatrix::zeros(q + t_count, batch.ncols());
    query.rows_mut(0, q).copy_from(batch);
    query.rows_mut(q, t_count).copy_from(test);
    let mut comps = Vec::with_capacity(m_count);
    for h in &ctx.ensemble().samples {
        let post = posterior(ctx.data(), h, &query, false)?;
        let mut cov = post.covariance;
        for i in 0..q {
            cov[(i, i)] += h.noise_var;
        }
        if noisy_test {
            for i in q..q + t_count {
                cov[(i, i)] += h.noise_var;
            }
        }
        let sxx = cov.view((0, 0), (q, q)).into_owned();
        let sxt = cov.view((0, q), (q, t_count)).into_owned();
        let (chol_x, _) = cholesky_with_jitter(&sxx, h.signal_var, 0.0)?;
        let sxx_inv = sxx.clone().try_inverse().ok_or_else(|| Error::numerical("singular batch covariance in oracle"))?;
        let gain = &sxx_inv * &sxt;
        let var_t = DVector::from_fn(t_count, |t, _| cov[(q + t, q + t)]);
        let cond_var_t = DVector::from_fn(t_count, |t, _| {
            let red: f64 = (0..q).map(|i| sxt[(i, t)] * gain[(i, t)]).sum();
            (var_t[t] - red).max(1e-300)
        });
        comps.push(Component {
            mu_x: post.mean.rows(0, q).into_owned(),
            half_logdet_x: 0.5 * log_det_from_cholesky(&chol_x),
            chol_x,
            var_t,
            cond_var_t,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inner: Vec<f64> = (0..n_inner).map(|_| StandardNormal.sample(&mut rng)).collect();
    // Monte Carlo entropy of N(m, v): -mean_j log N(m + sqrt(v) z_j; m, v)
    let mc_entropy = |v: f64| {
        let s = v.sqrt();
        inner
            .iter()
            .map(|z| {
                let y = s * z;
                0.5 * (LN_2PI + v.ln()) + 0.5 * y * y / v
            })
            .sum::<f64>()
            / n_inner as f64
    };

    let ln_m = (m_count as f64).ln();
    let prior: Vec<f64> =
        (0..t_count).map(|t| ln_m + comps.iter().map(|c| mc_entropy(c.var_t[t])).sum::<f64>() / m_count as f64).collect();
    let cond_h: Vec<Vec<f64>> = comps.iter().map(|c| (0..t_count).map(|t| mc_entropy(c.cond_var_t[t])).collect()).collect();

    let per_comp = n_outer.div_ceil(m_count);
    let mut after = 0.0;
    let mut logw = vec![0.0; m_count];
    let mut r = vec![0.0; q];
    for m in 0..m_count {
        let mut part = 0.0;
        for _ in 0..per_comp {
            let xi: Vec<f64> = (0..q).map(|_| StandardNormal.sample(&mut rng)).collect();
            let y = &comps[m].mu_x + &comps[m].chol_x * DVector::from_vec(xi);
            for (k, c) in comps.iter().enumerate() {
                for i in 0..q {
                    r[i] = y[i] - c.mu_x[i];
                }
                solve_lower_vec(&c.chol_x, &mut r);
                logw[k] = -0.5 * r.iter().map(|a| a * a).sum::<f64>() - c.half_logdet_x;
            }
            let mx = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + logw.iter().map(|a| (a - mx).exp()).sum::<f64>().ln();
            let w: Vec<f64> = logw.iter().map(|a| (a - lse).exp()).collect();
            let h_theta: f64 = -w.iter().filter(|a| **a > 0.0).map(|a| a * a.ln()).sum::<f64>();
            // Gaussian entropies do not depend on the conditional means
            let mut h_joint = 0.0;
            for t in 0..t_count {
                let hc: f64 = w.iter().zip(&cond_h).map(|(wk, h)| wk * h[t]).sum();
                h_joint += h_theta + hc;
            }
            part += h_joint / t_count as f64;
        }
        after += part / per_comp as f64;
    }
    after /= m_count as f64;
    let before = prior.iter().sum::<f64>() / t_count as f64;
    Ok(before - after)
}
