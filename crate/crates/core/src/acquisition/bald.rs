use nalgebra::{DMatrix, DVector};

use super::{AcqContext, BaldEstimator};
use crate::batch::BatchCandidate;
use crate::error::{Error, Result};
use crate::gp::BatchAdjoint;
use crate::linalg::{
    cholesky_adjoint, cholesky_with_jitter, log_det_from_cholesky, solve_lower_transpose_vec, solve_lower_vec, BASE_JITTER,
};

/// Mutual information between the batch outcomes and the hyperparameters.
pub fn bald(ctx: &AcqContext, batch: &BatchCandidate) -> Result<f64> {
    bald_with_grad(ctx, batch.points(), false).map(|(v, _)| v)
}

/// Monte Carlo BALD on the context's frozen base draws.
///
/// Each base draw `z_n` is pushed through every component,
/// `Y_nm = mu_m + L_m z_n`, and the estimate is
/// `ln M + mean_{n,m} [log p_m(Y_nm) - log sum_k p_k(Y_nm)]`.
/// With the closed-form estimator the conditional term is replaced by the
/// exact component entropies, which shifts the value by a batch-independent
/// constant.
pub fn bald_with_grad(ctx: &AcqContext, x: &DMatrix<f64>, grad: bool) -> Result<(f64, Option<DMatrix<f64>>)> {
    ctx.check_batch(x)?;
    let q = x.nrows();
    let models = ctx.models();
    let m_count = models.len();
    if m_count == 1 {
        return Ok((0.0, grad.then(|| DMatrix::zeros(q, x.ncols()))));
    }
    let z = ctx.base_draws();
    if z.ncols() < q {
        return Err(Error::invalid(format!("base draws have {} columns but the batch has {q} rows", z.ncols())));
    }
    let noisy = ctx.options().noisy_entropies;

    let mut terms = Vec::with_capacity(m_count);
    let mut chols = Vec::with_capacity(m_count);
    let mut half_logdet = Vec::with_capacity(m_count);
    for model in models {
        let t = model.batch_terms(x);
        let mut s = t.cov.clone();
        if noisy {
            for i in 0..q {
                s[(i, i)] += model.hyper().noise_var;
            }
        }
        let (l, _) = cholesky_with_jitter(&s, model.hyper().signal_var, BASE_JITTER)?;
        half_logdet.push(0.5 * log_det_from_cholesky(&l));
        chols.push(l);
        terms.push(t);
    }

    let n_draws = z.nrows();
    let c0 = 1.0 / (m_count * n_draws) as f64;
    let mut acc = 0.0;
    let mut sq_norm_mean = 0.0;

    let mut mu_bar: Vec<DVector<f64>> = vec![DVector::zeros(q); if grad { m_count } else { 0 }];
    let mut u_acc: Vec<DMatrix<f64>> = vec![DMatrix::zeros(q, q); if grad { m_count } else { 0 }];
    let mut l_direct: Vec<DMatrix<f64>> = vec![DMatrix::zeros(q, q); if grad { m_count } else { 0 }];
    let mut diag_coef = vec![0.0; m_count];

    let mut y = vec![0.0; q];
    let mut us = vec![vec![0.0; q]; m_count];
    let mut ll = vec![0.0; m_count];
    let mut y_bar = vec![0.0; q];
    let mut v = vec![0.0; q];
    for n in 0..n_draws {
        let zn: Vec<f64> = (0..q).map(|j| z[(n, j)]).collect();
        let zsq: f64 = zn.iter().map(|a| a * a).sum();
        sq_norm_mean += zsq / n_draws as f64;
        for m in 0..m_count {
            let (lm, mum) = (&chols[m], &terms[m].mean);
            for i in 0..q {
                let mut s = mum[i];
                for j in 0..=i {
                    s += lm[(i, j)] * zn[j];
                }
                y[i] = s;
            }
            let mut mx = f64::NEG_INFINITY;
            for k in 0..m_count {
                let u = &mut us[k];
                for i in 0..q {
                    u[i] = y[i] - terms[k].mean[i];
                }
                solve_lower_vec(&chols[k], u);
                ll[k] = -0.5 * u.iter().map(|a| a * a).sum::<f64>() - half_logdet[k];
                mx = mx.max(ll[k]);
            }
            let sum: f64 = ll.iter().map(|a| (a - mx).exp()).sum();
            let lse = mx + sum.ln();
            acc += -0.5 * zsq - half_logdet[m] - lse;

            if grad {
                y_bar.iter_mut().for_each(|a| *a = 0.0);
                for k in 0..m_count {
                    let coef = -c0 * (ll[k] - lse).exp();
                    if coef == 0.0 {
                        continue;
                    }
                    let u = &us[k];
                    v.copy_from_slice(u);
                    solve_lower_transpose_vec(&chols[k], &mut v);
                    for i in 0..q {
                        y_bar[i] -= coef * v[i];
                        mu_bar[k][i] += coef * v[i];
                    }
                    let ua = &mut u_acc[k];
                    for j in 0..q {
                        let cu = coef * u[j];
                        for i in j..q {
                            ua[(i, j)] += cu * u[i];
                        }
                    }
                    diag_coef[k] += coef;
                }
                for i in 0..q {
                    mu_bar[m][i] += y_bar[i];
                    for j in 0..=i {
                        l_direct[m][(i, j)] += y_bar[i] * zn[j];
                    }
                }
            }
        }
    }
    let mut value = acc * c0 + (m_count as f64).ln();
    if ctx.options().bald_estimator == BaldEstimator::ClosedForm {
        value += 0.5 * sq_norm_mean - 0.5 * q as f64;
    }
    if !value.is_finite() {
        return Err(Error::numerical("non-finite BALD estimate"));
    }
    if !grad {
        return Ok((value, None));
    }

    let inv_m = 1.0 / m_count as f64;
    let mut g = DMatrix::zeros(q, x.ncols());
    for k in 0..m_count {
        let l = &chols[k];
        // u_acc holds the lower triangle of a symmetric matrix
        let mut ua = u_acc[k].clone();
        for j in 0..q {
            for i in 0..j {
                ua[(i, j)] = ua[(j, i)];
            }
        }
        let mut lb = ua;
        crate::linalg::solve_lower_transpose_mut(l, &mut lb);
        lb += &l_direct[k];
        for i in 0..q {
            lb[(i, i)] -= (diag_coef[k] + inv_m) / l[(i, i)];
        }
        let s_bar = cholesky_adjoint(l, &lb);
        let adj = BatchAdjoint { mean: Some(mu_bar[k].clone()), cov: Some(s_bar), ..Default::default() };
        g += models[k].backprop(x, &terms[k], &adj);
    }
    Ok((value, Some(g)))
}
