//! Joint maximization of a batch objective over `[0, 1]^{q x D}`: score a
//! pool of quasi-random raw batches, then run projected L-BFGS from the best
//! few and from any warm starts.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::batch::BatchCandidate;
use crate::design::Sobol;
use crate::error::{Error, Result};

/// Step used for central finite differences when an objective has no gradient.
pub const FD_STEP: f64 = 1e-5;

/// A scalar objective over q x D batches, to be maximized.
pub trait BatchObjective {
    fn value(&self, x: &DMatrix<f64>) -> Result<f64>;

    /// Value and gradient. Defaults to central finite differences.
    fn value_and_gradient(&self, x: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        let v = self.value(x)?;
        Ok((v, finite_difference_gradient(self, x, FD_STEP)?))
    }
}

impl<F: Fn(&DMatrix<f64>) -> Result<f64>> BatchObjective for F {
    fn value(&self, x: &DMatrix<f64>) -> Result<f64> {
        self(x)
    }
}

pub fn finite_difference_gradient<O: BatchObjective + ?Sized>(obj: &O, x: &DMatrix<f64>, step: f64) -> Result<DMatrix<f64>> {
    let mut g = DMatrix::zeros(x.nrows(), x.ncols());
    let mut xp = x.clone();
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            let x0 = x[(i, j)];
            xp[(i, j)] = x0 + step;
            let fp = obj.value(&xp)?;
            xp[(i, j)] = x0 - step;
            let fm = obj.value(&xp)?;
            xp[(i, j)] = x0;
            g[(i, j)] = (fp - fm) / (2.0 * step);
        }
    }
    Ok(g)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub restarts: usize,
    pub raw_samples: usize,
    pub max_iters: usize,
    /// Stop when the largest projected gradient entry falls below this.
    pub grad_tol: f64,
    /// Stop when an accepted step improves the value by less than this (relative).
    pub ftol: f64,
    /// L-BFGS memory.
    pub memory: usize,
    /// Sufficient-decrease constant of the backtracking line search.
    pub armijo: f64,
    pub max_backtracks: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            restarts: 4,
            raw_samples: 384,
            max_iters: 200,
            grad_tol: 1e-6,
            ftol: 1e-10,
            memory: 10,
            armijo: 1e-4,
            max_backtracks: 30,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        if self.raw_samples < self.restarts {
            return Err(Error::Config(format!(
                "raw_samples ({}) must be at least restarts ({})",
                self.raw_samples, self.restarts
            )));
        }
        if !(self.grad_tol >= 0.0 && self.ftol >= 0.0) || self.memory == 0 || !(self.armijo > 0.0 && self.armijo < 1.0) {
            return Err(Error::Config("invalid line-search or tolerance settings".into()));
        }
        Ok(())
    }
}

/// `n` raw q x D batches; each is one point of a scrambled Sobol sequence in
/// `q * D` dimensions, reshaped row by row.
pub fn raw_candidates(q: usize, dim: usize, n: usize, seed: u64) -> Result<Vec<BatchCandidate>> {
    if q == 0 || dim == 0 {
        return Err(Error::invalid("raw candidates need q >= 1 and D >= 1"));
    }
    let mut s = Sobol::scrambled(q * dim, seed)?;
    let mut buf = vec![0.0; q * dim];
    (0..n)
        .map(|_| {
            s.next_into(&mut buf);
            BatchCandidate::new(DMatrix::from_row_slice(q, dim, &buf))
        })
        .collect()
}

/// Result of one optimization.
#[derive(Clone, Debug)]
pub struct OptimizeResult {
    pub batch: BatchCandidate,
    pub value: f64,
    /// Best value among the scored raw batches.
    pub best_raw: f64,
    /// Objective evaluations including gradient calls.
    pub evaluations: usize,
}

/// Maximizes `obj` over q x D batches starting from Sobol raw batches.
pub fn optimize_batch<O: BatchObjective + ?Sized>(
    obj: &O,
    q: usize,
    dim: usize,
    cfg: &OptimizerConfig,
    warm_starts: &[BatchCandidate],
) -> Result<OptimizeResult> {
    cfg.validate()?;
    let raw = raw_candidates(q, dim, cfg.raw_samples, cfg.seed)?;
    optimize_from(obj, raw, cfg, warm_starts)
}

/// Like [`optimize_batch`] with an explicit raw pool.
pub fn optimize_from<O: BatchObjective + ?Sized>(
    obj: &O,
    raw: Vec<BatchCandidate>,
    cfg: &OptimizerConfig,
    warm_starts: &[BatchCandidate],
) -> Result<OptimizeResult> {
    cfg.validate()?;
    if raw.is_empty() && warm_starts.is_empty() {
        return Err(Error::invalid("nothing to optimize from"));
    }
    let shape = raw.first().or(warm_starts.first()).map(|b| (b.q(), b.dim())).expect("non-empty");
    if raw.iter().chain(warm_starts).any(|b| (b.q(), b.dim()) != shape) {
        return Err(Error::invalid("raw batches and warm starts differ in shape"));
    }
    let mut evaluations = 0;
    let mut scored = Vec::with_capacity(raw.len());
    for (i, b) in raw.iter().enumerate() {
        let v = obj.value(b.points())?;
        evaluations += 1;
        if v.is_finite() {
            scored.push((v, i));
        }
    }
    if scored.is_empty() && warm_starts.is_empty() {
        return Err(Error::numerical("objective is non-finite on every raw batch"));
    }
    // highest value first, lowest index on ties
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let best_raw = scored.first().map(|s| s.0).unwrap_or(f64::NEG_INFINITY);

    let starts: Vec<&BatchCandidate> =
        scored.iter().take(cfg.restarts).map(|(_, i)| &raw[*i]).chain(warm_starts.iter()).collect();
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    for (r, start) in starts.into_iter().enumerate() {
        let (v, x, evals) =
            local_search(obj, start.points(), cfg).map_err(|e| Error::Restart { restart: r, source: Box::new(e) })?;
        evaluations += evals;
        log::debug!("restart {r}: value {v:.6e} after {evals} evaluations");
        if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
            best = Some((v, x));
        }
    }
    let (value, x) = best.expect("at least one start");
    if !value.is_finite() {
        return Err(Error::numerical("optimization ended at a non-finite value"));
    }
    Ok(OptimizeResult { batch: BatchCandidate::clamped(x)?, value, best_raw, evaluations })
}

fn project(x: &mut DMatrix<f64>) {
    x.apply(|v| *v = v.clamp(0.0, 1.0));
}

/// Projected L-BFGS on `-obj` from `x0`. Returns the final value, point and
/// number of objective calls. Never returns a point worse than `x0`.
fn local_search<O: BatchObjective + ?Sized>(
    obj: &O,
    x0: &DMatrix<f64>,
    cfg: &OptimizerConfig,
) -> Result<(f64, DMatrix<f64>, usize)> {
    let mut x = x0.clone();
    project(&mut x);
    let (fv, g) = obj.value_and_gradient(&x)?;
    let mut evals = 1;
    if !fv.is_finite() {
        return Ok((fv, x, evals));
    }
    // minimize h = -f
    let mut h = -fv;
    let mut grad = -g;
    let mut mem: VecDeque<(DMatrix<f64>, DMatrix<f64>, f64)> = VecDeque::with_capacity(cfg.memory);

    for _ in 0..cfg.max_iters {
        let pg_max = x
            .iter()
            .zip(grad.iter())
            .map(|(xi, gi)| if (*xi <= 0.0 && *gi > 0.0) || (*xi >= 1.0 && *gi < 0.0) { 0.0 } else { gi.abs() })
            .fold(0.0, f64::max);
        if pg_max <= cfg.grad_tol || !pg_max.is_finite() {
            break;
        }
        let mut dir = two_loop(&grad, &mem);
        // drop components pushing against an active bound
        for ((d, xi), _) in dir.iter_mut().zip(x.iter()).zip(grad.iter()) {
            if (*xi <= 0.0 && *d < 0.0) || (*xi >= 1.0 && *d > 0.0) {
                *d = 0.0;
            }
        }
        if dir.dot(&grad) >= 0.0 || mem.is_empty() {
            mem.clear();
            dir = -&grad;
            for (d, xi) in dir.iter_mut().zip(x.iter()) {
                if (*xi <= 0.0 && *d < 0.0) || (*xi >= 1.0 && *d > 0.0) {
                    *d = 0.0;
                }
            }
            let m = dir.amax();
            if m == 0.0 {
                break;
            }
            // first step moves at most 0.1 in any coordinate
            dir *= 0.1 / m;
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            let mut xn = &x + &dir * alpha;
            project(&mut xn);
            let step = &xn - &x;
            if step.amax() == 0.0 {
                break;
            }
            let fn_ = obj.value(&xn)?;
            evals += 1;
            let hn = -fn_;
            if hn.is_finite() && hn <= h + cfg.armijo * grad.dot(&step) {
                accepted = Some(xn);
                break;
            }
            alpha *= 0.5;
        }
        let Some(xn) = accepted else {
            if mem.is_empty() {
                break;
            }
            mem.clear();
            continue;
        };
        let (fn_, gn) = obj.value_and_gradient(&xn)?;
        evals += 1;
        let (hn, gn) = (-fn_, -gn);
        let s = &xn - &x;
        let y = &gn - &grad;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            if mem.len() == cfg.memory {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        let improvement = h - hn;
        x = xn;
        h = hn;
        grad = gn;
        if improvement <= cfg.ftol * h.abs().max(1.0) {
            break;
        }
    }
    Ok((-h, x, evals))
}

fn two_loop(grad: &DMatrix<f64>, mem: &VecDeque<(DMatrix<f64>, DMatrix<f64>, f64)>) -> DMatrix<f64> {
    let mut r = grad.clone();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = rho * s.dot(&r);
        r -= y * a;
        alphas.push(a);
    }
    if let Some((s, y, _)) = mem.back() {
        r *= s.dot(y) / y.dot(y);
    }
    for ((s, y, rho), a) in mem.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&r);
        r += s * (a - b);
    }
    -r
}
