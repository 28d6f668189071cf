#![allow(dead_code)]

use hipe::gp::{Dataset, HyperSample};
use hipe::hyper::{EnsembleSource, HyperEnsemble};
use hipe::linalg::BASE_JITTER;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn hs(ls: &[f64], noise: f64, mean: f64) -> HyperSample {
    HyperSample::new(ls.to_vec(), noise, 1.0, mean).unwrap()
}

pub fn ensemble(samples: Vec<HyperSample>) -> HyperEnsemble {
    HyperEnsemble::new(samples, EnsembleSource::Prior).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>())
}

/// Noisy observations of a smooth test function at random points.
pub fn random_data(n: usize, dim: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_matrix(n, dim, &mut rng);
    let y = DVector::from_fn(n, |i, _| {
        let r = x.row(i);
        (3.0 * r[0]).sin() + r.iter().map(|v| (v - 0.4).powi(2)).sum::<f64>() + 0.05 * rng.random::<f64>()
    });
    Dataset::new(x, y).unwrap()
}

/// A few hyper samples that disagree in lengthscale and noise.
pub fn mixed_ensemble(dim: usize, m: usize, seed: u64) -> HyperEnsemble {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..m)
        .map(|_| {
            let ls: Vec<f64> = (0..dim).map(|_| 0.15 + 1.2 * rng.random::<f64>()).collect();
            hs(&ls, 1e-3 + 0.05 * rng.random::<f64>(), 0.3 * (rng.random::<f64>() - 0.5))
        })
        .collect();
    ensemble(samples)
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

/// Matérn-5/2 written out per entry, independent of the library kernel.
pub fn matern_naive(a: &DMatrix<f64>, b: &DMatrix<f64>, h: &HyperSample) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let mut r2 = 0.0;
        for d in 0..a.ncols() {
            r2 += ((a[(i, d)] - b[(j, d)]) / h.lengthscales[d]).powi(2);
        }
        let r = r2.sqrt();
        let s5 = 5f64.sqrt();
        h.signal_var * (1.0 + s5 * r + 5.0 * r * r / 3.0) * (-s5 * r).exp()
    })
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> (Dataset, HyperSample, DMatrix<f64>) {
    let dim = rng.random_range(1..=6);
    let n = rng.random_range(1..=20);
    let m = rng.random_range(1..=8);
    let x = random_matrix(n, dim, rng);
    let y = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let ls: Vec<f64> = (0..dim).map(|_| 0.1 + rng.random::<f64>()).collect();
    let noise = 10f64.powf(-4.0 + 3.0 * rng.random::<f64>());
    let h = HyperSample::new(ls, noise, 0.5 + rng.random::<f64>(), rng.random::<f64>() - 0.5).unwrap();
    (Dataset::new(x, y).unwrap(), h, random_matrix(m, dim, rng))
}

/// Dense oracle: explicit inverse of the jittered noisy Gram matrix.
pub fn dense_posterior(data: &Dataset, h: &HyperSample, q: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let x = data.points();
    let n = x.nrows();
    let kxx = matern_naive(x, x, h) + DMatrix::identity(n, n) * (h.noise_var + BASE_JITTER * h.signal_var);
    let inv = kxx.try_inverse().unwrap();
    let kqx = matern_naive(q, x, h);
    let resid = data.outcomes().add_scalar(-h.mean_const);
    let mean = (&kqx * &inv * resid).add_scalar(h.mean_const);
    let cov = matern_naive(q, q, h) - &kqx * inv * kqx.transpose();
    (mean, cov)
}

/// `Q diag(lambda) Q^T` with a random rotation and eigenvalues in [0.5, 3].
pub fn random_spd(m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a: DMatrix<f64> = DMatrix::from_fn(m, m, |_, _| StandardNormal.sample(rng));
    let q = a.qr().q();
    let lam = DMatrix::from_diagonal(&DVector::from_fn(m, |_, _| 0.5 + 2.5 * rng.random::<f64>()));
    let c = &q * lam * q.transpose();
    (&c + c.transpose()) * 0.5
}

/// Monte Carlo estimate of -E[log p(x)] with x drawn from N(0, cov).
pub fn mc_entropy(cov: &DMatrix<f64>, n: usize, rng: &mut ChaCha8Rng) -> f64 {
    let m = cov.nrows();
    let l = cov.clone().cholesky().unwrap();
    let logdet = 2.0 * l.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let inv = cov.clone().try_inverse().unwrap();
    let c = -0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + logdet);
    let mut acc = 0.0;
    for _ in 0..n {
        let z = DVector::from_fn(m, |_, _| StandardNormal.sample(rng));
        let x = l.l() * z;
        acc += c - 0.5 * (x.transpose() * &inv * &x)[(0, 0)];
    }
    -acc / n as f64
}
