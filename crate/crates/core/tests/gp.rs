mod common;

use common::{dense_posterior, hs, matern_naive, mc_entropy, random_instance, random_matrix, random_spd};
use hipe::gp::{
    fantasy_variance, gaussian_entropy, gaussian_entropy_1d, kernel_matrix, log_marginal_likelihood, posterior, Dataset,
    HyperSample,
};
use hipe::linalg::BASE_JITTER;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn posterior_matches_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (data, h, q) = random_instance(&mut rng);
        let p = posterior(&data, &h, &q, false).unwrap();
        let (mean, cov) = dense_posterior(&data, &h, &q);
        worst = worst.max((&p.mean - mean).abs().max()).max((&p.covariance - cov).abs().max());
    }
    assert!(worst <= 1e-8, "max abs error {worst:e}");
}

#[test]
fn empty_data_posterior_is_prior() {
    let h = HyperSample::new(vec![0.3, 0.6], 0.01, 1.3, 0.4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = random_matrix(5, 2, &mut rng);
    let p = posterior(&Dataset::empty(2), &h, &q, false).unwrap();
    assert!(p.mean.iter().all(|m| *m == 0.4));
    assert!((&p.covariance - matern_naive(&q, &q, &h)).abs().max() < 1e-14);
}

#[test]
fn single_point_interpolates() {
    let h = hs(&[0.3], 1e-10, 0.0);
    let x = DMatrix::from_row_slice(1, 1, &[0.4]);
    let data = Dataset::new(x.clone(), DVector::from_element(1, 1.7)).unwrap();
    let p = posterior(&data, &h, &x, false).unwrap();
    assert!((p.mean[0] - 1.7).abs() < 1e-6);
    assert!(p.covariance[(0, 0)].abs() < 1e-6);
}

#[test]
fn noise_adds_exactly_to_diagonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (data, h, q) = random_instance(&mut rng);
        let latent = posterior(&data, &h, &q, false).unwrap();
        let noisy = posterior(&data, &h, &q, true).unwrap();
        for i in 0..q.nrows() {
            for j in 0..q.nrows() {
                let expect = latent.covariance[(i, j)] + if i == j { h.noise_var } else { 0.0 };
                assert_eq!(noisy.covariance[(i, j)], expect);
            }
        }
    }
}

#[test]
fn covariance_ignores_outcomes() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (data, h, q) = random_instance(&mut rng);
    let shuffled = data.map_outcomes(|y| 3.0 * y.sin() - 7.0);
    let a = posterior(&data, &h, &q, false).unwrap();
    let b = posterior(&shuffled, &h, &q, false).unwrap();
    assert_eq!(a.covariance, b.covariance);
}

#[test]
fn kernel_invariant_to_dimension_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_matrix(4, 3, &mut rng);
    let b = random_matrix(5, 3, &mut rng);
    let h = hs(&[0.2, 0.5, 1.1], 0.01, 0.0);
    let perm = [2, 0, 1];
    let pa = DMatrix::from_fn(4, 3, |i, j| a[(i, perm[j])]);
    let pb = DMatrix::from_fn(5, 3, |i, j| b[(i, perm[j])]);
    let ph = hs(&[1.1, 0.2, 0.5], 0.01, 0.0);
    let k1 = kernel_matrix(&a, &b, &h).unwrap();
    let k2 = kernel_matrix(&pa, &pb, &ph).unwrap();
    assert!((k1 - k2).abs().max() < 1e-15);
}

#[test]
fn kernel_rejects_non_finite() {
    let a = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
    assert!(kernel_matrix(&a, &a, &hs(&[0.5], 0.01, 0.0)).is_err());
}

#[test]
fn fantasy_matches_augmented_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..30 {
        let (data, h, test) = random_instance(&mut rng);
        let batch = random_matrix(3, data.dim(), &mut rng);
        let v = fantasy_variance(&data, &h, &batch, &test, false).unwrap();
        let mut aug = DMatrix::zeros(data.len() + 3, data.dim());
        aug.rows_mut(0, data.len()).copy_from(data.points());
        aug.rows_mut(data.len(), 3).copy_from(&batch);
        let n = aug.nrows();
        let g = matern_naive(&aug, &aug, &h) + DMatrix::identity(n, n) * (h.noise_var + BASE_JITTER * h.signal_var);
        let inv = g.try_inverse().unwrap();
        let kt = matern_naive(&test, &aug, &h);
        for t in 0..test.nrows() {
            let row = kt.row(t);
            let oracle = h.signal_var - (row * &inv * row.transpose())[(0, 0)];
            assert!((v[t] - oracle).abs() < 1e-8, "{} vs {oracle}", v[t]);
        }
    }
}

#[test]
fn fantasy_limits() {
    let h = hs(&[0.05, 0.05], 1e-10, 0.0);
    let test = DMatrix::from_row_slice(2, 2, &[0.1, 0.1, 0.9, 0.9]);
    let batch = DMatrix::from_row_slice(1, 2, &[0.1, 0.1]);
    let v = fantasy_variance(&Dataset::empty(2), &h, &batch, &test, false).unwrap();
    assert!(v[0] < 1e-6);
    assert!((v[1] - 1.0).abs() < 1e-9);
}

#[test]
fn fantasy_is_monotone_in_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let (data, h, test) = random_instance(&mut rng);
        let big = random_matrix(4, data.dim(), &mut rng);
        let mut prev = posterior(&data, &h, &test, false).unwrap().variances();
        for k in 1..=4 {
            let v = fantasy_variance(&data, &h, &big.rows(0, k).into_owned(), &test, false).unwrap();
            for t in 0..test.nrows() {
                assert!(v[t] <= prev[t] + 1e-10, "variance grew at {t}: {} > {}", v[t], prev[t]);
            }
            prev = v;
        }
    }
}

#[test]
fn log_marginal_likelihood_matches_naive() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let (data, h, _) = random_instance(&mut rng);
        let x = data.points();
        let n = x.nrows();
        let g = matern_naive(x, x, &h) + DMatrix::identity(n, n) * (h.noise_var + BASE_JITTER * h.signal_var);
        let r = data.outcomes().add_scalar(-h.mean_const);
        let quad = (r.transpose() * g.clone().try_inverse().unwrap() * &r)[(0, 0)];
        let naive = -0.5 * quad - 0.5 * g.determinant().ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        let lml = log_marginal_likelihood(&data, &h).unwrap();
        assert!((lml - naive).abs() <= 1e-8 * naive.abs().max(1.0), "{lml} vs {naive}");
    }
}

#[test]
fn log_marginal_likelihood_standard_normal_peak() {
    let h = HyperSample::new(vec![0.5], 1.0 - 1e-8, 1e-8 / (1.0 + BASE_JITTER), 0.3).unwrap();
    let data = Dataset::new(DMatrix::from_row_slice(1, 1, &[0.5]), DVector::from_element(1, 0.3)).unwrap();
    let lml = log_marginal_likelihood(&data, &h).unwrap();
    assert!((lml + 0.918939).abs() < 1e-6, "{lml}");
}

#[test]
fn entropy_examples() {
    assert!((gaussian_entropy(&DMatrix::identity(1, 1)).unwrap() - 1.418939).abs() < 1e-6);
    assert!((gaussian_entropy(&DMatrix::identity(2, 2)).unwrap() - 2.837877).abs() < 1e-6);
    let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
    assert!((gaussian_entropy(&c).unwrap() - 2.694036).abs() < 1e-6);
    assert!((gaussian_entropy_1d(1.0) - 1.418939).abs() < 1e-6);
}

#[test]
fn entropy_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..50 {
        let m = rng.random_range(1..=5);
        let cov = random_spd(m, &mut rng);
        let exact = gaussian_entropy(&cov).unwrap();
        let mc = mc_entropy(&cov, 200_000, &mut rng);
        assert!((exact - mc).abs() <= 0.01 * exact.abs(), "m={m}: exact {exact} mc {mc}");
    }
}

#[test]
fn entropy_block_additivity() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..50 {
        let (ma, mb) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let a = random_spd(ma, &mut rng);
        let b = random_spd(mb, &mut rng);
        let mut blk = DMatrix::zeros(ma + mb, ma + mb);
        blk.view_mut((0, 0), (ma, ma)).copy_from(&a);
        blk.view_mut((ma, ma), (mb, mb)).copy_from(&b);
        let lhs = gaussian_entropy(&blk).unwrap();
        let rhs = gaussian_entropy(&a).unwrap() + gaussian_entropy(&b).unwrap();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}

#[test]
fn entropy_rejects_asymmetric() {
    let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.1, 1.0]);
    assert!(gaussian_entropy(&c).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_is_symmetric_and_bounded(seed in any::<u64>(), n in 1usize..8, dim in 1usize..5, l in 0.05f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_matrix(n, dim, &mut rng);
        let h = hs(&vec![l; dim], 0.01, 0.0);
        let k = kernel_matrix(&x, &x, &h).unwrap();
        prop_assert!((&k - k.transpose()).abs().max() == 0.0);
        prop_assert!(k.iter().all(|v| *v > 0.0 && *v <= 1.0 + 1e-15));
    }

    #[test]
    fn posterior_variances_nonnegative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (data, h, q) = random_instance(&mut rng);
        let p = posterior(&data, &h, &q, false).unwrap();
        prop_assert!(p.variances().iter().all(|v| *v >= -1e-10));
    }
}
