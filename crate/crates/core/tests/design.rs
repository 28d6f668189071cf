use hipe::design::{
    design, ks_to_beta, lhs_beta_design, lhs_design, random_design, sobol_design, DesignMethod, DesignRequest, Sobol,
};
use hipe::optimizer::raw_candidates;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Lower bound on the star discrepancy from anchored boxes at all point
/// coordinate combinations (exact enough for small 2-D sets).
fn star_discrepancy_2d(p: &DMatrix<f64>) -> f64 {
    let n = p.nrows();
    let mut xs: Vec<f64> = p.column(0).iter().copied().chain([1.0]).collect();
    let mut ys: Vec<f64> = p.column(1).iter().copied().chain([1.0]).collect();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let mut worst: f64 = 0.0;
    for &a in &xs {
        for &b in &ys {
            let open = (0..n).filter(|&i| p[(i, 0)] < a && p[(i, 1)] < b).count() as f64 / n as f64;
            let closed = (0..n).filter(|&i| p[(i, 0)] <= a && p[(i, 1)] <= b).count() as f64 / n as f64;
            let vol = a * b;
            worst = worst.max(vol - open).max(closed - vol);
        }
    }
    worst
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn unscrambled_sobol_prefix() {
    let mut s = Sobol::new(2).unwrap();
    let expect = [[0.5, 0.5], [0.75, 0.25], [0.25, 0.75], [0.375, 0.375]];
    for e in expect {
        assert_eq!(s.next_point(), e.to_vec());
    }
}

#[test]
fn center_only_batch() {
    for m in [DesignMethod::Sobol, DesignMethod::Random, DesignMethod::Lhs, DesignMethod::LhsBeta] {
        let b = design(m, &DesignRequest::new(1, 5, 3).with_center(true)).unwrap();
        assert_eq!(b.to_rows(), vec![vec![0.5; 5]], "{}", m.name());
    }
}

#[test]
fn center_replaces_first_row() {
    for m in [DesignMethod::Sobol, DesignMethod::Random, DesignMethod::Lhs, DesignMethod::LhsBeta] {
        let plain = design(m, &DesignRequest::new(6, 3, 4)).unwrap();
        let with = design(m, &DesignRequest::new(6, 3, 4).with_center(true)).unwrap();
        assert_eq!(with.q(), 6);
        assert_eq!(with.points().row(0).iter().copied().collect::<Vec<_>>(), vec![0.5; 3]);
        assert_eq!(with.points().rows(1, 5), plain.points().rows(1, 5), "{}", m.name());
    }
}

#[test]
fn designs_are_deterministic_and_in_cube() {
    for m in [DesignMethod::Sobol, DesignMethod::Random, DesignMethod::Lhs, DesignMethod::LhsBeta] {
        for seed in 0..5 {
            let req = DesignRequest::new(9, 4, seed);
            let a = design(m, &req).unwrap();
            assert_eq!(a, design(m, &req).unwrap());
            assert!(a.points().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_ne!(design(m, &DesignRequest::new(9, 4, 0)).unwrap(), design(m, &DesignRequest::new(9, 4, 1)).unwrap());
    }
}

#[test]
fn scrambled_sobol_keeps_stratification() {
    for seed in [1, 2] {
        let b = sobol_design(&DesignRequest::new(8, 3, seed)).unwrap();
        for d in 0..3 {
            let mut bins = [0; 8];
            for v in b.points().column(d).iter() {
                bins[(v * 8.0) as usize] += 1;
            }
            assert_eq!(bins, [1; 8]);
        }
    }
}

#[test]
fn invalid_requests() {
    assert!(sobol_design(&DesignRequest::new(4, 65, 0)).is_err());
    assert!(lhs_design(&DesignRequest::new(0, 2, 0)).is_err());
    let mut req = DesignRequest::new(4, 2, 0);
    req.beta_shape = (0.0, 1.0);
    assert!(lhs_beta_design(&req).is_err());
}

#[test]
fn lhs_one_point_per_bin() {
    for seed in 0..20 {
        let b = lhs_design(&DesignRequest::new(4, 1, seed)).unwrap();
        let mut v: Vec<f64> = b.points().iter().copied().collect();
        v.sort_by(f64::total_cmp);
        for (i, x) in v.iter().enumerate() {
            assert!(*x >= i as f64 * 0.25 && *x < (i + 1) as f64 * 0.25);
        }
    }
}

#[test]
fn lhs_marginals_pass_chi_square() {
    let bins = 10;
    let mut counts = vec![0.0; bins];
    let q = 7;
    for seed in 0..1000 {
        let b = lhs_design(&DesignRequest::new(q, 2, seed)).unwrap();
        for v in b.points().column(1).iter() {
            counts[((v * bins as f64) as usize).min(bins - 1)] += 1.0;
        }
    }
    let expected = (1000 * q) as f64 / bins as f64;
    let stat: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat);
    assert!(p > 0.01, "chi2 {stat} p {p}");
}

#[test]
fn lhs_single_point_is_uniform() {
    let mean: f64 = (0..2000).map(|s| lhs_design(&DesignRequest::new(1, 1, s)).unwrap().points()[(0, 0)]).sum::<f64>() / 2000.0;
    assert!((mean - 0.5).abs() < 0.02);
}

#[test]
fn lhs_beta_zero_iterations_is_lhs() {
    let mut req = DesignRequest::new(10, 3, 7);
    req.lhs_beta_iters = 0;
    assert_eq!(lhs_beta_design(&req).unwrap(), lhs_design(&req).unwrap());
}

#[test]
fn lhs_beta_improves_ks_distance() {
    let mut gains = Vec::new();
    for seed in 0..50 {
        let req = DesignRequest::new(16, 4, seed);
        let before = ks_to_beta(lhs_design(&req).unwrap().points(), (2.0, 5.0)).unwrap();
        let shaped = lhs_beta_design(&req).unwrap();
        let after = ks_to_beta(shaped.points(), (2.0, 5.0)).unwrap();
        assert!(after <= before);
        // still a Latin hypercube
        for d in 0..4 {
            let mut bins = [0; 16];
            for v in shaped.points().column(d).iter() {
                bins[(v * 16.0) as usize] += 1;
            }
            assert_eq!(bins, [1; 16]);
        }
        gains.push(1.0 - after / before);
    }
    let med = median(gains);
    assert!(med >= 0.30, "median KS improvement {med}");
}

#[test]
fn random_design_mean() {
    let b = random_design(&DesignRequest::new(10_000, 3, 1)).unwrap();
    for d in 0..3 {
        assert!((b.points().column(d).mean() - 0.5).abs() < 0.01);
    }
}

#[test]
fn sobol_beats_iid_discrepancy() {
    let n = 32;
    let mut sob = Vec::new();
    let mut iid = Vec::new();
    for seed in 0..50 {
        sob.push(star_discrepancy_2d(sobol_design(&DesignRequest::new(n, 2, seed)).unwrap().points()));
        iid.push(star_discrepancy_2d(random_design(&DesignRequest::new(n, 2, seed)).unwrap().points()));
    }
    assert!(median(sob) < median(iid));
}

#[test]
fn raw_candidates_shape_and_coverage() {
    let a = raw_candidates(3, 2, 5, 9).unwrap();
    assert_eq!(a.len(), 5);
    assert!(a.iter().all(|b| b.q() == 3 && b.dim() == 2));
    assert_eq!(a, raw_candidates(3, 2, 5, 9).unwrap());

    // q = 1, D = 2 batches form a 2-D point set; compare against iid
    let mut raw = Vec::new();
    let mut iid = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for seed in 0..50 {
        let pts = raw_candidates(1, 2, 32, seed).unwrap();
        let m = DMatrix::from_fn(32, 2, |i, j| pts[i].points()[(0, j)]);
        raw.push(star_discrepancy_2d(&m));
        iid.push(star_discrepancy_2d(&DMatrix::from_fn(32, 2, |_, _| rng.random::<f64>())));
    }
    assert!(median(raw) < median(iid));
}
