use hipe::benchmarks::{by_name, registry, TestFunction};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn registry_contents() {
    let all = registry();
    assert_eq!(all.len(), 10);
    assert_eq!(all.iter().filter(|b| b.noise_sd == 0.0).count(), 5);
    assert_eq!(by_name("ackley_4d").unwrap().noise_sd, 2.0);
    let h12 = by_name("hartmann6_12d").unwrap();
    assert_eq!((h12.effective_dim, h12.total_dim, h12.noise_sd), (6, 12, 0.5));
    assert_eq!(by_name("hartmann4_8d").unwrap().total_dim, 8);
    assert!(by_name("branin").is_err());
}

#[test]
fn ackley_native_origin_is_zero() {
    let b = by_name("ackley_4d_noiseless").unwrap();
    // native bounds [-5, 10]: the origin sits at 1/3 of the cube
    let (lo, hi) = b.bounds[0];
    let x = vec![-lo / (hi - lo); 4];
    let native = b.to_native(&x).unwrap();
    assert!(native.iter().all(|v| v.abs() < 1e-15));
    assert_eq!(TestFunction::Ackley.raw(&[0.0; 4]), 0.0);
}

#[test]
fn hartmann6_optimum_as_reward() {
    let b = by_name("hartmann6_6d").unwrap();
    let v = b.true_value(&b.optimum_in_cube()).unwrap();
    assert!((v - 3.32237).abs() < 1e-5, "{v}");
    assert!((v - b.optimum_value).abs() < 1e-9);
}

#[test]
fn hartmann4_optimum_as_reward() {
    let b = by_name("hartmann4_4d").unwrap();
    let v = b.true_value(&b.optimum_in_cube()).unwrap();
    assert!((v - b.optimum_value).abs() < 1e-9);
    // no random point beats the stored optimum
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20_000 {
        let x: Vec<f64> = (0..4).map(|_| rng.random()).collect();
        assert!(b.true_value(&x).unwrap() <= b.optimum_value);
    }
}

#[test]
fn dummy_dimensions_are_ignored() {
    let b = by_name("hartmann6_12d").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let mut x: Vec<f64> = (0..12).map(|_| rng.random()).collect();
        let base = b.true_value(&x).unwrap();
        for d in 6..12 {
            x[d] = rng.random();
            assert_eq!(b.true_value(&x).unwrap(), base);
        }
    }
}

#[test]
fn permuted_embedding_moves_active_dims() {
    let b = by_name("hartmann6_12d_noiseless").unwrap().with_permuted_dims(4);
    let mut x = vec![0.3; 12];
    let base = b.true_value(&x).unwrap();
    for d in 0..12 {
        x[d] = 0.9;
        let changed = b.true_value(&x).unwrap() != base;
        assert_eq!(changed, b.active.contains(&d), "dim {d}");
        x[d] = 0.3;
    }
}

#[test]
fn noise_is_reproducible() {
    let b = by_name("hartmann4_4d").unwrap();
    let x = DMatrix::from_element(5, 4, 0.4);
    let a = b.evaluate_batch(&x, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let c = b.evaluate_batch(&x, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, c);
    let truth = b.true_values(&x).unwrap();
    assert!(a.iter().zip(&truth).any(|(y, f)| y != f));
}

#[test]
fn noise_has_the_stated_scale() {
    let b = by_name("ackley_4d").unwrap();
    let x = [0.2, 0.4, 0.6, 0.8];
    let f = b.true_value(&x).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 20_000;
    let draws: Vec<f64> = (0..n).map(|_| b.evaluate(&x, &mut rng).unwrap() - f).collect();
    let sd = (draws.iter().map(|d| d * d).sum::<f64>() / n as f64).sqrt();
    assert!((sd - 2.0).abs() < 0.05, "{sd}");
}

#[test]
fn rejects_points_outside_the_cube() {
    let b = by_name("hartmann6_6d").unwrap();
    assert!(b.true_value(&[1.2, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
    assert!(b.true_value(&[0.5; 5]).is_err());
}

#[test]
fn cube_endpoints_map_to_bounds() {
    for b in registry() {
        let lo = b.to_native(&vec![0.0; b.total_dim]).unwrap();
        let hi = b.to_native(&vec![1.0; b.total_dim]).unwrap();
        for (k, (l, h)) in b.bounds.iter().enumerate() {
            assert_eq!((lo[k], hi[k]), (*l, *h), "{}", b.name);
        }
    }
}
