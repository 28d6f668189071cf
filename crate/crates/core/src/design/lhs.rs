use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Beta, ContinuousCDF};

use super::{finish, DesignRequest};
use crate::batch::BatchCandidate;
use crate::error::{Error, Result};

fn lhs_points(req: &DesignRequest, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let q = req.q;
    let mut pts = DMatrix::zeros(q, req.dim);
    let mut perm: Vec<usize> = (0..q).collect();
    for j in 0..req.dim {
        perm.shuffle(rng);
        for i in 0..q {
            pts[(i, j)] = (perm[i] as f64 + rng.random::<f64>()) / q as f64;
        }
    }
    pts
}

/// One point in each of `q` equal strata per dimension, strata paired by
/// independent random permutations.
pub fn lhs_design(req: &DesignRequest) -> Result<BatchCandidate> {
    req.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let pts = lhs_points(req, &mut rng);
    finish(pts, req)
}

/// Kolmogorov-Smirnov distance between the pairwise distances of the rows
/// (divided by the cube diagonal) and a Beta CDF. Zero for fewer than two rows.
pub fn ks_to_beta(points: &DMatrix<f64>, shape: (f64, f64)) -> Result<f64> {
    let beta = Beta::new(shape.0, shape.1).map_err(|e| Error::invalid(format!("Beta shape: {e}")))?;
    Ok(ks_distance(points, &beta))
}

fn ks_distance(points: &DMatrix<f64>, beta: &Beta) -> f64 {
    let q = points.nrows();
    let norm = (points.ncols() as f64).sqrt();
    let mut d = Vec::with_capacity(q * q.saturating_sub(1) / 2);
    for a in 0..q {
        for b in a + 1..q {
            let s: f64 = (0..points.ncols()).map(|j| (points[(a, j)] - points[(b, j)]).powi(2)).sum();
            d.push(s.sqrt() / norm);
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(|a, b| a.total_cmp(b));
    let n = d.len() as f64;
    d.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = beta.cdf(x.clamp(0.0, 1.0));
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Latin hypercube improved by within-column swaps that lower the
/// KS distance of the normalized pairwise distances to the target Beta.
/// Swaps never break the per-dimension stratification.
pub fn lhs_beta_design(req: &DesignRequest) -> Result<BatchCandidate> {
    req.validate()?;
    let beta = Beta::new(req.beta_shape.0, req.beta_shape.1).map_err(|e| Error::invalid(format!("Beta shape: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let mut pts = lhs_points(req, &mut rng);
    if req.q >= 2 {
        let mut best = ks_distance(&pts, &beta);
        for _ in 0..req.lhs_beta_iters {
            let j = rng.random_range(0..req.dim);
            let a = rng.random_range(0..req.q);
            let mut b = rng.random_range(0..req.q - 1);
            if b >= a {
                b += 1;
            }
            pts.swap((a, j), (b, j));
            let ks = ks_distance(&pts, &beta);
            if ks < best {
                best = ks;
            } else {
                pts.swap((a, j), (b, j));
            }
        }
    }
    finish(pts, req)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_point_per_stratum() {
        let b = lhs_design(&DesignRequest::new(4, 1, 7)).unwrap();
        let mut xs: Vec<f64> = b.points().iter().copied().collect();
        xs.sort_by(|a, b| a.total_cmp(b));
        for (i, x) in xs.iter().enumerate() {
            assert!(*x >= i as f64 / 4.0 && *x < (i + 1) as f64 / 4.0);
        }
    }

    #[test]
    fn zero_iterations_is_plain_lhs() {
        let mut req = DesignRequest::new(8, 3, 5);
        req.lhs_beta_iters = 0;
        assert_eq!(lhs_beta_design(&req).unwrap(), lhs_design(&req).unwrap());
    }

    #[test]
    fn search_never_increases_ks() {
        let mut req = DesignRequest::new(10, 3, 2);
        req.lhs_beta_iters = 300;
        let before = ks_to_beta(lhs_design(&req).unwrap().points(), req.beta_shape).unwrap();
        let after = ks_to_beta(lhs_beta_design(&req).unwrap().points(), req.beta_shape).unwrap();
        assert!(after <= before);
    }
}
