//! Synthetic test functions on the unit cube with additive Gaussian noise and
//! optional dummy dimensions. Values are negated so that larger is better.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    Ackley,
    Hartmann6,
    /// Rescaled four-dimensional Hartmann.
    Hartmann4,
}

const H_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const H_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
const H_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

fn hartmann_sum(x: &[f64]) -> f64 {
    H_ALPHA
        .iter()
        .zip(H_A.iter().zip(&H_P))
        .map(|(alpha, (a, p))| {
            let e: f64 = x.iter().enumerate().map(|(j, xj)| a[j] * (xj - p[j]).powi(2)).sum();
            alpha * (-e).exp()
        })
        .sum()
}

impl TestFunction {
    pub fn dim(self, ackley_dim: usize) -> usize {
        match self {
            TestFunction::Ackley => ackley_dim,
            TestFunction::Hartmann6 => 6,
            TestFunction::Hartmann4 => 4,
        }
    }

    /// The classical (minimization) value at native coordinates.
    pub fn raw(self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Ackley => {
                let (a, b, c) = (20.0, 0.2, 2.0 * std::f64::consts::PI);
                let n = x.len() as f64;
                let sq = x.iter().map(|v| v * v).sum::<f64>() / n;
                let cs = x.iter().map(|v| (c * v).cos()).sum::<f64>() / n;
                (a - a * (-b * sq.sqrt()).exp()) + (std::f64::consts::E - cs.exp())
            }
            TestFunction::Hartmann6 => -hartmann_sum(x),
            TestFunction::Hartmann4 => (1.1 - hartmann_sum(x)) / 0.839,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub name: String,
    pub function: TestFunction,
    pub effective_dim: usize,
    pub total_dim: usize,
    /// Native interval of each effective dimension.
    pub bounds: Vec<(f64, f64)>,
    pub noise_sd: f64,
    /// Best attainable (negated) value.
    pub optimum_value: f64,
    /// A maximizer of the effective dimensions in native coordinates.
    pub optimum_location: Vec<f64>,
    /// Cube coordinates feeding the effective dimensions, in order.
    pub active: Vec<usize>,
}

impl Benchmark {
    fn build(name: &str, function: TestFunction, eff: usize, total: usize, noise_sd: f64) -> Self {
        let (bounds, optimum_value, optimum_location) = match function {
            TestFunction::Ackley => (vec![(-5.0, 10.0); eff], 0.0, vec![0.0; eff]),
            TestFunction::Hartmann6 => (
                vec![(0.0, 1.0); 6],
                3.322368011415514,
                vec![0.20168951, 0.15001069, 0.47687397, 0.27533243, 0.31165161, 0.65730053],
            ),
            TestFunction::Hartmann4 => {
                (vec![(0.0, 1.0); 4], 3.134494141222399, vec![0.18739527, 0.19415153, 0.55791778, 0.26477962])
            }
        };
        Benchmark {
            name: name.to_string(),
            function,
            effective_dim: eff,
            total_dim: total,
            bounds,
            noise_sd,
            optimum_value,
            optimum_location,
            active: (0..eff).collect(),
        }
    }

    /// Same benchmark with the effective dimensions placed at a seeded random
    /// subset of the cube coordinates.
    pub fn with_permuted_dims(mut self, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..self.total_dim).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        self.active = idx[..self.effective_dim].to_vec();
        self
    }

    pub fn noiseless(&self) -> Self {
        let mut b = self.clone();
        if !b.name.ends_with("_noiseless") {
            b.name.push_str("_noiseless");
        }
        b.noise_sd = 0.0;
        b
    }

    /// Maps cube coordinates of the effective dimensions to native coordinates.
    pub fn to_native(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.total_dim {
            return Err(Error::invalid(format!("{} expects {} coordinates, got {}", self.name, self.total_dim, x.len())));
        }
        if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("coordinate {v} outside the unit cube")));
        }
        Ok(self
            .active
            .iter()
            .zip(&self.bounds)
            .map(|(&i, &(lo, hi))| if x[i] == 1.0 { hi } else { lo + (hi - lo) * x[i] })
            .collect())
    }

    /// Unit-cube location of the optimum (dummy coordinates at 0.5).
    pub fn optimum_in_cube(&self) -> Vec<f64> {
        let mut x = vec![0.5; self.total_dim];
        for ((&i, &(lo, hi)), v) in self.active.iter().zip(&self.bounds).zip(&self.optimum_location) {
            x[i] = (v - lo) / (hi - lo);
        }
        x
    }

    /// Noiseless (negated) objective value.
    pub fn true_value(&self, x: &[f64]) -> Result<f64> {
        Ok(-self.function.raw(&self.to_native(x)?))
    }

    /// Noisy observation.
    pub fn evaluate<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<f64> {
        let f = self.true_value(x)?;
        if self.noise_sd == 0.0 {
            return Ok(f);
        }
        let n = Normal::new(0.0, self.noise_sd).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(f + n.sample(rng))
    }

    /// Noisy observations at every row.
    pub fn evaluate_batch<R: Rng + ?Sized>(&self, x: &DMatrix<f64>, rng: &mut R) -> Result<Vec<f64>> {
        x.row_iter()
            .map(|r| {
                let p: Vec<f64> = r.iter().copied().collect();
                self.evaluate(&p, rng)
            })
            .collect()
    }

    pub fn true_values(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        x.row_iter()
            .map(|r| {
                let p: Vec<f64> = r.iter().copied().collect();
                self.true_value(&p)
            })
            .collect()
    }
}

/// All benchmarks: the noisy tasks followed by their noiseless variants.
pub fn registry() -> Vec<Benchmark> {
    let noisy = vec![
        Benchmark::build("ackley_4d", TestFunction::Ackley, 4, 4, 2.0),
        Benchmark::build("hartmann6_6d", TestFunction::Hartmann6, 6, 6, 0.5),
        Benchmark::build("hartmann6_12d", TestFunction::Hartmann6, 6, 12, 0.5),
        Benchmark::build("hartmann4_4d", TestFunction::Hartmann4, 4, 4, 0.5),
        Benchmark::build("hartmann4_8d", TestFunction::Hartmann4, 4, 8, 0.5),
    ];
    let quiet: Vec<Benchmark> = noisy.iter().map(Benchmark::noiseless).collect();
    noisy.into_iter().chain(quiet).collect()
}

pub fn by_name(name: &str) -> Result<Benchmark> {
    registry().into_iter().find(|b| b.name == name).ok_or_else(|| {
        let names: Vec<String> = registry().into_iter().map(|b| b.name).collect();
        Error::Config(format!("unknown benchmark {name:?}; known: {}", names.join(", ")))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ackley_is_zero_at_the_origin() {
        let b = by_name("ackley_4d_noiseless").unwrap();
        let x = vec![1.0 / 3.0; 4];
        assert!(b.true_value(&x).unwrap().abs() < 1e-14);
        assert_eq!(TestFunction::Ackley.raw(&[0.0; 4]), 0.0);
    }

    #[test]
    fn hartmann_optima() {
        for name in ["hartmann6_6d", "hartmann4_4d"] {
            let b = by_name(name).unwrap();
            let v = b.true_value(&b.optimum_in_cube()).unwrap();
            assert!((v - b.optimum_value).abs() < 1e-9, "{name}: {v}");
        }
        let b = by_name("hartmann6_6d").unwrap();
        let v = b.true_value(&[0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573]).unwrap();
        assert!((v - 3.32237).abs() < 1e-5);
    }

    #[test]
    fn endpoints_map_exactly() {
        let b = by_name("ackley_4d").unwrap();
        assert_eq!(b.to_native(&[0.0, 1.0, 0.0, 1.0]).unwrap(), vec![-5.0, 10.0, -5.0, 10.0]);
    }
}
