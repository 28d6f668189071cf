//! Model-free batch designs: scrambled Sobol, Latin hypercube, a Latin
//! hypercube shaped towards a Beta distribution of pairwise distances, and
//! uniform random points, each with optional center-point injection.

mod lhs;
mod sobol;
mod sobol_table;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::BatchCandidate;
use crate::error::{Error, Result};

pub use lhs::{ks_to_beta, lhs_beta_design, lhs_design};
pub use sobol::Sobol;

/// Largest dimension accepted by a design request.
pub const MAX_DESIGN_DIM: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignMethod {
    Sobol,
    Random,
    Lhs,
    LhsBeta,
}

impl DesignMethod {
    pub fn name(self) -> &'static str {
        match self {
            DesignMethod::Sobol => "sobol",
            DesignMethod::Random => "random",
            DesignMethod::Lhs => "lhs",
            DesignMethod::LhsBeta => "lhs-beta",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "sobol" => DesignMethod::Sobol,
            "random" => DesignMethod::Random,
            "lhs" => DesignMethod::Lhs,
            "lhs-beta" => DesignMethod::LhsBeta,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignRequest {
    pub q: usize,
    pub dim: usize,
    pub seed: u64,
    pub include_center: bool,
    /// Target Beta shape for the normalized pairwise distances of LHS-Beta.
    pub beta_shape: (f64, f64),
    /// Swap proposals tried by LHS-Beta.
    pub lhs_beta_iters: usize,
}

impl DesignRequest {
    pub fn new(q: usize, dim: usize, seed: u64) -> Self {
        DesignRequest { q, dim, seed, include_center: false, beta_shape: (2.0, 5.0), lhs_beta_iters: 2000 }
    }

    pub fn with_center(mut self, include_center: bool) -> Self {
        self.include_center = include_center;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(Error::invalid("design batch size must be at least 1"));
        }
        if self.dim == 0 || self.dim > MAX_DESIGN_DIM {
            return Err(Error::invalid(format!("design dimension must be in 1..={MAX_DESIGN_DIM}, got {}", self.dim)));
        }
        let (a, b) = self.beta_shape;
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::invalid(format!("Beta shape must be positive, got ({a}, {b})")));
        }
        Ok(())
    }
}

/// Replaces the first row with the center of the cube when requested.
fn finish(mut points: DMatrix<f64>, req: &DesignRequest) -> Result<BatchCandidate> {
    if req.include_center {
        points.row_mut(0).fill(0.5);
    }
    BatchCandidate::new(points)
}

pub fn sobol_design(req: &DesignRequest) -> Result<BatchCandidate> {
    req.validate()?;
    let pts = Sobol::scrambled(req.dim, req.seed)?.take_matrix(req.q);
    finish(pts, req)
}

pub fn random_design(req: &DesignRequest) -> Result<BatchCandidate> {
    req.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let pts = DMatrix::from_fn(req.q, req.dim, |_, _| rng.random::<f64>());
    finish(pts, req)
}

pub fn design(method: DesignMethod, req: &DesignRequest) -> Result<BatchCandidate> {
    match method {
        DesignMethod::Sobol => sobol_design(req),
        DesignMethod::Random => random_design(req),
        DesignMethod::Lhs => lhs_design(req),
        DesignMethod::LhsBeta => lhs_beta_design(req),
    }
}
