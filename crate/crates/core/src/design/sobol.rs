use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sobol_table::{DIRECTIONS, MAX_DIMS};
use crate::error::{Error, Result};

const BITS: usize = 32;
const SCALE: f64 = 1.0 / 4294967296.0;

/// Gray-code Sobol generator, optionally with a linear matrix scramble and a
/// digital shift.
#[derive(Clone, Debug)]
pub struct Sobol {
    dim: usize,
    // direction numbers, BITS per dimension
    v: Vec<u32>,
    state: Vec<u32>,
    index: u64,
}

fn direction_numbers(d: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if d == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1 << (31 - k);
        }
        return v;
    }
    let (s, a, m) = DIRECTIONS[d - 1];
    let s = s as usize;
    for k in 0..s.min(BITS) {
        v[k] = m[k] << (31 - k);
    }
    for k in s..BITS {
        let mut x = v[k - s] ^ (v[k - s] >> s);
        for j in 1..s {
            if (a >> (s - 1 - j)) & 1 == 1 {
                x ^= v[k - j];
            }
        }
        v[k] = x;
    }
    v
}

impl Sobol {
    /// The plain sequence, starting after the origin.
    pub fn new(dim: usize) -> Result<Self> {
        let mut s = Self::unskipped(dim)?;
        s.next_into(&mut vec![0.0; dim]);
        Ok(s)
    }

    fn unskipped(dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIMS {
            return Err(Error::invalid(format!("Sobol dimension must be in 1..={MAX_DIMS}, got {dim}")));
        }
        let mut v = Vec::with_capacity(dim * BITS);
        for d in 0..dim {
            v.extend_from_slice(&direction_numbers(d));
        }
        Ok(Sobol { dim, v, state: vec![0; dim], index: 0 })
    }

    /// Scrambled sequence: each dimension's direction numbers are multiplied
    /// by a random unit lower-triangular binary matrix and the points are
    /// XORed with a random shift. Dimension `d` only consumes randomness after
    /// dimensions `0..d`, so lower-dimensional prefixes agree across `dim`.
    pub fn scrambled(dim: usize, seed: u64) -> Result<Self> {
        let mut s = Self::unskipped(dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for d in 0..dim {
            // row i of the scramble matrix acting on bit i (counted from the MSB)
            let mut rows = [0u32; BITS];
            for (i, row) in rows.iter_mut().enumerate() {
                let below: u32 = if i == 0 { 0 } else { rng.random::<u32>() & !(u32::MAX >> i) };
                *row = below | (1 << (31 - i));
            }
            for k in 0..BITS {
                let x = s.v[d * BITS + k];
                let mut out = 0u32;
                for (i, row) in rows.iter().enumerate() {
                    if (row & x).count_ones() & 1 == 1 {
                        out |= 1 << (31 - i);
                    }
                }
                s.v[d * BITS + k] = out;
            }
            s.state[d] = rng.random::<u32>();
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Writes the next point into `out` and advances.
    pub fn next_into(&mut self, out: &mut [f64]) {
        for (o, s) in out.iter_mut().zip(&self.state) {
            *o = *s as f64 * SCALE;
        }
        // bit that flips between the Gray codes of index and index + 1
        let c = (!self.index).trailing_zeros() as usize;
        self.index += 1;
        if c < BITS {
            for d in 0..self.dim {
                self.state[d] ^= self.v[d * BITS + c];
            }
        }
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        let mut p = vec![0.0; self.dim];
        self.next_into(&mut p);
        p
    }

    /// Next `n` points as rows of a matrix.
    pub fn take_matrix(&mut self, n: usize) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(n, self.dim);
        let mut p = vec![0.0; self.dim];
        for i in 0..n {
            self.next_into(&mut p);
            for (j, v) in p.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unscrambled_prefix() {
        let mut s = Sobol::new(2).unwrap();
        let pts: Vec<Vec<f64>> = (0..4).map(|_| s.next_point()).collect();
        assert_eq!(pts, vec![vec![0.5, 0.5], vec![0.75, 0.25], vec![0.25, 0.75], vec![0.375, 0.375]]);
    }

    #[test]
    fn higher_dimensions_match_reference_values() {
        let m = Sobol::new(40).unwrap().take_matrix(12);
        let expect = [[0.25, 0.75, 0.25, 0.75], [0.375, 0.375, 0.875, 0.125], [0.0625, 0.1875, 0.4375, 0.3125]];
        for (r, row) in [2, 6, 10].iter().zip(expect) {
            for (c, v) in [5, 13, 27, 39].iter().zip(row) {
                assert_eq!(m[(*r, *c)], v);
            }
        }
    }

    #[test]
    fn scrambled_points_are_stratified() {
        let mut s = Sobol::scrambled(5, 3).unwrap();
        let m = s.take_matrix(16);
        for d in 0..5 {
            let mut bins = [0; 16];
            for i in 0..16 {
                bins[(m[(i, d)] * 16.0) as usize] += 1;
            }
            assert!(bins.iter().all(|b| *b == 1), "dim {d}: {bins:?}");
        }
    }

    #[test]
    fn prefix_dimensions_do_not_depend_on_total_dimension() {
        let a = Sobol::scrambled(2, 9).unwrap().take_matrix(8);
        let b = Sobol::scrambled(7, 9).unwrap().take_matrix(8);
        assert_eq!(a, b.columns(0, 2).into_owned());
    }

    #[test]
    fn rejects_too_many_dimensions() {
        assert!(Sobol::new(MAX_DIMS + 1).is_err());
        assert!(Sobol::new(0).is_err());
    }
}
