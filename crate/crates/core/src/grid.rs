//! Uniform grids on the torus `T^d = [-1/2, 1/2)^d`.
//!
//! Samples are stored in FFT order: index `i` on an axis stands for the point
//! `i/M` reduced into `[-1/2, 1/2)`, so offset zero sits at index zero. Axis 0
//! varies slowest. The same convention indexes the frequency lattice
//! `[-M/2, M/2)^d`.

use serde::{Deserialize, Serialize};

use crate::error::{GmcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    side: usize,
}

impl GridSpec {
    pub const MIN_SIDE: usize = 8;

    pub fn new(dim: usize, side: usize) -> Result<Self> {
        if dim == 0 {
            return Err(GmcError::InvalidGrid("dimension must be at least 1".into()));
        }
        if !side.is_power_of_two() || side < Self::MIN_SIDE {
            return Err(GmcError::InvalidGrid(format!(
                "side {side} must be a power of two >= {}",
                Self::MIN_SIDE
            )));
        }
        side.checked_pow(dim as u32)
            .filter(|&n| n <= 1 << 30)
            .ok_or_else(|| GmcError::InvalidGrid(format!("{side}^{dim} points is too many")))?;
        Ok(Self { dim, side })
    }

    pub fn from_log2(dim: usize, log2_side: u32) -> Result<Self> {
        if log2_side >= usize::BITS - 1 {
            return Err(GmcError::InvalidGrid(format!("2^{log2_side} is too large")));
        }
        Self::new(dim, 1usize << log2_side)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn log2_side(&self) -> u32 {
        self.side.trailing_zeros()
    }

    pub fn len(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Cell width `1/M`.
    pub fn spacing(&self) -> f64 {
        1.0 / self.side as f64
    }

    /// Cell volume `M^-d`.
    pub fn cell_volume(&self) -> f64 {
        (self.len() as f64).recip()
    }

    /// Deepest cascade level: `log2 M - 3`, so every kernel support spans a
    /// few cells.
    pub fn max_level(&self) -> u32 {
        self.log2_side().saturating_sub(3)
    }

    /// Deepest level whose scale kernel is still resolvable (`2^-j >= 4/M`).
    pub fn max_resolvable_level(&self) -> u32 {
        self.log2_side().saturating_sub(2)
    }

    #[inline]
    pub fn signed(&self, i: usize) -> i64 {
        if i < self.side / 2 {
            i as i64
        } else {
            i as i64 - self.side as i64
        }
    }

    #[inline]
    pub fn wrap(&self, k: i64) -> usize {
        k.rem_euclid(self.side as i64) as usize
    }

    /// Signed per-axis coordinates of a flat index.
    pub fn coords(&self, mut idx: usize, out: &mut [i64]) {
        debug_assert_eq!(out.len(), self.dim);
        for axis in (0..self.dim).rev() {
            out[axis] = self.signed(idx % self.side);
            idx /= self.side;
        }
    }

    pub fn coords_vec(&self, idx: usize) -> Vec<i64> {
        let mut out = vec![0; self.dim];
        self.coords(idx, &mut out);
        out
    }

    /// Flat index of signed (or any integer) coordinates, wrapped mod `M`.
    pub fn index_of(&self, coords: &[i64]) -> usize {
        debug_assert_eq!(coords.len(), self.dim);
        coords.iter().fold(0, |acc, &c| acc * self.side + self.wrap(c))
    }

    /// Squared torus distance to the origin in units of cells.
    pub fn dist2_cells(&self, mut idx: usize) -> i64 {
        let mut acc = 0;
        for _ in 0..self.dim {
            let c = self.signed(idx % self.side);
            acc += c * c;
            idx /= self.side;
        }
        acc
    }

    pub fn torus_distance(&self, idx: usize) -> f64 {
        (self.dist2_cells(idx) as f64).sqrt() * self.spacing()
    }

    /// Max-norm of the signed coordinates.
    pub fn inf_norm(&self, mut idx: usize) -> i64 {
        let mut acc = 0;
        for _ in 0..self.dim {
            acc = acc.max(self.signed(idx % self.side).abs());
            idx /= self.side;
        }
        acc
    }

    /// Index of the point `-t`.
    pub fn negate(&self, mut idx: usize) -> usize {
        let mut out = 0;
        let mut stride = 1;
        for _ in 0..self.dim {
            let i = idx % self.side;
            out += ((self.side - i) % self.side) * stride;
            stride *= self.side;
            idx /= self.side;
        }
        out
    }

    /// Physical point of a flat index.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        let h = self.spacing();
        self.coords_vec(idx).into_iter().map(|c| c as f64 * h).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_sides() {
        assert!(GridSpec::new(1, 12).is_err());
        assert!(GridSpec::new(1, 4).is_err());
        assert!(GridSpec::new(0, 16).is_err());
        assert!(GridSpec::new(2, 16).is_ok());
    }

    #[test]
    fn coords_round_trip() {
        let g = GridSpec::new(3, 8).unwrap();
        for idx in 0..g.len() {
            let c = g.coords_vec(idx);
            assert!(c.iter().all(|&x| (-4..4).contains(&x)));
            assert_eq!(g.index_of(&c), idx);
            let neg: Vec<i64> = c.iter().map(|x| -x).collect();
            assert_eq!(g.index_of(&neg), g.negate(idx));
        }
    }

    #[test]
    fn distances() {
        let g = GridSpec::new(2, 16).unwrap();
        let idx = g.index_of(&[-3, 4]);
        assert_eq!(g.dist2_cells(idx), 25);
        assert!((g.torus_distance(idx) - 5.0 / 16.0).abs() < 1e-15);
        assert_eq!(g.inf_norm(idx), 4);
        assert_eq!(g.max_level(), 1);
    }
}
