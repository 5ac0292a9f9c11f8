//! Multidimensional FFT over a [`GridSpec`], one axis at a time.
//!
//! Both directions are unnormalized: `forward` computes
//! `sum_t f(t) e(-n.t)` and `inverse` computes `sum_n F(n) e(+n.t)`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::GridSpec;

type Plan = Arc<dyn Fft<f64>>;

fn plans(side: usize) -> (Plan, Plan) {
    static CACHE: OnceLock<Mutex<HashMap<usize, (Plan, Plan)>>> = OnceLock::new();
    let mut cache = CACHE.get_or_init(Default::default).lock().unwrap();
    cache
        .entry(side)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            (planner.plan_fft_forward(side), planner.plan_fft_inverse(side))
        })
        .clone()
}

#[derive(Clone)]
pub struct FftNd {
    grid: GridSpec,
    forward: Plan,
    inverse: Plan,
}

impl std::fmt::Debug for FftNd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftNd").field("grid", &self.grid).finish()
    }
}

impl FftNd {
    pub fn new(grid: GridSpec) -> Self {
        let (forward, inverse) = plans(grid.side());
        Self { grid, forward, inverse }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, self.forward.as_ref());
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, self.inverse.as_ref());
    }

    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// `M^-d sum_n F(n) e(+n.t)`, i.e. the exact inverse of `forward`.
    pub fn inverse_normalized(&self, data: &mut [Complex64]) {
        self.inverse(data);
        let scale = self.grid.cell_volume();
        for z in data.iter_mut() {
            *z *= scale;
        }
    }

    fn transform(&self, data: &mut [Complex64], plan: &dyn Fft<f64>) {
        let n = self.grid.side();
        assert_eq!(data.len(), self.grid.len(), "buffer does not match grid");
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        let mut line = vec![Complex64::default(); n];
        let mut stride = 1;
        for _ in 0..self.grid.dim() {
            if stride == 1 {
                plan.process_with_scratch(data, &mut scratch);
            } else {
                let block = n * stride;
                for chunk in data.chunks_mut(block) {
                    for inner in 0..stride {
                        for (k, slot) in line.iter_mut().enumerate() {
                            *slot = chunk[inner + k * stride];
                        }
                        plan.process_with_scratch(&mut line, &mut scratch);
                        for (k, v) in line.iter().enumerate() {
                            chunk[inner + k * stride] = *v;
                        }
                    }
                }
            }
            stride *= n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn naive_dft(grid: GridSpec, data: &[Complex64]) -> Vec<Complex64> {
        let m = grid.side() as f64;
        (0..grid.len())
            .map(|k| {
                let n = grid.coords_vec(k);
                data.iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let t = grid.coords_vec(i);
                        let phase: f64 = n.iter().zip(&t).map(|(a, b)| (a * b) as f64).sum();
                        x * Complex64::from_polar(1.0, -TAU * phase / m)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft_in_2d_and_3d() {
        for (dim, side) in [(2, 8), (3, 8)] {
            let grid = GridSpec::new(dim, side).unwrap();
            let data: Vec<Complex64> = (0..grid.len())
                .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
                .collect();
            let mut fast = data.clone();
            FftNd::new(grid).forward(&mut fast);
            let slow = naive_dft(grid, &data);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn round_trip() {
        let grid = GridSpec::new(2, 16).unwrap();
        let fft = FftNd::new(grid);
        let data: Vec<f64> = (0..grid.len()).map(|i| (i as f64).sqrt()).collect();
        let mut buf = fft.forward_real(&data);
        fft.inverse_normalized(&mut buf);
        for (z, x) in buf.iter().zip(&data) {
            assert!((z.re - x).abs() < 1e-12 && z.im.abs() < 1e-12);
        }
    }
}
