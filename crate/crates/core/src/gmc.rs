//! The multiplicative cascade `mu_m = prod_{j <= m} X_j dm` on the grid and
//! its Fourier coefficients.

use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GmcError, Result};
use crate::fft::FftNd;
use crate::grid::GridSpec;
use crate::kernel::{GridKernel, KernelFamily};
use crate::sampler::{check_gamma, lognormal_weight, sample_field_with, SeedPath, WeightField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub level: u32,
    pub gamma: f64,
    pub variance: f64,
}

/// Piecewise-constant measure: `density` times Haar measure on each cell.
#[derive(Debug, Clone)]
pub struct MeasureState {
    pub level: u32,
    pub grid: GridSpec,
    pub density: Vec<f64>,
    pub total_mass: f64,
    pub ledger: Vec<LedgerEntry>,
}

fn grid_mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

impl MeasureState {
    pub fn uniform(grid: GridSpec) -> Self {
        Self::from_density(grid, vec![1.0; grid.len()])
    }

    pub fn from_density(grid: GridSpec, density: Vec<f64>) -> Self {
        assert_eq!(density.len(), grid.len());
        Self {
            level: 0,
            grid,
            total_mass: grid_mean(&density),
            density,
            ledger: Vec::new(),
        }
    }

    pub fn advance(&self, weight: &WeightField) -> Result<Self> {
        let mut next = self.clone();
        next.advance_in_place(weight)?;
        Ok(next)
    }

    pub fn advance_in_place(&mut self, weight: &WeightField) -> Result<()> {
        let expected = self.level + 1;
        if weight.level != expected {
            return Err(GmcError::LevelMismatch {
                expected,
                got: weight.level,
            });
        }
        if weight.values.len() != self.density.len() {
            return Err(GmcError::InvalidArgument("weight does not match the grid".into()));
        }
        for (d, x) in self.density.iter_mut().zip(&weight.values) {
            *d *= x;
        }
        self.level = expected;
        self.total_mass = grid_mean(&self.density);
        self.ledger.push(LedgerEntry {
            level: expected,
            gamma: weight.gamma,
            variance: weight.variance,
        });
        Ok(())
    }

    /// Masses of the `2^(kd)` dyadic cubes of side `2^-k` tiling
    /// `[-1/2, 1/2)^d`, indexed row-major by cube coordinate.
    pub fn cube_masses(&self, k: u32) -> Result<Vec<f64>> {
        let grid = self.grid;
        if k > grid.log2_side() {
            return Err(GmcError::ScaleUnresolvable {
                level: k,
                side: grid.side(),
            });
        }
        let per_axis = 1usize << k;
        let cells = grid.side() / per_axis;
        let half = grid.side() as i64 / 2;
        let mut masses = vec![0.0; per_axis.pow(grid.dim() as u32)];
        let mut coords = vec![0; grid.dim()];
        let h = grid.cell_volume();
        for (i, &d) in self.density.iter().enumerate() {
            grid.coords(i, &mut coords);
            let cube = coords
                .iter()
                .fold(0, |acc, &c| acc * per_axis + (c + half) as usize / cells);
            masses[cube] += d * h;
        }
        Ok(masses)
    }

    /// Same measure scaled to unit mass.
    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        if self.total_mass > 0.0 {
            for d in &mut out.density {
                *d /= self.total_mass;
            }
            out.total_mass = 1.0;
        }
        out
    }
}

/// Fourier coefficients `mu^(n) = M^-d sum_t density(t) e(n.t)` over the
/// lattice `[-M/2, M/2)^d`, FFT order.
#[derive(Debug, Clone)]
pub struct SpectrumTable {
    pub grid: GridSpec,
    pub coefficients: Vec<Complex64>,
}

impl SpectrumTable {
    pub fn from_coefficients(grid: GridSpec, coefficients: Vec<Complex64>) -> Self {
        assert_eq!(coefficients.len(), grid.len());
        Self { grid, coefficients }
    }

    pub fn coefficient(&self, n: &[i64]) -> Complex64 {
        self.coefficients[self.grid.index_of(n)]
    }

    pub fn power(&self, idx: usize) -> f64 {
        self.coefficients[idx].norm_sqr()
    }

    /// Frequencies with `|n|_inf >= M/4` sit in the contaminated top octave.
    pub fn aliasing_suspect(&self, idx: usize) -> bool {
        self.grid.inf_norm(idx) >= (self.grid.side() / 4) as i64
    }

    pub fn write_csv(&self, path: &Path, include_suspect: bool) -> Result<()> {
        let grid = self.grid;
        let mut w = csv::Writer::from_path(path).map_err(|e| GmcError::parse(path, e))?;
        let mut header: Vec<String> = (0..grid.dim()).map(|a| format!("n{a}")).collect();
        header.extend(["abs_n", "re", "im", "power"].map(String::from));
        w.write_record(&header).map_err(|e| GmcError::parse(path, e))?;
        let mut coords = vec![0; grid.dim()];
        for (i, z) in self.coefficients.iter().enumerate() {
            if !include_suspect && self.aliasing_suspect(i) {
                continue;
            }
            grid.coords(i, &mut coords);
            let mut row: Vec<String> = coords.iter().map(|c| c.to_string()).collect();
            row.push(format!("{:e}", (grid.dist2_cells(i) as f64).sqrt()));
            row.push(format!("{:e}", z.re));
            row.push(format!("{:e}", z.im));
            row.push(format!("{:e}", z.norm_sqr()));
            w.write_record(&row).map_err(|e| GmcError::parse(path, e))?;
        }
        w.flush().map_err(|e| GmcError::io(path, e))
    }
}

pub fn spectrum(state: &MeasureState) -> SpectrumTable {
    spectrum_with(state, &FftNd::new(state.grid))
}

pub fn spectrum_with(state: &MeasureState, fft: &FftNd) -> SpectrumTable {
    spectrum_of_density(state.grid, &state.density, fft)
}

pub(crate) fn spectrum_of_density(grid: GridSpec, density: &[f64], fft: &FftNd) -> SpectrumTable {
    let mut buf: Vec<Complex64> = density.iter().map(|&d| Complex64::new(d, 0.0)).collect();
    fft.inverse_normalized(&mut buf);
    SpectrumTable::from_coefficients(grid, buf)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub grid: GridSpec,
    pub gamma: f64,
    pub levels: u32,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub state: MeasureState,
    pub spectrum: SpectrumTable,
}

/// Kernels for levels `1..=levels`, built once and shared by all replicas.
#[derive(Debug)]
pub struct Cascade {
    config: CascadeConfig,
    kernels: Vec<GridKernel>,
    fft: FftNd,
}

impl Cascade {
    pub fn new(config: CascadeConfig, family: &KernelFamily) -> Result<Self> {
        Self::validate(&config)?;
        let kernels = family.ladder(config.grid, config.levels)?;
        Self::from_kernels(config, kernels)
    }

    pub fn from_kernels(config: CascadeConfig, kernels: Vec<GridKernel>) -> Result<Self> {
        Self::validate(&config)?;
        for (i, k) in kernels.iter().enumerate() {
            if k.level != i as u32 + 1 || k.grid != config.grid {
                return Err(GmcError::LevelMismatch {
                    expected: i as u32 + 1,
                    got: k.level,
                });
            }
            k.require_certified()?;
        }
        if kernels.len() != config.levels as usize {
            return Err(GmcError::InvalidArgument(format!(
                "{} kernels for {} levels",
                kernels.len(),
                config.levels
            )));
        }
        let fft = FftNd::new(config.grid);
        Ok(Self { config, kernels, fft })
    }

    fn validate(config: &CascadeConfig) -> Result<()> {
        check_gamma(config.gamma, config.grid.dim())?;
        if config.levels > config.grid.max_level() {
            return Err(GmcError::ScaleUnresolvable {
                level: config.levels,
                side: config.grid.side(),
            });
        }
        Ok(())
    }

    pub fn config(&self) -> &CascadeConfig {
        &self.config
    }

    pub fn kernels(&self) -> &[GridKernel] {
        &self.kernels
    }

    pub fn fft(&self) -> &FftNd {
        &self.fft
    }

    pub fn weight(&self, replica: u64, level: u32) -> Result<WeightField> {
        let kernel = &self.kernels[level as usize - 1];
        let path = SeedPath::new(self.config.seed, replica, level);
        let field = sample_field_with(kernel, &self.fft, path);
        lognormal_weight(&field, self.config.gamma, kernel)
    }

    /// Run one replica to the final level. `observe` sees the state before
    /// each step together with the weight about to be applied, and the
    /// state after the last step with `None`.
    pub fn run_observed(
        &self,
        replica: u64,
        mut observe: impl FnMut(&MeasureState, Option<&WeightField>) -> Result<()>,
    ) -> Result<MeasureState> {
        let mut state = MeasureState::uniform(self.config.grid);
        for level in 1..=self.config.levels {
            let weight = self.weight(replica, level)?;
            observe(&state, Some(&weight))?;
            state.advance_in_place(&weight)?;
        }
        observe(&state, None)?;
        Ok(state)
    }

    pub fn run(&self, replica: u64, checkpoints: &[u32]) -> Result<Vec<Checkpoint>> {
        let mut out = Vec::new();
        self.run_observed(replica, |state, _| {
            if checkpoints.contains(&state.level) {
                out.push(Checkpoint {
                    state: state.clone(),
                    spectrum: spectrum_with(state, &self.fft),
                });
            }
            Ok(())
        })?;
        Ok(out)
    }

    /// Final states of replicas `0..replicas`, in replica order.
    pub fn run_ensemble(&self, replicas: u64) -> Result<Vec<MeasureState>> {
        (0..replicas)
            .into_par_iter()
            .map(|r| self.run_observed(r, |_, _| Ok(())))
            .collect()
    }
}

/// Build the kernels for `config` and run a single replica, returning the
/// requested checkpoints (all levels when `checkpoints` is empty).
pub fn run_cascade(config: &CascadeConfig, replica: u64, checkpoints: &[u32]) -> Result<Vec<Checkpoint>> {
    let family = KernelFamily::shared(config.grid.dim())?;
    let cascade = Cascade::new(config.clone(), &family)?;
    let all: Vec<u32> = (0..=config.levels).collect();
    cascade.run(replica, if checkpoints.is_empty() { &all } else { checkpoints })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_masses_partition_the_mass() {
        let grid = GridSpec::new(2, 16).unwrap();
        let density: Vec<f64> = (0..grid.len()).map(|i| 1.0 + (i % 7) as f64).collect();
        let state = MeasureState::from_density(grid, density);
        for k in 0..=4 {
            let m = state.cube_masses(k).unwrap();
            assert_eq!(m.len(), 1 << (2 * k));
            assert!((m.iter().sum::<f64>() - state.total_mass).abs() < 1e-12);
        }
    }

    #[test]
    fn cube_index_follows_position() {
        let grid = GridSpec::new(1, 16).unwrap();
        let mut density = vec![0.0; 16];
        density[grid.index_of(&[-8])] = 16.0;
        let state = MeasureState::from_density(grid, density);
        assert_eq!(state.cube_masses(2).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    }
}
