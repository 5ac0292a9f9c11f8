//! Smooth dyadic partitions of unity on the torus and the localized
//! coefficients of a cascade increment.
//!
//! With `vartheta(t) = exp(-1/(1 - t^2))` on `(-1, 1)` and
//! `W(t) = sum_h vartheta(t - h)`, the window `theta = vartheta / W` sums to
//! one over integer shifts. At scale `k` the torus window is
//! `phi_k(z) = prod_l rho_k(z_l)` with `rho_k(t) = sum_h theta(2^k (t - h))`,
//! and `phi_I = phi_k(. - c_I)` for the `2^(kd)` cubes `I` of side `2^-k`
//! tiling `[-1/2, 1/2)^d`, centred at `c_I = 2^-k (h + 1/2)`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GmcError, Result};
use crate::fft::FftNd;
use crate::gmc::{spectrum_of_density, MeasureState};
use crate::grid::GridSpec;
use crate::sampler::WeightField;

#[inline]
pub fn vartheta(t: f64) -> f64 {
    let u = 1.0 - t * t;
    if u <= 0.0 {
        0.0
    } else {
        (-1.0 / u).exp()
    }
}

/// The normalized window `theta`.
#[derive(Debug, Clone, Copy)]
pub struct Theta {
    /// Largest deviation of `sum_h theta(t - h)` from 1 seen when certifying.
    pub partition_error: f64,
}

impl Theta {
    /// `W(t)`; only the shifts `h` within distance 1 of `t` contribute.
    #[inline]
    pub fn normalizer(t: f64) -> f64 {
        let base = t.floor();
        (-1..=2).map(|h| vartheta(t - (base + h as f64))).sum()
    }

    #[inline]
    pub fn eval(t: f64) -> f64 {
        let v = vartheta(t);
        if v == 0.0 {
            0.0
        } else {
            v / Self::normalizer(t)
        }
    }

    /// `rho_k(t) = sum_h theta(2^k (t - h))` on the unit torus.
    #[inline]
    pub fn periodized(k: u32, t: f64) -> f64 {
        let t = t - t.round();
        let scale = 2f64.powi(k as i32);
        (-1..=1).map(|h| Self::eval(scale * (t - h as f64))).sum()
    }
}

/// Build `theta`, certifying `sum_h theta(t - h) = 1` on `64 * oversample`
/// points of `[0, 1]`.
pub fn build_theta(oversample: usize) -> Result<Theta> {
    let n = 64 * oversample.max(1);
    let partition_error = (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            ((-2..=2).map(|h| Theta::eval(t - h as f64)).sum::<f64>() - 1.0).abs()
        })
        .fold(0.0, f64::max);
    if partition_error > 1e-14 {
        return Err(GmcError::QuadratureUnstable {
            what: "window partition of unity".into(),
            discrepancy: partition_error,
        });
    }
    Ok(Theta { partition_error })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DerivativeScaling {
    pub order: u32,
    /// `max_{|alpha| = order} max |D^alpha phi_k| / 2^(k order)`.
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PouCertificate {
    pub k: u32,
    pub partition_error: f64,
    pub support_violation: f64,
    pub scaling: Vec<DerivativeScaling>,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct PouFamily {
    pub k: u32,
    pub grid: GridSpec,
    /// `phi_k` sampled on the grid, centred at the origin.
    pub window: Vec<f64>,
    /// Half-width of the window support in cells, `M 2^-k`.
    pub reach: i64,
    pub certificate: PouCertificate,
}

pub fn build_pou(k: u32, grid: GridSpec) -> Result<PouFamily> {
    if k + 3 > grid.log2_side() {
        return Err(GmcError::ScaleUnresolvable {
            level: k,
            side: grid.side(),
        });
    }
    let h = grid.spacing();
    let rho: Vec<f64> = (0..grid.side())
        .map(|i| Theta::periodized(k, grid.signed(i) as f64 * h))
        .collect();
    let side = grid.side();
    let window: Vec<f64> = (0..grid.len())
        .map(|mut idx| {
            let mut v = 1.0;
            for _ in 0..grid.dim() {
                v *= rho[idx % side];
                idx /= side;
            }
            v
        })
        .collect();
    let reach = (side >> k) as i64;
    let mut family = PouFamily {
        k,
        grid,
        window,
        reach,
        certificate: PouCertificate {
            k,
            partition_error: 0.0,
            support_violation: 0.0,
            scaling: Vec::new(),
            passed: false,
        },
    };
    family.certificate = family.certify()?;
    Ok(family)
}

impl PouFamily {
    pub fn cube_count(&self) -> usize {
        1usize << (self.k as usize * self.grid.dim())
    }

    /// Centre of cube `cube` in cells (exact: `M 2^-k (h + 1/2)`).
    pub fn center(&self, cube: usize) -> Vec<i64> {
        let per_axis = 1usize << self.k;
        let half_cell = (self.grid.side() >> (self.k + 1)) as i64;
        let mut out = vec![0; self.grid.dim()];
        let mut rest = cube;
        for axis in (0..self.grid.dim()).rev() {
            let h = (rest % per_axis) as i64 - (per_axis / 2) as i64;
            out[axis] = half_cell * (2 * h + 1);
            rest /= per_axis;
        }
        out
    }

    /// Visit `(grid index, phi_I value)` over the support of `phi_I`.
    pub fn for_each_in_support(&self, cube: usize, mut f: impl FnMut(usize, f64)) {
        let grid = self.grid;
        let center = self.center(cube);
        let dim = grid.dim();
        let width = 2 * self.reach as usize + 1;
        let mut offset = vec![0i64; dim];
        let mut point = vec![0i64; dim];
        for flat in 0..width.pow(dim as u32) {
            let mut rest = flat;
            for axis in (0..dim).rev() {
                offset[axis] = (rest % width) as i64 - self.reach;
                rest /= width;
            }
            let value = self.window[grid.index_of(&offset)];
            if value == 0.0 {
                continue;
            }
            for axis in 0..dim {
                point[axis] = center[axis] + offset[axis];
            }
            f(grid.index_of(&point), value);
        }
    }

    /// `phi_I` on the whole grid.
    pub fn window_for(&self, cube: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        self.for_each_in_support(cube, |i, v| out[i] += v);
        out
    }

    fn certify(&self) -> Result<PouCertificate> {
        let grid = self.grid;
        let mut sum = vec![0.0; grid.len()];
        for cube in 0..self.cube_count() {
            self.for_each_in_support(cube, |i, v| sum[i] += v);
        }
        let partition_error = sum.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
        let support_violation = (0..grid.len())
            .filter(|&i| grid.inf_norm(i) > self.reach)
            .map(|i| self.window[i].abs())
            .fold(0.0, f64::max);
        let fft = FftNd::new(grid);
        let spectrum = fft.forward_real(&self.window);
        let scaling = (0..=2)
            .map(|order| DerivativeScaling {
                order,
                ratio: crate::analysis::multi_indices(grid.dim(), order)
                    .iter()
                    .filter(|a| a.iter().sum::<u32>() == order)
                    .map(|alpha| {
                        let d = spectral_derivative_raw(&fft, &spectrum, alpha);
                        d.iter().map(|v| v.abs()).fold(0.0, f64::max)
                    })
                    .fold(0.0, f64::max)
                    / 2f64.powi((self.k * order) as i32),
            })
            .collect();
        Ok(PouCertificate {
            k: self.k,
            partition_error,
            support_violation,
            scaling,
            passed: partition_error <= 1e-12 && support_violation == 0.0,
        })
    }
}

fn spectral_derivative_raw(fft: &FftNd, spectrum: &[Complex64], alpha: &[u32]) -> Vec<f64> {
    let grid = fft.grid();
    let mut coords = vec![0; grid.dim()];
    let mut buf: Vec<Complex64> = spectrum
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            grid.coords(i, &mut coords);
            let mut s = Complex64::new(1.0, 0.0);
            for (&a, &n) in alpha.iter().zip(&coords) {
                s *= Complex64::new(0.0, std::f64::consts::TAU * n as f64).powu(a);
            }
            z * s
        })
        .collect();
    fft.inverse_normalized(&mut buf);
    buf.iter().map(|z| z.re).collect()
}

/// `⟨n⟩ = (1 + |n|^2)^(1/2)`.
pub fn bracket(n: &[i64]) -> f64 {
    (1.0 + n.iter().map(|&x| (x * x) as f64).sum::<f64>()).sqrt()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalizedCoeffs {
    pub k: u32,
    pub cube: usize,
    pub tau: f64,
    /// One value per tracked frequency.
    pub values: Vec<Complex64>,
}

impl LocalizedCoeffs {
    pub fn lq_norm(&self, q: f64) -> f64 {
        self.values
            .iter()
            .map(|z| z.norm().powf(q))
            .sum::<f64>()
            .powf(q.recip())
    }
}

/// `e(j/M)` for `j = 0..M`.
fn twiddles(side: usize) -> Vec<Complex64> {
    (0..side)
        .map(|j| Complex64::from_polar(1.0, std::f64::consts::TAU * j as f64 / side as f64))
        .collect()
}

#[inline]
fn phase_index(grid: GridSpec, n: &[i64], idx: usize, coords: &mut [i64]) -> usize {
    grid.coords(idx, coords);
    let dot: i64 = n.iter().zip(coords.iter()).map(|(a, b)| a * b).sum();
    grid.wrap(dot)
}

fn check_levels(prev: &MeasureState, weight: &WeightField, pou: &PouFamily) -> Result<()> {
    let expected = prev.level + 1;
    if weight.level != expected {
        return Err(GmcError::LevelMismatch {
            expected,
            got: weight.level,
        });
    }
    if pou.k != expected {
        return Err(GmcError::LevelMismatch { expected, got: pou.k });
    }
    if pou.grid != prev.grid {
        return Err(GmcError::InvalidArgument("window and measure grids differ".into()));
    }
    Ok(())
}

/// `D_I(n) = ⟨n⟩^(tau/2) M^-d sum_t phi_I(t) mu_{k-1}(t) (X_k(t) - 1) e(n.t)`
/// for every cube of scale `k` and every tracked frequency.
pub fn localized_coeffs(
    prev: &MeasureState,
    weight: &WeightField,
    pou: &PouFamily,
    tau: f64,
    tracked: &[Vec<i64>],
) -> Result<Vec<LocalizedCoeffs>> {
    check_levels(prev, weight, pou)?;
    let grid = prev.grid;
    let increment: Vec<f64> = prev
        .density
        .iter()
        .zip(&weight.values)
        .map(|(m, x)| m * (x - 1.0))
        .collect();
    let table = twiddles(grid.side());
    let weights: Vec<f64> = tracked
        .iter()
        .map(|n| bracket(n).powf(tau / 2.0) * grid.cell_volume())
        .collect();
    Ok((0..pou.cube_count())
        .into_par_iter()
        .map(|cube| {
            let mut values = vec![Complex64::default(); tracked.len()];
            let mut coords = vec![0; grid.dim()];
            pou.for_each_in_support(cube, |i, phi| {
                let f = phi * increment[i];
                if f == 0.0 {
                    return;
                }
                for (v, n) in values.iter_mut().zip(tracked) {
                    *v += f * table[phase_index(grid, n, i, &mut coords)];
                }
            });
            for (v, w) in values.iter_mut().zip(&weights) {
                *v *= w;
            }
            LocalizedCoeffs {
                k: pou.k,
                cube,
                tau,
                values,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecouplingRow {
    pub level: u32,
    pub n: Vec<i64>,
    pub local_sum: Complex64,
    pub increment: Complex64,
    pub relative_error: f64,
}

/// Compare `sum_I D_I(n)` with `⟨n⟩^(tau/2) (mu_k^(n) - mu_{k-1}^(n))`, both
/// from the same grid. The error is relative to the larger of the increment
/// and the absolute mass `⟨n⟩^(tau/2) M^-d sum |mu_{k-1} (X_k - 1)|`, so that
/// a cancelling increment does not inflate it.
pub fn decoupling_check(
    prev: &MeasureState,
    weight: &WeightField,
    coeffs: &[LocalizedCoeffs],
    tau: f64,
    tracked: &[Vec<i64>],
) -> Result<Vec<DecouplingRow>> {
    let grid = prev.grid;
    let fft = FftNd::new(grid);
    let next = prev.advance(weight)?;
    let before = spectrum_of_density(grid, &prev.density, &fft);
    let after = spectrum_of_density(grid, &next.density, &fft);
    let scale = grid.cell_volume()
        * prev
            .density
            .iter()
            .zip(&weight.values)
            .map(|(m, x)| (m * (x - 1.0)).abs())
            .sum::<f64>();
    Ok(tracked
        .iter()
        .enumerate()
        .map(|(pos, n)| {
            let w = bracket(n).powf(tau / 2.0);
            let local_sum: Complex64 = coeffs.iter().map(|c| c.values[pos]).sum();
            let increment = (after.coefficient(n) - before.coefficient(n)) * w;
            let denom = increment.norm().max(w * scale).max(f64::MIN_POSITIVE);
            DecouplingRow {
                level: next.level,
                n: n.clone(),
                local_sum,
                increment,
                relative_error: (local_sum - increment).norm() / denom,
            }
        })
        .collect())
}

/// For each shell `k` below the aliasing guard, the axis points `2^k e_l`
/// and `(2^(k+1) - 1) e_l` with `l` over all axes.
pub fn default_tracked(grid: GridSpec) -> Vec<Vec<i64>> {
    let guard = (grid.side() / 4) as i64;
    let mut out = Vec::new();
    let mut k = 0;
    while (2i64 << k) <= guard {
        for axis in 0..grid.dim() {
            for r in [1i64 << k, (2i64 << k) - 1] {
                let mut n = vec![0; grid.dim()];
                n[axis] = r;
                if !out.contains(&n) {
                    out.push(n);
                }
            }
        }
        k += 1;
    }
    out
}

/// Tracked points of shell `k` only.
pub fn shell_tracked(grid: GridSpec, k: u32) -> Vec<Vec<i64>> {
    default_tracked(grid)
        .into_iter()
        .filter(|n| {
            let r = n.iter().map(|x| x.abs()).max().unwrap_or(0);
            r >= 1 << k && r < 2 << k
        })
        .collect()
}

pub fn write_coeffs_csv(path: &std::path::Path, coeffs: &[LocalizedCoeffs], tracked: &[Vec<i64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| GmcError::parse(path, e))?;
    w.write_record(["k", "cube", "n", "re", "im"])
        .map_err(|e| GmcError::parse(path, e))?;
    for c in coeffs {
        for (n, v) in tracked.iter().zip(&c.values) {
            let n = n.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
            w.write_record([
                c.k.to_string(),
                c.cube.to_string(),
                n,
                format!("{:e}", v.re),
                format!("{:e}", v.im),
            ])
            .map_err(|e| GmcError::parse(path, e))?;
        }
    }
    w.flush().map_err(|e| GmcError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_basics() {
        assert_eq!(Theta::eval(0.0), 1.0);
        assert!((Theta::eval(0.5) - 0.5).abs() < 1e-15);
        assert_eq!(Theta::eval(1.0), 0.0);
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            assert!((Theta::eval(t) + Theta::eval(t - 1.0) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn centers_tile_the_domain() {
        let grid = GridSpec::new(1, 64).unwrap();
        let pou = build_pou(2, grid).unwrap();
        let centers: Vec<i64> = (0..4).map(|c| pou.center(c)[0]).collect();
        assert_eq!(centers, vec![-24, -8, 8, 24]);
    }
}
