//! Scale kernels `H_j`, mollifiers and the grid covariance kernels `K_j`.
//!
//! `K_j = H_j * P_j * P~_j` where `P_j` is the mollifier `Q` rescaled to
//! `eps_j = j^-2 2^-j` and `P~_j(t) = P_j(-t)`. Two constructions are
//! provided:
//!
//! * the spectral route multiplies the DFT of the sampled `H_j` by
//!   `|Q^(eps_j n)|^2`;
//! * the exact route samples the continuous kernel
//!   `k_j(r) = int l(2^j |r e_1 - eps_j z|) G(|z|) dz` with `G = Q * Q`.
//!
//! The spectral route is exact up to roundoff once the mollifier spectrum has
//! decayed below `1e-20` at the band edge. Before that, truncating it leaks
//! mass outside the true support `2^-j + 2 eps_j`, so the exact route is used
//! whenever the support fits in the fundamental domain.

mod profile;
mod scale;

use std::collections::HashMap;
use std::io::Write;
use std::ops::RangeInclusive;
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use profile::{
    build_profile_phi, build_profile_q, bump, mollifier_autocorrelation, periodic_eigenvalue_range, ProfileCertificate,
    ProfileKind, RadialProfile, RadialTable,
};
pub use scale::{eval_l, log_scale, ScaleProfile};

use crate::error::{GmcError, Result};
use crate::fft::FftNd;
use crate::grid::GridSpec;
use crate::quadrature::{gauss_legendre, sphere_area};

pub const DEFAULT_OVERSAMPLE: usize = 32;
/// Removed negative spectral mass that aborts a build.
pub const CLAMP_ABORT: f64 = 1e-6;
/// Removed negative spectral mass a certified kernel may carry.
pub const CLAMP_BUDGET: f64 = 1e-8;
pub const SUPPORT_TOLERANCE: f64 = 1e-12;
/// Band-edge mollifier weight below which the spectral route is exact.
const SPECTRAL_EDGE: f64 = 1e-20;

/// `eps_j = j^-2 2^-j`.
pub fn epsilon(level: u32) -> f64 {
    let j = level as f64;
    (j * j).recip() * 0.5f64.powi(level as i32)
}

/// Radius of the support of `K_j`: `2^-j + 2 eps_j`, at most `3 * 2^-j`.
pub fn support_radius(level: u32) -> f64 {
    0.5f64.powi(level as i32) + 2.0 * epsilon(level)
}

pub fn check_resolvable(level: u32, grid: GridSpec) -> Result<()> {
    if level == 0 || level > grid.max_resolvable_level() {
        return Err(GmcError::ScaleUnresolvable {
            level,
            side: grid.side(),
        });
    }
    Ok(())
}

/// Fill a grid with a radial function of the distance in cells, evaluating
/// each distinct distance once. Points at or beyond `cutoff` cells are zero.
fn radial_fill(grid: GridSpec, cutoff: f64, f: impl Fn(f64) -> f64 + Sync) -> Vec<f64> {
    let keys: Vec<i64> = (0..grid.len()).map(|i| grid.dist2_cells(i)).collect();
    let mut distinct: Vec<i64> = keys.iter().copied().filter(|&k| (k as f64) < cutoff * cutoff).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let values: Vec<f64> = distinct.par_iter().map(|&k| f((k as f64).sqrt())).collect();
    keys.iter()
        .map(|k| match distinct.binary_search(k) {
            Ok(pos) => values[pos],
            Err(_) => 0.0,
        })
        .collect()
}

/// Samples of `H_j(t) = l(2^j |t|)` on the grid, `|t|` the torus distance.
pub fn build_h_grid(scale: &ScaleProfile, level: u32, grid: GridSpec) -> Result<Vec<f64>> {
    check_resolvable(level, grid)?;
    let factor = 2f64.powi(level as i32) * grid.spacing();
    Ok((0..grid.len())
        .map(|i| scale.eval((grid.dist2_cells(i) as f64).sqrt() * factor))
        .collect())
}

/// `w_n = |Q^(eps_j n)|^2` on the frequency lattice, FFT order.
pub fn mollifier_spectrum(q: &RadialProfile, level: u32, grid: GridSpec) -> Vec<f64> {
    let eps = epsilon(level);
    radial_fill(grid, f64::INFINITY, |n| q.fourier(eps * n).powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelRoute {
    Spectral,
    Exact,
    Loaded,
}

/// A covariance kernel on the grid together with its circulant spectrum.
///
/// `eigenvalues` are the unnormalized DFT of `real_samples`, so that
/// `real_samples[0] = mean(eigenvalues) = sigma^2`.
#[derive(Debug, Clone)]
pub struct GridKernel {
    pub level: u32,
    pub grid: GridSpec,
    pub real_samples: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub variance: f64,
    pub clamped_mass: f64,
    pub raw_min_eigenvalue: f64,
    pub route: KernelRoute,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelCertificate {
    pub level: u32,
    pub dim: usize,
    pub side: usize,
    pub route: KernelRoute,
    pub variance: f64,
    pub eigenvalue_mean: f64,
    pub clamped_mass: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub support_bound: f64,
    pub max_outside_support: f64,
    pub evenness_error: f64,
    pub positive_definite: bool,
    pub support_ok: bool,
    pub clamp_ok: bool,
    pub variance_consistent: bool,
    pub passed: bool,
}

fn spectrum_stats(eigenvalues: &[f64]) -> (f64, f64, f64) {
    let total: f64 = eigenvalues.iter().map(|v| v.abs()).sum();
    let negative: f64 = eigenvalues.iter().map(|v| (-v).max(0.0)).sum();
    let min = eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let clamped = if total > 0.0 { negative / total } else { 0.0 };
    (clamped, min, total)
}

impl GridKernel {
    /// Clamp a raw spectrum and recover real-space samples from it.
    pub fn from_eigenvalues(level: u32, grid: GridSpec, raw: Vec<f64>, route: KernelRoute) -> Result<Self> {
        let (clamped_mass, raw_min_eigenvalue, _) = spectrum_stats(&raw);
        if clamped_mass > CLAMP_ABORT {
            return Err(GmcError::ClampBudgetExceeded {
                level,
                clamped: clamped_mass,
                budget: CLAMP_ABORT,
            });
        }
        let eigenvalues: Vec<f64> = raw.into_iter().map(|v| v.max(0.0)).collect();
        let mut buf: Vec<Complex64> = eigenvalues.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        FftNd::new(grid).inverse_normalized(&mut buf);
        let real_samples: Vec<f64> = buf.iter().map(|z| z.re).collect();
        Ok(Self {
            level,
            grid,
            variance: real_samples[0],
            real_samples,
            eigenvalues,
            clamped_mass,
            raw_min_eigenvalue,
            route,
        })
    }

    /// Wrap real-space samples. Unless clamping removes mass, the samples are
    /// kept as given.
    pub fn from_samples(level: u32, grid: GridSpec, samples: Vec<f64>, route: KernelRoute) -> Result<Self> {
        let raw = real_spectrum(grid, &samples);
        if raw.iter().all(|&v| v >= 0.0) {
            return Ok(Self {
                level,
                grid,
                variance: samples[0],
                real_samples: samples,
                raw_min_eigenvalue: raw.iter().copied().fold(f64::INFINITY, f64::min),
                eigenvalues: raw,
                clamped_mass: 0.0,
                route,
            });
        }
        Self::from_eigenvalues(level, grid, raw, route)
    }

    /// Samples taken at face value, for auditing externally supplied kernels.
    pub fn from_samples_unchecked(level: u32, grid: GridSpec, samples: Vec<f64>) -> Self {
        let eigenvalues = real_spectrum(grid, &samples);
        let (clamped_mass, raw_min_eigenvalue, _) = spectrum_stats(&eigenvalues);
        Self {
            level,
            grid,
            variance: samples[0],
            real_samples: samples,
            eigenvalues,
            clamped_mass,
            raw_min_eigenvalue,
            route: KernelRoute::Loaded,
        }
    }

    pub fn support_bound(&self) -> f64 {
        3.0 * 0.5f64.powi(self.level as i32)
    }

    pub fn certify(&self) -> KernelCertificate {
        let grid = self.grid;
        let n = self.eigenvalues.len() as f64;
        let eigenvalue_mean = self.eigenvalues.iter().sum::<f64>() / n;
        let (clamped, min_now, _) = spectrum_stats(&self.eigenvalues);
        let min_eigenvalue = min_now.min(self.raw_min_eigenvalue);
        let max_eigenvalue = self.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let bound = self.support_bound();
        let max_outside_support = (0..grid.len())
            .filter(|&i| grid.torus_distance(i) > bound)
            .map(|i| self.real_samples[i].abs())
            .fold(0.0, f64::max);
        let evenness_error = (0..grid.len())
            .map(|i| (self.real_samples[i] - self.real_samples[grid.negate(i)]).abs())
            .fold(0.0, f64::max);
        let clamped_mass = self.clamped_mass.max(clamped);
        let positive_definite = min_eigenvalue >= -1e-10 * max_eigenvalue.abs().max(f64::MIN_POSITIVE);
        let support_ok = max_outside_support <= SUPPORT_TOLERANCE;
        let clamp_ok = clamped_mass <= CLAMP_BUDGET;
        let variance_consistent = (self.variance - eigenvalue_mean).abs() <= 1e-10 * self.variance.abs().max(1.0);
        let symmetric = evenness_error <= 1e-12 * self.variance.abs().max(1.0);
        KernelCertificate {
            level: self.level,
            dim: grid.dim(),
            side: grid.side(),
            route: self.route,
            variance: self.variance,
            eigenvalue_mean,
            clamped_mass,
            min_eigenvalue,
            max_eigenvalue,
            support_bound: bound,
            max_outside_support,
            evenness_error,
            positive_definite,
            support_ok,
            clamp_ok,
            variance_consistent,
            passed: positive_definite && support_ok && clamp_ok && variance_consistent && symmetric,
        }
    }

    /// Certificate, or `CertificationFailed` when the spectrum is not
    /// positive semi-definite.
    pub fn require_certified(&self) -> Result<KernelCertificate> {
        let cert = self.certify();
        if !cert.positive_definite {
            return Err(GmcError::CertificationFailed {
                what: format!("grid kernel at level {}", self.level),
                min_eigenvalue: cert.min_eigenvalue,
                max_eigenvalue: cert.max_eigenvalue,
            });
        }
        Ok(cert)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| GmcError::parse(path, e))?;
        let mut header: Vec<String> = (0..self.grid.dim()).map(|a| format!("i{a}")).collect();
        header.push("distance".into());
        header.push("value".into());
        w.write_record(&header).map_err(|e| GmcError::parse(path, e))?;
        let mut coords = vec![0; self.grid.dim()];
        for (i, v) in self.real_samples.iter().enumerate() {
            self.grid.coords(i, &mut coords);
            let mut row: Vec<String> = coords.iter().map(|c| c.to_string()).collect();
            row.push(format!("{:e}", self.grid.torus_distance(i)));
            row.push(format!("{v:e}"));
            w.write_record(&row).map_err(|e| GmcError::parse(path, e))?;
        }
        w.flush().map_err(|e| GmcError::io(path, e))
    }

    /// Read a kernel written by [`GridKernel::write_csv`]. The spectrum is
    /// recomputed from the samples and not clamped.
    pub fn read_csv(path: &Path, level: u32) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| GmcError::parse(path, e))?;
        let dim = r
            .headers()
            .map_err(|e| GmcError::parse(path, e))?
            .len()
            .saturating_sub(2);
        if dim == 0 {
            return Err(GmcError::parse(path, "expected offset, distance and value columns"));
        }
        let mut rows = Vec::new();
        for record in r.records() {
            let record = record.map_err(|e| GmcError::parse(path, e))?;
            let coords = (0..dim)
                .map(|a| record[a].trim().parse::<i64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| GmcError::parse(path, e))?;
            let value: f64 = record[dim + 1].trim().parse().map_err(|e| GmcError::parse(path, e))?;
            rows.push((coords, value));
        }
        let side = (rows.len() as f64).powf(1.0 / dim as f64).round() as usize;
        let grid = GridSpec::new(dim, side).map_err(|e| GmcError::parse(path, e))?;
        if grid.len() != rows.len() {
            return Err(GmcError::parse(
                path,
                format!("{} rows is not a {dim}-dimensional grid", rows.len()),
            ));
        }
        check_resolvable(level, grid)?;
        let mut samples = vec![0.0; grid.len()];
        for (coords, value) in rows {
            samples[grid.index_of(&coords)] = value;
        }
        Ok(Self::from_samples_unchecked(level, grid, samples))
    }
}

fn real_spectrum(grid: GridSpec, samples: &[f64]) -> Vec<f64> {
    FftNd::new(grid).forward_real(samples).iter().map(|z| z.re).collect()
}

/// `K_j` from `H_j` samples and the mollifier spectrum.
pub fn build_k_spectral(h_grid: &[f64], mollifier: &[f64], grid: GridSpec, level: u32) -> Result<GridKernel> {
    check_resolvable(level, grid)?;
    if h_grid.len() != grid.len() || mollifier.len() != grid.len() {
        return Err(GmcError::InvalidArgument("sample buffers do not match the grid".into()));
    }
    let raw: Vec<f64> = real_spectrum(grid, h_grid)
        .into_iter()
        .zip(mollifier)
        .map(|(h, w)| h * w)
        .collect();
    GridKernel::from_eigenvalues(level, grid, raw, KernelRoute::Spectral)
}

/// Everything needed to build kernels in one dimension.
#[derive(Debug)]
pub struct KernelFamily {
    dim: usize,
    phi: RadialProfile,
    q: RadialProfile,
    scale: ScaleProfile,
    g: RadialTable,
}

impl KernelFamily {
    pub fn new(dim: usize, oversample: usize) -> Result<Self> {
        let phi = build_profile_phi(dim, oversample)?;
        let q = build_profile_q(&phi)?;
        let scale = ScaleProfile::from_phi(&phi);
        let g = mollifier_autocorrelation(&q);
        Ok(Self { dim, phi, q, scale, g })
    }

    /// Process-wide family at the default oversampling.
    pub fn shared(dim: usize) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<KernelFamily>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(f) = cache.lock().unwrap().get(&dim) {
            return Ok(f.clone());
        }
        let family = Arc::new(Self::new(dim, DEFAULT_OVERSAMPLE)?);
        Ok(cache.lock().unwrap().entry(dim).or_insert(family).clone())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn phi(&self) -> &RadialProfile {
        &self.phi
    }

    pub fn q(&self) -> &RadialProfile {
        &self.q
    }

    pub fn scale(&self) -> &ScaleProfile {
        &self.scale
    }

    /// `G = Q * Q`.
    pub fn mollifier_autocorrelation(&self) -> &RadialTable {
        &self.g
    }

    fn check_grid(&self, grid: GridSpec) -> Result<()> {
        if grid.dim() != self.dim {
            return Err(GmcError::InvalidArgument(format!(
                "grid dimension {} does not match kernel dimension {}",
                grid.dim(),
                self.dim
            )));
        }
        Ok(())
    }

    /// The continuous kernel `k_j(r)` at distance `r` (no periodization).
    pub fn continuous_kernel(&self, level: u32, r: f64) -> f64 {
        let eps = epsilon(level);
        let scale = 2f64.powi(level as i32);
        let reach = scale.recip();
        let lo = ((r - reach) / eps).max(-2.0);
        let hi = ((r + reach) / eps).min(2.0);
        if hi <= lo {
            return 0.0;
        }
        let mut cuts = vec![lo];
        for c in [0.0, r / eps] {
            if c > lo && c < hi {
                cuts.push(c);
            }
        }
        cuts.push(hi);
        cuts.sort_by(f64::total_cmp);
        let outer = gauss_legendre(48);
        let inner = gauss_legendre(48);
        let dim = self.dim;
        let mut total = 0.0;
        for w in cuts.windows(2) {
            total += outer.integrate(w[0], w[1], |z| {
                let dx = r - eps * z;
                if dim == 1 {
                    return self.scale.eval(scale * dx.abs()) * self.g.eval(z.abs());
                }
                let top_g = (4.0 - z * z).max(0.0).sqrt();
                let top_l = (reach * reach - dx * dx).max(0.0).sqrt() / eps;
                let top = top_g.min(top_l);
                inner.integrate(0.0, top, |rho| {
                    let s = (dx * dx + eps * eps * rho * rho).sqrt();
                    self.scale.eval(scale * s) * self.g.eval((z * z + rho * rho).sqrt()) * rho.powi(dim as i32 - 2)
                })
            });
        }
        if dim == 1 {
            total
        } else {
            total * sphere_area(dim - 2)
        }
    }

    /// Route used by [`KernelFamily::kernel`].
    pub fn route_for(&self, level: u32, grid: GridSpec) -> KernelRoute {
        let edge = self.q.fourier(epsilon(level) * grid.side() as f64 / 2.0).powi(2);
        if edge <= SPECTRAL_EDGE || support_radius(level) > 0.5 {
            KernelRoute::Spectral
        } else {
            KernelRoute::Exact
        }
    }

    pub fn kernel(&self, level: u32, grid: GridSpec) -> Result<GridKernel> {
        self.check_grid(grid)?;
        check_resolvable(level, grid)?;
        self.kernel_via(level, grid, self.route_for(level, grid))
    }

    pub fn kernel_via(&self, level: u32, grid: GridSpec, route: KernelRoute) -> Result<GridKernel> {
        self.check_grid(grid)?;
        check_resolvable(level, grid)?;
        match route {
            KernelRoute::Spectral | KernelRoute::Loaded => {
                let h = build_h_grid(&self.scale, level, grid)?;
                let w = mollifier_spectrum(&self.q, level, grid);
                build_k_spectral(&h, &w, grid, level)
            }
            KernelRoute::Exact => self.build_k_exact(level, grid),
        }
    }

    /// Exact samples of `k_j`; requires the support to fit in `[-1/2, 1/2)^d`.
    pub fn build_k_exact(&self, level: u32, grid: GridSpec) -> Result<GridKernel> {
        self.check_grid(grid)?;
        check_resolvable(level, grid)?;
        let radius = support_radius(level);
        if radius > 0.5 {
            return Err(GmcError::InvalidArgument(format!(
                "support radius {radius} of level {level} wraps around the torus"
            )));
        }
        let h = grid.spacing();
        let samples = radial_fill(grid, radius / h, |cells| self.continuous_kernel(level, cells * h));
        GridKernel::from_samples(level, grid, samples, KernelRoute::Exact)
    }

    /// `K_1, ..., K_levels` on one grid.
    pub fn ladder(&self, grid: GridSpec, levels: u32) -> Result<Vec<GridKernel>> {
        (1..=levels).into_par_iter().map(|j| self.kernel(j, grid)).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LogSumRow {
    pub a: u32,
    pub increment: f64,
    pub deviation: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LogSumReport {
    pub levels: u32,
    pub tolerance: f64,
    pub partial_sums: Vec<(u32, f64)>,
    pub rows: Vec<LogSumRow>,
    pub passed: bool,
}

/// With `S(a) = sum_j K_j(2^-a e_1)`, compare `S(a+1) - S(a)` with `log 2`
/// for every `a` in `range`.
pub fn kernel_log_sum_check(
    kernels: &[GridKernel],
    range: RangeInclusive<u32>,
    tolerance: f64,
) -> Result<LogSumReport> {
    let first = kernels
        .first()
        .ok_or_else(|| GmcError::InvalidArgument("no kernels".into()))?;
    let grid = first.grid;
    for (i, k) in kernels.iter().enumerate() {
        let expected = i as u32 + 1;
        if k.level != expected {
            return Err(GmcError::LevelMismatch { expected, got: k.level });
        }
        if k.grid != grid {
            return Err(GmcError::InvalidArgument("kernels live on different grids".into()));
        }
    }
    if *range.end() >= grid.log2_side() {
        return Err(GmcError::InvalidArgument(format!(
            "offset 2^-{} is below the grid spacing",
            range.end() + 1
        )));
    }
    let partial = |a: u32| {
        let mut coords = vec![0; grid.dim()];
        coords[0] = (grid.side() >> a) as i64;
        let idx = grid.index_of(&coords);
        kernels.iter().map(|k| k.real_samples[idx]).sum::<f64>()
    };
    let partial_sums: Vec<(u32, f64)> = (*range.start()..=range.end() + 1).map(|a| (a, partial(a))).collect();
    let rows: Vec<LogSumRow> = partial_sums
        .windows(2)
        .map(|w| {
            let increment = w[1].1 - w[0].1;
            let deviation = increment - std::f64::consts::LN_2;
            LogSumRow {
                a: w[0].0,
                increment,
                deviation,
                passed: deviation.abs() <= tolerance,
            }
        })
        .collect();
    Ok(LogSumReport {
        levels: kernels.len() as u32,
        tolerance,
        passed: rows.iter().all(|r| r.passed),
        partial_sums,
        rows,
    })
}

pub fn write_certificates(path: &Path, certs: &[KernelCertificate]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| GmcError::io(path, e))?;
    let body = serde_json::to_string_pretty(certs).map_err(|e| GmcError::parse(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| GmcError::io(path, e))
}
