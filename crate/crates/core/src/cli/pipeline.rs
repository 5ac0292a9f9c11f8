//! In-memory ensemble simulation and analysis behind `simulate` and
//! `analyze`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::cube_energy;
use crate::analysis::{
    dimension_branch, estimate_correlation_dim_from_energies, estimate_fourier_dim, fl_moment_trend, fl_norm,
    fl_window, linear_fit, predicted_dimension, shell_stats, Branch, DimEstimate, FlWindow, ShellMode, ShellStats,
    TrendReport,
};
use crate::error::{GmcError, Result};
use crate::gmc::{spectrum_with, Cascade, CascadeConfig};
use crate::kernel::{KernelCertificate, KernelFamily};
use crate::pou::{build_pou, decoupling_check, localized_coeffs, shell_tracked, PouFamily};

use super::config::RunConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicaSummary {
    pub replica: u64,
    /// Total mass at levels `0..=m`.
    pub masses: Vec<f64>,
    /// Fourier-Lebesgue norm at levels `0..=m`.
    pub fl_norms: Vec<f64>,
    /// `sum_I sum_n |D_I(n)|^2` over the shell-`k` tracked frequencies, for
    /// `k = 1..=m`.
    pub localized_energy: Vec<f64>,
    /// Worst decoupling error over all levels, when checked.
    pub decoupling_error: Option<f64>,
    /// Shell statistics of the final spectrum.
    pub shells: ShellStats,
    /// `(k, sum_I mu(I)^2)` of the final measure scaled to unit mass.
    pub cube_energies: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ensemble {
    pub schema_version: u32,
    pub code_version: String,
    pub config: RunConfig,
    pub window: FlWindow,
    pub kernels: Vec<KernelCertificate>,
    pub replicas: Vec<ReplicaSummary>,
}

struct Windows {
    pous: Vec<PouFamily>,
    tracked: Vec<Vec<Vec<i64>>>,
}

fn run_replica(
    cascade: &Cascade,
    windows: &Windows,
    window: &FlWindow,
    replica: u64,
    check_decoupling: bool,
) -> Result<ReplicaSummary> {
    let grid = cascade.config().grid;
    let mut summary = ReplicaSummary {
        replica,
        masses: Vec::new(),
        fl_norms: Vec::new(),
        localized_energy: Vec::new(),
        decoupling_error: check_decoupling.then_some(0.0),
        shells: ShellStats { shells: Vec::new() },
        cube_energies: Vec::new(),
    };
    cascade.run_observed(replica, |state, weight| {
        let spec = spectrum_with(state, cascade.fft());
        summary.masses.push(state.total_mass);
        summary.fl_norms.push(fl_norm(&spec, window.s, window.q));
        match weight {
            Some(w) => {
                let k = state.level as usize + 1;
                let tracked = &windows.tracked[k - 1];
                let coeffs = localized_coeffs(state, w, &windows.pous[k - 1], window.tau, tracked)?;
                let energy = coeffs
                    .iter()
                    .flat_map(|c| c.values.iter())
                    .map(|z| z.norm_sqr())
                    .sum::<f64>();
                summary.localized_energy.push(energy);
                if let Some(worst) = summary.decoupling_error.as_mut() {
                    for row in decoupling_check(state, w, &coeffs, window.tau, tracked)? {
                        *worst = worst.max(row.relative_error);
                    }
                }
            }
            None => {
                summary.shells = shell_stats(&spec);
                summary.cube_energies = (0..=grid.log2_side())
                    .map(|k| Ok((k, cube_energy(state, k)?)))
                    .collect::<Result<_>>()?;
            }
        }
        Ok(())
    })?;
    Ok(summary)
}

/// Run every replica of `config` and summarize it.
pub fn simulate_ensemble(config: &RunConfig) -> Result<Ensemble> {
    config.validate()?;
    let grid = config.grid()?;
    let family = KernelFamily::shared(config.dim)?;
    let cascade = Cascade::new(
        CascadeConfig {
            grid,
            gamma: config.gamma,
            levels: config.levels,
            seed: config.seed,
        },
        &family,
    )?;
    let kernels = cascade.kernels().iter().map(|k| k.certify()).collect();
    let window = fl_window(config.gamma, config.dim, config.tau()?, config.p, config.q)?;
    let windows = Windows {
        pous: (1..=config.levels).map(|k| build_pou(k, grid)).collect::<Result<_>>()?,
        tracked: (1..=config.levels).map(|k| shell_tracked(grid, k)).collect(),
    };
    let replicas = (0..config.replicas)
        .into_par_iter()
        .map(|r| run_replica(&cascade, &windows, &window, r, r == 0))
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble {
        schema_version: SCHEMA_VERSION,
        code_version: crate::CODE_VERSION.to_string(),
        config: config.clone(),
        window,
        kernels,
        replicas,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MassCheck {
    pub mean: f64,
    pub stderr: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalizedTrend {
    pub level_means: Vec<(u32, f64)>,
    pub slope: f64,
    /// `-(d - tau - gamma^2)`.
    pub expected_slope: f64,
    pub decreasing: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verdicts {
    pub tolerance: Option<f64>,
    pub fourier_within: Option<bool>,
    pub correlation_within: Option<bool>,
    pub gap_within: bool,
    pub gap_within_stderr: bool,
    pub mass_martingale: bool,
    pub fl_bounded: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Estimates {
    pub schema_version: u32,
    pub code_version: String,
    pub config: RunConfig,
    pub trend_only: bool,
    pub predicted: f64,
    pub branch: Branch,
    pub fourier: DimEstimate,
    pub fourier_cross_check: DimEstimate,
    pub correlation: DimEstimate,
    pub gap: f64,
    pub mass: MassCheck,
    pub window: FlWindow,
    pub fl_trend: TrendReport,
    pub localized: LocalizedTrend,
    pub decoupling_error: Option<f64>,
    pub verdicts: Verdicts,
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Dimension tolerance: 0.2 in d = 1, 0.25 in d = 2, none for trend-only
/// runs.
pub fn dimension_tolerance(dim: usize) -> Option<f64> {
    match dim {
        1 => Some(0.2),
        2 => Some(0.25),
        _ => None,
    }
}

pub fn analyze_ensemble(ensemble: &Ensemble, mode: ShellMode, shells: Option<(u32, u32)>) -> Result<Estimates> {
    if ensemble.schema_version != SCHEMA_VERSION {
        return Err(GmcError::SchemaMismatch {
            found: ensemble.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    let cfg = &ensemble.config;
    let reps = &ensemble.replicas;
    if reps.is_empty() {
        return Err(GmcError::InvalidArgument("ensemble has no replicas".into()));
    }
    let predicted = predicted_dimension(cfg.gamma, cfg.dim)?;
    let branch = dimension_branch(cfg.gamma, cfg.dim)?;
    let shell_range = shells.map(|(a, b)| a..=b);
    let stats: Vec<ShellStats> = reps.iter().map(|r| r.shells.clone()).collect();
    let fourier = estimate_fourier_dim(&stats, cfg.dim, mode, shell_range.clone())?;
    let other = match mode {
        ShellMode::Sup => ShellMode::Mean,
        ShellMode::Mean => ShellMode::Sup,
    };
    let fourier_cross_check = estimate_fourier_dim(&stats, cfg.dim, other, shell_range)?;
    let energies: Vec<Vec<(u32, f64)>> = reps.iter().map(|r| r.cube_energies.clone()).collect();
    let correlation = estimate_correlation_dim_from_energies(&energies, cfg.dim, 1..=cfg.grid_log2.saturating_sub(3))?;
    let gap = (fourier.dimension - correlation.dimension).abs();
    let combined = fourier.stderr.hypot(correlation.stderr);

    let finals: Vec<f64> = reps.iter().map(|r| *r.masses.last().unwrap()).collect();
    let (mean, stderr) = mean_and_stderr(&finals);
    let mass = MassCheck {
        mean,
        stderr,
        passed: (mean - 1.0).abs() <= 4.0 * stderr,
    };

    let per_level: Vec<(u32, Vec<f64>)> = (1..=cfg.levels)
        .map(|m| (m, reps.iter().map(|r| r.fl_norms[m as usize]).collect()))
        .collect();
    let fl_trend = fl_moment_trend(&per_level, ensemble.window.p)?;

    let level_means: Vec<(u32, f64)> = (1..=cfg.levels)
        .map(|k| {
            let v: Vec<f64> = reps.iter().map(|r| r.localized_energy[k as usize - 1]).collect();
            (k, mean_and_stderr(&v).0)
        })
        .collect();
    let points: Vec<(f64, f64)> = level_means
        .iter()
        .filter(|(_, v)| *v > 0.0)
        .map(|&(k, v)| (k as f64, v.log2()))
        .collect();
    let slope = if points.len() >= 2 {
        linear_fit(&points).slope
    } else {
        f64::NAN
    };
    let expected_slope = -(cfg.dim as f64 - ensemble.window.tau - cfg.gamma * cfg.gamma);
    let localized = LocalizedTrend {
        level_means,
        slope,
        expected_slope,
        decreasing: slope < 0.0,
    };

    let decoupling_error = reps.iter().filter_map(|r| r.decoupling_error).reduce(f64::max);
    let tolerance = if cfg.trend_only() {
        None
    } else {
        dimension_tolerance(cfg.dim)
    };
    let verdicts = Verdicts {
        tolerance,
        fourier_within: tolerance.map(|t| (fourier.dimension - predicted).abs() <= t),
        correlation_within: tolerance.map(|t| (correlation.dimension - predicted).abs() <= t),
        gap_within: gap <= 0.15,
        gap_within_stderr: gap <= 3.0 * combined + 0.15,
        mass_martingale: mass.passed,
        fl_bounded: fl_trend.bounded,
    };
    Ok(Estimates {
        schema_version: SCHEMA_VERSION,
        code_version: crate::CODE_VERSION.to_string(),
        config: cfg.clone(),
        trend_only: cfg.trend_only(),
        predicted,
        branch,
        fourier,
        fourier_cross_check,
        correlation,
        gap,
        mass,
        window: ensemble.window,
        fl_trend,
        localized,
        decoupling_error,
        verdicts,
    })
}
