//! Predicted and estimated dimensions, Fourier-Lebesgue norms and the
//! derivative-moment diagnostic.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{GmcError, Result};
use crate::gmc::{MeasureState, SpectrumTable};
use crate::kernel::GridKernel;
use crate::sampler::{check_gamma, critical_gamma, derivative_second_moment};

/// Coefficients below this power are treated as censored.
pub const CENSOR_FLOOR: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `d - gamma^2`, for `gamma < sqrt(2d)/2`.
    Quadratic,
    /// `(sqrt(2d) - gamma)^2` above the crossover.
    Square,
}

impl Branch {
    pub fn label(self) -> &'static str {
        match self {
            Branch::Quadratic => "d - gamma^2",
            Branch::Square => "(sqrt(2d) - gamma)^2",
        }
    }
}

pub fn dimension_branch(gamma: f64, dim: usize) -> Result<Branch> {
    check_gamma(gamma, dim)?;
    Ok(if gamma < critical_gamma(dim) / 2.0 {
        Branch::Quadratic
    } else {
        Branch::Square
    })
}

/// `D_{gamma,d}`.
pub fn predicted_dimension(gamma: f64, dim: usize) -> Result<f64> {
    Ok(match dimension_branch(gamma, dim)? {
        Branch::Quadratic => dim as f64 - gamma * gamma,
        Branch::Square => (critical_gamma(dim) - gamma).powi(2),
    })
}

/// `zeta(p) = 2d + gamma^2 - (2d/p + p gamma^2)`.
pub fn zeta(p: f64, gamma: f64, dim: usize) -> f64 {
    let d = dim as f64;
    2.0 * d + gamma * gamma - (2.0 * d / p + p * gamma * gamma)
}

/// Maximizer of `zeta` over `[1, 2]`: `min(2, sqrt(2d)/gamma)`.
pub fn zeta_argmax(gamma: f64, dim: usize) -> f64 {
    (critical_gamma(dim) / gamma).clamp(1.0, 2.0)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Shell {
    pub k: u32,
    pub sup: f64,
    pub mean: f64,
    pub count: usize,
}

/// Dyadic shells `2^k <= |n| < 2^(k+1)` lying entirely below the aliasing
/// guard. `n = 0` belongs to no shell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShellStats {
    pub shells: Vec<Shell>,
}

pub fn shell_stats(spec: &SpectrumTable) -> ShellStats {
    let grid = spec.grid;
    let guard = (grid.side() / 4) as f64;
    let count = (0..).take_while(|&k| 2f64.powi(k + 1) <= guard).count();
    let mut shells: Vec<Shell> = (0..count as u32)
        .map(|k| Shell {
            k,
            sup: 0.0,
            mean: 0.0,
            count: 0,
        })
        .collect();
    for i in 1..grid.len() {
        let r2 = grid.dist2_cells(i);
        // 4^k <= |n|^2 < 4^(k+1)
        let k = (r2.ilog2() / 2) as usize;
        if let Some(shell) = shells.get_mut(k) {
            let power = spec.power(i);
            shell.sup = shell.sup.max(power);
            shell.mean += power;
            shell.count += 1;
        }
    }
    for shell in &mut shells {
        if shell.count > 0 {
            shell.mean /= shell.count as f64;
        }
    }
    ShellStats { shells }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FourierSup,
    FourierMean,
    Correlation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShellMode {
    Sup,
    Mean,
}

impl std::str::FromStr for ShellMode {
    type Err = GmcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sup" => Ok(ShellMode::Sup),
            "mean" => Ok(ShellMode::Mean),
            other => Err(GmcError::InvalidArgument(format!(
                "mode must be sup or mean, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

pub fn linear_fit(points: &[(f64, f64)]) -> LinearFit {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let slope_stderr = if points.len() > 2 && sxx > 0.0 {
        let rss: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    LinearFit {
        slope,
        intercept,
        slope_stderr,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DimEstimate {
    pub method: Method,
    pub slope: f64,
    pub intercept: f64,
    pub dimension: f64,
    pub stderr: f64,
    pub range: (u32, u32),
    pub replicas: usize,
    /// Regression points `(k, log2 statistic)`.
    pub points: Vec<(f64, f64)>,
}

fn finish_estimate(method: Method, points: Vec<(f64, f64)>, dim: usize, replicas: usize) -> Result<DimEstimate> {
    if points.len() < 3 {
        return Err(GmcError::InsufficientShells { usable: points.len() });
    }
    let fit = linear_fit(&points);
    Ok(DimEstimate {
        method,
        slope: fit.slope,
        intercept: fit.intercept,
        dimension: (-fit.slope).clamp(0.0, dim as f64),
        stderr: fit.slope_stderr,
        range: (points[0].0 as u32, points[points.len() - 1].0 as u32),
        replicas,
        points,
    })
}

/// Regress `log2` of the ensemble-mean shell statistic against `k`. By
/// default the two lowest shells are dropped.
pub fn estimate_fourier_dim(
    ensemble: &[ShellStats],
    dim: usize,
    mode: ShellMode,
    shells: Option<RangeInclusive<u32>>,
) -> Result<DimEstimate> {
    let first = ensemble.first().ok_or(GmcError::InsufficientShells { usable: 0 })?;
    let range = shells.unwrap_or(2..=u32::MAX);
    let mut points = Vec::new();
    for (pos, shell) in first.shells.iter().enumerate() {
        if !range.contains(&shell.k) {
            continue;
        }
        let mean = ensemble
            .iter()
            .map(|s| match mode {
                ShellMode::Sup => s.shells[pos].sup,
                ShellMode::Mean => s.shells[pos].mean,
            })
            .sum::<f64>()
            / ensemble.len() as f64;
        if mean >= CENSOR_FLOOR {
            points.push((shell.k as f64, mean.log2()));
        }
    }
    let method = match mode {
        ShellMode::Sup => Method::FourierSup,
        ShellMode::Mean => Method::FourierMean,
    };
    finish_estimate(method, points, dim, ensemble.len())
}

/// Default cube scales for the energy regression: `2^-k >= 8/M`.
pub fn default_cube_range(states: &[MeasureState]) -> RangeInclusive<u32> {
    let log2 = states.first().map_or(3, |s| s.grid.log2_side());
    1..=log2.saturating_sub(3)
}

/// `sum_I mu(I)^2` over dyadic cubes of side `2^-k`, for `mu` scaled to
/// unit mass.
pub fn cube_energy(state: &MeasureState, k: u32) -> Result<f64> {
    let mass = state.total_mass;
    Ok(state.cube_masses(k)?.iter().map(|m| (m / mass).powi(2)).sum())
}

/// Regress `log2` of the ensemble-mean cube energy against `-k`.
pub fn estimate_correlation_dim(states: &[MeasureState], range: Option<RangeInclusive<u32>>) -> Result<DimEstimate> {
    let first = states.first().ok_or(GmcError::InsufficientShells { usable: 0 })?;
    let range = range.unwrap_or_else(|| default_cube_range(states));
    let per_replica = states
        .iter()
        .map(|s| {
            range
                .clone()
                .map(|k| Ok((k, cube_energy(s, k)?)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    estimate_correlation_dim_from_energies(&per_replica, first.grid.dim(), range)
}

/// Same regression from precomputed `(k, energy)` lists, one per replica.
pub fn estimate_correlation_dim_from_energies(
    per_replica: &[Vec<(u32, f64)>],
    dim: usize,
    range: RangeInclusive<u32>,
) -> Result<DimEstimate> {
    let first = per_replica.first().ok_or(GmcError::InsufficientShells { usable: 0 })?;
    let mut points = Vec::new();
    for (pos, &(k, _)) in first.iter().enumerate() {
        if !range.contains(&k) {
            continue;
        }
        let total: f64 = per_replica.iter().map(|r| r[pos].1).sum();
        points.push((k as f64, (total / per_replica.len() as f64).log2()));
    }
    finish_estimate(Method::Correlation, points, dim, per_replica.len())
}

/// `(sum ⟨n⟩^(sq) |mu^(n)|^q)^(1/q)` over frequencies below the aliasing
/// guard, `⟨n⟩ = (1 + |n|^2)^(1/2)`.
pub fn fl_norm(spec: &SpectrumTable, s: f64, q: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..spec.coefficients.len() {
        if spec.aliasing_suspect(i) {
            continue;
        }
        let bracket = 1.0 + spec.grid.dist2_cells(i) as f64;
        total += bracket.powf(0.5 * s * q) * spec.coefficients[i].norm().powf(q);
    }
    total.powf(q.recip())
}

/// Exponents for the Fourier-Lebesgue moment check.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FlWindow {
    pub tau: f64,
    pub s: f64,
    pub p: f64,
    pub q: f64,
    /// `(p-1)d - tau p/2 - p(p-1) gamma^2/2`; `d p/q` must stay below it.
    pub slack: f64,
    pub feasible: bool,
}

/// `p = min(2, sqrt(2d)/gamma) - 0.05` and the smallest `q >= max(2,
/// ceil(2/slack))` with `d p/q < slack`, unless overridden.
pub fn fl_window(gamma: f64, dim: usize, tau: f64, p: Option<f64>, q: Option<f64>) -> Result<FlWindow> {
    check_gamma(gamma, dim)?;
    let d = dim as f64;
    let p = p.unwrap_or(zeta_argmax(gamma, dim) - 0.05);
    if p < 1.0 {
        return Err(GmcError::InvalidArgument(format!("p = {p} must be at least 1")));
    }
    let slack = (p - 1.0) * d - tau * p / 2.0 - p * (p - 1.0) * gamma * gamma / 2.0;
    let q = match q {
        Some(q) => q,
        None if slack > 0.0 => {
            let mut q = (2.0 / slack).ceil().max(2.0);
            while d * p / q >= slack {
                q += 1.0;
            }
            q
        }
        None => 2.0,
    };
    if q < 1.0 {
        return Err(GmcError::InvalidArgument(format!("q = {q} must be at least 1")));
    }
    Ok(FlWindow {
        tau,
        s: tau / 2.0,
        p,
        q,
        slack,
        feasible: slack > 0.0 && d * p / q < slack,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendLevel {
    pub level: u32,
    pub mean: f64,
    pub replicas: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendReport {
    pub p: f64,
    pub levels: Vec<TrendLevel>,
    pub early_max: f64,
    pub late_mean: f64,
    pub bounded: bool,
}

/// Per-level means of `norm^p`; bounded when the mean over the last quarter
/// of levels is at most twice the largest value of the trendline through
/// the first three levels.
pub fn fl_moment_trend(per_level: &[(u32, Vec<f64>)], p: f64) -> Result<TrendReport> {
    if per_level.is_empty() {
        return Err(GmcError::InvalidArgument("no levels".into()));
    }
    let levels: Vec<TrendLevel> = per_level
        .iter()
        .map(|(level, norms)| TrendLevel {
            level: *level,
            mean: norms.iter().map(|v| v.powf(p)).sum::<f64>() / norms.len() as f64,
            replicas: norms.len(),
        })
        .collect();
    let early: Vec<(f64, f64)> = levels.iter().take(3).map(|l| (l.level as f64, l.mean)).collect();
    let early_max = if early.len() >= 2 {
        let fit = linear_fit(&early);
        early
            .iter()
            .map(|&(x, _)| fit.intercept + fit.slope * x)
            .fold(f64::NEG_INFINITY, f64::max)
    } else {
        early[0].1
    };
    let quarter = levels.len().div_ceil(4);
    let late = &levels[levels.len() - quarter..];
    let late_mean = late.iter().map(|l| l.mean).sum::<f64>() / late.len() as f64;
    Ok(TrendReport {
        p,
        bounded: late_mean <= 2.0 * early_max,
        levels,
        early_max,
        late_mean,
    })
}

/// All multi-indices of length `dim` with `|alpha| <= order`.
pub fn multi_indices(dim: usize, order: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<u32>| {
                let used: u32 = prefix.iter().sum();
                (0..=order - used).map(move |a| {
                    let mut next = prefix.clone();
                    next.push(a);
                    next
                })
            })
            .collect();
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DerivativeRow {
    pub level: u32,
    pub alpha: Vec<u32>,
    pub moment: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DerivativeReport {
    pub rows: Vec<DerivativeRow>,
    pub min_level: u32,
    /// Worst `max/min` of the ratio across levels, over all multi-indices.
    pub spread: f64,
    pub bound: f64,
    pub passed: bool,
}

/// `E|D^alpha psi_j|^2 / (j^(4|alpha|) 2^(2j|alpha|))` for every kernel and
/// `|alpha| <= d`, with the spread across levels `j >= min_level`.
pub fn derivative_moment_ratios(kernels: &[GridKernel], min_level: u32, bound: f64) -> Result<DerivativeReport> {
    let dim = kernels
        .first()
        .ok_or_else(|| GmcError::InvalidArgument("no kernels".into()))?
        .grid
        .dim();
    let alphas = multi_indices(dim, dim as u32);
    let mut rows = Vec::new();
    for kernel in kernels {
        let j = kernel.level as f64;
        for alpha in &alphas {
            let order = alpha.iter().sum::<u32>() as i32;
            let moment = derivative_second_moment(kernel, alpha)?;
            let ratio = moment / (j.powi(4 * order) * 2f64.powi(2 * kernel.level as i32 * order));
            rows.push(DerivativeRow {
                level: kernel.level,
                alpha: alpha.clone(),
                moment,
                ratio,
            });
        }
    }
    let spread = alphas
        .iter()
        .map(|alpha| {
            let ratios: Vec<f64> = rows
                .iter()
                .filter(|r| &r.alpha == alpha && r.level >= min_level)
                .map(|r| r.ratio)
                .collect();
            let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
            hi / lo
        })
        .fold(1.0, f64::max);
    Ok(DerivativeReport {
        rows,
        min_level,
        spread,
        bound,
        passed: spread <= bound,
    })
}
