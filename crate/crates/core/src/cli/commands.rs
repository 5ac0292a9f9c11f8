//! Subcommand bodies. Each returns `Ok(true)` when every check it runs
//! passes.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    derivative_moment_ratios, dimension_branch, fl_window, predicted_dimension, zeta, zeta_argmax, DerivativeReport,
    ShellMode,
};
use crate::error::{GmcError, Result};
use crate::gmc::{spectrum_with, Cascade, CascadeConfig};
use crate::kernel::{
    kernel_log_sum_check, write_certificates, GridKernel, KernelCertificate, KernelFamily, LogSumReport,
    ProfileCertificate,
};
use crate::pou::{build_pou, decoupling_check, default_tracked, localized_coeffs, DecouplingRow, PouCertificate};
use crate::sampler::{sample_field_with, write_field_dump, SeedPath};

use super::config::{Overrides, RunConfig};
use super::pipeline::{analyze_ensemble, simulate_ensemble, Ensemble, Estimates, SCHEMA_VERSION};

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| GmcError::io("<stdout>", e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value).map_err(|e| GmcError::parse(path, e))?;
    std::fs::write(path, body + "\n").map_err(|e| GmcError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| GmcError::io(path, e))?;
    // check the schema before the shape, so old artifacts fail clearly
    let probe: serde_json::Value = serde_json::from_str(&text).map_err(|e| GmcError::parse(path, e))?;
    if let Some(found) = probe.get("schema_version").and_then(|v| v.as_u64()) {
        if found != u64::from(SCHEMA_VERSION) {
            return Err(GmcError::SchemaMismatch {
                found: found as u32,
                expected: SCHEMA_VERSION,
            });
        }
    }
    serde_json::from_value(probe).map_err(|e| GmcError::parse(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| GmcError::io(path, e))
}

pub fn predict(gamma: f64, dim: usize, out: &mut dyn Write) -> Result<bool> {
    let d = predicted_dimension(gamma, dim)?;
    let branch = dimension_branch(gamma, dim)?;
    let p_star = zeta_argmax(gamma, dim);
    emit(out, &format!("gamma = {gamma}, d = {dim}"))?;
    emit(out, &format!("D = {d:.6}  (branch {})", branch.label()))?;
    emit(
        out,
        &format!("p* = {p_star:.6}  zeta(p*) = {:.6}", zeta(p_star, gamma, dim)),
    )?;
    emit(out, "tau window (Fourier-Lebesgue exponent s = tau/2):")?;
    emit(out, "     tau        p        q    slack  feasible")?;
    for frac in [0.25, 0.5, 0.75, 0.95] {
        let w = fl_window(gamma, dim, frac * d, None, None)?;
        emit(
            out,
            &format!("{:8.4} {:8.4} {:8.0} {:8.4}  {}", w.tau, w.p, w.q, w.slack, w.feasible),
        )?;
    }
    Ok(true)
}

#[derive(Debug, Serialize)]
pub struct KernelCheckReport {
    pub schema_version: u32,
    pub code_version: String,
    pub dim: usize,
    pub side: usize,
    pub profiles: Vec<ProfileCertificate>,
    pub kernels: Vec<KernelCertificate>,
    /// Diagnostic only: see the log-sum notes in the README.
    pub log_sum: Option<LogSumReport>,
    /// Diagnostic only.
    pub derivative_moments: Option<DerivativeReport>,
    pub passed: bool,
    pub first_failure: Option<String>,
}

fn describe_failure(c: &KernelCertificate) -> Option<String> {
    let what = if !c.positive_definite {
        "positive definiteness"
    } else if !c.support_ok {
        "finite support"
    } else if !c.clamp_ok {
        "clamp budget"
    } else if !c.variance_consistent {
        "variance consistency"
    } else if !c.passed {
        "evenness"
    } else {
        return None;
    };
    Some(format!("level {}: {what}", c.level))
}

pub fn kernel_check(o: &Overrides, load: Option<PathBuf>, level: Option<u32>, out: &mut dyn Write) -> Result<bool> {
    if let Some(path) = load {
        let kernel = GridKernel::read_csv(&path, level.unwrap_or(1))?;
        let cert = kernel.require_certified()?;
        let report = KernelCheckReport {
            schema_version: SCHEMA_VERSION,
            code_version: crate::CODE_VERSION.to_string(),
            dim: kernel.grid.dim(),
            side: kernel.grid.side(),
            profiles: Vec::new(),
            passed: cert.passed,
            first_failure: describe_failure(&cert),
            kernels: vec![cert],
            log_sum: None,
            derivative_moments: None,
        };
        emit(out, &serde_json::to_string_pretty(&report).unwrap())?;
        return Ok(report.passed);
    }
    let cfg = RunConfig::resolve(o)?;
    let grid = cfg.grid()?;
    let family = KernelFamily::shared(cfg.dim)?;
    let kernels = family.ladder(grid, cfg.levels)?;
    let certs: Vec<KernelCertificate> = kernels.iter().map(|k| k.certify()).collect();
    let log_sum = (cfg.levels >= 3)
        .then(|| kernel_log_sum_check(&kernels, 2..=cfg.levels - 1, 0.02))
        .transpose()?;
    let derivative_moments = (!kernels.is_empty())
        .then(|| derivative_moment_ratios(&kernels, 3, 50.0))
        .transpose()?;
    let first_failure = certs.iter().find_map(describe_failure);
    let report = KernelCheckReport {
        schema_version: SCHEMA_VERSION,
        code_version: crate::CODE_VERSION.to_string(),
        dim: cfg.dim,
        side: grid.side(),
        profiles: vec![family.phi().certificate().clone(), family.q().certificate().clone()],
        passed: first_failure.is_none(),
        first_failure,
        kernels: certs,
        log_sum,
        derivative_moments,
    };
    if let Some(dir) = &o.out {
        create_dir(dir)?;
        for k in &kernels {
            k.write_csv(&dir.join(format!("kernel_{}.csv", k.level)))?;
        }
        write_certificates(&dir.join("kernels.json"), &report.kernels)?;
        write_json(&dir.join("kernel-check.json"), &report)?;
    }
    emit(out, &serde_json::to_string_pretty(&report).unwrap())?;
    if let Some(f) = &report.first_failure {
        eprintln!("kernel certificate failed: {f}");
    }
    Ok(report.passed)
}

pub const WELL_RESOLVED_CELLS: usize = 32;

#[derive(Debug, Serialize)]
pub struct PouCheckReport {
    pub schema_version: u32,
    pub code_version: String,
    pub dim: usize,
    pub side: usize,
    pub windows: Vec<PouCertificate>,
    /// `max/min` of the derivative ratio over well-resolved scales, per order.
    pub scaling_spread: Vec<(u32, f64)>,
    pub decoupling: Vec<DecouplingRow>,
    pub passed: bool,
    pub first_failure: Option<String>,
}

pub fn pou_check(o: &Overrides, out: &mut dyn Write) -> Result<bool> {
    let cfg = RunConfig::resolve(o)?;
    let grid = cfg.grid()?;
    let windows: Vec<PouCertificate> = (1..=grid.max_level())
        .map(|k| build_pou(k, grid).map(|p| p.certificate))
        .collect::<Result<_>>()?;
    // the stability verdict uses scales whose window spans >= 32 cells
    let resolved = |w: &&PouCertificate| grid.side() >> w.k >= WELL_RESOLVED_CELLS;
    let scaling_spread: Vec<(u32, f64)> = (1..=2)
        .map(|order| {
            let ratios: Vec<f64> = windows
                .iter()
                .filter(resolved)
                .map(|w| w.scaling[order as usize].ratio)
                .collect();
            let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
            (order, if ratios.is_empty() { 1.0 } else { hi / lo })
        })
        .collect();

    let levels = cfg.levels.min(3);
    let family = KernelFamily::shared(cfg.dim)?;
    let cascade = Cascade::new(
        CascadeConfig {
            grid,
            gamma: cfg.gamma,
            levels,
            seed: cfg.seed,
        },
        &family,
    )?;
    let tracked: Vec<Vec<i64>> = default_tracked(grid).into_iter().take(8).collect();
    let tau = cfg.tau()?;
    let mut decoupling = Vec::new();
    cascade.run_observed(0, |state, weight| {
        if let Some(w) = weight {
            let pou = build_pou(w.level, grid)?;
            let coeffs = localized_coeffs(state, w, &pou, tau, &tracked)?;
            decoupling.extend(decoupling_check(state, w, &coeffs, tau, &tracked)?);
        }
        Ok(())
    })?;

    let mut first_failure = windows
        .iter()
        .find(|w| !w.passed)
        .map(|w| format!("window k = {}: partition or support", w.k));
    if first_failure.is_none() {
        first_failure = scaling_spread
            .iter()
            .find(|(_, s)| *s > 1.1)
            .map(|(order, s)| format!("derivative scaling of order {order} varies by {s:.3}"));
    }
    if first_failure.is_none() {
        first_failure = decoupling
            .iter()
            .find(|r| r.relative_error > 1e-10)
            .map(|r| format!("decoupling at level {} n = {:?}", r.level, r.n));
    }
    let report = PouCheckReport {
        schema_version: SCHEMA_VERSION,
        code_version: crate::CODE_VERSION.to_string(),
        dim: cfg.dim,
        side: grid.side(),
        windows,
        scaling_spread,
        decoupling,
        passed: first_failure.is_none(),
        first_failure,
    };
    if let Some(dir) = &o.out {
        create_dir(dir)?;
        write_json(&dir.join("pou-check.json"), &report)?;
    }
    emit(out, &serde_json::to_string_pretty(&report).unwrap())?;
    if let Some(f) = &report.first_failure {
        eprintln!("window certificate failed: {f}");
    }
    Ok(report.passed)
}

#[derive(Debug, Serialize, Deserialize)]
struct ConfigEcho {
    schema_version: u32,
    code_version: String,
    config: RunConfig,
}

pub const ENSEMBLE_FILE: &str = "replicas.json";
pub const ESTIMATES_FILE: &str = "estimates.json";

pub fn simulate(o: &Overrides, dump_fields: bool, out: &mut dyn Write) -> Result<bool> {
    let cfg = RunConfig::resolve(o)?;
    let dir = o
        .out
        .clone()
        .ok_or_else(|| GmcError::InvalidArgument("simulate needs --out".into()))?;
    create_dir(&dir)?;
    let ensemble = simulate_ensemble(&cfg)?;
    write_json(
        &dir.join("config.json"),
        &ConfigEcho {
            schema_version: SCHEMA_VERSION,
            code_version: crate::CODE_VERSION.to_string(),
            config: cfg.clone(),
        },
    )?;
    write_certificates(&dir.join("kernels.json"), &ensemble.kernels)?;
    write_json(&dir.join(ENSEMBLE_FILE), &ensemble)?;

    // replica 0 is replayed for its spectrum and, optionally, its fields
    let grid = cfg.grid()?;
    let family = KernelFamily::shared(cfg.dim)?;
    let cascade = Cascade::new(
        CascadeConfig {
            grid,
            gamma: cfg.gamma,
            levels: cfg.levels,
            seed: cfg.seed,
        },
        &family,
    )?;
    let final_state = cascade.run_observed(0, |_, _| Ok(()))?;
    spectrum_with(&final_state, cascade.fft()).write_csv(&dir.join("spectrum_r0.csv"), false)?;
    if dump_fields {
        for kernel in cascade.kernels() {
            let field = sample_field_with(kernel, cascade.fft(), SeedPath::new(cfg.seed, 0, kernel.level));
            write_field_dump(&dir.join(format!("field_r0_j{}.bin", kernel.level)), &field)?;
        }
    }
    let mean_mass =
        ensemble.replicas.iter().map(|r| *r.masses.last().unwrap()).sum::<f64>() / ensemble.replicas.len() as f64;
    emit(
        out,
        &format!(
            "simulated {} replicas (d = {}, M = 2^{}, m = {}, gamma = {}) into {}; mean final mass {mean_mass:.4}",
            cfg.replicas,
            cfg.dim,
            cfg.grid_log2,
            cfg.levels,
            cfg.gamma,
            dir.display()
        ),
    )?;
    Ok(true)
}

pub fn analyze(dir: &Path, mode: Option<ShellMode>, shells: Option<(u32, u32)>, out: &mut dyn Write) -> Result<bool> {
    let ensemble: Ensemble = read_json(&dir.join(ENSEMBLE_FILE))?;
    let mode = mode.unwrap_or(ensemble.config.mode);
    let est = analyze_ensemble(&ensemble, mode, shells.or(ensemble.config.shells))?;
    write_json(&dir.join(ESTIMATES_FILE), &est)?;

    let path = dir.join("regression.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| GmcError::parse(&path, e))?;
    w.write_record(["method", "k", "log2_statistic"])
        .map_err(|e| GmcError::parse(&path, e))?;
    for e in [&est.fourier, &est.fourier_cross_check, &est.correlation] {
        for (k, y) in &e.points {
            w.write_record([format!("{:?}", e.method), format!("{k}"), format!("{y:e}")])
                .map_err(|e| GmcError::parse(&path, e))?;
        }
    }
    w.flush().map_err(|e| GmcError::io(&path, e))?;

    for level in 1..=ensemble.config.levels {
        let dump = dir.join(format!("field_r0_j{level}.bin"));
        if dump.exists() {
            let (_, j, values) = crate::sampler::read_field_dump(&dump)?;
            let var = values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64;
            let sigma2 = ensemble.kernels[j as usize - 1].variance;
            emit(
                out,
                &format!("field dump j = {j}: grid variance {var:.4} (kernel {sigma2:.4})"),
            )?;
        }
    }
    emit(out, &summary_line(&est))?;
    Ok(true)
}

fn summary_line(e: &Estimates) -> String {
    format!(
        "d = {} gamma = {}: D = {:.4}, dim_F = {:.4} +- {:.4} ({:?}), dim_2 = {:.4} +- {:.4}, mass {:.4} +- {:.4}, FL trend {}{}",
        e.config.dim,
        e.config.gamma,
        e.predicted,
        e.fourier.dimension,
        e.fourier.stderr,
        e.fourier.method,
        e.correlation.dimension,
        e.correlation.stderr,
        e.mass.mean,
        e.mass.stderr,
        if e.fl_trend.bounded { "bounded" } else { "growing" },
        if e.trend_only { " [trend-only]" } else { "" },
    )
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportRow {
    pub dir: PathBuf,
    pub dim: usize,
    pub gamma: f64,
    pub predicted: f64,
    pub fourier: f64,
    pub correlation: f64,
    pub trend_only: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    /// Estimated Fourier dimension is non-increasing in gamma within each
    /// dimension.
    pub monotone: bool,
}

pub fn report(dirs: &[PathBuf], path: Option<&Path>, out: &mut dyn Write) -> Result<bool> {
    let mut rows = Vec::new();
    for dir in dirs {
        let e: Estimates = read_json(&dir.join(ESTIMATES_FILE))?;
        rows.push(ReportRow {
            dir: dir.clone(),
            dim: e.config.dim,
            gamma: e.config.gamma,
            predicted: e.predicted,
            fourier: e.fourier.dimension,
            correlation: e.correlation.dimension,
            trend_only: e.trend_only,
        });
    }
    rows.sort_by(|a, b| a.dim.cmp(&b.dim).then(a.gamma.total_cmp(&b.gamma)));
    let monotone = rows
        .windows(2)
        .filter(|w| w[0].dim == w[1].dim)
        .all(|w| w[1].fourier <= w[0].fourier);
    emit(out, "  d    gamma  predicted    dim_F    dim_2")?;
    for r in &rows {
        emit(
            out,
            &format!(
                "{:3} {:8.3} {:10.4} {:8.4} {:8.4}{}",
                r.dim,
                r.gamma,
                r.predicted,
                r.fourier,
                r.correlation,
                if r.trend_only { "  trend-only" } else { "" }
            ),
        )?;
    }
    emit(out, &format!("monotone in gamma: {monotone}"))?;
    let report = Report { rows, monotone };
    if let Some(p) = path {
        write_json(p, &report)?;
    }
    Ok(report.monotone)
}
