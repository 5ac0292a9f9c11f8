//! Run configuration: built-in defaults, then a `key=value` file, then flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{predicted_dimension, ShellMode};
use crate::error::{GmcError, Result};
use crate::grid::GridSpec;
use crate::sampler::check_gamma;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dim: usize,
    pub gamma: f64,
    pub grid_log2: u32,
    pub levels: u32,
    pub replicas: u64,
    pub seed: u64,
    pub tau: Option<f64>,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub shells: Option<(u32, u32)>,
    pub mode: ShellMode,
}

/// Optional values from a config file or the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dim: Option<usize>,
    pub gamma: Option<f64>,
    pub grid_log2: Option<u32>,
    pub levels: Option<u32>,
    pub replicas: Option<u64>,
    pub seed: Option<u64>,
    pub tau: Option<f64>,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub shells: Option<(u32, u32)>,
    pub mode: Option<ShellMode>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    /// Values set in `other` win.
    pub fn merge(self, other: Overrides) -> Overrides {
        Overrides {
            dim: other.dim.or(self.dim),
            gamma: other.gamma.or(self.gamma),
            grid_log2: other.grid_log2.or(self.grid_log2),
            levels: other.levels.or(self.levels),
            replicas: other.replicas.or(self.replicas),
            seed: other.seed.or(self.seed),
            tau: other.tau.or(self.tau),
            p: other.p.or(self.p),
            q: other.q.or(self.q),
            shells: other.shells.or(self.shells),
            mode: other.mode.or(self.mode),
            out: other.out.or(self.out),
        }
    }

    pub fn from_file(path: &Path) -> Result<Overrides> {
        let text = std::fs::read_to_string(path).map_err(|e| GmcError::io(path, e))?;
        Self::parse(&text).map_err(|e| GmcError::parse(path, e))
    }

    pub fn parse(text: &str) -> std::result::Result<Overrides, String> {
        let mut out = Overrides::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value", lineno + 1))?;
            let (key, value) = (key.trim().replace('-', "_"), value.trim());
            let bad = |e: &dyn std::fmt::Display| format!("line {}: {key}: {e}", lineno + 1);
            match key.as_str() {
                "dim" => out.dim = Some(value.parse().map_err(|e| bad(&e))?),
                "gamma" => out.gamma = Some(value.parse().map_err(|e| bad(&e))?),
                "grid_log2" => out.grid_log2 = Some(value.parse().map_err(|e| bad(&e))?),
                "levels" => out.levels = Some(value.parse().map_err(|e| bad(&e))?),
                "replicas" => out.replicas = Some(value.parse().map_err(|e| bad(&e))?),
                "seed" => out.seed = Some(value.parse().map_err(|e| bad(&e))?),
                "tau" => out.tau = Some(value.parse().map_err(|e| bad(&e))?),
                "p" => out.p = Some(value.parse().map_err(|e| bad(&e))?),
                "q" => out.q = Some(value.parse().map_err(|e| bad(&e))?),
                "shells" => out.shells = Some(parse_range(value).map_err(|e| bad(&e))?),
                "mode" => out.mode = Some(value.parse().map_err(|e: GmcError| bad(&e))?),
                "out" => out.out = Some(PathBuf::from(value)),
                _ => return Err(format!("line {}: unknown key {key}", lineno + 1)),
            }
        }
        Ok(out)
    }
}

/// `a..b`, `a-b` or `a:b`, inclusive.
pub fn parse_range(s: &str) -> std::result::Result<(u32, u32), String> {
    let parts: Vec<&str> = s.split(['.', '-', ':']).filter(|p| !p.is_empty()).collect();
    match parts.as_slice() {
        [a, b] => {
            let a: u32 = a.trim().parse().map_err(|e| format!("{e}"))?;
            let b: u32 = b.trim().parse().map_err(|e| format!("{e}"))?;
            if a > b {
                return Err(format!("empty range {a}..{b}"));
            }
            Ok((a, b))
        }
        _ => Err(format!("expected a range like 2..7, got {s}")),
    }
}

/// `(grid_log2, levels, replicas)` defaults per dimension.
pub fn defaults_for(dim: usize) -> (u32, u32, u64) {
    match dim {
        1 => (12, 9, 64),
        2 => (9, 6, 32),
        _ => (6, 3, 16),
    }
}

impl RunConfig {
    pub fn resolve(o: &Overrides) -> Result<RunConfig> {
        let dim = o.dim.unwrap_or(1);
        let (grid_log2, levels, replicas) = defaults_for(dim);
        let grid_log2 = o.grid_log2.unwrap_or(grid_log2);
        let cfg = RunConfig {
            dim,
            gamma: o.gamma.unwrap_or(0.5),
            grid_log2,
            levels: o.levels.unwrap_or(levels.min(grid_log2.saturating_sub(3))),
            replicas: o.replicas.unwrap_or(replicas),
            seed: o.seed.unwrap_or(1),
            tau: o.tau,
            p: o.p,
            q: o.q,
            shells: o.shells,
            mode: o.mode.unwrap_or(ShellMode::Sup),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        check_gamma(self.gamma, self.dim)?;
        if self.levels > grid.max_level() {
            return Err(GmcError::ScaleUnresolvable {
                level: self.levels,
                side: grid.side(),
            });
        }
        if self.replicas == 0 {
            return Err(GmcError::InvalidArgument("at least one replica is required".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::from_log2(self.dim, self.grid_log2)
    }

    /// Trend-only runs are too coarse for the dimension tolerances.
    pub fn trend_only(&self) -> bool {
        self.dim >= 3
    }

    /// `tau`, defaulting to half the predicted dimension.
    pub fn tau(&self) -> Result<f64> {
        Ok(match self.tau {
            Some(t) => t,
            None => predicted_dimension(self.gamma, self.dim)? / 2.0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags() {
        let file = Overrides::parse("# run\ndim = 2\ngamma=0.7\nshells=2..5\nmode=mean\n").unwrap();
        let flags = Overrides {
            gamma: Some(0.3),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(&file.merge(flags)).unwrap();
        assert_eq!(cfg.dim, 2);
        assert_eq!(cfg.gamma, 0.3);
        assert_eq!(cfg.grid_log2, 9);
        assert_eq!(cfg.levels, 6);
        assert_eq!(cfg.shells, Some((2, 5)));
        assert_eq!(cfg.mode, ShellMode::Mean);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_levels() {
        assert!(Overrides::parse("colour=blue").is_err());
        let o = Overrides {
            grid_log2: Some(8),
            levels: Some(6),
            ..Default::default()
        };
        assert!(matches!(
            RunConfig::resolve(&o),
            Err(GmcError::ScaleUnresolvable { level: 6, .. })
        ));
    }
}
