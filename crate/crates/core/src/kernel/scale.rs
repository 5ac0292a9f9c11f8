//! The scale profile `l(s) = int_s^{2s} Phi(v)/v dv`.
//!
//! `H_j(t) = l(2^j |t|)`. The profile equals `log 2` at the origin, vanishes
//! for `s >= 1` and has derivative `(Phi(2s) - Phi(s))/s`.

use crate::quadrature::adaptive;

use super::profile::{RadialProfile, RadialTable, INTERVALS_PER_OVERSAMPLE};

/// `int_1^{min(2, 1/s)} Phi(us)/u du`, the substitution `v = us` of `l(s)`.
pub fn log_scale(phi: &RadialProfile, s: f64) -> f64 {
    let s = s.abs();
    if s >= phi.support_radius() {
        return 0.0;
    }
    let top = if s > 0.0 {
        (phi.support_radius() / s).min(2.0)
    } else {
        2.0
    };
    adaptive(&|u: f64| phi.eval(u * s) / u, 1.0, top, 1e-14).expect("smooth integrand on a finite interval")
}

/// `H_j(t) = l(2^j |t|)` evaluated by direct quadrature.
pub fn eval_l(phi: &RadialProfile, level: u32, t: &[f64]) -> f64 {
    let norm = t.iter().map(|x| x * x).sum::<f64>().sqrt();
    log_scale(phi, norm * 2f64.powi(level as i32))
}

#[derive(Debug, Clone)]
pub struct ScaleProfile {
    table: RadialTable,
}

impl ScaleProfile {
    pub fn from_phi(phi: &RadialProfile) -> Self {
        let intervals = INTERVALS_PER_OVERSAMPLE * phi.oversample();
        let table = RadialTable::from_fn(phi.support_radius(), intervals, |s| {
            let slope = if s > 0.0 {
                (phi.eval(2.0 * s) - phi.eval(s)) / s
            } else {
                0.0
            };
            (log_scale(phi, s), slope)
        });
        Self { table }
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        self.table.eval(s)
    }

    pub fn table(&self) -> &RadialTable {
        &self.table
    }
}
