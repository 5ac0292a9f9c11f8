//! Gauss-Legendre rules and the radial/cylindrical integrals built on them.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::GaussLegendre;

use crate::error::{GmcError, Result};

/// Nodes and weights on `[-1, 1]`.
#[derive(Debug)]
pub struct Rule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

/// Cached `n`-point Gauss-Legendre rule.
pub fn gauss_legendre(n: usize) -> Arc<Rule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Rule>>>> = OnceLock::new();
    let mut cache = CACHE.get_or_init(Default::default).lock().unwrap();
    cache
        .entry(n)
        .or_insert_with(|| {
            let rule = GaussLegendre::new(NonZeroUsize::new(n.max(1)).unwrap());
            let (nodes, weights) = rule.as_node_weight_pairs().iter().copied().unzip();
            Arc::new(Rule { nodes, weights })
        })
        .clone()
}

/// Adaptive bisection on a 15-point rule until halves agree to `tol`.
pub fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    let rule = gauss_legendre(15);
    let whole = rule.integrate(a, b, f);
    refine(&rule, f, a, b, whole, tol, 0).ok_or(GmcError::QuadratureUnstable {
        what: format!("adaptive integral on [{a}, {b}]"),
        discrepancy: f64::NAN,
    })
}

fn refine(rule: &Rule, f: &impl Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> Option<f64> {
    let mid = 0.5 * (a + b);
    let left = rule.integrate(a, mid, f);
    let right = rule.integrate(mid, b, f);
    if (left + right - whole).abs() <= tol {
        return Some(left + right);
    }
    if depth >= 40 {
        return None;
    }
    Some(refine(rule, f, a, mid, left, 0.5 * tol, depth + 1)? + refine(rule, f, mid, b, right, 0.5 * tol, depth + 1)?)
}

/// Surface area of the unit sphere `S^k` in `R^(k+1)`.
pub fn sphere_area(k: usize) -> f64 {
    match k {
        0 => 2.0,
        1 => 2.0 * PI,
        _ => 2.0 * PI / (k as f64 - 1.0) * sphere_area(k - 2),
    }
}

/// `int_{B(0,R)} f(|x|) dx` in dimension `dim`.
pub fn radial_integral(dim: usize, radius: f64, nodes: usize, f: impl Fn(f64) -> f64) -> f64 {
    let rule = gauss_legendre(nodes);
    let panels = 8;
    let h = radius / panels as f64;
    let area = sphere_area(dim - 1);
    (0..panels)
        .map(|p| {
            let a = p as f64 * h;
            rule.integrate(a, a + h, |r| f(r) * r.powi(dim as i32 - 1))
        })
        .sum::<f64>()
        * area
}

/// Integral over `R^d` of a function of `(x_1, rho)` with `rho = |x_2..x_d|`,
/// restricted to `x_1` in `[lo, hi]` and `rho < rho_max(x_1)`.
///
/// In one dimension `rho` is always zero and `rho_max` is ignored.
pub fn cylinder_integral(
    dim: usize,
    lo: f64,
    hi: f64,
    rho_max: impl Fn(f64) -> f64,
    f: impl Fn(f64, f64) -> f64,
    outer: &Rule,
    inner: &Rule,
) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    if dim == 1 {
        return outer.integrate(lo, hi, |x| f(x, 0.0));
    }
    let area = sphere_area(dim - 2);
    let power = dim as i32 - 2;
    outer.integrate(lo, hi, |x| {
        let top = rho_max(x);
        if top <= 0.0 {
            return 0.0;
        }
        inner.integrate(0.0, top, |rho| f(x, rho) * rho.powi(power))
    }) * area
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exactness() {
        let rule = gauss_legendre(8);
        let v = rule.integrate(0.0, 2.0, |x| x.powi(15));
        assert!((v - 2f64.powi(16) / 16.0).abs() < 1e-9);
    }

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(2) - 4.0 * PI).abs() < 1e-14);
        assert!((sphere_area(3) - 2.0 * PI * PI).abs() < 1e-13);
    }

    #[test]
    fn ball_volumes() {
        for (dim, vol) in [(1, 2.0), (2, PI), (3, 4.0 * PI / 3.0)] {
            let v = radial_integral(dim, 1.0, 16, |_| 1.0);
            assert!((v - vol).abs() < 1e-12, "d={dim}");
            let rule = gauss_legendre(32);
            let c = cylinder_integral(
                dim,
                -1.0,
                1.0,
                |x| (1.0 - x * x).max(0.0).sqrt(),
                |_, _| 1.0,
                &rule,
                &rule,
            );
            assert!((c - vol).abs() < 1e-4, "d={dim} {c}");
        }
    }

    #[test]
    fn adaptive_log() {
        let v = adaptive(&|u: f64| 1.0 / u, 1.0, 2.0, 1e-13).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-13);
    }
}
