//! Radial profiles.
//!
//! `Phi` is the normalized autocorrelation of the smooth bump
//! `chi(r) = exp(-1/(1 - 4r^2))` supported on `B(0, 1/2)`. Being an
//! autocorrelation it is positive definite, equals 1 at the origin and
//! vanishes outside `B(0, 1)`. The mollifier `Q` is the same bump rescaled to
//! unit mass.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{GmcError, Result};
use crate::fft::FftNd;
use crate::grid::GridSpec;
use crate::quadrature::{cylinder_integral, gauss_legendre, radial_integral, Rule};

/// Cubic Hermite interpolant of a radial function on `[0, support]`, zero
/// beyond the support.
#[derive(Debug, Clone)]
pub struct RadialTable {
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl RadialTable {
    /// Tabulate `f(r) -> (value, slope)` at `intervals + 1` uniform nodes.
    pub fn from_fn(support: f64, intervals: usize, f: impl Fn(f64) -> (f64, f64) + Sync) -> Self {
        let step = support / intervals as f64;
        let (mut values, mut slopes): (Vec<f64>, Vec<f64>) =
            (0..=intervals).into_par_iter().map(|i| f(i as f64 * step)).unzip();
        // the profile is flat at the edge of its support
        values[intervals] = 0.0;
        slopes[intervals] = 0.0;
        slopes[0] = 0.0;
        Self { step, values, slopes }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            step: self.step,
            values: self.values.iter().map(|v| v * factor).collect(),
            slopes: self.slopes.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn support(&self) -> f64 {
        self.step * (self.values.len() - 1) as f64
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.iter().enumerate().map(|(i, &v)| (i as f64 * self.step, v))
    }

    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        self.eval_with_slope(r).0
    }

    #[inline]
    pub fn eval_with_slope(&self, r: f64) -> (f64, f64) {
        let r = r.abs();
        let x = r / self.step;
        let last = self.values.len() - 1;
        if x >= last as f64 {
            return (0.0, 0.0);
        }
        let i = x as usize;
        let t = x - i as f64;
        let (v0, v1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * self.step, self.slopes[i + 1] * self.step);
        let t2 = t * t;
        let t3 = t2 * t;
        let value =
            (2.0 * t3 - 3.0 * t2 + 1.0) * v0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * v1 + (t3 - t2) * m1;
        let slope = ((6.0 * t2 - 6.0 * t) * v0
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (-6.0 * t2 + 6.0 * t) * v1
            + (3.0 * t2 - 2.0 * t) * m1)
            / self.step;
        (value, slope)
    }

    /// `f'(r)/r`, finite at the origin for the even profiles tabulated here.
    #[inline]
    pub fn slope_over_r(&self, r: f64) -> f64 {
        let r = r.max(1e-3 * self.step);
        self.eval_with_slope(r).1 / r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ProfileKind {
    Phi,
    Q,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileCertificate {
    pub kind: ProfileKind,
    pub dim: usize,
    pub value_at_zero: f64,
    pub integral: f64,
    pub min_value: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub quadrature_discrepancy: f64,
    pub lipschitz_quadratic: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RadialProfile {
    kind: ProfileKind,
    dim: usize,
    oversample: usize,
    table: RadialTable,
    projection: RadialTable,
    integral: f64,
    certificate: ProfileCertificate,
}

pub(crate) const INTERVALS_PER_OVERSAMPLE: usize = 32;
const OUTER_NODES: usize = 64;
const INNER_NODES: usize = 48;

#[inline]
pub fn bump(s: f64) -> f64 {
    let u = 1.0 - 4.0 * s * s;
    if u <= 0.0 {
        0.0
    } else {
        (-1.0 / u).exp()
    }
}

#[inline]
fn bump_slope_over_r(s: f64) -> f64 {
    let u = 1.0 - 4.0 * s * s;
    if u <= 0.0 {
        0.0
    } else {
        -8.0 * (-1.0 / u).exp() / (u * u)
    }
}

/// `A(r) = int f(|x|) f(|x - r e_1|) dx` and its derivative in `r`, for a
/// radial `f` supported on `B(0, a)`.
pub(crate) fn autocorrelation(
    dim: usize,
    a: f64,
    f: &(impl Fn(f64) -> f64 + ?Sized),
    slope_over_r: &(impl Fn(f64) -> f64 + ?Sized),
    r: f64,
    outer: &Rule,
    inner: &Rule,
) -> (f64, f64) {
    if r >= 2.0 * a {
        return (0.0, 0.0);
    }
    let rho_max = |x: f64| {
        let m = x.abs().max((x - r).abs());
        (a * a - m * m).max(0.0).sqrt()
    };
    let value_at = |x: f64, rho: f64| {
        let rr = rho * rho;
        f((x * x + rr).sqrt()) * f(((x - r) * (x - r) + rr).sqrt())
    };
    let slope_at = |x: f64, rho: f64| {
        let rr = rho * rho;
        let y = x - r;
        -f((x * x + rr).sqrt()) * slope_over_r((y * y + rr).sqrt()) * y
    };
    let mid = 0.5 * r;
    let value = cylinder_integral(dim, r - a, mid, rho_max, value_at, outer, inner)
        + cylinder_integral(dim, mid, a, rho_max, value_at, outer, inner);
    let slope = cylinder_integral(dim, r - a, mid, rho_max, slope_at, outer, inner)
        + cylinder_integral(dim, mid, a, rho_max, slope_at, outer, inner);
    (value, slope)
}

/// Positive-definiteness check: DFT of the profile sampled on a periodic
/// grid of period twice its support. Returns the extreme eigenvalues.
pub fn periodic_eigenvalue_range(table: &RadialTable, dim: usize) -> (f64, f64) {
    let side = match dim {
        1 => 4096,
        2 => 256,
        3 => 64,
        _ => 16,
    };
    let grid = GridSpec::new(dim, side).expect("certificate grid");
    let period = 2.0 * table.support();
    let h = period / side as f64;
    let samples: Vec<f64> = (0..grid.len())
        .map(|i| table.eval((grid.dist2_cells(i) as f64).sqrt() * h))
        .collect();
    let spectrum = FftNd::new(grid).forward_real(&samples);
    spectrum.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), z| {
        (lo.min(z.re), hi.max(z.re))
    })
}

impl RadialProfile {
    pub fn kind(&self) -> ProfileKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn oversample(&self) -> usize {
        self.oversample
    }

    pub fn support_radius(&self) -> f64 {
        self.table.support()
    }

    pub fn table(&self) -> &RadialTable {
        &self.table
    }

    /// `int_{R^d}` of the profile.
    pub fn integral(&self) -> f64 {
        self.integral
    }

    pub fn certificate(&self) -> &ProfileCertificate {
        &self.certificate
    }

    /// `sup |Phi(t) - 1| / |t|^2`; only meaningful for `Phi`.
    pub fn lipschitz_quadratic(&self) -> Option<f64> {
        self.certificate.lipschitz_quadratic
    }

    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        self.table.eval(r)
    }

    pub fn eval_point(&self, t: &[f64]) -> f64 {
        self.eval(t.iter().map(|x| x * x).sum::<f64>().sqrt())
    }

    /// Fourier transform `int f(|x|) e(-xi.x) dx` at `|xi| = xi`.
    ///
    /// Computed as the cosine transform of the projection of the profile on
    /// one axis, with panels fine enough to resolve the oscillation.
    pub fn fourier(&self, xi: f64) -> f64 {
        if !xi.is_finite() {
            return 0.0;
        }
        let rule = gauss_legendre(16);
        let panels = (2.0 * xi.abs()).ceil() as usize + 4;
        let h = self.projection.support() / panels as f64;
        let w = std::f64::consts::TAU * xi;
        2.0 * (0..panels)
            .map(|p| {
                let a = p as f64 * h;
                rule.integrate(a, a + h, |x| self.projection.eval(x) * (w * x).cos())
            })
            .sum::<f64>()
    }

    fn finish(kind: ProfileKind, dim: usize, oversample: usize, table: RadialTable) -> Result<Self> {
        let projection = project(&table, dim);
        let integral = radial_integral(dim, table.support(), 32, |r| table.eval(r));
        let check = radial_integral(dim, table.support(), 20, |r| table.eval(r));
        let discrepancy = (integral - check).abs() / integral.abs();
        if !discrepancy.is_finite() || discrepancy > 1e-9 {
            return Err(GmcError::QuadratureUnstable {
                what: format!("{kind:?} profile integral"),
                discrepancy,
            });
        }
        let (min_eigenvalue, max_eigenvalue) = periodic_eigenvalue_range(&table, dim);
        let min_value = table.nodes().map(|(_, v)| v).fold(f64::INFINITY, f64::min);
        let value_at_zero = table.eval(0.0);
        let lipschitz_quadratic = (kind == ProfileKind::Phi).then(|| {
            table
                .nodes()
                .skip(1)
                .map(|(r, v)| (v - 1.0).abs() / (r * r))
                .fold(0.0, f64::max)
        });
        let certificate = ProfileCertificate {
            kind,
            dim,
            value_at_zero,
            integral,
            min_value,
            min_eigenvalue,
            max_eigenvalue,
            quadrature_discrepancy: discrepancy,
            lipschitz_quadratic,
        };
        if min_eigenvalue < -1e-10 * max_eigenvalue {
            return Err(GmcError::CertificationFailed {
                what: format!("{kind:?} profile (d = {dim})"),
                min_eigenvalue,
                max_eigenvalue,
            });
        }
        Ok(Self {
            kind,
            dim,
            oversample,
            table,
            projection,
            integral,
            certificate,
        })
    }
}

/// `P(x) = int_{R^(d-1)} f(sqrt(x^2 + |y|^2)) dy`, tabulated on the support.
fn project(table: &RadialTable, dim: usize) -> RadialTable {
    let support = table.support();
    let intervals = table.values.len() - 1;
    if dim == 1 {
        return table.clone();
    }
    let inner = gauss_legendre(INNER_NODES);
    let area = crate::quadrature::sphere_area(dim - 2);
    let power = dim as i32 - 2;
    RadialTable::from_fn(support, intervals, |x| {
        let top = (support * support - x * x).max(0.0).sqrt();
        let mut value = 0.0;
        let mut slope = 0.0;
        for (rho, w) in inner.mapped(0.0, top) {
            let s = (x * x + rho * rho).sqrt();
            let weight = w * rho.powi(power);
            value += weight * table.eval(s);
            slope += weight * table.slope_over_r(s) * x;
        }
        (area * value, area * slope)
    })
}

/// Build `Phi` for dimension `dim` with `32 * oversample` table intervals.
pub fn build_profile_phi(dim: usize, oversample: usize) -> Result<RadialProfile> {
    if dim == 0 || oversample == 0 {
        return Err(GmcError::InvalidArgument("dim and oversample must be positive".into()));
    }
    let outer = gauss_legendre(OUTER_NODES);
    let inner = gauss_legendre(INNER_NODES);
    let a0 = autocorrelation(dim, 0.5, &bump, &bump_slope_over_r, 0.0, &outer, &inner).0;
    let fine_outer = gauss_legendre(OUTER_NODES * 3 / 2);
    let fine_inner = gauss_legendre(INNER_NODES * 3 / 2);
    for r in [0.0, 0.5] {
        let coarse = autocorrelation(dim, 0.5, &bump, &bump_slope_over_r, r, &outer, &inner).0;
        let fine = autocorrelation(dim, 0.5, &bump, &bump_slope_over_r, r, &fine_outer, &fine_inner).0;
        let discrepancy = (coarse - fine).abs() / a0;
        if discrepancy > 1e-10 {
            return Err(GmcError::QuadratureUnstable {
                what: format!("bump autocorrelation at r = {r}"),
                discrepancy,
            });
        }
    }
    let table = RadialTable::from_fn(1.0, INTERVALS_PER_OVERSAMPLE * oversample, |r| {
        let (v, s) = autocorrelation(dim, 0.5, &bump, &bump_slope_over_r, r, &outer, &inner);
        (v / a0, s / a0)
    });
    RadialProfile::finish(ProfileKind::Phi, dim, oversample, table)
}

/// The mollifier `Q = Phi / int Phi`: same support and smoothness, unit mass.
pub fn build_profile_q(phi: &RadialProfile) -> Result<RadialProfile> {
    let table = phi.table.scaled(phi.integral.recip());
    let q = RadialProfile::finish(ProfileKind::Q, phi.dim, phi.oversample, table)?;
    let mass_error = (q.integral - 1.0).abs();
    if mass_error > 1e-8 {
        return Err(GmcError::QuadratureUnstable {
            what: "mollifier mass".into(),
            discrepancy: mass_error,
        });
    }
    Ok(q)
}

/// `G = Q * Q`, radial with support `B(0, 2)` and unit mass.
pub fn mollifier_autocorrelation(q: &RadialProfile) -> RadialTable {
    let outer = gauss_legendre(OUTER_NODES);
    let inner = gauss_legendre(INNER_NODES);
    let t = &q.table;
    let f = |s: f64| t.eval(s);
    let g = |s: f64| t.slope_over_r(s);
    let intervals = 2 * INTERVALS_PER_OVERSAMPLE * q.oversample;
    RadialTable::from_fn(2.0 * t.support(), intervals, |r| {
        autocorrelation(q.dim, t.support(), &f, &g, r, &outer, &inner)
    })
}
