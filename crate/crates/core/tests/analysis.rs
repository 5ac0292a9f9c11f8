use num_complex::Complex64;
use proptest::prelude::*;
use torus_gmc::analysis::{
    cube_energy, dimension_branch, estimate_correlation_dim, estimate_fourier_dim, fl_moment_trend, fl_norm, fl_window,
    linear_fit, predicted_dimension, shell_stats, zeta, zeta_argmax, Branch, ShellMode,
};
use torus_gmc::gmc::{spectrum, MeasureState, SpectrumTable};
use torus_gmc::{GmcError, GridSpec};

fn power_law(grid: GridSpec, s: f64) -> SpectrumTable {
    let coefficients = (0..grid.len())
        .map(|i| {
            let r2 = grid.dist2_cells(i) as f64;
            let c = if r2 == 0.0 { 1.0 } else { r2.powf(-s / 4.0) };
            Complex64::new(c, 0.0)
        })
        .collect();
    SpectrumTable::from_coefficients(grid, coefficients)
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    while b - a > 1e-12 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

#[test]
fn predicted_dimension_branches() {
    assert!((predicted_dimension(0.5, 1).unwrap() - 0.75).abs() < 1e-15);
    assert!((predicted_dimension(0.4, 1).unwrap() - 0.84).abs() < 1e-15);
    assert!((predicted_dimension(1.0, 1).unwrap() - (2f64.sqrt() - 1.0).powi(2)).abs() < 1e-15);
    assert!((predicted_dimension(1.0, 2).unwrap() - 1.0).abs() < 1e-15);
    assert!(predicted_dimension(2f64.sqrt() - 1e-12, 1).unwrap() < 1e-20 + 1e-22);
    assert_eq!(dimension_branch(0.5, 1).unwrap(), Branch::Quadratic);
    assert_eq!(dimension_branch(1.2, 1).unwrap(), Branch::Square);
    for d in 1..=3 {
        let g = (2.0 * d as f64).sqrt() / 2.0;
        let jump = predicted_dimension(g - 1e-9, d).unwrap() - predicted_dimension(g + 1e-9, d).unwrap();
        assert!(jump.abs() <= 1e-6);
    }
    assert!(matches!(
        predicted_dimension(1.5, 1),
        Err(GmcError::GammaOutOfRange { .. })
    ));
    assert!(matches!(
        predicted_dimension(0.0, 1),
        Err(GmcError::GammaOutOfRange { .. })
    ));
}

#[test]
fn predicted_dimension_is_the_max_of_zeta() {
    for (g, d) in [(0.3, 1), (0.9, 1), (1.2, 1), (0.5, 2), (1.0, 2), (1.7, 2), (2.0, 3)] {
        let p = golden_max(|p| zeta(p, g, d), 1.0, 2.0);
        assert!((p - zeta_argmax(g, d)).abs() < 1e-6, "g={g} d={d}");
        assert!((zeta(p, g, d) - predicted_dimension(g, d).unwrap()).abs() < 1e-10);
    }
    assert!((zeta_argmax(1.2, 1) - 2f64.sqrt() / 1.2).abs() < 1e-9);
    assert_eq!(zeta(1.0, 0.7, 2), 0.0);
    assert!((zeta(2.0, 0.5, 1) - 0.75).abs() < 1e-15);
}

#[test]
fn synthetic_power_laws_are_recovered() {
    for dim in [1, 2] {
        let grid = GridSpec::from_log2(dim, if dim == 1 { 12 } else { 7 }).unwrap();
        for s in [0.3, 0.8, 1.5] {
            let stats = shell_stats(&power_law(grid, s));
            for sh in &stats.shells {
                assert!((sh.sup - 2f64.powf(-s * sh.k as f64)).abs() < 1e-14);
            }
            let est = estimate_fourier_dim(&[stats.clone(), stats], dim, ShellMode::Sup, None).unwrap();
            assert!((-est.slope - s).abs() < 1e-6, "dim {dim} s {s}: {}", est.slope);
            if s < dim as f64 {
                assert!((est.dimension - s).abs() < 1e-6);
            } else {
                assert_eq!(est.dimension, dim as f64);
            }
            assert!(est.stderr < 1e-9);
            assert_eq!(est.range.0, 2);
        }
    }
}

#[test]
fn shell_counts_match_enumeration() {
    let grid = GridSpec::from_log2(2, 6).unwrap();
    let stats = shell_stats(&power_law(grid, 1.0));
    assert_eq!(stats.shells.len(), 4);
    for sh in &stats.shells {
        let lo = 4i64.pow(sh.k);
        let mut count = 0;
        for a in -32..32i64 {
            for b in -32..32i64 {
                let r2 = a * a + b * b;
                if r2 >= lo && r2 < 4 * lo {
                    count += 1;
                }
            }
        }
        assert_eq!(sh.count, count, "shell {}", sh.k);
    }
    assert_eq!(
        stats.shells.iter().map(|s| s.count).collect::<Vec<_>>(),
        vec![8, 36, 148, 600]
    );
}

#[test]
fn uniform_measure_has_no_usable_shells() {
    let grid = GridSpec::from_log2(1, 10).unwrap();
    let stats = shell_stats(&spectrum(&MeasureState::uniform(grid)));
    assert!(stats.shells.iter().all(|s| s.sup < 1e-28));
    assert!(matches!(
        estimate_fourier_dim(&[stats], 1, ShellMode::Sup, None),
        Err(GmcError::InsufficientShells { usable: 0 })
    ));
}

#[test]
fn correlation_dimension_of_simple_measures() {
    for dim in [1, 2] {
        let grid = GridSpec::from_log2(dim, 8).unwrap();
        let uniform = MeasureState::uniform(grid);
        let est = estimate_correlation_dim(&[uniform], None).unwrap();
        assert!((est.dimension - dim as f64).abs() < 1e-12);

        let mut density = vec![0.0; grid.len()];
        density[grid.index_of(&vec![3; dim])] = grid.len() as f64;
        let est = estimate_correlation_dim(&[MeasureState::from_density(grid, density)], None).unwrap();
        assert!(est.dimension.abs() < 1e-12);
    }
    let grid = GridSpec::from_log2(2, 8).unwrap();
    let density = (0..grid.len())
        .map(|i| {
            if grid.coords_vec(i)[1] == 0 {
                grid.side() as f64
            } else {
                0.0
            }
        })
        .collect();
    let line = MeasureState::from_density(grid, density);
    let est = estimate_correlation_dim(std::slice::from_ref(&line), None).unwrap();
    assert!((est.dimension - 1.0).abs() < 0.05);
    assert!((cube_energy(&line, 3).unwrap() - 0.125).abs() < 1e-12);
}

#[test]
fn fl_norm_closed_forms() {
    let grid = GridSpec::from_log2(1, 7).unwrap();
    let uniform = spectrum(&MeasureState::uniform(grid));
    for (s, q) in [(0.0, 2.0), (0.3, 3.0), (1.0, 7.0)] {
        assert!((fl_norm(&uniform, s, q) - 1.0).abs() < 1e-12);
    }
    let density = (0..grid.len())
        .map(|i| 1.0 + (std::f64::consts::TAU * grid.point(i)[0]).cos())
        .collect();
    let spec = spectrum(&MeasureState::from_density(grid, density));
    assert!((fl_norm(&spec, 0.0, 2.0) - 1.5f64.sqrt()).abs() < 1e-12);
    let want = (1.0 + 2.0 * 2f64.powf(0.25) * 0.5f64.powi(2)).sqrt();
    assert!((fl_norm(&spec, 0.25, 2.0) - want).abs() < 1e-12);
}

#[test]
fn window_is_feasible_below_the_dimension() {
    let w = fl_window(0.5, 1, 0.4, None, None).unwrap();
    assert!((w.p - 1.95).abs() < 1e-15);
    assert_eq!(w.q, 7.0);
    assert!(w.feasible);
    assert!(w.p / w.q < w.slack);
    let above = fl_window(0.5, 1, 0.75 + 0.2, None, None).unwrap();
    assert!(!above.feasible);
    let fixed = fl_window(0.5, 1, 0.4, Some(1.5), Some(20.0)).unwrap();
    assert_eq!((fixed.p, fixed.q), (1.5, 20.0));
    assert!(fl_window(0.5, 1, 0.4, Some(0.5), None).is_err());
}

#[test]
fn trend_verdicts() {
    let flat: Vec<(u32, Vec<f64>)> = (1..=9).map(|m| (m, vec![1.0 + 0.01 * m as f64; 4])).collect();
    let r = fl_moment_trend(&flat, 2.0).unwrap();
    assert!(r.bounded);
    assert_eq!(r.levels.len(), 9);
    let grow: Vec<(u32, Vec<f64>)> = (1..=9).map(|m| (m, vec![1.5f64.powi(m as i32)])).collect();
    assert!(!fl_moment_trend(&grow, 2.0).unwrap().bounded);
    let single = fl_moment_trend(&[(0, vec![1.0])], 1.9).unwrap();
    assert_eq!(single.late_mean, 1.0);
    assert!(single.bounded);
}

#[test]
fn least_squares_oracle() {
    let pts = [(1.0, 2.0), (2.0, 2.9), (3.0, 4.2), (4.0, 4.9)];
    let fit = linear_fit(&pts);
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    assert!((fit.slope - slope).abs() < 1e-13);
    assert!((fit.intercept - (sy - slope * sx) / n).abs() < 1e-13);
    let resid: f64 = pts
        .iter()
        .map(|&(x, y)| (y - fit.intercept - fit.slope * x).powi(2))
        .sum();
    assert!((fit.slope_stderr - (resid / 2.0 / (sxx - sx * sx / n)).sqrt()).abs() < 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fl_norm_is_monotone_in_s(
        density in prop::collection::vec(0.0f64..4.0, 64),
        s in 0.0f64..1.0,
        ds in 0.0f64..1.0,
        q in 1.0f64..8.0,
    ) {
        let grid = GridSpec::from_log2(1, 6).unwrap();
        let spec = spectrum(&MeasureState::from_density(grid, density));
        prop_assert!(fl_norm(&spec, s, q) <= fl_norm(&spec, s + ds, q) * (1.0 + 1e-12));
    }

    #[test]
    fn estimate_is_capped(s in -0.5f64..3.0) {
        let grid = GridSpec::from_log2(1, 11).unwrap();
        let stats = shell_stats(&power_law(grid, s));
        let est = estimate_fourier_dim(&[stats], 1, ShellMode::Mean, None).unwrap();
        prop_assert!((0.0..=1.0).contains(&est.dimension));
    }
}
