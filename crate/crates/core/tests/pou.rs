use proptest::prelude::*;
use torus_gmc::gmc::{Cascade, CascadeConfig, MeasureState};
use torus_gmc::kernel::KernelFamily;
use torus_gmc::pou::{
    build_pou, build_theta, decoupling_check, default_tracked, localized_coeffs, shell_tracked, write_coeffs_csv, Theta,
};
use torus_gmc::sampler::WeightField;
use torus_gmc::{GmcError, GridSpec};

fn cascade(dim: usize, log2: u32, levels: u32, seed: u64) -> Cascade {
    let family = KernelFamily::shared(dim).unwrap();
    let config = CascadeConfig {
        grid: GridSpec::from_log2(dim, log2).unwrap(),
        gamma: 0.6,
        levels,
        seed,
    };
    Cascade::new(config, &family).unwrap()
}

#[test]
fn theta_basics() {
    let theta = build_theta(4).unwrap();
    assert!(theta.partition_error <= 1e-14);
    assert_eq!(Theta::eval(0.0), 1.0);
    assert!((Theta::eval(0.5) - 0.5).abs() < 1e-15);
    assert_eq!(Theta::eval(1.0), 0.0);
    assert_eq!(Theta::eval(-1.2), 0.0);
    for i in 0..=1000 {
        let t = i as f64 / 1000.0;
        assert!((Theta::eval(t) + Theta::eval(t - 1.0) - 1.0).abs() < 1e-14);
    }
}

#[test]
fn partitions_of_unity() {
    for (dim, log2, ks) in [(1, 9, 2..=6), (2, 7, 1..=4), (3, 5, 1..=2)] {
        let grid = GridSpec::from_log2(dim, log2).unwrap();
        for k in ks {
            let pou = build_pou(k, grid).unwrap();
            let c = &pou.certificate;
            assert!(c.passed, "{c:?}");
            assert!(c.partition_error <= 1e-12);
            let mut sum = vec![0.0; grid.len()];
            for cube in 0..pou.cube_count() {
                for (s, v) in sum.iter_mut().zip(pou.window_for(cube)) {
                    *s += v;
                }
            }
            assert!(sum.iter().all(|s| (s - 1.0).abs() <= 1e-12));
        }
    }
}

#[test]
fn windows_live_on_the_doubled_cube() {
    let grid = GridSpec::from_log2(2, 6).unwrap();
    for k in 1..=3 {
        let pou = build_pou(k, grid).unwrap();
        for cube in 0..pou.cube_count() {
            let c = pou.center(cube);
            let w = pou.window_for(cube);
            for (i, &v) in w.iter().enumerate() {
                let t = grid.coords_vec(i);
                let far = t.iter().zip(&c).any(|(a, b)| {
                    let d = (a - b).rem_euclid(grid.side() as i64);
                    d.min(grid.side() as i64 - d) >= pou.reach
                });
                if far {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }
}

#[test]
fn windows_are_translates() {
    let grid = GridSpec::from_log2(2, 6).unwrap();
    let pou = build_pou(2, grid).unwrap();
    for cube in [0, 5, 15] {
        let c = pou.center(cube);
        let w = pou.window_for(cube);
        for (i, v) in w.iter().enumerate() {
            let t = grid.coords_vec(i);
            let shifted: Vec<i64> = t.iter().zip(&c).map(|(a, b)| a - b).collect();
            assert_eq!(*v, pou.window[grid.index_of(&shifted)]);
        }
    }
    let centers: Vec<Vec<i64>> = (0..pou.cube_count()).map(|q| pou.center(q)).collect();
    assert!(centers.contains(&vec![-24, -24]));
    assert!(centers.contains(&vec![24, 8]));
}

#[test]
fn derivative_scaling_is_stable() {
    let grid = GridSpec::from_log2(1, 11).unwrap();
    let ratios: Vec<f64> = (3..=5)
        .map(|k| build_pou(k, grid).unwrap().certificate.scaling[1].ratio)
        .collect();
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(hi / lo <= 1.1, "{ratios:?}");
    for k in 3..=5 {
        assert!((build_pou(k, grid).unwrap().certificate.scaling[0].ratio - 1.0).abs() < 1e-12);
    }
}

#[test]
fn unresolvable_windows() {
    let grid = GridSpec::from_log2(1, 8).unwrap();
    assert!(build_pou(5, grid).is_ok());
    assert!(matches!(
        build_pou(6, grid),
        Err(GmcError::ScaleUnresolvable { level: 6, side: 256 })
    ));
}

#[test]
fn unit_weight_gives_zero_coefficients() {
    let grid = GridSpec::from_log2(1, 8).unwrap();
    let pou = build_pou(1, grid).unwrap();
    let tracked = default_tracked(grid);
    let coeffs = localized_coeffs(
        &MeasureState::uniform(grid),
        &WeightField::ones(grid, 1),
        &pou,
        0.4,
        &tracked,
    )
    .unwrap();
    assert_eq!(coeffs.len(), 2);
    assert!(coeffs.iter().all(|c| c.values.iter().all(|v| v.norm() == 0.0)));
}

#[test]
fn decoupling_identity_holds() {
    for (dim, log2) in [(1, 10), (2, 6)] {
        for seed in [1, 2, 3] {
            let c = cascade(dim, log2, 3, seed);
            let grid = c.config().grid;
            let tracked: Vec<Vec<i64>> = default_tracked(grid).into_iter().take(8).collect();
            assert_eq!(tracked.len(), 8);
            let mut rows = Vec::new();
            c.run_observed(0, |state, weight| {
                if let Some(w) = weight {
                    let pou = build_pou(w.level, grid)?;
                    let coeffs = localized_coeffs(state, w, &pou, 0.4, &tracked)?;
                    rows.extend(decoupling_check(state, w, &coeffs, 0.4, &tracked)?);
                }
                Ok(())
            })
            .unwrap();
            assert_eq!(rows.len(), 24);
            for r in rows {
                assert!(r.relative_error <= 1e-10, "{r:?}");
            }
        }
    }
}

#[test]
fn coefficients_are_local() {
    let c = cascade(1, 9, 3, 4);
    let grid = c.config().grid;
    let tracked = shell_tracked(grid, 2);
    let w1 = c.weight(0, 1).unwrap();
    let w2 = c.weight(0, 2).unwrap();
    let prev = MeasureState::uniform(grid).advance(&w1).unwrap();
    let pou = build_pou(2, grid).unwrap();
    let full = localized_coeffs(&prev, &w2, &pou, 0.4, &tracked).unwrap();
    for cube in 0..pou.cube_count() {
        let support = pou.window_for(cube);
        let mut cut = prev.clone();
        for (d, s) in cut.density.iter_mut().zip(&support) {
            if *s == 0.0 {
                *d = 0.0;
            }
        }
        let local = localized_coeffs(&cut, &w2, &pou, 0.4, &tracked).unwrap();
        for (a, b) in full[cube].values.iter().zip(&local[cube].values) {
            assert!((a - b).norm() <= 1e-12);
        }
    }
    assert!(matches!(
        localized_coeffs(&prev, &w2, &build_pou(3, grid).unwrap(), 0.4, &tracked),
        Err(GmcError::LevelMismatch { .. })
    ));
}

#[test]
fn tracked_frequencies() {
    let grid = GridSpec::from_log2(2, 6).unwrap();
    let all = default_tracked(grid);
    assert!(all.contains(&vec![1, 0]));
    assert!(all.contains(&vec![0, 15]));
    assert!(all.iter().all(|n| n.iter().map(|x| x.abs()).max().unwrap() < 16));
    assert_eq!(
        shell_tracked(grid, 3),
        vec![vec![8, 0], vec![15, 0], vec![0, 8], vec![0, 15]]
    );
}

#[test]
fn coefficient_csv() {
    let dir = tempfile::tempdir().unwrap();
    let c = cascade(1, 8, 1, 1);
    let grid = c.config().grid;
    let pou = build_pou(1, grid).unwrap();
    let tracked = shell_tracked(grid, 1);
    let coeffs = localized_coeffs(
        &MeasureState::uniform(grid),
        &c.weight(0, 1).unwrap(),
        &pou,
        0.3,
        &tracked,
    )
    .unwrap();
    let path = dir.path().join("d.csv");
    write_coeffs_csv(&path, &coeffs, &tracked).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().count(), 1 + coeffs.len() * tracked.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn periodized_window_sums_to_one(k in 1u32..6, t in -0.5f64..0.5) {
        let step = 2f64.powi(-(k as i32));
        let total: f64 = (0..1 << k).map(|h| Theta::periodized(k, t - step * (h as f64 + 0.5))).sum();
        prop_assert!((total - 1.0).abs() < 1e-13);
    }

    #[test]
    fn theta_is_a_probability_weight(t in -2.0f64..2.0) {
        let v = Theta::eval(t);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((v - Theta::eval(-t)).abs() < 1e-15);
    }
}
