use torus_gmc::kernel::{GridKernel, KernelFamily};
use torus_gmc::sampler::{
    derivative_of, derivative_second_moment, lognormal_weight, read_field_dump, sample_field, spectral_derivative,
    write_field_dump, FieldSample, SeedPath,
};
use torus_gmc::{GmcError, GridSpec};

fn kernel(dim: usize, log2: u32, level: u32) -> GridKernel {
    let grid = GridSpec::from_log2(dim, log2).unwrap();
    KernelFamily::shared(dim).unwrap().kernel(level, grid).unwrap()
}

#[test]
fn identical_paths_are_bit_identical() {
    let k = kernel(1, 9, 3);
    let a = sample_field(&k, SeedPath::new(7, 2, 3));
    let b = sample_field(&k, SeedPath::new(7, 2, 3));
    assert_eq!(a.values, b.values);
    let c = sample_field(&k, SeedPath::new(7, 3, 3));
    let d = sample_field(&k, SeedPath::new(8, 2, 3));
    assert_ne!(a.values, c.values);
    assert_ne!(a.values, d.values);
    assert!(a.imag_residue <= 1e-10);
}

#[test]
fn zero_spectrum_gives_zero_field_and_unit_weight() {
    let grid = GridSpec::from_log2(1, 6).unwrap();
    let k = GridKernel::from_samples_unchecked(2, grid, vec![0.0; grid.len()]);
    let f = sample_field(&k, SeedPath::new(1, 0, 2));
    assert!(f.values.iter().all(|&v| v == 0.0));
    let w = lognormal_weight(&f, 0.5, &k).unwrap();
    assert!(w.values.iter().all(|&x| x == 1.0));
}

#[test]
fn ensemble_covariance_matches_kernel() {
    let k = kernel(1, 8, 3);
    let grid = k.grid;
    let n = 1500;
    let mut cov = vec![0.0; grid.len()];
    let mut sq = vec![0.0; grid.len()];
    for r in 0..n {
        let f = sample_field(&k, SeedPath::new(11, r, 3));
        for (i, v) in f.values.iter().enumerate() {
            let p = f.values[0] * v;
            cov[i] += p;
            sq[i] += p * p;
        }
    }
    let nf = n as f64;
    for i in 0..grid.len() {
        let mean = cov[i] / nf;
        let se = ((sq[i] / nf - mean * mean) / nf).sqrt();
        assert!(
            (mean - k.real_samples[i]).abs() <= 5.0 * se,
            "offset {i}: {mean} vs {}",
            k.real_samples[i]
        );
    }
    assert!((cov[0] / nf - k.variance).abs() / k.variance <= 4.0 / nf.sqrt());
}

#[test]
fn weights_are_normalized_in_mean() {
    let k = kernel(1, 8, 4);
    let gamma = 0.8;
    let n = 3000;
    let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
    for r in 0..n {
        let w = lognormal_weight(&sample_field(&k, SeedPath::new(5, r, 4)), gamma, &k).unwrap();
        assert!(w.values.iter().all(|&x| x > 0.0));
        let x = w.values[17];
        s1 += x;
        s2 += x * x;
        s4 += x.powi(4);
    }
    let nf = n as f64;
    let m1 = s1 / nf;
    let m2 = s2 / nf;
    let se1 = ((m2 - m1 * m1) / nf).sqrt();
    let se2 = ((s4 / nf - m2 * m2) / nf).sqrt();
    assert!((m1 - 1.0).abs() <= 5.0 * se1, "{m1}");
    let want = (gamma * gamma * k.variance).exp();
    assert!((m2 - want).abs() <= 5.0 * se2, "{m2} vs {want}");
}

#[test]
fn gamma_outside_subcritical_range() {
    let k = kernel(1, 7, 2);
    let f = sample_field(&k, SeedPath::new(1, 0, 2));
    for g in [0.0, -0.1, 2f64.sqrt(), 3.0] {
        assert!(matches!(
            lognormal_weight(&f, g, &k),
            Err(GmcError::GammaOutOfRange { .. })
        ));
    }
}

#[test]
fn derivative_of_harmonic() {
    let grid = GridSpec::from_log2(1, 6).unwrap();
    let h = grid.spacing();
    let values: Vec<f64> = (0..grid.len())
        .map(|i| (std::f64::consts::TAU * 3.0 * grid.signed(i) as f64 * h).sin())
        .collect();
    let d = derivative_of(grid, &values, &[1]).unwrap();
    for (i, got) in d.iter().enumerate() {
        let t = grid.signed(i) as f64 * h;
        let want = std::f64::consts::TAU * 3.0 * (std::f64::consts::TAU * 3.0 * t).cos();
        assert!((got - want).abs() < 1e-10);
    }
    assert_eq!(derivative_of(grid, &values, &[0]).unwrap(), values);
    assert!(derivative_of(grid, &values, &[2]).is_err());
}

#[test]
fn second_moment_matches_spectrum_and_ensemble() {
    let k = kernel(1, 10, 5);
    let m = derivative_second_moment(&k, &[1]).unwrap();
    // Nyquist carries no odd derivative
    let n = k.grid.side();
    let brute: f64 = (0..n)
        .map(|i| {
            let f = std::f64::consts::TAU * k.grid.signed(i) as f64;
            let f = if k.grid.signed(i) == -(n as i64 / 2) { 0.0 } else { f };
            f * f * k.eigenvalues[i]
        })
        .sum::<f64>()
        / n as f64;
    assert!((m - brute).abs() <= 1e-12 * brute);

    let samples = 400;
    let mut acc = 0.0;
    for r in 0..samples {
        let f = sample_field(&k, SeedPath::new(3, r, 5));
        let d: FieldSample = spectral_derivative(&f, &[1]).unwrap();
        acc += d.values.iter().map(|v| v * v).sum::<f64>() / d.values.len() as f64;
    }
    let emp = acc / samples as f64;
    assert!((emp - m).abs() / m < 0.05, "{emp} vs {m}");
}

#[test]
fn field_dump_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let k = kernel(2, 6, 2);
    let f = sample_field(&k, SeedPath::new(9, 1, 2));
    let path = dir.path().join("f.bin");
    write_field_dump(&path, &f).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"GMCF");
    assert_eq!(bytes.len(), 32 + 8 * f.values.len());
    let (grid, level, values) = read_field_dump(&path).unwrap();
    assert_eq!(grid, k.grid);
    assert_eq!(level, 2);
    assert_eq!(values, f.values);
    std::fs::write(&path, &bytes[..40]).unwrap();
    assert!(read_field_dump(&path).is_err());
}

#[test]
fn levels_are_independent() {
    let grid = GridSpec::from_log2(1, 8).unwrap();
    let fam = KernelFamily::shared(1).unwrap();
    let (a, b) = (fam.kernel(3, grid).unwrap(), fam.kernel(4, grid).unwrap());
    let n = 1500;
    let (mut s, mut s2) = (0.0, 0.0);
    for r in 0..n {
        let x = sample_field(&a, SeedPath::new(2, r, 3)).values[0];
        let y = sample_field(&b, SeedPath::new(2, r, 4)).values[0];
        s += x * y;
        s2 += (x * y).powi(2);
    }
    let nf = n as f64;
    let mean = s / nf;
    let se = ((s2 / nf - mean * mean) / nf).sqrt();
    assert!(mean.abs() <= 4.0 * se);
}
