//! Exact stationary Gaussian fields on the grid, spectral derivatives and
//! lognormal weights.
//!
//! A field with covariance `K` is synthesized by filtering white noise:
//! `psi = IDFT(sqrt(lambda) * DFT(z)) / M^d` with `z` i.i.d. standard normal.
//! The filtered spectrum is Hermitian because `z` is real and `lambda` is
//! even, and `E[psi(x) psi(y)] = K(x - y)` holds exactly.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GmcError, Result};
use crate::fft::FftNd;
use crate::grid::GridSpec;
use crate::kernel::GridKernel;

/// Coordinates of one random stream: base seed, replica and level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedPath {
    pub seed: u64,
    pub replica: u64,
    pub level: u32,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedPath {
    pub fn new(seed: u64, replica: u64, level: u32) -> Self {
        Self { seed, replica, level }
    }

    /// ChaCha keyed by `(seed, level)` on stream `replica`. Draws are consumed
    /// in lattice order, two words per normal pair.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut state = self.seed ^ (u64::from(self.level)).wrapping_mul(0xD1B5_4A32_D192_ED03);
        let mut key = [0u8; 32];
        for chunk in key.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.replica);
        rng
    }
}

#[inline]
fn open_unit(word: u64) -> f64 {
    ((word >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Box-Muller normals. Each pair of outputs consumes exactly two words, so
/// the value at a lattice index depends only on the stream and the index.
pub fn fill_standard_normals(rng: &mut impl RngCore, out: &mut [f64]) {
    for pair in out.chunks_mut(2) {
        let u1 = open_unit(rng.next_u64());
        let u2 = open_unit(rng.next_u64());
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        pair[0] = r * c;
        if let Some(second) = pair.get_mut(1) {
            *second = r * s;
        }
    }
}

#[derive(Debug, Clone)]
pub struct FieldSample {
    pub level: u32,
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub seed_path: SeedPath,
    /// Largest imaginary part left by the synthesis, relative to the largest
    /// real part.
    pub imag_residue: f64,
}

#[derive(Debug, Clone)]
pub struct WeightField {
    pub level: u32,
    pub gamma: f64,
    pub variance: f64,
    pub values: Vec<f64>,
}

impl WeightField {
    /// The constant weight 1 at `level`, for tests and dry runs.
    pub fn ones(grid: GridSpec, level: u32) -> Self {
        Self {
            level,
            gamma: 0.0,
            variance: 0.0,
            values: vec![1.0; grid.len()],
        }
    }

    /// `X - 1`.
    pub fn centered(&self) -> Vec<f64> {
        self.values.iter().map(|x| x - 1.0).collect()
    }
}

fn split_real(buf: &[Complex64]) -> (Vec<f64>, f64) {
    let max_re = buf.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
    let max_im = buf.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let residue = if max_re > 0.0 { max_im / max_re } else { max_im };
    (buf.iter().map(|z| z.re).collect(), residue)
}

pub fn sample_field(kernel: &GridKernel, path: SeedPath) -> FieldSample {
    sample_field_with(kernel, &FftNd::new(kernel.grid), path)
}

pub fn sample_field_with(kernel: &GridKernel, fft: &FftNd, path: SeedPath) -> FieldSample {
    let grid = kernel.grid;
    let mut noise = vec![0.0; grid.len()];
    fill_standard_normals(&mut path.rng(), &mut noise);
    let mut buf = fft.forward_real(&noise);
    for (z, &lambda) in buf.iter_mut().zip(&kernel.eigenvalues) {
        *z *= lambda.max(0.0).sqrt();
    }
    fft.inverse_normalized(&mut buf);
    let (values, imag_residue) = split_real(&buf);
    FieldSample {
        level: kernel.level,
        grid,
        values,
        seed_path: path,
        imag_residue,
    }
}

fn check_multi_index(grid: GridSpec, alpha: &[u32]) -> Result<()> {
    if alpha.len() != grid.dim() {
        return Err(GmcError::InvalidArgument(format!(
            "multi-index has {} entries for dimension {}",
            alpha.len(),
            grid.dim()
        )));
    }
    let order: u32 = alpha.iter().sum();
    if order as usize > grid.dim() {
        return Err(GmcError::InvalidArgument(format!(
            "derivative order {order} exceeds the dimension {}",
            grid.dim()
        )));
    }
    Ok(())
}

/// Fourier multiplier `prod (2 pi i n_l)^a_l`. Odd orders vanish on the
/// Nyquist frequency, which has no real-valued derivative.
fn derivative_symbol(grid: GridSpec, alpha: &[u32], coords: &[i64]) -> Complex64 {
    let nyquist = -(grid.side() as i64) / 2;
    let mut symbol = Complex64::new(1.0, 0.0);
    for (&a, &n) in alpha.iter().zip(coords) {
        if a == 0 {
            continue;
        }
        if n == nyquist && a % 2 == 1 {
            return Complex64::default();
        }
        symbol *= Complex64::new(0.0, std::f64::consts::TAU * n as f64).powu(a);
    }
    symbol
}

/// `D^alpha` of grid values by Fourier multiplication.
pub fn derivative_of(grid: GridSpec, values: &[f64], alpha: &[u32]) -> Result<Vec<f64>> {
    check_multi_index(grid, alpha)?;
    if alpha.iter().all(|&a| a == 0) {
        return Ok(values.to_vec());
    }
    let fft = FftNd::new(grid);
    let mut buf = fft.forward_real(values);
    let mut coords = vec![0; grid.dim()];
    for (i, z) in buf.iter_mut().enumerate() {
        grid.coords(i, &mut coords);
        *z *= derivative_symbol(grid, alpha, &coords);
    }
    fft.inverse_normalized(&mut buf);
    Ok(split_real(&buf).0)
}

pub fn spectral_derivative(field: &FieldSample, alpha: &[u32]) -> Result<FieldSample> {
    Ok(FieldSample {
        values: derivative_of(field.grid, &field.values, alpha)?,
        ..field.clone()
    })
}

/// `E|D^alpha psi_j(z)|^2 = M^-d sum_n lambda_n |symbol(n)|^2`.
pub fn derivative_second_moment(kernel: &GridKernel, alpha: &[u32]) -> Result<f64> {
    let grid = kernel.grid;
    check_multi_index(grid, alpha)?;
    let mut coords = vec![0; grid.dim()];
    let total: f64 = kernel
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            grid.coords(i, &mut coords);
            lambda * derivative_symbol(grid, alpha, &coords).norm_sqr()
        })
        .sum();
    Ok(total * grid.cell_volume())
}

/// `sqrt(2d)`, the end of the subcritical range.
pub fn critical_gamma(dim: usize) -> f64 {
    (2.0 * dim as f64).sqrt()
}

pub fn check_gamma(gamma: f64, dim: usize) -> Result<()> {
    let upper = critical_gamma(dim);
    if !(gamma > 0.0 && gamma < upper) {
        return Err(GmcError::GammaOutOfRange { gamma, dim, upper });
    }
    Ok(())
}

/// `X = exp(gamma psi - gamma^2 sigma^2 / 2)` with the grid variance.
pub fn lognormal_weight(field: &FieldSample, gamma: f64, kernel: &GridKernel) -> Result<WeightField> {
    check_gamma(gamma, field.grid.dim())?;
    if field.level != kernel.level {
        return Err(GmcError::LevelMismatch {
            expected: kernel.level,
            got: field.level,
        });
    }
    let shift = 0.5 * gamma * gamma * kernel.variance;
    Ok(WeightField {
        level: field.level,
        gamma,
        variance: kernel.variance,
        values: field.values.iter().map(|&v| (gamma * v - shift).exp()).collect(),
    })
}

const DUMP_MAGIC: &[u8; 4] = b"GMCF";
const DUMP_VERSION: u32 = 1;
const DUMP_HEADER: usize = 32;

/// Raw dump: 32-byte header (magic, version, d, M, j as little-endian u32,
/// zero padded) followed by the values as little-endian f64 in grid order.
pub fn write_field_dump(path: &Path, field: &FieldSample) -> Result<()> {
    let mut bytes = Vec::with_capacity(DUMP_HEADER + 8 * field.values.len());
    bytes.extend_from_slice(DUMP_MAGIC);
    for word in [
        DUMP_VERSION,
        field.grid.dim() as u32,
        field.grid.side() as u32,
        field.level,
    ] {
        bytes.extend_from_slice(&word.to_le_bytes());
    }
    bytes.resize(DUMP_HEADER, 0);
    for v in &field.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| GmcError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| GmcError::io(path, e))
}

/// Returns `(grid, level, values)`.
pub fn read_field_dump(path: &Path) -> Result<(GridSpec, u32, Vec<f64>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| GmcError::io(path, e))?;
    if bytes.len() < DUMP_HEADER || &bytes[..4] != DUMP_MAGIC {
        return Err(GmcError::parse(path, "not a field dump"));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap());
    if word(0) != DUMP_VERSION {
        return Err(GmcError::SchemaMismatch {
            found: word(0),
            expected: DUMP_VERSION,
        });
    }
    let grid = GridSpec::new(word(1) as usize, word(2) as usize).map_err(|e| GmcError::parse(path, e))?;
    let body = &bytes[DUMP_HEADER..];
    if body.len() != 8 * grid.len() {
        return Err(GmcError::parse(path, "payload length does not match the header"));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((grid, word(3), values))
}
