//! Seeded generation of spatially correlated abundance maps, nonlinear
//! mixtures, and calibrated noise. Everything here is a pure function of its
//! spec and seed, so scenes regenerate bit-identically.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;

use crate::error::{Result, UnmixError};
use crate::scene::{AbundanceMatrix, EndmemberMatrix, SceneCube};
use crate::spatial::Fft2d;

/// Nonlinear mixture family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixtureModel {
    Linear,
    Bilinear,
    Pnmm,
}

/// How pixels are mixed and corrupted.
#[derive(Debug, Clone, Copy)]
pub struct MixtureSpec {
    pub model: MixtureModel,
    /// Entrywise exponent of the post-nonlinear model.
    pub pnmm_exponent: f64,
    /// Target SNR in dB; `f64::INFINITY` disables noise.
    pub snr_db: f64,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn new(model: MixtureModel, seed: u64) -> Self {
        MixtureSpec {
            model,
            pnmm_exponent: 0.7,
            snr_db: 20.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pnmm_exponent > 0.0) {
            return Err(UnmixError::arg(format!(
                "pnmm exponent must be positive, got {}",
                self.pnmm_exponent
            )));
        }
        if self.snr_db.is_nan() {
            return Err(UnmixError::arg("snr must not be NaN"));
        }
        Ok(())
    }
}

/// Spatial layout of the generated abundance maps.
#[derive(Debug, Clone, Copy)]
pub enum FieldPattern {
    /// Square blocks, each dominated by one endmember. A block is pure with
    /// probability `pure_fraction`; otherwise the dominant abundance is
    /// drawn from [0.6, 1.0] and the remainder split evenly.
    Patches {
        patch_size: usize,
        pure_fraction: f64,
    },
    /// Per-endmember white noise smoothed by a periodic Gaussian of the
    /// given correlation length, exponentiated and normalized per pixel.
    SmoothField { correlation_length: f64 },
}

/// Specification of a generated abundance field.
#[derive(Debug, Clone, Copy)]
pub struct AbundanceFieldSpec {
    pub pattern: FieldPattern,
    pub w: usize,
    pub h: usize,
    pub r: usize,
    pub seed: u64,
}

impl AbundanceFieldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.w == 0 || self.h == 0 {
            return Err(UnmixError::arg("grid dimensions must be positive"));
        }
        if self.r < 2 {
            return Err(UnmixError::arg("abundance generation needs R >= 2"));
        }
        match self.pattern {
            FieldPattern::Patches { patch_size, pure_fraction } => {
                if patch_size == 0 || patch_size > self.w.max(self.h) {
                    return Err(UnmixError::arg(format!(
                        "patch size {patch_size} does not fit a {}x{} grid",
                        self.w, self.h
                    )));
                }
                if !(0.0..=1.0).contains(&pure_fraction) {
                    return Err(UnmixError::arg("pure fraction must lie in [0, 1]"));
                }
            }
            FieldPattern::SmoothField { correlation_length } => {
                if !(correlation_length >= 0.0) {
                    return Err(UnmixError::arg("correlation length must be >= 0"));
                }
            }
        }
        Ok(())
    }
}

/// Generate a simplex-constrained abundance map, deterministic per seed.
pub fn gen_abundances(spec: &AbundanceFieldSpec) -> Result<AbundanceMatrix> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h, r) = (spec.w, spec.h, spec.r);
    let n = w * h;
    let mut a = Array2::<f64>::zeros((r, n));
    match spec.pattern {
        FieldPattern::Patches { patch_size, pure_fraction } => {
            let blocks_x = w.div_ceil(patch_size);
            let blocks_y = h.div_ceil(patch_size);
            for by in 0..blocks_y {
                for bx in 0..blocks_x {
                    let dominant = rng.gen_range(0..r);
                    let pure = rng.gen::<f64>() < pure_fraction;
                    let weight = if pure { 1.0 } else { rng.gen_range(0.6..1.0) };
                    let rest = (1.0 - weight) / (r - 1) as f64;
                    for row in by * patch_size..((by + 1) * patch_size).min(h) {
                        for col in bx * patch_size..((bx + 1) * patch_size).min(w) {
                            let p = row * w + col;
                            for i in 0..r {
                                a[[i, p]] = if i == dominant { weight } else { rest };
                            }
                        }
                    }
                }
            }
        }
        FieldPattern::SmoothField { correlation_length } => {
            let fields: Vec<Array2<f64>> = (0..r)
                .map(|_| {
                    let noise = Array2::from_shape_fn((h, w), |_| {
                        Normal::new(0.0, 1.0).unwrap().sample(&mut rng)
                    });
                    periodic_gaussian_smooth(&noise, correlation_length)
                })
                .collect();
            for p in 0..n {
                let (row, col) = (p / w, p % w);
                let mut column = Array1::from_shape_fn(r, |i| fields[i][[row, col]].exp());
                let s = column.sum();
                column.mapv_inplace(|v| v / s);
                for i in 0..r {
                    a[[i, p]] = column[i];
                }
            }
        }
    }
    AbundanceMatrix::new(a, true)
}

/// Circular convolution with a unit-mass Gaussian of standard deviation
/// `sigma`; `sigma = 0` returns the field unchanged.
fn periodic_gaussian_smooth(field: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let (h, w) = field.dim();
    if sigma == 0.0 {
        return field.clone();
    }
    let mut kernel = Array2::<f64>::zeros((h, w));
    for dy in 0..h {
        for dx in 0..w {
            // wrapped distances to the kernel center at (0, 0)
            let ry = (dy.min(h - dy)) as f64;
            let rx = (dx.min(w - dx)) as f64;
            kernel[[dy, dx]] = (-(rx * rx + ry * ry) / (2.0 * sigma * sigma)).exp();
        }
    }
    let mass = kernel.sum();
    kernel.mapv_inplace(|v| v / mass);

    let fft = Fft2d::new(w, h);
    let mut fg = field.mapv(|v| Complex::new(v, 0.0));
    let mut kg = kernel.mapv(|v| Complex::new(v, 0.0));
    fft.transform(&mut fg, true);
    fft.transform(&mut kg, true);
    let mut prod = &fg * &kg;
    fft.transform(&mut prod, false);
    prod.mapv(|v| v.re)
}

/// Mix abundances through the chosen model; no noise is added here.
pub fn mix(a: &AbundanceMatrix, m: &EndmemberMatrix, spec: &MixtureSpec, w: usize, h: usize) -> Result<SceneCube> {
    spec.validate()?;
    if a.count() != m.count() {
        return Err(UnmixError::dims(format!(
            "abundances have {} endmembers, matrix has {}",
            a.count(),
            m.count()
        )));
    }
    if a.num_pixels() != w * h {
        return Err(UnmixError::dims(format!(
            "abundances have {} pixels, grid is {w}x{h}",
            a.num_pixels()
        )));
    }
    let mm = m.matrix();
    let mut data = mm.dot(a.matrix());
    match spec.model {
        MixtureModel::Linear => {}
        MixtureModel::Bilinear => {
            let r = m.count();
            for i in 0..r {
                for j in (i + 1)..r {
                    let cross = Array1::from_shape_fn(m.bands(), |l| mm[[l, i]] * mm[[l, j]]);
                    let coeff = Array1::from_shape_fn(a.num_pixels(), |n| {
                        a.matrix()[[i, n]] * a.matrix()[[j, n]]
                    });
                    for (l, &c) in cross.iter().enumerate() {
                        for (n, &t) in coeff.iter().enumerate() {
                            data[[l, n]] += c * t;
                        }
                    }
                }
            }
        }
        MixtureModel::Pnmm => {
            if let Some(v) = data.iter().find(|v| **v < 0.0) {
                return Err(UnmixError::arg(format!(
                    "pnmm requires nonnegative linear mixtures, found {v}"
                )));
            }
            let e = spec.pnmm_exponent;
            data.mapv_inplace(|v| v.powf(e));
        }
    }
    SceneCube::new(w, h, data)
}

/// Add zero-mean white Gaussian noise calibrated to the target SNR:
/// `sigma^2 = mean(r^2) / 10^(snr/10)`. Infinite SNR is a no-op.
pub fn add_noise(cube: &SceneCube, snr_db: f64, seed: u64) -> Result<SceneCube> {
    if snr_db.is_nan() {
        return Err(UnmixError::arg("snr must not be NaN"));
    }
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(cube.clone());
    }
    let power: f64 =
        cube.data().iter().map(|v| v * v).sum::<f64>() / cube.data().len() as f64;
    if power == 0.0 {
        return Err(UnmixError::arg("cannot calibrate noise on an all-zero cube"));
    }
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // single sequential stream so the result is independent of threading
    let data = cube.data().mapv(|v| v + normal.sample(&mut rng));
    SceneCube::new(cube.width(), cube.height(), data)
}

/// Draw `r` distinct library columns without replacement, in seeded order.
pub fn pick_endmembers(library: &EndmemberMatrix, r: usize, seed: u64) -> Result<EndmemberMatrix> {
    if r == 0 || r > library.count() {
        return Err(UnmixError::arg(format!(
            "cannot pick {r} endmembers from a library of {}",
            library.count()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..library.count()).collect();
    indices.shuffle(&mut rng);
    indices.truncate(r);
    let mut m = Array2::<f64>::zeros((library.bands(), r));
    for (j, &idx) in indices.iter().enumerate() {
        m.column_mut(j).assign(&library.matrix().column(idx));
    }
    EndmemberMatrix::new(m)
}

/// Number of spectra in the bundled library.
pub const BUILTIN_LIBRARY_SIZE: usize = 16;
/// Band count of the bundled library.
pub const BUILTIN_LIBRARY_BANDS: usize = 224;

/// The bundled synthetic spectral library: 16 smooth random reflectance
/// spectra over 224 bands (a baseline plus a few Gaussian bumps, clipped to
/// (0, 1)), generated deterministically so offline runs need no external
/// data.
pub fn builtin_library() -> EndmemberMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_11b0);
    let l = BUILTIN_LIBRARY_BANDS;
    let mut m = Array2::<f64>::zeros((l, BUILTIN_LIBRARY_SIZE));
    for j in 0..BUILTIN_LIBRARY_SIZE {
        let baseline = rng.gen_range(0.45..0.85);
        let bumps: Vec<(f64, f64, f64)> = (0..5)
            .map(|_| {
                (
                    rng.gen_range(-0.3..0.36),
                    rng.gen_range(0.0..l as f64),
                    rng.gen_range(8.0..40.0),
                )
            })
            .collect();
        for band in 0..l {
            let x = band as f64;
            let mut v = baseline;
            for &(amp, center, width) in &bumps {
                v += amp * (-(x - center) * (x - center) / (2.0 * width * width)).exp();
            }
            m[[band, j]] = v.clamp(0.05, 0.98);
        }
    }
    EndmemberMatrix::new(m).unwrap()
}
