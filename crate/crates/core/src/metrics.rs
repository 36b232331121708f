//! Evaluation metrics: abundance RMSE and reconstruction error.

use serde::Serialize;

use crate::error::{Result, UnmixError};
use crate::kernel::GramMatrix;
use crate::pixelwise::DualSolution;
use crate::scene::{AbundanceMatrix, EndmemberMatrix, SceneCube};

/// Evaluation summary of one unmixing run.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub rmse: f64,
    /// Per-endmember breakdown (diagnostic extension, not part of the
    /// benchmark tables).
    pub per_endmember_rmse: Vec<f64>,
    pub reconstruction_rmse: Option<f64>,
    pub runtime_ms_per_pixel: Option<f64>,
}

/// Root-mean-square abundance error
/// `sqrt( sum_n |alpha_n - alpha*_n|^2 / (N R) )`.
pub fn rmse(truth: &AbundanceMatrix, estimate: &AbundanceMatrix) -> Result<f64> {
    if truth.matrix().raw_dim() != estimate.matrix().raw_dim() {
        return Err(UnmixError::dims(format!(
            "truth is {}x{}, estimate is {}x{}",
            truth.count(),
            truth.num_pixels(),
            estimate.count(),
            estimate.num_pixels()
        )));
    }
    let nr = truth.matrix().len() as f64;
    let ss: f64 = truth
        .matrix()
        .iter()
        .zip(estimate.matrix().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((ss / nr).sqrt())
}

/// RMSE restricted to each endmember row.
pub fn per_endmember_rmse(
    truth: &AbundanceMatrix,
    estimate: &AbundanceMatrix,
) -> Result<Vec<f64>> {
    if truth.matrix().raw_dim() != estimate.matrix().raw_dim() {
        return Err(UnmixError::dims("shape mismatch".to_string()));
    }
    let n = truth.num_pixels() as f64;
    Ok(truth
        .matrix()
        .rows()
        .into_iter()
        .zip(estimate.matrix().rows())
        .map(|(t, e)| {
            let ss: f64 = t.iter().zip(e.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            (ss / n).sqrt()
        })
        .collect())
}

/// Reconstruction error `sqrt( sum_{n,l} (r_nl - y_nl)^2 / (N L) )` with
/// `y_n = M alpha_n + K beta_n`; the kernel term drops out when duals are
/// absent (linear methods).
pub fn reconstruction_rmse(
    cube: &SceneCube,
    m: &EndmemberMatrix,
    k: Option<&GramMatrix>,
    abundances: &AbundanceMatrix,
    duals: Option<&[DualSolution]>,
) -> Result<f64> {
    if abundances.num_pixels() != cube.num_pixels() || abundances.count() != m.count() {
        return Err(UnmixError::dims("abundance shape does not match scene".to_string()));
    }
    if m.bands() != cube.bands() {
        return Err(UnmixError::dims("endmember bands do not match scene".to_string()));
    }
    if let Some(d) = duals {
        if d.len() != cube.num_pixels() {
            return Err(UnmixError::dims("one dual solution per pixel required".to_string()));
        }
        if k.is_none() {
            return Err(UnmixError::arg("duals were provided without a gram matrix"));
        }
    }
    let mut fit = m.matrix().dot(abundances.matrix());
    if let (Some(gram), Some(d)) = (k, duals) {
        for (n, sol) in d.iter().enumerate() {
            let kb = gram.apply(&sol.beta);
            for l in 0..cube.bands() {
                fit[[l, n]] += kb[l];
            }
        }
    }
    let nl = (cube.bands() * cube.num_pixels()) as f64;
    let ss: f64 = cube
        .data()
        .iter()
        .zip(fit.iter())
        .map(|(r, y)| (r - y) * (r - y))
        .sum();
    Ok((ss / nl).sqrt())
}

/// Sum of squared dual norms scaled as in the `e = mu beta` identity:
/// at an exact kernel solution, `reconstruction_rmse^2` equals
/// `mu^2 / (N L) * sum_n |beta_n|^2`.
pub fn beta_energy(duals: &[DualSolution]) -> f64 {
    duals.iter().map(|d| d.beta.dot(&d.beta)).sum()
}

/// Mean squared entry of a cube, used in SNR accounting.
pub fn mean_power(cube: &SceneCube) -> f64 {
    cube.data().iter().map(|v| v * v).sum::<f64>() / cube.data().len() as f64
}

/// Realized SNR in dB of `noisy` against the clean reference.
pub fn realized_snr_db(clean: &SceneCube, noisy: &SceneCube) -> Result<f64> {
    if clean.data().raw_dim() != noisy.data().raw_dim() {
        return Err(UnmixError::dims("cube shapes differ".to_string()));
    }
    let p_signal = mean_power(clean);
    let p_noise: f64 = (noisy.data() - clean.data()).iter().map(|v| v * v).sum::<f64>()
        / clean.data().len() as f64;
    if p_noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (p_signal / p_noise).log10())
}

/// Column-mean and standard deviation of a sample, used by the benchmark
/// tables (std over seeds, denominator `n - 1`).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
