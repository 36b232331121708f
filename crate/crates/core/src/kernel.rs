//! Reproducing kernels over endmember band vectors and the `L x L` Gram
//! matrix shared by all per-pixel kernel solvers.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Result, UnmixError};
use crate::linalg;
use crate::scene::EndmemberMatrix;

/// Kernel choice. The polynomial kernel
/// `k(x, y) = (1 + (x - 1/2)'(y - 1/2) / R^2)^2` is the default for all
/// unmixing runs; a Gaussian kernel is available as an alternative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    Polynomial,
    Gaussian { sigma: f64 },
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(UnmixError::arg(format!(
                "gaussian bandwidth must be positive, got {sigma}"
            )));
        }
        Ok(KernelSpec::Gaussian { sigma })
    }
}

/// Evaluate the kernel on two band vectors of length `r`.
pub fn eval_kernel(spec: KernelSpec, x: ArrayView1<f64>, y: ArrayView1<f64>, r: usize) -> Result<f64> {
    if x.len() != r || y.len() != r {
        return Err(UnmixError::dims(format!(
            "kernel arguments have lengths {} and {}, expected {r}",
            x.len(),
            y.len()
        )));
    }
    match spec {
        KernelSpec::Polynomial => {
            let mut dot = 0.0;
            for (a, b) in x.iter().zip(y.iter()) {
                dot += (a - 0.5) * (b - 0.5);
            }
            let base = 1.0 + dot / (r as f64 * r as f64);
            Ok(base * base)
        }
        KernelSpec::Gaussian { sigma } => {
            let mut sq = 0.0;
            for (a, b) in x.iter().zip(y.iter()) {
                sq += (a - b) * (a - b);
            }
            Ok((-sq / (2.0 * sigma * sigma)).exp())
        }
    }
}

/// The `L x L` Gram matrix `K[l][p] = k(m_l, m_p)` over the rows of the
/// endmember matrix. Symmetric by construction and checked for positive
/// semidefiniteness at creation.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    k: Array2<f64>,
}

impl GramMatrix {
    pub fn size(&self) -> usize {
        self.k.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.k
    }

    /// `K * v`.
    pub fn apply(&self, v: &Array1<f64>) -> Array1<f64> {
        self.k.dot(v)
    }
}

/// Build the Gram matrix of `spec` over the band vectors (rows) of `m`.
/// The upper triangle is computed and mirrored, so symmetry is exact.
///
/// A non-PSD result aborts: the smallest eigenvalue must be at least
/// `-1e-10 * ||K||_F`, verified by a shifted Cholesky factorization.
pub fn gram(spec: KernelSpec, m: &EndmemberMatrix) -> Result<GramMatrix> {
    let l = m.bands();
    let r = m.count();
    let mat = m.matrix();
    let mut k = Array2::<f64>::zeros((l, l));
    for i in 0..l {
        for j in i..l {
            let v = eval_kernel(spec, mat.row(i), mat.row(j), r)?;
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    let shift = 1e-10 * norm + f64::MIN_POSITIVE;
    let mut shifted = k.clone();
    for i in 0..l {
        shifted[[i, i]] += shift;
    }
    if linalg::cholesky(&shifted).is_none() {
        return Err(UnmixError::NotPsd);
    }
    Ok(GramMatrix { k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn polynomial_at_center_is_one() {
        for r in [1usize, 3, 7] {
            let x = Array1::from_elem(r, 0.5);
            let v = eval_kernel(KernelSpec::Polynomial, x.view(), x.view(), r).unwrap();
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn polynomial_hand_value() {
        let x = array![1.0, 0.5, 0.5, 0.5, 0.5];
        let v = eval_kernel(KernelSpec::Polynomial, x.view(), x.view(), 5).unwrap();
        assert!((v - 1.0201).abs() < 1e-15, "got {v}");
    }

    #[test]
    fn gaussian_zero_distance_is_one() {
        let x = array![0.3, 0.7, 0.1];
        let spec = KernelSpec::gaussian(0.8).unwrap();
        assert_eq!(eval_kernel(spec, x.view(), x.view(), 3).unwrap(), 1.0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let x = array![0.1, 0.2];
        let y = array![0.1, 0.2, 0.3];
        assert!(eval_kernel(KernelSpec::Polynomial, x.view(), y.view(), 2).is_err());
    }

    #[test]
    fn nonpositive_bandwidth_rejected() {
        assert!(KernelSpec::gaussian(0.0).is_err());
        assert!(KernelSpec::gaussian(-1.0).is_err());
    }

    #[test]
    fn gram_of_constant_half_matrix_is_all_ones() {
        let m = EndmemberMatrix::new(Array2::from_elem((4, 3), 0.5)).unwrap();
        let k = gram(KernelSpec::Polynomial, &m).unwrap();
        assert!(k.matrix().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn gram_is_exactly_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = EndmemberMatrix::new(Array2::from_shape_fn((2, 4), |_| rng.gen::<f64>())).unwrap();
        let k = gram(KernelSpec::Polynomial, &m).unwrap();
        assert_eq!(k.matrix()[[0, 1]], k.matrix()[[1, 0]]);
    }

    #[test]
    fn gram_is_psd_by_eigenvalue_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let m = EndmemberMatrix::new(Array2::from_shape_fn((6, 3), |_| rng.gen::<f64>())).unwrap();
        for spec in [KernelSpec::Polynomial, KernelSpec::gaussian(0.5).unwrap()] {
            let k = gram(spec, &m).unwrap();
            // independent oracle: symmetric eigendecomposition
            let l = k.size();
            let na = nalgebra::DMatrix::from_fn(l, l, |i, j| k.matrix()[[i, j]]);
            let eig = na.symmetric_eigen();
            let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            let norm = k.matrix().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(min >= -1e-10 * norm, "min eigenvalue {min}");
        }
    }

    #[test]
    fn polynomial_is_symmetric_in_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = Array1::from_shape_fn(4, |_| rng.gen::<f64>() * 2.0 - 0.5);
            let y = Array1::from_shape_fn(4, |_| rng.gen::<f64>() * 2.0 - 0.5);
            let a = eval_kernel(KernelSpec::Polynomial, x.view(), y.view(), 4).unwrap();
            let b = eval_kernel(KernelSpec::Polynomial, y.view(), x.view(), 4).unwrap();
            assert_eq!(a, b);
        }
    }
}
