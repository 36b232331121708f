//! Shared oracles for the integration and acceptance suites. Everything
//! here is deliberately independent of the code paths it checks: the primal
//! representer QP goes through the generic solver only, and the dense
//! difference operator is materialized from the neighbor definition.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unmix_core::qp::{self, QpOptions, QpProblem};
use unmix_core::scene::EndmemberMatrix;

/// Solve the primal representer form of the proximal pixel problem over
/// `y = (alpha, c)`:
///
/// `min 1/2 (|a|^2 + c'Kc + |r - Ma - Kc|^2 / mu + zeta |a - xi|^2)`
/// subject to `a >= 0` and optionally `1'a = 1`.
///
/// Returns the abundance block and the full objective value (constants
/// included).
pub fn primal_pixel_oracle(
    reflect: &Array1<f64>,
    m: &EndmemberMatrix,
    k: &Array2<f64>,
    mu: f64,
    zeta: f64,
    xi: &Array1<f64>,
    sum_to_one: bool,
) -> (Array1<f64>, f64) {
    let (l, r) = (m.bands(), m.count());
    let mm = m.matrix();
    let dim = r + l;
    let mut p = Array2::<f64>::zeros((dim, dim));
    let mtm = mm.t().dot(mm);
    let mtk = mm.t().dot(k);
    let kk = k.dot(k);
    for i in 0..r {
        for j in 0..r {
            p[[i, j]] = mtm[[i, j]] / mu + if i == j { 1.0 + zeta } else { 0.0 };
        }
        for j in 0..l {
            p[[i, r + j]] = mtk[[i, j]] / mu;
            p[[r + j, i]] = mtk[[i, j]] / mu;
        }
    }
    for i in 0..l {
        for j in 0..l {
            p[[r + i, r + j]] = k[[i, j]] + kk[[i, j]] / mu;
        }
    }
    let mut q = Array1::<f64>::zeros(dim);
    let mtr = mm.t().dot(reflect);
    let ktr = k.dot(reflect);
    for i in 0..r {
        q[i] = mtr[i] / mu + zeta * xi[i];
    }
    for i in 0..l {
        q[r + i] = ktr[i] / mu;
    }
    let problem = QpProblem::new(p.clone(), q.clone(), (0..r).collect()).unwrap();
    let eq: Vec<usize> = (0..r).collect();
    let sol = if sum_to_one {
        qp::solve_qp_with_equality(&problem, Some(&eq), &QpOptions::default()).unwrap()
    } else {
        qp::solve_qp(&problem, &QpOptions::default()).unwrap()
    };
    let obj = qp::objective(&p, &q, &sol.x)
        + reflect.dot(reflect) / (2.0 * mu)
        + 0.5 * zeta * xi.dot(xi);
    (sol.x.slice(ndarray::s![0..r]).to_owned(), obj)
}

/// Random endmember matrix with reflectance-like entries in (0, 1).
pub fn random_endmembers(rng: &mut ChaCha8Rng, l: usize, r: usize) -> EndmemberMatrix {
    EndmemberMatrix::new(Array2::from_shape_fn((l, r), |_| {
        0.05 + 0.9 * rng.gen::<f64>()
    }))
    .unwrap()
}

/// Random point on the probability simplex.
pub fn random_simplex_point(rng: &mut ChaCha8Rng, r: usize) -> Array1<f64> {
    let mut x = Array1::from_shape_fn(r, |_| -(rng.gen::<f64>().max(1e-12)).ln());
    let s = x.sum();
    x.mapv_inplace(|v| v / s);
    x
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Brute-force bound-constrained QP oracle: enumerate every clamped subset
/// of the nonneg set, solve the reduced system by LU, keep the feasible
/// candidate with the lowest objective.
pub fn brute_force_qp(p: &Array2<f64>, q: &Array1<f64>, nonneg: &[usize]) -> Array1<f64> {
    let d = p.nrows();
    let m = nonneg.len();
    let mut best: Option<(f64, Array1<f64>)> = None;
    for mask in 0..(1usize << m) {
        let mut clamped = vec![false; d];
        for (bit, &i) in nonneg.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                clamped[i] = true;
            }
        }
        let free: Vec<usize> = (0..d).filter(|&i| !clamped[i]).collect();
        let f = free.len();
        let mut x = Array1::<f64>::zeros(d);
        if f > 0 {
            let na = nalgebra::DMatrix::from_fn(f, f, |a, b| p[[free[a], free[b]]]);
            let nb = nalgebra::DVector::from_fn(f, |a, _| q[free[a]]);
            let sol = match na.lu().solve(&nb) {
                Some(s) => s,
                None => continue,
            };
            for (k, &i) in free.iter().enumerate() {
                x[i] = sol[k];
            }
        }
        if nonneg.iter().any(|&i| x[i] < -1e-9) {
            continue;
        }
        let obj = qp::objective(p, q, &x);
        if best.as_ref().map_or(true, |(b, _)| obj < *b) {
            best = Some((obj, x));
        }
    }
    best.expect("at least the all-clamped candidate is feasible").1
}

/// Dense `N x 4N` difference operator built from first principles: block
/// `d` column `n` is `e_n - e_{neighbor_d(n)}` with periodic wraparound,
/// directions ordered left, right, up, down.
pub fn dense_h(w: usize, h: usize) -> Array2<f64> {
    let n = w * h;
    let neighbor = |p: usize, d: usize| -> usize {
        let (row, col) = (p / w, p % w);
        match d {
            0 => row * w + (col + w - 1) % w,
            1 => row * w + (col + 1) % w,
            2 => ((row + h - 1) % h) * w + col,
            _ => ((row + 1) % h) * w + col,
        }
    };
    let mut hd = Array2::<f64>::zeros((n, 4 * n));
    for d in 0..4 {
        for p in 0..n {
            hd[[p, d * n + p]] += 1.0;
            hd[[neighbor(p, d), d * n + p]] -= 1.0;
        }
    }
    hd
}
