//! Per-pixel abundance solvers: the FCLS/NCLS linear baselines, the
//! K-Hype/NK-Hype kernel solvers, and their proximal variants used as
//! Step 1 of the split-Bregman loop.
//!
//! The kernel path models each pixel as a linear trend in the abundances
//! plus a nonlinear fluctuation living in the RKHS of the chosen kernel,
//! and solves the regression in the dual. With proximal weight `zeta` and
//! anchor `xi`, the negated dual over `x = (beta, gamma[, lambda])` has the
//! block structure (common prefactor `1/(1+zeta)`)
//!
//! ```text
//!   [ (1+z)(K + mu I) + M M'    M     -M 1 ]        [ (1+z) r - z M xi ]
//!   [        M'                 I      -1  ]    q = [      -z xi       ]
//!   [     -1' M'               -1'      R  ]        [ z xi' 1 - (1+z)  ]
//! ```
//!
//! with `gamma >= 0` the only inequality. This form is re-derived from the
//! stationarity conditions of the pixel Lagrangian and is verified against
//! an independent primal representer QP in the test suite. Abundances are
//! recovered as `alpha = (M' beta + gamma - lambda 1 + zeta xi) / (1+zeta)`.

use ndarray::{Array1, Array2};

use crate::error::{Result, UnmixError};
use crate::kernel::GramMatrix;
use crate::qp::{self, QpOptions, QpProblem};
use crate::scene::EndmemberMatrix;

/// Abundance estimates closer to zero than this are treated as round-off
/// and clamped; anything more negative signals a failed solve.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// Per-pixel estimation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Fcls,
    Ncls,
    KHype,
    NkHype,
}

impl Method {
    pub fn is_kernel(self) -> bool {
        matches!(self, Method::KHype | Method::NkHype)
    }

    pub fn sum_to_one(self) -> bool {
        matches!(self, Method::Fcls | Method::KHype)
    }
}

/// A per-pixel model: the method plus the kernel trade-off `mu` (unused by
/// the linear methods) and the sum-to-one switch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelModel {
    pub method: Method,
    pub mu: f64,
    pub sum_to_one: bool,
}

impl PixelModel {
    pub fn new(method: Method, mu: f64) -> Result<Self> {
        if method.is_kernel() && !(mu > 0.0) {
            return Err(UnmixError::arg(format!(
                "kernel trade-off mu must be positive, got {mu}"
            )));
        }
        Ok(PixelModel {
            method,
            mu,
            sum_to_one: method.sum_to_one(),
        })
    }

    pub fn fcls() -> Self {
        PixelModel::new(Method::Fcls, f64::NAN).unwrap()
    }

    pub fn ncls() -> Self {
        PixelModel::new(Method::Ncls, f64::NAN).unwrap()
    }

    pub fn khype(mu: f64) -> Result<Self> {
        PixelModel::new(Method::KHype, mu)
    }

    pub fn nkhype(mu: f64) -> Result<Self> {
        PixelModel::new(Method::NkHype, mu)
    }
}

/// Solution of one pixel's kernel problem: the dual variables, the
/// recovered abundances, the misadjustment residuals and the model fit.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub beta: Array1<f64>,
    pub gamma: Array1<f64>,
    /// Sum-to-one multiplier; absent when the constraint is relaxed.
    pub lambda: Option<f64>,
    pub alpha: Array1<f64>,
    /// Residuals `r - fit`; equals `mu * beta` at an exact solution.
    pub residual: Array1<f64>,
    /// Reconstruction `M alpha + K beta` per band.
    pub fit: Array1<f64>,
    /// Value of the pixel objective at the recovered primal point.
    pub objective: f64,
    /// Final clamped set of the dual QP, for warm starts.
    pub qp_active: Vec<usize>,
}

fn check_proximal_args(
    l: usize,
    r_dim: usize,
    reflect: &Array1<f64>,
    gram_size: usize,
    mu: f64,
    zeta: f64,
    xi: Option<&Array1<f64>>,
) -> Result<()> {
    if reflect.len() != l {
        return Err(UnmixError::dims(format!(
            "pixel spectrum has {} bands, endmembers have {l}",
            reflect.len()
        )));
    }
    if gram_size != l {
        return Err(UnmixError::dims(format!(
            "gram matrix is {gram_size}x{gram_size}, expected {l}x{l}"
        )));
    }
    if !(mu > 0.0) {
        return Err(UnmixError::arg(format!("mu must be positive, got {mu}")));
    }
    if zeta < 0.0 {
        return Err(UnmixError::arg(format!(
            "zeta must be nonnegative, got {zeta}"
        )));
    }
    match xi {
        Some(x) if x.len() != r_dim => Err(UnmixError::dims(format!(
            "xi has length {}, expected {r_dim}",
            x.len()
        ))),
        None if zeta > 0.0 => Err(UnmixError::arg(
            "a proximal anchor xi is required when zeta > 0",
        )),
        _ => Ok(()),
    }
}

/// Build the negated-dual QP of the proximal pixel problem. `zeta = 0`
/// recovers plain K-Hype/NK-Hype, in which case `xi` is ignored.
pub fn build_proximal_dual(
    reflect: &Array1<f64>,
    m: &EndmemberMatrix,
    k: &GramMatrix,
    mu: f64,
    zeta: f64,
    xi: Option<&Array1<f64>>,
    sum_to_one: bool,
) -> Result<QpProblem> {
    let l = m.bands();
    let r = m.count();
    check_proximal_args(l, r, reflect, k.size(), mu, zeta, xi)?;

    let c1 = 1.0 / (1.0 + zeta);
    let dim = l + r + usize::from(sum_to_one);
    let mm = m.matrix();
    let mut p = Array2::<f64>::zeros((dim, dim));
    let mut q = Array1::<f64>::zeros(dim);

    // beta-beta block: K + mu I + M M' / (1+zeta)
    for i in 0..l {
        for j in 0..l {
            let mut v = k.matrix()[[i, j]];
            if i == j {
                v += mu;
            }
            let mut cross = 0.0;
            for t in 0..r {
                cross += mm[[i, t]] * mm[[j, t]];
            }
            p[[i, j]] = v + c1 * cross;
        }
    }
    // beta-gamma blocks: M / (1+zeta)
    for i in 0..l {
        for t in 0..r {
            p[[i, l + t]] = c1 * mm[[i, t]];
            p[[l + t, i]] = c1 * mm[[i, t]];
        }
    }
    // gamma-gamma block: I / (1+zeta)
    for t in 0..r {
        p[[l + t, l + t]] = c1;
    }
    if sum_to_one {
        let lam = l + r;
        // beta-lambda: -M 1 / (1+zeta)
        for i in 0..l {
            let row_sum: f64 = (0..r).map(|t| mm[[i, t]]).sum();
            p[[i, lam]] = -c1 * row_sum;
            p[[lam, i]] = -c1 * row_sum;
        }
        // gamma-lambda: -1 / (1+zeta); lambda-lambda: R / (1+zeta)
        for t in 0..r {
            p[[l + t, lam]] = -c1;
            p[[lam, l + t]] = -c1;
        }
        p[[lam, lam]] = c1 * r as f64;
    }

    // linear term
    let zxi = match xi {
        Some(x) if zeta > 0.0 => x.clone() * zeta,
        _ => Array1::zeros(r),
    };
    let m_zxi = mm.dot(&zxi);
    for i in 0..l {
        q[i] = reflect[i] - c1 * m_zxi[i];
    }
    for t in 0..r {
        q[l + t] = -c1 * zxi[t];
    }
    if sum_to_one {
        q[l + r] = c1 * zxi.sum() - 1.0;
    }

    QpProblem::new(p, q, (l..l + r).collect())
}

/// Recover the abundance vector from solved dual variables:
/// `alpha = (M' beta + gamma - lambda 1 + zeta xi) / (1 + zeta)`.
///
/// Entries below `-FEASIBILITY_TOL` signal a bad dual solve and raise an
/// error; round-off negatives are clamped to zero.
pub fn recover_abundance(
    beta: &Array1<f64>,
    gamma: &Array1<f64>,
    lambda: Option<f64>,
    m: &EndmemberMatrix,
    zeta: f64,
    xi: Option<&Array1<f64>>,
) -> Result<Array1<f64>> {
    let r = m.count();
    if beta.len() != m.bands() || gamma.len() != r {
        return Err(UnmixError::dims("dual variable shapes do not match M"));
    }
    let lam = lambda.unwrap_or(0.0);
    let mut alpha = m.matrix().t().dot(beta) + gamma;
    if zeta > 0.0 {
        let x = xi.ok_or_else(|| UnmixError::arg("xi required when zeta > 0"))?;
        alpha = alpha + &(x * zeta);
    }
    alpha.mapv_inplace(|v| (v - lam) / (zeta + 1.0));
    for v in alpha.iter_mut() {
        if *v < 0.0 {
            if *v < -FEASIBILITY_TOL {
                return Err(UnmixError::QpInfeasible(format!(
                    "recovered abundance {v} is below the feasibility tolerance"
                )));
            }
            *v = 0.0;
        }
    }
    Ok(alpha)
}

/// Solve one pixel with a kernel method: build the dual QP, solve it, and
/// recover abundances, residuals and the reconstruction.
pub fn solve_pixel_kernel(
    reflect: &Array1<f64>,
    m: &EndmemberMatrix,
    k: &GramMatrix,
    model: &PixelModel,
    zeta: f64,
    xi: Option<&Array1<f64>>,
) -> Result<DualSolution> {
    solve_pixel_kernel_with_options(reflect, m, k, model, zeta, xi, &QpOptions::default())
}

/// [`solve_pixel_kernel`] with explicit QP options (warm starts, tracing).
pub fn solve_pixel_kernel_with_options(
    reflect: &Array1<f64>,
    m: &EndmemberMatrix,
    k: &GramMatrix,
    model: &PixelModel,
    zeta: f64,
    xi: Option<&Array1<f64>>,
    opts: &QpOptions,
) -> Result<DualSolution> {
    if !model.method.is_kernel() {
        return Err(UnmixError::arg(format!(
            "{:?} is not a kernel method",
            model.method
        )));
    }
    let sum_to_one = model.sum_to_one;
    let problem = build_proximal_dual(reflect, m, k, model.mu, zeta, xi, sum_to_one)?;
    let sol = qp::solve_qp(&problem, opts)?;
    if let Some(trace) = &sol.objective_trace {
        log_qp_trace("kernel", trace);
    }

    let l = m.bands();
    let r = m.count();
    let beta = sol.x.slice(ndarray::s![0..l]).to_owned();
    let gamma = sol.x.slice(ndarray::s![l..l + r]).to_owned();
    let lambda = sum_to_one.then(|| sol.x[l + r]);
    let alpha = recover_abundance(&beta, &gamma, lambda, m, zeta, xi)?;

    let fit = m.matrix().dot(&alpha) + k.apply(&beta);
    let residual = reflect - &fit;
    let objective = pixel_objective(&alpha, &beta, &residual, k, model.mu, zeta, xi);
    Ok(DualSolution {
        beta,
        gamma,
        lambda,
        alpha,
        residual,
        fit,
        objective,
        qp_active: sol.active,
    })
}

/// Value of the proximal pixel objective at a primal point
/// `(alpha, psi = sum_l beta_l k(., m_l))` with residuals `e`:
/// `1/2 (|alpha|^2 + beta' K beta + |e|^2 / mu + zeta |alpha - xi|^2)`.
pub fn pixel_objective(
    alpha: &Array1<f64>,
    beta: &Array1<f64>,
    residual: &Array1<f64>,
    k: &GramMatrix,
    mu: f64,
    zeta: f64,
    xi: Option<&Array1<f64>>,
) -> f64 {
    let mut v = alpha.dot(alpha) + beta.dot(&k.apply(beta)) + residual.dot(residual) / mu;
    if zeta > 0.0 {
        if let Some(x) = xi {
            let d = alpha - x;
            v += zeta * d.dot(&d);
        }
    }
    0.5 * v
}

/// Solve one pixel with a linear method (FCLS/NCLS or their proximal
/// variants): `min 1/2 |r - M alpha|^2 + zeta/2 |alpha - xi|^2` subject to
/// nonnegativity and, for FCLS, sum-to-one.
pub fn solve_pixel_linear(
    reflect: &Array1<f64>,
    m: &EndmemberMatrix,
    model: &PixelModel,
    zeta: f64,
    xi: Option<&Array1<f64>>,
) -> Result<Array1<f64>> {
    solve_pixel_linear_with_options(reflect, m, model, zeta, xi, &QpOptions::default())
}

/// [`solve_pixel_linear`] with explicit QP options.
pub fn solve_pixel_linear_with_options(
    reflect: &Array1<f64>,
    m: &EndmemberMatrix,
    model: &PixelModel,
    zeta: f64,
    xi: Option<&Array1<f64>>,
    opts: &QpOptions,
) -> Result<Array1<f64>> {
    if model.method.is_kernel() {
        return Err(UnmixError::arg(format!(
            "{:?} is not a linear method",
            model.method
        )));
    }
    let l = m.bands();
    let r = m.count();
    if reflect.len() != l {
        return Err(UnmixError::dims(format!(
            "pixel spectrum has {} bands, endmembers have {l}",
            reflect.len()
        )));
    }
    if zeta < 0.0 {
        return Err(UnmixError::arg(format!(
            "zeta must be nonnegative, got {zeta}"
        )));
    }
    if zeta > 0.0 && xi.map_or(true, |x| x.len() != r) {
        return Err(UnmixError::arg(
            "a proximal anchor xi of length R is required when zeta > 0",
        ));
    }
    let mm = m.matrix();
    let mut p = mm.t().dot(mm);
    for i in 0..r {
        p[[i, i]] += zeta;
    }
    let mut q = mm.t().dot(reflect);
    if zeta > 0.0 {
        q = q + &(xi.unwrap() * zeta);
    }
    let problem = qp::QpProblem::new(p, q, (0..r).collect())?;
    let eq: Vec<usize> = (0..r).collect();
    let sol = if model.sum_to_one {
        qp::solve_qp_with_equality(&problem, Some(&eq), opts)?
    } else {
        qp::solve_qp(&problem, opts)?
    };
    if let Some(trace) = &sol.objective_trace {
        log_qp_trace("linear", trace);
    }
    Ok(sol.x)
}

pub(crate) fn log_qp_trace(label: &str, trace: &[f64]) {
    let mut line = format!("qp-trace {label}:");
    for (i, v) in trace.iter().enumerate() {
        line.push_str(&format!(" {i}={v:.6e}"));
    }
    eprintln!("{line}");
}
