//! Dense convex quadratic programming with nonnegativity constraints on a
//! designated index subset, plus an optional sum constraint over a subset.
//! This is the single numerical engine behind FCLS, NCLS, K-Hype and the
//! proximal per-pixel problems of the split-Bregman loop.
//!
//! The solver is a primal active-set method: starting from a feasible point,
//! it repeatedly minimizes the objective with the current clamped set fixed
//! to zero (dense Cholesky on the free block), steps to the first blocking
//! constraint, and releases the most negative multiplier until the KKT
//! conditions hold. Problem dimension is at most L + R + 1, so dense
//! refactorization per working-set change is cheap.

use ndarray::{Array1, Array2};

use crate::error::{Result, UnmixError};
use crate::linalg::{cholesky, cholesky_solve};

/// Minimize `1/2 x' P x - q' x` subject to `x_i >= 0` for `i` in `nonneg`.
#[derive(Debug, Clone)]
pub struct QpProblem {
    p: Array2<f64>,
    q: Array1<f64>,
    nonneg: Vec<usize>,
}

impl QpProblem {
    /// `p` must be symmetric within `1e-12` relative asymmetry and PSD;
    /// `nonneg` lists the indices constrained to be nonnegative.
    pub fn new(p: Array2<f64>, q: Array1<f64>, nonneg: Vec<usize>) -> Result<Self> {
        let d = p.nrows();
        if p.ncols() != d || q.len() != d {
            return Err(UnmixError::dims(format!(
                "P is {}x{}, q has length {}",
                p.nrows(),
                p.ncols(),
                q.len()
            )));
        }
        if !p.iter().chain(q.iter()).all(|v| v.is_finite()) {
            return Err(UnmixError::NonFinite("qp problem data".into()));
        }
        let scale = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..d {
            for j in (i + 1)..d {
                if (p[[i, j]] - p[[j, i]]).abs() > 1e-12 * scale.max(1.0) {
                    return Err(UnmixError::arg(format!(
                        "P is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        if let Some(&i) = nonneg.iter().find(|&&i| i >= d) {
            return Err(UnmixError::arg(format!(
                "nonneg index {i} out of range for dimension {d}"
            )));
        }
        Ok(QpProblem { p, q, nonneg })
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn p(&self) -> &Array2<f64> {
        &self.p
    }

    pub fn q(&self) -> &Array1<f64> {
        &self.q
    }

    pub fn nonneg(&self) -> &[usize] {
        &self.nonneg
    }
}

/// Solver options. `ridge = None` adds the default `1e-10 * trace(P)/d`
/// regularization once up front; `warm_active` seeds the clamped set from a
/// previous solve of a nearby problem.
#[derive(Debug, Clone)]
pub struct QpOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub ridge: Option<f64>,
    pub warm_active: Option<Vec<usize>>,
    pub trace: bool,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            max_iter: 500,
            tol: 1e-9,
            ridge: None,
            warm_active: None,
            trace: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Array1<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Indices clamped at zero in the final working set (for warm starts).
    pub active: Vec<usize>,
    /// Objective value after each subproblem solve, when tracing is on.
    pub objective_trace: Option<Vec<f64>>,
}

/// `1/2 x' P x - q' x`.
pub fn objective(p: &Array2<f64>, q: &Array1<f64>, x: &Array1<f64>) -> f64 {
    0.5 * x.dot(&p.dot(x)) - q.dot(x)
}

/// Solve `min 1/2 x' P x - q' x` with `x_i >= 0` on the problem's nonneg set.
pub fn solve_qp(problem: &QpProblem, opts: &QpOptions) -> Result<QpSolution> {
    active_set_solve(problem, None, opts)
}

/// Solve `min 1/2 x' P x - q' x` subject to `x >= 0` and, when requested,
/// `sum(x) = 1` (the probability simplex).
pub fn solve_simplex_qp(
    p: Array2<f64>,
    q: Array1<f64>,
    sum_to_one: bool,
) -> Result<QpSolution> {
    let d = p.nrows();
    let problem = QpProblem::new(p, q, (0..d).collect())?;
    let eq: Vec<usize> = (0..d).collect();
    let opts = QpOptions::default();
    if sum_to_one {
        active_set_solve(&problem, Some(&eq), &opts)
    } else {
        active_set_solve(&problem, None, &opts)
    }
}

/// Full engine: nonnegativity on the problem's nonneg set plus an optional
/// constraint `sum over eq_indices of x_i = 1`.
pub fn solve_qp_with_equality(
    problem: &QpProblem,
    eq_indices: Option<&[usize]>,
    opts: &QpOptions,
) -> Result<QpSolution> {
    active_set_solve(problem, eq_indices, opts)
}

fn active_set_solve(
    problem: &QpProblem,
    eq: Option<&[usize]>,
    opts: &QpOptions,
) -> Result<QpSolution> {
    let d = problem.dim();
    let p = &problem.p;
    let q = &problem.q;
    let q_scale = 1.0 + q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let tol = opts.tol * q_scale;

    let mut is_nonneg = vec![false; d];
    for &i in &problem.nonneg {
        is_nonneg[i] = true;
    }
    let mut in_eq = vec![false; d];
    if let Some(idx) = eq {
        for &i in idx {
            if i >= d {
                return Err(UnmixError::arg(format!(
                    "equality index {i} out of range for dimension {d}"
                )));
            }
            in_eq[i] = true;
        }
        if idx.is_empty() {
            return Err(UnmixError::arg("empty equality constraint"));
        }
    }

    // Ridge added once so that the free-block Cholesky cannot hit an exactly
    // singular PSD matrix along the active-set path.
    let trace: f64 = (0..d).map(|i| p[[i, i]]).sum();
    let ridge = opts
        .ridge
        .unwrap_or(1e-10 * trace.abs() / d.max(1) as f64);
    let mut pr = p.clone();
    for i in 0..d {
        pr[[i, i]] += ridge;
    }

    // Clamped working set: warm start when provided, otherwise every
    // sign-constrained variable starts at zero.
    let mut clamped = vec![false; d];
    match &opts.warm_active {
        Some(w) => {
            for &i in w {
                if i < d && is_nonneg[i] {
                    clamped[i] = true;
                }
            }
        }
        None => {
            clamped.clone_from(&is_nonneg);
        }
    }
    // The equality constraint needs at least one unclamped variable.
    if eq.is_some() && (0..d).all(|i| !in_eq[i] || clamped[i]) {
        let first = (0..d).find(|&i| in_eq[i]).unwrap();
        clamped[first] = false;
    }

    // Feasible starting point.
    let mut x = Array1::<f64>::zeros(d);
    if eq.is_some() {
        let free_eq: Vec<usize> = (0..d).filter(|&i| in_eq[i] && !clamped[i]).collect();
        let share = 1.0 / free_eq.len() as f64;
        for &i in &free_eq {
            x[i] = share;
        }
    }

    let mut trace_log = if opts.trace { Some(Vec::new()) } else { None };
    let mut iterations = 0usize;

    loop {
        if iterations >= opts.max_iter {
            let res = kkt_residual(p, q, &x, &is_nonneg, eq.map(|_| &in_eq[..]));
            if res <= tol {
                break;
            }
            return Err(UnmixError::QpNonConvergence {
                iterations,
                residual: res,
            });
        }
        iterations += 1;

        let free: Vec<usize> = (0..d).filter(|&i| !clamped[i]).collect();
        let (x_hat_free, nu_eq) = solve_subproblem(&pr, q, &free, &in_eq, eq.is_some())?;
        let mut x_hat = Array1::<f64>::zeros(d);
        for (k, &i) in free.iter().enumerate() {
            x_hat[i] = x_hat_free[k];
        }

        // Step from x toward the subproblem optimum, stopping at the first
        // violated bound.
        let mut t = 1.0f64;
        let mut blocker: Option<usize> = None;
        for &i in &free {
            if is_nonneg[i] && x_hat[i] < 0.0 {
                let denom = x[i] - x_hat[i];
                let ti = if denom > 0.0 { x[i] / denom } else { 0.0 };
                if ti < t {
                    t = ti;
                    blocker = Some(i);
                }
            }
        }

        match blocker {
            Some(b) => {
                for &i in &free {
                    x[i] += t * (x_hat[i] - x[i]);
                }
                x[b] = 0.0;
                clamped[b] = true;
                if let Some(log) = trace_log.as_mut() {
                    log.push(objective(p, q, &x));
                }
            }
            None => {
                x = x_hat;
                if let Some(log) = trace_log.as_mut() {
                    log.push(objective(p, q, &x));
                }
                // Multiplier check on the clamped set; release the most
                // negative (lowest index on ties, for determinism).
                let g = pr.dot(&x) - q;
                let mut worst = -tol;
                let mut release: Option<usize> = None;
                for i in 0..d {
                    if clamped[i] {
                        let nu = g[i] + if in_eq[i] { nu_eq } else { 0.0 };
                        if nu < worst {
                            worst = nu;
                            release = Some(i);
                        }
                    }
                }
                match release {
                    Some(i) => {
                        clamped[i] = false;
                    }
                    None => break,
                }
            }
        }
    }

    for i in 0..d {
        if is_nonneg[i] && x[i] < 0.0 {
            x[i] = 0.0;
        }
    }
    let residual = kkt_residual(p, q, &x, &is_nonneg, eq.map(|_| &in_eq[..]));
    let active = (0..d).filter(|&i| clamped[i]).collect();
    Ok(QpSolution {
        x,
        iterations,
        kkt_residual: residual,
        active,
        objective_trace: trace_log,
    })
}

/// Minimize over the free block with clamped variables at zero; returns the
/// free-block solution and the equality multiplier (0 when unconstrained).
fn solve_subproblem(
    pr: &Array2<f64>,
    q: &Array1<f64>,
    free: &[usize],
    in_eq: &[bool],
    has_eq: bool,
) -> Result<(Array1<f64>, f64)> {
    let f = free.len();
    if f == 0 {
        return Ok((Array1::zeros(0), 0.0));
    }
    let mut pff = Array2::<f64>::zeros((f, f));
    let mut qf = Array1::<f64>::zeros(f);
    for (a, &i) in free.iter().enumerate() {
        qf[a] = q[i];
        for (b, &j) in free.iter().enumerate() {
            pff[[a, b]] = pr[[i, j]];
        }
    }
    let l = cholesky(&pff).ok_or_else(|| {
        UnmixError::arg(
            "P is singular on the free subspace; supply a positive ridge",
        )
    })?;
    let base = cholesky_solve(&l, &qf);
    if !has_eq {
        return Ok((base, 0.0));
    }
    let a_f = Array1::from_shape_fn(f, |k| if in_eq[free[k]] { 1.0 } else { 0.0 });
    if a_f.iter().all(|v| *v == 0.0) {
        return Err(UnmixError::QpInfeasible(
            "equality constraint has no free variable".into(),
        ));
    }
    let pa = cholesky_solve(&l, &a_f);
    let nu = (a_f.dot(&base) - 1.0) / a_f.dot(&pa);
    Ok((&base - &(&pa * nu), nu))
}

/// Max-norm KKT residual of the original (unridged) problem: stationarity on
/// free variables, bound violation, complementary slackness, and the
/// equality gap when present.
fn kkt_residual(
    p: &Array2<f64>,
    q: &Array1<f64>,
    x: &Array1<f64>,
    is_nonneg: &[bool],
    in_eq: Option<&[bool]>,
) -> f64 {
    let d = x.len();
    let g = p.dot(x) - q;
    // Estimate the equality multiplier from the least-squares fit over
    // variables that are strictly interior.
    let nu_eq = match in_eq {
        Some(mask) => {
            let mut sum = 0.0;
            let mut count = 0.0;
            for i in 0..d {
                if mask[i] && (!is_nonneg[i] || x[i] > 0.0) {
                    sum -= g[i];
                    count += 1.0;
                }
            }
            if count > 0.0 {
                sum / count
            } else {
                0.0
            }
        }
        None => 0.0,
    };
    let mut res = 0.0f64;
    for i in 0..d {
        let gi = g[i] + if in_eq.map_or(false, |m| m[i]) { nu_eq } else { 0.0 };
        if is_nonneg[i] {
            res = res.max(-x[i]); // bound violation
            res = res.max((x[i] * gi).abs()); // complementary slackness
            if x[i] > 0.0 {
                res = res.max(gi.abs()); // stationarity off the bound
            } else {
                res = res.max((-gi).max(0.0)); // multiplier sign at the bound
            }
        } else {
            res = res.max(gi.abs());
        }
    }
    if let Some(mask) = in_eq {
        let s: f64 = (0..d).filter(|&i| mask[i]).map(|i| x[i]).sum();
        res = res.max((s - 1.0).abs());
    }
    res
}
