//! The split-Bregman outer loop for spatially regularized unmixing.
//!
//! Each outer iteration performs three exact minimizations and a pair of
//! Bregman updates:
//!
//! * Step 1: per-pixel proximal solves with anchor `xi_n = V_n + D1_n`,
//!   distributed across a thread pool (pure solves, shared read-only data).
//! * Step 2: the closed-form `V` update through the FFT-diagonalized
//!   `(I + H H')` solve.
//! * Step 3: the soft-threshold `U` update.
//! * `D1 += V - A`, `D2 += V H - U`.
//!
//! The loop stops when both split residuals `|V - A|_F / (N R)` and
//! `|U - V H|_F / (4 N R)` drop below the tolerance, or after `max_outer`
//! iterations. The penalty `zeta` can be rebalanced between iterations from
//! the primal and dual residual norms.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::error::{Result, UnmixError};
use crate::kernel::GramMatrix;
use crate::pixelwise::{
    solve_pixel_kernel_with_options, solve_pixel_linear_with_options, DualSolution, PixelModel,
};
use crate::qp::QpOptions;
use crate::scene::{AbundanceMatrix, EndmemberMatrix, SceneCube};
use crate::spatial::{update_u, update_v, CirculantSolver, GridStencil, SplitMatrices};

/// Configuration of the outer loop.
#[derive(Debug, Clone)]
pub struct BregmanConfig {
    /// Spatial regularization weight (eta >= 0).
    pub eta: f64,
    /// Initial penalty parameter (zeta0 > 0).
    pub zeta0: f64,
    /// Outer iteration cap.
    pub max_outer: usize,
    /// Residual tolerance for both split residuals.
    pub tol: f64,
    /// Rebalance zeta from residual norms between iterations.
    pub adapt_zeta: bool,
    /// Per-pixel model used in Step 1.
    pub model: PixelModel,
    /// Replace failed pixels by the uniform abundance instead of aborting.
    pub skip_bad_pixels: bool,
    /// Dump per-iteration QP objectives to stderr (debugging).
    pub qp_trace: bool,
}

impl BregmanConfig {
    pub fn new(model: PixelModel) -> Self {
        BregmanConfig {
            eta: 0.1,
            zeta0: 1.0,
            max_outer: 10,
            tol: 1e-5,
            adapt_zeta: true,
            model,
            skip_bad_pixels: false,
            qp_trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta < 0.0 {
            return Err(UnmixError::arg(format!("eta must be >= 0, got {}", self.eta)));
        }
        if !(self.zeta0 > 0.0) {
            return Err(UnmixError::arg(format!(
                "zeta0 must be positive, got {}",
                self.zeta0
            )));
        }
        if self.max_outer < 1 {
            return Err(UnmixError::arg("max_outer must be at least 1"));
        }
        Ok(())
    }
}

/// Residuals and diagnostics of one outer iteration.
#[derive(Debug, Clone, Copy)]
pub struct IterationStats {
    pub iter: usize,
    /// `|V - A|_F / (N R)`.
    pub rho_a: f64,
    /// `|U - V H|_F / (4 N R)`.
    pub rho_u: f64,
    /// `sqrt(|V - A|_F^2 + |V H - U|_F^2)`.
    pub r_primal: f64,
    /// `zeta * sqrt(|dV|_F^2 + |dV H|_F^2)` with `dV` the V change.
    pub r_dual: f64,
    pub zeta: f64,
    /// Data-fit objective plus `eta |U|_{1,1}`.
    pub objective: f64,
}

/// Iterates of the outer loop.
#[derive(Debug, Clone)]
pub struct BregmanState {
    pub abundances: Array2<f64>,
    pub split: SplitMatrices,
    pub zeta: f64,
    /// Completed outer iterations.
    pub k: usize,
    pub history: Vec<IterationStats>,
    /// Step-1 dual solutions of the current iterate (kernel methods).
    pub duals: Option<Vec<DualSolution>>,
    /// Pixels replaced by the uniform abundance under `skip_bad_pixels`.
    pub skipped_pixels: Vec<usize>,
    /// Per-pixel QP working sets carried between iterations.
    warm: Vec<Option<Vec<usize>>>,
    /// Per-pixel data-fit terms of the current iterate.
    fit_terms: Vec<f64>,
}

struct PixelOutcome {
    alpha: Array1<f64>,
    fit_term: f64,
    dual: Option<DualSolution>,
    warm: Option<Vec<usize>>,
    skipped: bool,
}

fn solve_one_pixel(
    n: usize,
    cube: &SceneCube,
    m: &EndmemberMatrix,
    k: Option<&GramMatrix>,
    model: &PixelModel,
    zeta: f64,
    xi: Option<&Array1<f64>>,
    warm: Option<&Vec<usize>>,
    skip_bad: bool,
    qp_trace: bool,
) -> Result<PixelOutcome> {
    let reflect = cube.pixel(n);
    let opts = QpOptions {
        warm_active: warm.cloned(),
        trace: qp_trace,
        ..QpOptions::default()
    };
    let solved: Result<PixelOutcome> = if model.method.is_kernel() {
        let gram = k.ok_or_else(|| UnmixError::arg("kernel method requires a gram matrix"))?;
        solve_pixel_kernel_with_options(&reflect, m, gram, model, zeta, xi, &opts).map(|sol| {
            let fit_term = 0.5
                * (sol.alpha.dot(&sol.alpha)
                    + sol.beta.dot(&gram.apply(&sol.beta))
                    + sol.residual.dot(&sol.residual) / model.mu);
            PixelOutcome {
                warm: Some(sol.qp_active.clone()),
                fit_term,
                alpha: sol.alpha.clone(),
                dual: Some(sol),
                skipped: false,
            }
        })
    } else {
        solve_pixel_linear_with_options(&reflect, m, model, zeta, xi, &opts).map(|alpha| {
            let resid = &reflect - &m.matrix().dot(&alpha);
            PixelOutcome {
                fit_term: 0.5 * resid.dot(&resid),
                alpha,
                dual: None,
                warm: None,
                skipped: false,
            }
        })
    };
    match solved {
        Ok(out) => Ok(out),
        Err(_) if skip_bad => {
            let r = m.count();
            Ok(PixelOutcome {
                alpha: Array1::from_elem(r, 1.0 / r as f64),
                fit_term: 0.0,
                dual: None,
                warm: None,
                skipped: true,
            })
        }
        Err(e) => Err(e.at_pixel(n)),
    }
}

/// Solve every pixel independently (no spatial coupling, `zeta = 0`).
fn pixel_sweep(
    cube: &SceneCube,
    m: &EndmemberMatrix,
    k: Option<&GramMatrix>,
    config: &BregmanConfig,
    zeta: f64,
    anchors: Option<&SplitMatrices>,
    warm: &[Option<Vec<usize>>],
) -> Result<Vec<PixelOutcome>> {
    (0..cube.num_pixels())
        .into_par_iter()
        .map(|n| {
            let xi = anchors.map(|s| s.v.column(n).to_owned() + d1_column(s, n));
            solve_one_pixel(
                n,
                cube,
                m,
                k,
                &config.model,
                zeta,
                xi.as_ref(),
                warm[n].as_ref(),
                config.skip_bad_pixels,
                config.qp_trace,
            )
        })
        .collect()
}

fn d1_column(split: &SplitMatrices, n: usize) -> Array1<f64> {
    split.d1.column(n).to_owned()
}

fn frob_sq(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// Warm-start initialization: `A` from the unregularized per-pixel solves,
/// `V = A`, `U = V H`, `D1 = D2 = 0`, `zeta = zeta0`.
pub fn init_state(
    cube: &SceneCube,
    m: &EndmemberMatrix,
    k: Option<&GramMatrix>,
    config: &BregmanConfig,
) -> Result<BregmanState> {
    config.validate()?;
    let n = cube.num_pixels();
    let r = m.count();
    let stencil = GridStencil::new(cube.width(), cube.height())?;
    let warm: Vec<Option<Vec<usize>>> = vec![None; n];
    let outcomes = pixel_sweep(cube, m, k, config, 0.0, None, &warm)?;

    let mut state = BregmanState {
        abundances: Array2::zeros((r, n)),
        split: SplitMatrices::shaped(r, n),
        zeta: config.zeta0,
        k: 0,
        history: Vec::new(),
        duals: config.model.method.is_kernel().then(Vec::new),
        skipped_pixels: Vec::new(),
        warm: vec![None; n],
        fit_terms: vec![0.0; n],
    };
    absorb_outcomes(&mut state, outcomes);
    state.split.v.assign(&state.abundances);
    state.split.u = stencil.apply_h(&state.split.v)?;
    Ok(state)
}

fn absorb_outcomes(state: &mut BregmanState, outcomes: Vec<PixelOutcome>) {
    state.skipped_pixels.clear();
    let mut duals = state.duals.take().map(|mut d| {
        d.clear();
        d
    });
    for (n, out) in outcomes.into_iter().enumerate() {
        state.abundances.column_mut(n).assign(&out.alpha);
        state.fit_terms[n] = out.fit_term;
        state.warm[n] = out.warm;
        if out.skipped {
            state.skipped_pixels.push(n);
        }
        if let Some(d) = duals.as_mut() {
            if let Some(sol) = out.dual {
                d.push(sol);
            }
        }
    }
    // a skipped pixel leaves no dual; drop the collection rather than
    // returning one that is misaligned with pixel indices
    if let Some(d) = &duals {
        if d.len() != state.abundances.ncols() {
            duals = None;
        }
    }
    state.duals = duals;
}

/// One outer iteration: Steps 1-3, the D updates, and the residual record.
pub fn outer_iteration(
    state: &mut BregmanState,
    cube: &SceneCube,
    m: &EndmemberMatrix,
    k: Option<&GramMatrix>,
    config: &BregmanConfig,
    solver: &CirculantSolver,
) -> Result<()> {
    let stencil = solver.stencil();
    let n = cube.num_pixels();
    let r = m.count();
    state.split.validate(r, n)?;

    // Step 1: proximal per-pixel solves with xi = V + D1
    let outcomes = pixel_sweep(
        cube,
        m,
        k,
        config,
        state.zeta,
        Some(&state.split),
        &state.warm,
    )?;
    absorb_outcomes(state, outcomes);

    // Step 2: closed-form V update
    let v_prev = state.split.v.clone();
    state.split.v = update_v(
        &state.abundances,
        &state.split.u,
        &state.split.d1,
        &state.split.d2,
        solver,
    )?;

    // Step 3: soft-threshold U update
    state.split.u = update_u(
        &state.split.v,
        &state.split.d2,
        config.eta,
        state.zeta,
        &stencil,
    )?;

    // Bregman updates
    let v_a = &state.split.v - &state.abundances;
    let vh = stencil.apply_h(&state.split.v)?;
    let vh_u = &vh - &state.split.u;
    state.split.d1 += &v_a;
    state.split.d2 += &vh_u;

    // residuals
    let nr = (n * r) as f64;
    let rho_a = frob_sq(&v_a).sqrt() / nr;
    let rho_u = frob_sq(&vh_u).sqrt() / (4.0 * nr);
    let r_primal = (frob_sq(&v_a) + frob_sq(&vh_u)).sqrt();
    let dv = &state.split.v - &v_prev;
    let dvh = stencil.apply_h(&dv)?;
    let r_dual = state.zeta * (frob_sq(&dv) + frob_sq(&dvh)).sqrt();
    let objective = state.fit_terms.iter().sum::<f64>()
        + config.eta * state.split.u.iter().map(|v| v.abs()).sum::<f64>();

    state.k += 1;
    state.history.push(IterationStats {
        iter: state.k,
        rho_a,
        rho_u,
        r_primal,
        r_dual,
        zeta: state.zeta,
        objective,
    });
    Ok(())
}

/// Residual balancing of the penalty: double `zeta` (halving `D`) when the
/// primal residual dominates by 10x, halve it (doubling `D`) in the
/// opposite case. `zeta` stays inside `[1e-6, 1e6]`; an update that would
/// leave the range is skipped entirely.
pub fn adapt_penalty(state: &mut BregmanState) {
    let Some(last) = state.history.last() else {
        return;
    };
    let (r_p, r_d) = (last.r_primal, last.r_dual);
    let (factor, d_factor) = if r_p > 10.0 * r_d {
        (2.0, 0.5)
    } else if r_d > 10.0 * r_p {
        (0.5, 2.0)
    } else {
        return;
    };
    let next = state.zeta * factor;
    if !(1e-6..=1e6).contains(&next) {
        return;
    }
    state.zeta = next;
    state.split.d1 *= d_factor;
    state.split.d2 *= d_factor;
}

/// Nonnegativity and sum-to-one slack of the returned abundances.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintReport {
    pub max_negativity: f64,
    /// Worst `|1'alpha - 1|` over pixels; zero when the constraint is off.
    pub max_sum_violation: f64,
}

/// Result of a full spatially regularized run.
#[derive(Debug)]
pub struct RunOutcome {
    pub abundances: AbundanceMatrix,
    pub history: Vec<IterationStats>,
    pub converged: bool,
    pub constraints: ConstraintReport,
    pub skipped_pixels: Vec<usize>,
    /// Final Step-1 duals (kernel methods only).
    pub duals: Option<Vec<DualSolution>>,
}

/// Run the split-Bregman loop to completion. Returns the constrained
/// iterate `A` (not the unconstrained surrogate `V`) together with the
/// iteration history; hitting the iteration cap is a success with
/// `converged = false`.
pub fn run(
    cube: &SceneCube,
    m: &EndmemberMatrix,
    k: Option<&GramMatrix>,
    config: &BregmanConfig,
) -> Result<RunOutcome> {
    config.validate()?;
    let stencil = GridStencil::new(cube.width(), cube.height())?;
    let solver = CirculantSolver::new(stencil);
    let mut state = init_state(cube, m, k, config)?;
    let mut converged = false;
    while state.k < config.max_outer {
        outer_iteration(&mut state, cube, m, k, config, &solver)?;
        let last = state.history.last().unwrap();
        if last.rho_a < config.tol && last.rho_u < config.tol {
            converged = true;
            break;
        }
        if config.adapt_zeta {
            adapt_penalty(&mut state);
        }
    }
    finish(state, config, converged)
}

fn finish(state: BregmanState, config: &BregmanConfig, converged: bool) -> Result<RunOutcome> {
    let a = state.abundances;
    let max_negativity = -a.iter().cloned().fold(0.0f64, |m, v| m.min(v));
    let max_sum_violation = if config.model.sum_to_one {
        a.columns()
            .into_iter()
            .map(|c| (c.sum() - 1.0).abs())
            .fold(0.0f64, f64::max)
    } else {
        0.0
    };
    let abundances = AbundanceMatrix::new(a, config.model.sum_to_one)?;
    Ok(RunOutcome {
        abundances,
        history: state.history,
        converged,
        constraints: ConstraintReport {
            max_negativity,
            max_sum_violation,
        },
        skipped_pixels: state.skipped_pixels,
        duals: state.duals,
    })
}

/// Per-pixel unmixing without spatial regularization (the `zeta = 0`
/// solvers applied independently to every pixel).
pub fn unmix_pixelwise(
    cube: &SceneCube,
    m: &EndmemberMatrix,
    k: Option<&GramMatrix>,
    model: &PixelModel,
    skip_bad_pixels: bool,
) -> Result<RunOutcome> {
    let mut config = BregmanConfig::new(*model);
    config.skip_bad_pixels = skip_bad_pixels;
    config.eta = 0.0;
    let state = init_state(cube, m, k, &config)?;
    finish(state, &config, true)
}
