//! The three optimization procedures: Levenberg–Marquardt ascent for the
//! dual potentials, Lloyd's algorithm with Wolfe stabilization, and Newton's
//! method with mass-preconditioned conjugate gradient.
//!
//! Both outer solvers minimize over positions on Ω = [0,1]²; the problem
//! mode decides what happens to the potentials:
//!
//! - **Stippling** minimizes the Voronoi energy `G_S(z) = g(0, z, m̃)`
//!   (masses are free, so the optimal φ is 0 and `m̃ᵢ = ν(𝒱ᵢ)`),
//! - **Blue Noise** minimizes `G_B(z) = g(φ*(z), z, m)` with fixed masses,
//!   re-solving the dual to get φ*(z) whenever z moves (including inside
//!   line searches), warm-started from the previous φ*.
//!
//! Every accepted step, inner or outer, passes the first Wolfe condition
//! with constant 1e-4; the second Wolfe condition is deliberately not
//! checked. Outer convergence is declared on the M-weighted gradient norm
//! `(Σᵢ Mᵢ‖zᵢ−z̄ᵢ‖²)^½`; the plain ℓ² norm is logged alongside it.

use crate::density::BilinearDensity;
use crate::error::{GeometryError, SolverError, TransportError};
use crate::geom::{Point, Rect};
use crate::laguerre::{build_diagram, voronoi_diagram, DiracCloud, LaguerreDiagram};
use crate::transport::{
    assemble_hessian, first_derivatives, second_derivatives, FirstOrder, ReducedHessian,
    TransportHessian,
};
use nalgebra::{Cholesky, DVector};
use std::time::Instant;

/// Which problem the outer solvers optimize.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ProblemMode {
    #[default]
    Stippling,
    BlueNoise,
}

impl std::fmt::Display for ProblemMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProblemMode::Stippling => write!(f, "stipple"),
            ProblemMode::BlueNoise => write!(f, "bluenoise"),
        }
    }
}

/// Solver tolerances and budgets. `Default` gives the documented defaults.
#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub mode: ProblemMode,
    /// ∞-norm target for ∂g/∂φ in the dual solve.
    pub dual_tol: f64,
    /// M-norm target for the outer gradient.
    pub outer_tol: f64,
    pub max_outer: usize,
    /// Iteration budget of one dual solve.
    pub max_inner: usize,
    pub wolfe_c1: f64,
    /// Initial Levenberg–Marquardt σ (damping is 1/σ; σ halves on rejected
    /// ascent steps and resets every LM iteration).
    pub lm_sigma0: f64,
    /// CG iteration cap; `None` means 2n (the system dimension).
    pub cg_max: Option<usize>,
    /// Relative residual target inside CG.
    pub cg_tol: f64,
    /// Loosen the dual tolerance while the outer gradient is large
    /// (forcing-sequence style); the final iterate is always polished at
    /// `dual_tol`.
    pub inner_adaptive: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mode: ProblemMode::Stippling,
            dual_tol: 1e-10,
            outer_tol: 1e-9,
            max_outer: 500,
            max_inner: 100,
            wolfe_c1: 1e-4,
            lm_sigma0: 1.0,
            cg_max: None,
            cg_tol: 1e-10,
            inner_adaptive: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |reason: &str| Err(SolverError::BadConfig { reason: reason.to_string() });
        if !(self.dual_tol > 0.0 && self.outer_tol > 0.0 && self.cg_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.wolfe_c1 > 0.0 && self.wolfe_c1 < 1.0) {
            return bad("wolfe_c1 must lie strictly between 0 and 1");
        }
        if !(self.lm_sigma0 > 0.0 && self.lm_sigma0.is_finite()) {
            return bad("lm_sigma0 must be positive and finite");
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return bad("iteration budgets must be at least 1");
        }
        Ok(())
    }

    fn cg_cap(&self, n: usize) -> usize {
        self.cg_max.unwrap_or(2 * n).max(1)
    }
}

/// One outer-iteration row of a solver trace. Row 0 describes the initial
/// configuration (σ, CG and dual counters zero).
#[derive(Clone, Debug)]
pub struct TraceRecord {
    pub iter: usize,
    pub objective: f64,
    pub grad_m_norm: f64,
    pub grad_l2_norm: f64,
    pub step_sigma: f64,
    pub cg_iters: usize,
    pub pd_flag: bool,
    pub dual_iters: usize,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default)]
pub struct SolverTrace {
    pub records: Vec<TraceRecord>,
}

impl SolverTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// True when the objective strictly decreases across consecutive rows —
    /// the Wolfe guarantee for accepted steps.
    pub fn objective_strictly_decreasing(&self) -> bool {
        self.records.windows(2).all(|w| w[1].objective < w[0].objective)
    }
}

/// Why an outer solver stopped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// The Wolfe backtracking shrank σ below 1e-12 without an acceptable
    /// step.
    LineSearchStall { sigma: f64 },
    /// The inner dual solve stopped short of `dual_tol` (Blue Noise only).
    DualStall,
}

impl Termination {
    pub fn is_converged(&self) -> bool {
        matches!(self, Termination::Converged)
    }
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Termination::Converged => write!(f, "converged"),
            Termination::MaxIterations => write!(f, "max-iterations"),
            Termination::LineSearchStall { sigma } => {
                write!(f, "line-search-stall(sigma={sigma:.3e})")
            }
            Termination::DualStall => write!(f, "dual-stall"),
        }
    }
}

/// Final state of an outer solve. Artifacts are meaningful for every
/// termination kind; only hard errors abort without a report.
#[derive(Clone, Debug)]
pub struct SolveReport {
    pub positions: Vec<Point>,
    pub potentials: Vec<f64>,
    /// ν-masses of the final cells.
    pub cell_masses: Vec<f64>,
    pub objective: f64,
    pub grad_m_norm: f64,
    pub grad_l2_norm: f64,
    /// Accepted outer iterations.
    pub iterations: usize,
    pub termination: Termination,
    pub trace: SolverTrace,
}

/// Result of one dual (φ) solve.
#[derive(Clone, Debug)]
pub struct DualReport {
    pub iterations: usize,
    pub converged: bool,
    pub grad_inf_norm: f64,
    /// g at the returned potentials.
    pub value: f64,
    /// g after the initial evaluation and every accepted step.
    pub values: Vec<f64>,
}

fn mean_zeroed(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}

/// Maximizes the concave dual g(·, z, m) over mean-zero potentials with a
/// Levenberg–Marquardt ascent: each step solves `(μI − H_φφ) d = ∇_φ g`
/// (positive definite for every μ > 0), takes φ⁺ = φ + d, and halves σ in
/// `μ = ‖∇g‖_∞/σ` until the first Wolfe ascent condition holds. Scaling the
/// damping by the gradient norm keeps steps cautious far from the optimum
/// and lets μ → 0 near it, so the terminal phase is quadratically
/// convergent — a fixed damping would stall with the objective improvements
/// below machine precision long before a 1e-10 gradient norm is reached.
///
/// Returns the best potentials found together with a [`DualReport`];
/// `converged == false` means the budget or the line search ran out.
/// A cell that stays empty for 20 accepted steps triggers one global
/// backtrack toward the last all-nonempty iterate, then
/// [`SolverError::EmptyCellStall`].
pub fn solve_dual(
    cloud: &DiracCloud,
    density: &BilinearDensity,
    phi_init: &[f64],
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, DualReport), SolverError> {
    cfg.validate()?;
    let n = cloud.n();
    if phi_init.len() != n {
        return Err(SolverError::BadConfig {
            reason: format!("phi_init has {} entries for {} sites", phi_init.len(), n),
        });
    }

    let mut phi = mean_zeroed(phi_init);
    let mut work = cloud.clone();
    work.set_potentials(phi.clone())?;
    let mut diagram = build_diagram(&work, Rect::unit())?;
    let mut first = first_derivatives(&work, density, &diagram)?;
    let mut values = vec![first.value];

    let mut empty_streak = vec![0u32; n];
    let mut last_feasible: Option<Vec<f64>> =
        first.cell_masses.iter().all(|&m| m > 0.0).then(|| phi.clone());
    let mut did_backtrack = false;

    let mut iterations = 0;
    loop {
        let grad_inf = first.grad_phi.iter().fold(0.0_f64, |a, g| a.max(g.abs()));
        if grad_inf <= cfg.dual_tol {
            return Ok((
                phi,
                DualReport {
                    iterations,
                    converged: true,
                    grad_inf_norm: grad_inf,
                    value: first.value,
                    values,
                },
            ));
        }
        if iterations >= cfg.max_inner {
            return Ok((
                phi,
                DualReport {
                    iterations,
                    converged: false,
                    grad_inf_norm: grad_inf,
                    value: first.value,
                    values,
                },
            ));
        }
        iterations += 1;

        let hessian = assemble_hessian(&work, density, &diagram, &first.cell_masses)?;
        let mut sigma = cfg.lm_sigma0;
        let mut accepted = false;
        // First (least damped) trial, kept for the noise-floor polish below.
        let mut full_step: Option<(f64, Vec<f64>, LaguerreDiagram, FirstOrder)> = None;
        while sigma >= 1e-12 {
            let Some(d) = solve_damped_system(&hessian, &first.grad_phi, grad_inf / sigma) else {
                sigma *= 0.5;
                continue;
            };
            let slope: f64 = first.grad_phi.iter().zip(&d).map(|(g, di)| g * di).sum();
            let trial: Vec<f64> = mean_zeroed(
                &phi.iter().zip(&d).map(|(p, di)| p + di).collect::<Vec<_>>(),
            );
            work.set_potentials(trial.clone())?;
            let trial_diagram = build_diagram(&work, Rect::unit())?;
            let trial_first = first_derivatives(&work, density, &trial_diagram)?;
            if trial_first.value > first.value + cfg.wolfe_c1 * slope {
                phi = trial;
                diagram = trial_diagram;
                first = trial_first;
                values.push(first.value);
                accepted = true;
                break;
            }
            if full_step.is_none() {
                full_step = Some((slope, trial, trial_diagram, trial_first));
            }
            sigma *= 0.5;
        }
        if !accepted {
            // Near the optimum the per-step gain g²/λ drops below the
            // objective's own summation roundoff before ‖∇g‖_∞ reaches the
            // tolerance; no strict increase is certifiable there. When the
            // predicted gain sits at that noise floor, fall back to accepting
            // the least-damped step on strict gradient decrease alone
            // (Newton on ∇g = 0, which the value can no longer referee).
            let noise = f64::EPSILON * first.value.abs() * (64 + n) as f64;
            let polish = full_step.and_then(|(slope, trial, trial_diagram, trial_first)| {
                let trial_inf =
                    trial_first.grad_phi.iter().fold(0.0_f64, |a, g| a.max(g.abs()));
                (slope <= noise && trial_inf < grad_inf)
                    .then_some((trial, trial_diagram, trial_first))
            });
            match polish {
                Some((trial, trial_diagram, trial_first)) => {
                    phi = trial;
                    diagram = trial_diagram;
                    first = trial_first;
                    values.push(first.value);
                }
                None => {
                    let grad_inf =
                        first.grad_phi.iter().fold(0.0_f64, |a, g| a.max(g.abs()));
                    return Ok((
                        phi,
                        DualReport {
                            iterations,
                            converged: false,
                            grad_inf_norm: grad_inf,
                            value: first.value,
                            values,
                        },
                    ));
                }
            }
        }

        // Empty-cell bookkeeping on the accepted iterate.
        let mut stalled_site = None;
        for i in 0..n {
            if first.cell_masses[i] <= 0.0 {
                empty_streak[i] += 1;
                if empty_streak[i] >= 20 {
                    stalled_site = Some(i);
                }
            } else {
                empty_streak[i] = 0;
            }
        }
        if first.cell_masses.iter().all(|&m| m > 0.0) {
            last_feasible = Some(phi.clone());
        }
        if let Some(site) = stalled_site {
            match (&last_feasible, did_backtrack) {
                (Some(feasible), false) => {
                    did_backtrack = true;
                    phi = mean_zeroed(
                        &phi.iter().zip(feasible).map(|(a, b)| 0.5 * (a + b)).collect::<Vec<_>>(),
                    );
                    work.set_potentials(phi.clone())?;
                    diagram = build_diagram(&work, Rect::unit())?;
                    first = first_derivatives(&work, density, &diagram)?;
                    values.push(first.value);
                    empty_streak.fill(0);
                }
                _ => {
                    return Err(SolverError::EmptyCellStall {
                        site,
                        target_mass: cloud.masses()[site],
                        iterations,
                    });
                }
            }
        }
    }
}

/// Solves (damp·I − H_φφ + c·11ᵀ) d = grad: dense Cholesky for moderate n,
/// Jacobi-preconditioned CG above that. The rank-one term (c = mean
/// diagonal / n) lifts the constants direction — the kernel of −H_φφ — so
/// the system stays well-conditioned for arbitrarily small damping; since d
/// is re-centered by the caller, the lift never changes the accepted step.
/// Returns None only on numerical failure, which the caller treats as a
/// rejected trial.
fn solve_damped_system(h: &TransportHessian, grad: &[f64], damp: f64) -> Option<Vec<f64>> {
    let n = h.n;
    let shift = h.phiphi_diag.iter().map(|d| damp - d).sum::<f64>() / (n * n) as f64;
    if n <= 600 {
        let mut a = -h.phiphi_dense();
        for r in 0..n {
            a[(r, r)] += damp;
            for c in 0..n {
                a[(r, c)] += shift;
            }
        }
        let chol = Cholesky::new(a)?;
        let mut d = DVector::from_column_slice(grad);
        chol.solve_mut(&mut d);
        return Some(d.as_slice().to_vec());
    }
    // Conjugate gradient on the (always SPD) damped system.
    let apply = |x: &[f64], out: &mut [f64]| {
        h.apply_phiphi(x, out);
        let sum: f64 = x.iter().sum();
        for i in 0..n {
            out[i] = damp * x[i] - out[i] + shift * sum;
        }
    };
    let jacobi: Vec<f64> = h.phiphi_diag.iter().map(|d| 1.0 / (damp - d + shift)).collect();
    let mut x = vec![0.0; n];
    let mut r = grad.to_vec();
    let norm0 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm0 == 0.0 {
        return Some(x);
    }
    let mut y: Vec<f64> = r.iter().zip(&jacobi).map(|(a, b)| a * b).collect();
    let mut p = y.clone();
    let mut rho: f64 = r.iter().zip(&y).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    for _ in 0..4 * n {
        apply(&p, &mut ap);
        let curv: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(curv > 0.0) {
            break; // only possible through rounding; use the current iterate
        }
        let alpha = rho / curv;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= 1e-12 * norm0 {
            break;
        }
        for i in 0..n {
            y[i] = r[i] * jacobi[i];
        }
        let rho_new: f64 = r.iter().zip(&y).map(|(a, b)| a * b).sum();
        let beta = rho_new / rho;
        rho = rho_new;
        for i in 0..n {
            p[i] = y[i] + beta * p[i];
        }
    }
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// Result of one [`cg_lanczos`] run.
#[derive(Clone, Debug)]
pub struct CgResult {
    pub direction: Vec<Point>,
    /// True when every Lanczos pivot stayed positive (the operator looked
    /// positive definite on the explored Krylov subspace).
    pub pd_flag: bool,
    pub iterations: usize,
    /// A |pivot| < 1e-14 breakdown forced the steepest-descent fallback.
    pub breakdown: bool,
}

/// Mass-preconditioned conjugate gradient for the Newton system
/// `H d = −rhs`, monitoring positive definiteness through the Lanczos
/// tridiagonal pivot recurrence (`pivot_k = T_kk − off_k²/pivot_{k−1}`,
/// which equals 1/α_k in exact arithmetic, so a pivot sign flip is exactly
/// a negative-curvature event).
///
/// - Negative pivot on the first iteration: returns the preconditioned
///   steepest-descent direction −M⁻¹·rhs (for the transport Hessian this is
///   the Lloyd direction) with `pd_flag = false`.
/// - Negative pivot later: returns the projected solution from the last
///   all-positive Krylov subspace with `pd_flag = false`.
/// - |pivot| < 1e-14: numerical breakdown — steepest descent, flagged.
pub fn cg_lanczos(
    apply: impl Fn(&[Point], &mut [Point]),
    rhs: &[Point],
    precond_mass: &[f64],
    cg_max: usize,
    tol: f64,
) -> CgResult {
    let n = rhs.len();
    assert_eq!(precond_mass.len(), n, "one preconditioner mass per site");
    let inv_mass: Vec<f64> = precond_mass.iter().map(|&m| 1.0 / m.max(1e-12)).collect();

    let b: Vec<Point> = rhs.iter().map(|g| -g).collect();
    let norm0 = b.iter().map(|p| p.norm_squared()).sum::<f64>().sqrt();
    let steepest: Vec<Point> = b.iter().zip(&inv_mass).map(|(p, &w)| p * w).collect();
    if norm0 == 0.0 {
        return CgResult {
            direction: vec![Point::zeros(); n],
            pd_flag: true,
            iterations: 0,
            breakdown: false,
        };
    }

    let mut x = vec![Point::zeros(); n];
    let mut r = b;
    let mut y = steepest.clone();
    let mut p = y.clone();
    let mut rho: f64 = r.iter().zip(&y).map(|(a, b)| a.dot(b)).sum();
    let mut hp = vec![Point::zeros(); n];

    let mut prev_pivot = 0.0_f64;
    let mut prev_alpha = 0.0_f64;
    let mut prev_beta = 0.0_f64;

    for k in 1..=cg_max {
        apply(&p, &mut hp);
        let curv: f64 = p.iter().zip(&hp).map(|(a, b)| a.dot(b)).sum();
        // Lanczos pivot from the CG coefficients: T_kk = 1/α_k +
        // β_{k−1}/α_{k−1}, off_k² = β_{k−1}/α_{k−1}².
        let inv_alpha = curv / rho;
        let pivot = if k == 1 {
            inv_alpha
        } else {
            inv_alpha + prev_beta / prev_alpha
                - (prev_beta / (prev_alpha * prev_alpha)) / prev_pivot
        };
        if pivot <= 0.0 || curv <= 0.0 {
            return if k == 1 {
                CgResult { direction: steepest, pd_flag: false, iterations: 0, breakdown: false }
            } else {
                CgResult { direction: x, pd_flag: false, iterations: k - 1, breakdown: false }
            };
        }
        if pivot.abs() < 1e-14 {
            return CgResult { direction: steepest, pd_flag: false, iterations: 0, breakdown: true };
        }
        let alpha = rho / curv;
        for i in 0..n {
            x[i] += p[i] * alpha;
            r[i] -= hp[i] * alpha;
        }
        let rnorm = r.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
        if rnorm <= tol * norm0 {
            return CgResult { direction: x, pd_flag: true, iterations: k, breakdown: false };
        }
        for i in 0..n {
            y[i] = r[i] * inv_mass[i];
        }
        let rho_new: f64 = r.iter().zip(&y).map(|(a, b)| a.dot(b)).sum();
        let beta = rho_new / rho;
        for i in 0..n {
            p[i] = y[i] + p[i] * beta;
        }
        rho = rho_new;
        prev_pivot = pivot;
        prev_alpha = alpha;
        prev_beta = beta;
    }
    CgResult { direction: x, pd_flag: true, iterations: cg_max, breakdown: false }
}

/// Shared per-configuration evaluation: diagram, first-order data, and (in
/// Blue Noise mode) the warm-started dual solve.
struct Eval {
    diagram: LaguerreDiagram,
    first: FirstOrder,
    dual_iters: usize,
    dual_converged: bool,
}

enum TrialError {
    /// The trial configuration cannot be evaluated from the current state —
    /// coincident or non-finite sites, or a dual solve that starved a cell
    /// when warm-started across too large a step. The line search treats
    /// this as a rejection and tries a shorter step; only the initial
    /// configuration turns it into a hard error.
    Infeasible(SolverError),
    Hard(SolverError),
}

impl From<SolverError> for TrialError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Transport(TransportError::Geometry(
                GeometryError::CoincidentSites { .. } | GeometryError::NonFinitePosition { .. },
            )) => TrialError::Infeasible(e),
            SolverError::EmptyCellStall { .. } => TrialError::Infeasible(e),
            other => TrialError::Hard(other),
        }
    }
}

fn geometry_err(e: GeometryError) -> TrialError {
    SolverError::from(e).into()
}

fn eval_configuration(
    positions: &[Point],
    masses: &[f64],
    phi: &mut Vec<f64>,
    density: &BilinearDensity,
    cfg: &SolverConfig,
    dual_tol: f64,
) -> Result<Eval, TrialError> {
    let cloud = DiracCloud::with_potentials(positions.to_vec(), masses.to_vec(), phi.clone())
        .map_err(geometry_err)?;
    match cfg.mode {
        ProblemMode::Stippling => {
            let diagram = voronoi_diagram(&cloud, Rect::unit()).map_err(geometry_err)?;
            let first = first_derivatives(&cloud, density, &diagram)
                .map_err(|e| TrialError::from(SolverError::from(e)))?;
            Ok(Eval { diagram, first, dual_iters: 0, dual_converged: true })
        }
        ProblemMode::BlueNoise => {
            let mut dual_cfg = cfg.clone();
            dual_cfg.dual_tol = dual_tol;
            let (phi_star, report) = solve_dual(&cloud, density, phi, &dual_cfg)?;
            *phi = phi_star;
            let mut work = cloud;
            work.set_potentials(phi.clone()).map_err(geometry_err)?;
            let diagram = build_diagram(&work, Rect::unit()).map_err(geometry_err)?;
            let first = first_derivatives(&work, density, &diagram)
                .map_err(|e| TrialError::from(SolverError::from(e)))?;
            Ok(Eval {
                diagram,
                first,
                dual_iters: report.iterations,
                dual_converged: report.converged,
            })
        }
    }
}

/// M-weighted and plain ℓ² norms of the outer gradient at an evaluated
/// configuration; zero-mass cells contribute nothing to either.
fn gradient_norms(first: &FirstOrder, positions: &[Point]) -> (f64, f64) {
    let mut m_sq = 0.0;
    let mut l2_sq = 0.0;
    for i in 0..positions.len() {
        let g = first.grad_z[i];
        l2_sq += g.norm_squared();
        // ⟨∇G, ∇G⟩_M = Σ Mᵢ‖zᵢ−z̄ᵢ‖² = Σ ĝᵢ·(zᵢ−z̄ᵢ).
        m_sq += g.dot(&(positions[i] - first.barycenters[i]));
    }
    (m_sq.max(0.0).sqrt(), l2_sq.sqrt())
}

fn effective_dual_tol(cfg: &SolverConfig, outer_grad: Option<f64>) -> f64 {
    if !cfg.inner_adaptive {
        return cfg.dual_tol;
    }
    match outer_grad {
        None => cfg.dual_tol.max(1e-4),
        Some(g) => cfg.dual_tol.max((0.01 * g).min(1e-4)),
    }
}

struct AcceptedStep {
    eval: Eval,
    positions: Vec<Point>,
    sigma: f64,
    dual_iters: usize,
}

/// A fully evaluated but Wolfe-rejected σ = 1 trial, kept for the terminal
/// noise-floor polish.
struct FullStepTrial {
    eval: Eval,
    positions: Vec<Point>,
    potentials: Vec<f64>,
}

enum SearchOutcome {
    Accepted(AcceptedStep),
    /// σ underflowed 1e-12 without an acceptable step.
    Exhausted(Option<FullStepTrial>),
}

/// Backtracking line search on the first Wolfe condition in the M-metric.
/// `slope` must be ⟨∇G, d⟩_M < 0.
#[allow(clippy::too_many_arguments)]
fn wolfe_search(
    positions: &[Point],
    direction: &[Point],
    slope: f64,
    current_value: f64,
    masses: &[f64],
    phi: &mut Vec<f64>,
    density: &BilinearDensity,
    cfg: &SolverConfig,
    dual_tol: f64,
) -> Result<SearchOutcome, SolverError> {
    let mut sigma = 1.0;
    let mut dual_total = 0;
    let mut full_step = None;
    while sigma >= 1e-12 {
        let trial: Vec<Point> =
            positions.iter().zip(direction).map(|(z, d)| z + d * sigma).collect();
        let phi_backup = phi.clone();
        match eval_configuration(&trial, masses, phi, density, cfg, dual_tol) {
            Ok(ev) => {
                dual_total += ev.dual_iters;
                if ev.dual_converged
                    && ev.first.value < current_value + cfg.wolfe_c1 * sigma * slope
                {
                    return Ok(SearchOutcome::Accepted(AcceptedStep {
                        eval: ev,
                        positions: trial,
                        sigma,
                        dual_iters: dual_total,
                    }));
                }
                if full_step.is_none() && ev.dual_converged {
                    full_step = Some(FullStepTrial {
                        eval: ev,
                        positions: trial,
                        potentials: phi.clone(),
                    });
                }
                *phi = phi_backup;
            }
            Err(TrialError::Infeasible(_)) => {
                *phi = phi_backup;
            }
            Err(TrialError::Hard(e)) => return Err(e),
        }
        sigma *= 0.5;
    }
    Ok(SearchOutcome::Exhausted(full_step))
}

enum Direction {
    Lloyd,
    Newton,
}

/// Lloyd's algorithm: step toward the cell barycenters, Wolfe-stabilized.
pub fn lloyd_solve(
    cloud: &DiracCloud,
    density: &BilinearDensity,
    cfg: &SolverConfig,
) -> Result<SolveReport, SolverError> {
    outer_solve(cloud, density, cfg, Direction::Lloyd)
}

/// Newton's method: direction from [`cg_lanczos`] on H_zz (stippling) or the
/// reduced Hessian (Blue Noise), falling back to the Lloyd direction when
/// the returned direction is not a descent direction.
pub fn newton_solve(
    cloud: &DiracCloud,
    density: &BilinearDensity,
    cfg: &SolverConfig,
) -> Result<SolveReport, SolverError> {
    outer_solve(cloud, density, cfg, Direction::Newton)
}

fn outer_solve(
    cloud: &DiracCloud,
    density: &BilinearDensity,
    cfg: &SolverConfig,
    method: Direction,
) -> Result<SolveReport, SolverError> {
    cfg.validate()?;
    let n = cloud.n();
    let masses = cloud.masses().to_vec();
    let mut positions = cloud.positions().to_vec();
    let mut phi = match cfg.mode {
        ProblemMode::Stippling => vec![0.0; n],
        ProblemMode::BlueNoise => mean_zeroed(cloud.potentials()),
    };

    let start = Instant::now();
    let mut ev = match eval_configuration(
        &positions,
        &masses,
        &mut phi,
        density,
        cfg,
        effective_dual_tol(cfg, None),
    ) {
        Ok(ev) => ev,
        // The initial configuration must be evaluable; there is no shorter
        // step to retreat to, so infeasibility is a hard error here.
        Err(TrialError::Infeasible(e)) | Err(TrialError::Hard(e)) => return Err(e),
    };

    let mut trace = SolverTrace::default();
    let (m0, l20) = gradient_norms(&ev.first, &positions);
    trace.records.push(TraceRecord {
        iter: 0,
        objective: ev.first.value,
        grad_m_norm: m0,
        grad_l2_norm: l20,
        step_sigma: 0.0,
        cg_iters: 0,
        pd_flag: true,
        dual_iters: ev.dual_iters,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    });

    let finish = |positions: Vec<Point>,
                  phi: Vec<f64>,
                  ev: &Eval,
                  iterations: usize,
                  termination: Termination,
                  trace: SolverTrace| {
        let (m, l2) = gradient_norms(&ev.first, &positions);
        Ok(SolveReport {
            positions,
            potentials: phi,
            cell_masses: ev.first.cell_masses.clone(),
            objective: ev.first.value,
            grad_m_norm: m,
            grad_l2_norm: l2,
            iterations,
            termination,
            trace,
        })
    };

    if !ev.dual_converged {
        return finish(positions, phi, &ev, 0, Termination::DualStall, trace);
    }

    let mut iterations = 0;
    loop {
        let (m_norm, _) = gradient_norms(&ev.first, &positions);
        if m_norm <= cfg.outer_tol {
            return finish(positions, phi, &ev, iterations, Termination::Converged, trace);
        }
        if iterations >= cfg.max_outer {
            return finish(positions, phi, &ev, iterations, Termination::MaxIterations, trace);
        }
        let iter_start = Instant::now();

        let lloyd_direction: Vec<Point> = (0..n)
            .map(|i| ev.first.barycenters[i] - positions[i])
            .collect();
        let (mut direction, cg_iters, pd_flag, mut hessian_dual_iters) = match method {
            Direction::Lloyd => (lloyd_direction.clone(), 0, true, 0),
            Direction::Newton => {
                let work = DiracCloud::with_potentials(
                    positions.clone(),
                    masses.clone(),
                    phi.clone(),
                )?;
                let derivs = second_derivatives(&work, density, &ev.diagram)?;
                let cg = match cfg.mode {
                    ProblemMode::Stippling => {
                        let h = derivs.hessian;
                        cg_lanczos(
                            |v, out| h.apply_zz(v, out),
                            &ev.first.grad_z,
                            &ev.first.cell_masses,
                            cfg.cg_cap(n),
                            cfg.cg_tol,
                        )
                    }
                    ProblemMode::BlueNoise => {
                        let reduced = ReducedHessian::new(derivs.hessian)?;
                        cg_lanczos(
                            |v, out| reduced.apply(v, out),
                            &ev.first.grad_z,
                            &ev.first.cell_masses,
                            cfg.cg_cap(n),
                            cfg.cg_tol,
                        )
                    }
                };
                (cg.direction, cg.iterations, cg.pd_flag, 0)
            }
        };

        let mut slope: f64 =
            ev.first.grad_z.iter().zip(&direction).map(|(g, d)| g.dot(d)).sum();
        if slope >= 0.0 {
            // Not a descent direction (can happen for a truncated CG
            // solution); fall back to the always-descending Lloyd step.
            direction = lloyd_direction;
            slope = ev.first.grad_z.iter().zip(&direction).map(|(g, d)| g.dot(d)).sum();
            if slope >= 0.0 {
                // ∇G = 0 in the M-metric but m_norm > outer_tol would be a
                // contradiction; treat as a stall to terminate honestly.
                return finish(
                    positions,
                    phi,
                    &ev,
                    iterations,
                    Termination::LineSearchStall { sigma: 1.0 },
                    trace,
                );
            }
        }

        let dual_tol = effective_dual_tol(cfg, Some(m_norm));
        match wolfe_search(
            &positions,
            &direction,
            slope,
            ev.first.value,
            &masses,
            &mut phi,
            density,
            cfg,
            dual_tol,
        )? {
            SearchOutcome::Accepted(step) => {
                positions = step.positions;
                ev = step.eval;
                hessian_dual_iters += step.dual_iters;
                iterations += 1;
                let (m, l2) = gradient_norms(&ev.first, &positions);
                trace.records.push(TraceRecord {
                    iter: iterations,
                    objective: ev.first.value,
                    grad_m_norm: m,
                    grad_l2_norm: l2,
                    step_sigma: step.sigma,
                    cg_iters,
                    pd_flag,
                    dual_iters: hessian_dual_iters,
                    wall_ms: iter_start.elapsed().as_secs_f64() * 1e3,
                });
            }
            SearchOutcome::Exhausted(full_step) => {
                // Within an ulp-sized neighborhood of a minimizer the true
                // decrease falls below the objective's summation roundoff, so
                // no strict Wolfe decrease is certifiable even though the
                // full step still contracts the gradient. If that full step
                // already satisfies the outer tolerance, adopt it and declare
                // convergence; the trace keeps only Wolfe-accepted rows, so
                // its last row may show marginally larger norms than the
                // report.
                let noise = f64::EPSILON * ev.first.value.abs() * (64 + n) as f64;
                if let Some(trial) = full_step {
                    let (trial_m, _) = gradient_norms(&trial.eval.first, &trial.positions);
                    if slope.abs() <= noise && trial_m <= cfg.outer_tol {
                        return finish(
                            trial.positions,
                            trial.potentials,
                            &trial.eval,
                            iterations,
                            Termination::Converged,
                            trace,
                        );
                    }
                }
                return finish(
                    positions,
                    phi,
                    &ev,
                    iterations,
                    Termination::LineSearchStall { sigma: 1e-12 },
                    trace,
                );
            }
        }
    }
}
