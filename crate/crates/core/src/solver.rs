//! Factored augmented-Lagrangian solver for the row- and column-sparse programs.
//!
//! With `X = Z Hᵀ` the objective `‖X‖_* + λ‖X‖_{2,1}` (or `‖X‖_{1,2}`) is
//! replaced by the smooth surrogate
//!
//! ```text
//! ‖Z‖_F² + ‖H‖_F² + Σ_i (w_i + λ² ‖slice_i(Z Hᵀ)‖² / w_i)
//! ```
//!
//! whose minimum over `w > 0` is twice the original cost. The equality
//! constraint `A(Z Hᵀ) = ŷ` is handled by an augmented Lagrangian with
//! multiplier `α` and penalty `σ`; `(Z, H)` are minimized by L-BFGS with `w`,
//! `α`, `σ` frozen, then `w`, `α`, `σ` are updated in turn.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;

use crate::error::{DeblurError, Result};
use crate::lbfgs::{self, LbfgsOptions, LbfgsStatus};
use crate::lifted_op::{complex_norm_sq, real_inner, FactorPair, LiftedProblem};

/// Which group norm is penalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SparsityMode {
    /// `‖X‖_{2,1}`: sum of row norms over the `K'` kernel rows.
    RowSparse,
    /// `‖X‖_{1,2}`: sum of column norms over the `N` image columns.
    ColumnSparse,
}

impl SparsityMode {
    /// Per-group norms of `Z Hᵀ` for this mode.
    pub fn group_norms(self, f: &FactorPair) -> Vec<f64> {
        match self {
            SparsityMode::RowSparse => f.row_norms(),
            SparsityMode::ColumnSparse => f.col_norms(),
        }
    }

    fn group_count(self, f: &FactorPair) -> usize {
        match self {
            SparsityMode::RowSparse => f.left.nrows(),
            SparsityMode::ColumnSparse => f.right.nrows(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub lambda: f64,
    /// Rank budget `r` of the factors.
    pub rank: usize,
    pub sigma0: f64,
    pub rho: f64,
    pub eps0: f64,
    pub outer_iters: usize,
    pub lbfgs_memory: usize,
    pub lbfgs_max_iters: usize,
    pub lbfgs_grad_tol: f64,
    /// Seed for the perturbation of the extra factor columns.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            rank: 4,
            sigma0: 1e3,
            rho: 10.0,
            eps0: 1e-4,
            outer_iters: 6,
            lbfgs_memory: 10,
            lbfgs_max_iters: 500,
            lbfgs_grad_tol: 1e-6,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DeblurError::Config(msg));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if self.rank == 0 {
            return bad("rank budget must be positive".into());
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return bad(format!("sigma0 must be positive, got {}", self.sigma0));
        }
        if !(self.rho > 1.0 && self.rho.is_finite()) {
            return bad(format!("rho must exceed 1, got {}", self.rho));
        }
        if !(self.eps0 > 0.0 && self.eps0.is_finite()) {
            return bad(format!("eps0 must be positive, got {}", self.eps0));
        }
        if self.outer_iters == 0 || self.lbfgs_memory == 0 || self.lbfgs_max_iters == 0 {
            return bad("iteration counts and L-BFGS memory must be positive".into());
        }
        if !(self.lbfgs_grad_tol > 0.0) {
            return bad(format!("lbfgs_grad_tol must be positive, got {}", self.lbfgs_grad_tol));
        }
        Ok(())
    }

    fn lbfgs_options(&self) -> LbfgsOptions {
        LbfgsOptions {
            memory: self.lbfgs_memory,
            max_iters: self.lbfgs_max_iters,
            grad_tol: self.lbfgs_grad_tol,
            ..LbfgsOptions::default()
        }
    }
}

/// Solver iterate: factors, group weights, multiplier, penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorState {
    pub factors: FactorPair,
    pub weights: Vec<f64>,
    pub multiplier: Vec<Complex64>,
    pub penalty: f64,
    pub iteration: usize,
}

impl FactorState {
    fn check(&self, prob: &LiftedProblem, mode: SparsityMode) -> Result<()> {
        prob.check_factors(&self.factors)?;
        let groups = mode.group_count(&self.factors);
        if self.weights.len() != groups {
            return Err(DeblurError::dim(format!(
                "{} weights for {groups} groups",
                self.weights.len()
            )));
        }
        if let Some(w) = self.weights.iter().find(|w| !(**w > 0.0)) {
            return Err(DeblurError::Domain(format!("weights must be strictly positive, found {w}")));
        }
        if self.multiplier.len() != prob.dims().2 {
            return Err(DeblurError::dim(format!(
                "multiplier length {} for L={}",
                self.multiplier.len(),
                prob.dims().2
            )));
        }
        Ok(())
    }
}

/// One outer iteration of [`solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    /// Lagrangian at the end of the inner solve.
    pub lagrangian: f64,
    pub residual_norm: f64,
    pub factor_imbalance: f64,
    /// Statistics of the weights after the update.
    pub w_min: f64,
    pub w_max: f64,
    /// Penalty used during this iteration.
    pub sigma: f64,
    pub lbfgs_iterations: usize,
    pub lbfgs_status: LbfgsStatus,
}

impl TraceRecord {
    pub const CSV_HEADER: &'static str = "iter,lagrangian,residual_norm,factor_imbalance,w_min,w_max,sigma";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            self.iter,
            self.lagrangian,
            self.residual_norm,
            self.factor_imbalance,
            self.w_min,
            self.w_max,
            self.sigma
        )
    }
}

/// Renders a header plus one line per record.
pub fn trace_to_csv(records: &[TraceRecord]) -> String {
    let mut out = String::from(TraceRecord::CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

/// Value (and optionally gradient) of the augmented Lagrangian at fixed `w`, `α`, `σ`.
struct Evaluation {
    value: f64,
    grad: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

fn evaluate(
    prob: &LiftedProblem,
    f: &FactorPair,
    weights: &[f64],
    alpha: &[Complex64],
    sigma: f64,
    mode: SparsityMode,
    with_grad: bool,
) -> Evaluation {
    let lambda2 = prob.lambda() * prob.lambda();
    let spectra = prob.spectra(f);
    let mut residual = prob.apply_spectra(&spectra);
    for (r, y) in residual.iter_mut().zip(prob.y_hat().data()) {
        *r -= y;
    }

    let gram_l = f.left.transpose() * &f.left;
    let gram_r = f.right.transpose() * &f.right;
    // the weighted side carries diag(1/w); `other` is the Gram matrix of the opposite factor
    let (weighted, other_gram) = match mode {
        SparsityMode::RowSparse => (&f.left, &gram_r),
        SparsityMode::ColumnSparse => (&f.right, &gram_l),
    };
    let wg = weighted * other_gram;
    let mut group_term = 0.0;
    for (i, w) in weights.iter().enumerate() {
        let s = wg.row(i).dot(&weighted.row(i));
        group_term += w + lambda2 * s / w;
    }

    let value = gram_l.trace() + gram_r.trace() - 2.0 * real_inner(alpha, &residual)
        + sigma * complex_norm_sq(&residual)
        + group_term;

    let grad = with_grad.then(|| {
        let alpha_hat: Vec<Complex64> = alpha
            .iter()
            .zip(&residual)
            .map(|(a, r)| a - r * sigma)
            .collect();
        let a_right = prob.adjoint_times_right_spectra(&alpha_hat, &spectra.image);
        let a_left = prob.adjoint_times_left_spectra(&alpha_hat, &spectra.kernel);

        let mut scaled = weighted.clone();
        for (i, w) in weights.iter().enumerate() {
            scaled.row_mut(i).scale_mut(1.0 / w);
        }
        // Σ_i s_i/w_i with s = diag(W G Wᵀ): d/dW = 2 D W G; d/dOther = 2 Other (Wᵀ D W)
        let d_weighted = &scaled * other_gram * (2.0 * lambda2);
        let inner = weighted.transpose() * &scaled;
        let (g_left, g_right) = match mode {
            SparsityMode::RowSparse => {
                let d_right = &f.right * &inner * (2.0 * lambda2);
                (
                    (&f.left - &a_right) * 2.0 + d_weighted,
                    (&f.right - &a_left) * 2.0 + d_right,
                )
            }
            SparsityMode::ColumnSparse => {
                let d_left = &f.left * &inner * (2.0 * lambda2);
                (
                    (&f.left - &a_right) * 2.0 + d_left,
                    (&f.right - &a_left) * 2.0 + d_weighted,
                )
            }
        };
        (g_left, g_right)
    });
    Evaluation { value, grad }
}

/// Augmented Lagrangian at the state's factors, weights, multiplier and penalty.
pub fn lagrangian_value(state: &FactorState, prob: &LiftedProblem, mode: SparsityMode) -> Result<f64> {
    state.check(prob, mode)?;
    Ok(evaluate(
        prob,
        &state.factors,
        &state.weights,
        &state.multiplier,
        state.penalty,
        mode,
        false,
    )
    .value)
}

/// Gradients of [`lagrangian_value`] with respect to the two factors.
pub fn lagrangian_gradient(
    state: &FactorState,
    prob: &LiftedProblem,
    mode: SparsityMode,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    state.check(prob, mode)?;
    Ok(evaluate(
        prob,
        &state.factors,
        &state.weights,
        &state.multiplier,
        state.penalty,
        mode,
        true,
    )
    .grad
    .expect("gradient requested"))
}

/// `w_i = λ‖slice_i(Z Hᵀ)‖₂ + ε₀/(k+2)²`.
pub fn update_w(f: &FactorPair, k: usize, cfg: &SolverConfig, mode: SparsityMode) -> Vec<f64> {
    let floor = cfg.eps0 / ((k + 2) as f64).powi(2);
    mode.group_norms(f)
        .into_iter()
        .map(|n| cfg.lambda * n + floor)
        .collect()
}

/// `α − σ (A(Z Hᵀ) − ŷ)`.
pub fn update_multiplier(state: &FactorState, prob: &LiftedProblem) -> Result<Vec<Complex64>> {
    let residual = prob.residual(&state.factors)?;
    if state.multiplier.len() != residual.len() {
        return Err(DeblurError::dim("multiplier length does not match the grid"));
    }
    Ok(state
        .multiplier
        .iter()
        .zip(&residual)
        .map(|(a, r)| a - r * state.penalty)
        .collect())
}

/// Starting point: a uniform kernel paired with the blurred image's coefficients.
///
/// Columns beyond the first get seeded Gaussian noise at `1e-3` of the first
/// column's norm so the factors do not start on a rank-deficient saddle.
pub fn initialize_state(
    prob: &LiftedProblem,
    blurred_coeffs: &[f64],
    cfg: &SolverConfig,
    mode: SparsityMode,
) -> Result<FactorState> {
    cfg.validate()?;
    let (k, n, l) = prob.dims();
    if blurred_coeffs.len() != n {
        return Err(DeblurError::dim(format!(
            "{} blurred coefficients for an image basis of {n}",
            blurred_coeffs.len()
        )));
    }
    let r = cfg.rank;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut left = DMatrix::zeros(k, r);
    let mut right = DMatrix::zeros(n, r);
    left.column_mut(0).fill(1.0 / k as f64);
    right.column_mut(0).copy_from_slice(blurred_coeffs);

    let mut perturb = |m: &mut DMatrix<f64>| {
        let scale = 1e-3 * m.column(0).norm();
        for j in 1..r {
            let noise: Vec<f64> = (0..m.nrows()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let nn = noise.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            for (i, v) in noise.iter().enumerate() {
                m[(i, j)] = scale * v / nn;
            }
        }
    };
    perturb(&mut left);
    perturb(&mut right);

    let factors = FactorPair::new(left, right)?;
    let weights = mode
        .group_norms(&factors)
        .into_iter()
        .map(|v| cfg.lambda * v + cfg.eps0)
        .collect();
    Ok(FactorState {
        factors,
        weights,
        multiplier: vec![Complex64::new(0.0, 0.0); l],
        penalty: cfg.sigma0,
        iteration: 0,
    })
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub factors: FactorPair,
    pub state: FactorState,
    pub trace: Vec<TraceRecord>,
}

/// Runs `cfg.outer_iters` outer iterations from `init`.
pub fn solve(
    prob: &LiftedProblem,
    init: FactorState,
    cfg: &SolverConfig,
    mode: SparsityMode,
) -> Result<SolveOutput> {
    let mut trace = Vec::new();
    let state = solve_traced(prob, init, cfg, mode, &mut trace)?;
    Ok(SolveOutput { factors: state.factors.clone(), state, trace })
}

/// As [`solve`], appending trace records to `trace` as they are produced so
/// that a partial trace survives a numerical failure.
pub fn solve_traced(
    prob: &LiftedProblem,
    init: FactorState,
    cfg: &SolverConfig,
    mode: SparsityMode,
    trace: &mut Vec<TraceRecord>,
) -> Result<FactorState> {
    cfg.validate()?;
    if (cfg.lambda - prob.lambda()).abs() > 1e-15 * cfg.lambda.abs().max(1.0) {
        return Err(DeblurError::Config(format!(
            "solver lambda {} differs from problem lambda {}",
            cfg.lambda,
            prob.lambda()
        )));
    }
    init.check(prob, mode)?;
    let (k_dim, n_dim, _) = prob.dims();
    let rank = init.factors.rank_budget();
    let opts = cfg.lbfgs_options();
    let mut state = init;

    for k in 0..cfg.outer_iters {
        let (weights, alpha, sigma) = (&state.weights, &state.multiplier, state.penalty);
        let report = lbfgs::minimize(
            state.factors.to_vec(),
            |x| {
                let f = FactorPair::from_slice(k_dim, n_dim, rank, x);
                let ev = evaluate(prob, &f, weights, alpha, sigma, mode, true);
                let (gl, gr) = ev.grad.expect("gradient requested");
                let mut g = Vec::with_capacity(x.len());
                g.extend_from_slice(gl.as_slice());
                g.extend_from_slice(gr.as_slice());
                (ev.value, g)
            },
            &opts,
        )?;
        log::debug!(
            "outer {k}: L-BFGS {:?} after {} iterations, |g| = {:.3e}",
            report.status,
            report.iterations,
            report.grad_norm
        );
        state.factors = FactorPair::from_slice(k_dim, n_dim, rank, &report.x);
        state.weights = update_w(&state.factors, k, cfg, mode);
        state.multiplier = update_multiplier(&state, prob)?;
        let residual_norm = complex_norm_sq(&prob.residual(&state.factors)?).sqrt();
        let (w_min, w_max) = state
            .weights
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &w| (lo.min(w), hi.max(w)));
        trace.push(TraceRecord {
            iter: k,
            lagrangian: report.value,
            residual_norm,
            factor_imbalance: state.factors.imbalance(),
            w_min,
            w_max,
            sigma: state.penalty,
            lbfgs_iterations: report.iterations,
            lbfgs_status: report.status,
        });
        state.penalty *= cfg.rho;
        state.iteration = k + 1;
    }
    Ok(state)
}
