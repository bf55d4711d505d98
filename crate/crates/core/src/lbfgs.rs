//! Limited-memory BFGS with a strong Wolfe line search.
//!
//! The line search is the bracketing/zoom scheme with cubic interpolation
//! (Nocedal & Wright, Algorithms 3.5 and 3.6).

use std::collections::VecDeque;

use crate::error::{DeblurError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop once `‖g‖ ≤ grad_tol · max(1, ‖g₀‖)`.
    pub grad_tol: f64,
    /// Sufficient decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search_evals: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 500,
            grad_tol: 1e-6,
            c1: 1e-4,
            c2: 0.9,
            max_line_search_evals: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbfgsStatus {
    GradientTolerance,
    MaxIterations,
    /// No step satisfying the Wolfe conditions could be found; the last
    /// accepted iterate is returned.
    LineSearchStalled,
}

#[derive(Debug, Clone)]
pub struct LbfgsReport {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: LbfgsStatus,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn non_finite(x: &[f64], what: &str) -> DeblurError {
    DeblurError::Numerical {
        message: format!("non-finite {what} during L-BFGS"),
        iterate: x.to_vec(),
    }
}

struct Evaluator<'a, F> {
    f: &'a mut F,
    count: usize,
}

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> Evaluator<'_, F> {
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.count += 1;
        let (v, g) = (self.f)(x);
        if !v.is_finite() {
            return Err(non_finite(x, "objective"));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(non_finite(x, "gradient"));
        }
        Ok((v, g))
    }
}

/// Minimizes a smooth function given as a closure returning `(value, gradient)`.
pub fn minimize<F>(x0: Vec<f64>, mut objective: F, opts: &LbfgsOptions) -> Result<LbfgsReport>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut ev = Evaluator { f: &mut objective, count: 0 };
    let mut x = x0;
    let (mut fx, mut g) = ev.eval(&x)?;
    let g0 = norm(&g);
    let tol = opts.grad_tol * g0.max(1.0);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);

    let mut iterations = 0;
    let mut status = LbfgsStatus::MaxIterations;
    loop {
        let gnorm = norm(&g);
        if gnorm <= tol {
            status = LbfgsStatus::GradientTolerance;
            break;
        }
        if iterations >= opts.max_iters {
            break;
        }

        let mut dir = two_loop(&g, &history);
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            // curvature memory went stale: restart along steepest descent
            history.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }
        let step0 = if history.is_empty() { (1.0 / gnorm).min(1.0) } else { 1.0 };

        let Some((step, f_new, g_new)) = line_search(&mut ev, &x, fx, slope, &dir, step0, opts)? else {
            if history.is_empty() {
                status = LbfgsStatus::LineSearchStalled;
                break;
            }
            history.clear();
            continue;
        };

        let x_new: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        iterations += 1;
    }

    let grad_norm = norm(&g);
    Ok(LbfgsReport {
        x,
        value: fx,
        grad_norm,
        iterations,
        evaluations: ev.count,
        status,
    })
}

fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q
}

/// Minimizer of the cubic interpolating `(a, fa, da)` and `(b, fb, db)`,
/// falling back to bisection when the cubic is degenerate or leaves the bracket.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    let mid = 0.5 * (a + b);
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (hi - lo);
    if t.is_finite() && t > lo + margin && t < hi - margin {
        t
    } else {
        mid
    }
}

type StepResult = Option<(f64, f64, Vec<f64>)>;

fn line_search<F: FnMut(&[f64]) -> (f64, Vec<f64>)>(
    ev: &mut Evaluator<'_, F>,
    x: &[f64],
    f0: f64,
    slope0: f64,
    dir: &[f64],
    step0: f64,
    opts: &LbfgsOptions,
) -> Result<StepResult> {
    let mut eval_at = |ev: &mut Evaluator<'_, F>, t: f64| -> Result<(f64, f64, Vec<f64>)> {
        let xt: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + t * d).collect();
        let (f, g) = ev.eval(&xt)?;
        Ok((f, dot(&g, dir), g))
    };

    let mut prev = (0.0, f0, slope0);
    let mut t = step0;
    let mut evals = 0;
    while evals < opts.max_line_search_evals {
        let (ft, dt, gt) = eval_at(ev, t)?;
        evals += 1;
        if ft > f0 + opts.c1 * t * slope0 || (evals > 1 && ft >= prev.1) {
            return zoom(ev, &mut eval_at, f0, slope0, prev, (t, ft, dt), opts, evals);
        }
        if dt.abs() <= -opts.c2 * slope0 {
            return Ok(Some((t, ft, gt)));
        }
        if dt >= 0.0 {
            return zoom(ev, &mut eval_at, f0, slope0, (t, ft, dt), prev, opts, evals);
        }
        prev = (t, ft, dt);
        t *= 2.0;
    }
    Ok(None)
}

#[allow(clippy::too_many_arguments)]
fn zoom<F, E>(
    ev: &mut Evaluator<'_, F>,
    eval_at: &mut E,
    f0: f64,
    slope0: f64,
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
    opts: &LbfgsOptions,
    mut evals: usize,
) -> Result<StepResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
    E: FnMut(&mut Evaluator<'_, F>, f64) -> Result<(f64, f64, Vec<f64>)>,
{
    let mut best: StepResult = None;
    while evals < opts.max_line_search_evals {
        if (hi.0 - lo.0).abs() <= 1e-16 * lo.0.abs().max(1.0) {
            break;
        }
        let t = cubic_min(lo.0, lo.1, lo.2, hi.0, hi.1, hi.2);
        let (ft, dt, gt) = eval_at(ev, t)?;
        evals += 1;
        if ft > f0 + opts.c1 * t * slope0 || ft >= lo.1 {
            hi = (t, ft, dt);
        } else {
            if dt.abs() <= -opts.c2 * slope0 {
                return Ok(Some((t, ft, gt)));
            }
            if dt * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (t, ft, dt);
            best = Some((t, ft, gt));
        }
    }
    // Accept a sufficient-decrease step even if curvature could not be met.
    Ok(best.filter(|(_, f, _)| *f < f0))
}
