//! Polak–Ribière nonlinear conjugate gradient with Armijo backtracking.

#[derive(Debug, Clone, PartialEq)]
pub struct CgOptions {
    pub max_iters: usize,
    /// Stop when the relative loss decrease over `window` iterations is below this.
    pub rel_tol: f64,
    pub window: usize,
    /// Stop when the gradient norm falls below this.
    pub grad_tol: f64,
    /// Reset to steepest descent every this many iterations (0 = never).
    pub restart_every: usize,
    pub armijo_c: f64,
    pub max_backtracks: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            max_iters: 300,
            rel_tol: 1e-5,
            window: 5,
            grad_tol: 0.0,
            restart_every: 0,
            armijo_c: 1e-4,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIters,
    RelativeDecrease,
    GradientNorm,
    /// No Armijo step found even along steepest descent.
    LineSearch,
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct CgResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Objective after every accepted step, starting with the initial value.
    pub history: Vec<f64>,
    pub evaluations: usize,
    pub stop: StopReason,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f`, which returns the objective and writes the gradient into
/// its second argument.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &CgOptions) -> CgResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut value = f(&x, &mut g);
    let mut evaluations = 1;
    let mut history = vec![value];
    if !value.is_finite() {
        return CgResult {
            grad_norm: f64::NAN,
            x,
            value,
            iterations: 0,
            history,
            evaluations,
            stop: StopReason::NonFinite,
        };
    }

    let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut x_trial = vec![0.0; n];
    let mut g_trial = vec![0.0; n];
    let mut prev_step: Option<(f64, f64)> = None;
    let mut since_restart = 0usize;
    let mut iterations = 0;

    let stop = loop {
        let grad_norm = dot(&g, &g).sqrt();
        if grad_norm <= opts.grad_tol {
            break StopReason::GradientNorm;
        }
        if iterations >= opts.max_iters {
            break StopReason::MaxIters;
        }

        let mut slope = dot(&g, &d);
        let mut steepest = since_restart == 0;
        if slope >= 0.0 {
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
            slope = -grad_norm * grad_norm;
            steepest = true;
            since_restart = 0;
        }

        // first trial: twice the step that the previous slope ratio predicts
        let mut alpha = match prev_step {
            Some((a, s)) => 2.0 * a * s / slope,
            None => 1.0 / grad_norm,
        };
        if !alpha.is_finite() || alpha <= 0.0 {
            alpha = 1.0 / grad_norm;
        }

        let mut accepted = None;
        loop {
            for _ in 0..opts.max_backtracks {
                for i in 0..n {
                    x_trial[i] = x[i] + alpha * d[i];
                }
                let v = f(&x_trial, &mut g_trial);
                evaluations += 1;
                if v.is_finite() && v <= value + opts.armijo_c * alpha * slope {
                    accepted = Some(v);
                    break;
                }
                alpha *= 0.5;
            }
            if accepted.is_some() || steepest {
                break;
            }
            // conjugate direction failed: retry along steepest descent
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
            slope = -grad_norm * grad_norm;
            alpha = 1.0 / grad_norm;
            steepest = true;
            since_restart = 0;
        }
        let Some(new_value) = accepted else {
            break StopReason::LineSearch;
        };

        prev_step = Some((alpha, slope));
        iterations += 1;
        since_restart += 1;

        let gg = dot(&g, &g);
        let beta = if opts.restart_every > 0 && since_restart >= opts.restart_every {
            since_restart = 0;
            0.0
        } else {
            let num: f64 = g_trial.iter().zip(&g).map(|(gn, go)| gn * (gn - go)).sum();
            num / gg
        };
        std::mem::swap(&mut x, &mut x_trial);
        std::mem::swap(&mut g, &mut g_trial);
        value = new_value;
        history.push(value);
        for i in 0..n {
            d[i] = -g[i] + beta * d[i];
        }

        if history.len() > opts.window {
            let old = history[history.len() - 1 - opts.window];
            let rel = (old - value) / old.abs().max(f64::MIN_POSITIVE);
            if rel < opts.rel_tol {
                break StopReason::RelativeDecrease;
            }
        }
    };

    CgResult {
        grad_norm: dot(&g, &g).sqrt(),
        x,
        value,
        iterations,
        history,
        evaluations,
        stop,
    }
}
