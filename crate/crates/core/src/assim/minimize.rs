//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizerOptions {
    pub max_iterations: usize,
    /// Stop when `‖∇J‖ ≤ grad_tolerance * max(1, ‖∇J(x0)‖)`.
    pub grad_tolerance: f64,
    pub memory: usize,
}

impl Default for MinimizerOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            grad_tolerance: 1e-8,
            memory: 12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<f64>,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_LINE_EVALS: usize = 40;

struct Point {
    alpha: f64,
    value: f64,
    slope: f64,
    x: DVector<f64>,
    grad: DVector<f64>,
}

/// Minimizes `f` from `x0`; `f` returns the value and gradient.
pub fn lbfgs<F>(f: F, x0: DVector<f64>, opts: &MinimizerOptions) -> Result<Minimum>
where
    F: Fn(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let (mut value, mut grad) = f(&x0)?;
    let mut x = x0;
    let tol = opts.grad_tolerance * grad.norm().max(1.0);
    let mut trace = vec![value];
    let mut pairs: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();

    for iter in 0..opts.max_iterations {
        let gnorm = grad.norm();
        if gnorm <= tol {
            return Ok(Minimum {
                x,
                value,
                grad_norm: gnorm,
                iterations: iter,
                trace,
            });
        }
        let mut dir = two_loop(&grad, &pairs);
        let mut slope = grad.dot(&dir);
        if !(slope < 0.0) {
            pairs.clear();
            dir = -&grad;
            slope = -gnorm * gnorm;
        }
        let alpha0 = if pairs.is_empty() {
            (1.0 / dir.norm()).min(1.0)
        } else {
            1.0
        };
        let step = match line_search(&f, &x, value, slope, &dir, alpha0)? {
            Some(p) => p,
            None if !pairs.is_empty() => {
                // retry once along steepest descent with a fresh memory
                pairs.clear();
                let sd = -&grad;
                match line_search(&f, &x, value, -gnorm * gnorm, &sd, (1.0 / gnorm).min(1.0))? {
                    Some(p) => p,
                    None => return Err(stalled(iter, gnorm, x)),
                }
            }
            None => return Err(stalled(iter, gnorm, x)),
        };
        let s = &step.x - &x;
        let yv = &step.grad - &grad;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, yv, 1.0 / sy));
        }
        x = step.x;
        value = step.value;
        grad = step.grad;
        trace.push(value);
    }
    let gnorm = grad.norm();
    if gnorm <= tol {
        return Ok(Minimum {
            x,
            value,
            grad_norm: gnorm,
            iterations: opts.max_iterations,
            trace,
        });
    }
    Err(stalled(opts.max_iterations, gnorm, x))
}

fn stalled(iterations: usize, grad_norm: f64, best: DVector<f64>) -> Error {
    Error::Convergence {
        iterations,
        grad_norm,
        best: Box::new(best),
    }
}

fn two_loop(grad: &DVector<f64>, pairs: &VecDeque<(DVector<f64>, DVector<f64>, f64)>) -> DVector<f64> {
    let mut q = grad.clone();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q.axpy(a - b, s, 1.0);
    }
    -q
}

/// Accepts a trial point that satisfies the strong Wolfe conditions, or the
/// approximate Wolfe conditions without any increase of the objective (the
/// latter matters once decreases fall below rounding of the objective).
fn acceptable(p: &Point, f0: f64, g0: f64) -> bool {
    let curvature = p.slope.abs() <= -C2 * g0;
    let armijo = p.value <= f0 + C1 * p.alpha * g0;
    let approx = p.value <= f0 && (2.0 * C1 - 1.0) * g0 >= p.slope && p.slope.abs() <= -C2 * g0;
    (armijo && curvature) || approx
}

fn line_search<F>(
    f: &F,
    x: &DVector<f64>,
    f0: f64,
    g0: f64,
    dir: &DVector<f64>,
    alpha0: f64,
) -> Result<Option<Point>>
where
    F: Fn(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let eval = |alpha: f64| -> Result<Point> {
        let xt = x + dir * alpha;
        let (value, grad) = f(&xt)?;
        Ok(Point {
            alpha,
            value,
            slope: grad.dot(dir),
            x: xt,
            grad,
        })
    };
    let origin = Point {
        alpha: 0.0,
        value: f0,
        slope: g0,
        x: x.clone(),
        grad: DVector::zeros(0),
    };
    let mut prev = origin;
    let mut alpha = alpha0;
    let mut evals = 0;
    // bracketing phase
    let (mut lo, mut hi) = loop {
        let p = eval(alpha)?;
        evals += 1;
        if !p.value.is_finite() {
            alpha = 0.5 * (prev.alpha + alpha);
            if evals >= MAX_LINE_EVALS {
                return Ok(None);
            }
            continue;
        }
        if acceptable(&p, f0, g0) {
            return Ok(Some(p));
        }
        if p.value > f0 + C1 * alpha * g0 || (evals > 1 && p.value >= prev.value) {
            break (prev, p);
        }
        if p.slope >= 0.0 {
            break (p, prev);
        }
        if evals >= MAX_LINE_EVALS {
            return Ok(None);
        }
        alpha *= 2.0;
        prev = p;
    };
    // zoom phase
    while evals < MAX_LINE_EVALS {
        let a = cubic_min(&lo, &hi);
        let p = eval(a)?;
        evals += 1;
        if acceptable(&p, f0, g0) {
            return Ok(Some(p));
        }
        if p.value > f0 + C1 * a * g0 || p.value >= lo.value {
            hi = p;
        } else {
            if p.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = p;
        }
        if (hi.alpha - lo.alpha).abs() <= 1e-16 * lo.alpha.abs().max(1e-300) {
            break;
        }
    }
    Ok(None)
}

/// Minimizer of the cubic interpolating values and slopes at `a` and `b`,
/// safeguarded into the interior of the bracket.
fn cubic_min(a: &Point, b: &Point) -> f64 {
    let (lo, hi) = if a.alpha < b.alpha { (a.alpha, b.alpha) } else { (b.alpha, a.alpha) };
    let width = hi - lo;
    let d1 = a.slope + b.slope - 3.0 * (a.value - b.value) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.slope * b.slope;
    let mut t = f64::NAN;
    if disc >= 0.0 {
        let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
        t = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    }
    if !t.is_finite() || t <= lo + 0.1 * width || t >= hi - 0.1 * width {
        t = lo + 0.5 * width;
    }
    t
}
