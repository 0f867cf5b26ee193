//! Riemannian conjugate gradient on the complex circle manifold
//! `{x in C^n : |x_i| = 1}`.
//!
//! Tangent vectors at `x` satisfy `Re{xi_i conj(x_i)} = 0`. Euclidean
//! gradients are projected onto the tangent space, steps are retracted by
//! entrywise normalisation, and the previous direction is transported to the
//! new point by the same projection.

use nalgebra::DVector;

use crate::C64;

/// Cost on the complex circle manifold.
///
/// Gradients use the real-inner-product convention: for a perturbation `dx`
/// the first-order change of the cost is `Re{grad^H dx}`. For a cost written
/// in terms of the Wirtinger derivative `d/d conj(x)` this is twice that
/// derivative.
pub trait CircleCost {
    /// Cost at `x`, or `None` where the cost is not defined (the line search
    /// treats such points as rejected).
    fn cost(&self, x: &DVector<C64>) -> Option<f64>;

    fn gradient(&self, x: &DVector<C64>) -> Option<DVector<C64>>;

    /// `cost(x_new) - cost(x)`. Costs with a cancellation-free expression for
    /// the difference should override this, otherwise progress stalls once
    /// the change drops below the rounding error of the cost itself.
    fn cost_change(&self, x: &DVector<C64>, x_new: &DVector<C64>) -> Option<f64> {
        Some(self.cost(x_new)? - self.cost(x)?)
    }

    /// Optional first trial step along the tangent direction `dir`.
    fn initial_step(&self, _x: &DVector<C64>, _dir: &DVector<C64>) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RcgOptions {
    pub max_iters: usize,
    /// Stop once the Riemannian gradient norm falls to this value.
    pub grad_tol: f64,
    /// Stop once an accepted step improves the cost by less than this
    /// fraction of its magnitude.
    pub rel_tol: f64,
    pub armijo_c: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Largest phase rotation of any entry in the very first trial step.
    pub first_step_rad: f64,
}

impl Default for RcgOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            grad_tol: 1e-8,
            rel_tol: 0.0,
            armijo_c: 1e-4,
            shrink: 0.5,
            max_backtracks: 50,
            first_step_rad: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RcgOutcome {
    pub x: DVector<C64>,
    pub cost: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// True when the gradient tolerance was met.
    pub converged: bool,
    /// Cost after every accepted iterate, starting with the initial point.
    pub trace: Vec<f64>,
}

/// `Re{a^H b}`.
pub fn real_inner(a: &DVector<C64>, b: &DVector<C64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

/// Orthogonal projection of `z` onto the tangent space at `x`.
pub fn tangent_project(x: &DVector<C64>, z: &DVector<C64>) -> DVector<C64> {
    z.zip_map(x, |zi, xi| zi - xi * (zi * xi.conj()).re)
}

/// Entrywise normalisation retraction `(x + xi) / |x + xi|`.
pub fn retract(x: &DVector<C64>, xi: &DVector<C64>) -> DVector<C64> {
    x.zip_map(xi, |a, b| {
        let s = a + b;
        let r = s.norm();
        if r > 0.0 {
            s / r
        } else {
            a
        }
    })
}

fn max_modulus(v: &DVector<C64>) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Minimises `problem` over the complex circle manifold starting from `x0`.
///
/// Conjugacy is Polak-Ribiere+ with restarts to steepest descent whenever the
/// coefficient is non-positive or the direction stops being a descent
/// direction. Every accepted step satisfies the Armijo condition, so the cost
/// trace is non-increasing. If `x0` itself is infeasible it is returned as is.
pub fn riemannian_conjugate_gradient<P: CircleCost + ?Sized>(
    problem: &P,
    x0: &DVector<C64>,
    opts: &RcgOptions,
) -> RcgOutcome {
    let mut x = retract(x0, &DVector::zeros(x0.len()));
    let (Some(mut cost), Some(egrad)) = (problem.cost(&x), problem.gradient(&x)) else {
        return RcgOutcome {
            x,
            cost: f64::INFINITY,
            grad_norm: f64::INFINITY,
            iterations: 0,
            converged: false,
            trace: Vec::new(),
        };
    };
    let mut grad = tangent_project(&x, &egrad);
    let mut grad_sq = real_inner(&grad, &grad);
    let mut dir = -grad.clone();
    let mut trace = vec![cost];
    let mut last_alpha: Option<f64> = None;
    let mut iterations = 0;

    while iterations < opts.max_iters && grad_sq.sqrt() > opts.grad_tol {
        let mut slope = real_inner(&grad, &dir);
        if !(slope < 0.0) {
            dir = -grad.clone();
            slope = -grad_sq;
        }
        let dir_scale = max_modulus(&dir);
        if dir_scale == 0.0 {
            break;
        }
        let mut alpha = problem
            .initial_step(&x, &dir)
            .filter(|a| a.is_finite() && *a > 0.0)
            .or(last_alpha.map(|a| 2.0 * a))
            .unwrap_or(opts.first_step_rad / dir_scale);
        // rotations beyond a radian per entry only wrap around the circle
        alpha = alpha.min(std::f64::consts::PI / dir_scale);

        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let candidate = retract(&x, &(&dir * C64::new(alpha, 0.0)));
            if let Some(change) = problem.cost_change(&x, &candidate) {
                if change <= opts.armijo_c * alpha * slope {
                    accepted = Some((candidate, change));
                    break;
                }
            }
            alpha *= opts.shrink;
        }
        let Some((x_new, change)) = accepted else {
            break;
        };
        let (Some(cost_new), Some(egrad_new)) = (problem.cost(&x_new), problem.gradient(&x_new))
        else {
            break;
        };
        iterations += 1;
        last_alpha = Some(alpha);
        let improvement = -change;

        let grad_new = tangent_project(&x_new, &egrad_new);
        let grad_old_t = tangent_project(&x_new, &grad);
        let dir_old_t = tangent_project(&x_new, &dir);
        let grad_new_sq = real_inner(&grad_new, &grad_new);
        let pr = (grad_new_sq - real_inner(&grad_new, &grad_old_t)) / grad_sq;
        let beta = if pr.is_finite() && pr > 0.0 { pr } else { 0.0 };
        dir = -&grad_new + dir_old_t * C64::new(beta, 0.0);

        x = x_new;
        cost = cost_new;
        grad = grad_new;
        grad_sq = grad_new_sq;
        trace.push(cost);

        if improvement <= opts.rel_tol * cost.abs() && opts.rel_tol > 0.0 {
            break;
        }
    }

    let grad_norm = grad_sq.sqrt();
    RcgOutcome {
        x,
        cost,
        grad_norm,
        iterations,
        converged: grad_norm <= opts.grad_tol,
        trace,
    }
}
