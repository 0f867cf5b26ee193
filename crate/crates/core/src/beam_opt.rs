//! Transmit-pattern design that lowers the phase bounds.
//!
//! For chain `n` with patterns `F_bar` (`M_t x K`, column `k` is the pattern
//! used in transmission `k`) the phase information is proportional to
//! `R = E + conj(E)` with `E = diag(conj(omega)) conj(F_bar) diag(g) F_bar^T diag(omega)`
//! and `g_k = |w_k^H a_r|^2`. The design minimises `h = tr(R^{-1})` over
//! unit-modulus `F_bar`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::manifold::{riemannian_conjugate_gradient, CircleCost, RcgOptions};
use crate::model::{upa_response, BeamSchedule, UNIT_MODULUS_TOL, UpaGeometry};
use crate::C64;

/// Condition number above which `R` counts as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct BeamDesignProblem {
    g: DVector<f64>,
    m_t: usize,
    omega_assumed: DVector<C64>,
}

impl BeamDesignProblem {
    /// Problem with `omega` fixed to all-ones.
    pub fn new(g: DVector<f64>, m_t: usize) -> Result<Self> {
        Self::with_omega(g, DVector::from_element(m_t, C64::new(1.0, 0.0)))
    }

    /// Problem with an explicit deviation vector.
    pub fn with_omega(g: DVector<f64>, omega: DVector<C64>) -> Result<Self> {
        let m_t = omega.len();
        if m_t == 0 || g.is_empty() {
            return Err(Error::Dimension("empty design problem".into()));
        }
        if let Some(bad) = g.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Config(format!("receive gains must be non-negative, got {bad}")));
        }
        if g.len() < m_t {
            return Err(Error::Unidentifiable(format!(
                "{} transmissions cannot resolve {m_t} phases",
                g.len()
            )));
        }
        for (index, z) in omega.iter().enumerate() {
            if (z.norm() - 1.0).abs() > UNIT_MODULUS_TOL {
                return Err(Error::NotUnitModulus { index, modulus: z.norm() });
            }
        }
        Ok(Self { g, m_t, omega_assumed: omega })
    }

    pub fn g(&self) -> &DVector<f64> {
        &self.g
    }

    pub fn m_t(&self) -> usize {
        self.m_t
    }

    pub fn k(&self) -> usize {
        self.g.len()
    }

    pub fn omega_assumed(&self) -> &DVector<C64> {
        &self.omega_assumed
    }

    fn check(&self, f_bar: &DMatrix<C64>) -> Result<()> {
        if f_bar.shape() != (self.m_t, self.k()) {
            return Err(Error::Dimension(format!(
                "patterns are {:?}, problem expects {:?}",
                f_bar.shape(),
                (self.m_t, self.k())
            )));
        }
        Ok(())
    }

    /// `E = diag(conj(omega)) conj(F_bar) diag(g) F_bar^T diag(omega)`.
    pub fn e_matrix(&self, f_bar: &DMatrix<C64>) -> DMatrix<C64> {
        let mut weighted = f_bar.clone();
        for (k, mut col) in weighted.column_iter_mut().enumerate() {
            col *= C64::new(self.g[k], 0.0);
        }
        let mut e = f_bar.conjugate() * weighted.transpose();
        let omega = &self.omega_assumed;
        for j in 0..self.m_t {
            for i in 0..self.m_t {
                e[(i, j)] *= omega[i].conj() * omega[j];
            }
        }
        e
    }

    /// `R = E + conj(E)`, real symmetric.
    pub fn r_matrix(&self, f_bar: &DMatrix<C64>) -> DMatrix<f64> {
        let e = self.e_matrix(f_bar);
        let r = e.map(|z| 2.0 * z.re);
        (&r + r.transpose()) * 0.5
    }
}

/// Receive gains `|w_k^H a_r(theta, phi)|^2`.
pub fn receive_gains(w_list: &[DVector<C64>], rx: UpaGeometry, theta_r: f64, phi_r: f64) -> DVector<f64> {
    let a_r = upa_response(theta_r, phi_r, rx);
    DVector::from_iterator(w_list.len(), w_list.iter().map(|w| w.dotc(&a_r).norm_sqr()))
}

/// Inverse of `R` after checking its conditioning.
fn checked_inverse(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(r.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Singular { condition });
    }
    let q = &eig.eigenvectors;
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v));
    Ok(q * inv_diag * q.transpose())
}

/// `h = tr(R^{-1})`.
pub fn objective_h(f_bar: &DMatrix<C64>, problem: &BeamDesignProblem) -> Result<f64> {
    problem.check(f_bar)?;
    Ok(checked_inverse(&problem.r_matrix(f_bar))?.trace())
}

/// `-2 diag(conj(omega)) R^{-2} diag(omega) F_bar diag(g)`, the derivative of
/// `h` with respect to `conj(F_bar)`. The steepest-ascent direction for
/// `F_bar` viewed as a real matrix is twice this.
pub fn gradient_h(f_bar: &DMatrix<C64>, problem: &BeamDesignProblem) -> Result<DMatrix<C64>> {
    problem.check(f_bar)?;
    if problem.g.iter().all(|v| *v == 0.0) {
        return Ok(DMatrix::zeros(f_bar.nrows(), f_bar.ncols()));
    }
    let inv = checked_inverse(&problem.r_matrix(f_bar))?;
    let p = (&inv * &inv).map(|v| C64::new(v, 0.0));
    let omega = &problem.omega_assumed;
    let mut scaled = f_bar.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= omega[i];
    }
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= C64::new(problem.g[k], 0.0);
    }
    let mut grad = p * scaled;
    for (i, mut row) in grad.row_iter_mut().enumerate() {
        row *= omega[i].conj() * C64::new(-2.0, 0.0);
    }
    Ok(grad)
}

/// The design problem with `g` rescaled to unit mean, so that solver
/// tolerances do not depend on the link budget; the minimiser is unchanged.
struct Scaled<'a> {
    problem: &'a BeamDesignProblem,
    shape: (usize, usize),
}

impl Scaled<'_> {
    fn unflatten(&self, x: &DVector<C64>) -> DMatrix<C64> {
        DMatrix::from_column_slice(self.shape.0, self.shape.1, x.as_slice())
    }
}

impl CircleCost for Scaled<'_> {
    fn cost(&self, x: &DVector<C64>) -> Option<f64> {
        objective_h(&self.unflatten(x), self.problem).ok()
    }

    fn gradient(&self, x: &DVector<C64>) -> Option<DVector<C64>> {
        let g = gradient_h(&self.unflatten(x), self.problem).ok()?;
        Some(DVector::from_column_slice(g.as_slice()) * C64::new(2.0, 0.0))
    }
}

/// Solver settings of the pattern design.
pub fn beam_rcg_options() -> RcgOptions {
    RcgOptions {
        max_iters: 300,
        grad_tol: 1e-7,
        ..RcgOptions::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamDesign {
    /// Optimised `M_t x K` patterns.
    pub f_bar: DMatrix<C64>,
    pub h_initial: f64,
    pub h: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when no point had an invertible `R`; `f_bar` is then `f0`
    /// unchanged and `h` is infinite.
    pub diagnostic: Option<String>,
}

impl BeamDesign {
    fn unchanged(f0: &DMatrix<C64>, why: String) -> Self {
        Self {
            f_bar: f0.clone(),
            h_initial: f64::INFINITY,
            h: f64::INFINITY,
            iterations: 0,
            converged: false,
            diagnostic: Some(why),
        }
    }
}

/// Minimises `tr(R^{-1})` from `f0` on the unit-modulus manifold.
///
/// Candidate points where `R` is ill-conditioned are rejected by the line
/// search. A singular `f0` is handed back untouched with a diagnostic.
pub fn optimize_beams(
    problem: &BeamDesignProblem,
    f0: &DMatrix<C64>,
    opts: &RcgOptions,
) -> Result<BeamDesign> {
    problem.check(f0)?;
    for (index, z) in f0.iter().enumerate() {
        if (z.norm() - 1.0).abs() > UNIT_MODULUS_TOL {
            return Err(Error::NotUnitModulus { index, modulus: z.norm() });
        }
    }
    let mean = problem.g.mean();
    if !(mean > 0.0) {
        return Ok(BeamDesign::unchanged(f0, "all receive gains are zero".into()));
    }
    let normalised = BeamDesignProblem {
        g: &problem.g / mean,
        m_t: problem.m_t,
        omega_assumed: problem.omega_assumed.clone(),
    };
    let h_initial = match objective_h(f0, problem) {
        Ok(h) => h,
        Err(e) if e.is_numerical() => return Ok(BeamDesign::unchanged(f0, e.to_string())),
        Err(e) => return Err(e),
    };
    let scaled = Scaled {
        problem: &normalised,
        shape: f0.shape(),
    };
    let x0 = DVector::from_column_slice(f0.as_slice());
    let out = riemannian_conjugate_gradient(&scaled, &x0, opts);
    let f_bar = scaled.unflatten(&out.x);
    let h = objective_h(&f_bar, problem)?;
    Ok(BeamDesign {
        f_bar,
        h_initial,
        h,
        iterations: out.iterations,
        converged: out.converged,
        diagnostic: None,
    })
}

/// Replaces every chain's transmit patterns in `schedule` by optimised ones,
/// starting from the current patterns and using gains toward the assumed
/// receive direction.
pub fn optimize_schedule(
    schedule: &BeamSchedule,
    rx: UpaGeometry,
    theta_r: f64,
    phi_r: f64,
    opts: &RcgOptions,
) -> Result<(BeamSchedule, Vec<BeamDesign>)> {
    let g = receive_gains(schedule.w_list(), rx, theta_r, phi_r);
    let problem = BeamDesignProblem::new(g, schedule.m_t())?;
    let designs = (0..schedule.n_rf())
        .into_par_iter()
        .map(|n| optimize_beams(&problem, &schedule.chain_stack(n), opts))
        .collect::<Result<Vec<_>>>()?;
    let stacks: Vec<_> = designs.iter().map(|d| d.f_bar.clone()).collect();
    let out = BeamSchedule::from_chain_stacks(&stacks, schedule.w_list().to_vec())?;
    Ok((out, designs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<C64> {
        DMatrix::from_fn(r, c, |_, _| C64::from_polar(1.0, rng.random_range(-3.2..3.2)))
    }

    #[test]
    fn scalar_objective() {
        let p = BeamDesignProblem::new(DVector::from_element(1, 1.0), 1).unwrap();
        let f = DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        assert!((p.e_matrix(&f)[(0, 0)] - C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((objective_h(&f, &p).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn two_by_two_dft_patterns() {
        let p = BeamDesignProblem::new(DVector::from_element(2, 1.0), 2).unwrap();
        let one = C64::new(1.0, 0.0);
        let f = DMatrix::from_row_slice(2, 2, &[one, one, one, -one]);
        let r = p.r_matrix(&f);
        let e = f.conjugate() * f.transpose();
        let det = r[(0, 0)] * r[(1, 1)] - r[(0, 1)] * r[(1, 0)];
        let trace_inv = (r[(0, 0)] + r[(1, 1)]) / det;
        for i in 0..2 {
            for j in 0..2 {
                assert!((r[(i, j)] - 2.0 * e[(i, j)].re).abs() < 1e-15);
            }
        }
        assert!((objective_h(&f, &p).unwrap() - trace_inv).abs() < 1e-14);
        assert!((trace_inv - 0.5).abs() < 1e-14);
    }

    #[test]
    fn scaling_gains_scales_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let g = DVector::from_fn(8, |_, _| rng.random_range(0.1..2.0));
        let f = unit_matrix(&mut rng, 4, 8);
        let a = objective_h(&f, &BeamDesignProblem::new(g.clone(), 4).unwrap()).unwrap();
        let b = objective_h(&f, &BeamDesignProblem::new(&g * 3.0, 4).unwrap()).unwrap();
        assert!((a / b - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_gains_give_zero_gradient_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let f = unit_matrix(&mut rng, 3, 5);
        let p = BeamDesignProblem::new(DVector::zeros(5), 3).unwrap();
        // R = 0 is singular, so the objective is undefined
        assert!(matches!(objective_h(&f, &p), Err(Error::Singular { .. })));
        assert!(gradient_h(&f, &p).unwrap().iter().all(|z| *z == C64::new(0.0, 0.0)));
        let p = BeamDesignProblem::new(DVector::from_element(5, 1.0), 3).unwrap();
        assert_eq!(gradient_h(&f, &p).unwrap().shape(), (3, 5));
    }

    #[test]
    fn singular_start_is_returned_with_diagnostic() {
        // identical columns make R rank one
        let f0 = DMatrix::from_element(3, 4, C64::new(1.0, 0.0));
        let p = BeamDesignProblem::new(DVector::from_element(4, 1.0), 3).unwrap();
        let d = optimize_beams(&p, &f0, &beam_rcg_options()).unwrap();
        assert_eq!(d.f_bar, f0);
        assert!(d.diagnostic.is_some() && d.h.is_infinite());
        let p = BeamDesignProblem::new(DVector::zeros(4), 3).unwrap();
        assert!(optimize_beams(&p, &f0, &beam_rcg_options()).unwrap().diagnostic.is_some());
    }

    #[test]
    fn r_is_real_symmetric_for_unit_omega() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let f = unit_matrix(&mut rng, 4, 8);
        let g = DVector::from_fn(8, |_, _| rng.random_range(0.0..1.0));
        let p = BeamDesignProblem::new(g, 4).unwrap();
        let e = p.e_matrix(&f);
        let full = &e + e.conjugate();
        assert!(full.iter().all(|z| z.im.abs() < 1e-12));
        let r = p.r_matrix(&f);
        assert!((&r - r.transpose()).abs().max() < 1e-12);
    }

    #[test]
    fn too_few_transmissions_rejected() {
        assert!(matches!(
            BeamDesignProblem::new(DVector::from_element(3, 1.0), 4),
            Err(Error::Unidentifiable(_))
        ));
    }

    #[test]
    fn optimisation_lowers_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(74);
        let g = DVector::from_fn(12, |_, _| rng.random_range(0.2..3.0));
        let p = BeamDesignProblem::new(g, 4).unwrap();
        let f0 = unit_matrix(&mut rng, 4, 12);
        let out = optimize_beams(&p, &f0, &beam_rcg_options()).unwrap();
        assert!(out.h < out.h_initial);
        assert!(out.f_bar.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    }
}
