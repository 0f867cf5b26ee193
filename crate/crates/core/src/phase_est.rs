//! Per-chain phase-deviation estimation for a fixed channel.
//!
//! For chain `n` the measurements are linear in the deviation column,
//! `y_bar_n = C_n omega_n + z_bar_n`, with row `k` of `C_n` equal to
//! `sqrt(beta) w_k^H H diag(f_{k,n})`. The residual `||y_bar_n - C_n omega_n||^2`
//! is minimised over unit-modulus `omega_n` by Riemannian conjugate gradient.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::manifold::{riemannian_conjugate_gradient, CircleCost, RcgOptions, RcgOutcome};
use crate::model::{BeamSchedule, MeasurementSet};
use crate::C64;

/// The linear model of one RF chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDesign {
    /// `K x M_t`.
    pub c: DMatrix<C64>,
    /// `K` measurements of this chain.
    pub y_bar: DVector<C64>,
}

/// `C_n` for a channel matrix `h` (`M_r x M_t`).
pub fn chain_matrix(
    h: &DMatrix<C64>,
    schedule: &BeamSchedule,
    chain: usize,
    beta: f64,
) -> Result<DMatrix<C64>> {
    if chain >= schedule.n_rf() {
        return Err(Error::ChainOutOfRange {
            chain,
            n_rf: schedule.n_rf(),
        });
    }
    if h.shape() != (schedule.m_r(), schedule.m_t()) {
        return Err(Error::Dimension(format!(
            "channel is {:?}, schedule expects {:?}",
            h.shape(),
            (schedule.m_r(), schedule.m_t())
        )));
    }
    let scale = beta.sqrt();
    let mut c = DMatrix::from_element(schedule.k(), schedule.m_t(), C64::new(0.0, 0.0));
    for (k, (f, w)) in schedule.f_list().iter().zip(schedule.w_list()).enumerate() {
        let wh = w.adjoint() * h;
        for t in 0..schedule.m_t() {
            c[(k, t)] = wh[t] * f[(t, chain)] * scale;
        }
    }
    Ok(c)
}

pub fn build_chain_design(
    h: &DMatrix<C64>,
    schedule: &BeamSchedule,
    chain: usize,
    beta: f64,
    measurements: &MeasurementSet,
) -> Result<ChainDesign> {
    if measurements.y_tilde.shape() != (schedule.k(), schedule.n_rf()) {
        return Err(Error::Dimension(format!(
            "measurements are {:?}, schedule expects {:?}",
            measurements.y_tilde.shape(),
            (schedule.k(), schedule.n_rf())
        )));
    }
    let c = chain_matrix(h, schedule, chain, beta)?;
    Ok(ChainDesign {
        c,
        y_bar: measurements.y_tilde.column(chain).into_owned(),
    })
}

impl ChainDesign {
    /// `g(omega) = ||y_bar - C omega||^2`.
    pub fn residual(&self, omega: &DVector<C64>) -> f64 {
        (&self.y_bar - &self.c * omega).norm_squared()
    }

    /// `-C^H (y_bar - C omega)`, the derivative of `g` with respect to
    /// `conj(omega)`. The steepest-ascent direction for `omega` viewed as a
    /// real vector is twice this.
    pub fn conj_gradient(&self, omega: &DVector<C64>) -> DVector<C64> {
        -(self.c.adjoint() * (&self.y_bar - &self.c * omega))
    }
}

impl CircleCost for ChainDesign {
    fn cost(&self, x: &DVector<C64>) -> Option<f64> {
        Some(self.residual(x))
    }

    fn gradient(&self, x: &DVector<C64>) -> Option<DVector<C64>> {
        Some(self.conj_gradient(x) * C64::new(2.0, 0.0))
    }

    fn cost_change(&self, x: &DVector<C64>, x_new: &DVector<C64>) -> Option<f64> {
        // ||r - C d||^2 - ||r||^2 with d = x_new - x
        let cd = &self.c * (x_new - x);
        let r = &self.y_bar - &self.c * x;
        Some(cd.norm_squared() - 2.0 * cd.dotc(&r).re)
    }

    /// Exact minimiser of the quadratic along the straight line `x + t d`.
    fn initial_step(&self, x: &DVector<C64>, dir: &DVector<C64>) -> Option<f64> {
        let cd = &self.c * dir;
        let denom = cd.norm_squared();
        if denom > 0.0 {
            let r = &self.y_bar - &self.c * x;
            Some(cd.dotc(&r).re / denom)
        } else {
            None
        }
    }
}

/// Default solver settings for the phase step.
pub fn phase_rcg_options() -> RcgOptions {
    RcgOptions {
        max_iters: 200,
        grad_tol: 1e-8,
        ..RcgOptions::default()
    }
}

/// Minimises `||y_bar - C omega||^2` over unit-modulus `omega`.
pub fn rcg_unit_modulus(
    design: &ChainDesign,
    omega0: &DVector<C64>,
    opts: &RcgOptions,
) -> Result<RcgOutcome> {
    if omega0.len() != design.c.ncols() {
        return Err(Error::Dimension(format!(
            "initial point has {} entries, design has {} columns",
            omega0.len(),
            design.c.ncols()
        )));
    }
    Ok(riemannian_conjugate_gradient(design, omega0, opts))
}
