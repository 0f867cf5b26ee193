//! Fisher information and Cramér-Rao bounds for the phase deviations.
//!
//! The measurements of all chains are stacked chain by chain,
//! `y_bar = D omega + z` with `D = blkdiag(C_1, ..., C_{N_RF})` and
//! `omega = vec(Omega)`. The unknowns are
//! `eta = [p, theta_r, phi_r, Re gamma, Im gamma]` where `p` holds the phases
//! of `omega` without the first one, which the gauge fixes together with the
//! transmit direction.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{
    build_channel, upa_response_derivatives, BeamSchedule, ChannelParams, PhaseDeviations,
    UpaGeometry,
};
use crate::phase_est::chain_matrix;
use crate::C64;

/// Condition number above which the information matrix counts as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct FimReport {
    pub fim: DMatrix<f64>,
    /// Bounds on the phase variances (radians squared).
    pub crb_phases: DVector<f64>,
    /// `sqrt(mean(crb_phases))` in degrees.
    pub crb_rmse_deg: f64,
    pub condition: f64,
}

fn check_geometry(tx: UpaGeometry, rx: UpaGeometry, schedule: &BeamSchedule) -> Result<()> {
    if schedule.m_t() != tx.len() || schedule.m_r() != rx.len() {
        return Err(Error::Dimension(format!(
            "schedule addresses {} tx / {} rx elements, arrays have {} / {}",
            schedule.m_t(),
            schedule.m_r(),
            tx.len(),
            rx.len()
        )));
    }
    Ok(())
}

/// The block-diagonal design `D`: rows `n * K + k`, columns `n * M_t + t`.
pub fn build_stacked_design(
    params: &ChannelParams,
    tx: UpaGeometry,
    rx: UpaGeometry,
    schedule: &BeamSchedule,
    beta: f64,
) -> Result<DMatrix<C64>> {
    check_geometry(tx, rx, schedule)?;
    let h = build_channel(params, tx, rx);
    let (k, m_t, n_rf) = (schedule.k(), schedule.m_t(), schedule.n_rf());
    let mut d = DMatrix::from_element(k * n_rf, m_t * n_rf, C64::new(0.0, 0.0));
    for n in 0..n_rf {
        let c = chain_matrix(&h, schedule, n, beta)?;
        d.view_mut((n * k, n * m_t), (k, m_t)).copy_from(&c);
    }
    Ok(d)
}

/// `mu = D omega` for the given parameters.
pub fn stacked_mean(
    params: &ChannelParams,
    tx: UpaGeometry,
    rx: UpaGeometry,
    deviations: &PhaseDeviations,
    schedule: &BeamSchedule,
    beta: f64,
) -> Result<DVector<C64>> {
    check_shapes(deviations, schedule)?;
    let d = build_stacked_design(params, tx, rx, schedule, beta)?;
    Ok(d * DVector::from_column_slice(deviations.omega().as_slice()))
}

fn check_shapes(deviations: &PhaseDeviations, schedule: &BeamSchedule) -> Result<()> {
    if (deviations.m_t(), deviations.n_rf()) != (schedule.m_t(), schedule.n_rf()) {
        return Err(Error::Dimension(format!(
            "deviations are {}x{}, schedule expects {}x{}",
            deviations.m_t(),
            deviations.n_rf(),
            schedule.m_t(),
            schedule.n_rf()
        )));
    }
    Ok(())
}

/// `d mu / d eta`, one column per entry of `eta`.
pub fn mean_jacobian(
    params: &ChannelParams,
    tx: UpaGeometry,
    rx: UpaGeometry,
    deviations: &PhaseDeviations,
    schedule: &BeamSchedule,
    beta: f64,
) -> Result<DMatrix<C64>> {
    check_shapes(deviations, schedule)?;
    let (k, m_t, n_rf) = (schedule.k(), schedule.m_t(), schedule.n_rf());
    let n_phase = m_t * n_rf - 1;
    let d = build_stacked_design(params, tx, rx, schedule, beta)?;
    let omega = DVector::from_column_slice(deviations.omega().as_slice());
    let mut jac = DMatrix::from_element(k * n_rf, n_phase + 4, C64::new(0.0, 0.0));

    for i in 1..m_t * n_rf {
        let col = d.column(i) * (omega[i] * C64::new(0.0, 1.0));
        jac.set_column(i - 1, &col);
    }

    let a_t = params.tx_response(tx);
    let a_r = params.rx_response(rx);
    let (dr_theta, dr_phi) = upa_response_derivatives(params.theta_r, params.phi_r, rx);
    let scale = beta.sqrt();
    for (kk, (f, w)) in schedule.f_list().iter().zip(schedule.w_list()).enumerate() {
        let g = w.dotc(&a_r);
        let g_theta = w.dotc(&dr_theta);
        let g_phi = w.dotc(&dr_phi);
        for n in 0..n_rf {
            let tx_gain: C64 = (0..m_t)
                .map(|t| a_t[t].conj() * f[(t, n)] * deviations.omega()[(t, n)])
                .sum::<C64>()
                * scale;
            let row = n * k + kk;
            jac[(row, n_phase)] = params.gamma * g_theta * tx_gain;
            jac[(row, n_phase + 1)] = params.gamma * g_phi * tx_gain;
            jac[(row, n_phase + 2)] = g * tx_gain;
            jac[(row, n_phase + 3)] = g * tx_gain * C64::new(0.0, 1.0);
        }
    }
    Ok(jac)
}

/// Fisher information of `eta` at the true parameters and its inverse
/// diagonal over the phases.
#[allow(clippy::too_many_arguments)]
pub fn fisher_information(
    params: &ChannelParams,
    tx: UpaGeometry,
    rx: UpaGeometry,
    deviations: &PhaseDeviations,
    schedule: &BeamSchedule,
    beta: f64,
    sigma2: f64,
    l: usize,
) -> Result<FimReport> {
    if !(sigma2 > 0.0) || l == 0 {
        return Err(Error::Config(format!(
            "need sigma2 > 0 and L >= 1, got {sigma2} and {l}"
        )));
    }
    let jac = mean_jacobian(params, tx, rx, deviations, schedule, beta)?;
    let gram = jac.adjoint() * &jac;
    let fim = gram.map(|z| z.re) * (2.0 * l as f64 / sigma2);
    let fim = (&fim + fim.transpose()) * 0.5;

    let eig = SymmetricEigen::new(fim.clone()).eigenvalues;
    let max = eig.max();
    let min = eig.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Singular { condition });
    }
    let inv = Cholesky::new(fim.clone())
        .ok_or(Error::Singular { condition })?
        .inverse();
    let n_phase = deviations.m_t() * deviations.n_rf() - 1;
    let crb_phases = DVector::from_fn(n_phase, |i, _| inv[(i, i)]);
    let crb_rmse_deg = if n_phase == 0 {
        0.0
    } else {
        crb_phases.mean().sqrt().to_degrees()
    };
    Ok(FimReport {
        fim,
        crb_phases,
        crb_rmse_deg,
        condition,
    })
}
