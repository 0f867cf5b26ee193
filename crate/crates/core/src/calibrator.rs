//! Alternating estimation of the deviations and the channel, and removal of
//! the gauge ambiguity between them.
//!
//! The forward model is unchanged by `H -> e^{j beta} H T` and
//! `Omega -> e^{-j beta} T^H Omega` for any transmit phase ramp
//! `T = diag(t(chi1, chi2))`, so estimates can only be compared with a
//! reference after both are brought to a common gauge.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};

use crate::channel_est::{
    channel_from_angles, coarse_search_4dfft, measurement_vector, refine_backtracking,
    stack_design, Angles, ChannelEstOptions,
};
use crate::error::{Error, Result};
use crate::manifold::RcgOptions;
use crate::model::{
    build_channel, gauge_vector, noiseless_measurements, BeamSchedule, ChannelParams,
    MeasurementSet, PhaseDeviations, UpaGeometry,
};
use crate::phase_est::{build_chain_design, phase_rcg_options, rcg_unit_modulus};
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    pub channel: ChannelEstOptions,
    pub phase: RcgOptions,
    pub max_outer: usize,
    /// Stop once an outer iteration lowers the cost by less than this
    /// fraction.
    pub min_rel_decrease: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            channel: ChannelEstOptions::default(),
            phase: phase_rcg_options(),
            max_outer: 20,
            min_rel_decrease: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub deviations_est: PhaseDeviations,
    pub channel_est: ChannelParams,
    /// Cost after initialisation followed by the cost after every outer
    /// iteration.
    pub cost_trace: Vec<f64>,
    pub outer_iterations: usize,
}

/// Joint least-squares cost `sum_k ||y_k - sqrt(beta) w_k^H H (F_k .* Omega)||^2`.
pub fn bcd_cost(
    measurements: &MeasurementSet,
    h: &DMatrix<C64>,
    deviations: &PhaseDeviations,
    schedule: &BeamSchedule,
) -> f64 {
    let pred = noiseless_measurements(h, deviations, schedule, measurements.pathloss_beta);
    (&measurements.y_tilde - pred).norm_squared()
}

/// Cost relative to the measurement energy below which the fit is exact to
/// working precision.
const EXACT_FIT: f64 = 1e-26;

/// Block coordinate descent starting from all-ones deviations.
pub fn run_bcd(
    measurements: &MeasurementSet,
    schedule: &BeamSchedule,
    tx: UpaGeometry,
    rx: UpaGeometry,
    opts: &CalibrationOptions,
) -> Result<CalibrationResult> {
    if measurements.y_tilde.shape() != (schedule.k(), schedule.n_rf()) {
        return Err(Error::Dimension(format!(
            "measurements are {:?}, schedule expects {:?}",
            measurements.y_tilde.shape(),
            (schedule.k(), schedule.n_rf())
        )));
    }
    let beta = measurements.pathloss_beta;
    let y_vec = measurement_vector(measurements);
    let floor = EXACT_FIT * y_vec.norm_squared();

    let mut deviations = PhaseDeviations::ones(schedule.m_t(), schedule.n_rf());
    let design = stack_design(&deviations, schedule, beta, tx, rx)?;
    let (coarse, _) = coarse_search_4dfft(&design, &y_vec, opts.channel.n_fft)?;
    let mut angles: Angles = refine_backtracking(&coarse, &design, &y_vec, &opts.channel.refine)?.angles;
    let mut channel = channel_from_angles(&angles, &design, &y_vec)?;
    let mut h = build_channel(&channel, tx, rx);
    let mut cost = bcd_cost(measurements, &h, &deviations, schedule);
    let mut cost_trace = vec![cost];
    let mut outer_iterations = 0;

    while outer_iterations < opts.max_outer {
        let mut omega = deviations.omega().clone();
        for n in 0..schedule.n_rf() {
            let chain = build_chain_design(&h, schedule, n, beta, measurements)?;
            let out = rcg_unit_modulus(&chain, &deviations.chain(n), &opts.phase)?;
            omega.set_column(n, &out.x);
        }
        let dev_new = PhaseDeviations::from_unnormalized(omega);

        let design = stack_design(&dev_new, schedule, beta, tx, rx)?;
        let refined = refine_backtracking(&angles, &design, &y_vec, &opts.channel.refine)?;
        let channel_new = channel_from_angles(&refined.angles, &design, &y_vec)?;
        let h_new = build_channel(&channel_new, tx, rx);
        let cost_new = bcd_cost(measurements, &h_new, &dev_new, schedule);
        outer_iterations += 1;
        if !(cost_new <= cost) {
            cost_trace.push(cost);
            break;
        }
        let decrease = cost - cost_new;
        deviations = dev_new;
        angles = refined.angles;
        channel = channel_new;
        h = h_new;
        cost = cost_new;
        cost_trace.push(cost);
        if cost <= floor || decrease < opts.min_rel_decrease * (cost + decrease) {
            break;
        }
    }

    Ok(CalibrationResult {
        deviations_est: deviations,
        channel_est: channel,
        cost_trace,
        outer_iterations,
    })
}

/// Parameters of the ambiguity transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaugeParams {
    pub beta_phase: f64,
    pub chi1: f64,
    pub chi2: f64,
}

impl GaugeParams {
    pub const IDENTITY: GaugeParams = GaugeParams {
        beta_phase: 0.0,
        chi1: 0.0,
        chi2: FRAC_PI_2,
    };

    /// `e^{-j beta} T^H Omega`.
    pub fn transform_deviations(&self, deviations: &PhaseDeviations, tx: UpaGeometry) -> PhaseDeviations {
        let t = gauge_vector(self.chi1, self.chi2, tx);
        let rot = C64::from_polar(1.0, -self.beta_phase);
        let mut omega = deviations.omega().clone();
        for (i, mut row) in omega.row_iter_mut().enumerate() {
            row *= t[i].conj() * rot;
        }
        PhaseDeviations::from_unnormalized(omega)
    }

    /// `e^{j beta} H T`.
    pub fn transform_channel(&self, h: &DMatrix<C64>, tx: UpaGeometry) -> DMatrix<C64> {
        let t = gauge_vector(self.chi1, self.chi2, tx);
        let rot = C64::from_polar(1.0, self.beta_phase);
        let mut out = h.clone();
        for (i, mut col) in out.column_iter_mut().enumerate() {
            col *= t[i] * rot;
        }
        out
    }
}

/// The gauge that moves the transmit direction of `channel` to broadside and
/// makes the first deviation real and positive.
pub fn canonical_gauge(deviations: &PhaseDeviations, channel: &ChannelParams) -> GaugeParams {
    GaugeParams {
        beta_phase: deviations.omega()[(0, 0)].arg(),
        chi1: channel.theta_t,
        chi2: channel.phi_t,
    }
}

/// `sum_i conj(t_i) z_i` and its derivatives with respect to `(chi1, chi2)`.
fn ramp_sum(z: &DVector<C64>, chi: [f64; 2], tx: UpaGeometry) -> (C64, [C64; 2]) {
    let (s1, c1) = chi[0].sin_cos();
    let (s2, c2) = chi[1].sin_cos();
    let u = s1 * s2;
    let v = c2;
    let (du1, du2, dv2) = (c1 * s2, s1 * c2, -s2);
    let mut sum = C64::new(0.0, 0.0);
    let mut d = [C64::new(0.0, 0.0); 2];
    for (idx, ix, iy) in tx.elements() {
        let (x, y) = (ix as f64, iy as f64);
        let term = C64::from_polar(1.0, -PI * (x * u + y * v)) * z[idx];
        sum += term;
        let dj = term * C64::new(0.0, -PI);
        d[0] += dj * (x * du1);
        d[1] += dj * (x * du2 + y * dv2);
    }
    (sum, d)
}

/// Points per axis of the coarse alignment grid.
const ALIGN_GRID: usize = 65;

/// Fits `(beta, chi1, chi2)` so that the transformed estimate is closest to
/// `reference` in Frobenius norm.
///
/// For fixed `(chi1, chi2)` the optimal `beta` is the phase of
/// `sum_i conj(t_i) z_i` with `z_i = sum_n est_in conj(ref_in)`, so only the
/// two ramp angles are searched: first on a grid, then by Armijo descent.
pub fn align_gauge(
    estimate: &PhaseDeviations,
    reference: &PhaseDeviations,
    tx: UpaGeometry,
) -> Result<(PhaseDeviations, GaugeParams)> {
    if estimate.omega().shape() != reference.omega().shape() {
        return Err(Error::Dimension(format!(
            "estimate is {:?}, reference is {:?}",
            estimate.omega().shape(),
            reference.omega().shape()
        )));
    }
    if estimate.m_t() != tx.len() {
        return Err(Error::Dimension(format!(
            "{} deviation rows for {} transmit elements",
            estimate.m_t(),
            tx.len()
        )));
    }
    let est = estimate.omega();
    let refm = reference.omega();
    let z = DVector::from_fn(est.nrows(), |i, _| {
        est.row(i).iter().zip(refm.row(i).iter()).map(|(a, b)| a * b.conj()).sum::<C64>()
    });

    // maximise |S(chi)|, descend on -|S|
    let score = |chi: [f64; 2]| ramp_sum(&z, chi, tx).0.norm();
    let mut best = [0.0, FRAC_PI_2];
    let mut best_score = score(best);
    let step = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (ALIGN_GRID - 1) as f64;
    for i in 0..ALIGN_GRID {
        for j in 0..ALIGN_GRID {
            let chi = [step(-FRAC_PI_2, FRAC_PI_2, i), step(0.0, PI, j)];
            let s = score(chi);
            if s > best_score {
                best = chi;
                best_score = s;
            }
        }
    }

    // gradient of -|S|
    let slope = |chi: [f64; 2]| -> Option<(f64, [f64; 2])> {
        let (s, d) = ramp_sum(&z, chi, tx);
        let mag = s.norm();
        (mag > 0.0).then(|| (mag, d.map(|dj| -(s.conj() * dj).re / mag)))
    };
    let mut chi = best;
    let mut alpha = 1e-2;
    for _ in 0..200 {
        let Some((mag, g)) = slope(chi) else { break };
        let g_sq = g[0] * g[0] + g[1] * g[1];
        if g_sq.sqrt() <= 1e-13 * mag.max(1.0) {
            break;
        }
        let mut accepted = false;
        alpha *= 4.0;
        for _ in 0..60 {
            let cand = [chi[0] - alpha * g[0], chi[1] - alpha * g[1]];
            if -score(cand) <= -mag - 1e-4 * alpha * g_sq {
                chi = cand;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    // The score is flat to rounding near its peak, so finish with Newton
    // steps on the gradient, kept only while the gradient shrinks.
    let h = 1e-6;
    for _ in 0..8 {
        let Some((_, g)) = slope(chi) else { break };
        let g_norm = g[0].hypot(g[1]);
        let mut hess = [[0.0; 2]; 2];
        for (j, row) in hess.iter_mut().enumerate() {
            let mut p = chi;
            let mut m = chi;
            p[j] += h;
            m[j] -= h;
            let (Some((_, gp)), Some((_, gm))) = (slope(p), slope(m)) else { break };
            *row = [(gp[0] - gm[0]) / (2.0 * h), (gp[1] - gm[1]) / (2.0 * h)];
        }
        let det = hess[0][0] * hess[1][1] - hess[0][1] * hess[1][0];
        if !(det > 0.0 && hess[0][0] > 0.0) {
            break;
        }
        let step = [
            (hess[1][1] * g[0] - hess[1][0] * g[1]) / det,
            (hess[0][0] * g[1] - hess[0][1] * g[0]) / det,
        ];
        let cand = [chi[0] - step[0], chi[1] - step[1]];
        match slope(cand) {
            Some((_, gc)) if gc[0].hypot(gc[1]) < g_norm => chi = cand,
            _ => break,
        }
    }

    let (chi1, chi2) = crate::model::wrap_direction(chi[0], chi[1]);
    let s = ramp_sum(&z, [chi1, chi2], tx).0;
    let params = GaugeParams {
        beta_phase: s.arg(),
        chi1,
        chi2,
    };
    Ok((params.transform_deviations(estimate, tx), params))
}

/// Frobenius mismatch between deviation matrices.
pub fn frobenius_distance(a: &PhaseDeviations, b: &PhaseDeviations) -> f64 {
    (a.omega() - b.omega()).norm()
}

/// Phase error in degrees over all entries except the first, which the gauge
/// fixes.
pub fn phase_rmse_deg(estimate: &PhaseDeviations, truth: &PhaseDeviations) -> f64 {
    let count = estimate.omega().len().saturating_sub(1);
    if count == 0 {
        return 0.0;
    }
    let sum_sq: f64 = estimate
        .omega()
        .iter()
        .zip(truth.omega().iter())
        .skip(1)
        .map(|(e, t)| (e * t.conj()).arg().powi(2))
        .sum();
    (sum_sq / count as f64).sqrt().to_degrees()
}
