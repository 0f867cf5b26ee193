//! Forward signal model of the over-the-air calibration link.
//!
//! A hybrid transmitter with `n_rf` chains drives an `N_x x N_y` planar array
//! through unit-modulus phase shifters whose realised phases deviate from the
//! nominal ones by an unknown matrix `Omega`. A terminal with an `M_x x M_y`
//! planar array combines the signal with an analog beamformer `w_k`. The
//! channel between both arrays is a single line-of-sight path,
//!
//! ```text
//! H = gamma * a(theta_r, phi_r) * a(theta_t, phi_t)^H
//! ```
//!
//! and after matched filtering with the pilot the `k`-th transmission yields
//!
//! ```text
//! y_k = sqrt(beta) * w_k^H H (F_k .* Omega) + z_k,   z_k ~ CN(0, sigma^2 / L)
//! ```
//!
//! Element spacing is half a wavelength everywhere.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::C64;

/// Tolerance used when validating unit-modulus entries.
pub const UNIT_MODULUS_TOL: f64 = 1e-12;

/// Rectangular array of `x_count * y_count` elements.
///
/// Elements are numbered x-major: `(i_x, i_y) -> i_x * y_count + i_y`, which
/// is the ordering of the Kronecker product `a_x(theta, phi) (x) a_y(phi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpaGeometry {
    x_count: usize,
    y_count: usize,
}

impl UpaGeometry {
    pub fn new(x_count: usize, y_count: usize) -> Result<Self> {
        if x_count == 0 || y_count == 0 {
            return Err(Error::InvalidGeometry { x_count, y_count });
        }
        Ok(Self { x_count, y_count })
    }

    pub fn x_count(&self) -> usize {
        self.x_count
    }

    pub fn y_count(&self) -> usize {
        self.y_count
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.x_count * self.y_count
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Linear index of element `(i_x, i_y)` (zero based).
    pub fn index(&self, i_x: usize, i_y: usize) -> usize {
        debug_assert!(i_x < self.x_count && i_y < self.y_count);
        i_x * self.y_count + i_y
    }

    /// Iterates `(linear index, i_x, i_y)` in storage order.
    pub fn elements(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.x_count)
            .flat_map(move |ix| (0..self.y_count).map(move |iy| (ix * self.y_count + iy, ix, iy)))
    }
}

/// Linear phase progression `e^{j pi (i_x u + i_y v)}` across the array.
///
/// The steering vector of direction `(theta, phi)` is the special case
/// `u = sin(theta) sin(phi)`, `v = cos(phi)`.
pub fn ramp_response(u: f64, v: f64, geom: UpaGeometry) -> DVector<C64> {
    let mut out = DVector::from_element(geom.len(), C64::new(0.0, 0.0));
    for (idx, ix, iy) in geom.elements() {
        out[idx] = C64::from_polar(1.0, PI * (ix as f64 * u + iy as f64 * v));
    }
    out
}

/// Array response of a half-wavelength planar array toward `(theta, phi)`.
pub fn upa_response(theta: f64, phi: f64, geom: UpaGeometry) -> DVector<C64> {
    ramp_response(theta.sin() * phi.sin(), phi.cos(), geom)
}

/// Partial derivatives of [`upa_response`] with respect to `theta` and `phi`.
pub fn upa_response_derivatives(
    theta: f64,
    phi: f64,
    geom: UpaGeometry,
) -> (DVector<C64>, DVector<C64>) {
    let a = upa_response(theta, phi, geom);
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let mut d_theta = a.clone();
    let mut d_phi = a;
    for (idx, ix, iy) in geom.elements() {
        let (ix, iy) = (ix as f64, iy as f64);
        d_theta[idx] *= C64::new(0.0, PI * ix * ct * sp);
        d_phi[idx] *= C64::new(0.0, PI * (ix * st * cp - iy * sp));
    }
    (d_theta, d_phi)
}

/// Maps any `(theta, phi)` onto the equivalent direction with
/// `theta in [-pi/2, pi/2]` and `phi in [0, pi]`.
///
/// The steering vector depends on the pair only through `sin(theta) sin(phi)`
/// and `cos(phi)`, so the result produces the identical response.
pub fn wrap_direction(theta: f64, phi: f64) -> (f64, f64) {
    let mut theta = theta;
    let mut phi = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if phi < 0.0 {
        phi = -phi;
        theta = -theta;
    }
    theta = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if theta > PI / 2.0 {
        theta = PI - theta;
    } else if theta < -PI / 2.0 {
        theta = -PI - theta;
    }
    (theta, phi)
}

/// Complex gain and the four angles of the line-of-sight channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub gamma: C64,
    pub theta_r: f64,
    pub phi_r: f64,
    pub theta_t: f64,
    pub phi_t: f64,
}

impl ChannelParams {
    /// Builds the parameters, folding the angles into their canonical ranges.
    pub fn new(gamma: C64, theta_r: f64, phi_r: f64, theta_t: f64, phi_t: f64) -> Self {
        let (theta_r, phi_r) = wrap_direction(theta_r, phi_r);
        let (theta_t, phi_t) = wrap_direction(theta_t, phi_t);
        Self {
            gamma,
            theta_r,
            phi_r,
            theta_t,
            phi_t,
        }
    }

    pub fn angles(&self) -> [f64; 4] {
        [self.theta_r, self.phi_r, self.theta_t, self.phi_t]
    }

    pub fn rx_response(&self, rx: UpaGeometry) -> DVector<C64> {
        upa_response(self.theta_r, self.phi_r, rx)
    }

    pub fn tx_response(&self, tx: UpaGeometry) -> DVector<C64> {
        upa_response(self.theta_t, self.phi_t, tx)
    }
}

/// Rank-one channel matrix `H` of shape `M_r x M_t`.
pub fn build_channel(params: &ChannelParams, tx: UpaGeometry, rx: UpaGeometry) -> DMatrix<C64> {
    let a_r = params.rx_response(rx);
    let a_t = params.tx_response(tx);
    (a_r * a_t.adjoint()) * params.gamma
}

fn check_unit_modulus<'a>(entries: impl Iterator<Item = &'a C64>) -> Result<()> {
    for (index, z) in entries.enumerate() {
        let modulus = z.norm();
        if !((modulus - 1.0).abs() <= UNIT_MODULUS_TOL) {
            return Err(Error::NotUnitModulus { index, modulus });
        }
    }
    Ok(())
}

/// Per-element, per-chain phase deviations `Omega` (`M_t x N_RF`).
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDeviations {
    omega: DMatrix<C64>,
}

impl PhaseDeviations {
    pub fn new(omega: DMatrix<C64>) -> Result<Self> {
        check_unit_modulus(omega.iter())?;
        Ok(Self { omega })
    }

    /// No deviation at all.
    pub fn ones(m_t: usize, n_rf: usize) -> Self {
        Self {
            omega: DMatrix::from_element(m_t, n_rf, C64::new(1.0, 0.0)),
        }
    }

    pub fn from_phases(phases: &DMatrix<f64>) -> Self {
        Self {
            omega: phases.map(|p| C64::from_polar(1.0, p)),
        }
    }

    /// Phases drawn i.i.d. uniformly from `[-epsilon, epsilon]` radians.
    pub fn random_uniform<R: Rng + ?Sized>(
        m_t: usize,
        n_rf: usize,
        epsilon: f64,
        rng: &mut R,
    ) -> Self {
        let phases = DMatrix::from_fn(m_t, n_rf, |_, _| {
            if epsilon > 0.0 {
                rng.random_range(-epsilon..=epsilon)
            } else {
                0.0
            }
        });
        Self::from_phases(&phases)
    }

    pub fn omega(&self) -> &DMatrix<C64> {
        &self.omega
    }

    pub fn into_inner(self) -> DMatrix<C64> {
        self.omega
    }

    pub fn m_t(&self) -> usize {
        self.omega.nrows()
    }

    pub fn n_rf(&self) -> usize {
        self.omega.ncols()
    }

    pub fn phases(&self) -> DMatrix<f64> {
        self.omega.map(|z| z.arg())
    }

    /// Column `chain` as a vector.
    pub fn chain(&self, chain: usize) -> DVector<C64> {
        self.omega.column(chain).into_owned()
    }

    /// Projects every entry back onto the unit circle. Used to scrub the
    /// rounding drift of long optimisation runs.
    pub(crate) fn from_unnormalized(omega: DMatrix<C64>) -> Self {
        Self {
            omega: omega.map(|z| {
                let r = z.norm();
                if r > 0.0 {
                    z / r
                } else {
                    C64::new(1.0, 0.0)
                }
            }),
        }
    }
}

/// The `K` transmit patterns `F_k` (`M_t x N_RF`) and receive patterns `w_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamSchedule {
    f_list: Vec<DMatrix<C64>>,
    w_list: Vec<DVector<C64>>,
}

impl BeamSchedule {
    pub fn new(f_list: Vec<DMatrix<C64>>, w_list: Vec<DVector<C64>>) -> Result<Self> {
        if f_list.is_empty() {
            return Err(Error::Dimension("beam schedule needs at least one transmission".into()));
        }
        if f_list.len() != w_list.len() {
            return Err(Error::Dimension(format!(
                "{} transmit patterns but {} receive patterns",
                f_list.len(),
                w_list.len()
            )));
        }
        let shape = f_list[0].shape();
        let m_r = w_list[0].len();
        for (k, (f, w)) in f_list.iter().zip(&w_list).enumerate() {
            if f.shape() != shape || w.len() != m_r {
                return Err(Error::Dimension(format!("transmission {k} has inconsistent shape")));
            }
            check_unit_modulus(f.iter())?;
            check_unit_modulus(w.iter())?;
        }
        Ok(Self { f_list, w_list })
    }

    /// Assembles a schedule from per-chain pattern stacks `F_bar_n` (`M_t x K`).
    pub fn from_chain_stacks(stacks: &[DMatrix<C64>], w_list: Vec<DVector<C64>>) -> Result<Self> {
        let Some(first) = stacks.first() else {
            return Err(Error::Dimension("no chain stacks".into()));
        };
        let (m_t, k) = first.shape();
        if stacks.iter().any(|s| s.shape() != (m_t, k)) {
            return Err(Error::Dimension("chain stacks differ in shape".into()));
        }
        let f_list = (0..k)
            .map(|kk| DMatrix::from_fn(m_t, stacks.len(), |t, n| stacks[n][(t, kk)]))
            .collect();
        Self::new(f_list, w_list)
    }

    /// Independent uniformly random phases on every transmit and receive weight.
    pub fn random<R: Rng + ?Sized>(
        m_t: usize,
        m_r: usize,
        n_rf: usize,
        k: usize,
        rng: &mut R,
    ) -> Self {
        let phase = |rng: &mut R| C64::from_polar(1.0, rng.random_range(0.0..2.0 * PI));
        let mut f_list = Vec::with_capacity(k);
        let mut w_list = Vec::with_capacity(k);
        for _ in 0..k {
            f_list.push(DMatrix::from_fn(m_t, n_rf, |_, _| phase(rng)));
            w_list.push(DVector::from_fn(m_r, |_, _| phase(rng)));
        }
        Self { f_list, w_list }
    }

    pub fn k(&self) -> usize {
        self.f_list.len()
    }

    pub fn m_t(&self) -> usize {
        self.f_list[0].nrows()
    }

    pub fn n_rf(&self) -> usize {
        self.f_list[0].ncols()
    }

    pub fn m_r(&self) -> usize {
        self.w_list[0].len()
    }

    pub fn f_list(&self) -> &[DMatrix<C64>] {
        &self.f_list
    }

    pub fn w_list(&self) -> &[DVector<C64>] {
        &self.w_list
    }

    /// `F_bar_n = [f_{1,n}, ..., f_{K,n}]`, the `M_t x K` stack of chain `n`.
    pub fn chain_stack(&self, chain: usize) -> DMatrix<C64> {
        DMatrix::from_fn(self.m_t(), self.k(), |t, k| self.f_list[k][(t, chain)])
    }

    /// Replaces the transmit patterns of chain `chain`.
    pub fn with_chain_stack(mut self, chain: usize, stack: &DMatrix<C64>) -> Result<Self> {
        if chain >= self.n_rf() {
            return Err(Error::ChainOutOfRange {
                chain,
                n_rf: self.n_rf(),
            });
        }
        if stack.shape() != (self.m_t(), self.k()) {
            return Err(Error::Dimension(format!(
                "chain stack is {:?}, expected {:?}",
                stack.shape(),
                (self.m_t(), self.k())
            )));
        }
        check_unit_modulus(stack.iter())?;
        for (k, f) in self.f_list.iter_mut().enumerate() {
            f.set_column(chain, &stack.column(k));
        }
        Ok(self)
    }

    pub(crate) fn check_against(&self, deviations: &PhaseDeviations) -> Result<()> {
        if deviations.omega().shape() != (self.m_t(), self.n_rf()) {
            return Err(Error::Dimension(format!(
                "deviations are {:?} but patterns are {:?}",
                deviations.omega().shape(),
                (self.m_t(), self.n_rf())
            )));
        }
        Ok(())
    }
}

/// Pilot block `S` (`N_RF x L`) with `S S^H = L I`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pilot {
    s: DMatrix<C64>,
}

impl Pilot {
    pub fn s(&self) -> &DMatrix<C64> {
        &self.s
    }

    pub fn n_rf(&self) -> usize {
        self.s.nrows()
    }

    pub fn len(&self) -> usize {
        self.s.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.s.ncols() == 0
    }
}

/// `e^{-j 2 pi num / den}` with exact values on the quarter turns.
fn unit_root(num: usize, den: usize) -> C64 {
    let r = num % den;
    if (4 * r).is_multiple_of(den) {
        match 4 * r / den {
            0 => C64::new(1.0, 0.0),
            1 => C64::new(0.0, -1.0),
            2 => C64::new(-1.0, 0.0),
            _ => C64::new(0.0, 1.0),
        }
    } else {
        C64::from_polar(1.0, -2.0 * PI * r as f64 / den as f64)
    }
}

/// First `n_rf` rows of the `l`-point DFT matrix with unit-modulus entries.
pub fn synth_pilot(n_rf: usize, l: usize) -> Result<Pilot> {
    if n_rf == 0 || l < n_rf {
        return Err(Error::InvalidPilot { n_rf, l });
    }
    Ok(Pilot {
        s: DMatrix::from_fn(n_rf, l, |n, t| unit_root(n * t, l)),
    })
}

/// Matched-filtered measurements `y_tilde_k`, one row per transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    /// `K x N_RF`; row `k` is `y_tilde_k`.
    pub y_tilde: DMatrix<C64>,
    /// Per-entry noise variance after matched filtering, `sigma^2 / L`.
    pub noise_var: f64,
    pub pathloss_beta: f64,
}

impl MeasurementSet {
    pub fn k(&self) -> usize {
        self.y_tilde.nrows()
    }

    pub fn n_rf(&self) -> usize {
        self.y_tilde.ncols()
    }
}

fn check_link(
    tx: UpaGeometry,
    rx: UpaGeometry,
    deviations: &PhaseDeviations,
    schedule: &BeamSchedule,
) -> Result<()> {
    schedule.check_against(deviations)?;
    if schedule.m_t() != tx.len() || schedule.m_r() != rx.len() {
        return Err(Error::Dimension(format!(
            "patterns address {}x{} elements, arrays have {}x{}",
            schedule.m_t(),
            schedule.m_r(),
            tx.len(),
            rx.len()
        )));
    }
    Ok(())
}

/// Noise-free rows `sqrt(beta) w_k^H H (F_k .* Omega)` for a given channel matrix.
pub fn noiseless_measurements(
    h: &DMatrix<C64>,
    deviations: &PhaseDeviations,
    schedule: &BeamSchedule,
    beta: f64,
) -> DMatrix<C64> {
    let scale = beta.sqrt();
    let omega = deviations.omega();
    let mut y = DMatrix::from_element(schedule.k(), schedule.n_rf(), C64::new(0.0, 0.0));
    for (k, (f, w)) in schedule.f_list().iter().zip(schedule.w_list()).enumerate() {
        let wh = w.adjoint() * h;
        let a = f.component_mul(omega);
        let row = wh * a;
        for n in 0..schedule.n_rf() {
            y[(k, n)] = row[n] * scale;
        }
    }
    y
}

/// Draws a circularly-symmetric complex Gaussian sample of variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re * s, im * s)
}

/// Synthesises matched-filtered measurements directly.
///
/// Noise entries are drawn from a ChaCha stream seeded by `seed`, so a fixed
/// seed yields the same unit-variance draws at every noise level.
#[allow(clippy::too_many_arguments)]
pub fn simulate_measurements(
    params: &ChannelParams,
    tx: UpaGeometry,
    rx: UpaGeometry,
    deviations: &PhaseDeviations,
    schedule: &BeamSchedule,
    pilot: &Pilot,
    sigma2: f64,
    beta: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    check_link(tx, rx, deviations, schedule)?;
    if pilot.n_rf() != schedule.n_rf() {
        return Err(Error::Dimension(format!(
            "pilot has {} rows for {} chains",
            pilot.n_rf(),
            schedule.n_rf()
        )));
    }
    if !(sigma2 >= 0.0) || !(beta > 0.0) {
        return Err(Error::Config(format!(
            "need sigma2 >= 0 and beta > 0, got {sigma2} and {beta}"
        )));
    }
    let h = build_channel(params, tx, rx);
    let mut y_tilde = noiseless_measurements(&h, deviations, schedule, beta);
    let noise_var = sigma2 / pilot.len() as f64;
    if noise_var > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for z in y_tilde.iter_mut() {
            *z += complex_gaussian(&mut rng, noise_var);
        }
    }
    Ok(MeasurementSet {
        y_tilde,
        noise_var,
        pathloss_beta: beta,
    })
}

/// Raw received blocks `y_k` (`K x L`, one row per transmission) before
/// matched filtering, with noise of variance `sigma2` per sample.
#[allow(clippy::too_many_arguments)]
pub fn simulate_received_blocks(
    params: &ChannelParams,
    tx: UpaGeometry,
    rx: UpaGeometry,
    deviations: &PhaseDeviations,
    schedule: &BeamSchedule,
    pilot: &Pilot,
    sigma2: f64,
    beta: f64,
    seed: u64,
) -> Result<DMatrix<C64>> {
    check_link(tx, rx, deviations, schedule)?;
    let h = build_channel(params, tx, rx);
    let clean = noiseless_measurements(&h, deviations, schedule, beta);
    let mut blocks = clean * pilot.s();
    if sigma2 > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for z in blocks.iter_mut() {
            *z += complex_gaussian(&mut rng, sigma2);
        }
    }
    Ok(blocks)
}

/// Collapses raw blocks with `S^H / L`.
pub fn matched_filter(blocks: &DMatrix<C64>, pilot: &Pilot) -> DMatrix<C64> {
    blocks * pilot.s().adjoint() / C64::new(pilot.len() as f64, 0.0)
}

/// Gauge vector `t = a_x(chi1, chi2) (x) a_y(chi2)` over the transmit array.
pub fn gauge_vector(chi1: f64, chi2: f64, tx: UpaGeometry) -> DVector<C64> {
    upa_response(chi1, chi2, tx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn geom(x: usize, y: usize) -> UpaGeometry {
        UpaGeometry::new(x, y).unwrap()
    }

    #[test]
    fn broadside_response_is_all_ones() {
        let a = upa_response(0.0, PI / 2.0, geom(4, 4));
        assert_eq!(a.len(), 16);
        for z in a.iter() {
            assert_abs_diff_eq!(z.re, 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(z.im, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn single_element_response() {
        let a = upa_response(0.3, 1.1, geom(1, 1));
        assert_eq!(a.as_slice(), &[C64::new(1.0, 0.0)]);
    }

    #[test]
    fn endfire_pair_alternates_sign() {
        let a = upa_response(PI / 2.0, PI / 2.0, geom(2, 1));
        assert_abs_diff_eq!(a[0].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a[1].re, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a[1].im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn response_entries_follow_scalar_formula() {
        let g = geom(3, 5);
        let (theta, phi) = (-0.4, 2.2);
        let a = upa_response(theta, phi, g);
        for ix in 0..3 {
            for iy in 0..5 {
                let expect = C64::from_polar(
                    1.0,
                    PI * (ix as f64 * theta.sin() * phi.sin() + iy as f64 * phi.cos()),
                );
                assert!((a[g.index(ix, iy)] - expect).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_dimension_geometry_rejected() {
        assert!(matches!(UpaGeometry::new(0, 4), Err(Error::InvalidGeometry { .. })));
    }

    #[test]
    fn channel_examples() {
        let g = geom(2, 2);
        let ones = ChannelParams::new(C64::new(1.0, 0.0), 0.0, PI / 2.0, 0.0, PI / 2.0);
        let h = build_channel(&ones, g, g);
        assert!(h.iter().all(|z| (z - C64::new(1.0, 0.0)).norm() < 1e-15));

        let zero = ChannelParams::new(C64::new(0.0, 0.0), 0.3, 0.4, 0.5, 0.6);
        assert!(build_channel(&zero, g, g).iter().all(|z| z.norm() == 0.0));

        let p = ChannelParams::new(C64::new(1.0, 0.0), PI / 6.0, PI / 3.0, -PI / 4.0, 2.0 * PI / 3.0);
        let h = build_channel(&p, g, g);
        for (r, rx, ry) in g.elements() {
            for (t, tx_, ty) in g.elements() {
                let rx_phase = PI
                    * (rx as f64 * p.theta_r.sin() * p.phi_r.sin() + ry as f64 * p.phi_r.cos());
                let tx_phase = PI
                    * (tx_ as f64 * p.theta_t.sin() * p.phi_t.sin() + ty as f64 * p.phi_t.cos());
                let expect = C64::from_polar(1.0, rx_phase - tx_phase);
                assert!((h[(r, t)] - expect).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn channel_norm_matches_gain() {
        let (tx, rx) = (geom(3, 2), geom(2, 4));
        let p = ChannelParams::new(C64::new(0.7, -1.3), 0.2, 1.0, -0.9, 2.5);
        let h = build_channel(&p, tx, rx);
        let expect = p.gamma.norm() * ((tx.len() * rx.len()) as f64).sqrt();
        assert_abs_diff_eq!(h.norm(), expect, epsilon = 1e-12);
        let sv = h.clone().svd(false, false).singular_values;
        assert!(sv[1] < 1e-10 * sv[0]);
    }

    #[test]
    fn pilot_examples() {
        assert_eq!(synth_pilot(1, 1).unwrap().s()[(0, 0)], C64::new(1.0, 0.0));
        for (n_rf, l) in [(4, 4), (2, 4), (3, 7), (2, 2)] {
            let p = synth_pilot(n_rf, l).unwrap();
            let gram = p.s() * p.s().adjoint();
            for i in 0..n_rf {
                for j in 0..n_rf {
                    let expect = if i == j { l as f64 } else { 0.0 };
                    assert!((gram[(i, j)] - C64::new(expect, 0.0)).norm() < 1e-12);
                }
            }
        }
        // quarter-turn DFT entries are exact
        let p = synth_pilot(4, 4).unwrap();
        let gram = p.s() * p.s().adjoint();
        assert_eq!(gram, DMatrix::from_diagonal_element(4, 4, C64::new(4.0, 0.0)));
        assert!(matches!(synth_pilot(3, 2), Err(Error::InvalidPilot { .. })));
    }

    #[test]
    fn wrap_direction_preserves_response() {
        let g = geom(3, 3);
        for &(theta, phi) in &[(2.0, 0.5), (-2.5, 1.0), (0.3, -0.7), (1.0, 4.0), (7.0, -9.0)] {
            let (t2, p2) = wrap_direction(theta, phi);
            assert!((-PI / 2.0..=PI / 2.0).contains(&t2));
            assert!((0.0..=PI).contains(&p2));
            let d = upa_response(theta, phi, g) - upa_response(t2, p2, g);
            assert!(d.norm() < 1e-12, "{theta} {phi}");
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let g = geom(3, 4);
        let (theta, phi, h) = (0.4, 1.9, 1e-6);
        let (dt, dp) = upa_response_derivatives(theta, phi, g);
        let fd_t = (upa_response(theta + h, phi, g) - upa_response(theta - h, phi, g)) / C64::new(2.0 * h, 0.0);
        let fd_p = (upa_response(theta, phi + h, g) - upa_response(theta, phi - h, g)) / C64::new(2.0 * h, 0.0);
        assert!((dt - fd_t).norm() < 1e-8);
        assert!((dp - fd_p).norm() < 1e-8);
    }

    #[test]
    fn noiseless_without_deviation_is_nominal_link() {
        let (tx, rx) = (geom(2, 2), geom(2, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let schedule = BeamSchedule::random(4, 4, 2, 3, &mut rng);
        let p = ChannelParams::new(C64::new(0.3, 0.8), 0.1, 1.2, -0.5, 0.7);
        let pilot = synth_pilot(2, 2).unwrap();
        let ones = PhaseDeviations::ones(4, 2);
        let m = simulate_measurements(&p, tx, rx, &ones, &schedule, &pilot, 0.0, 2.0, 1).unwrap();
        let h = build_channel(&p, tx, rx);
        for k in 0..3 {
            let expect = (schedule.w_list()[k].adjoint() * &h * &schedule.f_list()[k]) * C64::new(2f64.sqrt(), 0.0);
            for n in 0..2 {
                assert!((m.y_tilde[(k, n)] - expect[n]).norm() < 1e-12);
            }
        }
        let zero = ChannelParams { gamma: C64::new(0.0, 0.0), ..p };
        let m = simulate_measurements(&zero, tx, rx, &ones, &schedule, &pilot, 0.0, 1.0, 1).unwrap();
        assert!(m.y_tilde.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let (tx, rx) = (geom(2, 2), geom(2, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let schedule = BeamSchedule::random(4, 4, 2, 3, &mut rng);
        let p = ChannelParams::new(C64::new(1.0, 0.0), 0.0, 1.0, 0.0, 1.0);
        let pilot = synth_pilot(2, 2).unwrap();
        let wrong = PhaseDeviations::ones(4, 3);
        assert!(matches!(
            simulate_measurements(&p, tx, rx, &wrong, &schedule, &pilot, 0.0, 1.0, 0),
            Err(Error::Dimension(_))
        ));
        let big_tx = geom(3, 2);
        let ones = PhaseDeviations::ones(4, 2);
        assert!(simulate_measurements(&p, big_tx, rx, &ones, &schedule, &pilot, 0.0, 1.0, 0).is_err());
    }

    #[test]
    fn non_unit_entries_rejected() {
        let mut m = DMatrix::from_element(2, 1, C64::new(1.0, 0.0));
        m[(1, 0)] = C64::new(1.1, 0.0);
        assert!(matches!(PhaseDeviations::new(m), Err(Error::NotUnitModulus { index: 1, .. })));
    }

    #[test]
    fn chain_stack_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = BeamSchedule::random(4, 3, 2, 5, &mut rng);
        let stacks: Vec<_> = (0..2).map(|n| s.chain_stack(n)).collect();
        let rebuilt = BeamSchedule::from_chain_stacks(&stacks, s.w_list().to_vec()).unwrap();
        assert_eq!(rebuilt, s);
    }
}
