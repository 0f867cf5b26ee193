//! Channel estimation for a fixed deviation estimate.
//!
//! With `Omega` fixed, the measurements are linear in the vectorised channel,
//! `y = gamma * B * a_vec(zeta) + z`, where
//! `B_k = sqrt(beta) (A_k^T (x) w_k^H)`, `A_k = F_k .* Omega` and
//! `a_vec = vec(a_r a_t^H)`. Eliminating the gain by least squares leaves the
//! concentrated objective
//!
//! ```text
//! f(zeta) = |y^H B a_vec|^2 / ||B a_vec||^2
//! ```
//!
//! over `zeta = (theta_r, phi_r, theta_t, phi_t)`. It is maximised on a 4-D
//! FFT grid and then polished by backtracking gradient steps.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::model::{
    ramp_response, upa_response, upa_response_derivatives, wrap_direction, BeamSchedule, ChannelParams,
    MeasurementSet, PhaseDeviations, UpaGeometry,
};
use crate::C64;

/// Angles in the order `(theta_r, phi_r, theta_t, phi_t)`.
pub type Angles = [f64; 4];

/// Denominators below this are treated as a design without energy.
const DEGENERATE_ENERGY: f64 = 1e-300;

/// Cells whose design energy is below this fraction of the peak are excluded
/// from the coarse argmax.
pub const GRID_FLOOR: f64 = 1e-12;

/// Below this `|sin(phi)|` the paired azimuth is unidentifiable and set to 0.
pub const ELEVATION_GUARD: f64 = 1e-3;

/// The stacked linear model `B` in factored form.
///
/// Row `k * N_RF + n` of `B` is `sqrt(beta) * (a_{k,n}^T (x) w_k^H)` where
/// `a_{k,n}` is column `n` of `A_k`. Columns follow `vec` order: index
/// `t * M_r + r` for transmit element `t` and receive element `r`.
#[derive(Debug, Clone)]
pub struct StackedDesign {
    a_list: Vec<DMatrix<C64>>,
    w_list: Vec<DVector<C64>>,
    beta: f64,
    tx: UpaGeometry,
    rx: UpaGeometry,
}

impl StackedDesign {
    pub fn k(&self) -> usize {
        self.a_list.len()
    }

    pub fn n_rf(&self) -> usize {
        self.a_list[0].ncols()
    }

    pub fn rows(&self) -> usize {
        self.k() * self.n_rf()
    }

    pub fn tx(&self) -> UpaGeometry {
        self.tx
    }

    pub fn rx(&self) -> UpaGeometry {
        self.rx
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `A_k = F_k .* Omega`.
    pub fn a_list(&self) -> &[DMatrix<C64>] {
        &self.a_list
    }

    /// Materialises `B` as a dense `(K N_RF) x (M_r M_t)` matrix.
    pub fn to_dense(&self) -> DMatrix<C64> {
        let (m_t, m_r) = (self.tx.len(), self.rx.len());
        let scale = self.beta.sqrt();
        let n_rf = self.n_rf();
        let mut b = DMatrix::from_element(self.rows(), m_t * m_r, C64::new(0.0, 0.0));
        for (k, (a, w)) in self.a_list.iter().zip(&self.w_list).enumerate() {
            for n in 0..n_rf {
                for t in 0..m_t {
                    for r in 0..m_r {
                        b[(k * n_rf + n, t * m_r + r)] = a[(t, n)] * w[r].conj() * scale;
                    }
                }
            }
        }
        b
    }

    /// `B a_vec` for `a_vec = vec(a_r a_t^H)`, without forming either factor.
    pub fn apply_outer(&self, a_r: &DVector<C64>, a_t: &DVector<C64>) -> DVector<C64> {
        let scale = self.beta.sqrt();
        let n_rf = self.n_rf();
        let a_t_conj = a_t.map(|z| z.conj());
        let mut out = DVector::from_element(self.rows(), C64::new(0.0, 0.0));
        for (k, (a, w)) in self.a_list.iter().zip(&self.w_list).enumerate() {
            let g = w.dotc(a_r) * scale;
            let p = a.tr_mul(&a_t_conj);
            for n in 0..n_rf {
                out[k * n_rf + n] = g * p[n];
            }
        }
        out
    }

    fn steer(&self, zeta: &Angles) -> DVector<C64> {
        let a_r = upa_response(zeta[0], zeta[1], self.rx);
        let a_t = upa_response(zeta[2], zeta[3], self.tx);
        self.apply_outer(&a_r, &a_t)
    }

    fn steer_cosines(&self, c: &[f64; 4]) -> DVector<C64> {
        let a_r = ramp_response(c[0], c[1], self.rx);
        let a_t = ramp_response(c[2], c[3], self.tx);
        self.apply_outer(&a_r, &a_t)
    }

    /// `B a_vec` and its partial derivatives along the four direction cosines.
    fn steer_cosines_with_jacobian(&self, c: &[f64; 4]) -> (DVector<C64>, [DVector<C64>; 4]) {
        let a_r = ramp_response(c[0], c[1], self.rx);
        let a_t = ramp_response(c[2], c[3], self.tx);
        let slope = |a: &DVector<C64>, geom: UpaGeometry, along_x: bool| {
            let mut d = a.clone();
            for (idx, ix, iy) in geom.elements() {
                let k = if along_x { ix } else { iy };
                d[idx] *= C64::new(0.0, PI * k as f64);
            }
            d
        };
        (
            self.apply_outer(&a_r, &a_t),
            [
                self.apply_outer(&slope(&a_r, self.rx, true), &a_t),
                self.apply_outer(&slope(&a_r, self.rx, false), &a_t),
                self.apply_outer(&a_r, &slope(&a_t, self.tx, true)),
                self.apply_outer(&a_r, &slope(&a_t, self.tx, false)),
            ],
        )
    }

    /// `B a_vec` together with its partial derivatives along each angle.
    fn steer_with_jacobian(&self, zeta: &Angles) -> (DVector<C64>, [DVector<C64>; 4]) {
        let a_r = upa_response(zeta[0], zeta[1], self.rx);
        let a_t = upa_response(zeta[2], zeta[3], self.tx);
        let (dr_theta, dr_phi) = upa_response_derivatives(zeta[0], zeta[1], self.rx);
        let (dt_theta, dt_phi) = upa_response_derivatives(zeta[2], zeta[3], self.tx);
        (
            self.apply_outer(&a_r, &a_t),
            [
                self.apply_outer(&dr_theta, &a_t),
                self.apply_outer(&dr_phi, &a_t),
                self.apply_outer(&a_r, &dt_theta),
                self.apply_outer(&a_r, &dt_phi),
            ],
        )
    }
}

/// Builds the stacked design for fixed deviations.
pub fn stack_design(
    deviations: &PhaseDeviations,
    schedule: &BeamSchedule,
    beta: f64,
    tx: UpaGeometry,
    rx: UpaGeometry,
) -> Result<StackedDesign> {
    schedule.check_against(deviations)?;
    if schedule.m_t() != tx.len() || schedule.m_r() != rx.len() {
        return Err(Error::Dimension(format!(
            "schedule addresses {} tx / {} rx elements, arrays have {} / {}",
            schedule.m_t(),
            schedule.m_r(),
            tx.len(),
            rx.len()
        )));
    }
    if !(beta > 0.0) {
        return Err(Error::Config(format!("path loss must be positive, got {beta}")));
    }
    let a_list = schedule
        .f_list()
        .iter()
        .map(|f| f.component_mul(deviations.omega()))
        .collect();
    Ok(StackedDesign {
        a_list,
        w_list: schedule.w_list().to_vec(),
        beta,
        tx,
        rx,
    })
}

/// Stacks the measurement rows as `y_vec[k * N_RF + n] = y_tilde_k[n]`.
pub fn measurement_vector(measurements: &MeasurementSet) -> DVector<C64> {
    let (k, n_rf) = measurements.y_tilde.shape();
    DVector::from_fn(k * n_rf, |i, _| measurements.y_tilde[(i / n_rf, i % n_rf)])
}

/// `vec(a_r(theta_r, phi_r) a_t(theta_t, phi_t)^H)`.
pub fn steering_vec(zeta: &Angles, tx: UpaGeometry, rx: UpaGeometry) -> DVector<C64> {
    let a_r = upa_response(zeta[0], zeta[1], rx);
    let a_t = upa_response(zeta[2], zeta[3], tx);
    let m_r = rx.len();
    DVector::from_fn(tx.len() * m_r, |i, _| a_r[i % m_r] * a_t[i / m_r].conj())
}

fn check_rows(design: &StackedDesign, y_vec: &DVector<C64>) -> Result<()> {
    if y_vec.len() != design.rows() {
        return Err(Error::Dimension(format!(
            "{} measurements for a design with {} rows",
            y_vec.len(),
            design.rows()
        )));
    }
    Ok(())
}

fn degenerate(zeta: &Angles) -> Error {
    Error::DegenerateDesign(format!("design carries no energy toward {zeta:?}"))
}

/// Concentrated least-squares objective `|y^H B a|^2 / ||B a||^2`.
pub fn objective_f(zeta: &Angles, design: &StackedDesign, y_vec: &DVector<C64>) -> Result<f64> {
    check_rows(design, y_vec)?;
    let b = design.steer(zeta);
    let energy = b.norm_squared();
    if !(energy >= DEGENERATE_ENERGY) {
        return Err(degenerate(zeta));
    }
    Ok(y_vec.dotc(&b).norm_sqr() / energy)
}

/// Least-squares gain `a^H B^H y / (a^H B^H B a)` at the given angles.
pub fn ls_gain(zeta: &Angles, design: &StackedDesign, y_vec: &DVector<C64>) -> Result<C64> {
    check_rows(design, y_vec)?;
    let b = design.steer(zeta);
    let energy = b.norm_squared();
    if !(energy >= DEGENERATE_ENERGY) {
        return Err(degenerate(zeta));
    }
    Ok(b.dotc(y_vec) / energy)
}

/// Residual `||y - gamma B a||^2` at the least-squares gain, which equals
/// `||y||^2 - f(zeta)` but stays accurate when the fit is nearly exact.
fn residual_and_gradient(
    zeta: &Angles,
    design: &StackedDesign,
    y_vec: &DVector<C64>,
) -> Option<(f64, [f64; 4])> {
    let (b, jac) = design.steer_with_jacobian(zeta);
    residual_gradient_of(b, &jac, y_vec)
}

fn residual_gradient_of(
    b: DVector<C64>,
    jac: &[DVector<C64>; 4],
    y_vec: &DVector<C64>,
) -> Option<(f64, [f64; 4])> {
    let energy = b.norm_squared();
    if !(energy >= DEGENERATE_ENERGY) {
        return None;
    }
    let gamma = b.dotc(y_vec) / energy;
    let err = y_vec - &b * gamma;
    let mut grad = [0.0; 4];
    for (g, db) in grad.iter_mut().zip(jac) {
        *g = -2.0 * (gamma * err.dotc(db)).re;
    }
    Some((err.norm_squared(), grad))
}

fn residual(zeta: &Angles, design: &StackedDesign, y_vec: &DVector<C64>) -> Option<f64> {
    residual_of(design.steer(zeta), y_vec)
}

fn residual_cosines(c: &[f64; 4], design: &StackedDesign, y_vec: &DVector<C64>) -> Option<f64> {
    residual_of(design.steer_cosines(c), y_vec)
}

fn residual_and_gradient_cosines(
    c: &[f64; 4],
    design: &StackedDesign,
    y_vec: &DVector<C64>,
) -> Option<(f64, [f64; 4])> {
    let (b, jac) = design.steer_cosines_with_jacobian(c);
    residual_gradient_of(b, &jac, y_vec)
}

fn residual_of(b: DVector<C64>, y_vec: &DVector<C64>) -> Option<f64> {
    let energy = b.norm_squared();
    if !(energy >= DEGENERATE_ENERGY) {
        return None;
    }
    let gamma = b.dotc(y_vec) / energy;
    Some((y_vec - &b * gamma).norm_squared())
}

/// Analytic gradient of [`objective_f`] with respect to the four angles.
pub fn gradient_f(zeta: &Angles, design: &StackedDesign, y_vec: &DVector<C64>) -> Result<Angles> {
    check_rows(design, y_vec)?;
    let (_, g) = residual_and_gradient(zeta, design, y_vec).ok_or_else(|| degenerate(zeta))?;
    Ok(g.map(|v| -v))
}

/// Coarse objective evaluated on the full frequency grid.
///
/// Tensors are stored row-major with axes `(theta_r, phi_r, theta_t, phi_t)`;
/// cell `i` along an axis corresponds to the DFT frequency `i / n_fft`.
#[derive(Debug, Clone)]
pub struct AngleGrid {
    pub n_fft: usize,
    /// Denominator `sum_m |b_m^T a_vec|^2`.
    pub q: Vec<f64>,
    /// Numerator `|y^H B a_vec|^2`.
    pub r: Vec<f64>,
    /// `r / q` on valid cells, zero elsewhere.
    pub t: Vec<f64>,
    /// Cells with `q` below this value are excluded.
    pub q_floor: f64,
}

impl AngleGrid {
    pub fn flat_index(&self, cell: [usize; 4]) -> usize {
        let n = self.n_fft;
        ((cell[0] * n + cell[1]) * n + cell[2]) * n + cell[3]
    }

    pub fn cell(&self, flat: usize) -> [usize; 4] {
        let n = self.n_fft;
        [flat / (n * n * n), (flat / (n * n)) % n, (flat / n) % n, flat % n]
    }

    /// Folded frequencies in `[-1/2, 1/2)` of a cell.
    pub fn frequencies(&self, cell: [usize; 4]) -> [f64; 4] {
        cell.map(|i| fold_frequency(i as f64 / self.n_fft as f64))
    }

    pub fn is_valid(&self, flat: usize) -> bool {
        self.q[flat] >= self.q_floor && self.q[flat] > 0.0
    }

    /// Flat index of the largest valid `t` entry.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in self.t.iter().enumerate() {
            if self.is_valid(i) && best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Maps a frequency in `[0, 1)` to its alias in `[-1/2, 1/2)`.
pub fn fold_frequency(f: f64) -> f64 {
    if f >= 0.5 {
        f - 1.0
    } else {
        f
    }
}

fn clip_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Recovers angles from folded grid frequencies.
///
/// The receive axes carry `-sin(theta_r) sin(phi_r) / 2` and `-cos(phi_r) / 2`,
/// the transmit axes `sin(theta_t) sin(phi_t) / 2` and `cos(phi_t) / 2`.
pub fn angles_from_frequencies(freq: [f64; 4]) -> Angles {
    let phi_r = clip_unit(-2.0 * freq[1]).acos();
    let phi_t = clip_unit(2.0 * freq[3]).acos();
    let theta_r = azimuth(-2.0 * freq[0], phi_r);
    let theta_t = azimuth(2.0 * freq[2], phi_t);
    [theta_r, phi_r, theta_t, phi_t]
}

fn azimuth(u: f64, phi: f64) -> f64 {
    let s = phi.sin();
    if s.abs() < ELEVATION_GUARD {
        0.0
    } else {
        clip_unit(u / s).asin()
    }
}

/// In-place FFT of a row-major `n^dims` tensor along every axis.
struct GridFft {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl GridFft {
    fn new(n: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(n);
        Self { n, fft }
    }

    fn transform(&self, data: &mut [C64], dims: u32) {
        let n = self.n;
        debug_assert_eq!(data.len(), n.pow(dims));
        let mut line = vec![C64::new(0.0, 0.0); n];
        let mut scratch = vec![C64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let zero = C64::new(0.0, 0.0);
        for axis in (0..dims).rev() {
            let stride = n.pow(dims - 1 - axis);
            let block = stride * n;
            for base in (0..data.len()).step_by(block) {
                for offset in 0..stride {
                    let start = base + offset;
                    let mut nonzero = false;
                    for (i, slot) in line.iter_mut().enumerate() {
                        *slot = data[start + i * stride];
                        nonzero |= *slot != zero;
                    }
                    if !nonzero {
                        continue;
                    }
                    self.fft.process_with_scratch(&mut line, &mut scratch);
                    for (i, v) in line.iter().enumerate() {
                        data[start + i * stride] = *v;
                    }
                }
            }
        }
    }

    /// Zero-padded 2-D DFT of an `x_count x y_count` array (x-major storage).
    fn transform_2d(&self, values: &DVector<C64>, geom: UpaGeometry) -> Vec<C64> {
        let n = self.n;
        let mut grid = vec![C64::new(0.0, 0.0); n * n];
        for (idx, ix, iy) in geom.elements() {
            grid[ix * n + iy] = values[idx];
        }
        self.transform(&mut grid, 2);
        grid
    }
}

/// Evaluates the concentrated objective on an `n_fft^4` frequency grid and
/// returns the angles of the best cell.
pub fn coarse_search_4dfft(
    design: &StackedDesign,
    y_vec: &DVector<C64>,
    n_fft: usize,
) -> Result<(Angles, AngleGrid)> {
    check_rows(design, y_vec)?;
    let (tx, rx) = (design.tx, design.rx);
    let largest = tx.x_count().max(tx.y_count()).max(rx.x_count()).max(rx.y_count());
    if !n_fft.is_power_of_two() || n_fft < largest {
        return Err(Error::Config(format!(
            "n_fft must be a power of two no smaller than {largest}, got {n_fft}"
        )));
    }
    let n = n_fft;
    let n2 = n * n;
    let n_rf = design.n_rf();
    let scale = design.beta.sqrt();
    let fft = GridFft::new(n);

    // Numerator: the 4-D DFT of c = B^T conj(y), reshaped onto
    // (m_x, m_y, n_x, n_y).
    let mut c = vec![C64::new(0.0, 0.0); n2 * n2];
    for (k, (a, w)) in design.a_list.iter().zip(&design.w_list).enumerate() {
        let y_conj = DVector::from_fn(n_rf, |i, _| y_vec[k * n_rf + i].conj());
        let u = a * y_conj;
        for (r, mx, my) in rx.elements() {
            let wr = w[r].conj() * scale;
            let row = (mx * n + my) * n2;
            for (t, nx, ny) in tx.elements() {
                c[row + nx * n + ny] += wr * u[t];
            }
        }
    }
    fft.transform(&mut c, 4);
    let r: Vec<f64> = c.iter().map(|z| z.norm_sqr()).collect();
    drop(c);

    // Denominator: every row of B is a Kronecker product, so its grid energy
    // factors into a receive map times a transmit map.
    let k_count = design.k();
    let mut rx_maps = DMatrix::<f64>::zeros(n2, k_count);
    let mut tx_maps = DMatrix::<f64>::zeros(n2, k_count);
    for (k, (a, w)) in design.a_list.iter().zip(&design.w_list).enumerate() {
        let w_conj = w.map(|z| z.conj());
        for (i, v) in fft.transform_2d(&w_conj, rx).iter().enumerate() {
            rx_maps[(i, k)] = v.norm_sqr() * design.beta;
        }
        for col in 0..n_rf {
            let a_col = a.column(col).into_owned();
            for (i, v) in fft.transform_2d(&a_col, tx).iter().enumerate() {
                tx_maps[(i, k)] += v.norm_sqr();
            }
        }
    }
    // column-major (tx, rx) is row-major (rx, tx)
    let q_mat = &tx_maps * rx_maps.transpose();
    let q: Vec<f64> = q_mat.as_slice().iter().map(|v| v.max(0.0)).collect();

    let q_max = q.iter().cloned().fold(0.0, f64::max);
    if !(q_max > 0.0) {
        return Err(Error::Unidentifiable("design has no energy on the angle grid".into()));
    }
    let q_floor = GRID_FLOOR * q_max;
    let t = q
        .iter()
        .zip(&r)
        .map(|(&qv, &rv)| if qv >= q_floor && qv > 0.0 { rv / qv } else { 0.0 })
        .collect();
    let grid = AngleGrid {
        n_fft: n,
        q,
        r,
        t,
        q_floor,
    };
    let best = grid
        .argmax()
        .ok_or_else(|| Error::Unidentifiable("no valid cell on the angle grid".into()))?;
    let zeta = angles_from_frequencies(grid.frequencies(grid.cell(best)));
    Ok((zeta, grid))
}

/// Settings of the backtracking refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOptions {
    pub armijo_c: f64,
    pub shrink: f64,
    /// Largest angle change (radians) of the first trial step.
    pub initial_step: f64,
    pub max_backtracks: usize,
    pub max_iters: usize,
    /// Stop once an accepted step lowers the residual by less than this
    /// fraction of the residual.
    pub rel_tol: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            armijo_c: 1e-4,
            shrink: 0.5,
            initial_step: 1e-2,
            max_backtracks: 50,
            max_iters: 100,
            rel_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refined {
    pub angles: Angles,
    /// `f` at the returned angles.
    pub objective: f64,
    pub iterations: usize,
}

fn axpy(x: &Angles, alpha: f64, d: &Angles) -> Angles {
    std::array::from_fn(|i| x[i] + alpha * d[i])
}

fn dot(a: &Angles, b: &Angles) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn wrap_angles(zeta: Angles) -> Angles {
    let (theta_r, phi_r) = wrap_direction(zeta[0], zeta[1]);
    let (theta_t, phi_t) = wrap_direction(zeta[2], zeta[3]);
    [theta_r, phi_r, theta_t, phi_t]
}

/// Direction cosines `(u, v) = (sin(theta) sin(phi), cos(phi))` of both ends.
fn cosines(zeta: &Angles) -> [f64; 4] {
    [
        zeta[0].sin() * zeta[1].sin(),
        zeta[1].cos(),
        zeta[2].sin() * zeta[3].sin(),
        zeta[3].cos(),
    ]
}

/// Half-wavelength ramps repeat with period 2 in each cosine.
fn fold_cosine(x: f64) -> f64 {
    (x + 1.0).rem_euclid(2.0) - 1.0
}

/// Angles of a pair of folded cosines, or `None` off the unit disk.
fn direction(u: f64, v: f64) -> Option<(f64, f64)> {
    let (u, v) = (fold_cosine(u), fold_cosine(v));
    if u * u + v * v > 1.0 + 1e-12 {
        return None;
    }
    let phi = clip_unit(v).acos();
    let s = phi.sin();
    let theta = if s > 0.0 { clip_unit(u / s).asin() } else { 0.0 };
    Some((theta, phi))
}

fn angles_from_cosines(c: &[f64; 4]) -> Option<Angles> {
    let (theta_r, phi_r) = direction(c[0], c[1])?;
    let (theta_t, phi_t) = direction(c[2], c[3])?;
    Some([theta_r, phi_r, theta_t, phi_t])
}

/// Moves each folded pair of cosines onto the unit disk.
fn project_cosines(c: &[f64; 4]) -> [f64; 4] {
    let mut out = c.map(fold_cosine);
    for pair in out.chunks_mut(2) {
        let r = pair[0].hypot(pair[1]);
        if r > 1.0 {
            pair[0] /= r;
            pair[1] /= r;
        }
    }
    out
}

/// Steepest descent with Armijo backtracking and Barzilai-Borwein trial
/// steps. `eval` returns the cost and gradient, `value` the cost alone.
/// No coordinate moves by more than `max_move` in one step.
fn descend(
    x0: [f64; 4],
    eval: impl Fn(&[f64; 4]) -> Option<(f64, [f64; 4])>,
    value: impl Fn(&[f64; 4]) -> Option<f64>,
    opts: &RefineOptions,
    max_move: f64,
    grad_tol: f64,
) -> Option<([f64; 4], f64, usize)> {
    let (mut res, mut grad) = eval(&x0)?;
    let mut x = x0;
    let mut prev: Option<([f64; 4], [f64; 4], f64)> = None;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        let g_max = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if g_max <= grad_tol || res == 0.0 {
            break;
        }
        let dir = grad.map(|g| -g);
        let slope = -dot(&grad, &grad);
        let mut alpha = match prev {
            Some((dx, dg, last)) => {
                let sy = dot(&dx, &dg);
                let bb = dot(&dx, &dx) / sy;
                if sy > 0.0 && bb.is_finite() {
                    bb
                } else {
                    2.0 * last
                }
            }
            None => opts.initial_step / g_max,
        };
        alpha = alpha.min(max_move / g_max);

        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let cand = axpy(&x, alpha, &dir);
            if let Some(r) = value(&cand) {
                if r <= res + opts.armijo_c * alpha * slope {
                    accepted = Some((cand, r));
                    break;
                }
            }
            alpha *= opts.shrink;
        }
        let Some((x_new, res_new)) = accepted else {
            break;
        };
        let Some((_, grad_new)) = eval(&x_new) else {
            break;
        };
        iterations += 1;
        let improvement = res - res_new;
        prev = Some((
            std::array::from_fn(|i| x_new[i] - x[i]),
            std::array::from_fn(|i| grad_new[i] - grad[i]),
            alpha,
        ));
        x = x_new;
        res = res_new;
        grad = grad_new;
        if improvement <= opts.rel_tol * res {
            break;
        }
    }
    Some((x, res, iterations))
}

/// Polishes `zeta0` by gradient steps with Armijo backtracking.
///
/// Ascending `f` is carried out as descent on the equivalent concentrated
/// residual `||y||^2 - f`, which is evaluated directly so that nearly exact
/// fits still register progress. The search runs over the direction cosines
/// `(sin(theta) sin(phi), cos(phi))` of both ends, where the steering vectors
/// are smooth and periodic; the angle parametrisation is stationary at
/// `phi in {0, pi}` and `theta = +-pi/2`. A result off the physical region is
/// projected back and polished over the angles. The returned angles never
/// have a lower `f` than `zeta0`.
pub fn refine_backtracking(
    zeta0: &Angles,
    design: &StackedDesign,
    y_vec: &DVector<C64>,
    opts: &RefineOptions,
) -> Result<Refined> {
    check_rows(design, y_vec)?;
    let start = wrap_angles(*zeta0);
    let res0 = residual(&start, design, y_vec).ok_or_else(|| degenerate(zeta0))?;
    let grad_tol = 1e-13 * y_vec.norm_squared().max(f64::MIN_POSITIVE);

    let (c, _, mut iterations) = descend(
        cosines(&start),
        |c| residual_and_gradient_cosines(c, design, y_vec),
        |c| residual_cosines(c, design, y_vec),
        opts,
        0.25,
        grad_tol,
    )
    .ok_or_else(|| degenerate(zeta0))?;
    let angles = match angles_from_cosines(&c) {
        _ if iterations == 0 => start,
        Some(a) => a,
        None => {
            let a = angles_from_cosines(&project_cosines(&c)).expect("projected onto the disk");
            match descend(
                a,
                |z| residual_and_gradient(z, design, y_vec),
                |z| residual(z, design, y_vec),
                opts,
                FRAC_PI_2,
                grad_tol,
            ) {
                Some((z, _, it)) => {
                    iterations += it;
                    wrap_angles(z)
                }
                None => a,
            }
        }
    };
    let angles = match residual(&angles, design, y_vec) {
        Some(r) if r <= res0 => angles,
        _ => start,
    };
    let objective = objective_f(&angles, design, y_vec)?;
    Ok(Refined {
        angles,
        objective,
        iterations,
    })
}

/// Channel parameters implied by a set of angles and the least-squares gain.
pub fn channel_from_angles(
    zeta: &Angles,
    design: &StackedDesign,
    y_vec: &DVector<C64>,
) -> Result<ChannelParams> {
    let gamma = ls_gain(zeta, design, y_vec)?;
    Ok(ChannelParams::new(gamma, zeta[0], zeta[1], zeta[2], zeta[3]))
}

/// Settings of the full channel estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelEstOptions {
    pub n_fft: usize,
    pub refine: RefineOptions,
}

impl Default for ChannelEstOptions {
    fn default() -> Self {
        Self {
            n_fft: 32,
            refine: RefineOptions::default(),
        }
    }
}

/// Coarse grid search followed by refinement.
pub fn estimate_channel(
    design: &StackedDesign,
    y_vec: &DVector<C64>,
    opts: &ChannelEstOptions,
) -> Result<ChannelParams> {
    let (coarse, _) = coarse_search_4dfft(design, y_vec, opts.n_fft)?;
    let refined = refine_backtracking(&coarse, design, y_vec, &opts.refine)?;
    channel_from_angles(&refined.angles, design, y_vec)
}
