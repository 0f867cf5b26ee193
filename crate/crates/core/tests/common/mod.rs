#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use phasecal::channel_est::{coarse_search_4dfft, measurement_vector, stack_design};
use phasecal::model::{
    ramp_response, simulate_measurements, synth_pilot, BeamSchedule, ChannelParams, PhaseDeviations,
    UpaGeometry,
};

pub fn geom(x: usize, y: usize) -> UpaGeometry {
    UpaGeometry::new(x, y).unwrap()
}

pub fn unit(rng: &mut ChaCha8Rng) -> C64 {
    C64::from_polar(1.0, rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
}

pub fn unit_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<C64> {
    DMatrix::from_fn(r, c, |_, _| unit(rng))
}

pub fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<C64> {
    DVector::from_fn(n, |_, _| unit(rng))
}

pub fn random_params(rng: &mut ChaCha8Rng) -> ChannelParams {
    use std::f64::consts::{FRAC_PI_2, PI};
    ChannelParams::new(
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        rng.random_range(-FRAC_PI_2..FRAC_PI_2),
        rng.random_range(0.2..PI - 0.2),
        rng.random_range(-FRAC_PI_2..FRAC_PI_2),
        rng.random_range(0.2..PI - 0.2),
    )
}

/// A random instance: channel, deviations within `eps` radians and random
/// patterns.
pub fn instance(
    rng: &mut ChaCha8Rng,
    tx: UpaGeometry,
    rx: UpaGeometry,
    n_rf: usize,
    k: usize,
    eps: f64,
) -> (ChannelParams, PhaseDeviations, BeamSchedule) {
    let p = random_params(rng);
    let dev = PhaseDeviations::random_uniform(tx.len(), n_rf, eps, rng);
    let s = BeamSchedule::random(tx.len(), rx.len(), n_rf, k, rng);
    (p, dev, s)
}

pub fn rel_err(a: &DVector<C64>, b: &DVector<C64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Largest relative cell error of `(R, Q)` over the whole grid.
pub fn grid_oracle_error(seed: u64) -> f64 {
    let (tx, rx) = (geom(2, 2), geom(2, 2));
    let n = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p, dev, s) = instance(&mut rng, tx, rx, 1, 4, 0.3);
    let m = simulate_measurements(&p, tx, rx, &dev, &s, &synth_pilot(1, 1).unwrap(), 0.5, 1.0, seed).unwrap();
    let y = measurement_vector(&m);
    let design = stack_design(&dev, &s, 1.0, tx, rx).unwrap();
    let (_, grid) = coarse_search_4dfft(&design, &y, n).unwrap();

    let b = design.to_dense();
    let m_r = rx.len();
    let mut worst: f64 = 0.0;
    for flat in 0..n.pow(4) {
        let cell = grid.cell(flat);
        let f = cell.map(|i| i as f64 / n as f64);
        // DFT kernel e^{-j 2 pi f i}: receive entries directly, transmit
        // entries through the conjugate in a_r a_t^H
        let a_r = ramp_response(-2.0 * f[0], -2.0 * f[1], rx);
        let a_t = ramp_response(2.0 * f[2], 2.0 * f[3], tx);
        let a_vec = DVector::from_fn(tx.len() * m_r, |i, _| a_r[i % m_r] * a_t[i / m_r].conj());
        let ba = &b * &a_vec;
        let r: f64 = y.dotc(&ba).norm_sqr();
        let q: f64 = b.row_iter().map(|row| (row * &a_vec)[0].norm_sqr()).sum();
        for (got, want) in [(grid.r[flat], r), (grid.q[flat], q)] {
            worst = worst.max((got - want).abs() / want.abs().max(f64::MIN_POSITIVE));
        }
    }
    worst
}

/// Central difference of a real function of a complex vector, in the real
/// convention `d/dRe + j d/dIm`.
pub fn fd_gradient(x: &DVector<C64>, h: f64, f: impl Fn(&DVector<C64>) -> f64) -> DVector<C64> {
    DVector::from_fn(x.len(), |i, _| {
        let mut part = [0.0; 2];
        for (slot, dir) in part.iter_mut().zip([C64::new(h, 0.0), C64::new(0.0, h)]) {
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus[i] += dir;
            minus[i] -= dir;
            *slot = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        C64::new(part[0], part[1])
    })
}

/// Worst relative error of the phase-step gradient over ten random points.
pub fn phase_gradient_error(seed: u64) -> f64 {
    use phasecal::manifold::CircleCost;
    use phasecal::model::build_channel;
    use phasecal::phase_est::build_chain_design;
    let (tx, rx) = (geom(3, 2), geom(2, 2));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let (p, dev, s) = instance(&mut rng, tx, rx, 2, 9, 0.4);
        let m = simulate_measurements(&p, tx, rx, &dev, &s, &synth_pilot(2, 2).unwrap(), 0.3, 1.0, rng.random()).unwrap();
        let h = build_channel(&p, tx, rx);
        let chain = build_chain_design(&h, &s, rng.random_range(0..2), 1.0, &m).unwrap();
        let omega = unit_vector(&mut rng, tx.len());
        let analytic = chain.gradient(&omega).unwrap();
        let numeric = fd_gradient(&omega, 1e-6, |w| chain.residual(w));
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

/// Worst relative error of the pattern-design gradient over ten random
/// points. The real-convention gradient is twice the returned Wirtinger form.
pub fn beam_gradient_error(seed: u64) -> f64 {
    use phasecal::beam_opt::{gradient_h, objective_h, BeamDesignProblem};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m_t, k) = (4, 8);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let g = DVector::from_fn(k, |_, _| rng.random_range(0.1..2.0));
        let problem = BeamDesignProblem::new(g, m_t).unwrap();
        let f = unit_matrix(&mut rng, m_t, k);
        let analytic = gradient_h(&f, &problem).unwrap() * C64::new(2.0, 0.0);
        let x = DVector::from_column_slice(f.as_slice());
        let numeric = fd_gradient(&x, 1e-6, |v| {
            objective_h(&DMatrix::from_column_slice(m_t, k, v.as_slice()), &problem).unwrap()
        });
        worst = worst.max(rel_err(&DVector::from_column_slice(analytic.as_slice()), &numeric));
    }
    worst
}

/// Worst relative error of any Jacobian column of the stacked mean over ten
/// random points.
pub fn jacobian_error(seed: u64) -> f64 {
    use phasecal::crb::{mean_jacobian, stacked_mean};
    let (tx, rx) = (geom(2, 2), geom(3, 2));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let (p, dev, s) = instance(&mut rng, tx, rx, 2, 6, 0.4);
        let jac = mean_jacobian(&p, tx, rx, &dev, &s, 1.0).unwrap();
        let mean = |p: &ChannelParams, d: &PhaseDeviations| stacked_mean(p, tx, rx, d, &s, 1.0).unwrap();
        let n_phase = dev.m_t() * dev.n_rf() - 1;
        let central = |plus: DVector<C64>, minus: DVector<C64>| (plus - minus) / C64::new(2.0 * step, 0.0);
        for j in 0..n_phase + 4 {
            let numeric = if j < n_phase {
                let shift = |sign: f64| {
                    let mut w = dev.omega().clone();
                    w[j + 1] *= C64::from_polar(1.0, sign * step);
                    mean(&p, &PhaseDeviations::new(w).unwrap())
                };
                central(shift(1.0), shift(-1.0))
            } else {
                let shift = |sign: f64| {
                    let mut q = p;
                    match j - n_phase {
                        0 => q.theta_r += sign * step,
                        1 => q.phi_r += sign * step,
                        2 => q.gamma += C64::new(sign * step, 0.0),
                        _ => q.gamma += C64::new(0.0, sign * step),
                    }
                    mean(&q, &dev)
                };
                central(shift(1.0), shift(-1.0))
            };
            worst = worst.max(rel_err(&jac.column(j).into_owned(), &numeric));
        }
    }
    worst
}
