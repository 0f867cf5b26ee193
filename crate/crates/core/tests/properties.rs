//! Structural invariants over randomly drawn instances.

mod common;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{geom, instance, unit_vector};
use phasecal::calibrator::{run_bcd, CalibrationOptions, GaugeParams};
use phasecal::channel_est::ChannelEstOptions;
use phasecal::crb::fisher_information;
use phasecal::manifold::{retract, tangent_project};
use phasecal::model::{
    build_channel, noiseless_measurements, simulate_measurements, synth_pilot, BeamSchedule,
};

fn max_modulus_error<'a>(it: impl IntoIterator<Item = &'a C64>) -> f64 {
    it.into_iter().map(|z| (z.norm() - 1.0).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pilot_rows_are_orthogonal(n_rf in 1usize..6, extra in 0usize..6) {
        let l = n_rf + extra;
        let s = synth_pilot(n_rf, l).unwrap();
        let gram = s.s() * s.s().adjoint();
        let target = DMatrix::<C64>::identity(n_rf, n_rf) * C64::new(l as f64, 0.0);
        prop_assert!((gram - target).iter().all(|z| z.norm() <= 1e-12 * l as f64));
    }

    #[test]
    fn retraction_stays_on_the_circle(seed in any::<u64>(), scale in 1e-6f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = unit_vector(&mut rng, 12);
        let z = DVector::from_fn(12, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale);
        let y = retract(&x, &tangent_project(&x, &z));
        prop_assert!(max_modulus_error(y.iter()) <= 1e-12);
    }

    #[test]
    fn gauge_leaves_measurements_unchanged(
        seed in any::<u64>(),
        beta in -3.0f64..3.0,
        chi1 in -1.5f64..1.5,
        chi2 in 0.0f64..3.1,
    ) {
        let (tx, rx) = (geom(3, 2), geom(2, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, dev, s) = instance(&mut rng, tx, rx, 2, 5, 0.5);
        let h = build_channel(&p, tx, rx);
        let g = GaugeParams { beta_phase: beta, chi1, chi2 };
        let dev2 = g.transform_deviations(&dev, tx);
        prop_assert!(max_modulus_error(dev2.omega().iter()) <= 1e-12);
        let a = noiseless_measurements(&h, &dev, &s, 1.0);
        let b = noiseless_measurements(&g.transform_channel(&h, tx), &dev2, &s, 1.0);
        prop_assert!((&a - &b).norm() <= 1e-10 * a.norm().max(1.0));
    }

    #[test]
    fn fim_is_symmetric_and_semidefinite(seed in any::<u64>()) {
        let (tx, rx) = (geom(2, 2), geom(2, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, dev, s) = instance(&mut rng, tx, rx, 2, 8, 0.4);
        let rep = fisher_information(&p, tx, rx, &dev, &s, 1.0, 0.5, 2).unwrap();
        prop_assert!((&rep.fim - rep.fim.transpose()).amax() <= 1e-12 * rep.fim.amax());
        let eig = rep.fim.clone().symmetric_eigenvalues();
        prop_assert!(eig.min() >= -1e-10 * eig.max());
    }

    #[test]
    fn bound_halves_when_pilot_doubles(seed in any::<u64>(), l in 1usize..5) {
        let (tx, rx) = (geom(2, 2), geom(2, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, dev, s) = instance(&mut rng, tx, rx, 1, 8, 0.4);
        let a = fisher_information(&p, tx, rx, &dev, &s, 1.0, 0.7, l).unwrap();
        let b = fisher_information(&p, tx, rx, &dev, &s, 1.0, 0.7, 2 * l).unwrap();
        for (x, y) in a.crb_phases.iter().zip(b.crb_phases.iter()) {
            prop_assert!((x / y - 2.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn bound_shrinks_with_more_transmissions(seed in any::<u64>(), k1 in 6usize..10, extra in 1usize..6) {
        let (tx, rx) = (geom(2, 2), geom(2, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, dev, s) = instance(&mut rng, tx, rx, 1, k1 + extra, 0.4);
        let prefix = BeamSchedule::new(s.f_list()[..k1].to_vec(), s.w_list()[..k1].to_vec()).unwrap();
        let Ok(short) = fisher_information(&p, tx, rx, &dev, &prefix, 1.0, 0.5, 1) else {
            // a short schedule may be unidentifiable; nothing to compare
            return Ok(());
        };
        let long = fisher_information(&p, tx, rx, &dev, &s, 1.0, 0.5, 1).unwrap();
        for (a, b) in short.crb_phases.iter().zip(long.crb_phases.iter()) {
            prop_assert!(*b <= a * (1.0 + 1e-9));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn block_descent_never_raises_the_cost(seed in any::<u64>(), sigma2 in 0.0f64..2.0) {
        let (tx, rx) = (geom(2, 2), geom(2, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, dev, s) = instance(&mut rng, tx, rx, 2, 12, 0.35);
        let m = simulate_measurements(&p, tx, rx, &dev, &s, &synth_pilot(2, 2).unwrap(), sigma2, 1.0, seed).unwrap();
        let options = CalibrationOptions {
            channel: ChannelEstOptions { n_fft: 8, ..Default::default() },
            ..Default::default()
        };
        let out = run_bcd(&m, &s, tx, rx, &options).unwrap();
        for w in out.cost_trace.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        prop_assert!(max_modulus_error(out.deviations_est.omega().iter()) <= 1e-12);
    }
}
