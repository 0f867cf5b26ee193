//! Pattern design: identifiability, improvement over random patterns and
//! the effect on the bound.

mod common;

use nalgebra::{Cholesky, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{unit_matrix, unit_vector};
use phasecal::beam_opt::{beam_rcg_options, objective_h, optimize_beams, BeamDesignProblem};
use phasecal::crb::fisher_information;
use phasecal::harness::{draw_scenario, schedule_for, BeamMode, ScenarioConfig};

fn gains(rng: &mut ChaCha8Rng, k: usize) -> DVector<f64> {
    DVector::from_fn(k, |_, _| rng.random_range(0.05..3.0))
}

#[test]
fn r_is_positive_definite_for_random_patterns() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for draw in 0..100 {
        let (m_t, k) = (16, 16 + draw % 17);
        let problem = BeamDesignProblem::new(gains(&mut rng, k), m_t).unwrap();
        let r = problem.r_matrix(&unit_matrix(&mut rng, m_t, k));
        assert!(Cholesky::new(r).is_some(), "draw {draw}");
    }
}

#[test]
fn optimised_patterns_beat_every_random_start() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let (m_t, k) = (16, 32);
    let problem = BeamDesignProblem::new(gains(&mut rng, k), m_t).unwrap();
    for start in 0..20 {
        let f0 = unit_matrix(&mut rng, m_t, k);
        let d = optimize_beams(&problem, &f0, &beam_rcg_options()).unwrap();
        assert!(d.diagnostic.is_none());
        assert!(d.h < objective_h(&f0, &problem).unwrap(), "start {start}");
        assert!(d.f_bar.iter().all(|z| (z.norm() - 1.0).abs() <= 1e-12));
    }
}

#[test]
fn reoptimising_is_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let (m_t, k) = (8, 16);
    let problem = BeamDesignProblem::new(gains(&mut rng, k), m_t).unwrap();
    let first = optimize_beams(&problem, &unit_matrix(&mut rng, m_t, k), &beam_rcg_options()).unwrap();
    let second = optimize_beams(&problem, &first.f_bar, &beam_rcg_options()).unwrap();
    assert!((second.h - first.h).abs() <= 1e-8 * first.h, "{} vs {}", first.h, second.h);
}

#[test]
fn known_deviations_variant_also_improves() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let (m_t, k) = (8, 16);
    let omega = unit_vector(&mut rng, m_t);
    let problem = BeamDesignProblem::with_omega(gains(&mut rng, k), omega).unwrap();
    let f0 = unit_matrix(&mut rng, m_t, k);
    let d = optimize_beams(&problem, &f0, &beam_rcg_options()).unwrap();
    assert!(d.h < d.h_initial);
}

#[test]
fn optimised_patterns_lower_the_bound() {
    let cfg = ScenarioConfig::desk();
    for trial in 0..5 {
        let scenario = draw_scenario(&cfg, trial);
        let crb = |mode| {
            let s = schedule_for(&cfg, &scenario, mode, None).unwrap();
            let rep = fisher_information(&scenario.params, cfg.tx(), cfg.rx(), &scenario.deviations, &s, 1.0, cfg.sigma2(10.0), cfg.l).unwrap();
            rep.crb_phases.mean()
        };
        let (random, optimised) = (crb(BeamMode::Random), crb(BeamMode::Optimized));
        assert!(optimised < random, "trial {trial}: {optimised} vs {random}");
    }
}
