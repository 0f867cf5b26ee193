//! Seeded Monte-Carlo experiments and their file formats.
//!
//! Every trial draws its own scenario from a ChaCha stream selected by the
//! trial index, so results do not depend on scheduling. Within a trial the
//! same channel, deviations, random patterns and unit-variance noise draws are
//! reused for every SNR point and beam mode, which makes the rows of a sweep
//! paired comparisons.

mod config;
mod io;

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use config::{BeamMode, RmseGauge, ScenarioConfig};
pub use io::{
    format_sweep_csv, load_beams, render_sweep_svg, save_beams, write_sweep_csv, write_sweep_svg,
    SWEEP_HEADER,
};

use crate::beam_opt::{beam_rcg_options, optimize_schedule};
use crate::calibrator::{
    align_gauge, canonical_gauge, phase_rmse_deg, run_bcd, CalibrationOptions, CalibrationResult,
};
use crate::channel_est::ChannelEstOptions;
use crate::crb::fisher_information;
use crate::error::{Error, Result};
use crate::model::{
    complex_gaussian, simulate_measurements, synth_pilot, BeamSchedule, ChannelParams,
    MeasurementSet, PhaseDeviations,
};

/// The random draws of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: ChannelParams,
    pub deviations: PhaseDeviations,
    /// Random patterns, also the starting point of the pattern design.
    pub random_schedule: BeamSchedule,
    /// Receive direction `(theta_r, phi_r)` as known to the pattern design.
    pub csi_direction: (f64, f64),
    pub noise_seed: u64,
}

/// The generator of trial `trial`: the configured seed selects the key and
/// the trial index the stream.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

pub fn draw_scenario(cfg: &ScenarioConfig, trial: u64) -> Scenario {
    let mut rng = trial_rng(cfg.seed, trial);
    let gamma = complex_gaussian(&mut rng, 1.0);
    let theta_r = rng.random_range(-FRAC_PI_2..=FRAC_PI_2);
    let phi_r = rng.random_range(0.0..=PI);
    let theta_t = rng.random_range(-FRAC_PI_2..=FRAC_PI_2);
    let phi_t = rng.random_range(0.0..=PI);
    let params = ChannelParams::new(gamma, theta_r, phi_r, theta_t, phi_t);
    let deviations = PhaseDeviations::random_uniform(
        cfg.m_t(),
        cfg.n_rf,
        cfg.epsilon_deg.to_radians(),
        &mut rng,
    );
    let random_schedule = BeamSchedule::random(cfg.m_t(), cfg.m_r(), cfg.n_rf, cfg.k, &mut rng);
    let nu = cfg.nu_deg.to_radians();
    let perturb = |rng: &mut ChaCha8Rng| if nu > 0.0 { rng.random_range(-nu..=nu) } else { 0.0 };
    let csi_direction = (theta_r + perturb(&mut rng), phi_r + perturb(&mut rng));
    let noise_seed = rng.random();
    Scenario {
        params,
        deviations,
        random_schedule,
        csi_direction,
        noise_seed,
    }
}

/// Patterns used by `mode` in this scenario.
pub fn schedule_for(
    cfg: &ScenarioConfig,
    scenario: &Scenario,
    mode: BeamMode,
    file_beams: Option<&BeamSchedule>,
) -> Result<BeamSchedule> {
    match mode {
        BeamMode::Random => Ok(scenario.random_schedule.clone()),
        BeamMode::Optimized => {
            let (theta, phi) = scenario.csi_direction;
            let (s, _) = optimize_schedule(&scenario.random_schedule, cfg.rx(), theta, phi, &beam_rcg_options())?;
            Ok(s)
        }
        BeamMode::File => file_beams
            .cloned()
            .ok_or_else(|| Error::Config("beam mode \"file\" needs a beam directory".into())),
    }
}

pub fn calibration_options(cfg: &ScenarioConfig) -> CalibrationOptions {
    CalibrationOptions {
        channel: ChannelEstOptions {
            n_fft: cfg.n_fft,
            ..ChannelEstOptions::default()
        },
        max_outer: cfg.max_outer,
        min_rel_decrease: cfg.min_rel_decrease,
        ..CalibrationOptions::default()
    }
}

/// Noisy matched-filtered measurements of a scenario at one SNR.
pub fn measure(
    cfg: &ScenarioConfig,
    scenario: &Scenario,
    schedule: &BeamSchedule,
    snr_db: f64,
) -> Result<MeasurementSet> {
    let pilot = synth_pilot(cfg.n_rf, cfg.l)?;
    simulate_measurements(
        &scenario.params,
        cfg.tx(),
        cfg.rx(),
        &scenario.deviations,
        schedule,
        &pilot,
        cfg.sigma2(snr_db),
        1.0,
        scenario.noise_seed,
    )
}

/// Result of one (trial, SNR, beam mode) evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialPoint {
    pub snr_db: f64,
    pub beam_mode: BeamMode,
    /// Error in the configured gauge.
    pub rmse_deg: f64,
    pub rmse_canonical_deg: f64,
    pub rmse_fit_deg: f64,
    /// Mean of the phase bounds (radians squared).
    pub crb_mean_var: f64,
    pub outer_iterations: usize,
    pub cost_trace: Vec<f64>,
}

/// Phase errors of a calibration against the truth, in the canonical and
/// fitted gauges.
pub fn phase_errors(
    cfg: &ScenarioConfig,
    scenario: &Scenario,
    result: &CalibrationResult,
) -> Result<(f64, f64)> {
    let tx = cfg.tx();
    let est = canonical_gauge(&result.deviations_est, &result.channel_est)
        .transform_deviations(&result.deviations_est, tx);
    let truth = canonical_gauge(&scenario.deviations, &scenario.params)
        .transform_deviations(&scenario.deviations, tx);
    let canonical = phase_rmse_deg(&est, &truth);
    let (aligned, _) = align_gauge(&result.deviations_est, &scenario.deviations, tx)?;
    Ok((canonical, phase_rmse_deg(&aligned, &scenario.deviations)))
}

pub fn evaluate(
    cfg: &ScenarioConfig,
    scenario: &Scenario,
    schedule: &BeamSchedule,
    mode: BeamMode,
    snr_db: f64,
) -> Result<TrialPoint> {
    let m = measure(cfg, scenario, schedule, snr_db)?;
    let result = run_bcd(&m, schedule, cfg.tx(), cfg.rx(), &calibration_options(cfg))?;
    let (canonical, fit) = phase_errors(cfg, scenario, &result)?;
    let fim = fisher_information(
        &scenario.params,
        cfg.tx(),
        cfg.rx(),
        &scenario.deviations,
        schedule,
        1.0,
        cfg.sigma2(snr_db),
        cfg.l,
    )?;
    Ok(TrialPoint {
        snr_db,
        beam_mode: mode,
        rmse_deg: match cfg.rmse_gauge {
            RmseGauge::Canonical => canonical,
            RmseGauge::Fit => fit,
        },
        rmse_canonical_deg: canonical,
        rmse_fit_deg: fit,
        crb_mean_var: fim.crb_phases.mean(),
        outer_iterations: result.outer_iterations,
        cost_trace: result.cost_trace,
    })
}

fn with_trial<T>(cfg: &ScenarioConfig, trial: u64, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(_) => e,
        other => Error::Trial {
            seed: cfg.seed,
            trial,
            source: Box::new(other),
        },
    })
}

/// Every (SNR, beam mode) point of one trial, SNR-major.
pub fn run_trial(
    cfg: &ScenarioConfig,
    trial: u64,
    file_beams: Option<&BeamSchedule>,
) -> Result<Vec<TrialPoint>> {
    let scenario = draw_scenario(cfg, trial);
    let run = || -> Result<Vec<TrialPoint>> {
        let schedules = cfg
            .beam_mode
            .iter()
            .map(|&mode| schedule_for(cfg, &scenario, mode, file_beams))
            .collect::<Result<Vec<_>>>()?;
        let mut points = Vec::with_capacity(cfg.snr_db.len() * cfg.beam_mode.len());
        for &snr in &cfg.snr_db {
            for (&mode, schedule) in cfg.beam_mode.iter().zip(&schedules) {
                points.push(evaluate(cfg, &scenario, schedule, mode, snr)?);
            }
        }
        Ok(points)
    };
    with_trial(cfg, trial, run())
}

/// One aggregated row of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub snr_db: f64,
    pub beam_mode: BeamMode,
    pub rmse_deg: f64,
    pub crb_rmse_deg: f64,
    pub mean_outer_iterations: f64,
    pub trials: usize,
}

/// Root-mean-square aggregation over trials. `per_trial[t]` holds the
/// points of trial `t` in the order produced by [`run_trial`].
pub fn aggregate(per_trial: &[Vec<TrialPoint>]) -> Vec<SweepRow> {
    let Some(first) = per_trial.first() else {
        return Vec::new();
    };
    let n = per_trial.len() as f64;
    (0..first.len())
        .map(|i| {
            let pts = per_trial.iter().map(|t| &t[i]);
            let (mut mse, mut crb, mut iters) = (0.0, 0.0, 0.0);
            for p in pts {
                mse += p.rmse_deg * p.rmse_deg;
                crb += p.crb_mean_var;
                iters += p.outer_iterations as f64;
            }
            SweepRow {
                snr_db: first[i].snr_db,
                beam_mode: first[i].beam_mode,
                rmse_deg: (mse / n).sqrt(),
                crb_rmse_deg: (crb / n).sqrt().to_degrees(),
                mean_outer_iterations: iters / n,
                trials: per_trial.len(),
            }
        })
        .collect()
}

/// Runs all trials in parallel and aggregates them.
pub fn run_sweep_points(
    cfg: &ScenarioConfig,
    file_beams: Option<&BeamSchedule>,
) -> Result<Vec<Vec<TrialPoint>>> {
    cfg.validate()?;
    if let Some(s) = file_beams {
        check_file_beams(cfg, s)?;
    }
    (0..cfg.trials as u64)
        .into_par_iter()
        .map(|t| run_trial(cfg, t, file_beams))
        .collect()
}

pub fn run_sweep(cfg: &ScenarioConfig, file_beams: Option<&BeamSchedule>) -> Result<Vec<SweepRow>> {
    Ok(aggregate(&run_sweep_points(cfg, file_beams)?))
}

fn check_file_beams(cfg: &ScenarioConfig, s: &BeamSchedule) -> Result<()> {
    if (s.m_t(), s.m_r(), s.n_rf(), s.k()) != (cfg.m_t(), cfg.m_r(), cfg.n_rf, cfg.k) {
        return Err(Error::Config(format!(
            "loaded patterns are M_t={} M_r={} N_RF={} K={}, configuration expects {} {} {} {}",
            s.m_t(),
            s.m_r(),
            s.n_rf(),
            s.k(),
            cfg.m_t(),
            cfg.m_r(),
            cfg.n_rf,
            cfg.k
        )));
    }
    Ok(())
}

/// Mean Cramér-Rao bound per (SNR, beam mode) without running the estimator.
pub fn crb_sweep(cfg: &ScenarioConfig, file_beams: Option<&BeamSchedule>) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if let Some(s) = file_beams {
        check_file_beams(cfg, s)?;
    }
    let per_trial = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|trial| {
            let scenario = draw_scenario(cfg, trial);
            let run = || -> Result<Vec<TrialPoint>> {
                let schedules = cfg
                    .beam_mode
                    .iter()
                    .map(|&mode| schedule_for(cfg, &scenario, mode, file_beams))
                    .collect::<Result<Vec<_>>>()?;
                let mut points = Vec::new();
                for &snr in &cfg.snr_db {
                    for (&mode, schedule) in cfg.beam_mode.iter().zip(&schedules) {
                        let fim = fisher_information(
                            &scenario.params,
                            cfg.tx(),
                            cfg.rx(),
                            &scenario.deviations,
                            schedule,
                            1.0,
                            cfg.sigma2(snr),
                            cfg.l,
                        )?;
                        points.push(TrialPoint {
                            snr_db: snr,
                            beam_mode: mode,
                            rmse_deg: 0.0,
                            rmse_canonical_deg: 0.0,
                            rmse_fit_deg: 0.0,
                            crb_mean_var: fim.crb_phases.mean(),
                            outer_iterations: 0,
                            cost_trace: Vec::new(),
                        });
                    }
                }
                Ok(points)
            };
            with_trial(cfg, trial, run())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&per_trial))
}
