use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use phasecal::beam_opt::{beam_rcg_options, optimize_schedule};
use phasecal::calibrator::run_bcd;
use phasecal::channel_est::measurement_vector;
use phasecal::harness::{
    calibration_options, crb_sweep, draw_scenario, load_beams, measure, phase_errors, run_sweep,
    save_beams, schedule_for, write_sweep_csv, write_sweep_svg, BeamMode, ScenarioConfig,
};
use phasecal::model::BeamSchedule;
use phasecal::{Error, Result};

/// Over-the-air phase calibration experiments.
#[derive(Debug, Parser)]
#[command(name = "phasecal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed of the scenario file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct WithBeams {
    #[command(flatten)]
    common: Common,
    /// Directory of saved patterns, used by beam mode "file".
    #[arg(long)]
    beams: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw the first trial's scenario and write its measurements for the
    /// first beam mode.
    Simulate(WithBeams),
    /// Calibrate the first trial's scenario at every SNR and beam mode.
    Calibrate(WithBeams),
    /// Print the mean Cramér-Rao bound per SNR and beam mode.
    Crb(WithBeams),
    /// Design transmit patterns for the first trial's scenario.
    OptimizeBeams(Common),
    /// Run the Monte-Carlo sweep and write sweep.csv and sweep.svg.
    Sweep(WithBeams),
}

fn load_config(common: &Common) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Loads the config and, when `--beams` is given, the saved patterns, adding
/// mode "file" to the sweep if the config does not list it.
fn load_with_beams(args: &WithBeams) -> Result<(ScenarioConfig, Option<BeamSchedule>)> {
    let mut cfg = load_config(&args.common)?;
    let Some(dir) = &args.beams else {
        return Ok((cfg, None));
    };
    if !cfg.beam_mode.contains(&BeamMode::File) {
        cfg.beam_mode.push(BeamMode::File);
    }
    let beams = load_beams(dir)?;
    Ok((cfg, Some(beams)))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn simulate(args: &WithBeams) -> Result<()> {
    let (cfg, file) = load_with_beams(args)?;
    let common = &args.common;
    let scenario = draw_scenario(&cfg, 0);
    let schedule = schedule_for(&cfg, &scenario, cfg.beam_mode[0], file.as_ref())?;
    let mut csv = String::from("snr_db,k,chain,re,im\n");
    for &snr in &cfg.snr_db {
        let m = measure(&cfg, &scenario, &schedule, snr)?;
        for k in 0..m.k() {
            for n in 0..m.n_rf() {
                let z = m.y_tilde[(k, n)];
                csv.push_str(&format!("{snr},{k},{n},{},{}\n", z.re, z.im));
            }
        }
        println!(
            "snr_db={snr} measurements={} energy={:.6e}",
            m.k() * m.n_rf(),
            measurement_vector(&m).norm_squared()
        );
    }
    let p = &scenario.params;
    let mut truth = format!(
        "gamma {} {}\ntheta_r {}\nphi_r {}\ntheta_t {}\nphi_t {}\n",
        p.gamma.re, p.gamma.im, p.theta_r, p.phi_r, p.theta_t, p.phi_t
    );
    truth.push_str("deviation_phases\n");
    for row in scenario.deviations.phases().row_iter() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        truth.push_str(&line.join(" "));
        truth.push('\n');
    }
    write(&common.out.join("measurements.csv"), &csv)?;
    write(&common.out.join("truth.txt"), &truth)?;
    save_beams(&common.out.join("patterns"), &schedule)?;
    Ok(())
}

fn calibrate(args: &WithBeams) -> Result<()> {
    let (cfg, file) = load_with_beams(args)?;
    let scenario = draw_scenario(&cfg, 0);
    let mut csv = String::from("snr_db,beam_mode,rmse_canonical_deg,rmse_fit_deg,outer_iterations,final_cost\n");
    for &mode in &cfg.beam_mode {
        let schedule = schedule_for(&cfg, &scenario, mode, file.as_ref())?;
        for &snr in &cfg.snr_db {
            let m = measure(&cfg, &scenario, &schedule, snr)?;
            let result = run_bcd(&m, &schedule, cfg.tx(), cfg.rx(), &calibration_options(&cfg))?;
            let (canonical, fit) = phase_errors(&cfg, &scenario, &result)?;
            let cost = result.cost_trace.last().copied().unwrap_or(f64::NAN);
            println!(
                "snr_db={snr} beam_mode={mode} rmse_deg={canonical:.6} rmse_fit_deg={fit:.6} outer_iterations={} cost={cost:.6e}",
                result.outer_iterations
            );
            csv.push_str(&format!(
                "{snr:.14e},{mode},{canonical:.14e},{fit:.14e},{},{cost:.14e}\n",
                result.outer_iterations
            ));
        }
    }
    write(&args.common.out.join("calibration.csv"), &csv)
}

fn crb(args: &WithBeams) -> Result<()> {
    let (cfg, file) = load_with_beams(args)?;
    for row in crb_sweep(&cfg, file.as_ref())? {
        println!(
            "snr_db={} beam_mode={} crb_rmse_deg={:.14e}",
            row.snr_db, row.beam_mode, row.crb_rmse_deg
        );
    }
    Ok(())
}

fn optimize_beams(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let scenario = draw_scenario(&cfg, 0);
    let (theta, phi) = scenario.csi_direction;
    let (schedule, designs) =
        optimize_schedule(&scenario.random_schedule, cfg.rx(), theta, phi, &beam_rcg_options())?;
    for (n, d) in designs.iter().enumerate() {
        match &d.diagnostic {
            Some(why) => eprintln!("chain {n}: patterns left unchanged: {why}"),
            None => println!("chain {n}: h {:.6e} -> {:.6e} in {} iterations", d.h_initial, d.h, d.iterations),
        }
    }
    save_beams(&common.out, &schedule)
}

fn sweep(args: &WithBeams) -> Result<()> {
    let (cfg, file) = load_with_beams(args)?;
    let rows = run_sweep(&cfg, file.as_ref())?;
    write_sweep_csv(&args.common.out.join("sweep.csv"), &rows)?;
    write_sweep_svg(&args.common.out.join("sweep.svg"), &rows)?;
    for r in &rows {
        println!(
            "snr_db={} beam_mode={} rmse_deg={:.6} crb_rmse_deg={:.6} mean_outer_iterations={:.2}",
            r.snr_db, r.beam_mode, r.rmse_deg, r.crb_rmse_deg, r.mean_outer_iterations
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Calibrate(c) => calibrate(c),
        Command::Crb(c) => crb(c),
        Command::OptimizeBeams(c) => optimize_beams(c),
        Command::Sweep(c) => sweep(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
