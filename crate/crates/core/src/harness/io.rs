use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::SweepRow;
use crate::error::{Error, Result};
use crate::model::BeamSchedule;
use crate::C64;

pub const SWEEP_HEADER: &str = "snr_db,beam_mode,rmse_deg,crb_rmse_deg,mean_outer_iterations,trials";

pub fn format_sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{:.14e},{},{:.14e},{:.14e},{:.14e},{}",
            r.snr_db, r.beam_mode, r.rmse_deg, r.crb_rmse_deg, r.mean_outer_iterations, r.trials
        );
    }
    out
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_file(path, &format_sweep_csv(rows))
}

const COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

/// RMSE (solid) and bound (dashed) against SNR on a logarithmic axis.
pub fn render_sweep_svg(rows: &[SweepRow]) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 150.0, 20.0, 50.0);
    let mut modes = Vec::new();
    for r in rows {
        if !modes.contains(&r.beam_mode) {
            modes.push(r.beam_mode);
        }
    }
    let positive = rows
        .iter()
        .flat_map(|r| [r.rmse_deg, r.crb_rmse_deg])
        .filter(|v| *v > 0.0 && v.is_finite());
    let (lo, hi) = positive.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo.log10().floor(), hi.log10().ceil().max(lo.log10().floor() + 1.0)) } else { (-1.0, 1.0) };
    let (x0, x1) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.snr_db), b.max(r.snr_db)));
    let (x0, x1) = if x1 > x0 { (x0, x1) } else { (x0 - 1.0, x0 + 1.0) };
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |v: f64| top + (hi - v.max(1e-300).log10()) / (hi - lo) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - left - right,
        h - top - bottom
    );
    for e in (lo as i32)..=(hi as i32) {
        let y = py(10f64.powi(e));
        let _ = writeln!(s, r##"<line x1="{left}" x2="{}" y1="{y:.2}" y2="{y:.2}" stroke="#ddd"/>"##, w - right);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">1e{e}</text>"#, left - 6.0, y + 4.0);
    }
    let mut snrs: Vec<f64> = rows.iter().map(|r| r.snr_db).collect();
    snrs.sort_by(f64::total_cmp);
    snrs.dedup();
    for x in &snrs {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{x}</text>"#, px(*x), h - bottom + 16.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">SNR (dB)</text>"#, (left + w - right) / 2.0, h - 10.0);
    let _ = writeln!(s, r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">phase error (deg)</text>"#, (top + h - bottom) / 2.0, (top + h - bottom) / 2.0);

    for (i, mode) in modes.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut pts: Vec<&SweepRow> = rows.iter().filter(|r| r.beam_mode == *mode).collect();
        pts.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
        for (value, dash, label) in [
            (Box::new(|r: &SweepRow| r.rmse_deg) as Box<dyn Fn(&SweepRow) -> f64>, "", "RMSE"),
            (Box::new(|r: &SweepRow| r.crb_rmse_deg), r#" stroke-dasharray="6 4""#, "CRB"),
        ] {
            let path: Vec<String> = pts.iter().map(|r| format!("{:.2},{:.2}", px(r.snr_db), py(value(r)))).collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#, path.join(" "));
            let row = if label == "RMSE" { 2 * i } else { 2 * i + 1 };
            let ly = top + 16.0 + 18.0 * row as f64;
            let _ = writeln!(s, r#"<line x1="{}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>"#, w - right + 10.0, w - right + 40.0);
            let _ = writeln!(s, r#"<text x="{}" y="{}">{label} {mode}</text>"#, w - right + 46.0, ly + 4.0);
        }
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_sweep_svg(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_file(path, &render_sweep_svg(rows))
}

fn phase_text(rows: impl Iterator<Item = Vec<f64>>) -> String {
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row.iter().map(|p| format!("{p}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Writes `chain_<n>.txt` (`M_t` rows of `K` phases) for every chain and
/// `rx.txt` (`K` rows of `M_r` phases), all in radians.
pub fn save_beams(dir: &Path, schedule: &BeamSchedule) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for n in 0..schedule.n_rf() {
        let stack = schedule.chain_stack(n);
        let text = phase_text(stack.row_iter().map(|r| r.iter().map(|z| z.arg()).collect()));
        write_file(&dir.join(format!("chain_{n}.txt")), &text)?;
    }
    let text = phase_text(schedule.w_list().iter().map(|w| w.iter().map(|z| z.arg()).collect()));
    write_file(&dir.join("rx.txt"), &text)
}

fn read_phases(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            line.split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|e| {
                        Error::Config(format!("{}:{}: {tok:?}: {e}", path.display(), i + 1))
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    if rows.is_empty() || rows.iter().any(|r| r.len() != rows[0].len() || r.is_empty()) {
        return Err(Error::Config(format!("{}: ragged or empty phase table", path.display())));
    }
    Ok(rows)
}

/// Reads the files written by [`save_beams`].
pub fn load_beams(dir: &Path) -> Result<BeamSchedule> {
    let mut stacks = Vec::new();
    loop {
        let path = dir.join(format!("chain_{}.txt", stacks.len()));
        if !path.exists() {
            break;
        }
        let rows = read_phases(&path)?;
        let (m_t, k) = (rows.len(), rows[0].len());
        stacks.push(DMatrix::from_fn(m_t, k, |t, kk| C64::from_polar(1.0, rows[t][kk])));
    }
    if stacks.is_empty() {
        return Err(Error::Config(format!("{}: no chain_0.txt", dir.display())));
    }
    let rx = read_phases(&dir.join("rx.txt"))?;
    let w_list = rx
        .iter()
        .map(|r| DVector::from_iterator(r.len(), r.iter().map(|p| C64::from_polar(1.0, *p))))
        .collect();
    BeamSchedule::from_chain_stacks(&stacks, w_list).map_err(|e| match e {
        Error::Dimension(msg) => Error::Config(format!("{}: {msg}", dir.display())),
        other => other,
    })
}
