use std::fmt;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::UpaGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamMode {
    Random,
    Optimized,
    /// Patterns loaded from disk, shared by every trial.
    File,
}

impl BeamMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            BeamMode::Random => "random",
            BeamMode::Optimized => "optimized",
            BeamMode::File => "file",
        }
    }
}

impl fmt::Display for BeamMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> From<OneOrMany<T>> for Vec<T> {
    fn from(v: OneOrMany<T>) -> Self {
        match v {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(xs) => xs,
        }
    }
}

/// Which gauge the phase error is measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmseGauge {
    /// First deviation real, transmit direction moved to broadside, applied
    /// to estimate and truth alike.
    Canonical,
    /// Transform fitted to the truth by least squares.
    Fit,
}

fn default_nu() -> f64 {
    0.0
}
fn default_beam_mode() -> Vec<BeamMode> {
    vec![BeamMode::Random]
}
fn default_n_fft() -> usize {
    32
}
fn default_trials() -> usize {
    100
}
fn default_max_outer() -> usize {
    20
}
fn default_min_rel_decrease() -> f64 {
    0.01
}
fn default_gauge() -> RmseGauge {
    RmseGauge::Canonical
}

fn beam_modes<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<BeamMode>, D::Error> {
    OneOrMany::<BeamMode>::deserialize(d).map(Into::into)
}

fn snr_list<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    OneOrMany::<f64>::deserialize(d).map(Into::into)
}

/// A Monte-Carlo scenario as read from a TOML document.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_x: usize,
    pub n_y: usize,
    pub m_x: usize,
    pub m_y: usize,
    pub n_rf: usize,
    pub l: usize,
    pub k: usize,
    #[serde(deserialize_with = "snr_list")]
    pub snr_db: Vec<f64>,
    pub epsilon_deg: f64,
    #[serde(default = "default_nu")]
    pub nu_deg: f64,
    #[serde(default = "default_beam_mode", deserialize_with = "beam_modes")]
    pub beam_mode: Vec<BeamMode>,
    #[serde(default = "default_n_fft")]
    pub n_fft: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    /// The outer loop stops once an iteration lowers the cost by less than
    /// this fraction.
    #[serde(default = "default_min_rel_decrease")]
    pub min_rel_decrease: f64,
    #[serde(default = "default_gauge")]
    pub rmse_gauge: RmseGauge,
}

impl ScenarioConfig {
    /// The 4x4 / 4x4 desk scenario.
    pub fn desk() -> Self {
        Self {
            n_x: 4,
            n_y: 4,
            m_x: 4,
            m_y: 4,
            n_rf: 2,
            l: 2,
            k: 64,
            snr_db: vec![-10.0, 0.0, 10.0],
            epsilon_deg: 20.0,
            nu_deg: 0.0,
            beam_mode: vec![BeamMode::Random, BeamMode::Optimized],
            n_fft: 32,
            trials: 100,
            seed: 0,
            max_outer: 20,
            min_rel_decrease: 0.01,
            rmse_gauge: RmseGauge::Canonical,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn tx(&self) -> UpaGeometry {
        UpaGeometry::new(self.n_x, self.n_y).expect("validated")
    }

    pub fn rx(&self) -> UpaGeometry {
        UpaGeometry::new(self.m_x, self.m_y).expect("validated")
    }

    pub fn m_t(&self) -> usize {
        self.n_x * self.n_y
    }

    pub fn m_r(&self) -> usize {
        self.m_x * self.m_y
    }

    /// Noise variance per received sample, `L / 10^(snr/10)`.
    pub fn sigma2(&self, snr_db: f64) -> f64 {
        self.l as f64 / 10f64.powf(snr_db / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        for (name, v) in [
            ("n_x", self.n_x),
            ("n_y", self.n_y),
            ("m_x", self.m_x),
            ("m_y", self.m_y),
            ("n_rf", self.n_rf),
            ("k", self.k),
            ("trials", self.trials),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.l < self.n_rf {
            return bad(format!("l = {} is shorter than n_rf = {}", self.l, self.n_rf));
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite()) {
            return bad("snr_db must list at least one finite value".into());
        }
        if self.beam_mode.is_empty() {
            return bad("beam_mode must name at least one mode".into());
        }
        if self.beam_mode.contains(&BeamMode::Optimized) && self.k < self.m_t() {
            return bad(format!(
                "optimized patterns need k >= n_x * n_y = {}, got k = {}",
                self.m_t(),
                self.k
            ));
        }
        if !(self.epsilon_deg >= 0.0) || !(self.nu_deg >= 0.0) {
            return bad("epsilon_deg and nu_deg must be non-negative".into());
        }
        let largest = self.n_x.max(self.n_y).max(self.m_x).max(self.m_y);
        if !self.n_fft.is_power_of_two() || self.n_fft < largest {
            return bad(format!(
                "n_fft must be a power of two no smaller than {largest}, got {}",
                self.n_fft
            ));
        }
        if !(self.min_rel_decrease >= 0.0) {
            return bad("min_rel_decrease must be non-negative".into());
        }
        if self.max_outer == 0 {
            return bad("max_outer must be at least 1".into());
        }
        Ok(())
    }
}
