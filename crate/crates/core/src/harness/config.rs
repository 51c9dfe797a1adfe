//! `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;

use super::log_spaced_times;
use crate::quantum::{NoiseParams, Preset, RotatorConfig, DEFAULT_K, DEFAULT_REBIN};
use crate::renewal::WaitingTimeDist;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected 'key = value', got '{text}'")]
    Syntax { line: usize, text: String },
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    #[error("key '{0}' given twice")]
    Duplicate(String),
    #[error("bad value for '{key}': {detail}")]
    Value { key: String, detail: String },
    #[error("{0}")]
    Invalid(String),
}

/// Noise strength, given either as box half-width or as variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    W(f64),
    Kappa(f64),
}

/// Sample-time selection.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleTimes {
    /// 64 log-spaced integers in `[1, t_max]`.
    Log64,
    Explicit(Vec<u64>),
}

impl SampleTimes {
    pub fn resolve(&self, t_max: u64) -> Vec<u64> {
        match self {
            Self::Log64 => log_spaced_times(t_max, 64),
            Self::Explicit(v) => {
                let mut v = v.clone();
                v.sort_unstable();
                v.dedup();
                v
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Preset,
    /// Overrides the preset grid when set.
    pub grid: Option<(u64, usize)>,
    pub k: f64,
    /// `None` puts noise on every kick.
    pub alpha: Option<f64>,
    pub noise: NoiseLevel,
    pub realizations: usize,
    pub t_max: u64,
    pub sample_times: SampleTimes,
    pub snapshot_times: Vec<u64>,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub rebin_width: usize,
    /// Particles in the classical baseline; 0 skips it.
    pub classical_particles: usize,
    /// Uses this `D*` instead of fitting a noiseless run.
    pub d_star: Option<f64>,
    /// Length of the noiseless run behind the `D*` fit.
    pub fit_t_max: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Fast,
            grid: None,
            k: DEFAULT_K,
            alpha: None,
            noise: NoiseLevel::W(0.0),
            realizations: 100,
            t_max: 1000,
            sample_times: SampleTimes::Log64,
            snapshot_times: Vec::new(),
            master_seed: 1,
            output_dir: PathBuf::from("out"),
            workers: 1,
            rebin_width: DEFAULT_REBIN,
            classical_particles: 0,
            d_star: None,
            fit_t_max: 5000,
        }
    }
}

const KEYS: &[&str] = &[
    "preset",
    "M",
    "N",
    "K",
    "alpha",
    "W",
    "kappa",
    "realizations",
    "tmax",
    "sample_times",
    "snapshot_times",
    "seed",
    "out",
    "workers",
    "rebin",
    "classical_particles",
    "dstar",
    "fit_tmax",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| ConfigError::Value { key: key.into(), detail: format!("'{v}': {e}") })
}

fn parse_list(key: &str, v: &str) -> Result<Vec<u64>, ConfigError> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.to_string() })?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(ConfigError::UnknownKey(k.to_string()));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(ConfigError::Duplicate(k.to_string()));
        }
    }
    ExperimentConfig::from_map(&map)
}

impl ExperimentConfig {
    fn from_map(map: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        let get = |k: &str| map.get(k).map(String::as_str);
        if let Some(v) = get("preset") {
            c.preset = v.parse().map_err(|e| ConfigError::Value { key: "preset".into(), detail: e })?;
        }
        match (get("M"), get("N")) {
            (Some(m), Some(n)) => c.grid = Some((parse_num("M", m)?, parse_num("N", n)?)),
            (None, None) => {}
            _ => return Err(ConfigError::Invalid("M and N must be given together".into())),
        }
        if let Some(v) = get("K") {
            c.k = parse_num("K", v)?;
        }
        if let Some(v) = get("alpha") {
            c.alpha = match v.to_ascii_lowercase().as_str() {
                "none" | "" => None,
                _ => Some(parse_num("alpha", v)?),
            };
        }
        c.noise = match (get("W"), get("kappa")) {
            (Some(_), Some(_)) => return Err(ConfigError::Invalid("give only one of W and kappa".into())),
            (Some(w), None) => NoiseLevel::W(parse_num("W", w)?),
            (None, Some(k)) => NoiseLevel::Kappa(parse_num("kappa", k)?),
            (None, None) => NoiseLevel::W(0.0),
        };
        if let Some(v) = get("realizations") {
            c.realizations = parse_num("realizations", v)?;
        }
        if let Some(v) = get("tmax") {
            c.t_max = parse_num("tmax", v)?;
        }
        if let Some(v) = get("sample_times") {
            c.sample_times = if v.eq_ignore_ascii_case("log64") {
                SampleTimes::Log64
            } else {
                SampleTimes::Explicit(parse_list("sample_times", v)?)
            };
        }
        if let Some(v) = get("snapshot_times") {
            c.snapshot_times = parse_list("snapshot_times", v)?;
        }
        if let Some(v) = get("seed") {
            c.master_seed = parse_num("seed", v)?;
        }
        if let Some(v) = get("out") {
            c.output_dir = PathBuf::from(v);
        }
        if let Some(v) = get("workers") {
            c.workers = parse_num("workers", v)?;
        }
        if let Some(v) = get("rebin") {
            c.rebin_width = parse_num("rebin", v)?;
        }
        if let Some(v) = get("classical_particles") {
            c.classical_particles = parse_num("classical_particles", v)?;
        }
        if let Some(v) = get("dstar") {
            c.d_star = Some(parse_num("dstar", v)?);
        }
        if let Some(v) = get("fit_tmax") {
            c.fit_t_max = parse_num("fit_tmax", v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |s: String| Err(ConfigError::Invalid(s));
        if self.t_max < 1 {
            return bad("tmax must be at least 1".into());
        }
        if self.realizations < 2 {
            return bad(format!("realizations must be at least 2, got {}", self.realizations));
        }
        if self.workers < 1 {
            return bad("workers must be at least 1".into());
        }
        if self.rebin_width < 1 {
            return bad("rebin must be at least 1".into());
        }
        if let SampleTimes::Explicit(v) = &self.sample_times {
            if let Some(t) = v.iter().find(|&&t| t > self.t_max) {
                return bad(format!("sample time {t} exceeds tmax {}", self.t_max));
            }
        }
        if let Some(t) = self.snapshot_times.iter().find(|&&t| t > self.t_max) {
            return bad(format!("snapshot time {t} exceeds tmax {}", self.t_max));
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return bad(format!("alpha must be positive, got {a}"));
            }
        }
        if let Some(d) = self.d_star {
            if !(d > 0.0 && d.is_finite()) {
                return bad(format!("dstar must be positive, got {d}"));
            }
        }
        match self.noise {
            NoiseLevel::W(w) if !(w >= 0.0 && w.is_finite()) => bad(format!("W must be nonnegative, got {w}")),
            NoiseLevel::Kappa(k) if !(k >= 0.0 && k.is_finite()) => bad(format!("kappa must be nonnegative, got {k}")),
            _ => Ok(()),
        }
    }

    pub fn rotator(&self) -> Result<RotatorConfig, ConfigError> {
        let (m, n) = self.grid.unwrap_or_else(|| self.preset.m_n());
        RotatorConfig::new(self.k, m, n).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn dist(&self) -> Result<WaitingTimeDist, ConfigError> {
        match self.alpha {
            None => Ok(WaitingTimeDist::DeterministicUnit),
            Some(a) => WaitingTimeDist::yule_simon(a).map_err(|e| ConfigError::Invalid(e.to_string())),
        }
    }

    pub fn noise_params(&self) -> Result<NoiseParams, ConfigError> {
        let dist = self.dist()?;
        match self.noise {
            NoiseLevel::W(w) => NoiseParams::from_w(w, dist),
            NoiseLevel::Kappa(k) => NoiseParams::from_kappa(k, dist),
        }
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn sample_times_resolved(&self) -> Vec<u64> {
        let mut v = self.sample_times.resolve(self.t_max);
        // snapshots are taken at sample times
        v.extend(self.snapshot_times.iter().copied());
        v.sort_unstable();
        v.dedup();
        v
    }

    /// The configuration in the format accepted by [`parse_config`].
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let join = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "preset = {}", self.preset);
        if let Some((m, n)) = self.grid {
            let _ = writeln!(s, "M = {m}\nN = {n}");
        }
        let _ = writeln!(s, "K = {:?}", self.k);
        match self.alpha {
            Some(a) => {
                let _ = writeln!(s, "alpha = {a:?}");
            }
            None => s.push_str("alpha = none\n"),
        }
        match self.noise {
            NoiseLevel::W(w) => {
                let _ = writeln!(s, "W = {w:?}");
            }
            NoiseLevel::Kappa(k) => {
                let _ = writeln!(s, "kappa = {k:?}");
            }
        }
        let _ = writeln!(s, "realizations = {}", self.realizations);
        let _ = writeln!(s, "tmax = {}", self.t_max);
        match &self.sample_times {
            SampleTimes::Log64 => s.push_str("sample_times = log64\n"),
            SampleTimes::Explicit(v) => {
                let _ = writeln!(s, "sample_times = {}", join(v));
            }
        }
        let _ = writeln!(s, "snapshot_times = {}", join(&self.snapshot_times));
        let _ = writeln!(s, "seed = {}", self.master_seed);
        let _ = writeln!(s, "out = {}", self.output_dir.display());
        let _ = writeln!(s, "workers = {}", self.workers);
        let _ = writeln!(s, "rebin = {}", self.rebin_width);
        let _ = writeln!(s, "classical_particles = {}", self.classical_particles);
        if let Some(d) = self.d_star {
            let _ = writeln!(s, "dstar = {d:?}");
        }
        let _ = writeln!(s, "fit_tmax = {}", self.fit_t_max);
        s
    }
}
