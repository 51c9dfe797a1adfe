//! End-to-end driver: noiseless fit, quantum ensemble, classical baseline,
//! predictions, comparison table and run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use super::config::{parse_config, ConfigError, ExperimentConfig};
use super::fit::{fit_break_time, FitError, FitResult, BREAK_FIT_MAX_REL_RMS};
use super::output::{parse_csv_text, payload_digest, read_csv, sha256_hex, write_noiseless_csv, CsvTable};
use super::fmt_sig;
use crate::classical::{classical_var_series, ClassicalSeries};
use crate::quantum::{ensemble_run, noiseless_variance, EnsembleSpec, FloquetOperator, ObservableSeries, QuantumError, RotatorConfig};
use crate::theory::{TheoryError, TheoryParams, TheorySeries};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("missing column '{0}'")]
    MissingColumn(String),
}

impl HarnessError {
    /// Errors caused by the caller's input rather than by the numerics.
    pub fn is_usage(&self) -> bool {
        matches!(self, Self::Config(_))
    }
}

/// `|a-b| / max(|a|, |b|, 1e-30)`.
pub fn symmetric_relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-30)
}

#[derive(Debug, Clone)]
pub struct LocalizeResult {
    /// Noiseless `var p(t)` for `t = 0..=t_max`.
    pub var_p0: Vec<f64>,
    pub fit: Result<FitResult, FitError>,
}

/// Noiseless single trace from `|p=0⟩` and the break-time fit.
pub fn localize(rotator: &RotatorConfig, t_max: u64) -> Result<LocalizeResult, HarnessError> {
    let op = FloquetOperator::new(rotator);
    let var_p0 = noiseless_variance(&op, t_max, &[0])?;
    let fit = fit_break_time(&var_p0, rotator.hbar, BREAK_FIT_MAX_REL_RMS);
    Ok(LocalizeResult { var_p0, fit })
}

/// Simulation against prediction at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonRow {
    pub t: u64,
    pub var_sim: f64,
    pub var_pred: f64,
    pub ipr_sim: f64,
    pub ipr_pred: f64,
    pub purity_sim: f64,
    pub purity_pred: f64,
    pub logfid_sim: f64,
    pub logfid_pred: f64,
}

impl ComparisonRow {
    pub fn var_rel(&self) -> f64 {
        symmetric_relative(self.var_sim, self.var_pred)
    }
    pub fn ipr_rel(&self) -> f64 {
        symmetric_relative(self.ipr_sim, self.ipr_pred)
    }
    pub fn purity_rel(&self) -> f64 {
        symmetric_relative(self.purity_sim, self.purity_pred)
    }
    pub fn logfid_rel(&self) -> f64 {
        symmetric_relative(self.logfid_sim, self.logfid_pred)
    }
}

fn col(t: &CsvTable, name: &str) -> Result<Vec<f64>, HarnessError> {
    t.column(name).ok_or_else(|| HarnessError::MissingColumn(name.into()))
}

/// Joins a `quantum.csv` table with a `theory.csv` table on `t`.
pub fn compare_tables(sim: &CsvTable, theory: &CsvTable) -> Result<Vec<ComparisonRow>, HarnessError> {
    let (st, sv, si, sp, sl) = (col(sim, "t")?, col(sim, "var_p")?, col(sim, "ipr")?, col(sim, "purity")?, col(sim, "logfid")?);
    let (tt, tv, ti, tp, tl) = (
        col(theory, "t")?,
        col(theory, "var_p_pred")?,
        col(theory, "ipr_pred")?,
        col(theory, "purity_pred")?,
        col(theory, "logfid_pred")?,
    );
    let idx: BTreeMap<u64, usize> = tt.iter().enumerate().map(|(k, &t)| (t as u64, k)).collect();
    Ok(st
        .iter()
        .enumerate()
        .filter_map(|(k, &t)| {
            let j = *idx.get(&(t as u64))?;
            Some(ComparisonRow {
                t: t as u64,
                var_sim: sv[k],
                var_pred: tv[j],
                ipr_sim: si[k],
                ipr_pred: ti[j],
                purity_sim: sp[k],
                purity_pred: tp[j],
                logfid_sim: sl[k],
                logfid_pred: tl[j],
            })
        })
        .collect())
}

/// Reads `quantum.csv` and `theory.csv` from two run directories.
pub fn compare_dirs(sim_dir: &Path, theory_dir: &Path) -> Result<Vec<ComparisonRow>, HarnessError> {
    compare_tables(&read_csv(&sim_dir.join("quantum.csv"))?, &read_csv(&theory_dir.join("theory.csv"))?)
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], mut out: W) -> io::Result<()> {
    writeln!(out, "t,var_sim,var_pred,var_rel,ipr_sim,ipr_pred,ipr_rel,purity_sim,purity_pred,purity_rel,logfid_sim,logfid_pred,logfid_rel")?;
    for r in rows {
        let f = [
            r.var_sim,
            r.var_pred,
            r.var_rel(),
            r.ipr_sim,
            r.ipr_pred,
            r.ipr_rel(),
            r.purity_sim,
            r.purity_pred,
            r.purity_rel(),
            r.logfid_sim,
            r.logfid_pred,
            r.logfid_rel(),
        ];
        let cells: Vec<String> = f.iter().map(|&x| fmt_sig(x)).collect();
        writeln!(out, "{},{}", r.t, cells.join(","))?;
    }
    Ok(())
}

/// Everything a run produced. Parts that failed are `None` and listed in
/// `failures`.
#[derive(Debug, Clone)]
pub struct Report {
    pub d_star: Option<f64>,
    pub d_star_fit: Option<FitResult>,
    pub quantum: Option<ObservableSeries>,
    pub classical: Option<ClassicalSeries>,
    pub theory: Option<TheorySeries>,
    pub comparison: Vec<ComparisonRow>,
    pub checks: Vec<(String, bool)>,
    pub failures: Vec<String>,
    pub payload_sha256: String,
    pub manifest_path: PathBuf,
}

impl Report {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }
}

struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, name: String, write: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> io::Result<()> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        fs::write(self.dir.join(&name), &buf)?;
        self.files.push((name, buf));
        Ok(())
    }
}

/// Runs the configured experiment and writes its outputs to
/// `config.output_dir`. Numerical failures of individual parts are recorded
/// and the remaining parts still run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report, HarnessError> {
    config.validate()?;
    let started = Instant::now();
    let rotator = config.rotator()?;
    let noise = config.noise_params()?;
    let times = config.sample_times_resolved();
    fs::create_dir_all(&config.output_dir)?;
    let mut out = Outputs { dir: config.output_dir.clone(), files: Vec::new() };
    let mut failures = Vec::new();

    let (d_star, d_star_fit) = match config.d_star {
        Some(d) => (Some(d), None),
        None => {
            let loc = localize(&rotator, config.fit_t_max)?;
            out.add("noiseless.csv".into(), |b| write_noiseless_csv(&loc.var_p0, b))?;
            match loc.fit {
                Ok(f) => (Some(f.value), Some(f)),
                Err(e) => {
                    failures.push(format!("break-time fit: {e}"));
                    (None, None)
                }
            }
        }
    };

    let spec = EnsembleSpec {
        realizations: config.realizations,
        t_max: config.t_max,
        sample_times: times.clone(),
        snapshot_times: config.snapshot_times.clone(),
        rebin_width: config.rebin_width,
        master_seed: config.master_seed,
        pair_observables: true,
    };
    let (quantum, (classical, theory)) = rayon::join(
        || ensemble_run(&rotator, &noise, &spec),
        || {
            let classical = (config.classical_particles > 0).then(|| {
                classical_var_series(&rotator, &noise, config.classical_particles, config.t_max, config.master_seed)
            });
            let theory = d_star.map(|d| {
                TheoryParams::new(d, rotator.hbar, noise.kappa, noise.dist)
                    .and_then(|p| TheorySeries::compute(&p, config.t_max, &times))
            });
            (classical, theory)
        },
    );

    let quantum = match quantum {
        Ok(q) => Some(q),
        Err(e) => {
            failures.push(format!("quantum ensemble: {e}"));
            None
        }
    };
    let theory = match theory {
        Some(Ok(t)) => Some(t),
        Some(Err(e)) => {
            failures.push(format!("theory: {e}"));
            None
        }
        None => None,
    };

    let mut checks = Vec::new();
    if let Some(q) = &quantum {
        out.add("quantum.csv".into(), |b| q.write_csv(b))?;
        let p_star = d_star.map_or(1.0, |d| d / rotator.hbar);
        for (t, h) in &q.snapshots {
            out.add(format!("snapshot_t{t}.csv"), |b| h.write_csv(p_star, b))?;
        }
        if noise.kappa == 0.0 {
            let pure = q.purity.iter().all(|p| (p - 1.0).abs() < 1e-10);
            checks.push(("purity_identically_one".to_string(), pure));
        }
        checks.push(("momentum_grid_edge_clear".to_string(), q.max_edge_mass <= crate::quantum::EDGE_MASS_WARN));
    }
    if let Some(c) = &classical {
        out.add("classical.csv".into(), |b| c.write_csv(b))?;
    }
    let mut comparison = Vec::new();
    if let Some(t) = &theory {
        out.add("theory.csv".into(), |b| t.write_csv(b))?;
    }
    if let (Some(q), Some(t)) = (&quantum, &theory) {
        let mut qb = Vec::new();
        q.write_csv(&mut qb)?;
        let mut tb = Vec::new();
        t.write_csv(&mut tb)?;
        comparison = compare_tables(&parse_table(&qb)?, &parse_table(&tb)?)?;
        out.add("comparison.csv".into(), |b| write_comparison_csv(&comparison, b))?;
    }

    let payload_sha256 = payload_digest(out.files.iter().map(|(n, b)| (n.as_str(), b.as_slice())));
    let mut manifest = config.to_config_string();
    let mut run = |k: &str, v: String| manifest.push_str(&format!("run.{k} = {v}\n"));
    run("code_version", env!("CARGO_PKG_VERSION").to_string());
    run("hbar", format!("{:?}", rotator.hbar));
    run("kappa", format!("{:?}", noise.kappa));
    run("d_star", d_star.map_or("none".into(), |d| format!("{d:?}")));
    run("d_star_source", if config.d_star.is_some() { "given" } else { "fit" }.into());
    if let Some(f) = &d_star_fit {
        run("d_star_std_error", format!("{:?}", f.std_error));
        run("d_star_rel_rms", format!("{:?}", f.residual_norm));
    }
    for (name, ok) in &checks {
        run(&format!("check.{name}"), if *ok { "passed" } else { "failed" }.into());
    }
    for (n, b) in &out.files {
        run(&format!("sha256.{n}"), sha256_hex(b));
    }
    run("payload_sha256", payload_sha256.clone());
    run("status", if failures.is_empty() { "complete" } else { "partial" }.into());
    for (i, f) in failures.iter().enumerate() {
        run(&format!("failure.{i}"), f.replace('\n', " "));
    }
    run("wall_time_s", format!("{:.3}", started.elapsed().as_secs_f64()));
    let manifest_path = config.output_dir.join("manifest.txt");
    fs::write(&manifest_path, manifest)?;

    Ok(Report {
        d_star,
        d_star_fit,
        quantum,
        classical,
        theory,
        comparison,
        checks,
        failures,
        payload_sha256,
        manifest_path,
    })
}

fn parse_table(bytes: &[u8]) -> Result<CsvTable, HarnessError> {
    let text = std::str::from_utf8(bytes).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    Ok(parse_csv_text(text, "<memory>")?)
}

/// Splits a manifest into the echoed configuration and the `run.*` entries.
pub fn parse_manifest(text: &str) -> Result<(ExperimentConfig, BTreeMap<String, String>), ConfigError> {
    let mut cfg = String::new();
    let mut run = BTreeMap::new();
    for line in text.lines() {
        match line.split_once('=') {
            Some((k, v)) if k.trim().starts_with("run.") => {
                run.insert(k.trim().trim_start_matches("run.").to_string(), v.trim().to_string());
            }
            _ => {
                cfg.push_str(line);
                cfg.push('\n');
            }
        }
    }
    Ok((parse_config(&cfg)?, run))
}
