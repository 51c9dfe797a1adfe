//! `levykick`: command-line driver for the noisy kicked rotator laboratory.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use levykick_core::harness::{
    compare_dirs, fmt_sig, localize, parse_config, run_experiment, write_comparison_csv, write_noiseless_csv,
    ExperimentConfig, HarnessError, NoiseLevel, SampleTimes,
};
use levykick_core::quantum::{Preset, RotatorConfig};
use levykick_core::renewal::{RenewalSeries, WaitingTimeDist};
use levykick_core::specfun::{mittag_leffler, MlfEvalPolicy};
use levykick_core::theory::{TheoryParams, TheorySeries};
use log::{info, warn};

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "levykick", version, about = "Kicked rotator under power-law renewal noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Noiseless run from |p=0> and fit of the localization plateau.
    Localize(LocalizeArgs),
    /// Noisy ensemble with classical baseline, predictions and comparison.
    Simulate(RunArgs),
    /// Predictions only, for the same parameters as `simulate`.
    Theory(RunArgs),
    /// Sprinkling, mean event count and event-count MGF tables.
    Renewal(RenewalArgs),
    /// Evaluates E_alpha(x).
    Mlf(MlfArgs),
    /// Compares a simulation directory against a prediction directory.
    Compare(CompareArgs),
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, default_value = "fast")]
    preset: Preset,
    /// Explicit grid, overrides the preset (needs --N).
    #[arg(long = "M", requires = "n")]
    m: Option<u64>,
    #[arg(long = "N", id = "n", requires = "m")]
    n: Option<usize>,
    /// Kick strength.
    #[arg(long = "K")]
    k: Option<f64>,
}

impl GridArgs {
    fn rotator(&self) -> Result<RotatorConfig, String> {
        let (m, n) = match (self.m, self.n) {
            (Some(m), Some(n)) => (m, n),
            _ => self.preset.m_n(),
        };
        RotatorConfig::new(self.k.unwrap_or(levykick_core::quantum::DEFAULT_K), m, n).map_err(|e| e.to_string())
    }
}

#[derive(Args)]
struct LocalizeArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 5000)]
    tmax: u64,
    /// Writes noiseless.csv here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct RunArgs {
    /// `key = value` file; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long = "M", requires = "n")]
    m: Option<u64>,
    #[arg(long = "N", id = "n", requires = "m")]
    n: Option<usize>,
    #[arg(long = "K")]
    k: Option<f64>,
    /// Yule-Simon exponent, or `none` for noise on every kick.
    #[arg(long)]
    alpha: Option<String>,
    /// Half-width of the uniform kick detuning.
    #[arg(long = "W", conflicts_with = "kappa")]
    w: Option<f64>,
    /// Variance of the kick detuning.
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long)]
    tmax: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Comma-separated times or `log64`.
    #[arg(long)]
    sample_times: Option<String>,
    /// Comma-separated times of momentum histograms.
    #[arg(long)]
    snapshot_times: Option<String>,
    #[arg(long)]
    rebin: Option<usize>,
    #[arg(long)]
    classical_particles: Option<usize>,
    /// Skips the noiseless fit and uses this D*.
    #[arg(long)]
    dstar: Option<f64>,
    #[arg(long)]
    fit_tmax: Option<u64>,
}

#[derive(Args)]
struct RenewalArgs {
    /// Yule-Simon exponent, or `none` for an event on every step.
    #[arg(long)]
    alpha: String,
    #[arg(long)]
    tmax: usize,
    /// MGF argument; defaults to -1/t_c from --kappa on the preset grid.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "kappa")]
    z: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long, default_value = "fast")]
    preset: Preset,
    /// Output file; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MlfArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long, allow_hyphen_values = true)]
    x: f64,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    sim: PathBuf,
    #[arg(long)]
    theory: PathBuf,
    /// Output file; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure of a subcommand, mapped to the process exit code.
enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_usage() {
            Self::Usage(e.to_string())
        } else {
            Self::Numerical(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self::Numerical(format!("i/o: {e}"))
    }
}

fn parse_alpha(s: &str) -> Result<Option<f64>, Failure> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    s.parse::<f64>().map(Some).map_err(|e| Failure::Usage(format!("bad --alpha '{s}': {e}")))
}

fn parse_times(flag: &str, s: &str) -> Result<Vec<u64>, Failure> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| t.trim().parse::<u64>().map_err(|e| Failure::Usage(format!("bad {flag} entry '{t}': {e}"))))
        .collect()
}

fn build_config(a: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut c = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            parse_config(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => {
            if a.w.is_none() && a.kappa.is_none() {
                return Err(Failure::Usage("give exactly one of --W and --kappa".into()));
            }
            ExperimentConfig::default()
        }
    };
    if let Some(p) = a.preset {
        c.preset = p;
    }
    if let (Some(m), Some(n)) = (a.m, a.n) {
        c.grid = Some((m, n));
    }
    if let Some(k) = a.k {
        c.k = k;
    }
    if let Some(s) = &a.alpha {
        c.alpha = parse_alpha(s)?;
    }
    if let Some(w) = a.w {
        c.noise = NoiseLevel::W(w);
    }
    if let Some(k) = a.kappa {
        c.noise = NoiseLevel::Kappa(k);
    }
    if let Some(r) = a.realizations {
        c.realizations = r;
    }
    if let Some(t) = a.tmax {
        c.t_max = t;
    }
    if let Some(s) = a.seed {
        c.master_seed = s;
    }
    if let Some(o) = &a.out {
        c.output_dir = o.clone();
    }
    if let Some(w) = a.workers {
        c.workers = w;
    }
    if let Some(s) = &a.sample_times {
        c.sample_times =
            if s.eq_ignore_ascii_case("log64") { SampleTimes::Log64 } else { SampleTimes::Explicit(parse_times("--sample-times", s)?) };
    }
    if let Some(s) = &a.snapshot_times {
        c.snapshot_times = parse_times("--snapshot-times", s)?;
    }
    if let Some(r) = a.rebin {
        c.rebin_width = r;
    }
    if let Some(p) = a.classical_particles {
        c.classical_particles = p;
    }
    if let Some(d) = a.dstar {
        c.d_star = Some(d);
    }
    if let Some(t) = a.fit_tmax {
        c.fit_t_max = t;
    }
    c.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(c)
}

fn init_pool(workers: usize) -> Result<(), Failure> {
    if workers == 0 {
        return Err(Failure::Usage("--workers must be at least 1".into()));
    }
    // a second call only fails if a pool already exists, which is harmless
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
        warn!("thread pool: {e}");
    }
    Ok(())
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(io::BufWriter::new(fs::File::create(p)?))
        }
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    })
}

fn cmd_localize(a: &LocalizeArgs) -> Result<u8, Failure> {
    init_pool(a.workers)?;
    let rotator = a.grid.rotator().map_err(Failure::Usage)?;
    let loc = localize(&rotator, a.tmax)?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        write_noiseless_csv(&loc.var_p0, io::BufWriter::new(fs::File::create(dir.join("noiseless.csv"))?))?;
    }
    match loc.fit {
        Ok(f) => {
            let t_star = f.value / (rotator.hbar * rotator.hbar);
            println!("hbar = {}", fmt_sig(rotator.hbar));
            println!("d_star = {}", fmt_sig(f.value));
            println!("d_star_std_error = {}", fmt_sig(f.std_error));
            println!("t_star = {}", fmt_sig(t_star));
            println!("rel_rms = {}", fmt_sig(f.residual_norm));
            Ok(0)
        }
        Err(e) => Err(Failure::Numerical(format!("break-time fit: {e}"))),
    }
}

fn cmd_simulate(a: &RunArgs) -> Result<u8, Failure> {
    let config = build_config(a)?;
    init_pool(config.workers)?;
    let report = run_experiment(&config)?;
    println!("manifest = {}", report.manifest_path.display());
    println!("payload_sha256 = {}", report.payload_sha256);
    if let Some(d) = report.d_star {
        println!("d_star = {}", fmt_sig(d));
    }
    for (name, ok) in &report.checks {
        println!("check.{name} = {}", if *ok { "passed" } else { "failed" });
    }
    if report.is_partial() {
        for f in &report.failures {
            warn!("{f}");
        }
        return Ok(EXIT_PARTIAL);
    }
    Ok(0)
}

fn cmd_theory(a: &RunArgs) -> Result<u8, Failure> {
    let config = build_config(a)?;
    init_pool(config.workers)?;
    let rotator = config.rotator().map_err(|e| Failure::Usage(e.to_string()))?;
    let noise = config.noise_params().map_err(|e| Failure::Usage(e.to_string()))?;
    fs::create_dir_all(&config.output_dir)?;
    let d_star = match config.d_star {
        Some(d) => d,
        None => {
            info!("fitting D* from a noiseless run to t = {}", config.fit_t_max);
            let loc = localize(&rotator, config.fit_t_max)?;
            write_noiseless_csv(
                &loc.var_p0,
                io::BufWriter::new(fs::File::create(config.output_dir.join("noiseless.csv"))?),
            )?;
            loc.fit.map_err(|e| Failure::Numerical(format!("break-time fit: {e}")))?.value
        }
    };
    let params = TheoryParams::new(d_star, rotator.hbar, noise.kappa, noise.dist)
        .map_err(|e| Failure::Numerical(e.to_string()))?;
    let series = TheorySeries::compute(&params, config.t_max, &config.sample_times_resolved())
        .map_err(|e| Failure::Numerical(e.to_string()))?;
    series.write_csv(io::BufWriter::new(fs::File::create(config.output_dir.join("theory.csv"))?))?;
    println!("d_star = {}", fmt_sig(d_star));
    println!("t_star = {}", fmt_sig(params.t_star));
    println!("t_c = {}", fmt_sig(params.t_c));
    if let Some(t) = params.t_c_eff() {
        println!("t_c_eff = {}", fmt_sig(t));
    }
    println!("theory = {}", config.output_dir.join("theory.csv").display());
    Ok(0)
}

fn cmd_renewal(a: &RenewalArgs) -> Result<u8, Failure> {
    let dist = match parse_alpha(&a.alpha)? {
        None => WaitingTimeDist::DeterministicUnit,
        Some(al) => WaitingTimeDist::yule_simon(al).map_err(|e| Failure::Usage(e.to_string()))?,
    };
    let z = match (a.z, a.kappa) {
        (Some(z), _) => z,
        (None, Some(k)) if k >= 0.0 => {
            let hbar = RotatorConfig::preset(a.preset).hbar;
            -k / (2.0 * hbar * hbar)
        }
        (None, Some(k)) => return Err(Failure::Usage(format!("kappa must be nonnegative, got {k}"))),
        (None, None) => 0.0,
    };
    if !z.is_finite() {
        return Err(Failure::Usage(format!("z must be finite, got {z}")));
    }
    let series = RenewalSeries::compute(&dist, z, a.tmax);
    if series.mgf.iter().chain(&series.sprinkling).any(|v| !v.is_finite()) {
        return Err(Failure::Numerical("non-finite renewal statistics".into()));
    }
    let mut out = open_out(a.out.as_deref())?;
    series.write_csv(&mut out)?;
    out.flush()?;
    Ok(0)
}

fn cmd_mlf(a: &MlfArgs) -> Result<u8, Failure> {
    match mittag_leffler(a.alpha, a.x, &MlfEvalPolicy::default()) {
        Ok(v) => {
            println!("{v:.17e}");
            Ok(0)
        }
        Err(e) if e.is_domain() => Err(Failure::Usage(e.to_string())),
        Err(e) => Err(Failure::Numerical(e.to_string())),
    }
}

fn cmd_compare(a: &CompareArgs) -> Result<u8, Failure> {
    let rows = compare_dirs(&a.sim, &a.theory)?;
    if rows.is_empty() {
        return Err(Failure::Numerical("no common sample times".into()));
    }
    let mut out = open_out(a.out.as_deref())?;
    write_comparison_csv(&rows, &mut out)?;
    out.flush()?;
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Localize(a) => cmd_localize(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Theory(a) => cmd_theory(a),
        Command::Renewal(a) => cmd_renewal(a),
        Command::Mlf(a) => cmd_mlf(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}
