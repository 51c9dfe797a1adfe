//! Experiment plumbing: configuration, fits, CSV files and the driver that
//! runs simulation, classical baseline and predictions side by side.

mod config;
mod experiment;
mod fit;
mod output;

pub use config::{parse_config, ConfigError, ExperimentConfig, NoiseLevel, SampleTimes};
pub use experiment::{
    compare_dirs, compare_tables, localize, parse_manifest, write_comparison_csv, run_experiment, symmetric_relative, ComparisonRow, HarnessError, LocalizeResult, Report,
};
pub use fit::{fit_break_time, fit_power_law, fit_profile, FitError, FitResult, ProfileFit, BREAK_FIT_MAX_REL_RMS, PROFILE_EDGE_FRACTION};
pub use output::{parse_csv_text, payload_digest, read_csv, sha256_hex, write_noiseless_csv, CsvTable};

/// Twelve significant digits in scientific notation.
pub fn fmt_sig(x: f64) -> String {
    format!("{x:.11e}")
}

/// `count` log-spaced integers in `[1, t_max]`, deduplicated and sorted.
pub fn log_spaced_times(t_max: u64, count: usize) -> Vec<u64> {
    if t_max == 0 || count == 0 {
        return Vec::new();
    }
    if count == 1 {
        return vec![t_max];
    }
    let top = (t_max as f64).ln();
    let mut v: Vec<u64> = (0..count)
        .map(|k| ((top * k as f64 / (count - 1) as f64).exp().round() as u64).clamp(1, t_max))
        .collect();
    v.sort_unstable();
    v.dedup();
    v
}
