use std::fs;

use levykick_core::harness::{
    compare_dirs, parse_config, parse_manifest, read_csv, run_experiment, ExperimentConfig, NoiseLevel, SampleTimes,
};
use levykick_core::quantum::Preset;

fn small_config(dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        preset: Preset::Fast,
        grid: Some((5, 128)),
        alpha: Some(2.0),
        noise: NoiseLevel::Kappa(1.0 / 300.0),
        realizations: 6,
        t_max: 60,
        snapshot_times: vec![30],
        master_seed: 11,
        output_dir: dir.to_path_buf(),
        classical_particles: 500,
        fit_t_max: 200,
        ..Default::default()
    }
}

#[test]
fn same_seed_gives_identical_payload() {
    let tmp = tempfile::tempdir().unwrap();
    let a = small_config(&tmp.path().join("a"));
    let b = small_config(&tmp.path().join("b"));
    let ra = run_experiment(&a).unwrap();
    let rb = run_experiment(&b).unwrap();
    assert_eq!(ra.payload_sha256, rb.payload_sha256);
    for name in ["quantum.csv", "classical.csv", "snapshot_t30.csv", "noiseless.csv"] {
        assert_eq!(fs::read(a.output_dir.join(name)).unwrap(), fs::read(b.output_dir.join(name)).unwrap(), "{name}");
    }

    let mut c = small_config(&tmp.path().join("c"));
    c.master_seed = 12;
    assert_ne!(run_experiment(&c).unwrap().payload_sha256, ra.payload_sha256);
}

#[test]
fn noiseless_run_reports_unit_purity() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    cfg.noise = NoiseLevel::W(0.0);
    cfg.d_star = Some(5.0);
    let report = run_experiment(&cfg).unwrap();
    assert!(report.checks.contains(&("purity_identically_one".to_string(), true)));
    let manifest = fs::read_to_string(&report.manifest_path).unwrap();
    assert!(manifest.contains("run.check.purity_identically_one = passed"));
    assert!(manifest.contains("run.status = complete"));
}

#[test]
fn manifest_echoes_the_configuration() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "# small run\npreset = fast\nM = 5\nN = 128\nalpha = 0.75\nW = 0.125\nrealizations = 4\ntmax = 40\n\
         sample_times = 1,2,5,10,20,40\nsnapshot_times = 20\nseed = 99\nout = {}\ndstar = 4.5\n",
        tmp.path().display()
    );
    let cfg = parse_config(&text).unwrap();
    let report = run_experiment(&cfg).unwrap();
    let (echo, run) = parse_manifest(&fs::read_to_string(&report.manifest_path).unwrap()).unwrap();
    assert_eq!(echo, cfg);
    assert_eq!(echo.sample_times, SampleTimes::Explicit(vec![1, 2, 5, 10, 20, 40]));
    assert_eq!(run["payload_sha256"], report.payload_sha256);
    assert_eq!(run["d_star_source"], "given");
    for name in ["quantum.csv", "theory.csv", "comparison.csv", "snapshot_t20.csv"] {
        let bytes = fs::read(tmp.path().join(name)).unwrap();
        assert_eq!(run[&format!("sha256.{name}")], levykick_core::harness::sha256_hex(&bytes));
    }
}

#[test]
fn emitted_csvs_parse_back() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    cfg.d_star = Some(5.0);
    let report = run_experiment(&cfg).unwrap();
    let q = report.quantum.unwrap();

    let table = read_csv(&tmp.path().join("quantum.csv")).unwrap();
    assert_eq!(table.header, ["t", "var_p", "ipr", "purity", "purity_se", "logfid", "logfid_se"]);
    let var = table.column("var_p").unwrap();
    for (a, b) in var.iter().zip(&q.var_p) {
        assert!((a - b).abs() <= 1e-11 * b.abs(), "{a} vs {b}");
    }
    let th = read_csv(&tmp.path().join("theory.csv")).unwrap();
    assert_eq!(th.header, ["t", "var_p_pred", "D", "ipr_pred", "purity_pred", "logfid_pred"]);
    let snap = read_csv(&tmp.path().join("snapshot_t30.csv")).unwrap();
    assert_eq!(snap.header, ["p_over_pstar", "density"]);
    let cl = read_csv(&tmp.path().join("classical.csv")).unwrap();
    assert_eq!(cl.header, ["t", "var_p_classical"]);
    assert_eq!(cl.rows.len(), 61);

    let rows = compare_dirs(tmp.path(), tmp.path()).unwrap();
    assert_eq!(rows.len(), q.times.len());
    assert_eq!(rows, report.comparison);
}
