use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ecd-sim"))
}

fn scratch_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ecd-sim-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(bin().arg("--version").output().unwrap().status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(bin().arg("no-such-command").output().unwrap().status.code(), Some(1));
    let out = bin().args(["sweep-compare", "--sweep", "zigzag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_config_exits_one() {
    let dir = scratch_dir("badcfg");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "[system]\nnot_a_field = 3\n").unwrap();
    let out = bin().arg("--config").arg(&cfg).arg("gap-report").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().args(["--config", "/nonexistent/cfg.toml", "gap-report"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unwritable_output_exits_one() {
    let dir = scratch_dir("unwritable");
    std::fs::create_dir_all(&dir).unwrap();
    let file = dir.join("plain-file");
    std::fs::write(&file, "x").unwrap();
    let out = bin().arg("--out").arg(file.join("sub")).arg("gap-report").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gap_report_prints_and_writes() {
    let dir = scratch_dir("gap");
    let out = bin().arg("--out").arg(&dir).arg("gap-report").output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("MHz"), "{text}");
    assert!(dir.join("gap-report.csv").exists());
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("gap-report.meta.json")).unwrap()).unwrap();
    assert!(meta["settings"]["config"]["system"]["coupling_mhz"].is_number());
}

#[test]
fn slow_lz_sweep_reaches_expected_infidelity() {
    let dir = scratch_dir("lz");
    let out = bin()
        .arg("--out")
        .arg(&dir)
        .args(["sweep-compare", "--sweep", "lz", "--tf-us", "10"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(dir.join("sweep-compare.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "infidelity").unwrap();
    let rows: Vec<_> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 1);
    let infid: f64 = rows[0][col].parse().unwrap();
    assert!((infid - 1e-3).abs() < 0.5e-3, "infidelity {infid}");
}

#[test]
fn robustness_is_reproducible_for_fixed_seed() {
    let run = |tag: &str, workers: &str| {
        let dir = scratch_dir(tag);
        let out = bin()
            .arg("--out")
            .arg(&dir)
            .args(["--seed", "42", "--workers", workers, "robustness", "--n-eps", "4", "--tf-ns", "200"])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        (
            std::fs::read(dir.join("robustness.csv")).unwrap(),
            std::fs::read(dir.join("robustness_samples.csv")).unwrap(),
        )
    };
    let a = run("rob-a", "1");
    let b = run("rob-b", "2");
    assert_eq!(a, b);
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let cfg = ecd_sim_cli::RunConfig::from_toml("[system]\ncoupling_mhz = 40.0\n[run]\nseed = 7\n").unwrap();
    let text = cfg.to_toml();
    let dir = scratch_dir("cfg");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    let cli = <ecd_sim_cli::Cli as clap::Parser>::try_parse_from([
        "ecd-sim",
        "--config",
        path.to_str().unwrap(),
        "--seed",
        "9",
        "gap-report",
    ])
    .unwrap();
    let eff = ecd_sim_cli::effective_config(&cli).unwrap();
    assert_eq!(eff.system.coupling_mhz, 40.0);
    assert_eq!(eff.run.seed, 9);
}

#[test]
fn example_config_parses() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/ecd-sim.example.toml");
    let text = std::fs::read_to_string(path).unwrap();
    ecd_sim_cli::RunConfig::from_toml(&text).unwrap();
}

#[test]
fn all_rows_failing_exits_two() {
    let dir = scratch_dir("allfail");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("strict.toml");
    std::fs::write(&cfg, "[integrator]\nlocal_tolerance = 1e-300\n").unwrap();
    let out = bin()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(["sweep-compare", "--sweep", "lz", "--tf-ns", "100"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    // the failed row is still written
    let text = std::fs::read_to_string(dir.join("out/sweep-compare.csv")).unwrap();
    assert!(text.contains("underflow"), "{text}");
}
