//! End-to-end checks of the run pipeline: deterministic file output, the
//! command-line surface with its exit codes, and tabulated initial profiles.

use std::fs;
use std::path::Path;
use std::process::Command;

use crossfv::scenario::{parse_config, preset, run_scenario, RunOptions};

fn write_small_config(dir: &Path, out: &Path) -> std::path::PathBuf {
    let path = dir.join("small.cfg");
    fs::write(
        &path,
        format!(
            r#"
# small deterministic run
[scenario]
name = small
n_cells = 16
dt_init = 1e-3
t_end = 0.05
x0 = 0.51
snapshot_times = 0.0 0.05
output_dir = {}

[model]
species = 3
kappa_s = 0 0.2 1  0.2 0 0.1  1 0.1 0
kappa_g = 0 0.2 1  0.2 0 0.1  1 0.1 0
beta_star = 0.16666666666666666 4 4
"#,
            out.display()
        ),
    )
    .unwrap();
    path
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let cfg = write_small_config(dir.path(), out);
        let mut scenario = parse_config(&cfg).unwrap();
        scenario.output_dir = out.clone();
        run_scenario(&scenario, &RunOptions::default()).unwrap();
    }
    for file in ["timeseries.csv", "snapshot_t0.csv", "snapshot_t0.05.csv"] {
        let a = fs::read(out_a.join(file)).unwrap();
        let b = fs::read(out_b.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
        assert!(!a.is_empty());
    }
}

#[test]
fn tabulated_profile_runs() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("profile.csv");
    fs::write(&table, "x,c_1,c_2,c_3\n0,0.5,0.3,0.2\n0.5,0.2,0.4,0.4\n1,0.1,0.2,0.7\n").unwrap();
    let mut scenario = preset("equilibrium").unwrap();
    scenario.profile = crossfv::scenario::InitialProfile::Tabulated(table);
    scenario.n_cells = 16;
    scenario.t_end = 0.01;
    scenario.snapshot_times = vec![];
    let report = run_scenario(&scenario, &RunOptions { no_files: true, ..Default::default() }).unwrap();
    assert!(report.breaches.is_empty(), "{:?}", report.breaches);
    assert!(report.summary.max_volume_filling <= 1e-10);
}

#[test]
fn shipped_configs_match_builtin_presets() {
    let config_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for name in ["trivial", "equilibrium", "non_equilibrium", "equilibrium_nonmonotone", "converge"]
    {
        let from_file = parse_config(&config_dir.join(format!("{name}.cfg"))).unwrap();
        let builtin = preset(name).unwrap();
        assert_eq!(from_file.name, builtin.name);
        assert_eq!(from_file.n_cells, builtin.n_cells);
        assert_eq!(from_file.dt_init, builtin.dt_init);
        assert_eq!(from_file.t_end, builtin.t_end);
        assert_eq!(from_file.x0, builtin.x0);
        assert_eq!(from_file.snapshot_times, builtin.snapshot_times);
        let pa = from_file.params().unwrap();
        let pb = builtin.params().unwrap();
        assert_eq!(pa.beta_star(), pb.beta_star(), "{name}: interface ratios differ");
        assert_eq!(from_file.kappa_s, builtin.kappa_s);
        assert_eq!(from_file.kappa_g, builtin.kappa_g);
    }
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crossfv"))
}

#[test]
fn cli_reports_config_errors_with_exit_code_2() {
    let output = cli().args(["run", "no_such_preset_or_file"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("config error"), "{stderr}");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "[scenario]\nx_zero = 0.5\n").unwrap();
    let output = cli().args(["run", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("bad.cfg:2"), "error should cite the line: {stderr}");
}

#[test]
fn cli_stationary_subcommand_prints_classification() {
    let output = cli().args(["stationary", "equilibrium"]).output().unwrap();
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("two-phase stationary state"), "{stdout}");
    assert!(stdout.contains("X = 0.8166666"), "{stdout}");

    let output = cli().args(["stationary", "non_equilibrium"]).output().unwrap();
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("only the pure states"), "{stdout}");
}

#[test]
fn cli_run_writes_outputs_and_strict_mode_passes_on_presets() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_small_config(dir.path(), &out);
    let output = cli()
        .args([
            "run",
            cfg.to_str().unwrap(),
            "--strict-invariants",
            "--out",
            out.to_str().unwrap(),
            "--snapshot-times",
            "0.0,0.02",
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", String::from_utf8_lossy(&output.stderr));
    assert!(out.join("timeseries.csv").exists());
    assert!(out.join("snapshot_t0.csv").exists());
    assert!(out.join("snapshot_t0.02.csv").exists());
    // CLI override replaced the configured snapshot list
    assert!(!out.join("snapshot_t0.05.csv").exists());
}
