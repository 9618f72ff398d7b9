use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use agentprefs::config::Config;

fn agentprefs(args: &[&str], run_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agentprefs"))
        .args(args)
        .arg("--run-dir")
        .arg(run_dir)
        .env_remove("AGENTPREFS_GRID__LABELED_SIZE")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_lists_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let out = agentprefs(&["--help"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in [
        "train-agent",
        "collect",
        "search",
        "evaluate",
        "grid",
        "bootstrap",
        "report",
        "run-all",
    ] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn invalid_configuration_exits_two_with_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[env]\ngrid_width = 7\nr_apple = -1\n");
    let out = agentprefs(&["--config", &cfg, "run-all"], &dir.path().join("run"));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));

    let cfg = write_config(dir.path(), "[env]\nwidth = 7\n");
    let out = agentprefs(&["--config", &cfg, "collect"], &dir.path().join("run"));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn smoke_flag_conflicts_with_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = agentprefs(&["--smoke", "--config", &cfg, "report"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn environment_override_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_agentprefs"))
        .args(["report", "--run-dir"])
        .arg(dir.path())
        .env("AGENTPREFS_ENV__R_APPLE", "-3")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("r_apple"), "{}", stderr(&out));
}

#[test]
fn unknown_flag_value_and_missing_cell_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = agentprefs(&["train-agent", "--variant", "sideways"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    // the autoencoder row only exists for the penalized variant
    let out = agentprefs(
        &[
            "search",
            "--input",
            "autoencoder",
            "--variant",
            "no-penalty",
            "--method",
            "nn",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("not a cell"), "{}", stderr(&out));
}

#[test]
fn run_all_is_reproducible_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let mut smoke = Config::smoke();
    smoke.pipeline.bootstrap_probe = false;
    smoke.pipeline.null_grid = false;
    let cfg = write_config(dir.path(), &smoke.to_toml().unwrap());
    let a = dir.path().join("a");
    let b = dir.path().join("b");

    let first = agentprefs(&["--config", &cfg, "--master-seed", "11", "run-all"], &a);
    assert!(first.status.success(), "{}", stderr(&first));
    assert!(String::from_utf8_lossy(&first.stdout).contains("Activations"));
    let other = agentprefs(
        &[
            "--config",
            &cfg,
            "--master-seed",
            "11",
            "--workers",
            "2",
            "run-all",
        ],
        &b,
    );
    assert!(other.status.success(), "{}", stderr(&other));
    assert_eq!(
        fs::read(a.join("results.csv")).unwrap(),
        fs::read(b.join("results.csv")).unwrap()
    );

    let again = agentprefs(&["--config", &cfg, "--master-seed", "11", "run-all"], &a);
    assert!(again.status.success());
    assert!(!stderr(&again).contains("running"), "{}", stderr(&again));

    let eval = agentprefs(&["--config", &cfg, "--master-seed", "11", "evaluate"], &a);
    assert!(eval.status.success(), "{}", stderr(&eval));
    assert!(String::from_utf8_lossy(&eval.stdout).contains("fence_immediately"));

    let search = agentprefs(
        &[
            "--config",
            &cfg,
            "--master-seed",
            "11",
            "search",
            "--input",
            "q-values",
            "--variant",
            "penalized",
            "--method",
            "single",
        ],
        &a,
    );
    assert!(search.status.success(), "{}", stderr(&search));
    assert!(a
        .join("searches/q_values-penalized-single/results.csv")
        .exists());

    // a stage failure exits 3
    let missing = agentprefs(
        &[
            "--config",
            &cfg,
            "--master-seed",
            "11",
            "evaluate",
            "--agent",
            "nobody",
        ],
        &a,
    );
    assert_eq!(missing.status.code(), Some(3), "{}", stderr(&missing));
}
