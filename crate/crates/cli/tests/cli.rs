use std::path::Path;
use std::process::{Command, Output};

use sdeepc::sarsa::{save_table, uniform_actions, QTable, RLState, TunerConfig};

fn sdeepc(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdeepc"))
        .args(args)
        .env("SDEEPC_OUT", out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn lists_bundled_specs() {
    let dir = tempfile::tempdir().unwrap();
    let s = stdout(&sdeepc(&["specs"], dir.path()));
    for name in ["second_order_gaussian", "second_order_baseline", "spring"] {
        assert!(s.lines().any(|l| l == name), "{name} missing from {s}");
    }
}

#[test]
fn checked_in_schema_is_current() {
    let dir = tempfile::tempdir().unwrap();
    let s = stdout(&sdeepc(&["schema"], dir.path()));
    let file =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../SCHEMA.md"))
            .unwrap();
    assert_eq!(s, file, "regenerate with `sdeepc schema > SCHEMA.md`");
}

#[test]
fn collect_writes_under_env_root() {
    let dir = tempfile::tempdir().unwrap();
    let o = sdeepc(&["--spec", "second_order_gaussian", "collect"], dir.path());
    stdout(&o);
    let run = dir.path().join("second_order_gaussian");
    let traj = std::fs::read_to_string(run.join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,u1,u2,y1,y2\n"));
    assert_eq!(traj.lines().count(), 601);
    for f in ["up.csv", "uf.csv", "yp.csv", "yf.csv", "blocks.json"] {
        assert!(run.join("blocks").join(f).is_file(), "{f}");
    }
}

#[test]
fn out_flag_overrides_env() {
    let env_root = tempfile::tempdir().unwrap();
    let flag_root = tempfile::tempdir().unwrap();
    let o = sdeepc(
        &[
            "--spec",
            "second_order_gaussian",
            "--out",
            flag_root.path().to_str().unwrap(),
            "collect",
        ],
        env_root.path(),
    );
    stdout(&o);
    assert!(flag_root
        .path()
        .join("second_order_gaussian/trajectory.csv")
        .is_file());
    assert!(!env_root.path().join("second_order_gaussian").exists());
}

#[test]
fn fixed_lambda_run_is_reproducible_and_seedable() {
    let dir = tempfile::tempdir().unwrap();
    let a = stdout(&sdeepc(
        &["--spec", "second_order_baseline", "run"],
        dir.path(),
    ));
    let log_a = std::fs::read(dir.path().join("second_order_baseline/log.csv")).unwrap();
    let b = stdout(&sdeepc(
        &["--spec", "second_order_baseline", "run"],
        dir.path(),
    ));
    assert_eq!(a, b);
    assert_eq!(
        log_a,
        std::fs::read(dir.path().join("second_order_baseline/log.csv")).unwrap()
    );
    let summary: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(summary["method"], "fixed_lambda_0.03");
    let c = stdout(&sdeepc(
        &["--spec", "second_order_baseline", "--seed", "99", "run"],
        dir.path(),
    ));
    let summary: serde_json::Value = serde_json::from_str(&c).unwrap();
    assert_eq!(summary["seed"], 99);
    assert_ne!(a, c);
}

#[test]
fn inspects_a_saved_table() {
    let dir = tempfile::tempdir().unwrap();
    let tuner = TunerConfig::new(uniform_actions(0.01, 4), 1.0, 1.0);
    let mut q = QTable::zeros(tuner.dims()).unwrap();
    let s = RLState {
        energy_raw: 0.0,
        rmse_raw: 0.0,
        energy_bin: 3,
        rmse_bin: 5,
    };
    q.set(&s, 0, -0.5);
    q.set(&s, 2, -0.1);
    let path = dir.path().join("q.bin");
    save_table(&path, &q, &tuner).unwrap();
    let out = stdout(&sdeepc(
        &["qtable", "inspect", path.to_str().unwrap()],
        dir.path(),
    ));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["nonzero_entries"], 2);
    assert_eq!(v["visited_states"], 1);
    assert_eq!(
        v["greedy_histogram"][0]["lambda_g"].as_f64(),
        Some(tuner.actions[2])
    );
    assert_eq!(v["greedy_histogram"][0]["states"], 1);
}

#[test]
fn reports_errors_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let o = sdeepc(&["run"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--spec is required"));
    let o = sdeepc(&["--spec", "no_such_spec", "run"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = sdeepc(&["--spec", "second_order_baseline", "sweep"], dir.path());
    assert!(String::from_utf8_lossy(&o.stderr).contains("not a sweep spec"));
    let o = sdeepc(
        &[
            "--spec",
            "second_order_baseline",
            "--spec",
            "second_order_baseline",
            "compare",
            "--name",
            "../x",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, b"nope").unwrap();
    let o = sdeepc(&["qtable", "inspect", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
}
