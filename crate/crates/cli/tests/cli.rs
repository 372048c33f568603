//! Drives the `chartgaze` binary end to end and checks its exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn chartgaze(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_chartgaze"));
    cmd.args(args).env_remove("CHARTGAZE_ENDPOINT_URL").env_remove("CHARTGAZE_ENDPOINT_TOKEN");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.cfg");
    let text = format!(
        "schema_version = 1\nseed = 4\ncharts = 3\nppo_total_steps = 256\nppo_rollout_len = 128\nppo_minibatch_size = 64\nout = {}\n{extra}",
        dir.join("out").display()
    );
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn full_run_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("out");

    let o = chartgaze(&["gen", "--config", &cfg, "--jobs", "2"], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("3 charts and 9 tasks"));
    assert!(out.join("corpus/manifest.json").exists());

    let o = chartgaze(&["train", "--config", &cfg], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("policies/train_log.csv").exists());

    let o = chartgaze(&["predict", "--config", &cfg], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let preds = out.join("predictions.jsonl");
    assert_eq!(std::fs::read_to_string(&preds).unwrap().lines().count(), 9 * 4);

    let p = preds.display().to_string();
    let o = chartgaze(&["eval", "--config", &cfg, "--reference", &p], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("task,method,"));
    assert!(out.join("report.csv").exists() && out.join("report.json").exists());

    let o = chartgaze(&["overlay", "--config", &cfg], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_dir(out.join("overlays")).unwrap().count(), 36);

    // an empty scanpath file is not an error and draws nothing
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = chartgaze(&["overlay", "--config", &cfg, "--scanpaths", &empty.display().to_string()], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("wrote 0 overlays"));

    // external mode with nothing listening: a service failure
    let o = chartgaze(
        &["predict", "--config", &cfg, "--mode", "external"],
        &[("CHARTGAZE_ENDPOINT_URL", "http://127.0.0.1:9/complete")],
    );
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    // ...unless configured to fall back on the rule-based controller
    let lenient = write_config(dir.path(), "fallback_on_service_error = true\nendpoint_timeout_ms = 500\n");
    let o = chartgaze(
        &["predict", "--config", &lenient, "--mode", "external"],
        &[("CHARTGAZE_ENDPOINT_URL", "http://127.0.0.1:9/complete")],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn exit_codes_for_bad_input() {
    let dir = tempfile::tempdir().unwrap();

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "schema_version = 1\ncharts = lots\n").unwrap();
    let o = chartgaze(&["gen", "--config", &bad.display().to_string()], &[]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let o = chartgaze(&["gen", "--mode", "telepathy"], &[]);
    assert_eq!(code(&o), 1);

    let o = chartgaze(&["gen", "--config", &dir.path().join("absent.cfg").display().to_string()], &[]);
    assert_eq!(code(&o), 2);

    let cfg = write_config(dir.path(), "");
    let o = chartgaze(&["predict", "--config", &cfg], &[]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));

    // external mode without an endpoint configured
    let o = chartgaze(&["predict", "--config", &cfg, "--mode", "external"], &[]);
    assert_eq!(code(&o), 1);

    let o = chartgaze(&["eval", "--config", &cfg], &[]);
    assert_eq!(code(&o), 1, "missing --reference is a usage error");
    let o = chartgaze(&["--help"], &[]);
    assert_eq!(code(&o), 0);
}
