use std::path::Path;
use std::process::{Command, Output};

/// Runs in a scratch directory so the default output location stays out of the tree.
fn cpomdp(args: &[&str]) -> Output {
    let cwd = tempfile::tempdir().unwrap();
    Command::new(env!("CARGO_BIN_EXE_cpomdp"))
        .args(args)
        .current_dir(cwd.path())
        .env_remove("CPOMDP_MODEL")
        .env_remove("CPOMDP_OUT")
        .output()
        .expect("spawn cpomdp")
}

fn out_dir(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn missing_model_file_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cpomdp(&["--model", "/no/such/model.json", "--out", &out_dir(tmp.path()), "validate"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));
}

#[test]
fn unknown_builtin_is_an_input_error() {
    let o = cpomdp(&["--model", "builtin:nope", "validate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fixture_round_trips_through_validate() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cpomdp(&["fixture", "--name", "default"]);
    assert!(o.status.success());
    let model = tmp.path().join("model.json");
    std::fs::write(&model, &o.stdout).unwrap();
    let v = cpomdp(&["--model", &out_dir(&model), "validate"]);
    assert!(v.status.success(), "{}", String::from_utf8_lossy(&v.stderr));
}

#[test]
fn solve_outputs_pass_schema_check() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = cpomdp(&["--model", "builtin:default", "--out", &out_dir(&out), "--log-level", "warn", "solve", "--resolution", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sol = out.join("solution.json");
    assert!(sol.exists());
    let c = cpomdp(&["schema-check", &out_dir(&sol)]);
    assert!(c.status.success(), "{}", String::from_utf8_lossy(&c.stderr));
}

#[test]
fn schema_check_rejects_foreign_json() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"schema": "something-else", "x": 1}"#).unwrap();
    let c = cpomdp(&["schema-check", &out_dir(&bad)]);
    assert!(!c.status.success());
}

#[test]
fn conflicting_grid_flags_are_rejected() {
    let o = cpomdp(&["--model", "builtin:default", "grid", "--resolution", "3", "--resolutions", "3,2", "--thresholds", "0.5,0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn weights_take_a_comma_separated_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(&tmp.path().join("w"));
    let ok = cpomdp(&["--model", "builtin:default", "--out", &out, "--log-level", "warn", "solve", "--resolution", "2", "--weights", "0.9,0.1"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let bad = cpomdp(&["--model", "builtin:default", "--out", &out, "solve", "--resolution", "2", "--weights", "0.9"]);
    assert_eq!(bad.status.code(), Some(2));
}
