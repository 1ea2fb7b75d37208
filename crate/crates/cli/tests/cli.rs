use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn labflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_labflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn toml_field<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no `{key}` in:\n{text}"))
        .trim_matches('"')
}

#[test]
fn run_writes_artifacts_and_reruns_identically() {
    let out = tempfile::tempdir().unwrap();
    let cfg = scenario("rpa.cfg");
    let args = [
        "--scenario",
        cfg.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "run",
    ];
    let first = labflow(&args);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let dir = PathBuf::from(toml_field(&stdout(&first), "out_dir"));
    for f in ["trace.csv", "utilization.csv", "manifest.toml", "outcomes.csv"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let trace = std::fs::read(dir.join("trace.csv")).unwrap();
    assert!(labflow(&args).status.success());
    assert_eq!(std::fs::read(dir.join("trace.csv")).unwrap(), trace);
    let outcomes = std::fs::read_to_string(dir.join("outcomes.csv")).unwrap();
    assert!(outcomes.contains("rpa-1,rpa_basic,,true,true"));
    assert!(outcomes.contains("rpa-2,rpa_basic,,false,false"));
}

#[test]
fn policy_and_seed_flags_reach_the_run_id() {
    let out = tempfile::tempdir().unwrap();
    let cfg = scenario("multiuser.cfg");
    let o = labflow(&[
        "--scenario",
        cfg.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--policy",
        "serial",
        "--seed",
        "99",
        "run",
    ]);
    assert!(o.status.success());
    let id = toml_field(&stdout(&o), "run_id").to_string();
    assert!(id.starts_with("multiuser-serial_queue-s99-"), "{id}");
}

#[test]
fn compare_reports_speedup_on_stdout() {
    let cfg = scenario("synth_fanout.cfg");
    let o = labflow(&["--scenario", cfg.to_str().unwrap(), "compare"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let speedup: f64 = toml_field(&text, "speedup").parse().unwrap();
    assert!(speedup >= 3.0, "{text}");
}

#[test]
fn single_request_compare_has_no_saving() {
    let dir = tempfile::tempdir().unwrap();
    let src = std::fs::read_to_string(scenario("optimize.cfg")).unwrap();
    let scenarios = scenario("");
    let cfg = src
        .replace("mode = \"optimize\"", "mode = \"batch\"")
        .replace(
            "\"standard.reg\"",
            &format!("\"{}\"", scenarios.join("standard.reg").display()),
        )
        .replace(
            "\"templates.kb\"",
            &format!("\"{}\"", scenarios.join("templates.kb").display()),
        )
        .replace(
            "\"standard.inv\"",
            &format!("\"{}\"", scenarios.join("standard.inv").display()),
        )
        .replace("task = \"enzymatic_synthesis\"", "task = \"rpa_test\"")
        .replace("objective = [\"yield>=0.98\", \"min time\"]", "");
    let path = dir.path().join("single.cfg");
    std::fs::write(&path, cfg).unwrap();
    let o = labflow(&["--scenario", path.to_str().unwrap(), "compare"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(toml_field(&text, "delta_min"), "0.0");
    assert_eq!(toml_field(&text, "speedup"), "1.0");
}

#[test]
fn store_write_then_read_recovers_the_file() {
    let out = tempfile::tempdir().unwrap();
    let payload = out.path().join("note.txt");
    std::fs::write(&payload, b"short payload for a storage roundtrip test").unwrap();
    let cfg = scenario("storage.cfg");
    let common = [
        "--scenario",
        cfg.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ];
    let w = labflow(&[&common[..], &["store", "write", payload.to_str().unwrap()]].concat());
    assert!(w.status.success(), "{}", String::from_utf8_lossy(&w.stderr));
    let id = toml_field(&stdout(&w), "run_id").to_string();
    let r = labflow(&[&common[..], &["store", "read", &id]].concat());
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let recovered = PathBuf::from(stdout(&r).trim());
    assert_eq!(std::fs::read(recovered).unwrap(), std::fs::read(&payload).unwrap());
}

#[test]
fn lint_flags_missing_transfer() {
    let cfg = scenario("rpa.cfg");
    let clean = labflow(&["--scenario", cfg.to_str().unwrap(), "lint", "--task", "rpa_test"]);
    assert!(clean.status.success());
    assert!(stdout(&clean).contains("mechanical.cap"));
    let broken = labflow(&[
        "--scenario",
        cfg.to_str().unwrap(),
        "lint",
        "--task",
        "rpa_test",
        "--drop-step",
        "0",
    ]);
    assert_eq!(broken.status.code(), Some(1));
    assert_eq!(stdout(&broken).matches("error [transfer-before-activate]").count(), 2);
}

#[test]
fn registry_check_reports_consistent_index() {
    let reg = scenario("storage.reg");
    let o = labflow(&["registry", "check", reg.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(toml_field(&text, "instruments"), "25");
    assert_eq!(toml_field(&text, "tag_index_consistent"), "true");
}

#[test]
fn config_errors_exit_nonzero_with_stderr_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    std::fs::write(
        &path,
        "name = \"bad\"\nregistry = \"missing.reg\"\ntemplates = \"t\"\ninventory = \"i\"\n",
    )
    .unwrap();
    let o = labflow(&["--scenario", path.to_str().unwrap(), "run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.reg"));
}

#[test]
fn unknown_task_names_the_request() {
    let dir = tempfile::tempdir().unwrap();
    let scenarios = scenario("");
    let cfg = format!(
        "name = \"x\"\nregistry = \"{0}/standard.reg\"\ntemplates = \"{0}/templates.kb\"\ninventory = \"{0}/standard.inv\"\n\n[[request]]\nid = \"q7\"\ntask = \"teleport\"\n",
        scenarios.display()
    );
    let path = dir.path().join("x.cfg");
    std::fs::write(&path, cfg).unwrap();
    let o = labflow(&["--scenario", path.to_str().unwrap(), "run"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("q7"));
}
