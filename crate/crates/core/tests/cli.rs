use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rasa(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rasa"))
        .current_dir(dir)
        .env_remove("RASA_LLM_API_KEY")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = rasa(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const SMALL: &str = r#"
[paths]
manifest = "out/manifest.toml"
out = "out"
checkpoints = "out"
[synth]
n_cases = 40
[train]
epochs = 2
"#;

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    ok(dir.path(), &["--config", "run.toml", "synth"]);
    dir
}

#[test]
fn synth_and_train_are_byte_reproducible() {
    let a = workspace();
    let b = workspace();
    for dir in [&a, &b] {
        ok(dir.path(), &["--config", "run.toml", "--trial", "1", "train"]);
    }
    for file in ["manifest.toml", "teacher-trial1.rasc", "teacher-trial1.log.jsonl"] {
        let x = fs::read(a.path().join("out").join(file)).unwrap();
        let y = fs::read(b.path().join("out").join(file)).unwrap();
        assert_eq!(x, y, "{file} differs between identical runs");
    }
}

#[test]
fn seed_override_changes_output() {
    let a = workspace();
    let dir = a.path();
    let base = fs::read(dir.join("out/manifest.toml")).unwrap();
    ok(dir, &["--config", "run.toml", "--seed", "9", "--manifest", "out9/manifest.toml", "synth"]);
    assert_ne!(base, fs::read(dir.join("out9/manifest.toml")).unwrap());
}

#[test]
fn student_without_teacher_is_a_usage_error() {
    let a = workspace();
    let out = rasa(a.path(), &["--config", "run.toml", "--stage", "student", "train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--teacher"));
}

#[test]
fn evaluate_needs_all_trial_checkpoints() {
    let a = workspace();
    ok(a.path(), &["--config", "run.toml", "train"]);
    let out = rasa(a.path(), &["--config", "run.toml", "evaluate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("teacher-trial1.rasc"));
}

#[test]
fn config_problems_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[train]\ngamma = 3.0\nmystery = 1\n").unwrap();
    let out = rasa(dir.path(), &["--config", "bad.toml", "synth"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.mystery"));
    assert_eq!(rasa(dir.path(), &["--no-such-flag"]).status.code(), Some(2));
    assert_eq!(rasa(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_manifest_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = rasa(dir.path(), &["--manifest", "nowhere/manifest.toml", "train"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn checkpoint_from_another_architecture_is_rejected() {
    let a = workspace();
    let dir = a.path();
    ok(dir, &["--config", "run.toml", "train"]);
    fs::write(dir.join("wide.toml"), format!("{SMALL}[train.model]\nd_model = 64\n")).unwrap();
    let out = rasa(dir, &["--config", "wide.toml", "km"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("d_model"));
}

#[test]
fn km_and_simmap_write_artifacts() {
    let a = workspace();
    let dir = a.path();
    ok(dir, &["--config", "run.toml", "train"]);
    ok(dir, &["--config", "run.toml", "km"]);
    for ext in ["svg", "csv", "json"] {
        assert!(dir.join(format!("out/km-teacher-trial0.{ext}")).exists());
    }
    let out = ok(dir, &["--config", "run.toml", "simmap", "--case", "case-003", "--gammas", "\u{2212}1,0.5"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("case-003"));
    let csv = fs::read_to_string(dir.join("out/simmap-case-003.csv")).unwrap();
    assert!(csv.starts_with("case_id,patch,x,y,similarity,"));
    let unknown = rasa(dir, &["--config", "run.toml", "simmap", "--case", "nope"]);
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn clean_reports_uses_the_cache_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::create_dir(d.join("reports")).unwrap();
    fs::write(d.join("reports/r1.txt"), "Sections show tumor glands. Margins clear.\n").unwrap();
    fs::write(d.join("reports/r2.txt"), "Benign mucosa.\n").unwrap();
    let args = ["--out", "o", "clean-reports", "--input", "reports", "--cache", "c"];
    let first = ok(d, &args);
    assert!(String::from_utf8_lossy(&first.stdout).contains("0 cache hits"));
    let cleaned = fs::read(d.join("o/cleaned/r1.txt")).unwrap();
    let second = ok(d, &args);
    assert!(String::from_utf8_lossy(&second.stdout).contains("2 cache hits"));
    assert_eq!(cleaned, fs::read(d.join("o/cleaned/r1.txt")).unwrap());
    let live = rasa(d, &["--out", "o", "clean-reports", "--input", "reports", "--provider", "live"]);
    assert_eq!(live.status.code(), Some(2));
}
