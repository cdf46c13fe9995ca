use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kslab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kslab"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn config(dir: &Path, name: &str, text: &str) -> String {
    fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

#[test]
fn exponents_exit_status_follows_admissibility() {
    let dir = tempfile::tempdir().unwrap();
    let ok = config(
        dir.path(),
        "ok.cfg",
        "model.n = 3\nmodel.m = 1\nmodel.q = 1\n",
    );
    let out = kslab(&["exponents", "--config", &ok], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("critical_alpha=6\n"));
    assert!(text.contains("lower_bound_alpha=2\n"));
    assert!(text.contains("admissible_ks=true\n"));

    let bad = config(
        dir.path(),
        "bad.cfg",
        "model.n = 3\nmodel.m = 1\nmodel.q = 0.5\n",
    );
    let out = kslab(&["exponents", "--config", &bad], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains("admissible_ks=false\n"));
}

#[test]
fn error_classes_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let dup = config(dir.path(), "dup.cfg", "model.n = 3\nmodel.n = 3\n");
    let out = kslab(&["simulate", "--config", &dup], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("line 2"));

    let low = config(
        dir.path(),
        "low.cfg",
        "model.n = 3\nmodel.m = 1\nmodel.q = 1\nanalysis.alpha = 3\n",
    );
    let out = kslab(&["simulate", "--config", &low], dir.path());
    assert_eq!(out.status.code(), Some(3));

    let stuck = config(
        dir.path(),
        "stuck.cfg",
        "model.n = 3\nmodel.m = 2\nmodel.q = 1\ngrid.N = 32\nsolver.max_steps = 5\n",
    );
    let out = kslab(
        &["simulate", "--config", &stuck, "--out", "stuck"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(4));
    assert!(dir.path().join("stuck/report.txt").exists());

    let out = kslab(&["exponents", "--config", "missing.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(5));

    let wrong_mode = config(
        dir.path(),
        "sweep.cfg",
        "model.n = 3\nmodel.m = 2\nmodel.q = 1\nmode = sweep\n",
    );
    let out = kslab(&["simulate", "--config", &wrong_mode], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn sweep_prints_rows_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "sweep.cfg",
        "model.n = 3\nmodel.m = 2\nmodel.q = 1\nmode = sweep\ngrid.N = 32\nsolver.t_end = 0.01\nsweep.mass = 0.5,3\nsweep.width = 0.2,0.3\n",
    );
    let out = kslab(
        &["sweep", "--config", &cfg, "--out", "s", "--jobs", "2"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    for (i, line) in lines[1..].iter().enumerate() {
        assert!(line.starts_with(&format!("{i},")));
        assert!(line.contains(",Completed,"));
    }
    assert_eq!(
        fs::read_to_string(dir.path().join("s/sweep.csv")).unwrap(),
        text
    );
}

#[test]
fn twin_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "twin.cfg",
        "model.n = 3\nmodel.m = 2\nmodel.q = 1\nmode = twin\ngrid.N = 64\nsolver.t_end = 0.1\n",
    );
    let out = kslab(&["twin", "--config", &cfg, "--out", "t"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report = fs::read_to_string(dir.path().join("t/report.txt")).unwrap();
    assert!(report.contains("twin.rate="));
    assert!(report.contains("twin.halving_min="));
}
