use std::fs;
use std::path::Path;
use std::process::Command;

const CONFIG: &str = "
[experiment]
name = cli-smoke
n_arrays = 30
seed = 5
mission_hours = 30000

[disk]
model = diskB

[policy]
hep = 0.01, 0.1
";

fn raidsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_raidsim"))
}

fn run_config(dir: &Path, out: &str, threads: &str) -> std::process::Output {
    raidsim()
        .args(["--threads", threads, "run"])
        .arg(dir.join("c.ini"))
        .arg("--out")
        .arg(dir.join(out))
        .output()
        .unwrap()
}

#[test]
fn results_are_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.ini"), CONFIG).unwrap();
    let a = run_config(dir.path(), "a", "1");
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = run_config(dir.path(), "b", "3");
    assert!(b.status.success());
    for f in ["results.csv", "incidents.csv", "timeseries.csv"] {
        let x = fs::read(dir.path().join("a").join(f)).unwrap();
        let y = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
    let results = fs::read_to_string(dir.path().join("a/results.csv")).unwrap();
    assert!(results.starts_with("experiment,disk,code,hep,dos,spare,n_arrays,mission_hours,seed,nomdu,nomdu_err,nomdl,nomdl_err,adl,sdl,adu,sdu,ddf_compat,tdf_compat\n"));
    assert_eq!(results.lines().count(), 3);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.ini"), "[policy]\nhep = 7\n").unwrap();
    let out = run_config(dir.path(), "o", "1");
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hep"));
    let missing = raidsim().args(["run", "/nonexistent/x.ini"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));
    let suite = raidsim().args(["suite", "no-such-suite"]).output().unwrap();
    assert_eq!(suite.status.code(), Some(1));
    let flag = raidsim().args(["--confidence", "80", "suites"]).output().unwrap();
    assert_eq!(flag.status.code(), Some(1));
}

#[test]
fn unwritable_output_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.ini"), CONFIG).unwrap();
    fs::write(dir.path().join("blocker"), "").unwrap();
    let out = run_config(dir.path(), "blocker/sub", "1");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn env_var_sets_default_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.ini"), CONFIG).unwrap();
    let target = dir.path().join("from-env");
    let out = raidsim().arg("run").arg(dir.path().join("c.ini")).env("RAIDSIM_OUT_DIR", &target).output().unwrap();
    assert!(out.status.success());
    assert!(target.join("results.csv").exists() && target.join("summary.txt").exists());
}

#[test]
fn suite_runs_and_lists() {
    let list = raidsim().arg("suites").output().unwrap();
    assert!(String::from_utf8_lossy(&list.stdout).lines().any(|l| l == "validate-elerath-raid5"));
    let dir = tempfile::tempdir().unwrap();
    let out = raidsim()
        .args(["suite", "validate-elerath-raid5", "--seed", "2", "--confidence", "99", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let results = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 5);
}
