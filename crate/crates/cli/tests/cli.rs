use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn energy_vi(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_energy-vi"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn study_writes_one_row_per_level() {
    let dir = tempfile::tempdir().unwrap();
    let out = energy_vi(
        &["study", "--problem", "distributed:4", "--levels", "1..4", "--solver", "ipm", "--out", "out"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("out/table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "level,dofs,err_u,order_u,err_y_l2,order_y_l2,err_y_h1,order_y_h1");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("1,9,"));
}

#[test]
fn solve_dumps_fields_in_working_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = energy_vi(
        &["solve", "--problem", "gradient:1", "--level", "5", "--solver", "ssn", "--dump-fields"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let state = fs::read_to_string(dir.path().join("state.csv")).unwrap();
    assert!(state.starts_with("x,y,value\n"));
    assert_eq!(state.lines().count(), 1 + 65 * 65);
    assert!(dir.path().join("control.csv").exists());
}

#[test]
fn obstacle_bounds_dumped_state() {
    let dir = tempfile::tempdir().unwrap();
    let out = energy_vi(
        &["solve", "--problem", "distributed:4", "--level", "6", "--solver", "ipm", "--dump-fields"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let state = fs::read_to_string(dir.path().join("state.csv")).unwrap();
    let max = state
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(max <= 0.1 + 1e-8, "{max}");
}

#[test]
fn verify_reports_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let out = energy_vi(&["verify", "--problem", "distributed:2", "--level", "0"], dir.path());
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("agreement: ok"));
    let out = energy_vi(&["verify", "--problem", "neumann:1"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let out = energy_vi(&["verify", "--problem", "dirichlet:1", "--tol", "1e-10"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let out = energy_vi(&["verify", "--problem", "gradient:1", "--level", "3"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = energy_vi(&["solve", "--problem", "nope:7", "--level", "1"], dir.path());
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("distributed:2") && err.contains("gradient:1"), "{err}");

    for args in [
        &["solve", "--problem", "distributed:1"][..],
        &["study", "--problem", "distributed:1", "--levels", "4..2"],
        &["study", "--problem", "distributed:1", "--levels", "2..3", "--ref", "3"],
        &["solve", "--problem", "distributed:1", "--level", "1", "--tol", "0"],
        &["solve", "--problem", "distributed:1", "--level", "1", "--solver", "ssn"],
        &["solve", "--problem", "distributed:1", "--level", "1", "--solver", "cg"],
    ] {
        assert_eq!(code(&energy_vi(args, dir.path())), 2, "{args:?}");
    }
}

#[test]
fn non_convergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = energy_vi(
        &["solve", "--problem", "dirichlet:2", "--level", "3", "--max-iter", "100"],
        dir.path(),
    );
    assert_eq!(code(&out), 3);
}

#[test]
fn residual_history_has_one_row_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let out = energy_vi(
        &["solve", "--problem", "distributed:2", "--level", "2", "--residual-history"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let iterations: usize = stdout
        .lines()
        .find_map(|l| l.trim().strip_prefix("iterations"))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    let history = fs::read_to_string(dir.path().join("residual_history.csv")).unwrap();
    assert!(history.starts_with("iteration,residual\n"));
    assert!(history.lines().count() > 1);
    assert!(history.lines().count() - 1 >= iterations);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = energy_vi(
            &["study", "--problem", "neumann:1", "--levels", "0..2", "--out", name, "--dump-fields"],
            dir.path(),
        );
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    };
    run("a");
    run("b");
    for f in ["table.csv", "state.csv", "control.csv"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}
