use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn tdisc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tdisc")).args(args).output().expect("run tdisc")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn read_design(path: &Path) -> Vec<(f64, f64)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let (x, w) = l.split_once(',').unwrap();
            (x.parse().unwrap(), w.parse().unwrap())
        })
        .collect()
}

fn read_curve(path: &Path) -> Vec<(f64, f64)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with('x'))
        .map(|l| {
            let (x, v) = l.split_once(',').unwrap();
            (x.parse().unwrap(), v.parse().unwrap())
        })
        .collect()
}

fn value_after(text: &str, key: &str) -> f64 {
    let line = text.lines().find(|l| l.starts_with(key)).unwrap_or_else(|| panic!("no `{key}` in\n{text}"));
    line[key.len()..].split_whitespace().next().unwrap().parse().unwrap()
}

#[test]
fn solve_exp_local_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = tdisc(&["solve", "--config", example("exp_local.cfg").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for f in ["design.csv", "trace.csv", "psi.csv", "report.txt"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let d = read_design(&dir.path().join("design.csv"));
    assert_eq!(d.len(), 4);
    assert!((d.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(stdout(&out).contains("status: converged"));
}

#[test]
fn solve_dose_bayes_gives_four_points() {
    let dir = tempfile::tempdir().unwrap();
    let out = tdisc(&[
        "solve",
        "--config",
        example("dose_bayes_sigma33.cfg").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("comparisons: 246"));
    let d = read_design(&dir.path().join("design.csv"));
    let xs: Vec<f64> = d.iter().map(|p| p.0).collect();
    assert_eq!(xs.len(), 4, "{xs:?}");
    assert!((xs[1] - 92.692).abs() < 0.5 && (xs[2] - 222.735).abs() < 1.0, "{xs:?}");
}

#[test]
fn identical_models_exit_invalid_start() {
    let dir = tempfile::tempdir().unwrap();
    let out = tdisc(&[
        "solve",
        "--config",
        example("identical_models.cfg").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("#0 `line_a` vs `line_b`"), "{}", stderr(&out));
}

#[test]
fn check_published_local_dose_design_passes() {
    let dir = tempfile::tempdir().unwrap();
    let design = write(
        dir.path(),
        "d.csv",
        "x,weight\n0.000,0.255\n78.783,0.213\n241.036,0.357\n500.0,0.175\n",
    );
    let out = tdisc(&["check", "--config", example("dose_local.cfg").to_str().unwrap(), "--design", design.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("result: pass"));
}

#[test]
fn check_uniform_three_points_is_not_optimal() {
    let dir = tempfile::tempdir().unwrap();
    let design = write(dir.path(), "d.csv", "x,weight\n-1,0.3333333333333333\n0,0.3333333333333333\n1,0.3333333333333334\n");
    let out = tdisc(&["check", "--config", example("quad_vs_linear.cfg").to_str().unwrap(), "--design", design.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stdout(&out));
    let s = stdout(&out);
    // T = 2/9 and max Psi = 4/9, attained at x = 0
    let gap = value_after(&s, "gap ratio max Psi / T_P = ");
    assert!((gap - 2.0).abs() < 1e-6, "{gap}");
    assert!(s.contains("result: fail"));
}

#[test]
fn check_rejects_weights_not_summing_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let design = write(dir.path(), "d.csv", "x,weight\n-1,0.3\n0,0.3\n1,0.3\n");
    let out = tdisc(&["check", "--config", example("quad_vs_linear.cfg").to_str().unwrap(), "--design", design.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("d.csv"), "{}", stderr(&out));
}

#[test]
fn curve_row_count_follows_grid_points() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = std::fs::read_to_string(example("quad_vs_linear.cfg")).unwrap();
    let cfg = write(dir.path(), "q.cfg", &format!("{cfg}\n[solver]\ngrid_points = 3\n"));
    let design = write(dir.path(), "d.csv", "x,weight\n-1,0.25\n0,0.5\n1,0.25\n");
    let psi = dir.path().join("psi.csv");
    let out = tdisc(&[
        "curve",
        "--config",
        cfg.to_str().unwrap(),
        "--design",
        design.to_str().unwrap(),
        "--out",
        psi.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rows = read_curve(&psi);
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![-1.0, 0.0, 1.0]);
}

#[test]
fn curve_of_optimal_design_peaks_on_support() {
    let dir = tempfile::tempdir().unwrap();
    let design = write(dir.path(), "d.csv", "x,weight\n-1,0.25\n0,0.5\n1,0.25\n");
    let psi = dir.path().join("psi.csv");
    let out = tdisc(&[
        "curve",
        "--config",
        example("quad_vs_linear.cfg").to_str().unwrap(),
        "--design",
        design.to_str().unwrap(),
        "--out",
        psi.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(&psi).unwrap();
    let t: f64 = text.lines().next().unwrap().trim_start_matches("# t_value=").parse().unwrap();
    assert!((t - 0.25).abs() < 1e-9, "{t}");
    let rows = read_curve(&psi);
    let max = rows.iter().map(|r| r.1).fold(f64::MIN, f64::max);
    assert!((max - t).abs() < 1e-9 * t.max(1.0));
    for x in [-1.0, 0.0, 1.0] {
        let (_, v) = rows.iter().copied().find(|r| (r.0 - x).abs() < 1e-12).unwrap();
        assert!((v - max).abs() < 1e-9, "Psi({x}) = {v}");
    }
}

#[test]
fn curve_unwritable_output_fails() {
    let dir = tempfile::tempdir().unwrap();
    let design = write(dir.path(), "d.csv", "x,weight\n-1,0.25\n0,0.5\n1,0.25\n");
    let psi = dir.path().join("missing").join("psi.csv");
    let out = tdisc(&[
        "curve",
        "--config",
        example("quad_vs_linear.cfg").to_str().unwrap(),
        "--design",
        design.to_str().unwrap(),
        "--out",
        psi.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("cannot write"));
}

#[test]
fn echoed_configuration_reproduces_report() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let out = tdisc(&["solve", "--config", example("quad_vs_linear.cfg").to_str().unwrap(), "--out", a.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report = std::fs::read_to_string(a.join("report.txt")).unwrap();
    let echo = report.split_once("effective configuration:\n").unwrap().1;
    let cfg = write(dir.path(), "echo.cfg", echo);
    let b = dir.path().join("b");
    let out = tdisc(&["solve", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(report, std::fs::read_to_string(b.join("report.txt")).unwrap());
}

#[test]
fn config_parse_error_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.cfg", "design_space = [0.0, 1.0]\n\n[[models]]\nname = \"a\"\nbuiltin = \"linear\"\nbogus = 3\n");
    let out = tdisc(&["solve", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("bad.cfg") && err.contains("line 6"), "{err}");
}

#[test]
fn threads_must_be_positive() {
    let out = tdisc(&["--threads", "0", "check", "--config", "x", "--design", "y"]);
    assert_eq!(out.status.code(), Some(1));
}
