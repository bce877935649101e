#![allow(dead_code)]

use std::path::PathBuf;

use tdisc::config::{PriorConfig, ProblemConfig, Resolved};
use tdisc::expr;
use tdisc::{ComparisonProblem, Design, Family, Interval, Model, ParamSpace};

pub fn example(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

pub fn load(name: &str) -> (ProblemConfig, Resolved) {
    let cfg = ProblemConfig::load(&example(name)).unwrap();
    let r = cfg.resolve().unwrap();
    (cfg, r)
}

/// The dose-response Bayesian problem with the given prior exponent sign.
pub fn dose_bayes(sign: f64) -> Resolved {
    let (mut cfg, _) = load("dose_bayes_sigma33.cfg");
    for m in &mut cfg.models {
        if let Some(PriorConfig::Factorial { exponent_sign, .. }) = &mut m.prior {
            *exponent_sign = sign;
        }
    }
    cfg.resolve().unwrap()
}

/// Fixed model x² (one scale parameter) against straight lines on [−1, 1].
pub fn square_vs_linear() -> ComparisonProblem {
    let square = expr::to_model(
        "square",
        expr::parse("t1*x^2").unwrap(),
        ParamSpace::new(vec![0.0], vec![2.0]).unwrap(),
    )
    .unwrap();
    let line = Model::builtin("line", Family::Linear, ParamSpace::new(vec![-10.0; 2], vec![10.0; 2]).unwrap())
        .unwrap();
    ComparisonProblem::new(
        vec![square, line],
        vec![Some(vec![1.0]), None],
        vec![vec![0.0, 1.0], vec![0.0, 0.0]],
        Interval::new(-1.0, 1.0).unwrap(),
    )
    .unwrap()
}

pub fn assert_close(label: &str, got: &[f64], want: &[f64], tol: f64) -> bool {
    got.len() == want.len() && got.iter().zip(want).all(|(a, b)| (a - b).abs() <= tol) || {
        eprintln!("{label}: got {got:?}, want {want:?} ± {tol}");
        false
    }
}

pub fn report(n: u32, pass: bool, detail: &str) {
    println!("criterion {n:>2}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

pub fn uniform(points: &[f64]) -> Design {
    Design::uniform(points.to_vec()).unwrap()
}
