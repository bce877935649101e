//! Weight optimisation on a fixed support.
//!
//! Around weights `ω̄` with inner optima `θ̂`, linearising each candidate model
//! in `θ` gives
//!
//! ```text
//! φ(ω, ω̄) = −ωᵀQω + bᵀω,   Q = Σ p R M⁻¹ Rᵀ,   b = Σ p r²,
//! ```
//!
//! with `r` the residuals at the support, `J` the candidate Jacobian,
//! `R = diag(r) J` and `M = JᵀΩ̄J`. Since `Rᵀω̄ = 0` at an inner optimum,
//! `φ(ω̄, ω̄) = T_P(ω̄)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::criterion::{self, ComparisonProblem, CriterionEval, InnerOptions};
use crate::design::Design;
use crate::error::{Error, Result};
use crate::linalg;

const RIDGE_REL: f64 = 1e-10;

/// Quadratic model `−ωᵀQω + bᵀω` of the criterion around a design.
#[derive(Debug, Clone, PartialEq)]
pub struct QpData {
    pub q: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl QpData {
    pub fn objective(&self, w: &[f64]) -> f64 {
        let w = DVector::from_column_slice(w);
        -(w.transpose() * &self.q * &w)[(0, 0)] + self.b.dot(&w)
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let w = DVector::from_column_slice(w);
        (&self.b - 2.0 * &self.q * &w).iter().copied().collect()
    }
}

/// Builds the linearised quadratic model at `eval` (its design supplies the
/// support and `ω̄`, its fits the inner optima).
pub fn build_qp(p: &ComparisonProblem, eval: &CriterionEval) -> Result<QpData> {
    let design = &eval.design;
    let n = design.len();
    let points = design.points();
    let omega = design.weights();
    let parts: Vec<(DMatrix<f64>, DVector<f64>)> = p
        .comparisons()
        .par_iter()
        .enumerate()
        .map(|(c, comp)| {
            let model = &p.models()[comp.candidate];
            let theta = &eval.fits[c].theta_hat;
            let d = model.dim();
            let mut jac = DMatrix::<f64>::zeros(n, d);
            let mut r = DVector::<f64>::zeros(n);
            let mut g = vec![0.0; d];
            for (k, &x) in points.iter().enumerate() {
                model.grad_into(x, theta, &mut g)?;
                for (a, ga) in g.iter().enumerate() {
                    jac[(k, a)] = *ga;
                }
                r[k] = p.residual(c, theta, x)?;
            }
            let mut jw = jac.clone();
            for k in 0..n {
                jw.row_mut(k).scale_mut(omega[k]);
            }
            let m = jac.transpose() * jw;
            let minv = linalg::ridge_inverse(&m, RIDGE_REL);
            let mut rm = jac;
            for k in 0..n {
                rm.row_mut(k).scale_mut(r[k]);
            }
            let qc = &rm * minv * rm.transpose();
            let bc = r.map(|v| v * v);
            Ok((qc * comp.weight, bc * comp.weight))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut q = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for (qc, bc) in parts {
        q += qc;
        b += bc;
    }
    let q = 0.5 * (&q + q.transpose());
    Ok(QpData { q, b })
}

/// Maximises `−ωᵀQω + bᵀω` over the simplex by pairwise mass exchange
/// starting at `start` (uniform when `None`). `Q` must be positive semidefinite.
pub fn solve_simplex_qp(qp: &QpData, start: Option<&[f64]>) -> Result<Vec<f64>> {
    let n = qp.b.len();
    if qp.q.nrows() != n || qp.q.ncols() != n || n == 0 {
        return Err(Error::InvalidArgument("QP dimensions do not match".into()));
    }
    let mut w: Vec<f64> = match start {
        Some(s) => {
            if s.len() != n {
                return Err(Error::InvalidArgument("QP start has the wrong length".into()));
            }
            let total: f64 = s.iter().map(|v| v.max(0.0)).sum();
            if !(total > 0.0) {
                return Err(Error::InvalidArgument("QP start has no positive weight".into()));
            }
            s.iter().map(|v| v.max(0.0) / total).collect()
        }
        None => vec![1.0 / n as f64; n],
    };
    let q = &qp.q;
    let mut g = qp.gradient(&w);
    let scale = 1.0 + qp.b.amax() + q.amax();
    for _ in 0..100_000 {
        let mut up = 0;
        let mut dn = usize::MAX;
        for k in 0..n {
            if g[k] > g[up] {
                up = k;
            }
            if w[k] > 0.0 && (dn == usize::MAX || g[k] < g[dn]) {
                dn = k;
            }
        }
        if up == dn || g[up] - g[dn] <= 1e-13 * scale {
            break;
        }
        let kappa = q[(up, up)] + q[(dn, dn)] - 2.0 * q[(up, dn)];
        let t = if kappa > 0.0 { ((g[up] - g[dn]) / (2.0 * kappa)).min(w[dn]) } else { w[dn] };
        if t <= 0.0 {
            break;
        }
        if t >= w[dn] {
            w[up] += w[dn];
            w[dn] = 0.0;
        } else {
            w[up] += t;
            w[dn] -= t;
        }
        for (k, gk) in g.iter_mut().enumerate() {
            *gk -= 2.0 * t * (q[(k, up)] - q[(k, dn)]);
        }
    }
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// How the weights on a fixed support are optimised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMethod {
    Qp,
    Gradient,
}

impl std::str::FromStr for WeightMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qp" => Ok(Self::Qp),
            "gradient" => Ok(Self::Gradient),
            _ => Err(Error::Config(format!("unknown weight method `{s}` (expected `qp` or `gradient`)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightOptions {
    pub method: WeightMethod,
    /// Linearise/solve rounds for the QP method.
    pub max_rounds: usize,
    /// Exchange steps for the gradient method.
    pub gradient_max_iters: usize,
    /// Gradient method stops when `max Ψ − min Ψ` over the support is at most `tol·T_P`.
    pub gradient_tol: f64,
    /// QP rounds stop once no weight moves by more than this.
    pub weight_change_tol: f64,
}

impl Default for WeightOptions {
    fn default() -> Self {
        Self {
            method: WeightMethod::Qp,
            max_rounds: 5,
            gradient_max_iters: 200,
            gradient_tol: 1e-6,
            weight_change_tol: 1e-10,
        }
    }
}

/// Result of a weight optimisation.
#[derive(Debug, Clone)]
pub struct WeightOutcome {
    pub eval: CriterionEval,
    pub rounds: usize,
    pub evaluations: usize,
}

pub fn optimize_weights(
    p: &ComparisonProblem,
    start: &CriterionEval,
    opts: &WeightOptions,
    inner: &InnerOptions,
) -> Result<WeightOutcome> {
    match opts.method {
        WeightMethod::Qp => optimize_weights_qp(p, start, opts.max_rounds, opts.weight_change_tol, inner),
        WeightMethod::Gradient => {
            optimize_weights_gradient(p, start, opts.gradient_max_iters, opts.gradient_tol, inner)
        }
    }
}

fn evaluate(p: &ComparisonProblem, base: &Design, w: &[f64], warm: &CriterionEval, inner: &InnerOptions) -> Result<CriterionEval> {
    let d = base.with_weights(w.to_vec())?;
    criterion::t_value_with(p, &d, Some(warm), inner)
}

/// Repeated linearise-and-solve. A round's weights are kept only if `T_P` does
/// not decrease; otherwise the step is halved up to ten times.
pub fn optimize_weights_qp(
    p: &ComparisonProblem,
    start: &CriterionEval,
    max_rounds: usize,
    change_tol: f64,
    inner: &InnerOptions,
) -> Result<WeightOutcome> {
    let mut cur = start.clone();
    let mut evaluations = 0;
    let mut rounds = 0;
    while rounds < max_rounds {
        rounds += 1;
        let qp = build_qp(p, &cur)?;
        let prev = cur.design.weights().to_vec();
        let mut w = solve_simplex_qp(&qp, Some(&prev))?;
        let mut accepted = None;
        for _ in 0..=10 {
            let e = evaluate(p, &cur.design, &w, &cur, inner)?;
            evaluations += 1;
            if e.value >= cur.value {
                accepted = Some(e);
                break;
            }
            w = w.iter().zip(&prev).map(|(a, b)| 0.5 * (a + b)).collect();
        }
        let Some(e) = accepted else { break };
        let change = e.design.weights().iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        cur = e;
        if change <= change_tol {
            break;
        }
    }
    Ok(WeightOutcome { eval: cur, rounds, evaluations })
}

fn support_psi(p: &ComparisonProblem, e: &CriterionEval) -> Result<Vec<f64>> {
    e.design.points().iter().map(|&x| criterion::psi(p, e, x)).collect()
}

/// Exchange method: moves mass from the positive-weight support point with the
/// smallest `Ψ` to the point with the largest, with a line search on the step.
pub fn optimize_weights_gradient(
    p: &ComparisonProblem,
    start: &CriterionEval,
    max_iters: usize,
    tol: f64,
    inner: &InnerOptions,
) -> Result<WeightOutcome> {
    let mut cur = start.clone();
    let mut evaluations = 0;
    let mut rounds = 0;
    while rounds < max_iters {
        let v = support_psi(p, &cur)?;
        let w0 = cur.design.weights().to_vec();
        let hi = (0..v.len()).fold(0, |a, k| if v[k] > v[a] { k } else { a });
        let Some(lo) = (0..v.len()).filter(|&k| w0[k] > 0.0).reduce(|a, k| if v[k] < v[a] { k } else { a }) else {
            break;
        };
        let spread = v[hi] - v[lo];
        if hi == lo || spread <= tol * cur.value {
            break;
        }
        rounds += 1;
        let cap = w0[lo];
        let at = |alpha: f64| -> Vec<f64> {
            let mut w = w0.clone();
            w[hi] += alpha;
            w[lo] = (w[lo] - alpha).max(0.0);
            w
        };

        let qp = build_qp(p, &cur)?;
        let c = qp.q[(hi, hi)] + qp.q[(lo, lo)] - 2.0 * qp.q[(hi, lo)];
        let alpha_q = if c > 0.0 { (spread / (2.0 * c)).min(cap) } else { cap };
        let mut best: Option<CriterionEval> = None;
        let e = evaluate(p, &cur.design, &at(alpha_q), &cur, inner)?;
        evaluations += 1;
        if e.value > cur.value {
            best = Some(e);
        } else {
            let (mut a, mut b) = (0.0, cap);
            let inv_phi = 0.618_033_988_749_894_8;
            let mut x1 = b - inv_phi * (b - a);
            let mut x2 = a + inv_phi * (b - a);
            let mut e1 = evaluate(p, &cur.design, &at(x1), &cur, inner)?;
            let mut e2 = evaluate(p, &cur.design, &at(x2), &cur, inner)?;
            evaluations += 2;
            let mut used = 2;
            while used < 30 && b - a > 1e-12 * cap {
                if e1.value >= e2.value {
                    b = x2;
                    x2 = x1;
                    e2 = e1;
                    x1 = b - inv_phi * (b - a);
                    e1 = evaluate(p, &cur.design, &at(x1), &cur, inner)?;
                } else {
                    a = x1;
                    x1 = x2;
                    e1 = e2;
                    x2 = a + inv_phi * (b - a);
                    e2 = evaluate(p, &cur.design, &at(x2), &cur, inner)?;
                }
                used += 1;
                evaluations += 1;
            }
            let cand = if e1.value >= e2.value { e1 } else { e2 };
            if cand.value > cur.value {
                best = Some(cand);
            }
        }
        match best {
            Some(e) => cur = e,
            None => break,
        }
    }
    Ok(WeightOutcome { eval: cur, rounds, evaluations })
}
