//! Inner problems: weighted nonlinear least squares of a candidate model
//! against fixed target values, over the candidate's parameter box.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::Model;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Stop when an accepted step changes the objective by at most this relative amount.
    pub rel_tol: f64,
    /// Stop when the projected gradient infinity-norm falls below this.
    pub grad_tol: f64,
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Relative (to box width) distance at which a coordinate counts as on the boundary.
    pub boundary_tol: f64,
    /// Two minima within this relative objective distance ...
    pub tie_rel_sse: f64,
    /// ... but further apart than this fraction of the box width are reported as ambiguous.
    pub tie_rel_separation: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            rel_tol: 1e-12,
            grad_tol: 1e-10,
            lambda0: 1e-3,
            lambda_up: 10.0,
            lambda_down: 0.3,
            boundary_tol: 1e-9,
            tie_rel_sse: 1e-6,
            tie_rel_separation: 1e-3,
        }
    }
}

/// Outcome of an inner fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta_hat: Vec<f64>,
    /// `Σ ω_k (target_k − η(x_k, θ̂))²`
    pub sse: f64,
    pub converged: bool,
    /// Infinity norm of the projected objective gradient at `theta_hat`.
    pub grad_norm: f64,
    pub on_boundary: bool,
    pub starts_used: usize,
    /// Another start reached an (almost) equal objective at a clearly different point.
    pub ambiguous: bool,
}

/// Objective value at `theta`.
pub fn sse(target: &[f64], points: &[f64], weights: &[f64], model: &Model, theta: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for ((t, x), w) in target.iter().zip(points).zip(weights) {
        if *w == 0.0 {
            continue;
        }
        let r = t - model.eval(*x, theta)?;
        s += w * r * r;
    }
    Ok(s)
}

/// Gradient of the objective, `−2 Σ ω_k r_k ∂η/∂θ`.
pub fn objective_gradient(
    target: &[f64],
    points: &[f64],
    weights: &[f64],
    model: &Model,
    theta: &[f64],
) -> Result<Vec<f64>> {
    let d = model.dim();
    let mut g = vec![0.0; d];
    let mut row = vec![0.0; d];
    for ((t, x), w) in target.iter().zip(points).zip(weights) {
        if *w == 0.0 {
            continue;
        }
        let r = t - model.eval(*x, theta)?;
        model.grad_into(*x, theta, &mut row)?;
        for k in 0..d {
            g[k] -= 2.0 * w * r * row[k];
        }
    }
    Ok(g)
}

/// Warm start first, then the box centre, then shifted Halton points.
pub fn default_starts(model: &Model, previous: Option<&[f64]>, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let count = count.max(1);
    let space = model.param_space();
    let mut starts = Vec::with_capacity(count);
    if let Some(p) = previous {
        let mut p = p.to_vec();
        space.clamp(&mut p);
        starts.push(p);
    }
    if starts.len() < count {
        starts.push(space.center());
    }
    let d = space.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
    let mut index = 1u64;
    while starts.len() < count {
        let theta = (0..d)
            .map(|k| {
                let u = (halton(index, PRIMES[k % PRIMES.len()]) + shift[k]).fract();
                space.lower()[k] + u * space.width(k)
            })
            .collect();
        starts.push(theta);
        index += 1;
    }
    starts
}

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

fn halton(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

fn check_inputs(target: &[f64], points: &[f64], weights: &[f64], model: &Model, starts: &[Vec<f64>]) -> Result<()> {
    let n = points.len();
    if n == 0 || target.len() != n || weights.len() != n {
        return Err(Error::InvalidArgument(format!(
            "fit needs equal non-zero lengths (target {}, points {}, weights {})",
            target.len(),
            n,
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidArgument("fit weights must be nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("fit weights sum to {total}, not 1")));
    }
    if starts.is_empty() {
        return Err(Error::InvalidArgument("fit needs at least one start".into()));
    }
    for s in starts {
        if !model.param_space().contains(s) {
            return Err(Error::InvalidArgument(format!(
                "start {s:?} is outside the parameter box of `{}`",
                model.name()
            )));
        }
    }
    Ok(())
}

/// Best local minimum of the weighted objective over all starts.
pub fn fit(
    target: &[f64],
    points: &[f64],
    weights: &[f64],
    model: &Model,
    starts: &[Vec<f64>],
    opts: &FitOptions,
) -> Result<FitResult> {
    check_inputs(target, points, weights, model, starts)?;
    let problem = Problem { target, points, weights, model, opts };

    if let Some(theta) = model.exact_fit(points, weights, target) {
        if model.param_space().contains(&theta) {
            let mut res = problem.summarize(theta, true)?;
            res.starts_used = 0;
            return Ok(res);
        }
    }

    let mut runs: Vec<FitResult> = Vec::with_capacity(starts.len());
    for start in starts {
        runs.push(problem.descend(start.clone())?);
    }
    let best_idx = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.sse.total_cmp(&b.1.sse))
        .map(|(i, _)| i)
        .unwrap();
    let space = model.param_space();
    let best = &runs[best_idx];
    let ambiguous = runs.iter().enumerate().any(|(i, r)| {
        i != best_idx
            && (r.sse - best.sse).abs() <= opts.tie_rel_sse * best.sse.max(f64::MIN_POSITIVE)
            && r.theta_hat
                .iter()
                .zip(&best.theta_hat)
                .enumerate()
                .any(|(k, (a, b))| (a - b).abs() > opts.tie_rel_separation * space.width(k))
    });
    let mut out = runs.swap_remove(best_idx);
    out.starts_used = starts.len();
    out.ambiguous = ambiguous;
    Ok(out)
}

struct Problem<'a> {
    target: &'a [f64],
    points: &'a [f64],
    weights: &'a [f64],
    model: &'a Model,
    opts: &'a FitOptions,
}

impl Problem<'_> {
    fn objective(&self, theta: &[f64]) -> Result<f64> {
        sse(self.target, self.points, self.weights, self.model, theta)
    }

    /// Normal-equation pieces `(JᵀΩJ, JᵀΩr)` at `theta`.
    fn normal_equations(&self, theta: &[f64]) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let d = self.model.dim();
        let mut a = DMatrix::<f64>::zeros(d, d);
        let mut g = DVector::<f64>::zeros(d);
        let mut row = vec![0.0; d];
        for ((t, x), w) in self.target.iter().zip(self.points).zip(self.weights) {
            if *w == 0.0 {
                continue;
            }
            let r = t - self.model.eval(*x, theta)?;
            self.model.grad_into(*x, theta, &mut row)?;
            for i in 0..d {
                g[i] += w * r * row[i];
                for j in 0..=i {
                    a[(i, j)] += w * row[i] * row[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                a[(j, i)] = a[(i, j)];
            }
        }
        Ok((a, g))
    }

    /// Coordinates pinned at a bound with the descent direction pointing outward.
    fn pinned(&self, theta: &[f64], descent: &DVector<f64>) -> Vec<bool> {
        let space = self.model.param_space();
        (0..theta.len())
            .map(|k| {
                let tol = self.opts.boundary_tol * space.width(k);
                (theta[k] - space.lower()[k] <= tol && descent[k] < 0.0)
                    || (space.upper()[k] - theta[k] <= tol && descent[k] > 0.0)
            })
            .collect()
    }

    fn projected_grad_norm(&self, theta: &[f64], descent: &DVector<f64>) -> f64 {
        let pinned = self.pinned(theta, descent);
        descent
            .iter()
            .zip(&pinned)
            .filter(|(_, p)| !**p)
            .map(|(g, _)| 2.0 * g.abs())
            .fold(0.0, f64::max)
    }

    fn on_boundary(&self, theta: &[f64]) -> bool {
        let space = self.model.param_space();
        theta.iter().enumerate().any(|(k, t)| {
            let tol = self.opts.boundary_tol * space.width(k);
            t - space.lower()[k] <= tol || space.upper()[k] - t <= tol
        })
    }

    fn summarize(&self, theta: Vec<f64>, converged: bool) -> Result<FitResult> {
        let f = self.objective(&theta)?;
        let (_, g) = self.normal_equations(&theta)?;
        let grad_norm = self.projected_grad_norm(&theta, &g);
        Ok(FitResult {
            on_boundary: self.on_boundary(&theta),
            theta_hat: theta,
            sse: f,
            converged,
            grad_norm,
            starts_used: 1,
            ambiguous: false,
        })
    }

    /// Box-projected Levenberg–Marquardt descent from one start.
    fn descend(&self, mut theta: Vec<f64>) -> Result<FitResult> {
        let space = self.model.param_space();
        let d = theta.len();
        let mut f = self.objective(&theta)?;
        let mut lambda = self.opts.lambda0;
        let mut converged = false;

        'outer: for _ in 0..self.opts.max_iter {
            if f == 0.0 {
                converged = true;
                break;
            }
            let (a, g) = self.normal_equations(&theta)?;
            if self.projected_grad_norm(&theta, &g) <= self.opts.grad_tol {
                converged = true;
                break;
            }
            let pinned = self.pinned(&theta, &g);
            let free: Vec<usize> = (0..d).filter(|k| !pinned[*k]).collect();
            if free.is_empty() {
                converged = true;
                break;
            }
            let nf = free.len();
            let diag_max = free.iter().map(|&k| a[(k, k)]).fold(0.0, f64::max);
            let floor = 1e-12 * diag_max.max(f64::MIN_POSITIVE);
            loop {
                let mut m = DMatrix::<f64>::zeros(nf, nf);
                let mut rhs = DVector::<f64>::zeros(nf);
                for (i, &ki) in free.iter().enumerate() {
                    rhs[i] = g[ki];
                    for (j, &kj) in free.iter().enumerate() {
                        m[(i, j)] = a[(ki, kj)];
                    }
                    m[(i, i)] += lambda * (a[(ki, ki)] + floor);
                }
                let accepted = match linalg::solve_spd(&m, &rhs) {
                    Some(step) if step.iter().all(|s| s.is_finite()) => {
                        let mut cand = theta.clone();
                        for (i, &k) in free.iter().enumerate() {
                            cand[k] += step[i];
                        }
                        space.clamp(&mut cand);
                        match self.objective(&cand) {
                            Ok(fc) if fc < f => Some((cand, fc)),
                            Ok(_) => None,
                            Err(Error::NumericDomain(_)) => None,
                            Err(e) => return Err(e),
                        }
                    }
                    _ => None,
                };
                match accepted {
                    Some((cand, fc)) => {
                        let rel = (f - fc) / f;
                        theta = cand;
                        f = fc;
                        lambda = (lambda * self.opts.lambda_down).max(1e-15);
                        if rel <= self.opts.rel_tol {
                            converged = true;
                            break 'outer;
                        }
                        break;
                    }
                    None => {
                        lambda *= self.opts.lambda_up;
                        if lambda > 1e20 {
                            // no descent step exists at working precision
                            converged = true;
                            break 'outer;
                        }
                    }
                }
            }
        }
        self.summarize(theta, converged)
    }
}
