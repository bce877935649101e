//! The discrimination criterion `T_P`, the sensitivity function `Ψ`, the
//! Bayesian-to-local expansion and the equivalence-theorem check.

use rayon::prelude::*;

use crate::design::{Design, Interval};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nls::{self, FitOptions, FitResult};

/// Discrete prior on a model's parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePrior {
    atoms: Vec<(Vec<f64>, f64)>,
}

impl DiscretePrior {
    /// Atoms `(λ, τ)`; masses must be positive and sum to one within 1e-12.
    pub fn new(atoms: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidArgument("prior has no atoms".into()));
        }
        let d = atoms[0].0.len();
        if atoms.iter().any(|(l, _)| l.len() != d) {
            return Err(Error::InvalidArgument("prior atoms have unequal dimensions".into()));
        }
        if atoms.iter().any(|(_, t)| !(*t > 0.0) || !t.is_finite()) {
            return Err(Error::InvalidArgument("prior masses must be positive".into()));
        }
        let total: f64 = atoms.iter().map(|(_, t)| t).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("prior masses sum to {total}, not 1")));
        }
        Ok(Self { atoms })
    }

    /// Normalises positive masses before validating.
    pub fn normalized(atoms: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        let total: f64 = atoms.iter().map(|(_, t)| t).sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidArgument("prior masses must be positive".into()));
        }
        Self::new(atoms.into_iter().map(|(l, t)| (l, t / total)).collect())
    }

    /// Product of independent univariate grids on the coordinates `coords`
    /// (zero-based): `center_c + σ(i − m)/2`, `i = 1..levels`, `m` the middle
    /// level, masses proportional to `exp(−(i − m)²/8)`. Other coordinates
    /// stay at `center`. The first listed coordinate varies slowest.
    pub fn product_grid(center: &[f64], coords: &[usize], sigma: f64, levels: usize) -> Result<Self> {
        if levels == 0 || levels % 2 == 0 {
            return Err(Error::InvalidArgument(format!("grid levels must be odd, got {levels}")));
        }
        check_coords(center, coords)?;
        let mid = (levels as f64 + 1.0) / 2.0;
        let offsets: Vec<(f64, f64)> = (1..=levels)
            .map(|i| {
                let e = i as f64 - mid;
                (sigma * e / 2.0, (-(e * e) / 8.0).exp())
            })
            .collect();
        let mut atoms = vec![(center.to_vec(), 1.0)];
        for &c in coords {
            atoms = atoms
                .into_iter()
                .flat_map(|(lambda, tau)| {
                    offsets.iter().map(move |(off, w)| {
                        let mut l = lambda.clone();
                        l[c] += off;
                        (l, tau * w)
                    })
                })
                .collect();
        }
        Self::normalized(atoms)
    }

    /// Full `{−1, 0, 1}` factorial `center + e·σ` on `coords`, masses
    /// proportional to `exp(sign · ‖λ − center‖² / (2σ²))`.
    pub fn factorial(center: &[f64], coords: &[usize], sigma: f64, exponent_sign: f64) -> Result<Self> {
        check_coords(center, coords)?;
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("factorial prior needs sigma > 0, got {sigma}")));
        }
        if exponent_sign != 1.0 && exponent_sign != -1.0 {
            return Err(Error::InvalidArgument(format!(
                "exponent sign must be +1 or -1, got {exponent_sign}"
            )));
        }
        let mut atoms = vec![center.to_vec()];
        for &c in coords {
            atoms = atoms
                .into_iter()
                .flat_map(|lambda| {
                    [-1.0, 0.0, 1.0].into_iter().map(move |e| {
                        let mut l = lambda.clone();
                        l[c] += e * sigma;
                        l
                    })
                })
                .collect();
        }
        let weighted = atoms
            .into_iter()
            .map(|l| {
                let d2: f64 = l.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                let tau = (exponent_sign * d2 / (2.0 * sigma * sigma)).exp();
                (l, tau)
            })
            .collect();
        Self::normalized(weighted)
    }

    pub fn atoms(&self) -> &[(Vec<f64>, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

fn check_coords(center: &[f64], coords: &[usize]) -> Result<()> {
    if coords.is_empty() {
        return Err(Error::InvalidArgument("prior grid needs at least one coordinate".into()));
    }
    if let Some(c) = coords.iter().find(|c| **c >= center.len()) {
        return Err(Error::InvalidArgument(format!(
            "prior coordinate {} exceeds parameter dimension {}",
            c + 1,
            center.len()
        )));
    }
    Ok(())
}

/// Nominal parameter information for one model.
#[derive(Debug, Clone, PartialEq)]
pub enum NominalParams {
    /// Only used as a candidate (column) model.
    None,
    Fixed(Vec<f64>),
    Prior(DiscretePrior),
}

/// One active entry `p_{i,j} > 0` of the comparison table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub fixed: usize,
    pub candidate: usize,
    pub weight: f64,
}

/// Models, nominal values, comparison table and design space.
#[derive(Debug, Clone)]
pub struct ComparisonProblem {
    models: Vec<Model>,
    fixed_params: Vec<Option<Vec<f64>>>,
    table: Vec<Vec<f64>>,
    space: Interval,
    comparisons: Vec<Comparison>,
}

impl ComparisonProblem {
    pub fn new(
        models: Vec<Model>,
        fixed_params: Vec<Option<Vec<f64>>>,
        table: Vec<Vec<f64>>,
        space: Interval,
    ) -> Result<Self> {
        let nu = models.len();
        if nu == 0 {
            return Err(Error::InvalidArgument("problem has no models".into()));
        }
        if fixed_params.len() != nu {
            return Err(Error::InvalidArgument(format!(
                "{} nominal parameter entries for {nu} models",
                fixed_params.len()
            )));
        }
        if table.len() != nu || table.iter().any(|row| row.len() != nu) {
            return Err(Error::InvalidArgument(format!("comparison table must be {nu}×{nu}")));
        }
        let mut comparisons = Vec::new();
        for (i, row) in table.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                if !p.is_finite() || p < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "comparison weight p[{}][{}] = {p} must be finite and nonnegative",
                        i + 1,
                        j + 1
                    )));
                }
                if i == j || p == 0.0 {
                    continue;
                }
                let theta = fixed_params[i].as_ref().ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "model `{}` is compared as the fixed model but has no nominal parameters",
                        models[i].name()
                    ))
                })?;
                if !models[i].param_space().contains(theta) {
                    return Err(Error::InvalidArgument(format!(
                        "nominal parameters {theta:?} of `{}` lie outside its parameter box",
                        models[i].name()
                    )));
                }
                comparisons.push(Comparison { fixed: i, candidate: j, weight: p });
            }
        }
        if comparisons.is_empty() {
            return Err(Error::InvalidArgument("comparison table has no positive off-diagonal entry".into()));
        }
        Ok(Self { models, fixed_params, table, space, comparisons })
    }

    pub fn models(&self) -> &[Model] {
        &self.models
    }

    pub fn fixed_params(&self, i: usize) -> Option<&[f64]> {
        self.fixed_params[i].as_deref()
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.table
    }

    pub fn space(&self) -> Interval {
        self.space
    }

    pub fn comparisons(&self) -> &[Comparison] {
        &self.comparisons
    }

    pub fn comparison_label(&self, c: usize) -> String {
        let comp = &self.comparisons[c];
        format!(
            "#{c} `{}` vs `{}` (p={})",
            self.models[comp.fixed].name(),
            self.models[comp.candidate].name(),
            comp.weight
        )
    }

    /// `η_i(x, θ̄_i)` for the fixed model of comparison `c`.
    pub fn fixed_value(&self, c: usize, x: f64) -> Result<f64> {
        let comp = &self.comparisons[c];
        let theta = self.fixed_params[comp.fixed].as_ref().expect("validated in new");
        self.models[comp.fixed].eval(x, theta)
    }

    /// `η_i(x, θ̄_i) − η_j(x, θ̂)` for comparison `c`.
    pub fn residual(&self, c: usize, theta_hat: &[f64], x: f64) -> Result<f64> {
        let comp = &self.comparisons[c];
        Ok(self.fixed_value(c, x)? - self.models[comp.candidate].eval(x, theta_hat)?)
    }
}

/// Builds the local problem equivalent to the discretised Bayesian criterion:
/// every prior atom becomes a fixed model of its own, candidates are shared.
pub fn expand_bayes(
    models: Vec<Model>,
    nominal: Vec<NominalParams>,
    base_table: Vec<Vec<f64>>,
    space: Interval,
) -> Result<ComparisonProblem> {
    let nu = models.len();
    if nominal.len() != nu || base_table.len() != nu || base_table.iter().any(|r| r.len() != nu) {
        return Err(Error::InvalidArgument(format!(
            "need {nu} nominal entries and a {nu}×{nu} table"
        )));
    }
    let mut all_models = models.clone();
    let mut fixed: Vec<Option<Vec<f64>>> = vec![None; nu];
    let mut rows: Vec<Vec<f64>> = vec![vec![0.0; nu]; nu];
    let mut extra: Vec<(Model, Vec<f64>, Vec<f64>)> = Vec::new();

    for (i, info) in nominal.into_iter().enumerate() {
        let active = base_table[i].iter().enumerate().any(|(j, p)| j != i && *p > 0.0);
        match info {
            NominalParams::None => {
                if active {
                    return Err(Error::InvalidArgument(format!(
                        "model `{}` has positive comparison weights but neither nominal parameters nor a prior",
                        models[i].name()
                    )));
                }
            }
            NominalParams::Fixed(theta) => {
                fixed[i] = Some(theta);
                rows[i] = base_table[i].clone();
            }
            NominalParams::Prior(prior) => {
                for (k, (lambda, _)) in prior.atoms().iter().enumerate() {
                    if !models[i].param_space().contains(lambda) {
                        return Err(Error::InvalidArgument(format!(
                            "prior atom {k} {lambda:?} of `{}` lies outside its parameter box",
                            models[i].name()
                        )));
                    }
                }
                if prior.len() == 1 {
                    fixed[i] = Some(prior.atoms()[0].0.clone());
                    rows[i] = base_table[i].clone();
                    continue;
                }
                for (k, (lambda, tau)) in prior.atoms().iter().enumerate() {
                    let atom = models[i].renamed(
                        format!("{}[{}]", models[i].name(), k + 1),
                        models[i].param_space().clone(),
                    )?;
                    let row: Vec<f64> = base_table[i]
                        .iter()
                        .enumerate()
                        .map(|(j, p)| if j == i { 0.0 } else { p * tau })
                        .collect();
                    extra.push((atom, lambda.clone(), row));
                }
            }
        }
    }

    let total = nu + extra.len();
    let mut table = vec![vec![0.0; total]; total];
    for i in 0..nu {
        table[i][..nu].copy_from_slice(&rows[i]);
    }
    for (k, (atom, lambda, row)) in extra.into_iter().enumerate() {
        all_models.push(atom);
        fixed.push(Some(lambda));
        table[nu + k][..nu].copy_from_slice(&row);
    }
    ComparisonProblem::new(all_models, fixed, table, space)
}

/// Controls for the inner fits.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerOptions {
    pub fit: FitOptions,
    /// Starts per comparison without a warm start.
    pub multistart: usize,
    /// Starts per comparison when warm-starting from a previous fit.
    pub warm_starts: usize,
    pub seed: u64,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self { fit: FitOptions::default(), multistart: 5, warm_starts: 1, seed: 0 }
    }
}

/// `T_P(ξ)` with the inner optima that produced it.
#[derive(Debug, Clone)]
pub struct CriterionEval {
    pub value: f64,
    pub design: Design,
    /// One fit per active comparison, in comparison order.
    pub fits: Vec<FitResult>,
    /// Comparisons whose inner optimum is on the box boundary or not unique.
    pub degenerate: Vec<usize>,
    /// `Σ p_{i,j} Σ_k ω_k η_i(x_k, θ̄_i)²`; values below `ZERO_REL·scale` count as zero.
    pub scale: f64,
}

/// Relative size below which criterion and sensitivity values are rounding noise.
pub const ZERO_REL: f64 = 1e-20;

impl CriterionEval {
    /// Human-readable degeneracy warnings.
    pub fn warnings(&self, p: &ComparisonProblem) -> Vec<String> {
        self.degenerate
            .iter()
            .map(|&c| {
                let f = &self.fits[c];
                let why = match (f.on_boundary, f.ambiguous) {
                    (true, true) => "inner optimum on the parameter boundary and not unique",
                    (true, false) => "inner optimum on the parameter boundary",
                    _ => "inner optimum not unique",
                };
                format!("comparison {}: {why}", p.comparison_label(c))
            })
            .collect()
    }
}

pub fn t_value(p: &ComparisonProblem, d: &Design, warm: Option<&CriterionEval>) -> Result<CriterionEval> {
    t_value_with(p, d, warm, &InnerOptions::default())
}

/// Runs one inner fit per active comparison (in parallel, combined in order).
pub fn t_value_with(
    p: &ComparisonProblem,
    d: &Design,
    warm: Option<&CriterionEval>,
    inner: &InnerOptions,
) -> Result<CriterionEval> {
    d.check_in(&p.space)?;
    if let Some(w) = warm {
        if w.fits.len() != p.comparisons.len() {
            return Err(Error::InvalidArgument("warm start does not match the problem".into()));
        }
    }
    let points = d.points();
    let weights = d.weights();
    let fits: Vec<(FitResult, f64)> = p
        .comparisons
        .par_iter()
        .enumerate()
        .map(|(c, comp)| {
            let label = || format!("comparison {}", p.comparison_label(c));
            let target = points
                .iter()
                .map(|&x| p.fixed_value(c, x))
                .collect::<Result<Vec<f64>>>()
                .map_err(|e| e.context(label()))?;
            let candidate = &p.models[comp.candidate];
            let seed = inner.seed.wrapping_add(c as u64);
            let starts = match warm {
                Some(w) => nls::default_starts(candidate, Some(&w.fits[c].theta_hat), inner.warm_starts, seed),
                None => nls::default_starts(candidate, None, inner.multistart, seed),
            };
            let energy: f64 = target.iter().zip(weights).map(|(t, w)| w * t * t).sum();
            nls::fit(&target, points, weights, candidate, &starts, &inner.fit)
                .map(|f| (f, comp.weight * energy))
                .map_err(|e| e.context(label()))
        })
        .collect::<Result<Vec<_>>>()?;
    let scale: f64 = fits.iter().map(|f| f.1).sum();
    let fits: Vec<FitResult> = fits.into_iter().map(|f| f.0).collect();
    let mut value: f64 = p.comparisons.iter().zip(&fits).map(|(c, f)| c.weight * f.sse).sum();
    if value <= ZERO_REL * scale {
        value = 0.0;
    }
    let degenerate = fits
        .iter()
        .enumerate()
        .filter(|(_, f)| f.on_boundary || f.ambiguous)
        .map(|(c, _)| c)
        .collect();
    Ok(CriterionEval { value, design: d.clone(), fits, degenerate, scale })
}

/// `Ψ(x, ξ) = Σ p_{i,j} [η_i(x, θ̄_i) − η_j(x, θ̂_{i,j})]²`
pub fn psi(p: &ComparisonProblem, eval: &CriterionEval, x: f64) -> Result<f64> {
    let mut s = 0.0;
    for (c, comp) in p.comparisons.iter().enumerate() {
        let r = p.residual(c, &eval.fits[c].theta_hat, x)?;
        s += comp.weight * r * r;
    }
    Ok(s)
}

/// `(x, Ψ(x))` on an equispaced grid.
pub fn psi_curve(p: &ComparisonProblem, eval: &CriterionEval, grid_points: usize) -> Result<Vec<(f64, f64)>> {
    p.space
        .grid(grid_points)
        .into_par_iter()
        .map(|x| psi(p, eval, x).map(|v| (x, v)))
        .collect()
}

/// Grid and refinement settings for analysing `Ψ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptions {
    pub grid_points: usize,
    /// Absolute bracket width at which refinement stops.
    pub refine_tol: f64,
}

impl GridOptions {
    /// 1001 points, refinement to `1e-8·(b − a)`.
    pub fn for_space(space: &Interval) -> Self {
        Self { grid_points: 1001, refine_tol: 1e-8 * space.width() }
    }
}

/// Local maxima of `Ψ` and its overall maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiAnalysis {
    /// Refined local maximisers with their `Ψ` values, increasing in `x`.
    pub maxima: Vec<(f64, f64)>,
    pub max_psi: f64,
    pub argmax: f64,
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section maximisation on `[lo, hi]`; returns `(x, f(x))`.
fn golden_max<F: Fn(f64) -> Result<f64>>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<(f64, f64)> {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while hi - lo > tol {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2)?;
        }
    }
    Ok(if f1 >= f2 { (x1, f1) } else { (x2, f2) })
}

/// Detects local maxima of `Ψ` on the grid and refines each one.
pub fn analyze_psi(p: &ComparisonProblem, eval: &CriterionEval, grid: GridOptions) -> Result<PsiAnalysis> {
    if grid.grid_points < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 grid points, got {}",
            grid.grid_points
        )));
    }
    let curve = psi_curve(p, eval, grid.grid_points)?;
    let n = curve.len();
    let floor = ZERO_REL * eval.scale;
    let v: Vec<f64> = curve.iter().map(|c| if c.1 <= floor { 0.0 } else { c.1 }).collect();
    let x: Vec<f64> = curve.iter().map(|c| c.0).collect();
    let f = |t: f64| psi(p, eval, t);

    // (bracket lo, bracket hi, grid index)
    let mut brackets: Vec<(f64, f64, usize)> = Vec::new();
    if v[0] > v[1] {
        brackets.push((x[0], x[1], 0));
    }
    let mut k = 1;
    while k < n - 1 {
        if v[k] > v[k - 1] {
            let mut end = k;
            while end + 1 < n && v[end + 1] == v[k] {
                end += 1;
            }
            if end + 1 < n && v[end + 1] < v[k] {
                let mid = (k + end) / 2;
                brackets.push((x[mid - 1], x[mid + 1], mid));
            }
            k = end + 1;
        } else {
            k += 1;
        }
    }
    if v[n - 1] > v[n - 2] {
        brackets.push((x[n - 2], x[n - 1], n - 1));
    }

    let refined: Vec<(f64, f64)> = brackets
        .par_iter()
        .map(|&(lo, hi, idx)| {
            let (xr, fr) = golden_max(f, lo, hi, grid.refine_tol)?;
            Ok(if fr >= v[idx] { (xr, fr) } else { (x[idx], v[idx]) })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut maxima: Vec<(f64, f64)> = Vec::with_capacity(refined.len());
    for m in refined {
        match maxima.last_mut() {
            Some(last) if (m.0 - last.0).abs() <= grid.refine_tol => {
                if m.1 > last.1 {
                    *last = m;
                }
            }
            _ => maxima.push(m),
        }
    }
    if maxima.is_empty() {
        maxima = vec![(x[0], v[0]), (x[n - 1], v[n - 1])];
    }

    let (mut argmax, mut max_psi) = (x[0], v[0]);
    for (xi, vi) in x.iter().copied().zip(v.iter().copied()).chain(maxima.iter().copied()) {
        if vi > max_psi {
            argmax = xi;
            max_psi = vi;
        }
    }
    Ok(PsiAnalysis { maxima, max_psi, argmax })
}

/// Refined local maximisers of `x ↦ Ψ(x, ξ)`.
pub fn psi_local_maxima(
    p: &ComparisonProblem,
    eval: &CriterionEval,
    grid_points: usize,
    refine_tol: f64,
) -> Result<Vec<f64>> {
    let a = analyze_psi(p, eval, GridOptions { grid_points, refine_tol })?;
    Ok(a.maxima.into_iter().map(|m| m.0).collect())
}

/// `T_P(ξ) / max_x Ψ(x, ξ)` from an existing evaluation.
pub fn efficiency_from(eval: &CriterionEval, analysis: &PsiAnalysis) -> f64 {
    if eval.value <= 0.0 || analysis.max_psi <= 0.0 {
        return 0.0;
    }
    (eval.value / analysis.max_psi).clamp(0.0, 1.0)
}

/// Lower bound on the efficiency of `d` relative to the optimal design.
pub fn efficiency_lower_bound(p: &ComparisonProblem, d: &Design) -> Result<f64> {
    let eval = t_value(p, d, None)?;
    if eval.value <= 0.0 {
        return Ok(0.0);
    }
    let analysis = analyze_psi(p, &eval, GridOptions::for_space(&p.space))?;
    Ok(efficiency_from(&eval, &analysis))
}

/// Outcome of the equivalence-theorem check.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityReport {
    pub t_value: f64,
    pub max_psi: f64,
    pub argmax: f64,
    /// `max Ψ / T_P` (infinite when `T_P = 0`).
    pub gap_ratio: f64,
    pub efficiency: f64,
    /// `(x_k, Ψ(x_k))` for support points with positive weight.
    pub support_psi: Vec<(f64, f64)>,
    /// `max_k |Ψ(x_k) − T_P| / T_P`.
    pub support_deviation: f64,
    pub tol: f64,
    pub pass: bool,
    pub diagnosis: Vec<String>,
    pub warnings: Vec<String>,
}

pub fn check_optimality(p: &ComparisonProblem, d: &Design, tol: f64) -> Result<OptimalityReport> {
    check_optimality_with(p, d, tol, GridOptions::for_space(&p.space), &InnerOptions::default())
}

/// Passes when `max Ψ ≤ (1 + tol)·T_P` and every support value is within `tol·T_P` of `T_P`.
pub fn check_optimality_with(
    p: &ComparisonProblem,
    d: &Design,
    tol: f64,
    grid: GridOptions,
    inner: &InnerOptions,
) -> Result<OptimalityReport> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let eval = t_value_with(p, d, None, inner)?;
    let analysis = analyze_psi(p, &eval, grid)?;
    let t = eval.value;
    let support_psi = d
        .iter()
        .filter(|(_, w)| *w > 0.0)
        .map(|(x, _)| psi(p, &eval, x).map(|v| (x, v)))
        .collect::<Result<Vec<_>>>()?;
    let mut diagnosis = Vec::new();
    let (gap_ratio, support_deviation, pass) = if t <= 0.0 {
        diagnosis.push(
            "criterion value is zero: every rival model fits the fixed models exactly on this design".to_string(),
        );
        (f64::INFINITY, f64::INFINITY, false)
    } else {
        let ratio = analysis.max_psi / t;
        let dev = support_psi.iter().map(|(_, v)| (v - t).abs() / t).fold(0.0, f64::max);
        let bound_ok = analysis.max_psi <= (1.0 + tol) * t;
        let support_ok = dev <= tol;
        if !bound_ok {
            diagnosis.push(format!(
                "max Ψ = {:.6e} at x = {:.6} exceeds (1 + tol)·T_P = {:.6e}",
                analysis.max_psi,
                analysis.argmax,
                (1.0 + tol) * t
            ));
        }
        if !support_ok {
            diagnosis.push(format!("Ψ at the support deviates from T_P by {dev:.3e} (relative)"));
        }
        (ratio, dev, bound_ok && support_ok)
    };
    Ok(OptimalityReport {
        t_value: t,
        max_psi: analysis.max_psi,
        argmax: analysis.argmax,
        gap_ratio,
        efficiency: efficiency_from(&eval, &analysis),
        support_psi,
        support_deviation,
        tol,
        pass,
        diagnosis,
        warnings: eval.warnings(p),
    })
}

/// `∂T_P((1−α)ξ + αζ)/∂α` at `α = 0`, i.e. `Q(ζ, ξ) − T_P(ξ)`, with the inner
/// optima frozen at their `ξ` values.
pub fn directional_derivative(p: &ComparisonProblem, xi: &Design, zeta: &Design) -> Result<f64> {
    directional_derivative_with(p, xi, zeta, &InnerOptions::default())
}

pub fn directional_derivative_with(
    p: &ComparisonProblem,
    xi: &Design,
    zeta: &Design,
    inner: &InnerOptions,
) -> Result<f64> {
    zeta.check_in(&p.space)?;
    let eval = t_value_with(p, xi, None, inner)?;
    let mut q = 0.0;
    for (z, w) in zeta.iter() {
        q += w * psi(p, &eval, z)?;
    }
    Ok(q - eval.value)
}
