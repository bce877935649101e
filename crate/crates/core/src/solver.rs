//! Outer design algorithms: the support-exchange method with a weight step,
//! and the classical one-point-at-a-time sequential method as a baseline.

use std::io::Write;
use std::time::Instant;

use crate::criterion::{self, ComparisonProblem, CriterionEval, GridOptions, InnerOptions, PsiAnalysis};
use crate::design::{self, Design};
use crate::error::{Error, Result};
use crate::nls::FitOptions;
use crate::weights::{self, WeightOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub grid_points: usize,
    /// Stop when the efficiency lower bound reaches `1 − eff_tol`.
    pub eff_tol: f64,
    pub max_outer: usize,
    pub weights: WeightOptions,
    pub prune_threshold: f64,
    /// Merge distance; `None` means `1e-6·(b − a)`.
    pub merge_tol: Option<f64>,
    /// Refinement bracket width for local maxima of `Ψ`; `None` means `1e-8·(b − a)`.
    pub refine_tol: Option<f64>,
    pub multistart: usize,
    pub warm_starts: usize,
    pub seed: u64,
    pub fit: FitOptions,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            grid_points: 1001,
            eff_tol: 1e-4,
            max_outer: 50,
            weights: WeightOptions::default(),
            prune_threshold: design::default_prune_threshold(),
            merge_tol: None,
            refine_tol: None,
            multistart: 5,
            warm_starts: 1,
            seed: 0,
            fit: FitOptions::default(),
        }
    }
}

impl SolveOptions {
    pub fn inner(&self) -> InnerOptions {
        InnerOptions {
            fit: self.fit.clone(),
            multistart: self.multistart,
            warm_starts: self.warm_starts,
            seed: self.seed,
        }
    }

    fn grid(&self, p: &ComparisonProblem) -> GridOptions {
        let w = p.space().width();
        GridOptions { grid_points: self.grid_points, refine_tol: self.refine_tol.unwrap_or(1e-8 * w) }
    }

    fn merge_tol(&self, p: &ComparisonProblem) -> f64 {
        self.merge_tol.unwrap_or(1e-6 * p.space().width())
    }

    fn validate(&self) -> Result<()> {
        if self.grid_points < 3 {
            return Err(Error::InvalidArgument(format!("grid_points = {} < 3", self.grid_points)));
        }
        if !(self.eff_tol > 0.0 && self.eff_tol < 1.0) {
            return Err(Error::InvalidArgument(format!("eff_tol = {} not in (0, 1)", self.eff_tol)));
        }
        if self.max_outer == 0 {
            return Err(Error::InvalidArgument("max_outer must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the convergence trace, recorded for the design at the start of
/// each outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iter: usize,
    pub support_size: usize,
    pub t_value: f64,
    pub max_psi: f64,
    pub efficiency: f64,
    pub seconds: f64,
    /// `(max − min)` of `Ψ` over the positive-weight support divided by
    /// `T_P`, after a weight step (absent for the starting design).
    pub support_psi_spread: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxIterations,
    /// Neither the pruned nor the unpruned design improved the criterion.
    Stalled,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::MaxIterations => "max_iterations",
            Self::Stalled => "stalled",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub design: Design,
    pub t_value: f64,
    pub max_psi: f64,
    pub argmax: f64,
    pub efficiency: f64,
    pub iterations: usize,
    pub stop: StopReason,
    pub trace: Vec<TraceEntry>,
    pub warnings: Vec<String>,
    /// Final inner optima, one per comparison.
    pub eval: CriterionEval,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.stop == StopReason::Converged
    }
}

/// Writes the trace as CSV with columns
/// `iter,support_size,t_value,max_psi,efficiency,seconds`.
pub fn write_trace_csv<W: Write>(trace: &[TraceEntry], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["iter", "support_size", "t_value", "max_psi", "efficiency", "seconds"]).map_err(io)?;
    for e in trace {
        w.write_record([
            e.iter.to_string(),
            e.support_size.to_string(),
            design::fmt17(e.t_value),
            design::fmt17(e.max_psi),
            design::fmt17(e.efficiency),
            format!("{:.6}", e.seconds),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

fn spread(p: &ComparisonProblem, e: &CriterionEval) -> Result<Option<f64>> {
    if e.value <= 0.0 {
        return Ok(None);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (x, w) in e.design.iter() {
        if w > 0.0 {
            let v = criterion::psi(p, e, x)?;
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    Ok(Some((hi - lo) / e.value))
}

fn initial_eval(p: &ComparisonProblem, xi0: &Design, inner: &InnerOptions) -> Result<CriterionEval> {
    let e = criterion::t_value_with(p, xi0, None, inner)?;
    if e.value <= 0.0 {
        let mut names: Vec<String> = (0..p.comparisons().len())
            .filter(|&c| e.fits[c].sse <= criterion::ZERO_REL * e.scale.max(f64::MIN_POSITIVE))
            .map(|c| p.comparison_label(c))
            .collect();
        if names.is_empty() {
            names = (0..p.comparisons().len()).map(|c| p.comparison_label(c)).collect();
        }
        return Err(Error::InvalidStart(format!(
            "T_P = 0 at the starting design; the rival models fit exactly for {}",
            names.join(", ")
        )));
    }
    Ok(e)
}

fn entry(iter: usize, e: &CriterionEval, a: &PsiAnalysis, t0: Instant, spread: Option<f64>) -> TraceEntry {
    TraceEntry {
        iter,
        support_size: e.design.len(),
        t_value: e.value,
        max_psi: a.max_psi,
        efficiency: criterion::efficiency_from(e, a),
        seconds: t0.elapsed().as_secs_f64(),
        support_psi_spread: spread,
    }
}

fn finish(
    p: &ComparisonProblem,
    eval: CriterionEval,
    analysis: PsiAnalysis,
    iterations: usize,
    stop: StopReason,
    trace: Vec<TraceEntry>,
    mut warnings: Vec<String>,
) -> SolveReport {
    warnings.extend(eval.warnings(p));
    SolveReport {
        design: eval.design.clone(),
        t_value: eval.value,
        max_psi: analysis.max_psi,
        argmax: analysis.argmax,
        efficiency: criterion::efficiency_from(&eval, &analysis),
        iterations,
        stop,
        trace,
        warnings,
        eval,
    }
}

/// Relative depth of the `Ψ` valley below which two neighbouring support
/// points count as sitting on the same peak.
const SHOULDER_DEPTH: f64 = 1e-3;

/// Merges neighbouring support points with no valley of `Ψ` between them into
/// their weighted mean. Returns the merged evaluation if it does not lower `T_P`.
fn merge_shoulders(p: &ComparisonProblem, e: &CriterionEval, inner: &InnerOptions) -> Result<Option<CriterionEval>> {
    if e.value <= 0.0 || e.design.len() < 2 {
        return Ok(None);
    }
    let floor = (1.0 - SHOULDER_DEPTH) * e.value;
    let mut xs: Vec<f64> = Vec::with_capacity(e.design.len());
    let mut ws: Vec<f64> = Vec::with_capacity(e.design.len());
    let mut merged = false;
    let mut prev: Option<f64> = None;
    for (x, w) in e.design.iter() {
        let same_peak = match prev {
            Some(a) => {
                let mut ok = true;
                for k in 1..8 {
                    if criterion::psi(p, e, a + (x - a) * k as f64 / 8.0)? < floor {
                        ok = false;
                        break;
                    }
                }
                ok
            }
            None => false,
        };
        prev = Some(x);
        if same_peak {
            let (cx, cw) = (xs.last_mut().unwrap(), ws.last_mut().unwrap());
            *cx = (*cx * *cw + x * w) / (*cw + w);
            *cw += w;
            merged = true;
        } else {
            xs.push(x);
            ws.push(w);
        }
    }
    if !merged {
        return Ok(None);
    }
    let d = Design::from_unsorted(xs, ws)?;
    let m = criterion::t_value_with(p, &d, Some(e), inner)?;
    Ok((m.value >= e.value).then_some(m))
}

/// Support-exchange algorithm: add the local maxima of `Ψ` (and the interval
/// ends) to the support, optimise the weights on the enlarged support, prune.
pub fn solve(p: &ComparisonProblem, xi0: &Design, opts: &SolveOptions) -> Result<SolveReport> {
    opts.validate()?;
    let t0 = Instant::now();
    let inner = opts.inner();
    let grid = opts.grid(p);
    let merge_tol = opts.merge_tol(p);
    let space = p.space();

    let mut cur = initial_eval(p, xi0, &inner)?;
    let mut spread_now = None;
    let mut trace = Vec::new();
    let mut warnings = Vec::new();

    for iter in 0..opts.max_outer {
        let analysis = criterion::analyze_psi(p, &cur, grid)?;
        trace.push(entry(iter, &cur, &analysis, t0, spread_now));
        if criterion::efficiency_from(&cur, &analysis) >= 1.0 - opts.eff_tol {
            return Ok(finish(p, cur, analysis, iter, StopReason::Converged, trace, warnings));
        }

        // enlarge the support; new points enter with zero weight
        let mut xs: Vec<f64> = cur.design.points().to_vec();
        let mut ws: Vec<f64> = cur.design.weights().to_vec();
        let existing = cur.design.points().to_vec();
        for x in analysis.maxima.iter().map(|m| m.0).chain([space.lower, space.upper]) {
            if existing.iter().all(|e| (e - x).abs() >= merge_tol) && xs.iter().all(|e| *e != x) {
                xs.push(x);
                ws.push(0.0);
            }
        }
        let enlarged = design::canonicalize(&Design::from_unsorted(xs, ws)?, merge_tol)?;
        let start = criterion::t_value_with(p, &enlarged, Some(&cur), &inner)?;
        let step2 = weights::optimize_weights(p, &start, &opts.weights, &inner)?;
        let unpruned = step2.eval;

        let pruned_design = design::canonicalize(&design::prune(&unpruned.design, opts.prune_threshold)?, merge_tol)?;
        let pruned = if pruned_design == unpruned.design {
            unpruned.clone()
        } else {
            criterion::t_value_with(p, &pruned_design, Some(&unpruned), &inner)?
        };

        let next = if pruned.value >= cur.value {
            pruned
        } else if unpruned.value >= cur.value {
            warnings.push(format!("iteration {iter}: pruning lowered T_P; kept the unpruned support"));
            unpruned
        } else {
            let a = criterion::analyze_psi(p, &cur, grid)?;
            return Ok(finish(p, cur, a, iter, StopReason::Stalled, trace, warnings));
        };
        let next = match merge_shoulders(p, &next, &inner)? {
            Some(merged) => {
                let polished = weights::optimize_weights(p, &merged, &opts.weights, &inner)?.eval;
                if polished.value >= next.value { polished } else { next }
            }
            None => next,
        };
        spread_now = spread(p, &next)?;
        cur = next;
    }
    let analysis = criterion::analyze_psi(p, &cur, grid)?;
    trace.push(entry(opts.max_outer, &cur, &analysis, t0, spread_now));
    let eff = criterion::efficiency_from(&cur, &analysis);
    let stop = if eff >= 1.0 - opts.eff_tol { StopReason::Converged } else { StopReason::MaxIterations };
    Ok(finish(p, cur, analysis, opts.max_outer, stop, trace, warnings))
}

/// Step lengths of the sequential baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaRule {
    /// `α_s = 1/(s + 1)` for `s = 1, 2, …`
    Harmonic,
    /// The same `α` every step.
    Constant(f64),
}

impl AlphaRule {
    pub fn at(&self, s: usize) -> f64 {
        match *self {
            Self::Harmonic => 1.0 / (s as f64 + 1.0),
            Self::Constant(a) => a,
        }
    }
}

/// One-point-at-a-time sequential method: `ξ_{s+1} = (1 − α_s)ξ_s + α_s δ_{x*}`
/// with `x*` the global maximiser of `Ψ(·, ξ_s)`. Uses the grid, inner, merge and
/// iteration settings of `opts`.
pub fn solve_af(p: &ComparisonProblem, xi0: &Design, alpha: AlphaRule, opts: &SolveOptions) -> Result<SolveReport> {
    opts.validate()?;
    if let AlphaRule::Constant(a) = alpha {
        if !(0.0..1.0).contains(&a) {
            return Err(Error::InvalidArgument(format!("constant step {a} not in [0, 1)")));
        }
    }
    let t0 = Instant::now();
    let inner = opts.inner();
    let grid = opts.grid(p);
    let merge_tol = opts.merge_tol(p);
    let mut cur = initial_eval(p, xi0, &inner)?;
    let mut trace = Vec::new();
    for s in 0..opts.max_outer {
        let analysis = criterion::analyze_psi(p, &cur, grid)?;
        trace.push(entry(s, &cur, &analysis, t0, None));
        if criterion::efficiency_from(&cur, &analysis) >= 1.0 - opts.eff_tol {
            return Ok(finish(p, cur, analysis, s, StopReason::Converged, trace, Vec::new()));
        }
        let a = alpha.at(s + 1);
        let next = design::mix(&cur.design, &Design::point_mass(analysis.argmax)?, a)?;
        let next = design::canonicalize(&next, merge_tol)?;
        cur = criterion::t_value_with(p, &next, Some(&cur), &inner)?;
    }
    let analysis = criterion::analyze_psi(p, &cur, grid)?;
    trace.push(entry(opts.max_outer, &cur, &analysis, t0, None));
    let eff = criterion::efficiency_from(&cur, &analysis);
    let stop = if eff >= 1.0 - opts.eff_tol { StopReason::Converged } else { StopReason::MaxIterations };
    Ok(finish(p, cur, analysis, opts.max_outer, stop, trace, Vec::new()))
}
