//! Problem configuration files (TOML).
//!
//! A file names the design space, the models with their parameter boxes and
//! nominal values or priors, the comparison table, solver settings, an optional
//! starting design and output paths. Every default is filled in on load, so the
//! serialised form of a loaded configuration is complete and re-loadable.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::criterion::{self, ComparisonProblem, DiscretePrior, NominalParams};
use crate::design::{self, Design, Interval};
use crate::error::{Error, Result};
use crate::expr;
use crate::model::{Family, Model, ParamSpace};
use crate::solver::SolveOptions;
use crate::weights::{WeightMethod, WeightOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub design_space: [f64; 2],
    pub models: Vec<ModelConfig>,
    pub comparisons: ComparisonConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<StartConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_params: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorConfig>,
}

/// Discrete priors: explicit atoms or one of two generated grids.
/// Coordinates are one-based parameter indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorConfig {
    Atoms {
        atoms: Vec<Vec<f64>>,
        masses: Vec<f64>,
    },
    /// Independent 5-level (or `levels`) grids `center + σ(i − m)/2` with
    /// masses `∝ exp(−(i − m)²/8)`.
    Grid {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
        coords: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        variance: Option<f64>,
        #[serde(default = "default_levels")]
        levels: usize,
    },
    /// `{−1, 0, 1}` factorial `center + eσ` with masses
    /// `∝ exp(exponent_sign·‖λ − center‖²/(2σ²))`.
    Factorial {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coords: Option<Vec<usize>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        variance: Option<f64>,
        #[serde(default = "default_exponent_sign")]
        exponent_sign: f64,
    },
}

fn default_levels() -> usize {
    5
}

fn default_exponent_sign() -> f64 {
    -1.0
}

/// Either an explicit `matrix` or a `shorthand` (`all-pairs`, `lower`, `upper`)
/// with a common `value` (default: equal weights summing to one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shorthand: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub grid_points: usize,
    pub eff_tol: f64,
    pub max_outer: usize,
    pub step2_method: String,
    pub step2_rounds: usize,
    pub gradient_max_iters: usize,
    pub gradient_tol: f64,
    pub prune_threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub merge_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refine_tol: Option<f64>,
    pub multistart: usize,
    pub warm_starts: usize,
    pub seed: u64,
    /// Tolerance of the equivalence-theorem check.
    pub tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = SolveOptions::default();
        Self {
            grid_points: s.grid_points,
            eff_tol: s.eff_tol,
            max_outer: s.max_outer,
            step2_method: "qp".into(),
            step2_rounds: s.weights.max_rounds,
            gradient_max_iters: s.weights.gradient_max_iters,
            gradient_tol: s.weights.gradient_tol,
            prune_threshold: s.prune_threshold,
            merge_tol: None,
            refine_tol: None,
            multistart: s.multistart,
            warm_starts: s.warm_starts,
            seed: s.seed,
            tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartConfig {
    pub points: Vec<f64>,
    /// Uniform when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub design: String,
    pub trace: String,
    pub psi: String,
    pub report: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            design: "design.csv".into(),
            trace: "trace.csv".into(),
            psi: "psi.csv".into(),
            report: "report.txt".into(),
        }
    }
}

/// Everything needed to run the solver.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub problem: ComparisonProblem,
    pub start: Design,
    pub options: SolveOptions,
    pub tol: f64,
}

impl ProblemConfig {
    /// Parses and fills every default (parameter boxes, tolerances, start).
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: ProblemConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.fill_defaults()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| e.context(path.display().to_string()))
    }

    /// The complete configuration as TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn space(&self) -> Result<Interval> {
        Interval::new(self.design_space[0], self.design_space[1]).map_err(|e| e.context("design_space"))
    }

    fn fill_defaults(&mut self) -> Result<()> {
        let space = self.space()?;
        for (i, m) in self.models.iter_mut().enumerate() {
            let ctx = format!("models[{i}] `{}`", m.name);
            if m.lower.is_none() != m.upper.is_none() {
                return Err(Error::Config(format!("{ctx}: give both `lower` and `upper` or neither")));
            }
            if m.lower.is_none() {
                let centre = m.fixed_params.clone().or_else(|| match &m.prior {
                    Some(PriorConfig::Grid { center, .. }) | Some(PriorConfig::Factorial { center, .. }) => {
                        center.clone()
                    }
                    _ => None,
                });
                let Some(c) = centre else {
                    return Err(Error::Config(format!(
                        "{ctx}: needs `lower`/`upper` (or `fixed_params` to centre a default box)"
                    )));
                };
                let b = ParamSpace::around(&c).map_err(|e| e.context(&ctx))?;
                m.lower = Some(b.lower().to_vec());
                m.upper = Some(b.upper().to_vec());
            }
            if let Some(prior) = &mut m.prior {
                match prior {
                    PriorConfig::Grid { center, .. } | PriorConfig::Factorial { center, .. } => {
                        if center.is_none() {
                            *center = Some(m.fixed_params.clone().ok_or_else(|| {
                                Error::Config(format!("{ctx}: prior needs `center` or the model's `fixed_params`"))
                            })?);
                        }
                    }
                    PriorConfig::Atoms { .. } => {}
                }
                if let PriorConfig::Factorial { center: Some(c), coords, .. } = prior {
                    if coords.is_none() {
                        *coords = Some((1..=c.len()).collect());
                    }
                }
            }
        }
        if self.solver.merge_tol.is_none() {
            self.solver.merge_tol = Some(1e-6 * space.width());
        }
        if self.solver.refine_tol.is_none() {
            self.solver.refine_tol = Some(1e-8 * space.width());
        }
        if self.start.is_none() {
            self.start = Some(StartConfig { points: space.grid(11), weights: None });
        }
        Ok(())
    }

    fn build_model(&self, i: usize) -> Result<Model> {
        let m = &self.models[i];
        let ctx = format!("models[{i}] `{}`", m.name);
        let space = ParamSpace::new(m.lower.clone().unwrap_or_default(), m.upper.clone().unwrap_or_default())
            .map_err(|e| Error::Config(format!("{ctx}: {e}")))?;
        let model = match (&m.builtin, &m.expression) {
            (Some(id), None) => {
                let family: Family = id.parse().map_err(|e: Error| Error::Config(format!("{ctx}: {e}")))?;
                Model::builtin(&m.name, family, space)
            }
            (None, Some(src)) => expr::parse(src).and_then(|e| expr::to_model(&m.name, e, space)),
            _ => return Err(Error::Config(format!("{ctx}: give exactly one of `builtin` or `expression`"))),
        };
        model.map_err(|e| Error::Config(format!("{ctx}: {e}")))
    }

    fn build_prior(&self, i: usize, dim: usize) -> Result<Option<DiscretePrior>> {
        let m = &self.models[i];
        let ctx = format!("models[{i}] `{}` prior", m.name);
        let cfg_err = |e: Error| Error::Config(format!("{ctx}: {e}"));
        let sd = |sigma: &Option<f64>, variance: &Option<f64>| -> Result<f64> {
            match (sigma, variance) {
                (Some(s), None) => Ok(*s),
                (None, Some(v)) if *v >= 0.0 => Ok(v.sqrt()),
                _ => Err(Error::Config(format!("{ctx}: give exactly one of `sigma` or a nonnegative `variance`"))),
            }
        };
        let zero_based = |coords: &[usize]| -> Result<Vec<usize>> {
            coords
                .iter()
                .map(|&c| {
                    if c == 0 || c > dim {
                        Err(Error::Config(format!("{ctx}: coordinate {c} not in 1..={dim}")))
                    } else {
                        Ok(c - 1)
                    }
                })
                .collect()
        };
        let prior = match &m.prior {
            None => return Ok(None),
            Some(PriorConfig::Atoms { atoms, masses }) => {
                if atoms.len() != masses.len() {
                    return Err(Error::Config(format!(
                        "{ctx}: {} atoms but {} masses",
                        atoms.len(),
                        masses.len()
                    )));
                }
                let total: f64 = masses.iter().sum();
                if (total - 1.0).abs() > 1e-6 {
                    return Err(Error::Config(format!("{ctx}: masses sum to {total}, not 1")));
                }
                if atoms.iter().any(|a| a.len() != dim) {
                    return Err(Error::Config(format!("{ctx}: every atom needs {dim} coordinates")));
                }
                DiscretePrior::normalized(atoms.iter().cloned().zip(masses.iter().copied()).collect())
                    .map_err(cfg_err)?
            }
            Some(PriorConfig::Grid { center, coords, sigma, variance, levels }) => {
                let c = center.as_ref().expect("filled on load");
                check_len(&ctx, "center", c, dim)?;
                DiscretePrior::product_grid(c, &zero_based(coords)?, sd(sigma, variance)?, *levels).map_err(cfg_err)?
            }
            Some(PriorConfig::Factorial { center, coords, sigma, variance, exponent_sign }) => {
                let c = center.as_ref().expect("filled on load");
                check_len(&ctx, "center", c, dim)?;
                let coords = coords.as_ref().expect("filled on load");
                DiscretePrior::factorial(c, &zero_based(coords)?, sd(sigma, variance)?, *exponent_sign)
                    .map_err(cfg_err)?
            }
        };
        Ok(Some(prior))
    }

    fn table(&self) -> Result<Vec<Vec<f64>>> {
        let nu = self.models.len();
        let c = &self.comparisons;
        match (&c.matrix, &c.shorthand) {
            (Some(m), None) => {
                if c.value.is_some() {
                    return Err(Error::Config("comparisons: `value` only applies to `shorthand`".into()));
                }
                if m.len() != nu || m.iter().any(|r| r.len() != nu) {
                    return Err(Error::Config(format!("comparisons.matrix must be {nu}×{nu}")));
                }
                Ok(m.clone())
            }
            (None, Some(s)) => {
                let active = |i: usize, j: usize| match s.as_str() {
                    "all-pairs" => Ok(i != j),
                    "lower" => Ok(j < i),
                    "upper" => Ok(j > i),
                    other => Err(Error::Config(format!(
                        "comparisons.shorthand `{other}` (expected `all-pairs`, `lower` or `upper`)"
                    ))),
                };
                let count = match s.as_str() {
                    "all-pairs" => nu * (nu - 1),
                    _ => nu * (nu - 1) / 2,
                };
                let v = c.value.unwrap_or(1.0 / count.max(1) as f64);
                let mut t = vec![vec![0.0; nu]; nu];
                for (i, row) in t.iter_mut().enumerate() {
                    for (j, cell) in row.iter_mut().enumerate() {
                        if active(i, j)? {
                            *cell = v;
                        }
                    }
                }
                Ok(t)
            }
            _ => Err(Error::Config("comparisons: give exactly one of `matrix` or `shorthand`".into())),
        }
    }

    pub fn solve_options(&self) -> Result<SolveOptions> {
        let s = &self.solver;
        let method: WeightMethod = s.step2_method.parse().map_err(|e: Error| e.context("solver.step2_method"))?;
        Ok(SolveOptions {
            grid_points: s.grid_points,
            eff_tol: s.eff_tol,
            max_outer: s.max_outer,
            weights: WeightOptions {
                method,
                max_rounds: s.step2_rounds,
                gradient_max_iters: s.gradient_max_iters,
                gradient_tol: s.gradient_tol,
                ..WeightOptions::default()
            },
            prune_threshold: s.prune_threshold,
            merge_tol: s.merge_tol,
            refine_tol: s.refine_tol,
            multistart: s.multistart,
            warm_starts: s.warm_starts,
            seed: s.seed,
            ..SolveOptions::default()
        })
    }

    /// Builds the (expanded) problem, the starting design and solver options.
    pub fn resolve(&self) -> Result<Resolved> {
        let space = self.space()?;
        let mut models = Vec::with_capacity(self.models.len());
        let mut nominal = Vec::with_capacity(self.models.len());
        for i in 0..self.models.len() {
            let model = self.build_model(i)?;
            let m = &self.models[i];
            let ctx = format!("models[{i}] `{}`", m.name);
            let info = match (&m.fixed_params, self.build_prior(i, model.dim())?) {
                (_, Some(prior)) => NominalParams::Prior(prior),
                (Some(theta), None) => {
                    check_len(&ctx, "fixed_params", theta, model.dim())?;
                    NominalParams::Fixed(theta.clone())
                }
                (None, None) => NominalParams::None,
            };
            models.push(model);
            nominal.push(info);
        }
        let problem = criterion::expand_bayes(models, nominal, self.table()?, space)
            .map_err(|e| Error::Config(format!("problem: {e}")))?;
        let start = self.start.as_ref().expect("filled on load");
        let start = match &start.weights {
            None => Design::uniform(start.points.clone()),
            Some(w) => Design::from_unsorted(start.points.clone(), w.clone()),
        }
        .map_err(|e| Error::Config(format!("start: {e}")))?;
        start.check_in(&space).map_err(|e| Error::Config(format!("start: {e}")))?;
        let options = self.solve_options()?;
        if !(self.solver.tol > 0.0) {
            return Err(Error::Config(format!("solver.tol = {} must be positive", self.solver.tol)));
        }
        Ok(Resolved { problem, start, options, tol: self.solver.tol })
    }
}

fn check_len(ctx: &str, field: &str, v: &[f64], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(Error::Config(format!("{ctx}: `{field}` has {} entries, model has {dim} parameters", v.len())));
    }
    Ok(())
}

/// Reads a design CSV and checks it against the configured space.
pub fn read_design(path: &Path, space: &Interval) -> Result<Design> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("cannot open {}: {e}", path.display())))?;
    let d = design::read_csv(f).map_err(|e| e.context(path.display().to_string()))?;
    d.check_in(space).map_err(|e| e.context(path.display().to_string()))?;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXP_BAYES: &str = r#"
design_space = [0, 10]

[[models]]
name = "exp4"
builtin = "exp4"
fixed_params = [2.0, 1.0, 0.8, 1.5]
prior = { kind = "grid", coords = [3, 4], variance = 0.4 }

[[models]]
name = "exp3"
builtin = "exp3"
lower = [-20.0, -20.0, 0.001]
upper = [20.0, 20.0, 50.0]

[comparisons]
matrix = [[0, 1], [0, 0]]
"#;

    #[test]
    fn parses_and_expands_grid_prior() {
        let cfg = ProblemConfig::parse(EXP_BAYES).unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.problem.comparisons().len(), 25);
        assert_eq!(r.start.len(), 11);
        assert_eq!(cfg.models[0].lower.as_ref().unwrap()[0], -18.0);
    }

    #[test]
    fn echo_round_trips() {
        let cfg = ProblemConfig::parse(EXP_BAYES).unwrap();
        let text = cfg.to_toml().unwrap();
        let again = ProblemConfig::parse(&text).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(text, again.to_toml().unwrap());
    }

    #[test]
    fn shorthand_lower_gives_equal_weights() {
        let text = EXP_BAYES.replace("matrix = [[0, 1], [0, 0]]", "shorthand = \"upper\"");
        let cfg = ProblemConfig::parse(&text).unwrap();
        let t = cfg.table().unwrap();
        assert_eq!(t, vec![vec![0.0, 1.0], vec![0.0, 0.0]]);
    }

    #[test]
    fn diagnostics_name_the_field() {
        let bad = EXP_BAYES.replace("builtin = \"exp3\"", "builtin = \"exp5\"");
        let e = ProblemConfig::parse(&bad).unwrap().resolve().unwrap_err().to_string();
        assert!(e.contains("models[1]") && e.contains("exp5"), "{e}");

        let bad = EXP_BAYES.replace("design_space = [0, 10]", "design_space = [0, \"x\"]");
        let e = ProblemConfig::parse(&bad).unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");

        let bad = EXP_BAYES.replace("[comparisons]", "[comparisons]\nbogus = 1");
        assert!(ProblemConfig::parse(&bad).is_err());
    }

    #[test]
    fn missing_box_for_candidate_is_an_error() {
        let bad = EXP_BAYES.replace("lower = [-20.0, -20.0, 0.001]\nupper = [20.0, 20.0, 50.0]\n", "");
        let e = ProblemConfig::parse(&bad).unwrap_err().to_string();
        assert!(e.contains("exp3"), "{e}");
    }

    #[test]
    fn factorial_prior_counts() {
        let text = r#"
design_space = [0, 500]
[[models]]
name = "m1"
builtin = "linear"
lower = [-1000.0, -100.0]
upper = [1000.0, 100.0]
[[models]]
name = "m4"
builtin = "sigmoid_emax"
lower = [-1000.0, -10000.0, -1000.0, 0.1]
upper = [1000.0, 10000.0, 1000.0, 1000.0]
prior = { kind = "factorial", center = [49.62, 290.51, 150, 45.51], sigma = 33 }
[comparisons]
shorthand = "lower"
value = 1.0
"#;
        let cfg = ProblemConfig::parse(text).unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.problem.comparisons().len(), 81);
    }
}
