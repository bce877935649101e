//! Regression mean functions, their parameter boxes and parameter gradients.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg;

/// Compact box of admissible parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParamSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidArgument(format!(
                "parameter box needs equal, non-zero lengths (got {} and {})",
                lower.len(),
                upper.len()
            )));
        }
        for (k, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::InvalidArgument(format!(
                    "parameter box coordinate {k}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Box `center ± 10·|center|`; zero coordinates get `±10`.
    pub fn around(center: &[f64]) -> Result<Self> {
        let half: Vec<f64> = center
            .iter()
            .map(|c| if *c == 0.0 { 10.0 } else { 10.0 * c.abs() })
            .collect();
        Self::new(
            center.iter().zip(&half).map(|(c, h)| c - h).collect(),
            center.iter().zip(&half).map(|(c, h)| c + h).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    pub fn width(&self, k: usize) -> f64 {
        self.upper[k] - self.lower[k]
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (lo, hi))| *t >= *lo && *t <= *hi)
    }

    /// Project `theta` into the box in place.
    pub fn clamp(&self, theta: &mut [f64]) {
        for (k, t) in theta.iter_mut().enumerate() {
            *t = t.clamp(self.lower[k], self.upper[k]);
        }
    }
}

/// A mean function `η(x, θ)` together with its parameter gradient.
///
/// Implementations must be pure: identical inputs give bit-identical outputs.
pub trait MeanFunction: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn value(&self, x: f64, theta: &[f64]) -> Result<f64>;

    /// Writes `∂η/∂θ` into `out` (length `dim`).
    fn gradient(&self, x: f64, theta: &[f64], out: &mut [f64]) -> Result<()>;

    /// Exact weighted least-squares fit for models that are linear after a
    /// reparameterisation. `None` means "use the iterative solver".
    fn exact_fit(&self, _points: &[f64], _weights: &[f64], _target: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Human-readable formula.
    fn formula(&self) -> String;
}

/// A named regression model with its parameter box.
#[derive(Clone)]
pub struct Model {
    name: String,
    space: ParamSpace,
    func: Arc<dyn MeanFunction>,
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("name", &self.name)
            .field("formula", &self.func.formula())
            .field("space", &self.space)
            .finish()
    }
}

impl Model {
    pub fn new(
        name: impl Into<String>,
        func: Arc<dyn MeanFunction>,
        space: ParamSpace,
    ) -> Result<Self> {
        let name = name.into();
        if func.dim() != space.dim() {
            return Err(Error::InvalidArgument(format!(
                "model `{name}` has {} parameters but its box has dimension {}",
                func.dim(),
                space.dim()
            )));
        }
        Ok(Self { name, space, func })
    }

    /// Built-in family with an explicit parameter box.
    pub fn builtin(name: impl Into<String>, family: Family, space: ParamSpace) -> Result<Self> {
        Self::new(name, Arc::new(family), space)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.func.dim()
    }

    pub fn param_space(&self) -> &ParamSpace {
        &self.space
    }

    pub fn formula(&self) -> String {
        self.func.formula()
    }

    pub fn function(&self) -> &Arc<dyn MeanFunction> {
        &self.func
    }

    /// Same mean function under a different name and box.
    pub fn renamed(&self, name: impl Into<String>, space: ParamSpace) -> Result<Self> {
        Self::new(name, self.func.clone(), space)
    }

    fn check_dim(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "model `{}` expects {} parameters, got {}",
                self.name,
                self.dim(),
                theta.len()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: f64, theta: &[f64]) -> Result<f64> {
        self.check_dim(theta)?;
        let v = self.func.value(x, theta).map_err(|e| e.context(&self.name))?;
        if !v.is_finite() {
            return Err(Error::NumericDomain(format!(
                "model `{}` is not finite at x={x}, theta={theta:?}",
                self.name
            )));
        }
        Ok(v)
    }

    pub fn grad_theta(&self, x: f64, theta: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.grad_into(x, theta, &mut out)?;
        Ok(out)
    }

    pub fn grad_into(&self, x: f64, theta: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_dim(theta)?;
        self.func
            .gradient(x, theta, out)
            .map_err(|e| e.context(&self.name))?;
        if out.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericDomain(format!(
                "gradient of model `{}` is not finite at x={x}, theta={theta:?}",
                self.name
            )));
        }
        Ok(())
    }

    pub fn exact_fit(&self, points: &[f64], weights: &[f64], target: &[f64]) -> Option<Vec<f64>> {
        self.func.exact_fit(points, weights, target)
    }
}

/// Built-in model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// `t1 + t2*x`
    Linear,
    /// `t1 + t2*x*(t3 - x)`
    Quadratic,
    /// `t1 + t2*x/(t3 + x)`
    Emax,
    /// `t1 + t2/(1 + exp((t3 - x)/t4))`
    SigmoidEmax,
    /// `t1 + t2/(1 + exp(t3 - x)/t4)`, the alternative reading of the sigmoid.
    SigmoidEmaxLiteral,
    /// `t1 - t2*exp(-t3*x)`
    Exp3,
    /// `t1 - t2*exp(-t3*x^t4)`
    Exp4,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Linear,
        Family::Quadratic,
        Family::Emax,
        Family::SigmoidEmax,
        Family::SigmoidEmaxLiteral,
        Family::Exp3,
        Family::Exp4,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::Quadratic => "quadratic",
            Family::Emax => "emax",
            Family::SigmoidEmax => "sigmoid_emax",
            Family::SigmoidEmaxLiteral => "sigmoid_emax_literal",
            Family::Exp3 => "exp3",
            Family::Exp4 => "exp4",
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .iter()
            .copied()
            .find(|f| f.id() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Family::ALL.iter().map(|f| f.id()).collect();
                Error::InvalidArgument(format!("unknown builtin model `{s}` (known: {known:?})"))
            })
    }
}

/// `x^p` with `0^p = 0` for `p > 0` and `0^0 = 1`; negative bases only for integer powers.
pub(crate) fn guarded_pow(x: f64, p: f64) -> Result<f64> {
    if x == 0.0 {
        return if p > 0.0 {
            Ok(0.0)
        } else if p == 0.0 {
            Ok(1.0)
        } else {
            Err(Error::NumericDomain(format!("0 raised to negative power {p}")))
        };
    }
    if x < 0.0 && p.fract() != 0.0 {
        return Err(Error::NumericDomain(format!(
            "negative base {x} raised to non-integer power {p}"
        )));
    }
    Ok(x.powf(p))
}

/// `e/(1+e)^2` and `1/(1+e)` for `e = exp(u)`, without overflow.
fn logistic_parts(u: f64) -> (f64, f64) {
    if u > 0.0 {
        let w = (-u).exp();
        let s = w / (1.0 + w);
        (s, w / ((1.0 + w) * (1.0 + w)))
    } else {
        let e = u.exp();
        let s = 1.0 / (1.0 + e);
        (s, e * s * s)
    }
}

impl MeanFunction for Family {
    fn dim(&self) -> usize {
        match self {
            Family::Linear => 2,
            Family::Quadratic | Family::Emax | Family::Exp3 => 3,
            Family::SigmoidEmax | Family::SigmoidEmaxLiteral | Family::Exp4 => 4,
        }
    }

    fn value(&self, x: f64, t: &[f64]) -> Result<f64> {
        let v = match self {
            Family::Linear => t[0] + t[1] * x,
            Family::Quadratic => t[0] + t[1] * x * (t[2] - x),
            Family::Emax => {
                let den = t[2] + x;
                if den == 0.0 {
                    return Err(Error::NumericDomain(format!("emax: t3 + x = 0 at x={x}")));
                }
                t[0] + t[1] * x / den
            }
            Family::SigmoidEmax => {
                if t[3] == 0.0 {
                    return Err(Error::NumericDomain("sigmoid_emax: t4 = 0".into()));
                }
                let (s, _) = logistic_parts((t[2] - x) / t[3]);
                t[0] + t[1] * s
            }
            Family::SigmoidEmaxLiteral => {
                if t[3] == 0.0 {
                    return Err(Error::NumericDomain("sigmoid_emax_literal: t4 = 0".into()));
                }
                t[0] + t[1] / (1.0 + (t[2] - x).exp() / t[3])
            }
            Family::Exp3 => t[0] - t[1] * (-t[2] * x).exp(),
            Family::Exp4 => t[0] - t[1] * (-t[2] * guarded_pow(x, t[3])?).exp(),
        };
        Ok(v)
    }

    fn gradient(&self, x: f64, t: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            Family::Linear => {
                out[0] = 1.0;
                out[1] = x;
            }
            Family::Quadratic => {
                out[0] = 1.0;
                out[1] = x * (t[2] - x);
                out[2] = t[1] * x;
            }
            Family::Emax => {
                let den = t[2] + x;
                if den == 0.0 {
                    return Err(Error::NumericDomain(format!("emax: t3 + x = 0 at x={x}")));
                }
                out[0] = 1.0;
                out[1] = x / den;
                out[2] = -t[1] * x / (den * den);
            }
            Family::SigmoidEmax => {
                if t[3] == 0.0 {
                    return Err(Error::NumericDomain("sigmoid_emax: t4 = 0".into()));
                }
                let u = (t[2] - x) / t[3];
                let (s, es2) = logistic_parts(u);
                out[0] = 1.0;
                out[1] = s;
                out[2] = -t[1] * es2 / t[3];
                out[3] = t[1] * es2 * u / t[3];
            }
            Family::SigmoidEmaxLiteral => {
                if t[3] == 0.0 {
                    return Err(Error::NumericDomain("sigmoid_emax_literal: t4 = 0".into()));
                }
                let e = (t[2] - x).exp();
                let s = 1.0 / (1.0 + e / t[3]);
                out[0] = 1.0;
                out[1] = s;
                out[2] = -t[1] * s * s * e / t[3];
                out[3] = t[1] * s * s * e / (t[3] * t[3]);
            }
            Family::Exp3 => {
                let e = (-t[2] * x).exp();
                out[0] = 1.0;
                out[1] = -e;
                out[2] = t[1] * x * e;
            }
            Family::Exp4 => {
                let p = guarded_pow(x, t[3])?;
                let e = (-t[2] * p).exp();
                out[0] = 1.0;
                out[1] = -e;
                out[2] = t[1] * p * e;
                out[3] = if x == 0.0 {
                    0.0
                } else {
                    t[1] * t[2] * e * p * x.abs().ln()
                };
            }
        }
        Ok(())
    }

    fn exact_fit(&self, points: &[f64], weights: &[f64], target: &[f64]) -> Option<Vec<f64>> {
        match self {
            Family::Linear => {
                linalg::weighted_polyfit(points, weights, target, 1).map(|b| vec![b[0], b[1]])
            }
            Family::Quadratic => {
                // t1 + t2*t3*x - t2*x^2
                let b = linalg::weighted_polyfit(points, weights, target, 2)?;
                let t2 = -b[2];
                if t2 == 0.0 || !t2.is_finite() {
                    return None;
                }
                let t3 = b[1] / t2;
                t3.is_finite().then(|| vec![b[0], t2, t3])
            }
            _ => None,
        }
    }

    fn formula(&self) -> String {
        match self {
            Family::Linear => "t1 + t2*x",
            Family::Quadratic => "t1 + t2*x*(t3 - x)",
            Family::Emax => "t1 + t2*x/(t3 + x)",
            Family::SigmoidEmax => "t1 + t2/(1 + exp((t3 - x)/t4))",
            Family::SigmoidEmaxLiteral => "t1 + t2/(1 + exp(t3 - x)/t4)",
            Family::Exp3 => "t1 - t2*exp(-t3*x)",
            Family::Exp4 => "t1 - t2*exp(-t3*x^t4)",
        }
        .to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(f: Family, center: &[f64]) -> Model {
        Model::builtin(f.id(), f, ParamSpace::around(center).unwrap()).unwrap()
    }

    #[test]
    fn eval_examples() {
        let lin = model(Family::Linear, &[60.0, 0.56]);
        assert!((lin.eval(100.0, &[60.0, 0.56]).unwrap() - 116.0).abs() < 1e-12);
        let emax = model(Family::Emax, &[60.0, 294.0, 25.0]);
        assert_eq!(emax.eval(0.0, &[60.0, 294.0, 25.0]).unwrap(), 60.0);
        let e3 = model(Family::Exp3, &[2.0, 1.0, 0.8]);
        assert_eq!(e3.eval(0.0, &[2.0, 1.0, 0.8]).unwrap(), 1.0);
    }

    #[test]
    fn grad_examples() {
        let lin = model(Family::Linear, &[1.0, 1.0]);
        assert_eq!(lin.grad_theta(3.0, &[0.0, 0.0]).unwrap(), vec![1.0, 3.0]);
        let emax = model(Family::Emax, &[60.0, 294.0, 25.0]);
        let g = emax.grad_theta(25.0, &[60.0, 294.0, 25.0]).unwrap();
        assert!((g[1] - 0.5).abs() < 1e-15);
        let e3 = model(Family::Exp3, &[2.0, 1.0, 0.5]);
        let g = e3.grad_theta(1.0, &[2.0, 1.0, 0.5]).unwrap();
        let e = (-0.5f64).exp();
        assert_eq!(g[0], 1.0);
        assert!((g[1] + e).abs() < 1e-15);
        assert!((g[2] - e).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_invalid_argument() {
        let lin = model(Family::Linear, &[1.0, 1.0]);
        assert!(matches!(lin.eval(0.0, &[1.0]), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            lin.grad_theta(0.0, &[1.0, 2.0, 3.0]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn non_finite_is_numeric_domain() {
        let emax = model(Family::Emax, &[1.0, 1.0, 1.0]);
        let err = emax.eval(-2.0, &[1.0, 1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::NumericDomain(ref m) if m.contains("emax")));
        let e4 = model(Family::Exp4, &[2.0, 1.0, 0.8, 1.5]);
        assert!(matches!(
            e4.eval(-1.0, &[2.0, 1.0, 0.8, 1.5]),
            Err(Error::NumericDomain(_))
        ));
    }

    #[test]
    fn exp4_gradient_at_origin() {
        let e4 = model(Family::Exp4, &[2.0, 1.0, 0.8, 1.5]);
        let g = e4.grad_theta(0.0, &[2.0, 1.0, 0.8, 1.5]).unwrap();
        assert_eq!(g, vec![1.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn sigmoid_is_stable_for_extreme_arguments() {
        let s = model(Family::SigmoidEmax, &[49.62, 290.51, 150.0, 45.51]);
        let t = [49.62, 290.51, 150.0, 0.01];
        assert!((s.eval(0.0, &t).unwrap() - 49.62).abs() < 1e-9);
        assert!((s.eval(500.0, &t).unwrap() - (49.62 + 290.51)).abs() < 1e-9);
        assert!(s.grad_theta(0.0, &t).unwrap().iter().all(|g| g.is_finite()));
    }

    fn random_theta(rng: &mut ChaCha8Rng, f: Family) -> Vec<f64> {
        match f {
            Family::Linear => vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)],
            Family::Quadratic => vec![
                rng.random_range(-5.0..5.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.0..10.0),
            ],
            Family::Emax => vec![
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(0.5..10.0),
            ],
            Family::SigmoidEmax | Family::SigmoidEmaxLiteral => vec![
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(0.0..10.0),
                rng.random_range(0.5..5.0),
            ],
            Family::Exp3 => vec![
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(0.1..2.0),
            ],
            Family::Exp4 => vec![
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(0.1..2.0),
                rng.random_range(0.5..2.5),
            ],
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for f in Family::ALL {
            for _ in 0..100 {
                let theta = random_theta(&mut rng, f);
                let x: f64 = rng.random_range(0.05..10.0);
                let mut g = vec![0.0; f.dim()];
                f.gradient(x, &theta, &mut g).unwrap();
                for k in 0..f.dim() {
                    let h = 1e-6 * (1.0 + theta[k].abs());
                    let mut tp = theta.clone();
                    let mut tm = theta.clone();
                    tp[k] += h;
                    tm[k] -= h;
                    let fd = (f.value(x, &tp).unwrap() - f.value(x, &tm).unwrap()) / (2.0 * h);
                    let scale = fd.abs().max(g[k].abs()).max(1e-3);
                    assert!(
                        (fd - g[k]).abs() / scale < 1e-5,
                        "{f:?} coord {k}: analytic {} vs fd {fd} at x={x} theta={theta:?}",
                        g[k]
                    );
                }
            }
        }
    }

    #[test]
    fn exact_quadratic_fit_recovers_parameters() {
        let theta = [60.0, 7.0 / 2250.0, 600.0];
        let pts = [0.0, 100.0, 250.0, 500.0];
        let w = [0.25; 4];
        let target: Vec<f64> = pts
            .iter()
            .map(|&x| Family::Quadratic.value(x, &theta).unwrap())
            .collect();
        let fit = Family::Quadratic.exact_fit(&pts, &w, &target).unwrap();
        for (a, b) in fit.iter().zip(&theta) {
            assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()), "{fit:?}");
        }
    }

    #[test]
    fn eval_is_deterministic() {
        let s = model(Family::Exp4, &[2.0, 1.0, 0.8, 1.5]);
        let a = s.eval(3.3, &[2.0, 1.0, 0.8, 1.5]).unwrap();
        let b = s.eval(3.3, &[2.0, 1.0, 0.8, 1.5]).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn param_space_validation() {
        assert!(ParamSpace::new(vec![], vec![]).is_err());
        assert!(ParamSpace::new(vec![1.0], vec![1.0]).is_err());
        assert!(ParamSpace::new(vec![0.0, 1.0], vec![1.0]).is_err());
        let b = ParamSpace::around(&[2.0, 0.0, -1.0]).unwrap();
        assert_eq!(b.lower(), &[-18.0, -10.0, -11.0]);
        assert_eq!(b.upper(), &[22.0, 10.0, 9.0]);
    }

    #[test]
    fn family_ids_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.id().parse::<Family>().unwrap(), f);
        }
        assert!("cubic".parse::<Family>().is_err());
    }
}
