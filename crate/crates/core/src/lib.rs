//! Optimal designs for discriminating between several regression models.
//!
//! The central quantity is the criterion `T_P(ξ)`: the weighted sum, over
//! ordered pairs of models, of the smallest weighted squared distance between a
//! fixed model and the best-fitting member of a rival class. Designs that
//! maximise it are found with a support-exchange method whose inner weight
//! step solves a linearised quadratic program.

pub mod cli;
pub mod config;
pub mod criterion;
pub mod design;
pub mod error;
pub mod expr;
mod linalg;
pub mod model;
pub mod nls;
pub mod solver;
pub mod weights;

pub use criterion::{ComparisonProblem, CriterionEval, DiscretePrior, InnerOptions, NominalParams};
pub use design::{Design, Interval};
pub use error::{Error, Result};
pub use model::{Family, Model, ParamSpace};
pub use solver::{solve, solve_af, AlphaRule, SolveOptions, SolveReport};
