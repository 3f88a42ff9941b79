//! Gaussian-process Bayesian optimization that also learns partial
//! dependence.
//!
//! A run alternates between expected-improvement steps, which chase the
//! optimum, and information-gain steps, which target the execution path of a
//! Monte-Carlo partial dependence estimator. The same surrogate then yields
//! the partial dependence curves together with pointwise credible intervals.
//!
//! Configurations live in two coordinate systems: the *external* one the
//! objective is evaluated in, and the *internal* unit cube the surrogate,
//! grids and candidate sets use. [`space::SearchSpace`] maps between them.
//!
//! ```
//! use bobax::objectives::synthetic_by_name;
//! use bobax::optimizer::{run, RunConfig, StrategySpec};
//!
//! let branin = synthetic_by_name("branin").unwrap();
//! let mut cfg = RunConfig::new(StrategySpec::Bobax { k: 2 }, 2, 7);
//! cfg.budget = 8;
//! cfg.n_candidates = 100;
//! let result = run(branin.as_ref(), &cfg).unwrap();
//! assert_eq!(result.archive.len(), 8);
//! assert_eq!(result.trace.len(), 5);
//! ```

pub mod acquisition;
pub mod archive;
pub mod bench;
pub mod error;
pub mod gp;
pub mod objectives;
pub mod optimizer;
pub mod pdp;
pub mod rng;
pub mod space;
pub mod stats;

pub use nalgebra;

pub use archive::Archive;
pub use error::{Error, Result};
pub use gp::{GpModel, KernelParams};
pub use objectives::Objective;
pub use space::SearchSpace;
