use std::fmt;

use serde::{Deserialize, Serialize};

use crate::acquisition::UncertaintyTerm;
use crate::error::{Error, Result};
use crate::pdp::DEFAULT_ALPHA;

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

/// Proposal strategy of a run.
///
/// Interleaving strategies count post-initial-design iterations `T` from the
/// run's counter origin (0 by default), so `Bobax` leads with an
/// information-gain step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategySpec {
    /// Uniform random search.
    Rs,
    /// Expected improvement every iteration.
    BoEi,
    /// Posterior variance (pure exploration).
    Pvar,
    /// `−μ + τ·σ²` confidence bound.
    Lcb {
        tau: f64,
        #[serde(default)]
        term: UncertaintyTerm,
    },
    /// Path information gain every iteration.
    Bax,
    /// Information gain when `T mod k = 0`, expected improvement otherwise.
    Bobax { k: u64 },
    /// A uniform random point on every `k`-th iteration (`(T + 1) mod k = 0`),
    /// expected improvement otherwise.
    BoRs { k: u64 },
    /// Information gain with probability `π`, expected improvement otherwise.
    /// With `anneal`, `π` decays linearly to zero over the run.
    BobaxProb {
        pi: f64,
        #[serde(default)]
        anneal: bool,
    },
    /// Expected improvement times min-max scaled information gain to the
    /// power `β/T`.
    Eibax { beta: f64 },
    /// `Bobax { k }` until the mean confidence half-width of the tracked
    /// partial dependence estimates drops to `tolerance`, then pure expected
    /// improvement.
    ABobax {
        k: u64,
        tolerance: f64,
        #[serde(default = "default_alpha")]
        alpha: f64,
        /// Re-check the constraint in the second phase and fall back to the
        /// first when it is violated again.
        #[serde(default)]
        reentrant: bool,
    },
}

impl StrategySpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        match *self {
            StrategySpec::Lcb { tau, .. } if !(tau >= 0.0 && tau.is_finite()) => bad(format!("LCB needs tau >= 0, got {tau}")),
            StrategySpec::Bobax { k } | StrategySpec::BoRs { k } if k == 0 => bad("interleaving period k must be >= 1".into()),
            StrategySpec::BobaxProb { pi, .. } if !(0.0..=1.0).contains(&pi) => bad(format!("probability pi must lie in [0, 1], got {pi}")),
            StrategySpec::Eibax { beta } if !(beta > 0.0 && beta.is_finite()) => bad(format!("EIBAX needs beta > 0, got {beta}")),
            StrategySpec::ABobax { k, tolerance, alpha, .. } => {
                if k == 0 {
                    bad("interleaving period k must be >= 1".into())
                } else if !(tolerance > 0.0 && tolerance.is_finite()) {
                    bad(format!("tolerance must be positive, got {tolerance}"))
                } else if !(alpha > 0.0 && alpha < 1.0) {
                    bad(format!("alpha must lie in (0, 1), got {alpha}"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Whether the strategy ever scores the path information gain.
    pub fn uses_eig(&self) -> bool {
        !matches!(self, StrategySpec::Rs | StrategySpec::BoEi | StrategySpec::Pvar | StrategySpec::Lcb { .. } | StrategySpec::BoRs { .. })
    }

    /// Short display name, e.g. `BOBAX^2`.
    pub fn label(&self) -> String {
        match self {
            StrategySpec::Rs => "RS".into(),
            StrategySpec::BoEi => "BO-EI".into(),
            StrategySpec::Pvar => "PVAR".into(),
            StrategySpec::Lcb { tau, term: UncertaintyTerm::Variance } => format!("LCB^{tau}"),
            StrategySpec::Lcb { tau, term: UncertaintyTerm::StdDev } => format!("LCB-sd^{tau}"),
            StrategySpec::Bax => "BAX".into(),
            StrategySpec::Bobax { k } => format!("BOBAX^{k}"),
            StrategySpec::BoRs { k } => format!("BO-RS^{k}"),
            StrategySpec::BobaxProb { pi, anneal: false } => format!("BOBAX_prob^{pi}"),
            StrategySpec::BobaxProb { pi, anneal: true } => format!("BOBAX_prob-anneal^{pi}"),
            StrategySpec::Eibax { beta } => format!("EIBAX^{beta}"),
            StrategySpec::ABobax { k, .. } => format!("a-BOBAX^{k}"),
        }
    }

    /// Label reduced to characters that are safe in file names.
    pub fn file_label(&self) -> String {
        sanitize(&self.label())
    }
}

pub(crate) fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Which acquisition produced a configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    Init,
    Random,
    Ei,
    Eig,
    Variance,
    Lcb,
    Eibax,
}

impl ProposalKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProposalKind::Init => "init",
            ProposalKind::Random => "random",
            ProposalKind::Ei => "ei",
            ProposalKind::Eig => "eig",
            ProposalKind::Variance => "variance",
            ProposalKind::Lcb => "lcb",
            ProposalKind::Eibax => "eibax",
        }
    }
}
