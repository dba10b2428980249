//! Finite discrete distributions and coherent risk measures given by a
//! deterministic risk envelope.
//!
//! A risk measure `σ` acts on the law of a loss-like variable and is the
//! supremum of `∫ q(u) Q(u) du` over densities `Q` in its envelope, where `q`
//! is the quantile function. For the four shipped families this supremum has
//! a closed form:
//!
//! * `Expectation`: envelope `{1}`, the probability-weighted mean.
//! * `CVaR(α)`: envelope `{0 ≤ Q ≤ 1/α, ∫Q = 1}`, the mean of the upper
//!   α-tail.
//! * `MeanCVaR(λ, α)`: `λ·E + (1−λ)·CVaR_α`.
//! * `WorstCase`: all densities, the maximum of the support.
//!
//! The reward-side functional `ς(Z) = −σ(−Z)` is [`RiskSpec::varsigma`].

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Absolute tolerance on the total probability mass of a distribution.
pub const PROB_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("distribution has no atoms")]
    Empty,
    #[error("atom {index}: probability {prob} is not a finite positive number")]
    BadProbability { index: usize, prob: f64 },
    #[error("atom {index}: value {value} is not finite")]
    BadValue { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, expected 1 within {PROB_SUM_TOL:e}")]
    ProbabilitySum { sum: f64 },
}

/// One outcome of a [`DiscreteDistribution`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub value: f64,
    pub prob: f64,
}

/// A validated finite distribution. Atoms keep insertion order and equal
/// values are never merged.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    atoms: Vec<Atom>,
}

impl DiscreteDistribution {
    pub fn new<I>(pairs: I) -> Result<Self, DistributionError>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let atoms: Vec<Atom> = pairs
            .into_iter()
            .map(|(value, prob)| Atom { value, prob })
            .collect();
        if atoms.is_empty() {
            return Err(DistributionError::Empty);
        }
        for (index, atom) in atoms.iter().enumerate() {
            if !(atom.prob.is_finite() && atom.prob > 0.0) {
                return Err(DistributionError::BadProbability {
                    index,
                    prob: atom.prob,
                });
            }
            if !atom.value.is_finite() {
                return Err(DistributionError::BadValue {
                    index,
                    value: atom.value,
                });
            }
        }
        let sum: f64 = atoms.iter().map(|a| a.prob).sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(DistributionError::ProbabilitySum { sum });
        }
        Ok(Self { atoms })
    }

    /// Builds a distribution from atoms the caller has already validated
    /// (e.g. a checked transition row).
    pub(crate) fn from_trusted(atoms: Vec<Atom>) -> Self {
        debug_assert!(!atoms.is_empty());
        Self { atoms }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// The law of `−X`.
    pub fn negate(&self) -> Self {
        Self {
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    value: -a.value,
                    prob: a.prob,
                })
                .collect(),
        }
    }

    pub fn support_bounds(&self) -> SupportBounds {
        let (lo, hi) = self
            .atoms
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| {
                (lo.min(a.value), hi.max(a.value))
            });
        SupportBounds { lo, hi }
    }

    /// Atoms stably sorted by descending value. This is the fixed summation
    /// order of every risk evaluation.
    fn descending(&self) -> Vec<Atom> {
        let mut sorted = self.atoms.clone();
        sorted.sort_by(|a, b| b.value.partial_cmp(&a.value).unwrap_or(Ordering::Equal));
        sorted
    }
}

/// Essential infimum and supremum of a finite distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportBounds {
    pub lo: f64,
    pub hi: f64,
}

impl SupportBounds {
    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lo - tol && x <= self.hi + tol
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiskSpecError {
    #[error("unrecognised risk spec `{0}` (expected expectation | cvar:<alpha> | mean-cvar:<lambda>:<alpha> | worst-case)")]
    Syntax(String),
    #[error("alpha must lie in (0, 1], got {0}")]
    Alpha(f64),
    #[error("lambda must lie in [0, 1], got {0}")]
    Lambda(f64),
}

/// A coherent risk measure identified by its envelope family.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum RiskSpec {
    #[default]
    Expectation,
    Cvar { alpha: f64 },
    MeanCvar { lambda: f64, alpha: f64 },
    WorstCase,
}

fn check_alpha(alpha: f64) -> Result<(), RiskSpecError> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(RiskSpecError::Alpha(alpha))
    }
}

fn check_lambda(lambda: f64) -> Result<(), RiskSpecError> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(RiskSpecError::Lambda(lambda))
    }
}

impl RiskSpec {
    pub fn cvar(alpha: f64) -> Result<Self, RiskSpecError> {
        check_alpha(alpha)?;
        Ok(RiskSpec::Cvar { alpha })
    }

    pub fn mean_cvar(lambda: f64, alpha: f64) -> Result<Self, RiskSpecError> {
        check_lambda(lambda)?;
        check_alpha(alpha)?;
        Ok(RiskSpec::MeanCvar { lambda, alpha })
    }

    pub fn validate(&self) -> Result<(), RiskSpecError> {
        match *self {
            RiskSpec::Expectation | RiskSpec::WorstCase => Ok(()),
            RiskSpec::Cvar { alpha } => check_alpha(alpha),
            RiskSpec::MeanCvar { lambda, alpha } => {
                check_lambda(lambda)?;
                check_alpha(alpha)
            }
        }
    }

    /// `σ(X)`: the supremum of `E[XQ]` over the envelope, evaluated in
    /// closed form. The result always lies within the support of `dist`.
    pub fn sigma(&self, dist: &DiscreteDistribution) -> f64 {
        let sorted = dist.descending();
        let raw = match *self {
            RiskSpec::Expectation => weighted_mean(&sorted),
            RiskSpec::Cvar { alpha } => upper_tail_mean(&sorted, alpha),
            RiskSpec::MeanCvar { lambda, alpha } => {
                lambda * weighted_mean(&sorted) + (1.0 - lambda) * upper_tail_mean(&sorted, alpha)
            }
            RiskSpec::WorstCase => sorted[0].value,
        };
        // Rounding in the tail division can leave the result a few ulps
        // outside the support.
        let hi = sorted[0].value;
        let lo = sorted[sorted.len() - 1].value;
        raw.clamp(lo, hi)
    }

    /// `ς(Z) = −σ(−Z)`, the certainty equivalent of a reward distribution.
    pub fn varsigma(&self, dist: &DiscreteDistribution) -> f64 {
        -self.sigma(&dist.negate())
    }
}

fn weighted_mean(sorted: &[Atom]) -> f64 {
    sorted.iter().map(|a| a.prob * a.value).sum()
}

/// Greedy solution of the CVaR envelope problem: put density `1/α` on the
/// largest values until mass `α` is used, splitting the boundary atom.
fn upper_tail_mean(sorted: &[Atom], alpha: f64) -> f64 {
    let mut remaining = alpha;
    let mut acc = 0.0;
    for atom in sorted {
        if remaining <= 0.0 {
            break;
        }
        let take = atom.prob.min(remaining);
        acc += take * atom.value;
        remaining -= take;
    }
    acc / alpha
}

impl fmt::Display for RiskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RiskSpec::Expectation => write!(f, "expectation"),
            RiskSpec::Cvar { alpha } => write!(f, "cvar:{alpha}"),
            RiskSpec::MeanCvar { lambda, alpha } => write!(f, "mean-cvar:{lambda}:{alpha}"),
            RiskSpec::WorstCase => write!(f, "worst-case"),
        }
    }
}

fn parse_decimal(s: &str, whole: &str) -> Result<f64, RiskSpecError> {
    let ok = !s.is_empty()
        && s.chars().all(|c| c.is_ascii_digit() || c == '.')
        && s.chars().filter(|&c| c == '.').count() <= 1
        && s.chars().any(|c| c.is_ascii_digit());
    if !ok {
        return Err(RiskSpecError::Syntax(whole.to_string()));
    }
    s.parse()
        .map_err(|_| RiskSpecError::Syntax(whole.to_string()))
}

impl FromStr for RiskSpec {
    type Err = RiskSpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["expectation"] => Ok(RiskSpec::Expectation),
            ["worst-case"] => Ok(RiskSpec::WorstCase),
            ["cvar", alpha] => RiskSpec::cvar(parse_decimal(alpha, s)?),
            ["mean-cvar", lambda, alpha] => {
                RiskSpec::mean_cvar(parse_decimal(lambda, s)?, parse_decimal(alpha, s)?)
            }
            _ => Err(RiskSpecError::Syntax(s.to_string())),
        }
    }
}

impl Serialize for RiskSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RiskSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
