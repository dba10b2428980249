//! Randomised checks of the coherence axioms and support-boundedness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::risk::{DiscreteDistribution, RiskSpec};

pub const AXIOM_TOL: f64 = 1e-9;

pub const MAX_ATOMS: usize = 20;

/// A shared sample space: probabilities plus two value vectors on the same atoms.
#[derive(Debug, Clone)]
pub struct PairedSample {
    pub probs: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl PairedSample {
    pub fn law(&self, values: &[f64]) -> DiscreteDistribution {
        DiscreteDistribution::new(values.iter().copied().zip(self.probs.iter().copied()))
            .expect("sampled probabilities are normalised")
    }
}

/// Positive weights summing to one, drawn uniformly from the simplex.
pub fn random_simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n)
        .map(|_| {
            let e: f64 = Exp1.sample(rng);
            e.max(1e-12)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

pub fn random_sample<R: Rng>(rng: &mut R, max_atoms: usize) -> PairedSample {
    let n = rng.random_range(1..=max_atoms);
    let probs = random_simplex(rng, n);
    let x = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
    let y = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
    PairedSample { probs, x, y }
}

#[derive(Debug, Clone, Serialize)]
pub struct AxiomOutcome {
    pub axiom: &'static str,
    pub passed: bool,
    /// Smallest margin observed; negative beyond the tolerance means violation.
    pub worst_slack: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AxiomReport {
    pub risk: RiskSpec,
    pub trials: usize,
    pub seed: u64,
    pub outcomes: Vec<AxiomOutcome>,
}

impl AxiomReport {
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }
}

struct Tally {
    axiom: &'static str,
    worst: f64,
}

impl Tally {
    fn new(axiom: &'static str) -> Self {
        Self {
            axiom,
            worst: f64::INFINITY,
        }
    }

    fn margin(&mut self, m: f64) {
        self.worst = self.worst.min(m);
    }

    fn finish(self) -> AxiomOutcome {
        AxiomOutcome {
            axiom: self.axiom,
            passed: self.worst >= -AXIOM_TOL,
            worst_slack: self.worst,
        }
    }
}

/// Runs monotonicity, sub-additivity, translation invariance, positive
/// homogeneity and support-boundedness on `trials` seeded random samples.
pub fn check_axioms(spec: RiskSpec, trials: usize, seed: u64) -> AxiomReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mono = Tally::new("monotonicity");
    let mut subadd = Tally::new("sub-additivity");
    let mut trans = Tally::new("translation-invariance");
    let mut homog = Tally::new("positive-homogeneity");
    let mut bounded = Tally::new("support-boundedness");

    for _ in 0..trials {
        let sample = random_sample(&mut rng, MAX_ATOMS);
        let sx = spec.sigma(&sample.law(&sample.x));

        let lower: Vec<f64> = sample
            .x
            .iter()
            .map(|&v| v - rng.random_range(0.0..5.0))
            .collect();
        mono.margin(sx - spec.sigma(&sample.law(&lower)));

        let sum: Vec<f64> = sample.x.iter().zip(&sample.y).map(|(a, b)| a + b).collect();
        let sy = spec.sigma(&sample.law(&sample.y));
        subadd.margin(sx + sy - spec.sigma(&sample.law(&sum)));

        let c: f64 = rng.random_range(-10.0..10.0);
        let shifted: Vec<f64> = sample.x.iter().map(|v| v + c).collect();
        trans.margin(-(spec.sigma(&sample.law(&shifted)) - (sx + c)).abs());

        let lambda: f64 = rng.random_range(0.0..5.0);
        let scaled: Vec<f64> = sample.x.iter().map(|v| lambda * v).collect();
        homog.margin(-(spec.sigma(&sample.law(&scaled)) - lambda * sx).abs());

        let lo = sample.x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = sample.x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        bounded.margin((sx - lo).min(hi - sx));
    }

    AxiomReport {
        risk: spec,
        trials,
        seed,
        outcomes: vec![
            mono.finish(),
            subadd.finish(),
            trans.finish(),
            homog.finish(),
            bounded.finish(),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_family_passes() {
        for spec in [
            RiskSpec::Expectation,
            RiskSpec::cvar(0.25).unwrap(),
            RiskSpec::mean_cvar(0.3, 0.1).unwrap(),
            RiskSpec::WorstCase,
        ] {
            let report = check_axioms(spec, 300, 9);
            assert!(report.all_passed(), "{report:?}");
            assert_eq!(report.outcomes.len(), 5);
        }
    }

    #[test]
    fn seeded_runs_repeat() {
        let a = check_axioms(RiskSpec::cvar(0.5).unwrap(), 50, 3);
        let b = check_axioms(RiskSpec::cvar(0.5).unwrap(), 50, 3);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn simplex_points_are_normalised() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..30 {
            let w = random_simplex(&mut rng, n);
            assert!(w.iter().all(|&p| p > 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
