//! Risk-averse discounted dynamic programming on finite MDPs, where the
//! one-step expectation of the Bellman equation is replaced by a coherent
//! risk measure defined through a fixed risk envelope.
//!
//! * [`risk`]: discrete distributions and the envelope families.
//! * [`axioms`]: randomised coherence checks.
//! * [`nested`]: nested risk measures on scenario trees.
//! * [`model`]: MDP instances, file format and generator.
//! * [`solver`]: Bellman operator, value iteration, contraction harness.
//! * [`oracles`]: independent brute-force baselines.
//! * [`verify`]: the aggregated verification run.
//! * [`cli`]: the `riskdp` command line.

pub mod axioms;
pub mod cli;
pub mod fixtures;
pub mod model;
pub mod nested;
pub mod oracles;
pub mod risk;
pub mod solver;
pub mod verify;

pub use model::{load_model, random_model, MdpModel, Policy, ValueFunction};
pub use nested::{AdaptedProcess, ScenarioTree};
pub use risk::{DiscreteDistribution, RiskSpec, SupportBounds};
pub use solver::{bellman_apply, extract_policy, value_iteration, SolveReport};
