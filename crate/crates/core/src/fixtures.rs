//! Built-in models, random scenario trees and random processes shared by the
//! verification harness and the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::axioms::random_simplex;
use crate::model::{load_model, random_model, MdpModel, Policy};
use crate::nested::{AdaptedProcess, ScenarioTree};
use crate::risk::RiskSpec;

pub const TWO_STATE_DOC: &str = r#"{
  "gamma": 0.5,
  "risk": "worst-case",
  "states": ["s0", "s1"],
  "actions": {"s0": ["a"], "s1": ["a"]},
  "rewards": {"s0": {"a": 1.0}, "s1": {"a": 0.0}},
  "transitions": {
    "s0": {"a": [["s0", 0.5], ["s1", 0.5]]},
    "s1": {"a": [["s1", 1.0]]}
  }
}
"#;

pub fn two_state(risk: RiskSpec) -> MdpModel {
    load_model(TWO_STATE_DOC).expect("fixture is valid").with_risk(risk)
}

/// The two-state model with an extra action `b` at `s0`: reward 0.9, self-loop.
pub fn two_state_with_b(risk: RiskSpec) -> MdpModel {
    let doc = TWO_STATE_DOC
        .replace(r#""s0": ["a"]"#, r#""s0": ["a", "b"]"#)
        .replace(r#""s0": {"a": 1.0}"#, r#""s0": {"a": 1.0, "b": 0.9}"#)
        .replace(
            r#""s0": {"a": [["s0", 0.5], ["s1", 0.5]]}"#,
            r#""s0": {"a": [["s0", 0.5], ["s1", 0.5]], "b": [["s0", 1.0]]}"#,
        );
    load_model(&doc).expect("fixture is valid").with_risk(risk)
}

/// The fixed model corpus used by the harness: hand-built instances plus a
/// spread of seeded random ones across discount factors.
pub fn fixture_models(risk: RiskSpec) -> Vec<(String, MdpModel)> {
    let mut out = vec![
        ("two-state".to_string(), two_state(risk)),
        ("two-state-b".to_string(), two_state_with_b(risk)),
    ];
    let params: [(usize, usize, usize, f64, u64); 5] = [
        (1, 1, 1, 0.5, 7),
        (3, 2, 2, 0.9, 2),
        (5, 2, 3, 0.9, 1),
        (6, 2, 2, 0.95, 3),
        (8, 3, 3, 0.99, 5),
    ];
    for (n, a, b, gamma, seed) in params {
        let m = random_model(n, a, b, gamma, seed).expect("parameters in range");
        out.push((format!("random({n},{a},{b},{gamma},{seed})"), m.with_risk(risk)));
    }
    out
}

/// A random tree of exactly `depth` levels; each internal node gets between
/// 1 and `max_branching` children with random simplex probabilities.
pub fn random_tree<R: Rng>(rng: &mut R, depth: usize, max_branching: usize) -> ScenarioTree {
    let mut parents = vec![None];
    let mut probs = vec![1.0];
    let mut frontier = vec![0usize];
    for _ in 0..depth {
        let mut next = Vec::new();
        for &node in &frontier {
            let k = rng.random_range(1..=max_branching);
            for p in random_simplex(rng, k) {
                next.push(parents.len());
                parents.push(Some(node));
                probs.push(p);
            }
        }
        frontier = next;
    }
    ScenarioTree::from_parents(&parents, &probs).expect("generated tree is valid")
}

/// Non-increasing process: the root draws from `[0, 10]` and every edge
/// subtracts a non-negative amount.
pub fn random_non_increasing<R: Rng>(rng: &mut R, tree: &ScenarioTree) -> AdaptedProcess {
    let mut values = vec![0.0; tree.len()];
    for (i, node) in tree.nodes().iter().enumerate() {
        values[i] = match node.parent {
            None => rng.random_range(0.0..10.0),
            Some(p) => values[p] - rng.random_range(0.0..2.0),
        };
    }
    AdaptedProcess::new(tree, values).expect("finite values")
}

/// Non-decreasing process whose step `t → t+1` increments lie in
/// `[0, eps[t]]`. Returns the process and `eps`.
pub fn random_increment_bounded<R: Rng>(
    rng: &mut R,
    tree: &ScenarioTree,
) -> (AdaptedProcess, Vec<f64>) {
    let decay: f64 = rng.random_range(0.3..0.95);
    let scale: f64 = rng.random_range(0.5..3.0);
    let eps: Vec<f64> = (0..tree.depth()).map(|t| scale * decay.powi(t as i32)).collect();
    let mut values = vec![0.0; tree.len()];
    for (i, node) in tree.nodes().iter().enumerate() {
        values[i] = match node.parent {
            None => rng.random_range(-5.0..5.0),
            Some(p) => {
                let bound = eps[tree.nodes()[p].depth];
                values[p] + rng.random_range(0.0..=1.0) * bound
            }
        };
    }
    (AdaptedProcess::new(tree, values).expect("finite values"), eps)
}

/// Unrolls `policy` from `start` for `horizon` steps. Node values are the
/// cumulative discounted reward `Σ_{τ≤t} γ^τ r(s_τ, a_τ)`; the returned
/// increment bounds are `ε_t = γ^t · r_max`.
pub fn rollout_tree(
    model: &MdpModel,
    policy: &Policy,
    start: usize,
    horizon: usize,
) -> (ScenarioTree, AdaptedProcess, Vec<f64>) {
    let gamma = model.gamma();
    let mut parents = vec![None];
    let mut probs = vec![1.0];
    let mut states = vec![start];
    let mut values = vec![model.reward(start, policy.action(start))];
    let mut frontier = vec![0usize];
    for t in 1..=horizon {
        let discount = gamma.powi(t as i32);
        let mut next = Vec::new();
        for &node in &frontier {
            let s = states[node];
            for &(s2, p) in model.transition(s, policy.action(s)) {
                next.push(parents.len());
                parents.push(Some(node));
                probs.push(p);
                states.push(s2);
                values.push(values[node] + discount * model.reward(s2, policy.action(s2)));
            }
        }
        frontier = next;
    }
    let tree = ScenarioTree::from_parents(&parents, &probs).expect("rows are distributions");
    let process = AdaptedProcess::new(&tree, values).expect("finite values");
    let eps = (0..horizon)
        .map(|t| gamma.powi(t as i32) * model.r_max())
        .collect();
    (tree, process, eps)
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
