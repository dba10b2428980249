//! Brute-force baselines for the primary algorithms.
//!
//! Nothing here calls the evaluation code in `risk`, `nested` or `solver`;
//! only the data types are shared. Risk measures are recomputed from the
//! ascending quantile function, nested values by explicit level-by-level
//! folds, and the control objective by enumerating stationary policies.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{MdpModel, Policy, ValueFunction};
use crate::nested::{AdaptedProcess, ScenarioTree};
use crate::risk::{DiscreteDistribution, RiskSpec};

/// Node budget for policy enumeration.
pub const ENUMERATION_BUDGET: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("enumeration needs {needed} nodes, budget is {budget}")]
    SizeLimit { needed: usize, budget: usize },
    #[error("classical value iteration did not converge within {0} sweeps")]
    NoConvergence(usize),
}

/// Ascending `(value, right end of its quantile interval)` pairs.
fn quantile_steps(atoms: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut sorted = atoms.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
    let mut cum = 0.0;
    let mut steps: Vec<(f64, f64)> = sorted
        .iter()
        .map(|&(v, p)| {
            cum += p;
            (v, cum)
        })
        .collect();
    if let Some(last) = steps.last_mut() {
        last.1 = 1.0;
    }
    steps
}

fn pairs(dist: &DiscreteDistribution) -> Vec<(f64, f64)> {
    dist.atoms().iter().map(|a| (a.value, a.prob)).collect()
}

/// Midpoint-rule average of `q(u)` over the grid cells whose midpoint lies
/// in `(lo, 1]`. The cell count inside each quantile step is computed in
/// closed form, which equals summing `q` at every midpoint.
fn midpoint_tail_mean(steps: &[(f64, f64)], lo: f64, grid: usize) -> f64 {
    let n = grid as f64;
    // number of midpoints (k + 1/2)/n that are <= x
    let below = |x: f64| -> f64 { ((x * n - 0.5).floor() + 1.0).clamp(0.0, n) };
    let start = below(lo);
    let mut prev = start;
    let mut acc = 0.0;
    for (i, &(v, right)) in steps.iter().enumerate() {
        let upto = if i + 1 == steps.len() { n } else { below(right).max(start) };
        acc += (upto - prev).max(0.0) * v;
        prev = prev.max(upto);
    }
    acc / (n - start)
}

/// Same average, but literally visiting every grid midpoint.
pub fn midpoint_tail_mean_slow(dist: &DiscreteDistribution, lo: f64, grid: usize) -> f64 {
    let steps = quantile_steps(&pairs(dist));
    let mut acc = 0.0;
    let mut cells = 0usize;
    let mut i = 0;
    for k in 0..grid {
        let u = (k as f64 + 0.5) / grid as f64;
        while i + 1 < steps.len() && steps[i].1 < u {
            i += 1;
        }
        if u > lo {
            acc += steps[i].0;
            cells += 1;
        }
    }
    acc / cells as f64
}

/// Grid evaluation of the quantile integral that defines each risk family.
pub fn oracle_sigma_grid(spec: &RiskSpec, dist: &DiscreteDistribution, grid: usize) -> f64 {
    let steps = quantile_steps(&pairs(dist));
    let tail = |alpha: f64| midpoint_tail_mean(&steps, 1.0 - alpha, grid);
    match *spec {
        RiskSpec::Expectation => tail(1.0),
        RiskSpec::Cvar { alpha } => tail(alpha),
        RiskSpec::MeanCvar { lambda, alpha } => lambda * tail(1.0) + (1.0 - lambda) * tail(alpha),
        RiskSpec::WorstCase => steps[steps.len() - 1].0,
    }
}

/// Exact mean of the step quantile function over `(1 − α, 1]`: each step
/// contributes its value times its overlap with the tail.
fn exact_tail_mean(steps: &[(f64, f64)], alpha: f64) -> f64 {
    let lo = 1.0 - alpha;
    let mut left: f64 = 0.0;
    let mut acc = 0.0;
    let mut length = 0.0;
    for &(v, right) in steps {
        let overlap = right - left.max(lo);
        if overlap > 0.0 {
            acc += v * overlap;
            length += overlap;
        }
        left = right;
    }
    acc / length
}

/// Exact quantile-integral evaluation on raw `(value, prob)` pairs.
pub fn oracle_sigma_exact(spec: &RiskSpec, atoms: &[(f64, f64)]) -> f64 {
    let mean = || atoms.iter().map(|(v, p)| v * p).sum::<f64>();
    match *spec {
        RiskSpec::Expectation => mean(),
        RiskSpec::Cvar { alpha } => exact_tail_mean(&quantile_steps(atoms), alpha),
        RiskSpec::MeanCvar { lambda, alpha } => {
            lambda * mean() + (1.0 - lambda) * exact_tail_mean(&quantile_steps(atoms), alpha)
        }
        RiskSpec::WorstCase => atoms.iter().map(|a| a.0).fold(f64::NEG_INFINITY, f64::max),
    }
}

fn oracle_varsigma_exact(spec: &RiskSpec, atoms: &[(f64, f64)]) -> f64 {
    let negated: Vec<(f64, f64)> = atoms.iter().map(|&(v, p)| (-v, p)).collect();
    -oracle_sigma_exact(spec, &negated)
}

/// Nested risk of the depth-`t` slice, folded level by level from the
/// leaves: at each level the conditional laws are rebuilt from parent
/// pointers.
pub fn oracle_nested_paths(
    tree: &ScenarioTree,
    process: &AdaptedProcess,
    spec: &RiskSpec,
    t: usize,
) -> f64 {
    let nodes = tree.nodes();
    let mut level: BTreeMap<usize, f64> = nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.depth == t)
        .map(|(i, _)| (i, process.values()[i]))
        .collect();
    for _ in 0..t {
        let mut grouped: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
        for (&node, &value) in &level {
            let parent = nodes[node].parent.expect("non-root node");
            grouped.entry(parent).or_default().push((value, nodes[node].prob));
        }
        level = grouped
            .into_iter()
            .map(|(parent, law)| (parent, oracle_sigma_exact(spec, &law)))
            .collect();
    }
    level[&0]
}

/// Path-probability-weighted mean of the depth-`t` slice.
pub fn oracle_path_expectation(tree: &ScenarioTree, process: &AdaptedProcess, t: usize) -> f64 {
    let nodes = tree.nodes();
    let mut path_prob = vec![0.0; nodes.len()];
    let mut total = 0.0;
    for (i, node) in nodes.iter().enumerate() {
        path_prob[i] = match node.parent {
            None => 1.0,
            Some(p) => path_prob[p] * node.prob,
        };
        if node.depth == t {
            total += path_prob[i] * process.values()[i];
        }
    }
    total
}

/// Risk-neutral value iteration written directly against the model data.
pub fn oracle_classical_vi(model: &MdpModel, theta: f64) -> Result<ValueFunction, OracleError> {
    const MAX_SWEEPS: usize = 10_000_000;
    let n = model.n_states();
    let gamma = model.gamma();
    let mut v = vec![0.0; n];
    for _ in 0..MAX_SWEEPS {
        let mut next = vec![0.0; n];
        for (s, slot) in next.iter_mut().enumerate() {
            *slot = (0..model.actions(s).len())
                .map(|a| {
                    let ev: f64 = model.transition(s, a).iter().map(|&(s2, p)| p * v[s2]).sum();
                    model.reward(s, a) + gamma * ev
                })
                .fold(f64::NEG_INFINITY, f64::max);
        }
        let diff = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if diff <= theta {
            return Ok(ValueFunction::new(v));
        }
    }
    Err(OracleError::NoConvergence(MAX_SWEEPS))
}

/// Smallest horizon `h` with `γ^{h+1} · r_max / (1 − γ) ≤ tol`.
pub fn horizon_for_tolerance(gamma: f64, r_max: f64, tol: f64) -> usize {
    let mut h = 0;
    while gamma.powi(h as i32 + 1) * r_max / (1.0 - gamma) > tol {
        h += 1;
    }
    h
}

pub fn truncation_tail(gamma: f64, r_max: f64, horizon: usize) -> f64 {
    gamma.powi(horizon as i32 + 1) * r_max / (1.0 - gamma)
}

fn policy_count(model: &MdpModel) -> usize {
    (0..model.n_states())
        .map(|s| model.actions(s).len())
        .fold(1usize, |acc, k| acc.saturating_mul(k))
}

/// Mixed-radix decoding with state 0 as the least significant digit.
fn decode_policy(model: &MdpModel, mut index: usize) -> Vec<usize> {
    (0..model.n_states())
        .map(|s| {
            let k = model.actions(s).len();
            let a = index % k;
            index /= k;
            a
        })
        .collect()
}

/// Explicit scenario tree of a policy from `start`, cumulative discounted
/// reward at each node, folded as `−ρ(−Z)`.
fn explicit_tree_value(model: &MdpModel, choice: &[usize], start: usize, horizon: usize) -> f64 {
    struct Node {
        state: usize,
        prob: f64,
        cumulative: f64,
        children: std::ops::Range<usize>,
    }
    let gamma = model.gamma();
    let mut nodes = vec![Node {
        state: start,
        prob: 1.0,
        cumulative: model.reward(start, choice[start]),
        children: 0..0,
    }];
    let mut frontier = 0..1;
    for t in 1..=horizon {
        let discount = gamma.powi(t as i32);
        let begin = nodes.len();
        for i in frontier.clone() {
            let first = nodes.len();
            let (state, base) = (nodes[i].state, nodes[i].cumulative);
            for &(s2, p) in model.transition(state, choice[state]) {
                nodes.push(Node {
                    state: s2,
                    prob: p,
                    cumulative: base + discount * model.reward(s2, choice[s2]),
                    children: 0..0,
                });
            }
            nodes[i].children = first..nodes.len();
        }
        frontier = begin..nodes.len();
    }
    let spec = model.risk();
    let mut risk = vec![0.0; nodes.len()];
    for i in (0..nodes.len()).rev() {
        risk[i] = if nodes[i].children.is_empty() {
            -nodes[i].cumulative
        } else {
            let law: Vec<(f64, f64)> = nodes[i]
                .children
                .clone()
                .map(|c| (risk[c], nodes[c].prob))
                .collect();
            oracle_sigma_exact(&spec, &law)
        };
    }
    -risk[0]
}

/// Same objective on the recombined lattice: below a node, the nested value
/// depends only on `(state, level)`, so identical subtrees are evaluated once.
fn lattice_values(model: &MdpModel, choice: &[usize], horizon: usize) -> Vec<f64> {
    let gamma = model.gamma();
    let spec = model.risk();
    let n = model.n_states();
    let mut below: Vec<f64> = (0..n).map(|s| model.reward(s, choice[s])).collect();
    for _ in 0..horizon {
        below = (0..n)
            .map(|s| {
                let law: Vec<(f64, f64)> = model
                    .transition(s, choice[s])
                    .iter()
                    .map(|&(s2, p)| (below[s2], p))
                    .collect();
                model.reward(s, choice[s]) + gamma * oracle_varsigma_exact(&spec, &law)
            })
            .collect();
    }
    below
}

fn explicit_tree_size(model: &MdpModel, choice: &[usize], start: usize, horizon: usize) -> usize {
    let mut count = vec![0usize; model.n_states()];
    count[start] = 1;
    let mut total = 1usize;
    for _ in 0..horizon {
        let mut next = vec![0usize; model.n_states()];
        for (s, &c) in count.iter().enumerate() {
            if c > 0 {
                for &(s2, _) in model.transition(s, choice[s]) {
                    next[s2] = next[s2].saturating_add(c);
                }
            }
        }
        count = next;
        total = total.saturating_add(count.iter().fold(0usize, |a, &c| a.saturating_add(c)));
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnumerationMode {
    /// Materialise every scenario tree node by node.
    ExplicitTree,
    /// Evaluate recombined `(state, level)` nodes.
    Lattice,
}

/// Best truncated nested value per starting state over all stationary
/// deterministic policies, with explicit trees when they fit the budget.
pub fn oracle_policy_enum(
    model: &MdpModel,
    horizon: usize,
) -> Result<(ValueFunction, Policy), OracleError> {
    let n = model.n_states();
    let policies = policy_count(model);
    let explicit_total = (0..policies)
        .map(|p| {
            let choice = decode_policy(model, p);
            (0..n)
                .map(|s| explicit_tree_size(model, &choice, s, horizon))
                .fold(0usize, |a, c| a.saturating_add(c))
        })
        .fold(0usize, |a, c| a.saturating_add(c));
    let mode = if explicit_total <= ENUMERATION_BUDGET {
        EnumerationMode::ExplicitTree
    } else {
        EnumerationMode::Lattice
    };
    oracle_policy_enum_with(model, horizon, mode)
}

pub fn oracle_policy_enum_with(
    model: &MdpModel,
    horizon: usize,
    mode: EnumerationMode,
) -> Result<(ValueFunction, Policy), OracleError> {
    let n = model.n_states();
    let policies = policy_count(model);
    let needed = match mode {
        EnumerationMode::ExplicitTree => (0..policies)
            .map(|p| {
                let choice = decode_policy(model, p);
                (0..n)
                    .map(|s| explicit_tree_size(model, &choice, s, horizon))
                    .fold(0usize, |a, c| a.saturating_add(c))
            })
            .fold(0usize, |a, c| a.saturating_add(c)),
        EnumerationMode::Lattice => policies
            .saturating_mul(n)
            .saturating_mul(horizon.saturating_add(1)),
    };
    if needed > ENUMERATION_BUDGET {
        return Err(OracleError::SizeLimit {
            needed,
            budget: ENUMERATION_BUDGET,
        });
    }

    let mut best = vec![f64::NEG_INFINITY; n];
    let mut best_policy = (f64::NEG_INFINITY, Vec::new());
    for p in 0..policies {
        let choice = decode_policy(model, p);
        let values: Vec<f64> = match mode {
            EnumerationMode::ExplicitTree => (0..n)
                .map(|s| explicit_tree_value(model, &choice, s, horizon))
                .collect(),
            EnumerationMode::Lattice => lattice_values(model, &choice, horizon),
        };
        for (b, v) in best.iter_mut().zip(&values) {
            *b = b.max(*v);
        }
        let total: f64 = values.iter().sum();
        if total > best_policy.0 {
            best_policy = (total, choice);
        }
    }
    let policy = Policy::new(model, best_policy.1).expect("decoded choices are admissible");
    Ok((ValueFunction::new(best), policy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{random_tree, seeded, two_state};
    use crate::model::random_model;

    fn dist(pairs: &[(f64, f64)]) -> DiscreteDistribution {
        DiscreteDistribution::new(pairs.iter().copied()).unwrap()
    }

    #[test]
    fn grid_examples() {
        let d = dist(&[(1.0, 0.6), (5.0, 0.4)]);
        let g = oracle_sigma_grid(&RiskSpec::cvar(0.5).unwrap(), &d, 1_000_000);
        assert!((g - 4.2).abs() <= 1e-4, "{g}");
        let d = dist(&[(1.0, 0.13), (-2.0, 0.37), (7.5, 0.5)]);
        let g = oracle_sigma_grid(&RiskSpec::Expectation, &d, 1_000_000);
        assert!((g - (0.13 - 0.74 + 3.75)).abs() <= 1e-4);
        for grid in [10_000, 12_345, 1_000_000] {
            for spec in [RiskSpec::Expectation, RiskSpec::cvar(0.37).unwrap(), RiskSpec::WorstCase] {
                assert_eq!(oracle_sigma_grid(&spec, &dist(&[(2.5, 1.0)]), grid), 2.5);
            }
        }
    }

    #[test]
    fn counted_midpoints_match_the_literal_sum() {
        let mut rng = seeded(8);
        for _ in 0..50 {
            let sample = crate::axioms::random_sample(&mut rng, 8);
            let d = sample.law(&sample.x);
            for lo in [0.0, 0.3, 0.75, 0.99] {
                let steps = quantile_steps(&pairs(&d));
                let fast = midpoint_tail_mean(&steps, lo, 10_000);
                let slow = midpoint_tail_mean_slow(&d, lo, 10_000);
                assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
            }
        }
    }

    #[test]
    fn exact_oracle_hand_values() {
        let cvar = RiskSpec::cvar(0.5).unwrap();
        assert!((oracle_sigma_exact(&cvar, &[(1.0, 0.6), (5.0, 0.4)]) - 4.2).abs() < 1e-12);
        assert_eq!(oracle_sigma_exact(&cvar, &[(0.0, 0.5), (10.0, 0.5)]), 10.0);
        assert_eq!(oracle_varsigma_exact(&cvar, &[(0.0, 0.5), (10.0, 0.5)]), 0.0);
    }

    #[test]
    fn nested_oracle_on_a_chain_and_under_expectation() {
        let chain = ScenarioTree::from_parents(&[None, Some(0), Some(1)], &[1.0, 1.0, 1.0]).unwrap();
        let z = AdaptedProcess::new(&chain, vec![3.0, 2.0, 1.5]).unwrap();
        for t in 0..=2 {
            assert_eq!(oracle_nested_paths(&chain, &z, &RiskSpec::cvar(0.2).unwrap(), t), z.values()[t]);
        }
        let mut rng = seeded(2);
        let tree = random_tree(&mut rng, 3, 3);
        let z = crate::fixtures::random_non_increasing(&mut rng, &tree);
        let nested = oracle_nested_paths(&tree, &z, &RiskSpec::Expectation, 3);
        assert!((nested - oracle_path_expectation(&tree, &z, 3)).abs() < 1e-12);
    }

    #[test]
    fn classical_vi_examples() {
        let v = oracle_classical_vi(&two_state(RiskSpec::Expectation), 1e-13).unwrap();
        assert!((v[0] - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(v[1], 0.0);
        let single = random_model(1, 1, 1, 0.5, 7).unwrap();
        let v = oracle_classical_vi(&single, 1e-13).unwrap();
        assert!((v[0] - single.reward(0, 0) / 0.5).abs() < 1e-12);
    }

    #[test]
    fn policy_enum_two_state_worst_case() {
        let m = two_state(RiskSpec::WorstCase);
        let (v, policy) = oracle_policy_enum(&m, 40).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-5);
        assert_eq!(v[1], 0.0);
        assert_eq!(policy.choices(), &[0, 0]);
    }

    #[test]
    fn explicit_and_lattice_modes_agree() {
        let m = random_model(3, 2, 2, 0.7, 4)
            .unwrap()
            .with_risk(RiskSpec::cvar(0.5).unwrap());
        let (a, pa) = oracle_policy_enum_with(&m, 8, EnumerationMode::ExplicitTree).unwrap();
        let (b, pb) = oracle_policy_enum_with(&m, 8, EnumerationMode::Lattice).unwrap();
        assert!(a.sup_distance(&b) < 1e-12);
        assert_eq!(pa, pb);
    }

    #[test]
    fn size_limit_is_enforced() {
        let m = random_model(3, 2, 3, 0.9, 1).unwrap();
        let err = oracle_policy_enum_with(&m, 30, EnumerationMode::ExplicitTree).unwrap_err();
        assert!(matches!(err, OracleError::SizeLimit { .. }));
    }

    #[test]
    fn horizon_meets_tolerance() {
        let h = horizon_for_tolerance(0.8, 1.0, 1e-5);
        assert!(truncation_tail(0.8, 1.0, h) <= 1e-5);
        assert!(truncation_tail(0.8, 1.0, h - 1) > 1e-5);
        assert_eq!(horizon_for_tolerance(0.0, 1.0, 1e-5), 0);
    }
}
