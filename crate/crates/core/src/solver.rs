//! The risk-averse Bellman operator and Value Iteration.
//!
//! `(BV)(s) = max_{a ∈ A(s)} [ r(s,a) + γ · ς(V(s')) ]` with `s'` drawn from
//! the transition row of `(s, a)`. `B` is a γ-contraction in the sup norm, so
//! iterating it from any `V_0` converges geometrically to the unique fixed
//! point, and `‖V_n − V_⋆‖∞ ≤ γⁿ/(1−γ) · ‖V_1 − V_0‖∞`.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::model::{MdpModel, Policy, ValueFunction};

/// Slack on the contraction and Banach-bound inequalities.
pub const BOUND_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("theta must be a positive finite number, got {0}")]
    Theta(f64),
    #[error("initial value function has {got} entries for {expected} states")]
    Dimension { got: usize, expected: usize },
    #[error("initial value function is not finite")]
    NonFinite,
    #[error("no convergence within {iterations} iterations (last residual {residual:e})")]
    MaxItersExceeded { iterations: usize, residual: f64 },
}

impl SolveError {
    pub fn code(&self) -> &'static str {
        match self {
            SolveError::Theta(_) => "THETA_RANGE",
            SolveError::Dimension { .. } => "DIMENSION",
            SolveError::NonFinite => "NON_FINITE",
            SolveError::MaxItersExceeded { .. } => "MAX_ITERS_EXCEEDED",
        }
    }
}

/// `r(s,a) + γ · ς(V(s'))`.
pub fn q_value(model: &MdpModel, v: &ValueFunction, s: usize, a: usize) -> f64 {
    let next = model
        .next_value_distribution(v, s, a)
        .expect("action index comes from A(s)");
    model.reward(s, a) + model.gamma() * model.risk().varsigma(&next)
}

/// First maximiser in action-list order, with its value.
fn greedy(model: &MdpModel, v: &ValueFunction, s: usize) -> (usize, f64) {
    let mut best = (0, q_value(model, v, s, 0));
    for a in 1..model.actions(s).len() {
        let q = q_value(model, v, s, a);
        if q > best.1 {
            best = (a, q);
        }
    }
    best
}

/// One Jacobi sweep of `B`: every state reads only the previous iterate.
pub fn bellman_apply(model: &MdpModel, v: &ValueFunction) -> ValueFunction {
    assert_eq!(v.len(), model.n_states(), "value function dimension");
    ValueFunction::new((0..model.n_states()).map(|s| greedy(model, v, s).1).collect())
}

/// The operator restricted to a fixed policy: `r(s,π(s)) + γ · ς(V(s'))`.
pub fn policy_apply(model: &MdpModel, policy: &Policy, v: &ValueFunction) -> ValueFunction {
    ValueFunction::new(
        (0..model.n_states())
            .map(|s| q_value(model, v, s, policy.action(s)))
            .collect(),
    )
}

pub fn extract_policy(model: &MdpModel, v: &ValueFunction) -> Policy {
    let choice = (0..model.n_states()).map(|s| greedy(model, v, s).0).collect();
    Policy::new(model, choice).expect("greedy picks admissible actions")
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub v_star: ValueFunction,
    pub policy: Policy,
    pub iterations: usize,
    /// `‖V_k − V_{k−1}‖∞` for `k = 1..=iterations`.
    pub residuals: Vec<f64>,
    pub theta: f64,
    pub gamma: f64,
    /// `γⁿ/(1−γ) · ‖V_1 − V_0‖∞`.
    pub banach_bound: f64,
    pub elapsed: Duration,
}

/// `γᵏ/(1−γ) · d₁`.
pub fn banach_bound(gamma: f64, first_residual: f64, k: usize) -> f64 {
    gamma.powi(k as i32) / (1.0 - gamma) * first_residual
}

/// Iteration count by which the residual is guaranteed to fall below
/// `theta`, given `‖V_1 − V_0‖∞ = first_residual`.
pub fn iteration_bound(gamma: f64, theta: f64, first_residual: f64) -> usize {
    if first_residual <= theta {
        return 1;
    }
    if gamma == 0.0 {
        return 2;
    }
    let steps = ((theta * (1.0 - gamma) / first_residual).ln() / gamma.ln()).ceil();
    steps.max(0.0) as usize + 1
}

impl SolveReport {
    pub fn iteration_bound(&self) -> usize {
        iteration_bound(self.gamma, self.theta, self.residuals[0])
    }

    pub fn to_json(&self, model: &MdpModel) -> serde_json::Value {
        #[derive(Serialize)]
        struct Out<'a> {
            v_star: indexmap::IndexMap<String, f64>,
            policy: indexmap::IndexMap<String, String>,
            iterations: usize,
            residuals: &'a [f64],
            theta: f64,
            banach_bound: f64,
        }
        serde_json::to_value(Out {
            v_star: self.v_star.named(model),
            policy: self.policy.named(model),
            iterations: self.iterations,
            residuals: &self.residuals,
            theta: self.theta,
            banach_bound: self.banach_bound,
        })
        .expect("report serialises")
    }

    /// Rows `(k, ‖V_k − V_{k−1}‖∞, γᵏ/(1−γ)·‖V_1 − V_0‖∞)`.
    pub fn trace_rows(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        let d1 = self.residuals[0];
        self.residuals
            .iter()
            .enumerate()
            .map(move |(i, &r)| (i + 1, r, banach_bound(self.gamma, d1, i + 1)))
    }
}

fn check_start(model: &MdpModel, v0: &ValueFunction, theta: f64) -> Result<(), SolveError> {
    if !(theta.is_finite() && theta > 0.0) {
        return Err(SolveError::Theta(theta));
    }
    if v0.len() != model.n_states() {
        return Err(SolveError::Dimension {
            got: v0.len(),
            expected: model.n_states(),
        });
    }
    if v0.values().iter().any(|x| !x.is_finite()) {
        return Err(SolveError::NonFinite);
    }
    Ok(())
}

/// Iterates `V_n = B V_{n−1}` until `‖V_n − V_{n−1}‖∞ ≤ theta`.
pub fn value_iteration(
    model: &MdpModel,
    v0: &ValueFunction,
    theta: f64,
    max_iters: usize,
) -> Result<SolveReport, SolveError> {
    value_iteration_observed(model, v0, theta, max_iters, |_, _| {})
}

/// [`value_iteration`] with a callback receiving `(n, V_n)` after every sweep.
pub fn value_iteration_observed<F>(
    model: &MdpModel,
    v0: &ValueFunction,
    theta: f64,
    max_iters: usize,
    mut observe: F,
) -> Result<SolveReport, SolveError>
where
    F: FnMut(usize, &ValueFunction),
{
    check_start(model, v0, theta)?;
    let start = Instant::now();
    let mut current = v0.clone();
    let mut residuals = Vec::new();
    loop {
        if residuals.len() >= max_iters {
            return Err(SolveError::MaxItersExceeded {
                iterations: residuals.len(),
                residual: residuals.last().copied().unwrap_or(f64::INFINITY),
            });
        }
        let next = bellman_apply(model, &current);
        let residual = next.sup_distance(&current);
        residuals.push(residual);
        observe(residuals.len(), &next);
        current = next;
        if residual <= theta {
            break;
        }
    }
    let n = residuals.len();
    let gamma = model.gamma();
    Ok(SolveReport {
        policy: extract_policy(model, &current),
        v_star: current,
        iterations: n,
        banach_bound: banach_bound(gamma, residuals[0], n),
        residuals,
        theta,
        gamma,
        elapsed: start.elapsed(),
    })
}

/// Value of a fixed policy by iterating the restricted operator.
pub fn evaluate_policy(
    model: &MdpModel,
    policy: &Policy,
    theta: f64,
    max_iters: usize,
) -> Result<(ValueFunction, usize), SolveError> {
    let mut current = ValueFunction::zeros(model.n_states());
    check_start(model, &current, theta)?;
    for n in 1..=max_iters {
        let next = policy_apply(model, policy, &current);
        let residual = next.sup_distance(&current);
        current = next;
        if residual <= theta {
            return Ok((current, n));
        }
    }
    Err(SolveError::MaxItersExceeded {
        iterations: max_iters,
        residual: f64::NAN,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionViolation {
    pub trial: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionReport {
    pub trials: usize,
    pub seed: u64,
    /// Largest `‖BU − BV‖∞ / ‖U − V‖∞` over trials with `U ≠ V`.
    pub max_ratio: f64,
    pub gamma: f64,
    pub violations: Vec<ContractionViolation>,
}

impl ContractionReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Draws `trials` seeded pairs `(U, V)` with entries uniform in
/// `[−amplitude, amplitude]` and checks `‖BU − BV‖∞ ≤ γ‖U − V‖∞`.
pub fn check_contraction(model: &MdpModel, trials: usize, amplitude: f64, seed: u64) -> ContractionReport {
    check_contraction_against(model, model.gamma(), trials, amplitude, seed)
}

/// As [`check_contraction`], but measures the operator of `model` against a
/// claimed modulus `gamma`. With `gamma` below the model's own discount this
/// must report violations; the CLI self-test relies on that.
pub fn check_contraction_against(
    model: &MdpModel,
    gamma: f64,
    trials: usize,
    amplitude: f64,
    seed: u64,
) -> ContractionReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.n_states();
    let draw = |rng: &mut ChaCha8Rng| {
        ValueFunction::new((0..n).map(|_| rng.random_range(-amplitude..=amplitude)).collect())
    };
    let mut max_ratio: f64 = 0.0;
    let mut violations = Vec::new();
    for trial in 0..trials {
        let u = draw(&mut rng);
        let v = draw(&mut rng);
        let input = u.sup_distance(&v);
        let output = bellman_apply(model, &u).sup_distance(&bellman_apply(model, &v));
        if output > gamma * input + BOUND_TOL {
            violations.push(ContractionViolation {
                trial,
                ratio: output / input,
            });
        }
        if input > 0.0 {
            max_ratio = max_ratio.max(output / input);
        }
    }
    ContractionReport {
        trials,
        seed,
        max_ratio,
        gamma,
        violations,
    }
}

/// `‖B(V + c) − BV‖∞ / c`, which equals `γ` by translation invariance.
pub fn constant_shift_ratio(model: &MdpModel, v: &ValueFunction, c: f64) -> f64 {
    let shifted = ValueFunction::new(v.values().iter().map(|x| x + c).collect());
    bellman_apply(model, &shifted).sup_distance(&bellman_apply(model, v)) / c.abs()
}

#[derive(Debug, Clone, Serialize)]
pub struct BanachCheckpoint {
    pub n: usize,
    pub distance: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BanachReport {
    pub reference_iterations: usize,
    pub first_residual: f64,
    pub checkpoints: Vec<BanachCheckpoint>,
}

impl BanachReport {
    pub fn holds(&self) -> bool {
        self.checkpoints
            .iter()
            .all(|c| c.distance <= c.bound + BOUND_TOL)
    }
}

/// Checks `‖V_n − V_⋆‖∞ ≤ γⁿ/(1−γ) · ‖V_1 − V_0‖∞` at each checkpoint, with
/// `V_⋆` approximated by a reference solve at `theta_ref` and `V_0 ≡ 0`.
pub fn check_banach_bound(
    model: &MdpModel,
    theta_ref: f64,
    checkpoints: &[usize],
    max_iters: usize,
) -> Result<BanachReport, SolveError> {
    let zero = ValueFunction::zeros(model.n_states());
    let reference = value_iteration(model, &zero, theta_ref, max_iters)?;
    let v_star = &reference.v_star;

    let last = checkpoints.iter().copied().max().unwrap_or(0);
    let mut iterates = vec![zero.clone()];
    let mut current = zero;
    for _ in 0..last.max(1) {
        current = bellman_apply(model, &current);
        iterates.push(current.clone());
    }
    let first_residual = iterates[1].sup_distance(&iterates[0]);
    let gamma = model.gamma();
    let checkpoints = checkpoints
        .iter()
        .map(|&n| BanachCheckpoint {
            n,
            distance: iterates[n].sup_distance(v_star),
            bound: banach_bound(gamma, first_residual, n),
        })
        .collect();
    Ok(BanachReport {
        reference_iterations: reference.iterations,
        first_residual,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{two_state, two_state_with_b};
    use crate::model::random_model;
    use crate::risk::RiskSpec;

    fn vf(v: &[f64]) -> ValueFunction {
        ValueFunction::new(v.to_vec())
    }

    #[test]
    fn bellman_examples() {
        let wc = two_state(RiskSpec::WorstCase);
        assert_eq!(bellman_apply(&wc, &vf(&[0.0, 0.0])), vf(&[1.0, 0.0]));
        assert_eq!(bellman_apply(&wc, &vf(&[1.0, 0.0])), vf(&[1.0, 0.0]));

        let ex = two_state(RiskSpec::Expectation);
        let fixed = vf(&[4.0 / 3.0, 0.0]);
        assert!(bellman_apply(&ex, &fixed).sup_distance(&fixed) <= 1e-12);
    }

    #[test]
    fn value_iteration_closed_form() {
        let ex = two_state(RiskSpec::Expectation);
        let report = value_iteration(&ex, &ValueFunction::zeros(2), 1e-10, 1000).unwrap();
        assert!((report.v_star[0] - 4.0 / 3.0).abs() <= 1e-9);
        assert_eq!(report.v_star[1], 0.0);
        assert!(*report.residuals.last().unwrap() <= 1e-10);
        assert_eq!(report.residuals.len(), report.iterations);
        assert!(report.iterations <= report.iteration_bound());
    }

    #[test]
    fn starting_at_the_fixed_point_stops_immediately() {
        let wc = two_state(RiskSpec::WorstCase);
        let report = value_iteration(&wc, &vf(&[1.0, 0.0]), 1e-8, 10).unwrap();
        assert_eq!(report.iterations, 1);
        assert_eq!(report.residuals, vec![0.0]);
    }

    #[test]
    fn banach_bound_arithmetic() {
        assert!((banach_bound(0.9, 1.0, 10) - 3.486_784_401).abs() < 1e-9);
        assert_eq!(banach_bound(0.5, 2.0, 0), 4.0);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let ex = two_state(RiskSpec::Expectation);
        let zero = ValueFunction::zeros(2);
        assert_eq!(value_iteration(&ex, &zero, -1.0, 10).unwrap_err(), SolveError::Theta(-1.0));
        assert_eq!(value_iteration(&ex, &zero, 0.0, 10).unwrap_err(), SolveError::Theta(0.0));
        assert!(matches!(
            value_iteration(&ex, &ValueFunction::zeros(3), 1e-3, 10),
            Err(SolveError::Dimension { got: 3, expected: 2 })
        ));
        assert!(matches!(
            value_iteration(&ex, &zero, 1e-12, 3),
            Err(SolveError::MaxItersExceeded { iterations: 3, .. })
        ));
    }

    #[test]
    fn tie_break_takes_first_listed_action() {
        let doc = crate::fixtures::TWO_STATE_DOC.replace(
            r#""s0": ["a"]"#,
            r#""s0": ["a", "b"]"#,
        );
        let doc = doc.replace(r#""s0": {"a": 1.0}"#, r#""s0": {"a": 1.0, "b": 1.0}"#);
        let doc = doc.replace(
            r#""s0": {"a": [["s0", 0.5], ["s1", 0.5]]}"#,
            r#""s0": {"a": [["s0", 0.5], ["s1", 0.5]], "b": [["s1", 0.5], ["s0", 0.5]]}"#,
        );
        let m = crate::model::load_model(&doc).unwrap();
        assert_eq!(extract_policy(&m, &vf(&[0.7, 0.2])).action(0), 0);
    }

    #[test]
    fn extended_model_prefers_b() {
        let m = two_state_with_b(RiskSpec::Expectation);
        let at_old = extract_policy(&m, &vf(&[4.0 / 3.0, 0.0]));
        assert_eq!(m.actions(0)[at_old.action(0)], "b");
        let report = value_iteration(&m, &ValueFunction::zeros(2), 1e-12, 10_000).unwrap();
        // V(s0) = 0.9 + 0.5 V(s0) beats 1 + 0.25 V(s0) at the new fixed point
        assert!((report.v_star[0] - 1.8).abs() < 1e-9);
        assert_eq!(m.actions(0)[report.policy.action(0)], "b");
    }

    #[test]
    fn contraction_examples() {
        let m = random_model(8, 3, 3, 0.9, 5).unwrap().with_risk(RiskSpec::cvar(0.25).unwrap());
        let report = check_contraction(&m, 200, 10.0, 1);
        assert!(report.holds());
        assert!(report.max_ratio <= 0.9 + 1e-9);

        let v = vf(&[0.3, -1.0, 2.0, 0.0, 5.0, 1.0, 1.0, -4.0]);
        assert_eq!(bellman_apply(&m, &v).sup_distance(&bellman_apply(&m, &v)), 0.0);
        assert!((constant_shift_ratio(&m, &v, 2.0) - 0.9).abs() <= 1e-12);

        let broken = check_contraction_against(&m, 0.5, 50, 10.0, 1);
        assert!(!broken.holds());
    }

    #[test]
    fn banach_checkpoints_hold() {
        let ex = two_state(RiskSpec::Expectation);
        let report = check_banach_bound(&ex, 1e-12, &[0, 1, 5, 10], 10_000).unwrap();
        assert!(report.holds(), "{report:?}");
        // V_n(s0) = (4/3)(1 − 0.25ⁿ) and ‖V_1 − V_0‖ = 1
        for c in &report.checkpoints {
            let exact = 4.0 / 3.0 * 0.25f64.powi(c.n as i32);
            assert!((c.distance - exact).abs() < 1e-10, "{c:?}");
        }
        let r = random_model(6, 2, 2, 0.95, 3).unwrap().with_risk(RiskSpec::cvar(0.1).unwrap());
        assert!(check_banach_bound(&r, 1e-12, &[10, 50, 100], 1_000_000).unwrap().holds());
    }

    #[test]
    fn evaluate_fixed_policy() {
        let m = two_state_with_b(RiskSpec::Expectation);
        let only_a = Policy::new(&m, vec![0, 0]).unwrap();
        let (v, _) = evaluate_policy(&m, &only_a, 1e-12, 10_000).unwrap();
        assert!((v[0] - 4.0 / 3.0).abs() < 1e-9);
    }
}
