//! The full verification run behind `riskdp verify`: every convergence and
//! contraction claim is exercised on the built-in fixtures and checked
//! against the oracles.

use serde::Serialize;

use crate::axioms::{check_axioms, random_sample, MAX_ATOMS};
use crate::fixtures::{
    fixture_models, random_increment_bounded, random_non_increasing, random_tree, rollout_tree,
    seeded,
};
use crate::model::{random_model, MdpModel, ValueFunction};
use crate::nested::{check_decomposition, check_uniform_bound, rho_limit, rho_t};
use crate::oracles::{
    horizon_for_tolerance, oracle_classical_vi, oracle_nested_paths, oracle_policy_enum,
    oracle_sigma_grid, truncation_tail,
};
use crate::risk::RiskSpec;
use crate::solver::{
    check_banach_bound, check_contraction_against, constant_shift_ratio, extract_policy,
    iteration_bound, value_iteration, BOUND_TOL,
};

pub const GRID: usize = 1_000_000;
pub const GRID_TOL: f64 = 1e-4;
pub const NESTED_ORACLE_TOL: f64 = 1e-12;
pub const BANACH_CHECKPOINTS: [usize; 5] = [0, 1, 5, 10, 50];
pub const TERMINATION_THETA: f64 = 1e-8;
pub const REFERENCE_THETA: f64 = 1e-12;
const MAX_ITERS: usize = 1_000_000;
const TREES: usize = 100;

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub risk: RiskSpec,
    pub seed: u64,
    pub trials: usize,
    /// Optional user model appended to the fixture corpus.
    pub extra_model: Option<(String, MdpModel)>,
    /// Runs the model claims against deliberately mis-scaled fixtures, which
    /// must make the run fail.
    pub corrupt: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClaimResult {
    pub claim: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub risk: RiskSpec,
    pub seed: u64,
    pub trials: usize,
    pub corrupt: bool,
    pub claims: Vec<ClaimResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.claims.iter().all(|c| c.passed)
    }
}

fn claim(claim: &'static str, passed: bool, detail: String) -> ClaimResult {
    ClaimResult {
        claim,
        passed,
        detail,
    }
}

/// A fixture whose operator runs with a larger discount than the one the
/// checks are told about.
struct Case {
    name: String,
    model: MdpModel,
    claimed_gamma: f64,
}

fn cases(config: &VerifyConfig) -> Vec<Case> {
    let mut models = fixture_models(config.risk);
    if let Some((name, m)) = &config.extra_model {
        models.push((name.clone(), m.clone().with_risk(config.risk)));
    }
    models
        .into_iter()
        .map(|(name, model)| {
            let claimed_gamma = model.gamma();
            let model = if config.corrupt {
                let g = claimed_gamma + (1.0 - claimed_gamma) / 2.0;
                model.with_gamma_unchecked(g)
            } else {
                model
            };
            Case {
                name,
                model,
                claimed_gamma,
            }
        })
        .collect()
}

pub fn run_verify(config: &VerifyConfig) -> VerifyReport {
    let spec = config.risk;
    let cases = cases(config);
    let claims = vec![
        axioms_claim(config),
        sigma_oracle_claim(config),
        nested_limit_claim(config),
        nested_oracle_claim(config),
        uniform_bound_claim(config, &cases),
        decomposition_claim(config),
        contraction_claim(config, &cases),
        banach_claim(&cases),
        termination_claim(&cases),
        classical_vi_claim(config),
        policy_enum_claim(spec),
    ];
    VerifyReport {
        risk: spec,
        seed: config.seed,
        trials: config.trials,
        corrupt: config.corrupt,
        claims,
    }
}

fn axioms_claim(config: &VerifyConfig) -> ClaimResult {
    let report = check_axioms(config.risk, config.trials, config.seed);
    let worst = report
        .outcomes
        .iter()
        .map(|o| o.worst_slack)
        .fold(f64::INFINITY, f64::min);
    claim(
        "coherence-axioms",
        report.all_passed(),
        format!("{} samples, worst slack {worst:e}", config.trials),
    )
}

fn sigma_oracle_claim(config: &VerifyConfig) -> ClaimResult {
    let mut rng = seeded(config.seed ^ 0x5151);
    let mut worst: f64 = 0.0;
    for _ in 0..config.trials {
        let sample = random_sample(&mut rng, MAX_ATOMS);
        let d = sample.law(&sample.x);
        worst = worst.max((config.risk.sigma(&d) - oracle_sigma_grid(&config.risk, &d, GRID)).abs());
    }
    claim(
        "risk-vs-quantile-oracle",
        worst <= GRID_TOL,
        format!("max |sigma - grid| = {worst:e} (grid {GRID})"),
    )
}

fn nested_limit_claim(config: &VerifyConfig) -> ClaimResult {
    let mut rng = seeded(config.seed ^ 0x7171);
    let mut ok = true;
    for i in 0..TREES {
        let tree = random_tree(&mut rng, 1 + i % 5, 3);
        let z = random_non_increasing(&mut rng, &tree);
        ok &= rho_limit(&tree, &z, &config.risk).is_ok_and(|r| r.holds());
    }
    claim(
        "nested-limit-monotone",
        ok,
        format!("{TREES} trees, non-increasing bounded processes"),
    )
}

fn nested_oracle_claim(config: &VerifyConfig) -> ClaimResult {
    let mut rng = seeded(config.seed ^ 0x7272);
    let mut worst: f64 = 0.0;
    for i in 0..TREES {
        let tree = random_tree(&mut rng, 1 + i % 4, 3);
        let z = random_non_increasing(&mut rng, &tree);
        for t in 0..=tree.depth() {
            let fast = rho_t(&tree, &z, &config.risk, t).expect("t within depth");
            worst = worst.max((fast - oracle_nested_paths(&tree, &z, &config.risk, t)).abs());
        }
    }
    claim(
        "nested-vs-path-oracle",
        worst <= NESTED_ORACLE_TOL,
        format!("max deviation {worst:e}"),
    )
}

fn uniform_bound_claim(config: &VerifyConfig, cases: &[Case]) -> ClaimResult {
    let mut rng = seeded(config.seed ^ 0x7373);
    let mut ok = true;
    let mut min_slack = f64::INFINITY;
    for i in 0..TREES {
        let tree = random_tree(&mut rng, 1 + i % 5, 3);
        let (z, eps) = random_increment_bounded(&mut rng, &tree);
        match check_uniform_bound(&tree, &z, &config.risk, &eps) {
            Ok(r) => {
                ok &= r.holds();
                min_slack = min_slack.min(r.min_upper_slack);
            }
            Err(_) => ok = false,
        }
    }
    // discounted reward rollouts of the greedy policy on the small fixtures
    for case in cases.iter().filter(|c| c.model.n_states() <= 3) {
        let m = &case.model;
        let policy = extract_policy(m, &ValueFunction::zeros(m.n_states()));
        for start in 0..m.n_states() {
            let (tree, z, eps) = rollout_tree(m, &policy, start, 6);
            match check_uniform_bound(&tree, &z, &m.risk(), &eps) {
                Ok(r) => ok &= r.holds(),
                Err(_) => ok = false,
            }
        }
    }
    claim(
        "uniform-tail-bound",
        ok,
        format!("min upper slack {min_slack:e}"),
    )
}

fn decomposition_claim(config: &VerifyConfig) -> ClaimResult {
    let mut rng = seeded(config.seed ^ 0x7474);
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for i in 0..TREES {
        let tree = random_tree(&mut rng, 1 + i % 4, 3);
        let (z, _) = random_increment_bounded(&mut rng, &tree);
        match check_decomposition(&tree, &z, &config.risk) {
            Ok(r) => {
                ok &= r.holds();
                worst = worst.max(r.residual());
            }
            Err(_) => ok = false,
        }
    }
    claim(
        "one-step-decomposition",
        ok,
        format!("max |lhs - rhs| = {worst:e}"),
    )
}

fn contraction_claim(config: &VerifyConfig, cases: &[Case]) -> ClaimResult {
    let mut ok = true;
    let mut details = Vec::new();
    for (i, case) in cases.iter().enumerate() {
        let seed = config.seed.wrapping_add(i as u64);
        let report = check_contraction_against(&case.model, case.claimed_gamma, config.trials, 10.0, seed);
        let v = ValueFunction::new((0..case.model.n_states()).map(|s| s as f64 * 0.5).collect());
        let shift = constant_shift_ratio(&case.model, &v, 1.0);
        let shift_ok = (shift - case.claimed_gamma).abs() <= 1e-12;
        ok &= report.holds() && shift_ok;
        details.push(format!("{}: max ratio {:.6}", case.name, report.max_ratio));
    }
    claim("bellman-contraction", ok, details.join("; "))
}

fn banach_claim(cases: &[Case]) -> ClaimResult {
    let mut ok = true;
    for case in cases {
        match check_banach_bound(&case.model, REFERENCE_THETA, &BANACH_CHECKPOINTS, MAX_ITERS) {
            Ok(r) => {
                // the bound is evaluated with the claimed modulus
                ok &= r.checkpoints.iter().all(|c| {
                    let bound = case.claimed_gamma.powi(c.n as i32) / (1.0 - case.claimed_gamma)
                        * r.first_residual;
                    c.distance <= bound + BOUND_TOL
                });
            }
            Err(_) => ok = false,
        }
    }
    claim(
        "a-priori-error-bound",
        ok,
        format!("checkpoints {BANACH_CHECKPOINTS:?}, reference theta {REFERENCE_THETA:e}"),
    )
}

fn termination_claim(cases: &[Case]) -> ClaimResult {
    let mut ok = true;
    let mut details = Vec::new();
    for case in cases {
        let zero = ValueFunction::zeros(case.model.n_states());
        match value_iteration(&case.model, &zero, TERMINATION_THETA, MAX_ITERS) {
            Ok(r) => {
                let bound = iteration_bound(case.claimed_gamma, TERMINATION_THETA, r.residuals[0]);
                let geometric = r
                    .residuals
                    .windows(2)
                    .all(|w| w[1] <= case.claimed_gamma * w[0] + BOUND_TOL);
                ok &= r.iterations <= bound && geometric;
                details.push(format!("{}: {} <= {}", case.name, r.iterations, bound));
            }
            Err(_) => ok = false,
        }
    }
    claim("finite-termination", ok, details.join("; "))
}

fn classical_vi_claim(config: &VerifyConfig) -> ClaimResult {
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for k in 0..10 {
        let m = random_model(2 + k % 6, 1 + k % 3, 1 + k % 2, 0.9, config.seed.wrapping_add(k as u64))
            .expect("parameters in range");
        let theta = 1e-12;
        let oracle = oracle_classical_vi(&m, theta);
        let solved = value_iteration(&m, &ValueFunction::zeros(m.n_states()), theta, MAX_ITERS);
        match (oracle, solved) {
            (Ok(o), Ok(s)) => worst = worst.max(o.sup_distance(&s.v_star)),
            _ => ok = false,
        }
    }
    claim(
        "risk-neutral-reduction",
        ok && worst <= 1e-9,
        format!("max deviation from classical value iteration {worst:e}"),
    )
}

fn policy_enum_claim(spec: RiskSpec) -> ClaimResult {
    let tol = 1e-5;
    let theta = 1e-12;
    let mut ok = true;
    let mut worst: f64 = 0.0;
    let models = [
        random_model(2, 2, 2, 0.5, 11).expect("valid"),
        random_model(3, 2, 1, 0.8, 12).expect("valid"),
        random_model(3, 2, 2, 0.6, 13).expect("valid"),
    ];
    for m in models {
        let m = m.with_risk(spec);
        let horizon = horizon_for_tolerance(m.gamma(), m.r_max(), tol);
        let allowed = theta + truncation_tail(m.gamma(), m.r_max(), horizon);
        let solved = value_iteration(&m, &ValueFunction::zeros(m.n_states()), theta, MAX_ITERS);
        match (oracle_policy_enum(&m, horizon), solved) {
            (Ok((v, _)), Ok(s)) => {
                let gap = v.sup_distance(&s.v_star);
                worst = worst.max(gap);
                ok &= gap <= allowed;
            }
            _ => ok = false,
        }
    }
    claim(
        "policy-enumeration-agreement",
        ok,
        format!("max gap {worst:e}"),
    )
}
