//! Finite risk-averse MDP instances: validation, (de)serialisation and a
//! seeded random generator.

use indexmap::IndexMap;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::axioms::random_simplex;
use crate::risk::{Atom, DiscreteDistribution, RiskSpec, PROB_SUM_TOL};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("{path}: invalid risk spec: {message}")]
    RiskSpec { path: String, message: String },
    #[error("{path}: gamma {gamma} outside [0, 1)")]
    GammaRange { path: String, gamma: f64 },
    #[error("{path}: model has no states")]
    NoStates { path: String },
    #[error("{path}: duplicate state `{state}`")]
    DuplicateState { path: String, state: String },
    #[error("{path}: unknown state `{state}`")]
    UnknownState { path: String, state: String },
    #[error("{path}: state has no admissible actions")]
    EmptyActions { path: String },
    #[error("{path}: duplicate action `{action}`")]
    DuplicateAction { path: String, action: String },
    #[error("{path}: missing reward")]
    MissingReward { path: String },
    #[error("{path}: reward {reward} is negative")]
    RewardNegative { path: String, reward: f64 },
    #[error("{path}: reward {reward} is not finite")]
    RewardNonFinite { path: String, reward: f64 },
    #[error("{path}: missing transition row")]
    MissingTransition { path: String },
    #[error("{path}: transition row is empty")]
    EmptyTransition { path: String },
    #[error("{path}: probability {prob} is not positive")]
    ProbNonPositive { path: String, prob: f64 },
    #[error("{path}: probabilities sum to {sum}")]
    ProbSum { path: String, sum: f64 },
    #[error("{path}: next state `{state}` does not exist")]
    DanglingState { path: String, state: String },
    #[error("{path}: entry for undeclared action `{action}`")]
    UnknownAction { path: String, action: String },
}

impl ModelError {
    /// Stable machine-readable code, one per error kind.
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::Schema { .. } => "SCHEMA",
            ModelError::RiskSpec { .. } => "RISK_SPEC",
            ModelError::GammaRange { .. } => "GAMMA_RANGE",
            ModelError::NoStates { .. } => "NO_STATES",
            ModelError::DuplicateState { .. } => "DUPLICATE_STATE",
            ModelError::UnknownState { .. } => "UNKNOWN_STATE",
            ModelError::EmptyActions { .. } => "EMPTY_ACTIONS",
            ModelError::DuplicateAction { .. } => "DUPLICATE_ACTION",
            ModelError::MissingReward { .. } => "MISSING_REWARD",
            ModelError::RewardNegative { .. } => "REWARD_NEGATIVE",
            ModelError::RewardNonFinite { .. } => "REWARD_NONFINITE",
            ModelError::MissingTransition { .. } => "MISSING_TRANSITION",
            ModelError::EmptyTransition { .. } => "EMPTY_TRANSITION",
            ModelError::ProbNonPositive { .. } => "PROB_NONPOSITIVE",
            ModelError::ProbSum { .. } => "PROB_SUM",
            ModelError::DanglingState { .. } => "DANGLING_STATE",
            ModelError::UnknownAction { .. } => "UNKNOWN_ACTION",
        }
    }

    /// JSON path of the offending field.
    pub fn path(&self) -> &str {
        match self {
            ModelError::Schema { path, .. }
            | ModelError::RiskSpec { path, .. }
            | ModelError::GammaRange { path, .. }
            | ModelError::NoStates { path }
            | ModelError::DuplicateState { path, .. }
            | ModelError::UnknownState { path, .. }
            | ModelError::EmptyActions { path }
            | ModelError::DuplicateAction { path, .. }
            | ModelError::MissingReward { path }
            | ModelError::RewardNegative { path, .. }
            | ModelError::RewardNonFinite { path, .. }
            | ModelError::MissingTransition { path }
            | ModelError::EmptyTransition { path }
            | ModelError::ProbNonPositive { path, .. }
            | ModelError::ProbSum { path, .. }
            | ModelError::DanglingState { path, .. }
            | ModelError::UnknownAction { path, .. } => path,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeneratorError {
    #[error("{name} must be at least 1")]
    Zero { name: &'static str },
    #[error("branching {branching} exceeds the number of states {n_states}")]
    Branching { branching: usize, n_states: usize },
    #[error("gamma {0} outside [0, 1)")]
    Gamma(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("action index {action} is not admissible in state {state}")]
pub struct InadmissibleAction {
    pub state: usize,
    pub action: usize,
}

/// On-disk form of a model. Maps keep document order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk: Option<String>,
    pub states: Vec<String>,
    pub actions: IndexMap<String, Vec<String>>,
    pub rewards: IndexMap<String, IndexMap<String, f64>>,
    pub transitions: IndexMap<String, IndexMap<String, Vec<(String, f64)>>>,
}

/// A validated finite MDP. States and actions are addressed by index; names
/// are kept for I/O.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpModel {
    states: Vec<String>,
    actions: Vec<Vec<String>>,
    rewards: Vec<Vec<f64>>,
    transitions: Vec<Vec<Vec<(usize, f64)>>>,
    gamma: f64,
    risk: RiskSpec,
    r_max: f64,
}

impl MdpModel {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn state_names(&self) -> &[String] {
        &self.states
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    /// Admissible actions `A(s)` in list order.
    pub fn actions(&self, s: usize) -> &[String] {
        &self.actions[s]
    }

    pub fn action_index(&self, s: usize, name: &str) -> Option<usize> {
        self.actions[s].iter().position(|a| a == name)
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s][a]
    }

    /// Transition row of `(s, a)` as `(next state, probability)` in file order.
    pub fn transition(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[s][a]
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn risk(&self) -> RiskSpec {
        self.risk
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// `r_max / (1 − γ)`, the a-priori bound on every value.
    pub fn value_bound(&self) -> f64 {
        self.r_max / (1.0 - self.gamma)
    }

    pub fn with_risk(mut self, risk: RiskSpec) -> Self {
        self.risk = risk;
        self
    }

    /// Model with a different discount factor. Used by the harness
    /// self-tests to build deliberately mis-scaled operators.
    pub fn with_gamma_unchecked(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    /// Law of `V(s')` for `s'` drawn from the row of `(s, a)`; row order kept,
    /// duplicates not merged.
    pub fn next_value_distribution(
        &self,
        v: &ValueFunction,
        s: usize,
        a: usize,
    ) -> Result<DiscreteDistribution, InadmissibleAction> {
        if a >= self.actions[s].len() {
            return Err(InadmissibleAction { state: s, action: a });
        }
        Ok(DiscreteDistribution::from_trusted(
            self.transitions[s][a]
                .iter()
                .map(|&(next, prob)| Atom {
                    value: v.values[next],
                    prob,
                })
                .collect(),
        ))
    }

    pub fn to_document(&self) -> ModelDocument {
        let mut actions = IndexMap::new();
        let mut rewards = IndexMap::new();
        let mut transitions = IndexMap::new();
        for (s, name) in self.states.iter().enumerate() {
            actions.insert(name.clone(), self.actions[s].clone());
            let mut r = IndexMap::new();
            let mut t = IndexMap::new();
            for (a, action) in self.actions[s].iter().enumerate() {
                r.insert(action.clone(), self.rewards[s][a]);
                t.insert(
                    action.clone(),
                    self.transitions[s][a]
                        .iter()
                        .map(|&(next, p)| (self.states[next].clone(), p))
                        .collect(),
                );
            }
            rewards.insert(name.clone(), r);
            transitions.insert(name.clone(), t);
        }
        ModelDocument {
            gamma: self.gamma,
            risk: Some(self.risk.to_string()),
            states: self.states.clone(),
            actions,
            rewards,
            transitions,
        }
    }

    pub fn save_model(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model serialises")
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self, ModelError> {
        let risk = match &doc.risk {
            None => RiskSpec::Expectation,
            Some(s) => s.parse().map_err(|e: crate::risk::RiskSpecError| ModelError::RiskSpec {
                path: "$.risk".into(),
                message: e.to_string(),
            })?,
        };
        if !(doc.gamma >= 0.0 && doc.gamma < 1.0) {
            return Err(ModelError::GammaRange {
                path: "$.gamma".into(),
                gamma: doc.gamma,
            });
        }
        if doc.states.is_empty() {
            return Err(ModelError::NoStates {
                path: "$.states".into(),
            });
        }
        let mut index = IndexMap::new();
        for (i, name) in doc.states.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(ModelError::DuplicateState {
                    path: format!("$.states[{i}]"),
                    state: name.clone(),
                });
            }
        }
        for (section, keys) in [
            ("actions", doc.actions.keys().collect::<Vec<_>>()),
            ("rewards", doc.rewards.keys().collect()),
            ("transitions", doc.transitions.keys().collect()),
        ] {
            if let Some(k) = keys.into_iter().find(|k| !index.contains_key(*k)) {
                return Err(ModelError::UnknownState {
                    path: format!("$.{section}.{k}"),
                    state: k.clone(),
                });
            }
        }

        let mut actions = Vec::with_capacity(doc.states.len());
        let mut rewards = Vec::with_capacity(doc.states.len());
        let mut transitions = Vec::with_capacity(doc.states.len());
        let mut r_max: f64 = 0.0;
        for state in &doc.states {
            let path = format!("$.actions.{state}");
            let acts = doc
                .actions
                .get(state)
                .ok_or_else(|| ModelError::EmptyActions { path: path.clone() })?;
            if acts.is_empty() {
                return Err(ModelError::EmptyActions { path });
            }
            for (i, a) in acts.iter().enumerate() {
                if acts[..i].contains(a) {
                    return Err(ModelError::DuplicateAction {
                        path: format!("$.actions.{state}[{i}]"),
                        action: a.clone(),
                    });
                }
            }

            let state_rewards = doc.rewards.get(state);
            if let Some(extra) = state_rewards.and_then(|m| m.keys().find(|k| !acts.contains(k))) {
                return Err(ModelError::UnknownAction {
                    path: format!("$.rewards.{state}.{extra}"),
                    action: extra.clone(),
                });
            }
            let state_rows = doc.transitions.get(state);
            if let Some(extra) = state_rows.and_then(|m| m.keys().find(|k| !acts.contains(k))) {
                return Err(ModelError::UnknownAction {
                    path: format!("$.transitions.{state}.{extra}"),
                    action: extra.clone(),
                });
            }

            let mut rs = Vec::with_capacity(acts.len());
            let mut rows = Vec::with_capacity(acts.len());
            for action in acts {
                let path = format!("$.rewards.{state}.{action}");
                let r = *state_rewards
                    .and_then(|m| m.get(action))
                    .ok_or_else(|| ModelError::MissingReward { path: path.clone() })?;
                if !r.is_finite() {
                    return Err(ModelError::RewardNonFinite { path, reward: r });
                }
                if r < 0.0 {
                    return Err(ModelError::RewardNegative { path, reward: r });
                }
                r_max = r_max.max(r);
                rs.push(r);

                let path = format!("$.transitions.{state}.{action}");
                let row = state_rows
                    .and_then(|m| m.get(action))
                    .ok_or_else(|| ModelError::MissingTransition { path: path.clone() })?;
                if row.is_empty() {
                    return Err(ModelError::EmptyTransition { path });
                }
                let mut parsed = Vec::with_capacity(row.len());
                for (k, (next, p)) in row.iter().enumerate() {
                    if !(p.is_finite() && *p > 0.0) {
                        return Err(ModelError::ProbNonPositive {
                            path: format!("{path}[{k}]"),
                            prob: *p,
                        });
                    }
                    let target = *index.get(next).ok_or_else(|| ModelError::DanglingState {
                        path: format!("{path}[{k}]"),
                        state: next.clone(),
                    })?;
                    parsed.push((target, *p));
                }
                let sum: f64 = parsed.iter().map(|&(_, p)| p).sum();
                if (sum - 1.0).abs() > PROB_SUM_TOL {
                    return Err(ModelError::ProbSum { path, sum });
                }
                rows.push(parsed);
            }
            actions.push(acts.clone());
            rewards.push(rs);
            transitions.push(rows);
        }

        let model = MdpModel {
            states: doc.states,
            actions,
            rewards,
            transitions,
            gamma: doc.gamma,
            risk,
            r_max,
        };
        debug_assert!(model.value_bound().is_finite());
        Ok(model)
    }
}

/// Parses and validates a model document. Errors carry the JSON path of the
/// offending field.
pub fn load_model(text: &str) -> Result<MdpModel, ModelError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: ModelDocument = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ModelError::Schema {
            path: if path == "." { "$".into() } else { format!("$.{path}") },
            message: e.into_inner().to_string(),
        }
    })?;
    MdpModel::from_document(doc)
}

/// Seeded random instance: rewards uniform in `[0, 1]`, every row has
/// `branching` distinct successors with weights from a uniform simplex point.
pub fn random_model(
    n_states: usize,
    n_actions: usize,
    branching: usize,
    gamma: f64,
    seed: u64,
) -> Result<MdpModel, GeneratorError> {
    for (name, v) in [("n_states", n_states), ("n_actions", n_actions), ("branching", branching)] {
        if v == 0 {
            return Err(GeneratorError::Zero { name });
        }
    }
    if branching > n_states {
        return Err(GeneratorError::Branching { branching, n_states });
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(GeneratorError::Gamma(gamma));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states: Vec<String> = (0..n_states).map(|i| format!("s{i}")).collect();
    let action_names: Vec<String> = (0..n_actions).map(|i| format!("a{i}")).collect();
    let mut rewards = Vec::with_capacity(n_states);
    let mut transitions = Vec::with_capacity(n_states);
    let mut r_max: f64 = 0.0;
    for _ in 0..n_states {
        let mut rs = Vec::with_capacity(n_actions);
        let mut rows = Vec::with_capacity(n_actions);
        for _ in 0..n_actions {
            let r: f64 = rng.random_range(0.0..=1.0);
            r_max = r_max.max(r);
            rs.push(r);
            let targets = sample(&mut rng, n_states, branching).into_vec();
            let weights = random_simplex(&mut rng, branching);
            rows.push(targets.into_iter().zip(weights).collect());
        }
        rewards.push(rs);
        transitions.push(rows);
    }
    Ok(MdpModel {
        states,
        actions: vec![action_names; n_states],
        rewards,
        transitions,
        gamma,
        risk: RiskSpec::Expectation,
        r_max,
    })
}

/// A value per state, in the model's state order.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    values: Vec<f64>,
}

impl ValueFunction {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![0.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `‖self − other‖∞`.
    pub fn sup_distance(&self, other: &ValueFunction) -> f64 {
        assert_eq!(self.len(), other.len(), "value functions differ in length");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn named(&self, model: &MdpModel) -> IndexMap<String, f64> {
        model
            .state_names()
            .iter()
            .cloned()
            .zip(self.values.iter().copied())
            .collect()
    }
}

impl std::ops::Index<usize> for ValueFunction {
    type Output = f64;

    fn index(&self, s: usize) -> &f64 {
        &self.values[s]
    }
}

/// A stationary deterministic policy: one admissible action index per state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    choice: Vec<usize>,
}

impl Policy {
    pub fn new(model: &MdpModel, choice: Vec<usize>) -> Result<Self, InadmissibleAction> {
        assert_eq!(choice.len(), model.n_states(), "one action per state");
        if let Some((state, &action)) = choice
            .iter()
            .enumerate()
            .find(|(s, &a)| a >= model.actions(*s).len())
        {
            return Err(InadmissibleAction { state, action });
        }
        Ok(Self { choice })
    }

    pub fn action(&self, s: usize) -> usize {
        self.choice[s]
    }

    pub fn choices(&self) -> &[usize] {
        &self.choice
    }

    pub fn named(&self, model: &MdpModel) -> IndexMap<String, String> {
        self.choice
            .iter()
            .enumerate()
            .map(|(s, &a)| (model.state_names()[s].clone(), model.actions(s)[a].clone()))
            .collect()
    }
}
