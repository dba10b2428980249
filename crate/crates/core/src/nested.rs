//! Nested risk measures on finite scenario trees.
//!
//! A tree of uniform depth `T` encodes a filtration: the nodes at depth `t`
//! are the atoms of `F_t` and the branch probabilities of a node's children
//! are the conditional law given that atom. `ρ_t(Z_t)` is evaluated by
//! folding `σ` from depth `t` back to the root.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::risk::{Atom, DiscreteDistribution, RiskSpec, SupportBounds, PROB_SUM_TOL};

/// Slack allowed when checking process preconditions (monotonicity,
/// increment bounds) against floating-point data.
pub const PRECONDITION_TOL: f64 = 1e-12;

/// Slack allowed on the asserted inequalities.
pub const CHECK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TreeError {
    #[error("tree has no nodes")]
    Empty,
    #[error("node {index}: id {id} is not dense (expected {index})")]
    BadId { index: usize, id: usize },
    #[error("node 0 must be the root (parent null, prob 1.0)")]
    BadRoot,
    #[error("node {node}: parent {parent} does not precede it")]
    ParentOrder { node: usize, parent: usize },
    #[error("node {node}: branch probability {prob} outside (0, 1]")]
    BadProbability { node: usize, prob: f64 },
    #[error("node {node}: children probabilities sum to {sum}")]
    ChildProbabilitySum { node: usize, sum: f64 },
    #[error("leaf {node} at depth {depth}, but the tree depth is {expected}")]
    RaggedDepth {
        node: usize,
        depth: usize,
        expected: usize,
    },
    #[error("node {node}: missing process value")]
    MissingValue { node: usize },
    #[error("node {node}: process value {value} is not finite")]
    NonFiniteValue { node: usize, value: f64 },
    #[error("process has {got} values for {expected} nodes")]
    ProcessLength { got: usize, expected: usize },
    #[error("depth {t} exceeds tree depth {depth}")]
    DepthOutOfRange { t: usize, depth: usize },
    #[error("edge {parent} -> {child}: process increases from {from} to {to}")]
    NotNonIncreasing {
        parent: usize,
        child: usize,
        from: f64,
        to: f64,
    },
    #[error("edge {parent} -> {child}: increment {increment} outside [0, {bound}]")]
    IncrementOutOfRange {
        parent: usize,
        child: usize,
        increment: f64,
        bound: f64,
    },
    #[error("increment bounds cover {got} steps, tree needs {needed}")]
    EpsLength { got: usize, needed: usize },
    #[error("increment bound eps[{index}] = {value} is not finite and non-negative")]
    BadEps { index: usize, value: f64 },
    #[error("tree of depth 0 has no first-stage subtrees")]
    TooShallow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub depth: usize,
    pub parent: Option<usize>,
    pub prob: f64,
    pub children: Vec<usize>,
}

/// A finite rooted tree with uniform leaf depth. Parents always precede
/// their children in index order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    nodes: Vec<TreeNode>,
    depth: usize,
}

impl ScenarioTree {
    /// `parents[0]` must be `None` with probability 1; every other node names
    /// an earlier node as parent.
    pub fn from_parents(parents: &[Option<usize>], probs: &[f64]) -> Result<Self, TreeError> {
        assert_eq!(parents.len(), probs.len(), "parents and probs differ in length");
        if parents.is_empty() {
            return Err(TreeError::Empty);
        }
        if parents[0].is_some() || probs[0] != 1.0 {
            return Err(TreeError::BadRoot);
        }
        let mut nodes: Vec<TreeNode> = Vec::with_capacity(parents.len());
        for (node, (&parent, &prob)) in parents.iter().zip(probs).enumerate() {
            if !(prob > 0.0 && prob <= 1.0) {
                return Err(TreeError::BadProbability { node, prob });
            }
            let depth = match parent {
                None if node == 0 => 0,
                None => return Err(TreeError::BadRoot),
                Some(p) if p >= node => return Err(TreeError::ParentOrder { node, parent: p }),
                Some(p) => {
                    nodes[p].children.push(node);
                    nodes[p].depth + 1
                }
            };
            nodes.push(TreeNode {
                depth,
                parent,
                prob,
                children: Vec::new(),
            });
        }
        let depth = nodes.iter().map(|n| n.depth).max().unwrap_or(0);
        for (index, node) in nodes.iter().enumerate() {
            if node.children.is_empty() {
                if node.depth != depth {
                    return Err(TreeError::RaggedDepth {
                        node: index,
                        depth: node.depth,
                        expected: depth,
                    });
                }
            } else {
                let sum: f64 = node.children.iter().map(|&c| nodes[c].prob).sum();
                if (sum - 1.0).abs() > PROB_SUM_TOL {
                    return Err(TreeError::ChildProbabilitySum { node: index, sum });
                }
            }
        }
        Ok(Self { nodes, depth })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Depth `T` shared by every leaf.
    pub fn depth(&self) -> usize {
        self.depth
    }

    fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.parent.map(|p| (p, i)))
    }

    fn conditional_law(&self, node: usize, values: &[f64]) -> DiscreteDistribution {
        let atoms = self.nodes[node]
            .children
            .iter()
            .map(|&c| Atom {
                value: values[c],
                prob: self.nodes[c].prob,
            })
            .collect();
        DiscreteDistribution::from_trusted(atoms)
    }
}

/// Node values `Z_t(node)` of a process adapted to a tree.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess {
    values: Vec<f64>,
}

impl AdaptedProcess {
    pub fn new(tree: &ScenarioTree, values: Vec<f64>) -> Result<Self, TreeError> {
        if values.len() != tree.len() {
            return Err(TreeError::ProcessLength {
                got: values.len(),
                expected: tree.len(),
            });
        }
        if let Some((node, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(TreeError::NonFiniteValue { node, value });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bounds(&self) -> SupportBounds {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        SupportBounds { lo, hi }
    }

    fn require_non_increasing(&self, tree: &ScenarioTree) -> Result<(), TreeError> {
        for (parent, child) in tree.edges() {
            let (from, to) = (self.values[parent], self.values[child]);
            if to > from + PRECONDITION_TOL {
                return Err(TreeError::NotNonIncreasing {
                    parent,
                    child,
                    from,
                    to,
                });
            }
        }
        Ok(())
    }

    fn require_increments(
        &self,
        tree: &ScenarioTree,
        bound_at: impl Fn(usize) -> f64,
    ) -> Result<(), TreeError> {
        for (parent, child) in tree.edges() {
            let increment = self.values[child] - self.values[parent];
            let bound = bound_at(tree.nodes[parent].depth);
            if increment < -PRECONDITION_TOL || increment > bound + PRECONDITION_TOL {
                return Err(TreeError::IncrementOutOfRange {
                    parent,
                    child,
                    increment,
                    bound,
                });
            }
        }
        Ok(())
    }
}

/// `ρ_t(Z_t)`: the nested risk of the depth-`t` slice of `process`.
pub fn rho_t(
    tree: &ScenarioTree,
    process: &AdaptedProcess,
    spec: &RiskSpec,
    t: usize,
) -> Result<f64, TreeError> {
    if t > tree.depth {
        return Err(TreeError::DepthOutOfRange { t, depth: tree.depth });
    }
    let mut assigned = vec![0.0; tree.len()];
    for (i, node) in tree.nodes.iter().enumerate().rev() {
        if node.depth == t {
            assigned[i] = process.values[i];
        } else if node.depth < t {
            assigned[i] = spec.sigma(&tree.conditional_law(i, &assigned));
        }
    }
    Ok(assigned[0])
}

/// `(ρ_0, ρ_1, …, ρ_T)`.
pub fn rho_trace(tree: &ScenarioTree, process: &AdaptedProcess, spec: &RiskSpec) -> Vec<f64> {
    (0..=tree.depth)
        .map(|t| rho_t(tree, process, spec, t).expect("t within depth"))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitReport {
    /// `ρ_T`, the finite-depth proxy of `ρ_∞`.
    pub value: f64,
    pub trace: Vec<f64>,
    pub bounds: SupportBounds,
    pub trace_non_increasing: bool,
    pub trace_bounded: bool,
}

impl LimitReport {
    pub fn holds(&self) -> bool {
        self.trace_non_increasing && self.trace_bounded
    }
}

/// Evaluates the nested limit for a non-increasing bounded process and
/// checks that the trace is monotone and stays inside the process bounds.
pub fn rho_limit(
    tree: &ScenarioTree,
    process: &AdaptedProcess,
    spec: &RiskSpec,
) -> Result<LimitReport, TreeError> {
    process.require_non_increasing(tree)?;
    let bounds = process.bounds();
    let trace = rho_trace(tree, process, spec);
    let trace_non_increasing = trace.windows(2).all(|w| w[1] <= w[0] + CHECK_TOL);
    let trace_bounded = trace.iter().all(|&r| bounds.contains(r, CHECK_TOL));
    Ok(LimitReport {
        value: *trace.last().expect("trace is never empty"),
        trace,
        bounds,
        trace_non_increasing,
        trace_bounded,
    })
}

/// Bound on `|ρ_∞ − ρ_T|` for a cumulative discounted reward process with
/// rewards in `[0, r_max]`, truncated after depth `T`.
pub fn discounted_tail_bound(gamma: f64, r_max: f64, depth: usize) -> f64 {
    gamma.powi(depth as i32 + 1) * r_max / (1.0 - gamma)
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundViolation {
    pub t: usize,
    pub s: usize,
    pub difference: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct UniformBoundReport {
    pub pairs: usize,
    /// Smallest `e_t − (ρ_{t+s} − ρ_t)` over all pairs.
    pub min_upper_slack: f64,
    /// Smallest `ρ_{t+s} − ρ_t` over all pairs.
    pub min_lower_slack: f64,
    pub violations: Vec<BoundViolation>,
}

impl UniformBoundReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// For a non-decreasing process with increments bounded by `eps[t]` on the
/// step `t → t+1`, checks `0 ≤ ρ_{t+s} − ρ_t ≤ Σ_{τ≥t} eps[τ]` for every pair.
pub fn check_uniform_bound(
    tree: &ScenarioTree,
    process: &AdaptedProcess,
    spec: &RiskSpec,
    eps: &[f64],
) -> Result<UniformBoundReport, TreeError> {
    if eps.len() < tree.depth {
        return Err(TreeError::EpsLength {
            got: eps.len(),
            needed: tree.depth,
        });
    }
    if let Some((index, &value)) = eps
        .iter()
        .enumerate()
        .find(|(_, e)| !(e.is_finite() && **e >= 0.0))
    {
        return Err(TreeError::BadEps { index, value });
    }
    process.require_increments(tree, |t| eps[t])?;

    // e_t = Σ_{τ ≥ t} ε_τ
    let mut tails = vec![0.0; eps.len() + 1];
    for t in (0..eps.len()).rev() {
        tails[t] = tails[t + 1] + eps[t];
    }

    let trace = rho_trace(tree, process, spec);
    let mut report = UniformBoundReport {
        pairs: 0,
        min_upper_slack: f64::INFINITY,
        min_lower_slack: f64::INFINITY,
        violations: Vec::new(),
    };
    for t in 0..trace.len() {
        for u in t + 1..trace.len() {
            let difference = trace[u] - trace[t];
            let bound = tails[t];
            report.pairs += 1;
            report.min_upper_slack = report.min_upper_slack.min(bound - difference);
            report.min_lower_slack = report.min_lower_slack.min(difference);
            if difference < -CHECK_TOL || difference > bound + CHECK_TOL {
                report.violations.push(BoundViolation {
                    t,
                    s: u - t,
                    difference,
                    bound,
                });
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DecompositionReport {
    pub lhs: f64,
    pub rhs: f64,
}

impl DecompositionReport {
    pub fn residual(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }

    pub fn holds(&self) -> bool {
        self.residual() <= CHECK_TOL
    }
}

/// Compares `ρ_T(Z)` with `Z_0 + σ(ρ(Z'))`, where `Z'_t = Z_{t+1} − Z_0` is
/// evaluated separately on each first-stage subtree.
pub fn check_decomposition(
    tree: &ScenarioTree,
    process: &AdaptedProcess,
    spec: &RiskSpec,
) -> Result<DecompositionReport, TreeError> {
    if tree.depth == 0 {
        return Err(TreeError::TooShallow);
    }
    process.require_increments(tree, |_| f64::INFINITY)?;

    let lhs = rho_t(tree, process, spec, tree.depth)?;

    let z0 = process.values[0];
    let root = &tree.nodes[0];
    let atoms = root
        .children
        .iter()
        .map(|&c| Atom {
            value: subtree_value(tree, process, spec, c, z0),
            prob: tree.nodes[c].prob,
        })
        .collect();
    let rhs = z0 + spec.sigma(&DiscreteDistribution::from_trusted(atoms));
    Ok(DecompositionReport { lhs, rhs })
}

/// Depth-first nested value of the leaves below `node`, shifted by `-shift`.
fn subtree_value(
    tree: &ScenarioTree,
    process: &AdaptedProcess,
    spec: &RiskSpec,
    node: usize,
    shift: f64,
) -> f64 {
    let children = &tree.nodes[node].children;
    if children.is_empty() {
        return process.values[node] - shift;
    }
    let atoms = children
        .iter()
        .map(|&c| Atom {
            value: subtree_value(tree, process, spec, c, shift),
            prob: tree.nodes[c].prob,
        })
        .collect();
    spec.sigma(&DiscreteDistribution::from_trusted(atoms))
}

/// One entry of the tree file's `nodes` array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: usize,
    pub parent: Option<usize>,
    pub prob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
}

/// The tree file: nodes in parent-before-child order, plus optional
/// per-step increment bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeDocument {
    pub nodes: Vec<NodeRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<Vec<f64>>,
}

impl TreeDocument {
    pub fn from_parts(tree: &ScenarioTree, process: &AdaptedProcess, eps: Option<Vec<f64>>) -> Self {
        let nodes = tree
            .nodes
            .iter()
            .zip(&process.values)
            .enumerate()
            .map(|(id, (node, &z))| NodeRecord {
                id,
                parent: node.parent,
                prob: node.prob,
                z: Some(z),
            })
            .collect();
        Self { nodes, eps }
    }

    pub fn build(&self) -> Result<(ScenarioTree, AdaptedProcess), TreeError> {
        for (index, record) in self.nodes.iter().enumerate() {
            if record.id != index {
                return Err(TreeError::BadId { index, id: record.id });
            }
        }
        let parents: Vec<Option<usize>> = self.nodes.iter().map(|n| n.parent).collect();
        let probs: Vec<f64> = self.nodes.iter().map(|n| n.prob).collect();
        let tree = ScenarioTree::from_parents(&parents, &probs)?;
        let values = self
            .nodes
            .iter()
            .enumerate()
            .map(|(node, r)| r.z.ok_or(TreeError::MissingValue { node }))
            .collect::<Result<Vec<_>, _>>()?;
        let process = AdaptedProcess::new(&tree, values)?;
        Ok((tree, process))
    }
}
