//! Numeric evaluation engine: expected total rewards in games, worst-case
//! values under multi-strategies, soundness checks, and penalty evaluation.
//!
//! All computations run value iteration in double precision over a shared
//! generalised Bellman operator. Two qualitative precomputations keep the
//! iteration honest:
//!
//! * the zero-value region (states from which total reward 0 is enforceable)
//!   is pinned to 0 before iterating, so the least fixed point is reached
//!   even in the presence of zero-reward cycles;
//! * for purely maximising objectives, divergence is detected structurally
//!   (a reachable end component containing a positive-reward pair) and the
//!   affected states are flagged infinite instead of iterated.

use std::collections::{BTreeMap, BTreeSet};

use num::Zero;

use crate::game::{
    reduce_reachability, MultiStrategy, PenaltyKind, PenaltyScheme, Property, PropertyKind,
    Relation, RewardStructure, StateId, StochasticGame,
};
use crate::rational::{to_f64, Rational};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MinMax {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObjectiveMode {
    pub controller: MinMax,
    pub environment: MinMax,
}

impl ObjectiveMode {
    pub const MIN_MAX: ObjectiveMode = ObjectiveMode {
        controller: MinMax::Min,
        environment: MinMax::Max,
    };
    pub const MAX_MIN: ObjectiveMode = ObjectiveMode {
        controller: MinMax::Max,
        environment: MinMax::Min,
    };
    pub const MAX_MAX: ObjectiveMode = ObjectiveMode {
        controller: MinMax::Max,
        environment: MinMax::Max,
    };
    pub const MIN_MIN: ObjectiveMode = ObjectiveMode {
        controller: MinMax::Min,
        environment: MinMax::Min,
    };
}

#[derive(Debug, Clone)]
pub struct ValueVector {
    pub values: Vec<f64>,
    pub infinite: Vec<bool>,
    pub converged: bool,
    pub iterations: usize,
}

impl ValueVector {
    pub fn at(&self, s: StateId) -> f64 {
        if self.infinite[s] {
            f64::INFINITY
        } else {
            self.values[s]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorstCase {
    Low,
    High,
}

/// One state's evaluation rule: a convex combination of branches, each branch
/// aggregating over its candidate actions with the state's inner operator.
#[derive(Debug, Clone)]
pub struct StateRule {
    pub inner: MinMax,
    /// (weight, candidate action indices); weights sum to 1.
    pub branches: Vec<(f64, Vec<usize>)>,
}

/// A full evaluation problem over a game: per-state rules plus per-pair
/// rewards (kept both as doubles and as exact zero-flags for the qualitative
/// precomputations).
pub struct EvalSpec {
    pub rules: Vec<StateRule>,
    pub reward: Vec<Vec<f64>>,
    pub reward_zero: Vec<Vec<bool>>,
}

impl EvalSpec {
    pub fn from_reward(g: &StochasticGame, r: &RewardStructure, mode: ObjectiveMode) -> EvalSpec {
        let rules = (0..g.num_states())
            .map(|s| StateRule {
                inner: if g.is_controller(s) {
                    mode.controller
                } else {
                    mode.environment
                },
                branches: vec![(1.0, (0..g.actions(s).len()).collect())],
            })
            .collect();
        EvalSpec {
            rules,
            reward: reward_table(g, r),
            reward_zero: reward_zero_table(g, r),
        }
    }

    /// The mixed operator of a multi-strategy: controller states mix over the
    /// allowed-set distribution with an inner min (worst-low) or max
    /// (worst-high); environment states use the same direction over all
    /// actions.
    pub fn from_multistrategy(
        g: &StochasticGame,
        theta: &MultiStrategy,
        r: &RewardStructure,
        direction: WorstCase,
    ) -> Result<EvalSpec, String> {
        let inner = match direction {
            WorstCase::Low => MinMax::Min,
            WorstCase::High => MinMax::Max,
        };
        let mut rules = Vec::with_capacity(g.num_states());
        for s in 0..g.num_states() {
            if g.is_controller(s) {
                let dist = theta
                    .choice
                    .get(&s)
                    .ok_or_else(|| format!("multi-strategy undefined at {}", g.state_name(s)))?;
                let branches = dist
                    .iter()
                    .map(|(set, w)| (to_f64(w), set.iter().copied().collect()))
                    .collect();
                rules.push(StateRule { inner, branches });
            } else {
                rules.push(StateRule {
                    inner,
                    branches: vec![(1.0, (0..g.actions(s).len()).collect())],
                });
            }
        }
        Ok(EvalSpec {
            rules,
            reward: reward_table(g, r),
            reward_zero: reward_zero_table(g, r),
        })
    }

    fn all_max(&self) -> bool {
        self.rules.iter().all(|r| r.inner == MinMax::Max)
    }

    /// Candidate actions of a state across all branches.
    fn options(&self, s: StateId) -> BTreeSet<usize> {
        self.rules[s]
            .branches
            .iter()
            .flat_map(|(_, opts)| opts.iter().copied())
            .collect()
    }
}

fn reward_table(g: &StochasticGame, r: &RewardStructure) -> Vec<Vec<f64>> {
    (0..g.num_states())
        .map(|s| {
            (0..g.actions(s).len())
                .map(|a| to_f64(&r.get(s, a)))
                .collect()
        })
        .collect()
}

fn reward_zero_table(g: &StochasticGame, r: &RewardStructure) -> Vec<Vec<bool>> {
    (0..g.num_states())
        .map(|s| {
            (0..g.actions(s).len())
                .map(|a| r.get(s, a).is_zero())
                .collect()
        })
        .collect()
}

/// States from which the operator's value is exactly zero: the greatest set
/// closed under "every branch can (min) / must (max) stay inside with zero
/// reward".
fn zero_region(g: &StochasticGame, spec: &EvalSpec) -> Vec<bool> {
    let n = g.num_states();
    let mut zero = vec![true; n];
    let mut changed = true;
    while changed {
        changed = false;
        for s in 0..n {
            if !zero[s] {
                continue;
            }
            let rule = &spec.rules[s];
            let ok = rule.branches.iter().all(|(_, opts)| {
                let action_ok = |a: &usize| {
                    spec.reward_zero[s][*a]
                        && g.actions(s)[*a].transitions.iter().all(|(t, _)| zero[*t])
                };
                match rule.inner {
                    MinMax::Min => opts.iter().any(action_ok),
                    MinMax::Max => opts.iter().all(action_ok),
                }
            });
            if !ok {
                zero[s] = false;
                changed = true;
            }
        }
    }
    zero
}

/// Divergent states of a purely maximising objective: those that can reach
/// (through candidate actions and any positive-probability branch) an end
/// component containing a positive-reward candidate pair.
fn divergent_region(g: &StochasticGame, spec: &EvalSpec) -> Vec<bool> {
    let n = g.num_states();
    let options: Vec<Vec<usize>> = (0..n).map(|s| spec.options(s).into_iter().collect()).collect();
    // Maximal end components via iterated SCC refinement on state-action pairs.
    let mut enabled: Vec<Vec<bool>> = options.iter().map(|o| vec![true; o.len()]).collect();
    let mut comp_of = vec![0usize; n];
    loop {
        let mut graph = petgraph::graph::DiGraph::<(), ()>::new();
        let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
        for s in 0..n {
            for (i, &a) in options[s].iter().enumerate() {
                if enabled[s][i] {
                    for (t, _) in &g.actions(s)[a].transitions {
                        graph.add_edge(nodes[s], nodes[*t], ());
                    }
                }
            }
        }
        let sccs = petgraph::algo::tarjan_scc(&graph);
        for (c, comp) in sccs.iter().enumerate() {
            for node in comp {
                comp_of[node.index()] = c;
            }
        }
        let mut changed = false;
        for s in 0..n {
            for (i, &a) in options[s].iter().enumerate() {
                if enabled[s][i]
                    && g.actions(s)[a]
                        .transitions
                        .iter()
                        .any(|(t, _)| comp_of[*t] != comp_of[s])
                {
                    enabled[s][i] = false;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    // Base: a surviving candidate pair with positive reward whose component
    // can sustain itself (the pair stays inside its component by construction).
    let mut divergent = vec![false; n];
    for s in 0..n {
        for (i, &a) in options[s].iter().enumerate() {
            if enabled[s][i] && !spec.reward_zero[s][a] {
                divergent[s] = true;
            }
        }
    }
    // Backward closure through any candidate action edge.
    let mut changed = true;
    while changed {
        changed = false;
        for s in 0..n {
            if divergent[s] {
                continue;
            }
            let hits = options[s].iter().any(|&a| {
                g.actions(s)[a].transitions.iter().any(|(t, _)| divergent[*t])
            });
            if hits {
                divergent[s] = true;
                changed = true;
            }
        }
    }
    divergent
}

/// Runs value iteration for a generalised spec.
pub fn evaluate(
    g: &StochasticGame,
    spec: &EvalSpec,
    tol: f64,
    max_iter: usize,
) -> ValueVector {
    let n = g.num_states();
    let zero = zero_region(g, spec);
    let infinite = if spec.all_max() {
        divergent_region(g, spec)
    } else {
        vec![false; n]
    };
    let trans: Vec<Vec<Vec<(usize, f64)>>> = (0..n)
        .map(|s| {
            g.actions(s)
                .iter()
                .map(|a| a.transitions.iter().map(|(t, p)| (*t, to_f64(p))).collect())
                .collect()
        })
        .collect();
    let mut x = vec![0.0f64; n];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut delta: f64 = 0.0;
        for s in 0..n {
            if zero[s] || infinite[s] {
                continue;
            }
            let rule = &spec.rules[s];
            let mut val = 0.0;
            for (w, opts) in &rule.branches {
                let mut agg = match rule.inner {
                    MinMax::Min => f64::INFINITY,
                    MinMax::Max => f64::NEG_INFINITY,
                };
                for &a in opts {
                    let mut q = spec.reward[s][a];
                    for (t, p) in &trans[s][a] {
                        q += p * x[*t];
                    }
                    agg = match rule.inner {
                        MinMax::Min => agg.min(q),
                        MinMax::Max => agg.max(q),
                    };
                }
                val += w * agg;
            }
            delta = delta.max((val - x[s]).abs());
            x[s] = val;
        }
        // The remaining error of a geometric tail can exceed the last
        // residual by the contraction factor ratio; stopping three orders
        // below the requested tolerance absorbs rates up to ~0.999.
        if delta < tol * 1e-3 {
            converged = true;
            break;
        }
    }
    ValueVector {
        values: x,
        infinite,
        converged,
        iterations,
    }
}

/// Optimal expected total reward under the chosen min/max pair of operators.
pub fn total_reward_values(
    g: &StochasticGame,
    r: &RewardStructure,
    mode: ObjectiveMode,
    tol: f64,
    max_iter: usize,
) -> ValueVector {
    let spec = EvalSpec::from_reward(g, r, mode);
    evaluate(g, &spec, tol, max_iter)
}

/// True iff the cooperative supremum of the expected total reward is finite
/// from every state (no reachable end component contains a positive-reward
/// pair).
pub fn finite_reward_check(g: &StochasticGame, r: &RewardStructure) -> bool {
    let spec = EvalSpec::from_reward(g, r, ObjectiveMode::MAX_MAX);
    !divergent_region(g, &spec).iter().any(|&d| d)
}

/// Worst-case expected total reward over strategies compliant with θ and all
/// environment strategies: the infimum (`Low`) or supremum (`High`).
pub fn worst_case_reward(
    g: &StochasticGame,
    theta: &MultiStrategy,
    r: &RewardStructure,
    direction: WorstCase,
    tol: f64,
    max_iter: usize,
) -> Result<ValueVector, String> {
    let spec = EvalSpec::from_multistrategy(g, theta, r, direction)?;
    Ok(evaluate(g, &spec, tol, max_iter))
}

/// A property lowered to a total-reward objective on a (possibly
/// reachability-reduced) copy of the game.
pub struct Objective {
    pub game: StochasticGame,
    pub reward: RewardStructure,
    pub relation: Relation,
    pub threshold: Rational,
    /// Set when the property was a reachability one.
    pub targets: Option<BTreeSet<StateId>>,
    pub sink: Option<StateId>,
}

impl Objective {
    /// Maps a multi-strategy of the original game onto the objective's game.
    pub fn adapt(&self, theta: &MultiStrategy) -> MultiStrategy {
        match (&self.targets, self.sink) {
            (Some(targets), Some(sink)) => theta.adapted_for_reduction(&self.game, targets, sink),
            _ => theta.clone(),
        }
    }
}

/// Resolves a property against a game and its named reward structures.
pub fn build_objective(
    g: &StochasticGame,
    prop: &Property,
    rewards: &BTreeMap<String, RewardStructure>,
) -> Result<Objective, String> {
    match &prop.kind {
        PropertyKind::Reward(name) => {
            let reward = rewards
                .get(name)
                .ok_or_else(|| format!("unknown reward structure `{name}`"))?
                .clone();
            Ok(Objective {
                game: g.clone(),
                reward,
                relation: prop.relation,
                threshold: prop.threshold.clone(),
                targets: None,
                sink: None,
            })
        }
        PropertyKind::Reach(names) => {
            let mut targets = BTreeSet::new();
            for name in names {
                let set = g
                    .resolve_state_set(name)
                    .ok_or_else(|| format!("unknown state or label `{name}`"))?;
                targets.extend(set);
            }
            let red = reduce_reachability(g, &targets)?;
            Ok(Objective {
                game: red.game,
                reward: red.reward,
                relation: prop.relation,
                threshold: prop.threshold.clone(),
                targets: Some(targets),
                sink: Some(red.sink),
            })
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Soundness {
    pub sound: bool,
    /// Worst-case value minus the threshold (positive margins are good for
    /// lower-bound properties, negative ones for upper bounds).
    pub margin: f64,
    pub value: f64,
}

/// Checks soundness of a multi-strategy for a lowered objective.
pub fn check_sound_objective(
    obj: &Objective,
    theta: &MultiStrategy,
    tol: f64,
    max_iter: usize,
) -> Result<Soundness, String> {
    let adapted = obj.adapt(theta);
    let b = to_f64(&obj.threshold);
    match obj.relation {
        Relation::AtLeast => {
            let v = worst_case_reward(&obj.game, &adapted, &obj.reward, WorstCase::Low, tol, max_iter)?;
            let value = v.at(obj.game.initial);
            Ok(Soundness {
                sound: value >= b - soundness_tol(tol),
                margin: value - b,
                value,
            })
        }
        Relation::AtMost => {
            let v = worst_case_reward(&obj.game, &adapted, &obj.reward, WorstCase::High, tol, max_iter)?;
            let value = v.at(obj.game.initial);
            Ok(Soundness {
                sound: value <= b + soundness_tol(tol),
                margin: value - b,
                value,
            })
        }
    }
}

/// Soundness acceptance slack: slightly looser than the iteration tolerance
/// so that values approached from below (e.g. exactly-threshold fixpoints)
/// are not rejected for the residual iteration error.
fn soundness_tol(tol: f64) -> f64 {
    (tol * 1e3).max(1e-6)
}

/// Checks soundness of θ for a property on the original game.
pub fn check_sound(
    g: &StochasticGame,
    theta: &MultiStrategy,
    prop: &Property,
    rewards: &BTreeMap<String, RewardStructure>,
    tol: f64,
    max_iter: usize,
) -> Result<Soundness, String> {
    let obj = build_objective(g, prop, rewards)?;
    check_sound_objective(&obj, theta, tol, max_iter)
}

/// Sum of local penalties over all controller states, exact.
pub fn static_penalty(
    g: &StochasticGame,
    theta: &MultiStrategy,
    psi: &PenaltyScheme,
) -> Result<Rational, String> {
    if psi.kind != PenaltyKind::Static {
        return Err("penalty scheme is not static".into());
    }
    let mut total = Rational::zero();
    for s in g.controller_states() {
        total += crate::game::local_penalty(theta, g, s, psi)?;
    }
    Ok(total)
}

/// Worst-case expected accumulated local penalty: the auxiliary reward pays
/// the state's local penalty on every controller action, and both the
/// compliant controller and the environment maximise. Infinite values are
/// detected structurally and returned as `f64::INFINITY`.
pub fn dynamic_penalty(
    g: &StochasticGame,
    theta: &MultiStrategy,
    psi: &PenaltyScheme,
    tol: f64,
    max_iter: usize,
) -> Result<f64, String> {
    if psi.kind != PenaltyKind::Dynamic {
        return Err("penalty scheme is not dynamic".into());
    }
    let values = dynamic_penalty_values(g, theta, psi, tol, max_iter)?;
    Ok(values.at(g.initial))
}

pub fn dynamic_penalty_values(
    g: &StochasticGame,
    theta: &MultiStrategy,
    psi: &PenaltyScheme,
    tol: f64,
    max_iter: usize,
) -> Result<ValueVector, String> {
    let mut aux = RewardStructure::new("local-penalty");
    for s in g.controller_states() {
        let pen = crate::game::local_penalty(theta, g, s, psi)?;
        if !pen.is_zero() {
            for a in 0..g.actions(s).len() {
                aux.set(s, a, pen.clone());
            }
        }
    }
    let spec = EvalSpec::from_multistrategy(g, theta, &aux, WorstCase::High)?;
    Ok(evaluate(g, &spec, tol, max_iter))
}

/// Greedy extraction of an optimal deterministic strategy from converged
/// values. Among value-optimal actions, prefers those making progress toward
/// the zero-value region so the induced chain cannot idle in zero-reward
/// cycles.
pub fn extract_strategy(
    g: &StochasticGame,
    r: &RewardStructure,
    mode: ObjectiveMode,
    values: &ValueVector,
    tol: f64,
) -> BTreeMap<StateId, usize> {
    let spec = EvalSpec::from_reward(g, r, mode);
    let zero = zero_region(g, &spec);
    let n = g.num_states();
    let q = |s: usize, a: usize| -> f64 {
        let mut v = to_f64(&r.get(s, a));
        for (t, p) in &g.actions(s)[a].transitions {
            v += to_f64(p) * values.at(*t);
        }
        v
    };
    // Optimal action candidates per controller state.
    let candidates: Vec<Vec<usize>> = (0..n)
        .map(|s| {
            if !g.is_controller(s) {
                return Vec::new();
            }
            let dir = mode.controller;
            let mut best = match dir {
                MinMax::Min => f64::INFINITY,
                MinMax::Max => f64::NEG_INFINITY,
            };
            for a in 0..g.actions(s).len() {
                let v = q(s, a);
                best = match dir {
                    MinMax::Min => best.min(v),
                    MinMax::Max => best.max(v),
                };
            }
            (0..g.actions(s).len())
                .filter(|&a| (q(s, a) - best).abs() <= tol.max(1e-7))
                .collect()
        })
        .collect();
    // Rank: steps needed to make progress toward the zero region through
    // candidate actions (environment steps count any action).
    let mut rank = vec![usize::MAX; n];
    for s in 0..n {
        if zero[s] {
            rank[s] = 0;
        }
    }
    let mut changed = true;
    while changed {
        changed = false;
        for s in 0..n {
            if rank[s] == 0 {
                continue;
            }
            let acts: Vec<usize> = if g.is_controller(s) {
                candidates[s].clone()
            } else {
                (0..g.actions(s).len()).collect()
            };
            for a in acts {
                let best_succ = g.actions(s)[a]
                    .transitions
                    .iter()
                    .map(|(t, _)| rank[*t])
                    .min()
                    .unwrap_or(usize::MAX);
                if best_succ != usize::MAX && best_succ + 1 < rank[s] {
                    rank[s] = best_succ + 1;
                    changed = true;
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    for s in g.controller_states() {
        let pick = candidates[s]
            .iter()
            .copied()
            .min_by_key(|&a| {
                g.actions(s)[a]
                    .transitions
                    .iter()
                    .map(|(t, _)| rank[*t])
                    .min()
                    .unwrap_or(usize::MAX)
            })
            .unwrap_or(0);
        out.insert(s, pick);
    }
    out
}
