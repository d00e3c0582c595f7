//! Core model: stochastic two-player games, rewards, penalties, properties,
//! strategies and multi-strategies.
//!
//! States are owned either by the controller or by the environment; every
//! state has at least one enabled action, and each action carries an exact
//! rational probability distribution over successor states. Action names are
//! scoped per state.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num::{One, Zero};

use crate::rational::Rational;

pub type StateId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Player {
    Controller,
    Environment,
}

impl fmt::Display for Player {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Player::Controller => write!(f, "controller"),
            Player::Environment => write!(f, "environment"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Action {
    pub name: String,
    /// Successor distribution; probabilities are positive and sum to one.
    pub transitions: Vec<(StateId, Rational)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct State {
    pub name: String,
    pub player: Player,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StochasticGame {
    pub states: Vec<State>,
    pub initial: StateId,
    pub labels: BTreeMap<String, BTreeSet<StateId>>,
}

impl StochasticGame {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn state_index(&self, name: &str) -> Option<StateId> {
        self.states.iter().position(|s| s.name == name)
    }

    pub fn state_name(&self, s: StateId) -> &str {
        &self.states[s].name
    }

    pub fn is_controller(&self, s: StateId) -> bool {
        self.states[s].player == Player::Controller
    }

    pub fn actions(&self, s: StateId) -> &[Action] {
        &self.states[s].actions
    }

    pub fn action_index(&self, s: StateId, name: &str) -> Option<usize> {
        self.states[s].actions.iter().position(|a| a.name == name)
    }

    pub fn controller_states(&self) -> impl Iterator<Item = StateId> + '_ {
        (0..self.states.len()).filter(|&s| self.is_controller(s))
    }

    /// Resolves a state or label name to the set of states it denotes.
    pub fn resolve_state_set(&self, name: &str) -> Option<BTreeSet<StateId>> {
        if let Some(s) = self.state_index(name) {
            return Some(BTreeSet::from([s]));
        }
        self.labels.get(name).cloned()
    }

    /// Checks all structural invariants, returning one message per violation.
    pub fn validate(&self) -> Vec<String> {
        let mut report = Vec::new();
        if self.states.is_empty() {
            report.push("game has no states".to_string());
            return report;
        }
        if self.initial >= self.states.len() {
            report.push(format!("initial state id {} out of range", self.initial));
        }
        for (idx, st) in self.states.iter().enumerate() {
            if st.actions.is_empty() {
                report.push(format!("state {} has no enabled action", st.name));
            }
            let mut seen = BTreeSet::new();
            for act in &st.actions {
                if !seen.insert(act.name.clone()) {
                    report.push(format!(
                        "state {} has duplicate action {}",
                        st.name, act.name
                    ));
                }
                let mut sum = Rational::zero();
                let mut succs = BTreeSet::new();
                for (t, p) in &act.transitions {
                    if *t >= self.states.len() {
                        report.push(format!(
                            "state {} action {} has invalid successor id {}",
                            st.name, act.name, t
                        ));
                        continue;
                    }
                    if !succs.insert(*t) {
                        report.push(format!(
                            "state {} action {} lists successor {} twice",
                            st.name,
                            act.name,
                            self.states[*t].name
                        ));
                    }
                    if *p <= Rational::zero() {
                        report.push(format!(
                            "state {} action {} has non-positive probability",
                            st.name, act.name
                        ));
                    }
                    sum += p;
                }
                if !sum.is_one() {
                    report.push(format!(
                        "state {} action {} distribution sums to {}",
                        st.name,
                        act.name,
                        crate::rational::format_rational(&sum)
                    ));
                }
            }
            let _ = idx;
        }
        for (label, set) in &self.labels {
            for s in set {
                if *s >= self.states.len() {
                    report.push(format!("label {label} references invalid state id {s}"));
                }
            }
        }
        report
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewardStructure {
    pub name: String,
    /// Sparse map from (state, action index); missing entries are zero.
    pub entries: BTreeMap<(StateId, usize), Rational>,
}

impl RewardStructure {
    pub fn new(name: impl Into<String>) -> Self {
        RewardStructure {
            name: name.into(),
            entries: BTreeMap::new(),
        }
    }

    pub fn get(&self, s: StateId, a: usize) -> Rational {
        self.entries.get(&(s, a)).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn set(&mut self, s: StateId, a: usize, v: Rational) {
        if v.is_zero() {
            self.entries.remove(&(s, a));
        } else {
            self.entries.insert((s, a), v);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyKind {
    Static,
    Dynamic,
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PenaltyKind::Static => write!(f, "static"),
            PenaltyKind::Dynamic => write!(f, "dynamic"),
        }
    }
}

/// Penalty weights on controller state-action pairs plus the penalty type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PenaltyScheme {
    pub kind: PenaltyKind,
    pub entries: BTreeMap<(StateId, usize), Rational>,
}

impl PenaltyScheme {
    pub fn new(kind: PenaltyKind) -> Self {
        PenaltyScheme {
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn get(&self, s: StateId, a: usize) -> Rational {
        self.entries.get(&(s, a)).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn set(&mut self, s: StateId, a: usize, v: Rational) {
        if v.is_zero() {
            self.entries.remove(&(s, a));
        } else {
            self.entries.insert((s, a), v);
        }
    }

    pub fn with_kind(&self, kind: PenaltyKind) -> Self {
        PenaltyScheme {
            kind,
            entries: self.entries.clone(),
        }
    }

    /// Drops all entries on the given states (used after target redirection).
    pub fn without_states(&self, states: &BTreeSet<StateId>) -> Self {
        PenaltyScheme {
            kind: self.kind,
            entries: self
                .entries
                .iter()
                .filter(|((s, _), _)| !states.contains(s))
                .map(|(k, v)| (*k, v.clone()))
                .collect(),
        }
    }

    /// Sum of ψ over all pairs of one state.
    pub fn state_sum(&self, s: StateId) -> Rational {
        self.entries
            .iter()
            .filter(|((t, _), _)| *t == s)
            .map(|(_, v)| v.clone())
            .sum()
    }

    pub fn total(&self) -> Rational {
        self.entries.values().cloned().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    AtLeast,
    AtMost,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Relation::AtLeast => write!(f, ">="),
            Relation::AtMost => write!(f, "<="),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PropertyKind {
    /// Reachability of any state matched by the listed state or label names.
    Reach(Vec<String>),
    /// Expected total reward for the named reward structure.
    Reward(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Property {
    pub kind: PropertyKind,
    pub relation: Relation,
    pub threshold: Rational,
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let thr = crate::rational::format_rational(&self.threshold);
        match &self.kind {
            PropertyKind::Reach(targets) => {
                write!(f, "P{}{} [F {}]", self.relation, thr, targets.join(" "))
            }
            PropertyKind::Reward(name) => write!(f, "R{{{}}}{}{}", name, self.relation, thr),
        }
    }
}

/// A (possibly randomised) memoryless strategy for one player.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemorylessStrategy {
    /// Per owned state: distribution over enabled action indices.
    pub choice: BTreeMap<StateId, Vec<(usize, Rational)>>,
}

impl MemorylessStrategy {
    pub fn deterministic(choice: BTreeMap<StateId, usize>) -> Self {
        MemorylessStrategy {
            choice: choice
                .into_iter()
                .map(|(s, a)| (s, vec![(a, Rational::one())]))
                .collect(),
        }
    }
}

/// A multi-strategy: per controller state, a distribution over non-empty
/// sets of allowed actions. Deterministic iff every distribution is Dirac.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiStrategy {
    pub choice: BTreeMap<StateId, Vec<(BTreeSet<usize>, Rational)>>,
}

impl MultiStrategy {
    /// The multi-strategy allowing every action everywhere.
    pub fn allow_all(g: &StochasticGame) -> Self {
        let mut choice = BTreeMap::new();
        for s in g.controller_states() {
            let all: BTreeSet<usize> = (0..g.actions(s).len()).collect();
            choice.insert(s, vec![(all, Rational::one())]);
        }
        MultiStrategy { choice }
    }

    /// Builds a deterministic multi-strategy from fixed allowed sets.
    pub fn from_sets(sets: BTreeMap<StateId, BTreeSet<usize>>) -> Self {
        MultiStrategy {
            choice: sets
                .into_iter()
                .map(|(s, set)| (s, vec![(set, Rational::one())]))
                .collect(),
        }
    }

    /// Canonical form: branches sorted by allowed set, equal sets merged.
    pub fn normalized(&self) -> MultiStrategy {
        let choice = self
            .choice
            .iter()
            .map(|(s, dist)| {
                let mut merged: BTreeMap<BTreeSet<usize>, Rational> = BTreeMap::new();
                for (set, w) in dist {
                    *merged.entry(set.clone()).or_insert_with(Rational::zero) += w.clone();
                }
                (*s, merged.into_iter().collect())
            })
            .collect();
        MultiStrategy { choice }
    }

    pub fn is_deterministic(&self) -> bool {
        self.choice.values().all(|dist| dist.len() == 1)
    }

    /// The single allowed set at `s`; panics if the choice is not Dirac.
    pub fn allowed_set(&self, s: StateId) -> &BTreeSet<usize> {
        let dist = &self.choice[&s];
        assert_eq!(dist.len(), 1, "multi-strategy not deterministic at {s}");
        &dist[0].0
    }

    pub fn distribution(&self, s: StateId) -> &[(BTreeSet<usize>, Rational)] {
        &self.choice[&s]
    }

    /// Checks validity against a game, returning violations.
    pub fn validate(&self, g: &StochasticGame) -> Vec<String> {
        let mut report = Vec::new();
        for s in g.controller_states() {
            match self.choice.get(&s) {
                None => report.push(format!(
                    "no choice for controller state {}",
                    g.state_name(s)
                )),
                Some(dist) => {
                    let mut sum = Rational::zero();
                    for (set, w) in dist {
                        if set.is_empty() {
                            report.push(format!("empty allowed set at {}", g.state_name(s)));
                        }
                        for a in set {
                            if *a >= g.actions(s).len() {
                                report.push(format!(
                                    "invalid action index {} at {}",
                                    a,
                                    g.state_name(s)
                                ));
                            }
                        }
                        if *w <= Rational::zero() {
                            report.push(format!(
                                "non-positive weight at {}",
                                g.state_name(s)
                            ));
                        }
                        sum += w;
                    }
                    if !sum.is_one() {
                        report.push(format!(
                            "weights at {} sum to {}",
                            g.state_name(s),
                            crate::rational::format_rational(&sum)
                        ));
                    }
                }
            }
        }
        for s in self.choice.keys() {
            if *s >= g.num_states() || !g.is_controller(*s) {
                report.push(format!("choice on non-controller state id {s}"));
            }
        }
        report
    }

    /// Adapts a multi-strategy of the original game to a reachability-reduced
    /// copy: redirected target states and the sink get their single action.
    pub fn adapted_for_reduction(
        &self,
        reduced: &StochasticGame,
        targets: &BTreeSet<StateId>,
        sink: StateId,
    ) -> MultiStrategy {
        let mut choice = self.choice.clone();
        for s in reduced.controller_states() {
            if targets.contains(&s) || s == sink {
                choice.insert(s, vec![(BTreeSet::from([0usize]), Rational::one())]);
            }
        }
        MultiStrategy { choice }
    }
}

/// Result of redirecting a target set to a fresh rewarded sink.
pub struct Reduced {
    pub game: StochasticGame,
    pub reward: RewardStructure,
    pub sink: StateId,
}

/// Replaces all outgoing transitions of target states with a single
/// probability-one action into a fresh controller sink; entering the sink
/// earns reward 1, everything else 0. Reach probability in the original game
/// then equals expected total reward in the result, strategy by strategy.
pub fn reduce_reachability(
    g: &StochasticGame,
    targets: &BTreeSet<StateId>,
) -> Result<Reduced, String> {
    if targets.is_empty() {
        return Err("empty target set".into());
    }
    for t in targets {
        if *t >= g.num_states() {
            return Err(format!("invalid target state id {t}"));
        }
    }
    let mut states = g.states.clone();
    let sink = states.len();
    let mut reward = RewardStructure::new("reach");
    for &t in targets {
        states[t].actions = vec![Action {
            name: "goal".to_string(),
            transitions: vec![(sink, Rational::one())],
        }];
        reward.set(t, 0, Rational::one());
    }
    states.push(State {
        name: fresh_sink_name(g),
        player: Player::Controller,
        actions: vec![Action {
            name: "done".to_string(),
            transitions: vec![(sink, Rational::one())],
        }],
    });
    Ok(Reduced {
        game: StochasticGame {
            states,
            initial: g.initial,
            labels: g.labels.clone(),
        },
        reward,
        sink,
    })
}

fn fresh_sink_name(g: &StochasticGame) -> String {
    let mut name = "sink".to_string();
    while g.state_index(&name).is_some() {
        name.push('_');
    }
    name
}

/// Restricts a game to the actions a deterministic multi-strategy allows.
pub fn induced_model(
    g: &StochasticGame,
    theta: &MultiStrategy,
) -> Result<StochasticGame, String> {
    if !theta.is_deterministic() {
        return Err("multi-strategy is not deterministic".into());
    }
    let mut states = g.states.clone();
    for s in g.controller_states() {
        let allowed = theta
            .choice
            .get(&s)
            .ok_or_else(|| format!("multi-strategy undefined at {}", g.state_name(s)))?;
        let set = &allowed[0].0;
        states[s].actions = g.actions(s)
            .iter()
            .enumerate()
            .filter(|(i, _)| set.contains(i))
            .map(|(_, a)| a.clone())
            .collect();
        if states[s].actions.is_empty() {
            return Err(format!("empty allowed set at {}", g.state_name(s)));
        }
    }
    Ok(StochasticGame {
        states,
        initial: g.initial,
        labels: g.labels.clone(),
    })
}

/// Expected ψ-weight of disallowed actions at one controller state.
pub fn local_penalty(
    theta: &MultiStrategy,
    g: &StochasticGame,
    s: StateId,
    psi: &PenaltyScheme,
) -> Result<Rational, String> {
    if !g.is_controller(s) {
        return Err(format!("{} is not a controller state", g.state_name(s)));
    }
    let dist = theta
        .choice
        .get(&s)
        .ok_or_else(|| format!("multi-strategy undefined at {}", g.state_name(s)))?;
    let mut total = Rational::zero();
    for (set, w) in dist {
        for a in 0..g.actions(s).len() {
            if !set.contains(&a) {
                total += w.clone() * psi.get(s, a);
            }
        }
    }
    Ok(total)
}
