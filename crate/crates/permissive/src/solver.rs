//! Native synthesis: anytime branch-and-bound over multi-strategy space,
//! exhaustive brute-force oracles, and ingestion of externally solved
//! models.
//!
//! The branch-and-bound fixes one controller state per level. A node is
//! pruned when its optimistic value — worst-case semantics over the
//! committed sets, best case at undecided states, adversarial environment —
//! already misses the property bound (no completion can be sound), or, in
//! static mode, when the penalty committed by the fixed states exceeds the
//! incumbent. Dynamic penalties are not monotone under further disallowing
//! at other states, so dynamic mode prunes by soundness and incumbent
//! comparison only.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use num::{One, Zero};

use crate::analysis::{
    build_objective, check_sound_objective, dynamic_penalty, evaluate, finite_reward_check,
    static_penalty, EvalSpec, MinMax, Objective, ObjectiveMode, StateRule, DEFAULT_MAX_ITER,
    DEFAULT_TOL,
};
use crate::game::{
    MultiStrategy, PenaltyKind, PenaltyScheme, Property, Relation, RewardStructure, StateId,
    StochasticGame,
};
use crate::milp::{self, MilpModel, VarMap};
use crate::randomized::GadgetMapping;
use crate::rational::{to_f64, Rational};

/// A synthesis instance with its property lowered to a total-reward
/// objective and the branching order fixed.
pub struct Problem {
    pub game: StochasticGame,
    pub obj: Objective,
    /// Penalties in original-game coordinates.
    pub psi: PenaltyScheme,
    /// Penalties used for dynamic evaluation on the lowered game: entries on
    /// target states are dropped (play stops once the target is reached).
    pub eval_psi: PenaltyScheme,
    /// Controller states branched over, in descending Σψ order.
    pub decision: Vec<StateId>,
    /// Controller states forced to allow-all (reachability targets).
    pub forced: BTreeSet<StateId>,
}

impl Problem {
    pub fn build(
        g: &StochasticGame,
        prop: &Property,
        rewards: &BTreeMap<String, RewardStructure>,
        psi: &PenaltyScheme,
    ) -> Result<Problem, String> {
        let obj = build_objective(g, prop, rewards)?;
        if !finite_reward_check(&obj.game, &obj.reward) {
            return Err("cooperative maximal expected reward is infinite".into());
        }
        let forced: BTreeSet<StateId> = match &obj.targets {
            Some(t) => t.iter().copied().filter(|&s| g.is_controller(s)).collect(),
            None => BTreeSet::new(),
        };
        let eval_psi = match &obj.targets {
            Some(t) => psi.without_states(t),
            None => psi.clone(),
        };
        let mut decision: Vec<StateId> = g
            .controller_states()
            .filter(|s| !forced.contains(s))
            .collect();
        decision.sort_by(|a, b| {
            psi.state_sum(*b)
                .cmp(&psi.state_sum(*a))
                .then(a.cmp(b))
        });
        Ok(Problem {
            game: g.clone(),
            obj,
            psi: psi.clone(),
            eval_psi,
            decision,
            forced,
        })
    }

    /// Assembles a full multi-strategy on the original game from per-decision
    /// distributions, with allow-all at forced and unlisted states.
    fn theta_from(&self, dists: &BTreeMap<StateId, Vec<(BTreeSet<usize>, Rational)>>) -> MultiStrategy {
        let mut choice = BTreeMap::new();
        for s in self.game.controller_states() {
            match dists.get(&s) {
                Some(d) => {
                    choice.insert(s, d.clone());
                }
                None => {
                    let all: BTreeSet<usize> = (0..self.game.actions(s).len()).collect();
                    choice.insert(s, vec![(all, Rational::one())]);
                }
            }
        }
        MultiStrategy { choice }
    }

    fn accept_slack(&self, tol: f64) -> f64 {
        (tol * 1e3).max(1e-6)
    }

    /// Exact static penalty / numeric dynamic penalty of a full θ.
    fn penalty(
        &self,
        theta: &MultiStrategy,
        tol: f64,
        max_iter: usize,
    ) -> Result<(f64, Option<Rational>), String> {
        match self.psi.kind {
            PenaltyKind::Static => {
                let p = static_penalty(&self.game, theta, &self.psi)?;
                Ok((to_f64(&p), Some(p)))
            }
            PenaltyKind::Dynamic => {
                let adapted = self.obj.adapt(theta);
                let p = dynamic_penalty(&self.obj.game, &adapted, &self.eval_psi, tol, max_iter)?;
                Ok((p, None))
            }
        }
    }
}

/// The best sound multi-strategy seen so far.
#[derive(Debug, Clone)]
pub struct Incumbent {
    pub theta: MultiStrategy,
    pub penalty: f64,
    pub penalty_exact: Option<Rational>,
    /// Worst-case value minus threshold (sign convention of `Soundness`).
    pub margin: f64,
    pub value: f64,
    pub found_at: Duration,
}

#[derive(Debug)]
pub struct SolveOutcome {
    pub incumbent: Option<Incumbent>,
    /// True when the search space was exhausted rather than cut short.
    pub optimal: bool,
    pub nodes: u64,
}

/// One branching alternative at a decision state: a distribution over
/// non-empty allowed sets with its exact static-formula local penalty.
#[derive(Debug, Clone)]
struct Candidate {
    dist: Vec<(BTreeSet<usize>, Rational)>,
    local_pen: Rational,
}

fn local_pen_of(g: &StochasticGame, psi: &PenaltyScheme, s: StateId, dist: &[(BTreeSet<usize>, Rational)]) -> Rational {
    let mut total = Rational::zero();
    for (set, w) in dist {
        for a in 0..g.actions(s).len() {
            if !set.contains(&a) {
                total += w.clone() * psi.get(s, a);
            }
        }
    }
    total
}

fn subsets_desc(n: usize) -> Vec<BTreeSet<usize>> {
    let mut masks: Vec<u32> = (1..(1u32 << n)).collect();
    masks.sort_by_key(|m| (std::cmp::Reverse(m.count_ones()), *m));
    masks
        .into_iter()
        .map(|m| (0..n).filter(|a| m & (1 << a) != 0).collect())
        .collect()
}

/// Deterministic alternatives: every non-empty subset, most permissive
/// first.
fn det_candidates(g: &StochasticGame, psi: &PenaltyScheme, s: StateId) -> Vec<Candidate> {
    subsets_desc(g.actions(s).len())
        .into_iter()
        .map(|set| {
            let dist = vec![(set, Rational::one())];
            let local_pen = local_pen_of(g, psi, s, &dist);
            Candidate { dist, local_pen }
        })
        .collect()
}

/// Granularity-M randomised alternatives with support at most 2: Dirac sets
/// plus set pairs with weights k/M. Static mode only needs nested pairs;
/// dynamic mode enumerates unrestricted pairs unless `nested` is forced.
fn rand_candidates(
    g: &StochasticGame,
    psi: &PenaltyScheme,
    s: StateId,
    m: u64,
    nested: bool,
) -> Vec<Candidate> {
    let sets = subsets_desc(g.actions(s).len());
    let mut out = Vec::new();
    for set in &sets {
        out.push(vec![(set.clone(), Rational::one())]);
    }
    for (i, b1) in sets.iter().enumerate() {
        for b2 in sets.iter().skip(i + 1) {
            if nested && !(b1.is_subset(b2) || b2.is_subset(b1)) {
                continue;
            }
            for k in 1..m {
                out.push(vec![
                    (b1.clone(), Rational::new((k as i64).into(), (m as i64).into())),
                    (
                        b2.clone(),
                        Rational::new(((m - k) as i64).into(), (m as i64).into()),
                    ),
                ]);
            }
        }
    }
    let mut cands: Vec<Candidate> = out
        .into_iter()
        .map(|dist| {
            let local_pen = local_pen_of(g, psi, s, &dist);
            Candidate { dist, local_pen }
        })
        .collect();
    // Cheapest (and then most permissive) first, deterministically.
    cands.sort_by_cached_key(|c| {
        let size: i64 = c.dist.iter().map(|(set, _)| set.len() as i64).sum();
        (c.local_pen.clone(), -size, format!("{:?}", c.dist))
    });
    cands
}

struct SearchSpace {
    candidates: Vec<Vec<Candidate>>,
}

impl SearchSpace {
    fn size(&self) -> f64 {
        self.candidates.iter().map(|c| c.len() as f64).product()
    }
}

fn det_space(problem: &Problem) -> SearchSpace {
    SearchSpace {
        candidates: problem
            .decision
            .iter()
            .map(|&s| det_candidates(&problem.game, &problem.psi, s))
            .collect(),
    }
}

fn rand_space(problem: &Problem, m: u64, nested: bool) -> SearchSpace {
    SearchSpace {
        candidates: problem
            .decision
            .iter()
            .map(|&s| rand_candidates(&problem.game, &problem.psi, s, m, nested))
            .collect(),
    }
}

/// Total preference order among full solutions: smaller penalty, then the
/// better worst-case value (larger for lower bounds, smaller for upper
/// bounds), then the earlier (more permissive) branching path.
fn strictly_better(
    relation: Relation,
    pen_a: (&f64, Option<&Rational>),
    val_a: f64,
    path_a: &[usize],
    pen_b: (&f64, Option<&Rational>),
    val_b: f64,
    path_b: &[usize],
) -> bool {
    let pen_cmp = match (pen_a.1, pen_b.1) {
        (Some(x), Some(y)) => x.cmp(y),
        _ => {
            if *pen_a.0 < *pen_b.0 - 1e-9 {
                std::cmp::Ordering::Less
            } else if *pen_a.0 > *pen_b.0 + 1e-9 {
                std::cmp::Ordering::Greater
            } else {
                std::cmp::Ordering::Equal
            }
        }
    };
    if pen_cmp != std::cmp::Ordering::Equal {
        return pen_cmp == std::cmp::Ordering::Less;
    }
    let val_cmp = if (val_a - val_b).abs() <= 1e-9 {
        std::cmp::Ordering::Equal
    } else if val_a < val_b {
        std::cmp::Ordering::Less
    } else {
        std::cmp::Ordering::Greater
    };
    if val_cmp != std::cmp::Ordering::Equal {
        return match relation {
            Relation::AtLeast => val_cmp == std::cmp::Ordering::Greater,
            Relation::AtMost => val_cmp == std::cmp::Ordering::Less,
        };
    }
    path_a < path_b
}

#[derive(Clone, Copy)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub budget: Option<Duration>,
    pub jobs: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            budget: None,
            jobs: 1,
        }
    }
}

struct BestEntry {
    incumbent: Incumbent,
    path: Vec<usize>,
}

struct Shared<'a> {
    best: Mutex<Option<BestEntry>>,
    truncated: AtomicBool,
    nodes: AtomicU64,
    on_improve: &'a (dyn Fn(&Incumbent) + Sync),
}

struct Worker<'a> {
    problem: &'a Problem,
    space: &'a SearchSpace,
    cfg: SolverConfig,
    start: Instant,
    deadline: Option<Instant>,
    shared: &'a Shared<'a>,
    /// Optimistic evaluation rules on the lowered game, updated in place as
    /// the search descends.
    rules: Vec<StateRule>,
    reward: Vec<Vec<f64>>,
    reward_zero: Vec<Vec<bool>>,
    chosen: Vec<usize>,
    committed: Rational,
    threshold: f64,
}

impl<'a> Worker<'a> {
    fn new(problem: &'a Problem, space: &'a SearchSpace, cfg: SolverConfig, start: Instant, shared: &'a Shared<'a>) -> Worker<'a> {
        let g = &problem.obj.game;
        let (adversarial, favourable) = match problem.obj.relation {
            Relation::AtLeast => (MinMax::Min, MinMax::Max),
            Relation::AtMost => (MinMax::Max, MinMax::Min),
        };
        let decision: BTreeSet<StateId> = problem.decision.iter().copied().collect();
        let rules = (0..g.num_states())
            .map(|s| {
                let all: Vec<usize> = (0..g.actions(s).len()).collect();
                if !g.is_controller(s) {
                    StateRule { inner: adversarial, branches: vec![(1.0, all)] }
                } else if decision.contains(&s) {
                    // Undecided: best case over every action.
                    StateRule { inner: favourable, branches: vec![(1.0, all)] }
                } else {
                    // Forced allow-all (targets, sink): adversarial within.
                    StateRule { inner: adversarial, branches: vec![(1.0, all)] }
                }
            })
            .collect();
        let template = EvalSpec::from_reward(g, &problem.obj.reward, ObjectiveMode::MAX_MAX);
        Worker {
            problem,
            space,
            cfg,
            start,
            deadline: cfg.budget.map(|b| start + b),
            shared,
            rules,
            reward: template.reward,
            reward_zero: template.reward_zero,
            chosen: Vec::new(),
            committed: Rational::zero(),
            threshold: to_f64(&problem.obj.threshold),
        }
    }

    fn optimistic_ok(&self) -> bool {
        let spec = EvalSpec {
            rules: self.rules.clone(),
            reward: self.reward.clone(),
            reward_zero: self.reward_zero.clone(),
        };
        let v = evaluate(&self.problem.obj.game, &spec, self.cfg.tol, self.cfg.max_iter);
        let value = v.at(self.problem.obj.game.initial);
        let slack = self.problem.accept_slack(self.cfg.tol);
        match self.problem.obj.relation {
            Relation::AtLeast => value >= self.threshold - slack,
            Relation::AtMost => value <= self.threshold + slack,
        }
    }

    fn committed_prunes(&self) -> bool {
        if self.problem.psi.kind != PenaltyKind::Static {
            return false;
        }
        let best = self.shared.best.lock().unwrap();
        match best.as_ref().and_then(|b| b.incumbent.penalty_exact.as_ref()) {
            Some(pen) => self.committed > *pen,
            None => false,
        }
    }

    fn evaluate_leaf(&self) {
        let dists: BTreeMap<StateId, Vec<(BTreeSet<usize>, Rational)>> = self
            .problem
            .decision
            .iter()
            .zip(&self.chosen)
            .map(|(&s, &i)| (s, self.space.candidates[self.depth_of(s)][i].dist.clone()))
            .collect();
        let theta = self.problem.theta_from(&dists);
        let sound = match check_sound_objective(&self.problem.obj, &theta, self.cfg.tol, self.cfg.max_iter) {
            Ok(s) => s,
            Err(_) => return,
        };
        if !sound.sound {
            return;
        }
        let (penalty, penalty_exact) = match self.problem.penalty(&theta, self.cfg.tol, self.cfg.max_iter) {
            Ok(p) => p,
            Err(_) => return,
        };
        let incumbent = Incumbent {
            theta,
            penalty,
            penalty_exact,
            margin: sound.margin,
            value: sound.value,
            found_at: self.start.elapsed(),
        };
        let mut best = self.shared.best.lock().unwrap();
        let replace = match best.as_ref() {
            None => true,
            Some(cur) => strictly_better(
                self.problem.obj.relation,
                (&incumbent.penalty, incumbent.penalty_exact.as_ref()),
                incumbent.value,
                &self.chosen,
                (&cur.incumbent.penalty, cur.incumbent.penalty_exact.as_ref()),
                cur.incumbent.value,
                &cur.path,
            ),
        };
        if replace {
            let report = match best.as_ref() {
                None => true,
                Some(cur) => incumbent.penalty < cur.incumbent.penalty - 1e-9,
            };
            if report {
                (self.shared.on_improve)(&incumbent);
            }
            *best = Some(BestEntry { incumbent, path: self.chosen.clone() });
        }
    }

    fn depth_of(&self, s: StateId) -> usize {
        self.problem.decision.iter().position(|&d| d == s).unwrap()
    }

    /// Depth-first search from `depth`; `restrict` limits the alternatives
    /// tried at the root level (used to split work across threads).
    fn dfs(&mut self, depth: usize, restrict: Option<&[usize]>) {
        if let Some(d) = self.deadline {
            if Instant::now() >= d {
                self.shared.truncated.store(true, Ordering::Relaxed);
                return;
            }
        }
        if self.shared.truncated.load(Ordering::Relaxed) {
            return;
        }
        self.shared.nodes.fetch_add(1, Ordering::Relaxed);
        if depth == self.problem.decision.len() {
            self.evaluate_leaf();
            return;
        }
        let s = self.problem.decision[depth];
        let indices: Vec<usize> = match restrict {
            Some(r) => r.to_vec(),
            None => (0..self.space.candidates[depth].len()).collect(),
        };
        let (adversarial, _) = match self.problem.obj.relation {
            Relation::AtLeast => (MinMax::Min, MinMax::Max),
            Relation::AtMost => (MinMax::Max, MinMax::Min),
        };
        let saved_rule = self.rules[s].clone();
        for i in indices {
            let cand = &self.space.candidates[depth][i];
            self.chosen.push(i);
            self.committed += cand.local_pen.clone();
            self.rules[s] = StateRule {
                inner: adversarial,
                branches: cand
                    .dist
                    .iter()
                    .map(|(set, w)| (to_f64(w), set.iter().copied().collect()))
                    .collect(),
            };
            if !self.committed_prunes() && self.optimistic_ok() {
                self.dfs(depth + 1, None);
            }
            self.rules[s] = saved_rule.clone();
            self.committed -= cand.local_pen.clone();
            self.chosen.pop();
            if self.shared.truncated.load(Ordering::Relaxed) {
                break;
            }
        }
    }
}

fn run_search(
    problem: &Problem,
    space: &SearchSpace,
    cfg: &SolverConfig,
    on_improve: &(dyn Fn(&Incumbent) + Sync),
) -> Result<SolveOutcome, String> {
    let start = Instant::now();
    let shared = Shared {
        best: Mutex::new(None),
        truncated: AtomicBool::new(false),
        nodes: AtomicU64::new(0),
        on_improve,
    };
    let jobs = cfg.jobs.max(1);
    if jobs == 1 || problem.decision.is_empty() {
        let mut w = Worker::new(problem, space, *cfg, start, &shared);
        w.dfs(0, None);
    } else {
        let roots = space.candidates[0].len();
        let slices: Vec<Vec<usize>> = (0..jobs)
            .map(|t| (0..roots).filter(|i| i % jobs == t).collect())
            .collect();
        std::thread::scope(|scope| {
            for slice in &slices {
                let shared = &shared;
                scope.spawn(move || {
                    if slice.is_empty() {
                        return;
                    }
                    let mut w = Worker::new(problem, space, *cfg, start, shared);
                    w.dfs(0, Some(slice));
                });
            }
        });
    }
    let truncated = shared.truncated.load(Ordering::Relaxed);
    let best = shared.best.into_inner().unwrap();
    Ok(SolveOutcome {
        incumbent: best.map(|b| b.incumbent),
        optimal: !truncated,
        nodes: shared.nodes.into_inner(),
    })
}

/// Anytime branch-and-bound over deterministic multi-strategies.
pub fn solve_native(
    problem: &Problem,
    cfg: &SolverConfig,
    on_improve: &(dyn Fn(&Incumbent) + Sync),
) -> Result<SolveOutcome, String> {
    run_search(problem, &det_space(problem), cfg, on_improve)
}

/// Anytime branch-and-bound over granularity-M randomised multi-strategies
/// with per-state support at most 2 (nested set pairs in static mode).
pub fn solve_native_rand(
    problem: &Problem,
    m: u64,
    cfg: &SolverConfig,
    on_improve: &(dyn Fn(&Incumbent) + Sync),
) -> Result<SolveOutcome, String> {
    if m < 2 {
        return Err("granularity must be at least 2".into());
    }
    let nested = problem.psi.kind == PenaltyKind::Static;
    run_search(problem, &rand_space(problem, m, nested), cfg, on_improve)
}

const ENUMERATION_GUARD: f64 = 1e7;

fn exhaustive(
    problem: &Problem,
    space: &SearchSpace,
    tol: f64,
    max_iter: usize,
) -> Result<Option<Incumbent>, String> {
    if space.size() > ENUMERATION_GUARD {
        return Err(format!(
            "search space of {:.3e} assignments exceeds the exhaustive-enumeration guard",
            space.size()
        ));
    }
    let start = Instant::now();
    let mut best: Option<(Incumbent, Vec<usize>)> = None;
    let k = problem.decision.len();
    let mut idx = vec![0usize; k];
    loop {
        let dists: BTreeMap<StateId, Vec<(BTreeSet<usize>, Rational)>> = problem
            .decision
            .iter()
            .enumerate()
            .map(|(d, &s)| (s, space.candidates[d][idx[d]].dist.clone()))
            .collect();
        let theta = problem.theta_from(&dists);
        if let Ok(sound) = check_sound_objective(&problem.obj, &theta, tol, max_iter) {
            if sound.sound {
                if let Ok((penalty, penalty_exact)) = problem.penalty(&theta, tol, max_iter) {
                    let cand = Incumbent {
                        theta,
                        penalty,
                        penalty_exact,
                        margin: sound.margin,
                        value: sound.value,
                        found_at: start.elapsed(),
                    };
                    let replace = match &best {
                        None => true,
                        Some((cur, path)) => strictly_better(
                            problem.obj.relation,
                            (&cand.penalty, cand.penalty_exact.as_ref()),
                            cand.value,
                            &idx,
                            (&cur.penalty, cur.penalty_exact.as_ref()),
                            cur.value,
                            path,
                        ),
                    };
                    if replace {
                        best = Some((cand, idx.clone()));
                    }
                }
            }
        }
        // Odometer step.
        let mut d = 0;
        loop {
            if d == k {
                return Ok(best.map(|(inc, _)| inc));
            }
            idx[d] += 1;
            if idx[d] < space.candidates[d].len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if k == 0 {
            return Ok(best.map(|(inc, _)| inc));
        }
    }
}

/// Exhaustive reference oracle over deterministic multi-strategies.
pub fn brute_force_det(
    problem: &Problem,
    tol: f64,
    max_iter: usize,
) -> Result<Option<Incumbent>, String> {
    exhaustive(problem, &det_space(problem), tol, max_iter)
}

/// Exhaustive reference oracle over granularity-M randomised
/// multi-strategies with support ≤ 2. Static mode restricts to nested set
/// pairs (lossless); dynamic mode defaults to unrestricted pairs, with
/// `nested` available for comparison.
pub fn brute_force_rand(
    problem: &Problem,
    m: u64,
    nested: bool,
    tol: f64,
    max_iter: usize,
) -> Result<Option<Incumbent>, String> {
    if m < 2 {
        return Err("granularity must be at least 2".into());
    }
    let nested = nested || problem.psi.kind == PenaltyKind::Static;
    exhaustive(problem, &rand_space(problem, m, nested), tol, max_iter)
}

/// Reads an external solver's assignment, decodes the multi-strategy, and
/// independently re-verifies soundness and penalty. The encoded game is the
/// lowered (possibly gadget-transformed) one; `mapping` must be given for
/// transformed models.
pub fn import_solution(
    text: &str,
    model: &MilpModel,
    vm: &VarMap,
    encoded_game: &StochasticGame,
    problem: &Problem,
    mapping: Option<&GadgetMapping>,
    tol: f64,
    max_iter: usize,
) -> Result<Incumbent, String> {
    let start = Instant::now();
    let assignment = crate::io::parse_solution(text).map_err(|e| e.to_string())?;
    let (theta_enc, obj_val) = milp::decode_solution(model, vm, encoded_game, &assignment)?;
    let on_lowered = match mapping {
        Some(map) => crate::randomized::det_to_rand(&theta_enc, map)?,
        None => theta_enc,
    };
    // Restrict to the original game: decision states keep their decoded
    // distributions; forced targets and the reachability sink fall away.
    let dists: BTreeMap<StateId, Vec<(BTreeSet<usize>, Rational)>> = problem
        .decision
        .iter()
        .map(|&s| {
            on_lowered
                .choice
                .get(&s)
                .map(|d| (s, d.clone()))
                .ok_or_else(|| format!("solution lacks a choice at {}", problem.game.state_name(s)))
        })
        .collect::<Result<_, String>>()?;
    let theta = problem.theta_from(&dists);
    let sound = check_sound_objective(&problem.obj, &theta, tol, max_iter)?;
    if !sound.sound {
        return Err(format!(
            "decoded multi-strategy is not sound: worst-case value {} misses the bound by {}",
            sound.value,
            sound.margin.abs()
        ));
    }
    let (penalty, penalty_exact) = problem.penalty(&theta, tol, max_iter)?;
    // Cross-check the reported objective against the recomputed penalty.
    let values = milp::assignment_values(model, &assignment)?;
    let mut pen_component = obj_val;
    if vm.pen_value.is_empty() {
        let x_idx = vm.value[&encoded_game.initial];
        if let Some((_, coef)) = model.objective.iter().find(|(i, _)| *i == x_idx) {
            pen_component -= to_f64(coef) * values[x_idx];
        }
    }
    let reported = pen_component / to_f64(&vm.penalty_scale);
    if (reported - penalty).abs() > 1e-5 {
        return Err(format!(
            "reported penalty {reported} disagrees with the recomputed penalty {penalty}"
        ));
    }
    Ok(Incumbent {
        theta,
        penalty,
        penalty_exact,
        margin: sound.margin,
        value: sound.value,
        found_at: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::game::PropertyKind;
    use crate::rational::{rat, rat_int};

    fn reward_prop(name: &str, relation: Relation, threshold: Rational) -> Property {
        Property {
            kind: PropertyKind::Reward(name.to_string()),
            relation,
            threshold,
        }
    }

    fn no_improve() -> impl Fn(&Incumbent) + Sync {
        |_: &Incumbent| {}
    }

    fn robot_problem(b: i64) -> Problem {
        let (g, moves, psi) = fixtures::robot_game();
        let mut rewards = BTreeMap::new();
        rewards.insert("moves".to_string(), moves);
        let prop = reward_prop("moves", Relation::AtMost, rat_int(b));
        Problem::build(&g, &prop, &rewards, &psi).unwrap()
    }

    #[test]
    fn robot_static_optimum() {
        let problem = robot_problem(5);
        let out = solve_native(&problem, &SolverConfig::default(), &no_improve()).unwrap();
        assert!(out.optimal);
        let inc = out.incumbent.unwrap();
        assert_eq!(inc.penalty_exact, Some(rat_int(1)));
        assert_eq!(inc.theta, fixtures::robot_theta_penalty_one(&problem.game));
        let problem16 = robot_problem(16);
        let out = solve_native(&problem16, &SolverConfig::default(), &no_improve()).unwrap();
        let inc = out.incumbent.unwrap();
        assert_eq!(inc.penalty_exact, Some(rat_int(0)));
        assert_eq!(inc.theta, MultiStrategy::allow_all(&problem16.game));
    }

    #[test]
    fn branch_tradeoff_det_and_rand() {
        let (g, r, psi) = fixtures::branch_tradeoff_game();
        let mut rewards = BTreeMap::new();
        rewards.insert("r".to_string(), r);
        let prop = reward_prop("r", Relation::AtLeast, rat(1, 2));
        let problem = Problem::build(&g, &prop, &rewards, &psi).unwrap();
        let det = brute_force_det(&problem, DEFAULT_TOL, DEFAULT_MAX_ITER)
            .unwrap()
            .unwrap();
        assert_eq!(det.penalty_exact, Some(rat_int(1)));
        let native = solve_native(&problem, &SolverConfig::default(), &no_improve()).unwrap();
        assert_eq!(native.incumbent.unwrap().penalty_exact, Some(rat_int(1)));
        let rand = brute_force_rand(&problem, 2, true, DEFAULT_TOL, DEFAULT_MAX_ITER)
            .unwrap()
            .unwrap();
        assert_eq!(rand.penalty_exact, Some(rat(1, 2)));
        let native_rand =
            solve_native_rand(&problem, 2, &SolverConfig::default(), &no_improve()).unwrap();
        assert_eq!(native_rand.incumbent.unwrap().penalty_exact, Some(rat(1, 2)));
    }

    #[test]
    fn loop_exit_grid_optimum_is_one_over_m() {
        let (g, r, psi) = fixtures::loop_exit_game();
        let mut rewards = BTreeMap::new();
        rewards.insert("r".to_string(), r);
        let prop = reward_prop("r", Relation::AtLeast, rat_int(1));
        let problem = Problem::build(&g, &prop, &rewards, &psi).unwrap();
        let det = brute_force_det(&problem, DEFAULT_TOL, DEFAULT_MAX_ITER)
            .unwrap()
            .unwrap();
        assert_eq!(det.penalty_exact, Some(rat_int(1)));
        for m in [2u64, 5, 10] {
            let inc = brute_force_rand(&problem, m, true, DEFAULT_TOL, DEFAULT_MAX_ITER)
                .unwrap()
                .unwrap();
            assert_eq!(inc.penalty_exact, Some(rat(1, m as i64)), "M = {m}");
        }
    }

    #[test]
    fn nested_gap_dynamic_pairs() {
        let (g, psi, prop) = fixtures::nested_gap_game();
        let rewards = BTreeMap::new();
        let problem = Problem::build(&g, &prop, &rewards, &psi).unwrap();
        let free = brute_force_rand(&problem, 10, false, DEFAULT_TOL, DEFAULT_MAX_ITER)
            .unwrap()
            .unwrap();
        assert!((free.penalty - 1.0).abs() < 1e-6, "{}", free.penalty);
        let nested = brute_force_rand(&problem, 10, true, DEFAULT_TOL, DEFAULT_MAX_ITER)
            .unwrap()
            .unwrap();
        let sqrt2 = std::f64::consts::SQRT_2;
        assert!(
            (nested.penalty - sqrt2).abs() <= 0.2 + 1e-9,
            "{}",
            nested.penalty
        );
        assert!(nested.penalty > free.penalty + 0.1);
    }

    #[test]
    fn oracle_equivalence_on_random_games() {
        let cfg = fixtures::RandomGameConfig {
            max_states: 5,
            ..Default::default()
        };
        for seed in 0..40u64 {
            let (g, r, psi) = fixtures::random_game(seed, &cfg);
            let mut rewards = BTreeMap::new();
            rewards.insert("r".to_string(), r.clone());
            for kind in [PenaltyKind::Static, PenaltyKind::Dynamic] {
                let psi = psi.with_kind(kind);
                let threshold = mid_threshold(&g, &r);
                let prop = reward_prop("r", Relation::AtLeast, threshold);
                let problem = Problem::build(&g, &prop, &rewards, &psi).unwrap();
                let oracle = brute_force_det(&problem, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
                let native = solve_native(&problem, &SolverConfig::default(), &no_improve())
                    .unwrap();
                match (oracle, native.incumbent) {
                    (None, None) => {}
                    (Some(o), Some(n)) => {
                        if kind == PenaltyKind::Static {
                            assert_eq!(o.penalty_exact, n.penalty_exact, "seed {seed}");
                        } else {
                            assert!((o.penalty - n.penalty).abs() < 1e-6, "seed {seed}");
                        }
                    }
                    (o, n) => panic!("seed {seed} ({kind:?}): oracle {o:?} native {n:?}"),
                }
            }
        }
    }

    fn mid_threshold(g: &StochasticGame, r: &RewardStructure) -> Rational {
        let hi = crate::analysis::total_reward_values(
            g,
            r,
            ObjectiveMode::MAX_MAX,
            DEFAULT_TOL,
            DEFAULT_MAX_ITER,
        );
        let top = hi.at(g.initial);
        Rational::from_float((top * 0.5).max(0.01)).unwrap()
    }

    #[test]
    fn singleton_completion_iff_sound_exists() {
        let cfg = fixtures::RandomGameConfig {
            max_states: 5,
            ..Default::default()
        };
        for seed in 100..130u64 {
            let (g, r, psi) = fixtures::random_game(seed, &cfg);
            let mut rewards = BTreeMap::new();
            rewards.insert("r".to_string(), r.clone());
            let prop = reward_prop("r", Relation::AtLeast, mid_threshold(&g, &r));
            let problem = Problem::build(&g, &prop, &rewards, &psi).unwrap();
            let any_multi = brute_force_det(&problem, DEFAULT_TOL, DEFAULT_MAX_ITER)
                .unwrap()
                .is_some();
            // Classical strategies: singleton allowed sets everywhere.
            let mut any_single = false;
            let singles: Vec<Vec<usize>> = problem
                .decision
                .iter()
                .map(|&s| (0..problem.game.actions(s).len()).collect())
                .collect();
            let mut idx = vec![0usize; singles.len()];
            'outer: loop {
                let dists: BTreeMap<_, _> = problem
                    .decision
                    .iter()
                    .enumerate()
                    .map(|(d, &s)| {
                        (s, vec![(BTreeSet::from([singles[d][idx[d]]]), Rational::one())])
                    })
                    .collect();
                let theta = problem.theta_from(&dists);
                if check_sound_objective(&problem.obj, &theta, DEFAULT_TOL, DEFAULT_MAX_ITER)
                    .unwrap()
                    .sound
                {
                    any_single = true;
                    break;
                }
                let mut d = 0;
                loop {
                    if d == singles.len() {
                        break 'outer;
                    }
                    idx[d] += 1;
                    if idx[d] < singles[d].len() {
                        break;
                    }
                    idx[d] = 0;
                    d += 1;
                }
            }
            assert_eq!(any_multi, any_single, "seed {seed}");
        }
    }

    #[test]
    fn anytime_callback_is_monotone_and_sound() {
        let problem = robot_problem(5);
        let seen = Mutex::new(Vec::<(f64, MultiStrategy)>::new());
        let cb = |inc: &Incumbent| {
            seen.lock().unwrap().push((inc.penalty, inc.theta.clone()));
        };
        let out = solve_native(&problem, &SolverConfig::default(), &cb).unwrap();
        assert!(out.optimal);
        let seen = seen.into_inner().unwrap();
        assert!(!seen.is_empty());
        for win in seen.windows(2) {
            assert!(win[1].0 < win[0].0 - 1e-9);
        }
        for (_, theta) in &seen {
            let s = check_sound_objective(&problem.obj, theta, DEFAULT_TOL, DEFAULT_MAX_ITER)
                .unwrap();
            assert!(s.sound);
        }
    }

    #[test]
    fn zero_budget_truncates() {
        let problem = robot_problem(5);
        let cfg = SolverConfig {
            budget: Some(Duration::from_secs(0)),
            ..Default::default()
        };
        let out = solve_native(&problem, &cfg, &no_improve()).unwrap();
        assert!(!out.optimal);
    }

    #[test]
    fn parallel_search_matches_sequential() {
        for seed in [3u64, 7, 11] {
            let (g, r, psi) = fixtures::random_game(seed, &fixtures::RandomGameConfig::default());
            let mut rewards = BTreeMap::new();
            rewards.insert("r".to_string(), r.clone());
            let prop = reward_prop("r", Relation::AtLeast, mid_threshold(&g, &r));
            let problem = Problem::build(&g, &prop, &rewards, &psi).unwrap();
            let seq = solve_native(&problem, &SolverConfig::default(), &no_improve()).unwrap();
            let par_cfg = SolverConfig {
                jobs: 3,
                ..Default::default()
            };
            let par = solve_native(&problem, &par_cfg, &no_improve()).unwrap();
            match (seq.incumbent, par.incumbent) {
                (None, None) => {}
                (Some(a), Some(b)) => {
                    assert_eq!(a.penalty_exact, b.penalty_exact, "seed {seed}");
                    assert_eq!(a.theta, b.theta, "seed {seed}");
                }
                other => panic!("seed {seed}: {other:?}"),
            }
        }
    }

    #[test]
    fn native_rand_robot_penalty() {
        let (g, moves, psi) = fixtures::robot_game();
        let mut rewards = BTreeMap::new();
        rewards.insert("moves".to_string(), moves);
        let prop = reward_prop("moves", Relation::AtMost, rat_int(5));
        let problem = Problem::build(&g, &prop, &rewards, &psi).unwrap();
        let out = solve_native_rand(&problem, 10, &SolverConfig::default(), &no_improve()).unwrap();
        assert!(out.optimal);
        let inc = out.incumbent.unwrap();
        assert_eq!(inc.penalty_exact, Some(rat(7, 10)));
        let s = check_sound_objective(&problem.obj, &inc.theta, DEFAULT_TOL, DEFAULT_MAX_ITER)
            .unwrap();
        assert!(s.sound);
    }

    #[test]
    fn rand_never_worse_than_det() {
        let cfg = fixtures::RandomGameConfig {
            max_states: 4,
            max_actions: 2,
            ..Default::default()
        };
        for seed in 200..215u64 {
            let (g, r, psi) = fixtures::random_game(seed, &cfg);
            let mut rewards = BTreeMap::new();
            rewards.insert("r".to_string(), r.clone());
            let prop = reward_prop("r", Relation::AtLeast, mid_threshold(&g, &r));
            let problem = Problem::build(&g, &prop, &rewards, &psi).unwrap();
            let det = brute_force_det(&problem, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
            let rand = brute_force_rand(&problem, 4, true, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
            match (det, rand) {
                (None, None) => {}
                (Some(d), Some(r2)) => {
                    assert!(
                        r2.penalty <= d.penalty + 1e-9,
                        "seed {seed}: rand {} det {}",
                        r2.penalty,
                        d.penalty
                    );
                }
                (None, Some(_)) => {} // randomisation can only add solutions
                (Some(d), None) => panic!("seed {seed}: det sound ({d:?}) but rand infeasible"),
            }
        }
    }

    #[test]
    fn guard_rejects_huge_enumerations() {
        let cfg = fixtures::RandomGameConfig {
            max_states: 6,
            max_actions: 3,
            ..Default::default()
        };
        // Find a game with enough controller states that the randomised
        // enumeration at high granularity overflows the guard.
        for seed in 0..50u64 {
            let (g, r, psi) = fixtures::random_game(seed, &cfg);
            let mut rewards = BTreeMap::new();
            rewards.insert("r".to_string(), r.clone());
            let prop = reward_prop("r", Relation::AtLeast, rat(1, 100));
            let problem = Problem::build(&g, &prop, &rewards, &psi).unwrap();
            if rand_space(&problem, 20000, false).size() > ENUMERATION_GUARD {
                assert!(brute_force_rand(&problem, 20000, false, DEFAULT_TOL, DEFAULT_MAX_ITER)
                    .is_err());
                return;
            }
        }
        panic!("no game exceeded the guard");
    }

    #[test]
    fn import_solution_round_trip_and_rejections() {
        let problem = robot_problem(5);
        let (g, moves, psi) = fixtures::robot_game();
        let ri = milp::rescale(&g, &moves, &rat_int(5), &psi).unwrap();
        let (model, vm) = milp::encode_static(&g, &ri, Relation::AtMost).unwrap();
        let theta = fixtures::robot_theta_penalty_one(&g);
        let w = milp::witness_assignment(&g, &ri, Relation::AtMost, &theta, &model, &vm).unwrap();
        let text: String = w
            .iter()
            .map(|(k, v)| format!("{k} {v}\n"))
            .collect();
        let inc = import_solution(
            &text, &model, &vm, &g, &problem, None, DEFAULT_TOL, DEFAULT_MAX_ITER,
        )
        .unwrap();
        assert_eq!(inc.penalty_exact, Some(rat_int(1)));
        assert_eq!(inc.theta, theta);
        // Allow-all assignment decodes but fails the soundness re-check.
        let ri16 = milp::rescale(&g, &moves, &rat_int(16), &psi).unwrap();
        let all = MultiStrategy::allow_all(&g);
        let w16 =
            milp::witness_assignment(&g, &ri16, Relation::AtMost, &all, &model, &vm).unwrap();
        let text16: String = w16.iter().map(|(k, v)| format!("{k} {v}\n")).collect();
        let e = import_solution(
            &text16, &model, &vm, &g, &problem, None, DEFAULT_TOL, DEFAULT_MAX_ITER,
        )
        .unwrap_err();
        assert!(e.contains("not sound"), "{e}");
        // A fractional binary is rejected at decode time.
        let mut frac = w.clone();
        frac.insert(model.variables[vm.allow[&(0, 0)]].name.clone(), 0.3);
        let text_frac: String = frac.iter().map(|(k, v)| format!("{k} {v}\n")).collect();
        let e = import_solution(
            &text_frac, &model, &vm, &g, &problem, None, DEFAULT_TOL, DEFAULT_MAX_ITER,
        )
        .unwrap_err();
        assert!(e.contains("fractional"), "{e}");
    }

    #[test]
    fn import_rejects_lying_dynamic_objective() {
        // On dynamic models the reported objective is the penalty witness
        // z_s̄, which the importer re-derives independently.
        let (g, psi, prop) = fixtures::nested_gap_game();
        let rewards = BTreeMap::new();
        let problem = Problem::build(&g, &prop, &rewards, &psi).unwrap();
        let ri = milp::rescale(
            &problem.obj.game,
            &problem.obj.reward,
            &problem.obj.threshold,
            &psi,
        )
        .unwrap();
        let (c, _) = milp::compute_c(&problem.obj.game, &ri.psi).unwrap();
        let (model, vm) =
            milp::encode_dynamic(&problem.obj.game, &ri, Relation::AtLeast, &c).unwrap();
        let mut sets = BTreeMap::new();
        sets.insert(0, BTreeSet::from([0usize]));
        sets.insert(1, BTreeSet::from([0usize]));
        let theta = problem
            .obj
            .adapt(&MultiStrategy::from_sets(sets));
        let w = milp::witness_assignment(
            &problem.obj.game,
            &ri,
            Relation::AtLeast,
            &theta,
            &model,
            &vm,
        )
        .unwrap();
        let text: String = w.iter().map(|(k, v)| format!("{k} {v}\n")).collect();
        let inc = import_solution(
            &text,
            &model,
            &vm,
            &problem.obj.game,
            &problem,
            None,
            DEFAULT_TOL,
            DEFAULT_MAX_ITER,
        )
        .unwrap();
        assert!((inc.penalty - 2.0).abs() < 1e-6);
        let mut lying = w.clone();
        let z0 = model.variables[vm.pen_value[&problem.obj.game.initial]].name.clone();
        lying.insert(z0, 5.0);
        let text_lie: String = lying.iter().map(|(k, v)| format!("{k} {v}\n")).collect();
        let e = import_solution(
            &text_lie,
            &model,
            &vm,
            &problem.obj.game,
            &problem,
            None,
            DEFAULT_TOL,
            DEFAULT_MAX_ITER,
        )
        .unwrap_err();
        assert!(e.contains("disagrees"), "{e}");
    }
}
