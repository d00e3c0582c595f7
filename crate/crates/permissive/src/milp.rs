//! Mixed-integer linear programming encodings of the synthesis problems,
//! with LP-file export and solution decoding.
//!
//! The lower-bound encoding searches for binary allow-flags y together with
//! value witnesses x certifying that the worst-case reward under the decoded
//! multi-strategy meets the bound; ranking variables (α, β, γ) pin x to the
//! least fixed point in the presence of zero-reward cycles. Upper-bound
//! properties use a mirrored pre-fixed-point form that needs no ranking.
//! Dynamic penalties add per-state local-penalty and penalty-value
//! variables. A transformed-game variant rewires the objective so that the
//! granularity-M randomised penalty is minimised.

use std::collections::{BTreeMap, BTreeSet};

use num::{One, Signed, Zero};

use crate::analysis::{
    self, total_reward_values, worst_case_reward, ObjectiveMode, WorstCase, DEFAULT_MAX_ITER,
    DEFAULT_TOL,
};
use crate::game::{
    MultiStrategy, PenaltyKind, PenaltyScheme, Relation, RewardStructure, StateId, StochasticGame,
};
use crate::randomized::GadgetMapping;
use crate::rational::{format_rational, rat_int, rational_gcd, to_f64, Rational};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Binary,
    Continuous,
}

#[derive(Debug, Clone)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: Rational,
    pub upper: Rational,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    /// Human-readable description used in diagnostics.
    pub label: String,
    pub terms: Vec<(usize, Rational)>,
    pub sense: Sense,
    pub rhs: Rational,
}

/// A minimisation model over binary and bounded continuous variables.
#[derive(Debug, Clone)]
pub struct MilpModel {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub objective: Vec<(usize, Rational)>,
    pub objective_constant: Rational,
}

impl MilpModel {
    pub fn objective_value(&self, values: &[f64]) -> f64 {
        let mut v = to_f64(&self.objective_constant);
        for (i, c) in &self.objective {
            v += to_f64(c) * values[*i];
        }
        v
    }
}

/// Bidirectional correspondence between model variables and their roles.
#[derive(Debug, Clone)]
pub struct VarMap {
    /// y_{s,a}: action allowed.
    pub allow: BTreeMap<(StateId, usize), usize>,
    /// x_s: worst-case reward witness.
    pub value: BTreeMap<StateId, usize>,
    /// α_s: x_s may be positive.
    pub active: BTreeMap<StateId, usize>,
    /// γ_s: ranking value.
    pub rank: BTreeMap<StateId, usize>,
    /// β_{s,a,t}: chosen ranking successor.
    pub rank_edge: BTreeMap<(StateId, usize, StateId), usize>,
    /// z_s: accumulated-penalty witness.
    pub pen_value: BTreeMap<StateId, usize>,
    /// ℓ_s: local penalty.
    pub local_pen: BTreeMap<StateId, usize>,
    /// y′_{s,i,a}: selector i's chosen branch allows a (transformed model;
    /// keyed by original state, 1-based selector, action).
    pub grid_allow: BTreeMap<(StateId, usize, usize), usize>,
    /// w_{s,i,j,a}: selector i picks branch j and gadget j allows a.
    pub grid_aux: BTreeMap<(StateId, usize, usize, usize), usize>,
    /// (s, i, j) → the selector state and branch action behind a grid
    /// product (transformed model only).
    pub grid_refs: BTreeMap<(StateId, usize, usize), (StateId, usize)>,
    /// (s, j) → the gadget state of branch j (transformed model only).
    pub gadget_refs: BTreeMap<(StateId, usize), StateId>,
    /// Reported penalty = objective penalty component / penalty_scale.
    pub penalty_scale: Rational,
}

impl Default for VarMap {
    fn default() -> Self {
        VarMap {
            allow: BTreeMap::new(),
            value: BTreeMap::new(),
            active: BTreeMap::new(),
            rank: BTreeMap::new(),
            rank_edge: BTreeMap::new(),
            pen_value: BTreeMap::new(),
            local_pen: BTreeMap::new(),
            grid_allow: BTreeMap::new(),
            grid_aux: BTreeMap::new(),
            grid_refs: BTreeMap::new(),
            gadget_refs: BTreeMap::new(),
            penalty_scale: Rational::one(),
        }
    }
}

/// Rescaled inputs: rewards scaled so that the cooperative supremum is at
/// most 1/2 from every state, penalties scaled so that every non-zero value
/// is an integer ≥ 1.
#[derive(Debug, Clone)]
pub struct Rescaled {
    pub kappa_r: Rational,
    pub kappa_psi: Rational,
    pub reward: RewardStructure,
    pub bound: Rational,
    pub psi: PenaltyScheme,
}

/// The exact cooperative maximum over all states, used for the reward scale
/// factor. Falls back to an upward-rounded numeric bound when exhaustive
/// profile enumeration is too large.
fn max_cooperative_value(g: &StochasticGame, r: &RewardStructure) -> Result<Rational, String> {
    if !analysis::finite_reward_check(g, r) {
        return Err("maximal expected reward is infinite".into());
    }
    if let Some(values) = crate::exact::cooperative_max_exact(g, r, 1e6) {
        return Ok(values.into_iter().max().unwrap_or_else(Rational::zero));
    }
    let v = total_reward_values(g, r, ObjectiveMode::MAX_MAX, DEFAULT_TOL, DEFAULT_MAX_ITER);
    let top = v
        .values
        .iter()
        .cloned()
        .fold(0.0f64, f64::max);
    let top = top * (1.0 + 1e-6) + 1e-9;
    if !top.is_finite() {
        return Err("bound not representable".into());
    }
    Ok(grid_rational(top, true))
}

/// Rounds a float onto the grid of multiples of 2^-20, upward or downward,
/// so that derived coefficients keep small denominators.
fn grid_rational(v: f64, round_up: bool) -> Rational {
    const GRID: f64 = 1048576.0;
    let scaled = v * GRID;
    let n = if round_up { scaled.ceil() } else { scaled.floor() };
    Rational::new(num::BigInt::from(n as i64), num::BigInt::from(GRID as i64))
}

/// Scales rewards by 1/(2·R_max) and penalties by the reciprocal of the
/// rational gcd of their non-zero values.
pub fn rescale(
    g: &StochasticGame,
    r: &RewardStructure,
    b: &Rational,
    psi: &PenaltyScheme,
) -> Result<Rescaled, String> {
    let r_max = max_cooperative_value(g, r)?;
    let kappa_r = if r_max.is_zero() {
        Rational::one()
    } else {
        Rational::one() / (rat_int(2) * r_max)
    };
    let mut gcd: Option<Rational> = None;
    for v in psi.entries.values() {
        gcd = Some(match gcd {
            None => v.clone(),
            Some(g) => rational_gcd(&g, v),
        });
    }
    let kappa_psi = match gcd {
        None => Rational::one(),
        Some(g) => Rational::one() / g,
    };
    let mut reward = RewardStructure::new(r.name.clone());
    for ((s, a), v) in &r.entries {
        reward.set(*s, *a, v.clone() * kappa_r.clone());
    }
    let mut scaled_psi = PenaltyScheme::new(psi.kind);
    for ((s, a), v) in &psi.entries {
        scaled_psi.set(*s, *a, v.clone() * kappa_psi.clone());
    }
    Ok(Rescaled {
        bound: b.clone() * kappa_r.clone(),
        kappa_r,
        kappa_psi,
        reward,
        psi: scaled_psi,
    })
}

/// The penalty-value cap for dynamic encodings:
/// |S| · pen_max · (1 − p^|S|) / p^|S| with p the smallest transition
/// probability. Degenerate regimes (all-Dirac transitions, or no penalties)
/// fall back to Σψ·|S| resp. 1; the flag reports that a fallback was used.
pub fn compute_c(g: &StochasticGame, psi: &PenaltyScheme) -> Result<(Rational, bool), String> {
    if psi.kind != PenaltyKind::Dynamic {
        return Err("penalty scheme is not dynamic".into());
    }
    let n = g.num_states() as i64;
    let pen_max = g
        .controller_states()
        .map(|s| psi.state_sum(s))
        .max()
        .unwrap_or_else(Rational::zero);
    if pen_max.is_zero() {
        return Ok((Rational::one(), true));
    }
    let mut p = Rational::one();
    for s in 0..g.num_states() {
        for a in g.actions(s) {
            for (_, q) in &a.transitions {
                if *q < p {
                    p = q.clone();
                }
            }
        }
    }
    if p.is_one() {
        return Ok((psi.total() * rat_int(n), true));
    }
    let p_n = num::pow::pow(p, g.num_states());
    let c = rat_int(n) * pen_max * (Rational::one() - p_n.clone()) / p_n;
    Ok((c, false))
}

struct Builder {
    variables: Vec<Variable>,
    names: BTreeSet<String>,
    constraints: Vec<Constraint>,
    objective: Vec<(usize, Rational)>,
    objective_constant: Rational,
}

impl Builder {
    fn new() -> Builder {
        Builder {
            variables: Vec::new(),
            names: BTreeSet::new(),
            constraints: Vec::new(),
            objective: Vec::new(),
            objective_constant: Rational::zero(),
        }
    }

    fn var(
        &mut self,
        name: String,
        kind: VarKind,
        lower: Rational,
        upper: Rational,
    ) -> Result<usize, String> {
        if !self.names.insert(name.clone()) {
            return Err(format!("variable name collision after sanitising: `{name}`"));
        }
        self.variables.push(Variable {
            name,
            kind,
            lower,
            upper,
        });
        Ok(self.variables.len() - 1)
    }

    fn con(
        &mut self,
        label: impl Into<String>,
        terms: Vec<(usize, Rational)>,
        sense: Sense,
        rhs: Rational,
    ) {
        // Merge duplicate variable references (e.g. self-loops).
        let mut merged: BTreeMap<usize, Rational> = BTreeMap::new();
        for (i, c) in terms {
            *merged.entry(i).or_insert_with(Rational::zero) += c;
        }
        self.constraints.push(Constraint {
            label: label.into(),
            terms: merged.into_iter().filter(|(_, c)| !c.is_zero()).collect(),
            sense,
            rhs,
        });
    }

    fn finish(self) -> MilpModel {
        MilpModel {
            variables: self.variables,
            constraints: self.constraints,
            objective: self.objective,
            objective_constant: self.objective_constant,
        }
    }
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

fn check_rescaled(g: &StochasticGame, ri: &Rescaled) -> Result<(), String> {
    for v in ri.psi.entries.values() {
        if *v < Rational::one() {
            return Err("penalties are not rescaled (non-zero value below 1)".into());
        }
    }
    let v = total_reward_values(g, &ri.reward, ObjectiveMode::MAX_MAX, DEFAULT_TOL, DEFAULT_MAX_ITER);
    if v.infinite.iter().any(|&i| i)
        || v.values.iter().cloned().fold(0.0, f64::max) >= 1.0 - 1e-6
    {
        return Err("rewards are not rescaled (cooperative supremum not below 1)".into());
    }
    Ok(())
}

/// Shared part of all encodings: allow-flags, value witnesses and the
/// property bound. The lower-bound direction adds the ranking machinery.
fn encode_base(
    g: &StochasticGame,
    ri: &Rescaled,
    relation: Relation,
    b: &mut Builder,
    vm: &mut VarMap,
) -> Result<(), String> {
    check_rescaled(g, ri)?;
    let n = g.num_states();
    for s in 0..n {
        for (a, act) in g.actions(s).iter().enumerate() {
            let idx = b.var(
                format!("y_{}_{}", sanitize(g.state_name(s)), sanitize(&act.name)),
                VarKind::Binary,
                Rational::zero(),
                Rational::one(),
            )?;
            vm.allow.insert((s, a), idx);
        }
        let idx = b.var(
            format!("x_{}", sanitize(g.state_name(s))),
            VarKind::Continuous,
            Rational::zero(),
            Rational::one(),
        )?;
        vm.value.insert(s, idx);
    }
    // Environment actions are always allowed.
    for s in 0..n {
        if !g.is_controller(s) {
            for a in 0..g.actions(s).len() {
                b.con(
                    format!("environment action always allowed ({}, {})", g.state_name(s), g.actions(s)[a].name),
                    vec![(vm.allow[&(s, a)], Rational::one())],
                    Sense::Eq,
                    Rational::one(),
                );
            }
        }
    }
    // At least one allowed action per controller state.
    for s in g.controller_states() {
        let terms = (0..g.actions(s).len())
            .map(|a| (vm.allow[&(s, a)], Rational::one()))
            .collect();
        b.con(
            format!("allowed set non-empty ({})", g.state_name(s)),
            terms,
            Sense::Ge,
            Rational::one(),
        );
    }
    match relation {
        Relation::AtLeast => {
            b.con(
                "bound at initial state",
                vec![(vm.value[&g.initial], Rational::one())],
                Sense::Ge,
                ri.bound.clone(),
            );
            // x_s ≤ Σδ·x + r (+ (1−y) at controller states).
            for s in 0..n {
                for (a, act) in g.actions(s).iter().enumerate() {
                    let mut terms = vec![(vm.value[&s], Rational::one())];
                    for (t, p) in &act.transitions {
                        terms.push((vm.value[t], -p.clone()));
                    }
                    let mut rhs = ri.reward.get(s, a);
                    if g.is_controller(s) {
                        terms.push((vm.allow[&(s, a)], Rational::one()));
                        rhs += Rational::one();
                    }
                    b.con(
                        format!("value upper bound ({}, {})", g.state_name(s), act.name),
                        terms,
                        Sense::Le,
                        rhs,
                    );
                }
            }
            encode_ranking(g, ri, b, vm)?;
        }
        Relation::AtMost => {
            b.con(
                "bound at initial state",
                vec![(vm.value[&g.initial], Rational::one())],
                Sense::Le,
                ri.bound.clone(),
            );
            // x_s ≥ Σδ·x + r (− (1−y) at controller states).
            for s in 0..n {
                for (a, act) in g.actions(s).iter().enumerate() {
                    let mut terms = vec![(vm.value[&s], Rational::one())];
                    for (t, p) in &act.transitions {
                        terms.push((vm.value[t], -p.clone()));
                    }
                    let mut rhs = ri.reward.get(s, a);
                    if g.is_controller(s) {
                        terms.push((vm.allow[&(s, a)], -Rational::one()));
                        rhs -= Rational::one();
                    }
                    b.con(
                        format!("value lower bound ({}, {})", g.state_name(s), act.name),
                        terms,
                        Sense::Ge,
                        rhs,
                    );
                }
            }
        }
    }
    Ok(())
}

/// Ranking machinery excluding spurious zero-reward-cycle solutions in the
/// lower-bound direction.
fn encode_ranking(
    g: &StochasticGame,
    ri: &Rescaled,
    b: &mut Builder,
    vm: &mut VarMap,
) -> Result<(), String> {
    let n = g.num_states();
    let slack = Rational::one() - Rational::new(1.into(), (n as i64).into());
    for s in 0..n {
        let idx = b.var(
            format!("al_{}", sanitize(g.state_name(s))),
            VarKind::Binary,
            Rational::zero(),
            Rational::one(),
        )?;
        vm.active.insert(s, idx);
        let idx = b.var(
            format!("ga_{}", sanitize(g.state_name(s))),
            VarKind::Continuous,
            Rational::zero(),
            Rational::one(),
        )?;
        vm.rank.insert(s, idx);
        b.con(
            format!("activity covers value ({})", g.state_name(s)),
            vec![
                (vm.value[&s], Rational::one()),
                (vm.active[&s], -Rational::one()),
            ],
            Sense::Le,
            Rational::zero(),
        );
    }
    for s in 0..n {
        for (a, act) in g.actions(s).iter().enumerate() {
            let mut terms = vec![
                (vm.allow[&(s, a)], Rational::one()),
                (vm.active[&s], Rational::one()),
            ];
            for (t, _) in &act.transitions {
                let idx = b.var(
                    format!(
                        "be_{}_{}_{}",
                        sanitize(g.state_name(s)),
                        sanitize(&act.name),
                        sanitize(g.state_name(*t))
                    ),
                    VarKind::Binary,
                    Rational::zero(),
                    Rational::one(),
                )?;
                vm.rank_edge.insert((s, a, *t), idx);
                terms.push((idx, -Rational::one()));
            }
            b.con(
                format!("ranking successor choice ({}, {})", g.state_name(s), act.name),
                terms,
                Sense::Eq,
                Rational::one(),
            );
            if ri.reward.get(s, a).is_zero() {
                for (t, _) in &act.transitions {
                    b.con(
                        format!(
                            "ranking decreases ({}, {}, {})",
                            g.state_name(s),
                            act.name,
                            g.state_name(*t)
                        ),
                        vec![
                            (vm.rank[t], Rational::one()),
                            (vm.rank[&s], -Rational::one()),
                            (vm.rank_edge[&(s, a, *t)], Rational::one()),
                        ],
                        Sense::Le,
                        slack.clone(),
                    );
                }
            }
        }
    }
    Ok(())
}

/// Static-penalty encoding: minimise Σψ(1−y) with the reward witness at the
/// initial state as a (dominated) tie-break.
pub fn encode_static(
    g: &StochasticGame,
    ri: &Rescaled,
    relation: Relation,
) -> Result<(MilpModel, VarMap), String> {
    if ri.psi.kind != PenaltyKind::Static {
        return Err("penalty scheme is not static".into());
    }
    let mut b = Builder::new();
    let mut vm = VarMap {
        penalty_scale: ri.kappa_psi.clone(),
        ..VarMap::default()
    };
    encode_base(g, ri, relation, &mut b, &mut vm)?;
    let tie = match relation {
        Relation::AtLeast => -Rational::one(),
        Relation::AtMost => Rational::one(),
    };
    b.objective.push((vm.value[&g.initial], tie));
    for s in g.controller_states() {
        for a in 0..g.actions(s).len() {
            let w = ri.psi.get(s, a);
            if !w.is_zero() {
                b.objective.push((vm.allow[&(s, a)], -w.clone()));
                b.objective_constant += w;
            }
        }
    }
    Ok((b.finish(), vm))
}

/// Dynamic-penalty encoding: adds local-penalty and accumulated-penalty
/// variables on top of the base constraints and minimises the accumulated
/// penalty at the initial state.
pub fn encode_dynamic(
    g: &StochasticGame,
    ri: &Rescaled,
    relation: Relation,
    c: &Rational,
) -> Result<(MilpModel, VarMap), String> {
    if ri.psi.kind != PenaltyKind::Dynamic {
        return Err("penalty scheme is not dynamic".into());
    }
    if *c <= Rational::zero() {
        return Err("penalty cap must be positive".into());
    }
    let mut b = Builder::new();
    let mut vm = VarMap {
        penalty_scale: ri.kappa_psi.clone(),
        ..VarMap::default()
    };
    encode_base(g, ri, relation, &mut b, &mut vm)?;
    let n = g.num_states();
    for s in 0..n {
        let idx = b.var(
            format!("z_{}", sanitize(g.state_name(s))),
            VarKind::Continuous,
            Rational::zero(),
            c.clone(),
        )?;
        vm.pen_value.insert(s, idx);
    }
    for s in g.controller_states() {
        let cap = ri.psi.state_sum(s);
        let idx = b.var(
            format!("l_{}", sanitize(g.state_name(s))),
            VarKind::Continuous,
            Rational::zero(),
            cap.clone(),
        )?;
        vm.local_pen.insert(s, idx);
        let mut terms = vec![(idx, Rational::one())];
        for a in 0..g.actions(s).len() {
            let w = ri.psi.get(s, a);
            if !w.is_zero() {
                terms.push((vm.allow[&(s, a)], w));
            }
        }
        b.con(
            format!("local penalty definition ({})", g.state_name(s)),
            terms,
            Sense::Eq,
            cap,
        );
    }
    for s in 0..n {
        for (a, act) in g.actions(s).iter().enumerate() {
            let mut terms = vec![(vm.pen_value[&s], Rational::one())];
            for (t, p) in &act.transitions {
                terms.push((vm.pen_value[t], -p.clone()));
            }
            let mut rhs = Rational::zero();
            if g.is_controller(s) {
                terms.push((vm.local_pen[&s], -Rational::one()));
                terms.push((vm.allow[&(s, a)], -c.clone()));
                rhs -= c.clone();
            }
            b.con(
                format!("penalty lower bound ({}, {})", g.state_name(s), act.name),
                terms,
                Sense::Ge,
                rhs,
            );
        }
    }
    b.objective.push((vm.pen_value[&g.initial], Rational::one()));
    Ok((b.finish(), vm))
}

/// Static encoding over a gadget-transformed game, with the objective
/// replaced by the granularity-M randomised penalty: y′_{s,i,a} = 1 exactly
/// when the branch chosen by selector i allows a in its gadget, linearised
/// through products w. Penalty coefficients are the integer selector weights,
/// so the reported penalty is the objective component divided by κ_ψ·M.
pub fn encode_transformed_static(
    gp: &StochasticGame,
    mapping: &GadgetMapping,
    ri: &Rescaled,
    psi_orig: &PenaltyScheme,
    relation: Relation,
) -> Result<(MilpModel, VarMap), String> {
    if psi_orig.kind != PenaltyKind::Static {
        return Err("penalty scheme is not static".into());
    }
    if !ri.psi.entries.is_empty() {
        return Err("transformed encoding expects an empty penalty scheme on the gadget game".into());
    }
    let mut b = Builder::new();
    let mut vm = VarMap {
        penalty_scale: ri.kappa_psi.clone() * rat_int(mapping.granularity as i64),
        ..VarMap::default()
    };
    encode_base(gp, ri, relation, &mut b, &mut vm)?;
    let tie = match relation {
        Relation::AtLeast => -Rational::one(),
        Relation::AtMost => Rational::one(),
    };
    b.objective.push((vm.value[&gp.initial], tie));
    for (s, gs) in &mapping.entries {
        for (i0, sel) in gs.selectors.iter().enumerate() {
            let i = i0 + 1;
            let weight = rat_int(mapping.weights[i0] as i64);
            for a in 0..gp.actions(gs.gadget1).len() {
                let aname = sanitize(&gp.actions(gs.gadget1)[a].name);
                let psi_w = psi_orig.get(*s, a).clone() * ri.kappa_psi.clone();
                let yp = b.var(
                    format!("yp_{}_{}_{}", sanitize(gp.state_name(*s)), i, aname),
                    VarKind::Binary,
                    Rational::zero(),
                    Rational::one(),
                )?;
                vm.grid_allow.insert((*s, i, a), yp);
                let mut sum_terms = vec![(yp, Rational::one())];
                for (j, gadget) in [(1usize, gs.gadget1), (2usize, gs.gadget2)] {
                    vm.grid_refs.insert((*s, i, j), (*sel, j - 1));
                    vm.gadget_refs.insert((*s, j), gadget);
                    let w = b.var(
                        format!("w_{}_{}_{}_{}", sanitize(gp.state_name(*s)), i, j, aname),
                        VarKind::Binary,
                        Rational::zero(),
                        Rational::one(),
                    )?;
                    vm.grid_aux.insert((*s, i, j, a), w);
                    b.con(
                        format!("branch product / selector ({}, sel {i}, branch {j})", gp.state_name(*s)),
                        vec![(w, Rational::one()), (vm.allow[&(*sel, j - 1)], -Rational::one())],
                        Sense::Le,
                        Rational::zero(),
                    );
                    b.con(
                        format!(
                            "branch product / gadget ({}, sel {i}, branch {j}, {})",
                            gp.state_name(*s),
                            gp.actions(gs.gadget1)[a].name
                        ),
                        vec![(w, Rational::one()), (vm.allow[&(gadget, a)], -Rational::one())],
                        Sense::Le,
                        Rational::zero(),
                    );
                    sum_terms.push((w, -Rational::one()));
                }
                b.con(
                    format!(
                        "grid allow bound ({}, sel {i}, {})",
                        gp.state_name(*s),
                        gp.actions(gs.gadget1)[a].name
                    ),
                    sum_terms,
                    Sense::Le,
                    Rational::zero(),
                );
                if !psi_w.is_zero() {
                    let coeff = weight.clone() * psi_w;
                    b.objective.push((yp, -coeff.clone()));
                    b.objective_constant += coeff;
                }
            }
        }
    }
    Ok((b.finish(), vm))
}

/// Tightens the value-variable bounds with the extremal expected rewards.
pub fn apply_bounds_optimisation(
    model: &mut MilpModel,
    vm: &VarMap,
    g: &StochasticGame,
    ri: &Rescaled,
) {
    let lo = total_reward_values(g, &ri.reward, ObjectiveMode::MIN_MIN, DEFAULT_TOL, DEFAULT_MAX_ITER);
    let hi = total_reward_values(g, &ri.reward, ObjectiveMode::MAX_MAX, DEFAULT_TOL, DEFAULT_MAX_ITER);
    for (s, &idx) in &vm.value {
        let v = &mut model.variables[idx];
        let l = grid_rational((lo.at(*s) - 1e-7).max(0.0), false);
        if l > v.lower {
            v.lower = l;
        }
        let u = grid_rational((hi.at(*s) + 1e-7).min(1.0), true);
        if u < v.upper {
            v.upper = u;
        }
    }
}

/// At most one zero-penalty action needs to stay allowed per state.
pub fn apply_zero_penalty_optimisation(
    model: &mut MilpModel,
    vm: &VarMap,
    g: &StochasticGame,
    ri: &Rescaled,
) {
    for s in g.controller_states() {
        let zero: Vec<usize> = (0..g.actions(s).len())
            .filter(|&a| ri.psi.get(s, a).is_zero())
            .collect();
        if zero.len() >= 2 {
            model.constraints.push(Constraint {
                label: format!("at most one zero-penalty action ({})", g.state_name(s)),
                terms: zero.iter().map(|&a| (vm.allow[&(s, a)], Rational::one())).collect(),
                sense: Sense::Le,
                rhs: Rational::one(),
            });
        }
    }
}

const MAX_DENOMINATOR: i64 = 1_000_000_000_000;

fn lp_num(v: &Rational) -> Result<String, String> {
    if v.denom() > &num::BigInt::from(MAX_DENOMINATOR) {
        return Err(format!(
            "coefficient {} exceeds the supported denominator range",
            format_rational(v)
        ));
    }
    if v.is_integer() {
        Ok(v.numer().to_string())
    } else {
        Ok(format!("{:.14e}", to_f64(v)))
    }
}

fn lp_terms(terms: &[(usize, Rational)], vars: &[Variable]) -> Result<String, String> {
    if terms.is_empty() {
        return Ok("0 ".to_string() + &vars[0].name);
    }
    let mut out = String::new();
    for (k, (i, c)) in terms.iter().enumerate() {
        let mag = lp_num(&c.abs())?;
        if k == 0 {
            if c.is_negative() {
                out.push_str("- ");
            }
        } else if c.is_negative() {
            out.push_str(" - ");
        } else {
            out.push_str(" + ");
        }
        out.push_str(&format!("{mag} {}", vars[*i].name));
    }
    Ok(out)
}

/// Serializes the model in LP format: `Minimize`, `Subject To` (one
/// constraint `c<N>` per line), `Bounds`, `Binary`, `End`.
pub fn write_lp(model: &MilpModel) -> Result<String, String> {
    let mut out = String::new();
    out.push_str("Minimize\n obj: ");
    out.push_str(&lp_terms(&model.objective, &model.variables)?);
    out.push_str("\nSubject To\n");
    for (k, con) in model.constraints.iter().enumerate() {
        let rel = match con.sense {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        };
        out.push_str(&format!(
            " c{}: {} {} {}\n",
            k + 1,
            lp_terms(&con.terms, &model.variables)?,
            rel,
            lp_num(&con.rhs)?
        ));
    }
    out.push_str("Bounds\n");
    for v in &model.variables {
        if v.kind == VarKind::Continuous {
            out.push_str(&format!(
                " {} <= {} <= {}\n",
                lp_num(&v.lower)?,
                v.name,
                lp_num(&v.upper)?
            ));
        }
    }
    out.push_str("Binary\n");
    for v in &model.variables {
        if v.kind == VarKind::Binary {
            out.push_str(&format!(" {}\n", v.name));
        }
    }
    out.push_str("End\n");
    Ok(out)
}

/// Serializes the variable map as a sidecar: `<name> <role>` lines.
pub fn write_varmap(model: &MilpModel, vm: &VarMap, g: &StochasticGame) -> String {
    let mut out = String::new();
    for ((s, a), idx) in &vm.allow {
        out.push_str(&format!(
            "{} allow {} {}\n",
            model.variables[*idx].name,
            g.state_name(*s),
            g.actions(*s)[*a].name
        ));
    }
    for (s, idx) in &vm.value {
        out.push_str(&format!("{} value {}\n", model.variables[*idx].name, g.state_name(*s)));
    }
    for (s, idx) in &vm.pen_value {
        out.push_str(&format!("{} penalty {}\n", model.variables[*idx].name, g.state_name(*s)));
    }
    out
}

/// Completes a named assignment into per-variable values: binaries must be
/// present and within 1e-5 of {0, 1}; missing continuous variables default
/// to their lower bound.
pub fn assignment_values(
    model: &MilpModel,
    assignment: &BTreeMap<String, f64>,
) -> Result<Vec<f64>, String> {
    let mut out = Vec::with_capacity(model.variables.len());
    for v in &model.variables {
        match (v.kind, assignment.get(&v.name)) {
            (VarKind::Binary, None) => {
                return Err(format!("missing binary variable `{}`", v.name));
            }
            (VarKind::Binary, Some(&x)) => {
                if (x - 0.0).abs() > 1e-5 && (x - 1.0).abs() > 1e-5 {
                    return Err(format!("fractional binary `{}` = {x}", v.name));
                }
                out.push(if x > 0.5 { 1.0 } else { 0.0 });
            }
            (VarKind::Continuous, None) => out.push(to_f64(&v.lower)),
            (VarKind::Continuous, Some(&x)) => out.push(x),
        }
    }
    Ok(out)
}

/// Checks an assignment against all constraints and bounds; returns one
/// message per violation.
pub fn check_assignment(model: &MilpModel, values: &[f64], tol: f64) -> Vec<String> {
    let mut out = Vec::new();
    for (v, &x) in model.variables.iter().zip(values) {
        if x < to_f64(&v.lower) - tol || x > to_f64(&v.upper) + tol {
            out.push(format!("bound violated: {} = {x}", v.name));
        }
        if v.kind == VarKind::Binary && (x - 0.0).abs() > tol && (x - 1.0).abs() > tol {
            out.push(format!("integrality violated: {} = {x}", v.name));
        }
    }
    for (k, con) in model.constraints.iter().enumerate() {
        let lhs: f64 = con.terms.iter().map(|(i, c)| to_f64(c) * values[*i]).sum();
        let rhs = to_f64(&con.rhs);
        let ok = match con.sense {
            Sense::Le => lhs <= rhs + tol,
            Sense::Ge => lhs >= rhs - tol,
            Sense::Eq => (lhs - rhs).abs() <= tol,
        };
        if !ok {
            out.push(format!(
                "c{} violated ({}): lhs = {lhs}, rhs = {rhs}",
                k + 1,
                con.label
            ));
        }
    }
    out
}

/// Decodes an assignment into the deterministic multi-strategy it encodes
/// (on the game that was encoded) plus the objective value.
pub fn decode_solution(
    model: &MilpModel,
    vm: &VarMap,
    g: &StochasticGame,
    assignment: &BTreeMap<String, f64>,
) -> Result<(MultiStrategy, f64), String> {
    let values = assignment_values(model, assignment)?;
    let mut sets: BTreeMap<StateId, BTreeSet<usize>> = BTreeMap::new();
    for s in g.controller_states() {
        let set: BTreeSet<usize> = (0..g.actions(s).len())
            .filter(|a| values[vm.allow[&(s, *a)]] > 0.5)
            .collect();
        if set.is_empty() {
            return Err(format!(
                "empty allowed set at {} (violates the non-empty-set constraint)",
                g.state_name(s)
            ));
        }
        sets.insert(s, set);
    }
    Ok((MultiStrategy::from_sets(sets), model.objective_value(&values)))
}

/// Builds the canonical feasible assignment witnessing a sound deterministic
/// multi-strategy: allow-flags from θ, value witnesses from the worst-case
/// reward, ranking from the longest guaranteed distance to a rewarded
/// action, and (for dynamic models) penalty witnesses from the accumulated
/// penalty values. Returns `None` when θ is not sound for the bound, when a
/// required ranking does not exist, or when the penalty cap is exceeded.
pub fn witness_assignment(
    g: &StochasticGame,
    ri: &Rescaled,
    relation: Relation,
    theta: &MultiStrategy,
    model: &MilpModel,
    vm: &VarMap,
) -> Option<BTreeMap<String, f64>> {
    let direction = match relation {
        Relation::AtLeast => WorstCase::Low,
        Relation::AtMost => WorstCase::High,
    };
    let x = worst_case_reward(g, theta, &ri.reward, direction, DEFAULT_TOL, DEFAULT_MAX_ITER).ok()?;
    let b = to_f64(&ri.bound);
    match relation {
        Relation::AtLeast => {
            if x.at(g.initial) < b - 1e-7 {
                return None;
            }
        }
        Relation::AtMost => {
            if x.at(g.initial) > b + 1e-7 {
                return None;
            }
        }
    }
    let mut values = vec![0.0f64; model.variables.len()];
    let allowed = |s: StateId, a: usize| -> bool {
        !g.is_controller(s) || theta.choice[&s].iter().any(|(set, _)| set.contains(&a))
    };
    for ((s, a), &idx) in &vm.allow {
        values[idx] = if allowed(*s, *a) { 1.0 } else { 0.0 };
    }
    for (s, &idx) in &vm.value {
        values[idx] = x.at(*s).min(1.0);
    }
    if !vm.active.is_empty() {
        // d_s: every allowed zero-reward action must offer a successor with
        // a strictly smaller rank, so d_s is the max over those actions of
        // 1 + the smallest successor rank (0 with no zero-reward action,
        // undefined where positive reward is avoidable forever).
        let n = g.num_states();
        let mut d: Vec<Option<usize>> = vec![None; n];
        loop {
            let mut changed = false;
            for s in 0..n {
                let mut new = Some(0usize);
                for a in 0..g.actions(s).len() {
                    if !allowed(s, a) || !ri.reward.get(s, a).is_zero() {
                        continue;
                    }
                    let best = g.actions(s)[a]
                        .transitions
                        .iter()
                        .filter_map(|(t, _)| d[*t])
                        .min();
                    new = match (new, best) {
                        (Some(cur), Some(b)) => Some(cur.max(b + 1)),
                        _ => None,
                    };
                }
                if new.is_some() && (d[s].is_none() || new < d[s]) {
                    d[s] = new;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        for s in 0..n {
            let has_disallowed = g.is_controller(s)
                && (0..g.actions(s).len()).any(|a| !allowed(s, a));
            let active = x.at(s) > 1e-9 || has_disallowed;
            values[vm.active[&s]] = if active { 1.0 } else { 0.0 };
            values[vm.rank[&s]] = d[s].map_or(0.0, |k| k as f64 / n as f64);
            if active {
                d[s]?; // a ranking is required but does not exist
                for a in 0..g.actions(s).len() {
                    if !allowed(s, a) {
                        continue;
                    }
                    let pick = if ri.reward.get(s, a).is_zero() {
                        let t = g.actions(s)[a]
                            .transitions
                            .iter()
                            .map(|(t, _)| *t)
                            .filter(|t| d[*t].is_some() && d[*t] < d[s])
                            .min_by_key(|t| d[*t])?;
                        t
                    } else {
                        g.actions(s)[a].transitions[0].0
                    };
                    values[vm.rank_edge[&(s, a, pick)]] = 1.0;
                }
            }
        }
    }
    if !vm.pen_value.is_empty() {
        let z = analysis::dynamic_penalty_values(g, theta, &ri.psi, DEFAULT_TOL, DEFAULT_MAX_ITER)
            .ok()?;
        for (s, &idx) in &vm.pen_value {
            if z.infinite[*s] {
                return None;
            }
            let cap = to_f64(&model.variables[idx].upper);
            if z.at(*s) > cap + 1e-7 {
                return None;
            }
            values[idx] = z.at(*s).min(cap);
        }
        for (s, &idx) in &vm.local_pen {
            let pen = crate::game::local_penalty(theta, g, *s, &ri.psi).ok()?;
            values[idx] = to_f64(&pen);
        }
    }
    // Transformed-model product variables follow directly from the flags.
    if !vm.grid_aux.is_empty() {
        for ((s, i, j, a), &widx) in &vm.grid_aux {
            let sel_y = values[vm.allow[&sel_state_action(vm, *s, *i, *j)?]];
            let gadget_y = values[vm.allow[&gadget_state_action(vm, *s, *j, *a)?]];
            values[widx] = if sel_y > 0.5 && gadget_y > 0.5 { 1.0 } else { 0.0 };
        }
        for ((s, i, a), &yidx) in &vm.grid_allow {
            let w1 = values[vm.grid_aux[&(*s, *i, 1, *a)]];
            let w2 = values[vm.grid_aux[&(*s, *i, 2, *a)]];
            values[yidx] = if w1 + w2 >= 1.0 { 1.0 } else { 0.0 };
        }
    }
    Some(
        model
            .variables
            .iter()
            .zip(values)
            .map(|(v, x)| (v.name.clone(), x))
            .collect(),
    )
}

fn sel_state_action(vm: &VarMap, s: StateId, i: usize, j: usize) -> Option<(StateId, usize)> {
    vm.grid_refs.get(&(s, i, j)).copied()
}

fn gadget_state_action(vm: &VarMap, s: StateId, j: usize, a: usize) -> Option<(StateId, usize)> {
    vm.gadget_refs.get(&(s, j)).map(|g| (*g, a))
}
