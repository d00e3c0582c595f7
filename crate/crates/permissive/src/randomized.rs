//! Granularity-M randomised multi-strategies via a gadget transformation.
//!
//! A randomised multi-strategy whose weights are multiples of 1/M is encoded
//! by a deterministic multi-strategy on a transformed game: each controller
//! state becomes a probabilistic fan-out over m = ⌊1 + log₂ M⌋ selector
//! states with fixed weights l_i/M; every selector chooses between two
//! branch actions leading to two gadget states, each of which replicates the
//! original action set. Because every k ∈ {0..M} is a sub-sum of the l_i,
//! any two-set randomisation with on-grid weights is representable.

use std::collections::{BTreeMap, BTreeSet};

use num::Zero;

use crate::game::{
    Action, MultiStrategy, PenaltyKind, PenaltyScheme, Player, RewardStructure, State, StateId,
    StochasticGame,
};
use crate::rational::{rat, rat_int, Rational};

/// Indices of the states added for one original controller state.
#[derive(Debug, Clone)]
pub struct GadgetStates {
    /// The original state id, reused as the fan-out state.
    pub fanout: StateId,
    pub selectors: Vec<StateId>,
    pub gadget1: StateId,
    pub gadget2: StateId,
}

/// The correspondence between a game and its gadget transformation.
#[derive(Debug, Clone)]
pub struct GadgetMapping {
    pub granularity: u64,
    /// Selector weights l_1..l_m; Σ l_i = M.
    pub weights: Vec<u64>,
    pub entries: BTreeMap<StateId, GadgetStates>,
}

/// The selector weight sequence: l_1 = ⌈M/2⌉ and each subsequent weight is
/// the rounded-up half of what remains, for m = ⌊1 + log₂ M⌋ entries.
pub fn selector_weights(m_granularity: u64) -> Vec<u64> {
    assert!(m_granularity >= 1, "granularity must be positive");
    let m = 64 - m_granularity.leading_zeros() as usize; // ⌊1 + log₂ M⌋
    let mut out = Vec::with_capacity(m);
    let mut rem = m_granularity;
    for _ in 0..m {
        let l = rem.div_ceil(2);
        out.push(l);
        rem -= l;
    }
    debug_assert_eq!(rem, 0);
    debug_assert_eq!(out.iter().sum::<u64>(), m_granularity);
    out
}

/// Greedy largest-first index set I_k with Σ_{j ∈ I_k} l_j = k (1-based
/// indices). Exists for every k ∈ {0..M}.
pub fn subset_for(m_granularity: u64, k: u64) -> BTreeSet<usize> {
    assert!(k <= m_granularity);
    let weights = selector_weights(m_granularity);
    let mut rem = k;
    let mut out = BTreeSet::new();
    for (j, l) in weights.iter().enumerate() {
        if *l <= rem {
            rem -= l;
            out.insert(j + 1);
        }
    }
    assert_eq!(rem, 0, "k = {k} not representable at M = {m_granularity}");
    out
}

/// The granularity sufficient for an ε-close static-penalty approximation:
/// M = ⌈Σψ/ε⌉, at least 1.
pub fn granularity_for(epsilon: &Rational, psi: &PenaltyScheme) -> Result<u64, String> {
    if psi.kind != PenaltyKind::Static {
        return Err("no constructive granularity bound for dynamic penalties".into());
    }
    if *epsilon <= Rational::zero() {
        return Err("epsilon must be positive".into());
    }
    let ratio = psi.total() / epsilon.clone();
    let m = ratio.ceil().to_integer();
    let m: u64 = num::ToPrimitive::to_u64(&m).ok_or("granularity overflows u64")?;
    Ok(m.max(1))
}

/// Builds the transformed game. Original states keep their ids; every
/// controller state's action list is replaced by a single probabilistic
/// fan-out onto fresh selector states, which in turn pick one of two gadget
/// states replicating the original actions.
pub fn build_gadget_game(
    g: &StochasticGame,
    m_granularity: u64,
) -> Result<(StochasticGame, GadgetMapping), String> {
    if m_granularity < 2 {
        return Err("granularity must be at least 2".into());
    }
    for st in &g.states {
        if st.name.contains('@') {
            return Err(format!("state id `{}` uses the reserved character `@`", st.name));
        }
    }
    let weights = selector_weights(m_granularity);
    let m = weights.len();
    let mut states = g.states.clone();
    let mut entries = BTreeMap::new();
    for s in g.controller_states() {
        let base = states.len();
        let selectors: Vec<StateId> = (0..m).map(|i| base + i).collect();
        let gadget1 = base + m;
        let gadget2 = base + m + 1;
        let original_actions = g.states[s].actions.clone();
        // Fan-out: a single action with fixed selector weights.
        states[s].actions = vec![Action {
            name: "sel".to_string(),
            transitions: weights
                .iter()
                .enumerate()
                .map(|(i, l)| (selectors[i], rat(*l as i64, m_granularity as i64)))
                .collect(),
        }];
        for (i, &_sel) in selectors.iter().enumerate() {
            states.push(State {
                name: format!("{}@sel{}", g.state_name(s), i + 1),
                player: Player::Controller,
                actions: vec![
                    Action {
                        name: "b1".to_string(),
                        transitions: vec![(gadget1, rat_int(1))],
                    },
                    Action {
                        name: "b2".to_string(),
                        transitions: vec![(gadget2, rat_int(1))],
                    },
                ],
            });
            let _ = i;
        }
        for (j, gid) in [(1, gadget1), (2, gadget2)] {
            states.push(State {
                name: format!("{}@g{}", g.state_name(s), j),
                player: Player::Controller,
                actions: original_actions.clone(),
            });
            let _ = gid;
        }
        entries.insert(
            s,
            GadgetStates {
                fanout: s,
                selectors,
                gadget1,
                gadget2,
            },
        );
    }
    let gp = StochasticGame {
        states,
        initial: g.initial,
        labels: g.labels.clone(),
    };
    let report = gp.validate();
    if let Some(first) = report.first() {
        return Err(format!("transformed game invalid: {first}"));
    }
    Ok((
        gp,
        GadgetMapping {
            granularity: m_granularity,
            weights,
            entries,
        },
    ))
}

/// Moves a reward structure onto the transformed game: controller entries
/// are duplicated onto both gadget copies; fan-out and selector actions earn
/// nothing; environment entries are unchanged.
pub fn transform_reward(
    g: &StochasticGame,
    mapping: &GadgetMapping,
    r: &RewardStructure,
) -> RewardStructure {
    let mut out = RewardStructure::new(r.name.clone());
    for ((s, a), v) in &r.entries {
        match mapping.entries.get(s) {
            Some(gs) => {
                out.set(gs.gadget1, *a, v.clone());
                out.set(gs.gadget2, *a, v.clone());
            }
            None => out.set(*s, *a, v.clone()),
        }
    }
    let _ = g;
    out
}

/// Moves a penalty scheme onto the transformed game: gadget copies carry the
/// original weights; fan-out and selector actions are penalty-free.
pub fn transform_penalties(
    g: &StochasticGame,
    mapping: &GadgetMapping,
    psi: &PenaltyScheme,
) -> PenaltyScheme {
    let mut out = PenaltyScheme::new(psi.kind);
    for ((s, a), v) in &psi.entries {
        match mapping.entries.get(s) {
            Some(gs) => {
                out.set(gs.gadget1, *a, v.clone());
                out.set(gs.gadget2, *a, v.clone());
            }
            None => out.set(*s, *a, v.clone()),
        }
    }
    let _ = g;
    out
}

/// Decodes a deterministic multi-strategy of the transformed game into a
/// randomised one on the original game: with A_j the set allowed at gadget
/// j, a selector choosing both branches contributes its weight to A₁∪A₂,
/// and one-branch selectors contribute to A₁ or A₂ alone.
pub fn det_to_rand(
    theta_p: &MultiStrategy,
    mapping: &GadgetMapping,
) -> Result<MultiStrategy, String> {
    if !theta_p.is_deterministic() {
        return Err("transformed multi-strategy must be deterministic".into());
    }
    let m_gran = mapping.granularity;
    let mut choice = BTreeMap::new();
    for (s, gs) in &mapping.entries {
        let get = |id: StateId| -> Result<&BTreeSet<usize>, String> {
            theta_p
                .choice
                .get(&id)
                .map(|d| &d[0].0)
                .ok_or_else(|| format!("multi-strategy undefined at transformed state {id}"))
        };
        let a1 = get(gs.gadget1)?.clone();
        let a2 = get(gs.gadget2)?.clone();
        let mut mass: BTreeMap<BTreeSet<usize>, u64> = BTreeMap::new();
        for (i, sel) in gs.selectors.iter().enumerate() {
            let picked = get(*sel)?;
            let set = match (picked.contains(&0), picked.contains(&1)) {
                (true, true) => a1.union(&a2).copied().collect(),
                (true, false) => a1.clone(),
                (false, true) => a2.clone(),
                (false, false) => return Err(format!("empty selector choice at state {sel}")),
            };
            *mass.entry(set).or_insert(0) += mapping.weights[i];
        }
        let dist: Vec<(BTreeSet<usize>, Rational)> = mass
            .into_iter()
            .map(|(set, k)| (set, rat(k as i64, m_gran as i64)))
            .collect();
        choice.insert(*s, dist);
    }
    Ok(MultiStrategy { choice })
}

/// Encodes a randomised multi-strategy (support ≤ 2, weights multiples of
/// 1/M) as a deterministic one on the transformed game: the first support
/// set goes to gadget 1, the second to gadget 2, and the selectors in
/// I_k (k = M·weight of the first set) choose branch 1.
pub fn rand_to_det(
    theta: &MultiStrategy,
    mapping: &GadgetMapping,
) -> Result<MultiStrategy, String> {
    let m_gran = mapping.granularity;
    let mut sets: BTreeMap<StateId, BTreeSet<usize>> = BTreeMap::new();
    for (s, gs) in &mapping.entries {
        let dist = theta
            .choice
            .get(s)
            .ok_or_else(|| format!("multi-strategy undefined at state {s}"))?;
        if dist.len() > 2 {
            return Err(format!("support larger than 2 at state {s}"));
        }
        let on_grid = |w: &Rational| -> Result<u64, String> {
            let scaled = w.clone() * rat_int(m_gran as i64);
            if !scaled.is_integer() {
                return Err(format!(
                    "off-grid weight {} at state {s} for granularity {m_gran}",
                    crate::rational::format_rational(w)
                ));
            }
            num::ToPrimitive::to_u64(&scaled.to_integer()).ok_or_else(|| "weight overflow".into())
        };
        let (b1, k) = (&dist[0].0, on_grid(&dist[0].1)?);
        let b2 = if dist.len() == 2 {
            let _ = on_grid(&dist[1].1)?;
            &dist[1].0
        } else {
            b1
        };
        let picked = subset_for(m_gran, k);
        for (i, sel) in gs.selectors.iter().enumerate() {
            let branch = if picked.contains(&(i + 1)) { 0 } else { 1 };
            sets.insert(*sel, BTreeSet::from([branch]));
        }
        sets.insert(gs.gadget1, b1.clone());
        sets.insert(gs.gadget2, b2.clone());
        sets.insert(gs.fanout, BTreeSet::from([0usize]));
    }
    Ok(MultiStrategy::from_sets(sets))
}

/// Serializes a mapping as a human-readable sidecar.
pub fn write_mapping(mapping: &GadgetMapping, gp: &StochasticGame) -> String {
    let mut out = String::new();
    out.push_str(&format!("granularity {}\n", mapping.granularity));
    out.push_str("weights");
    for l in &mapping.weights {
        out.push_str(&format!(" {l}"));
    }
    out.push('\n');
    for (s, gs) in &mapping.entries {
        out.push_str(&format!("state {}", gp.state_name(*s)));
        for sel in &gs.selectors {
            out.push_str(&format!(" {}", gp.state_name(*sel)));
        }
        out.push_str(&format!(
            " {} {}\n",
            gp.state_name(gs.gadget1),
            gp.state_name(gs.gadget2)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use rand::Rng;
    use rand::SeedableRng;

    #[test]
    fn weight_sequences() {
        assert_eq!(selector_weights(10), vec![5, 3, 1, 1]);
        assert_eq!(selector_weights(1), vec![1]);
        assert_eq!(selector_weights(7), vec![4, 2, 1]);
        assert_eq!(selector_weights(2), vec![1, 1]);
        assert_eq!(selector_weights(100), vec![50, 25, 13, 6, 3, 2, 1]);
    }

    #[test]
    fn weights_represent_every_k() {
        for m in 1..=256u64 {
            let w = selector_weights(m);
            assert_eq!(w.len(), (64 - m.leading_zeros()) as usize, "M={m}");
            assert_eq!(w.iter().sum::<u64>(), m, "M={m}");
            for k in 0..=m {
                let idx = subset_for(m, k);
                let sum: u64 = idx.iter().map(|j| w[j - 1]).sum();
                assert_eq!(sum, k, "M={m} k={k}");
            }
        }
    }

    #[test]
    fn subset_examples() {
        assert_eq!(subset_for(10, 7), BTreeSet::from([1, 3, 4]));
        assert_eq!(subset_for(10, 0), BTreeSet::new());
        assert_eq!(subset_for(10, 10), BTreeSet::from([1, 2, 3, 4]));
    }

    #[test]
    fn granularity_examples() {
        let (_, _, psi) = fixtures::robot_game();
        assert_eq!(granularity_for(&rat(1, 2), &psi).unwrap(), 10);
        assert_eq!(granularity_for(&rat_int(10), &psi).unwrap(), 1);
        assert_eq!(granularity_for(&rat(1, 2), &psi.with_kind(PenaltyKind::Dynamic)).is_err(), true);
    }

    #[test]
    fn gadget_game_shape() {
        let (g, moves, psi) = fixtures::robot_game();
        let (gp, mapping) = build_gadget_game(&g, 10).unwrap();
        // 4 controller states each gain 4 selectors + 2 gadgets.
        assert_eq!(gp.num_states(), 6 + 4 * 6);
        assert!(gp.validate().is_empty());
        let s3 = g.state_index("s3").unwrap();
        let gs = &mapping.entries[&s3];
        assert_eq!(gp.state_name(gs.selectors[0]), "s3@sel1");
        assert_eq!(gp.state_name(gs.gadget1), "s3@g1");
        assert_eq!(gp.actions(gs.gadget1).len(), 2);
        assert_eq!(gp.actions(gs.gadget1)[0].name, "north");
        assert_eq!(gp.actions(s3).len(), 1);
        assert_eq!(gp.actions(s3)[0].name, "sel");
        let rp = transform_reward(&g, &mapping, &moves);
        assert_eq!(rp.get(gs.gadget1, 1), rat_int(1));
        assert_eq!(rp.get(gs.gadget2, 0), rat_int(1));
        assert_eq!(rp.get(s3, 0), rat_int(0));
        let pp = transform_penalties(&g, &mapping, &psi);
        assert_eq!(pp.get(gs.gadget1, 0), rat_int(1));
        assert_eq!(pp.get(gs.selectors[0], 0), rat_int(0));
    }

    #[test]
    fn gadget_rejects_reserved_names() {
        let (mut g, _, _) = fixtures::robot_game();
        g.states[0].name = "s@0".to_string();
        assert!(build_gadget_game(&g, 4).is_err());
        let (g2, _, _) = fixtures::robot_game();
        assert!(build_gadget_game(&g2, 1).is_err());
    }

    #[test]
    fn round_trip_on_robot_randomised_theta() {
        let (g, _, _) = fixtures::robot_game();
        let theta = fixtures::robot_theta_randomised(&g);
        let (_, mapping) = build_gadget_game(&g, 10).unwrap();
        let det = rand_to_det(&theta, &mapping).unwrap();
        assert!(det.is_deterministic());
        let back = det_to_rand(&det, &mapping).unwrap();
        assert_eq!(back.normalized(), theta.normalized());
        // Selector assignment follows subset_for(10, 7) at s3.
        let s3 = g.state_index("s3").unwrap();
        let gs = &mapping.entries[&s3];
        for (i, sel) in gs.selectors.iter().enumerate() {
            let expect = if subset_for(10, 7).contains(&(i + 1)) { 0 } else { 1 };
            assert_eq!(det.allowed_set(*sel), &BTreeSet::from([expect]));
        }
    }

    #[test]
    fn dirac_theta_round_trips() {
        let (g, _, _) = fixtures::robot_game();
        let theta = fixtures::robot_theta_penalty_one(&g);
        let (_, mapping) = build_gadget_game(&g, 4).unwrap();
        let det = rand_to_det(&theta, &mapping).unwrap();
        let back = det_to_rand(&det, &mapping).unwrap();
        assert_eq!(back, theta);
    }

    #[test]
    fn all_b1_selectors_give_dirac() {
        let (g, _, _) = fixtures::robot_game();
        let (gp, mapping) = build_gadget_game(&g, 10).unwrap();
        let mut sets = BTreeMap::new();
        for gs in mapping.entries.values() {
            sets.insert(gs.fanout, BTreeSet::from([0usize]));
            for sel in &gs.selectors {
                sets.insert(*sel, BTreeSet::from([0usize]));
            }
            let all: BTreeSet<usize> = (0..gp.actions(gs.gadget1).len()).collect();
            sets.insert(gs.gadget1, all.clone());
            sets.insert(gs.gadget2, BTreeSet::from([0usize]));
        }
        let det = MultiStrategy::from_sets(sets);
        let back = det_to_rand(&det, &mapping).unwrap();
        for (s, dist) in &back.choice {
            assert_eq!(dist.len(), 1);
            let all: BTreeSet<usize> = (0..g.actions(*s).len()).collect();
            assert_eq!(dist[0].0, all);
        }
    }

    #[test]
    fn rejects_bad_randomised_inputs() {
        let (g, _, _) = fixtures::robot_game();
        let (_, mapping) = build_gadget_game(&g, 10).unwrap();
        let mut theta = fixtures::robot_theta_penalty_one(&g);
        theta.choice.insert(
            0,
            vec![
                (BTreeSet::from([0usize]), rat(1, 3)),
                (BTreeSet::from([1usize]), rat(2, 3)),
            ],
        );
        let e = rand_to_det(&theta, &mapping).unwrap_err();
        assert!(e.contains("off-grid"), "{e}");
        let mut theta = fixtures::robot_theta_penalty_one(&g);
        theta.choice.insert(
            0,
            vec![
                (BTreeSet::from([0usize]), rat(1, 10)),
                (BTreeSet::from([1usize]), rat(2, 10)),
                (BTreeSet::from([0usize, 1]), rat(7, 10)),
            ],
        );
        let e = rand_to_det(&theta, &mapping).unwrap_err();
        assert!(e.contains("support"), "{e}");
    }

    #[test]
    fn random_support_two_thetas_round_trip() {
        let cfg = fixtures::RandomGameConfig::default();
        let m_gran = 10u64;
        for seed in 0..40 {
            let (g, _, _) = fixtures::random_game(seed, &cfg);
            let (_, mapping) = build_gadget_game(&g, m_gran).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let theta = random_grid_theta(&g, m_gran, &mut rng);
            let det = rand_to_det(&theta, &mapping).unwrap();
            let back = det_to_rand(&det, &mapping).unwrap();
            assert_eq!(back.normalized(), theta.normalized(), "seed {seed}");
        }
    }

    /// A random granularity-M multi-strategy with support ≤ 2 per state.
    pub fn random_grid_theta(
        g: &StochasticGame,
        m_gran: u64,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> MultiStrategy {
        let mut choice = BTreeMap::new();
        for s in g.controller_states() {
            let n = g.actions(s).len();
            let random_set = |rng: &mut rand_chacha::ChaCha8Rng| -> BTreeSet<usize> {
                loop {
                    let set: BTreeSet<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
                    if !set.is_empty() {
                        return set;
                    }
                }
            };
            let b1 = random_set(rng);
            let b2 = random_set(rng);
            let k = rng.gen_range(1..=m_gran - 1);
            if b1 == b2 || rng.gen_bool(0.3) {
                choice.insert(s, vec![(b1, rat_int(1))]);
            } else {
                let mut dist = vec![
                    (b1, rat(k as i64, m_gran as i64)),
                    (b2, rat((m_gran - k) as i64, m_gran as i64)),
                ];
                dist.sort_by(|x, y| x.0.cmp(&y.0));
                choice.insert(s, dist);
            }
        }
        MultiStrategy { choice }
    }
}
