//! Bundled example games and generators used by tests, docs and the CLI.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::game::{
    Action, MultiStrategy, PenaltyKind, PenaltyScheme, Player, Property, PropertyKind, Relation,
    State, StochasticGame,
};
use crate::rational::{rat, rat_int, Rational};
use num::One;

fn act(name: &str, transitions: Vec<(usize, Rational)>) -> Action {
    Action {
        name: name.to_string(),
        transitions,
    }
}

fn state(name: &str, player: Player, actions: Vec<Action>) -> State {
    State {
        name: name.to_string(),
        player,
        actions,
    }
}

/// The six-state robot navigation game: a robot moves between four locations
/// and may be impeded by a second robot on its east moves. Returns the game,
/// the `moves` reward structure (1 per controller move) and the unit static
/// penalty scheme over the same pairs.
pub fn robot_game() -> (StochasticGame, crate::game::RewardStructure, PenaltyScheme) {
    use Player::*;
    let states = vec![
        // s0
        state(
            "s0",
            Controller,
            vec![
                act("east", vec![(1, rat_int(1))]),
                act("south", vec![(3, rat_int(1))]),
            ],
        ),
        // s1
        state(
            "s1",
            Environment,
            vec![
                act("impede", vec![(0, rat(3, 4)), (2, rat(1, 4))]),
                act("pass", vec![(2, rat_int(1))]),
            ],
        ),
        // s2
        state("s2", Controller, vec![act("south", vec![(5, rat_int(1))])]),
        // s3
        state(
            "s3",
            Controller,
            vec![
                act("north", vec![(0, rat(7, 10)), (4, rat(3, 10))]),
                act("east", vec![(4, rat_int(1))]),
            ],
        ),
        // s4
        state(
            "s4",
            Environment,
            vec![
                act("impede", vec![(3, rat(3, 5)), (5, rat(2, 5))]),
                act("pass", vec![(5, rat_int(1))]),
            ],
        ),
        // s5 (goal)
        state("s5", Controller, vec![act("done", vec![(5, rat_int(1))])]),
    ];
    let mut labels = BTreeMap::new();
    labels.insert("goal".to_string(), BTreeSet::from([5]));
    let game = StochasticGame {
        states,
        initial: 0,
        labels,
    };
    let mut moves = crate::game::RewardStructure::new("moves");
    let mut psi = PenaltyScheme::new(PenaltyKind::Static);
    for (s, a) in [(0, 0), (0, 1), (2, 0), (3, 0), (3, 1)] {
        moves.set(s, a, rat_int(1));
        psi.set(s, a, rat_int(1));
    }
    (game, moves, psi)
}

/// The optimally permissive deterministic multi-strategy for the robot game
/// under `R{moves}<=5`: only north at s3 is disallowed.
pub fn robot_theta_penalty_one(g: &StochasticGame) -> MultiStrategy {
    let mut sets = BTreeMap::new();
    sets.insert(0, BTreeSet::from([0usize, 1]));
    sets.insert(2, BTreeSet::from([0usize]));
    sets.insert(3, BTreeSet::from([g.action_index(3, "east").unwrap()]));
    sets.insert(5, BTreeSet::from([0usize]));
    MultiStrategy::from_sets(sets)
}

/// The randomised multi-strategy achieving static penalty 7/10 on the robot
/// game under `R{moves}<=5`: at s3 it allows {east} with probability 7/10 and
/// {north, east} with probability 3/10.
pub fn robot_theta_randomised(g: &StochasticGame) -> MultiStrategy {
    let mut theta = robot_theta_penalty_one(g);
    let north = g.action_index(3, "north").unwrap();
    let east = g.action_index(3, "east").unwrap();
    theta.choice.insert(
        3,
        vec![
            (BTreeSet::from([east]), rat(7, 10)),
            (BTreeSet::from([north, east]), rat(3, 10)),
        ],
    );
    theta
}

/// A two-branch MDP where the rewarded branch and the penalised branch are
/// different actions: allowing only the rewarded branch costs penalty 1,
/// while mixing the two singleton sets halves the penalty at the same
/// soundness threshold. Returns (game, reward `r`, unit ψ on (s, a2)).
pub fn branch_tradeoff_game() -> (StochasticGame, crate::game::RewardStructure, PenaltyScheme) {
    use Player::*;
    let states = vec![
        state(
            "s",
            Controller,
            vec![
                act("a1", vec![(1, rat_int(1))]),
                act("a2", vec![(2, rat_int(1))]),
            ],
        ),
        state("t1", Controller, vec![act("loop", vec![(1, rat_int(1))])]),
        state("t2", Controller, vec![act("loop", vec![(2, rat_int(1))])]),
    ];
    let game = StochasticGame {
        states,
        initial: 0,
        labels: BTreeMap::new(),
    };
    let mut r = crate::game::RewardStructure::new("r");
    r.set(0, 0, rat_int(1));
    let mut psi = PenaltyScheme::new(PenaltyKind::Static);
    psi.set(0, 1, rat_int(1));
    (game, r, psi)
}

/// A loop/exit game where disallowing the unrewarded loop with probability ε
/// is sound for any ε > 0: the infimum penalty 0 is not attained. Returns
/// (game, reward `r` with 1 on the exit, ψ with 1 on the loop).
pub fn loop_exit_game() -> (StochasticGame, crate::game::RewardStructure, PenaltyScheme) {
    use Player::*;
    let states = vec![
        state(
            "s",
            Controller,
            vec![
                act("a", vec![(0, rat_int(1))]),
                act("b", vec![(1, rat_int(1))]),
            ],
        ),
        state("t", Controller, vec![act("loop", vec![(1, rat_int(1))])]),
    ];
    let game = StochasticGame {
        states,
        initial: 0,
        labels: BTreeMap::new(),
    };
    let mut r = crate::game::RewardStructure::new("r");
    r.set(0, 1, rat_int(1));
    let mut psi = PenaltyScheme::new(PenaltyKind::Static);
    psi.set(0, 0, rat_int(1));
    (game, r, psi)
}

/// A five-state game showing that restricting randomised supports to nested
/// set pairs is lossy for dynamic penalties: the nested optimum is √2 while
/// an incomparable support pair achieves 1. Property: reach s3 with
/// probability at least 1/2. Returns (game, dynamic ψ, property).
pub fn nested_gap_game() -> (StochasticGame, PenaltyScheme, Property) {
    use Player::*;
    let states = vec![
        state(
            "s0",
            Controller,
            vec![
                act("b", vec![(1, rat_int(1))]),
                act("c", vec![(2, rat_int(1))]),
            ],
        ),
        state(
            "s1",
            Controller,
            vec![
                act("d", vec![(3, rat_int(1))]),
                act("e", vec![(4, rat_int(1))]),
            ],
        ),
        state("s2", Environment, vec![act("loop", vec![(2, rat_int(1))])]),
        state("s3", Environment, vec![act("loop", vec![(3, rat_int(1))])]),
        state("s4", Environment, vec![act("loop", vec![(4, rat_int(1))])]),
    ];
    let game = StochasticGame {
        states,
        initial: 0,
        labels: BTreeMap::new(),
    };
    let mut psi = PenaltyScheme::new(PenaltyKind::Dynamic);
    psi.set(0, 1, rat_int(1)); // c
    psi.set(1, 1, rat_int(1)); // e
    let prop = Property {
        kind: PropertyKind::Reach(vec!["s3".to_string()]),
        relation: Relation::AtLeast,
        threshold: rat(1, 2),
    };
    (game, psi, prop)
}

/// One knapsack item: value in (0, 1], non-negative weight.
#[derive(Debug, Clone)]
pub struct KnapsackItem {
    pub value: Rational,
    pub weight: Rational,
}

/// Builds the n-branch MDP reduction of a 0/1 knapsack instance: a uniform
/// split reaches one item state per item; taking the item (`a`) reaches the
/// rewarded goal with the item's value as probability, while the penalised
/// alternative (`b`, ψ = weight) loops. A sound multi-strategy with dynamic
/// penalty ≤ W/n for `R{value}>=V/n` exists iff some item subset has total
/// value ≥ V and total weight ≤ W.
pub fn gen_knapsack_game(
    items: &[KnapsackItem],
    total_value: &Rational,
    total_weight: &Rational,
) -> Result<
    (
        StochasticGame,
        crate::game::RewardStructure,
        PenaltyScheme,
        Property,
        Rational,
    ),
    String,
> {
    use Player::*;
    if items.is_empty() {
        return Err("no items".into());
    }
    let n = items.len();
    for (i, item) in items.iter().enumerate() {
        if item.value <= rat_int(0) || item.value > rat_int(1) {
            return Err(format!("item {i} value outside (0, 1]"));
        }
        if item.weight < rat_int(0) {
            return Err(format!("item {i} has negative weight"));
        }
    }
    let mut states = Vec::new();
    // Indices: 0 = start, then per item i: t_i = 1 + 2i, g_i = 2 + 2i,
    // then top = 1 + 2n, bot = 2 + 2n.
    let t_idx = |i: usize| 1 + 2 * i;
    let g_idx = |i: usize| 2 + 2 * i;
    let top = 1 + 2 * n;
    let bot = 2 + 2 * n;
    states.push(state(
        "start",
        Controller,
        vec![act(
            "go",
            (0..n).map(|i| (t_idx(i), rat(1, n as i64))).collect(),
        )],
    ));
    for (i, item) in items.iter().enumerate() {
        let mut take = Vec::new();
        take.push((g_idx(i), item.value.clone()));
        if item.value != rat_int(1) {
            take.push((bot, rat_int(1) - item.value.clone()));
        }
        states.push(state(
            &format!("t{i}"),
            Controller,
            vec![
                act("a", take),
                act("b", vec![(t_idx(i), rat_int(1))]),
            ],
        ));
        states.push(state(
            &format!("g{i}"),
            Controller,
            vec![act("collect", vec![(top, rat_int(1))])],
        ));
    }
    states.push(state("top", Controller, vec![act("done", vec![(top, rat_int(1))])]));
    states.push(state("bot", Controller, vec![act("stay", vec![(bot, rat_int(1))])]));
    let game = StochasticGame {
        states,
        initial: 0,
        labels: BTreeMap::new(),
    };
    let mut reward = crate::game::RewardStructure::new("value");
    let mut psi = PenaltyScheme::new(PenaltyKind::Dynamic);
    for (i, item) in items.iter().enumerate() {
        reward.set(g_idx(i), 0, rat_int(1));
        psi.set(t_idx(i), 1, item.weight.clone());
    }
    let prop = Property {
        kind: PropertyKind::Reward("value".to_string()),
        relation: Relation::AtLeast,
        threshold: total_value.clone() / rat_int(n as i64),
    };
    let penalty_bound = total_weight.clone() / rat_int(n as i64);
    Ok((game, reward, psi, prop, penalty_bound))
}

/// Knobs for the seeded random game generator.
#[derive(Debug, Clone)]
pub struct RandomGameConfig {
    pub max_states: usize,
    pub max_actions: usize,
    pub max_denominator: u32,
    /// Keep the cooperative supremum of every reward finite by forcing each
    /// non-sink action to reach a strictly later state with positive
    /// probability (the only end component is the zero-reward sink).
    pub ensure_finite: bool,
}

impl Default for RandomGameConfig {
    fn default() -> Self {
        RandomGameConfig {
            max_states: 6,
            max_actions: 3,
            max_denominator: 8,
            ensure_finite: true,
        }
    }
}

/// Deterministic random game with reward and penalty structures.
pub fn random_game(
    seed: u64,
    cfg: &RandomGameConfig,
) -> (StochasticGame, crate::game::RewardStructure, PenaltyScheme) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=cfg.max_states.max(2));
    let mut states = Vec::new();
    for s in 0..n {
        let player = if s == n - 1 || rng.gen_bool(0.6) {
            Player::Controller
        } else {
            Player::Environment
        };
        let n_actions = if s == n - 1 {
            1
        } else {
            rng.gen_range(1..=cfg.max_actions)
        };
        let mut actions = Vec::new();
        for a in 0..n_actions {
            let transitions = if s == n - 1 {
                vec![(s, Rational::one())]
            } else {
                random_distribution(&mut rng, s, n, cfg)
            };
            actions.push(Action {
                name: format!("a{a}"),
                transitions,
            });
        }
        states.push(State {
            name: format!("s{s}"),
            player,
            actions,
        });
    }
    let game = StochasticGame {
        states,
        initial: 0,
        labels: BTreeMap::new(),
    };
    let mut reward = crate::game::RewardStructure::new("r");
    let mut psi = PenaltyScheme::new(PenaltyKind::Static);
    for s in 0..n - 1 {
        for a in 0..game.actions(s).len() {
            if rng.gen_bool(0.4) {
                reward.set(s, a, rat_int(rng.gen_range(1..=3)));
            }
            if game.is_controller(s) && rng.gen_bool(0.6) {
                psi.set(
                    s,
                    a,
                    rat(rng.gen_range(1..=4), rng.gen_range(1..=2)),
                );
            }
        }
    }
    (game, reward, psi)
}

fn random_distribution(
    rng: &mut ChaCha8Rng,
    s: usize,
    n: usize,
    cfg: &RandomGameConfig,
) -> Vec<(usize, Rational)> {
    // One mandatory forward successor keeps the game free of rewarded end
    // components when ensure_finite is set.
    let forward = rng.gen_range(s + 1..n);
    if !cfg.ensure_finite || rng.gen_bool(0.5) {
        let other = rng.gen_range(0..n);
        if other != forward {
            let den = rng.gen_range(2..=cfg.max_denominator.max(2)) as i64;
            let num = rng.gen_range(1..den);
            let p = rat(num, den);
            return vec![(forward, p.clone()), (other, rat_int(1) - p)]
                .into_iter()
                .collect();
        }
    }
    vec![(forward, Rational::one())]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_games_are_valid() {
        assert!(robot_game().0.validate().is_empty());
        assert!(branch_tradeoff_game().0.validate().is_empty());
        assert!(loop_exit_game().0.validate().is_empty());
        assert!(nested_gap_game().0.validate().is_empty());
    }

    #[test]
    fn knapsack_single_item() {
        let items = [KnapsackItem {
            value: rat(1, 2),
            weight: rat_int(1),
        }];
        let (g, r, psi, prop, bound) =
            gen_knapsack_game(&items, &rat(1, 2), &rat_int(1)).unwrap();
        assert!(g.validate().is_empty());
        assert_eq!(prop.threshold, rat(1, 2));
        assert_eq!(bound, rat_int(1));
        assert_eq!(r.get(2, 0), rat_int(1));
        assert_eq!(psi.get(1, 1), rat_int(1));
    }

    #[test]
    fn knapsack_rejects_bad_values() {
        let items = [KnapsackItem {
            value: rat(3, 2),
            weight: rat_int(1),
        }];
        assert!(gen_knapsack_game(&items, &rat_int(1), &rat_int(1)).is_err());
    }

    #[test]
    fn random_games_are_valid() {
        let cfg = RandomGameConfig::default();
        for seed in 0..50 {
            let (g, _, _) = random_game(seed, &cfg);
            assert!(g.validate().is_empty(), "seed {seed}: {:?}", g.validate());
        }
    }
}
