//! End-to-end acceptance checks. Each test prints a single pass/fail line
//! for its criterion (visible with `--nocapture`; a failing criterion also
//! fails its test).

use std::collections::{BTreeMap, BTreeSet};

use num::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use permissive::analysis::{
    build_objective, check_sound, check_sound_objective, extract_strategy, static_penalty,
    total_reward_values, ObjectiveMode, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use permissive::fixtures::{self, KnapsackItem, RandomGameConfig};
use permissive::game::{
    MultiStrategy, PenaltyKind, Property, PropertyKind, Relation, StochasticGame,
};
use permissive::randomized::{
    build_gadget_game, det_to_rand, rand_to_det, selector_weights, subset_for, transform_reward,
};
use permissive::rational::{rat, rat_int, to_f64, Rational};
use permissive::solver::{brute_force_det, brute_force_rand, solve_native, solve_native_rand,
    Problem, SolverConfig};

fn report(n: usize, desc: &str, r: Result<(), String>) {
    match &r {
        Ok(()) => println!("criterion {n}: pass - {desc}"),
        Err(e) => println!("criterion {n}: FAIL - {desc}: {e}"),
    }
    if let Err(e) = r {
        panic!("criterion {n} failed: {e}");
    }
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn reward_prop(name: &str, relation: Relation, threshold: Rational) -> Property {
    Property {
        kind: PropertyKind::Reward(name.to_string()),
        relation,
        threshold,
    }
}

fn no_improve() -> impl Fn(&permissive::solver::Incumbent) + Sync {
    |_: &permissive::solver::Incumbent| {}
}

fn robot_problem(threshold: i64, kind: PenaltyKind) -> Problem {
    let (g, r, psi) = fixtures::robot_game();
    let mut rewards = BTreeMap::new();
    rewards.insert(r.name.clone(), r);
    let prop = reward_prop("moves", Relation::AtMost, rat_int(threshold));
    Problem::build(&g, &prop, &rewards, &psi.with_kind(kind)).unwrap()
}

#[test]
fn criterion_01_robot_classical_synthesis() {
    let run = || -> Result<(), String> {
        let (g, r, _) = fixtures::robot_game();
        let mut rewards = BTreeMap::new();
        rewards.insert(r.name.clone(), r.clone());
        let prop = reward_prop("moves", Relation::AtMost, rat_int(5));
        let obj = build_objective(&g, &prop, &rewards)?;
        let values = total_reward_values(
            &obj.game,
            &obj.reward,
            ObjectiveMode::MIN_MAX,
            DEFAULT_TOL,
            DEFAULT_MAX_ITER,
        );
        let v = values.at(obj.game.initial);
        ensure((v - 3.5).abs() <= 1e-9, format!("optimal value {v} is not 3.5"))?;
        let strat =
            extract_strategy(&obj.game, &obj.reward, ObjectiveMode::MIN_MAX, &values, DEFAULT_TOL);
        ensure(strat.get(&0) == Some(&1), "initial state does not pick the south action")?;
        ensure(strat.get(&3) == Some(&1), "state s3 does not pick the east action")?;
        Ok(())
    };
    report(1, "optimal classical strategy on the routing game", run());
}

#[test]
fn criterion_02_robot_det_static_optimum_matches_oracle() {
    let run = || -> Result<(), String> {
        let problem = robot_problem(5, PenaltyKind::Static);
        let native = solve_native(&problem, &SolverConfig::default(), &no_improve())?;
        let inc = native.incumbent.ok_or("no sound multi-strategy found")?;
        ensure(native.optimal, "search did not complete")?;
        ensure(
            inc.penalty_exact == Some(Rational::one()),
            format!("optimal penalty is {} instead of 1", inc.penalty),
        )?;
        let want: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::from([
            (0, BTreeSet::from([0, 1])),
            (2, BTreeSet::from([0])),
            (3, BTreeSet::from([1])),
            (5, BTreeSet::from([0])),
        ]);
        ensure(
            inc.theta.normalized() == MultiStrategy::from_sets(want).normalized(),
            format!("unexpected optimal multi-strategy {:?}", inc.theta),
        )?;
        let oracle = brute_force_det(&problem, DEFAULT_TOL, DEFAULT_MAX_ITER)?
            .ok_or("oracle found no sound multi-strategy")?;
        ensure(
            oracle.penalty_exact == inc.penalty_exact,
            "native and exhaustive optima disagree",
        )?;
        // A loose bound admits the fully permissive multi-strategy.
        let loose = robot_problem(16, PenaltyKind::Static);
        let native = solve_native(&loose, &SolverConfig::default(), &no_improve())?;
        let inc = native.incumbent.ok_or("no solution at the loose bound")?;
        ensure(
            inc.penalty_exact == Some(Rational::zero()),
            format!("penalty at bound 16 is {} instead of 0", inc.penalty),
        )?;
        Ok(())
    };
    report(2, "deterministic static-penalty optimum on the routing game", run());
}

#[test]
fn criterion_03_robot_randomised_beats_deterministic() {
    let run = || -> Result<(), String> {
        let problem = robot_problem(5, PenaltyKind::Static);
        let native = solve_native_rand(&problem, 10, &SolverConfig::default(), &no_improve())?;
        let inc = native.incumbent.ok_or("no sound multi-strategy found")?;
        ensure(native.optimal, "search did not complete")?;
        ensure(
            inc.penalty <= 0.7 + 1e-9,
            format!("granularity-10 penalty {} exceeds 7/10", inc.penalty),
        )?;
        let sound = check_sound_objective(&problem.obj, &inc.theta, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        ensure(sound.sound, "optimal randomised multi-strategy is not sound")?;
        Ok(())
    };
    report(3, "granularity-10 randomisation reaches penalty 7/10 on the routing game", run());
}

#[test]
fn criterion_04_branch_tradeoff_halves_penalty() {
    let run = || -> Result<(), String> {
        let (g, r, psi) = fixtures::branch_tradeoff_game();
        let mut rewards = BTreeMap::new();
        rewards.insert(r.name.clone(), r);
        let prop = reward_prop("r", Relation::AtLeast, rat(1, 2));
        for kind in [PenaltyKind::Static, PenaltyKind::Dynamic] {
            let problem = Problem::build(&g, &prop, &rewards, &psi.with_kind(kind))?;
            let det = solve_native(&problem, &SolverConfig::default(), &no_improve())?
                .incumbent
                .ok_or("no deterministic solution")?;
            ensure(
                (det.penalty - 1.0).abs() <= 1e-9,
                format!("{kind:?}: deterministic penalty {} is not 1", det.penalty),
            )?;
            let rand = solve_native_rand(&problem, 2, &SolverConfig::default(), &no_improve())?
                .incumbent
                .ok_or("no randomised solution")?;
            ensure(
                (rand.penalty - 0.5).abs() <= 1e-9,
                format!("{kind:?}: granularity-2 penalty {} is not 1/2", rand.penalty),
            )?;
        }
        Ok(())
    };
    report(4, "randomisation halves both penalty kinds on the branch trade-off game", run());
}

#[test]
fn criterion_05_loop_exit_infimum_scales_as_one_over_m() {
    let run = || -> Result<(), String> {
        let (g, r, psi) = fixtures::loop_exit_game();
        let mut rewards = BTreeMap::new();
        rewards.insert(r.name.clone(), r);
        let prop = reward_prop("r", Relation::AtLeast, rat_int(1));
        let problem = Problem::build(&g, &prop, &rewards, &psi)?;
        for m in [2u64, 5, 10, 100] {
            let inc = brute_force_rand(&problem, m, true, DEFAULT_TOL, DEFAULT_MAX_ITER)?
                .ok_or(format!("no solution at granularity {m}"))?;
            ensure(
                inc.penalty_exact == Some(rat(1, m as i64)),
                format!("granularity-{m} optimum {} is not 1/{m}", inc.penalty),
            )?;
        }
        Ok(())
    };
    report(5, "loop/exit optimal penalty is exactly 1/M for M in {2,5,10,100}", run());
}

#[test]
fn criterion_06_nested_support_gap_for_dynamic_penalties() {
    let run = || -> Result<(), String> {
        let (g, psi, prop) = fixtures::nested_gap_game();
        let problem = Problem::build(&g, &prop, &BTreeMap::new(), &psi)?;
        let m = 100u64;
        let nested = brute_force_rand(&problem, m, true, DEFAULT_TOL, DEFAULT_MAX_ITER)?
            .ok_or("no nested-support solution")?;
        let root2 = 2f64.sqrt();
        let eps = 2.0 / m as f64;
        ensure(
            nested.penalty >= root2 - eps && nested.penalty <= root2 + eps,
            format!("nested optimum {} is not within 2/M of sqrt(2)", nested.penalty),
        )?;
        let free = brute_force_rand(&problem, m, false, DEFAULT_TOL, DEFAULT_MAX_ITER)?
            .ok_or("no unrestricted-support solution")?;
        ensure(
            (free.penalty - 1.0).abs() <= 1e-6,
            format!("unrestricted optimum {} is not 1", free.penalty),
        )?;
        Ok(())
    };
    report(6, "incomparable supports beat nested ones for dynamic penalties", run());
}

#[test]
fn criterion_07_native_solver_matches_exhaustive_oracle() {
    let run = || -> Result<(), String> {
        let cfg = RandomGameConfig {
            max_states: 5,
            ..Default::default()
        };
        for seed in 0..100u64 {
            let (g, r, psi) = fixtures::random_game(seed, &cfg);
            let mut rewards = BTreeMap::new();
            rewards.insert("r".to_string(), r.clone());
            let hi = total_reward_values(
                &g,
                &r,
                ObjectiveMode::MAX_MAX,
                DEFAULT_TOL,
                DEFAULT_MAX_ITER,
            );
            let threshold =
                Rational::from_float((hi.at(g.initial) * 0.5).max(0.01)).ok_or("bad threshold")?;
            for kind in [PenaltyKind::Static, PenaltyKind::Dynamic] {
                let prop = reward_prop("r", Relation::AtLeast, threshold.clone());
                let problem = Problem::build(&g, &prop, &rewards, &psi.with_kind(kind))?;
                let oracle = brute_force_det(&problem, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
                let native =
                    solve_native(&problem, &SolverConfig::default(), &no_improve())?.incumbent;
                match (oracle, native) {
                    (None, None) => {}
                    (Some(o), Some(n)) => {
                        if kind == PenaltyKind::Static {
                            ensure(
                                o.penalty_exact == n.penalty_exact,
                                format!("seed {seed} {kind:?}: {} vs {}", o.penalty, n.penalty),
                            )?;
                        } else {
                            ensure(
                                (o.penalty - n.penalty).abs() < 1e-6,
                                format!("seed {seed} {kind:?}: {} vs {}", o.penalty, n.penalty),
                            )?;
                        }
                        let sound = check_sound_objective(
                            &problem.obj,
                            &n.theta,
                            DEFAULT_TOL,
                            DEFAULT_MAX_ITER,
                        )?;
                        ensure(sound.sound, format!("seed {seed} {kind:?}: unsound optimum"))?;
                    }
                    (o, n) => {
                        return Err(format!(
                            "seed {seed} {kind:?}: oracle {:?} vs native {:?}",
                            o.map(|i| i.penalty),
                            n.map(|i| i.penalty)
                        ))
                    }
                }
            }
        }
        Ok(())
    };
    report(7, "native optimum equals the exhaustive oracle on 200 seeded problems", run());
}

/// A random granularity-M multi-strategy with support at most 2 per state.
fn random_grid_theta(g: &StochasticGame, m: u64, rng: &mut ChaCha8Rng) -> MultiStrategy {
    let mut choice = BTreeMap::new();
    for s in g.controller_states() {
        let n = g.actions(s).len();
        let random_set = |rng: &mut ChaCha8Rng| -> BTreeSet<usize> {
            loop {
                let set: BTreeSet<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
                if !set.is_empty() {
                    return set;
                }
            }
        };
        let b1 = random_set(rng);
        let b2 = random_set(rng);
        let k = rng.gen_range(1..m);
        if b1 == b2 || rng.gen_bool(0.3) {
            choice.insert(s, vec![(b1, rat_int(1))]);
        } else {
            let mut dist = vec![
                (b1, rat(k as i64, m as i64)),
                (b2, rat((m - k) as i64, m as i64)),
            ];
            dist.sort_by(|x, y| x.0.cmp(&y.0));
            choice.insert(s, dist);
        }
    }
    MultiStrategy { choice }
}

#[test]
fn criterion_08_gadget_round_trip_preserves_semantics() {
    let run = || -> Result<(), String> {
        let cfg = RandomGameConfig::default();
        let m = 10u64;
        for seed in 0..100u64 {
            let (g, r, psi) = fixtures::random_game(seed, &cfg);
            let (gp, mapping) = build_gadget_game(&g, m)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let theta = random_grid_theta(&g, m, &mut rng);
            let det = rand_to_det(&theta, &mapping)?;
            let back = det_to_rand(&det, &mapping)?;
            ensure(
                back.normalized() == theta.normalized(),
                format!("seed {seed}: round trip changed the multi-strategy"),
            )?;
            ensure(
                static_penalty(&g, &back, &psi)? == static_penalty(&g, &theta, &psi)?,
                format!("seed {seed}: round trip changed the penalty"),
            )?;
            // The worst-case value is preserved by the transformation.
            let mut rewards = BTreeMap::new();
            rewards.insert("r".to_string(), r.clone());
            let prop = reward_prop("r", Relation::AtLeast, Rational::zero());
            let orig = check_sound(&g, &theta, &prop, &rewards, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
            let mut rewards_p = BTreeMap::new();
            rewards_p.insert("r".to_string(), transform_reward(&g, &mapping, &r));
            let lifted =
                check_sound(&gp, &det, &prop, &rewards_p, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
            ensure(
                (orig.value - lifted.value).abs() <= 1e-6,
                format!(
                    "seed {seed}: value changed from {} to {}",
                    orig.value, lifted.value
                ),
            )?;
        }
        Ok(())
    };
    report(8, "selector-gadget round trips preserve strategy, value, and penalty", run());
}

#[test]
fn criterion_09_knapsack_feasibility_matches_subset_oracle() {
    let run = || -> Result<(), String> {
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..=8usize);
            let items: Vec<KnapsackItem> = (0..n)
                .map(|_| KnapsackItem {
                    value: rat(rng.gen_range(1..=4), 4),
                    weight: rat(rng.gen_range(0..=6), 2),
                })
                .collect();
            let total_value: Rational = items.iter().map(|i| i.value.clone()).sum();
            let total_weight: Rational = items.iter().map(|i| i.weight.clone()).sum();
            let target_value = total_value * rat(3, 4);
            let target_weight = total_weight * rat(rng.gen_range(1..=3), 4);
            let (g, r, psi, prop, pen_bound) =
                fixtures::gen_knapsack_game(&items, &target_value, &target_weight)
                    .map_err(|e| format!("seed {seed}: {e}"))?;
            let mut rewards = BTreeMap::new();
            rewards.insert(r.name.clone(), r);
            let problem = Problem::build(&g, &prop, &rewards, &psi)?;
            let inc = solve_native(&problem, &SolverConfig::default(), &no_improve())?.incumbent;
            let solver_feasible = match inc {
                Some(i) => i.penalty <= to_f64(&pen_bound) + 1e-6,
                None => false,
            };
            // Exact subset-sum oracle.
            let mut oracle_feasible = false;
            for mask in 0u32..(1 << n) {
                let mut v = Rational::zero();
                let mut w = Rational::zero();
                for (i, item) in items.iter().enumerate() {
                    if mask & (1 << i) != 0 {
                        v += item.value.clone();
                        w += item.weight.clone();
                    }
                }
                if v >= target_value && w <= target_weight {
                    oracle_feasible = true;
                    break;
                }
            }
            ensure(
                solver_feasible == oracle_feasible,
                format!("seed {seed}: solver {solver_feasible} vs oracle {oracle_feasible}"),
            )?;
        }
        Ok(())
    };
    report(9, "knapsack-reduction feasibility agrees with the exact subset oracle", run());
}

#[test]
fn criterion_10_selector_weights_cover_every_grid_level() {
    let run = || -> Result<(), String> {
        ensure(
            selector_weights(10) == vec![5, 3, 1, 1],
            "granularity-10 weights are not [5, 3, 1, 1]",
        )?;
        for m in 1..=256u64 {
            let weights = selector_weights(m);
            ensure(
                weights.iter().sum::<u64>() == m,
                format!("granularity-{m} weights do not sum to M"),
            )?;
            for k in 0..=m {
                let subset = subset_for(m, k);
                let total: u64 = subset.iter().map(|&j| weights[j - 1]).sum();
                ensure(
                    total == k,
                    format!("granularity-{m}: level {k} not represented"),
                )?;
            }
        }
        Ok(())
    };
    report(10, "selector weights represent every k/M for all M up to 256", run());
}
