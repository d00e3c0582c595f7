//! Exact (rational) evaluation of Markov chains and small games.
//!
//! Serves two purposes: rescaling needs exact extremal values (so that scale
//! factors stay rational), and tests use these routines as an oracle that is
//! independent of the value-iteration engine — a strategy pair is evaluated
//! by solving the induced chain's linear system with Gaussian elimination.

use num::{One, Zero};
use petgraph::graph::DiGraph;

use crate::game::{StochasticGame, RewardStructure};
use crate::rational::Rational;

/// A finite Markov chain with one transition distribution and one reward per
/// state.
pub struct MarkovChain {
    pub transitions: Vec<Vec<(usize, Rational)>>,
    pub rewards: Vec<Rational>,
}

/// Expected total reward per state; `None` marks an infinite value (a closed
/// recurrent class with positive reward is reachable).
pub fn mc_total_reward(chain: &MarkovChain) -> Vec<Option<Rational>> {
    let n = chain.transitions.len();
    let mut graph = DiGraph::<(), ()>::new();
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for (s, dist) in chain.transitions.iter().enumerate() {
        for (t, _) in dist {
            graph.add_edge(nodes[s], nodes[*t], ());
        }
    }
    let sccs = petgraph::algo::tarjan_scc(&graph);
    let mut comp_of = vec![0usize; n];
    for (c, comp) in sccs.iter().enumerate() {
        for node in comp {
            comp_of[node.index()] = c;
        }
    }
    // A component is closed when no edge leaves it.
    let mut closed = vec![true; sccs.len()];
    for (s, dist) in chain.transitions.iter().enumerate() {
        for (t, _) in dist {
            if comp_of[s] != comp_of[*t] {
                closed[comp_of[s]] = false;
            }
        }
    }
    // Closed components with a positive reward inside diverge.
    let mut divergent = vec![false; n];
    let mut zero_closed = vec![false; n];
    for s in 0..n {
        if closed[comp_of[s]] {
            let comp_has_reward = (0..n)
                .filter(|t| comp_of[*t] == comp_of[s])
                .any(|t| chain.rewards[t] > Rational::zero());
            if comp_has_reward {
                divergent[s] = true;
            } else {
                zero_closed[s] = true;
            }
        }
    }
    // Everything that can reach a divergent state diverges too.
    let mut changed = true;
    while changed {
        changed = false;
        for s in 0..n {
            if !divergent[s]
                && chain.transitions[s].iter().any(|(t, _)| divergent[*t])
            {
                divergent[s] = true;
                changed = true;
            }
        }
    }
    // Solve (I − P) x = r over the remaining transient states, with x = 0 on
    // zero-reward closed classes.
    let solve_states: Vec<usize> = (0..n)
        .filter(|s| !divergent[*s] && !zero_closed[*s])
        .collect();
    let index_of: std::collections::HashMap<usize, usize> = solve_states
        .iter()
        .enumerate()
        .map(|(i, s)| (*s, i))
        .collect();
    let m = solve_states.len();
    let mut matrix = vec![vec![Rational::zero(); m + 1]; m];
    for (i, &s) in solve_states.iter().enumerate() {
        matrix[i][i] = Rational::one();
        matrix[i][m] = chain.rewards[s].clone();
        for (t, p) in &chain.transitions[s] {
            if let Some(&j) = index_of.get(t) {
                let cell = matrix[i][j].clone() - p.clone();
                matrix[i][j] = cell;
            }
        }
    }
    let solution = gaussian_solve(&mut matrix)
        .expect("transient part of a Markov chain has a unique total reward");
    let mut out = vec![None; n];
    for s in 0..n {
        if divergent[s] {
            out[s] = None;
        } else if zero_closed[s] {
            out[s] = Some(Rational::zero());
        } else {
            out[s] = Some(solution[index_of[&s]].clone());
        }
    }
    out
}

/// Solves a square augmented system in place; returns `None` if singular.
fn gaussian_solve(matrix: &mut [Vec<Rational>]) -> Option<Vec<Rational>> {
    let m = matrix.len();
    for col in 0..m {
        let pivot = (col..m).find(|&r| !matrix[r][col].is_zero())?;
        matrix.swap(col, pivot);
        let p = matrix[col][col].clone();
        for cell in matrix[col].iter_mut() {
            *cell /= p.clone();
        }
        for row in 0..m {
            if row != col && !matrix[row][col].is_zero() {
                let factor = matrix[row][col].clone();
                for c in 0..=m {
                    let delta = factor.clone() * matrix[col][c].clone();
                    matrix[row][c] -= delta;
                }
            }
        }
    }
    Some((0..m).map(|r| matrix[r][m].clone()).collect())
}

/// Induces the Markov chain of a pure memoryless profile (one action index
/// per state, controller and environment alike).
pub fn profile_chain(
    g: &StochasticGame,
    r: &RewardStructure,
    profile: &[usize],
) -> MarkovChain {
    let transitions = (0..g.num_states())
        .map(|s| g.actions(s)[profile[s]].transitions.clone())
        .collect();
    let rewards = (0..g.num_states()).map(|s| r.get(s, profile[s])).collect();
    MarkovChain {
        transitions,
        rewards,
    }
}

/// Iterates over all pure memoryless profiles of a game.
pub fn for_each_profile(
    g: &StochasticGame,
    mut f: impl FnMut(&[usize]),
) {
    let counts: Vec<usize> = (0..g.num_states()).map(|s| g.actions(s).len()).collect();
    let mut profile = vec![0usize; counts.len()];
    loop {
        f(&profile);
        let mut i = 0;
        loop {
            if i == profile.len() {
                return;
            }
            profile[i] += 1;
            if profile[i] < counts[i] {
                break;
            }
            profile[i] = 0;
            i += 1;
        }
    }
}

pub fn profile_count(g: &StochasticGame) -> f64 {
    (0..g.num_states())
        .map(|s| g.actions(s).len() as f64)
        .product()
}

/// Per-state maximum expected total reward over all pure profiles (both
/// players cooperating), computed exactly. Returns `None` if any profile
/// diverges or the profile space exceeds the guard.
pub fn cooperative_max_exact(
    g: &StochasticGame,
    r: &RewardStructure,
    guard: f64,
) -> Option<Vec<Rational>> {
    if profile_count(g) > guard {
        return None;
    }
    let mut best: Vec<Option<Rational>> = vec![None; g.num_states()];
    let mut diverged = false;
    for_each_profile(g, |profile| {
        if diverged {
            return;
        }
        let values = mc_total_reward(&profile_chain(g, r, profile));
        for (s, v) in values.into_iter().enumerate() {
            match v {
                None => diverged = true,
                Some(v) => {
                    if best[s].as_ref().map_or(true, |b| v > *b) {
                        best[s] = Some(v);
                    }
                }
            }
        }
    });
    if diverged {
        return None;
    }
    best.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::rational::{rat, rat_int};

    #[test]
    fn chain_with_geometric_return() {
        // s0 -> s1 (reward 1), s1: 3/4 back to s0, 1/4 to sink.
        let chain = MarkovChain {
            transitions: vec![
                vec![(1, rat_int(1))],
                vec![(0, rat(3, 4)), (2, rat(1, 4))],
                vec![(2, rat_int(1))],
            ],
            rewards: vec![rat_int(1), rat_int(0), rat_int(0)],
        };
        let v = mc_total_reward(&chain);
        // x0 = 1 + x1, x1 = 3/4 x0 => x0 = 4.
        assert_eq!(v[0], Some(rat_int(4)));
        assert_eq!(v[1], Some(rat_int(3)));
        assert_eq!(v[2], Some(rat_int(0)));
    }

    #[test]
    fn rewarded_loop_is_infinite() {
        let chain = MarkovChain {
            transitions: vec![vec![(0, rat_int(1))]],
            rewards: vec![rat_int(1)],
        };
        assert_eq!(mc_total_reward(&chain), vec![None]);
    }

    #[test]
    fn robot_cooperative_max_is_91_over_6() {
        let (g, moves, _) = fixtures::robot_game();
        let values = cooperative_max_exact(&g, &moves, 1e6).unwrap();
        assert_eq!(values[0], rat(91, 6));
    }

    #[test]
    fn robot_min_strategy_value() {
        let (g, moves, _) = fixtures::robot_game();
        // south at s0, east at s3; environment impedes everywhere.
        let profile = vec![1, 0, 0, 1, 0, 0];
        let v = mc_total_reward(&profile_chain(&g, &moves, &profile));
        assert_eq!(v[0], Some(rat(7, 2)));
    }
}
