//! Permissive controller synthesis for turn-based stochastic two-player games.
//!
//! The library models games with exact rational probabilities, evaluates
//! expected total rewards and multi-strategy penalties numerically, builds
//! MILP encodings of the synthesis problems (exported as LP files for
//! external solvers), and ships a native anytime branch-and-bound solver
//! together with exhaustive brute-force oracles. Randomised multi-strategies
//! are approximated at a chosen granularity through a gadget transformation
//! of the game.

pub mod analysis;
pub mod exact;
pub mod fixtures;
pub mod game;
pub mod io;
pub mod milp;
pub mod randomized;
pub mod rational;
pub mod solver;

pub use game::{
    MemorylessStrategy, MultiStrategy, PenaltyKind, PenaltyScheme, Player, Property,
    PropertyKind, Relation, RewardStructure, StateId, StochasticGame,
};
pub use rational::Rational;
