//! Regenerates the checked-in model files under models/ from the built-in
//! fixture constructors. Run from the workspace root:
//!
//! ```text
//! cargo run -p permissive --example regen_models
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use permissive::fixtures;
use permissive::io;

fn main() {
    let dir = Path::new("models");
    std::fs::create_dir_all(dir).expect("create models/");

    let (g, r, psi) = fixtures::robot_game();
    let mut rewards = BTreeMap::new();
    rewards.insert(r.name.clone(), r);
    std::fs::write(dir.join("robot.game"), io::write_game(&g, &rewards, &psi)).unwrap();

    let (g, r, psi) = fixtures::branch_tradeoff_game();
    let mut rewards = BTreeMap::new();
    rewards.insert(r.name.clone(), r);
    std::fs::write(
        dir.join("branch_tradeoff.game"),
        io::write_game(&g, &rewards, &psi),
    )
    .unwrap();

    let (g, r, psi) = fixtures::loop_exit_game();
    let mut rewards = BTreeMap::new();
    rewards.insert(r.name.clone(), r);
    std::fs::write(dir.join("loop_exit.game"), io::write_game(&g, &rewards, &psi)).unwrap();

    let (g, psi, prop) = fixtures::nested_gap_game();
    std::fs::write(
        dir.join("nested_gap.game"),
        io::write_game(&g, &BTreeMap::new(), &psi),
    )
    .unwrap();
    std::fs::write(dir.join("nested_gap.prop"), format!("{prop}\n")).unwrap();

    println!("models regenerated");
}
