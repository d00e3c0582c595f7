#![no_main]

use std::sync::OnceLock;

use libfuzzer_sys::fuzz_target;
use permissive::game::StochasticGame;

fn game() -> &'static StochasticGame {
    static GAME: OnceLock<StochasticGame> = OnceLock::new();
    GAME.get_or_init(|| permissive::fixtures::robot_game().0)
}

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let g = game();
        if let Ok(theta) = permissive::io::parse_multistrategy(text, g) {
            let out = permissive::io::write_multistrategy(&theta, g);
            permissive::io::parse_multistrategy(&out, g).expect("round-trip reparse");
        }
    }
});
