#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(parsed) = permissive::io::parse_game(text) {
            // A successful parse must round-trip through the writer.
            let out = permissive::io::write_game(&parsed.game, &parsed.rewards, &parsed.penalties);
            let again = permissive::io::parse_game(&out).expect("round-trip reparse");
            assert_eq!(parsed.game.num_states(), again.game.num_states());
        }
    }
});
