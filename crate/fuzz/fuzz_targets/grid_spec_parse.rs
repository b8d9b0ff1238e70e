#![no_main]

use libfuzzer_sys::fuzz_target;
use pilir::config::parse_grid_spec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(sizes) = parse_grid_spec(text) {
        assert!(!sizes.is_empty());
        assert!(sizes.iter().all(|&n| (2..=1 << 20).contains(&n)));
    }
});
