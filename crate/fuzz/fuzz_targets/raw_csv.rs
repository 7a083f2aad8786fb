#![no_main]

use std::path::Path;

use gfmid::io::parse_abc;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_abc(text, Path::new("fuzz.csv"));
    }
});
