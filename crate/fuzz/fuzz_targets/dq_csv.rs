#![no_main]

use std::path::Path;

use gfmid::io::{parse_dq, write_dq};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let file = Path::new("fuzz.csv");
    if let Ok(series) = parse_dq(text, file) {
        // Anything accepted must survive write -> read -> write unchanged.
        let once = write_dq(&series);
        let back = parse_dq(&once, file).expect("written series parses");
        assert_eq!(write_dq(&back), once);
    }
});
