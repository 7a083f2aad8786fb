#![no_main]

use std::path::Path;

use gfmid::io::Manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let file = Path::new("manifest.json");
    if let Ok(m) = Manifest::from_json(text, file) {
        let back = Manifest::from_json(&m.to_json(), file).expect("written manifest parses");
        assert_eq!(back.files, m.files);
    }
});
