#![no_main]

use std::path::Path;

use gfmid::io::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_toml(text, Path::new("fuzz.toml")) {
        let _ = cfg.validate();
        let _ = cfg.to_toml();
    }
});
