//! Replays the fuzz corpus seeds through the parsers the fuzz targets call,
//! so the seeds stay meaningful as formats evolve.

use std::path::{Path, PathBuf};

use gfmid::io::{parse_abc, parse_dq, write_dq, Manifest, RunConfig};
use gfmid::normalform::HwNormalForm;

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let text = std::fs::read_to_string(&p).unwrap();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn is_negative(p: &Path) -> bool {
    p.file_name().unwrap().to_string_lossy().starts_with("bad-")
}

#[test]
fn dq_seeds() {
    for (p, text) in seeds("dq_csv") {
        match parse_dq(&text, &p) {
            Ok(s) => {
                assert!(!is_negative(&p), "{} should be rejected", p.display());
                let once = write_dq(&s);
                assert_eq!(write_dq(&parse_dq(&once, &p).unwrap()), once);
            }
            Err(e) => assert!(is_negative(&p), "{e}"),
        }
    }
}

#[test]
fn raw_seeds() {
    for (p, text) in seeds("raw_csv") {
        let r = parse_abc(&text, &p);
        assert_eq!(r.is_err(), is_negative(&p), "{}: {:?}", p.display(), r.err());
    }
}

#[test]
fn config_seeds() {
    for (p, text) in seeds("config") {
        let r = RunConfig::from_toml(&text, &p);
        assert_eq!(r.is_err(), is_negative(&p), "{}: {:?}", p.display(), r.err());
    }
}

#[test]
fn model_seeds() {
    for (p, text) in seeds("model_json") {
        let r = HwNormalForm::from_json(&text);
        assert_eq!(r.is_err(), is_negative(&p), "{}: {:?}", p.display(), r.err());
    }
}

#[test]
fn manifest_seeds() {
    for (p, text) in seeds("manifest") {
        let r = Manifest::from_json(&text, &p);
        assert_eq!(r.is_err(), is_negative(&p), "{}: {:?}", p.display(), r.err());
    }
}
