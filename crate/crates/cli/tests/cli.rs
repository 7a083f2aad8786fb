use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

const SMALL: &str = r#"seed = 1
[plant]
kind = "droop"
[protocol]
instances_per_class = 3
magnitude_cycles = 1
frequency_cycles = 1
rapid_duration = 4.0
"#;

fn gfmid(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gfmid"))
        .args(args)
        .current_dir(cwd)
        .env_remove("GFMID_OUT_DIR")
        .env_remove("GFMID_THREADS")
        .env_remove("SOURCE_DATE_EPOCH")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(&o));
    o
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// One small droop dataset plus an order-1 model, shared by the tests.
fn fixture() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-fixture");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("small.toml"), SMALL).unwrap();
        ok(gfmid(&["simulate", "--config", "small.toml", "--out", "data"], &dir));
        ok(gfmid(&["identify", "--data", "data", "--n-ivars", "1", "--max-iters", "40", "--out", "ident"], &dir));
        dir
    })
}

#[test]
fn simulate_writes_records_and_manifest() {
    let dir = fixture();
    let records = std::fs::read_dir(dir.join("data/records")).unwrap().count();
    assert!(records >= 3, "{records}");
    let m = json(&dir.join("data/manifest.json"));
    assert_eq!(m["kind"], "dataset");
    assert_eq!(m["files"].as_object().unwrap().len(), records + 1);
    assert_eq!(m["seeds"]["root"], 1);
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    ok(gfmid(&["simulate", "--config", "c.toml", "--out", "a"], dir.path()));
    ok(gfmid(&["simulate", "--config", "c.toml", "--out", "b", "--threads", "1"], dir.path()));
    let (a, b) = (tree(&dir.path().join("a")), tree(&dir.path().join("b")));
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn manifest_lists_split_counts() {
    let mut text = String::from("seed = 4\n[plant]\nkind = \"droop\"\n");
    for k in 0..10 {
        text.push_str(&format!(
            "[[scenarios]]\nname = \"s{k}\"\nclass = \"magnitude-steps\"\nduration = 0.5\nseed = {k}\nnetwork = {{ kind = \"stiff-bus\" }}\nevents = [{{ t = 0.2, kind = \"slack-magnitude\", value = 1.02 }}]\n"
        ));
    }
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), text).unwrap();
    ok(gfmid(&["simulate", "--config", "c.toml", "--out", "d"], dir.path()));
    let m = json(&dir.path().join("d/manifest.json"));
    assert_eq!(m["partitions"]["train"], 7);
    assert_eq!(m["partitions"]["validation"], 2);
    assert_eq!(m["partitions"]["test"], 1);
}

#[test]
fn invalid_config_names_field_and_leaves_nothing() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "seed = 1\n[plant]\nkind = \"droop\"\n[split]\ntrain = 0.9\nvalidation = 0.2\ntest = 0.1\n").unwrap();
    let o = gfmid(&["simulate", "--config", "c.toml", "--out", "d"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("split"), "{}", stderr(&o));
    assert!(!dir.path().join("d").exists());
    assert!(!dir.path().join("d.partial").exists());

    std::fs::write(dir.path().join("c.toml"), "seed = 1\n[plant]\nkind = \"droop\"\nk_x = 2\n").unwrap();
    let o = gfmid(&["simulate", "--config", "c.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("k_x") && stderr(&o).contains("c.toml:"), "{}", stderr(&o));
}

#[test]
fn out_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_gfmid"))
        .args(["simulate", "--config", "c.toml"])
        .current_dir(dir.path())
        .env("GFMID_OUT_DIR", "elsewhere")
        .env("GFMID_THREADS", "1")
        .output()
        .unwrap();
    ok(o);
    assert!(dir.path().join("elsewhere/simulate/manifest.json").is_file());
}

#[test]
fn zero_threads_is_a_usage_error() {
    let o = gfmid(&["--threads", "0", "report", "--run", "nowhere"], fixture());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn identify_writes_model_of_requested_order() {
    let dir = fixture();
    let model = json(&dir.join("ident/model.json"));
    assert_eq!(model["n_ivars"], 1);
    let data_hash = json(&dir.join("ident/manifest.json"))["inputs"]["dataset"].clone();
    assert_eq!(model["provenance"]["data_manifest_hash"], data_hash);
    for f in ["init_model.json", "trace.csv", "report.json"] {
        assert!(dir.join("ident").join(f).is_file(), "{f}");
    }
}

#[test]
fn identify_sweep_writes_one_directory_per_order() {
    let dir = fixture();
    let out = dir.join("sweep-ident");
    ok(gfmid(
        &["identify", "--data", "data", "--sweep", "1..6", "--max-iters", "3", "--out", out.to_str().unwrap()],
        dir,
    ));
    for n in 1..=6 {
        assert!(out.join(format!("order-{n:02}/model.json")).is_file(), "order {n}");
    }
    let sel = json(&out.join("selection.json"));
    assert_eq!(sel["orders"].as_array().unwrap().len(), 6);
    let selected = sel["selected"].as_u64().unwrap();
    assert_eq!(json(&out.join("model.json"))["n_ivars"].as_u64(), Some(selected));
}

#[test]
fn corrupted_csv_exits_2_naming_file_and_line() {
    let src = fixture().join("data");
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    for (rel, bytes) in tree(&src) {
        let p = data.join(rel);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(p, bytes).unwrap();
    }
    let victim = data.join("records/magnitude-00.csv");
    let text = std::fs::read_to_string(&victim).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[11] = "0.01,1.0,not-a-number,0,0";
    std::fs::write(&victim, lines.join("\n") + "\n").unwrap();
    let o = gfmid(&["identify", "--data", "data", "--n-ivars", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("magnitude-00.csv:12"), "{err}");
}

#[test]
fn evaluate_reports_one_row_per_test_record() {
    let dir = fixture();
    let out = dir.join("eval-test");
    ok(gfmid(
        &["evaluate", "--model", "ident/model.json", "--data", "data", "--partition", "test", "--out", out.to_str().unwrap()],
        dir,
    ));
    let index = json(&dir.join("data/dataset.json"));
    let tests = index["records"].as_array().unwrap().iter().filter(|r| r["partition"] == "test").count();
    let report = json(&out.join("report.json"));
    assert_eq!(report["records"].as_array().unwrap().len(), tests);
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), tests + 1);
    assert_eq!(std::fs::read_dir(out.join("overlays")).unwrap().count(), tests);
}

#[test]
fn unknown_or_empty_partition_exits_2() {
    let dir = fixture();
    for p in ["holdout", "ood"] {
        let o = gfmid(&["evaluate", "--model", "ident/model.json", "--data", "data", "--partition", p, "--out", "never"], dir);
        assert_eq!(o.status.code(), Some(2), "{p}: {}", stderr(&o));
        assert!(stderr(&o).contains("partition"));
    }
}

#[test]
fn closed_loop_load_step_writes_both_trajectories() {
    let dir = fixture();
    let out = dir.join("cl");
    ok(gfmid(
        &["closed-loop", "--model", "ident/model.json", "--scenario", "load-step", "--config", "small.toml", "--out", out.to_str().unwrap()],
        dir,
    ));
    assert!(out.join("model.csv").is_file() && out.join("plant.csv").is_file());
    let s = json(&out.join("summary.json"));
    assert!(s["left_band_at"].is_null());
    assert!(s["max_abs_magnitude_error"].as_f64().unwrap() < 1e-3, "{s}");
}

#[test]
fn closed_loop_stiff_bus_hold_has_no_error() {
    let dir = fixture();
    let out = dir.join("cl-stiff");
    ok(gfmid(
        &["closed-loop", "--model", "ident/model.json", "--scenario", "stiff-bus", "--plant", "droop", "--duration", "1", "--out", out.to_str().unwrap()],
        dir,
    ));
    let s = json(&out.join("summary.json"));
    assert!(s["max_abs_magnitude_error"].as_f64().unwrap() < 1e-9, "{s}");
}

#[test]
fn closed_loop_reports_divergence_of_unstable_model() {
    let dir = tempfile::tempdir().unwrap();
    let model = r#"{
  "n_ivars": 1,
  "A": [[5.0]],
  "B": [[1.0, 0.0, 0.0]],
  "C": {"re": [1.0], "im": [0.0]},
  "D": {"re": [0.0, 0.0, 0.0], "im": [0.0, 0.0, 0.0]},
  "setpoints": {"p": 0.5, "q": 0.0, "v": 1.0},
  "provenance": {"training_seed": 0}
}"#;
    std::fs::write(dir.path().join("m.json"), model).unwrap();
    let o = ok(gfmid(&["closed-loop", "--model", "m.json", "--out", "cl"], dir.path()));
    assert!(String::from_utf8_lossy(&o.stdout).contains("left the |v| band"));
    let t = json(&dir.path().join("cl/summary.json"))["left_band_at"].as_f64().unwrap();
    // The load step is at 1 s.
    assert!(t > 1.0 && t < 8.0, "{t}");
}

#[test]
fn report_renders_markdown_and_charts() {
    let dir = fixture();
    ok(gfmid(&["evaluate", "--model", "ident/model.json", "--data", "data", "--out", "eval-for-report"], dir));
    ok(gfmid(&["report", "--run", "eval-for-report", "--out", "rep"], dir));
    let md = std::fs::read_to_string(dir.join("rep/report.md")).unwrap();
    assert!(md.contains("## evaluate"));
    assert!(std::fs::read_dir(dir.join("rep/charts")).unwrap().count() > 0);
}

#[test]
fn missing_subcommand_arguments_exit_2() {
    let o = gfmid(&["identify", "--data", "x"], fixture());
    assert_eq!(o.status.code(), Some(2));
}
