use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ahue(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ahue")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = ahue(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

/// Small activation dataset plus an exact and a tree index.
fn fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "generate", "--kind", "activations", "--per-class", "3", "--seed", "5", "--out", "act"]);
    ok(d, &["index", "build", "--manifest", "act/manifest.jsonl", "--out", "exact.ahix"]);
    ok(d, &["index", "build", "--manifest", "act/manifest.jsonl", "--mode", "tree", "--trees", "4", "--out", "tree.ahix"]);
    dir
}

#[test]
fn gradcheck_passes_and_reports_error() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["loss", "gradcheck", "--classes", "5", "--trials", "200", "--seed", "1", "--out", "g.json"]);
    let report = json(dir.path().join("g.json"));
    assert!(report["max_rel_error"].as_f64().unwrap() < 1e-5);
    assert_eq!(report["passed"], true);
    let run = json(dir.path().join("g.json.run.json"));
    assert_eq!(run["command"], "loss gradcheck");
    assert_eq!(run["seeds"][0], 1);
}

#[test]
fn failing_gradcheck_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // A huge step makes central differences inaccurate.
    let out = ahue(dir.path(), &["loss", "gradcheck", "--step", "0.5", "--out", "g.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(dir.path().join("g.json"))["passed"], false);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ahue(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(ahue(dir.path(), &["loss", "gradcheck"]).status.code(), Some(2));
    assert_eq!(ahue(dir.path(), &["train", "--loss", "softmax", "--out", "x"]).status.code(), Some(2));
    let out = ahue(dir.path(), &["classify", "--index", "a", "--query", "b", "--leave-one-out", "--out", "c"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--image-id"));
}

#[test]
fn help_documents_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["--help"],
        vec!["index", "build", "--help"],
        vec!["classify", "--help"],
        vec!["stats", "angular", "--help"],
        vec!["loss", "gradcheck", "--help"],
        vec!["train", "--help"],
        vec!["synth", "generate", "--help"],
    ] {
        let out = ahue(dir.path(), &args);
        assert_eq!(out.status.code(), Some(0), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    }
    let help = String::from_utf8(ahue(dir.path(), &["classify", "--help"]).stdout).unwrap();
    for flag in ["--index", "--query", "--k", "--epsilon", "--mode", "--leave-one-out", "--image-id", "--out"] {
        assert!(help.contains(flag), "{flag}");
    }
}

#[test]
fn unfrozen_or_missing_index_exits_one() {
    let dir = fixture();
    let d = dir.path();
    ok(d, &["index", "build", "--manifest", "act/manifest.jsonl", "--no-freeze", "--out", "raw.ahix"]);
    let out = ahue(d, &["classify", "--index", "raw.ahix", "--query", "act/img_00000.ahue", "--out", "c.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("NotFrozen"));
    let out = ahue(d, &["classify", "--index", "nope.ahix", "--query", "act/img_00000.ahue", "--out", "c.json"]);
    assert_eq!(out.status.code(), Some(1));
    let out = ahue(d, &["classify", "--index", "exact.ahix", "--mode", "tree", "--query", "act/img_00000.ahue", "--out", "c.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn leave_one_out_changes_matches() {
    let dir = fixture();
    let d = dir.path();
    let q = ["--index", "exact.ahix", "--query", "act/img_00004.ahue"];
    ok(d, &[&["classify"], &q[..], &["--out", "plain.json", "--matches-out", "plain.csv"]].concat());
    ok(d, &[&["classify"], &q[..], &["--image-id", "4", "--leave-one-out", "--out", "loo.json", "--matches-out", "loo.csv"]].concat());
    let image_col = |p: &str| -> Vec<String> {
        std::fs::read_to_string(d.join(p)).unwrap().lines().skip(1).map(|l| l.rsplit(',').next().unwrap().to_string()).collect()
    };
    assert!(image_col("plain.csv").iter().any(|i| i == "4"));
    assert!(image_col("loo.csv").iter().all(|i| i != "4"));
    assert_eq!(json(d.join("plain.json"))["query_pixels"], 49);
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.clone(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

/// Re-run a command from its RunReport with every declared output path
/// redirected, and compare the primary outputs byte for byte.
fn replay(dir: &Path, report: &str, redirect: &[(&str, &str)]) {
    let run = json(dir.join(report));
    let mut argv: Vec<String> = run["argv"].as_array().unwrap().iter().map(|a| a.as_str().unwrap().to_string()).collect();
    for a in argv.iter_mut() {
        if let Some((_, to)) = redirect.iter().find(|(from, _)| a == from) {
            *a = to.to_string();
        }
    }
    argv.extend(["--report".to_string(), "replay.run.json".to_string()]);
    let args: Vec<&str> = argv.iter().map(String::as_str).collect();
    ok(dir, &args);
    // Outputs may name each other (classify records its CSV path), so map
    // the redirected names back before comparing.
    for (from, to) in redirect {
        let (original, replayed) = (std::fs::read(dir.join(from)).unwrap(), std::fs::read(dir.join(to)).unwrap());
        let replayed = match String::from_utf8(replayed) {
            Ok(mut text) => {
                for (f, t) in redirect {
                    text = text.replace(&format!("\"{t}\""), &format!("\"{f}\""));
                }
                text.into_bytes()
            }
            Err(e) => e.into_bytes(),
        };
        assert!(original == replayed, "{report}: {from} differs on replay");
    }
}

#[test]
fn run_reports_replay_to_identical_outputs() {
    let dir = fixture();
    let d = dir.path();
    let inputs = snapshot(&d.join("act"));

    replay(d, "tree.ahix.run.json", &[("tree.ahix", "tree2.ahix")]);
    ok(d, &["classify", "--index", "tree.ahix", "--query", "act/img_00001.ahue", "--matches-out", "m.csv", "--out", "c.json"]);
    replay(d, "c.json.run.json", &[("c.json", "c2.json"), ("m.csv", "m2.csv")]);
    for kind in ["angular", "radtan", "matches"] {
        let out = format!("{kind}.json");
        ok(d, &["stats", kind, "--index", "exact.ahix", "--queries", "act/manifest.jsonl", "--leave-one-out", "--seed", "3", "--out", &out]);
        replay(d, &format!("{out}.run.json"), &[(&out, "again.json")]);
    }
    ok(d, &["stats", "energy", "--queries", "act/manifest.jsonl", "--csv", "e.csv", "--out", "e.json"]);
    replay(d, "e.json.run.json", &[("e.json", "e2.json"), ("e.csv", "e2.csv")]);
    ok(d, &["train", "--per-class", "3", "--epochs", "2", "--folds", "0", "--seed", "4", "--out", "t.json"]);
    replay(d, "t.json.run.json", &[("t.json", "t2.json")]);

    // No command touched its inputs.
    assert_eq!(snapshot(&d.join("act")), inputs);
}

#[test]
fn synth_generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "generate", "--per-class", "2", "--seed", "9", "--out", "a"]);
    ok(d, &["synth", "generate", "--per-class", "2", "--seed", "9", "--out", "b"]);
    let strip = |v: Vec<(PathBuf, Vec<u8>)>| -> Vec<(String, Vec<u8>)> {
        v.into_iter()
            .filter(|(p, _)| !p.ends_with("run.json"))
            .map(|(p, b)| (p.file_name().unwrap().to_string_lossy().into_owned(), b))
            .collect()
    };
    let a = strip(snapshot(&d.join("a")));
    assert_eq!(a.len(), 17);
    assert_eq!(a, strip(snapshot(&d.join("b"))));
}

#[test]
fn comparison_training_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["train", "--loss", "both", "--seeds", "1,2", "--per-class", "3", "--epochs", "1", "--folds", "2", "--csv", "t.csv", "--out", "cmp.json"]);
    let csv = std::fs::read_to_string(d.join("t.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.contains("onehot_hue,2,"));
    assert_eq!(json(d.join("cmp.json"))["runs"].as_array().unwrap().len(), 4);
    let out = ahue(d, &["train", "--loss", "both", "--folds", "0", "--out", "x.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn training_from_a_manifest_directory() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "generate", "--classes", "3", "--per-class", "4", "--out", "imgs"]);
    ok(d, &["train", "--data", "imgs", "--loss", "onehot", "--epochs", "2", "--folds", "2", "--out", "t.json"]);
    let report = json(d.join("t.json"));
    assert_eq!(report["classes"], 3);
    assert_eq!(report["samples"], 12);
    assert_eq!(report["folds"].as_array().unwrap().len(), 2);
}
