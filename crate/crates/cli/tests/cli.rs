use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn soh(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_soh")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "soh {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Every file under `a` exists under `b` with the same bytes, and vice versa.
fn same_tree(a: &Path, b: &Path) {
    let list = |root: &Path| {
        let mut v: Vec<PathBuf> = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(d).unwrap() {
                let e = e.unwrap().path();
                if e.is_dir() {
                    stack.push(e);
                } else {
                    v.push(e.strip_prefix(root).unwrap().to_path_buf());
                }
            }
        }
        v.sort();
        v
    };
    let (fa, fb) = (list(a), list(b));
    assert_eq!(fa, fb);
    for f in fa {
        assert!(fs::read(a.join(&f)).unwrap() == fs::read(b.join(&f)).unwrap(), "{} differs", f.display());
    }
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        soh(&["generate", "--out", p(&root.join("fleet")), "--cells", "2", "--max-cycles", "50", "--cycle-stride", "2"]);
        soh(&["preprocess", "--out", p(&root.join("ds")), "--fleet", p(&root.join("fleet"))]);
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn train(&self, out: &str) {
        soh(&["train", "--out", p(&self.path(out)), "--data", p(&self.path("ds")), "--epochs", "8", "--patience", "3"]);
    }
}

#[test]
fn generate_writes_one_csv_per_cell_and_a_manifest() {
    let f = Fixture::new();
    let mut names: Vec<String> = fs::read_dir(f.path("fleet"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["cell01.csv", "cell02.csv", "manifest.json", "run.json"]);
    let run = json(f.path("fleet/run.json"));
    assert_eq!(run["command"], "generate");
    assert_eq!(run["settings"]["cells"], 2);
}

#[test]
fn preprocess_reports_split_counts() {
    let f = Fixture::new();
    let again = f.path("ds2");
    let out = soh(&["preprocess", "--out", p(&again), "--fleet", p(&f.path("fleet"))]);
    let text = String::from_utf8(out.stdout).unwrap();
    for split in ["source_train", "source_val", "source_test", "target_train", "target_test"] {
        assert!(text.contains(split), "{text}");
    }
    let index = json(again.join("dataset.json"));
    assert!(index.is_object());
}

#[test]
fn train_evaluate_transfer_produce_parsable_reports() {
    let f = Fixture::new();
    f.train("m");
    let run = json(f.path("m/run.json"));
    assert!(run["summary"]["source_test"]["rmspe"].as_f64().unwrap() >= 0.0);
    assert!(json(f.path("m/report.json")).is_object());
    assert!(fs::read_to_string(f.path("m/report.csv")).unwrap().starts_with("cell,cycle,y,yhat,err"));

    soh(&["evaluate", "--out", p(&f.path("e")), "--data", p(&f.path("ds")), "--model", p(&f.path("m"))]);
    let e = json(f.path("e/run.json"));
    assert_eq!(e["summary"]["split"], "source_test");
    // the training report and a fresh evaluation of the saved checkpoint agree
    assert_eq!(e["summary"]["metrics"], run["summary"]["source_test"]);

    soh(&[
        "transfer", "--out", p(&f.path("t")), "--data", p(&f.path("ds")), "--model", p(&f.path("m")), "--epochs", "20",
    ]);
    let t = json(f.path("t/run.json"));
    let cells = t["summary"]["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 1);
    assert_eq!(cells[0]["cell"], 2);
    assert_eq!(cells[0]["encoder_unchanged"], true);
    assert_eq!(cells[0]["train_cycles"], serde_json::json!([0, 2, 4, 6]));
    assert!(f.path("t/cell02/model.bin").exists());
}

#[test]
fn every_subcommand_is_byte_deterministic() {
    let f = Fixture::new();
    let fleet2 = f.path("fleet2");
    soh(&["generate", "--out", p(&fleet2), "--cells", "2", "--max-cycles", "50", "--cycle-stride", "2"]);
    same_tree(&f.path("fleet"), &fleet2);

    soh(&["preprocess", "--out", p(&f.path("ds2")), "--fleet", p(&f.path("fleet"))]);
    same_tree(&f.path("ds"), &f.path("ds2"));

    f.train("m1");
    f.train("m2");
    same_tree(&f.path("m1"), &f.path("m2"));

    for out in ["e1", "e2"] {
        soh(&["evaluate", "--out", p(&f.path(out)), "--data", p(&f.path("ds")), "--model", p(&f.path("m1"))]);
    }
    same_tree(&f.path("e1"), &f.path("e2"));

    for out in ["t1", "t2"] {
        soh(&["transfer", "--out", p(&f.path(out)), "--data", p(&f.path("ds")), "--model", p(&f.path("m1")), "--epochs", "10"]);
    }
    same_tree(&f.path("t1"), &f.path("t2"));

    for out in ["s1", "s2"] {
        soh(&[
            "sweep", "--out", p(&f.path(out)), "--fleet", p(&f.path("fleet")), "--kind", "depth", "--grid", "1,2",
            "--repeats", "2", "--epochs", "2",
        ]);
    }
    same_tree(&f.path("s1"), &f.path("s2"));
}

#[test]
fn run_record_reproduces_the_run() {
    let f = Fixture::new();
    f.train("m1");
    let cfg = f.path("m1/run.json");
    soh(&["train", "--out", p(&f.path("m2")), "--data", p(&f.path("ds")), "--config", p(&cfg)]);
    same_tree(&f.path("m1"), &f.path("m2"));
}

#[test]
fn sweep_emits_one_row_per_value_and_repeat() {
    let f = Fixture::new();
    let out = f.path("s");
    soh(&[
        "sweep", "--out", p(&out), "--fleet", p(&f.path("fleet")), "--kind", "ratio", "--grid", "0.5,0.7",
        "--repeats", "3", "--epochs", "2",
    ]);
    let mut rdr = csv_lines(&out.join("sweep_ratio.csv"));
    assert_eq!(rdr.remove(0), "sweep,value,repeat,seed,val_rmspe,test_rmspe,best_epoch,error");
    assert_eq!(rdr.len(), 6);
    assert!(rdr.iter().all(|l| l.starts_with("ratio,") && l.split(',').count() == 8));
    let summary = json(out.join("sweep_ratio_summary.json"));
    assert_eq!(summary["stats"].as_array().unwrap().len(), 2);
}

fn csv_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn bad_input_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["preprocess", "--out", p(dir.path()), "--fleet", "/nonexistent/fleet"],
        vec!["sweep", "--out", p(dir.path()), "--kind", "width"],
        vec!["generate", "--out", p(dir.path()), "--set", "no_such_key=1"],
    ] {
        let out = Command::new(env!("CARGO_BIN_EXE_soh")).args(&args).output().unwrap();
        assert!(!out.status.success(), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    }
}
