use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use posedisc::training::TrainingLog;

const TINY: &str = "seed = 3
[data]
samples_per_action = 16
image_height = 20
image_width = 20
[train]
init_epochs = 2
finetune_epochs = 1
stage_epochs = 1
joint_epochs = 1
rounds = 2
probe_size = 8
[eval]
k_eval = 4
min_radius = 0.02
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_posedisc"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = run(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    dir
}

fn read(p: PathBuf) -> Vec<u8> {
    fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn train(dir: &Path, method: &str, out: &str) {
    ok(
        &["train", "--config", "tiny.cfg", "--data", "d/dataset.pdd", "--method", method, "--out", out],
        dir,
    );
}

#[test]
fn gen_data_is_reproducible_and_reports_counts() {
    let w = workspace();
    let d = w.path();
    let first = ok(&["gen-data", "--config", "tiny.cfg", "--out", "a"], d);
    ok(&["gen-data", "--config", "tiny.cfg", "--out", "b"], d);
    assert_eq!(read(d.join("a/dataset.pdd")), read(d.join("b/dataset.pdd")));
    assert_eq!(read(d.join("a/config.txt")), read(d.join("b/config.txt")));
    assert!(first.contains("samples = 96"));
    assert!(first.contains("train = 66"), "{first}");
    assert!(first.contains("strong = 33") && first.contains("weak = 33"), "{first}");
    ok(&["gen-data", "--config", "tiny.cfg", "--seed", "4", "--out", "c"], d);
    assert_ne!(read(d.join("a/dataset.pdd")), read(d.join("c/dataset.pdd")));
    let quarter = ok(&["gen-data", "--config", "tiny.cfg", "--split", "25-75", "--out", "q"], d);
    let strong: usize = quarter
        .lines()
        .find_map(|l| l.strip_prefix("strong = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((16..=18).contains(&strong), "{quarter}");
}

#[test]
fn train_and_evaluate_are_byte_identical_across_runs() {
    let w = workspace();
    let d = w.path();
    ok(&["gen-data", "--config", "tiny.cfg", "--out", "d"], d);
    for method in ["fs", "pw", "prob_joint"] {
        train(d, method, &format!("{method}1"));
        train(d, method, &format!("{method}2"));
        for f in ["log.csv", "prediction.ckpt", "config.txt"] {
            assert_eq!(read(d.join(format!("{method}1/{f}"))), read(d.join(format!("{method}2/{f}"))), "{method} {f}");
        }
    }
    for dir in ["e1", "e2"] {
        ok(
            &["evaluate", "--config", "tiny.cfg", "--data", "d/dataset.pdd", "--checkpoint", "prob_joint1/prediction.ckpt", "--out", dir, "--svg"],
            d,
        );
    }
    for f in ["table.csv", "per_joint.csv", "pckh_curve.csv", "per_joint.svg"] {
        assert_eq!(read(d.join(format!("e1/{f}"))), read(d.join(format!("e2/{f}"))), "{f}");
    }
}

#[test]
fn prob_joint_artifacts_and_log_continuity() {
    let w = workspace();
    let d = w.path();
    ok(&["gen-data", "--config", "tiny.cfg", "--out", "d"], d);
    train(d, "prob_joint", "pj");
    for f in ["prediction.ckpt", "conditional.ckpt", "prediction_iterative.ckpt", "conditional_iterative.ckpt", "log.csv"] {
        assert!(d.join("pj").join(f).exists(), "{f}");
    }
    let log = TrainingLog::read(&d.join("pj/log.csv")).unwrap();
    let last_w = log.records.iter().rev().find(|r| r.stage.starts_with("disc_after_w_r")).unwrap();
    let joint0 = log.records.iter().find(|r| r.stage == "joint" && r.epoch == 0).unwrap();
    assert_eq!(
        (joint0.div_ww, joint0.div_tt, joint0.div_wt),
        (last_w.div_ww, last_w.div_tt, last_w.div_wt)
    );
    assert_eq!(last_w.stage, "disc_after_w_r2");
}

#[test]
fn evaluation_flags_and_role_checks() {
    let w = workspace();
    let d = w.path();
    ok(&["gen-data", "--config", "tiny.cfg", "--out", "d"], d);
    train(d, "prob_iterative", "pi");
    let base = ["--config", "tiny.cfg", "--data", "d/dataset.pdd"];
    let eval = |extra: &[&str]| {
        let mut a = vec!["evaluate"];
        a.extend_from_slice(&base);
        a.extend_from_slice(extra);
        run(&a, d)
    };
    let out = eval(&["--checkpoint", "pi/prediction.ckpt", "--tau", "0.2", "--out", "t"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("PCKh@0.2,Head,Sho.,Elb.,Wri.,Hip,Knee,Ank.,Total"));
    let out = eval(&["--checkpoint", "pi/conditional.ckpt", "--out", "c"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("role mismatch"));
    let out = eval(&["--checkpoint", "pi/conditional.ckpt", "--with-actions", "--out", "c"]);
    assert!(out.status.success());
    let out = eval(&["--checkpoint", "pi/prediction.ckpt", "--with-actions", "--out", "c"]);
    assert_eq!(out.status.code(), Some(2));
    let p = ok(
        &["predict", "--config", "tiny.cfg", "--data", "d/dataset.pdd", "--checkpoint", "pi/prediction.ckpt", "--index", "5", "--svg", "--out", "p"],
        d,
    );
    assert_eq!(p.lines().filter(|l| !l.starts_with('#')).count(), 15);
    let svg = fs::read_to_string(d.join("p/samples.svg")).unwrap();
    assert!(svg.contains("stroke=\"green\"") || svg.contains("stroke=\"blue\""));
}

fn radii(svg: &str) -> Vec<f64> {
    svg.split("r=\"")
        .skip(1)
        .map(|s| s[..s.find('"').unwrap()].parse().unwrap())
        .collect()
}

#[test]
fn uncertainty_report_rows_and_radii() {
    let w = workspace();
    let d = w.path();
    ok(&["gen-data", "--config", "tiny.cfg", "--out", "d"], d);
    train(d, "fs", "fs");
    train(d, "prob_iterative", "pi");
    let report = |ck: &str, out: &str| {
        ok(
            &["report-uncertainty", "--config", "tiny.cfg", "--data", "d/dataset.pdd", "--checkpoint", ck, "--svg", "--out", out],
            d,
        )
    };
    let csv = report("fs/prediction.ckpt", "ufs");
    assert_eq!(csv.lines().count(), 1 + 14);
    let fixed = radii(&fs::read_to_string(d.join("ufs/uncertainty.svg")).unwrap());
    assert_eq!(fixed.len(), 14);
    assert!(fixed.iter().all(|&r| (r - 0.02 * 240.0).abs() < 1e-9), "{fixed:?}");
    report("pi/prediction.ckpt", "upi");
    let spread = radii(&fs::read_to_string(d.join("upi/uncertainty.svg")).unwrap());
    assert!(spread.iter().any(|&r| r > 0.02 * 240.0));
}

#[test]
fn exit_codes() {
    let w = workspace();
    let d = w.path();
    assert_eq!(run(&["train", "--data", "missing.pdd", "--out", "x"], d).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"], d).status.code(), Some(1));
    assert_eq!(run(&["gen-data"], d).status.code(), Some(1));
    fs::write(d.join("bad.cfg"), "[train]\nno_such_key = 1\n").unwrap();
    assert_eq!(run(&["gen-data", "--config", "bad.cfg", "--out", "x"], d).status.code(), Some(1));
    assert_eq!(run(&["gen-data", "--split", "1.5", "--out", "x"], d).status.code(), Some(1));
    ok(&["gen-data", "--config", "tiny.cfg", "--out", "d"], d);
    fs::write(d.join("huge.cfg"), format!("{TINY}\n[train]\neta = 1e300\nclip_norm = 1e300\n")).unwrap();
    let out = run(&["train", "--config", "huge.cfg", "--data", "d/dataset.pdd", "--method", "fs", "--out", "h"], d);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
