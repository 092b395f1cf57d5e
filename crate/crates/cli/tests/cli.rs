use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lanenas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lanenas"))
        .args(args)
        .env_remove("LANENAS_WORKERS")
        .output()
        .unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn parse_arch_reports_fields() {
    let v = json(&lanenas(&["--json", "parse-arch", "BB_64_13_[5,9]_[7,12]"]));
    assert_eq!(v["num_blocks"], 13);
    assert_eq!(v["stages"], 3);
    assert_eq!(v["downsample_at"], serde_json::json!([5, 9]));
}

#[test]
fn exit_codes() {
    assert_eq!(lanenas(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(lanenas(&["cost"]).status.code(), Some(1));
    let bad = lanenas(&["parse-arch", "BB_64_13_[9,5]_[7,12]"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(!bad.stderr.is_empty());
    assert_eq!(lanenas(&["cost", "BB_64_13_[5,9]_[7,12]", "--heads", "7"]).status.code(), Some(2));
    assert_eq!(lanenas(&["pareto-export", "/nonexistent/archive.json"]).status.code(), Some(2));
}

#[test]
fn cost_scales_with_resolution() {
    let small = json(&lanenas(&["--json", "cost", "RB_48_12_[4,8]_[5,9]", "--heads", "2,3", "--fusion", "1+3>2"]));
    let large = json(&lanenas(&[
        "--json", "cost", "RB_48_12_[4,8]_[5,9]", "--heads", "2,3", "--fusion", "1+3>2", "--resolution", "1024x576",
    ]));
    assert_eq!(4 * small["total_flops"].as_u64().unwrap(), large["total_flops"].as_u64().unwrap());
    assert_eq!(small["total_params"], large["total_params"]);
}

#[test]
fn space_size_reports_assumptions() {
    let v = json(&lanenas(&["--json", "space-size"]));
    let n: f64 = v["headline_backbone"].as_str().unwrap().parse().unwrap();
    assert!(n > 5e10 && n < 5e14);
    assert!(!v["assumptions"].as_array().unwrap().is_empty());
}

fn write_lines(path: &Path, lanes: &[&[(f64, f64)]]) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    let text: String = lanes
        .iter()
        .map(|l| {
            let pts: Vec<String> = l.iter().map(|(x, y)| format!("{x} {y}")).collect();
            pts.join(" ") + "\n"
        })
        .collect();
    fs::write(path, text).unwrap();
}

#[test]
fn eval_f1_over_directories() {
    let dir = tempfile::tempdir().unwrap();
    let (gt, pred) = (dir.path().join("gt"), dir.path().join("pred"));
    let left: &[(f64, f64)] = &[(400.0, 580.0), (600.0, 300.0)];
    let right: &[(f64, f64)] = &[(1200.0, 580.0), (1000.0, 300.0)];
    let far: &[(f64, f64)] = &[(100.0, 580.0), (150.0, 300.0)];
    write_lines(&gt.join("a/0001.lines.txt"), &[left, right]);
    write_lines(&pred.join("a/0001.lines.txt"), &[left, far]);
    write_lines(&gt.join("b/0002.lines.txt"), &[left]);
    write_lines(&pred.join("b/0002.lines.txt"), &[left]);

    let v = json(&lanenas(&["--json", "eval-f1", "--pred", p(&pred), "--gt", p(&gt)]));
    let r = &v["report"];
    assert_eq!((r["tp"].as_u64(), r["fp"].as_u64(), r["fn"].as_u64()), (Some(2), Some(1), Some(1)));
    assert!((r["f1"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);

    let v = json(&lanenas(&["--json", "eval-tusimple", "--pred", p(&pred), "--gt", p(&gt)]));
    let acc = v["accuracy"].as_f64().unwrap();
    assert!(acc > 0.0 && acc < 1.0);

    fs::remove_file(pred.join("b/0002.lines.txt")).unwrap();
    let out = lanenas(&["eval-f1", "--pred", p(&pred), "--gt", p(&gt)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("0002.lines.txt"));
}

#[test]
fn synth_corpus_blend_and_tune() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    json(&lanenas(&["--json", "gen-synth", "--out", p(&corpus), "--num-scenes", "12", "--seed", "3"]));
    let proposals = corpus.join("proposals.jsonl");
    let gt = corpus.join("gt.jsonl");
    let common = [
        "--json", "blend", "--proposals", p(&proposals), "--gt", p(&gt), "--score-threshold", "0.2",
        "--group-distance", "80",
    ];
    let plain = json(&lanenas(&[&common[..], &["--plain-nms"]].concat()));
    let blended = json(&lanenas(&[&common[..], &["--locality-sigma", "60"]].concat()));
    let (pf, bf) = (
        plain["metrics"]["f1"].as_f64().unwrap(),
        blended["metrics"]["f1"].as_f64().unwrap(),
    );
    assert!(bf > pf, "blended {bf} plain {pf}");

    let params = dir.path().join("params.json");
    let preds = dir.path().join("pred.jsonl");
    let tuned = json(&lanenas(&[
        "--json", "blend", "--proposals", p(&proposals), "--gt", p(&gt), "--tune", "15", "--params-out", p(&params),
        "--out", p(&preds),
    ]));
    assert!(tuned["tuned"]["f1"].as_f64().unwrap() >= tuned["tuned"]["default_f1"].as_f64().unwrap());
    assert_eq!(fs::read_to_string(&preds).unwrap().lines().count(), 12);
    let replay = json(&lanenas(&[
        "--json", "blend", "--proposals", p(&proposals), "--gt", p(&gt), "--params", p(&params),
    ]));
    assert_eq!(replay["metrics"]["f1"], tuned["tuned"]["f1"]);

    let out = lanenas(&["blend", "--proposals", p(&proposals), "--tune", "3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn search_resume_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let first = json(&lanenas(&["--json", "search", "--space", "reduced", "--budget", "40", "--out", p(&out)]));
    assert_eq!(first["evaluations"], 56);
    for f in ["history.jsonl", "archive.json", "front.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let resumed = json(&lanenas(&[
        "--json", "search", "--space", "reduced", "--budget", "60", "--out", p(&out), "--resume",
    ]));
    assert_eq!(resumed["resumed_from"], 56);
    assert_eq!(resumed["evaluations"], 76);

    let exported = dir.path().join("front.csv");
    lanenas(&["pareto-export", p(&out.join("archive.json")), "--out", p(&exported)]);
    assert_eq!(fs::read(&exported).unwrap(), fs::read(out.join("front.csv")).unwrap());
    let v = json(&lanenas(&["--json", "pareto-export", p(&out.join("archive.json"))]));
    assert_eq!(v["front"].as_array().unwrap().len(), resumed["front_size"].as_u64().unwrap() as usize);
}

#[test]
fn external_evaluator_through_cli() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let v = json(&lanenas(&[
        "--json",
        "search",
        "--space",
        "reduced",
        "--budget",
        "4",
        "--initial-population",
        "4",
        "--evaluator",
        r#"exec:echo '{"score": 0.5}'"#,
        "--out",
        p(&out),
    ]));
    assert_eq!(v["evaluations"], 8);
    assert_eq!(v["failed"], 0);
    assert_eq!(v["evaluator_cost_class"], "expensive");
    let bad = lanenas(&["search", "--evaluator", "python:foo", "--out", p(&out)]);
    assert_eq!(bad.status.code(), Some(2));
}
