mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{pooled_mean_cov, rel_frobenius, to_matrix};
use igam::cli::{parse_json, to_json, RunConfigFile, ToyReport};
use igam::info::InfoAmountTable;
use igam::loss::MarginFile;
use igam::planner::PlanResult;
use igam::stats::StatsFile;
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use tempfile::TempDir;

fn igam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_igam")).args(args).output().unwrap()
}

fn ok_stdout(args: &[&str]) -> String {
    let out = igam(args);
    assert!(
        out.status.success(),
        "igam {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write(dir: &TempDir, name: &str, contents: impl AsRef<[u8]>) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn assert_round_trip<T: Serialize + DeserializeOwned>(text: &str) -> T {
    let value: T = parse_json(text.as_bytes()).unwrap();
    assert_eq!(to_json(&value).unwrap(), text);
    value
}

// (category, vector), all values exact in f32
const RECORDS: [(u32, [f64; 2]); 6] = [
    (0, [1.0, 2.0]),
    (1, [-0.5, 0.25]),
    (0, [3.0, -1.0]),
    (0, [0.5, 0.5]),
    (1, [2.0, 1.5]),
    (1, [-1.25, 4.0]),
];

fn records_csv() -> String {
    let mut s = String::from("category,e0,e1\n");
    for (c, v) in RECORDS {
        s.push_str(&format!("{c},{},{}\n", v[0], v[1]));
    }
    s
}

fn records_bin() -> Vec<u8> {
    let mut out = b"IGAMEMB1".to_vec();
    out.extend_from_slice(&2u32.to_le_bytes());
    out.extend_from_slice(&(RECORDS.len() as u64).to_le_bytes());
    for (c, v) in RECORDS {
        out.extend_from_slice(&c.to_le_bytes());
        for x in v {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

#[test]
fn stats_matches_pooled_oracle() {
    let dir = TempDir::new().unwrap();
    let csv = write(&dir, "e.csv", records_csv());
    let text = ok_stdout(&["stats", "--input", s(&csv), "--queue-len", "2"]);
    let stats: StatsFile = assert_round_trip(&text);
    assert_eq!(stats.p, 2);
    for entry in &stats.categories {
        let pts: Vec<Vec<f64>> = RECORDS
            .iter()
            .filter(|(c, _)| *c == entry.id)
            .map(|(_, v)| v.to_vec())
            .collect();
        let (mean, cov) = pooled_mean_cov(&pts);
        assert_eq!(entry.count, 3);
        let got = DMatrix::from_row_slice(2, 2, &entry.cov_row_major);
        assert!(rel_frobenius(&got, &to_matrix(&cov)) < 1e-10);
        for (got, want) in entry.mean.iter().zip(&mean) {
            assert!((got - want).abs() < 1e-10);
        }
    }
}

#[test]
fn csv_and_binary_give_identical_stats() {
    let dir = TempDir::new().unwrap();
    let csv = write(&dir, "e.csv", records_csv());
    let bin = write(&dir, "e.bin", records_bin());
    let a = ok_stdout(&["stats", "--input", s(&csv), "--queue-len", "4"]);
    let b = ok_stdout(&["stats", "--input", s(&bin), "--queue-len", "4"]);
    assert_eq!(a, b);
    let out = dir.path().join("stats.json");
    ok_stdout(&["stats", "--input", s(&bin), "--format", "bin", "--queue-len", "4", "--out", s(&out)]);
    assert_eq!(std::fs::read_to_string(out).unwrap(), a);
}

#[test]
fn malformed_inputs_exit_with_input_error() {
    let dir = TempDir::new().unwrap();
    let empty = write(&dir, "empty.bin", b"");
    let out = igam(&["stats", "--input", s(&empty)]);
    assert_eq!(out.status.code(), Some(2));

    let mut truncated = records_bin();
    truncated.truncate(truncated.len() - 3);
    let t = write(&dir, "t.bin", truncated);
    let out = igam(&["stats", "--input", s(&t)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte"));

    let missing = dir.path().join("nope.csv");
    assert_eq!(igam(&["stats", "--input", s(&missing)]).status.code(), Some(2));
}

#[test]
fn info_closed_forms() {
    let dir = TempDir::new().unwrap();
    let mut identity = vec![0.0; 16];
    for k in 0..4 {
        identity[k * 5] = 1.0;
    }
    let stats = json!({
        "p": 4,
        "categories": [
            { "id": 3, "count": 100, "mean": [0.0, 0.0, 0.0, 0.0], "cov_row_major": identity },
            { "id": 7, "count": 1, "mean": [1.0, 2.0, 3.0, 4.0], "cov_row_major": vec![0.0; 16] }
        ]
    });
    let path = write(&dir, "stats.json", stats.to_string());
    let text = ok_stdout(&["info", "--input", s(&path), "--epoch", "5"]);
    let table: InfoAmountTable = assert_round_trip(&text);
    assert_eq!(table.epoch, 5);
    assert!((table.info[&3] - 2.0).abs() < 1e-12);
    // m = 1, p = 4: floor (1 - 2)^2 = 1
    assert!((table.info[&7] - 2.0).abs() < 1e-12);

    let single = json!({
        "p": 3,
        "categories": [{ "id": 0, "count": 1, "mean": [0.0, 0.0, 0.0], "cov_row_major": vec![0.0; 9] }]
    });
    let path = write(&dir, "single.json", single.to_string());
    let table: InfoAmountTable = parse_json(ok_stdout(&["info", "--input", s(&path)]).as_bytes()).unwrap();
    let floor = (1.0 - 3f64.sqrt()).powi(2);
    assert!((table.info[&0] - 1.5 * (1.0 + floor).log2()).abs() < 1e-12);
}

#[test]
fn stats_output_feeds_info() {
    let dir = TempDir::new().unwrap();
    let csv = write(&dir, "e.csv", records_csv());
    let stats = dir.path().join("stats.json");
    ok_stdout(&["stats", "--input", s(&csv), "--queue-len", "3", "--out", s(&stats)]);
    let table: InfoAmountTable = assert_round_trip(&ok_stdout(&["info", "--input", s(&stats)]));
    assert_eq!(table.info.len(), 2);
}

fn normalised(info: [f64; 2], mean_ibar: bool) -> [f64; 2] {
    let total = info[0] + info[1];
    let ibar = if mean_ibar { total / 2.0 } else { total };
    let x = info.map(|v| v / (ibar * 2f64.sqrt()));
    let den = x[0].exp() + x[1].exp();
    x.map(|v| v.exp().exp() / den * 2.0 + 1.0)
}

#[test]
fn margins_from_tables() {
    let dir = TempDir::new().unwrap();
    let uniform = write(&dir, "u.json", json!({ "epoch": 1, "info": { "0": 3.0, "1": 3.0, "2": 3.0 } }).to_string());
    let text = ok_stdout(&["margins", "--input", s(&uniform)]);
    let m: MarginFile = assert_round_trip(&text);
    assert_eq!(m.classes, 3);
    assert!(m.margins_row_major.iter().all(|&v| v == 0.0));

    // find I_1 / I_0 so that I'_0 / I'_1 = e
    let gap = |r: f64| {
        let n = normalised([1.0, r], true);
        (n[0] / n[1]).ln() - 1.0
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    assert!(gap(lo) > 0.0 && gap(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) > 0.0 { lo = mid } else { hi = mid }
    }
    let r = 0.5 * (lo + hi);
    let table = write(&dir, "e.json", json!({ "epoch": 0, "info": { "0": 1.0, "1": r } }).to_string());
    let m: MarginFile = parse_json(ok_stdout(&["margins", "--input", s(&table), "--ibar", "mean"]).as_bytes()).unwrap();
    assert!((m.margins_row_major[1] - 1.0 / std::f64::consts::PI).abs() < 1e-9);
    assert_eq!(m.margins_row_major[2], 0.0);
    assert_eq!(m.margins_row_major[0], 0.0);
    assert_eq!(m.margins_row_major[3], 0.0);

    let signed: MarginFile = parse_json(
        ok_stdout(&["margins", "--input", s(&table), "--ibar", "mean", "--margin-variant", "signed"]).as_bytes(),
    )
    .unwrap();
    assert_eq!(signed.margins_row_major[1], m.margins_row_major[1]);
    assert!((signed.margins_row_major[2] + 1.0 / std::f64::consts::PI).abs() < 1e-9);

    let single: MarginFile = parse_json(
        ok_stdout(&["margins", "--input", s(&table), "--ibar", "mean", "--info-variant", "softmax-single-exp"]).as_bytes(),
    )
    .unwrap();
    // single exponential: ln(I'_0 - 1) - ln(I'_1 - 1) = x_0 - x_1
    assert!(single.margins_row_major[1] > 0.0 && single.margins_row_major[1] < m.margins_row_major[1]);
    assert_eq!(single.margins_row_major[2], 0.0);

    let bad = write(&dir, "bad.json", json!({ "epoch": 0, "info": { "0": -1.0, "1": 2.0 } }).to_string());
    assert_eq!(igam(&["margins", "--input", s(&bad)]).status.code(), Some(2));
}

#[test]
fn loss_eval_commands() {
    let dir = TempDir::new().unwrap();
    let features = write(&dir, "f.csv", "category,e0,e1\n0,1,0\n1,0,1\n");
    let weights = write(
        &dir,
        "w.json",
        json!({ "p": 2, "C": 2, "weights_row_major": [1.0, 0.0, 0.0, 1.0] }).to_string(),
    );
    let margins = write(&dir, "m.json", json!({ "C": 2, "margins_row_major": [0.0, 0.0, 0.0, 0.0] }).to_string());
    let run = |extra: &[&str]| -> serde_json::Value {
        let mut args = vec!["loss-eval", "--features", s(&features), "--weights", s(&weights)];
        args.extend_from_slice(extra);
        serde_json::from_str(&ok_stdout(&args)).unwrap()
    };
    let igam_zero = run(&["--margins", s(&margins), "--scale", "2"]);
    let normface = run(&["--loss", "normface", "--scale", "2"]);
    assert_eq!(igam_zero["mean_loss"], normface["mean_loss"]);
    let want = (1.0 + (-2.0f64).exp()).ln();
    assert!((normface["mean_loss"].as_f64().unwrap() - want).abs() < 1e-14);
    let ce = run(&["--loss", "ce"]);
    assert!((ce["mean_loss"].as_f64().unwrap() - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-14);
    let out = igam(&["loss-eval", "--features", s(&features), "--weights", s(&weights)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn plan_reproduces_worked_examples() {
    let text = ok_stdout(&["plan", "--instances", "55800", "--dim", "128", "--classes", "20"]);
    let r: PlanResult = assert_round_trip(&text);
    assert_eq!(r.d_star, 11517);
    assert!((r.savings_percent - 56.44).abs() < 0.1);
    assert!((r.mb_original - 27.25).abs() < 0.01);
    assert!((r.mb_new - 11.87).abs() < 0.01);

    let r: PlanResult = parse_json(
        ok_stdout(&["plan", "--instances", "605638", "--dim", "128", "--classes", "80", "--mode", "grid"]).as_bytes(),
    )
    .unwrap();
    assert_eq!(r.d_star, 68182);
    assert!((r.savings_percent - 73.52).abs() < 0.1);
    assert!((r.mb_original - 295.72).abs() < 0.01);
    assert!((r.mb_new - 78.29).abs() < 0.01);

    let exact: PlanResult = parse_json(
        ok_stdout(&["plan", "--instances", "605638", "--dim", "128", "--classes", "80", "--mode", "exact"]).as_bytes(),
    )
    .unwrap();
    assert!(exact.ratio <= r.ratio);
    assert_eq!(igam(&["plan", "--instances", "0", "--dim", "1", "--classes", "1"]).status.code(), Some(2));
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn shortened(dir: &TempDir, name: &str, epochs: usize, seeds: Option<Vec<u64>>) -> PathBuf {
    let text = std::fs::read_to_string(bundled(name)).unwrap();
    let mut cfg: RunConfigFile = parse_json(text.as_bytes()).unwrap();
    cfg.train.epochs = epochs;
    if seeds.is_some() {
        cfg.seeds = seeds;
    }
    write(dir, name, to_json(&cfg).unwrap())
}

#[test]
fn toy_equal_spread_has_near_zero_margins() {
    let dir = TempDir::new().unwrap();
    let cfg = shortened(&dir, "equal-spread.json", 2, None);
    let text = ok_stdout(&["toy", "run", "--config", s(&cfg)]);
    let report: ToyReport = assert_round_trip(&text);
    assert_eq!(report.runs.len(), 1);
    assert!(report.runs[0].epochs.last().unwrap().max_margin < 0.02);
}

#[test]
fn toy_heterogeneous_sweep_reports_every_loss() {
    let dir = TempDir::new().unwrap();
    let full: RunConfigFile = parse_json(std::fs::read(bundled("heterogeneous.json")).unwrap().as_slice()).unwrap();
    assert_eq!(full.seeds.as_deref(), Some(&[0, 1, 2, 3, 4][..]));
    assert_eq!(full.train.epochs, 30);

    let cfg = shortened(&dir, "heterogeneous.json", 2, Some(vec![0, 1]));
    let report_path = dir.path().join("report.json");
    ok_stdout(&["toy", "run", "--config", s(&cfg), "--out", s(&report_path)]);
    let report_text = std::fs::read_to_string(&report_path).unwrap();
    let report: ToyReport = assert_round_trip(&report_text);
    assert_eq!(report.runs.len(), 6);

    let summary: serde_json::Value = serde_json::from_str(&ok_stdout(&["toy", "report", "--input", s(&report_path)])).unwrap();
    let rows = summary.as_array().unwrap();
    for loss in ["ce", "normface", "igam"] {
        let n = rows.iter().filter(|r| r["loss"] == loss && r["bias_variance"].is_f64()).count();
        assert_eq!(n, 2, "{loss}");
    }
    let csv = ok_stdout(&["toy", "report", "--input", s(&report_path), "--format", "csv"]);
    assert!(csv.starts_with("loss,seed,epoch,bias_variance"));
    assert_eq!(csv.lines().count(), 7);

    let again = ok_stdout(&["toy", "run", "--config", s(&cfg)]);
    assert_eq!(again, report_text);
}

#[test]
fn toy_seed_override() {
    let dir = TempDir::new().unwrap();
    let cfg = shortened(&dir, "equal-spread.json", 1, None);
    let a: ToyReport = parse_json(ok_stdout(&["toy", "run", "--config", s(&cfg), "--seed", "5"]).as_bytes()).unwrap();
    assert_eq!(a.runs[0].seed, 5);
}

#[test]
fn invalid_config_names_field_path() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "bad.json", json!({ "train": { "epochs": 3, "learning_rate": 0.1 } }).to_string());
    let out = igam(&["toy", "run", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train"), "{err}");
    assert!(err.contains("learning_rate"), "{err}");

    let cfg = write(&dir, "bad2.json", json!({ "dataset": { "classes": "ten" } }).to_string());
    let out = igam(&["toy", "run", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dataset.classes"));
}
