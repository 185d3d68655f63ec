use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lmsuppress_core::fixtures::{write_fixture_checkpoint, FixtureOptions};
use lmsuppress_core::model_editor::PROVENANCE_FILE;
use serde_json::Value;

fn lmsuppress(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmsuppress"))
        .args(args)
        .env_remove("LMSUPPRESS_SEED")
        .env_remove("LMSUPPRESS_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn fixture(dir: &Path) -> String {
    write_fixture_checkpoint(dir, &FixtureOptions::default()).unwrap();
    dir.to_str().unwrap().to_string()
}

#[test]
fn scan_summary_and_records() {
    let tmp = tempfile::tempdir().unwrap();
    let model = fixture(&tmp.path().join("m"));
    let records = tmp.path().join("records.json");
    let out = lmsuppress(&[
        "scan",
        "--model",
        &model,
        "--ranges",
        "U+4E00-U+9FFF",
        "--json-records",
        records.to_str().unwrap(),
    ]);
    let v = stdout_json(&out);
    assert_eq!(v["summary"]["total"], 64);
    assert_eq!(v["summary"]["target_count"], 16);
    assert_eq!(v["summary"]["broken_count"], 12);
    assert_eq!(v["summary"]["special_count"], 2);
    assert_eq!(v["config"]["ranges"][0], "U+4E00-U+9FFF");
    let dump: Value = serde_json::from_str(&fs::read_to_string(&records).unwrap()).unwrap();
    assert_eq!(dump["records"].as_array().unwrap().len(), 64);
    assert_eq!(dump["records"][32]["class"], "target");
}

#[test]
fn missing_ranges_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let model = fixture(&tmp.path().join("m"));
    let out = lmsuppress(&["scan", "--model", &model]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");
    assert!(err["error"]["message"]
        .as_str()
        .unwrap()
        .contains("--ranges"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let model = fixture(&tmp.path().join("m"));
    // bad range syntax: config
    assert_eq!(
        lmsuppress(&["scan", "--model", &model, "--ranges", "4E00-9FFF"])
            .status
            .code(),
        Some(2)
    );
    // bad smoothing parameter: config
    assert_eq!(
        lmsuppress(&["curve", "--min-scale", "0"]).status.code(),
        Some(2)
    );
    // unknown flag: usage
    assert_eq!(lmsuppress(&["curve", "--bogus"]).status.code(), Some(2));
    // missing file: io
    assert_eq!(
        lmsuppress(&[
            "scan",
            "--tokenizer",
            "/definitely/missing.json",
            "--ranges",
            "U+4E00-U+9FFF"
        ])
        .status
        .code(),
        Some(3)
    );
    // slice past the head: validation
    assert_eq!(
        lmsuppress(&["slice", "--before", &model, "--start", "60", "--end", "70"])
            .status
            .code(),
        Some(4)
    );
}

#[test]
fn config_file_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(&tmp.path().join("m"));
    let cfg = tmp.path().join("run.json");
    fs::write(
        &cfg,
        r#"{"model_dir": "m", "ranges": ["U+4E00-U+9FFF"], "min_scale": 0.6, "sampling": {"seed": 5, "samples_per_n": 20}}"#,
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let v = stdout_json(&lmsuppress(&["--config", c, "score", "--seed", "9"]));
    assert_eq!(v["config"]["sampling"]["seed"], 9);
    assert_eq!(v["config"]["sampling"]["samples_per_n"], 20);
    assert_eq!(v["config"]["min_scale"], 0.6);
    assert_eq!(v["size"], 64);

    let env = Command::new(env!("CARGO_BIN_EXE_lmsuppress"))
        .args(["--config", c, "score"])
        .env("LMSUPPRESS_SEED", "77")
        .output()
        .unwrap();
    assert_eq!(stdout_json(&env)["config"]["sampling"]["seed"], 77);

    fs::write(&cfg, r#"{"min_scal": 0.6}"#).unwrap();
    assert_eq!(lmsuppress(&["--config", c, "curve"]).status.code(), Some(2));
}

#[test]
fn score_is_deterministic_across_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let model = fixture(&tmp.path().join("m"));
    let mut digests = Vec::new();
    for threads in ["1", "4", "16"] {
        let bin = tmp.path().join(format!("risk{threads}.bin"));
        let v = stdout_json(&lmsuppress(&[
            "--threads",
            threads,
            "score",
            "--model",
            &model,
            "--binary",
            bin.to_str().unwrap(),
        ]));
        digests.push((v["digest"].clone(), fs::read(&bin).unwrap()));
    }
    assert!(digests.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn smooth_dry_run_then_apply_then_refuse() {
    let tmp = tempfile::tempdir().unwrap();
    let model = fixture(&tmp.path().join("m"));
    let out_dir = tmp.path().join("edited");
    let o = out_dir.to_str().unwrap();
    let risk = tmp.path().join("risk.json");

    let dry = stdout_json(&lmsuppress(&[
        "smooth",
        "--model",
        &model,
        "--output",
        o,
        "--ranges",
        "U+4E00-U+9FFF",
        "--dry-run",
    ]));
    assert!(!out_dir.exists());
    assert_eq!(dry["edit"]["dry_run"], true);
    assert!(dry["edit"]["scaled_row_count"].as_u64().unwrap() >= 16);

    let real = stdout_json(&lmsuppress(&[
        "smooth",
        "--model",
        &model,
        "--output",
        o,
        "--ranges",
        "U+4E00-U+9FFF",
        "--save-risk-table",
        risk.to_str().unwrap(),
    ]));
    assert_eq!(real["edit"]["output_digest"], dry["edit"]["output_digest"]);
    assert!(out_dir.join(PROVENANCE_FILE).is_file());

    // editing the edited checkpoint again is refused
    let again = lmsuppress(&[
        "smooth",
        "--model",
        o,
        "--output",
        tmp.path().join("twice").to_str().unwrap(),
        "--ranges",
        "U+4E00-U+9FFF",
        "--risk-table",
        risk.to_str().unwrap(),
    ]);
    assert_eq!(again.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&again.stderr).contains(PROVENANCE_FILE));
}

#[test]
fn smooth_refuses_tied_without_consent() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("tied");
    write_fixture_checkpoint(
        &dir,
        &FixtureOptions {
            tied: true,
            ..Default::default()
        },
    )
    .unwrap();
    let m = dir.to_str().unwrap();
    let out = tmp.path().join("o");
    let args = [
        "smooth",
        "--model",
        m,
        "--output",
        out.to_str().unwrap(),
        "--ranges",
        "U+4E00-U+9FFF",
    ];
    assert_eq!(lmsuppress(&args).status.code(), Some(4));
    let mut with_consent = args.to_vec();
    with_consent.push("--allow-untie");
    let v = stdout_json(&lmsuppress(&with_consent));
    assert_eq!(v["edit"]["untied"], true);
}

#[test]
fn curve_csv() {
    let out = lmsuppress(&["curve", "--steps", "3"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "risk,scale");
    assert_eq!(lines[1], "0,1");
    assert!(lines[2].starts_with("0.5,0.6298186552528"));
    assert_eq!(lines[3], "1,0.5");
}

#[test]
fn metrics_report_and_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("gen.ndjson");
    let mut lines = String::new();
    for i in 0..20 {
        let text = if i == 3 {
            "답은 中 입니다"
        } else {
            "답은 하나입니다"
        };
        lines.push_str(&serde_json::json!({"id": format!("d{i}"), "text": text}).to_string());
        lines.push('\n');
    }
    fs::write(&input, lines).unwrap();
    let csv = tmp.path().join("docs.csv");
    let v = stdout_json(&lmsuppress(&[
        "metrics",
        "--input",
        input.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]));
    assert_eq!(v["report"]["suppression_rate"], 0.95);
    assert_eq!(v["report"]["flagged_docs"], 1);
    let csv_text = fs::read_to_string(&csv).unwrap();
    assert!(csv_text.starts_with("id,ratio,flagged\nd0,0,false\n"));

    let ratio = stdout_json(&lmsuppress(&[
        "metrics",
        "--input",
        input.to_str().unwrap(),
        "--rule",
        "ratio",
        "--threshold",
        "0.5",
    ]));
    assert_eq!(ratio["report"]["suppression_rate"], 1.0);
    assert_eq!(
        lmsuppress(&[
            "metrics",
            "--input",
            input.to_str().unwrap(),
            "--rule",
            "ratio"
        ])
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn slice_csv_against_edit() {
    let tmp = tempfile::tempdir().unwrap();
    let model = fixture(&tmp.path().join("m"));
    let out_dir = tmp.path().join("e");
    let risk = tmp.path().join("risk.json");
    stdout_json(&lmsuppress(&[
        "smooth",
        "--model",
        &model,
        "--output",
        out_dir.to_str().unwrap(),
        "--ranges",
        "U+4E00-U+9FFF",
        "--save-risk-table",
        risk.to_str().unwrap(),
    ]));
    let csv = tmp.path().join("slice.csv");
    let out = lmsuppress(&[
        "slice",
        "--before",
        &model,
        "--after",
        out_dir.to_str().unwrap(),
        "--start",
        "0",
        "--end",
        "64",
        "--risk-table",
        risk.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("token_id,class,risk,scale,stat_before,stat_after")
    );
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        let (before, after): (f64, f64) = (cols[4].parse().unwrap(), cols[5].parse().unwrap());
        match cols[1] {
            "safe" | "special" => assert_eq!(before, after, "{line}"),
            "target" => assert!((after - 0.5 * before).abs() <= 1e-6 * before, "{line}"),
            _ => assert!(after <= before, "{line}"),
        }
    }
}
