use std::path::Path;
use std::process::{Command, Output};

use catn_core::pipeline::RunConfig;
use catn_core::scene::to_canonical_json;
use catn_core::transformer::ModelConfig;

fn tiny_config() -> RunConfig {
    RunConfig {
        model: ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_enc: 1,
            n_dec: 1,
            n_q: 8,
            ffn_dim: 16,
            k_obj: 6,
            k_verb: 4,
            d_word: 4,
        },
        ..RunConfig::default()
    }
}

fn catn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_catn"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), to_canonical_json(&tiny_config()).unwrap()).unwrap();
    ok(catn(
        dir.path(),
        &[
            "--config",
            "cfg.json",
            "synth",
            "--table-out",
            "table.json",
            "--model-out",
            "model.json",
            "--out",
            "scene.json",
        ],
    ));
    dir
}

#[test]
fn pipeline_subcommands_chain() {
    let dir = setup();
    let d = dir.path();
    let priors = ok(catn(d, &["--config", "cfg.json", "priors", "--scene", "scene.json"]));
    assert!(priors.contains("background"));

    ok(catn(
        d,
        &[
            "--config",
            "cfg.json",
            "forward",
            "--scene",
            "scene.json",
            "--table",
            "table.json",
            "--model",
            "model.json",
            "--out",
            "fwd.json",
        ],
    ));
    let m = ok(catn(
        d,
        &[
            "--config",
            "cfg.json",
            "match",
            "--pred",
            "fwd.json",
            "--gt",
            "scene.json",
        ],
    ));
    let report: serde_json::Value = serde_json::from_str(&m).unwrap();
    assert_eq!(report["pairs"].as_array().unwrap().len(), 4);

    ok(catn(
        d,
        &[
            "--config",
            "cfg.json",
            "run",
            "--scene",
            "scene.json",
            "--table",
            "table.json",
            "--out",
            "pred.json",
            "--timings",
            "t.json",
        ],
    ));
    assert!(d.join("t.json").exists());
    let eval = ok(catn(d, &["eval", "--pred", "pred.json", "--gt", "scene.json"]));
    let result: serde_json::Value = serde_json::from_str(&eval).unwrap();
    assert!(result["map_full"].as_f64().unwrap() >= 0.0);
}

#[test]
fn seed_flag_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let a = ok(catn(dir.path(), &["--seed", "1", "synth"]));
    let b = ok(catn(dir.path(), &["--seed", "1", "synth"]));
    let c = ok(catn(dir.path(), &["--seed", "2", "synth"]));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn nms_formats() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let t = r#"[
      {"human_box": [0,0,1,1], "object_box": [0,0,1,1], "object_category": 1, "verb": 0, "score": 0.9},
      {"human_box": [0,0,1,1], "object_box": [0,0,1,0.5], "object_category": 1, "verb": 0, "score": 0.8}
    ]"#;
    std::fs::write(d.join("t.json"), t).unwrap();
    let hard = ok(catn(
        d,
        &["nms", "--input", "t.json", "--mode", "hard", "--t-iou", "0.4"],
    ));
    let v: Vec<serde_json::Value> = serde_json::from_str(&hard).unwrap();
    assert_eq!(v.len(), 1);
    let csv = ok(catn(
        d,
        &[
            "--format", "csv", "nms", "--input", "t.json", "--mode", "soft", "--t-iou", "0.4",
        ],
    ));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn sweep_csv_has_row_per_value() {
    let dir = setup();
    let out = ok(catn(
        dir.path(),
        &[
            "--config",
            "cfg.json",
            "--format",
            "csv",
            "sweep",
            "--param",
            "t-det",
            "--values",
            "0.1,0.5,0.9",
            "--scenes",
            "3",
        ],
    ));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("t_det,0.1,"));
}

#[test]
fn exit_codes() {
    let dir = setup();
    let d = dir.path();
    // validation: unknown field
    std::fs::write(d.join("bad.json"), r#"{"t_det": 0.2, "bogus": 1}"#).unwrap();
    assert_eq!(catn(d, &["--config", "bad.json", "synth"]).status.code(), Some(2));
    // validation: out-of-range threshold
    std::fs::write(d.join("bad2.json"), r#"{"t_det": 1.5}"#).unwrap();
    assert_eq!(catn(d, &["--config", "bad2.json", "synth"]).status.code(), Some(2));
    // io: missing file
    assert_eq!(
        catn(d, &["eval", "--pred", "nope.json", "--gt", "scene.json"])
            .status
            .code(),
        Some(1)
    );
    // infeasible: more ground truths than queries
    ok(catn(
        d,
        &["--config", "cfg.json", "synth", "--n-gt", "9", "--out", "crowd.json"],
    ));
    ok(catn(
        d,
        &[
            "--config",
            "cfg.json",
            "forward",
            "--scene",
            "scene.json",
            "--table",
            "table.json",
            "--out",
            "fwd.json",
        ],
    ));
    assert_eq!(
        catn(
            d,
            &[
                "--config",
                "cfg.json",
                "match",
                "--pred",
                "fwd.json",
                "--gt",
                "crowd.json"
            ]
        )
        .status
        .code(),
        Some(3)
    );
    assert_eq!(
        catn(
            d,
            &[
                "--config",
                "cfg.json",
                "run",
                "--scene",
                "crowd.json",
                "--table",
                "table.json"
            ]
        )
        .status
        .code(),
        Some(3)
    );
}
