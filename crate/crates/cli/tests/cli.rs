use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_volgsc");

fn demo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo_panel.csv")
}

fn volgsc(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("VOLGSC_OUT")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Every artifact named in the manifest exists, hashes as recorded, and parses.
fn check_manifest(dir: &Path, command: &str) -> Value {
    let m = json(&dir.join(format!("{command}.manifest.json")));
    assert_eq!(m["command"], command);
    for a in m["artifacts"].as_array().unwrap() {
        let name = a["path"].as_str().unwrap();
        let bytes = std::fs::read(dir.join(name)).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        if name.ends_with(".json") {
            serde_json::from_str::<Value>(&text).unwrap();
        } else if name.ends_with(".csv") {
            let mut rdr = csv::Reader::from_reader(text.as_bytes());
            let width = rdr.headers().unwrap().len();
            for rec in rdr.records() {
                assert_eq!(rec.unwrap().len(), width, "{name}");
            }
        }
    }
    m
}

#[test]
fn gsc_on_demo_panel_writes_every_result_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let input = demo();
    let o = volgsc(&["gsc", "--input", input.to_str().unwrap(), "--regime", "er_regime", "--bootstrap-reps", "200", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let res = json(&dir.path().join("gsc_result.json"));
    for field in [
        "treated_units",
        "times",
        "t0",
        "att_path",
        "individual_effects",
        "avg_att",
        "counterfactuals",
        "treated_outcomes",
        "model",
        "cv",
        "residualized_sd",
        "inference",
    ] {
        assert!(res.get(field).is_some_and(|v| !v.is_null()), "missing {field}");
    }
    assert_eq!(res["individual_effects"].as_array().unwrap().len(), 3);
    assert_eq!(res["individual_effects"][0].as_array().unwrap().len(), 166);
    let m = check_manifest(dir.path(), "gsc");
    assert_eq!(m["seed"], 0);
    assert_eq!(m["config"]["bootstrap_reps"], 200);
    assert_eq!(m["config"]["covariates"].as_array().unwrap().len(), 3);
    assert_eq!(m["inputs"].as_array().unwrap().len(), 1);
}

#[test]
fn cv_on_demo_panel_selects_two_factors() {
    let dir = tempfile::tempdir().unwrap();
    let input = demo();
    let o = volgsc(&["cv", "--input", input.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(json(&dir.path().join("cv_table.json"))["selected_r"], 2);
    check_manifest(dir.path(), "cv");
}

#[test]
fn config_file_is_read_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("out");
    std::fs::write(
        &cfg,
        format!(
            "input = {:?}\nout = {:?}\nfactors = \"1\"\nbootstrap_reps = 0\nseed = 5\n",
            demo(),
            out
        ),
    )
    .unwrap();
    let o = volgsc(&["gsc", "--config", cfg.to_str().unwrap(), "--factors", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = check_manifest(&out, "gsc");
    assert_eq!(m["config"]["factors"], "2");
    assert_eq!(m["config"]["seed"], 5);
    assert_eq!(json(&out.join("gsc_result.json"))["model"]["r"], 2);
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let input = demo();
    let input = input.to_str().unwrap();
    assert_eq!(volgsc(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(volgsc(&["--help"]).status.code(), Some(0));
    assert_eq!(volgsc(&["gsc", "--input", input, "--bootstrap-reps", "20", "--out", out]).status.code(), Some(1));

    let bad_cfg = dir.path().join("bad.toml");
    std::fs::write(&bad_cfg, "bootstrap = 3\n").unwrap();
    let o = volgsc(&["gsc", "--config", bad_cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bootstrap"));

    let missing = dir.path().join("nope.csv");
    assert_eq!(volgsc(&["gsc", "--input", missing.to_str().unwrap(), "--out", out]).status.code(), Some(2));

    // unit B lacks one month
    let unbalanced = dir.path().join("unbalanced.csv");
    std::fs::write(
        &unbalanced,
        "unit,time,outcome,treatment\nA,2020-01,1,0\nA,2020-02,1,0\nB,2020-01,1,0\n",
    )
    .unwrap();
    let o = volgsc(&["cv", "--input", unbalanced.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unbalanced panel"));

    // every treated unit adopts in the second month: no room for the placebo shift
    let early = dir.path().join("early.csv");
    let mut text = String::from("unit,time,outcome,treatment\n");
    for (u, late) in [("A", false), ("B", false), ("C", true)] {
        for m in 1..=6 {
            let d = u8::from(late && m >= 2);
            text.push_str(&format!("{u},2020-{m:02},{},{d}\n", m as f64 * 0.5));
        }
    }
    std::fs::write(&early, text).unwrap();
    let o = volgsc(&["placebo-time", "--input", early.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn sv_commands_and_report_sections() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let returns = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo_returns.csv");
    let o = volgsc(&[
        "sv-estimate",
        "--input",
        returns.to_str().unwrap(),
        "--iterations",
        "1500",
        "--burn-in",
        "500",
        "--particles",
        "1000",
        "--out",
        out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    check_manifest(dir.path(), "sv-estimate");
    let params = json(&dir.path().join("sv_params.json"));
    assert_eq!(params["kept_draws"], 1000);

    let daily = dir.path().join("sv_daily.csv");
    let agg = dir.path().join("agg");
    let o = volgsc(&["sv-aggregate", "--input", daily.to_str().unwrap(), "--out", agg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let monthly = std::fs::read_to_string(agg.join("monthly.csv")).unwrap();
    assert_eq!(monthly, std::fs::read_to_string(dir.path().join("sv_monthly.csv")).unwrap());

    let o = volgsc(&["report", "--out", out]);
    assert!(o.status.success());
    let report = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
    for section in [
        "## Cross-validation",
        "## Average treatment effect on the treated",
        "## Covariate coefficients",
        "## Per-unit estimates",
        "## In-time placebo",
        "## In-space placebo",
        "## Equivalence test",
        "## Stochastic volatility",
    ] {
        assert!(report.contains(section), "{section}");
    }
    assert_eq!(report.matches("_not run_").count(), 7);
    check_manifest(dir.path(), "report");
}

#[test]
fn simulate_then_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = volgsc(&["simulate", "--seed", "3", "--true-factors", "2", "--out", a.to_str().unwrap()]);
    assert!(o.status.success());
    let o = volgsc(&[
        "rerun",
        "--manifest",
        a.join("simulate.manifest.json").to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(a.join("simulated_panel.csv")).unwrap(),
        std::fs::read(b.join("simulated_panel.csv")).unwrap()
    );
}
