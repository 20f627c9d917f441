//! Collates the JSON artifacts of earlier runs into `report.md`.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::Value;

use crate::artifacts::{hash_file, ArtifactSet, FileHash};
use crate::fail::{CliResult, Failure};

const NOT_RUN: &str = "_not run_\n";

fn f(v: &Value) -> String {
    match v.as_f64() {
        Some(x) => format!("{x:.4}"),
        None => match v {
            Value::Null => "NA".into(),
            other => other.to_string().trim_matches('"').to_string(),
        },
    }
}

fn load(dir: &Path, name: &str, inputs: &mut Vec<FileHash>) -> CliResult<Option<Value>> {
    let path = dir.join(name);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    let v = serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    inputs.push(hash_file(&path)?);
    Ok(Some(v))
}

fn cv_section(out: &mut String, cv: &Value) {
    out.push_str("| r | sigma2 | IC | PC | MSPE |\n|---|---|---|---|---|\n");
    let selected = cv["selected_r"].as_u64();
    for row in cv["rows"].as_array().into_iter().flatten() {
        let mark = if row["r"].as_u64() == selected { " *" } else { "" };
        let _ = writeln!(
            out,
            "| {}{mark} | {} | {} | {} | {} |",
            row["r"],
            f(&row["sigma2"]),
            f(&row["ic"]),
            f(&row["pc"]),
            f(&row["mspe"])
        );
    }
    let _ = writeln!(out, "\nSelected r = {} (marked *).", cv["selected_r"]);
    for n in cv["notices"].as_array().into_iter().flatten() {
        let _ = writeln!(out, "- {}", f(n));
    }
}

fn att_line(out: &mut String, res: &Value) {
    let inf = &res["inference"];
    let _ = writeln!(out, "| ATT | S.E. | CI lower | CI upper | p-value | r |\n|---|---|---|---|---|---|");
    let _ = writeln!(
        out,
        "| {} | {} | {} | {} | {} | {} |",
        f(&res["avg_att"]),
        f(&inf["se"]),
        f(&inf["ci_lower"]),
        f(&inf["ci_upper"]),
        f(&inf["p_value"]),
        res["model"]["r"]
    );
    if !inf.is_null() {
        let _ = writeln!(
            out,
            "\n{} bootstrap replicates ({} dropped), {} interval at level {}.",
            inf["reps"],
            inf["dropped"],
            f(&inf["scheme"]),
            f(&inf["level"])
        );
    }
}

fn path_table(out: &mut String, res: &Value) {
    let ci = res["inference"]["path"].as_array();
    out.push_str("\n| event time | ATT | units | CI lower | CI upper |\n|---|---|---|---|---|\n");
    for p in res["att_path"].as_array().into_iter().flatten() {
        if p["event_time"].as_i64().is_none_or(|e| e < 0) {
            continue;
        }
        let c = ci.and_then(|c| c.iter().find(|q| q["event_time"] == p["event_time"]));
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} |",
            p["event_time"],
            f(&p["att"]),
            p["n_units"],
            c.map_or("NA".into(), |c| f(&c["ci_lower"])),
            c.map_or("NA".into(), |c| f(&c["ci_upper"]))
        );
    }
}

fn beta_section(out: &mut String, res: &Value) {
    out.push_str("| covariate | estimate | S.E. | CI lower | CI upper | p-value |\n|---|---|---|---|---|---|\n");
    match res["inference"]["beta"].as_array() {
        Some(rows) => {
            for b in rows {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} |",
                    f(&b["name"]),
                    f(&b["estimate"]),
                    f(&b["se"]),
                    f(&b["ci_lower"]),
                    f(&b["ci_upper"]),
                    f(&b["p_value"])
                );
            }
        }
        None => {
            let names = res["model"]["covariate_names"].as_array().cloned().unwrap_or_default();
            let betas = res["model"]["beta"].as_array().cloned().unwrap_or_default();
            for (n, b) in names.iter().zip(&betas) {
                let _ = writeln!(out, "| {} | {} | NA | NA | NA | NA |", f(n), f(b));
            }
        }
    }
}

fn per_unit_section(out: &mut String, pu: &Value) {
    out.push_str("| unit | adoption | r | ATT | S.E. | CI lower | CI upper | p-value |\n|---|---|---|---|---|---|---|---|\n");
    for u in pu["units"].as_array().into_iter().flatten() {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            f(&u["unit"]),
            f(&u["adoption"]),
            u["selected_r"],
            f(&u["avg_att"]),
            f(&u["se"]),
            f(&u["ci_lower"]),
            f(&u["ci_upper"]),
            f(&u["p_value"])
        );
    }
}

fn space_section(out: &mut String, sp: &Value) {
    let _ = writeln!(out, "True ATT = {}.\n", f(&sp["true_att"]));
    out.push_str("| adoption | applicable | placebo >= true | empirical p |\n|---|---|---|---|\n");
    for d in sp["per_date"].as_array().into_iter().flatten() {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} |",
            f(&d["adoption"]),
            d["applicable"],
            d["at_least_true"],
            f(&d["empirical_p"])
        );
    }
    let excluded = sp["excluded"].as_array().map_or(0, Vec::len);
    let _ = writeln!(
        out,
        "\nPooled empirical p = {} ({} runs excluded).",
        f(&sp["empirical_p"]),
        excluded
    );
    for n in sp["notices"].as_array().into_iter().flatten() {
        let _ = writeln!(out, "- {}", f(n));
    }
}

fn equivalence_section(out: &mut String, eq: &Value) {
    let result = &eq["result"];
    let periods = result["periods"].as_array().map_or(&[][..], Vec::as_slice);
    let inside = periods.iter().filter(|p| p["pass"] == Value::Bool(true)).count();
    let _ = writeln!(
        out,
        "Margin {} ({} of {} pre-treatment intervals inside). Verdict: {}.",
        f(&eq["margin"]),
        inside,
        periods.len(),
        f(&result["verdict"])
    );
}

fn sv_section(out: &mut String, sv: &Value) {
    let m = &sv["posterior_mean"];
    let ci = &sv["credible_intervals"];
    let _ = writeln!(
        out,
        "{} returns, {} kept draws, intervals at level {}.\n",
        sv["n_returns"],
        sv["kept_draws"],
        f(&sv["level"])
    );
    out.push_str("| parameter | mean | lower | upper |\n|---|---|---|---|\n");
    for k in ["mu", "phi", "sigma_eta"] {
        let _ = writeln!(out, "| {k} | {} | {} | {} |", f(&m[k]), f(&ci[k][0]), f(&ci[k][1]));
    }
}

/// Write `report.md` from whatever artifacts exist in `dir`.
pub fn write(dir: &Path, set: &mut ArtifactSet) -> CliResult<Vec<FileHash>> {
    let mut inputs = Vec::new();
    let gsc = load(dir, "gsc_result.json", &mut inputs)?;
    let cv = match load(dir, "cv_table.json", &mut inputs)? {
        Some(cv) => Some(cv),
        None => gsc.as_ref().map(|g| g["cv"].clone()).filter(|v| !v.is_null()),
    };
    let per_unit = load(dir, "per_unit.json", &mut inputs)?;
    let time = load(dir, "placebo_time.json", &mut inputs)?;
    let space = load(dir, "placebo_space.json", &mut inputs)?;
    let eq = load(dir, "equivalence.json", &mut inputs)?;
    let sv = load(dir, "sv_params.json", &mut inputs)?;

    let mut out = String::from("# Policy evaluation report\n\n");
    out.push_str("## Cross-validation\n\n");
    match &cv {
        Some(cv) => cv_section(&mut out, cv),
        None => out.push_str(NOT_RUN),
    }
    out.push_str("\n## Average treatment effect on the treated\n\n");
    match &gsc {
        Some(g) => {
            att_line(&mut out, g);
            path_table(&mut out, g);
        }
        None => out.push_str(NOT_RUN),
    }
    out.push_str("\n## Covariate coefficients\n\n");
    match &gsc {
        Some(g) => beta_section(&mut out, g),
        None => out.push_str(NOT_RUN),
    }
    out.push_str("\n## Per-unit estimates\n\n");
    match &per_unit {
        Some(p) => per_unit_section(&mut out, p),
        None => out.push_str(NOT_RUN),
    }
    out.push_str("\n## In-time placebo\n\n");
    match &time {
        Some(t) => {
            let _ = writeln!(out, "Placebo adoption at {}.\n", f(&t["placebo_start"]));
            att_line(&mut out, t);
        }
        None => out.push_str(NOT_RUN),
    }
    out.push_str("\n## In-space placebo\n\n");
    match &space {
        Some(s) => space_section(&mut out, s),
        None => out.push_str(NOT_RUN),
    }
    out.push_str("\n## Equivalence test\n\n");
    match &eq {
        Some(e) => equivalence_section(&mut out, e),
        None => out.push_str(NOT_RUN),
    }
    out.push_str("\n## Stochastic volatility\n\n");
    match &sv {
        Some(s) => sv_section(&mut out, s),
        None => out.push_str(NOT_RUN),
    }
    set.write("report.md", out.as_bytes())?;
    Ok(inputs)
}
