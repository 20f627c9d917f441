//! Subcommand implementations. Each takes a resolved [`RunConfig`], writes its
//! artifacts and returns the input files it read.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde_json::{json, Value};
use volgsc::dataio::{self, PanelData, Schema, YearMonth};
use volgsc::diagnostics::{
    default_placebo_start, equivalence_test, export_factors, in_space_placebo, in_time_placebo, UnitRole,
};
use volgsc::factor::{cross_validate, CvOptions, CvTable};
use volgsc::gsc::{estimate_att, estimate_per_unit, AttResult};
use volgsc::sim::{simulate_panel, PanelSpec};
use volgsc::svol::io::{read_daily, read_returns, write_daily_volatility, write_monthly, DailyColumn};
use volgsc::svol::{aggregate_monthly, estimate_sv, mean_correct, VolatilitySource};

use crate::artifacts::{hash_file, num, opt_num, ArtifactSet, FileHash, Manifest};
use crate::config::RunConfig;
use crate::fail::{CliResult, Failure, EXIT_NUMERICAL};
use crate::report;

fn is_panel_command(command: &str) -> bool {
    matches!(
        command,
        "gsc" | "cv" | "per-unit" | "placebo-time" | "placebo-space" | "equivalence"
    )
}

/// Resolve `config` for `command`, run it and write the manifest.
pub fn run(command: &str, mut config: RunConfig) -> CliResult<Manifest> {
    if is_panel_command(command) && config.covariates.is_none() {
        config.covariates = Some(infer_covariates(config.input_path()?, &config.parsed_schema()?)?);
    }
    if command == "report" && config.input.is_none() {
        config.input = Some(config.out_dir());
    }
    let mut resolved = config.resolve(command)?;
    if let (true, Some(dir)) = (command == "report", &config.input) {
        std::fs::create_dir_all(dir)?;
        resolved.input = Some(std::fs::canonicalize(dir)?);
    }
    let mut set = ArtifactSet::create(&resolved.out_dir())?;
    let inputs = match command {
        "sv-estimate" => sv_estimate(&resolved, &mut set)?,
        "sv-aggregate" => sv_aggregate(&resolved, &mut set)?,
        "gsc" => gsc(&resolved, &mut set)?,
        "cv" => cv(&resolved, &mut set)?,
        "per-unit" => per_unit(&resolved, &mut set)?,
        "placebo-time" => placebo_time(&mut resolved, &mut set)?,
        "placebo-space" => placebo_space(&mut resolved, &mut set)?,
        "equivalence" => equivalence(&resolved, &mut set)?,
        "report" => report::write(resolved.input_path()?, &mut set)?,
        "simulate" => simulate(&resolved, &mut set)?,
        other => return Err(Failure::usage(format!("unknown subcommand {other:?}"))),
    };
    for name in set.names() {
        println!("wrote {}", set.dir().join(name).display());
    }
    set.finish(command, resolved, inputs)
}

/// Re-execute a manifest into `out` and compare artifact hashes.
pub fn rerun(manifest_path: &Path, out: Option<PathBuf>) -> CliResult<Manifest> {
    let original = Manifest::load(manifest_path)?;
    for input in &original.inputs {
        let now = hash_file(Path::new(&input.path))?;
        if now.sha256 != input.sha256 {
            return Err(Failure::data(format!("input {} changed since the recorded run", input.path)));
        }
    }
    let mut config = original.config.clone();
    config.out = out;
    let fresh = run(&original.command, config)?;
    let mut mismatched = Vec::new();
    for a in &original.artifacts {
        let same = fresh.artifacts.iter().any(|b| b.path == a.path && b.sha256 == a.sha256);
        println!("{} {}", if same { "identical" } else { "differs" }, a.path);
        if !same {
            mismatched.push(a.path.clone());
        }
    }
    if mismatched.is_empty() {
        Ok(fresh)
    } else {
        Err(Failure {
            code: EXIT_NUMERICAL,
            message: format!("rerun output differs from the manifest: {}", mismatched.join(", ")),
        })
    }
}

fn infer_covariates(path: &Path, schema: &Schema) -> CliResult<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    let fixed = [&schema.unit, &schema.time, &schema.outcome, &schema.treatment];
    Ok(rdr
        .headers()?
        .iter()
        .map(str::trim)
        .filter(|h| !fixed.iter().any(|f| f.as_str() == *h))
        .map(String::from)
        .collect())
}

fn load(config: &RunConfig) -> CliResult<(PanelData, Vec<FileHash>)> {
    let path = config.input_path()?;
    let panel = dataio::load_panel(path, &config.parsed_schema()?).map_err(|e| Failure::from(e).context(path.display()))?;
    Ok((panel, vec![hash_file(path)?]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Every field of the result, with matrices as nested row arrays.
fn att_json(res: &AttResult) -> CliResult<Value> {
    let mut v = serde_json::to_value(res)?;
    v["individual_effects"] = json!(rows(&res.individual_effects));
    v["counterfactuals"] = json!(rows(&res.counterfactuals));
    v["treated_outcomes"] = json!(rows(&res.treated_outcomes));
    v["model"]["factors"] = json!(rows(&res.model.factors));
    v["model"]["loadings"] = json!(rows(&res.model.loadings));
    Ok(v)
}

fn write_path_csv(set: &mut ArtifactSet, name: &str, res: &AttResult) -> CliResult<()> {
    let rows = res
        .att_path
        .iter()
        .map(|p| {
            let ci = res
                .inference
                .as_ref()
                .and_then(|inf| inf.path.iter().find(|q| q.event_time == p.event_time));
            vec![
                p.event_time.to_string(),
                num(p.att),
                p.n_units.to_string(),
                opt_num(ci.map(|c| c.se)),
                opt_num(ci.map(|c| c.ci_lower)),
                opt_num(ci.map(|c| c.ci_upper)),
            ]
        })
        .collect();
    set.write_csv(name, &["event_time", "att", "n_units", "se", "ci_lower", "ci_upper"], rows)
}

fn write_cv_csv(set: &mut ArtifactSet, table: &CvTable) -> CliResult<()> {
    let rows = table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.r.to_string(),
                num(r.sigma2),
                num(r.ic),
                num(r.pc),
                num(r.mspe),
                (r.r == table.selected_r).to_string(),
            ]
        })
        .collect();
    set.write_csv("cv_table.csv", &["r", "sigma2", "ic", "pc", "mspe", "selected"], rows)
}

fn gsc(config: &RunConfig, set: &mut ArtifactSet) -> CliResult<Vec<FileHash>> {
    let (panel, inputs) = load(config)?;
    let res = estimate_att(&panel, &config.gsc_config()?)?;
    set.write_json("gsc_result.json", &att_json(&res)?)?;
    write_path_csv(set, "att_path.csv", &res)?;

    let mut cf = Vec::new();
    for (k, unit) in res.treated_units.iter().enumerate() {
        for (t, time) in res.times.iter().enumerate() {
            cf.push(vec![
                unit.clone(),
                time.to_string(),
                (t as i64 - res.t0[k] as i64).to_string(),
                num(res.treated_outcomes[(k, t)]),
                num(res.counterfactuals[(k, t)]),
                num(res.individual_effects[(k, t)]),
            ]);
        }
    }
    set.write_csv(
        "counterfactual.csv",
        &["unit", "time", "event_time", "observed", "counterfactual", "effect"],
        cf,
    )?;

    let beta_rows = match &res.inference {
        Some(inf) => inf
            .beta
            .iter()
            .map(|b| vec![b.name.clone(), num(b.estimate), num(b.se), num(b.ci_lower), num(b.ci_upper), num(b.p_value)])
            .collect(),
        None => res
            .model
            .covariate_names
            .iter()
            .zip(&res.model.beta)
            .map(|(n, b)| vec![n.clone(), num(*b), "NA".into(), "NA".into(), "NA".into(), "NA".into()])
            .collect(),
    };
    set.write_csv("beta.csv", &["name", "estimate", "se", "ci_lower", "ci_upper", "p_value"], beta_rows)?;

    if let Some(cv) = &res.cv {
        write_cv_csv(set, cv)?;
    }
    if res.model.r > 0 {
        let exp = export_factors(&res.model, &panel.units, &panel.times)?;
        let r = res.model.r;
        let fnames: Vec<String> = (1..=r).map(|k| format!("f{k}")).collect();
        let mut header: Vec<&str> = vec!["time"];
        header.extend(fnames.iter().map(String::as_str));
        let frows = (0..exp.times.len())
            .map(|t| {
                let mut row = vec![exp.times[t].to_string()];
                row.extend((0..r).map(|k| num(exp.factors[(t, k)])));
                row
            })
            .collect();
        set.write_csv("factors.csv", &header, frows)?;

        let lnames: Vec<String> = (1..=r).map(|k| format!("lambda{k}")).collect();
        let mut header: Vec<&str> = vec!["unit", "role", "alpha"];
        header.extend(lnames.iter().map(String::as_str));
        let lrows = (0..exp.units.len())
            .map(|i| {
                let role = match exp.roles[i] {
                    UnitRole::Control => "control",
                    UnitRole::Treated => "treated",
                };
                let mut row = vec![exp.units[i].clone(), role.into(), num(exp.alpha[i])];
                row.extend((0..r).map(|k| num(exp.loadings[(i, k)])));
                row
            })
            .collect();
        set.write_csv("loadings.csv", &header, lrows)?;
        let crows = exp
            .alpha_correlation
            .iter()
            .enumerate()
            .map(|(k, c)| vec![format!("lambda{}", k + 1), num(*c)])
            .collect();
        set.write_csv("alpha_correlation.csv", &["loading", "correlation_with_alpha"], crows)?;
    }
    println!("avg_att = {} (r = {})", res.avg_att, res.model.r);
    Ok(inputs)
}

fn cv(config: &RunConfig, set: &mut ArtifactSet) -> CliResult<Vec<FileHash>> {
    let (panel, inputs) = load(config)?;
    let g = config.gsc_config()?;
    let opts = CvOptions {
        ife: g.ife_options(),
        execution: g.execution,
    };
    let table = cross_validate(&panel, 0..=config.cv_max.unwrap_or(5), &opts)?;
    set.write_json("cv_table.json", &table)?;
    write_cv_csv(set, &table)?;
    println!("selected r = {}", table.selected_r);
    Ok(inputs)
}

fn per_unit(config: &RunConfig, set: &mut ArtifactSet) -> CliResult<Vec<FileHash>> {
    let (panel, inputs) = load(config)?;
    let g = config.gsc_config()?;
    let units: Vec<String> = match &config.unit {
        Some(u) => vec![u.clone()],
        None => panel.treated_set().to_vec(),
    };
    let mut entries = Vec::new();
    let mut csv_rows = Vec::new();
    for unit in &units {
        let res = estimate_per_unit(&panel, unit, &g).map_err(|e| Failure::from(e).context(unit))?;
        let inf = res.inference.as_ref();
        let adoption = panel.times[res.t0[0]];
        csv_rows.push(vec![
            unit.clone(),
            adoption.to_string(),
            res.t0[0].to_string(),
            res.model.r.to_string(),
            num(res.avg_att),
            opt_num(inf.map(|i| i.se)),
            opt_num(inf.map(|i| i.ci_lower)),
            opt_num(inf.map(|i| i.ci_upper)),
            opt_num(inf.map(|i| i.p_value)),
        ]);
        entries.push(json!({
            "unit": unit,
            "adoption": adoption,
            "t0": res.t0[0],
            "selected_r": res.model.r,
            "avg_att": res.avg_att,
            "se": inf.map(|i| i.se),
            "ci_lower": inf.map(|i| i.ci_lower),
            "ci_upper": inf.map(|i| i.ci_upper),
            "p_value": inf.map(|i| i.p_value),
            "beta": inf.map(|i| json!(i.beta)),
            "cv": res.cv,
            "att_path": res.att_path,
        }));
    }
    set.write_json("per_unit.json", &json!({ "units": entries }))?;
    set.write_csv(
        "per_unit.csv",
        &["unit", "adoption", "t0", "selected_r", "avg_att", "se", "ci_lower", "ci_upper", "p_value"],
        csv_rows,
    )?;
    Ok(inputs)
}

fn placebo_time(config: &mut RunConfig, set: &mut ArtifactSet) -> CliResult<Vec<FileHash>> {
    let (panel, inputs) = load(config)?;
    let start = match config.placebo_start {
        Some(s) => s,
        None => default_placebo_start(&panel)?,
    };
    config.placebo_start = Some(start);
    let res = in_time_placebo(&panel, start, &config.gsc_config()?)?;
    let mut v = att_json(&res)?;
    v["placebo_start"] = json!(start);
    set.write_json("placebo_time.json", &v)?;
    write_path_csv(set, "placebo_time_path.csv", &res)?;
    println!("placebo avg_att = {} from {start}", res.avg_att);
    Ok(inputs)
}

fn placebo_space(config: &mut RunConfig, set: &mut ArtifactSet) -> CliResult<Vec<FileHash>> {
    let (panel, inputs) = load(config)?;
    let g = config.gsc_config()?.point_only();
    let true_att = estimate_att(&panel, &g)?.avg_att;
    let dates: Vec<YearMonth> = match &config.adoption_dates {
        Some(d) => d.clone(),
        None => {
            let mut seen = HashSet::new();
            let mut d: Vec<YearMonth> = panel.t0.iter().map(|&t| panel.times[t]).filter(|d| seen.insert(*d)).collect();
            d.sort();
            d
        }
    };
    config.adoption_dates = Some(dates.clone());
    let rep = in_space_placebo(&panel, true_att, &dates, &g)?;
    set.write_json("placebo_space.json", &rep)?;
    let rows = rep
        .entries
        .iter()
        .map(|e| {
            vec![
                e.unit.clone(),
                e.adoption.to_string(),
                opt_num(e.placebo_att),
                e.selected_r.map_or_else(|| "NA".into(), |r| r.to_string()),
                e.indicator.map_or_else(|| "NA".into(), |b| u8::from(b).to_string()),
                e.note.clone().unwrap_or_default(),
            ]
        })
        .collect();
    set.write_csv(
        "placebo_space.csv",
        &["unit", "adoption", "placebo_att", "selected_r", "indicator", "note"],
        rows,
    )?;
    let rows = rep
        .per_date
        .iter()
        .map(|d| {
            vec![
                d.adoption.to_string(),
                d.applicable.to_string(),
                d.at_least_true.to_string(),
                opt_num(d.empirical_p),
            ]
        })
        .collect();
    set.write_csv(
        "placebo_space_dates.csv",
        &["adoption", "applicable", "at_least_true", "empirical_p"],
        rows,
    )?;
    println!("empirical p = {}", opt_num(rep.empirical_p));
    Ok(inputs)
}

fn equivalence(config: &RunConfig, set: &mut ArtifactSet) -> CliResult<Vec<FileHash>> {
    let (panel, inputs) = load(config)?;
    let g = config.gsc_config()?;
    if g.bootstrap.is_none() {
        return Err(Failure::usage("bootstrap_reps: the equivalence test needs bootstrap intervals"));
    }
    let res = estimate_att(&panel, &g)?;
    let factor = config.margin_factor()?;
    let margin = config.margin.unwrap_or(factor * res.residualized_sd);
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Failure::usage(format!("margin: must be positive, got {margin}")));
    }
    let eq = equivalence_test(&res, Some(margin))?;
    set.write_json(
        "equivalence.json",
        &json!({
            "margin": margin,
            "margin_factor": config.margin.is_none().then_some(factor),
            "residualized_sd": res.residualized_sd,
            "level": g.bootstrap.map(|b| b.level),
            "selected_r": res.model.r,
            "result": eq,
        }),
    )?;
    let rows = eq
        .periods
        .iter()
        .map(|p| vec![p.event_time.to_string(), num(p.att), num(p.ci_lower), num(p.ci_upper), p.pass.to_string()])
        .collect();
    set.write_csv("equivalence.csv", &["event_time", "att", "ci_lower", "ci_upper", "within_margin"], rows)?;
    println!("equivalence: {} (margin {margin})", eq.verdict);
    Ok(inputs)
}

fn open(path: &Path) -> CliResult<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn sv_estimate(config: &RunConfig, set: &mut ArtifactSet) -> CliResult<Vec<FileHash>> {
    let path = config.input_path()?;
    let series = read_returns(open(path)?, config.price_scale.unwrap_or(100.0))
        .map_err(|e| Failure::from(e).context(path.display()))?;
    let sv = config.sv_config()?;
    let post = estimate_sv(&mean_correct(&series.values)?, &sv)?;
    let level = config.level.unwrap_or(0.95);
    let ci = post.credible_intervals(level);
    set.write_json(
        "sv_params.json",
        &json!({
            "n_returns": series.values.len(),
            "first_date": series.dates.first().map(|d| d.to_string()),
            "last_date": series.dates.last().map(|d| d.to_string()),
            "kept_draws": post.draws.len(),
            "posterior_mean": post.posterior_mean,
            "level": level,
            "credible_intervals": {
                "mu": [ci[0].0, ci[0].1],
                "phi": [ci[1].0, ci[1].1],
                "sigma_eta": [ci[2].0, ci[2].1],
            },
            "diagnostics": post.diagnostics,
        }),
    )?;
    for (name, source) in [
        ("sv_daily.csv", VolatilitySource::Filtered),
        ("sv_daily_smoothed.csv", VolatilitySource::Smoothed),
    ] {
        let mut buf = Vec::new();
        write_daily_volatility(&series.dates, post.h(source), source, &mut buf)?;
        set.write(name, &buf)?;
    }
    let draws = post
        .draws
        .iter()
        .map(|d| vec![num(d.mu), num(d.phi), num(d.sigma_eta)])
        .collect();
    set.write_csv("sv_draws.csv", &["mu", "phi", "sigma_eta"], draws)?;
    let monthly = aggregate_monthly(&series.dates, post.h(config.volatility_source()?))?;
    let mut buf = Vec::new();
    write_monthly(&monthly, &mut buf)?;
    set.write("sv_monthly.csv", &buf)?;
    let m = post.posterior_mean;
    println!("mu = {}, phi = {}, sigma_eta = {}", m.mu, m.phi, m.sigma_eta);
    Ok(vec![hash_file(path)?])
}

fn sv_aggregate(config: &RunConfig, set: &mut ArtifactSet) -> CliResult<Vec<FileHash>> {
    let path = config.input_path()?;
    let (kind, series) = read_daily(open(path)?).map_err(|e| Failure::from(e).context(path.display()))?;
    if kind != DailyColumn::LogVolatility {
        return Err(Failure::data(format!(
            "{}: expected a daily log-volatility column (h, h_filtered or h_smoothed)",
            path.display()
        )));
    }
    let monthly = aggregate_monthly(&series.dates, &series.values)?;
    let mut buf = Vec::new();
    write_monthly(&monthly, &mut buf)?;
    set.write("monthly.csv", &buf)?;
    Ok(vec![hash_file(path)?])
}

fn simulate(config: &RunConfig, set: &mut ArtifactSet) -> CliResult<Vec<FileHash>> {
    let mut spec = PanelSpec::adoption_study(config.delta.unwrap_or(1.0), config.noise_sd.unwrap_or(0.3));
    spec.r = config.true_factors.unwrap_or(spec.r);
    let sim = simulate_panel(&spec, config.seed.unwrap_or(0))?;
    let schema = Schema::default().with_covariates(spec.covariate_names.clone());
    let mut buf = Vec::new();
    dataio::write_panel(&sim.panel, &schema, &mut buf)?;
    set.write("simulated_panel.csv", &buf)?;
    Ok(Vec::new())
}
