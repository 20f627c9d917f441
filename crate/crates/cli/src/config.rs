//! Run configuration: a flat TOML document overlaid by command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use volgsc::dataio::{Schema, YearMonth};
use volgsc::diagnostics::DEFAULT_MARGIN_FACTOR;
use volgsc::gsc::{BootstrapConfig, CiScheme, FactorSelection, GscConfig};
use volgsc::par::Execution;
use volgsc::svol::{SvConfig, VolatilitySource};

use crate::fail::{CliResult, Failure};

pub const OUT_ENV: &str = "VOLGSC_OUT";
pub const DEFAULT_OUT: &str = "volgsc-out";

/// Every setting any subcommand reads. All fields are optional so that a
/// config file and the flags can each set a subset; flags win.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Input file (panel CSV, daily returns/prices, or daily log-volatility).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,

    /// Output directory [env: VOLGSC_OUT, default: volgsc-out].
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,

    /// Column mapping, e.g. `unit=country,time=month,outcome=vol,treatment=epr`.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,

    /// Covariate columns; every non-schema column when omitted.
    #[arg(long, value_delimiter = ',')]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<Vec<String>>,

    /// Covariate holding the exchange-rate regime code (0, 1, 2).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<String>,

    /// `auto` (cross-validate over 0..=cv-max) or a fixed factor count.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factors: Option<String>,

    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv_max: Option<usize>,

    /// Bootstrap replicates (0 skips inference).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_reps: Option<usize>,

    /// `percentile` or `normal`.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<String>,

    /// Interval coverage level.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,

    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,

    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,

    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    /// Run parallel sweeps on one thread (results are identical).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequential: Option<bool>,

    /// In-time placebo adoption month (YYYY-MM).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placebo_start: Option<YearMonth>,

    /// In-space placebo adoption months; the treated units' dates when omitted.
    #[arg(long, value_delimiter = ',')]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adoption_dates: Option<Vec<YearMonth>>,

    /// Equivalence margin as a multiple of the residualized outcome sd.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin_factor: Option<f64>,

    /// Absolute equivalence margin; overrides margin-factor.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,

    /// Single treated unit for per-unit runs (all treated units when omitted).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,

    /// Gibbs iterations including burn-in.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,

    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,

    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles: Option<usize>,

    /// Zero-return offset as a multiple of the return variance.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset_scale: Option<f64>,

    /// Multiplier applied to log price changes.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price_scale: Option<f64>,

    /// Daily log-volatility to carry forward: `filtered` or `smoothed`.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volatility: Option<String>,

    /// Simulated post-treatment effect.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,

    /// Simulated idiosyncratic noise sd.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sd: Option<f64>,

    /// Latent factor count of the simulated panel.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_factors: Option<usize>,
}

macro_rules! overlay {
    ($top:expr, $base:expr; $($f:ident),* $(,)?) => {
        RunConfig { $($f: $top.$f.or($base.$f)),* }
    };
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| Failure::usage(format!("config: {e}")))
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| Failure::usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|f| f.context(path.display()))
    }

    /// Fields set in `self` win over `base`.
    pub fn over(self, base: RunConfig) -> RunConfig {
        overlay!(self, base;
            input, out, schema, covariates, regime, factors, cv_max, bootstrap_reps, ci, level,
            tol, max_iter, seed, sequential, placebo_start, adoption_dates, margin_factor, margin,
            unit, iterations, burn_in, particles, offset_scale, price_scale, volatility, delta,
            noise_sd, true_factors,
        )
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    pub fn input_path(&self) -> CliResult<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| Failure::usage("input: required for this command"))
    }

    pub fn execution(&self) -> Execution {
        if self.sequential.unwrap_or(false) {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    pub fn parsed_schema(&self) -> CliResult<Schema> {
        let mut schema = Schema::default();
        if let Some(spec) = &self.schema {
            for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                let (key, col) = part
                    .split_once('=')
                    .ok_or_else(|| Failure::usage(format!("schema: expected key=column, got {part:?}")))?;
                let col = col.trim().to_string();
                match key.trim() {
                    "unit" => schema.unit = col,
                    "time" => schema.time = col,
                    "outcome" => schema.outcome = col,
                    "treatment" => schema.treatment = col,
                    other => return Err(Failure::usage(format!("schema: unknown key {other:?}"))),
                }
            }
        }
        schema.covariates = self.covariates.clone().unwrap_or_default();
        schema.regime = self.regime.clone();
        Ok(schema)
    }

    pub fn factor_selection(&self) -> CliResult<FactorSelection> {
        let max = self.cv_max.unwrap_or(5);
        match self.factors.as_deref().unwrap_or("auto") {
            "auto" => Ok(FactorSelection::Auto { max }),
            k => k
                .parse()
                .map(FactorSelection::Fixed)
                .map_err(|_| Failure::usage(format!("factors: expected `auto` or an integer, got {k:?}"))),
        }
    }

    fn ci_scheme(&self) -> CliResult<CiScheme> {
        match self.ci.as_deref().unwrap_or("percentile") {
            "percentile" => Ok(CiScheme::Percentile),
            "normal" => Ok(CiScheme::Normal),
            other => Err(Failure::usage(format!("ci: expected `percentile` or `normal`, got {other:?}"))),
        }
    }

    pub fn volatility_source(&self) -> CliResult<VolatilitySource> {
        match self.volatility.as_deref().unwrap_or("filtered") {
            "filtered" => Ok(VolatilitySource::Filtered),
            "smoothed" => Ok(VolatilitySource::Smoothed),
            other => Err(Failure::usage(format!("volatility: expected `filtered` or `smoothed`, got {other:?}"))),
        }
    }

    pub fn gsc_config(&self) -> CliResult<GscConfig> {
        let level = self.level.unwrap_or(0.95);
        let bootstrap = match self.bootstrap_reps.unwrap_or(1000) {
            0 => None,
            reps => {
                let b = BootstrapConfig {
                    reps,
                    ci: self.ci_scheme()?,
                    level,
                };
                b.validate().map_err(|e| Failure::usage(format!("bootstrap_reps / level: {e}")))?;
                Some(b)
            }
        };
        let tol = self.tol.unwrap_or(1e-7);
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Failure::usage(format!("tol: must be positive, got {tol}")));
        }
        let max_iter = self.max_iter.unwrap_or(2000);
        if max_iter == 0 {
            return Err(Failure::usage("max_iter: must be at least 1"));
        }
        Ok(GscConfig {
            factors: self.factor_selection()?,
            covariates: None,
            tol,
            max_iter,
            bootstrap,
            seed: self.seed.unwrap_or(0),
            execution: self.execution(),
        })
    }

    pub fn sv_config(&self) -> CliResult<SvConfig> {
        let d = SvConfig::default();
        let cfg = SvConfig {
            iterations: self.iterations.unwrap_or(d.iterations),
            burn_in: self.burn_in.unwrap_or(d.burn_in),
            seed: self.seed.unwrap_or(0),
            offset_scale: self.offset_scale.unwrap_or(d.offset_scale),
            n_particles: self.particles.unwrap_or(d.n_particles),
            priors: d.priors,
        };
        cfg.validate()
            .map_err(|e| Failure::usage(format!("iterations / burn_in / offset_scale: {e}")))?;
        Ok(cfg)
    }

    pub fn margin_factor(&self) -> CliResult<f64> {
        let m = self.margin_factor.unwrap_or(DEFAULT_MARGIN_FACTOR);
        if !(m > 0.0 && m.is_finite()) {
            return Err(Failure::usage(format!("margin_factor: must be positive, got {m}")));
        }
        Ok(m)
    }

    /// Keep only the fields `command` reads, with every default written out,
    /// so the manifest alone reproduces the run.
    pub fn resolve(&self, command: &str) -> CliResult<RunConfig> {
        let mut r = RunConfig {
            out: Some(self.out_dir()),
            ..RunConfig::default()
        };
        let panel = matches!(
            command,
            "gsc" | "cv" | "per-unit" | "placebo-time" | "placebo-space" | "equivalence"
        );
        if panel || command.starts_with("sv-") {
            r.input = Some(absolute(self.input_path()?)?);
        }
        if panel {
            let schema = self.parsed_schema()?;
            r.schema = Some(format!(
                "unit={},time={},outcome={},treatment={}",
                schema.unit, schema.time, schema.outcome, schema.treatment
            ));
            r.covariates = self.covariates.clone();
            r.regime = self.regime.clone();
            r.factors = Some(match self.factor_selection()? {
                FactorSelection::Auto { .. } => "auto".into(),
                FactorSelection::Fixed(k) => k.to_string(),
            });
            r.cv_max = Some(self.cv_max.unwrap_or(5));
            let g = self.gsc_config()?;
            r.tol = Some(g.tol);
            r.max_iter = Some(g.max_iter);
            r.sequential = Some(self.sequential.unwrap_or(false));
        }
        if matches!(command, "gsc" | "per-unit" | "placebo-time" | "equivalence") {
            let g = self.gsc_config()?;
            r.bootstrap_reps = Some(g.bootstrap.map_or(0, |b| b.reps));
            r.ci = Some(self.ci.clone().unwrap_or_else(|| "percentile".into()));
            r.level = Some(self.level.unwrap_or(0.95));
            r.seed = Some(g.seed);
        }
        match command {
            "per-unit" => r.unit = self.unit.clone(),
            "placebo-time" => r.placebo_start = self.placebo_start,
            "placebo-space" => r.adoption_dates = self.adoption_dates.clone(),
            "equivalence" => {
                r.margin_factor = Some(self.margin_factor()?);
                r.margin = self.margin;
            }
            "sv-estimate" => {
                let s = self.sv_config()?;
                r.seed = Some(s.seed);
                r.iterations = Some(s.iterations);
                r.burn_in = Some(s.burn_in);
                r.particles = Some(s.n_particles);
                r.offset_scale = Some(s.offset_scale);
                r.price_scale = Some(self.price_scale.unwrap_or(100.0));
                r.level = Some(self.level.unwrap_or(0.95));
                r.volatility = Some(match self.volatility_source()? {
                    VolatilitySource::Filtered => "filtered".into(),
                    VolatilitySource::Smoothed => "smoothed".into(),
                });
            }
            "simulate" => {
                r.seed = Some(self.seed.unwrap_or(0));
                r.delta = Some(self.delta.unwrap_or(1.0));
                r.noise_sd = Some(self.noise_sd.unwrap_or(0.3));
                r.true_factors = Some(self.true_factors.unwrap_or(3));
            }
            _ => {}
        }
        if let Some(level) = r.level {
            if !(level > 0.0 && level < 1.0) {
                return Err(Failure::usage(format!("level: must lie in (0, 1), got {level}")));
            }
        }
        Ok(r)
    }
}

fn absolute(path: &Path) -> CliResult<PathBuf> {
    std::fs::canonicalize(path).map_err(|e| Failure::data(format!("input {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunConfig {
        RunConfig {
            input: Some("panel.csv".into()),
            schema: Some("unit=country,time=month,outcome=vol,treatment=epr".into()),
            covariates: Some(vec!["ird".into(), "er_regime".into()]),
            factors: Some("3".into()),
            bootstrap_reps: Some(500),
            level: Some(0.9),
            tol: Some(1e-9),
            seed: Some(42),
            sequential: Some(true),
            placebo_start: Some("2017-06".parse().unwrap()),
            adoption_dates: Some(vec!["2018-04".parse().unwrap(), "2014-01".parse().unwrap()]),
            margin_factor: Some(0.5),
            offset_scale: Some(1e-4),
            ..RunConfig::default()
        }
    }

    #[test]
    fn toml_round_trip_is_lossless() {
        let c = sample();
        assert_eq!(RunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("bootstrap = 3").unwrap_err();
        assert_eq!(err.code, crate::fail::EXIT_USAGE);
        assert!(err.message.contains("bootstrap"));
    }

    #[test]
    fn flags_win_over_file() {
        let file = sample();
        let flags = RunConfig {
            seed: Some(7),
            ..RunConfig::default()
        };
        let merged = flags.over(file.clone());
        assert_eq!(merged.seed, Some(7));
        assert_eq!(merged.tol, file.tol);
    }

    #[test]
    fn schema_string_parses() {
        let s = sample().parsed_schema().unwrap();
        assert_eq!((s.unit.as_str(), s.time.as_str(), s.treatment.as_str()), ("country", "month", "epr"));
        assert_eq!(s.covariates.len(), 2);
        let bad = RunConfig {
            schema: Some("country".into()),
            ..RunConfig::default()
        };
        assert!(bad.parsed_schema().unwrap_err().message.starts_with("schema"));
    }

    #[test]
    fn invalid_fields_are_named() {
        let c = RunConfig {
            factors: Some("many".into()),
            ..RunConfig::default()
        };
        assert!(c.gsc_config().unwrap_err().message.starts_with("factors"));
        let c = RunConfig {
            bootstrap_reps: Some(50),
            ..RunConfig::default()
        };
        assert!(c.gsc_config().unwrap_err().message.starts_with("bootstrap_reps"));
        let c = RunConfig {
            ci: Some("bca".into()),
            ..RunConfig::default()
        };
        assert!(c.gsc_config().unwrap_err().message.starts_with("ci"));
    }

    #[test]
    fn zero_reps_means_point_estimates() {
        let c = RunConfig {
            bootstrap_reps: Some(0),
            ..RunConfig::default()
        };
        assert!(c.gsc_config().unwrap().bootstrap.is_none());
    }
}
