//! `icpw`: effect estimation on a CSV file, the simulation studies, and the oracle self-tests.

mod manifest;
mod recode;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use icpw::baselines::{PredictionRule, PropensityFit, PropensityKind, RandomInterceptOptions};
use icpw::cmle::{CmleOptions, CondLikelihood};
use icpw::data::{Dataset, RawTable, Schema};
use icpw::estimators::{EffectEstimate, Estimand, IcpwOptions, Method, NaiveVariant};
use icpw::inference::{attach_covariance, cluster_bootstrap, icpw_asymptotic_se, icpw_stacked_se};
use icpw::pipeline::{PipelineOutput, Recipe};
use icpw::selftest::{run_suite, SelftestConfig, Suite};
use icpw::simulate::{render_report, run_replications, ReportFormat, ScenarioConfig};
use icpw::IcpwError;

use manifest::{manifest_path_for, sha256_hex, RunManifest};

#[derive(Parser, Debug)]
#[command(name = "icpw", version, about = "Causal effects in clustered data with unmeasured cluster-level confounding")]
struct Cli {
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run-manifest path; defaults to `<out>.manifest.json`, or stderr when writing to stdout.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    /// Estimate treatment effects from a CSV file.
    Estimate(EstimateArgs),
    /// Run a simulation scenario and summarize the estimators across replications.
    Simulate(SimulateArgs),
    /// Check the conditional probabilities against brute-force oracles.
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Format {
    Json,
    Csv,
    Table,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
            Format::Table => ReportFormat::Table,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum NaiveArg {
    /// Mean of `A Y - (1 - A) Y` over all units.
    Printed,
    /// Treated mean minus control mean.
    GroupMeans,
}

impl From<NaiveArg> for NaiveVariant {
    fn from(v: NaiveArg) -> Self {
        match v {
            NaiveArg::Printed => NaiveVariant::Printed,
            NaiveArg::GroupMeans => NaiveVariant::GroupMeans,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum SeKind {
    /// `sqrt(H' B1 H / n)`, driven by the variability of the treatment-model fit.
    Sandwich,
    /// Stacked estimating equations of the treatment model and the weighted mean.
    Stacked,
    None,
}

/// Options shared by `estimate` and `simulate`.
#[derive(Args, Debug, Serialize)]
struct ModelArgs {
    /// Adaptive Gauss-Hermite nodes of the random-intercept propensity model.
    #[arg(long, default_value_t = 15)]
    quad_nodes: usize,
    /// Cluster intercept used in random-intercept propensities: marginal or posterior_mode.
    #[arg(long, default_value = "marginal")]
    prediction: String,
    #[arg(long, value_enum, default_value_t = NaiveArg::Printed)]
    naive_variant: NaiveArg,
    /// Caps ICPW weights at this quantile of the weight distribution.
    #[arg(long)]
    truncate_quantile: Option<f64>,
    /// Conditional likelihood of the ICPW treatment model: joint (per cluster) or composite (per unit).
    #[arg(long, default_value = "joint")]
    likelihood: String,
    /// Iteration limit of the conditional-likelihood Newton solver.
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    /// Score max-norm at which the conditional-likelihood solver stops.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

impl ModelArgs {
    fn recipe(&self, method: Method, estimand: Estimand) -> Result<Recipe, CliError> {
        let prediction: PredictionRule = self.prediction.parse().map_err(usage)?;
        let likelihood: CondLikelihood = self.likelihood.parse().map_err(usage)?;
        if self.quad_nodes == 0 {
            return Err(CliError::Usage("--quad-nodes must be positive".into()));
        }
        if let Some(q) = self.truncate_quantile {
            if !(0.0 < q && q <= 1.0) {
                return Err(CliError::Usage(format!("--truncate-quantile {q} outside (0, 1]")));
            }
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(CliError::Usage("--tol and --max-iter must be positive".into()));
        }
        let mut recipe = Recipe::new(method).with_estimand(estimand);
        recipe.cmle = CmleOptions {
            likelihood,
            max_iter: self.max_iter,
            score_tol: self.tol,
            ..CmleOptions::default()
        };
        recipe.icpw = IcpwOptions {
            truncate_quantile: self.truncate_quantile,
            ..IcpwOptions::default()
        };
        recipe.random = RandomInterceptOptions {
            nodes: self.quad_nodes,
            prediction,
            ..RandomInterceptOptions::default()
        };
        recipe.naive = self.naive_variant.into();
        Ok(recipe)
    }
}

#[derive(Args, Debug, Serialize)]
struct EstimateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    cluster_col: String,
    #[arg(long)]
    treatment_col: String,
    #[arg(long)]
    outcome_col: String,
    /// Comma-separated covariate columns.
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    /// Comma-separated methods (naive, ipw_random, ipw_fixed, icpw) or `all`.
    #[arg(long, value_delimiter = ',', default_value = "icpw")]
    method: Vec<String>,
    /// tau, risk_difference, relative_risk, odds_ratio or mean_potential(a).
    #[arg(long, default_value = "tau")]
    estimand: String,
    /// Cluster-bootstrap replicates; 0 uses the sandwich standard error instead.
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Columns to replace by indicators of every level but the first.
    #[arg(long, value_delimiter = ',')]
    dummies: Vec<String>,
    /// Columns to rescale to mean 0 and standard deviation 1.
    #[arg(long, value_delimiter = ',')]
    standardize: Vec<String>,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    /// Standard error used for ICPW when no bootstrap is requested.
    #[arg(long, value_enum, default_value_t = SeKind::Sandwich)]
    se: SeKind,
    /// Writes the bootstrap replicate estimates to this CSV file.
    #[arg(long)]
    replicates_out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=4))]
    scenario: u32,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..=2))]
    study: u32,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Comma-separated methods or `all`.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    methods: Vec<String>,
    /// Overrides the number of clusters of the study.
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SuiteArg {
    Dp,
    Gradients,
    UInvariance,
    Unbiasedness,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Dp => Suite::Dp,
            SuiteArg::Gradients => Suite::Gradients,
            SuiteArg::UInvariance => Suite::UInvariance,
            SuiteArg::Unbiasedness => Suite::Unbiasedness,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct SelftestArgs {
    /// Suites to run; all when absent. Repeatable.
    #[arg(long, value_enum)]
    suite: Vec<SuiteArg>,
    /// Relative perturbation applied to the values under test (a negative control).
    #[arg(long, default_value_t = 0.0)]
    perturb: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Compute(IcpwError),
}

impl From<IcpwError> for CliError {
    fn from(e: IcpwError) -> Self {
        CliError::Compute(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Compute(e.into())
    }
}

fn usage(e: IcpwError) -> CliError {
    CliError::Usage(e.to_string())
}

/// What a command produced: report text, where it goes, and the process exit code.
struct Output {
    text: String,
    out: Option<PathBuf>,
    exit: i32,
}

fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(run(argv));
}

fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error[usage]: --threads must be at least 1");
            return 2;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error[threads]: {e}");
            return 1;
        }
    }
    let name = match &cli.command {
        Command::Estimate(_) => "estimate",
        Command::Simulate(_) => "simulate",
        Command::Selftest(_) => "selftest",
    };
    let mut manifest = RunManifest::start(argv, name);
    manifest.config = serde_json::to_value(&cli.command).unwrap_or(serde_json::Value::Null);

    let result = match &cli.command {
        Command::Estimate(a) => cmd_estimate(a, &mut manifest),
        Command::Simulate(a) => cmd_simulate(a, &mut manifest),
        Command::Selftest(a) => cmd_selftest(a, &mut manifest),
    }
    .and_then(|output| {
        match &output.out {
            Some(path) => std::fs::write(path, &output.text)?,
            None => std::io::stdout().write_all(output.text.as_bytes())?,
        }
        Ok(output)
    });

    let (exit, out) = match result {
        Ok(o) => (o.exit, o.out),
        Err(CliError::Usage(msg)) => {
            eprintln!("error[usage]: {msg}");
            (2, None)
        }
        Err(CliError::Compute(e)) => {
            eprintln!("error[{}]: {e}", e.code());
            (1, None)
        }
    };
    manifest.finish(exit);
    if let Err(e) = emit_manifest(&manifest, cli.manifest.as_deref(), out.as_deref()) {
        eprintln!("error[io]: could not write the run manifest: {e}");
        return exit.max(1);
    }
    exit
}

fn emit_manifest(manifest: &RunManifest, explicit: Option<&Path>, out: Option<&Path>) -> std::io::Result<()> {
    let json = serde_json::to_string_pretty(manifest).map_err(std::io::Error::other)? + "\n";
    match explicit.map(Path::to_path_buf).or_else(|| out.map(manifest_path_for)) {
        Some(path) => std::fs::write(path, json),
        None => {
            eprint!("manifest: {json}");
            Ok(())
        }
    }
}

fn parse_methods(tags: &[String]) -> Result<Vec<Method>, CliError> {
    let mut out = Vec::new();
    for tag in tags.iter().map(|t| t.trim()).filter(|t| !t.is_empty()) {
        if tag == "all" {
            out.extend(Method::ALL);
        } else {
            out.push(tag.parse().map_err(usage)?);
        }
    }
    let mut seen = Vec::new();
    out.retain(|m| {
        let new = !seen.contains(m);
        seen.push(*m);
        new
    });
    Ok(out)
}

fn warn(method: Method, msg: &str) {
    eprintln!("warning: [{method}] {msg}");
}

#[derive(Debug, Serialize)]
struct EstimateReport {
    clusters: usize,
    units: usize,
    covariates: Vec<String>,
    results: Vec<MethodResult>,
}

#[derive(Debug, Serialize)]
struct MethodResult {
    #[serde(flatten)]
    estimate: EffectEstimate,
    /// How `se` and the interval were obtained.
    interval: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bootstrap_failures: Option<usize>,
    treatment_model: Option<TreatmentModel>,
}

#[derive(Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TreatmentModel {
    Conditional {
        beta: Vec<f64>,
        beta_se: Option<Vec<f64>>,
        log_cond_lik: f64,
        iterations: usize,
        converged: bool,
    },
    Propensity {
        model: PropensityKind,
        intercept: f64,
        beta: Vec<f64>,
        variance_component: f64,
        prediction: PredictionRule,
        log_lik: f64,
        iterations: usize,
        converged: bool,
    },
}

impl TreatmentModel {
    fn propensity(fit: &PropensityFit) -> Self {
        TreatmentModel::Propensity {
            model: fit.kind,
            intercept: fit.intercept,
            beta: fit.beta.clone(),
            variance_component: fit.variance_component,
            prediction: fit.prediction,
            log_lik: fit.log_lik,
            iterations: fit.iterations,
            converged: fit.converged,
        }
    }
}

fn load_dataset(a: &EstimateArgs, manifest: &mut RunManifest) -> Result<(Dataset, Vec<String>), CliError> {
    if !a.delimiter.is_ascii() {
        return Err(CliError::Usage("--delimiter must be a single ASCII character".into()));
    }
    let bytes = std::fs::read(&a.input)?;
    manifest.input = Some(a.input.display().to_string());
    manifest.input_sha256 = Some(sha256_hex(&bytes));
    let mut table = RawTable::from_reader(bytes.as_slice(), a.delimiter as u8)?;
    let mut dummies = Vec::new();
    for col in &a.dummies {
        let names = recode::add_dummies(&mut table, col)?;
        dummies.push((col.clone(), names));
    }
    for col in &a.standardize {
        recode::standardize(&mut table, col)?;
    }
    let covariates = recode::expand_covariates(&a.covariates, &dummies);
    let mut schema = Schema::new(&a.cluster_col, &a.treatment_col, &a.outcome_col, covariates.clone());
    schema.delimiter = a.delimiter as u8;
    Ok((Dataset::from_table(&table, &schema)?, covariates))
}

fn sandwich_se(out: &PipelineOutput, kind: SeKind, recipe: &Recipe) -> Result<Option<f64>, String> {
    let fit = out.cond_fit.as_ref().expect("ICPW output carries its fit");
    let level = match out.estimate.estimand {
        Estimand::Tau | Estimand::RiskDifference => None,
        Estimand::MeanPotential(a) => Some(a),
        other => return Err(format!("no sandwich standard error for {other}; use --bootstrap")),
    };
    let (step, cap) = (recipe.cmle.fd_step, recipe.cmle.state_cap);
    let se = match kind {
        SeKind::Sandwich => icpw_asymptotic_se(&out.data, fit, level, step, cap),
        SeKind::Stacked => icpw_stacked_se(&out.data, fit, level, step, cap),
        SeKind::None => return Ok(None),
    };
    se.map(Some).map_err(|e| format!("standard error unavailable: {e}"))
}

fn cmd_estimate(a: &EstimateArgs, manifest: &mut RunManifest) -> Result<Output, CliError> {
    manifest.seed = Some(a.seed);
    let methods = parse_methods(&a.method)?;
    if methods.is_empty() {
        return Err(CliError::Usage("--method lists no method".into()));
    }
    let estimand: Estimand = a.estimand.parse().map_err(usage)?;
    if !(0.0 < a.level && a.level < 1.0) {
        return Err(CliError::Usage(format!("--level {} outside (0, 1)", a.level)));
    }
    if a.bootstrap == 1 {
        return Err(CliError::Usage("--bootstrap needs at least 2 replicates".into()));
    }
    if a.replicates_out.is_some() && a.bootstrap == 0 {
        return Err(CliError::Usage("--replicates-out needs --bootstrap".into()));
    }
    let recipes = methods
        .iter()
        .map(|&m| a.model.recipe(m, estimand))
        .collect::<Result<Vec<_>, _>>()?;
    let (data, covariates) = load_dataset(a, manifest)?;

    let mut results = Vec::new();
    let mut replicate_rows: Vec<(Method, Vec<Option<f64>>)> = Vec::new();
    for recipe in &recipes {
        let method = recipe.method;
        let mut out = recipe.run_detailed(&data)?;
        let mut interval = None;
        let mut bootstrap_failures = None;
        let mut estimate = out.estimate.clone();
        let mut beta_se = None;
        if let Some(fit) = out.cond_fit.as_mut() {
            match attach_covariance(&out.data, fit, recipe.cmle.fd_step, recipe.cmle.state_cap) {
                Ok(_) => {
                    let cov = fit.beta_cov.as_ref().expect("attached");
                    beta_se = Some((0..cov.nrows()).map(|k| cov[(k, k)].max(0.0).sqrt()).collect());
                }
                Err(e) => estimate.warnings.push(format!("coefficient covariance unavailable: {e}")),
            }
        }
        if a.bootstrap >= 2 {
            let bs = cluster_bootstrap(&data, recipe, a.bootstrap, a.seed, a.level)?;
            estimate.se = bs.estimate.se;
            estimate.ci_low = bs.estimate.ci_low;
            estimate.ci_high = bs.estimate.ci_high;
            estimate.level = bs.estimate.level;
            estimate.warnings.extend(bs.estimate.warnings);
            interval = Some(format!("cluster bootstrap percentile, {} replicates", a.bootstrap));
            bootstrap_failures = Some(bs.failed);
            replicate_rows.push((method, bs.replicates));
        } else if method == Method::Icpw && a.se != SeKind::None {
            match sandwich_se(&out, a.se, recipe) {
                Ok(Some(se)) => {
                    estimate = estimate.with_wald(se, a.level);
                    interval = Some(format!("wald, {} standard error", if a.se == SeKind::Sandwich { "sandwich" } else { "stacked" }));
                }
                Ok(None) => {}
                Err(msg) => estimate.warnings.push(msg),
            }
        }
        if estimate.clusters_dropped > 0 {
            warn(method, &format!("{} clusters dropped by the positivity filter", estimate.clusters_dropped));
        }
        for w in &estimate.warnings {
            warn(method, w);
        }
        let treatment_model = match (&out.cond_fit, &out.propensity) {
            (Some(fit), _) => Some(TreatmentModel::Conditional {
                beta: fit.beta.clone(),
                beta_se,
                log_cond_lik: fit.log_cond_lik,
                iterations: fit.iterations,
                converged: fit.converged,
            }),
            (None, Some(p)) => {
                for w in &p.warnings {
                    warn(method, w);
                }
                Some(TreatmentModel::propensity(p))
            }
            _ => None,
        };
        results.push(MethodResult {
            estimate,
            interval,
            bootstrap_failures,
            treatment_model,
        });
    }

    if let Some(path) = &a.replicates_out {
        let mut w = csv::Writer::from_path(path).map_err(IcpwError::from)?;
        w.write_record(["method", "replicate", "estimate"]).map_err(IcpwError::from)?;
        for (method, reps) in &replicate_rows {
            for (r, v) in reps.iter().enumerate() {
                let cell = v.map_or("NA".to_string(), |x| x.to_string());
                w.write_record([method.as_str(), &r.to_string(), &cell]).map_err(IcpwError::from)?;
            }
        }
        w.flush()?;
    }

    let report = EstimateReport {
        clusters: data.m(),
        units: data.n(),
        covariates,
        results,
    };
    Ok(Output {
        text: render_estimates(&report, a.format)?,
        out: a.out.clone(),
        exit: 0,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or("NA".into(), |x| x.to_string())
}

fn render_estimates(report: &EstimateReport, format: Format) -> Result<String, CliError> {
    let columns = ["method", "estimand", "point", "se", "ci_low", "ci_high", "level", "n_used", "clusters_dropped"];
    let row = |r: &MethodResult| -> Vec<String> {
        let e = &r.estimate;
        vec![
            e.method.to_string(),
            e.estimand.to_string(),
            e.point.to_string(),
            opt(e.se),
            opt(e.ci_low),
            opt(e.ci_high),
            opt(e.level),
            e.n_used.to_string(),
            e.clusters_dropped.to_string(),
        ]
    };
    match format {
        Format::Json => Ok(serde_json::to_string_pretty(report).map_err(IcpwError::from)? + "\n"),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(columns).map_err(IcpwError::from)?;
            for r in &report.results {
                w.write_record(row(r)).map_err(IcpwError::from)?;
            }
            let bytes = w.into_inner().map_err(|e| IcpwError::Io(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
        }
        Format::Table => {
            let mut s = format!("{} clusters, {} units\n", report.clusters, report.units);
            let _ = writeln!(
                s,
                "{:<11} {:<16} {:>12} {:>10} {:>12} {:>12} {:>6} {:>8}",
                "method", "estimand", "estimate", "se", "ci_low", "ci_high", "n", "dropped"
            );
            let f = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.4}"));
            for r in &report.results {
                let e = &r.estimate;
                let _ = writeln!(
                    s,
                    "{:<11} {:<16} {:>12.4} {:>10} {:>12} {:>12} {:>6} {:>8}",
                    e.method.as_str(),
                    e.estimand.to_string(),
                    e.point,
                    f(e.se),
                    f(e.ci_low),
                    f(e.ci_high),
                    e.n_used,
                    e.clusters_dropped
                );
            }
            Ok(s)
        }
    }
}

fn cmd_simulate(a: &SimulateArgs, manifest: &mut RunManifest) -> Result<Output, CliError> {
    manifest.seed = Some(a.seed);
    let methods = parse_methods(&a.methods)?;
    let mut config = ScenarioConfig::preset(a.study, a.scenario, a.seed, a.reps).map_err(usage)?;
    if let Some(m) = a.clusters {
        config.m = m;
    }
    config.validate().map_err(usage)?;
    let template = a.model.recipe(Method::Icpw, Estimand::Tau)?;
    let report = run_replications(&config, &methods, &template)?;
    for row in &report.rows {
        if row.failures > 0 {
            eprintln!("warning: [{}] failed in {} of {} replications", row.method, row.failures, config.reps);
        }
    }
    Ok(Output {
        text: render_report(&report, a.format.into())?,
        out: a.out.clone(),
        exit: 0,
    })
}

fn cmd_selftest(a: &SelftestArgs, manifest: &mut RunManifest) -> Result<Output, CliError> {
    let mut config = SelftestConfig {
        perturb: a.perturb,
        ..SelftestConfig::default()
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    manifest.seed = Some(config.seed);
    let suites: Vec<Suite> = if a.suite.is_empty() {
        Suite::ALL.to_vec()
    } else {
        a.suite.iter().map(|&s| s.into()).collect()
    };
    let mut text = String::new();
    let mut failed = 0;
    for suite in suites {
        for report in run_suite(suite, &config)? {
            failed += usize::from(!report.passed);
            let _ = writeln!(text, "{report}");
        }
    }
    let _ = writeln!(text, "{}", if failed == 0 { "all suites passed".to_string() } else { format!("{failed} suite(s) FAILED") });
    Ok(Output {
        text,
        out: None,
        exit: i32::from(failed > 0),
    })
}
