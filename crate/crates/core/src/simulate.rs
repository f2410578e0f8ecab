//! Data-generating processes with a cluster-level confounder, and a replication harness.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Cluster, Dataset, UnitRecord};
use crate::error::{IcpwError, Result};
use crate::estimators::Method;
use crate::numeric::{logistic, mean, sample_sd};
use crate::pipeline::Recipe;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub m: usize,
    /// Cluster sizes are the integer part of `Uniform(size_low, size_high)`.
    pub size_low: usize,
    pub size_high: usize,
    pub rho_xu: f64,
    pub rho_yu: f64,
    pub tau: f64,
    pub seed: u64,
    pub reps: usize,
}

impl ScenarioConfig {
    /// Study 1 has 500 clusters of 2 to 5 units; study 2 has 20 clusters of 2 to 20.
    /// Scenarios 1-4 set `(rho_xu, rho_yu)` to (0,0), (5,0), (0,5), (5,5).
    pub fn preset(study: u32, scenario: u32, seed: u64, reps: usize) -> Result<Self> {
        let (m, size_high) = match study {
            1 => (500, 6),
            2 => (20, 21),
            other => return Err(IcpwError::Domain(format!("unknown study {other} (expected 1 or 2)"))),
        };
        let (rho_xu, rho_yu) = match scenario {
            1 => (0.0, 0.0),
            2 => (5.0, 0.0),
            3 => (0.0, 5.0),
            4 => (5.0, 5.0),
            other => return Err(IcpwError::Domain(format!("unknown scenario {other} (expected 1 to 4)"))),
        };
        Ok(ScenarioConfig {
            m,
            size_low: 2,
            size_high,
            rho_xu,
            rho_yu,
            tau: 2.0,
            seed,
            reps,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.reps == 0 {
            return Err(IcpwError::Domain("m and reps must be positive".into()));
        }
        if self.size_low < 2 || self.size_high <= self.size_low {
            return Err(IcpwError::Domain(format!(
                "cluster-size bounds ({}, {}) need 2 <= low < high",
                self.size_low, self.size_high
            )));
        }
        Ok(())
    }
}

/// Unobserved quantities of one generated cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCluster {
    pub u: f64,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    /// Observed data with covariates `x1, x2`; no cluster is filtered.
    pub dataset: Dataset,
    pub latent: Vec<LatentCluster>,
}

impl GeneratedData {
    /// Mean of `Y(1) - Y(0)` over every generated unit.
    pub fn tau_simu(&self) -> f64 {
        let (sum, n) = self.latent.iter().fold((0.0, 0usize), |(s, n), c| {
            (s + c.y1.iter().zip(&c.y0).map(|(a, b)| a - b).sum::<f64>(), n + c.y0.len())
        });
        sum / n as f64
    }
}

pub fn rep_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

pub fn generate_dataset(config: &ScenarioConfig, rep: usize) -> Result<GeneratedData> {
    config.validate()?;
    let mut rng = rep_rng(config.seed, rep as u64);
    let size_dist = Uniform::new(config.size_low as f64, config.size_high as f64)
        .map_err(|e| IcpwError::Domain(e.to_string()))?;
    let mut clusters = Vec::with_capacity(config.m);
    let mut latent = Vec::with_capacity(config.m);
    for i in 0..config.m {
        let n = size_dist.sample(&mut rng).floor() as usize;
        let x1: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x2: Vec<f64> = (0..n).map(|_| rng.random_range(-1i32..=1) as f64).collect();
        let centre = -config.rho_xu * (mean(&x1) + mean(&x2));
        let z: f64 = StandardNormal.sample(&mut rng);
        let u = centre + z;
        let mut units = Vec::with_capacity(n);
        let (mut y0s, mut y1s) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for j in 0..n {
            let base = x1[j] + x2[j];
            let a = u32::from(rng.random::<f64>() < logistic(base + u));
            let e0: f64 = StandardNormal.sample(&mut rng);
            let e1: f64 = StandardNormal.sample(&mut rng);
            let y0 = base + e0;
            let y1 = base + config.tau + config.rho_yu * u + e1;
            units.push(UnitRecord {
                cluster_id: format!("{i}"),
                treatment: a,
                outcome: if a == 1 { y1 } else { y0 },
                covariates: vec![x1[j], x2[j]],
            });
            y0s.push(y0);
            y1s.push(y1);
        }
        clusters.push(Cluster::new(format!("{i}"), units)?);
        latent.push(LatentCluster { u, y0: y0s, y1: y1s });
    }
    let dataset = Dataset::new(clusters, vec!["x1".into(), "x2".into()], Some(1))?;
    Ok(GeneratedData { dataset, latent })
}

/// Estimates of one replication, one entry per requested method.
#[derive(Debug, Clone, PartialEq)]
pub struct RepOutcome {
    pub rep: usize,
    pub tau_simu: f64,
    pub estimates: Vec<Option<f64>>,
}

pub fn run_rep(config: &ScenarioConfig, rep: usize, methods: &[Method], template: &Recipe) -> Result<RepOutcome> {
    let generated = generate_dataset(config, rep)?;
    let estimates = methods
        .iter()
        .map(|&m| {
            let recipe = Recipe { method: m, ..template.clone() };
            recipe.run(&generated.dataset).ok().map(|e| e.point).filter(|v| v.is_finite())
        })
        .collect();
    Ok(RepOutcome {
        rep,
        tau_simu: generated.tau_simu(),
        estimates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    /// `simu` for the latent-outcome benchmark, otherwise a method tag.
    pub method: String,
    pub mean: Option<f64>,
    pub bias: Option<f64>,
    pub sd: Option<f64>,
    pub reps: usize,
    pub failures: usize,
}

impl MethodSummary {
    fn from_values(method: String, values: &[f64], failures: usize, tau: f64) -> Self {
        let (m, sd) = if values.is_empty() {
            (None, None)
        } else {
            (Some(mean(values)), Some(sample_sd(values)))
        };
        MethodSummary {
            method,
            mean: m,
            bias: m.map(|v| v - tau),
            sd,
            reps: values.len(),
            failures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: ScenarioConfig,
    pub rows: Vec<MethodSummary>,
}

impl SimulationReport {
    pub fn row(&self, method: &str) -> Option<&MethodSummary> {
        self.rows.iter().find(|r| r.method == method)
    }
}

/// Summarizes replication outcomes; the benchmark row is present whenever any method is.
pub fn summarize(config: &ScenarioConfig, methods: &[Method], outcomes: &[RepOutcome]) -> SimulationReport {
    let mut rows = Vec::new();
    if !methods.is_empty() {
        let simu: Vec<f64> = outcomes.iter().map(|o| o.tau_simu).collect();
        rows.push(MethodSummary::from_values("simu".into(), &simu, 0, config.tau));
        for (k, m) in methods.iter().enumerate() {
            let values: Vec<f64> = outcomes.iter().filter_map(|o| o.estimates[k]).collect();
            let failures = outcomes.len() - values.len();
            rows.push(MethodSummary::from_values(m.to_string(), &values, failures, config.tau));
        }
    }
    SimulationReport {
        config: config.clone(),
        rows,
    }
}

/// Runs every replication in parallel; each rep draws from its own stream, so results do not
/// depend on the number of workers.
pub fn run_replications(config: &ScenarioConfig, methods: &[Method], template: &Recipe) -> Result<SimulationReport> {
    config.validate()?;
    let outcomes: Vec<RepOutcome> = (0..config.reps)
        .into_par_iter()
        .map(|r| run_rep(config, r, methods, template))
        .collect::<Result<_>>()?;
    Ok(summarize(config, methods, &outcomes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = IcpwError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(IcpwError::Domain(format!("unknown format `{other}` (expected table, csv or json)"))),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Table => "table",
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        })
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"))
}

pub fn render_report(report: &SimulationReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["method", "mean", "bias", "sd", "reps", "failures"])?;
            for r in &report.rows {
                w.write_record([
                    r.method.clone(),
                    r.mean.map_or("NA".into(), |v| format!("{v}")),
                    r.bias.map_or("NA".into(), |v| format!("{v}")),
                    r.sd.map_or("NA".into(), |v| format!("{v}")),
                    r.reps.to_string(),
                    r.failures.to_string(),
                ])?;
            }
            let bytes = w.into_inner().map_err(|e| IcpwError::Io(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
        }
        ReportFormat::Table => {
            let c = &report.config;
            let mut out = format!(
                "rho_xu={} rho_yu={} m={} sizes {}..{} reps={} tau={}\n",
                c.rho_xu,
                c.rho_yu,
                c.m,
                c.size_low,
                c.size_high - 1,
                c.reps,
                c.tau
            );
            out += &format!(
                "{:<12}{:>10}{:>10}{:>10}{:>7}{:>10}\n",
                "method", "estimate", "bias", "s.e.", "reps", "failures"
            );
            for r in &report.rows {
                out += &format!(
                    "{:<12}{:>10}{:>10}{:>10}{:>7}{:>10}\n",
                    r.method,
                    cell(r.mean),
                    cell(r.bias),
                    cell(r.sd),
                    r.reps,
                    r.failures
                );
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(scenario: u32) -> ScenarioConfig {
        let mut c = ScenarioConfig::preset(1, scenario, 42, 3).unwrap();
        c.m = 40;
        c
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_dataset(&small(4), 2).unwrap();
        let b = generate_dataset(&small(4), 2).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&small(4), 3).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn sizes_are_integer_parts() {
        let g = generate_dataset(&ScenarioConfig::preset(1, 1, 5, 1).unwrap(), 0).unwrap();
        let sizes = g.dataset.cluster_sizes();
        assert_eq!(sizes.len(), 500);
        for s in 2..=5 {
            assert!(sizes.contains(&s));
        }
        assert!(sizes.iter().all(|s| (2..=5).contains(s)));
        let g2 = generate_dataset(&ScenarioConfig::preset(2, 1, 5, 1).unwrap(), 0).unwrap();
        assert!(g2.dataset.cluster_sizes().iter().all(|s| (2..=20).contains(s)));
    }

    #[test]
    fn observed_outcome_is_the_realized_potential_outcome() {
        let g = generate_dataset(&small(3), 0).unwrap();
        for (c, l) in g.dataset.clusters().iter().zip(&g.latent) {
            for (j, u) in c.units().iter().enumerate() {
                let expected = if u.treatment == 1 { l.y1[j] } else { l.y0[j] };
                assert_eq!(u.outcome, expected);
                assert!(u.covariates[1] == -1.0 || u.covariates[1] == 0.0 || u.covariates[1] == 1.0);
            }
        }
    }

    #[test]
    fn confounder_independent_of_covariates_without_correlation() {
        let mut c = ScenarioConfig::preset(1, 1, 9, 1).unwrap();
        c.m = 2000;
        let g = generate_dataset(&c, 0).unwrap();
        let u: Vec<f64> = g.latent.iter().map(|l| l.u).collect();
        let xbar: Vec<f64> = g
            .dataset
            .clusters()
            .iter()
            .map(|c| mean(&c.units().iter().map(|u| u.covariates[0]).collect::<Vec<_>>()))
            .collect();
        let (mu, mx) = (mean(&u), mean(&xbar));
        let cov: f64 = u.iter().zip(&xbar).map(|(a, b)| (a - mu) * (b - mx)).sum::<f64>();
        let corr = cov / (u.iter().map(|a| (a - mu).powi(2)).sum::<f64>().sqrt()
            * xbar.iter().map(|b| (b - mx).powi(2)).sum::<f64>().sqrt());
        assert!(corr.abs() < 0.05, "corr {corr}");
        assert!(mu.abs() < 0.1);
    }

    #[test]
    fn presets_reject_unknown_ids() {
        assert!(ScenarioConfig::preset(1, 5, 0, 1).is_err());
        assert!(ScenarioConfig::preset(3, 1, 0, 1).is_err());
    }

    #[test]
    fn report_rendering() {
        let c = small(1);
        let report = run_replications(&c, &[Method::Naive, Method::Icpw], &Recipe::new(Method::Icpw)).unwrap();
        for r in &report.rows {
            assert_eq!(r.reps + r.failures, 3);
            if let (Some(m), Some(b)) = (r.mean, r.bias) {
                assert!((b - (m - 2.0)).abs() < 1e-12);
            }
        }
        let csv = render_report(&report, ReportFormat::Csv).unwrap();
        assert_eq!(csv.lines().count(), 4);
        let json = render_report(&report, ReportFormat::Json).unwrap();
        let back: SimulationReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        let table = render_report(&report, ReportFormat::Table).unwrap();
        assert!(table.contains("icpw"));
    }

    #[test]
    fn empty_method_list_renders_header_only() {
        let c = small(1);
        let report = summarize(&c, &[], &[]);
        assert_eq!(render_report(&report, ReportFormat::Csv).unwrap().lines().count(), 1);
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
