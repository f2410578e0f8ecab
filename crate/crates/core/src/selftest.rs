//! Randomized checks of the conditional-probability machinery against the oracles.
//!
//! Each suite draws its instances from a seeded stream and reports the worst error seen.
//! `perturb` scales the probabilities under test by `1 + perturb`, which lets a caller
//! confirm that a suite actually fails when the implementation is wrong.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cond_prob::{cluster_cond_probs, cond_prob_bruteforce, LinearPredictors};
use crate::data::SufficientStat;
use crate::error::{IcpwError, Result};
use crate::oracle::{central_difference, enumerate_arrangements, joint_model_cond_prob};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Dp,
    Gradients,
    UInvariance,
    Unbiasedness,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Dp, Suite::UInvariance, Suite::Unbiasedness, Suite::Gradients];

    pub fn as_str(&self) -> &'static str {
        match self {
            Suite::Dp => "dp",
            Suite::Gradients => "gradients",
            Suite::UInvariance => "u-invariance",
            Suite::Unbiasedness => "unbiasedness",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = IcpwError;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| IcpwError::Domain(format!("unknown suite `{s}` (expected dp, gradients, u-invariance or unbiasedness)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub instances: usize,
    pub comparisons: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<13} {} instances, {} comparisons, max error {:.3e} (tol {:.0e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite.as_str(),
            self.instances,
            self.comparisons,
            self.max_error,
            self.tolerance
        )
    }
}

/// Instance counts and tolerances of the suites.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelftestConfig {
    pub seed: u64,
    pub perturb: f64,
    /// Binary clusters compared against enumeration, sizes up to `dp_max_size`.
    pub dp_binary: usize,
    pub dp_max_size: usize,
    /// Three-level clusters compared against enumeration, sizes up to `dp_multi_max_size`.
    pub dp_multinomial: usize,
    pub dp_multi_max_size: usize,
    pub u_clusters: usize,
    pub unbiased_clusters: usize,
    pub gradient_instances: usize,
}

impl Default for SelftestConfig {
    fn default() -> Self {
        SelftestConfig {
            seed: 20240607,
            perturb: 0.0,
            dp_binary: 1000,
            dp_max_size: 12,
            dp_multinomial: 200,
            dp_multi_max_size: 8,
            u_clusters: 100,
            unbiased_clusters: 100,
            gradient_instances: 200,
        }
    }
}

pub const DP_BINARY_TOL: f64 = 1e-10;
pub const DP_MULTINOMIAL_TOL: f64 = 1e-9;
pub const U_INVARIANCE_TOL: f64 = 1e-10;
pub const UNBIASEDNESS_TOL: f64 = 1e-10;
pub const GRADIENT_TOL: f64 = 1e-6;

const U_VALUES: [f64; 5] = [-3.0, -1.0, 0.0, 1.0, 3.0];

fn suite_rng(seed: u64, suite: Suite) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(suite as u64 + 1);
    rng
}

/// A random cluster: design rows, coefficients and treatment counts with at least two
/// levels present.
struct Instance {
    lp: LinearPredictors,
    stat: SufficientStat,
    design: Vec<Vec<f64>>,
    max_level: u32,
}

fn random_instance(rng: &mut ChaCha8Rng, size: usize, max_level: u32) -> Result<Instance> {
    let p = rng.random_range(1..=3);
    let design: Vec<Vec<f64>> = (0..size)
        .map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let beta: Vec<f64> = (0..p * max_level as usize).map(|_| rng.random_range(-1.5..1.5)).collect();
    let rows: Vec<&[f64]> = design.iter().map(Vec::as_slice).collect();
    let lp = LinearPredictors::from_beta(&rows, &beta, max_level)?;
    let levels = max_level as usize + 1;
    let counts = loop {
        let mut counts = vec![0usize; levels];
        for _ in 0..size {
            counts[rng.random_range(0..levels)] += 1;
        }
        if counts.iter().filter(|&&c| c > 0).count() >= 2 {
            break counts;
        }
    };
    let stat = SufficientStat::from_level_counts(&counts)?;
    Ok(Instance { lp, stat, design, max_level })
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

struct Tally {
    instances: usize,
    comparisons: usize,
    max_error: f64,
}

impl Tally {
    fn new() -> Self {
        Tally { instances: 0, comparisons: 0, max_error: 0.0 }
    }

    fn record(&mut self, err: f64) {
        self.comparisons += 1;
        // NaN must fail the suite
        if err.is_nan() || err > self.max_error {
            self.max_error = if err.is_nan() { f64::INFINITY } else { err };
        }
    }

    fn report(self, suite: Suite, tolerance: f64) -> SuiteReport {
        SuiteReport {
            suite,
            instances: self.instances,
            comparisons: self.comparisons,
            passed: self.comparisons > 0 && self.max_error <= tolerance,
            max_error: self.max_error,
            tolerance,
        }
    }
}

/// Dynamic programming against enumeration of every treatment vector. Returns the binary and
/// the three-level report.
pub fn dp_suite(config: &SelftestConfig) -> Result<Vec<SuiteReport>> {
    let mut rng = suite_rng(config.seed, Suite::Dp);
    let mut out = Vec::new();
    for (count, max_size, max_level, tol) in [
        (config.dp_binary, config.dp_max_size, 1, DP_BINARY_TOL),
        (config.dp_multinomial, config.dp_multi_max_size, 2, DP_MULTINOMIAL_TOL),
    ] {
        let mut tally = Tally::new();
        for _ in 0..count {
            let size = rng.random_range(2..=max_size);
            let inst = random_instance(&mut rng, size, max_level)?;
            let dp = cluster_cond_probs(&inst.lp, &inst.stat)?;
            let counts = inst.stat.level_counts();
            for j in 0..size {
                for a in 0..=max_level {
                    if counts[a as usize] == 0 {
                        continue;
                    }
                    let brute = cond_prob_bruteforce(&inst.lp, &inst.stat, j, a, Some(max_size))?;
                    let got = dp.log_prob[j][a as usize].exp() * (1.0 + config.perturb);
                    tally.record(rel_err(got, brute.prob));
                }
            }
            tally.instances += 1;
        }
        out.push(tally.report(Suite::Dp, tol));
    }
    Ok(out)
}

/// Bayes' rule on the joint model at several cluster intercepts against the dynamic programming.
pub fn u_invariance_suite(config: &SelftestConfig) -> Result<SuiteReport> {
    let mut rng = suite_rng(config.seed, Suite::UInvariance);
    let mut tally = Tally::new();
    for k in 0..config.u_clusters {
        let max_level = if k % 4 == 3 { 2 } else { 1 };
        let size = rng.random_range(2..=if max_level == 1 { 10 } else { 6 });
        let inst = random_instance(&mut rng, size, max_level)?;
        let dp = cluster_cond_probs(&inst.lp, &inst.stat)?;
        let counts = inst.stat.level_counts();
        for j in 0..size {
            for a in 0..=max_level {
                if counts[a as usize] == 0 {
                    continue;
                }
                let want = dp.log_prob[j][a as usize].exp() * (1.0 + config.perturb);
                for u in U_VALUES {
                    let intercept: Vec<f64> = (1..=max_level).map(|l| u * l as f64 / max_level as f64).collect();
                    let joint = joint_model_cond_prob(&inst.lp, &inst.stat, j, a, &intercept)?;
                    tally.record(rel_err(want, joint));
                }
            }
        }
        tally.instances += 1;
    }
    Ok(tally.report(Suite::UInvariance, U_INVARIANCE_TOL))
}

/// Exact conditional expectation of the weighted cluster sum over all treatment vectors with
/// the observed counts, against the sum of the potential outcomes.
pub fn unbiasedness_suite(config: &SelftestConfig) -> Result<SuiteReport> {
    let mut rng = suite_rng(config.seed, Suite::Unbiasedness);
    let mut tally = Tally::new();
    for _ in 0..config.unbiased_clusters {
        let size = rng.random_range(2..=10);
        let inst = random_instance(&mut rng, size, 1)?;
        let potential: Vec<[f64; 2]> = (0..size)
            .map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)])
            .collect();
        let dp = cluster_cond_probs(&inst.lp, &inst.stat)?;
        let arrangements = enumerate_arrangements(&inst.lp, &inst.stat)?;
        for a in 0..2u32 {
            let expected: f64 = arrangements
                .iter()
                .map(|(vec, prob)| {
                    let sum: f64 = vec
                        .iter()
                        .enumerate()
                        .filter(|&(_, &v)| v == a)
                        .map(|(j, _)| {
                            let p = dp.log_prob[j][a as usize].exp() * (1.0 + config.perturb);
                            potential[j][a as usize] / p
                        })
                        .sum();
                    prob * sum
                })
                .sum();
            let truth: f64 = potential.iter().map(|y| y[a as usize]).sum();
            tally.record((expected - truth).abs() / truth.abs().max(1.0));
        }
        tally.instances += 1;
    }
    Ok(tally.report(Suite::Unbiasedness, UNBIASEDNESS_TOL))
}

/// Analytic gradients of the conditional log-probabilities against central differences.
/// The error is `|analytic - numeric| / max(1, |analytic|)`.
pub fn gradient_suite(config: &SelftestConfig) -> Result<SuiteReport> {
    let mut rng = suite_rng(config.seed, Suite::Gradients);
    let mut tally = Tally::new();
    for k in 0..config.gradient_instances {
        let max_level = if k % 3 == 2 { 2 } else { 1 };
        let size = rng.random_range(2..=if max_level == 1 { 12 } else { 7 });
        let inst = random_instance(&mut rng, size, max_level)?;
        let p = inst.design[0].len();
        let beta: Vec<f64> = (0..p * max_level as usize).map(|_| rng.random_range(-1.5..1.5)).collect();
        let rows: Vec<&[f64]> = inst.design.iter().map(Vec::as_slice).collect();
        let at = |b: &[f64]| -> Result<_> {
            let lp = LinearPredictors::from_beta(&rows, b, inst.max_level)?;
            cluster_cond_probs(&lp, &inst.stat)
        };
        let probs = at(&beta)?;
        let counts = inst.stat.level_counts();
        let j = rng.random_range(0..size);
        for a in 0..=max_level as usize {
            if counts[a] == 0 {
                continue;
            }
            let numeric = central_difference(
                |b| at(b).map(|r| r.log_prob[j][a]).unwrap_or(f64::NAN),
                &beta,
                1e-5,
            );
            for (g, n) in probs.grad[j][a].iter().zip(&numeric) {
                let g = g * (1.0 + config.perturb);
                tally.record((g - n).abs() / g.abs().max(1.0));
            }
        }
        tally.instances += 1;
    }
    Ok(tally.report(Suite::Gradients, GRADIENT_TOL))
}

pub fn run_suite(suite: Suite, config: &SelftestConfig) -> Result<Vec<SuiteReport>> {
    match suite {
        Suite::Dp => dp_suite(config),
        Suite::UInvariance => Ok(vec![u_invariance_suite(config)?]),
        Suite::Unbiasedness => Ok(vec![unbiasedness_suite(config)?]),
        Suite::Gradients => Ok(vec![gradient_suite(config)?]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SelftestConfig {
        SelftestConfig {
            dp_binary: 30,
            dp_multinomial: 10,
            u_clusters: 10,
            unbiased_clusters: 10,
            gradient_instances: 20,
            ..SelftestConfig::default()
        }
    }

    #[test]
    fn suites_pass_on_the_real_implementation() {
        for s in Suite::ALL {
            for r in run_suite(s, &small()).unwrap() {
                assert!(r.passed, "{r}");
            }
        }
    }

    #[test]
    fn perturbation_is_caught_by_every_suite() {
        let cfg = SelftestConfig { perturb: 1e-4, ..small() };
        for s in Suite::ALL {
            assert!(run_suite(s, &cfg).unwrap().iter().any(|r| !r.passed), "{s} missed the perturbation");
        }
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.as_str().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }
}
