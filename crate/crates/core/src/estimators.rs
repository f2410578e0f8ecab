//! Weighting estimators of potential-outcome means and treatment effects.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cmle::{cluster_probs, CondFit};
use crate::cond_prob::DEFAULT_STATE_CAP;
use crate::data::Dataset;
use crate::error::{IcpwError, Result};
use crate::numeric::quantile_sorted;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Naive,
    IpwFixed,
    IpwRandom,
    Icpw,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Naive, Method::IpwRandom, Method::IpwFixed, Method::Icpw];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::IpwFixed => "ipw_fixed",
            Method::IpwRandom => "ipw_random",
            Method::Icpw => "icpw",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = IcpwError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Method::Naive),
            "ipw_fixed" | "ipw-fixed" => Ok(Method::IpwFixed),
            "ipw_random" | "ipw-random" => Ok(Method::IpwRandom),
            "icpw" => Ok(Method::Icpw),
            other => Err(IcpwError::Domain(format!("unknown method `{other}`"))),
        }
    }
}

/// What an estimate targets. Serialized as `mean_potential(a)`, `tau`, `risk_difference`,
/// `relative_risk` or `odds_ratio`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Estimand {
    MeanPotential(u32),
    Tau,
    RiskDifference,
    RelativeRisk,
    OddsRatio,
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimand::MeanPotential(a) => write!(f, "mean_potential({a})"),
            Estimand::Tau => f.write_str("tau"),
            Estimand::RiskDifference => f.write_str("risk_difference"),
            Estimand::RelativeRisk => f.write_str("relative_risk"),
            Estimand::OddsRatio => f.write_str("odds_ratio"),
        }
    }
}

impl FromStr for Estimand {
    type Err = IcpwError;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(inner) = s.strip_prefix("mean_potential(").and_then(|r| r.strip_suffix(')')) {
            return inner
                .parse()
                .map(Estimand::MeanPotential)
                .map_err(|_| IcpwError::Domain(format!("bad treatment level in `{s}`")));
        }
        match s {
            "tau" => Ok(Estimand::Tau),
            "risk_difference" => Ok(Estimand::RiskDifference),
            "relative_risk" => Ok(Estimand::RelativeRisk),
            "odds_ratio" => Ok(Estimand::OddsRatio),
            other => Err(IcpwError::Domain(format!("unknown estimand `{other}`"))),
        }
    }
}

impl From<Estimand> for String {
    fn from(e: Estimand) -> String {
        e.to_string()
    }
}

impl TryFrom<String> for Estimand {
    type Error = IcpwError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub method: Method,
    pub estimand: Estimand,
    pub point: f64,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    /// Confidence level of the interval, e.g. 0.95.
    pub level: Option<f64>,
    pub n_used: usize,
    pub clusters_dropped: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EffectEstimate {
    pub fn new(method: Method, estimand: Estimand, point: f64, n_used: usize) -> Self {
        EffectEstimate {
            method,
            estimand,
            point,
            se: None,
            ci_low: None,
            ci_high: None,
            level: None,
            n_used,
            clusters_dropped: 0,
            warnings: Vec::new(),
        }
    }

    pub fn ci(&self) -> Option<(f64, f64)> {
        self.ci_low.zip(self.ci_high)
    }

    /// Wald interval `point ± z se` at `level`.
    pub fn with_wald(mut self, se: f64, level: f64) -> Self {
        let z = normal_quantile(0.5 + level / 2.0);
        self.se = Some(se);
        self.ci_low = Some(self.point - z * se);
        self.ci_high = Some(self.point + z * se);
        self.level = Some(level);
        self
    }
}

pub fn normal_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpwOptions {
    /// Conditional probabilities below this are flagged as extreme weights.
    pub prob_floor: f64,
    /// Caps weights at this upper quantile of the weight distribution; off by default.
    pub truncate_quantile: Option<f64>,
    pub state_cap: usize,
}

impl Default for IcpwOptions {
    fn default() -> Self {
        IcpwOptions {
            prob_floor: 1e-12,
            truncate_quantile: None,
            state_cap: DEFAULT_STATE_CAP,
        }
    }
}

/// Inverse conditional probability weights of the observed treatments, in unit order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    pub weights: Vec<f64>,
    pub probs: Vec<f64>,
}

pub fn weight_table(data: &Dataset, fit: &CondFit, options: &IcpwOptions) -> Result<WeightTable> {
    let mut weights = Vec::with_capacity(data.n());
    let mut probs = Vec::with_capacity(data.n());
    for c in data.clusters() {
        let cp = cluster_probs(c, data.max_level(), &fit.beta, options.state_cap)?;
        for (j, a) in c.treatments().enumerate() {
            let lp = cp.log_prob[j][a as usize];
            probs.push(lp.exp());
            weights.push((-lp).exp());
        }
    }
    Ok(WeightTable { weights, probs })
}

fn check_fit(data: &Dataset, fit: &CondFit) -> Result<()> {
    if fit.max_level != data.max_level() || fit.beta.len() != data.p() * data.max_level() as usize {
        return Err(IcpwError::Domain("fit does not match the dataset's design".into()));
    }
    if !fit.converged {
        return Err(IcpwError::NoConvergence(
            "treatment-model fit did not converge; refusing to weight with it".into(),
        ));
    }
    Ok(())
}

/// Per-unit conditional probabilities of level `a` at the fitted coefficients.
fn level_probs(data: &Dataset, fit: &CondFit, a: u32, state_cap: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.n());
    for c in data.clusters() {
        let cp = cluster_probs(c, data.max_level(), &fit.beta, state_cap)?;
        out.extend(cp.log_prob.iter().map(|row| row[a as usize].exp()));
    }
    Ok(out)
}

fn truncation_cap(weights: &[f64], q: Option<f64>) -> f64 {
    match q {
        Some(q) if !weights.is_empty() => {
            let mut w = weights.to_vec();
            w.sort_by(f64::total_cmp);
            quantile_sorted(&w, q)
        }
        _ => f64::INFINITY,
    }
}

/// `(1/n) sum 1{A = a} Y / P(A = a | X, T; beta_hat)`.
pub fn icpw_mean_potential(data: &Dataset, fit: &CondFit, a: u32, options: &IcpwOptions) -> Result<EffectEstimate> {
    check_fit(data, fit)?;
    if a > data.max_level() {
        return Err(IcpwError::Domain(format!("treatment level {a} out of range")));
    }
    let probs = level_probs(data, fit, a, options.state_cap)?;
    let mut warnings = Vec::new();
    let arm: Vec<(f64, f64)> = data
        .units()
        .zip(&probs)
        .filter(|(u, _)| u.treatment == a)
        .map(|(u, &p)| (u.outcome, p))
        .collect();
    let extreme = arm.iter().filter(|(_, p)| *p < options.prob_floor).count();
    if extreme > 0 {
        warnings.push(format!(
            "{extreme} units in arm {a} have conditional probability below {:e}",
            options.prob_floor
        ));
    }
    let weights: Vec<f64> = arm.iter().map(|(_, p)| 1.0 / p).collect();
    let cap = truncation_cap(&weights, options.truncate_quantile);
    let total: f64 = arm.iter().zip(&weights).map(|((y, _), w)| y * w.min(cap)).sum();
    let mut est = EffectEstimate::new(Method::Icpw, Estimand::MeanPotential(a), total / data.n() as f64, data.n());
    est.warnings = warnings;
    Ok(est)
}

/// Difference of the treated and control inverse-conditional-probability means.
pub fn icpw_tau(data: &Dataset, fit: &CondFit, options: &IcpwOptions) -> Result<EffectEstimate> {
    if !data.is_binary() {
        return Err(IcpwError::Unsupported("tau requires a binary treatment".into()));
    }
    let y1 = icpw_mean_potential(data, fit, 1, options)?;
    let y0 = icpw_mean_potential(data, fit, 0, options)?;
    let mut est = EffectEstimate::new(Method::Icpw, Estimand::Tau, y1.point - y0.point, data.n());
    est.warnings = y1.warnings.into_iter().chain(y0.warnings).collect();
    Ok(est)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NaiveVariant {
    /// `(1/n) sum {A Y - (1 - A) Y}`.
    #[default]
    Printed,
    /// Mean outcome of the treated minus mean outcome of the controls.
    GroupMeans,
}

pub fn naive_tau(data: &Dataset, variant: NaiveVariant) -> Result<EffectEstimate> {
    if !data.is_binary() {
        return Err(IcpwError::Unsupported("tau requires a binary treatment".into()));
    }
    let point = match variant {
        NaiveVariant::Printed => {
            data.units()
                .map(|u| if u.treatment == 1 { u.outcome } else { -u.outcome })
                .sum::<f64>()
                / data.n() as f64
        }
        NaiveVariant::GroupMeans => {
            let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
            for u in data.units() {
                if u.treatment == 1 {
                    s1 += u.outcome;
                    n1 += 1;
                } else {
                    s0 += u.outcome;
                    n0 += 1;
                }
            }
            s1 / n1 as f64 - s0 / n0 as f64
        }
    };
    Ok(EffectEstimate::new(Method::Naive, Estimand::Tau, point, data.n()))
}

/// Contrast of two potential-outcome means: difference, ratio, or odds ratio.
pub fn effect_contrast(p1: &EffectEstimate, p0: &EffectEstimate, kind: Estimand) -> Result<EffectEstimate> {
    let (a, b) = (p1.point, p0.point);
    let point = match kind {
        Estimand::RiskDifference | Estimand::Tau => a - b,
        Estimand::RelativeRisk => {
            if b <= 0.0 {
                return Err(IcpwError::Domain(format!("relative risk with denominator {b}")));
            }
            a / b
        }
        Estimand::OddsRatio => {
            if !(0.0 < a && a < 1.0 && 0.0 < b && b < 1.0) {
                return Err(IcpwError::Domain(format!("odds ratio needs means in (0, 1), got {a} and {b}")));
            }
            (a / (1.0 - a)) / (b / (1.0 - b))
        }
        Estimand::MeanPotential(_) => {
            return Err(IcpwError::Domain("a contrast cannot target a single mean".into()))
        }
    };
    let mut est = EffectEstimate::new(p1.method, kind, point, p1.n_used);
    est.clusters_dropped = p1.clusters_dropped;
    est.warnings = p1.warnings.iter().chain(&p0.warnings).cloned().collect();
    Ok(est)
}

/// Delta-method standard error of a contrast from the covariance `[[v11, v10], [v10, v00]]`
/// of the two means.
pub fn contrast_delta_se(kind: Estimand, p1: f64, p0: f64, cov: [[f64; 2]; 2]) -> Result<f64> {
    let (g1, g0) = match kind {
        Estimand::RiskDifference | Estimand::Tau => (1.0, -1.0),
        Estimand::RelativeRisk => (1.0 / p0, -p1 / (p0 * p0)),
        Estimand::OddsRatio => {
            let or = (p1 / (1.0 - p1)) / (p0 / (1.0 - p0));
            (or / (p1 * (1.0 - p1)), -or / (p0 * (1.0 - p0)))
        }
        Estimand::MeanPotential(_) => return Err(IcpwError::Domain("not a contrast".into())),
    };
    let v = g1 * g1 * cov[0][0] + 2.0 * g1 * g0 * cov[0][1] + g0 * g0 * cov[1][1];
    Ok(v.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::testutil::dataset;

    fn toy_fit() -> CondFit {
        CondFit {
            beta: vec![0.0],
            log_cond_lik: 0.0,
            iterations: 0,
            converged: true,
            grad_norm_at_solution: 0.0,
            beta_cov: None,
            max_level: 1,
            likelihood: crate::cmle::CondLikelihood::Joint,
        }
    }

    fn toy() -> Dataset {
        dataset(&[(vec![1, 0], vec![4.0, 2.0], vec![vec![0.5], vec![0.5]])])
    }

    #[test]
    fn hand_arithmetic() {
        let d = toy();
        let opts = IcpwOptions::default();
        let y1 = icpw_mean_potential(&d, &toy_fit(), 1, &opts).unwrap();
        let y0 = icpw_mean_potential(&d, &toy_fit(), 0, &opts).unwrap();
        assert!((y1.point - 4.0).abs() < 1e-15);
        assert!((y0.point - 2.0).abs() < 1e-15);
        let tau = icpw_tau(&d, &toy_fit(), &opts).unwrap();
        assert!((tau.point - 2.0).abs() < 1e-15);
        assert_eq!(tau.estimand, Estimand::Tau);
        assert_eq!(naive_tau(&d, NaiveVariant::Printed).unwrap().point, 1.0);
        assert_eq!(naive_tau(&d, NaiveVariant::GroupMeans).unwrap().point, 2.0);
    }

    #[test]
    fn zero_outcomes_zero_effect() {
        let d = dataset(&[
            (vec![1, 0, 1], vec![0.0; 3], vec![vec![0.1], vec![0.7], vec![-0.2]]),
            (vec![0, 1], vec![0.0; 2], vec![vec![1.0], vec![0.0]]),
        ]);
        let mut fit = toy_fit();
        fit.beta = vec![0.8];
        assert_eq!(icpw_tau(&d, &fit, &IcpwOptions::default()).unwrap().point, 0.0);
        assert_eq!(naive_tau(&d, NaiveVariant::Printed).unwrap().point, 0.0);
    }

    #[test]
    fn weights_invert_probabilities() {
        let d = dataset(&[
            (vec![1, 0, 1], vec![1.0; 3], vec![vec![0.1], vec![0.7], vec![-0.2]]),
            (vec![0, 1], vec![1.0; 2], vec![vec![1.0], vec![0.0]]),
        ]);
        let mut fit = toy_fit();
        fit.beta = vec![-1.3];
        let w = weight_table(&d, &fit, &IcpwOptions::default()).unwrap();
        for (w, p) in w.weights.iter().zip(&w.probs) {
            assert!(*w >= 1.0);
            assert!((w * p - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unconverged_fit_is_refused() {
        let mut fit = toy_fit();
        fit.converged = false;
        assert!(matches!(
            icpw_mean_potential(&toy(), &fit, 1, &IcpwOptions::default()),
            Err(IcpwError::NoConvergence(_))
        ));
    }

    #[test]
    fn truncation_caps_weights() {
        let d = dataset(&[
            (vec![1, 0, 0, 0], vec![10.0, 1.0, 1.0, 1.0], vec![vec![-3.0], vec![1.0], vec![1.0], vec![1.0]]),
            (vec![1, 1, 0], vec![1.0; 3], vec![vec![0.0], vec![0.5], vec![0.0]]),
        ]);
        let mut fit = toy_fit();
        fit.beta = vec![1.0];
        let plain = icpw_mean_potential(&d, &fit, 1, &IcpwOptions::default()).unwrap();
        let capped = icpw_mean_potential(
            &d,
            &fit,
            1,
            &IcpwOptions {
                truncate_quantile: Some(0.5),
                ..IcpwOptions::default()
            },
        )
        .unwrap();
        assert!(capped.point < plain.point);
    }

    #[test]
    fn contrasts() {
        let p1 = EffectEstimate::new(Method::Icpw, Estimand::MeanPotential(1), 0.6, 10);
        let p0 = EffectEstimate::new(Method::Icpw, Estimand::MeanPotential(0), 0.3, 10);
        let rd = effect_contrast(&p1, &p0, Estimand::RiskDifference).unwrap();
        assert!((rd.point - 0.3).abs() < 1e-15);
        let rr = effect_contrast(&p1, &p0, Estimand::RelativeRisk).unwrap();
        assert!((rr.point - 2.0).abs() < 1e-15);
        let half = EffectEstimate::new(Method::Icpw, Estimand::MeanPotential(1), 0.5, 10);
        let or = effect_contrast(&half, &half, Estimand::OddsRatio).unwrap();
        assert_eq!(or.point, 1.0);

        let zero = EffectEstimate::new(Method::Icpw, Estimand::MeanPotential(0), 0.0, 10);
        assert!(effect_contrast(&p1, &zero, Estimand::RelativeRisk).is_err());
        assert!(effect_contrast(&p1, &zero, Estimand::OddsRatio).is_err());
    }

    #[test]
    fn delta_method_for_difference_is_plain_variance() {
        let se = contrast_delta_se(Estimand::RiskDifference, 0.6, 0.3, [[0.04, 0.01], [0.01, 0.09]]).unwrap();
        assert!((se - (0.04f64 + 0.09 - 0.02).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn estimand_strings_round_trip() {
        for e in [
            Estimand::MeanPotential(2),
            Estimand::Tau,
            Estimand::RiskDifference,
            Estimand::RelativeRisk,
            Estimand::OddsRatio,
        ] {
            assert_eq!(e.to_string().parse::<Estimand>().unwrap(), e);
        }
        let est = EffectEstimate::new(Method::IpwRandom, Estimand::MeanPotential(1), 1.5, 3);
        let json = serde_json::to_string(&est).unwrap();
        assert!(json.contains("\"mean_potential(1)\""));
        assert!(json.contains("\"ipw_random\""));
        assert_eq!(serde_json::from_str::<EffectEstimate>(&json).unwrap(), est);
    }

    #[test]
    fn wald_interval_contains_point() {
        let e = EffectEstimate::new(Method::Icpw, Estimand::Tau, 2.0, 5).with_wald(0.5, 0.95);
        let (lo, hi) = e.ci().unwrap();
        assert!(lo < 2.0 && 2.0 < hi);
        assert!((hi - 2.0 - 1.959963984540054 * 0.5).abs() < 1e-9);
    }
}
