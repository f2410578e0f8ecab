//! Inverse-propensity comparators built on logistic treatment models with a fixed or a
//! random cluster intercept.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmle::{ascent_direction, check_identified};
use crate::data::{Cluster, Dataset};
use crate::error::{IcpwError, Result};
use crate::estimators::{EffectEstimate, Estimand, Method};
use crate::numeric::{dot, log1p_exp, log_sum_exp, logistic};

/// Propensities below this (or above one minus it) trigger an extreme-weight warning.
pub const PROPENSITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityKind {
    FixedEffect,
    RandomIntercept,
}

/// Cluster effect plugged into random-intercept propensities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionRule {
    /// Empirical-Bayes posterior mode of each cluster's intercept.
    PosteriorMode,
    /// Cluster intercept set to its mean, zero.
    #[default]
    Marginal,
}

impl fmt::Display for PredictionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredictionRule::PosteriorMode => "posterior_mode",
            PredictionRule::Marginal => "marginal",
        })
    }
}

impl FromStr for PredictionRule {
    type Err = IcpwError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "posterior_mode" | "mode" => Ok(PredictionRule::PosteriorMode),
            "marginal" => Ok(PredictionRule::Marginal),
            other => Err(IcpwError::Domain(format!(
                "unknown prediction rule `{other}` (expected posterior_mode or marginal)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityFit {
    pub kind: PropensityKind,
    /// Global intercept; zero for the fixed-effect model, where it is absorbed in the
    /// cluster effects.
    pub intercept: f64,
    pub beta: Vec<f64>,
    /// Fixed-effect estimates, or posterior modes of the random intercepts.
    pub cluster_effects: Vec<f64>,
    /// Random-intercept variance; zero for the fixed-effect model.
    pub variance_component: f64,
    pub converged: bool,
    pub iterations: usize,
    pub log_lik: f64,
    /// Log-likelihood after each accepted optimizer step, starting value first.
    pub loglik_trace: Vec<f64>,
    pub prediction: PredictionRule,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl PropensityFit {
    /// `P(A = 1)` for every unit of `data`, in unit order. `data` must be the fitted dataset.
    pub fn propensities(&self, data: &Dataset) -> Result<Vec<f64>> {
        if data.m() != self.cluster_effects.len() || data.p() != self.beta.len() {
            return Err(IcpwError::Domain("propensity fit does not match the dataset".into()));
        }
        let use_effects = self.kind == PropensityKind::FixedEffect
            || self.prediction == PredictionRule::PosteriorMode;
        let mut out = Vec::with_capacity(data.n());
        for (c, u) in data.clusters().iter().zip(&self.cluster_effects) {
            let shift = self.intercept + if use_effects { *u } else { 0.0 };
            out.extend(c.units().iter().map(|r| logistic(shift + dot(&r.covariates, &self.beta))));
        }
        Ok(out)
    }
}

fn require_binary(data: &Dataset) -> Result<()> {
    if data.is_binary() {
        Ok(())
    } else {
        Err(IcpwError::Unsupported(
            "logistic propensity models need a binary treatment".into(),
        ))
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEffectOptions {
    pub max_iter: usize,
    /// Converged once the largest absolute score entry is at most this.
    pub tol: f64,
    /// Parameter max-norm beyond which the fit is declared separated.
    pub separation_bound: f64,
}

impl Default for FixedEffectOptions {
    fn default() -> Self {
        FixedEffectOptions {
            max_iter: 100,
            tol: 1e-8,
            separation_bound: 1e3,
        }
    }
}

struct FixedEval {
    ll: f64,
    g_beta: Vec<f64>,
    g_u: Vec<f64>,
    /// Information blocks: `sum w x x'`, per-cluster `sum w x`, per-cluster `sum w`.
    a: DMatrix<f64>,
    b: Vec<Vec<f64>>,
    d: Vec<f64>,
}

fn fixed_eval(data: &Dataset, beta: &[f64], u: &[f64]) -> FixedEval {
    let p = data.p();
    let mut e = FixedEval {
        ll: 0.0,
        g_beta: vec![0.0; p],
        g_u: vec![0.0; data.m()],
        a: DMatrix::zeros(p, p),
        b: vec![vec![0.0; p]; data.m()],
        d: vec![0.0; data.m()],
    };
    for (i, c) in data.clusters().iter().enumerate() {
        for r in c.units() {
            let eta = u[i] + dot(&r.covariates, beta);
            let a = r.treatment as f64;
            e.ll += a * eta - log1p_exp(eta);
            let pi = logistic(eta);
            let w = pi * (1.0 - pi);
            e.g_u[i] += a - pi;
            e.d[i] += w;
            for k in 0..p {
                e.g_beta[k] += (a - pi) * r.covariates[k];
                e.b[i][k] += w * r.covariates[k];
                for l in 0..p {
                    e.a[(k, l)] += w * r.covariates[k] * r.covariates[l];
                }
            }
        }
    }
    e
}

/// Newton step for the arrow-shaped information matrix, eliminating the cluster
/// intercepts through the Schur complement.
fn fixed_newton_step(e: &FixedEval) -> (Vec<f64>, Vec<f64>) {
    let p = e.g_beta.len();
    let mut schur = e.a.clone();
    let mut rhs = DVector::from_column_slice(&e.g_beta);
    for ((b, &d), &g) in e.b.iter().zip(&e.d).zip(&e.g_u) {
        let d = d.max(1e-300);
        for k in 0..p {
            rhs[k] -= b[k] * g / d;
            for l in 0..p {
                schur[(k, l)] -= b[k] * b[l] / d;
            }
        }
    }
    let d_beta = ascent_direction(&(-schur), rhs.as_slice());
    let d_u = e
        .b
        .iter()
        .zip(&e.d)
        .zip(&e.g_u)
        .map(|((b, &d), &g)| (g - dot(b, &d_beta)) / d.max(1e-300))
        .collect();
    (d_beta, d_u)
}

/// Maximum likelihood for the logistic model with one free intercept per cluster.
pub fn fit_fixed_logistic(data: &Dataset, options: &FixedEffectOptions) -> Result<PropensityFit> {
    require_binary(data)?;
    check_identified(data)?;
    let mut u = Vec::with_capacity(data.m());
    for c in data.clusters() {
        let t = c.treatments().sum::<u32>() as f64;
        let n = c.size() as f64;
        if t == 0.0 || t == n {
            return Err(IcpwError::Separation(format!(
                "cluster `{}` has constant treatment; its intercept diverges",
                c.id()
            )));
        }
        u.push((t / (n - t)).ln());
    }
    let mut beta = vec![0.0; data.p()];
    let mut e = fixed_eval(data, &beta, &u);
    let mut trace = vec![e.ll];
    let mut converged = max_abs(&e.g_beta).max(max_abs(&e.g_u)) <= options.tol;
    let mut iterations = 0;
    while !converged && iterations < options.max_iter {
        iterations += 1;
        let (db, du) = fixed_newton_step(&e);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let nb: Vec<f64> = beta.iter().zip(&db).map(|(b, d)| b + alpha * d).collect();
            let nu: Vec<f64> = u.iter().zip(&du).map(|(b, d)| b + alpha * d).collect();
            let ne = fixed_eval(data, &nb, &nu);
            if ne.ll.is_finite() && ne.ll >= e.ll {
                accepted = Some((nb, nu, ne));
                break;
            }
            alpha *= 0.5;
        }
        let Some((nb, nu, ne)) = accepted else {
            converged = max_abs(&e.g_beta).max(max_abs(&e.g_u)) <= options.tol.sqrt();
            break;
        };
        let rel = (ne.ll - e.ll).abs() / e.ll.abs().max(f64::MIN_POSITIVE);
        beta = nb;
        u = nu;
        e = ne;
        trace.push(e.ll);
        let norm = max_abs(&beta).max(max_abs(&u));
        if norm > options.separation_bound {
            return Err(IcpwError::Separation(format!(
                "fixed-effect parameter max-norm {norm:.3e} exceeds {:.1e}",
                options.separation_bound
            )));
        }
        let g = max_abs(&e.g_beta).max(max_abs(&e.g_u));
        converged = g <= options.tol || (rel <= 1e-14 && g <= options.tol.sqrt());
    }
    Ok(PropensityFit {
        kind: PropensityKind::FixedEffect,
        intercept: 0.0,
        beta,
        cluster_effects: u,
        variance_component: 0.0,
        converged,
        iterations,
        log_lik: e.ll,
        loglik_trace: trace,
        prediction: PredictionRule::PosteriorMode,
        warnings: Vec::new(),
    })
}

/// Ordinary logistic regression with a single intercept. Returns `(intercept, beta, loglik)`.
pub fn fit_pooled_logistic(data: &Dataset) -> Result<(f64, Vec<f64>, f64)> {
    require_binary(data)?;
    let dim = data.p() + 1;
    let eval = |theta: &[f64]| {
        let mut ll = 0.0;
        let mut g = vec![0.0; dim];
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        for r in data.units() {
            let v: Vec<f64> = std::iter::once(1.0).chain(r.covariates.iter().copied()).collect();
            let eta = dot(&v, theta);
            let a = r.treatment as f64;
            ll += a * eta - log1p_exp(eta);
            let pi = logistic(eta);
            for k in 0..dim {
                g[k] += (a - pi) * v[k];
                for l in 0..dim {
                    h[(k, l)] -= pi * (1.0 - pi) * v[k] * v[l];
                }
            }
        }
        (ll, g, h)
    };
    let mut theta = vec![0.0; dim];
    let (mut ll, mut g, mut h) = eval(&theta);
    for _ in 0..100 {
        if max_abs(&g) <= 1e-10 {
            break;
        }
        let d = ascent_direction(&h, &g);
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&d).map(|(t, d)| t + alpha * d).collect();
            let next = eval(&cand);
            if next.0 >= ll {
                theta = cand;
                (ll, g, h) = next;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            break;
        }
        if max_abs(&theta) > 1e3 {
            return Err(IcpwError::Separation("pooled logistic coefficients diverge".into()));
        }
    }
    Ok((theta[0], theta[1..].to_vec(), ll))
}

/// Gauss-Hermite rule for the weight `exp(-x^2)`, by the Golub-Welsch eigenvalue method.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(IcpwError::Domain("quadrature needs at least one node".into()));
        }
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let off = (k as f64 / 2.0).sqrt();
            jacobi[(k - 1, k)] = off;
            jacobi[(k, k - 1)] = off;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|k| {
                let v0 = eig.eigenvectors[(0, k)];
                (eig.eigenvalues[k], std::f64::consts::PI.sqrt() * v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(GaussHermite {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomInterceptOptions {
    /// Adaptive Gauss-Hermite nodes per cluster.
    pub nodes: usize,
    pub max_iter: usize,
    /// Converged once the largest absolute score entry is at most this.
    pub tol: f64,
    pub prediction: PredictionRule,
}

impl Default for RandomInterceptOptions {
    fn default() -> Self {
        RandomInterceptOptions {
            nodes: 15,
            max_iter: 200,
            tol: 1e-6,
            prediction: PredictionRule::Marginal,
        }
    }
}

/// `d eta / d theta` for a unit with covariates `x` at standardized intercept `z`.
fn unit_features(x: &[f64], z: f64) -> impl Iterator<Item = f64> + '_ {
    std::iter::once(1.0).chain(x.iter().copied()).chain(std::iter::once(z))
}

/// Quadrature evaluation of one cluster's marginal likelihood.
struct ClusterQuad {
    log_lik: f64,
    grad: Vec<f64>,
    hess: DMatrix<f64>,
    /// Posterior mode of the standardized intercept.
    mode: f64,
}

/// `theta = (alpha, beta, sigma)` with linear predictor `alpha + x'beta + sigma z`,
/// `z ~ N(0, 1)`.
fn cluster_quad(c: &Cluster, theta: &[f64], gh: &GaussHermite) -> ClusterQuad {
    let dim = theta.len();
    let p = dim - 2;
    let sigma = theta[dim - 1];
    let lin: Vec<f64> = c
        .units()
        .iter()
        .map(|r| theta[0] + dot(&r.covariates, &theta[1..=p]))
        .collect();
    let a: Vec<f64> = c.treatments().map(f64::from).collect();
    let h = |z: f64| -> f64 {
        lin.iter()
            .zip(&a)
            .map(|(l, a)| {
                let eta = l + sigma * z;
                a * eta - log1p_exp(eta)
            })
            .sum::<f64>()
            - 0.5 * z * z
    };
    let derivs = |z: f64| -> (f64, f64) {
        let (mut d1, mut d2) = (-z, -1.0);
        for (l, a) in lin.iter().zip(&a) {
            let pi = logistic(l + sigma * z);
            d1 += sigma * (a - pi);
            d2 -= sigma * sigma * pi * (1.0 - pi);
        }
        (d1, d2)
    };

    // h is strictly concave, so safeguarded Newton finds the mode.
    let mut z = 0.0;
    let mut hz = h(z);
    for _ in 0..100 {
        let (d1, d2) = derivs(z);
        if d1.abs() <= 1e-12 {
            break;
        }
        let mut step = -d1 / d2;
        loop {
            let cand = z + step;
            let hc = h(cand);
            if hc >= hz || step.abs() < 1e-14 {
                z = cand;
                hz = hc;
                break;
            }
            step *= 0.5;
        }
    }
    let curvature = -derivs(z).1;
    let scale = (2.0 / curvature).sqrt();

    let pts: Vec<f64> = gh.nodes.iter().map(|x| z + scale * x).collect();
    let log_terms: Vec<f64> = gh
        .nodes
        .iter()
        .zip(&gh.weights)
        .zip(&pts)
        .map(|((x, w), zk)| w.ln() + x * x + h(*zk))
        .collect();
    let lse = log_sum_exp(&log_terms);
    let log_lik = -0.5 * (2.0 * std::f64::consts::PI).ln() + scale.ln() + lse;

    // Node movement: the mode and the scale depend on theta through h' = 0 and h''.
    let mut dh1 = vec![0.0; dim];
    let mut dh2 = vec![0.0; dim];
    let (mut sw, mut sw1) = (0.0, 0.0);
    for ((r, l), a) in c.units().iter().zip(&lin).zip(&a) {
        let pi = logistic(l + sigma * z);
        let w = pi * (1.0 - pi);
        let w1 = w * (1.0 - 2.0 * pi);
        sw += w;
        sw1 += w1;
        for (k, f) in unit_features(&r.covariates, z).enumerate() {
            dh1[k] -= sigma * w * f;
            dh2[k] -= sigma * sigma * w1 * f;
        }
        dh1[dim - 1] += a - pi;
    }
    dh2[dim - 1] -= 2.0 * sigma * sw;
    let h3 = -sigma.powi(3) * sw1;
    let dmode: Vec<f64> = dh1.iter().map(|v| v / curvature).collect();
    let dscale: Vec<f64> = dh2
        .iter()
        .zip(&dmode)
        .map(|(b, dz)| 0.5 * scale / curvature * (b + h3 * dz))
        .collect();

    let mut grad: Vec<f64> = dscale.iter().map(|d| d / scale).collect();
    let mut second = DMatrix::<f64>::zeros(dim, dim);
    let mut outer = DMatrix::<f64>::zeros(dim, dim);
    let mut fixed = vec![0.0; dim];
    for ((zk, lt), x) in pts.iter().zip(&log_terms).zip(&gh.nodes) {
        let omega = (lt - lse).exp();
        let mut gk = vec![0.0; dim];
        let mut slope = -zk;
        for ((r, l), a) in c.units().iter().zip(&lin).zip(&a) {
            let pi = logistic(l + sigma * zk);
            let w = pi * (1.0 - pi);
            slope += sigma * (a - pi);
            let v: Vec<f64> = unit_features(&r.covariates, *zk).collect();
            for k in 0..dim {
                gk[k] += (a - pi) * v[k];
                for m in 0..dim {
                    second[(k, m)] -= omega * w * v[k] * v[m];
                }
            }
        }
        for k in 0..dim {
            fixed[k] += omega * gk[k];
            grad[k] += omega * (gk[k] + slope * (dmode[k] + x * dscale[k]));
            for m in 0..dim {
                outer[(k, m)] += omega * gk[k] * gk[m];
            }
        }
    }
    // Newton matrix from the fixed-node approximation; the gradient above is exact.
    let g = DVector::from_column_slice(&fixed);
    let hess = second + outer - &g * g.transpose();
    ClusterQuad {
        log_lik,
        grad,
        hess,
        mode: z,
    }
}

fn marginal_eval(data: &Dataset, theta: &[f64], gh: &GaussHermite) -> Vec<ClusterQuad> {
    data.clusters().par_iter().map(|c| cluster_quad(c, theta, gh)).collect()
}

fn sum_loglik(q: &[ClusterQuad]) -> f64 {
    q.iter().map(|c| c.log_lik).sum()
}

/// Marginal maximum likelihood for the logistic model with a normal random intercept,
/// integrated by adaptive Gauss-Hermite quadrature.
pub fn fit_random_logistic(data: &Dataset, options: &RandomInterceptOptions) -> Result<PropensityFit> {
    require_binary(data)?;
    let gh = GaussHermite::new(options.nodes)?;
    let p = data.p();
    let dim = p + 2;
    let (a0, b0, _) = fit_pooled_logistic(data)?;
    let mut theta: Vec<f64> = std::iter::once(a0).chain(b0).chain(std::iter::once(1.0)).collect();

    let mut quads = marginal_eval(data, &theta, &gh);
    let mut ll = sum_loglik(&quads);
    let mut trace = vec![ll];
    let totals = |q: &[ClusterQuad]| {
        let mut g = vec![0.0; dim];
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        for c in q {
            for (s, v) in g.iter_mut().zip(&c.grad) {
                *s += v;
            }
            h += &c.hess;
        }
        (g, h)
    };
    let (mut g, mut h) = totals(&quads);
    let mut converged = max_abs(&g) <= options.tol;
    let mut iterations = 0;
    while !converged && iterations < options.max_iter {
        iterations += 1;
        let dir = ascent_direction(&h, &g);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + alpha * d).collect();
            let q = marginal_eval(data, &cand, &gh);
            let l = sum_loglik(&q);
            if l.is_finite() && l >= ll {
                accepted = Some((cand, q, l));
                break;
            }
            alpha *= 0.5;
        }
        let Some((cand, q, l)) = accepted else {
            converged = max_abs(&g) <= options.tol.sqrt();
            break;
        };
        let rel = (l - ll).abs() / ll.abs().max(f64::MIN_POSITIVE);
        theta = cand;
        quads = q;
        ll = l;
        trace.push(ll);
        (g, h) = totals(&quads);
        if max_abs(&theta) > 1e3 {
            return Err(IcpwError::Separation("random-intercept coefficients diverge".into()));
        }
        converged = max_abs(&g) <= options.tol || (rel <= 1e-13 && max_abs(&g) <= options.tol.sqrt());
    }

    let sigma = theta[dim - 1];
    let variance = sigma * sigma;
    let mut warnings = Vec::new();
    if variance < 1e-6 {
        warnings.push(format!(
            "random-intercept variance {variance:.2e} is at the boundary; the model collapses to pooled logistic"
        ));
    }
    if !converged {
        warnings.push(format!("random-intercept fit did not converge in {iterations} iterations"));
    }
    Ok(PropensityFit {
        kind: PropensityKind::RandomIntercept,
        intercept: theta[0],
        beta: theta[1..=p].to_vec(),
        cluster_effects: quads.iter().map(|q| sigma * q.mode).collect(),
        variance_component: variance,
        converged,
        iterations,
        log_lik: ll,
        loglik_trace: trace,
        prediction: options.prediction,
        warnings,
    })
}

/// `(1/n) sum {A Y / e - (1 - A) Y / (1 - e)}` with `e` the fitted propensity.
pub fn ipw_tau_from_propensity(data: &Dataset, fit: &PropensityFit) -> Result<EffectEstimate> {
    require_binary(data)?;
    if !fit.converged {
        return Err(IcpwError::NoConvergence(
            "propensity fit did not converge; refusing to weight with it".into(),
        ));
    }
    let e = fit.propensities(data)?;
    let mut total = 0.0;
    let mut extreme = 0;
    for (r, &pi) in data.units().zip(&e) {
        let own = if r.treatment == 1 { pi } else { 1.0 - pi };
        if own < PROPENSITY_FLOOR {
            extreme += 1;
        }
        total += if r.treatment == 1 { r.outcome / pi } else { -r.outcome / (1.0 - pi) };
    }
    let method = match fit.kind {
        PropensityKind::FixedEffect => Method::IpwFixed,
        PropensityKind::RandomIntercept => Method::IpwRandom,
    };
    let mut est = EffectEstimate::new(method, Estimand::Tau, total / data.n() as f64, data.n());
    est.warnings = fit.warnings.clone();
    if extreme > 0 {
        est.warnings.push(format!(
            "{extreme} units have propensity of their observed arm below {PROPENSITY_FLOOR:e}"
        ));
    }
    Ok(est)
}
