//! Sandwich variances for the conditional-likelihood fit and the weighted estimators, and
//! the cluster bootstrap.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cmle::{cluster_probs, cluster_terms, score_jacobian, CondFit};
use crate::data::Dataset;
use crate::error::{IcpwError, Result};
use crate::estimators::{contrast_delta_se, EffectEstimate, Estimand};
use crate::numeric::{mean, quantile_sorted, sample_sd};
use crate::pipeline::Recipe;

/// Condition number of `B2` beyond which the sandwich is refused.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichParts {
    /// Average Hessian of the unit conditional log-probabilities.
    pub b2: DMatrix<f64>,
    /// Average outer product of cluster score sums.
    pub b3: DMatrix<f64>,
    /// `B2^-1 B3 B2^-1`.
    pub b1: DMatrix<f64>,
    pub h1: Option<Vec<f64>>,
    pub h2: Option<Vec<f64>>,
    pub v1: Option<f64>,
    pub v2: Option<f64>,
}

impl SandwichParts {
    /// `H' B1 H`.
    pub fn quadratic(&self, h: &[f64]) -> f64 {
        let h = DVector::from_column_slice(h);
        (h.transpose() * &self.b1 * &h)[(0, 0)]
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Inverse of a symmetric matrix through its eigendecomposition.
fn symmetric_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let abs: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
    let (imin, min) = abs
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| IcpwError::Domain("empty matrix".into()))?;
    let max = abs.iter().copied().fold(0.0, f64::max);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if condition > MAX_CONDITION {
        return Err(IcpwError::Singular {
            condition,
            direction: eig.eigenvectors.column(imin).iter().copied().collect(),
        });
    }
    let inv_vals = eig.eigenvalues.map(|v| 1.0 / v);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose())
}

/// Empirical `B2`, `B3`, `B1` at the fitted coefficients.
pub fn sandwich_beta_cov(data: &Dataset, fit: &CondFit, fd_step: f64, state_cap: usize) -> Result<SandwichParts> {
    if !fit.converged {
        return Err(IcpwError::NoConvergence("sandwich needs a converged fit".into()));
    }
    let n = data.n() as f64;
    let dim = fit.beta.len();
    let b2 = score_jacobian(data, &fit.beta, fit.likelihood, fd_step, state_cap)? / n;
    let mut b3 = DMatrix::<f64>::zeros(dim, dim);
    for term in cluster_terms(data, &fit.beta, fit.likelihood, state_cap)? {
        let s = DVector::from_column_slice(&term.score);
        b3 += &s * s.transpose();
    }
    b3 /= n;
    let inv = symmetric_inverse(&b2)?;
    let b1 = symmetrize(&(&inv * &b3 * &inv));
    Ok(SandwichParts {
        b2,
        b3,
        b1,
        h1: None,
        h2: None,
        v1: None,
        v2: None,
    })
}

/// Attaches `B1 / n` as the coefficient covariance.
pub fn attach_covariance(data: &Dataset, fit: &mut CondFit, fd_step: f64, state_cap: usize) -> Result<SandwichParts> {
    let parts = sandwich_beta_cov(data, fit, fd_step, state_cap)?;
    fit.beta_cov = Some(&parts.b1 / data.n() as f64);
    Ok(parts)
}

/// `H1(a) = (1/n) sum 1{A = a} Y / phi^2 * d phi / d beta`; the derivative of the weighted
/// mean with respect to `beta` is `-H1(a)`.
pub fn influence_h1(data: &Dataset, fit: &CondFit, a: u32, state_cap: usize) -> Result<Vec<f64>> {
    let dim = fit.beta.len();
    let mut h = vec![0.0; dim];
    for c in data.clusters() {
        let probs = cluster_probs(c, data.max_level(), &fit.beta, state_cap)?;
        for (j, u) in c.units().iter().enumerate() {
            if u.treatment != a {
                continue;
            }
            // Y / phi^2 * d phi = Y / phi * d log phi
            let w = u.outcome * (-probs.log_prob[j][a as usize]).exp();
            for (s, g) in h.iter_mut().zip(&probs.grad[j][a as usize]) {
                *s += w * g;
            }
        }
    }
    let n = data.n() as f64;
    Ok(h.into_iter().map(|v| v / n).collect())
}

/// Fills `H1`/`V1` for a mean (`Some(a)`) or `H2`/`V2` for the binary contrast (`None`).
pub fn influence_vectors(
    data: &Dataset,
    fit: &CondFit,
    parts: &mut SandwichParts,
    level: Option<u32>,
    state_cap: usize,
) -> Result<()> {
    match level {
        Some(a) => {
            let h = influence_h1(data, fit, a, state_cap)?;
            parts.v1 = Some(clamp_variance(parts.quadratic(&h))?);
            parts.h1 = Some(h);
        }
        None => {
            if !data.is_binary() {
                return Err(IcpwError::Unsupported("H2 needs a binary treatment".into()));
            }
            let h1 = influence_h1(data, fit, 1, state_cap)?;
            let h0 = influence_h1(data, fit, 0, state_cap)?;
            let h: Vec<f64> = h1.iter().zip(&h0).map(|(x, y)| x - y).collect();
            parts.v2 = Some(clamp_variance(parts.quadratic(&h))?);
            parts.h2 = Some(h);
        }
    }
    Ok(())
}

fn clamp_variance(v: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v > -1e-10 {
        Ok(0.0)
    } else {
        Err(IcpwError::Numerical(format!("negative asymptotic variance {v:e}")))
    }
}

/// `sqrt(V / n)`.
pub fn asymptotic_se(v: f64, n: usize) -> Result<f64> {
    Ok((clamp_variance(v)? / n as f64).sqrt())
}

/// Sandwich standard error of an ICPW mean (`Some(a)`) or of tau (`None`).
pub fn icpw_asymptotic_se(data: &Dataset, fit: &CondFit, level: Option<u32>, fd_step: f64, state_cap: usize) -> Result<f64> {
    let mut parts = sandwich_beta_cov(data, fit, fd_step, state_cap)?;
    influence_vectors(data, fit, &mut parts, level, state_cap)?;
    let v = parts.v1.or(parts.v2).expect("filled above");
    asymptotic_se(v, data.n())
}

/// Standard error from the stacked estimating equations of `beta` and the weighted mean
/// (`Some(a)`) or tau (`None`). The cluster influence values `psi_i - n_i * est + H' B2^-1 s_i`
/// carry the sampling variability of the weighted sum itself, which `V = H' B1 H` leaves out.
pub fn icpw_stacked_se(data: &Dataset, fit: &CondFit, level: Option<u32>, fd_step: f64, state_cap: usize) -> Result<f64> {
    if level.is_none() && !data.is_binary() {
        return Err(IcpwError::Unsupported("tau needs a binary treatment".into()));
    }
    let parts = sandwich_beta_cov(data, fit, fd_step, state_cap)?;
    let h = match level {
        Some(a) => influence_h1(data, fit, a, state_cap)?,
        None => {
            let h1 = influence_h1(data, fit, 1, state_cap)?;
            let h0 = influence_h1(data, fit, 0, state_cap)?;
            h1.iter().zip(&h0).map(|(x, y)| x - y).collect()
        }
    };
    let n = data.n() as f64;
    // beta_hat - beta ~ -(n B2)^-1 sum s_i and d est / d beta = -H.
    let slope = symmetric_inverse(&parts.b2)? * DVector::from_column_slice(&h);
    let mut sums = Vec::with_capacity(data.m());
    for c in data.clusters() {
        let probs = cluster_probs(c, data.max_level(), &fit.beta, state_cap)?;
        let mut psi = 0.0;
        for (j, u) in c.units().iter().enumerate() {
            let w = (-probs.log_prob[j][u.treatment as usize]).exp();
            psi += match level {
                Some(a) if u.treatment == a => u.outcome * w,
                Some(_) => 0.0,
                None if u.treatment == 1 => u.outcome * w,
                None => -u.outcome * w,
            };
        }
        sums.push((psi, c.size() as f64));
    }
    let point = sums.iter().map(|s| s.0).sum::<f64>() / n;
    let terms = cluster_terms(data, &fit.beta, fit.likelihood, state_cap)?;
    let var: f64 = sums
        .iter()
        .zip(&terms)
        .map(|((psi, size), t)| {
            let adj = slope.iter().zip(&t.score).map(|(a, b)| a * b).sum::<f64>();
            (psi - size * point + adj).powi(2)
        })
        .sum::<f64>()
        / (n * n);
    Ok(var.sqrt())
}

/// Resamples `m` cluster indices with replacement from replicate `r`'s own stream.
pub fn resample_indices(m: usize, seed: u64, replicate: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    (0..m).map(|_| rng.random_range(0..m)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    /// Full-data estimate with bootstrap se and percentile interval.
    pub estimate: EffectEstimate,
    /// Replicate estimates in replicate order; `None` where the refit failed.
    pub replicates: Vec<Option<f64>>,
    /// ICPW arm means per replicate, when the recipe yields them.
    pub arm_means: Vec<Option<(f64, f64)>>,
    pub failed: usize,
}

/// Cluster bootstrap of a full recipe: every replicate refilters, refits and re-estimates.
pub fn cluster_bootstrap(data: &Dataset, recipe: &Recipe, b: usize, seed: u64, level: f64) -> Result<BootstrapResult> {
    if b < 2 {
        return Err(IcpwError::Domain("the bootstrap needs at least 2 replicates".into()));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(IcpwError::Domain(format!("confidence level {level} outside (0, 1)")));
    }
    let base = recipe.run_detailed(data)?;
    let m = data.m();
    let runs: Vec<Option<(f64, Option<(f64, f64)>)>> = (0..b as u64)
        .into_par_iter()
        .map(|r| {
            let clusters = resample_indices(m, seed, r)
                .into_iter()
                .enumerate()
                .map(|(k, i)| data.clusters()[i].relabeled(format!("b{k}")))
                .collect();
            let resampled = data.with_clusters(clusters).ok()?;
            let out = recipe.run_detailed(&resampled).ok()?;
            out.estimate.point.is_finite().then_some((out.estimate.point, out.arm_means))
        })
        .collect();

    let failed = runs.iter().filter(|r| r.is_none()).count();
    if failed as f64 > 0.2 * b as f64 {
        return Err(IcpwError::BootstrapUnreliable { failed, total: b });
    }
    let values: Vec<f64> = runs.iter().flatten().map(|r| r.0).collect();
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    let mut estimate = base.estimate;
    estimate.se = Some(sample_sd(&values));
    estimate.ci_low = Some(quantile_sorted(&sorted, alpha / 2.0));
    estimate.ci_high = Some(quantile_sorted(&sorted, 1.0 - alpha / 2.0));
    estimate.level = Some(level);

    let arm_means: Vec<Option<(f64, f64)>> = runs.iter().map(|r| r.and_then(|x| x.1)).collect();
    if matches!(estimate.estimand, Estimand::RelativeRisk | Estimand::OddsRatio) {
        if let Some((p1, p0)) = base.arm_means {
            let pairs: Vec<(f64, f64)> = arm_means.iter().flatten().copied().collect();
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let (mx, my) = (mean(&x), mean(&y));
            let k = (pairs.len().max(2) - 1) as f64;
            let cxy = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / k;
            let cov = [[sample_sd(&x).powi(2), cxy], [cxy, sample_sd(&y).powi(2)]];
            estimate.se = Some(contrast_delta_se(estimate.estimand, p1, p0, cov)?);
        }
    }
    if failed > 0 {
        estimate
            .warnings
            .push(format!("{failed} of {b} bootstrap replicates failed and were excluded"));
    }
    Ok(BootstrapResult {
        estimate,
        replicates: runs.iter().map(|r| r.map(|x| x.0)).collect(),
        arm_means,
        failed,
    })
}
