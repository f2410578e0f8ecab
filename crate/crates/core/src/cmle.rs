//! Conditional maximum likelihood for the treatment-model coefficients.
//!
//! Two objectives are available. [`CondLikelihood::Composite`] multiplies the per-unit
//! probabilities `P(A_ij = a_ij | X_i, T_i; beta)` over all units;
//! [`CondLikelihood::Joint`] multiplies the probabilities `P(A_i = a_i | X_i, T_i; beta)` of
//! each cluster's whole treatment vector (classical conditional logistic regression).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use std::fmt;
use std::str::FromStr;

use crate::cond_prob::{
    cluster_cond_probs_with_cap, cond_prob_vector, ClusterProbs, LinearPredictors, DEFAULT_STATE_CAP,
};
use crate::data::{sufficient_stat, Cluster, Dataset};
use crate::error::{IcpwError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CondLikelihood {
    /// Product of per-unit conditional probabilities.
    Composite,
    /// Product of per-cluster conditional probabilities of the treatment vector.
    #[default]
    Joint,
}

impl fmt::Display for CondLikelihood {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CondLikelihood::Composite => "composite",
            CondLikelihood::Joint => "joint",
        })
    }
}

impl FromStr for CondLikelihood {
    type Err = IcpwError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "composite" => Ok(CondLikelihood::Composite),
            "joint" => Ok(CondLikelihood::Joint),
            other => Err(IcpwError::Domain(format!(
                "unknown likelihood `{other}` (expected joint or composite)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmleOptions {
    pub likelihood: CondLikelihood,
    pub max_iter: usize,
    /// Converged once the largest absolute score entry is at most this.
    pub score_tol: f64,
    /// Converged once the relative log-likelihood change is at most this (and the score
    /// is below `sqrt(score_tol)`).
    pub rel_tol: f64,
    /// Coefficient max-norm beyond which the fit is declared separated.
    pub separation_bound: f64,
    /// Relative step of the central-difference Hessian.
    pub fd_step: f64,
    pub state_cap: usize,
    /// Starting coefficients; zero when absent.
    #[serde(default)]
    pub start: Option<Vec<f64>>,
}

impl Default for CmleOptions {
    fn default() -> Self {
        CmleOptions {
            likelihood: CondLikelihood::default(),
            max_iter: 100,
            score_tol: 1e-8,
            rel_tol: 1e-12,
            separation_bound: 1e3,
            fd_step: 1e-5,
            state_cap: DEFAULT_STATE_CAP,
            start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CondFit {
    /// `K` blocks of `p` coefficients.
    pub beta: Vec<f64>,
    pub log_cond_lik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Max-norm of the score at `beta`.
    pub grad_norm_at_solution: f64,
    /// Sandwich covariance of `beta`; attached by [`crate::inference::attach_covariance`].
    pub beta_cov: Option<DMatrix<f64>>,
    pub max_level: u32,
    pub likelihood: CondLikelihood,
}

/// Conditional probabilities of one cluster at `beta`.
pub fn cluster_probs(cluster: &Cluster, max_level: u32, beta: &[f64], state_cap: usize) -> Result<ClusterProbs> {
    let lp = LinearPredictors::from_beta(&cluster.design(), beta, max_level)?;
    let stat = sufficient_stat(cluster, max_level);
    cluster_cond_probs_with_cap(&lp, &stat, state_cap).map_err(|e| match e {
        IcpwError::Degenerate(msg) => IcpwError::Degenerate(format!(
            "cluster `{}` reached the likelihood unfiltered: {msg}",
            cluster.id()
        )),
        other => other,
    })
}

/// Log-likelihood and score contributions of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTerm {
    pub log_lik: f64,
    pub score: Vec<f64>,
}

pub fn cluster_terms(
    data: &Dataset,
    beta: &[f64],
    likelihood: CondLikelihood,
    state_cap: usize,
) -> Result<Vec<ClusterTerm>> {
    let dim = data.p() * data.max_level() as usize;
    data.clusters()
        .iter()
        .map(|c| match likelihood {
            CondLikelihood::Joint => {
                let lp = LinearPredictors::from_beta(&c.design(), beta, data.max_level())?;
                let a: Vec<u32> = c.treatments().collect();
                let r = cond_prob_vector(&lp, &a, state_cap).map_err(|e| match e {
                    IcpwError::Degenerate(msg) => IcpwError::Degenerate(format!(
                        "cluster `{}` reached the likelihood unfiltered: {msg}",
                        c.id()
                    )),
                    other => other,
                })?;
                Ok(ClusterTerm {
                    log_lik: r.log_prob,
                    score: r.grad_log_prob,
                })
            }
            CondLikelihood::Composite => {
                let probs = cluster_probs(c, data.max_level(), beta, state_cap)?;
                let mut log_lik = 0.0;
                let mut score = vec![0.0; dim];
                for (j, a) in c.treatments().enumerate() {
                    log_lik += probs.log_prob[j][a as usize];
                    for (s, g) in score.iter_mut().zip(&probs.grad[j][a as usize]) {
                        *s += g;
                    }
                }
                Ok(ClusterTerm { log_lik, score })
            }
        })
        .collect()
}

fn totals(terms: &[ClusterTerm], dim: usize) -> (f64, Vec<f64>) {
    let mut ll = 0.0;
    let mut score = vec![0.0; dim];
    for t in terms {
        ll += t.log_lik;
        for (s, v) in score.iter_mut().zip(&t.score) {
            *s += v;
        }
    }
    (ll, score)
}

pub fn cond_loglik(data: &Dataset, beta: &[f64], likelihood: CondLikelihood) -> Result<f64> {
    Ok(cluster_terms(data, beta, likelihood, DEFAULT_STATE_CAP)?.iter().map(|t| t.log_lik).sum())
}

pub fn cond_score(data: &Dataset, beta: &[f64], likelihood: CondLikelihood) -> Result<Vec<f64>> {
    let dim = data.p() * data.max_level() as usize;
    Ok(totals(&cluster_terms(data, beta, likelihood, DEFAULT_STATE_CAP)?, dim).1)
}

/// Hessian of the conditional log-likelihood by central differences of the analytic score.
pub fn score_jacobian(
    data: &Dataset,
    beta: &[f64],
    likelihood: CondLikelihood,
    rel_step: f64,
    state_cap: usize,
) -> Result<DMatrix<f64>> {
    let dim = beta.len();
    let mut h = DMatrix::zeros(dim, dim);
    let mut probe = beta.to_vec();
    for k in 0..dim {
        let step = rel_step * (1.0 + beta[k].abs());
        probe[k] = beta[k] + step;
        let up = totals(&cluster_terms(data, &probe, likelihood, state_cap)?, dim).1;
        probe[k] = beta[k] - step;
        let down = totals(&cluster_terms(data, &probe, likelihood, state_cap)?, dim).1;
        probe[k] = beta[k];
        for r in 0..dim {
            h[(r, k)] = (up[r] - down[r]) / (2.0 * step);
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Rejects designs where some coefficient direction never varies within a cluster: the
/// conditional likelihood is flat along it.
pub fn check_identified(data: &Dataset) -> Result<()> {
    let p = data.p();
    if p == 0 {
        return Ok(());
    }
    let mut scatter = DMatrix::<f64>::zeros(p, p);
    for c in data.clusters() {
        let n = c.size() as f64;
        let mut mean = vec![0.0; p];
        for u in c.units() {
            for (m, x) in mean.iter_mut().zip(&u.covariates) {
                *m += x / n;
            }
        }
        for u in c.units() {
            let d = DVector::from_iterator(p, u.covariates.iter().zip(&mean).map(|(x, m)| x - m));
            scatter += &d * d.transpose();
        }
    }
    let eig = SymmetricEigen::new(scatter);
    let (imin, min) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0, 0.0));
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 || min <= 1e-10 * max {
        let dir: Vec<String> = eig
            .eigenvectors
            .column(imin)
            .iter()
            .zip(data.covariate_names())
            .filter(|(v, _)| v.abs() > 1e-8)
            .map(|(v, name)| format!("{v:+.3}*{name}"))
            .collect();
        return Err(IcpwError::NotIdentified(format!(
            "covariate combination [{}] is constant within every cluster",
            dir.join(" ")
        )));
    }
    Ok(())
}

/// Solves `(-H + lambda I) d = score`, raising `lambda` until the matrix is positive definite.
pub(crate) fn ascent_direction(hessian: &DMatrix<f64>, score: &[f64]) -> Vec<f64> {
    let dim = score.len();
    let neg = -hessian;
    let scale = neg.diagonal().iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
    let rhs = DVector::from_column_slice(score);
    let mut lambda = 0.0;
    for _ in 0..60 {
        let m = &neg + DMatrix::identity(dim, dim) * lambda;
        if let Some(ch) = m.cholesky() {
            return ch.solve(&rhs).iter().copied().collect();
        }
        lambda = if lambda == 0.0 { 1e-8 * scale } else { lambda * 10.0 };
    }
    score.to_vec()
}

/// A saturated likelihood has a vanishing score without a proper maximum; the curvature
/// along the escaping direction collapses to zero.
fn check_curvature(data: &Dataset, beta: &[f64], options: &CmleOptions) -> Result<()> {
    let info = -score_jacobian(data, beta, options.likelihood, options.fd_step, options.state_cap)?;
    let eig = SymmetricEigen::new(info);
    let (imin, min) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty parameter vector");
    if min <= 1e-10 * data.n() as f64 {
        let dir: Vec<f64> = eig.eigenvectors.column(imin).iter().copied().collect();
        return Err(IcpwError::Separation(format!(
            "conditional likelihood is flat at the solution (curvature {min:.3e}) along {dir:?}"
        )));
    }
    Ok(())
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Newton-Raphson maximization of the conditional log-likelihood, from `options.start` or zero.
pub fn fit_cmle(data: &Dataset, options: &CmleOptions) -> Result<CondFit> {
    check_identified(data)?;
    let dim = data.p() * data.max_level() as usize;
    let eval = |b: &[f64]| -> Result<(f64, Vec<f64>)> {
        Ok(totals(&cluster_terms(data, b, options.likelihood, options.state_cap)?, dim))
    };

    let mut beta = match &options.start {
        Some(b) if b.len() != dim => {
            return Err(IcpwError::Domain(format!("start has {} entries, expected {dim}", b.len())))
        }
        Some(b) => b.clone(),
        None => vec![0.0; dim],
    };
    let (mut ll, mut score) = eval(&beta)?;
    let mut converged = max_abs(&score) <= options.score_tol;
    let mut iterations = 0;
    // Separated likelihoods drift to infinity by roughly constant Newton steps; steps that
    // keep full length in a fixed direction are lengthened so the drift reaches the bound.
    let mut prev_dir: Option<Vec<f64>> = None;
    let mut streak = 0;
    let mut expand = 1.0;

    while !converged && iterations < options.max_iter {
        iterations += 1;
        let hessian = score_jacobian(data, &beta, options.likelihood, options.fd_step, options.state_cap)?;
        let dir = ascent_direction(&hessian, &score);

        let mut alpha = expand;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = beta.iter().zip(&dir).map(|(b, d)| b + alpha * d).collect();
            let (ll_c, score_c) = eval(&cand)?;
            if ll_c.is_finite() && ll_c >= ll {
                accepted = Some((cand, ll_c, score_c));
                break;
            }
            alpha *= 0.5;
        }
        let Some((cand, ll_new, score_new)) = accepted else {
            // No ascent along the direction: numerically at the optimum.
            converged = max_abs(&score) <= options.score_tol.sqrt();
            break;
        };

        let full_step = alpha >= expand;
        if let Some(prev) = &prev_dir {
            let (dp, nn, np) = dir.iter().zip(prev).fold((0.0, 0.0, 0.0), |(a, b, c), (x, y)| {
                (a + x * y, b + x * x, c + y * y)
            });
            let aligned = dp > 0.99 * (nn * np).sqrt();
            if full_step && aligned && nn >= 0.25 * np {
                streak += 1;
            } else {
                streak = 0;
                expand = 1.0;
            }
        }
        if streak >= 3 {
            expand *= 2.0;
        }
        prev_dir = Some(dir);

        let rel = (ll_new - ll).abs() / ll.abs().max(f64::MIN_POSITIVE);
        beta = cand;
        ll = ll_new;
        score = score_new;

        let norm = max_abs(&beta);
        if norm > options.separation_bound {
            return Err(IcpwError::Separation(format!(
                "coefficient max-norm {norm:.3e} exceeds {:.1e}",
                options.separation_bound
            )));
        }
        converged = max_abs(&score) <= options.score_tol
            || (rel <= options.rel_tol && max_abs(&score) <= options.score_tol.sqrt());
    }

    if converged && dim > 0 {
        check_curvature(data, &beta, options)?;
    }

    Ok(CondFit {
        grad_norm_at_solution: max_abs(&score),
        beta,
        log_cond_lik: ll,
        iterations,
        converged,
        beta_cov: None,
        max_level: data.max_level(),
        likelihood: options.likelihood,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::testutil::dataset;
    use crate::oracle::central_difference;

    fn symmetric_pair() -> Dataset {
        dataset(&[
            (vec![1, 0], vec![0.0; 2], vec![vec![0.0], vec![1.0]]),
            (vec![0, 1], vec![0.0; 2], vec![vec![0.0], vec![1.0]]),
        ])
    }

    #[test]
    fn single_cluster_loglik() {
        let d = dataset(&[(vec![1, 0], vec![0.0; 2], vec![vec![0.3], vec![0.3]])]);
        let ll = cond_loglik(&d, &[0.0], CondLikelihood::Composite).unwrap();
        assert!((ll - 2.0 * 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn joint_loglik_of_a_pair() {
        // two of the three arrangements with one treated unit are equally likely at beta = 0
        let d = dataset(&[(vec![1, 0, 0], vec![0.0; 3], vec![vec![0.3], vec![0.1], vec![-0.2]])]);
        let ll = cond_loglik(&d, &[0.0], CondLikelihood::Joint).unwrap();
        assert!((ll - (1.0f64 / 3.0).ln()).abs() < 1e-15);
        let ll = cond_loglik(&d, &[1.0], CondLikelihood::Joint).unwrap();
        let expected = 0.3 - (0.3f64.exp() + 0.1f64.exp() + (-0.2f64).exp()).ln();
        assert!((ll - expected).abs() < 1e-14);
    }

    #[test]
    fn symmetric_clusters() {
        let d = symmetric_pair();
        let ll = cond_loglik(&d, &[0.0], CondLikelihood::Composite).unwrap();
        assert!((ll - 4.0 * 0.5f64.ln()).abs() < 1e-15);
        assert!(cond_score(&d, &[0.0], CondLikelihood::Composite).unwrap()[0].abs() < 1e-15);

        // grid search confirms the maximizer sits at zero
        let best = (-500..=500)
            .map(|i| i as f64 / 100.0)
            .max_by(|a, b| cond_loglik(&d, &[*a], CondLikelihood::Composite).unwrap().total_cmp(&cond_loglik(&d, &[*b], CondLikelihood::Composite).unwrap()))
            .unwrap();
        assert_eq!(best, 0.0);

        let fit = fit_cmle(&d, &CmleOptions::default()).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.beta, vec![0.0]);
        assert_eq!(fit.iterations, 0);
    }

    #[test]
    fn score_matches_finite_differences() {
        let d = dataset(&[
            (vec![1, 0, 1], vec![0.0; 3], vec![vec![0.2, 1.0], vec![-0.5, 0.0], vec![1.5, -1.0]]),
            (vec![0, 1], vec![0.0; 2], vec![vec![0.1, 1.0], vec![0.9, -1.0]]),
            (vec![0, 0, 1, 1], vec![0.0; 4], vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![-1.0, 0.0], vec![0.4, 1.0]]),
        ]);
        let beta = [0.7, -0.4];
        for lik in [CondLikelihood::Composite, CondLikelihood::Joint] {
            let s = cond_score(&d, &beta, lik).unwrap();
            let fd = central_difference(|b| cond_loglik(&d, b, lik).unwrap(), &beta, 1e-5);
            for (a, b) in s.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{lik}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_covariates_give_zero_score() {
        let d = dataset(&[
            (vec![1, 0, 1], vec![0.0; 3], vec![vec![0.0]; 3]),
            (vec![0, 1], vec![0.0; 2], vec![vec![0.0]; 2]),
        ]);
        for b in [-3.0, 0.0, 2.5] {
            assert_eq!(cond_score(&d, &[b], CondLikelihood::Composite).unwrap(), vec![0.0]);
            assert_eq!(cond_score(&d, &[b], CondLikelihood::Joint).unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn cluster_constant_covariates_are_rejected() {
        let d = dataset(&[
            (vec![1, 0, 1], vec![0.0; 3], vec![vec![1.0, 2.0]; 3]),
            (vec![0, 1], vec![0.0; 2], vec![vec![-1.0, 0.5]; 2]),
        ]);
        assert!(matches!(fit_cmle(&d, &CmleOptions::default()), Err(IcpwError::NotIdentified(_))));
    }

    #[test]
    fn separated_data_reports_separation() {
        // the treated unit always has the larger covariate
        let d = dataset(&[
            (vec![1, 0], vec![0.0; 2], vec![vec![1.0], vec![0.0]]),
            (vec![0, 1], vec![0.0; 2], vec![vec![-1.0], vec![2.0]]),
        ]);
        let err = fit_cmle(&d, &CmleOptions::default()).unwrap_err();
        assert!(matches!(err, IcpwError::Separation { .. }), "{err}");
    }

    #[test]
    fn fit_reaches_zero_score() {
        let d = dataset(&[
            (vec![1, 0, 1], vec![0.0; 3], vec![vec![0.2], vec![-0.5], vec![1.5]]),
            (vec![0, 1], vec![0.0; 2], vec![vec![0.1], vec![-0.9]]),
            (vec![0, 0, 1, 1], vec![0.0; 4], vec![vec![0.0], vec![1.0], vec![-1.0], vec![0.4]]),
        ]);
        let fit = fit_cmle(&d, &CmleOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.grad_norm_at_solution <= 1e-8);
        let again = fit_cmle(&d, &CmleOptions::default()).unwrap();
        assert_eq!(fit.beta, again.beta);
    }

    #[test]
    fn iteration_cap_is_reported() {
        let d = dataset(&[
            (vec![1, 0, 1], vec![0.0; 3], vec![vec![0.2], vec![-0.5], vec![1.5]]),
            (vec![0, 1], vec![0.0; 2], vec![vec![0.1], vec![-0.9]]),
        ]);
        let opts = CmleOptions {
            max_iter: 1,
            ..CmleOptions::default()
        };
        let fit = fit_cmle(&d, &opts).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 1);
    }
}
