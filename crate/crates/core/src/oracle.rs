//! Independent reference computations used by the test suites and `icpw selftest`.
//!
//! None of these share code with the dynamic-programming path: they enumerate treatment
//! vectors directly, or difference a function numerically.

use crate::cond_prob::LinearPredictors;
use crate::data::SufficientStat;
use crate::error::{IcpwError, Result};
use crate::numeric::{log1p_exp, log_add_exp, log_sum_exp};

/// Every treatment vector with the given counts, paired with its probability given the counts.
pub fn enumerate_arrangements(
    lp: &LinearPredictors,
    stat: &SufficientStat,
) -> Result<Vec<(Vec<u32>, f64)>> {
    let n = lp.size();
    let levels = lp.max_level() as usize + 1;
    if n > 12 {
        return Err(IcpwError::SizeCap { size: n, cap: 12 });
    }
    let target = stat.level_counts();
    let mut out = Vec::new();
    let mut log_ws = Vec::new();
    for code in 0..levels.pow(n as u32) {
        let mut c = code;
        let a: Vec<u32> = (0..n)
            .map(|_| {
                let v = (c % levels) as u32;
                c /= levels;
                v
            })
            .collect();
        let mut counts = vec![0; levels];
        a.iter().for_each(|&v| counts[v as usize] += 1);
        if counts != target {
            continue;
        }
        let log_w: f64 = a
            .iter()
            .enumerate()
            .map(|(l, &v)| if v == 0 { 0.0 } else { lp.eta()[l][v as usize - 1] })
            .sum();
        log_ws.push(log_w);
        out.push(a);
    }
    let log_total = log_sum_exp(&log_ws);
    Ok(out
        .into_iter()
        .zip(log_ws)
        .map(|(a, lw)| (a, (lw - log_total).exp()))
        .collect())
}

/// `P(A_j = a | X, T)` by Bayes' rule from the joint treatment model with the cluster
/// intercept set to `intercept` (one entry per non-reference level):
/// enumerate every treatment vector, weight it by its joint probability under
/// independent unit-level (multinomial-)logistic assignment, and condition on the counts.
pub fn joint_model_cond_prob(
    lp: &LinearPredictors,
    stat: &SufficientStat,
    j: usize,
    a: u32,
    intercept: &[f64],
) -> Result<f64> {
    let n = lp.size();
    let levels = lp.max_level() as usize + 1;
    if intercept.len() != levels - 1 {
        return Err(IcpwError::Domain("one intercept per non-reference level".into()));
    }
    if n > 12 {
        return Err(IcpwError::SizeCap { size: n, cap: 12 });
    }
    // log P(A_l = v | X, U) for each unit and level
    let unit_log_probs: Vec<Vec<f64>> = (0..n)
        .map(|l| {
            let scores: Vec<f64> = (0..levels)
                .map(|v| if v == 0 { 0.0 } else { lp.eta()[l][v - 1] + intercept[v - 1] })
                .collect();
            let norm = if levels == 2 { log1p_exp(scores[1]) } else { log_sum_exp(&scores) };
            scores.iter().map(|s| s - norm).collect()
        })
        .collect();
    let target = stat.level_counts();
    let mut log_num = f64::NEG_INFINITY;
    let mut log_den = f64::NEG_INFINITY;
    for code in 0..levels.pow(n as u32) {
        let mut c = code;
        let mut counts = vec![0; levels];
        let mut log_joint = 0.0;
        let mut unit_level = 0;
        for (l, probs) in unit_log_probs.iter().enumerate() {
            let v = c % levels;
            c /= levels;
            counts[v] += 1;
            log_joint += probs[v];
            if l == j {
                unit_level = v;
            }
        }
        if counts != target {
            continue;
        }
        log_den = log_add_exp(log_den, log_joint);
        if unit_level == a as usize {
            log_num = log_add_exp(log_num, log_joint);
        }
    }
    Ok((log_num - log_den).exp())
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_difference<F>(f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + step;
            let up = f(&probe);
            probe[k] = x[k] - step;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * step)
        })
        .collect()
}
