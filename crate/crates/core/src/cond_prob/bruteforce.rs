//! Reference evaluation of the conditional probability by listing every treatment vector.

use super::{check_stat, CondProbResult, LinearPredictors};
use crate::data::SufficientStat;
use crate::error::{IcpwError, Result};
use crate::numeric::log_add_exp;

pub const BINARY_ENUMERATION_CAP: usize = 14;
pub const MULTINOMIAL_ENUMERATION_CAP: usize = 9;

/// `P(A_j = a | X, T)` as the ratio of the joint-model mass of treatment vectors with the
/// observed counts and `a_j = a` to the mass of all vectors with the observed counts.
///
/// `cap` bounds the cluster size; `None` uses the defaults above.
pub fn cond_prob_bruteforce(
    lp: &LinearPredictors,
    stat: &SufficientStat,
    j: usize,
    a: u32,
    cap: Option<usize>,
) -> Result<CondProbResult> {
    let n = lp.size();
    let levels = lp.max_level() as usize + 1;
    let cap = cap.unwrap_or(if levels == 2 {
        BINARY_ENUMERATION_CAP
    } else {
        MULTINOMIAL_ENUMERATION_CAP
    });
    if n > cap {
        return Err(IcpwError::SizeCap { size: n, cap });
    }
    if j >= n || a as usize >= levels {
        return Err(IcpwError::Domain(format!("unit {j} / level {a} out of range")));
    }
    let target = check_stat(lp, stat)?;
    if target[a as usize] == 0 {
        return Err(IcpwError::Degenerate(format!("level {a} has count zero")));
    }

    let dim = lp.dim();
    let mut num = Accumulator::new(dim);
    let mut den = Accumulator::new(dim);
    let mut assignment = vec![0usize; n];
    let mut counts = vec![0usize; levels];
    let mut features = vec![0.0; dim];
    let total = levels.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        for slot in assignment.iter_mut() {
            *slot = c % levels;
            c /= levels;
        }
        counts.iter_mut().for_each(|x| *x = 0);
        for &lvl in &assignment {
            counts[lvl] += 1;
        }
        if counts != target {
            continue;
        }
        let mut log_w = 0.0;
        features.iter_mut().for_each(|f| *f = 0.0);
        for (l, &lvl) in assignment.iter().enumerate() {
            log_w += lp.log_weight(l, lvl);
            lp.add_feature(l, lvl, 1.0, &mut features);
        }
        den.add(log_w, &features);
        if assignment[j] == a as usize {
            num.add(log_w, &features);
        }
    }
    let grad = num
        .mean()
        .iter()
        .zip(den.mean())
        .map(|(x, y)| x - y)
        .collect();
    Ok(CondProbResult::from_log(num.log_total - den.log_total, grad))
}

/// Running log-sum of weights and weighted sum of feature vectors.
struct Accumulator {
    log_total: f64,
    weighted: Vec<f64>,
    log_scale: f64,
}

impl Accumulator {
    fn new(dim: usize) -> Self {
        Accumulator {
            log_total: f64::NEG_INFINITY,
            weighted: vec![0.0; dim],
            log_scale: 0.0,
        }
    }

    fn add(&mut self, log_w: f64, features: &[f64]) {
        if self.log_total == f64::NEG_INFINITY {
            self.log_scale = log_w;
        } else if log_w > self.log_scale {
            let r = (self.log_scale - log_w).exp();
            self.weighted.iter_mut().for_each(|v| *v *= r);
            self.log_scale = log_w;
        }
        let w = (log_w - self.log_scale).exp();
        for (v, f) in self.weighted.iter_mut().zip(features) {
            *v += w * f;
        }
        self.log_total = log_add_exp(self.log_total, log_w);
    }

    fn mean(&self) -> Vec<f64> {
        let norm = (self.log_scale - self.log_total).exp();
        self.weighted.iter().map(|v| v * norm).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_units_closed_form() {
        let (e1, e2) = (0.7f64, -0.4f64);
        let lp = LinearPredictors::binary(vec![e1, e2], vec![vec![1.0], vec![2.0]]).unwrap();
        let stat = SufficientStat::Binary { t: 1, size: 2 };
        let r = cond_prob_bruteforce(&lp, &stat, 0, 1, None).unwrap();
        let expected = e1.exp() / (e1.exp() + e2.exp());
        assert!((r.prob - expected).abs() < 1e-15);
        // d/d beta log P = x_1 - E[x_treated]
        let g = 1.0 - (expected * 1.0 + (1.0 - expected) * 2.0);
        assert!((r.grad_log_prob[0] - g).abs() < 1e-15);
    }

    #[test]
    fn symmetric_pair() {
        let lp = LinearPredictors::binary(vec![0.0, 0.0], vec![vec![]; 2]).unwrap();
        let stat = SufficientStat::Binary { t: 1, size: 2 };
        let r = cond_prob_bruteforce(&lp, &stat, 1, 1, None).unwrap();
        assert!((r.prob - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cap_exceeded() {
        let lp = LinearPredictors::binary(vec![0.0; 15], vec![vec![]; 15]).unwrap();
        let stat = SufficientStat::Binary { t: 3, size: 15 };
        assert!(matches!(
            cond_prob_bruteforce(&lp, &stat, 0, 1, None),
            Err(IcpwError::SizeCap { size: 15, cap: 14 })
        ));
    }
}
