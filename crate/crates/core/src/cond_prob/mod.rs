//! Treatment probabilities conditional on the cluster's treatment counts.
//!
//! Under a logistic (or multinomial-logistic) treatment model with a cluster intercept,
//! the per-level counts are sufficient for the intercept, so
//! `P(A_j = a | X, T)` no longer depends on it. For a binary treatment the normalizing
//! sum over all treatment vectors with `t` treated units is the elementary symmetric
//! polynomial `e_t(w)` with `w_l = exp(eta_l)`; for more levels it is the analogous sum
//! over arrangements with fixed per-level counts. Both are evaluated here by log-space
//! dynamic programming that carries the normalized gradient `(d e / d beta) / e` alongside
//! the value, so scores come out analytically.

mod bruteforce;

pub use bruteforce::{cond_prob_bruteforce, BINARY_ENUMERATION_CAP, MULTINOMIAL_ENUMERATION_CAP};

use crate::data::SufficientStat;
use crate::error::{IcpwError, Result};
use crate::numeric::log_add_exp;

/// Default bound on the number of lattice states in the multinomial recursion.
pub const DEFAULT_STATE_CAP: usize = 1_000_000;

/// Per-unit linear predictors of one cluster, with the design rows they came from.
///
/// `eta[j][k - 1]` is the predictor of level `k = 1..=K` for unit `j`; level 0 is the
/// reference with predictor 0. The parameter vector is laid out as `K` blocks of length
/// `p`, block `k - 1` holding the coefficients of level `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictors {
    eta: Vec<Vec<f64>>,
    design: Vec<Vec<f64>>,
}

impl LinearPredictors {
    pub fn new(eta: Vec<Vec<f64>>, design: Vec<Vec<f64>>) -> Result<Self> {
        if eta.is_empty() {
            return Err(IcpwError::Domain("cluster has no units".into()));
        }
        if design.len() != eta.len() {
            return Err(IcpwError::Domain(format!(
                "{} predictor rows but {} design rows",
                eta.len(),
                design.len()
            )));
        }
        let k = eta[0].len();
        let p = design[0].len();
        if k == 0 {
            return Err(IcpwError::Domain("need at least one non-reference level".into()));
        }
        if eta.iter().any(|r| r.len() != k) || design.iter().any(|r| r.len() != p) {
            return Err(IcpwError::Domain("ragged predictor or design rows".into()));
        }
        if eta.iter().flatten().any(|v| !v.is_finite()) {
            return Err(IcpwError::Domain("non-finite linear predictor".into()));
        }
        Ok(LinearPredictors { eta, design })
    }

    /// Binary treatment: one predictor per unit.
    pub fn binary(eta: Vec<f64>, design: Vec<Vec<f64>>) -> Result<Self> {
        LinearPredictors::new(eta.into_iter().map(|e| vec![e]).collect(), design)
    }

    /// `eta[j][k-1] = x_j . beta_k` for `beta` of length `p * K`.
    pub fn from_beta(design: &[&[f64]], beta: &[f64], max_level: u32) -> Result<Self> {
        let k = max_level as usize;
        let p = design.first().map_or(0, |r| r.len());
        if beta.len() != p * k {
            return Err(IcpwError::Domain(format!(
                "coefficient vector has length {}, expected {}",
                beta.len(),
                p * k
            )));
        }
        let eta = design
            .iter()
            .map(|x| {
                (0..k)
                    .map(|level| crate::numeric::dot(x, &beta[level * p..(level + 1) * p]))
                    .collect()
            })
            .collect();
        LinearPredictors::new(eta, design.iter().map(|r| r.to_vec()).collect())
    }

    pub fn size(&self) -> usize {
        self.eta.len()
    }

    /// Highest treatment level `K`.
    pub fn max_level(&self) -> u32 {
        self.eta[0].len() as u32
    }

    pub fn p(&self) -> usize {
        self.design[0].len()
    }

    /// Length of the parameter (and gradient) vector, `p * K`.
    pub fn dim(&self) -> usize {
        self.p() * self.eta[0].len()
    }

    pub fn eta(&self) -> &[Vec<f64>] {
        &self.eta
    }

    pub fn design(&self) -> &[Vec<f64>] {
        &self.design
    }

    /// Adds `shift[k-1]` to level `k`'s predictor for every unit (a cluster intercept).
    pub fn shifted(&self, shift: &[f64]) -> LinearPredictors {
        let eta = self
            .eta
            .iter()
            .map(|r| r.iter().zip(shift).map(|(e, s)| e + s).collect())
            .collect();
        LinearPredictors {
            eta,
            design: self.design.clone(),
        }
    }

    /// Units reordered as `order[new] = old`.
    pub fn permuted(&self, order: &[usize]) -> LinearPredictors {
        LinearPredictors {
            eta: order.iter().map(|&i| self.eta[i].clone()).collect(),
            design: order.iter().map(|&i| self.design[i].clone()).collect(),
        }
    }

    #[inline]
    pub(crate) fn log_weight(&self, unit: usize, level: usize) -> f64 {
        if level == 0 {
            0.0
        } else {
            self.eta[unit][level - 1]
        }
    }

    /// `grad += scale * d eta_{unit, level} / d beta`.
    #[inline]
    pub(crate) fn add_feature(&self, unit: usize, level: usize, scale: f64, grad: &mut [f64]) {
        if level == 0 {
            return;
        }
        let p = self.p();
        let block = &mut grad[(level - 1) * p..level * p];
        for (g, x) in block.iter_mut().zip(&self.design[unit]) {
            *g += scale * x;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CondProbResult {
    pub log_prob: f64,
    pub prob: f64,
    /// Gradient of `log_prob` with respect to the stacked coefficient vector.
    pub grad_log_prob: Vec<f64>,
}

impl CondProbResult {
    pub(crate) fn from_log(log_prob: f64, grad_log_prob: Vec<f64>) -> Self {
        CondProbResult {
            log_prob,
            prob: log_prob.exp(),
            grad_log_prob,
        }
    }
}

/// `log e_t(w)` for positive weights `w`.
pub fn log_elem_sym(weights: &[f64], t: usize) -> Result<f64> {
    if t > weights.len() {
        return Err(IcpwError::Domain(format!(
            "degree {t} exceeds the number of weights {}",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(IcpwError::Domain("weights must be positive and finite".into()));
    }
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    Ok(log_esp_values(&log_w, t)[t])
}

/// `log e_s` for `s = 0..=t_max` from log-weights, by the prefix recursion
/// `e_s(1..l) = e_s(1..l-1) + w_l e_{s-1}(1..l-1)`.
pub(crate) fn log_esp_values(log_w: &[f64], t_max: usize) -> Vec<f64> {
    let mut log_e = vec![f64::NEG_INFINITY; t_max + 1];
    log_e[0] = 0.0;
    for (l, &lw) in log_w.iter().enumerate() {
        for s in (1..=t_max.min(l + 1)).rev() {
            log_e[s] = log_add_exp(log_e[s], log_e[s - 1] + lw);
        }
    }
    log_e
}

/// Log elementary symmetric values with normalized gradients, over all units except `skip`.
struct EspTable {
    log_e: Vec<f64>,
    /// `grad[s]` is `(d e_s / d beta) / e_s`; zeros where `e_s = 0`.
    grad: Vec<Vec<f64>>,
}

impl EspTable {
    fn build(lp: &LinearPredictors, skip: Option<usize>, t_max: usize) -> EspTable {
        let dim = lp.dim();
        let mut log_e = vec![f64::NEG_INFINITY; t_max + 1];
        let mut grad = vec![vec![0.0; dim]; t_max + 1];
        log_e[0] = 0.0;
        let mut seen = 0;
        for l in (0..lp.size()).filter(|&l| Some(l) != skip) {
            seen += 1;
            let lw = lp.log_weight(l, 1);
            for s in (1..=t_max.min(seen)).rev() {
                let stay = log_e[s];
                let take = log_e[s - 1] + lw;
                let total = log_add_exp(stay, take);
                if total == f64::NEG_INFINITY {
                    continue;
                }
                let w_stay = (stay - total).exp();
                let w_take = (take - total).exp();
                let (lower, upper) = grad.split_at_mut(s);
                let prev = &lower[s - 1];
                let cur = &mut upper[0];
                for (c, pr) in cur.iter_mut().zip(prev) {
                    *c = w_stay * *c + w_take * pr;
                }
                lp.add_feature(l, 1, w_take, cur);
                log_e[s] = total;
            }
        }
        EspTable { log_e, grad }
    }
}

/// Conditional log-probabilities of every level for every unit in one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterProbs {
    /// `log_prob[j][a]`; `-inf` when level `a` has count zero in the cluster.
    pub log_prob: Vec<Vec<f64>>,
    /// `grad[j][a]` is the gradient of `log_prob[j][a]`.
    pub grad: Vec<Vec<Vec<f64>>>,
}

impl ClusterProbs {
    pub fn result(&self, j: usize, a: usize) -> CondProbResult {
        CondProbResult::from_log(self.log_prob[j][a], self.grad[j][a].clone())
    }
}

fn check_stat(lp: &LinearPredictors, stat: &SufficientStat) -> Result<Vec<usize>> {
    if stat.size() != lp.size() {
        return Err(IcpwError::Domain(format!(
            "statistic describes {} units but cluster has {}",
            stat.size(),
            lp.size()
        )));
    }
    if stat.max_level() != lp.max_level() {
        return Err(IcpwError::Domain(format!(
            "statistic has {} levels but predictors have {}",
            stat.max_level() + 1,
            lp.max_level() + 1
        )));
    }
    let counts = stat.level_counts();
    if stat.is_degenerate() {
        return Err(IcpwError::Degenerate(format!(
            "treatment counts {counts:?} determine every unit's treatment"
        )));
    }
    Ok(counts)
}

/// All-unit conditional probabilities for a cluster; binary clusters use the elementary
/// symmetric recursion, others the count-lattice recursion.
pub fn cluster_cond_probs(lp: &LinearPredictors, stat: &SufficientStat) -> Result<ClusterProbs> {
    cluster_cond_probs_with_cap(lp, stat, DEFAULT_STATE_CAP)
}

pub fn cluster_cond_probs_with_cap(
    lp: &LinearPredictors,
    stat: &SufficientStat,
    state_cap: usize,
) -> Result<ClusterProbs> {
    let counts = check_stat(lp, stat)?;
    if lp.max_level() == 1 {
        Ok(binary_cluster_probs(lp, counts[1]))
    } else {
        lattice_cluster_probs(lp, &counts, state_cap)
    }
}

fn binary_cluster_probs(lp: &LinearPredictors, t: usize) -> ClusterProbs {
    let n = lp.size();
    let dim = lp.dim();
    let full = EspTable::build(lp, None, t);
    let log_den = full.log_e[t];
    let mut log_prob = Vec::with_capacity(n);
    let mut grad = Vec::with_capacity(n);
    for j in 0..n {
        let loo = EspTable::build(lp, Some(j), t);
        // a = 0: the other n - 1 units carry all t treatments.
        let lp0 = loo.log_e[t] - log_den;
        let g0: Vec<f64> = loo.grad[t].iter().zip(&full.grad[t]).map(|(a, b)| a - b).collect();
        // a = 1: unit j plus t - 1 treated among the rest.
        let lp1 = lp.log_weight(j, 1) + loo.log_e[t - 1] - log_den;
        let mut g1: Vec<f64> = loo.grad[t - 1]
            .iter()
            .zip(&full.grad[t])
            .map(|(a, b)| a - b)
            .collect();
        lp.add_feature(j, 1, 1.0, &mut g1);
        debug_assert_eq!(g1.len(), dim);
        log_prob.push(vec![lp0, lp1]);
        grad.push(vec![g0, g1]);
    }
    ClusterProbs { log_prob, grad }
}

/// Mixed-radix index over counts of levels `1..=K`, each bounded by its target.
struct Lattice {
    bounds: Vec<usize>,
    strides: Vec<usize>,
    states: usize,
}

impl Lattice {
    fn new(targets: &[usize], cap: usize) -> Result<Lattice> {
        let mut strides = Vec::with_capacity(targets.len());
        let mut states: usize = 1;
        for &t in targets {
            strides.push(states);
            states = states
                .checked_mul(t + 1)
                .filter(|&s| s <= cap)
                .ok_or(IcpwError::StateCap {
                    states: targets.iter().map(|t| t + 1).product(),
                    cap,
                })?;
        }
        Ok(Lattice {
            bounds: targets.to_vec(),
            strides,
            states,
        })
    }

    fn index(&self, counts: &[usize]) -> usize {
        counts.iter().zip(&self.strides).map(|(c, s)| c * s).sum()
    }

    fn coords(&self, mut idx: usize, out: &mut [usize]) {
        for (k, b) in self.bounds.iter().enumerate() {
            out[k] = idx % (b + 1);
            idx /= b + 1;
        }
    }
}

/// Sum over arrangements of the included units with per-level counts on the lattice.
struct LatticeTable {
    log_s: Vec<f64>,
    grad: Vec<f64>,
    dim: usize,
}

impl LatticeTable {
    fn build(lp: &LinearPredictors, skip: Option<usize>, lattice: &Lattice) -> LatticeTable {
        let dim = lp.dim();
        let k_levels = lattice.bounds.len();
        let mut log_s = vec![f64::NEG_INFINITY; lattice.states];
        let mut grad = vec![0.0; lattice.states * dim];
        log_s[0] = 0.0;
        let mut coords = vec![0usize; k_levels];
        let mut scratch = vec![0.0; dim];
        for l in (0..lp.size()).filter(|&l| Some(l) != skip) {
            // Descending index order: every source state s - e_k has a smaller index and
            // still holds the previous unit's value when read.
            for s in (0..lattice.states).rev() {
                lattice.coords(s, &mut coords);
                let mut total = log_s[s];
                for k in 0..k_levels {
                    if coords[k] > 0 {
                        let src = s - lattice.strides[k];
                        total = log_add_exp(total, log_s[src] + lp.log_weight(l, k + 1));
                    }
                }
                if total == f64::NEG_INFINITY {
                    continue;
                }
                scratch.iter_mut().for_each(|g| *g = 0.0);
                let w_stay = (log_s[s] - total).exp();
                if w_stay > 0.0 {
                    for (g, v) in scratch.iter_mut().zip(&grad[s * dim..(s + 1) * dim]) {
                        *g += w_stay * v;
                    }
                }
                for k in 0..k_levels {
                    if coords[k] > 0 {
                        let src = s - lattice.strides[k];
                        let w = (log_s[src] + lp.log_weight(l, k + 1) - total).exp();
                        if w > 0.0 {
                            for (g, v) in scratch.iter_mut().zip(&grad[src * dim..(src + 1) * dim]) {
                                *g += w * v;
                            }
                            lp.add_feature(l, k + 1, w, &mut scratch);
                        }
                    }
                }
                grad[s * dim..(s + 1) * dim].copy_from_slice(&scratch);
                log_s[s] = total;
            }
        }
        LatticeTable { log_s, grad, dim }
    }

    fn grad_at(&self, s: usize) -> &[f64] {
        &self.grad[s * self.dim..(s + 1) * self.dim]
    }
}

fn lattice_cluster_probs(
    lp: &LinearPredictors,
    counts: &[usize],
    state_cap: usize,
) -> Result<ClusterProbs> {
    let n = lp.size();
    let levels = counts.len();
    let lattice = Lattice::new(&counts[1..], state_cap)?;
    let target = lattice.index(&counts[1..]);
    let full = LatticeTable::build(lp, None, &lattice);
    let log_den = full.log_s[target];
    let den_grad = full.grad_at(target);
    let mut log_prob = Vec::with_capacity(n);
    let mut grad = Vec::with_capacity(n);
    for j in 0..n {
        let loo = LatticeTable::build(lp, Some(j), &lattice);
        let mut lps = Vec::with_capacity(levels);
        let mut gs = Vec::with_capacity(levels);
        for a in 0..levels {
            if counts[a] == 0 {
                lps.push(f64::NEG_INFINITY);
                gs.push(vec![0.0; lp.dim()]);
                continue;
            }
            let src = if a == 0 { target } else { target - lattice.strides[a - 1] };
            lps.push(lp.log_weight(j, a) + loo.log_s[src] - log_den);
            let mut g: Vec<f64> = loo.grad_at(src).iter().zip(den_grad).map(|(x, y)| x - y).collect();
            lp.add_feature(j, a, 1.0, &mut g);
            gs.push(g);
        }
        log_prob.push(lps);
        grad.push(gs);
    }
    Ok(ClusterProbs { log_prob, grad })
}

/// `log P(A = a | X, T)` of a whole treatment vector given its counts, with the gradient.
///
/// This is the cluster's classical conditional-likelihood contribution: the vector's
/// linear predictor total minus the log of the same total summed over every vector with
/// the observed counts.
pub fn cond_prob_vector(lp: &LinearPredictors, treatments: &[u32], state_cap: usize) -> Result<CondProbResult> {
    if treatments.len() != lp.size() {
        return Err(IcpwError::Domain(format!(
            "{} treatments for {} units",
            treatments.len(),
            lp.size()
        )));
    }
    if treatments.iter().any(|&a| a > lp.max_level()) {
        return Err(IcpwError::Domain("treatment level out of range".into()));
    }
    let levels = lp.max_level() as usize + 1;
    let mut counts = vec![0usize; levels];
    treatments.iter().for_each(|&a| counts[a as usize] += 1);
    let stat = SufficientStat::from_level_counts(&counts)?;
    check_stat(lp, &stat)?;
    let (log_den, den_grad) = if levels == 2 {
        let mut table = EspTable::build(lp, None, counts[1]);
        (table.log_e[counts[1]], table.grad.swap_remove(counts[1]))
    } else {
        let lattice = Lattice::new(&counts[1..], state_cap)?;
        let target = lattice.index(&counts[1..]);
        let table = LatticeTable::build(lp, None, &lattice);
        (table.log_s[target], table.grad_at(target).to_vec())
    };
    let mut grad: Vec<f64> = den_grad.iter().map(|g| -g).collect();
    let mut num = 0.0;
    for (j, &a) in treatments.iter().enumerate() {
        num += lp.log_weight(j, a as usize);
        lp.add_feature(j, a as usize, 1.0, &mut grad);
    }
    Ok(CondProbResult::from_log(num - log_den, grad))
}

/// `P(A_j = a | X, T = t)` for a binary treatment.
pub fn cond_prob_binary(lp: &LinearPredictors, t: usize, j: usize, a: u32) -> Result<CondProbResult> {
    if lp.max_level() != 1 {
        return Err(IcpwError::Domain("binary probability requested for multi-level predictors".into()));
    }
    if j >= lp.size() || a > 1 {
        return Err(IcpwError::Domain(format!("unit {j} / level {a} out of range")));
    }
    if t > lp.size() {
        return Err(IcpwError::Domain(format!("t = {t} exceeds cluster size {}", lp.size())));
    }
    let stat = SufficientStat::Binary { t, size: lp.size() };
    check_stat(lp, &stat)?;
    let probs = binary_cluster_probs(lp, t);
    Ok(probs.result(j, a as usize))
}

/// `P(A_j = a | X, T)` for any number of levels via the count-lattice recursion.
pub fn cond_prob_multinomial(
    lp: &LinearPredictors,
    stat: &SufficientStat,
    j: usize,
    a: u32,
) -> Result<CondProbResult> {
    if j >= lp.size() || a > lp.max_level() {
        return Err(IcpwError::Domain(format!("unit {j} / level {a} out of range")));
    }
    let counts = check_stat(lp, stat)?;
    if counts[a as usize] == 0 {
        return Err(IcpwError::Degenerate(format!(
            "level {a} has count zero, so unit {j} cannot take it"
        )));
    }
    let probs = lattice_cluster_probs(lp, &counts, DEFAULT_STATE_CAP)?;
    Ok(probs.result(j, a as usize))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ln(v: &[f64]) -> Vec<f64> {
        v.iter().map(|x| x.ln()).collect()
    }

    /// Brute-force e_t by enumerating subsets.
    fn esp_enumerate(w: &[f64], t: usize) -> f64 {
        let n = w.len();
        (0u32..1 << n)
            .filter(|m| m.count_ones() as usize == t)
            .map(|m| (0..n).filter(|i| m >> i & 1 == 1).map(|i| w[i]).product::<f64>())
            .sum()
    }

    #[test]
    fn elementary_symmetric_examples() {
        let w = [1.0, 2.0, 4.0];
        assert_eq!(esp_enumerate(&w, 1), 7.0);
        assert_eq!(esp_enumerate(&w, 2), 14.0);
        assert!((log_elem_sym(&w, 1).unwrap() - 7f64.ln()).abs() < 1e-14);
        assert!((log_elem_sym(&w, 2).unwrap() - 14f64.ln()).abs() < 1e-14);
        assert_eq!(log_elem_sym(&w, 0).unwrap(), 0.0);
        assert_eq!(log_elem_sym(&[0.3, 9.0], 0).unwrap(), 0.0);
        assert!(matches!(log_elem_sym(&w, 4), Err(IcpwError::Domain(_))));
        assert!(log_elem_sym(&[1.0, -1.0], 1).is_err());
    }

    #[test]
    fn elementary_symmetric_survives_large_weights() {
        let log_w = vec![700.0; 30];
        let v = log_esp_values(&log_w, 15)[15];
        // C(30, 15) * exp(700 * 15)
        let expected = 700.0 * 15.0 + (155_117_520f64).ln();
        assert!((v - expected).abs() / expected < 1e-14);
    }

    #[test]
    fn binary_examples() {
        let design = vec![vec![]; 2];
        let lp = LinearPredictors::binary(vec![0.0, 0.0], design).unwrap();
        let r = cond_prob_binary(&lp, 1, 0, 1).unwrap();
        assert!((r.prob - 0.5).abs() < 1e-15);

        let lp = LinearPredictors::binary(ln(&[1.0, 2.0, 4.0]), vec![vec![]; 3]).unwrap();
        let r = cond_prob_binary(&lp, 1, 0, 1).unwrap();
        assert!((r.prob - 1.0 / 7.0).abs() < 1e-15);
        let r = cond_prob_binary(&lp, 2, 0, 1).unwrap();
        assert!((r.prob - 3.0 / 7.0).abs() < 1e-15);
        let r0 = cond_prob_binary(&lp, 2, 0, 0).unwrap();
        assert!((r.prob + r0.prob - 1.0).abs() < 1e-15);
    }

    #[test]
    fn binary_degenerate_counts_rejected() {
        let lp = LinearPredictors::binary(vec![0.1, 0.2], vec![vec![]; 2]).unwrap();
        assert!(matches!(cond_prob_binary(&lp, 0, 0, 0), Err(IcpwError::Degenerate(_))));
        assert!(matches!(cond_prob_binary(&lp, 2, 1, 1), Err(IcpwError::Degenerate(_))));
    }

    #[test]
    fn multinomial_symmetric_pair() {
        let lp = LinearPredictors::new(vec![vec![0.0, 0.0]; 2], vec![vec![]; 2]).unwrap();
        let stat = SufficientStat::Multinomial { counts: vec![1, 1], size: 2 };
        let r = cond_prob_multinomial(&lp, &stat, 0, 0).unwrap();
        assert!((r.prob - 0.5).abs() < 1e-15);
        // level 2 has count zero here
        assert!(matches!(
            cond_prob_multinomial(&lp, &stat, 0, 2),
            Err(IcpwError::Degenerate(_))
        ));
    }

    #[test]
    fn lattice_route_matches_binary_route() {
        let design = vec![vec![0.3, -1.0], vec![1.2, 0.4], vec![-0.7, 2.0], vec![0.0, 0.5]];
        let rows: Vec<&[f64]> = design.iter().map(|r| r.as_slice()).collect();
        let lp = LinearPredictors::from_beta(&rows, &[0.8, -0.3], 1).unwrap();
        let counts = [2usize, 2];
        let a = binary_cluster_probs(&lp, 2);
        let b = lattice_cluster_probs(&lp, &counts, DEFAULT_STATE_CAP).unwrap();
        for j in 0..4 {
            for lvl in 0..2 {
                assert!((a.log_prob[j][lvl] - b.log_prob[j][lvl]).abs() < 1e-12);
                for (x, y) in a.grad[j][lvl].iter().zip(&b.grad[j][lvl]) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn state_cap_is_enforced() {
        let lp = LinearPredictors::new(vec![vec![0.0, 0.0]; 6], vec![vec![]; 6]).unwrap();
        let stat = SufficientStat::Multinomial { counts: vec![2, 2], size: 6 };
        assert!(matches!(
            cluster_cond_probs_with_cap(&lp, &stat, 8),
            Err(IcpwError::StateCap { states: 9, cap: 8 })
        ));
        assert!(cluster_cond_probs_with_cap(&lp, &stat, 9).is_ok());
    }
}
