mod common;

use icpw::cond_prob::{
    cluster_cond_probs, cond_prob_binary, cond_prob_bruteforce, cond_prob_multinomial, cond_prob_vector,
    log_elem_sym, LinearPredictors,
};
use icpw::data::SufficientStat;
use icpw::oracle::{central_difference, enumerate_arrangements, joint_model_cond_prob};
use proptest::prelude::*;

use common::rel_close;

/// Design rows, coefficients and per-level counts (at least two levels present).
fn instance(max_level: u32, max_size: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, Vec<usize>)> {
    (2..=max_size, 1usize..=2).prop_flat_map(move |(n, p)| {
        let levels = max_level as usize + 1;
        (
            prop::collection::vec(prop::collection::vec(-2.0..2.0f64, p), n),
            prop::collection::vec(-1.5..1.5f64, p * max_level as usize),
            prop::collection::vec(0..levels, n),
        )
            .prop_filter_map("need two levels", move |(x, b, a)| {
                let mut counts = vec![0usize; levels];
                a.iter().for_each(|&v| counts[v] += 1);
                (counts.iter().filter(|&&c| c > 0).count() >= 2).then_some((x, b, counts))
            })
    })
}

fn build(x: &[Vec<f64>], beta: &[f64], counts: &[usize]) -> (LinearPredictors, SufficientStat) {
    let rows: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
    let lp = LinearPredictors::from_beta(&rows, beta, counts.len() as u32 - 1).unwrap();
    (lp, SufficientStat::from_level_counts(counts).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn probabilities_normalize((x, beta, counts) in instance(1, 12)) {
        let (lp, stat) = build(&x, &beta, &counts);
        let probs = cluster_cond_probs(&lp, &stat).unwrap();
        let mut expected_treated = 0.0;
        for row in &probs.log_prob {
            let p0 = row[0].exp();
            let p1 = row[1].exp();
            prop_assert!((p0 + p1 - 1.0).abs() < 1e-12);
            expected_treated += p1;
        }
        // the counts are fixed, so the marginal probabilities add up to them
        prop_assert!((expected_treated - counts[1] as f64).abs() < 1e-10);
    }

    #[test]
    fn multinomial_probabilities_normalize((x, beta, counts) in instance(2, 7)) {
        let (lp, stat) = build(&x, &beta, &counts);
        let probs = cluster_cond_probs(&lp, &stat).unwrap();
        for (a, &c) in counts.iter().enumerate() {
            let total: f64 = probs.log_prob.iter().map(|r| r[a].exp()).sum();
            prop_assert!((total - c as f64).abs() < 1e-9);
        }
        for row in &probs.log_prob {
            let s: f64 = row.iter().map(|v| v.exp()).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dp_matches_enumeration((x, beta, counts) in instance(1, 11)) {
        let (lp, stat) = build(&x, &beta, &counts);
        let probs = cluster_cond_probs(&lp, &stat).unwrap();
        for j in 0..x.len() {
            for a in 0..2u32 {
                let b = cond_prob_bruteforce(&lp, &stat, j, a, None).unwrap();
                prop_assert!(rel_close(probs.log_prob[j][a as usize].exp(), b.prob, 1e-10));
                let single = cond_prob_binary(&lp, counts[1], j, a).unwrap();
                prop_assert!(rel_close(single.prob, b.prob, 1e-10));
            }
        }
    }

    #[test]
    fn multinomial_dp_matches_enumeration((x, beta, counts) in instance(2, 7)) {
        let (lp, stat) = build(&x, &beta, &counts);
        for j in 0..x.len() {
            for a in 0..3u32 {
                if counts[a as usize] == 0 {
                    continue;
                }
                let dp = cond_prob_multinomial(&lp, &stat, j, a).unwrap();
                let b = cond_prob_bruteforce(&lp, &stat, j, a, None).unwrap();
                prop_assert!(rel_close(dp.prob, b.prob, 1e-9));
                for (g, h) in dp.grad_log_prob.iter().zip(&b.grad_log_prob) {
                    prop_assert!((g - h).abs() <= 1e-8 * g.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn cluster_intercept_cancels((x, beta, counts) in instance(1, 10), u in -4.0..4.0f64) {
        let (lp, stat) = build(&x, &beta, &counts);
        let base = cluster_cond_probs(&lp, &stat).unwrap();
        let moved = cluster_cond_probs(&lp.shifted(&[u]), &stat).unwrap();
        for (r0, r1) in base.log_prob.iter().zip(&moved.log_prob) {
            prop_assert!((r0[1] - r1[1]).abs() < 1e-11);
        }
        // and Bayes' rule on the joint model, at any intercept, gives the same answer
        for j in 0..x.len() {
            let joint = joint_model_cond_prob(&lp, &stat, j, 1, &[u]).unwrap();
            prop_assert!(rel_close(joint, base.log_prob[j][1].exp(), 1e-10));
        }
    }

    #[test]
    fn unit_order_does_not_matter((x, beta, counts) in instance(2, 7), seed in any::<u64>()) {
        let (lp, stat) = build(&x, &beta, &counts);
        let n = x.len();
        let mut order: Vec<usize> = (0..n).collect();
        // deterministic shuffle from the seed
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let base = cluster_cond_probs(&lp, &stat).unwrap();
        let perm = cluster_cond_probs(&lp.permuted(&order), &stat).unwrap();
        for (new, &old) in order.iter().enumerate() {
            for a in 0..3 {
                let (p, q) = (perm.log_prob[new][a], base.log_prob[old][a]);
                prop_assert!(p == q || (p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences((x, beta, counts) in instance(2, 6)) {
        let rows: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
        let stat = SufficientStat::from_level_counts(&counts).unwrap();
        let at = |b: &[f64]| cluster_cond_probs(&LinearPredictors::from_beta(&rows, b, 2).unwrap(), &stat).unwrap();
        let probs = at(&beta);
        for j in 0..x.len() {
            for a in 0..3 {
                if counts[a] == 0 {
                    continue;
                }
                let fd = central_difference(|b| at(b).log_prob[j][a], &beta, 1e-5);
                for (g, h) in probs.grad[j][a].iter().zip(&fd) {
                    prop_assert!((g - h).abs() <= 1e-6 * g.abs().max(1.0), "{g} vs {h}");
                }
            }
        }
    }

    #[test]
    fn vector_probability_matches_enumeration((x, beta, counts) in instance(2, 6)) {
        let (lp, stat) = build(&x, &beta, &counts);
        let arrangements = enumerate_arrangements(&lp, &stat).unwrap();
        let total: f64 = arrangements.iter().map(|(_, p)| p).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for (a, p) in arrangements.iter().take(20) {
            let r = cond_prob_vector(&lp, a, 1_000_000).unwrap();
            prop_assert!(rel_close(r.prob, *p, 1e-10));
        }
    }

    #[test]
    fn elementary_symmetric_matches_direct_sum(w in prop::collection::vec(0.05..20.0f64, 1..9), t in 0usize..9) {
        prop_assume!(t <= w.len());
        let n = w.len();
        let direct: f64 = (0u32..1 << n)
            .filter(|m| m.count_ones() as usize == t)
            .map(|m| (0..n).filter(|i| m >> i & 1 == 1).map(|i| w[i]).product::<f64>())
            .sum();
        prop_assert!(rel_close(log_elem_sym(&w, t).unwrap().exp(), direct, 1e-12));
    }
}

#[test]
fn elementary_symmetric_small_cases() {
    assert_eq!(log_elem_sym(&[2.0, 3.0], 0).unwrap(), 0.0);
    assert!((log_elem_sym(&[2.0, 3.0], 1).unwrap() - 5f64.ln()).abs() < 1e-15);
    assert!((log_elem_sym(&[2.0, 3.0, 4.0], 2).unwrap() - 26f64.ln()).abs() < 1e-15);
    assert!(log_elem_sym(&[1.0], 2).is_err());
}

#[test]
fn huge_predictors_stay_finite() {
    let lp = LinearPredictors::binary(vec![700.0, -700.0, 0.0, 650.0], vec![vec![]; 4]).unwrap();
    let stat = SufficientStat::Binary { t: 2, size: 4 };
    let probs = cluster_cond_probs(&lp, &stat).unwrap();
    for row in &probs.log_prob {
        assert!(row.iter().all(|v| v.is_finite() && *v <= 1e-12));
    }
    // units 0 and 3 take the two treatments almost surely
    assert!(probs.log_prob[0][1].exp() > 1.0 - 1e-12);
    assert!(probs.log_prob[3][1].exp() > 1.0 - 1e-12);
}
