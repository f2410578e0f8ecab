use icpw::estimators::Method;
use icpw::numeric::{mean, sample_sd};
use icpw::pipeline::Recipe;
use icpw::simulate::{
    generate_dataset, render_report, run_rep, summarize, ReportFormat, ScenarioConfig, SimulationReport,
};
use proptest::prelude::*;

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64;
    cov / (sample_sd(a) * sample_sd(b))
}

#[test]
fn scenario_one_intercepts_are_independent_of_covariates() {
    let mut c = ScenarioConfig::preset(1, 1, 5, 1).unwrap();
    c.m = 2000;
    let g = generate_dataset(&c, 0).unwrap();
    let u: Vec<f64> = g.latent.iter().map(|l| l.u).collect();
    let xbar: Vec<f64> = g
        .dataset
        .clusters()
        .iter()
        .map(|cl| mean(&cl.units().iter().map(|r| r.covariates[0]).collect::<Vec<_>>()))
        .collect();
    assert!(correlation(&u, &xbar).abs() < 0.05);
    assert!(mean(&u).abs() < 3.0 / (2000f64).sqrt());
    assert!((g.tau_simu() - 2.0).abs() < 0.1);
}

#[test]
fn scenario_two_intercepts_track_covariates() {
    let g = generate_dataset(&ScenarioConfig::preset(1, 2, 5, 1).unwrap(), 0).unwrap();
    let u: Vec<f64> = g.latent.iter().map(|l| l.u).collect();
    let xbar: Vec<f64> = g
        .dataset
        .clusters()
        .iter()
        .map(|cl| mean(&cl.units().iter().map(|r| r.covariates[0]).collect::<Vec<_>>()))
        .collect();
    assert!(correlation(&u, &xbar) < -0.5);
}

#[test]
fn cluster_sizes_follow_the_study() {
    for (study, hi) in [(1, 5), (2, 20)] {
        let c = ScenarioConfig::preset(study, 1, 1, 1).unwrap();
        let g = generate_dataset(&c, 0).unwrap();
        let sizes = g.dataset.cluster_sizes();
        assert!(sizes.iter().all(|&s| (2..=hi).contains(&s)));
        assert_eq!(g.dataset.m(), c.m);
    }
}

#[test]
fn generation_is_reproducible_and_rep_specific() {
    let c = ScenarioConfig::preset(1, 4, 42, 3).unwrap();
    let a = generate_dataset(&c, 2).unwrap();
    let b = generate_dataset(&c, 2).unwrap();
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.latent, b.latent);
    assert_ne!(generate_dataset(&c, 1).unwrap().dataset, a.dataset);
}

#[test]
fn observed_outcome_is_the_realized_potential_outcome() {
    let g = generate_dataset(&ScenarioConfig::preset(2, 3, 8, 1).unwrap(), 0).unwrap();
    for (c, l) in g.dataset.clusters().iter().zip(&g.latent) {
        for (j, u) in c.units().iter().enumerate() {
            let expected = if u.treatment == 1 { l.y1[j] } else { l.y0[j] };
            assert_eq!(u.outcome, expected);
        }
    }
}

fn small_report(reps: usize) -> (ScenarioConfig, Vec<icpw::simulate::RepOutcome>) {
    let mut c = ScenarioConfig::preset(1, 2, 3, reps).unwrap();
    c.m = 40;
    let outcomes = (0..reps)
        .map(|r| run_rep(&c, r, &Method::ALL, &Recipe::new(Method::Icpw)).unwrap())
        .collect();
    (c, outcomes)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn summaries_ignore_replicate_order(seed in any::<u64>()) {
        let (c, outcomes) = small_report(6);
        let mut shuffled = outcomes.clone();
        let n = shuffled.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = summarize(&c, &Method::ALL, &outcomes);
        let b = summarize(&c, &Method::ALL, &shuffled);
        for (x, y) in a.rows.iter().zip(&b.rows) {
            prop_assert_eq!(&x.method, &y.method);
            prop_assert!((x.mean.unwrap() - y.mean.unwrap()).abs() < 1e-12);
            prop_assert!((x.sd.unwrap() - y.sd.unwrap()).abs() < 1e-12);
        }
    }
}

#[test]
fn report_rows_and_round_trip() {
    let (c, outcomes) = small_report(5);
    let report = summarize(&c, &Method::ALL, &outcomes);
    assert_eq!(report.rows.len(), 5);
    for r in &report.rows {
        assert!((r.bias.unwrap() - (r.mean.unwrap() - c.tau)).abs() < 1e-12);
        assert_eq!(r.reps + r.failures, 5);
    }
    let json = render_report(&report, ReportFormat::Json).unwrap();
    let back: SimulationReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
    let csv = render_report(&report, ReportFormat::Csv).unwrap();
    assert_eq!(csv.lines().count(), 6);
    let empty = summarize(&c, &[], &outcomes);
    assert_eq!(render_report(&empty, ReportFormat::Csv).unwrap().lines().count(), 1);
}
