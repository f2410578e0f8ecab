#![allow(dead_code)]

use icpw::data::{Cluster, Dataset, UnitRecord};

/// Dataset from `(treatments, outcomes, covariate rows)` per cluster, ids `c0, c1, ...`.
pub fn dataset(clusters: &[(Vec<u32>, Vec<f64>, Vec<Vec<f64>>)]) -> Dataset {
    let p = clusters[0].2[0].len();
    let cs = clusters
        .iter()
        .enumerate()
        .map(|(i, (a, y, x))| {
            let id = format!("c{i}");
            let units = a
                .iter()
                .zip(y)
                .zip(x)
                .map(|((&a, &y), x)| UnitRecord {
                    cluster_id: id.clone(),
                    treatment: a,
                    outcome: y,
                    covariates: x.clone(),
                })
                .collect();
            Cluster::new(id, units).unwrap()
        })
        .collect();
    Dataset::new(cs, (0..p).map(|k| format!("x{k}")).collect(), None).unwrap()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(a.abs()).max(f64::MIN_POSITIVE)
}
