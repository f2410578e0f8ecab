//! Clustered observational data: domain types, CSV ingestion, the cluster-level
//! positivity filter and per-cluster treatment-count statistics.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IcpwError, Result};

/// One observed unit: outcome, treatment level and covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub cluster_id: String,
    pub treatment: u32,
    pub outcome: f64,
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    id: String,
    units: Vec<UnitRecord>,
}

impl Cluster {
    pub fn new(id: impl Into<String>, units: Vec<UnitRecord>) -> Result<Self> {
        let id = id.into();
        if units.is_empty() {
            return Err(IcpwError::InvalidData(format!("cluster `{id}` has no units")));
        }
        if let Some(u) = units.iter().find(|u| u.cluster_id != id) {
            return Err(IcpwError::InvalidData(format!(
                "unit with cluster id `{}` placed in cluster `{id}`",
                u.cluster_id
            )));
        }
        Ok(Cluster { id, units })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn units(&self) -> &[UnitRecord] {
        &self.units
    }

    pub fn size(&self) -> usize {
        self.units.len()
    }

    pub fn treatments(&self) -> impl Iterator<Item = u32> + '_ {
        self.units.iter().map(|u| u.treatment)
    }

    pub fn design(&self) -> Vec<&[f64]> {
        self.units.iter().map(|u| u.covariates.as_slice()).collect()
    }

    /// Same units under a new identifier (bootstrap resamples need distinct ids).
    pub fn relabeled(&self, id: impl Into<String>) -> Cluster {
        let id = id.into();
        let units = self
            .units
            .iter()
            .map(|u| UnitRecord {
                cluster_id: id.clone(),
                ..u.clone()
            })
            .collect();
        Cluster { id, units }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    clusters: Vec<Cluster>,
    p: usize,
    max_level: u32,
    covariate_names: Vec<String>,
    n: usize,
}

impl Dataset {
    /// Builds a dataset, inferring the highest treatment level unless `declared_max_level`
    /// is given. Every level in `0..=K` must be observed and `K >= 1`.
    pub fn new(
        clusters: Vec<Cluster>,
        covariate_names: Vec<String>,
        declared_max_level: Option<u32>,
    ) -> Result<Self> {
        if clusters.is_empty() {
            return Err(IcpwError::EmptyData);
        }
        let p = covariate_names.len();
        let mut max_seen = 0;
        for (row, u) in clusters.iter().flat_map(|c| c.units.iter()).enumerate() {
            if u.covariates.len() != p {
                return Err(IcpwError::InvalidData(format!(
                    "unit {row} has {} covariates, expected {p}",
                    u.covariates.len()
                )));
            }
            if !u.outcome.is_finite() || u.covariates.iter().any(|x| !x.is_finite()) {
                return Err(IcpwError::InvalidData(format!("unit {row} has a non-finite value")));
            }
            if let Some(k) = declared_max_level {
                if u.treatment > k {
                    return Err(IcpwError::TreatmentRange {
                        row,
                        code: u.treatment as i64,
                        max_level: k,
                    });
                }
            }
            max_seen = max_seen.max(u.treatment);
        }
        let max_level = declared_max_level.unwrap_or(max_seen);
        if max_level < 1 {
            return Err(IcpwError::InvalidData(
                "treatment must have at least two levels".into(),
            ));
        }
        let mut seen = vec![false; max_level as usize + 1];
        for t in clusters.iter().flat_map(|c| c.treatments()) {
            seen[t as usize] = true;
        }
        if let Some(level) = seen.iter().position(|s| !s) {
            return Err(IcpwError::InvalidData(format!(
                "treatment level {level} is never observed"
            )));
        }
        let n = clusters.iter().map(Cluster::size).sum();
        Ok(Dataset {
            clusters,
            p,
            max_level,
            covariate_names,
            n,
        })
    }

    /// Groups table rows by cluster (first-appearance order) keeping within-cluster row order.
    pub fn from_table(table: &RawTable, schema: &Schema) -> Result<Self> {
        if table.rows.is_empty() {
            return Err(IcpwError::EmptyData);
        }
        let cluster_idx = table.column_index(&schema.cluster)?;
        let treat_idx = table.column_index(&schema.treatment)?;
        let outcome_idx = table.column_index(&schema.outcome)?;
        let cov_idx = schema
            .covariates
            .iter()
            .map(|c| table.column_index(c))
            .collect::<Result<Vec<_>>>()?;

        let mut order: Vec<String> = Vec::new();
        let mut groups: HashMap<String, Vec<UnitRecord>> = HashMap::new();
        for (row, record) in table.rows.iter().enumerate() {
            let cell = |idx: usize| -> Result<&str> {
                let v = record[idx].trim();
                if v.is_empty() || v.eq_ignore_ascii_case("na") {
                    return Err(IcpwError::Parse {
                        row: row + 1,
                        column: table.headers[idx].clone(),
                        message: "missing value".into(),
                    });
                }
                Ok(v)
            };
            let number = |idx: usize| -> Result<f64> {
                let raw = cell(idx)?;
                raw.parse::<f64>().map_err(|_| IcpwError::Parse {
                    row: row + 1,
                    column: table.headers[idx].clone(),
                    message: format!("`{raw}` is not a number"),
                })
            };

            let cluster_id = cell(cluster_idx)?.to_string();
            let raw_treat = cell(treat_idx)?;
            let code: i64 = raw_treat.parse().map_err(|_| IcpwError::Parse {
                row: row + 1,
                column: table.headers[treat_idx].clone(),
                message: format!("`{raw_treat}` is not an integer treatment code"),
            })?;
            let limit = schema.max_level.unwrap_or(u32::MAX);
            if code < 0 || code > limit as i64 {
                return Err(IcpwError::TreatmentRange {
                    row: row + 1,
                    code,
                    max_level: limit,
                });
            }
            let outcome = number(outcome_idx)?;
            let covariates = cov_idx.iter().map(|&i| number(i)).collect::<Result<Vec<_>>>()?;

            if !groups.contains_key(&cluster_id) {
                order.push(cluster_id.clone());
            }
            groups.entry(cluster_id.clone()).or_default().push(UnitRecord {
                cluster_id,
                treatment: code as u32,
                outcome,
                covariates,
            });
        }
        let clusters = order
            .into_iter()
            .map(|id| {
                let units = groups.remove(&id).unwrap_or_default();
                Cluster::new(id, units)
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(clusters, schema.covariates.clone(), schema.max_level)
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn m(&self) -> usize {
        self.clusters.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Highest treatment code `K`; levels are `0..=K`.
    pub fn max_level(&self) -> u32 {
        self.max_level
    }

    pub fn is_binary(&self) -> bool {
        self.max_level == 1
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(Cluster::size).collect()
    }

    pub fn units(&self) -> impl Iterator<Item = &UnitRecord> {
        self.clusters.iter().flat_map(|c| c.units.iter())
    }

    /// Dataset over a subset of clusters, keeping `p`, `K` and covariate names.
    pub fn with_clusters(&self, clusters: Vec<Cluster>) -> Result<Dataset> {
        Dataset::new(clusters, self.covariate_names.clone(), Some(self.max_level))
    }

    /// Serializes as CSV with columns `cluster, treatment, outcome, <covariates...>`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["cluster".to_string(), "treatment".into(), "outcome".into()];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        for u in self.units() {
            let mut rec = vec![u.cluster_id.clone(), u.treatment.to_string(), u.outcome.to_string()];
            rec.extend(u.covariates.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub cluster: String,
    pub treatment: String,
    pub outcome: String,
    pub covariates: Vec<String>,
    pub delimiter: u8,
    /// Declared highest treatment code; inferred from the data when absent.
    pub max_level: Option<u32>,
}

impl Schema {
    pub fn new(
        cluster: impl Into<String>,
        treatment: impl Into<String>,
        outcome: impl Into<String>,
        covariates: Vec<String>,
    ) -> Self {
        Schema {
            cluster: cluster.into(),
            treatment: treatment.into(),
            outcome: outcome.into(),
            covariates,
            delimiter: b',',
            max_level: None,
        }
    }

    /// The layout produced by [`Dataset::write_csv`].
    pub fn canonical(covariates: Vec<String>) -> Self {
        Schema::new("cluster", "treatment", "outcome", covariates)
    }
}

/// Header plus string cells, before any typing. Lets callers recode columns before ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn from_reader<R: Read>(reader: R, delimiter: u8) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .has_headers(true)
            .from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if headers.iter().all(|h| h.is_empty()) {
            return Err(IcpwError::EmptyData);
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(RawTable { headers, rows })
    }

    pub fn from_path(path: impl AsRef<Path>, delimiter: u8) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        RawTable::from_reader(file, delimiter)
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IcpwError::Schema(format!("missing column `{name}`")))
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let table = RawTable::from_path(path, schema.delimiter)?;
    Dataset::from_table(&table, schema)
}

/// Per-cluster treatment counts.
///
/// For a binary treatment this is the number treated; for `K + 1` levels it is the count
/// of each of the levels `0..K` (the count of level `K` is implied by the cluster size).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SufficientStat {
    Binary { t: usize, size: usize },
    Multinomial { counts: Vec<usize>, size: usize },
}

impl SufficientStat {
    pub fn size(&self) -> usize {
        match self {
            SufficientStat::Binary { size, .. } | SufficientStat::Multinomial { size, .. } => *size,
        }
    }

    /// Highest treatment level this statistic describes.
    pub fn max_level(&self) -> u32 {
        match self {
            SufficientStat::Binary { .. } => 1,
            SufficientStat::Multinomial { counts, .. } => counts.len() as u32,
        }
    }

    /// Counts of every level `0..=K`.
    pub fn level_counts(&self) -> Vec<usize> {
        match self {
            SufficientStat::Binary { t, size } => vec![size - t, *t],
            SufficientStat::Multinomial { counts, size } => {
                let mut all = counts.clone();
                all.push(size - counts.iter().sum::<usize>());
                all
            }
        }
    }

    /// Builds the statistic from counts of all levels `0..=K`.
    pub fn from_level_counts(all: &[usize]) -> Result<Self> {
        if all.len() < 2 {
            return Err(IcpwError::Domain("need at least two treatment levels".into()));
        }
        let size = all.iter().sum();
        Ok(if all.len() == 2 {
            SufficientStat::Binary { t: all[1], size }
        } else {
            SufficientStat::Multinomial {
                counts: all[..all.len() - 1].to_vec(),
                size,
            }
        })
    }

    /// True when the observed treatment vector is forced by the statistic (one level only).
    pub fn is_degenerate(&self) -> bool {
        let size = self.size();
        self.level_counts().iter().any(|&c| c == size)
    }
}

pub fn sufficient_stat(cluster: &Cluster, max_level: u32) -> SufficientStat {
    let mut all = vec![0usize; max_level as usize + 1];
    for a in cluster.treatments() {
        all[a as usize] += 1;
    }
    if max_level == 1 {
        SufficientStat::Binary {
            t: all[1],
            size: cluster.size(),
        }
    } else {
        all.pop();
        SufficientStat::Multinomial {
            counts: all,
            size: cluster.size(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositivityFilterResult {
    pub retained: Dataset,
    pub dropped_cluster_ids: Vec<String>,
    pub dropped_unit_count: usize,
}

/// Keeps clusters in which at least two treatment levels occur, i.e. whose treatment
/// vector is not pinned down by its counts. Size-one clusters are always dropped.
pub fn filter_positivity(data: &Dataset) -> Result<PositivityFilterResult> {
    let mut retained = Vec::new();
    let mut dropped_cluster_ids = Vec::new();
    let mut dropped_unit_count = 0;
    for c in data.clusters() {
        if sufficient_stat(c, data.max_level()).is_degenerate() {
            dropped_cluster_ids.push(c.id().to_string());
            dropped_unit_count += c.size();
        } else {
            retained.push(c.clone());
        }
    }
    if retained.is_empty() {
        return Err(IcpwError::NotEstimable {
            dropped: dropped_cluster_ids.len(),
        });
    }
    Ok(PositivityFilterResult {
        retained: data.with_clusters(retained)?,
        dropped_cluster_ids,
        dropped_unit_count,
    })
}
