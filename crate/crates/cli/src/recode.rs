//! Column recoding applied to the raw table before typed ingestion.

use icpw::data::RawTable;
use icpw::numeric::{mean, sample_sd};
use icpw::{IcpwError, Result};

fn numeric_column(table: &RawTable, col: usize, name: &str) -> Result<Vec<f64>> {
    table
        .rows
        .iter()
        .enumerate()
        .map(|(r, row)| {
            let cell = row.get(col).map(|s| s.trim()).unwrap_or("");
            cell.parse::<f64>().map_err(|_| IcpwError::Parse {
                row: r + 1,
                column: name.to_string(),
                message: format!("`{cell}` is not a number"),
            })
        })
        .collect()
}

/// Replaces `column` by indicator columns `column_<level>` for every level but the first.
/// Levels are ordered numerically when every value parses as a number, else lexically.
/// Returns the names of the new columns.
pub fn add_dummies(table: &mut RawTable, column: &str) -> Result<Vec<String>> {
    let col = table.column_index(column)?;
    let cells: Vec<String> = table
        .rows
        .iter()
        .map(|r| r.get(col).map(|s| s.trim().to_string()).unwrap_or_default())
        .collect();
    let mut levels: Vec<String> = cells.clone();
    levels.sort();
    levels.dedup();
    if levels.iter().all(|l| l.parse::<f64>().is_ok()) {
        levels.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
    if levels.len() < 2 {
        return Err(IcpwError::InvalidData(format!("column `{column}` has a single level")));
    }
    let names: Vec<String> = levels[1..].iter().map(|l| format!("{column}_{l}")).collect();
    for name in &names {
        if table.headers.contains(name) {
            return Err(IcpwError::Schema(format!("dummy column `{name}` already exists")));
        }
    }
    table.headers.extend(names.iter().cloned());
    for (row, cell) in table.rows.iter_mut().zip(&cells) {
        row.extend(levels[1..].iter().map(|l| if l == cell { "1" } else { "0" }.to_string()));
    }
    Ok(names)
}

/// Rescales a numeric column to mean zero and unit sample standard deviation, in place.
pub fn standardize(table: &mut RawTable, column: &str) -> Result<()> {
    let col = table.column_index(column)?;
    let values = numeric_column(table, col, column)?;
    let (mu, sd) = (mean(&values), sample_sd(&values));
    if !(sd > 0.0) {
        return Err(IcpwError::InvalidData(format!("column `{column}` is constant")));
    }
    for (row, v) in table.rows.iter_mut().zip(values) {
        row[col] = ((v - mu) / sd).to_string();
    }
    Ok(())
}

/// Covariate list with every dummy-coded column replaced by its indicators, in place.
pub fn expand_covariates(covariates: &[String], dummies: &[(String, Vec<String>)]) -> Vec<String> {
    covariates
        .iter()
        .flat_map(|c| match dummies.iter().find(|(name, _)| name == c) {
            Some((_, cols)) => cols.clone(),
            None => vec![c.clone()],
        })
        .collect()
}
