//! CSV ingestion and artifact writing.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use scs_core::nuisance::Propensity;
use scs_core::Dataset;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// A numeric CSV held column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> CliResult<Table> {
        let file = std::fs::File::open(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: std::io::Read>(r: R) -> CliResult<Table> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut columns = vec![Vec::new(); headers.len()];
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            for (j, cell) in rec.iter().enumerate() {
                let v: f64 = cell.parse().map_err(|_| {
                    CliError::input(format!("row {}: column {} is not numeric: '{cell}'", row + 1, headers[j]))
                })?;
                columns[j].push(v);
            }
        }
        Ok(Table { headers, columns })
    }

    pub fn n(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn index(&self, name: &str) -> CliResult<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::input(format!("missing column: {name}")))
    }

    pub fn column(&self, name: &str) -> CliResult<&[f64]> {
        Ok(&self.columns[self.index(name)?])
    }

    /// Numbered columns `prefix1, prefix2, ...` in suffix order.
    pub fn numbered(&self, prefix: &str) -> Vec<(usize, String)> {
        let mut v: Vec<(usize, String)> = self
            .headers
            .iter()
            .filter_map(|h| {
                h.strip_prefix(prefix)
                    .and_then(|s| s.parse::<usize>().ok())
                    .map(|k| (k, h.clone()))
            })
            .collect();
        v.sort();
        v
    }

    pub fn matrix(&self, names: &[String]) -> CliResult<DMatrix<f64>> {
        let n = self.n();
        let idx: Vec<usize> = names.iter().map(|c| self.index(c)).collect::<CliResult<_>>()?;
        Ok(DMatrix::from_fn(n, idx.len(), |i, j| self.columns[idx[j]][i]))
    }

    /// Rows where `keep` is true.
    pub fn filter(&self, keep: &[bool]) -> Table {
        Table {
            headers: self.headers.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| c.iter().zip(keep).filter(|(_, k)| **k).map(|(v, _)| *v).collect())
                .collect(),
        }
    }
}

/// Converts a numeric cell to a 1-based group label.
pub fn group_label(v: f64, row: usize) -> CliResult<usize> {
    if v.fract() != 0.0 || v < 1.0 {
        return Err(CliError::input(format!("group label out of range: row {row} has label {v}")));
    }
    Ok(v as usize)
}

/// Dataset from the `y, t, x1..xp, z1..zq` layout.
pub fn dataset_from_table(tab: &Table, groups: Option<usize>, trials: Option<u32>) -> CliResult<(Dataset, Vec<String>)> {
    let y = tab.column("y")?;
    let t = tab.column("t")?;
    let xs: Vec<String> = tab.numbered("x").into_iter().map(|(_, h)| h).collect();
    if xs.is_empty() {
        return Err(CliError::input("missing column: x1"));
    }
    let zs: Vec<String> = tab.numbered("z").into_iter().map(|(_, h)| h).collect();
    let labels: Vec<usize> = t
        .iter()
        .enumerate()
        .map(|(i, v)| group_label(*v, i + 1))
        .collect::<CliResult<_>>()?;
    let h = groups.unwrap_or_else(|| labels.iter().copied().max().unwrap_or(1));
    let ds = Dataset::new(
        DVector::from_column_slice(y),
        labels,
        tab.matrix(&xs)?,
        tab.matrix(&zs)?,
        h,
    )?;
    let ds = match trials {
        Some(m) => ds.with_trials(m)?,
        None => ds,
    };
    Ok((ds, xs))
}

pub fn read_dataset(path: &Path, groups: Option<usize>, trials: Option<u32>) -> CliResult<(Dataset, Vec<String>)> {
    dataset_from_table(&Table::read(path)?, groups, trials)
}

/// Known propensities from a CSV with columns `e1..eH`.
pub fn read_propensity(path: &Path, ds: &Dataset) -> CliResult<Propensity> {
    let tab = Table::read(path)?;
    let h = ds.h_count;
    let names: Vec<String> = (1..=h).map(|k| format!("e{k}")).collect();
    let m = tab.matrix(&names)?;
    if m.nrows() != ds.n() {
        return Err(CliError::input(format!(
            "propensity file has {} rows, dataset has {}",
            m.nrows(),
            ds.n()
        )));
    }
    for i in 0..m.nrows() {
        let s: f64 = m.row(i).sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(CliError::input(format!("propensity row {} sums to {s}, not 1", i + 1)));
        }
    }
    Ok(Propensity::known(m)?)
}

pub fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult<()> {
    let s = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, s + "\n")?,
        None => {
            let mut o = std::io::stdout().lock();
            writeln!(o, "{s}")?;
        }
    }
    Ok(())
}
