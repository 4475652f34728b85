use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::profile::DatasetProfile;
use super::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

/// Text cells of a traffic table, label column included.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub kinds: Vec<ColumnKind>,
    /// Absent for unlabeled traffic fed to a trained model.
    pub label_column: Option<usize>,
}

fn parses_numeric(cell: &str) -> bool {
    cell.trim().parse::<f64>().is_ok()
}

fn infer_kinds(columns: usize, rows: &[Vec<String>]) -> Vec<ColumnKind> {
    (0..columns)
        .map(|c| {
            if !rows.is_empty() && rows.iter().all(|r| parses_numeric(&r[c])) {
                ColumnKind::Numeric
            } else {
                ColumnKind::Categorical
            }
        })
        .collect()
}

impl RawTable {
    /// Builds a table from in-memory rows, inferring column kinds.
    pub fn from_rows(columns: Vec<String>, rows: Vec<Vec<String>>, label: &str) -> Result<Self, DataError> {
        let mut t = Self::from_rows_unlabeled(columns, rows)?;
        t.label_column = Some(
            t.columns
                .iter()
                .position(|c| c == label)
                .ok_or_else(|| DataError::MissingColumn(label.to_string()))?,
        );
        Ok(t)
    }

    pub fn from_rows_unlabeled(columns: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self, DataError> {
        for (i, r) in rows.iter().enumerate() {
            if r.len() != columns.len() {
                return Err(DataError::Ingest {
                    row: i + 1,
                    message: format!("{} cells, header has {}", r.len(), columns.len()),
                });
            }
        }
        let kinds = infer_kinds(columns.len(), &rows);
        Ok(Self {
            columns,
            rows,
            kinds,
            label_column: None,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Indices of every column except the label.
    pub fn feature_columns(&self) -> Vec<usize> {
        (0..self.columns.len()).filter(|&c| Some(c) != self.label_column).collect()
    }

    /// Removes exact duplicate rows, keeping first occurrences; returns how many were dropped.
    pub fn dedup(&mut self) -> usize {
        let before = self.rows.len();
        let mut seen = HashSet::with_capacity(before);
        self.rows.retain(|r| seen.insert(r.clone()));
        before - self.rows.len()
    }

    /// Removes rows with a cell that parses to an infinite or NaN number.
    pub fn drop_non_finite(&mut self) -> usize {
        let before = self.rows.len();
        self.rows.retain(|r| {
            r.iter()
                .all(|c| c.trim().parse::<f64>().map_or(true, f64::is_finite))
        });
        let removed = before - self.rows.len();
        if removed > 0 {
            self.kinds = infer_kinds(self.columns.len(), &self.rows);
        }
        removed
    }

    /// Label cells, when the table has a label column.
    pub fn labels(&self) -> Option<Vec<&str>> {
        self.label_column.map(|c| self.rows.iter().map(|r| r[c].as_str()).collect())
    }

    pub fn drop_columns(&mut self, names: &[String]) {
        let label_name = self.label_column.map(|c| self.columns[c].clone());
        let keep: Vec<usize> = (0..self.columns.len())
            .filter(|&c| !names.iter().any(|n| n == &self.columns[c]))
            .collect();
        self.columns = keep.iter().map(|&c| self.columns[c].clone()).collect();
        self.kinds = keep.iter().map(|&c| self.kinds[c]).collect();
        for r in &mut self.rows {
            *r = keep.iter().map(|&c| std::mem::take(&mut r[c])).collect();
        }
        self.label_column = label_name.map(|l| {
            self.columns
                .iter()
                .position(|c| *c == l)
                .expect("label column is never dropped")
        });
    }

    /// Keeps a seeded uniform sample of `n` rows in their original order.
    pub fn subsample(&mut self, n: usize, seed: u64) {
        if n >= self.rows.len() {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = rand::seq::index::sample(&mut rng, self.rows.len(), n).into_vec();
        keep.sort_unstable();
        let mut rows = std::mem::take(&mut self.rows);
        self.rows = keep.into_iter().map(|i| std::mem::take(&mut rows[i])).collect();
    }
}

/// Reads a CSV according to `profile`: header or preset names, column drops,
/// optional non-finite-row and duplicate removal.
pub fn ingest(path: &Path, profile: &DatasetProfile) -> Result<RawTable, DataError> {
    ingest_reader(open(path)?, profile)
}

/// Like [`ingest`] but accepts files without the label column.
pub fn ingest_optional_label(path: &Path, profile: &DatasetProfile) -> Result<RawTable, DataError> {
    read_table(open(path)?, profile, false)
}

fn open(path: &Path) -> Result<std::fs::File, DataError> {
    std::fs::File::open(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn ingest_reader<R: Read>(reader: R, profile: &DatasetProfile) -> Result<RawTable, DataError> {
    read_table(reader, profile, true)
}

fn read_table<R: Read>(reader: R, profile: &DatasetProfile, require_label: bool) -> Result<RawTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(profile.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let columns: Vec<String> = if profile.has_header {
        rdr.headers()
            .map_err(|e| DataError::Ingest {
                row: 0,
                message: e.to_string(),
            })?
            .iter()
            .map(str::to_string)
            .collect()
    } else {
        profile
            .column_names
            .clone()
            .ok_or_else(|| DataError::Profile("headerless profile needs column_names".into()))?
    };
    let label_idx = columns.iter().position(|c| *c == profile.label_column);
    if require_label && label_idx.is_none() {
        return Err(DataError::MissingColumn(profile.label_column.clone()));
    }
    let first_data_row = if profile.has_header { 2 } else { 1 };
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| DataError::Ingest {
            row: i + first_data_row,
            message: e.to_string(),
        })?;
        if i == 0
            && !profile.has_header
            && label_idx
                .and_then(|l| rec.get(l))
                .is_some_and(|c| c.eq_ignore_ascii_case(&profile.label_column))
        {
            // a headerless profile applied to a file that carries a header anyway
            continue;
        }
        if rec.len() != columns.len() {
            return Err(DataError::Ingest {
                row: i + first_data_row,
                message: format!("{} cells, expected {}", rec.len(), columns.len()),
            });
        }
        rows.push(rec.iter().map(str::to_string).collect::<Vec<_>>());
    }
    let mut table = match label_idx {
        Some(_) => RawTable::from_rows(columns, rows, &profile.label_column)?,
        None => RawTable::from_rows_unlabeled(columns, rows)?,
    };
    let drops: Vec<String> = profile
        .drop_columns
        .iter()
        .filter(|c| **c != profile.label_column)
        .cloned()
        .collect();
    table.drop_columns(&drops);
    if profile.drop_non_finite {
        table.drop_non_finite();
    }
    if profile.dedup {
        table.dedup();
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_profile() -> DatasetProfile {
        let mut p = DatasetProfile::synthetic();
        p.label_column = "y".into();
        p
    }

    #[test]
    fn dedup_removes_repeated_row() {
        let csv = "a,b,y\n1,x,normal\n1,x,normal\n2,z,attack\n";
        let mut p = toy_profile();
        p.dedup = true;
        let t = ingest_reader(csv.as_bytes(), &p).unwrap();
        assert_eq!(t.n_rows(), 2);
        assert_eq!(t.kinds, vec![ColumnKind::Numeric, ColumnKind::Categorical, ColumnKind::Categorical]);
    }

    #[test]
    fn ragged_row_reports_line() {
        let csv = "a,b,y\n1,2,normal\n3,normal\n";
        match ingest_reader(csv.as_bytes(), &toy_profile()) {
            Err(DataError::Ingest { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_label_column_fails() {
        let csv = "a,b\n1,2\n";
        assert!(matches!(
            ingest_reader(csv.as_bytes(), &toy_profile()),
            Err(DataError::MissingColumn(_))
        ));
    }

    #[test]
    fn drops_and_infinite_rows() {
        let csv = "id,a,b,y\n0,1,inf,normal\n1,2,3,attack\n2,NaN,1,normal\n";
        let mut p = toy_profile();
        p.drop_columns = vec!["id".into()];
        p.drop_non_finite = true;
        let t = ingest_reader(csv.as_bytes(), &p).unwrap();
        assert_eq!(t.columns, vec!["a", "b", "y"]);
        assert_eq!(t.n_rows(), 1);
        assert_eq!(t.label_column, Some(2));
        assert_eq!(t.kinds[0], ColumnKind::Numeric);
    }

    #[test]
    fn subsample_is_seeded_and_ordered() {
        let rows: Vec<Vec<String>> = (0..50).map(|i| vec![i.to_string(), "normal".into()]).collect();
        let base = RawTable::from_rows(vec!["a".into(), "y".into()], rows, "y").unwrap();
        let mut a = base.clone();
        a.subsample(10, 1);
        let mut b = base.clone();
        b.subsample(10, 1);
        assert_eq!(a, b);
        let idx: Vec<usize> = a.rows.iter().map(|r| r[0].parse().unwrap()).collect();
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn headerless_uses_profile_names() {
        let mut row = vec!["0".to_string(); 41];
        row[1] = "tcp".into();
        let line = format!("{},neptune,21\n", row.join(","));
        let t = ingest_reader(line.as_bytes(), &DatasetProfile::nsl_kdd()).unwrap();
        assert_eq!(t.columns.len(), 42);
        assert_eq!(t.feature_columns().len(), 41);
        assert_eq!(t.labels().unwrap(), vec!["neptune"]);
    }
}
