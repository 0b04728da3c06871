//! Readers for the CSV and JSON input files.
//!
//! Every malformed input surfaces as an [`InputError`] naming the file and,
//! where there is one, the offending line.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::path::Path;

use abfdr::{DMatrix, ExperimentSummary, MetricCell};
use serde::de::DeserializeOwned;

/// Malformed or inconsistent input; the process exits with status 2.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub type InputResult<T> = std::result::Result<T, InputError>;

fn fail<T>(path: &Path, line: Option<u64>, msg: impl fmt::Display) -> InputResult<T> {
    Err(InputError(match line {
        Some(line) => format!("{}: line {line}: {msg}", path.display()),
        None => format!("{}: {msg}", path.display()),
    }))
}

fn csv_error(path: &Path, err: csv::Error) -> InputError {
    let line = err.position().map(|p| p.line());
    let msg = match err.kind() {
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => format!("expected {expected_len} fields, found {len}"),
        _ => err.to_string(),
    };
    fail::<()>(path, line, msg).unwrap_err()
}

/// A CSV file with its header and records, read eagerly.
struct Table {
    header: Vec<String>,
    rows: Vec<(u64, csv::StringRecord)>,
}

fn read_table(path: &Path) -> InputResult<Table> {
    let file = File::open(path).or_else(|e| fail(path, None, format!("cannot open: {e}")))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect::<Vec<_>>();
    if header.iter().all(String::is_empty) {
        return fail(path, Some(1), "missing header row");
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        rows.push((line, record));
    }
    Ok(Table { header, rows })
}

fn column(path: &Path, header: &[String], name: &str) -> InputResult<usize> {
    match header.iter().position(|h| h == name) {
        Some(i) => Ok(i),
        None => fail(path, Some(1), format!("missing column `{name}`")),
    }
}

fn field<T: std::str::FromStr>(
    path: &Path,
    line: u64,
    record: &csv::StringRecord,
    index: usize,
    name: &str,
) -> InputResult<T>
where
    T::Err: fmt::Display,
{
    let raw = record.get(index).unwrap_or("");
    if raw.is_empty() {
        return fail(path, Some(line), format!("column `{name}` is empty"));
    }
    raw.parse().or_else(|e| {
        fail(
            path,
            Some(line),
            format!("column `{name}`: cannot parse `{raw}`: {e}"),
        )
    })
}

fn number(
    path: &Path,
    line: u64,
    record: &csv::StringRecord,
    index: usize,
    name: &str,
) -> InputResult<f64> {
    let value: f64 = field(path, line, record, index, name)?;
    if !value.is_finite() {
        return fail(path, Some(line), format!("column `{name}` is not finite"));
    }
    Ok(value)
}

/// Per-group, per-metric statistics before the control covariance is known.
#[derive(Debug, Clone)]
pub struct SummaryTable {
    pub metric_names: Vec<String>,
    pub cells: Vec<Vec<MetricCell>>,
}

impl SummaryTable {
    pub fn with_covariance(self, control_cov: DMatrix<f64>) -> ExperimentSummary {
        ExperimentSummary::new(self.cells, control_cov).with_metric_names(self.metric_names)
    }
}

/// Reads `group_id,metric_id,mean,variance,n`. Metrics keep the order of
/// their first appearance; group ids must run from 0 (control) to G.
pub fn read_summary(path: &Path) -> InputResult<SummaryTable> {
    let table = read_table(path)?;
    let h = &table.header;
    let cols = [
        column(path, h, "group_id")?,
        column(path, h, "metric_id")?,
        column(path, h, "mean")?,
        column(path, h, "variance")?,
        column(path, h, "n")?,
    ];

    let mut metric_names: Vec<String> = Vec::new();
    let mut metric_index: HashMap<String, usize> = HashMap::new();
    let mut entries: HashMap<(usize, usize), (u64, MetricCell)> = HashMap::new();
    let mut max_group = 0;
    for (line, record) in &table.rows {
        let line = *line;
        let group: usize = field(path, line, record, cols[0], "group_id")?;
        let metric: String = field(path, line, record, cols[1], "metric_id")?;
        let mean = number(path, line, record, cols[2], "mean")?;
        let variance = number(path, line, record, cols[3], "variance")?;
        let n: u64 = field(path, line, record, cols[4], "n")?;

        let next = metric_names.len();
        let q = *metric_index.entry(metric.clone()).or_insert_with(|| {
            metric_names.push(metric.clone());
            next
        });
        if let Some((first, _)) = entries.get(&(group, q)) {
            return fail(
                path,
                Some(line),
                format!("group {group}, metric `{metric}` already given on line {first}"),
            );
        }
        entries.insert((group, q), (line, MetricCell::new(mean, variance, n)));
        max_group = max_group.max(group);
    }
    if entries.is_empty() {
        return fail(path, None, "no data rows");
    }

    let mut cells = Vec::with_capacity(max_group + 1);
    for g in 0..=max_group {
        let mut row = Vec::with_capacity(metric_names.len());
        for (q, name) in metric_names.iter().enumerate() {
            match entries.get(&(g, q)) {
                Some((_, cell)) => row.push(*cell),
                None => {
                    return fail(
                        path,
                        None,
                        format!("group {g} has no row for metric `{name}`"),
                    )
                }
            }
        }
        cells.push(row);
    }
    Ok(SummaryTable {
        metric_names,
        cells,
    })
}

/// Reads a square matrix whose header names the metrics, reordered to
/// `metrics`.
pub fn read_covariance(path: &Path, metrics: &[String]) -> InputResult<DMatrix<f64>> {
    let table = read_table(path)?;
    let m = table.header.len();
    if table.rows.len() != m {
        return fail(
            path,
            None,
            format!(
                "expected {m} rows after the header, found {}",
                table.rows.len()
            ),
        );
    }
    let mut raw = DMatrix::zeros(m, m);
    for (r, (line, record)) in table.rows.iter().enumerate() {
        for c in 0..m {
            raw[(r, c)] = number(path, *line, record, c, &table.header[c])?;
        }
    }
    let order = metrics
        .iter()
        .map(|name| column(path, &table.header, name))
        .collect::<InputResult<Vec<_>>>()?;
    if m != metrics.len() {
        return fail(
            path,
            Some(1),
            format!("expected {} metric columns, found {m}", metrics.len()),
        );
    }
    Ok(DMatrix::from_fn(m, m, |a, b| raw[(order[a], order[b])]))
}

/// Unit-level rows: first column the unit id, then one column per metric.
#[derive(Debug, Clone)]
pub struct Units {
    pub metric_names: Vec<String>,
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Units {
    /// Keeps only `metrics`, in that order.
    pub fn select(&self, metrics: &[String], path: &Path) -> InputResult<Units> {
        let order = metrics
            .iter()
            .map(|name| column(path, &self.metric_names, name))
            .collect::<InputResult<Vec<_>>>()?;
        Ok(Units {
            metric_names: metrics.to_vec(),
            ids: self.ids.clone(),
            rows: self
                .rows
                .iter()
                .map(|row| order.iter().map(|&c| row[c]).collect())
                .collect(),
        })
    }
}

pub fn read_units(path: &Path) -> InputResult<Units> {
    let table = read_table(path)?;
    if table.header.len() < 2 {
        return fail(
            path,
            Some(1),
            "expected a unit id column followed by metric columns",
        );
    }
    let metric_names = table.header[1..].to_vec();
    let mut ids = Vec::with_capacity(table.rows.len());
    let mut rows = Vec::with_capacity(table.rows.len());
    for (line, record) in &table.rows {
        let id: String = field(path, *line, record, 0, &table.header[0])?;
        let row = (1..table.header.len())
            .map(|c| number(path, *line, record, c, &table.header[c]))
            .collect::<InputResult<Vec<_>>>()?;
        ids.push(id);
        rows.push(row);
    }
    if rows.len() < 2 {
        return fail(
            path,
            None,
            format!("need at least 2 units, found {}", rows.len()),
        );
    }
    Ok(Units {
        metric_names,
        ids,
        rows,
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> InputResult<T> {
    let file = File::open(path).or_else(|e| fail(path, None, format!("cannot open: {e}")))?;
    serde_json::from_reader(std::io::BufReader::new(file)).or_else(|e| {
        let line = (e.line() > 0).then_some(e.line() as u64);
        fail(path, line, e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn summary_in_any_row_order() {
        let f = file(
            "group_id,metric_id,mean,variance,n\n\
             1,ctr,0.11,0.09,100\n\
             0,clicks,3,2,120\n\
             0,ctr,0.1,0.09,120\n\
             1,clicks,3.2,2.1,100\n",
        );
        let s = read_summary(f.path()).unwrap();
        assert_eq!(s.metric_names, vec!["ctr", "clicks"]);
        assert_eq!(s.cells[0][1], MetricCell::new(3.0, 2.0, 120));
        assert_eq!(s.cells[1][0].n, 100);
    }

    #[test]
    fn missing_variance_names_the_line() {
        let f = file("group_id,metric_id,mean,variance,n\n0,a,1,1,10\n1,a,1,,10\n");
        let err = read_summary(f.path()).unwrap_err().0;
        assert!(err.contains("line 3") && err.contains("variance"), "{err}");

        let short = file("group_id,metric_id,mean,variance,n\n0,a,1,1,10\n1,a,1,10\n");
        let err = read_summary(short.path()).unwrap_err().0;
        assert!(
            err.contains("line 3") && err.contains("expected 5 fields"),
            "{err}"
        );
    }

    #[test]
    fn summary_structure_errors() {
        let dup = file("group_id,metric_id,mean,variance,n\n0,a,1,1,10\n0,a,1,1,10\n");
        assert!(read_summary(dup.path())
            .unwrap_err()
            .0
            .contains("already given on line 2"));
        let gap = file("group_id,metric_id,mean,variance,n\n0,a,1,1,10\n2,a,1,1,10\n");
        assert!(read_summary(gap.path()).unwrap_err().0.contains("group 1"));
        let header = file("group,metric_id,mean,variance,n\n0,a,1,1,10\n");
        assert!(read_summary(header.path())
            .unwrap_err()
            .0
            .contains("`group_id`"));
    }

    #[test]
    fn covariance_is_reordered_by_name() {
        let f = file("b,a\n4,1\n1,2\n");
        let m = read_covariance(f.path(), &["a".into(), "b".into()]).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 4.0]));
        assert!(read_covariance(f.path(), &["a".into(), "c".into()]).is_err());
    }

    #[test]
    fn units_selection() {
        let f = file("unit_id,x,y\nu1,1,2\nu2,3,4\n");
        let units = read_units(f.path()).unwrap();
        let picked = units.select(&["y".into()], f.path()).unwrap();
        assert_eq!(picked.rows, vec![vec![2.0], vec![4.0]]);
        let bad = file("unit_id,x\nu1,oops\nu2,1\n");
        assert!(read_units(bad.path()).unwrap_err().0.contains("line 2"));
    }
}
