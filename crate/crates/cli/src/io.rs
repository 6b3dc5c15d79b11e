//! Delimited-text readers and writers.
//!
//! Numbers are written in Rust's shortest round-trip decimal form, so a
//! matrix written and read back is bit-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sparse_bartlett::linalg::{SparsityPattern, SpdMatrix};
use sparse_bartlett::posterior::DataMatrix;

use crate::error::{CliError, CliResult};

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn is_missing(field: &str) -> bool {
    field.is_empty() || field.eq_ignore_ascii_case("na")
}

fn csv_records(path: &Path, text: &str) -> CliResult<Vec<(u64, Vec<String>)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        out.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(out)
}

/// Reads an `n x p` data table. A first row with any non-numeric field
/// (other than an `NA`/empty marker) is treated as a header.
pub fn read_data_csv(path: &Path) -> CliResult<DataMatrix> {
    let text = read_text(path)?;
    let mut records = csv_records(path, &text)?;
    if let Some((_, first)) = records.first() {
        if first.iter().any(|f| !is_missing(f) && f.parse::<f64>().is_err()) {
            records.remove(0);
        }
    }
    let Some((_, first)) = records.first() else {
        return Err(CliError::validation(format!("{}: no data rows", path.display())));
    };
    let p = first.len();
    let n = records.len();
    let mut values = Vec::with_capacity(n * p);
    let mut observed = Vec::with_capacity(n * p);
    for (line, rec) in &records {
        if rec.len() != p {
            return Err(CliError::validation(format!(
                "{} line {line}: expected {p} fields, found {}",
                path.display(),
                rec.len()
            )));
        }
        for (col, f) in rec.iter().enumerate() {
            if is_missing(f) {
                values.push(0.0);
                observed.push(false);
            } else {
                let v: f64 = f.parse().map_err(|_| {
                    CliError::validation(format!(
                        "{} line {line}, column {}: cannot parse '{f}' as a number",
                        path.display(),
                        col + 1
                    ))
                })?;
                if !v.is_finite() {
                    return Err(CliError::validation(format!(
                        "{} line {line}, column {}: non-finite value",
                        path.display(),
                        col + 1
                    )));
                }
                values.push(v);
                observed.push(true);
            }
        }
    }
    for j in 0..p {
        if (0..n).all(|i| !observed[i * p + j]) {
            return Err(CliError::validation(format!(
                "{}: column {} has no observed values",
                path.display(),
                j + 1
            )));
        }
    }
    Ok(DataMatrix::new(n, p, values, observed)?)
}

/// Reads a dense numeric matrix (comma separated, `#` comments).
pub fn read_matrix(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let text = read_text(path)?;
    let records = csv_records(path, &text)?;
    let mut rows = Vec::with_capacity(records.len());
    for (line, rec) in &records {
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    CliError::validation(format!("{} line {line}: cannot parse '{f}' as a number", path.display()))
                })
            })
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    check_square(path, &rows, &records)?;
    Ok(rows)
}

fn check_square<T>(path: &Path, rows: &[Vec<T>], records: &[(u64, Vec<String>)]) -> CliResult<()> {
    let p = rows.len();
    if p == 0 {
        return Err(CliError::validation(format!("{}: empty matrix", path.display())));
    }
    for (row, (line, _)) in rows.iter().zip(records) {
        if row.len() != p {
            return Err(CliError::validation(format!(
                "{} line {line}: expected {p} entries for a {p} x {p} matrix, found {}",
                path.display(),
                row.len()
            )));
        }
    }
    Ok(())
}

pub fn read_spd(path: &Path) -> CliResult<SpdMatrix> {
    let rows = read_matrix(path)?;
    SpdMatrix::from_rows(&rows).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

/// Reads a symmetric 0/1 adjacency matrix, separated by commas or whitespace.
pub fn read_pattern(path: &Path) -> CliResult<SparsityPattern> {
    let text = read_text(path)?;
    let mut rows: Vec<Vec<u8>> = Vec::new();
    let mut lines: Vec<usize> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let row = body
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| match t {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(CliError::validation(format!(
                    "{} line {line}: invalid entry '{other}' (expected 0 or 1)",
                    path.display()
                ))),
            })
            .collect::<CliResult<Vec<u8>>>()?;
        rows.push(row);
        lines.push(line);
    }
    let p = rows.len();
    if p == 0 {
        return Err(CliError::validation(format!("{}: empty pattern", path.display())));
    }
    for (row, line) in rows.iter().zip(&lines) {
        if row.len() != p {
            return Err(CliError::validation(format!(
                "{} line {line}: expected {p} entries for a {p} x {p} pattern, found {}",
                path.display(),
                row.len()
            )));
        }
    }
    for j in 0..p {
        for k in 0..j {
            if rows[j][k] != rows[k][j] {
                return Err(CliError::validation(format!(
                    "{} line {}: entry ({}, {}) differs from its transpose",
                    path.display(),
                    lines[j],
                    j + 1,
                    k + 1
                )));
            }
        }
    }
    SparsityPattern::from_dense(&rows).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

/// Provenance block: command, crate version and resolved configuration.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: &'a C,
}

impl<'a, C: Serialize> Provenance<'a, C> {
    pub fn new(command: &'static str, config: &'a C) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
        }
    }

    pub fn json(&self) -> String {
        serde_json::to_string(self).expect("provenance serializes")
    }

    /// `# provenance: {...}` line for delimited-text files.
    pub fn comment(&self) -> String {
        format!("# provenance: {}\n", self.json())
    }
}

pub fn to_json_pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s
}

pub fn matrix_csv(header: &str, rows: &[Vec<f64>]) -> String {
    let mut s = String::from(header);
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "{}", line.join(","));
    }
    s
}

pub fn pattern_csv(header: &str, z: &SparsityPattern) -> String {
    let mut s = String::from(header);
    for row in z.to_dense() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", line.join(","));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![
            vec![1.0 / 3.0, -2.0e-17, 5.0],
            vec![-2.0e-17, std::f64::consts::PI, 0.1 + 0.2],
            vec![5.0, 0.1 + 0.2, 1e300],
        ];
        write_text(&path, &matrix_csv("# header\n", &rows)).unwrap();
        let back = read_matrix(&path).unwrap();
        for (a, b) in rows.iter().flatten().zip(back.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn data_with_header_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_text(&path, "a,b\n1,NA\n,2.5\n3,4\n").unwrap();
        let d = read_data_csv(&path).unwrap();
        assert_eq!((d.rows(), d.cols()), (3, 2));
        assert!(!d.is_observed(0, 1));
        assert!(!d.is_observed(1, 0));
        assert_eq!(d.get(1, 1), 2.5);
    }

    #[test]
    fn ragged_data_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_text(&path, "1,2\n3\n").unwrap();
        let e = read_data_csv(&path).unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
    }

    #[test]
    fn all_missing_column_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_text(&path, "1,NA\n3,\n").unwrap();
        let e = read_data_csv(&path).unwrap_err().to_string();
        assert!(e.contains("column 2"), "{e}");
    }

    #[test]
    fn pattern_errors_name_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.txt");
        write_text(&path, "# comment\n1 1 0\n1 1 x\n0 1 1\n").unwrap();
        let e = read_pattern(&path).unwrap_err().to_string();
        assert!(e.contains("line 3") && e.contains("'x'"), "{e}");
        write_text(&path, "1 1 0\n1 1\n0 1 1\n").unwrap();
        assert!(read_pattern(&path).unwrap_err().to_string().contains("line 2"));
        write_text(&path, "1,1,0\n1,1,1\n0,1,1\n").unwrap();
        let z = read_pattern(&path).unwrap();
        assert!(z.get(1, 0) && z.get(2, 1) && !z.get(2, 0));
    }
}
