//! File-format glue shared by the modules and the CLI.
//!
//! Matrices (features, probabilities, labels) are CSV files with the header
//! `sample_id,c0,...,c{N-1}`. Record streams (questions, prompts) are JSONL.
//! Every write goes through [`write_atomic`].

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Writes `bytes` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// A row-aligned matrix with string sample ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Matrix {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Self {
        Matrix { ids, rows }
    }

    pub fn with_index_ids(rows: Vec<Vec<f64>>) -> Self {
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Matrix { ids, rows }
    }

    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn to_csv(&self) -> Result<String> {
        let w = self.width();
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["sample_id".to_string()];
        header.extend((0..w).map(|j| format!("c{j}")));
        wtr.write_record(&header)?;
        for (id, row) in self.ids.iter().zip(&self.rows) {
            if row.len() != w {
                return Err(Error::LengthMismatch {
                    what: "matrix row",
                    expected: w,
                    found: row.len(),
                });
            }
            let mut rec = Vec::with_capacity(w + 1);
            rec.push(id.clone());
            rec.extend(row.iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.into_inner()
            .map_err(|e| Error::Io(e.into_error()))
            .map(|b| String::from_utf8(b).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("sample_id") {
            return Err(Error::Format("first CSV column must be `sample_id`".into()));
        }
        for (j, h) in header.iter().skip(1).enumerate() {
            if h != format!("c{j}") {
                return Err(Error::Format(format!(
                    "unexpected CSV column `{h}`, expected `c{j}`"
                )));
            }
        }
        let w = header.len() - 1;
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            ids.push(rec[0].to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Format(format!("bad number `{s}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            if row.len() != w {
                return Err(Error::LengthMismatch {
                    what: "CSV row",
                    expected: w,
                    found: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("CSV matrix"));
            }
            rows.push(row);
        }
        Ok(Matrix { ids, rows })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_csv()?.as_bytes())
    }
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let f = fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_csv_round_trip() {
        let m = Matrix::new(
            vec!["a".into(), "b".into()],
            vec![vec![0.25, 1.0], vec![-3.5, 1e-9]],
        );
        let text = m.to_csv().unwrap();
        assert!(text.starts_with("sample_id,c0,c1\n"));
        assert_eq!(Matrix::from_csv(&text).unwrap(), m);
    }

    #[test]
    fn matrix_rejects_bad_header() {
        assert!(Matrix::from_csv("id,c0\n0,1\n").is_err());
        assert!(Matrix::from_csv("sample_id,c1\n0,1\n").is_err());
        assert!(Matrix::from_csv("sample_id,c0\n0,x\n").is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
