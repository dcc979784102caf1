//! Embedding matrix text format.
//!
//! The first line is a JSON header `{"K", "L", "M", "p", "seed", "rows",
//! "cols", "labels", "config"}`; each following line is one embedding as
//! comma-separated floats printed in shortest round-trip form.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingHeader {
    #[serde(rename = "K")]
    pub num_refs: usize,
    #[serde(rename = "L")]
    pub num_slices: usize,
    #[serde(rename = "M")]
    pub ref_size: usize,
    pub p: f64,
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub labels: Vec<Option<usize>>,
    /// Effective configuration that produced the embeddings.
    pub config: serde_json::Value,
}

pub fn write_embeddings(
    header: &EmbeddingHeader,
    rows: &[Vec<f64>],
    path: impl AsRef<Path>,
) -> Result<()> {
    if rows.len() != header.rows || rows.iter().any(|r| r.len() != header.cols) {
        return Err(Error::Data(format!(
            "embedding matrix does not match header ({} x {})",
            header.rows, header.cols
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "{}",
        serde_json::to_string(header).expect("serializable header")
    )?;
    for row in rows {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<(EmbeddingHeader, Vec<Vec<f64>>)> {
    let path = path.as_ref();
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = BufReader::new(File::open(path)?).lines();
    let first = lines.next().ok_or_else(|| err(0, "empty file".into()))??;
    let header: EmbeddingHeader =
        serde_json::from_str(&first).map_err(|e| err(1, format!("bad header: {e}")))?;
    let mut rows = Vec::with_capacity(header.rows);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| err(i + 2, e.to_string()))?;
        if row.len() != header.cols {
            return Err(err(
                i + 2,
                format!("expected {} values, got {}", header.cols, row.len()),
            ));
        }
        rows.push(row);
    }
    if rows.len() != header.rows {
        return Err(err(
            0,
            format!("header promises {} rows, found {}", header.rows, rows.len()),
        ));
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let rows = vec![
            vec![0.1, -1e-300, 1.0 / 3.0],
            vec![f64::MIN_POSITIVE, 2.5e10, -0.0],
        ];
        let header = EmbeddingHeader {
            num_refs: 1,
            num_slices: 1,
            ref_size: 3,
            p: 2.0,
            seed: 4,
            rows: 2,
            cols: 3,
            labels: vec![Some(0), None],
            config: serde_json::json!({"tau": 0.1}),
        };
        write_embeddings(&header, &rows, &path).unwrap();
        let (h, r) = read_embeddings(&path).unwrap();
        assert_eq!(h, header);
        for (a, b) in r.iter().flatten().zip(rows.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
