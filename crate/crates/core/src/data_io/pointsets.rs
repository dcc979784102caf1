//! Line-delimited JSON point-set files.
//!
//! The first line is a header `{"d": .., "n_classes": ..}`; every following
//! line is one set `{"label": .., "split": "train"|"test", "points": [[..], ..]}`.
//! `label` may be null and `split` defaults to `"train"`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PointSet, SetDataset, Split};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    d: usize,
    n_classes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    #[serde(default)]
    label: Option<usize>,
    #[serde(default = "default_split")]
    split: Split,
    points: Vec<Vec<f64>>,
}

fn default_split() -> Split {
    Split::Train
}

pub fn save_pointsets(ds: &SetDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = Header {
        d: ds.dim(),
        n_classes: ds.n_classes(),
    };
    writeln!(
        w,
        "{}",
        serde_json::to_string(&header).expect("serializable")
    )?;
    for (set, &split) in ds.sets().iter().zip(ds.splits()) {
        let record = Record {
            label: set.label(),
            split,
            points: set.points().map(<[f64]>::to_vec).collect(),
        };
        writeln!(
            w,
            "{}",
            serde_json::to_string(&record).expect("serializable")
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_pointsets(path: impl AsRef<Path>) -> Result<SetDataset> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut header: Option<Header> = None;
    let mut sets = Vec::new();
    let mut splits = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let Some(h) = &header else {
            let h: Header = serde_json::from_str(&line)
                .map_err(|e| parse_err(lineno, format!("bad header: {e}")))?;
            if h.d == 0 {
                return Err(parse_err(lineno, "header dimension must be >= 1".into()));
            }
            header = Some(h);
            continue;
        };
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        let set_index = sets.len();
        if rec.points.is_empty() {
            return Err(parse_err(lineno, format!("set {set_index} has no points")));
        }
        if let Some(bad) = rec.points.iter().find(|p| p.len() != h.d) {
            return Err(parse_err(
                lineno,
                format!(
                    "set {set_index} has a point of dimension {}, expected {}",
                    bad.len(),
                    h.d
                ),
            ));
        }
        if let Some(l) = rec.label {
            if l >= h.n_classes {
                return Err(parse_err(
                    lineno,
                    format!("set {set_index} has label {l} >= n_classes {}", h.n_classes),
                ));
            }
        }
        let set = PointSet::new(h.d, rec.points.concat(), rec.label)
            .map_err(|e| parse_err(lineno, format!("set {set_index}: {e}")))?;
        sets.push(set);
        splits.push(rec.split);
    }
    let header = header.ok_or_else(|| parse_err(0, "empty file".into()))?;
    SetDataset::new(header.d, header.n_classes, sets, splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{gen_set_circles, SetCirclesConfig};

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sets.jsonl");
        let ds = gen_set_circles(&SetCirclesConfig {
            n_train: 30,
            n_test: 10,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        save_pointsets(&ds, &path).unwrap();
        assert_eq!(load_pointsets(&path).unwrap(), ds);
    }

    #[test]
    fn empty_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(load_pointsets(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn wrong_dimension_is_rejected_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"d\":2,\"n_classes\":2}\n\
             {\"label\":0,\"points\":[[1,2],[3,4]]}\n\
             {\"label\":1,\"points\":[[1,2,3]]}\n",
        )
        .unwrap();
        match load_pointsets(&path) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("set 1"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_record_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"d\":1,\"n_classes\":1}\n{\"points\": [[1]]\n").unwrap();
        assert!(matches!(
            load_pointsets(&path),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn defaults_for_optional_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ok.jsonl");
        std::fs::write(
            &path,
            "{\"d\":1,\"n_classes\":1}\n{\"points\":[[1.5],[2]]}\n",
        )
        .unwrap();
        let ds = load_pointsets(&path).unwrap();
        assert_eq!(ds.splits(), &[Split::Train]);
        assert_eq!(ds.sets()[0].label(), None);
        assert_eq!(ds.sets()[0].data(), &[1.5, 2.0]);
    }
}
