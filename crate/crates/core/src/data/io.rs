//! CSV ingestion and export.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which header columns hold targets and features. With `classes` set the
/// single target column is a class label that must be one of `classes`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub targets: Vec<String>,
    /// Feature columns in order; defaults to every non-target column.
    #[serde(default)]
    pub features: Option<Vec<String>>,
    #[serde(default)]
    pub classes: Option<Vec<String>>,
}

impl CsvSchema {
    pub fn regression(targets: &[&str]) -> Self {
        CsvSchema { targets: targets.iter().map(|s| s.to_string()).collect(), ..Default::default() }
    }

    pub fn classification(target: &str, classes: &[&str]) -> Self {
        CsvSchema {
            targets: vec![target.to_string()],
            features: None,
            classes: Some(classes.iter().map(|s| s.to_string()).collect()),
        }
    }
}

fn parse_err(path: &str, line: u64, column: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_string(), line, column, msg: msg.into() }
}

fn csv_err(path: &str, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    parse_err(path, line, 0, e.to_string())
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, &path.display().to_string(), schema)
}

/// Parses CSV from `reader`; `origin` names the source in errors. Lines and
/// columns in errors are 1-based, with the header on line 1.
pub fn read_csv<R: std::io::Read>(reader: R, origin: &str, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header: Vec<String> = rdr.headers().map_err(|e| csv_err(origin, e))?.iter().map(str::to_string).collect();
    let col_of = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(origin, 1, 0, format!("header has no column `{name}`")))
    };
    if schema.targets.is_empty() {
        return Err(Error::Schema("csv schema needs at least one target column".into()));
    }
    if schema.classes.is_some() && schema.targets.len() != 1 {
        return Err(Error::Schema("classification needs exactly one target column".into()));
    }
    let target_cols = schema.targets.iter().map(|t| col_of(t)).collect::<Result<Vec<_>>>()?;
    let feature_names: Vec<String> = match &schema.features {
        Some(f) => f.clone(),
        None => header.iter().filter(|h| !schema.targets.contains(h)).cloned().collect(),
    };
    let feature_cols = feature_names.iter().map(|f| col_of(f)).collect::<Result<Vec<_>>>()?;

    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(origin, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(parse_err(
                origin,
                line,
                rec.len().min(header.len()) + 1,
                format!("ragged row: {} fields, header has {}", rec.len(), header.len()),
            ));
        }
        let num = |c: usize| -> Result<f64> {
            let cell = rec[c].trim();
            cell.parse::<f64>()
                .map_err(|_| parse_err(origin, line, c + 1, format!("non-numeric value `{cell}` in column `{}`", header[c])))
        };
        for &c in &feature_cols {
            x.push(num(c)?);
        }
        match &schema.classes {
            Some(classes) => {
                let c = target_cols[0];
                let cell = rec[c].trim();
                let l = classes
                    .iter()
                    .position(|k| k == cell)
                    .ok_or_else(|| parse_err(origin, line, c + 1, format!("unknown target label `{cell}`")))?;
                labels.push(l);
            }
            None => {
                for &c in &target_cols {
                    y.push(num(c)?);
                }
            }
        }
        rows += 1;
    }
    let features = Tensor::new(rows, feature_cols.len(), x)?;
    let targets = match &schema.classes {
        Some(classes) => Targets::Classes { labels, names: classes.clone() },
        None => Targets::Values(Tensor::new(rows, target_cols.len(), y)?),
    };
    let mut ds = Dataset::new(features, targets)?;
    ds.feature_names = feature_names;
    ds.target_names = schema.targets.clone();
    Ok(ds)
}

/// Shortest decimal text that parses back to the same bits.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn save_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(file, ds)
}

pub fn write_csv<W: std::io::Write>(writer: W, ds: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let map = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let header: Vec<&str> = ds.feature_names.iter().chain(&ds.target_names).map(String::as_str).collect();
    w.write_record(&header).map_err(map)?;
    for r in 0..ds.len() {
        let mut row: Vec<String> = ds.features.row_slice(r).iter().map(|&v| fmt_f64(v)).collect();
        match &ds.targets {
            Targets::Values(t) => row.extend(t.row_slice(r).iter().map(|&v| fmt_f64(v))),
            Targets::Classes { labels, names } => row.push(names[labels[r]].clone()),
        }
        w.write_record(&row).map_err(map)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "a,b,y\n0.1,-2.5,3.0\n1e-300,0.30000000000000004,-0.0\n7,8,9\n";

    #[test]
    fn round_trip_is_bit_identical() {
        let schema = CsvSchema::regression(&["y"]);
        let ds = read_csv(SAMPLE.as_bytes(), "mem", &schema).unwrap();
        assert_eq!(ds.features.shape(), (3, 2));
        let mut buf = Vec::new();
        write_csv(&mut buf, &ds).unwrap();
        let back = read_csv(buf.as_slice(), "mem", &schema).unwrap();
        let bits = |d: &Dataset| d.features.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&ds));
        assert_eq!(back, ds);
        let mut again = Vec::new();
        write_csv(&mut again, &back).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "f,label\n0.5,cat\n-1,dog\n2,cat\n").unwrap();
        let schema = CsvSchema::classification("label", &["cat", "dog"]);
        let ds = load_csv(&p, &schema).unwrap();
        assert_eq!(ds.labels().unwrap(), &[0, 1, 0]);
        let q = dir.path().join("e.csv");
        save_csv(&q, &ds).unwrap();
        assert_eq!(load_csv(&q, &schema).unwrap(), ds);
    }

    #[test]
    fn non_numeric_cell_cites_line_and_column() {
        let err = read_csv("a,b,y\n1,2,3\n4,oops,6\n".as_bytes(), "t.csv", &CsvSchema::regression(&["y"])).unwrap_err();
        match err {
            Error::Parse { line, column, ref msg, .. } => {
                assert_eq!((line, column), (3, 2));
                assert!(msg.contains("oops"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn ragged_row_rejected() {
        let err = read_csv("a,b,y\n1,2,3\n4,5\n".as_bytes(), "t.csv", &CsvSchema::regression(&["y"])).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn unknown_label_rejected() {
        let schema = CsvSchema::classification("label", &["cat", "dog"]);
        let err = read_csv("f,label\n1,cat\n2,cow\n".as_bytes(), "t.csv", &schema).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, column: 2, .. }), "{err}");
    }

    #[test]
    fn missing_column_rejected() {
        assert!(read_csv("a,b\n1,2\n".as_bytes(), "t.csv", &CsvSchema::regression(&["y"])).is_err());
    }

    #[test]
    fn quoted_fields() {
        let schema = CsvSchema::classification("label", &["a,b", "c"]);
        let ds = read_csv("x,label\n1,\"a,b\"\n2,c\n".as_bytes(), "t.csv", &schema).unwrap();
        assert_eq!(ds.labels().unwrap(), &[0, 1]);
        let mut buf = Vec::new();
        write_csv(&mut buf, &ds).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("\"a,b\""));
    }
}
