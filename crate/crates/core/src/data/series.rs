use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// A multivariate series, one row per time step (oldest first).
#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    /// `[n_steps, n_vars]`.
    pub values: Tensor,
    pub names: Vec<String>,
    /// Column of the endogenous variable being forecast.
    pub target: usize,
}

impl RawSeries {
    pub fn n_steps(&self) -> usize {
        self.values.rows()
    }

    pub fn n_vars(&self) -> usize {
        self.values.cols()
    }

    pub fn target_name(&self) -> &str {
        &self.names[self.target]
    }
}

pub fn load_csv(path: &Path, target: &str) -> Result<RawSeries> {
    let file = File::open(path)?;
    read_csv(file, target)
}

/// Parses comma-separated values with a header row of variable names.
pub fn read_csv<R: Read>(reader: R, target: &str) -> Result<RawSeries> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let names: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(Error::Schema("missing header row".into()));
    }
    let target_idx = names
        .iter()
        .position(|n| n == target)
        .ok_or_else(|| Error::Schema(format!("target column `{target}` not found in {names:?}")))?;

    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        if rec.len() != names.len() {
            return Err(Error::Schema(format!(
                "row {row} has {} fields, header has {}",
                rec.len(),
                names.len()
            )));
        }
        for (field, name) in rec.iter().zip(&names) {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                row,
                column: name.clone(),
                value: field.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: name.clone(),
                    value: field.to_string(),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    let values = Tensor::matrix(rows, names.len(), data)?;
    Ok(RawSeries {
        values,
        names,
        target: target_idx,
    })
}

pub fn write_csv<W: Write>(series: &RawSeries, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(&series.names)?;
    for r in 0..series.n_steps() {
        w.write_record(series.values.row(r).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_rows_in_order() {
        let s = read_csv("a,b\n1,2\n3,4\n5,6\n".as_bytes(), "b").unwrap();
        assert_eq!(s.n_steps(), 3);
        assert_eq!(s.n_vars(), 2);
        assert_eq!(s.target, 1);
        assert_eq!(s.values.column(0), vec![1.0, 3.0, 5.0]);
    }

    #[test]
    fn missing_target_is_a_schema_error() {
        let err = read_csv("a,b\n1,2\n".as_bytes(), "c").unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn bad_cell_reports_its_row() {
        let text = "a,b\n1,2\n3,4\n5,6\n7,8\n9,oops\n";
        match read_csv(text.as_bytes(), "a").unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 5);
                assert_eq!(column, "b");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn write_then_read_round_trips() {
        let s = read_csv("x,y\n0.25,-1.5\n3,4e-3\n".as_bytes(), "y").unwrap();
        let mut buf = Vec::new();
        write_csv(&s, &mut buf).unwrap();
        assert_eq!(read_csv(buf.as_slice(), "y").unwrap(), s);
    }
}
