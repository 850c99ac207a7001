//! Regression datasets and their CSV form (`y,x1,...,xd`).

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::Interval;

/// Responses `y` (length `n`) and design `x` (`n x d`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
}

impl Dataset {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        if y.len() != x.nrows() {
            return Err(Error::argument(format!(
                "{} responses for {} design rows",
                y.len(),
                x.nrows()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::argument("design has no columns"));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::argument("dataset contains non-finite values"));
        }
        Ok(Dataset { y, x })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            y: DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i])),
            x: self.x.select_rows(rows),
        }
    }

    /// Checks every column against its support (one interval per column).
    pub fn check_support(&self, supports: &[Interval]) -> Result<()> {
        if supports.len() != self.dim() {
            return Err(Error::argument("one support interval per column is required"));
        }
        for (j, s) in supports.iter().enumerate() {
            for (i, &v) in self.x.column(j).iter().enumerate() {
                if !s.contains(v) {
                    return Err(Error::Validation(format!(
                        "x{} = {v} on data row {} is outside [{}, {}]",
                        j + 1,
                        i + 1,
                        s.lo,
                        s.hi
                    )));
                }
            }
        }
        Ok(())
    }

    /// Parses CSV text with header `y,x1,...,xd`.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut records = rdr.records();
        let header = match records.next() {
            Some(r) => r?,
            None => return Err(Error::Parse { line: 1, message: "missing header".into() }),
        };
        let width = header.len();
        let expected = |j: usize| if j == 0 { "y".to_string() } else { format!("x{j}") };
        if width < 2 || header.iter().enumerate().any(|(j, h)| h != expected(j)) {
            return Err(Error::Parse {
                line: 1,
                message: format!("header must be y,x1,...,xd; got `{}`", header.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut values = Vec::new();
        let mut rows = 0;
        for rec in records {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() == 1 && rec[0].is_empty() {
                continue;
            }
            if rec.len() != width {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {width} fields, found {}", rec.len()),
                });
            }
            for (j, cell) in rec.iter().enumerate() {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("column {} (`{cell}`) is not a number", &header[j]),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        message: format!("column {} (`{cell}`) is not finite", &header[j]),
                    });
                }
                values.push(v);
            }
            rows += 1;
        }
        if rows < 2 {
            return Err(Error::Validation(format!("dataset needs at least 2 rows, found {rows}")));
        }
        let all = DMatrix::from_row_slice(rows, width, &values);
        Dataset::new(all.column(0).into_owned(), all.columns(1, width - 1).into_owned())
    }

    /// Loads a dataset; without `supports` every input must lie in `[0, 1]`.
    pub fn load_csv(path: impl AsRef<Path>, supports: Option<&[Interval]>) -> Result<Self> {
        let data = Self::from_csv_reader(File::open(path)?)?;
        match supports {
            Some(s) => data.check_support(s)?,
            None => data.check_support(&vec![Interval::UNIT; data.dim()])?,
        }
        Ok(data)
    }

    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["y".to_string()];
        header.extend((1..=self.dim()).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![format_float(self.y[i])];
            row.extend(self.x.row(i).iter().map(|&v| format_float(v)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_csv_writer(File::create(path)?)
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}
