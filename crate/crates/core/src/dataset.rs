//! Sample tables and their CSV encoding.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// An `n x d` table of samples. Column labels are the original (0-based)
/// node ids and survive column removal.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Matrix,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(values: Matrix, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != values.cols() {
            return Err(Error::invalid(format!(
                "{} column labels for {} columns",
                labels.len(),
                values.cols()
            )));
        }
        let mut seen = labels.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate column labels"));
        }
        if !values.is_finite() {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        Ok(Self { values, labels })
    }

    /// Dataset labelled `0..d`.
    pub fn from_matrix(values: Matrix) -> Result<Self> {
        let labels = (0..values.cols()).collect();
        Self::new(values, labels)
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn d(&self) -> usize {
        self.values.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    /// Keep only the columns at the given positions, in that order.
    pub fn select_columns(&self, positions: &[usize]) -> Dataset {
        let values = Matrix::from_fn(self.n(), positions.len(), |r, c| {
            self.values.get(r, positions[c])
        });
        let labels = positions.iter().map(|&p| self.labels[p]).collect();
        Dataset { values, labels }
    }

    /// Drop the column at `position`.
    pub fn remove_column(&self, position: usize) -> Dataset {
        let keep: Vec<usize> = (0..self.d()).filter(|&c| c != position).collect();
        self.select_columns(&keep)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.labels.iter().map(|l| format!("x{}", l + 1)))?;
        for r in 0..self.n() {
            w.write_record(self.values.row(r).iter().map(|v| format_f64(*v)))?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let labels = rdr
            .headers()?
            .iter()
            .map(parse_label)
            .collect::<Result<Vec<_>>>()?;
        let d = labels.len();
        let mut data = Vec::new();
        let mut n = 0;
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != d {
                return Err(Error::format(
                    "dataset csv",
                    format!("row {} has {} fields, expected {d}", n + 1, rec.len()),
                ));
            }
            for field in rec.iter() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::format("dataset csv", format!("bad number {field:?} in row {}", n + 1))
                })?;
                data.push(v);
            }
            n += 1;
        }
        Self::new(Matrix::from_vec(n, d, data), labels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_label(name: &str) -> Result<usize> {
    name.trim()
        .strip_prefix('x')
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&k| k >= 1)
        .map(|k| k - 1)
        .ok_or_else(|| Error::format("dataset csv", format!("bad column header {name:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let m = Matrix::from_vec(2, 2, vec![0.1, -1.0 / 3.0, 1e-300, 6.02214076e23]);
        let ds = Dataset::new(m, vec![4, 1]).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x5,x2\n"));
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn column_removal_keeps_labels() {
        let m = Matrix::from_fn(3, 3, |r, c| (r * 3 + c) as f64);
        let ds = Dataset::from_matrix(m).unwrap();
        let dropped = ds.remove_column(1);
        assert_eq!(dropped.labels(), &[0, 2]);
        assert_eq!(dropped.row(2), &[6.0, 8.0]);
    }

    #[test]
    fn rejects_non_finite_and_bad_headers() {
        let m = Matrix::from_vec(1, 1, vec![f64::NAN]);
        assert!(Dataset::from_matrix(m).is_err());
        assert!(Dataset::read_csv("y1\n1.0\n".as_bytes()).is_err());
        assert!(Dataset::read_csv("x1,x1\n1.0,2.0\n".as_bytes()).is_err());
    }
}
