//! Partly interval-censored data model and CSV I/O.
//!
//! An observation matrix is stored as three aligned `n x p` matrices: lower
//! endpoints, upper endpoints, and per-cell noise standard deviations. A cell
//! with equal (finite) endpoints is a direct observation; a cell with
//! `lower < upper` is interval-censored. Half-infinite and doubly-infinite
//! intervals are legal: `(-inf, u]` is left censoring, `[l, inf)` right
//! censoring, and `(-inf, inf)` a completely missing cell.

use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Mat;

/// Classification of one cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    /// Equal finite endpoints: the value was observed exactly.
    Point,
    /// Strictly ordered endpoints: only the interval is known.
    Interval,
}

/// Validated `n x p` matrix of partly interval-censored observations.
#[derive(Clone, Debug, PartialEq)]
pub struct CensoredMatrix {
    lower: Mat,
    upper: Mat,
    sigma: Mat,
}

impl CensoredMatrix {
    /// Validate endpoint and noise matrices into a censored data set.
    ///
    /// When `sigma` is `None`, unit noise is assumed everywhere. Checks: all
    /// three shapes agree and are nonempty, every cell has non-NaN ordered
    /// endpoints, point cells are finite, and every sigma is positive finite.
    pub fn new(lower: Mat, upper: Mat, sigma: Option<Mat>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::EmptyMatrix);
        }
        let sigma = sigma.unwrap_or_else(|| Mat::filled(lower.n_rows(), lower.n_cols(), 1.0));
        if upper.shape() != lower.shape() {
            return Err(Error::DimensionMismatch(format!(
                "lower is {:?} but upper is {:?}",
                lower.shape(),
                upper.shape()
            )));
        }
        if sigma.shape() != lower.shape() {
            return Err(Error::DimensionMismatch(format!(
                "lower is {:?} but sigma is {:?}",
                lower.shape(),
                sigma.shape()
            )));
        }
        for i in 0..lower.n_rows() {
            for j in 0..lower.n_cols() {
                let (l, u, s) = (lower.get(i, j), upper.get(i, j), sigma.get(i, j));
                if l.is_nan() || u.is_nan() || !(l <= u) {
                    return Err(Error::EndpointOrderViolation {
                        row: i,
                        col: j,
                        lower: l,
                        upper: u,
                    });
                }
                if l == u && !l.is_finite() {
                    return Err(Error::InfinitePointCell { row: i, col: j });
                }
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::NonpositiveSigma {
                        row: i,
                        col: j,
                        sigma: s,
                    });
                }
            }
        }
        Ok(CensoredMatrix {
            lower,
            upper,
            sigma,
        })
    }

    /// Fully observed data: every cell is a point with a shared noise level.
    pub fn from_points(values: &Mat, sigma: f64) -> Result<Self> {
        let s = Mat::filled(values.n_rows(), values.n_cols(), sigma);
        CensoredMatrix::new(values.clone(), values.clone(), Some(s))
    }

    /// Number of rows (observations).
    pub fn n(&self) -> usize {
        self.lower.n_rows()
    }

    /// Number of columns (coordinates per observation).
    pub fn p(&self) -> usize {
        self.lower.n_cols()
    }

    pub fn lower(&self) -> &Mat {
        &self.lower
    }

    pub fn upper(&self) -> &Mat {
        &self.upper
    }

    pub fn sigma(&self) -> &Mat {
        &self.sigma
    }

    /// `(lower, upper, sigma)` of one cell.
    pub fn cell(&self, i: usize, j: usize) -> (f64, f64, f64) {
        (
            self.lower.get(i, j),
            self.upper.get(i, j),
            self.sigma.get(i, j),
        )
    }

    /// Endpoint and sigma slices of row `i`.
    pub fn row_parts(&self, i: usize) -> (&[f64], &[f64], &[f64]) {
        (self.lower.row(i), self.upper.row(i), self.sigma.row(i))
    }

    pub fn cell_kind(&self, i: usize, j: usize) -> CellKind {
        if self.lower.get(i, j) == self.upper.get(i, j) {
            CellKind::Point
        } else {
            CellKind::Interval
        }
    }

    /// True when the cell is interval-censored.
    pub fn is_censored(&self, i: usize, j: usize) -> bool {
        self.cell_kind(i, j) == CellKind::Interval
    }

    /// Number of interval cells.
    pub fn censored_count(&self) -> usize {
        (0..self.n())
            .map(|i| (0..self.p()).filter(|&j| self.is_censored(i, j)).count())
            .sum()
    }

    /// All `n * p` cells as an `(n*p) x 1` data set, in row-major cell order.
    pub fn flatten(&self) -> CensoredMatrix {
        let np = self.n() * self.p();
        CensoredMatrix {
            lower: self.lower.clone().reshape(np, 1).expect("same cell count"),
            upper: self.upper.clone().reshape(np, 1).expect("same cell count"),
            sigma: self.sigma.clone().reshape(np, 1).expect("same cell count"),
        }
    }

    /// Column `j` as an `n x 1` data set.
    pub fn column(&self, j: usize) -> CensoredMatrix {
        let pick = |m: &Mat| Mat::from_vec(self.n(), 1, m.col(j)).expect("column length is n");
        CensoredMatrix {
            lower: pick(&self.lower),
            upper: pick(&self.upper),
            sigma: pick(&self.sigma),
        }
    }

    /// Hash of all three component matrices; used to verify inputs are
    /// never mutated by estimators.
    pub fn content_hash(&self) -> u64 {
        self.lower
            .content_hash()
            .wrapping_mul(0x9e3779b97f4a7c15)
            .wrapping_add(self.upper.content_hash())
            .wrapping_mul(0x9e3779b97f4a7c15)
            .wrapping_add(self.sigma.content_hash())
    }
}

/// Format an entry so that reading it back recovers the same `f64` exactly.
///
/// Infinities use the `inf` / `-inf` tokens; finite values use the shortest
/// representation that round-trips.
pub fn fmt_f64(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".to_string()
    } else if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{x:?}")
    }
}

fn parse_field(token: &str, line_no: usize, field_no: usize) -> Result<f64> {
    let t = token.trim();
    if t.is_empty() {
        return Err(Error::ParseError {
            row: line_no,
            col: field_no,
            msg: "empty field".to_string(),
        });
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_nan() => Err(Error::ParseError {
            row: line_no,
            col: field_no,
            msg: "NaN is not a valid entry".to_string(),
        }),
        Ok(v) => Ok(v),
        Err(_) => Err(Error::ParseError {
            row: line_no,
            col: field_no,
            msg: format!("cannot parse {t:?} as a number"),
        }),
    }
}

/// Read a comma-separated numeric matrix.
///
/// An optional single header line is detected by failing to parse as numbers
/// and skipped. `inf` / `-inf` (any case) denote infinite endpoints; NaN is
/// rejected. All data lines must have the same field count.
pub fn read_matrix(path: &Path) -> Result<Mat> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    if lines.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    // Header detection: a first line with any non-numeric field is a header.
    let first_is_header = lines[0]
        .1
        .split(',')
        .any(|tok| parse_field(tok, 0, 0).is_err());
    let data_lines = if first_is_header {
        &lines[1..]
    } else {
        &lines[..]
    };
    if data_lines.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let n_cols = data_lines[0].1.split(',').count();
    let mut rows = Vec::with_capacity(data_lines.len());
    for &(line_no, line) in data_lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_cols {
            return Err(Error::ParseError {
                row: line_no,
                col: fields.len().min(n_cols) + 1,
                msg: format!("expected {n_cols} fields, found {}", fields.len()),
            });
        }
        let mut row = Vec::with_capacity(n_cols);
        for (f, tok) in fields.iter().enumerate() {
            row.push(parse_field(tok, line_no, f + 1)?);
        }
        rows.push(row);
    }
    Mat::from_rows(&rows)
}

/// Write a matrix as comma-separated values with exact round-trip formatting.
pub fn write_matrix(path: &Path, m: &Mat) -> Result<()> {
    let mut out = String::new();
    for i in 0..m.n_rows() {
        let line: Vec<String> = m.row(i).iter().map(|&x| fmt_f64(x)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a censored data set from endpoint CSVs plus an optional sigma CSV.
pub fn read_censored(
    lower_path: &Path,
    upper_path: &Path,
    sigma_path: Option<&Path>,
    default_sigma: f64,
) -> Result<CensoredMatrix> {
    let lower = read_matrix(lower_path)?;
    let upper = read_matrix(upper_path)?;
    let sigma = match sigma_path {
        Some(p) => Some(read_matrix(p)?),
        None => {
            if !(default_sigma > 0.0) || !default_sigma.is_finite() {
                return Err(Error::ConfigInvalid(format!(
                    "default sigma must be positive and finite (got {default_sigma})"
                )));
            }
            Some(Mat::filled(lower.n_rows(), lower.n_cols(), default_sigma))
        }
    };
    CensoredMatrix::new(lower, upper, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[Vec<f64>]) -> Mat {
        Mat::from_rows(rows).unwrap()
    }

    #[test]
    fn validates_well_formed_mixed_data() {
        let lower = mat(&[vec![1.0, f64::NEG_INFINITY], vec![0.5, -2.0]]);
        let upper = mat(&[vec![1.0, 0.0], vec![f64::INFINITY, 2.0]]);
        let d = CensoredMatrix::new(lower, upper, None).unwrap();
        assert_eq!(d.cell_kind(0, 0), CellKind::Point);
        assert_eq!(d.cell_kind(0, 1), CellKind::Interval);
        assert_eq!(d.cell_kind(1, 0), CellKind::Interval);
        assert_eq!(d.censored_count(), 3);
        assert_eq!(d.cell(1, 1), (-2.0, 2.0, 1.0));
    }

    #[test]
    fn doubly_infinite_interval_is_legal() {
        let lower = mat(&[vec![f64::NEG_INFINITY]]);
        let upper = mat(&[vec![f64::INFINITY]]);
        let d = CensoredMatrix::new(lower, upper, None).unwrap();
        assert!(d.is_censored(0, 0));
    }

    #[test]
    fn rejects_misordered_and_nan_endpoints() {
        let err =
            CensoredMatrix::new(mat(&[vec![2.0]]), mat(&[vec![1.0]]), None).unwrap_err();
        assert!(matches!(
            err,
            Error::EndpointOrderViolation { row: 0, col: 0, .. }
        ));
        let err =
            CensoredMatrix::new(mat(&[vec![f64::NAN]]), mat(&[vec![1.0]]), None).unwrap_err();
        assert!(matches!(err, Error::EndpointOrderViolation { .. }));
    }

    #[test]
    fn rejects_infinite_point_cells() {
        let inf = f64::INFINITY;
        let err = CensoredMatrix::new(mat(&[vec![inf]]), mat(&[vec![inf]]), None).unwrap_err();
        assert!(matches!(err, Error::InfinitePointCell { row: 0, col: 0 }));
        let err = CensoredMatrix::new(mat(&[vec![-inf]]), mat(&[vec![-inf]]), None).unwrap_err();
        assert!(matches!(err, Error::InfinitePointCell { row: 0, col: 0 }));
    }

    #[test]
    fn rejects_bad_sigma() {
        let s = mat(&[vec![0.0]]);
        let err =
            CensoredMatrix::new(mat(&[vec![1.0]]), mat(&[vec![1.0]]), Some(s)).unwrap_err();
        assert!(matches!(err, Error::NonpositiveSigma { sigma, .. } if sigma == 0.0));
        let s = mat(&[vec![f64::NAN]]);
        let err =
            CensoredMatrix::new(mat(&[vec![1.0]]), mat(&[vec![1.0]]), Some(s)).unwrap_err();
        assert!(matches!(err, Error::NonpositiveSigma { .. }));
    }

    #[test]
    fn rejects_shape_mismatch() {
        let err = CensoredMatrix::new(
            mat(&[vec![1.0, 2.0]]),
            mat(&[vec![1.0]]),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn flatten_uses_row_major_cell_order() {
        let lower = mat(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let upper = mat(&[vec![1.0, 5.0], vec![3.0, 4.0]]);
        let d = CensoredMatrix::new(lower, upper, None).unwrap();
        let f = d.flatten();
        assert_eq!(f.n(), 4);
        assert_eq!(f.p(), 1);
        assert_eq!(f.lower().as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(f.upper().as_slice(), &[1.0, 5.0, 3.0, 4.0]);
        assert!(f.is_censored(1, 0));
    }

    #[test]
    fn column_extracts_single_coordinate() {
        let lower = mat(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let upper = lower.clone();
        let d = CensoredMatrix::new(lower, upper, None).unwrap();
        let c = d.column(1);
        assert_eq!((c.n(), c.p()), (2, 1));
        assert_eq!(c.lower().as_slice(), &[2.0, 4.0]);
    }
}
