//! Baseline estimators: single-value fill-in rules and two deliberately
//! restricted empirical Bayes variants.
//!
//! The fill-in rules replace each censored cell with a fixed representative
//! (midpoint, detection limit, half the limit, limit over sqrt 2) and leave
//! observed cells untouched — the standard practice the matrix method is
//! benchmarked against. The restricted EB variants either pool all cells
//! into one univariate problem (`vectorized_eb`) or treat each column
//! independently (`mean_field_eb`); both discard the cross-column structure
//! that the joint estimator exploits.

use crate::censored::{CellKind, CensoredMatrix};
use crate::error::{Error, Result};
use crate::matrix::Mat;
use crate::npmle::{fit_prior, SolveDiagnostics, SolveOptions};
use crate::posterior::{posterior_mean, posterior_weights};
use crate::support::exemplar_support;
use crate::tobit::SupportSet;

/// Single-value replacement rule for censored cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FillInRule {
    /// Midpoint of the interval; finite endpoint for half-infinite cells.
    /// For a `[0, limit]` cell this equals `limit / 2` exactly.
    MidpointMle,
    /// The detection limit (upper endpoint) itself.
    AtDetectionLimit,
    /// Half the detection limit.
    HalfDetectionLimit,
    /// Detection limit divided by sqrt(2).
    DetectionLimitOverSqrt2,
}

impl FillInRule {
    pub fn name(self) -> &'static str {
        match self {
            FillInRule::MidpointMle => "midpoint-mle",
            FillInRule::AtDetectionLimit => "at-detection-limit",
            FillInRule::HalfDetectionLimit => "half-detection-limit",
            FillInRule::DetectionLimitOverSqrt2 => "detection-limit-over-sqrt2",
        }
    }
}

/// A cell where a rule applied but its usual presumption was violated.
#[derive(Clone, Debug, PartialEq)]
pub struct FillInWarning {
    pub row: usize,
    pub col: usize,
    pub message: String,
}

/// Estimate plus any per-cell warnings.
#[derive(Clone, Debug)]
pub struct FillInResult {
    pub estimate: Mat,
    pub warnings: Vec<FillInWarning>,
}

/// Apply a fill-in rule to every censored cell; observed cells are copied
/// bit for bit.
///
/// Detection-limit rules require a finite upper endpoint
/// ([`Error::RuleInapplicable`] otherwise) and warn when the limit is
/// nonpositive, since dividing a nonpositive limit presumes a scale the data
/// does not have. The midpoint rule needs at least one finite endpoint
/// ([`Error::UnboundedCell`] otherwise).
pub fn fill_in(data: &CensoredMatrix, rule: FillInRule) -> Result<FillInResult> {
    let mut estimate = Mat::zeros(data.n(), data.p());
    let mut warnings = Vec::new();
    for i in 0..data.n() {
        for j in 0..data.p() {
            let (l, u, _) = data.cell(i, j);
            let v = if data.cell_kind(i, j) == CellKind::Point {
                l
            } else {
                match rule {
                    FillInRule::MidpointMle => match (l.is_finite(), u.is_finite()) {
                        (true, true) => 0.5 * (l + u),
                        (false, true) => u,
                        (true, false) => l,
                        (false, false) => {
                            return Err(Error::UnboundedCell { row: i, col: j })
                        }
                    },
                    FillInRule::AtDetectionLimit
                    | FillInRule::HalfDetectionLimit
                    | FillInRule::DetectionLimitOverSqrt2 => {
                        if !u.is_finite() {
                            return Err(Error::RuleInapplicable {
                                row: i,
                                col: j,
                                rule: rule.name(),
                            });
                        }
                        if u <= 0.0 {
                            warnings.push(FillInWarning {
                                row: i,
                                col: j,
                                message: format!(
                                    "detection limit {u} is not positive; rule {} presumes a positive scale",
                                    rule.name()
                                ),
                            });
                        }
                        match rule {
                            FillInRule::AtDetectionLimit => u,
                            FillInRule::HalfDetectionLimit => u / 2.0,
                            FillInRule::DetectionLimitOverSqrt2 => {
                                u / std::f64::consts::SQRT_2
                            }
                            FillInRule::MidpointMle => unreachable!(),
                        }
                    }
                }
            };
            estimate.set(i, j, v);
        }
    }
    Ok(FillInResult { estimate, warnings })
}

/// Univariate empirical Bayes over the pooled cells: flatten all `n * p`
/// cells into one column, fit a single 1-D prior over `support_1d`, and
/// return the per-cell posterior means reshaped back to `n x p`.
pub fn vectorized_eb(
    data: &CensoredMatrix,
    support_1d: &[f64],
    opts: &SolveOptions,
) -> Result<(Mat, SolveDiagnostics)> {
    let support = SupportSet::new(Mat::from_vec(support_1d.len(), 1, support_1d.to_vec())?)?;
    let flat = data.flatten();
    let fit = fit_prior(&flat, &support, opts)?;
    let post = posterior_weights(&fit.loglik, &fit.prior)?;
    let mean = posterior_mean(&post, &support)?;
    Ok((mean.reshape(data.n(), data.p())?, fit.diagnostics))
}

/// Column-independent empirical Bayes: fit a separate univariate prior per
/// column and stack the posterior means. `supports` gives the 1-D atoms per
/// column; `None` uses each column's exemplar values.
pub fn mean_field_eb(
    data: &CensoredMatrix,
    supports: Option<&[Vec<f64>]>,
    opts: &SolveOptions,
) -> Result<(Mat, Vec<SolveDiagnostics>)> {
    if let Some(s) = supports {
        if s.len() != data.p() {
            return Err(Error::DimensionMismatch(format!(
                "{} column supports for {} columns",
                s.len(),
                data.p()
            )));
        }
    }
    let mut estimate = Mat::zeros(data.n(), data.p());
    let mut diagnostics = Vec::with_capacity(data.p());
    for j in 0..data.p() {
        let col = data.column(j);
        let support = match supports {
            Some(s) => SupportSet::new(Mat::from_vec(s[j].len(), 1, s[j].clone())?)?,
            None => exemplar_support(&col)?,
        };
        let fit = fit_prior(&col, &support, opts)?;
        let post = posterior_weights(&fit.loglik, &fit.prior)?;
        let mean = posterior_mean(&post, &support)?;
        for i in 0..data.n() {
            estimate.set(i, j, mean.get(i, 0));
        }
        diagnostics.push(fit.diagnostics);
    }
    Ok((estimate, diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[Vec<f64>]) -> Mat {
        Mat::from_rows(rows).unwrap()
    }

    #[test]
    fn observed_cells_pass_through_unchanged_under_every_rule() {
        let values = mat(&[vec![0.3, -1.7], vec![2.5, 0.0]]);
        let data = CensoredMatrix::from_points(&values, 1.0).unwrap();
        for rule in [
            FillInRule::MidpointMle,
            FillInRule::AtDetectionLimit,
            FillInRule::HalfDetectionLimit,
            FillInRule::DetectionLimitOverSqrt2,
        ] {
            let out = fill_in(&data, rule).unwrap();
            assert_eq!(out.estimate, values, "rule {:?}", rule);
            assert!(out.warnings.is_empty());
        }
    }

    #[test]
    fn midpoint_of_zero_to_limit_equals_half_limit_exactly() {
        let lower = mat(&[vec![0.0]]);
        let upper = mat(&[vec![3.7]]);
        let data = CensoredMatrix::new(lower, upper, None).unwrap();
        let mid = fill_in(&data, FillInRule::MidpointMle).unwrap();
        let half = fill_in(&data, FillInRule::HalfDetectionLimit).unwrap();
        assert_eq!(mid.estimate.get(0, 0), 3.7 / 2.0);
        assert_eq!(mid.estimate.get(0, 0), half.estimate.get(0, 0));
    }

    #[test]
    fn midpoint_uses_finite_endpoint_for_half_infinite_cells() {
        let inf = f64::INFINITY;
        let lower = mat(&[vec![-inf, 2.0]]);
        let upper = mat(&[vec![-1.0, inf]]);
        let data = CensoredMatrix::new(lower, upper, None).unwrap();
        let out = fill_in(&data, FillInRule::MidpointMle).unwrap();
        assert_eq!(out.estimate.row(0), &[-1.0, 2.0]);
    }

    #[test]
    fn midpoint_rejects_doubly_infinite_cells() {
        let data = CensoredMatrix::new(
            mat(&[vec![f64::NEG_INFINITY]]),
            mat(&[vec![f64::INFINITY]]),
            None,
        )
        .unwrap();
        assert!(matches!(
            fill_in(&data, FillInRule::MidpointMle),
            Err(Error::UnboundedCell { row: 0, col: 0 })
        ));
    }

    #[test]
    fn detection_limit_rules_compute_their_values() {
        let lower = mat(&[vec![f64::NEG_INFINITY]]);
        let upper = mat(&[vec![5.0]]);
        let data = CensoredMatrix::new(lower, upper, None).unwrap();
        assert_eq!(
            fill_in(&data, FillInRule::AtDetectionLimit)
                .unwrap()
                .estimate
                .get(0, 0),
            5.0
        );
        assert_eq!(
            fill_in(&data, FillInRule::HalfDetectionLimit)
                .unwrap()
                .estimate
                .get(0, 0),
            2.5
        );
        assert_eq!(
            fill_in(&data, FillInRule::DetectionLimitOverSqrt2)
                .unwrap()
                .estimate
                .get(0, 0),
            5.0 / std::f64::consts::SQRT_2
        );
    }

    #[test]
    fn detection_limit_rules_need_a_finite_limit() {
        let data = CensoredMatrix::new(
            mat(&[vec![2.0]]),
            mat(&[vec![f64::INFINITY]]),
            None,
        )
        .unwrap();
        let err = fill_in(&data, FillInRule::HalfDetectionLimit).unwrap_err();
        assert!(matches!(
            err,
            Error::RuleInapplicable { row: 0, col: 0, rule: "half-detection-limit" }
        ));
    }

    #[test]
    fn nonpositive_limits_are_flagged() {
        let lower = mat(&[vec![f64::NEG_INFINITY]]);
        let upper = mat(&[vec![-4.0]]);
        let data = CensoredMatrix::new(lower, upper, None).unwrap();
        let out = fill_in(&data, FillInRule::HalfDetectionLimit).unwrap();
        assert_eq!(out.estimate.get(0, 0), -2.0);
        assert_eq!(out.warnings.len(), 1);
        assert_eq!((out.warnings[0].row, out.warnings[0].col), (0, 0));
    }

    #[test]
    fn vectorized_eb_pools_cells_in_row_major_order() {
        // One atom: every cell's posterior mean is that atom, proving the
        // reshape returns cells to their original positions.
        let values = mat(&[vec![0.1, 0.2], vec![0.3, 0.4]]);
        let data = CensoredMatrix::from_points(&values, 1.0).unwrap();
        let (est, diag) = vectorized_eb(&data, &[0.25], &SolveOptions::default()).unwrap();
        assert_eq!(est.shape(), (2, 2));
        assert!(est.as_slice().iter().all(|&x| x == 0.25));
        assert!(diag.converged);

        // Two atoms: cells nearer an atom lean toward it, in place.
        let (est, _) = vectorized_eb(&data, &[0.0, 1.0], &SolveOptions::default()).unwrap();
        assert!(est.get(0, 0) < est.get(1, 1));
    }

    #[test]
    fn mean_field_eb_fits_each_column_separately() {
        let values = mat(&[vec![0.0, 10.0], vec![0.2, 10.2], vec![-0.1, 9.9]]);
        let data = CensoredMatrix::from_points(&values, 1.0).unwrap();
        let (est, diags) = mean_field_eb(&data, None, &SolveOptions::default()).unwrap();
        assert_eq!(est.shape(), (3, 2));
        assert_eq!(diags.len(), 2);
        // Column estimates stay in their column's range.
        for i in 0..3 {
            assert!(est.get(i, 0).abs() < 1.0);
            assert!((est.get(i, 1) - 10.0).abs() < 1.0);
        }
        let explicit = mean_field_eb(
            &data,
            Some(&[vec![0.0, 0.2, -0.1], vec![10.0, 10.2, 9.9]]),
            &SolveOptions::default(),
        )
        .unwrap();
        assert_eq!(explicit.0, est);
    }

    #[test]
    fn mean_field_eb_validates_support_count() {
        let values = mat(&[vec![0.0, 1.0]]);
        let data = CensoredMatrix::from_points(&values, 1.0).unwrap();
        assert!(mean_field_eb(&data, Some(&[vec![0.0]]), &SolveOptions::default()).is_err());
    }
}
