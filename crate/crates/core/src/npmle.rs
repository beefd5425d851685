//! Nonparametric maximum-likelihood estimation of a discrete prior over a
//! fixed support set.
//!
//! Given the `n x m` log-likelihood table `ll[i][k]` of data rows against
//! support atoms, the solver maximizes the marginal log-likelihood
//!
//! ```text
//! L(w) = sum_i log( sum_k w_k exp(ll[i][k]) )
//! ```
//!
//! over the probability simplex. `L` is concave in `w`, so the classic
//! multiplicative EM update converges to a global maximizer:
//!
//! ```text
//! w_k <- w_k * (1/n) * sum_i  A[i][k] / (A w)_i
//! ```
//!
//! where `A[i][k] = exp(ll[i][k] - max_k ll[i][k])` is the row-rescaled
//! likelihood (the rescaling cancels in the update and keeps everything in
//! the representable range).
//!
//! Convergence requires both a small relative change in `L` and a small
//! fixed-point residual, so a reported `converged = true` certifies an
//! approximate stationary point, not merely a stalled objective. The residual
//! combines the displacement of the EM map, `max_k w_k * |factor_k - 1|`,
//! with the dual feasibility gap `max_k (factor_k - 1)`: the first vanishes
//! at any fixed point, the second certifies that no atom — weighted or not —
//! could still improve the objective.

use crate::error::{Error, Result};
use crate::matrix::Mat;
use crate::tobit::{loglik_matrix, LogLikMatrix, SupportSet};

/// Weights smaller than this are snapped to zero on exit and the rest
/// renormalized; at this size an atom's contribution is far below f64
/// resolution of the objective.
pub const WEIGHT_TRUNCATION: f64 = 1e-15;

/// The fixed-point residual must fall below `RESIDUAL_FACTOR * tol` for
/// convergence to be declared.
pub const RESIDUAL_FACTOR: f64 = 10.0;

/// Discrete prior: finite support atoms with a probability weight each.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretePrior {
    support: SupportSet,
    weights: Vec<f64>,
}

impl DiscretePrior {
    /// Pair a support with weights; weights must be finite, nonnegative,
    /// sum to something positive, and match the atom count. They are
    /// normalized to sum to one.
    pub fn new(support: SupportSet, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != support.m() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} atoms",
                weights.len(),
                support.m()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::ConfigInvalid(
                "prior weights must be finite and nonnegative".to_string(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::ConfigInvalid(
                "prior weights must have a positive sum".to_string(),
            ));
        }
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(DiscretePrior { support, weights })
    }

    /// Uniform prior over the atoms of `support`.
    pub fn uniform(support: SupportSet) -> Self {
        let m = support.m();
        DiscretePrior {
            support,
            weights: vec![1.0 / m as f64; m],
        }
    }

    pub fn support(&self) -> &SupportSet {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of atoms (including zero-weight ones).
    pub fn m(&self) -> usize {
        self.weights.len()
    }

    /// Number of atoms with weight above `threshold`.
    pub fn active_atoms(&self, threshold: f64) -> usize {
        self.weights.iter().filter(|w| **w > threshold).count()
    }
}

/// Solver controls beyond the required tolerance and iteration cap.
#[derive(Clone, Debug)]
pub struct SolveOptions {
    /// Relative objective-change tolerance.
    pub tol: f64,
    /// Maximum number of EM updates.
    pub max_iter: usize,
    /// Record the objective value at every iterate.
    pub record_trace: bool,
    /// Require the fixed-point residual to certify convergence. Disabling
    /// this reverts to objective-change-only stopping, which is cheaper on
    /// large problems but certifies less.
    pub check_stationarity: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-8,
            max_iter: 10_000,
            record_trace: false,
            check_stationarity: true,
        }
    }
}

/// What the solver did and how it stopped.
#[derive(Clone, Debug)]
pub struct SolveDiagnostics {
    /// Marginal log-likelihood at the returned weights (before truncation).
    pub final_loglik: f64,
    /// EM updates performed.
    pub iterations: usize,
    /// True when the stop rule was met before the iteration cap.
    pub converged: bool,
    /// Fixed-point residual at the returned weights:
    /// `max_k max(w_k * |factor_k - 1|, factor_k - 1)`.
    pub max_residual: f64,
    /// Objective value at each evaluated iterate, when requested.
    pub loglik_trace: Option<Vec<f64>>,
}

/// Dot product with four accumulators: breaks the floating-point dependency
/// chain for speed while keeping a fixed, run-independent summation order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    for i in 4 * chunks..a.len() {
        acc[0] += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// Maximize the marginal log-likelihood over prior weights.
///
/// Returns the weight vector (summing to one, entries below
/// [`WEIGHT_TRUNCATION`] snapped to zero) and solve diagnostics.
pub fn solve_weights(
    ll: &LogLikMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveDiagnostics)> {
    solve_weights_opts(
        ll,
        &SolveOptions {
            tol,
            max_iter,
            ..SolveOptions::default()
        },
    )
}

/// [`solve_weights`] with full option control.
pub fn solve_weights_opts(
    ll: &LogLikMatrix,
    opts: &SolveOptions,
) -> Result<(Vec<f64>, SolveDiagnostics)> {
    if !(opts.tol > 0.0) || !opts.tol.is_finite() {
        return Err(Error::ConfigInvalid(format!(
            "solver tolerance must be positive and finite (got {})",
            opts.tol
        )));
    }
    if opts.max_iter == 0 {
        return Err(Error::ConfigInvalid(
            "solver iteration cap must be at least 1".to_string(),
        ));
    }
    let (n, m) = (ll.n(), ll.m());

    // One atom carries everything; the objective is constant.
    if m == 1 {
        let final_loglik: f64 = (0..n).map(|i| ll.values().get(i, 0)).sum();
        return Ok((
            vec![1.0],
            SolveDiagnostics {
                final_loglik,
                iterations: 0,
                converged: true,
                max_residual: 0.0,
                loglik_trace: opts.record_trace.then(|| vec![final_loglik]),
            },
        ));
    }

    // Row-rescaled likelihoods in the linear domain, computed once.
    let mut a = Mat::zeros(n, m);
    let mut rowmax_sum = 0.0;
    for i in 0..n {
        let src = ll.values().row(i);
        let rowmax = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        debug_assert!(rowmax.is_finite(), "LogLikMatrix guarantees a finite max");
        rowmax_sum += rowmax;
        let dst = a.row_mut(i);
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - rowmax).exp();
        }
    }

    let nf = n as f64;
    let mut w = vec![1.0 / m as f64; m];
    let mut factors = vec![0.0f64; m];
    let mut trace = opts.record_trace.then(Vec::new);
    let mut prev_loglik = f64::NAN;
    let mut iterations = 0usize;
    let mut converged = false;
    let mut max_residual;

    loop {
        // Objective and update factors at the current iterate.
        let mut loglik = rowmax_sum;
        factors.iter_mut().for_each(|f| *f = 0.0);
        for i in 0..n {
            let row = a.row(i);
            let s = dot(row, &w);
            debug_assert!(s > 0.0, "marginal cannot vanish: rowmax atom has weight");
            loglik += s.ln();
            let coef = 1.0 / (nf * s);
            for (f, &aik) in factors.iter_mut().zip(row) {
                *f += aik * coef;
            }
        }
        if let Some(t) = trace.as_mut() {
            t.push(loglik);
        }
        max_residual = w
            .iter()
            .zip(&factors)
            .map(|(wk, f)| (wk * (f - 1.0).abs()).max(f - 1.0))
            .fold(0.0, f64::max);

        let delta_small = prev_loglik.is_finite()
            && (loglik - prev_loglik).abs() <= opts.tol * loglik.abs().max(1.0);
        if delta_small && (!opts.check_stationarity || max_residual <= RESIDUAL_FACTOR * opts.tol)
        {
            converged = true;
            prev_loglik = loglik;
            break;
        }
        if iterations >= opts.max_iter {
            prev_loglik = loglik;
            break;
        }

        // Multiplicative EM step; the factors average to one over the
        // current weights, so renormalization only sweeps up rounding.
        for (wk, f) in w.iter_mut().zip(&factors) {
            *wk *= f;
        }
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(Error::ConfigInvalid(
                "EM weights collapsed to zero; log-likelihood table is ill-formed".to_string(),
            ));
        }
        for wk in &mut w {
            *wk /= total;
        }
        iterations += 1;
        prev_loglik = loglik;
    }

    // Snap negligible weights to zero and renormalize.
    for wk in &mut w {
        if *wk < WEIGHT_TRUNCATION {
            *wk = 0.0;
        }
    }
    let total: f64 = w.iter().sum();
    for wk in &mut w {
        *wk /= total;
    }

    Ok((
        w,
        SolveDiagnostics {
            final_loglik: prev_loglik,
            iterations,
            converged,
            max_residual,
            loglik_trace: trace,
        },
    ))
}

/// A fitted prior together with the table it was fitted on.
#[derive(Clone, Debug)]
pub struct FitOutput {
    pub prior: DiscretePrior,
    pub diagnostics: SolveDiagnostics,
    /// The log-likelihood table, returned so posterior computations can
    /// reuse it without re-evaluating the kernel.
    pub loglik: LogLikMatrix,
}

/// Fit the NPMLE prior of a censored data set over a fixed support.
pub fn fit_prior(
    data: &crate::censored::CensoredMatrix,
    support: &SupportSet,
    opts: &SolveOptions,
) -> Result<FitOutput> {
    let ll = loglik_matrix(data, support)?;
    let (weights, diagnostics) = solve_weights_opts(&ll, opts)?;
    let prior = DiscretePrior::new(support.clone(), weights)?;
    Ok(FitOutput {
        prior,
        diagnostics,
        loglik: ll,
    })
}

/// Marginal log-likelihood `sum_i log sum_k w_k exp(ll[i][k])` at given
/// weights (not necessarily the maximizer).
///
/// Weights must be finite and nonnegative with positive sum; they are used
/// as-is (no normalization). Returns `-inf` if some row has zero marginal
/// probability under the weights.
pub fn marginal_loglik(ll: &LogLikMatrix, weights: &[f64]) -> Result<f64> {
    if weights.len() != ll.m() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} atoms",
            weights.len(),
            ll.m()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::ConfigInvalid(
            "weights must be finite and nonnegative".to_string(),
        ));
    }
    if !(weights.iter().sum::<f64>() > 0.0) {
        return Err(Error::ConfigInvalid(
            "weights must have a positive sum".to_string(),
        ));
    }
    let ln_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let mut total = 0.0;
    for i in 0..ll.n() {
        let row = ll.values().row(i);
        let mut rowmax = f64::NEG_INFINITY;
        for (&lw, &l) in ln_w.iter().zip(row) {
            let v = lw + l;
            if v > rowmax {
                rowmax = v;
            }
        }
        if rowmax == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        let sum: f64 = ln_w
            .iter()
            .zip(row)
            .map(|(&lw, &l)| (lw + l - rowmax).exp())
            .sum();
        total += rowmax + sum.ln();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[Vec<f64>]) -> LogLikMatrix {
        LogLikMatrix::new(Mat::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn single_atom_returns_immediately() {
        let ll = table(&[vec![-1.0], vec![-2.5]]);
        let (w, d) = solve_weights(&ll, 1e-8, 100).unwrap();
        assert_eq!(w, vec![1.0]);
        assert_eq!(d.iterations, 0);
        assert!(d.converged);
        assert_eq!(d.final_loglik, -3.5);
        assert_eq!(d.max_residual, 0.0);
    }

    #[test]
    fn symmetric_instance_stays_uniform() {
        // Swapping the atoms swaps the rows, so the uniform weights are the
        // exact maximizer and the first evaluation already certifies it.
        let ll = table(&[vec![-1.0, -4.0], vec![-4.0, -1.0]]);
        let (w, d) = solve_weights(&ll, 1e-8, 100).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
        assert!(d.converged);
        assert!(d.max_residual <= 10.0 * 1e-8);
    }

    #[test]
    fn dominated_atom_is_truncated_to_zero() {
        // Atom 1 is strictly dominated: every row likes atom 0 better, so
        // its weight decays geometrically to (truncated) zero.
        let ll = table(&[vec![-0.5, -40.0], vec![-0.1, -35.0], vec![-0.9, -50.0]]);
        let (w, d) = solve_weights(&ll, 1e-10, 5_000).unwrap();
        assert!(d.converged);
        assert_eq!(w[1], 0.0);
        assert_eq!(w[0], 1.0);
    }

    #[test]
    fn final_loglik_matches_marginal_loglik_at_solution() {
        let ll = table(&[
            vec![-1.3, -0.2, -5.0],
            vec![-0.4, -2.2, -1.1],
            vec![-3.0, -0.7, -0.3],
            vec![-0.8, -1.5, -2.4],
        ]);
        let (w, d) = solve_weights(&ll, 1e-10, 10_000).unwrap();
        assert!(d.converged);
        let direct = marginal_loglik(&ll, &w).unwrap();
        // Truncation may zero atoms below 1e-15; the objective moves by far
        // less than this tolerance.
        assert!((direct - d.final_loglik).abs() <= 1e-9);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn trace_is_monotone_nondecreasing() {
        let ll = table(&[
            vec![-2.0, -0.1, -3.0],
            vec![-0.2, -4.0, -1.0],
            vec![-1.0, -1.0, -0.2],
        ]);
        let opts = SolveOptions {
            record_trace: true,
            ..SolveOptions::default()
        };
        let (_, d) = solve_weights_opts(&ll, &opts).unwrap();
        let trace = d.loglik_trace.unwrap();
        assert!(!trace.is_empty());
        for pair in trace.windows(2) {
            assert!(
                pair[1] >= pair[0] - 1e-12,
                "EM objective decreased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
        assert_eq!(*trace.last().unwrap(), d.final_loglik);
    }

    #[test]
    fn iteration_cap_reports_unconverged() {
        let ll = table(&[
            vec![-2.0, -0.1, -3.0],
            vec![-0.2, -4.0, -1.0],
            vec![-1.0, -1.0, -0.2],
            vec![-0.5, -0.6, -0.7],
        ]);
        let (_, d) = solve_weights(&ll, 1e-14, 1).unwrap();
        assert!(!d.converged);
        assert_eq!(d.iterations, 1);
    }

    #[test]
    fn marginal_loglik_fixture() {
        let ll = table(&[vec![-1.0, -2.0], vec![-3.0, -0.5]]);
        let got = marginal_loglik(&ll, &[0.3, 0.7]).unwrap();
        let want = -2.406365088036489747181;
        assert!((got - want).abs() < 1e-14, "got {got}");
    }

    #[test]
    fn marginal_loglik_validates_weights() {
        let ll = table(&[vec![-1.0, -2.0]]);
        assert!(marginal_loglik(&ll, &[0.5]).is_err());
        assert!(marginal_loglik(&ll, &[0.5, -0.1]).is_err());
        assert!(marginal_loglik(&ll, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn solver_validates_options() {
        let ll = table(&[vec![-1.0, -2.0]]);
        assert!(solve_weights(&ll, 0.0, 10).is_err());
        assert!(solve_weights(&ll, 1e-8, 0).is_err());
    }

    #[test]
    fn prior_constructor_normalizes_and_validates() {
        let support =
            SupportSet::new(Mat::from_rows(&[vec![0.0], vec![1.0]]).unwrap()).unwrap();
        let prior = DiscretePrior::new(support.clone(), vec![2.0, 6.0]).unwrap();
        assert_eq!(prior.weights(), &[0.25, 0.75]);
        assert!(DiscretePrior::new(support.clone(), vec![1.0]).is_err());
        assert!(DiscretePrior::new(support.clone(), vec![-1.0, 2.0]).is_err());
        assert!(DiscretePrior::new(support, vec![0.0, 0.0]).is_err());
    }
}
