//! Posterior summaries under a fitted discrete prior.
//!
//! With a discrete prior `g = sum_k w_k delta(t_k)` the posterior of row `i`
//! is itself discrete over the atoms, with weights proportional to
//! `w_k * exp(ll[i][k])`. All estimators here are exact finite sums over
//! those posterior weights; the only numerical care needed is the usual
//! log-domain row rescaling.

use crate::error::{Error, Result};
use crate::matrix::Mat;
use crate::npmle::DiscretePrior;
use crate::tobit::{row_loglik, LogLikMatrix, SupportSet};

/// Per-row posterior weights over the prior atoms, as an `n x m` matrix.
///
/// Errors with [`Error::ZeroMarginalRow`] if a row has zero posterior mass
/// at every atom (its marginal probability underflows under this prior).
pub fn posterior_weights(ll: &LogLikMatrix, prior: &DiscretePrior) -> Result<Mat> {
    if ll.m() != prior.m() {
        return Err(Error::DimensionMismatch(format!(
            "log-likelihood table has {} atoms but prior has {}",
            ll.m(),
            prior.m()
        )));
    }
    let ln_w: Vec<f64> = prior.weights().iter().map(|w| w.ln()).collect();
    let mut post = Mat::zeros(ll.n(), ll.m());
    for i in 0..ll.n() {
        let row = ll.values().row(i);
        let out = post.row_mut(i);
        let mut rowmax = f64::NEG_INFINITY;
        for ((&lw, &l), slot) in ln_w.iter().zip(row).zip(out.iter_mut()) {
            let v = lw + l;
            *slot = v;
            if v > rowmax {
                rowmax = v;
            }
        }
        if rowmax == f64::NEG_INFINITY {
            return Err(Error::ZeroMarginalRow { row: i });
        }
        let mut total = 0.0;
        for slot in out.iter_mut() {
            *slot = (*slot - rowmax).exp();
            total += *slot;
        }
        for slot in out.iter_mut() {
            *slot /= total;
        }
    }
    Ok(post)
}

fn check_shapes(post: &Mat, support: &SupportSet) -> Result<()> {
    if post.n_cols() != support.m() {
        return Err(Error::DimensionMismatch(format!(
            "posterior has {} columns but support has {} atoms",
            post.n_cols(),
            support.m()
        )));
    }
    Ok(())
}

/// Posterior mean of each row: `n x p` matrix of atom averages.
pub fn posterior_mean(post: &Mat, support: &SupportSet) -> Result<Mat> {
    check_shapes(post, support)?;
    let (n, p) = (post.n_rows(), support.dim());
    let mut mean = Mat::zeros(n, p);
    for i in 0..n {
        let weights = post.row(i);
        let out = mean.row_mut(i);
        for (k, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, &t) in out.iter_mut().zip(support.atom(k)) {
                *o += w * t;
            }
        }
    }
    Ok(mean)
}

/// Per-coordinate posterior variance of each row (an uncertainty report to
/// accompany the posterior mean).
pub fn posterior_variance(post: &Mat, support: &SupportSet) -> Result<Mat> {
    check_shapes(post, support)?;
    let mean = posterior_mean(post, support)?;
    let (n, p) = mean.shape();
    let mut var = Mat::zeros(n, p);
    for i in 0..n {
        let weights = post.row(i);
        let out = var.row_mut(i);
        for (k, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, &t) in out.iter_mut().zip(support.atom(k)) {
                *o += w * t * t;
            }
        }
        for (o, &mu) in out.iter_mut().zip(mean.row(i)) {
            // Rounding can push E[t^2] - mu^2 a hair negative.
            *o = (*o - mu * mu).max(0.0);
        }
    }
    Ok(var)
}

/// Posterior mode of each row: the atom with the largest posterior weight.
/// Ties break to the lowest atom index. Returns the atoms and their indices.
pub fn posterior_mode(post: &Mat, support: &SupportSet) -> Result<(Mat, Vec<usize>)> {
    check_shapes(post, support)?;
    let n = post.n_rows();
    let mut indices = Vec::with_capacity(n);
    let mut points = Mat::zeros(n, support.dim());
    for i in 0..n {
        let weights = post.row(i);
        let mut best = 0usize;
        for (k, &w) in weights.iter().enumerate() {
            if w > weights[best] {
                best = k;
            }
        }
        indices.push(best);
        points.row_mut(i).copy_from_slice(support.atom(best));
    }
    Ok((points, indices))
}

/// Posterior medoid of each row: the atom minimizing the posterior-expected
/// Euclidean distance to the other atoms. Unlike the mean it is always an
/// actual support atom; unlike the mode it accounts for the whole posterior.
/// Ties break to the lowest atom index.
pub fn posterior_medoid(post: &Mat, support: &SupportSet) -> Result<(Mat, Vec<usize>)> {
    check_shapes(post, support)?;
    let m = support.m();
    // Pairwise atom distances, computed once for all rows.
    let mut dist = Mat::zeros(m, m);
    for k in 0..m {
        for j in (k + 1)..m {
            let d = support
                .atom(k)
                .iter()
                .zip(support.atom(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            dist.set(k, j, d);
            dist.set(j, k, d);
        }
    }
    let n = post.n_rows();
    let mut indices = Vec::with_capacity(n);
    let mut points = Mat::zeros(n, support.dim());
    for i in 0..n {
        let weights = post.row(i);
        let mut best = 0usize;
        let mut best_score = f64::INFINITY;
        for j in 0..m {
            let mut score = 0.0;
            for (k, &w) in weights.iter().enumerate() {
                if w != 0.0 {
                    score += w * dist.get(k, j);
                }
            }
            if score < best_score {
                best_score = score;
                best = j;
            }
        }
        indices.push(best);
        points.row_mut(i).copy_from_slice(support.atom(best));
    }
    Ok((points, indices))
}

/// Posterior weights, mean, and variance in one pass.
#[derive(Clone, Debug)]
pub struct PosteriorSummary {
    /// `n x m` posterior weights over the prior atoms.
    pub weights: Mat,
    /// `n x p` posterior means.
    pub mean: Mat,
    /// `n x p` per-coordinate posterior variances.
    pub variance: Mat,
}

/// Compute the standard posterior summary of a table under a prior.
pub fn summarize(ll: &LogLikMatrix, prior: &DiscretePrior) -> Result<PosteriorSummary> {
    let weights = posterior_weights(ll, prior)?;
    let mean = posterior_mean(&weights, prior.support())?;
    let variance = posterior_variance(&weights, prior.support())?;
    Ok(PosteriorSummary {
        weights,
        mean,
        variance,
    })
}

/// Posterior summary of one new censored row under an already-fitted prior.
#[derive(Clone, Debug)]
pub struct ImputedRow {
    /// Posterior mean, one value per coordinate.
    pub mean: Vec<f64>,
    /// Per-coordinate posterior variance.
    pub variance: Vec<f64>,
    /// Posterior weights over the prior atoms.
    pub weights: Vec<f64>,
    /// Marginal log-likelihood of the row under the prior.
    pub row_loglik: f64,
}

/// Impute a single new row (not necessarily part of the training data)
/// under a fitted prior. Endpoints and sigmas are validated exactly like a
/// one-row censored matrix.
pub fn impute_row(
    lower: &[f64],
    upper: &[f64],
    sigma: &[f64],
    prior: &DiscretePrior,
) -> Result<ImputedRow> {
    // Route validation through the data model so error reporting matches.
    let data = crate::censored::CensoredMatrix::new(
        Mat::from_rows(&[lower.to_vec()])?,
        Mat::from_rows(&[upper.to_vec()])?,
        Some(Mat::from_rows(&[sigma.to_vec()])?),
    )?;
    let (l, u, s) = data.row_parts(0);
    let ll = row_loglik(l, u, s, prior.support())?;
    let table = LogLikMatrix::new(Mat::from_rows(&[ll])?)?;
    let post = posterior_weights(&table, prior)?;
    let mean = posterior_mean(&post, prior.support())?;
    let variance = posterior_variance(&post, prior.support())?;
    let row_loglik = crate::npmle::marginal_loglik(&table, prior.weights())?;
    Ok(ImputedRow {
        mean: mean.row(0).to_vec(),
        variance: variance.row(0).to_vec(),
        weights: post.row(0).to_vec(),
        row_loglik,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::npmle::DiscretePrior;

    /// Fixture with high-precision reference values: three atoms in R^2,
    /// prior (0.2, 0.5, 0.3), one row = (point 1.3, interval [-2, -0.5]).
    fn fixture() -> (LogLikMatrix, DiscretePrior) {
        let support = SupportSet::new(
            Mat::from_rows(&[vec![0.0, 0.0], vec![1.0, -1.0], vec![2.5, 0.5]]).unwrap(),
        )
        .unwrap();
        let prior = DiscretePrior::new(support.clone(), vec![0.2, 0.5, 0.3]).unwrap();
        let lower = vec![1.3, -2.0];
        let upper = vec![1.3, -0.5];
        let sigma = vec![1.0, 1.0];
        let ll = row_loglik(&lower, &upper, &sigma, &support).unwrap();
        (
            LogLikMatrix::new(Mat::from_rows(&[ll]).unwrap()).unwrap(),
            prior,
        )
    }

    #[test]
    fn posterior_matches_reference_values() {
        let (ll, prior) = fixture();
        let s = summarize(&ll, &prior).unwrap();
        let want_w = [
            0.08143568691607974077791,
            0.8447289173121943179793,
            0.07383539577172594124277,
        ];
        for (got, want) in s.weights.row(0).iter().zip(want_w) {
            assert!((got - want).abs() < 1e-13, "weight {got} vs {want}");
        }
        let want_mean = [1.029317406741509171086, -0.8078112194263313473579];
        for (got, want) in s.mean.row(0).iter().zip(want_mean) {
            assert!((got - want).abs() < 1e-13, "mean {got} vs {want}");
        }
        let want_var = [0.2467058170644160211814, 0.210628800024069351294];
        for (got, want) in s.variance.row(0).iter().zip(want_var) {
            assert!((got - want).abs() < 1e-13, "variance {got} vs {want}");
        }
    }

    #[test]
    fn impute_row_agrees_with_summarize_and_reports_marginal() {
        let (ll, prior) = fixture();
        let s = summarize(&ll, &prior).unwrap();
        let imp = impute_row(&[1.3, -2.0], &[1.3, -0.5], &[1.0, 1.0], &prior).unwrap();
        assert_eq!(imp.mean, s.mean.row(0));
        assert_eq!(imp.variance, s.variance.row(0));
        assert_eq!(imp.weights, s.weights.row(0));
        assert!((imp.row_loglik - -2.117941835308088141043).abs() < 1e-13);
    }

    #[test]
    fn mode_and_medoid_pick_the_dominant_atom_here() {
        let (ll, prior) = fixture();
        let post = posterior_weights(&ll, &prior).unwrap();
        let (mode_pts, mode_idx) = posterior_mode(&post, prior.support()).unwrap();
        assert_eq!(mode_idx, vec![1]);
        assert_eq!(mode_pts.row(0), &[1.0, -1.0]);
        let (med_pts, med_idx) = posterior_medoid(&post, prior.support()).unwrap();
        assert_eq!(med_idx, vec![1]);
        assert_eq!(med_pts.row(0), &[1.0, -1.0]);
    }

    #[test]
    fn mode_ties_break_to_lowest_index() {
        let support = SupportSet::new(
            Mat::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap(),
        )
        .unwrap();
        let post = Mat::from_rows(&[vec![0.4, 0.4, 0.2]]).unwrap();
        let (_, idx) = posterior_mode(&post, &support).unwrap();
        assert_eq!(idx, vec![0]);
    }

    #[test]
    fn medoid_is_robust_where_mode_is_not() {
        // Two clustered atoms share most of the mass; a lone far atom has
        // the single largest weight. The medoid lands in the cluster.
        let support = SupportSet::new(
            Mat::from_rows(&[vec![10.0], vec![0.0], vec![0.1]]).unwrap(),
        )
        .unwrap();
        let post = Mat::from_rows(&[vec![0.4, 0.3, 0.3]]).unwrap();
        let (_, mode_idx) = posterior_mode(&post, &support).unwrap();
        let (med_pts, med_idx) = posterior_medoid(&post, &support).unwrap();
        assert_eq!(mode_idx, vec![0]);
        assert!(med_idx[0] != 0);
        assert!(med_pts.get(0, 0) < 1.0);
    }

    #[test]
    fn zero_marginal_row_is_reported() {
        // The prior puts all weight on atom 0, where this row is -inf.
        let support = SupportSet::new(
            Mat::from_rows(&[vec![0.0], vec![50.0]]).unwrap(),
        )
        .unwrap();
        let prior = DiscretePrior::new(support, vec![1.0, 0.0]).unwrap();
        let values = Mat::from_rows(&[vec![f64::NEG_INFINITY, -1.0]]).unwrap();
        let ll = LogLikMatrix::new(values).unwrap();
        let err = posterior_weights(&ll, &prior).unwrap_err();
        assert!(matches!(err, Error::ZeroMarginalRow { row: 0 }));
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let (ll, prior) = fixture();
        let small = SupportSet::new(Mat::from_rows(&[vec![0.0, 0.0]]).unwrap()).unwrap();
        let post = posterior_weights(&ll, &prior).unwrap();
        assert!(posterior_mean(&post, &small).is_err());
        let bad_prior = DiscretePrior::uniform(small);
        assert!(posterior_weights(&ll, &bad_prior).is_err());
    }
}
