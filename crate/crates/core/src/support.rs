//! Support-point construction and the iterated empirical Bayes estimator.
//!
//! The NPMLE needs a finite candidate set of atoms. In one or two dimensions
//! a tensor grid works, but its size explodes with dimension, so for matrix
//! problems the atoms are placed at data-derived exemplars and then *refined*:
//! fit a prior, draw new atoms from it with a little Gaussian jitter, refit,
//! and average the per-iteration posterior means. The jitter keeps the atom
//! cloud exploring; the averaging washes out the sampling noise.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::censored::CensoredMatrix;
use crate::error::{Error, Result};
use crate::matrix::Mat;
use crate::npmle::{fit_prior, DiscretePrior, SolveOptions};
use crate::posterior::{posterior_mean, posterior_weights};
use crate::tobit::SupportSet;

/// Largest dimension for which a tensor-product grid is allowed.
pub const GRID_MAX_DIM: usize = 4;

/// Largest number of atoms a grid may produce.
pub const GRID_MAX_ATOMS: usize = 1_000_000;

/// Tensor-product grid over the finite endpoint range of each column.
///
/// Each axis gets `points_per_axis` equally spaced values spanning the
/// column's finite endpoints (a constant column contributes the single
/// value). Atoms are emitted in row-major odometer order, last axis fastest.
/// Only sensible in low dimension; see [`Error::DimensionTooHigh`].
pub fn grid_support(data: &CensoredMatrix, points_per_axis: usize) -> Result<SupportSet> {
    let p = data.p();
    if p > GRID_MAX_DIM {
        return Err(Error::DimensionTooHigh {
            dim: p,
            max: GRID_MAX_DIM,
        });
    }
    if points_per_axis < 2 {
        return Err(Error::ConfigInvalid(format!(
            "grid needs at least 2 points per axis (got {points_per_axis})"
        )));
    }
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(p);
    for j in 0..p {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..data.n() {
            let (l, u, _) = data.cell(i, j);
            if l.is_finite() {
                lo = lo.min(l);
                hi = hi.max(l);
            }
            if u.is_finite() {
                lo = lo.min(u);
                hi = hi.max(u);
            }
        }
        if lo > hi {
            return Err(Error::UnboundedColumn { col: j });
        }
        if lo == hi {
            axes.push(vec![lo]);
        } else {
            let step = (hi - lo) / (points_per_axis - 1) as f64;
            axes.push(
                (0..points_per_axis)
                    .map(|k| {
                        if k + 1 == points_per_axis {
                            hi
                        } else {
                            lo + step * k as f64
                        }
                    })
                    .collect(),
            );
        }
    }
    let m: usize = axes.iter().map(Vec::len).product();
    if m > GRID_MAX_ATOMS {
        return Err(Error::ConfigInvalid(format!(
            "grid would have {m} atoms (limit {GRID_MAX_ATOMS}); reduce points per axis"
        )));
    }
    let mut points = Mat::zeros(m, p);
    let mut odo = vec![0usize; p];
    for k in 0..m {
        let row = points.row_mut(k);
        for (j, &idx) in odo.iter().enumerate() {
            row[j] = axes[j][idx];
        }
        // Advance the odometer, last axis fastest.
        for j in (0..p).rev() {
            odo[j] += 1;
            if odo[j] < axes[j].len() {
                break;
            }
            odo[j] = 0;
        }
    }
    SupportSet::new(points)
}

/// Generalized exemplar atoms: one atom per data row, replacing each cell by
/// a finite representative — the value itself for point cells, the midpoint
/// for finite intervals, and the finite endpoint for half-infinite intervals.
/// A doubly-infinite cell has no representative and is an error.
pub fn exemplar_support(data: &CensoredMatrix) -> Result<SupportSet> {
    let mut points = Mat::zeros(data.n(), data.p());
    for i in 0..data.n() {
        for j in 0..data.p() {
            let (l, u, _) = data.cell(i, j);
            let v = match (l.is_finite(), u.is_finite()) {
                (true, true) => {
                    if l == u {
                        l
                    } else {
                        0.5 * (l + u)
                    }
                }
                (false, true) => u,
                (true, false) => l,
                (false, false) => return Err(Error::UnboundedCell { row: i, col: j }),
            };
            points.set(i, j, v);
        }
    }
    SupportSet::new(points)
}

/// Atoms placed at known true means — only available in simulations, where
/// it upper-bounds what support refinement could achieve.
pub fn oracle_support(theta: &Mat) -> Result<SupportSet> {
    SupportSet::new(theta.clone())
}

/// How to set the jitter scale when sampling new atoms from a fitted prior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseMode {
    /// One scale for every coordinate.
    Homoskedastic(f64),
    /// Per-column mean of the data's noise levels.
    ColumnMean,
    /// Per-cell noise would not give atoms a single per-column scale;
    /// always rejected for sampling.
    CellMatched,
}

/// Resolve a noise mode into one jitter scale per column.
pub fn resolve_jitter(data: &CensoredMatrix, mode: NoiseMode) -> Result<Vec<f64>> {
    match mode {
        NoiseMode::Homoskedastic(s) => {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::ConfigInvalid(format!(
                    "homoskedastic jitter scale must be positive and finite (got {s})"
                )));
            }
            Ok(vec![s; data.p()])
        }
        NoiseMode::ColumnMean => Ok((0..data.p())
            .map(|j| data.sigma().col(j).iter().sum::<f64>() / data.n() as f64)
            .collect()),
        NoiseMode::CellMatched => Err(Error::ConfigInvalid(
            "cell-matched noise varies within a column; sampled atoms need a single \
             per-column scale (use homoskedastic or column-mean)"
            .to_string(),
        )),
    }
}

/// Draw `m` new atoms from a fitted prior: sample an atom index from the
/// prior weights, then add centered Gaussian jitter with the per-column
/// scales. Atom-major, coordinate-minor draw order makes the result a pure
/// function of the RNG state.
pub fn sample_support_from_prior(
    prior: &DiscretePrior,
    m: usize,
    jitter_sd: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<SupportSet> {
    if m == 0 {
        return Err(Error::ConfigInvalid(
            "sampled support needs at least one atom".to_string(),
        ));
    }
    let p = prior.support().dim();
    if jitter_sd.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "{} jitter scales for {} coordinates",
            jitter_sd.len(),
            p
        )));
    }
    // Cumulative weights for inverse-CDF sampling.
    let mut cum = Vec::with_capacity(prior.m());
    let mut acc = 0.0;
    for &w in prior.weights() {
        acc += w;
        cum.push(acc);
    }
    let last = cum.len() - 1;
    cum[last] = 1.0;

    let mut points = Mat::zeros(m, p);
    for k in 0..m {
        let u: f64 = rng.random();
        let idx = cum.partition_point(|&c| c <= u).min(last);
        let mu = prior.support().atom(idx);
        let row = points.row_mut(k);
        for (j, slot) in row.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *slot = mu[j] + jitter_sd[j] * z;
        }
    }
    SupportSet::new(points)
}

/// Configuration of the iterated estimator.
#[derive(Clone, Debug)]
pub struct EbmTobitConfig {
    /// Number of fit/resample rounds.
    pub iterations: usize,
    /// Initial rounds excluded from the averaged estimate (must be smaller
    /// than `iterations`).
    pub burn_in: usize,
    /// Atoms per sampled support; `None` uses one atom per data row.
    pub support_size: Option<usize>,
    /// Jitter scale rule for resampled atoms.
    pub noise: NoiseMode,
    /// RNG seed; fixing it makes the whole estimate reproducible.
    pub seed: u64,
    /// Inner NPMLE solver controls.
    pub solver: SolveOptions,
    /// Keep every iteration's posterior mean (memory: `iterations` copies
    /// of an `n x p` matrix).
    pub record_iterates: bool,
}

impl Default for EbmTobitConfig {
    fn default() -> Self {
        EbmTobitConfig {
            iterations: 50,
            burn_in: 10,
            support_size: None,
            noise: NoiseMode::Homoskedastic(1.0),
            seed: 0,
            solver: SolveOptions::default(),
            record_iterates: false,
        }
    }
}

/// Output of [`ebm_tobit`].
#[derive(Clone, Debug)]
pub struct EbmTobitResult {
    /// Averaged posterior-mean estimate of the mean matrix (`n x p`).
    pub theta_hat: Mat,
    /// Prior fitted in the final round, for imputing new rows.
    pub final_prior: DiscretePrior,
    /// Marginal log-likelihood reached in each round.
    pub iteration_logliks: Vec<f64>,
    /// Solver convergence flag of each round. Rounds that hit the iteration
    /// cap still contribute to the average; this records them.
    pub iteration_converged: Vec<bool>,
    /// Posterior mean of every round (including burn-in), when requested.
    pub per_iter_means: Option<Vec<Mat>>,
}

/// Iterated empirical Bayes estimate of the mean matrix of partly
/// interval-censored Gaussian data.
///
/// Starting from the exemplar support, each round fits the NPMLE prior,
/// records the posterior mean, and (except after the last round) redraws the
/// support from the fitted prior with Gaussian jitter. The estimate is the
/// average of the posterior means from the rounds after burn-in.
pub fn ebm_tobit(data: &CensoredMatrix, cfg: &EbmTobitConfig) -> Result<EbmTobitResult> {
    if cfg.iterations == 0 {
        return Err(Error::ConfigInvalid(
            "need at least one iteration".to_string(),
        ));
    }
    if cfg.burn_in >= cfg.iterations {
        return Err(Error::ConfigInvalid(format!(
            "burn-in ({}) must be smaller than the iteration count ({})",
            cfg.burn_in, cfg.iterations
        )));
    }
    let m_target = cfg.support_size.unwrap_or(data.n());
    if m_target == 0 {
        return Err(Error::ConfigInvalid(
            "support size must be at least one atom".to_string(),
        ));
    }
    let jitter = resolve_jitter(data, cfg.noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut support = exemplar_support(data)?;
    let mut sum = Mat::zeros(data.n(), data.p());
    let mut averaged = 0usize;
    let mut iteration_logliks = Vec::with_capacity(cfg.iterations);
    let mut iteration_converged = Vec::with_capacity(cfg.iterations);
    let mut per_iter = cfg.record_iterates.then(Vec::new);
    let mut final_prior: Option<DiscretePrior> = None;

    for round in 1..=cfg.iterations {
        let fit = fit_prior(data, &support, &cfg.solver)?;
        let post = posterior_weights(&fit.loglik, &fit.prior)?;
        let mean = posterior_mean(&post, &support)?;

        iteration_logliks.push(fit.diagnostics.final_loglik);
        iteration_converged.push(fit.diagnostics.converged);
        if round > cfg.burn_in {
            for (acc, &v) in sum.as_mut_slice().iter_mut().zip(mean.as_slice()) {
                *acc += v;
            }
            averaged += 1;
        }
        if let Some(list) = per_iter.as_mut() {
            list.push(mean);
        }

        if round < cfg.iterations {
            support = sample_support_from_prior(&fit.prior, m_target, &jitter, &mut rng)?;
        }
        final_prior = Some(fit.prior);
    }

    let scale = 1.0 / averaged as f64;
    for acc in sum.as_mut_slice() {
        *acc *= scale;
    }
    Ok(EbmTobitResult {
        theta_hat: sum,
        final_prior: final_prior.expect("at least one round ran"),
        iteration_logliks,
        iteration_converged,
        per_iter_means: per_iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[Vec<f64>]) -> Mat {
        Mat::from_rows(rows).unwrap()
    }

    #[test]
    fn exemplar_support_on_uncensored_data_is_the_data() {
        let values = mat(&[vec![0.3, -1.2], vec![2.0, 0.0]]);
        let data = CensoredMatrix::from_points(&values, 1.0).unwrap();
        let s = exemplar_support(&data).unwrap();
        assert_eq!(s.points(), &values);
    }

    #[test]
    fn exemplar_support_applies_interval_rules() {
        let inf = f64::INFINITY;
        let lower = mat(&[vec![1.0, -inf, 2.0, 4.0]]);
        let upper = mat(&[vec![1.0, -2.0, 6.0, inf]]);
        let data = CensoredMatrix::new(lower, upper, None).unwrap();
        let s = exemplar_support(&data).unwrap();
        assert_eq!(s.atom(0), &[1.0, -2.0, 4.0, 4.0]);
    }

    #[test]
    fn exemplar_support_rejects_doubly_infinite_cells() {
        let lower = mat(&[vec![f64::NEG_INFINITY]]);
        let upper = mat(&[vec![f64::INFINITY]]);
        let data = CensoredMatrix::new(lower, upper, None).unwrap();
        let err = exemplar_support(&data).unwrap_err();
        assert!(matches!(err, Error::UnboundedCell { row: 0, col: 0 }));
    }

    #[test]
    fn grid_support_spans_finite_endpoints() {
        let lower = mat(&[vec![0.0], vec![1.0]]);
        let upper = mat(&[vec![0.0], vec![1.0]]);
        let data = CensoredMatrix::new(lower, upper, None).unwrap();
        let s = grid_support(&data, 3).unwrap();
        assert_eq!(s.points().as_slice(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn grid_support_two_dims_gives_cartesian_product() {
        let lower = mat(&[vec![0.0, -1.0], vec![2.0, 3.0]]);
        let upper = lower.clone();
        let data = CensoredMatrix::new(lower, upper, None).unwrap();
        let s = grid_support(&data, 2).unwrap();
        assert_eq!(s.m(), 4);
        // Odometer order, last axis fastest.
        assert_eq!(s.atom(0), &[0.0, -1.0]);
        assert_eq!(s.atom(1), &[0.0, 3.0]);
        assert_eq!(s.atom(2), &[2.0, -1.0]);
        assert_eq!(s.atom(3), &[2.0, 3.0]);
    }

    #[test]
    fn grid_support_guards_dimension_and_range() {
        let values = mat(&[vec![0.0; 5], vec![1.0; 5]]);
        let data = CensoredMatrix::from_points(&values, 1.0).unwrap();
        assert!(matches!(
            grid_support(&data, 3),
            Err(Error::DimensionTooHigh { dim: 5, max: 4 })
        ));
        let inf = f64::INFINITY;
        let data = CensoredMatrix::new(mat(&[vec![-inf]]), mat(&[vec![inf]]), None).unwrap();
        assert!(matches!(
            grid_support(&data, 3),
            Err(Error::UnboundedColumn { col: 0 })
        ));
    }

    #[test]
    fn sampled_support_is_seed_deterministic() {
        let support = SupportSet::new(mat(&[vec![0.0, 5.0], vec![10.0, -5.0]])).unwrap();
        let prior = DiscretePrior::new(support, vec![0.7, 0.3]).unwrap();
        let draw = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_support_from_prior(&prior, 6, &[0.5, 0.5], &mut rng).unwrap()
        };
        assert_eq!(draw(42).points(), draw(42).points());
        assert_ne!(draw(42).points(), draw(43).points());
    }

    #[test]
    fn sampling_respects_zero_weights() {
        let support = SupportSet::new(mat(&[vec![0.0], vec![100.0]])).unwrap();
        let prior = DiscretePrior::new(support, vec![1.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = sample_support_from_prior(&prior, 50, &[1e-9], &mut rng).unwrap();
        for k in 0..s.m() {
            assert!(s.atom(k)[0].abs() < 1e-6, "atom {k} strayed: {}", s.atom(k)[0]);
        }
    }

    #[test]
    fn resolve_jitter_modes() {
        let lower = mat(&[vec![0.0, 0.0], vec![1.0, 1.0]]);
        let sigma = mat(&[vec![1.0, 3.0], vec![2.0, 5.0]]);
        let data = CensoredMatrix::new(lower.clone(), lower, Some(sigma)).unwrap();
        assert_eq!(
            resolve_jitter(&data, NoiseMode::Homoskedastic(0.25)).unwrap(),
            vec![0.25, 0.25]
        );
        assert_eq!(
            resolve_jitter(&data, NoiseMode::ColumnMean).unwrap(),
            vec![1.5, 4.0]
        );
        assert!(resolve_jitter(&data, NoiseMode::CellMatched).is_err());
        assert!(resolve_jitter(&data, NoiseMode::Homoskedastic(0.0)).is_err());
    }

    #[test]
    fn ebm_tobit_runs_and_reports_diagnostics() {
        let lower = mat(&[
            vec![0.1, f64::NEG_INFINITY],
            vec![1.4, 0.2],
            vec![-0.7, -0.9],
            vec![2.2, 1.0],
        ]);
        let upper = mat(&[
            vec![0.1, -0.5],
            vec![1.4, 0.2],
            vec![-0.7, -0.9],
            vec![2.2, 3.0],
        ]);
        let data = CensoredMatrix::new(lower, upper, None).unwrap();
        let cfg = EbmTobitConfig {
            iterations: 5,
            burn_in: 1,
            seed: 11,
            record_iterates: true,
            ..EbmTobitConfig::default()
        };
        let before = data.content_hash();
        let out = ebm_tobit(&data, &cfg).unwrap();
        assert_eq!(data.content_hash(), before, "input must not be mutated");
        assert_eq!(out.theta_hat.shape(), (4, 2));
        assert!(out.theta_hat.as_slice().iter().all(|x| x.is_finite()));
        assert_eq!(out.iteration_logliks.len(), 5);
        assert_eq!(out.iteration_converged.len(), 5);
        assert_eq!(out.per_iter_means.as_ref().unwrap().len(), 5);
        assert_eq!(out.final_prior.support().dim(), 2);
        // Same seed, same estimate.
        let again = ebm_tobit(&data, &cfg).unwrap();
        assert_eq!(out.theta_hat, again.theta_hat);
    }

    #[test]
    fn ebm_tobit_validates_config() {
        let values = mat(&[vec![0.0], vec![1.0]]);
        let data = CensoredMatrix::from_points(&values, 1.0).unwrap();
        let bad = EbmTobitConfig {
            iterations: 3,
            burn_in: 3,
            ..EbmTobitConfig::default()
        };
        assert!(ebm_tobit(&data, &bad).is_err());
        let bad = EbmTobitConfig {
            noise: NoiseMode::CellMatched,
            ..EbmTobitConfig::default()
        };
        assert!(ebm_tobit(&data, &bad).is_err());
        let bad = EbmTobitConfig {
            iterations: 0,
            ..EbmTobitConfig::default()
        };
        assert!(ebm_tobit(&data, &bad).is_err());
    }
}
