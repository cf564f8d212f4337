//! Standard errors and confidence intervals: influence-function plug-in
//! variance, cross-validated influence-function variance and the
//! nonparametric percentile bootstrap.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Dataset, EFFECT_DIM};
use crate::error::{Error, Result};
use crate::estimators::ivg::IvgFit;
use crate::estimators::nuisance::NuisancePredictions;
use crate::estimators::tmle::TmleFit;
use crate::linalg;
use crate::rng::{derive_seed, stream};
use crate::super_learner::make_folds;

pub const DEFAULT_LEVEL: f64 = 0.95;
pub const DEFAULT_BOOTSTRAP_B: usize = 1999;
/// Redraws allowed for one resample before it counts as a failure.
pub const BOOTSTRAP_RETRY_CAP: usize = 10;
/// Failure share above which a bootstrap is flagged unstable.
pub const BOOTSTRAP_FAILURE_LIMIT: f64 = 0.05;
pub const DEFAULT_CV_FOLDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarianceMode {
    /// Sample variance of the estimated influence function over `n`.
    IfPlugin,
    /// Cross-validated influence-function variance.
    CvIf,
    /// Nonparametric percentile bootstrap with nuisance refits.
    Bootstrap,
}

impl VarianceMode {
    pub fn name(&self) -> &'static str {
        match self {
            VarianceMode::IfPlugin => "if_plugin",
            VarianceMode::CvIf => "cv_if",
            VarianceMode::Bootstrap => "bootstrap",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "if_plugin" | "if" => Some(VarianceMode::IfPlugin),
            "cv_if" => Some(VarianceMode::CvIf),
            "bootstrap" => Some(VarianceMode::Bootstrap),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiConfig {
    pub level: f64,
    pub bootstrap_b: usize,
    pub bootstrap_seed: u64,
    /// `None` selects each method's default.
    pub variance_mode: Option<VarianceMode>,
    pub cv_folds: usize,
}

impl Default for CiConfig {
    fn default() -> Self {
        CiConfig {
            level: DEFAULT_LEVEL,
            bootstrap_b: DEFAULT_BOOTSTRAP_B,
            bootstrap_seed: 0,
            variance_mode: None,
            cv_folds: DEFAULT_CV_FOLDS,
        }
    }
}

impl CiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::ConfigError(format!(
                "confidence level {} is not in (0, 1)",
                self.level
            )));
        }
        if self.bootstrap_b == 0 {
            return Err(Error::ConfigError("bootstrap_B must be at least 1".into()));
        }
        if self.cv_folds < 2 {
            return Err(Error::ConfigError(format!(
                "cross-validated variance needs at least 2 folds, got {}",
                self.cv_folds
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfluenceKind {
    IvG,
    TmleEif,
}

/// Per-observation influence values for `(psi_c, psi_v)`.
#[derive(Debug, Clone)]
pub struct InfluenceMatrix {
    pub values: DMatrix<f64>,
    pub kind: InfluenceKind,
}

impl InfluenceMatrix {
    /// Plug-in covariance of the estimate: sample covariance over `n`.
    pub fn covariance(&self) -> DMatrix<f64> {
        linalg::sample_covariance(&self.values) / self.values.nrows() as f64
    }

    pub fn column_means(&self) -> [f64; EFFECT_DIM] {
        let m = self.values.row_mean();
        [m[0], m[1]]
    }
}

/// Two-sided standard normal critical value for `level`.
pub fn normal_critical_value(level: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - (1.0 - level) / 2.0)
}

pub fn wald_interval(estimate: f64, se: f64, level: f64) -> Interval {
    let half = normal_critical_value(level) * se;
    Interval {
        lo: estimate - half,
        hi: estimate + half,
    }
}

/// IV-g influence values at the solution held in `fit`.
pub fn iv_g_influence(ds: &Dataset, preds: &NuisancePredictions, fit: &IvgFit) -> Result<InfluenceMatrix> {
    fit.influence_on(ds, preds)
}

/// TMLE efficient-influence values after targeting.
pub fn tmle_eif(ds: &Dataset, preds: &NuisancePredictions, fit: &TmleFit) -> Result<InfluenceMatrix> {
    fit.eif_on(ds, preds)
}

/// Cross-validated influence-function covariance of the estimate.
///
/// For fold `k`, `fold_influence(train, valid)` must return the influence
/// values of the validation rows computed from fits on the training rows.
/// The per-fold mean outer products are averaged over folds; the result is
/// divided by `n` to give the covariance of the estimate.
pub fn cv_if_variance<F>(ds: &Dataset, folds: usize, seed: u64, fold_influence: F) -> Result<DMatrix<f64>>
where
    F: Fn(&Dataset, &Dataset) -> Result<DMatrix<f64>> + Sync,
{
    if folds < 2 {
        return Err(Error::ConfigError(format!(
            "cross-validated variance needs at least 2 folds, got {folds}"
        )));
    }
    let n = ds.n();
    let assignment = make_folds(n, folds, seed)?;
    let parts: Vec<Result<DMatrix<f64>>> = (0..folds)
        .into_par_iter()
        .map(|k| {
            let (valid, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| assignment[i] == k);
            let too_small = |e: Error| {
                Error::ConfigError(format!(
                    "fold {k} ({} training rows, {} validation rows) is too small to fit the nuisances: {e}",
                    train.len(),
                    valid.len()
                ))
            };
            let train_ds = ds.select(&train).map_err(too_small)?;
            let valid_ds = ds.take(&valid);
            let d = fold_influence(&train_ds, &valid_ds).map_err(|e| match e {
                Error::ConfigError(_) => e,
                other => too_small(other),
            })?;
            Ok(d.tr_mul(&d) / valid.len() as f64)
        })
        .collect();
    let mut total = DMatrix::zeros(EFFECT_DIM, EFFECT_DIM);
    for p in parts {
        total += p?;
    }
    Ok(total / (folds as f64 * n as f64))
}

#[derive(Debug, Clone)]
pub struct BootstrapResult {
    /// Successful resample estimates in resample order.
    pub estimates: Vec<[f64; EFFECT_DIM]>,
    pub ci: [Interval; EFFECT_DIM],
    pub se: [f64; EFFECT_DIM],
    pub failures: usize,
    pub unstable: bool,
}

/// Order statistic of rank `ceil(p * B)` (1-based) of sorted values.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let b = sorted.len();
    let rank = ((p * b as f64).ceil() as usize).clamp(1, b);
    sorted[rank - 1]
}

fn summarize_bootstrap(
    estimates: Vec<[f64; EFFECT_DIM]>,
    failures: usize,
    b: usize,
    level: f64,
) -> Result<BootstrapResult> {
    if estimates.is_empty() {
        return Err(Error::DegenerateDesign(format!(
            "all {b} bootstrap resamples failed"
        )));
    }
    let alpha = 1.0 - level;
    let mut ci = [Interval { lo: 0.0, hi: 0.0 }; EFFECT_DIM];
    let mut se = [0.0; EFFECT_DIM];
    for j in 0..EFFECT_DIM {
        let mut col: Vec<f64> = estimates.iter().map(|e| e[j]).collect();
        se[j] = linalg::sd(&col);
        col.sort_by(f64::total_cmp);
        ci[j] = Interval {
            lo: nearest_rank(&col, alpha / 2.0),
            hi: nearest_rank(&col, 1.0 - alpha / 2.0),
        };
    }
    Ok(BootstrapResult {
        estimates,
        ci,
        se,
        failures,
        unstable: failures as f64 > BOOTSTRAP_FAILURE_LIMIT * b as f64,
    })
}

fn resample(ds: &Dataset, seed: u64) -> Option<Dataset> {
    let mut rng = stream(seed);
    let n = ds.n();
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    ds.select(&idx).ok()
}

/// Percentile bootstrap for several statistics on shared resamples.
///
/// `estimator` returns one entry per statistic; `None` or a non-finite
/// value marks a failure. A resample on which any statistic fails is
/// redrawn up to [`BOOTSTRAP_RETRY_CAP`] times; after that the failing
/// statistics record a failure and the others keep their values.
pub fn bootstrap_ci_multi<F>(
    ds: &Dataset,
    statistics: usize,
    estimator: F,
    cfg: &CiConfig,
) -> Result<Vec<Result<BootstrapResult>>>
where
    F: Fn(&Dataset) -> Vec<Option<[f64; EFFECT_DIM]>> + Sync,
{
    cfg.validate()?;
    let b = cfg.bootstrap_b;
    let draws: Vec<Vec<Option<[f64; EFFECT_DIM]>>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let base = derive_seed(cfg.bootstrap_seed, r as u64);
            let mut last = vec![None; statistics];
            for attempt in 0..=BOOTSTRAP_RETRY_CAP {
                let Some(sample) = resample(ds, derive_seed(base, attempt as u64)) else {
                    continue;
                };
                let mut out = estimator(&sample);
                out.resize(statistics, None);
                for v in out.iter_mut() {
                    if v.is_some_and(|e| e.iter().any(|x| !x.is_finite())) {
                        *v = None;
                    }
                }
                let ok = out.iter().all(Option::is_some);
                last = out;
                if ok {
                    break;
                }
            }
            last
        })
        .collect();
    Ok((0..statistics)
        .map(|s| {
            let est: Vec<[f64; EFFECT_DIM]> = draws.iter().filter_map(|d| d[s]).collect();
            let failures = b - est.len();
            summarize_bootstrap(est, failures, b, cfg.level)
        })
        .collect())
}

/// Percentile bootstrap of one statistic.
pub fn bootstrap_ci<F>(ds: &Dataset, estimator: F, cfg: &CiConfig) -> Result<BootstrapResult>
where
    F: Fn(&Dataset) -> Result<[f64; EFFECT_DIM]> + Sync,
{
    bootstrap_ci_multi(ds, 1, |s| vec![estimator(s).ok()], cfg)?
        .pop()
        .expect("one statistic requested")
}
