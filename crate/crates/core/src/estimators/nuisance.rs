use nalgebra::{DMatrix, DVector};

use crate::data::{design_matrix, Dataset, ModelSpec};
use crate::error::Result;
use crate::learners::{
    fit_least_squares, fit_logistic, Family, FittedLearner, LearnerKind, LearnerSpec, TermExpansion,
    DEFAULT_LOGISTIC_MAX_ITER, DEFAULT_LOGISTIC_TOL,
};
use crate::super_learner::{fit_super_learner, SuperLearnerConfig, SuperLearnerFit, DEFAULT_FOLDS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NuisanceMode {
    /// Main-terms logistic and linear models.
    Parametric,
    /// A Super Learner per nuisance function.
    Ensemble,
}

fn member(kind: LearnerKind, family: Family, expansion: TermExpansion) -> LearnerSpec {
    LearnerSpec {
        kind,
        family,
        expansion,
    }
}

/// Library for `m_a` and `g`.
pub fn default_binary_library() -> Vec<LearnerSpec> {
    use LearnerKind::*;
    use TermExpansion::*;
    let b = Family::Binary;
    vec![
        member(Logistic, b, MainTerms),
        member(Logistic, b, MainPlusSecondOrder),
        member(Stepwise, b, MainPlusSecondOrder),
        member(SplineBasis { knots_per_covariate: 3 }, b, MainTerms),
        member(NearestNeighbor { k: 20 }, b, MainTerms),
    ]
}

/// Library for `mu = E[Y | Z, W]`.
pub fn default_outcome_library() -> Vec<LearnerSpec> {
    use LearnerKind::*;
    use TermExpansion::*;
    let c = Family::Continuous;
    vec![
        member(LeastSquares, c, MainTerms),
        member(LeastSquares, c, MainPlusSecondOrder),
        member(Stepwise, c, MainPlusSecondOrder),
        member(SplineBasis { knots_per_covariate: 3 }, c, MainTerms),
        member(NearestNeighbor { k: 20 }, c, MainTerms),
    ]
}

#[derive(Debug, Clone)]
pub struct NuisanceConfig {
    pub binary_library: Vec<LearnerSpec>,
    pub outcome_library: Vec<LearnerSpec>,
    pub folds: usize,
    pub seed: u64,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        NuisanceConfig {
            binary_library: default_binary_library(),
            outcome_library: default_outcome_library(),
            folds: DEFAULT_FOLDS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Inputs {
    /// `W` only.
    Covariates,
    /// `[Z, W]`, with `Z` overridable for counterfactual predictions.
    InstrumentAndCovariates,
}

#[derive(Debug, Clone)]
enum Predictor {
    Parametric { spec: ModelSpec, fit: FittedLearner },
    Ensemble { fit: SuperLearnerFit, inputs: Inputs },
}

impl Predictor {
    fn predict(&self, ds: &Dataset, z: Option<u8>) -> Result<DVector<f64>> {
        match self {
            Predictor::Parametric { spec, fit } => fit.predict(&design_matrix(ds, spec, z)?),
            Predictor::Ensemble { fit, inputs } => fit.predict(&features(ds, *inputs, z)),
        }
    }

    fn converged(&self) -> bool {
        match self {
            Predictor::Parametric { fit, .. } => fit.converged,
            Predictor::Ensemble { fit, .. } => fit
                .member_fits
                .iter()
                .zip(fit.weights.iter())
                .all(|(m, &w)| w == 0.0 || m.converged),
        }
    }
}

fn features(ds: &Dataset, inputs: Inputs, z: Option<u8>) -> DMatrix<f64> {
    match inputs {
        Inputs::Covariates => ds.covariates(),
        Inputs::InstrumentAndCovariates => ds.covariates_with_z(z),
    }
}

/// Fitted nuisance functions `m_a(Z, W)`, `g(W)` and optionally
/// `mu(Z, W)`. The outcome regression `m_y` is not fitted separately: IV-g
/// estimates it jointly with the effect, and TMLE derives it from `mu` and
/// `m_a`.
#[derive(Debug, Clone)]
pub struct NuisanceFits {
    pub mode: NuisanceMode,
    ma: Predictor,
    g: Predictor,
    mu: Option<Predictor>,
}

/// Nuisance predictions on the rows of one dataset.
#[derive(Debug, Clone)]
pub struct NuisancePredictions {
    pub ma1: DVector<f64>,
    pub ma0: DVector<f64>,
    pub g: DVector<f64>,
    pub mu1: Option<DVector<f64>>,
    pub mu0: Option<DVector<f64>>,
}

impl NuisancePredictions {
    /// `m_a` at the observed instrument.
    pub fn ma_observed(&self, ds: &Dataset) -> DVector<f64> {
        DVector::from_fn(ds.n(), |i, _| {
            if ds.rows()[i].z == 1 {
                self.ma1[i]
            } else {
                self.ma0[i]
            }
        })
    }

    /// `K = m_a(Z, W) - E_g[m_a(Z, W) | W]`.
    pub fn k(&self, ds: &Dataset) -> DVector<f64> {
        let obs = self.ma_observed(ds);
        DVector::from_fn(ds.n(), |i, _| {
            obs[i] - (self.g[i] * self.ma1[i] + (1.0 - self.g[i]) * self.ma0[i])
        })
    }
}

impl NuisanceFits {
    pub fn predict(&self, ds: &Dataset) -> Result<NuisancePredictions> {
        let (mu1, mu0) = match &self.mu {
            Some(mu) => (Some(mu.predict(ds, Some(1))?), Some(mu.predict(ds, Some(0))?)),
            None => (None, None),
        };
        Ok(NuisancePredictions {
            ma1: self.ma.predict(ds, Some(1))?,
            ma0: self.ma.predict(ds, Some(0))?,
            g: self.g.predict(ds, None)?,
            mu1,
            mu0,
        })
    }

    pub fn has_outcome(&self) -> bool {
        self.mu.is_some()
    }

    /// Whether every fit that contributes to a prediction converged.
    pub fn converged(&self) -> bool {
        self.ma.converged() && self.g.converged() && self.mu.as_ref().is_none_or(|m| m.converged())
    }

    pub fn ma_ensemble(&self) -> Option<&SuperLearnerFit> {
        match &self.ma {
            Predictor::Ensemble { fit, .. } => Some(fit),
            Predictor::Parametric { .. } => None,
        }
    }

    pub fn mu_ensemble(&self) -> Option<&SuperLearnerFit> {
        match &self.mu {
            Some(Predictor::Ensemble { fit, .. }) => Some(fit),
            _ => None,
        }
    }
}

fn parametric_logistic(ds: &Dataset, spec: ModelSpec, target: &DVector<f64>) -> Result<Predictor> {
    let x = design_matrix(ds, &spec, None)?;
    let fit = fit_logistic(&x, target, DEFAULT_LOGISTIC_MAX_ITER, DEFAULT_LOGISTIC_TOL)?;
    Ok(Predictor::Parametric { spec, fit })
}

fn ensemble(
    ds: &Dataset,
    inputs: Inputs,
    target: &DVector<f64>,
    family: Family,
    library: &[LearnerSpec],
    cfg: &NuisanceConfig,
) -> Result<Predictor> {
    let sl_cfg = SuperLearnerConfig::new(library.to_vec(), cfg.folds, cfg.seed)?;
    let fit = fit_super_learner(&features(ds, inputs, None), target, family, &sl_cfg)?;
    Ok(Predictor::Ensemble { fit, inputs })
}

/// Fits `m_a` and `g`, plus `mu` when `with_outcome` is set.
///
/// Parametric mode uses main-terms logistic models for `m_a` (on `Z, W`) and
/// `g` (on `W`) and a linear model on `Z, W, Z*V` for `mu`.
pub fn build_nuisance(
    ds: &Dataset,
    mode: NuisanceMode,
    cfg: &NuisanceConfig,
    with_outcome: bool,
) -> Result<NuisanceFits> {
    let a = ds.a();
    let z = ds.z();
    let y = ds.y();
    let (ma, g, mu) = match mode {
        NuisanceMode::Parametric => {
            let ma = parametric_logistic(ds, ModelSpec::exposure_ma_main(ds), &a)?;
            let g = parametric_logistic(ds, ModelSpec::instrument_g_main(ds), &z)?;
            let mu = if with_outcome {
                let spec = ModelSpec::outcome_mu_main(ds);
                let fit = fit_least_squares(&design_matrix(ds, &spec, None)?, &y, 0.0)?;
                Some(Predictor::Parametric { spec, fit })
            } else {
                None
            };
            (ma, g, mu)
        }
        NuisanceMode::Ensemble => {
            use Inputs::*;
            let ma = ensemble(ds, InstrumentAndCovariates, &a, Family::Binary, &cfg.binary_library, cfg)?;
            let g = ensemble(ds, Covariates, &z, Family::Binary, &cfg.binary_library, cfg)?;
            let mu = if with_outcome {
                Some(ensemble(
                    ds,
                    InstrumentAndCovariates,
                    &y,
                    Family::Continuous,
                    &cfg.outcome_library,
                    cfg,
                )?)
            } else {
                None
            };
            (ma, g, mu)
        }
    };
    Ok(NuisanceFits { mode, ma, g, mu })
}
