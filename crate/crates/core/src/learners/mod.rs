//! Supervised learners with a shared fit/predict contract.
//!
//! These back both the parametric nuisance models and the members of the
//! Super Learner library. Every learner is deterministic given its inputs.

mod expand;
mod knn;
mod least_squares;
mod logistic;
mod spline;
mod stepwise;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use expand::Expansion;
pub use knn::fit_nearest_neighbor;
pub use least_squares::fit_least_squares;
pub use logistic::{fit_logistic, LOGISTIC_COEF_BOUND};
pub use spline::fit_spline_basis;
pub use stepwise::{fit_stepwise, StepwiseCriterion};

/// Lower and upper clip applied to every binary-family prediction.
pub const PROB_CLIP: (f64, f64) = (0.001, 0.999);

pub const DEFAULT_LOGISTIC_MAX_ITER: usize = 50;
pub const DEFAULT_LOGISTIC_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TermExpansion {
    MainTerms,
    /// Main terms plus all pairwise products and squares.
    MainPlusSecondOrder,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearnerKind {
    LeastSquares,
    Logistic,
    Ridge { lambda: f64 },
    Stepwise,
    SplineBasis { knots_per_covariate: usize },
    NearestNeighbor { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub family: Family,
    pub expansion: TermExpansion,
}

impl LearnerSpec {
    pub fn new(kind: LearnerKind, family: Family, expansion: TermExpansion) -> Result<Self> {
        match kind {
            LearnerKind::Logistic if family != Family::Binary => {
                return Err(Error::SpecError(
                    "logistic learner requires a binary family".into(),
                ))
            }
            LearnerKind::Ridge { lambda } if !(lambda >= 0.0) || !lambda.is_finite() => {
                return Err(Error::SpecError(format!("ridge penalty {lambda} must be >= 0")))
            }
            LearnerKind::SplineBasis {
                knots_per_covariate: 0,
            } => return Err(Error::SpecError("spline basis needs at least one knot".into())),
            LearnerKind::NearestNeighbor { k: 0 } => {
                return Err(Error::SpecError("nearest neighbor needs k >= 1".into()))
            }
            _ => {}
        }
        Ok(LearnerSpec {
            kind,
            family,
            expansion,
        })
    }

    pub fn name(&self) -> String {
        let base = match self.kind {
            LearnerKind::LeastSquares => "least_squares".to_string(),
            LearnerKind::Logistic => "logistic".to_string(),
            LearnerKind::Ridge { lambda } => format!("ridge({lambda})"),
            LearnerKind::Stepwise => "stepwise_aic".to_string(),
            LearnerKind::SplineBasis {
                knots_per_covariate,
            } => format!("spline_basis({knots_per_covariate})"),
            LearnerKind::NearestNeighbor { k } => format!("nearest_neighbor({k})"),
        };
        match self.expansion {
            TermExpansion::MainTerms => base,
            TermExpansion::MainPlusSecondOrder => format!("{base}+2nd"),
        }
    }

    /// Fits the learner on raw features (no intercept column). Term
    /// expansion and intercept handling are done here.
    pub fn fit(&self, features: &DMatrix<f64>, y: &DVector<f64>) -> Result<FittedLearner> {
        check_xy(features, y)?;
        let expansion = Expansion::plan(features, self.expansion);
        let expanded = expansion.apply(features);
        let inner = match self.kind {
            LearnerKind::LeastSquares => fit_least_squares(&with_intercept(&expanded), y, 0.0)?,
            LearnerKind::Ridge { lambda } => {
                fit_least_squares(&with_intercept(&expanded), y, lambda)?
            }
            LearnerKind::Logistic => fit_logistic(
                &with_intercept(&expanded),
                y,
                DEFAULT_LOGISTIC_MAX_ITER,
                DEFAULT_LOGISTIC_TOL,
            )?,
            LearnerKind::Stepwise => {
                fit_stepwise(&expanded, y, self.family, StepwiseCriterion::Aic)?
            }
            LearnerKind::SplineBasis {
                knots_per_covariate,
            } => fit_spline_basis(&expanded, y, knots_per_covariate)?,
            LearnerKind::NearestNeighbor { k } => fit_nearest_neighbor(&expanded, y, k)?,
        };
        let intercept = matches!(
            self.kind,
            LearnerKind::LeastSquares | LearnerKind::Ridge { .. } | LearnerKind::Logistic
        );
        Ok(FittedLearner {
            spec: *self,
            model: inner.model,
            input: InputMap::Expanded {
                expansion,
                intercept,
            },
            n_input_cols: features.ncols(),
            n_train: inner.n_train,
            converged: inner.converged,
        })
    }
}

pub(crate) fn check_xy(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::SpecError(format!(
            "design has {} rows but target has {}",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::SpecError("cannot fit on zero rows".into()));
    }
    Ok(())
}

pub(crate) fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::from_element(x.nrows(), x.ncols() + 1, 1.0);
    out.view_mut((0, 1), (x.nrows(), x.ncols())).copy_from(x);
    out
}

pub(crate) fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn clip_probability(p: f64) -> f64 {
    p.clamp(PROB_CLIP.0, PROB_CLIP.1)
}

/// Fitted state of a learner.
#[derive(Debug, Clone)]
pub enum Model {
    /// Linear index on the prepared design; `logistic` maps it through expit.
    Linear { coef: DVector<f64>, logistic: bool },
    /// Selected candidate columns, with the intercept first in `coef`.
    Stepwise {
        selected: Vec<usize>,
        coef: DVector<f64>,
        logistic: bool,
    },
    Spline {
        knots: Vec<(usize, f64)>,
        coef: DVector<f64>,
    },
    NearestNeighbor {
        x: DMatrix<f64>,
        y: Vec<f64>,
        k: usize,
    },
}

#[derive(Debug, Clone)]
enum InputMap {
    /// Prediction inputs are used exactly as given.
    Raw,
    Expanded { expansion: Expansion, intercept: bool },
}

#[derive(Debug, Clone)]
pub struct FittedLearner {
    pub spec: LearnerSpec,
    pub model: Model,
    input: InputMap,
    n_input_cols: usize,
    pub n_train: usize,
    pub converged: bool,
}

impl FittedLearner {
    pub(crate) fn raw(spec: LearnerSpec, model: Model, x: &DMatrix<f64>, converged: bool) -> Self {
        FittedLearner {
            spec,
            model,
            input: InputMap::Raw,
            n_input_cols: x.ncols(),
            n_train: x.nrows(),
            converged,
        }
    }

    /// Coefficients of linear-index models, if any.
    pub fn coefficients(&self) -> Option<&DVector<f64>> {
        match &self.model {
            Model::Linear { coef, .. } | Model::Stepwise { coef, .. } | Model::Spline { coef, .. } => {
                Some(coef)
            }
            Model::NearestNeighbor { .. } => None,
        }
    }

    /// Predictions before the binary-family probability clip.
    pub fn predict_raw(&self, x_new: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x_new.ncols() != self.n_input_cols {
            return Err(Error::SpecError(format!(
                "prediction input has {} columns, learner was trained on {}",
                x_new.ncols(),
                self.n_input_cols
            )));
        }
        let prepared;
        let x = match &self.input {
            InputMap::Raw => x_new,
            InputMap::Expanded {
                expansion,
                intercept,
            } => {
                let e = expansion.apply(x_new);
                prepared = if *intercept { with_intercept(&e) } else { e };
                &prepared
            }
        };
        Ok(match &self.model {
            Model::Linear { coef, logistic } => {
                let eta = x * coef;
                if *logistic {
                    eta.map(expit)
                } else {
                    eta
                }
            }
            Model::Stepwise {
                selected,
                coef,
                logistic,
            } => {
                let eta = DVector::from_fn(x.nrows(), |i, _| {
                    coef[0]
                        + selected
                            .iter()
                            .enumerate()
                            .map(|(k, &j)| coef[k + 1] * x[(i, j)])
                            .sum::<f64>()
                });
                if *logistic {
                    eta.map(expit)
                } else {
                    eta
                }
            }
            Model::Spline { knots, coef } => {
                let basis = spline::basis(x, knots);
                basis * coef
            }
            Model::NearestNeighbor { x: train, y, k } => knn::predict(train, y, *k, x),
        })
    }

    /// Deterministic predictions; binary-family outputs are clipped to
    /// [`PROB_CLIP`].
    pub fn predict(&self, x_new: &DMatrix<f64>) -> Result<DVector<f64>> {
        let raw = self.predict_raw(x_new)?;
        Ok(match self.spec.family {
            Family::Binary => raw.map(clip_probability),
            Family::Continuous => raw,
        })
    }
}

/// Fits a learner and returns it; convenience for [`LearnerSpec::fit`].
pub fn fit(spec: &LearnerSpec, features: &DMatrix<f64>, y: &DVector<f64>) -> Result<FittedLearner> {
    spec.fit(features, y)
}

/// Predicts with a fitted learner; convenience for [`FittedLearner::predict`].
pub fn predict(fitted: &FittedLearner, x_new: &DMatrix<f64>) -> Result<DVector<f64>> {
    fitted.predict(x_new)
}
