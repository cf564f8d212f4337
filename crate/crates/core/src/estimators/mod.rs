//! TSLS, IV-g and IV-TMLE estimators of the working-model coefficients
//! `psi = (psi_c, psi_v)` in `m(W; psi) = psi_c + psi_v V`.

pub mod ivg;
pub mod nuisance;
pub mod tmle;
pub mod tsls;

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::data::{Dataset, EFFECT_DIM};
use crate::error::{Error, Result};
use crate::inference::{
    bootstrap_ci_multi, cv_if_variance, wald_interval, BootstrapResult, CiConfig, Interval, VarianceMode,
};

pub use ivg::{fit_iv_g, IvgFit};
pub use nuisance::{build_nuisance, NuisanceConfig, NuisanceFits, NuisanceMode, NuisancePredictions};
pub use tmle::{
    clever_covariate, fit_tmle, initial_m_hat, solve_epsilon, ModifierMoments, TmleFit, M_DENOMINATOR_FLOOR,
    ZETA2_FLOOR,
};
pub use tsls::{fit_tsls, TslsFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Tsls,
    Ivg,
    IvgSl,
    Tmle,
    TmleSl,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Tsls, Method::Ivg, Method::IvgSl, Method::Tmle, Method::TmleSl];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Tsls => "tsls",
            Method::Ivg => "ivg",
            Method::IvgSl => "ivg_sl",
            Method::Tmle => "tmle",
            Method::TmleSl => "tmle_sl",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn nuisance_mode(&self) -> Option<NuisanceMode> {
        match self {
            Method::Tsls => None,
            Method::Ivg | Method::Tmle => Some(NuisanceMode::Parametric),
            Method::IvgSl | Method::TmleSl => Some(NuisanceMode::Ensemble),
        }
    }

    /// TSLS uses its sandwich, parametric IV-g and TMLE the bootstrap, and
    /// the Super Learner variants the influence-function variance.
    pub fn default_variance(&self) -> VarianceMode {
        match self {
            Method::Tsls | Method::IvgSl | Method::TmleSl => VarianceMode::IfPlugin,
            Method::Ivg | Method::Tmle => VarianceMode::Bootstrap,
        }
    }

    fn is_tmle(&self) -> bool {
        matches!(self, Method::Tmle | Method::TmleSl)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub first_stage_f: Option<[f64; 2]>,
    pub weak_instrument: bool,
    pub rank_deficient: bool,
    /// Rows whose instrument-strength term was raised to the floor.
    pub zeta_floor_count: usize,
    /// Rows whose initial-effect denominator was floored.
    pub m_floor_count: usize,
    pub epsilon: Option<[f64; 2]>,
    /// All nuisance fits converged.
    pub nuisance_converged: bool,
    pub bootstrap_failures: usize,
    pub bootstrap_unstable: bool,
}

impl Diagnostics {
    /// Compact `key=value` list separated by semicolons.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        if let Some([fa, fav]) = self.first_stage_f {
            let _ = write!(s, "first_stage_f={fa:.4};first_stage_f_v={fav:.4};");
        }
        if self.weak_instrument {
            s.push_str("weak_instrument;");
        }
        if self.rank_deficient {
            s.push_str("rank_deficient;");
        }
        if let Some([e0, e1]) = self.epsilon {
            let _ = write!(s, "epsilon_c={e0:.6e};epsilon_v={e1:.6e};");
        }
        if self.zeta_floor_count > 0 || self.epsilon.is_some() {
            let _ = write!(s, "zeta2_floor={};m_floor={};", self.zeta_floor_count, self.m_floor_count);
        }
        if !self.nuisance_converged {
            s.push_str("nuisance_not_converged;");
        }
        if self.bootstrap_failures > 0 {
            let _ = write!(s, "bootstrap_failures={};", self.bootstrap_failures);
        }
        if self.bootstrap_unstable {
            s.push_str("bootstrap_unstable;");
        }
        s.pop();
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectEstimate {
    pub method: Method,
    pub psi: [f64; 2],
    pub se: [f64; 2],
    pub ci: [Interval; 2],
    pub variance: VarianceMode,
    pub diagnostics: Diagnostics,
}

impl EffectEstimate {
    fn from_covariance(
        method: Method,
        psi: [f64; 2],
        cov: &DMatrix<f64>,
        level: f64,
        variance: VarianceMode,
        diagnostics: Diagnostics,
    ) -> Self {
        let se = [cov[(0, 0)].max(0.0).sqrt(), cov[(1, 1)].max(0.0).sqrt()];
        EffectEstimate {
            method,
            psi,
            se,
            ci: [wald_interval(psi[0], se[0], level), wald_interval(psi[1], se[1], level)],
            variance,
            diagnostics,
        }
    }

    fn from_bootstrap(method: Method, psi: [f64; 2], boot: &BootstrapResult, mut diagnostics: Diagnostics) -> Self {
        diagnostics.bootstrap_failures = boot.failures;
        diagnostics.bootstrap_unstable = boot.unstable;
        EffectEstimate {
            method,
            psi,
            se: boot.se,
            ci: boot.ci,
            variance: VarianceMode::Bootstrap,
            diagnostics,
        }
    }

    pub fn psi_c(&self) -> f64 {
        self.psi[0]
    }

    pub fn psi_v(&self) -> f64 {
        self.psi[1]
    }
}

#[derive(Debug, Clone, Default)]
pub struct MethodConfig {
    pub nuisance: NuisanceConfig,
    pub ci: CiConfig,
}

impl MethodConfig {
    fn variance_for(&self, method: Method) -> VarianceMode {
        self.ci.variance_mode.unwrap_or_else(|| method.default_variance())
    }
}

/// TSLS point estimate with its sandwich standard errors.
pub fn estimate_tsls(ds: &Dataset, level: f64) -> Result<EffectEstimate> {
    let fit = fit_tsls(ds)?;
    Ok(EffectEstimate::from_covariance(
        Method::Tsls,
        fit.psi,
        &fit.cov,
        level,
        VarianceMode::IfPlugin,
        tsls_diagnostics(&fit),
    ))
}

fn tsls_diagnostics(fit: &TslsFit) -> Diagnostics {
    Diagnostics {
        first_stage_f: Some(fit.first_stage_f),
        weak_instrument: fit.weak_instrument,
        rank_deficient: fit.rank_deficient,
        nuisance_converged: true,
        ..Diagnostics::default()
    }
}

/// IV-g with influence-function standard errors.
pub fn estimate_iv_g(ds: &Dataset, nuisance: &NuisanceFits, level: f64) -> Result<EffectEstimate> {
    let preds = nuisance.predict(ds)?;
    let fit = fit_iv_g(ds, &preds)?;
    let inf = fit.influence_on(ds, &preds)?;
    Ok(EffectEstimate::from_covariance(
        ivg_method(nuisance.mode),
        fit.psi,
        &inf.covariance(),
        level,
        VarianceMode::IfPlugin,
        ivg_diagnostics(&fit, nuisance),
    ))
}

/// IV-TMLE with efficient-influence-function standard errors.
pub fn estimate_iv_tmle(ds: &Dataset, nuisance: &NuisanceFits, level: f64) -> Result<EffectEstimate> {
    let preds = nuisance.predict(ds)?;
    let fit = fit_tmle(ds, &preds)?;
    let eif = fit.eif_on(ds, &preds)?;
    Ok(EffectEstimate::from_covariance(
        tmle_method(nuisance.mode),
        fit.psi,
        &eif.covariance(),
        level,
        VarianceMode::IfPlugin,
        tmle_diagnostics(&fit, nuisance),
    ))
}

fn ivg_method(mode: NuisanceMode) -> Method {
    match mode {
        NuisanceMode::Parametric => Method::Ivg,
        NuisanceMode::Ensemble => Method::IvgSl,
    }
}

fn tmle_method(mode: NuisanceMode) -> Method {
    match mode {
        NuisanceMode::Parametric => Method::Tmle,
        NuisanceMode::Ensemble => Method::TmleSl,
    }
}

fn ivg_diagnostics(fit: &IvgFit, nuisance: &NuisanceFits) -> Diagnostics {
    Diagnostics {
        rank_deficient: fit.rank_deficient,
        nuisance_converged: nuisance.converged(),
        ..Diagnostics::default()
    }
}

fn tmle_diagnostics(fit: &TmleFit, nuisance: &NuisanceFits) -> Diagnostics {
    Diagnostics {
        zeta_floor_count: fit.zeta_floor_count,
        m_floor_count: fit.m_floor_count,
        epsilon: Some(fit.epsilon),
        nuisance_converged: nuisance.converged(),
        ..Diagnostics::default()
    }
}

/// Point estimate of an IV-g or TMLE method from freshly fitted nuisances.
fn point_estimate(ds: &Dataset, method: Method, nuisance: &NuisanceFits) -> Result<[f64; 2]> {
    let preds = nuisance.predict(ds)?;
    if method.is_tmle() {
        Ok(fit_tmle(ds, &preds)?.psi)
    } else {
        Ok(fit_iv_g(ds, &preds)?.psi)
    }
}

/// Influence values of `valid` rows from nuisances and estimates fitted on
/// `train`.
fn fold_influence(
    method: Method,
    mode: NuisanceMode,
    cfg: &NuisanceConfig,
    train: &Dataset,
    valid: &Dataset,
) -> Result<DMatrix<f64>> {
    let nuisance = build_nuisance(train, mode, cfg, method.is_tmle())?;
    let train_preds = nuisance.predict(train)?;
    let valid_preds = nuisance.predict(valid)?;
    let inf = if method.is_tmle() {
        fit_tmle(train, &train_preds)?.eif_on(valid, &valid_preds)?
    } else {
        fit_iv_g(train, &train_preds)?.influence_on(valid, &valid_preds)?
    };
    Ok(inf.values)
}

/// Runs the nuisance-based methods of one family (parametric or ensemble)
/// on shared nuisance fits and, when bootstrapping, on shared resamples.
fn run_nuisance_group(
    ds: &Dataset,
    mode: NuisanceMode,
    methods: &[Method],
    cfg: &MethodConfig,
) -> Vec<(Method, Result<EffectEstimate>)> {
    let with_outcome = methods.iter().any(Method::is_tmle);
    let nuisance = match build_nuisance(ds, mode, &cfg.nuisance, with_outcome) {
        Ok(n) => n,
        Err(e) => return methods.iter().map(|&m| (m, Err(e.clone()))).collect(),
    };
    let preds = match nuisance.predict(ds) {
        Ok(p) => p,
        Err(e) => return methods.iter().map(|&m| (m, Err(e.clone()))).collect(),
    };

    struct Point {
        psi: [f64; 2],
        diagnostics: Diagnostics,
        influence: Result<DMatrix<f64>>,
    }
    let points: Vec<Result<Point>> = methods
        .iter()
        .map(|&m| {
            if m.is_tmle() {
                let fit = fit_tmle(ds, &preds)?;
                Ok(Point {
                    psi: fit.psi,
                    diagnostics: tmle_diagnostics(&fit, &nuisance),
                    influence: fit.eif_on(ds, &preds).map(|i| i.covariance()),
                })
            } else {
                let fit = fit_iv_g(ds, &preds)?;
                Ok(Point {
                    psi: fit.psi,
                    diagnostics: ivg_diagnostics(&fit, &nuisance),
                    influence: fit.influence_on(ds, &preds).map(|i| i.covariance()),
                })
            }
        })
        .collect();

    // Bootstrap every method that asks for it on the same resamples.
    let boot_methods: Vec<Method> = methods
        .iter()
        .zip(&points)
        .filter(|(m, p)| p.is_ok() && cfg.variance_for(**m) == VarianceMode::Bootstrap)
        .map(|(m, _)| *m)
        .collect();
    let boot: Vec<Result<BootstrapResult>> = if boot_methods.is_empty() {
        Vec::new()
    } else {
        let boot_outcome = boot_methods.iter().any(Method::is_tmle);
        let stat = |s: &Dataset| -> Vec<Option<[f64; EFFECT_DIM]>> {
            match build_nuisance(s, mode, &cfg.nuisance, boot_outcome) {
                Ok(n) => boot_methods.iter().map(|&m| point_estimate(s, m, &n).ok()).collect(),
                Err(_) => vec![None; boot_methods.len()],
            }
        };
        match bootstrap_ci_multi(ds, boot_methods.len(), stat, &cfg.ci) {
            Ok(v) => v,
            Err(e) => boot_methods.iter().map(|_| Err(e.clone())).collect(),
        }
    };

    methods
        .iter()
        .zip(points)
        .map(|(&m, point)| {
            let result = point.and_then(|p| match cfg.variance_for(m) {
                VarianceMode::IfPlugin => {
                    let cov = p.influence?;
                    Ok(EffectEstimate::from_covariance(
                        m,
                        p.psi,
                        &cov,
                        cfg.ci.level,
                        VarianceMode::IfPlugin,
                        p.diagnostics,
                    ))
                }
                VarianceMode::CvIf => {
                    let cov = cv_if_variance(ds, cfg.ci.cv_folds, cfg.nuisance.seed, |train, valid| {
                        fold_influence(m, mode, &cfg.nuisance, train, valid)
                    })?;
                    Ok(EffectEstimate::from_covariance(
                        m,
                        p.psi,
                        &cov,
                        cfg.ci.level,
                        VarianceMode::CvIf,
                        p.diagnostics,
                    ))
                }
                VarianceMode::Bootstrap => {
                    let pos = boot_methods.iter().position(|b| *b == m).expect("bootstrapped method");
                    let b = boot[pos].clone()?;
                    Ok(EffectEstimate::from_bootstrap(m, p.psi, &b, p.diagnostics))
                }
            });
            (m, result)
        })
        .collect()
}

fn run_tsls(ds: &Dataset, cfg: &MethodConfig) -> Result<EffectEstimate> {
    let fit = fit_tsls(ds)?;
    let diagnostics = tsls_diagnostics(&fit);
    match cfg.variance_for(Method::Tsls) {
        // TSLS has no nuisance fits to cross-validate; its sandwich is its
        // influence-function variance.
        VarianceMode::IfPlugin | VarianceMode::CvIf => Ok(EffectEstimate::from_covariance(
            Method::Tsls,
            fit.psi,
            &fit.cov,
            cfg.ci.level,
            VarianceMode::IfPlugin,
            diagnostics,
        )),
        VarianceMode::Bootstrap => {
            let boot = bootstrap_ci_multi(ds, 1, |s| vec![fit_tsls(s).ok().map(|f| f.psi)], &cfg.ci)?
                .pop()
                .expect("one statistic")?;
            Ok(EffectEstimate::from_bootstrap(Method::Tsls, fit.psi, &boot, diagnostics))
        }
    }
}

/// Runs each requested method with its configured inference. Methods that
/// share a nuisance family share one set of nuisance fits.
pub fn run_methods(ds: &Dataset, methods: &[Method], cfg: &MethodConfig) -> Vec<(Method, Result<EffectEstimate>)> {
    if let Err(e) = cfg.ci.validate() {
        return methods.iter().map(|&m| (m, Err(e.clone()))).collect();
    }
    let mut out: Vec<(Method, Result<EffectEstimate>)> = Vec::with_capacity(methods.len());
    if methods.contains(&Method::Tsls) {
        out.push((Method::Tsls, run_tsls(ds, cfg)));
    }
    for mode in [NuisanceMode::Parametric, NuisanceMode::Ensemble] {
        let group: Vec<Method> = Method::ALL
            .into_iter()
            .filter(|m| methods.contains(m) && m.nuisance_mode() == Some(mode))
            .collect();
        if !group.is_empty() {
            out.extend(run_nuisance_group(ds, mode, &group, cfg));
        }
    }
    // Keep the caller's order.
    methods
        .iter()
        .map(|m| {
            let pos = out.iter().position(|(o, _)| o == m).expect("method was run");
            out[pos].clone()
        })
        .collect()
}

pub fn run_method(ds: &Dataset, method: Method, cfg: &MethodConfig) -> Result<EffectEstimate> {
    run_methods(ds, &[method], cfg)
        .pop()
        .map(|(_, r)| r)
        .unwrap_or_else(|| Err(Error::ConfigError("no method requested".into())))
}
