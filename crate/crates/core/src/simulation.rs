//! Factorial Monte Carlo study on an RCT with two-sided non-adherence.
//!
//! Each scenario switches the exposure, outcome and effect models between a
//! form the parametric working models can represent and one they cannot.
//! The instrument model is always correct: `Z` is randomised independently
//! of everything else.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::estimators::{run_methods, EffectEstimate, Method, MethodConfig};
use crate::rng::{derive_seed, stream};

/// Number of non-modifier baseline covariates.
pub const N_W: usize = 4;
pub const PSI_TRUE: [f64; 2] = [0.5, 0.5];
pub const MIN_N: usize = 50;

/// Coefficients of the data-generating process. `Default` gives the
/// published values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgpCoefficients {
    pub z_prob: f64,
    /// Exposure model: `a_z Z + a_v V + a_w sum(W)`.
    pub a_z: f64,
    pub a_v: f64,
    pub a_w: f64,
    /// Subtracted under exposure misspecification: `a_zw1 Z W1 + a_u U`.
    pub a_zw1: f64,
    pub a_u: f64,
    /// Correct outcome baseline: `my_0 + my_v V + my_w sum(W)`.
    pub my_0: f64,
    pub my_v: f64,
    pub my_w: f64,
    /// Misspecified baseline:
    /// `exp(myx_0 + myx_v V + myx_w sum(W) + myx_vw V sum(W))`.
    pub myx_0: f64,
    pub myx_v: f64,
    pub myx_w: f64,
    pub myx_vw: f64,
    /// Effect curve `m_0 + m_v V`, plus `m_w sum(W)` under effect
    /// misspecification.
    pub m_0: f64,
    pub m_v: f64,
    pub m_w: f64,
}

impl Default for DgpCoefficients {
    fn default() -> Self {
        DgpCoefficients {
            z_prob: 0.6,
            a_z: 1.5,
            a_v: 0.03,
            a_w: 0.01,
            a_zw1: 5.0,
            a_u: 0.03,
            my_0: 0.5,
            my_v: 0.5,
            my_w: 0.01,
            myx_0: 0.05,
            myx_v: 0.05,
            myx_w: 0.001,
            myx_vw: -0.2,
            m_0: 0.5,
            m_v: 0.5,
            m_w: 3.0,
        }
    }
}

impl DgpCoefficients {
    /// Variant in which `P(A = 1 | Z, W)` depends on `Z` only, so the
    /// covariance between the instrument-induced exposure shift and `A` is
    /// constant in `W`. Under this design IV-g with a misspecified effect
    /// model converges to the best linear approximation of `m(W)` in `V`.
    pub fn constant_covariance() -> Self {
        DgpCoefficients {
            a_v: 0.0,
            a_w: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub misspec_a: bool,
    pub misspec_y: bool,
    pub misspec_m: bool,
    pub methods: Vec<Method>,
    pub estimation: MethodConfig,
    pub dgp: DgpCoefficients,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n: 500,
            reps: 200,
            seed: 1,
            misspec_a: false,
            misspec_y: false,
            misspec_m: false,
            methods: Method::ALL.to_vec(),
            estimation: MethodConfig::default(),
            dgp: DgpCoefficients::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < MIN_N {
            return Err(Error::ConfigError(format!("n = {} is below the minimum of {MIN_N}", self.n)));
        }
        if self.reps == 0 {
            return Err(Error::ConfigError("reps must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::ConfigError("no methods requested".into()));
        }
        if !(self.dgp.z_prob > 0.0 && self.dgp.z_prob < 1.0) {
            return Err(Error::ConfigError(format!(
                "instrument probability {} is not in (0, 1)",
                self.dgp.z_prob
            )));
        }
        self.estimation.ci.validate()
    }

    /// Short scenario label such as `a1_y0_m1`.
    pub fn label(&self) -> String {
        format!(
            "a{}_y{}_m{}",
            u8::from(self.misspec_a),
            u8::from(self.misspec_y),
            u8::from(self.misspec_m)
        )
    }

    /// Seed of replicate `r`; independent of execution order.
    pub fn replicate_seed(&self, r: usize) -> u64 {
        derive_seed(self.seed, r as u64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub psi_true: [f64; 2],
    pub dgp: DgpCoefficients,
}

/// Covariate names of generated data; the modifier is first.
pub fn covariate_names() -> Vec<String> {
    std::iter::once("v".to_string())
        .chain((1..=N_W).map(|j| format!("w{j}")))
        .collect()
}

/// Full draw including the unobserved confounder and the structural
/// functions; only [`generate_dataset`] and tests look inside.
#[derive(Debug, Clone)]
pub struct Draw {
    pub rows: Vec<Observation>,
    pub u: Vec<f64>,
    pub m_y: Vec<f64>,
    pub m: Vec<f64>,
}

pub fn draw(cfg: &ScenarioConfig, replicate_seed: u64) -> Draw {
    let c = &cfg.dgp;
    let mut rng = stream(replicate_seed);
    let n = cfg.n;
    let mut draw = Draw {
        rows: Vec::with_capacity(n),
        u: Vec::with_capacity(n),
        m_y: Vec::with_capacity(n),
        m: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let mut w = [0.0; N_W];
        for x in w.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let v: f64 = rng.sample(StandardNormal);
        let u: f64 = rng.sample(StandardNormal);
        let z = u8::from(rng.random::<f64>() < c.z_prob);
        let zf = f64::from(z);
        let sw: f64 = w.iter().sum();

        let mut eta = c.a_z * zf + c.a_v * v + c.a_w * sw;
        if cfg.misspec_a {
            eta -= c.a_zw1 * zf * w[0] + c.a_u * u;
        }
        let p = 1.0 / (1.0 + (-eta).exp());
        let a = u8::from(rng.random::<f64>() < p);

        let m_y = if cfg.misspec_y {
            (c.myx_0 + c.myx_v * v + c.myx_w * sw + c.myx_vw * v * sw).exp()
        } else {
            c.my_0 + c.my_v * v + c.my_w * sw
        };
        let m = c.m_0 + c.m_v * v + if cfg.misspec_m { c.m_w * sw } else { 0.0 };
        let e: f64 = rng.sample(StandardNormal);
        let y = m_y + m * f64::from(a) + u + e;

        let mut cov = Vec::with_capacity(N_W + 1);
        cov.push(v);
        cov.extend_from_slice(&w);
        draw.rows.push(Observation { w: cov, z, a, y });
        draw.u.push(u);
        draw.m_y.push(m_y);
        draw.m.push(m);
    }
    draw
}

/// Generates one replicate. The confounder `U` is dropped before the
/// dataset is built.
pub fn generate_dataset(cfg: &ScenarioConfig, replicate_seed: u64) -> Result<(Dataset, TruthRecord)> {
    let d = draw(cfg, replicate_seed);
    let ds = Dataset::new(d.rows, covariate_names(), 0)?;
    Ok((
        ds,
        TruthRecord {
            psi_true: PSI_TRUE,
            dgp: cfg.dgp,
        },
    ))
}

/// One (replicate, method) cell of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub method: Method,
    pub outcome: std::result::Result<EffectEstimate, Error>,
}

/// Runs every replicate of a scenario. Replicates run in parallel; output
/// is ordered by replicate, then by the configured method order.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<Vec<ReplicateResult>> {
    cfg.validate()?;
    let per_rep: Vec<Vec<ReplicateResult>> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| run_replicate(cfg, r))
        .collect();
    Ok(per_rep.into_iter().flatten().collect())
}

/// Runs a single replicate; useful for reordering checks.
pub fn run_replicate(cfg: &ScenarioConfig, r: usize) -> Vec<ReplicateResult> {
    let seed = cfg.replicate_seed(r);
    let cell = |method, outcome| ReplicateResult {
        replicate: r,
        seed,
        method,
        outcome,
    };
    let ds = match generate_dataset(cfg, derive_seed(seed, 0)) {
        Ok((ds, _)) => ds,
        Err(e) => return cfg.methods.iter().map(|&m| cell(m, Err(e.clone()))).collect(),
    };
    let mut mc = cfg.estimation.clone();
    mc.ci.bootstrap_seed = derive_seed(seed, 1);
    mc.nuisance.seed = derive_seed(seed, 2);
    run_methods(&ds, &cfg.methods, &mc)
        .into_iter()
        .map(|(m, res)| cell(m, res))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterMetrics {
    pub mean_estimate: f64,
    pub mean_bias: f64,
    /// Standard deviation of the estimates over `sqrt(successes)`.
    pub mc_error: f64,
    pub coverage: f64,
    pub rmse: f64,
    pub mean_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodMetrics {
    pub method: Method,
    pub successes: usize,
    pub failures: usize,
    /// `[psi_c, psi_v]`; `None` when no replicate succeeded.
    pub params: Option<[ParameterMetrics; 2]>,
    /// Replicates in which at least one row hit the instrument-strength floor.
    pub zeta_floor_replicates: usize,
    pub m_floor_replicates: usize,
    pub weak_instrument_replicates: usize,
    pub bootstrap_unstable_replicates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationMetrics {
    pub methods: Vec<MethodMetrics>,
}

impl SimulationMetrics {
    pub fn get(&self, method: Method) -> Option<&MethodMetrics> {
        self.methods.iter().find(|m| m.method == method)
    }
}

fn parameter_metrics(est: &[f64], se: &[f64], covered: usize, truth: f64) -> ParameterMetrics {
    let k = est.len() as f64;
    let mean = est.iter().sum::<f64>() / k;
    let sd = if est.len() > 1 {
        (est.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    ParameterMetrics {
        mean_estimate: mean,
        mean_bias: mean - truth,
        mc_error: sd / k.sqrt(),
        coverage: covered as f64 / k,
        rmse: (est.iter().map(|x| (x - truth).powi(2)).sum::<f64>() / k).sqrt(),
        mean_se: se.iter().sum::<f64>() / k,
    }
}

/// Aggregates replicate results per method; methods are listed in order of
/// first appearance.
pub fn summarize(results: &[ReplicateResult], truth: &TruthRecord) -> SimulationMetrics {
    let mut order: Vec<Method> = Vec::new();
    for r in results {
        if !order.contains(&r.method) {
            order.push(r.method);
        }
    }
    let methods = order
        .into_iter()
        .map(|method| {
            // Sums run in replicate order so the metrics do not depend on
            // the order in which replicates finished.
            let mut cells: Vec<&ReplicateResult> = results.iter().filter(|r| r.method == method).collect();
            cells.sort_by_key(|r| r.replicate);
            let ok: Vec<&EffectEstimate> = cells.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
            let failures = cells.len() - ok.len();
            let params = (!ok.is_empty()).then(|| {
                [0, 1].map(|j| {
                    let est: Vec<f64> = ok.iter().map(|e| e.psi[j]).collect();
                    let se: Vec<f64> = ok.iter().map(|e| e.se[j]).collect();
                    let covered = ok.iter().filter(|e| e.ci[j].contains(truth.psi_true[j])).count();
                    parameter_metrics(&est, &se, covered, truth.psi_true[j])
                })
            });
            let count = |f: &dyn Fn(&EffectEstimate) -> bool| ok.iter().filter(|e| f(e)).count();
            MethodMetrics {
                method,
                successes: ok.len(),
                failures,
                params,
                zeta_floor_replicates: count(&|e| e.diagnostics.zeta_floor_count > 0),
                m_floor_replicates: count(&|e| e.diagnostics.m_floor_count > 0),
                weak_instrument_replicates: count(&|e| e.diagnostics.weak_instrument),
                bootstrap_unstable_replicates: count(&|e| e.diagnostics.bootstrap_unstable),
            }
        })
        .collect();
    SimulationMetrics { methods }
}
