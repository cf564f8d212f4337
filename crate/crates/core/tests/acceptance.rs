//! Acceptance run: prints one PASS/FAIL line per criterion. The process
//! exits non-zero on a failed criterion only when `IVDR_ACCEPTANCE_STRICT`
//! is set, so the verdicts stay visible in an ordinary `cargo test` run.
//!
//! Pass criterion numbers as arguments to run a subset, for example
//! `cargo test -p ivdr-core --test acceptance -- 5 6`.

use std::time::Instant;

use ivdr_core::data::{Dataset, Observation};
use ivdr_core::estimators::{
    build_nuisance, fit_iv_g, fit_tmle, fit_tsls, Method, MethodConfig, NuisanceConfig, NuisanceMode,
    NuisancePredictions,
};
use ivdr_core::learners::fit_logistic;
use ivdr_core::simulation::{
    generate_dataset, run_scenario, summarize, DgpCoefficients, MethodMetrics, ScenarioConfig, SimulationMetrics,
    TruthRecord, PSI_TRUE,
};
use ivdr_core::super_learner::solve_simplex_weights;
use ivdr_core::{run_methods, VarianceMode};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const MASTER_SEED: u64 = 1;
const REPS: usize = 200;
/// Bootstrap resamples for the parametric DR methods in the scenario runs.
const BOOTSTRAP_B: usize = 499;

struct Outcome {
    pass: bool,
    detail: String,
}

struct Check {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Check {
    fn new() -> Self {
        Check {
            failures: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn require(&mut self, ok: bool, what: String) {
        if ok {
            self.notes.push(what);
        } else {
            self.failures.push(what);
        }
    }

    fn finish(self) -> Outcome {
        if self.failures.is_empty() {
            Outcome {
                pass: true,
                detail: self.notes.join("; "),
            }
        } else {
            Outcome {
                pass: false,
                detail: format!("failed: {}", self.failures.join("; ")),
            }
        }
    }
}

fn scenario(n: usize, misspec_a: bool, misspec_m: bool) -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        n,
        reps: REPS,
        seed: MASTER_SEED,
        misspec_a,
        misspec_m,
        ..Default::default()
    };
    cfg.estimation.ci.bootstrap_b = BOOTSTRAP_B;
    cfg
}

fn simulate(cfg: &ScenarioConfig) -> SimulationMetrics {
    let t = Instant::now();
    let results = run_scenario(cfg).expect("valid scenario");
    let truth = TruthRecord {
        psi_true: PSI_TRUE,
        dgp: cfg.dgp,
    };
    let m = summarize(&results, &truth);
    println!(
        "  scenario {} n={} reps={} ({:.0}s)",
        cfg.label(),
        cfg.n,
        cfg.reps,
        t.elapsed().as_secs_f64()
    );
    println!("    method   par      bias   mc_error  coverage      rmse   mean_se  ok/fail");
    for mm in &m.methods {
        if let Some(p) = mm.params {
            for (j, q) in p.iter().enumerate() {
                println!(
                    "    {:8} {:3} {:+9.4} {:10.4} {:9.3} {:9.4} {:9.4}  {}/{}",
                    mm.method.name(),
                    ["c", "v"][j],
                    q.mean_bias,
                    q.mc_error,
                    q.coverage,
                    q.rmse,
                    q.mean_se,
                    mm.successes,
                    mm.failures
                );
            }
        } else {
            println!("    {:8} no successful replicates ({} failures)", mm.method.name(), mm.failures);
        }
    }
    m
}

fn metrics(m: &SimulationMetrics, method: Method) -> &MethodMetrics {
    m.get(method).expect("method was run")
}

const PAR: [&str; 2] = ["psi_c", "psi_v"];

// ---------------------------------------------------------------- 1

fn criterion_1() -> Outcome {
    let m = simulate(&scenario(500, false, false));
    let mut c = Check::new();
    for method in Method::ALL {
        let mm = metrics(&m, method);
        let Some(p) = mm.params else {
            c.require(false, format!("{method}: no successful replicates"));
            continue;
        };
        for j in 0..2 {
            let q = p[j];
            c.require(
                q.mean_bias.abs() < 4.0 * q.mc_error,
                format!("{method} {} |bias| {:.4} < 4*mc {:.4}", PAR[j], q.mean_bias.abs(), 4.0 * q.mc_error),
            );
            if matches!(method, Method::Tsls | Method::Ivg | Method::IvgSl) {
                c.require(
                    (0.90..=0.99).contains(&q.coverage),
                    format!("{method} {} coverage {:.3} in [0.90, 0.99]", PAR[j], q.coverage),
                );
            }
        }
    }
    c.finish()
}

// ---------------------------------------------------------------- 2 and 3

fn criteria_2_and_3() -> (Outcome, Outcome) {
    let m = simulate(&scenario(2000, true, true));

    let mut c2 = Check::new();
    let tsls = metrics(&m, Method::Tsls).params.expect("tsls ran")[0];
    c2.require(tsls.mean_bias.abs() > 10.0, format!("tsls psi_c |bias| {:.3} > 10", tsls.mean_bias.abs()));
    c2.require(tsls.coverage < 0.05, format!("tsls psi_c coverage {:.3} < 0.05", tsls.coverage));

    let mut c3 = Check::new();
    match metrics(&m, Method::TmleSl).params {
        Some(p) => {
            for j in 0..2 {
                c3.require(
                    p[j].mean_bias.abs() < 0.15,
                    format!("tmle_sl {} |bias| {:.4} < 0.15", PAR[j], p[j].mean_bias.abs()),
                );
                c3.require(
                    p[j].coverage >= 0.80,
                    format!("tmle_sl {} coverage {:.3} >= 0.80", PAR[j], p[j].coverage),
                );
            }
        }
        None => c3.require(false, "tmle_sl: no successful replicates".into()),
    }
    match metrics(&m, Method::Tmle).params {
        Some(p) => c3.require(
            p[0].mean_bias.abs() > 1.0,
            format!("tmle psi_c |bias| {:.3} > 1", p[0].mean_bias.abs()),
        ),
        None => c3.require(false, "tmle: no successful replicates".into()),
    }
    match metrics(&m, Method::IvgSl).params {
        Some(p) => c3.require(
            p[0].coverage < 0.70,
            format!("ivg_sl psi_c coverage {:.3} < 0.60 + 0.10", p[0].coverage),
        ),
        None => c3.require(false, "ivg_sl: no successful replicates".into()),
    }
    (c2.finish(), c3.finish())
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let base = simulate(&scenario(2000, false, false));
    let mis = simulate(&scenario(2000, false, true));
    let mut c = Check::new();
    for method in Method::ALL {
        let (Some(b), Some(x)) = (metrics(&base, method).params, metrics(&mis, method).params) else {
            c.require(false, format!("{method}: no successful replicates"));
            continue;
        };
        for j in 0..2 {
            let ratio = x[j].rmse / b[j].rmse;
            c.require(
                (1.4..=3.0).contains(&ratio),
                format!("{method} {} rmse ratio {ratio:.2} in [1.4, 3]", PAR[j]),
            );
            c.require(
                (0.88..=0.99).contains(&x[j].coverage),
                format!("{method} {} coverage {:.3} in [0.88, 0.99]", PAR[j], x[j].coverage),
            );
        }
    }
    c.finish()
}

// ---------------------------------------------------------------- 5

/// Eight rows, V fixed at zero: arm means of Y are 3 and 7, of A 0.25 and
/// 0.75, so the Wald ratio is (7 - 3) / (0.75 - 0.25) = 8.
fn wald_fixture() -> Dataset {
    let data = [
        (0, 1, 4.0),
        (0, 0, 2.0),
        (0, 0, 3.0),
        (0, 0, 3.0),
        (1, 1, 8.0),
        (1, 1, 7.0),
        (1, 1, 6.0),
        (1, 0, 7.0),
    ];
    let rows = data
        .iter()
        .map(|&(z, a, y)| Observation { w: vec![0.0], z, a, y })
        .collect();
    Dataset::new(rows, vec!["v".into()], 0).unwrap()
}

/// Coarse-to-fine search for the minimiser of `f` over a square centred at
/// the origin.
fn grid_min_2d(f: impl Fn(f64, f64) -> f64, half: f64, points: i64, rounds: usize) -> [f64; 2] {
    let (mut c0, mut c1, mut h) = (0.0, 0.0, half);
    for _ in 0..rounds {
        let step = h / points as f64;
        let mut best = (f64::INFINITY, c0, c1);
        for i in -points..=points {
            for j in -points..=points {
                let (a, b) = (c0 + i as f64 * step, c1 + j as f64 * step);
                let v = f(a, b);
                if v < best.0 {
                    best = (v, a, b);
                }
            }
        }
        c0 = best.1;
        c1 = best.2;
        h = 2.0 * step;
    }
    [c0, c1]
}

fn small_sample(n: usize, seed: u64) -> Dataset {
    let cfg = ScenarioConfig {
        n,
        ..Default::default()
    };
    generate_dataset(&cfg, seed).unwrap().0
}

fn criterion_5() -> Outcome {
    let mut c = Check::new();

    // TSLS on the Wald fixture.
    let ds = wald_fixture();
    let tsls = fit_tsls(&ds).unwrap();
    c.require((tsls.psi[0] - 8.0).abs() < 1e-10, format!("tsls wald {:.12}", tsls.psi[0]));

    // IV-g on the same fixture with randomised-trial nuisances; the two
    // reduced estimating equations in (b0, psi_c) are minimised on a grid.
    let preds = NuisancePredictions {
        ma1: DVector::from_element(8, 0.75),
        ma0: DVector::from_element(8, 0.25),
        g: DVector::from_element(8, 0.5),
        mu1: None,
        mu0: None,
    };
    let ivg = fit_iv_g(&ds, &preds).unwrap();
    let ee = |b0: f64, psi: f64| {
        let (mut u0, mut u1) = (0.0, 0.0);
        for r in ds.rows() {
            let k = if r.z == 1 { 0.25 } else { -0.25 };
            let res = r.y - b0 - f64::from(r.a) * psi;
            u0 += res;
            u1 += k * res;
        }
        u0 * u0 + u1 * u1
    };
    let root = grid_min_2d(ee, 20.0, 50, 12);
    c.require(
        (ivg.psi[0] - root[1]).abs() < 1e-6,
        format!("ivg root {:.8} vs grid {:.8}", ivg.psi[0], root[1]),
    );

    // TMLE fluctuation on simulated data: the grid minimises the squared
    // norm of sum h K (Y - A (m + h'eps) - m_y), with every piece rebuilt
    // here from the nuisance predictions.
    let ds = small_sample(300, 8);
    let fits = build_nuisance(&ds, NuisanceMode::Parametric, &NuisanceConfig::default(), true).unwrap();
    let p = fits.predict(&ds).unwrap();
    let tmle = fit_tmle(&ds, &p).unwrap();
    let n = ds.n() as f64;
    let v = ds.modifier();
    let ev = v.iter().sum::<f64>() / n;
    let ev2 = v.iter().map(|x| x * x).sum::<f64>() / n;
    let var = ev2 - ev * ev;
    let (mu1, mu0) = (p.mu1.as_ref().unwrap(), p.mu0.as_ref().unwrap());
    let (mut s_b, mut s_m) = ([0.0; 2], [[0.0; 2]; 2]);
    for (i, r) in ds.rows().iter().enumerate() {
        let d = p.ma1[i] - p.ma0[i];
        let dm = if d.abs() < 0.01 { 0.01f64.copysign(d) } else { d };
        let m_hat = (mu1[i] - mu0[i]) / dm;
        let m_y = mu0[i] - m_hat * p.ma0[i];
        let z2 = (d * d * p.g[i] * (1.0 - p.g[i])).max(0.025);
        let h = [(ev2 - ev * v[i]) / var / z2, (v[i] - ev) / var / z2];
        let ma_obs = if r.z == 1 { p.ma1[i] } else { p.ma0[i] };
        let k = ma_obs - (p.g[i] * p.ma1[i] + (1.0 - p.g[i]) * p.ma0[i]);
        let a = f64::from(r.a);
        let res = r.y - a * m_hat - m_y;
        for j in 0..2 {
            s_b[j] += h[j] * k * res;
            for l in 0..2 {
                s_m[j][l] += h[j] * k * a * h[l];
            }
        }
    }
    let norm = |e0: f64, e1: f64| {
        let u0 = s_b[0] - s_m[0][0] * e0 - s_m[0][1] * e1;
        let u1 = s_b[1] - s_m[1][0] * e0 - s_m[1][1] * e1;
        u0 * u0 + u1 * u1
    };
    let eps_grid = grid_min_2d(norm, 5.0, 500, 8);
    let eps_err = (tmle.epsilon[0] - eps_grid[0]).abs().max((tmle.epsilon[1] - eps_grid[1]).abs());
    c.require(
        eps_err < 1e-5,
        format!("tmle eps {:?} vs grid {:?} (err {eps_err:.1e})", tmle.epsilon, eps_grid),
    );

    // Super Learner weights against an exhaustive 0.001-step simplex grid.
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for l in 1..=3usize {
        for _ in 0..3 {
            let n = 40;
            let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let pm = DMatrix::from_fn(n, l, |i, _| y[i] * rng.random_range(0.2..1.2) + rng.random_range(-0.5..0.5));
            let w = solve_simplex_weights(&pm, &y);
            let risk = |w: &DVector<f64>| (&y - &pm * w).norm_squared() / n as f64;
            let best = match l {
                1 => risk(&DVector::from_element(1, 1.0)),
                2 => (0..=1000)
                    .map(|a| risk(&DVector::from_vec(vec![a as f64 / 1000.0, 1.0 - a as f64 / 1000.0])))
                    .fold(f64::INFINITY, f64::min),
                _ => {
                    let mut b = f64::INFINITY;
                    for a in 0..=1000 {
                        for bb in 0..=(1000 - a) {
                            let wa = a as f64 / 1000.0;
                            let wb = bb as f64 / 1000.0;
                            b = b.min(risk(&DVector::from_vec(vec![wa, wb, 1.0 - wa - wb])));
                        }
                    }
                    b
                }
            };
            // The exact solution can only beat the grid; it may not lose by
            // more than the tolerance.
            worst = worst.max(risk(&w) - best);
        }
    }
    c.require(worst <= 1e-6, format!("sl weights objective excess {worst:.2e}"));

    // Logistic IRLS against plain gradient ascent on the log-likelihood.
    let n = 200;
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { ((i as f64) * 0.37).sin() * 2.0 });
    let y = DVector::from_fn(n, |i, _| {
        let eta: f64 = 0.3 - 0.8 * x[(i, 1)];
        f64::from(rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp()))
    });
    let irls = fit_logistic(&x, &y, 100, 1e-12).unwrap();
    let coef = irls.coefficients().unwrap().clone();
    let mut b = DVector::zeros(2);
    for _ in 0..200_000 {
        let prob = (&x * &b).map(|e: f64| 1.0 / (1.0 + (-e).exp()));
        let grad = x.tr_mul(&(&y - prob)) / n as f64;
        b += grad * 2.0;
        if b.iter().any(|v: &f64| !v.is_finite()) {
            break;
        }
    }
    let lr_err = (&coef - &b).amax();
    c.require(lr_err < 1e-6, format!("logistic irls vs gradient ascent err {lr_err:.1e}"));
    c.finish()
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let mut c = Check::new();

    // Simplex weights.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut simplex_ok = true;
    for _ in 0..200 {
        let l = rng.random_range(1..7);
        let p = DMatrix::from_fn(30, l, |_, _| rng.random_range(-2.0..2.0));
        let y = DVector::from_fn(30, |_, _| rng.random_range(-2.0..2.0));
        let w = solve_simplex_weights(&p, &y);
        simplex_ok &= w.iter().all(|&x| x >= 0.0) && (w.sum() - 1.0).abs() < 1e-12;
    }
    c.require(simplex_ok, "sl weights on the simplex (200 draws)".into());

    // Influence functions centred at the solution.
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let cfg = ScenarioConfig {
            n: 500,
            misspec_a: seed % 2 == 0,
            misspec_m: seed % 2 == 0,
            ..Default::default()
        };
        let ds = generate_dataset(&cfg, seed).unwrap().0;
        let fits = build_nuisance(&ds, NuisanceMode::Parametric, &NuisanceConfig::default(), true).unwrap();
        let p = fits.predict(&ds).unwrap();
        let ivg = fit_iv_g(&ds, &p).unwrap().influence_on(&ds, &p).unwrap();
        let eif = fit_tmle(&ds, &p).unwrap().eif_on(&ds, &p).unwrap();
        for inf in [ivg, eif] {
            let scale = inf.values.abs().max().max(1.0);
            for m in inf.column_means() {
                worst = worst.max(m.abs() / scale);
            }
        }
    }
    c.require(worst < 1e-8, format!("IF/EIF column means (relative) {worst:.1e}"));

    // rmse^2 = bias^2 + variance on a real scenario.
    let mut small = ScenarioConfig {
        n: 200,
        reps: 6,
        seed: 9,
        methods: vec![Method::Tsls, Method::Ivg, Method::Tmle],
        ..Default::default()
    };
    small.estimation.ci.bootstrap_b = 49;
    let results = run_scenario(&small).unwrap();
    let truth = TruthRecord {
        psi_true: PSI_TRUE,
        dgp: small.dgp,
    };
    let m = summarize(&results, &truth);
    let mut identity: f64 = 0.0;
    for mm in &m.methods {
        for (j, q) in mm.params.unwrap().iter().enumerate() {
            let est: Vec<f64> = results
                .iter()
                .filter(|r| r.method == mm.method)
                .map(|r| r.outcome.as_ref().unwrap().psi[j])
                .collect();
            let k = est.len() as f64;
            let mean = est.iter().sum::<f64>() / k;
            let var = est.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / k;
            identity = identity.max((q.rmse.powi(2) - q.mean_bias.powi(2) - var).abs());
        }
    }
    c.require(identity < 1e-10, format!("rmse identity error {identity:.1e}"));

    // Bit-reproducibility.
    c.require(run_scenario(&small).unwrap() == results, "scenario rerun identical".into());

    // Translation: shifting Y leaves psi unchanged.
    let ds = small_sample(400, 3);
    let shifted = ds.with_shifted_outcome(17.0);
    let mut cfg = MethodConfig::default();
    cfg.ci.variance_mode = Some(VarianceMode::IfPlugin);
    let methods = Method::ALL;
    let a = run_methods(&ds, &methods, &cfg);
    let b = run_methods(&shifted, &methods, &cfg);
    let mut shift_err: f64 = 0.0;
    for ((_, ra), (_, rb)) in a.iter().zip(&b) {
        let (ea, eb) = (ra.as_ref().unwrap(), rb.as_ref().unwrap());
        for j in 0..2 {
            shift_err = shift_err.max((ea.psi[j] - eb.psi[j]).abs());
        }
    }
    c.require(shift_err < 1e-6, format!("outcome shift changes psi by {shift_err:.1e}"));

    // zeta^2 floor logging.
    let mut logged = true;
    for seed in 0..4 {
        let cfg = ScenarioConfig {
            n: 300,
            misspec_a: seed % 2 == 1,
            ..Default::default()
        };
        let ds = generate_dataset(&cfg, seed).unwrap().0;
        let fits = build_nuisance(&ds, NuisanceMode::Parametric, &NuisanceConfig::default(), true).unwrap();
        let p = fits.predict(&ds).unwrap();
        let raw_below = (0..ds.n())
            .filter(|&i| (p.ma1[i] - p.ma0[i]).powi(2) * p.g[i] * (1.0 - p.g[i]) < 0.025)
            .count();
        logged &= fit_tmle(&ds, &p).unwrap().zeta_floor_count == raw_below;
    }
    c.require(logged, "zeta^2 floor activations counted".into());
    c.finish()
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let reps = REPS;
    let mut cfg = ScenarioConfig {
        n: 50_000,
        reps,
        seed: MASTER_SEED,
        misspec_m: true,
        methods: vec![Method::Ivg],
        dgp: DgpCoefficients::constant_covariance(),
        ..Default::default()
    };
    cfg.estimation.ci.variance_mode = Some(VarianceMode::IfPlugin);
    let m = simulate(&cfg);
    // E[m_0(W)] = m_0 + m_w E[sum W] = m_0; V is independent of the other
    // covariates, so the linear projection on (1, V) has slope m_v.
    let target = [cfg.dgp.m_0, cfg.dgp.m_v];
    let mut c = Check::new();
    match metrics(&m, Method::Ivg).params {
        Some(p) => {
            for j in 0..2 {
                let dev = (p[j].mean_estimate - target[j]).abs();
                c.require(
                    dev < 3.0 * p[j].mc_error,
                    format!(
                        "ivg {} mean {:.4} vs {:.2}: |dev| {dev:.4} < 3 mc {:.4}",
                        PAR[j],
                        p[j].mean_estimate,
                        target[j],
                        3.0 * p[j].mc_error
                    ),
                );
            }
        }
        None => c.require(false, "ivg: no successful replicates".into()),
    }
    c.finish()
}

fn timed(k: u32, f: fn() -> Outcome) -> Outcome {
    let t = Instant::now();
    println!("criterion {k}: running");
    let o = f();
    println!("criterion {k}: {} ({:.0}s)", if o.pass { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64());
    o
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |k: u32| selected.is_empty() || selected.contains(&k);
    let mut lines: Vec<(u32, Outcome)> = Vec::new();
    for (k, f) in [(5, criterion_5 as fn() -> Outcome), (6, criterion_6), (7, criterion_7), (1, criterion_1)] {
        if want(k) {
            lines.push((k, timed(k, f)));
        }
    }
    if want(2) || want(3) {
        let t = Instant::now();
        println!("criteria 2 and 3: running");
        let (o2, o3) = criteria_2_and_3();
        println!("criteria 2 and 3: done ({:.0}s)", t.elapsed().as_secs_f64());
        if want(2) {
            lines.push((2, o2));
        }
        if want(3) {
            lines.push((3, o3));
        }
    }
    if want(4) {
        lines.push((4, timed(4, criterion_4)));
    }

    lines.sort_by_key(|(k, _)| *k);
    println!();
    let mut all = true;
    for (k, o) in &lines {
        all &= o.pass;
        println!("criterion {k}: {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if !all && std::env::var_os("IVDR_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
