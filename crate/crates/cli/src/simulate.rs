use std::fs;
use std::path::Path;
use std::time::Instant;

use ivdr_core::simulation::{run_scenario, summarize, ReplicateResult, ScenarioConfig, SimulationMetrics, TruthRecord, PSI_TRUE};

use crate::config;
use crate::output::{csv_writer, finish, fmt, fmt_opt, sha256_hex, write_row, Manifest};
use crate::Failure;

pub const REPLICATE_HEADER: [&str; 16] = [
    "scenario",
    "replicate",
    "seed",
    "method",
    "status",
    "psi_c",
    "se_c",
    "ci_c_lo",
    "ci_c_hi",
    "psi_v",
    "se_v",
    "ci_v_lo",
    "ci_v_hi",
    "variance",
    "diagnostics",
    "error",
];

pub const SUMMARY_HEADER: [&str; 21] = [
    "scenario",
    "n",
    "reps",
    "misspec_a",
    "misspec_y",
    "misspec_m",
    "method",
    "parameter",
    "successes",
    "failures",
    "mean_estimate",
    "bias",
    "mc_error",
    "coverage",
    "rmse",
    "mean_se",
    "zeta_floor_replicates",
    "m_floor_replicates",
    "weak_instrument_replicates",
    "bootstrap_unstable_replicates",
    "truth",
];

pub fn run(config_path: Option<&Path>, out: &Path, overrides: &[String]) -> Result<(), Failure> {
    let start = Instant::now();
    let (mut pairs, input_digest) = match config_path {
        Some(p) => {
            let bytes = fs::read(p).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?;
            let text = String::from_utf8(bytes.clone())
                .map_err(|_| Failure::Input(format!("{} is not UTF-8", p.display())))?;
            (config::parse_pairs(&text)?, Some(sha256_hex(&bytes)))
        }
        None => (Default::default(), None),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::Input(format!("override `{o}` is not KEY=VALUE")))?;
        config::insert(&mut pairs, k.trim(), v.trim())?;
    }
    let cfg = config::scenario(&pairs)?;

    let results = run_scenario(&cfg)?;
    let truth = TruthRecord {
        psi_true: PSI_TRUE,
        dgp: cfg.dgp,
    };
    let metrics = summarize(&results, &truth);

    fs::create_dir_all(out).map_err(|e| Failure::Io(format!("{}: {e}", out.display())))?;
    let rep_path = out.join("replicates.csv");
    let sum_path = out.join("summary.csv");
    write_replicates(&rep_path, &cfg, &results)?;
    write_summary(&sum_path, &cfg, &metrics, &truth)?;

    let manifest = Manifest {
        command: "simulate".into(),
        config: config::resolved(&cfg)
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        inputs: input_digest.into_iter().map(|d| ("config".to_string(), d)).collect(),
        seed: Some(cfg.seed),
    };
    manifest.write(&out.join("manifest.txt"), &[&rep_path, &sum_path], start.elapsed())
}

fn write_replicates(path: &Path, cfg: &ScenarioConfig, results: &[ReplicateResult]) -> Result<(), Failure> {
    let mut w = csv_writer(path)?;
    write_row(&mut w, REPLICATE_HEADER)?;
    let label = cfg.label();
    for r in results {
        let mut row = vec![label.clone(), r.replicate.to_string(), r.seed.to_string(), r.method.name().to_string()];
        match &r.outcome {
            Ok(e) => {
                row.push("ok".into());
                for j in 0..2 {
                    row.extend([fmt(e.psi[j]), fmt(e.se[j]), fmt(e.ci[j].lo), fmt(e.ci[j].hi)]);
                }
                row.extend([e.variance.name().to_string(), e.diagnostics.summary(), String::new()]);
            }
            Err(err) => {
                row.push(err.kind().to_string());
                row.extend(std::iter::repeat_n(String::new(), 10));
                row.push(err.to_string());
            }
        }
        write_row(&mut w, &row)?;
    }
    finish(w)
}

fn write_summary(path: &Path, cfg: &ScenarioConfig, m: &SimulationMetrics, truth: &TruthRecord) -> Result<(), Failure> {
    let mut w = csv_writer(path)?;
    write_row(&mut w, SUMMARY_HEADER)?;
    for mm in &m.methods {
        for (j, name) in ["psi_c", "psi_v"].into_iter().enumerate() {
            let p = mm.params.map(|p| p[j]);
            let row = vec![
                cfg.label(),
                cfg.n.to_string(),
                cfg.reps.to_string(),
                cfg.misspec_a.to_string(),
                cfg.misspec_y.to_string(),
                cfg.misspec_m.to_string(),
                mm.method.name().to_string(),
                name.to_string(),
                mm.successes.to_string(),
                mm.failures.to_string(),
                fmt_opt(p.map(|q| q.mean_estimate)),
                fmt_opt(p.map(|q| q.mean_bias)),
                fmt_opt(p.map(|q| q.mc_error)),
                fmt_opt(p.map(|q| q.coverage)),
                fmt_opt(p.map(|q| q.rmse)),
                fmt_opt(p.map(|q| q.mean_se)),
                mm.zeta_floor_replicates.to_string(),
                mm.m_floor_replicates.to_string(),
                mm.weak_instrument_replicates.to_string(),
                mm.bootstrap_unstable_replicates.to_string(),
                fmt(truth.psi_true[j]),
            ];
            write_row(&mut w, &row)?;
        }
    }
    finish(w)
}
