use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ivdr_core::estimators::Method;
use ivdr_core::{run_methods, validate_dataset, MethodConfig, RawTable};

use crate::config::parse_variance;
use crate::output::{csv_writer, finish, fmt, sha256_hex, write_row, Manifest};
use crate::Failure;

pub const HEADER: [&str; 10] = [
    "method",
    "psi_c",
    "se_c",
    "ci_c_lo",
    "ci_c_hi",
    "psi_v",
    "se_v",
    "ci_v_lo",
    "ci_v_hi",
    "diagnostics",
];

pub struct Args {
    pub data: PathBuf,
    pub modifier: String,
    pub method: String,
    pub variance: String,
    pub sl: bool,
    pub seed: u64,
    pub bootstrap_b: usize,
    pub out: PathBuf,
}

/// `all` always gives the five estimators; otherwise `--sl on` upgrades
/// `ivg` and `tmle` to their Super Learner variants.
fn methods(name: &str, sl: bool) -> Result<Vec<Method>, Failure> {
    if name == "all" {
        return Ok(Method::ALL.to_vec());
    }
    let m = Method::parse(name).ok_or_else(|| Failure::Input(format!("unknown method `{name}`")))?;
    Ok(vec![match (m, sl) {
        (Method::Ivg, true) => Method::IvgSl,
        (Method::Tmle, true) => Method::TmleSl,
        (m, _) => m,
    }])
}

pub fn run(args: &Args) -> Result<(), Failure> {
    let start = Instant::now();
    let methods = methods(&args.method, args.sl)?;
    let mut cfg = MethodConfig::default();
    cfg.ci.variance_mode = parse_variance(&args.variance)?;
    cfg.ci.bootstrap_b = args.bootstrap_b;
    cfg.ci.bootstrap_seed = args.seed;
    cfg.nuisance.seed = args.seed;
    cfg.ci.validate()?;

    let bytes = fs::read(&args.data).map_err(|e| Failure::Input(format!("{}: {e}", args.data.display())))?;
    let raw = RawTable::from_reader(bytes.as_slice())?;
    let ds = validate_dataset(&raw, &args.modifier)?;

    let results = run_methods(&ds, &methods, &cfg);

    let mut w = csv_writer(&args.out)?;
    write_row(&mut w, HEADER)?;
    let mut first_failure = None;
    for (m, res) in &results {
        let mut row = vec![m.name().to_string()];
        match res {
            Ok(e) => {
                for j in 0..2 {
                    row.extend([fmt(e.psi[j]), fmt(e.se[j]), fmt(e.ci[j].lo), fmt(e.ci[j].hi)]);
                }
                let diag = e.diagnostics.summary();
                row.push(if diag.is_empty() {
                    format!("variance={}", e.variance.name())
                } else {
                    format!("variance={};{diag}", e.variance.name())
                });
            }
            Err(err) => {
                row.extend(std::iter::repeat_n(String::new(), 8));
                row.push(format!("error={}", err.kind()));
                first_failure.get_or_insert_with(|| (*m, err.clone()));
            }
        }
        write_row(&mut w, &row)?;
    }
    finish(w)?;

    let manifest = Manifest {
        command: "estimate".into(),
        config: vec![
            ("modifier".into(), args.modifier.clone()),
            ("methods".into(), methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(",")),
            ("variance".into(), args.variance.clone()),
            ("seed".into(), args.seed.to_string()),
            ("bootstrap_B".into(), args.bootstrap_b.to_string()),
        ],
        inputs: vec![("data".into(), sha256_hex(&bytes))],
        seed: Some(args.seed),
    };
    manifest.write(&manifest_path(&args.out), &[&args.out], start.elapsed())?;

    match first_failure {
        None => Ok(()),
        Some((m, err)) => {
            let f = Failure::from(err);
            Err(match f {
                Failure::Degenerate(msg) => Failure::Degenerate(format!("{m}: {msg}")),
                other => other,
            })
        }
    }
}

/// `estimates.csv` gets `estimates.csv.manifest` beside it.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest");
    out.with_file_name(name)
}
