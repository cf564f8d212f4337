use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::output::{csv_writer, finish, fmt, sha256_hex, write_row, Manifest};
use crate::Failure;

pub const COVERAGE_REFERENCE: [f64; 2] = [0.925, 0.975];
/// Multiplier of the Monte Carlo error in the bias bands.
pub const BAND_Z: f64 = 1.96;

const KEY_COLUMNS: [&str; 7] = ["scenario", "n", "misspec_a", "misspec_y", "misspec_m", "method", "parameter"];

struct Row {
    key: Vec<String>,
    bias: f64,
    mc_error: f64,
    coverage: f64,
    rmse: f64,
}

fn with_key<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    KEY_COLUMNS.iter().chain(extra).copied().collect()
}

fn parse(bytes: &[u8]) -> Result<Vec<Row>, Failure> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let headers = rdr
        .headers()
        .map_err(|e| Failure::Input(format!("summary header: {e}")))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Failure::Input(format!("summary is missing column `{name}`")))
    };
    let keys = KEY_COLUMNS.iter().map(|k| col(k)).collect::<Result<Vec<_>, _>>()?;
    let [ib, imc, icov, irmse] = ["bias", "mc_error", "coverage", "rmse"].map(col);
    let (ib, imc, icov, irmse) = (ib?, imc?, icov?, irmse?);

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Failure::Input(format!("summary row {}: {e}", i + 1)))?;
        // Methods without a successful replicate carry empty metrics.
        if rec.get(ib).is_some_and(str::is_empty) {
            continue;
        }
        let num = |j: usize| {
            rec.get(j)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Failure::Input(format!("summary row {}, column `{}`: not a number", i + 1, &headers[j])))
        };
        rows.push(Row {
            key: keys.iter().map(|&j| rec.get(j).unwrap_or_default().to_string()).collect(),
            bias: num(ib)?,
            mc_error: num(imc)?,
            coverage: num(icov)?,
            rmse: num(irmse)?,
        });
    }
    if rows.is_empty() {
        return Err(Failure::Input("summary has no metric rows".into()));
    }
    Ok(rows)
}

pub fn run(summary: &Path, out: &Path) -> Result<(), Failure> {
    let start = Instant::now();
    let bytes = fs::read(summary).map_err(|e| Failure::Input(format!("{}: {e}", summary.display())))?;
    let rows = parse(&bytes)?;
    fs::create_dir_all(out).map_err(|e| Failure::Io(format!("{}: {e}", out.display())))?;

    let z = BAND_Z;

    let bias_path = out.join("bias.csv");
    let mut w = csv_writer(&bias_path)?;
    write_row(&mut w, with_key(&["bias", "mc_error", "lower", "upper"]))?;
    for r in &rows {
        let mut row = r.key.clone();
        row.extend([
            fmt(r.bias),
            fmt(r.mc_error),
            fmt(r.bias - z * r.mc_error),
            fmt(r.bias + z * r.mc_error),
        ]);
        write_row(&mut w, &row)?;
    }
    finish(w)?;

    let cov_path = out.join("coverage.csv");
    let mut w = csv_writer(&cov_path)?;
    write_row(&mut w, with_key(&["coverage", "reference_lo", "reference_hi"]))?;
    for r in &rows {
        let mut row = r.key.clone();
        row.extend([fmt(r.coverage), fmt(COVERAGE_REFERENCE[0]), fmt(COVERAGE_REFERENCE[1])]);
        write_row(&mut w, &row)?;
    }
    finish(w)?;

    let rmse_path = out.join("rmse.csv");
    let mut w = csv_writer(&rmse_path)?;
    write_row(&mut w, with_key(&["rmse"]))?;
    for r in &rows {
        let mut row = r.key.clone();
        row.push(fmt(r.rmse));
        write_row(&mut w, &row)?;
    }
    finish(w)?;

    let manifest = Manifest {
        command: "report".into(),
        config: Vec::new(),
        inputs: vec![("summary".into(), sha256_hex(&bytes))],
        seed: None,
    };
    manifest.write(
        &out.join("manifest.txt"),
        &[&bias_path, &cov_path, &rmse_path],
        start.elapsed(),
    )
}
