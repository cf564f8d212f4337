use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn ivdr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ivdr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn column<'a>(header: &[String], rows: &'a [Vec<String>], name: &str) -> Vec<&'a str> {
    let j = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[j].as_str()).collect()
}

const SMALL: [&str; 6] = ["--set", "n=120", "--set", "reps=3", "--set", "methods=tsls,ivg"];

fn simulate_small(out: &Path) -> Output {
    let mut args = vec!["simulate", "--out", p(out)];
    args.extend(SMALL);
    ivdr(&args)
}

#[test]
fn simulate_writes_replicates_summary_and_manifest() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    let o = simulate_small(&out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let (h, rows) = read_csv(&out.join("replicates.csv"));
    assert_eq!(rows.len(), 6);
    assert!(column(&h, &rows, "status").iter().all(|s| *s == "ok"));
    let (h, rows) = read_csv(&out.join("summary.csv"));
    assert_eq!(rows.len(), 4);
    assert!(column(&h, &rows, "truth").iter().all(|t| *t == "0.5"));

    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("command=simulate"));
    assert!(manifest.contains("config.n=120"));
    let digest = sha256(&fs::read(out.join("summary.csv")).unwrap());
    assert!(manifest.contains(&format!("output.summary.csv={digest}")));
}

fn sha256(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

#[test]
fn simulate_reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(simulate_small(&a).status.success());
    assert!(simulate_small(&b).status.success());
    for f in ["replicates.csv", "summary.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let strip = |d: &Path| -> Vec<String> {
        fs::read_to_string(d.join("manifest.txt"))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("wall_clock"))
            .map(String::from)
            .collect()
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn simulate_rejects_misspelled_key() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("scenario.txt");
    fs::write(&cfg, "n = 100\nrepz = 5\n").unwrap();
    let o = ivdr(&["simulate", "--config", p(&cfg), "--out", p(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("repz"));
    assert!(!dir.path().join("x").join("summary.csv").exists());
}

#[test]
fn bad_thread_count_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ivdr"))
        .env("IVDR_THREADS", "zero")
        .args(["simulate", "--out", p(dir.path())])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

/// `A = Z` and a noiseless outcome linear in `(1, V, W, A, A V)`.
fn perfect_adherence_csv(path: &Path) -> [f64; 2] {
    let mut s = String::from("y,z,a,v,w\n");
    for i in 0..200 {
        let v = ((i as f64) * 0.731).sin() * 1.5;
        let w = ((i as f64) * 1.37).cos();
        let z = u8::from((i * 7919) % 11 < 5);
        let y = 1.0 + 0.4 * v - 0.7 * w + f64::from(z) * (0.8 - 0.3 * v);
        s.push_str(&format!("{y},{z},{z},{v},{w}\n"));
    }
    fs::write(path, s).unwrap();
    [0.8, -0.3]
}

#[test]
fn estimate_tsls_recovers_noiseless_effect_curve() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("d.csv");
    let truth = perfect_adherence_csv(&data);
    let out = dir.path().join("est.csv");
    let o = ivdr(&["estimate", p(&data), "--modifier", "v", "--method", "tsls", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = read_csv(&out);
    assert_eq!(rows.len(), 1);
    for (name, t) in ["psi_c", "psi_v"].iter().zip(truth) {
        let v: f64 = column(&h, &rows, name)[0].parse().unwrap();
        assert!((v - t).abs() < 1e-8, "{name} {v}");
    }
    assert!(dir.path().join("est.csv.manifest").exists());
}

#[test]
fn estimate_all_writes_five_rows() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("d.csv");
    let mut s = String::from("y,z,a,v,w\n");
    for i in 0..300 {
        let v = ((i as f64) * 0.731).sin();
        let w = ((i as f64) * 1.37).cos();
        let z = u8::from((i * 7919) % 11 < 5);
        let a = u8::from(z == 1 && (i % 5 != 0) || (z == 0 && i % 4 == 0));
        let y = 0.5 + v + 0.3 * w + f64::from(a) * (0.5 + 0.5 * v) + ((i as f64) * 2.1).sin() * 0.5;
        s.push_str(&format!("{y},{z},{a},{v},{w}\n"));
    }
    fs::write(&data, s).unwrap();
    let out = dir.path().join("est.csv");
    let o = ivdr(&[
        "estimate",
        p(&data),
        "--modifier",
        "v",
        "--variance",
        "if_plugin",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = read_csv(&out);
    assert_eq!(
        h,
        ["method", "psi_c", "se_c", "ci_c_lo", "ci_c_hi", "psi_v", "se_v", "ci_v_lo", "ci_v_hi", "diagnostics"]
    );
    assert_eq!(column(&h, &rows, "method"), ["tsls", "ivg", "ivg_sl", "tmle", "tmle_sl"]);
}

#[test]
fn estimate_without_instrument_column_fails() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("d.csv");
    fs::write(&data, "y,a,v\n1,0,0.1\n2,1,0.2\n").unwrap();
    let o = ivdr(&["estimate", p(&data), "--modifier", "v", "--out", p(&dir.path().join("e.csv"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_writes_plot_tables() {
    let dir = TempDir::new().unwrap();
    let run = dir.path().join("run");
    assert!(simulate_small(&run).status.success());
    let rep = dir.path().join("report");
    let o = ivdr(&["report", p(&run.join("summary.csv")), "--out", p(&rep)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let (h, rows) = read_csv(&rep.join("bias.csv"));
    assert_eq!(rows.len(), 4);
    let num = |name: &str| -> Vec<f64> { column(&h, &rows, name).iter().map(|s| s.parse().unwrap()).collect() };
    let (bias, lo, hi) = (num("bias"), num("lower"), num("upper"));
    for i in 0..rows.len() {
        assert!(lo[i] <= bias[i] && bias[i] <= hi[i]);
    }
    let (h, rows) = read_csv(&rep.join("coverage.csv"));
    assert!(column(&h, &rows, "reference_lo").iter().all(|s| *s == "0.925"));
    assert!(column(&h, &rows, "reference_hi").iter().all(|s| *s == "0.975"));
    assert!(rep.join("rmse.csv").exists());
    assert!(rep.join("manifest.txt").exists());
}

#[test]
fn report_rejects_malformed_summary() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("s.csv");
    fs::write(&bad, "scenario,method\nx,tsls\n").unwrap();
    let o = ivdr(&["report", p(&bad), "--out", p(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(2));
}
