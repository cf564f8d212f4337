//! Number formatting, CSV helpers and run manifests.

use std::fs;
use std::path::Path;
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::Failure;

/// Formats `x` with at most 12 significant digits, dropping trailing zeros.
pub fn fmt(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, Failure> {
    csv::Writer::from_path(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

pub fn write_row<W: std::io::Write, I, S>(w: &mut csv::Writer<W>, row: I) -> Result<(), Failure>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| Failure::Io(e.to_string()))
}

pub fn finish<W: std::io::Write>(mut w: csv::Writer<W>) -> Result<(), Failure> {
    w.flush().map_err(|e| Failure::Io(e.to_string()))
}

/// Record of one CLI invocation. The digest covers the command, the
/// resolved configuration and the input digests, so it is stable across
/// reruns and changes whenever an input byte or setting changes.
pub struct Manifest {
    pub command: String,
    pub config: Vec<(String, String)>,
    pub inputs: Vec<(String, String)>,
    pub seed: Option<u64>,
}

impl Manifest {
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        for (k, v) in self.config.iter().chain(&self.inputs) {
            h.update([0u8]);
            h.update(k.as_bytes());
            h.update([b'=']);
            h.update(v.as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Writes the manifest, listing each output file with its own digest.
    pub fn write(&self, path: &Path, outputs: &[&Path], elapsed: Duration) -> Result<(), Failure> {
        let mut s = String::new();
        s.push_str(&format!("manifest_digest={}\n", self.digest()));
        s.push_str(&format!("command={}\n", self.command));
        s.push_str(&format!("version={}\n", env!("CARGO_PKG_VERSION")));
        if let Some(seed) = self.seed {
            s.push_str(&format!("master_seed={seed}\n"));
        }
        s.push_str(&format!("wall_clock_seconds={:.3}\n", elapsed.as_secs_f64()));
        for (k, v) in &self.config {
            s.push_str(&format!("config.{k}={v}\n"));
        }
        for (k, v) in &self.inputs {
            s.push_str(&format!("input.{k}={v}\n"));
        }
        for out in outputs {
            let bytes = fs::read(out).map_err(|e| Failure::Io(format!("{}: {e}", out.display())))?;
            let name = out.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            s.push_str(&format!("output.{name}={}\n", sha256_hex(&bytes)));
        }
        fs::write(path, s).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
    }
}
