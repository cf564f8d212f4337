//! Observed-data container, input validation and design matrices.
//!
//! One observation is `{W, Z, A, Y}`: baseline covariates `W` (the effect
//! modifier `V` is one of them), a binary instrument `Z`, a binary exposure
//! `A` and a continuous outcome `Y`.

use std::io;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Number of parameters in the effect working model `psi_c + psi_v * V`.
pub const EFFECT_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub w: Vec<f64>,
    pub z: u8,
    pub a: u8,
    pub y: f64,
}

/// Immutable, validated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: Vec<Observation>,
    covariate_names: Vec<String>,
    modifier_index: usize,
}

/// Untyped table as read from a CSV file.
#[derive(Debug, Clone, Default)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub records: Vec<Vec<String>>,
}

impl RawTable {
    pub fn from_reader<R: io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Input(format!("cannot read CSV header: {e}")))?
            .iter()
            .map(str::to_string)
            .collect::<Vec<_>>();
        let mut records = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Input(format!("CSV record {}: {e}", i + 1)))?;
            records.push(rec.iter().map(str::to_string).collect());
        }
        Ok(RawTable { headers, records })
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| {
            Error::Input(format!("cannot open {}: {e}", path.as_ref().display()))
        })?;
        Self::from_reader(file)
    }
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    let missing = || Error::MissingData {
        row,
        column: column.to_string(),
    };
    let t = raw.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        return Err(missing());
    }
    let v: f64 = t.parse().map_err(|_| {
        Error::Input(format!(
            "row {row}, column `{column}`: cannot parse `{t}` as a number"
        ))
    })?;
    if !v.is_finite() {
        return Err(missing());
    }
    Ok(v)
}

fn parse_binary(raw: &str, row: usize, column: &str) -> Result<u8> {
    let v = parse_cell(raw, row, column)?;
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(Error::InvalidTreatmentCoding {
            row,
            column: column.to_string(),
            value: v,
        })
    }
}

/// Validates a raw table into a [`Dataset`].
///
/// Columns `y`, `z` and `a` are required; every other column is a covariate.
/// Row numbers in errors are 1-based data rows (the header is not counted).
pub fn validate_dataset(raw: &RawTable, modifier_name: &str) -> Result<Dataset> {
    let find = |name: &str| {
        raw.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Input(format!("missing required column `{name}`")))
    };
    let iy = find("y")?;
    let iz = find("z")?;
    let ia = find("a")?;
    let cov_idx: Vec<usize> = (0..raw.headers.len())
        .filter(|&j| j != iy && j != iz && j != ia)
        .collect();
    if cov_idx.is_empty() {
        return Err(Error::Input("no covariate columns".into()));
    }
    let covariate_names: Vec<String> = cov_idx.iter().map(|&j| raw.headers[j].clone()).collect();
    let modifier_index = covariate_names
        .iter()
        .position(|n| n == modifier_name)
        .ok_or_else(|| {
            Error::Input(format!(
                "modifier `{modifier_name}` is not among the covariate columns"
            ))
        })?;

    let mut rows = Vec::with_capacity(raw.records.len());
    for (i, rec) in raw.records.iter().enumerate() {
        let row = i + 1;
        if rec.len() != raw.headers.len() {
            return Err(Error::Input(format!(
                "row {row} has {} fields, expected {}",
                rec.len(),
                raw.headers.len()
            )));
        }
        let y = parse_cell(&rec[iy], row, "y")?;
        let z = parse_binary(&rec[iz], row, "z")?;
        let a = parse_binary(&rec[ia], row, "a")?;
        let w = cov_idx
            .iter()
            .map(|&j| parse_cell(&rec[j], row, &raw.headers[j]))
            .collect::<Result<Vec<_>>>()?;
        rows.push(Observation { w, z, a, y });
    }
    Dataset::new(rows, covariate_names, modifier_index)
}

impl Dataset {
    pub fn new(
        rows: Vec<Observation>,
        covariate_names: Vec<String>,
        modifier_index: usize,
    ) -> Result<Self> {
        let p = covariate_names.len();
        if modifier_index >= p {
            return Err(Error::SpecError(format!(
                "modifier index {modifier_index} out of range for {p} covariates"
            )));
        }
        for (i, r) in rows.iter().enumerate() {
            let row = i + 1;
            if r.w.len() != p {
                return Err(Error::Input(format!(
                    "row {row} has {} covariates, expected {p}",
                    r.w.len()
                )));
            }
            if r.z > 1 {
                return Err(Error::InvalidTreatmentCoding {
                    row,
                    column: "z".into(),
                    value: r.z as f64,
                });
            }
            if r.a > 1 {
                return Err(Error::InvalidTreatmentCoding {
                    row,
                    column: "a".into(),
                    value: r.a as f64,
                });
            }
            if !r.y.is_finite() {
                return Err(Error::MissingData {
                    row,
                    column: "y".into(),
                });
            }
            if let Some(j) = r.w.iter().position(|v| !v.is_finite()) {
                return Err(Error::MissingData {
                    row,
                    column: covariate_names[j].clone(),
                });
            }
        }
        if rows.len() < 2 * EFFECT_DIM {
            return Err(Error::DegenerateDesign(format!(
                "{} rows; at least {} required",
                rows.len(),
                2 * EFFECT_DIM
            )));
        }
        let treated = rows.iter().filter(|r| r.z == 1).count();
        if treated == 0 || treated == rows.len() {
            return Err(Error::DegenerateDesign(
                "one instrument arm is empty".into(),
            ));
        }
        Ok(Dataset {
            rows,
            covariate_names,
            modifier_index,
        })
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Number of covariates in `W`.
    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn modifier_index(&self) -> usize {
        self.modifier_index
    }

    pub fn modifier_name(&self) -> &str {
        &self.covariate_names[self.modifier_index]
    }

    pub fn v(&self, i: usize) -> f64 {
        self.rows[i].w[self.modifier_index]
    }

    pub fn modifier(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.w[self.modifier_index]).collect()
    }

    pub fn y(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.rows.iter().map(|r| r.y))
    }

    pub fn z(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.rows.iter().map(|r| r.z as f64))
    }

    pub fn a(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.rows.iter().map(|r| r.a as f64))
    }

    /// `n x p` matrix of the covariates `W`.
    pub fn covariates(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), self.p(), |i, j| self.rows[i].w[j])
    }

    /// `[Z, W]` feature matrix, with `Z` optionally replaced by a constant.
    pub fn covariates_with_z(&self, z_override: Option<u8>) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), self.p() + 1, |i, j| {
            if j == 0 {
                z_override.unwrap_or(self.rows[i].z) as f64
            } else {
                self.rows[i].w[j - 1]
            }
        })
    }

    /// Rows at `indices` (repeats allowed), re-validated.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let rows = indices.iter().map(|&i| self.rows[i].clone()).collect();
        Dataset::new(rows, self.covariate_names.clone(), self.modifier_index)
    }

    /// Rows at `indices` without the sample-size and arm checks. Meant for
    /// evaluation-only subsets such as validation folds.
    pub fn take(&self, indices: &[usize]) -> Dataset {
        Dataset {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            covariate_names: self.covariate_names.clone(),
            modifier_index: self.modifier_index,
        }
    }

    /// Same data with a constant added to every outcome.
    pub fn with_shifted_outcome(&self, shift: f64) -> Dataset {
        let mut out = self.clone();
        for r in &mut out.rows {
            r.y += shift;
        }
        out
    }

    /// Writes the sample as CSV (`y,z,a,<covariates>`), full float precision.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let io_err = |e: csv::Error| Error::Input(format!("CSV write failed: {e}"));
        let mut header = vec!["y".to_string(), "z".to_string(), "a".to_string()];
        header.extend(self.covariate_names.iter().cloned());
        wtr.write_record(&header).map_err(io_err)?;
        for r in &self.rows {
            let mut rec = vec![r.y.to_string(), r.z.to_string(), r.a.to_string()];
            rec.extend(r.w.iter().map(|v| v.to_string()));
            wtr.write_record(&rec).map_err(io_err)?;
        }
        wtr.flush()
            .map_err(|e| Error::Input(format!("CSV write failed: {e}")))?;
        Ok(())
    }
}

/// Which nuisance or structural model a specification describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelRole {
    /// `m_y(W)`, the outcome under no exposure.
    OutcomeMy,
    /// `m_a(Z, W) = E[A | Z, W]`.
    ExposureMa,
    /// `g(W) = P(Z = 1 | W)`.
    InstrumentG,
    /// `mu(Z, W) = E[Y | Z, W]`.
    OutcomeMu,
    /// The effect curve `m(W; psi)`.
    EffectM,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMode {
    Parametric,
    Ensemble,
}

/// One column of a design matrix. Column indices refer to `W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Intercept,
    Main(usize),
    Z,
    ZTimes(usize),
    Product(usize, usize),
}

impl Term {
    pub fn involves_z(&self) -> bool {
        matches!(self, Term::Z | Term::ZTimes(_))
    }

    fn columns(&self) -> Vec<usize> {
        match *self {
            Term::Intercept | Term::Z => vec![],
            Term::Main(j) | Term::ZTimes(j) => vec![j],
            Term::Product(j, k) => vec![j, k],
        }
    }

    pub fn label(&self, names: &[String]) -> String {
        let name = |j: usize| names.get(j).cloned().unwrap_or_else(|| format!("w{j}"));
        match *self {
            Term::Intercept => "(intercept)".into(),
            Term::Main(j) => name(j),
            Term::Z => "z".into(),
            Term::ZTimes(j) => format!("z:{}", name(j)),
            Term::Product(j, k) => format!("{}:{}", name(j), name(k)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub role: ModelRole,
    pub terms: Vec<Term>,
    pub fit_mode: FitMode,
}

fn main_terms(ds: &Dataset) -> impl Iterator<Item = Term> + '_ {
    (0..ds.p()).map(Term::Main)
}

impl ModelSpec {
    pub fn new(role: ModelRole, terms: Vec<Term>) -> Self {
        ModelSpec {
            role,
            terms,
            fit_mode: FitMode::Parametric,
        }
    }

    /// Two-term working model `(1, V)`.
    pub fn effect(ds: &Dataset) -> Self {
        Self::new(
            ModelRole::EffectM,
            vec![Term::Intercept, Term::Main(ds.modifier_index())],
        )
    }

    /// `m_y`: intercept plus main terms of `W`.
    pub fn outcome_my_main(ds: &Dataset) -> Self {
        let mut terms = vec![Term::Intercept];
        terms.extend(main_terms(ds));
        Self::new(ModelRole::OutcomeMy, terms)
    }

    /// `m_a`: intercept, `Z` and main terms of `W`.
    pub fn exposure_ma_main(ds: &Dataset) -> Self {
        let mut terms = vec![Term::Intercept, Term::Z];
        terms.extend(main_terms(ds));
        Self::new(ModelRole::ExposureMa, terms)
    }

    /// First stage of TSLS: `Z, Z*V`, main terms of `W` and an intercept.
    pub fn tsls_first_stage(ds: &Dataset) -> Self {
        let mut terms = vec![Term::Intercept, Term::Z, Term::ZTimes(ds.modifier_index())];
        terms.extend(main_terms(ds));
        Self::new(ModelRole::ExposureMa, terms)
    }

    /// `g`: intercept plus main terms of `W`.
    pub fn instrument_g_main(ds: &Dataset) -> Self {
        let mut terms = vec![Term::Intercept];
        terms.extend(main_terms(ds));
        Self::new(ModelRole::InstrumentG, terms)
    }

    /// `mu`: intercept, `Z`, main terms of `W` and `Z*V`.
    pub fn outcome_mu_main(ds: &Dataset) -> Self {
        let mut terms = vec![Term::Intercept, Term::Z];
        terms.extend(main_terms(ds));
        terms.push(Term::ZTimes(ds.modifier_index()));
        Self::new(ModelRole::OutcomeMu, terms)
    }

    pub fn with_fit_mode(mut self, mode: FitMode) -> Self {
        self.fit_mode = mode;
        self
    }

    pub fn labels(&self, ds: &Dataset) -> Vec<String> {
        self.terms
            .iter()
            .map(|t| t.label(ds.covariate_names()))
            .collect()
    }

    /// Checks that this first-stage exposure specification spans every
    /// second-stage regressor implied by `effect` and the `W` main terms.
    pub fn check_tsls_first_stage(&self, ds: &Dataset, effect: &ModelSpec) -> Result<()> {
        let mut required: Vec<Term> = vec![Term::Intercept];
        required.extend(main_terms(ds));
        for t in &effect.terms {
            match *t {
                Term::Intercept => required.push(Term::Z),
                Term::Main(j) => required.push(Term::ZTimes(j)),
                other => {
                    return Err(Error::SpecError(format!(
                        "unsupported effect-model term {other:?}"
                    )))
                }
            }
        }
        for t in required {
            if !self.terms.contains(&t) {
                return Err(Error::SpecError(format!(
                    "first-stage specification lacks `{}`",
                    t.label(ds.covariate_names())
                )));
            }
        }
        Ok(())
    }
}

/// Materialises `spec` on `ds`, one row per observation and one column per
/// term. `z_override` replaces the observed instrument in `Z` terms.
pub fn design_matrix(ds: &Dataset, spec: &ModelSpec, z_override: Option<u8>) -> Result<DMatrix<f64>> {
    for t in &spec.terms {
        if let Some(&j) = t.columns().iter().find(|&&j| j >= ds.p()) {
            return Err(Error::SpecError(format!(
                "term {t:?} references column {j}, but W has {} columns",
                ds.p()
            )));
        }
    }
    if let Some(z) = z_override {
        if z > 1 {
            return Err(Error::SpecError(format!("z override {z} is not binary")));
        }
    }
    let rows = ds.rows();
    Ok(DMatrix::from_fn(ds.n(), spec.terms.len(), |i, k| {
        let r = &rows[i];
        let z = z_override.unwrap_or(r.z) as f64;
        match spec.terms[k] {
            Term::Intercept => 1.0,
            Term::Main(j) => r.w[j],
            Term::Z => z,
            Term::ZTimes(j) => z * r.w[j],
            Term::Product(j, l) => r.w[j] * r.w[l],
        }
    }))
}
