//! CSV and JSON output. Every file carries a schema name and version; the
//! output depends only on the inputs, so repeated runs are byte-identical.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiments::{GridCell, RunRecord, SpectrumRow};
use crate::gaussian::{independent_entries, GaussianState, COVARIANCE_LABELS};
use crate::meanfield::{MeanFieldState, Stability};
use crate::model::ModelConfig;
use crate::rates::SidebandWeights;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cannot write {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("io: {0}")]
    Stream(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema mismatch: expected {expected} v{SCHEMA_VERSION}, found {found} v{version}")]
    Schema { expected: String, found: String, version: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Row type with a fixed column layout.
pub trait Table: Serialize {
    /// Schema name, e.g. `"run"`.
    const KIND: &'static str;
    fn columns() -> Vec<String>;
    fn cells(&self) -> Vec<String>;
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:?}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn stability(s: Option<Stability>) -> String {
    match s {
        Some(Stability::Stable) => "stable".into(),
        Some(Stability::Unstable) => "unstable".into(),
        Some(Stability::Undetermined) => "undetermined".into(),
        None => String::new(),
    }
}

fn owned(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

impl Table for RunRecord {
    const KIND: &'static str = "run";

    fn columns() -> Vec<String> {
        owned(&[
            "red_detuning",
            "omega",
            "gamma0",
            "gamma_hat",
            "eta",
            "stability",
            "mean_field",
            "diverged_at",
            "monodromy_radius",
            "covariance_radius",
            "periods",
            "mean_occupation",
            "fit_rate",
            "fit_asymptote",
            "fit_residual",
            "a_minus",
            "a_plus",
            "analytic_occupation",
            "analytic_rate",
            "analytic_bath_corrected",
            "adiabaticity",
            "min_eigenvalue",
            "max_asymmetry",
            "failure",
        ])
    }

    fn cells(&self) -> Vec<String> {
        vec![
            fmt_f64(self.red_detuning),
            fmt_f64(self.omega),
            fmt_f64(self.gamma0),
            fmt_f64(self.gamma_hat),
            fmt_f64(self.eta),
            stability(self.stability),
            stability(self.mean_field),
            opt(self.diverged_at),
            opt(self.monodromy_radius),
            opt(self.covariance_radius),
            self.periods.map(|p| p.to_string()).unwrap_or_default(),
            opt(self.mean_occupation),
            opt(self.fit_rate),
            opt(self.fit_asymptote),
            opt(self.fit_residual),
            opt(self.a_minus),
            opt(self.a_plus),
            opt(self.analytic_occupation),
            opt(self.analytic_rate),
            opt(self.analytic_bath_corrected),
            opt(self.adiabaticity),
            opt(self.min_eigenvalue),
            opt(self.max_asymmetry),
            self.failure.clone().unwrap_or_default(),
        ]
    }
}

impl Table for GridCell {
    const KIND: &'static str = "grid";

    fn columns() -> Vec<String> {
        let mut c = owned(&["cell_omega", "cell_gamma0", "evaluated", "stable_points"]);
        c.extend(RunRecord::columns());
        c
    }

    fn cells(&self) -> Vec<String> {
        let mut c = vec![
            fmt_f64(self.omega),
            fmt_f64(self.gamma0),
            self.evaluated.to_string(),
            self.stable_points.to_string(),
        ];
        c.extend(self.best.cells());
        c
    }
}

/// Rate-spectrum row: Δ, A₋, A₊, ⟨m⟩, Γ_cool, bath-corrected ⟨m⟩.
impl Table for SpectrumRow {
    const KIND: &'static str = "rates";

    fn columns() -> Vec<String> {
        owned(&["red_detuning", "a_minus", "a_plus", "occupation", "cooling_rate", "bath_corrected"])
    }

    fn cells(&self) -> Vec<String> {
        vec![
            fmt_f64(self.red_detuning),
            fmt_f64(self.a_minus),
            fmt_f64(self.a_plus),
            opt(self.occupation),
            fmt_f64(self.cooling_rate),
            opt(self.bath_corrected),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub l: i64,
    pub weight: f64,
}

impl Table for WeightRow {
    const KIND: &'static str = "weights";

    fn columns() -> Vec<String> {
        owned(&["l", "weight"])
    }

    fn cells(&self) -> Vec<String> {
        vec![self.l.to_string(), fmt_f64(self.weight)]
    }
}

pub fn weight_rows(weights: &SidebandWeights) -> Vec<WeightRow> {
    weights.iter().map(|(l, weight)| WeightRow { l, weight }).collect()
}

/// Mean-field sample: t, Re α, Im α, Re β, Im β, δ′.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldRow {
    pub t: f64,
    pub alpha_re: f64,
    pub alpha_im: f64,
    pub beta_re: f64,
    pub beta_im: f64,
    pub effective_detuning: f64,
}

impl MeanFieldRow {
    pub fn new(cfg: &ModelConfig, s: &MeanFieldState) -> Self {
        Self {
            t: s.t,
            alpha_re: s.alpha.re,
            alpha_im: s.alpha.im,
            beta_re: s.beta.re,
            beta_im: s.beta.im,
            effective_detuning: s.effective_detuning(cfg),
        }
    }
}

impl Table for MeanFieldRow {
    const KIND: &'static str = "mean_field";

    fn columns() -> Vec<String> {
        owned(&["t", "alpha_re", "alpha_im", "beta_re", "beta_im", "effective_detuning"])
    }

    fn cells(&self) -> Vec<String> {
        [self.t, self.alpha_re, self.alpha_im, self.beta_re, self.beta_im, self.effective_detuning]
            .into_iter()
            .map(fmt_f64)
            .collect()
    }
}

/// Covariance sample: t, the ten independent entries of C, ⟨m⟩.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceRow {
    pub t: f64,
    pub c: [f64; 10],
    pub occupation: f64,
}

impl From<&GaussianState> for CovarianceRow {
    fn from(s: &GaussianState) -> Self {
        Self { t: s.t, c: independent_entries(&s.c), occupation: s.phonon_number() }
    }
}

impl Table for CovarianceRow {
    const KIND: &'static str = "covariance";

    fn columns() -> Vec<String> {
        let mut c = vec!["t".to_string()];
        c.extend(COVARIANCE_LABELS.iter().map(|s| s.to_string()));
        c.push("occupation".into());
        c
    }

    fn cells(&self) -> Vec<String> {
        let mut c = vec![fmt_f64(self.t)];
        c.extend(self.c.iter().map(|&x| fmt_f64(x)));
        c.push(fmt_f64(self.occupation));
        c
    }
}

/// JSON envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document<S, R> {
    pub schema: String,
    pub version: u32,
    pub spec: S,
    pub records: Vec<R>,
}

pub fn schema_name(kind: &str) -> String {
    format!("modcool/{kind}")
}

pub fn write_csv<R: Table, W: Write>(rows: &[R], out: W) -> Result<(), ExportError> {
    let mut out = out;
    writeln!(out, "# modcool {} v{SCHEMA_VERSION}", R::KIND)?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(R::columns())?;
    for r in rows {
        w.write_record(r.cells())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<S: Serialize, R: Table, W: Write>(spec: &S, rows: &[R], mut out: W) -> Result<(), ExportError> {
    #[derive(Serialize)]
    struct Borrowed<'a, S, R> {
        schema: String,
        version: u32,
        spec: &'a S,
        records: &'a [R],
    }
    let doc = Borrowed { schema: schema_name(R::KIND), version: SCHEMA_VERSION, spec, records: rows };
    serde_json::to_writer_pretty(&mut out, &doc)?;
    writeln!(out)?;
    Ok(())
}

pub fn write<S: Serialize, R: Table, W: Write>(
    format: Format,
    spec: &S,
    rows: &[R],
    out: W,
) -> Result<(), ExportError> {
    match format {
        Format::Csv => write_csv(rows, out),
        Format::Json => write_json(spec, rows, out),
    }
}

/// Write to `path`, creating parent directories.
pub fn write_file<S: Serialize, R: Table>(
    path: &Path,
    format: Format,
    spec: &S,
    rows: &[R],
) -> Result<(), ExportError> {
    let io = |source| ExportError::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let mut buf = Vec::new();
    write(format, spec, rows, &mut buf)?;
    std::fs::write(path, buf).map_err(io)
}

/// Parse a JSON document and check its schema.
pub fn read_json<S: DeserializeOwned, R: Table + DeserializeOwned>(text: &str) -> Result<Document<S, R>, ExportError> {
    let doc: Document<S, R> = serde_json::from_str(text)?;
    let expected = schema_name(R::KIND);
    if doc.schema != expected || doc.version != SCHEMA_VERSION {
        return Err(ExportError::Schema { expected, found: doc.schema, version: doc.version });
    }
    Ok(doc)
}

/// Parse a CSV file written by [`write_csv`] into header and string cells.
pub fn read_csv(text: &str) -> Result<(String, Vec<String>, Vec<Vec<String>>), ExportError> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r.records().map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect())).collect::<Result<_, _>>()?;
    Ok((first.to_string(), header, rows))
}
