//! Observational data model, CSV ingestion and splitting.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Continuous,
    Binary,
}

/// Ground-truth potential outcomes, used only for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomes {
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

/// Covariates, binary treatment and factual outcome for `n` units.
///
/// Immutable once built; all constructors validate the invariants (shared
/// length, binary outcome domain, factual consistency with potential
/// outcomes).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariates: DMatrix<f64>,
    treatment: Vec<bool>,
    outcome: Vec<f64>,
    potential_outcomes: Option<PotentialOutcomes>,
    experimental: Option<Vec<bool>>,
    outcome_kind: OutcomeKind,
}

impl Dataset {
    pub fn new(
        covariates: DMatrix<f64>,
        treatment: Vec<bool>,
        outcome: Vec<f64>,
        outcome_kind: OutcomeKind,
    ) -> Result<Self> {
        let n = covariates.nrows();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        check_len(n, treatment.len())?;
        check_len(n, outcome.len())?;
        if let Some(i) = outcome.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite outcome at row {i}")));
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite covariate value".into()));
        }
        if outcome_kind == OutcomeKind::Binary {
            if let Some(i) = outcome.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Validation(format!(
                    "binary outcome has value {} at row {i}",
                    outcome[i]
                )));
            }
        }
        Ok(Self {
            covariates,
            treatment,
            outcome,
            potential_outcomes: None,
            experimental: None,
            outcome_kind,
        })
    }

    /// Attaches ground-truth potential outcomes; the factual outcome of every
    /// row must equal the potential outcome of its own arm exactly.
    pub fn with_potential_outcomes(mut self, y0: Vec<f64>, y1: Vec<f64>) -> Result<Self> {
        check_len(self.n(), y0.len())?;
        check_len(self.n(), y1.len())?;
        for i in 0..self.n() {
            let factual = if self.treatment[i] { y1[i] } else { y0[i] };
            if factual != self.outcome[i] {
                return Err(Error::Validation(format!(
                    "factual inconsistency at row {i}: outcome {} but y{} = {factual}",
                    self.outcome[i],
                    u8::from(self.treatment[i])
                )));
            }
        }
        self.potential_outcomes = Some(PotentialOutcomes { y0, y1 });
        Ok(self)
    }

    pub fn with_experimental(mut self, flags: Vec<bool>) -> Result<Self> {
        check_len(self.n(), flags.len())?;
        self.experimental = Some(flags);
        Ok(self)
    }

    pub fn without_ground_truth(mut self) -> Self {
        self.potential_outcomes = None;
        self.experimental = None;
        self
    }

    pub fn n(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn d(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn treatment(&self) -> &[bool] {
        &self.treatment
    }

    pub fn treatment_f64(&self) -> Vec<f64> {
        self.treatment.iter().map(|&t| f64::from(u8::from(t))).collect()
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        self.outcome_kind
    }

    pub fn potential_outcomes(&self) -> Option<&PotentialOutcomes> {
        self.potential_outcomes.as_ref()
    }

    pub fn experimental(&self) -> Option<&[bool]> {
        self.experimental.as_deref()
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&t| t).count()
    }

    /// True per-unit effects `y1 - y0`, when ground truth is present.
    pub fn true_effects(&self) -> Option<Vec<f64>> {
        self.potential_outcomes
            .as_ref()
            .map(|po| po.y1.iter().zip(&po.y0).map(|(a, b)| a - b).collect())
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.covariates.row(i).iter().copied().collect()
    }

    /// Sub-dataset of the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Dataset> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let covariates = self.covariates.select_rows(rows.iter());
        Ok(Dataset {
            covariates,
            treatment: rows.iter().map(|&i| self.treatment[i]).collect(),
            outcome: rows.iter().map(|&i| self.outcome[i]).collect(),
            potential_outcomes: self.potential_outcomes.as_ref().map(|po| PotentialOutcomes {
                y0: rows.iter().map(|&i| po.y0[i]).collect(),
                y1: rows.iter().map(|&i| po.y1[i]).collect(),
            }),
            experimental: self
                .experimental
                .as_ref()
                .map(|e| rows.iter().map(|&i| e[i]).collect()),
            outcome_kind: self.outcome_kind,
        })
    }

    /// Design matrix with the treatment appended as the last column.
    pub fn covariates_with_treatment(&self) -> DMatrix<f64> {
        let t = self.treatment_f64();
        let mut m = self.covariates.clone().insert_column(self.d(), 0.0);
        m.column_mut(self.d()).copy_from_slice(&t);
        m
    }

    /// Row indices `(treated, control)` in original order.
    pub fn group_indices(&self) -> (Vec<usize>, Vec<usize>) {
        (0..self.n()).partition(|&i| self.treatment[i])
    }
}

/// Rows with `t = 1` and rows with `t = 0`, each in original order.
pub fn split_by_treatment(data: &Dataset) -> Result<(Dataset, Dataset)> {
    let (treated, control) = data.group_indices();
    if treated.is_empty() {
        return Err(Error::DegenerateTreatment("treated"));
    }
    if control.is_empty() {
        return Err(Error::DegenerateTreatment("control"));
    }
    Ok((data.select(&treated)?, data.select(&control)?))
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Dataset,
    pub test: Dataset,
    /// Source row of each training row.
    pub train_rows: Vec<usize>,
    /// Source row of each test row.
    pub test_rows: Vec<usize>,
    pub seed: u64,
}

const SPLIT_RETRIES: usize = 100;

/// Seeded uniform train/test partition with `round(n * test_fraction)` test
/// rows. Draws are repeated (bounded) until the training side holds both
/// treatment groups.
pub fn train_test_split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    let n = data.n();
    if n < 2 {
        return Err(Error::InvalidParameter("train/test split needs n >= 2".into()));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    for attempt in 0..SPLIT_RETRIES {
        let mut rng = rng_from_seed(derive_seed(seed, [attempt.to_string()]));
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut test_rows = perm[..n_test].to_vec();
        let mut train_rows = perm[n_test..].to_vec();
        test_rows.sort_unstable();
        train_rows.sort_unstable();
        let treated = train_rows.iter().filter(|&&i| data.treatment[i]).count();
        if treated == 0 || treated == train_rows.len() {
            continue;
        }
        return Ok(DatasetSplit {
            train: data.select(&train_rows)?,
            test: data.select(&test_rows)?,
            train_rows,
            test_rows,
            seed,
        });
    }
    Err(Error::DegenerateTreatment(
        "train-side treated or control (after retries)",
    ))
}

/// Column roles for CSV ingestion.
///
/// Optional roles (`y0`, `y1`, `experimental`) are read when the named
/// column exists and skipped otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
    /// Used when `covariates` is not given: every `<prefix><index>` column,
    /// ordered by index.
    #[serde(default = "default_prefix")]
    pub covariate_prefix: String,
    #[serde(default = "default_treatment")]
    pub treatment: String,
    #[serde(default = "default_outcome")]
    pub outcome: String,
    #[serde(default = "default_y0")]
    pub y0: Option<String>,
    #[serde(default = "default_y1")]
    pub y1: Option<String>,
    #[serde(default = "default_experimental")]
    pub experimental: Option<String>,
    #[serde(default)]
    pub outcome_kind: Option<OutcomeKind>,
}

fn default_prefix() -> String {
    "x".into()
}
fn default_treatment() -> String {
    "t".into()
}
fn default_outcome() -> String {
    "y".into()
}
fn default_y0() -> Option<String> {
    Some("y0".into())
}
fn default_y1() -> Option<String> {
    Some("y1".into())
}
fn default_experimental() -> Option<String> {
    Some("e".into())
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            covariates: None,
            covariate_prefix: default_prefix(),
            treatment: default_treatment(),
            outcome: default_outcome(),
            y0: default_y0(),
            y1: default_y1(),
            experimental: default_experimental(),
            outcome_kind: None,
        }
    }
}

impl Schema {
    /// Reads a schema from a TOML file.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    }

    fn covariate_columns(&self, headers: &[String]) -> Result<Vec<String>> {
        if let Some(cols) = &self.covariates {
            if cols.is_empty() {
                return Err(Error::Validation("schema names no covariate columns".into()));
            }
            return Ok(cols.clone());
        }
        let mut indexed: Vec<(usize, &String)> = headers
            .iter()
            .filter_map(|h| {
                h.strip_prefix(self.covariate_prefix.as_str())
                    .and_then(|rest| rest.parse::<usize>().ok())
                    .map(|i| (i, h))
            })
            .collect();
        indexed.sort();
        if indexed.is_empty() {
            return Err(Error::MissingColumn(format!("{}0", self.covariate_prefix)));
        }
        for (expected, (i, _)) in indexed.iter().enumerate() {
            if *i != expected {
                return Err(Error::MissingColumn(format!(
                    "{}{expected}",
                    self.covariate_prefix
                )));
            }
        }
        Ok(indexed.into_iter().map(|(_, h)| h.clone()).collect())
    }
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        value: raw.to_string(),
    })
}

fn parse_flag(value: f64, row: usize, column: &str) -> Result<bool> {
    if value == 1.0 {
        Ok(true)
    } else if value == 0.0 {
        Ok(false)
    } else {
        Err(Error::Validation(format!(
            "column `{column}` row {row}: value {value} is not 0 or 1"
        )))
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    read_csv(File::open(path)?, schema)
}

/// Parses comma-delimited data with a header row. Row numbers in errors are
/// 1-based data rows (the header is row 0).
pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let position: HashMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();
    let required = |name: &str| {
        position
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let optional = |name: &Option<String>| name.as_deref().and_then(|n| position.get(n).copied());

    let cov_names = schema.covariate_columns(&headers)?;
    let cov_idx = cov_names
        .iter()
        .map(|c| required(c))
        .collect::<Result<Vec<_>>>()?;
    let t_idx = required(&schema.treatment)?;
    let y_idx = required(&schema.outcome)?;
    let y0_idx = optional(&schema.y0);
    let y1_idx = optional(&schema.y1);
    let e_idx = optional(&schema.experimental);
    if y0_idx.is_some() != y1_idx.is_some() {
        return Err(Error::Validation(
            "potential outcomes need both y0 and y1 columns".into(),
        ));
    }

    let d = cov_idx.len();
    let mut cov = Vec::new();
    let mut treatment = Vec::new();
    let mut outcome = Vec::new();
    let mut y0 = Vec::new();
    let mut y1 = Vec::new();
    let mut exp = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let cell = |idx: usize| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("");
            parse_cell(raw, row, &headers[idx])
        };
        for &c in &cov_idx {
            cov.push(cell(c)?);
        }
        treatment.push(parse_flag(cell(t_idx)?, row, &schema.treatment)?);
        outcome.push(cell(y_idx)?);
        if let (Some(a), Some(b)) = (y0_idx, y1_idx) {
            y0.push(cell(a)?);
            y1.push(cell(b)?);
        }
        if let Some(e) = e_idx {
            exp.push(parse_flag(cell(e)?, row, &headers[e])?);
        }
    }
    let n = outcome.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let covariates = DMatrix::from_row_slice(n, d, &cov);
    let kind = schema.outcome_kind.unwrap_or_else(|| {
        if outcome.iter().all(|&v| v == 0.0 || v == 1.0) {
            OutcomeKind::Binary
        } else {
            OutcomeKind::Continuous
        }
    });
    let mut data = Dataset::new(covariates, treatment, outcome, kind)?;
    if y0_idx.is_some() {
        data = data.with_potential_outcomes(y0, y1)?;
    }
    if e_idx.is_some() {
        data = data.with_experimental(exp)?;
    }
    Ok(data)
}

pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    write_csv(data, file, None)
}

/// Writes the standard layout `x0..x{d-1},t,y[,y0,y1][,e][,generated]`.
/// Floats use the shortest representation that parses back to the same
/// value.
pub fn write_csv<W: Write>(data: &Dataset, writer: W, generated: Option<&[bool]>) -> Result<()> {
    if let Some(g) = generated {
        check_len(data.n(), g.len())?;
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..data.d()).map(|j| format!("x{j}")).collect();
    header.push("t".into());
    header.push("y".into());
    if data.potential_outcomes.is_some() {
        header.push("y0".into());
        header.push("y1".into());
    }
    if data.experimental.is_some() {
        header.push("e".into());
    }
    if generated.is_some() {
        header.push("generated".into());
    }
    w.write_record(&header)?;
    let flag = |b: bool| if b { "1".to_string() } else { "0".to_string() };
    for i in 0..data.n() {
        let mut rec: Vec<String> = data.covariates.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(flag(data.treatment[i]));
        rec.push(data.outcome[i].to_string());
        if let Some(po) = &data.potential_outcomes {
            rec.push(po.y0[i].to_string());
            rec.push(po.y1[i].to_string());
        }
        if let Some(e) = &data.experimental {
            rec.push(flag(e[i]));
        }
        if let Some(g) = generated {
            rec.push(flag(g[i]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
