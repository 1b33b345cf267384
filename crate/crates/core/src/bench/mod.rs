//! Replicated benchmark runs over estimators and metrics, with table output.

mod config;
mod table;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

pub use config::{
    ConfigOverrides, DataSource, RunConfig, DEFAULT_ESTIMATORS, DEFAULT_METRICS, DEFAULT_REPLICATIONS,
    DEFAULT_TEST_FRACTION,
};
pub use table::{format_cell, format_delta, markdown_table, results_csv, rules_csv};

use crate::augment::{augment, Variant};
use crate::dataset::{load_csv, train_test_split, Dataset, DatasetSplit};
use crate::error::Result;
use crate::estimators::{evaluate, fit_effect, EstimatorSpec, MetricKind, UNBOUNDED_DEPTH};
use crate::metrics::{aggregate, relative_delta, Aggregate};
use crate::rng::derive_seed;
use crate::trees::{fit_tree, prune_with_path, rule_count, TreeParams};

/// Delta column entry for one metric of one estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Delta {
    /// The row is a base learner.
    Base,
    /// Percentage change against the base learner's mean.
    Value(f64),
    /// No base row, or a missing or zero mean.
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub metric: MetricKind,
    /// One entry per replication; `None` where the cell failed.
    pub values: Vec<Option<f64>>,
    pub aggregate: Option<Aggregate>,
    pub delta: Delta,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorRow {
    pub name: String,
    pub base: String,
    pub metrics: Vec<MetricSummary>,
    /// Error message of each failed replication.
    pub failures: Vec<(usize, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RuleRow {
    pub replication: usize,
    pub plain: Option<usize>,
    pub augmented: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub config: RunConfig,
    pub rows: Vec<EstimatorRow>,
    pub rules: Vec<RuleRow>,
}

/// Data and split of one replication.
pub fn replication_data(cfg: &RunConfig, base: Option<&Dataset>, rep: usize) -> Result<DatasetSplit> {
    let r = rep.to_string();
    let data = match (&cfg.data, base) {
        (DataSource::Generator(g), _) => g.with_seed(derive_seed(cfg.seed, [r.as_str(), "data"])).generate()?,
        (DataSource::Csv { .. }, Some(d)) => d.clone(),
        (DataSource::Csv { path, schema }, None) => load_csv(path, schema)?,
    };
    train_test_split(&data, cfg.test_fraction, derive_seed(cfg.seed, [r.as_str(), "split"]))
}

/// Seed of one (replication, estimator) cell.
pub fn cell_seed(master: u64, rep: usize, estimator: &str) -> u64 {
    derive_seed(master, [rep.to_string().as_str(), estimator])
}

type CellResult = std::result::Result<Vec<std::result::Result<f64, String>>, String>;

fn run_cell(cfg: &RunConfig, split: &DatasetSplit, rep: usize, spec: &EstimatorSpec) -> CellResult {
    let name = spec.to_string();
    let est = fit_effect(
        spec,
        &split.train,
        split.test.covariates(),
        &cfg.fit_options(),
        cell_seed(cfg.seed, rep, &name),
    )
    .map_err(|e| e.to_string())?;
    let inputs = evaluate(&est, &split.test).map_err(|e| e.to_string())?;
    Ok(cfg
        .metrics
        .iter()
        .map(|&m| inputs.metric(m).map_err(|e| e.to_string()))
        .collect())
}

/// Share of the training split held out to choose the pruning level.
pub const RULES_VALIDATION_FRACTION: f64 = 0.2;

/// Leaf counts of validation-pruned trees on `(covariates, treatment) ->
/// outcome`, fitted on plain and on forest-augmented training data.
pub fn rule_counts(cfg: &RunConfig, train: &Dataset, rep: usize) -> RuleRow {
    let r = rep.to_string();
    let seed = derive_seed(cfg.seed, [r.as_str(), "rules"]);
    let count = |data: &Dataset, val: &Dataset| -> Result<usize> {
        let tree = fit_tree(
            &data.covariates_with_treatment(),
            data.outcome(),
            TreeParams::new(UNBOUNDED_DEPTH, 1),
            seed,
        )?;
        let pruned = prune_with_path(&tree, &val.covariates_with_treatment(), val.outcome())?;
        Ok(rule_count(&pruned))
    };
    let Ok(inner) = train_test_split(train, RULES_VALIDATION_FRACTION, derive_seed(seed, ["validation"])) else {
        return RuleRow { replication: rep, plain: None, augmented: None };
    };
    let plain = count(&inner.train, &inner.test).ok();
    let plan = cfg.plan.plan(&inner.train, Variant::Forest, derive_seed(seed, ["augment"]));
    let augmented = augment(&inner.train, &plan)
        .and_then(|a| count(&a.merged, &inner.test))
        .ok();
    RuleRow { replication: rep, plain, augmented }
}

pub fn run_benchmark(cfg: &RunConfig) -> Result<Report> {
    cfg.validate()?;
    let base_data = match &cfg.data {
        DataSource::Csv { path, schema } => Some(load_csv(path, schema)?),
        DataSource::Generator(_) => None,
    };
    let splits = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| replication_data(cfg, base_data.as_ref(), rep))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, usize)> = (0..cfg.replications)
        .flat_map(|r| (0..cfg.estimators.len()).map(move |e| (r, e)))
        .collect();
    let results: Vec<CellResult> = cells
        .par_iter()
        .map(|&(r, e)| run_cell(cfg, &splits[r], r, &cfg.estimators[e]))
        .collect();
    let rules: Vec<RuleRow> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| rule_counts(cfg, &splits[rep].train, rep))
        .collect();

    let mut rows: Vec<EstimatorRow> = cfg
        .estimators
        .iter()
        .map(|spec| EstimatorRow {
            name: spec.to_string(),
            base: EstimatorSpec::plain(spec.base).to_string(),
            metrics: cfg
                .metrics
                .iter()
                .map(|&m| MetricSummary {
                    metric: m,
                    values: Vec::with_capacity(cfg.replications),
                    aggregate: None,
                    delta: Delta::NotApplicable,
                })
                .collect(),
            failures: Vec::new(),
        })
        .collect();
    for (&(rep, e), res) in cells.iter().zip(results) {
        let row = &mut rows[e];
        match res {
            Ok(vals) => {
                for (summary, v) in row.metrics.iter_mut().zip(vals) {
                    summary.values.push(v.ok());
                }
            }
            Err(msg) => {
                row.failures.push((rep, msg));
                for summary in &mut row.metrics {
                    summary.values.push(None);
                }
            }
        }
    }
    for row in &mut rows {
        for s in &mut row.metrics {
            let ok: Vec<f64> = s.values.iter().flatten().copied().collect();
            s.aggregate = aggregate(&ok).ok();
        }
    }
    let means: HashMap<(String, MetricKind), Option<f64>> = rows
        .iter()
        .flat_map(|r| {
            r.metrics
                .iter()
                .map(move |s| ((r.name.clone(), s.metric), s.aggregate.map(|a| a.mean)))
        })
        .collect();
    for (row, spec) in rows.iter_mut().zip(&cfg.estimators) {
        for s in &mut row.metrics {
            s.delta = if spec.is_base() {
                Delta::Base
            } else {
                match (s.aggregate, means.get(&(row.base.clone(), s.metric))) {
                    (Some(a), Some(Some(b))) => relative_delta(a.mean, *b).map_or(Delta::NotApplicable, Delta::Value),
                    _ => Delta::NotApplicable,
                }
            };
        }
    }
    Ok(Report { config: cfg.clone(), rows, rules })
}

pub const RESULTS_CSV: &str = "results.csv";
pub const RESULTS_MD: &str = "results.md";
pub const RULES_CSV: &str = "rules.csv";
pub const RUN_JSON: &str = "run.json";

impl Report {
    pub fn row(&self, name: &str) -> Option<&EstimatorRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Writes the four output files into `dir`, creating it if needed.
    pub fn write_all(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join(RESULTS_CSV), results_csv(self)?)?;
        fs::write(dir.join(RESULTS_MD), markdown_table(self))?;
        fs::write(dir.join(RULES_CSV), rules_csv(self)?)?;
        let json = serde_json::to_string_pretty(&self.config)
            .map_err(|e| crate::error::Error::Config(e.to_string()))?;
        fs::write(dir.join(RUN_JSON), json + "\n")?;
        Ok(())
    }
}

impl EstimatorRow {
    pub fn metric(&self, m: MetricKind) -> Option<&MetricSummary> {
        self.metrics.iter().find(|s| s.metric == m)
    }
}
