use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use crate::augment::{PlanOverrides, Variant};
use crate::datagen::{Figure1Params, GeneratorSpec, IhdpLikeParams};
use crate::dataset::Schema;
use crate::error::{Error, Result};
use crate::estimators::{EstimatorSpec, FitOptions, MetricKind, DEFAULT_DML_FOLDS};

pub const DEFAULT_ESTIMATORS: &str = "l1,et,tl-et,xl-et,dml-l2,degef-et";
pub const DEFAULT_METRICS: &str = "pehe,ate";
pub const DEFAULT_REPLICATIONS: usize = 10;
pub const DEFAULT_TEST_FRACTION: f64 = 0.1;

/// Where each replication's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Redrawn for every replication with a derived seed.
    Generator(GeneratorSpec),
    /// Loaded once; replications differ only in the train/test split.
    Csv { path: PathBuf, schema: Schema },
}

/// A fully resolved benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub data: DataSource,
    pub estimators: Vec<EstimatorSpec>,
    pub augment: Option<Variant>,
    pub plan: PlanOverrides,
    pub replications: usize,
    pub seed: u64,
    pub test_fraction: f64,
    pub metrics: Vec<MetricKind>,
    pub dml_folds: usize,
    /// Hyperparameter search by cross-validation.
    pub search: bool,
}

impl RunConfig {
    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            dml_folds: self.dml_folds,
            augment: self.augment,
            plan: self.plan,
            tuned: self.search,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test fraction {} outside (0, 1)", self.test_fraction)));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators requested".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::Config("no metrics requested".into()));
        }
        if self.dml_folds < 2 {
            return Err(Error::Config("dml folds must be >= 2".into()));
        }
        if let Some(r) = self.plan.sample_ratio {
            if !(r >= 0.0) || !r.is_finite() {
                return Err(Error::Config(format!("n-samples-ratio {r} must be >= 0")));
            }
        }
        if self.plan.max_depth == Some(0) {
            return Err(Error::Config("max-depth must be >= 1".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for e in &self.estimators {
            if !seen.insert(e.to_string()) {
                return Err(Error::Config(format!("estimator `{e}` listed twice")));
            }
        }
        Ok(())
    }
}

fn comma_list<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }
    Ok(Option::<OneOrMany>::deserialize(d)?.map(|v| match v {
        OneOrMany::One(s) => s,
        OneOrMany::Many(v) => v.join(","),
    }))
}

/// Unresolved settings as they appear in a config file or on the command
/// line. Every field is optional; [`ConfigOverrides::merge`] layers one set
/// over another.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, clap::Args)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ConfigOverrides {
    /// Synthetic data generator: figure1 or ihdp-like.
    #[arg(long)]
    pub generator: Option<String>,
    /// Rows per generated data set.
    #[arg(long)]
    pub n: Option<usize>,
    /// Outcome noise standard deviation of the generator.
    #[arg(long)]
    pub noise_sd: Option<f64>,
    /// Input CSV instead of a generator.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Column mapping for --csv (TOML).
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Comma-separated estimator names.
    #[arg(long)]
    #[serde(default, deserialize_with = "comma_list")]
    pub estimators: Option<String>,
    /// Augmentation applied to estimators without their own: none, degedt or degef.
    #[arg(long)]
    pub augment: Option<String>,
    /// Synthetic rows as a fraction of the training size.
    #[arg(long)]
    pub n_samples_ratio: Option<f64>,
    /// Depth of the partition trees.
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Comma-separated metrics: pehe, ate, att, policy.
    #[arg(long)]
    #[serde(default, deserialize_with = "comma_list")]
    pub metrics: Option<String>,
    /// Folds for double machine learning.
    #[arg(long)]
    pub dml_folds: Option<usize>,
    /// Cross-validated hyperparameter search (true or false).
    #[arg(long)]
    pub search: Option<bool>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

macro_rules! layer {
    ($self:ident, $other:ident, $($f:ident),*) => {
        ConfigOverrides { $($f: $other.$f.or($self.$f),)* }
    };
}

impl ConfigOverrides {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// `other` wins wherever it is set.
    pub fn merge(self, other: ConfigOverrides) -> Self {
        layer!(
            self, other, generator, n, noise_sd, csv, schema, estimators, augment, n_samples_ratio, max_depth,
            replications, seed, test_fraction, metrics, dml_folds, search, out
        )
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let data = match (&self.generator, &self.csv) {
            (Some(_), Some(_)) => return Err(Error::Config("use either --generator or --csv, not both".into())),
            (_, Some(path)) => {
                if self.n.is_some() || self.noise_sd.is_some() {
                    return Err(Error::Config("--n and --noise-sd apply to generators only".into()));
                }
                let schema = match &self.schema {
                    Some(s) => Schema::from_file(s)?,
                    None => Schema::default(),
                };
                DataSource::Csv { path: path.clone(), schema }
            }
            (g, None) => {
                if self.schema.is_some() {
                    return Err(Error::Config("--schema needs --csv".into()));
                }
                DataSource::Generator(self.generator_spec(g.as_deref().unwrap_or("figure1"))?)
            }
        };
        let estimators = self
            .estimators
            .as_deref()
            .unwrap_or(DEFAULT_ESTIMATORS)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<EstimatorSpec>>>()?;
        let metrics = self
            .metrics
            .as_deref()
            .unwrap_or(DEFAULT_METRICS)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<MetricKind>>>()?;
        let augment = match self.augment.as_deref().unwrap_or("none") {
            "none" => None,
            "degedt" => Some(Variant::DecisionTree),
            "degef" => Some(Variant::Forest),
            other => return Err(Error::Config(format!("unknown augmentation `{other}`"))),
        };
        let cfg = RunConfig {
            data,
            estimators,
            augment,
            plan: PlanOverrides {
                sample_ratio: self.n_samples_ratio,
                max_depth: self.max_depth,
            },
            replications: self.replications.unwrap_or(DEFAULT_REPLICATIONS),
            seed: self.seed.unwrap_or(0),
            test_fraction: self.test_fraction.unwrap_or(DEFAULT_TEST_FRACTION),
            metrics,
            dml_folds: self.dml_folds.unwrap_or(DEFAULT_DML_FOLDS),
            search: self.search.unwrap_or(true),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn generator_spec(&self, name: &str) -> Result<GeneratorSpec> {
        Ok(match name {
            "figure1" => {
                let mut p = Figure1Params::default();
                if let Some(n) = self.n {
                    p.n = n;
                }
                if let Some(s) = self.noise_sd {
                    p.noise_sd = s;
                }
                GeneratorSpec::Figure1(p)
            }
            "ihdp-like" | "ihdp_like" => {
                let mut p = IhdpLikeParams::default();
                if let Some(n) = self.n {
                    p.n = n;
                }
                if let Some(s) = self.noise_sd {
                    p.noise_sd = s;
                }
                GeneratorSpec::IhdpLike(p)
            }
            other => return Err(Error::Config(format!("unknown generator `{other}`"))),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file = ConfigOverrides::from_toml(
            "generator = \"figure1\"\nestimators = [\"l1\", \"et\"]\nreplications = 3\nseed = 7\n",
        )
        .unwrap();
        let flags = ConfigOverrides { replications: Some(5), ..Default::default() };
        let cfg = file.merge(flags).resolve().unwrap();
        assert_eq!(cfg.replications, 5);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.estimators.len(), 2);
    }

    #[test]
    fn rejects_unknown_names_up_front() {
        let c = ConfigOverrides { estimators: Some("l1,cf".into()), ..Default::default() };
        assert!(matches!(c.resolve(), Err(Error::UnknownEstimator(_))));
        let c = ConfigOverrides { metrics: Some("pehe,mse".into()), ..Default::default() };
        assert!(c.resolve().is_err());
        assert!(ConfigOverrides::from_toml("bogus = 1").is_err());
        let c = ConfigOverrides { replications: Some(0), ..Default::default() };
        assert!(c.resolve().is_err());
    }
}
