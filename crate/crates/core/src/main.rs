use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use degets::augment::{augment, PlanOverrides, Variant};
use degets::bench::{run_benchmark, ConfigOverrides};
use degets::datagen::{Figure1Params, GeneratorSpec, IhdpLikeParams};
use degets::dataset::{load_csv, save_csv, Schema};
use degets::{Error, Result};

/// Benchmark causal effect estimators with and without tree-partitioned
/// mixture augmentation.
#[derive(Debug, Parser)]
#[command(name = "degets", version, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// TOML file with the same keys as the long flags; flags take precedence.
    #[arg(long, global = false)]
    config: Option<PathBuf>,

    #[command(flatten)]
    run: ConfigOverrides,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic data set with potential outcomes to CSV.
    Generate {
        /// figure1 or ihdp-like.
        #[arg(long, default_value = "figure1")]
        generator: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        noise_sd: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Augment a CSV data set and write the merged rows with a `generated` column.
    Augment {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        /// degedt or degef.
        #[arg(long, default_value = "degef")]
        variant: String,
        #[arg(long)]
        n_samples_ratio: Option<f64>,
        #[arg(long)]
        max_depth: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn generate(name: &str, n: Option<usize>, seed: u64, noise_sd: Option<f64>, out: &PathBuf) -> Result<()> {
    let spec = match name {
        "figure1" => {
            let mut p = Figure1Params { seed, ..Default::default() };
            p.n = n.unwrap_or(p.n);
            p.noise_sd = noise_sd.unwrap_or(p.noise_sd);
            GeneratorSpec::Figure1(p)
        }
        "ihdp-like" | "ihdp_like" => {
            let mut p = IhdpLikeParams { seed, ..Default::default() };
            p.n = n.unwrap_or(p.n);
            p.noise_sd = noise_sd.unwrap_or(p.noise_sd);
            GeneratorSpec::IhdpLike(p)
        }
        other => return Err(Error::Config(format!("unknown generator `{other}`"))),
    };
    save_csv(&spec.generate()?, out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Some(Command::Generate { generator, n, seed, noise_sd, out }) => generate(&generator, n, seed, noise_sd, &out),
        Some(Command::Augment { csv, schema, variant, n_samples_ratio, max_depth, seed, out }) => {
            let schema = match schema {
                Some(p) => Schema::from_file(p)?,
                None => Schema::default(),
            };
            let variant = match variant.as_str() {
                "degedt" => Variant::DecisionTree,
                "degef" => Variant::Forest,
                other => return Err(Error::Config(format!("unknown augmentation `{other}`"))),
            };
            let data = load_csv(csv, &schema)?;
            let overrides = PlanOverrides { sample_ratio: n_samples_ratio, max_depth };
            let aug = augment(&data, &overrides.plan(&data, variant, seed))?;
            aug.write_csv(std::fs::File::create(out)?)
        }
        None => {
            let file = match &cli.config {
                Some(p) => ConfigOverrides::from_file(p)?,
                None => ConfigOverrides::default(),
            };
            let merged = file.merge(cli.run);
            let cfg = merged.resolve()?;
            let report = run_benchmark(&cfg)?;
            let out = merged.out.unwrap_or_else(|| PathBuf::from("results"));
            report.write_all(&out)?;
            print!("{}", degets::bench::markdown_table(&report));
            for row in &report.rows {
                for (rep, msg) in &row.failures {
                    eprintln!("warning: {} failed in replication {rep}: {msg}", row.name);
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
