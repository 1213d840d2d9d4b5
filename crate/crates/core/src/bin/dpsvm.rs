use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;

use dpsvm::bench::{
    fit_engine, generate_model, projection_distance, run_replicates, write_report_csv, write_report_json,
    ExperimentConfig, ModelId, ModelSpec, ReportRow,
};
use dpsvm::data::{read_matrix_csv, write_matrix_csv, Dataset};
use dpsvm::distributed::RefinedConfig;
use dpsvm::psvm::{Engine, FitSpec, Variant};
use dpsvm::smoothing::BandwidthRule;
use dpsvm::{Error, Result};

#[derive(Parser)]
#[command(name = "dpsvm", version, about = "Principal SVM sufficient dimension reduction with distributed engines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset and write it as CSV (`y,x1..xp`).
    Simulate {
        #[arg(long)]
        model: ModelId,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        noise_sd: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate a central-subspace basis from a dataset CSV.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "full")]
        engine: Engine,
        #[arg(long, default_value = "psvm")]
        variant: Variant,
        #[arg(long, default_value_t = 5)]
        slices: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = 3)]
        iters: usize,
        #[arg(long, default_value = "sec6")]
        bandwidth_rule: BandwidthRule,
        /// Fixed regularization; defaults to 2 n^(2/3) or 2 m^(2/3).
        #[arg(long)]
        lambda: Option<f64>,
        /// Comma-separated dividing points, overriding the quantile rule.
        #[arg(long, value_delimiter = ',')]
        dividing_points: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_basis: PathBuf,
        #[arg(long)]
        out_eigs: Option<PathBuf>,
    },
    /// Run a Monte-Carlo benchmark described by a JSON config (one object or an array).
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON sidecar with the config echo and per-replicate results.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Print the projection distance between two basis CSV files.
    Compare {
        #[arg(long)]
        basis_a: PathBuf,
        #[arg(long)]
        basis_b: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let context = serde_json::json!({
                "error": e.kind(),
                "exit_code": e.exit_code(),
                "message": e.to_string(),
            });
            eprintln!("error: {e}");
            eprintln!("{context}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { model, n, p, seed, noise_sd, out } => {
            let spec = ModelSpec { noise_sd, ..ModelSpec::new(model, n, p, seed) };
            let (data, _) = generate_model(&spec)?;
            data.write_csv(&out)
        }
        Command::Fit {
            data,
            engine,
            variant,
            slices,
            dim,
            k,
            iters,
            bandwidth_rule,
            lambda,
            dividing_points,
            seed,
            out_basis,
            out_eigs,
        } => {
            let dataset = Dataset::read_csv(&data)?;
            let mut spec = FitSpec::new(slices, dim, variant);
            spec.lambda = lambda;
            spec.dividing_points = dividing_points;
            let refined = RefinedConfig { iterations: iters, bandwidth_rule, ..RefinedConfig::default() };
            let fit = fit_engine(&dataset, engine, &spec, k, &refined, seed)?;
            for w in &fit.warnings {
                eprintln!("warning: {w}");
            }
            write_matrix_csv(&out_basis, &fit.v)?;
            if let Some(path) = out_eigs {
                let eigs = DMatrix::from_column_slice(fit.eigenvalues.len(), 1, fit.eigenvalues.as_slice());
                write_matrix_csv(&path, &eigs)?;
            }
            println!(
                "engine={} variant={} n={} p={} runtime_s={:.6}",
                engine.as_str(),
                variant.as_str(),
                dataset.n(),
                dataset.p(),
                fit.timing_seconds
            );
            Ok(())
        }
        Command::Bench { config, out, json } => {
            let configs = read_configs(&config)?;
            let mut rows = Vec::with_capacity(configs.len());
            let mut all_reps = Vec::with_capacity(configs.len());
            for c in &configs {
                let reps = run_replicates(c)?;
                rows.push(ReportRow::from_replicates(c, &reps)?);
                all_reps.push(reps);
            }
            write_report_csv(&out, &rows)?;
            if let Some(path) = json {
                write_report_json(&path, &rows, &all_reps)?;
            }
            Ok(())
        }
        Command::Compare { basis_a, basis_b } => {
            let a = read_matrix_csv(&basis_a)?;
            let b = read_matrix_csv(&basis_b)?;
            println!("{}", projection_distance(&a, &b)?);
            Ok(())
        }
    }
}

fn read_configs(path: &Path) -> Result<Vec<ExperimentConfig>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let parse = |e: serde_json::Error| Error::InvalidConfig(format!("{}: {e}", path.display()));
    let value: serde_json::Value = serde_json::from_str(&text).map_err(parse)?;
    let configs: Vec<ExperimentConfig> = if value.is_array() {
        serde_json::from_value(value).map_err(parse)?
    } else {
        vec![serde_json::from_value(value).map_err(parse)?]
    };
    if configs.is_empty() {
        return Err(Error::InvalidConfig("config file lists no experiments".into()));
    }
    for c in &configs {
        c.validate()?;
    }
    Ok(configs)
}
