//! Monte-Carlo experiment runner and report writers.
//!
//! Replicate `i` draws its dataset (and, for distributed engines, its
//! partition) from seed `seed + i`. Replicates may run concurrently, but
//! results are gathered in replicate order before aggregation, so reports
//! do not depend on scheduling.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bench::metrics::{distance_correlation, projection_distance};
use crate::bench::models::{generate_model, ModelSpec};
use crate::data::{format_g17, Dataset};
use crate::distributed::{naive_fit, partition, refined_fit, RefinedConfig};
use crate::error::{Error, Result};
use crate::parallel::map_ordered;
use crate::psvm::{fit_full, Engine, FitSpec, SdrFit, Variant};
use crate::smoothing::BandwidthRule;
use crate::timer::Instant;

/// Header of the CSV report.
pub const REPORT_HEADER: [&str; 11] = [
    "model",
    "engine",
    "variant",
    "n",
    "p",
    "k",
    "B",
    "replicates",
    "mean_distance",
    "sd_distance",
    "mean_runtime_s",
];

/// How `λ` is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    /// `2 n^{2/3}` for the full engine, `2 m^{2/3}` for distributed ones.
    #[default]
    TwoThirds,
    Fixed(f64),
}

impl LambdaRule {
    fn lambda(&self) -> Option<f64> {
        match *self {
            LambdaRule::TwoThirds => None,
            LambdaRule::Fixed(v) => Some(v),
        }
    }
}

fn default_slices() -> usize {
    5
}
fn default_dim() -> usize {
    2
}
fn default_one() -> usize {
    1
}
fn default_iterations() -> usize {
    3
}
fn default_true() -> bool {
    true
}

/// One benchmark cell. Field names double as the JSON config keys.
///
/// `model.seed` is ignored: replicate `i` uses `seed + i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub engine: Engine,
    pub variant: Variant,
    #[serde(rename = "R", alias = "slices", default = "default_slices")]
    pub slices: usize,
    #[serde(rename = "d", alias = "dim", default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_one")]
    pub k: usize,
    #[serde(rename = "B", alias = "iterations", default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub lambda_rule: LambdaRule,
    #[serde(default)]
    pub bandwidth_rule: BandwidthRule,
    #[serde(default = "default_one")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    /// Explicit dividing points (needed for PSVM on a binary response).
    #[serde(default)]
    pub dividing_points: Option<Vec<f64>>,
    /// When false, runtimes are reported as `NA` so the CSV is fully
    /// reproducible.
    #[serde(default = "default_true")]
    pub record_timing: bool,
    /// Rows used for the distance-correlation diagnostic; `None` skips it.
    #[serde(default)]
    pub dcor_subsample: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(model: ModelSpec, engine: Engine, variant: Variant) -> Self {
        ExperimentConfig {
            model,
            engine,
            variant,
            slices: default_slices(),
            dim: default_dim(),
            k: 1,
            iterations: default_iterations(),
            lambda_rule: LambdaRule::default(),
            bandwidth_rule: BandwidthRule::default(),
            replicates: 1,
            seed: 0,
            dividing_points: None,
            record_timing: true,
            dcor_subsample: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.replicates < 1 {
            return Err(Error::InvalidConfig("replicates must be >= 1".into()));
        }
        if self.dim == 0 || self.dim > self.model.p {
            return Err(Error::InvalidConfig(format!("d must lie in 1..={}, got {}", self.model.p, self.dim)));
        }
        if self.engine != Engine::Full && (self.k == 0 || self.k > self.model.n) {
            return Err(Error::InvalidConfig(format!("k must lie in 1..={}, got {}", self.model.n, self.k)));
        }
        if self.engine == Engine::Refined && self.iterations == 0 {
            return Err(Error::InvalidConfig("B must be >= 1".into()));
        }
        if let LambdaRule::Fixed(v) = self.lambda_rule {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("fixed lambda must be > 0, got {v}")));
            }
        }
        if self.variant == Variant::Wpsvm && !self.model.model_id.is_binary() {
            return Err(Error::InvalidConfig(format!(
                "WPSVM needs a binary model, got model {}",
                self.model.model_id.as_str()
            )));
        }
        Ok(())
    }

    pub fn fit_spec(&self) -> FitSpec {
        let mut spec = FitSpec::new(self.slices, self.dim, self.variant);
        spec.lambda = self.lambda_rule.lambda();
        spec.dividing_points = self.dividing_points.clone();
        spec
    }

    pub fn refined_config(&self) -> RefinedConfig {
        RefinedConfig {
            iterations: self.iterations,
            bandwidth_rule: self.bandwidth_rule,
            ..RefinedConfig::default()
        }
    }

    /// `k` as reported: always 1 for the full engine.
    fn effective_k(&self) -> usize {
        if self.engine == Engine::Full {
            1
        } else {
            self.k
        }
    }
}

/// Fits `data` with the chosen engine; distributed engines partition the
/// rows with `partition_seed`.
pub fn fit_engine(
    data: &Dataset,
    engine: Engine,
    spec: &FitSpec,
    k: usize,
    refined: &RefinedConfig,
    partition_seed: u64,
) -> Result<SdrFit> {
    match engine {
        Engine::Full => fit_full(data, spec),
        Engine::Naive => naive_fit(data, &partition(data.n(), k, partition_seed)?, spec),
        Engine::Refined => refined_fit(data, &partition(data.n(), k, partition_seed)?, spec, refined),
    }
}

/// Outcome of one replicate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub distance: f64,
    /// Wall-clock seconds around the fit call.
    pub runtime_s: f64,
    /// Slowest worker plus aggregation, for distributed engines.
    pub critical_path_s: Option<f64>,
    pub dcor: Option<f64>,
    pub warnings: Vec<String>,
}

/// Runs every replicate and returns them in replicate order. The first
/// failing replicate aborts the run.
pub fn run_replicates(config: &ExperimentConfig) -> Result<Vec<ReplicateResult>> {
    config.validate()?;
    let spec = config.fit_spec();
    let refined = config.refined_config();
    let indices: Vec<usize> = (0..config.replicates).collect();
    let results = map_ordered(&indices, |_, &i| {
        let seed = config.seed.wrapping_add(i as u64);
        run_one(config, &spec, &refined, seed)
            .map(|mut r| {
                r.replicate = i;
                r
            })
            .map_err(|e| Error::Replicate { replicate: i, source: Box::new(e) })
    });
    results.into_iter().collect()
}

fn run_one(config: &ExperimentConfig, spec: &FitSpec, refined: &RefinedConfig, seed: u64) -> Result<ReplicateResult> {
    let model = ModelSpec { seed, ..config.model.clone() };
    let (data, truth) = generate_model(&model)?;
    let start = Instant::now();
    let fit = fit_engine(&data, config.engine, spec, config.k, refined, seed)?;
    let runtime_s = start.secs();
    let distance = projection_distance(&fit.v, &truth)?;
    let dcor = match config.dcor_subsample {
        Some(s) => {
            let rows = s.min(data.n());
            let x: DMatrix<f64> = data.x.rows(0, rows).into_owned();
            Some(distance_correlation(&data.y[..rows], &(x * &fit.v))?)
        }
        None => None,
    };
    Ok(ReplicateResult {
        replicate: 0,
        seed,
        distance,
        runtime_s,
        critical_path_s: fit.critical_path_seconds,
        dcor,
        warnings: fit.warnings,
    })
}

/// Aggregated results for one configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub config: ExperimentConfig,
    pub mean_distance: f64,
    /// Sample standard deviation (divisor `replicates − 1`; 0 for one replicate).
    pub sd_distance: f64,
    /// `None` when timing is disabled.
    pub mean_runtime_seconds: Option<f64>,
    pub mean_critical_path_seconds: Option<f64>,
    pub mean_dcor: Option<f64>,
}

impl ReportRow {
    pub fn from_replicates(config: &ExperimentConfig, reps: &[ReplicateResult]) -> Result<Self> {
        if reps.is_empty() {
            return Err(Error::EmptyData("report"));
        }
        let count = reps.len() as f64;
        let distances: Vec<f64> = reps.iter().map(|r| r.distance).collect();
        let mean_distance = mean(&distances);
        let sd_distance = if reps.len() > 1 {
            (distances.iter().map(|d| (d - mean_distance).powi(2)).sum::<f64>() / (count - 1.0)).sqrt()
        } else {
            0.0
        };
        let timed = config.record_timing;
        let mean_runtime_seconds = timed.then(|| reps.iter().map(|r| r.runtime_s).sum::<f64>() / count);
        let mean_critical_path_seconds = if timed {
            reps.iter()
                .map(|r| r.critical_path_s)
                .collect::<Option<Vec<f64>>>()
                .map(|v| mean(&v))
        } else {
            None
        };
        let mean_dcor = reps.iter().map(|r| r.dcor).collect::<Option<Vec<f64>>>().map(|v| mean(&v));
        Ok(ReportRow {
            config: config.clone(),
            mean_distance,
            sd_distance,
            mean_runtime_seconds,
            mean_critical_path_seconds,
            mean_dcor,
        })
    }

    fn csv_record(&self) -> [String; 11] {
        let c = &self.config;
        [
            c.model.model_id.as_str().to_string(),
            c.engine.as_str().to_string(),
            c.variant.as_str().to_string(),
            c.model.n.to_string(),
            c.model.p.to_string(),
            c.effective_k().to_string(),
            if c.engine == Engine::Refined { c.iterations.to_string() } else { "NA".into() },
            c.replicates.to_string(),
            format_g17(self.mean_distance),
            format_g17(self.sd_distance),
            self.mean_runtime_seconds.map_or_else(|| "NA".into(), |t| format!("{t:.6}")),
        ]
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Runs one configuration and aggregates it into a single report row.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    let reps = run_replicates(config)?;
    Ok(vec![ReportRow::from_replicates(config, &reps)?])
}

/// Writes the CSV report with the fixed header.
pub fn write_report_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let io = |e: std::io::Error| Error::Io { path: path.to_path_buf(), source: e };
    let file = File::create(path).map_err(io)?;
    write_report(file, rows).map_err(|e| match e {
        Error::Io { source, .. } => io(source),
        other => other,
    })
}

/// Writes the CSV report to any sink.
pub fn write_report<W: Write>(sink: W, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let csv_err = |e: csv::Error| Error::Io { path: "<report>".into(), source: e.into() };
    w.write_record(REPORT_HEADER).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.csv_record()).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Io { path: "<report>".into(), source: e })?;
    Ok(())
}

#[derive(Serialize)]
struct Sidecar<'a> {
    rows: &'a [ReportRow],
    replicates: &'a [Vec<ReplicateResult>],
    notes: [&'static str; 3],
}

/// JSON sidecar echoing every config together with per-replicate results.
pub fn write_report_json(path: &Path, rows: &[ReportRow], replicates: &[Vec<ReplicateResult>]) -> Result<()> {
    let sidecar = Sidecar {
        rows,
        replicates,
        notes: [
            "runtime: wall-clock seconds around the fit call, data generation excluded",
            "critical_path: slowest worker plus coordinator time, for distributed engines run in-process",
            "dcor: biased V-statistic distance correlation between y and X V on the first dcor_subsample rows",
        ],
    };
    let text = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

/// Least-squares slope of `log(distance)` against `log(n)`.
pub fn log_log_slope(ns: &[usize], distances: &[f64]) -> Result<f64> {
    if ns.len() != distances.len() || ns.len() < 2 {
        return Err(Error::InvalidConfig("slope needs at least two matching points".into()));
    }
    if distances.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::NonFinite("log of a non-positive distance"));
    }
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = distances.iter().map(|d| d.ln()).collect();
    let (mx, my) = (mean(&xs), mean(&ys));
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidConfig("slope needs distinct sample sizes".into()));
    }
    Ok(sxy / sxx)
}

/// Mean distances over an `n` grid and their log-log slope.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingStudy {
    pub n_grid: Vec<usize>,
    pub mean_distances: Vec<f64>,
    pub slope: f64,
}

/// Runs `base` at every `n` in `n_grid` (other settings unchanged) and
/// fits the convergence-rate slope.
pub fn scaling_study(base: &ExperimentConfig, n_grid: &[usize]) -> Result<ScalingStudy> {
    let lo = n_grid.iter().copied().min().unwrap_or(0);
    let hi = n_grid.iter().copied().max().unwrap_or(0);
    if n_grid.len() < 3 || lo == 0 || hi < 8 * lo {
        return Err(Error::InvalidConfig("n_grid needs >= 3 points spanning at least 8x".into()));
    }
    let mut mean_distances = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let mut config = base.clone();
        config.model.n = n;
        let reps = run_replicates(&config)?;
        mean_distances.push(mean(&reps.iter().map(|r| r.distance).collect::<Vec<_>>()));
    }
    let slope = log_log_slope(n_grid, &mean_distances)?;
    Ok(ScalingStudy { n_grid: n_grid.to_vec(), mean_distances, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::models::ModelId;
    use approx::assert_abs_diff_eq;

    #[test]
    fn slope_examples() {
        let ns = [1000, 4000, 16000];
        assert_abs_diff_eq!(log_log_slope(&ns, &[0.3, 0.3, 0.3]).unwrap(), 0.0, epsilon = 1e-12);
        let root_n: Vec<f64> = ns.iter().map(|&n| 2.0 / (n as f64).sqrt()).collect();
        assert_abs_diff_eq!(log_log_slope(&ns, &root_n).unwrap(), -0.5, epsilon = 1e-12);
    }

    #[test]
    fn scaling_grid_is_checked() {
        let base = ExperimentConfig::new(ModelSpec::new(ModelId::I, 100, 4, 0), Engine::Full, Variant::Psvm);
        assert!(scaling_study(&base, &[100, 200, 400]).is_err());
        assert!(scaling_study(&base, &[100, 800]).is_err());
    }

    #[test]
    fn config_json_round_trip_and_defaults() {
        let text = r#"{"model": {"model_id": "I", "n": 200, "p": 4}, "engine": "refined",
                       "variant": "PSVM", "k": 4, "B": 2, "bandwidth_rule": "sec6",
                       "lambda_rule": {"fixed": 3.5}, "replicates": 2, "seed": 9}"#;
        let config: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert_eq!(config.slices, 5);
        assert_eq!(config.dim, 2);
        assert_eq!(config.iterations, 2);
        assert_eq!(config.lambda_rule, LambdaRule::Fixed(3.5));
        assert!(config.record_timing);
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&config).unwrap()).unwrap();
        assert_eq!(back, config);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"model": {"model_id": "I", "n": 5, "p": 3}, "engine": "full", "variant": "psvm", "bogus": 1}"#).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = ExperimentConfig::new(ModelSpec::new(ModelId::I, 100, 4, 0), Engine::Naive, Variant::Psvm);
        c.replicates = 0;
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        c.replicates = 1;
        c.k = 0;
        assert!(c.validate().is_err());
        c.k = 2;
        c.variant = Variant::Wpsvm;
        assert!(c.validate().is_err());
    }

    #[test]
    fn report_aggregates_and_formats() {
        let mut c = ExperimentConfig::new(ModelSpec::new(ModelId::I, 300, 4, 0), Engine::Full, Variant::Psvm);
        c.replicates = 3;
        c.record_timing = false;
        let reps = run_replicates(&c).unwrap();
        assert_eq!(reps.iter().map(|r| r.replicate).collect::<Vec<_>>(), vec![0, 1, 2]);
        let row = ReportRow::from_replicates(&c, &reps).unwrap();
        assert!(row.mean_distance >= 0.0 && row.mean_distance <= 2.0);
        assert!(row.mean_runtime_seconds.is_none());
        let mut out = Vec::new();
        write_report(&mut out, &[row]).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), REPORT_HEADER.join(","));
        let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(&fields[..8], &["I", "full", "psvm", "300", "4", "1", "NA", "3"]);
        assert_eq!(fields[10], "NA");
    }
}
