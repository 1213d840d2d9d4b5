//! Full-data principal (weighted) SVM estimators: response slicing, class
//! weights, per-slice fits, candidate-matrix assembly and central-subspace
//! extraction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{sample_covariance, sample_mean, sym_eigen, SymMatrix};
use crate::parallel::map_ordered;
use crate::svm::{class_weight, solve, DirectionEstimate, SliceProblem, SolverConfig};
use crate::timer::Instant;

/// Unweighted machines on sliced responses, or weighted machines on a
/// binary ±1 response.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[serde(alias = "PSVM")]
    Psvm,
    #[serde(alias = "WPSVM")]
    Wpsvm,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Psvm => "psvm",
            Variant::Wpsvm => "wpsvm",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "psvm" => Ok(Variant::Psvm),
            "wpsvm" => Ok(Variant::Wpsvm),
            other => Err(Error::InvalidConfig(format!("unknown variant '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Full,
    Naive,
    Refined,
}

impl Engine {
    pub fn as_str(&self) -> &'static str {
        match self {
            Engine::Full => "full",
            Engine::Naive => "naive",
            Engine::Refined => "refined",
        }
    }
}

impl std::str::FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Engine::Full),
            "naive" => Ok(Engine::Naive),
            "refined" => Ok(Engine::Refined),
            other => Err(Error::InvalidConfig(format!("unknown engine '{other}'"))),
        }
    }
}

/// Dividing points `q_1 < … < q_{R−1}` of the response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub dividing_points: Vec<f64>,
}

impl SliceSpec {
    pub fn new(dividing_points: Vec<f64>) -> Result<Self> {
        if dividing_points.is_empty() {
            return Err(Error::InvalidConfig("at least one dividing point is required".into()));
        }
        if dividing_points.iter().any(|q| !q.is_finite()) {
            return Err(Error::NonFinite("dividing points"));
        }
        if dividing_points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::DegenerateSlicing(dividing_points));
        }
        Ok(SliceSpec { dividing_points })
    }

    /// Number of slices `R`.
    pub fn slices(&self) -> usize {
        self.dividing_points.len() + 1
    }

    /// One ±1 label vector per dividing point.
    pub fn labels(&self, responses: &[f64]) -> Vec<Vec<f64>> {
        self.dividing_points
            .iter()
            .map(|&q| responses.iter().map(|&y| sliced_label(y, q)).collect())
            .collect()
    }
}

/// Empirical quantiles at levels `ℓ/R`, `ℓ = 1..R−1`, with linear
/// interpolation between order statistics (position `(n−1)·ℓ/R`).
pub fn dividing_points(responses: &[f64], r: usize) -> Result<SliceSpec> {
    if r < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 slices, got {r}")));
    }
    let n = responses.len();
    if n < r {
        return Err(Error::InvalidConfig(format!("{n} responses cannot fill {r} slices")));
    }
    if responses.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("responses"));
    }
    let mut sorted = responses.to_vec();
    sorted.sort_by(f64::total_cmp);
    let points = (1..r)
        .map(|l| {
            let pos = (n - 1) as f64 * l as f64 / r as f64;
            let lo = pos.floor() as usize;
            let frac = pos - lo as f64;
            if lo + 1 < n {
                sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
            } else {
                sorted[lo]
            }
        })
        .collect();
    SliceSpec::new(points)
}

/// `+1` if `y > q`, otherwise `−1`.
pub fn sliced_label(y: f64, q: f64) -> f64 {
    if y > q {
        1.0
    } else {
        -1.0
    }
}

/// Class weights `π_1 < … < π_R` strictly inside `(0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub weights: Vec<f64>,
}

/// Interior equally spaced grid `π_ℓ = ℓ/(R+1)`.
pub fn weight_grid(r: usize) -> Result<WeightSpec> {
    if r < 1 {
        return Err(Error::InvalidConfig("need at least one weight".into()));
    }
    Ok(WeightSpec {
        weights: (1..=r).map(|l| l as f64 / (r + 1) as f64).collect(),
    })
}

/// `Σ_ℓ ψ_ℓ ψ_ℓᵀ`, summed in slice order.
pub fn candidate_matrix(directions: &[DirectionEstimate]) -> Result<SymMatrix> {
    let first = directions.first().ok_or(Error::EmptyData("candidate_matrix"))?;
    let p = first.dim();
    let mut m = SymMatrix::zeros(p);
    for d in directions {
        if d.dim() != p {
            return Err(Error::DimensionMismatch { context: "candidate_matrix", expected: p, found: d.dim() });
        }
        if !d.degenerate {
            m.add_outer(&d.psi, 1.0);
        }
    }
    Ok(m)
}

/// Top-`d` eigenvectors of `m` plus its full eigenvalue list.
pub fn central_subspace(m: &SymMatrix, d: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if d == 0 || d > m.dim() {
        return Err(Error::InvalidConfig(format!("structural dimension {d} outside 1..={}", m.dim())));
    }
    let eig = sym_eigen(m)?;
    Ok((eig.top(d), eig.values))
}

/// Settings shared by all three engines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSpec {
    /// Number of slices `R` (PSVM) or of weights (WPSVM).
    pub slices: usize,
    /// Structural dimension `d`.
    pub dim: usize,
    pub variant: Variant,
    /// `λ`; `None` selects `2 n^{2/3}` (full) or `2 m^{2/3}` (distributed).
    pub lambda: Option<f64>,
    /// Explicit dividing points; `None` uses the `ℓ/R` quantiles.
    pub dividing_points: Option<Vec<f64>>,
    pub kkt_tol: f64,
    pub ridge: Option<f64>,
    pub max_passes: Option<usize>,
}

impl FitSpec {
    pub fn new(slices: usize, dim: usize, variant: Variant) -> Self {
        FitSpec {
            slices,
            dim,
            variant,
            lambda: None,
            dividing_points: None,
            kkt_tol: 1e-6,
            ridge: None,
            max_passes: None,
        }
    }

    pub fn solver_config(&self, lambda: f64) -> SolverConfig {
        SolverConfig {
            lambda,
            max_passes: self.max_passes,
            kkt_tol: self.kkt_tol,
            ridge: self.ridge,
        }
    }

    pub(crate) fn validate(&self, data: &Dataset) -> Result<()> {
        if self.dim == 0 || self.dim > data.p() {
            return Err(Error::InvalidConfig(format!("dim must lie in 1..={}, got {}", data.p(), self.dim)));
        }
        match self.variant {
            Variant::Psvm if self.dividing_points.is_none() && self.slices < 2 => {
                Err(Error::InvalidConfig("PSVM needs at least 2 slices".into()))
            }
            Variant::Wpsvm if self.slices < 1 => Err(Error::InvalidConfig("WPSVM needs at least 1 weight".into())),
            Variant::Wpsvm if !data.is_binary() => {
                Err(Error::InvalidLabels("WPSVM requires a response in {-1, +1}".into()))
            }
            _ => Ok(()),
        }
    }

    /// Dividing points for `responses`: explicit ones if given, otherwise
    /// the `ℓ/R` quantiles.
    pub fn slice_spec(&self, responses: &[f64]) -> Result<SliceSpec> {
        match &self.dividing_points {
            Some(points) => SliceSpec::new(points.clone()),
            None => dividing_points(responses, self.slices),
        }
    }
}

/// `2 n^{2/3}`.
pub fn default_lambda(n: usize) -> f64 {
    2.0 * (n as f64).powf(2.0 / 3.0)
}

/// Per-slice labels and loss weights for one fit.
#[derive(Clone, Debug)]
pub(crate) struct SliceTask {
    pub labels: Vec<f64>,
    pub weights: Option<Vec<f64>>,
}

/// Slice tasks for PSVM (one per dividing point) or WPSVM (one per weight,
/// all on the raw binary response).
pub(crate) fn slice_tasks(spec: &FitSpec, responses: &[f64], slicing: Option<&SliceSpec>) -> Result<Vec<SliceTask>> {
    match spec.variant {
        Variant::Psvm => {
            let slicing = slicing.ok_or_else(|| Error::InvalidConfig("PSVM needs dividing points".into()))?;
            Ok(slicing
                .labels(responses)
                .into_iter()
                .map(|labels| SliceTask { labels, weights: None })
                .collect())
        }
        Variant::Wpsvm => Ok(weight_grid(spec.slices)?
            .weights
            .iter()
            .map(|&pi| SliceTask {
                labels: responses.to_vec(),
                weights: Some(responses.iter().map(|&y| class_weight(pi, y)).collect()),
            })
            .collect()),
    }
}

/// Solves every slice task on one block of data.
pub(crate) fn solve_slices(
    x: &DMatrix<f64>,
    tasks: &[SliceTask],
    mu: &DVector<f64>,
    sigma: &SymMatrix,
    config: &SolverConfig,
) -> Result<Vec<DirectionEstimate>> {
    map_ordered(tasks, |l, task| {
        let mut problem = SliceProblem::new(x, &task.labels, mu, sigma)?;
        if let Some(w) = &task.weights {
            problem = problem.with_weights(w)?;
        }
        let mut est = solve(&problem, config)?;
        est.slice_index = l;
        Ok(est)
    })
    .into_iter()
    .collect()
}

/// Result of any engine.
#[derive(Clone, Debug, Serialize)]
pub struct SdrFit {
    /// Candidate matrix.
    pub m: SymMatrix,
    /// `p × d` column-orthonormal basis estimate.
    pub v: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub directions: Vec<DirectionEstimate>,
    pub variant: Variant,
    pub engine: Engine,
    /// Wall-clock time of the fit.
    pub timing_seconds: f64,
    /// Distributed engines only: slowest worker per round plus coordinator
    /// time, i.e. runtime if the workers ran in parallel.
    pub critical_path_seconds: Option<f64>,
    /// Skipped batches and frozen slices.
    pub warnings: Vec<String>,
}

/// Fits on the whole sample: estimates `μ̂, Σ̂`, solves every slice problem
/// and extracts the top-`d` eigenvectors of the candidate matrix.
pub fn fit_full(data: &Dataset, spec: &FitSpec) -> Result<SdrFit> {
    let start = Instant::now();
    spec.validate(data)?;
    let lambda = spec.lambda.unwrap_or_else(|| default_lambda(data.n()));
    let mu = sample_mean(&data.x)?;
    let sigma = sample_covariance(&data.x, &mu)?;
    let slicing = match spec.variant {
        Variant::Psvm => Some(spec.slice_spec(&data.y)?),
        Variant::Wpsvm => None,
    };
    let tasks = slice_tasks(spec, &data.y, slicing.as_ref())?;
    let directions = solve_slices(&data.x, &tasks, &mu, &sigma, &spec.solver_config(lambda))?;
    let m = candidate_matrix(&directions)?;
    let (v, eigenvalues) = central_subspace(&m, spec.dim)?;
    Ok(SdrFit {
        m,
        v,
        eigenvalues,
        directions,
        variant: spec.variant,
        engine: Engine::Full,
        timing_seconds: start.secs(),
        critical_path_seconds: None,
        warnings: Vec::new(),
    })
}
