//! Per-slice principal SVM problems.
//!
//! Each slice minimizes
//!
//! ```text
//! ψᵀ Σ ψ + λ m⁻¹ Σᵢ cᵢ [1 − ỹᵢ (ψᵀ(xᵢ − μ) − t)]⁺
//! ```
//!
//! over the normal `ψ` and intercept `t`, with `cᵢ = 1` for the plain
//! machine and `cᵢ = w_π(ỹᵢ)` for the weighted one. The solver whitens the
//! predictors with `W = Σ^{-1/2}`, so that with `η = W⁻¹ψ` the penalty
//! becomes `‖η‖²` and the problem is a standard soft-margin linear SVM with
//! per-sample costs `λ cᵢ / (2m)`. The unregularized intercept is handled by
//! a proximal-point outer loop: each subproblem adds `(t − t_k)² / 2` to the
//! primal, which turns the intercept into one more regularized feature, and
//! the subproblem is solved by dual coordinate descent with shrinking.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{default_ridge, whitening_transform, SymMatrix};
use crate::smoothing::SmoothingKernel;

/// Fitted normal `ψ` and intercept `t` of one slice (or one weight).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionEstimate {
    pub psi: DVector<f64>,
    pub t: f64,
    pub objective_value: f64,
    pub slice_index: usize,
    /// Set when the slice carried a single label class; `psi` is then zero.
    pub degenerate: bool,
}

impl DirectionEstimate {
    pub fn from_theta(theta: &DVector<f64>, slice_index: usize) -> Self {
        let p = theta.len() - 1;
        DirectionEstimate {
            psi: theta.rows(0, p).into_owned(),
            t: theta[p],
            objective_value: f64::NAN,
            slice_index,
            degenerate: false,
        }
    }

    /// `θ = (ψᵀ, t)ᵀ`.
    pub fn theta(&self) -> DVector<f64> {
        let p = self.psi.len();
        DVector::from_fn(p + 1, |i, _| if i < p { self.psi[i] } else { self.t })
    }

    pub fn dim(&self) -> usize {
        self.psi.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Cost `λ` on the averaged hinge term.
    pub lambda: f64,
    /// Cap on dual coordinate-descent passes; `None` means `10·m`.
    pub max_passes: Option<usize>,
    pub kkt_tol: f64,
    /// Whitening ridge; `None` means `1e-8 · trace(Σ) / p`.
    pub ridge: Option<f64>,
}

impl SolverConfig {
    pub fn new(lambda: f64) -> Self {
        SolverConfig {
            lambda,
            max_passes: None,
            kkt_tol: 1e-6,
            ridge: None,
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        SolverConfig { lambda, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.kkt_tol > 0.0) {
            return Err(Error::InvalidConfig(format!("kkt_tol must be > 0, got {}", self.kkt_tol)));
        }
        if self.max_passes == Some(0) {
            return Err(Error::InvalidConfig("max_passes must be >= 1".into()));
        }
        Ok(())
    }
}

/// `w_π(y)`: `1 − π` for `y = +1`, `π` for `y = −1`.
pub fn class_weight(pi: f64, y: f64) -> f64 {
    if y > 0.0 {
        1.0 - pi
    } else {
        pi
    }
}

/// Borrowed view of one slice problem: predictors, ±1 labels, centering
/// and covariance, and optional per-row loss weights.
#[derive(Clone, Copy, Debug)]
pub struct SliceProblem<'a> {
    pub data: &'a DMatrix<f64>,
    pub labels: &'a [f64],
    pub mu: &'a DVector<f64>,
    pub sigma: &'a SymMatrix,
    pub weights: Option<&'a [f64]>,
}

impl<'a> SliceProblem<'a> {
    pub fn new(
        data: &'a DMatrix<f64>,
        labels: &'a [f64],
        mu: &'a DVector<f64>,
        sigma: &'a SymMatrix,
    ) -> Result<Self> {
        let (m, p) = data.shape();
        if m == 0 {
            return Err(Error::EmptyData("slice problem"));
        }
        if labels.len() != m {
            return Err(Error::DimensionMismatch { context: "labels", expected: m, found: labels.len() });
        }
        if mu.len() != p {
            return Err(Error::DimensionMismatch { context: "mean", expected: p, found: mu.len() });
        }
        if sigma.dim() != p {
            return Err(Error::DimensionMismatch { context: "covariance", expected: p, found: sigma.dim() });
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidLabels(format!("expected ±1, found {bad}")));
        }
        Ok(SliceProblem { data, labels, mu, sigma, weights: None })
    }

    pub fn with_weights(mut self, weights: &'a [f64]) -> Result<Self> {
        if weights.len() != self.rows() {
            return Err(Error::DimensionMismatch {
                context: "weights",
                expected: self.rows(),
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig("loss weights must be finite and >= 0".into()));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[i])
    }

    fn check_direction(&self, psi: &DVector<f64>) -> Result<()> {
        if psi.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "direction",
                expected: self.dim(),
                found: psi.len(),
            });
        }
        Ok(())
    }

    /// Hinge arguments `1 − ỹᵢ (ψᵀ(xᵢ − μ) − t)` for every row.
    pub fn margin_arguments(&self, psi: &DVector<f64>, t: f64) -> Result<Vec<f64>> {
        self.check_direction(psi)?;
        let offset = psi.dot(self.mu) + t;
        let proj = self.data * psi;
        Ok(proj
            .iter()
            .zip(self.labels)
            .map(|(s, y)| 1.0 - y * (s - offset))
            .collect())
    }

    fn quadratic(&self, psi: &DVector<f64>) -> f64 {
        psi.dot(&(self.sigma.as_matrix() * psi))
    }

    /// `ψᵀΣψ + λ m⁻¹ Σᵢ cᵢ [1 − ỹᵢ(ψᵀ(xᵢ − μ) − t)]⁺`.
    pub fn hinge_objective(&self, psi: &DVector<f64>, t: f64, lambda: f64) -> Result<f64> {
        let args = self.margin_arguments(psi, t)?;
        let loss: f64 = args
            .iter()
            .enumerate()
            .map(|(i, u)| self.weight(i) * u.max(0.0))
            .sum();
        Ok(self.quadratic(psi) + lambda * loss / self.rows() as f64)
    }

    /// Same objective with the hinge replaced by `K_h(u) = u H(u/h)`.
    pub fn smoothed_objective(&self, psi: &DVector<f64>, t: f64, lambda: f64, h: f64) -> Result<f64> {
        let kernel = SmoothingKernel::new(h)?;
        let args = self.margin_arguments(psi, t)?;
        let loss: f64 = args
            .iter()
            .enumerate()
            .map(|(i, u)| self.weight(i) * kernel.loss(*u))
            .sum();
        Ok(self.quadratic(psi) + lambda * loss / self.rows() as f64)
    }

    /// Single-class slices, or slices where one class carries no weight.
    fn single_class(&self) -> Option<f64> {
        let mut pos = false;
        let mut neg = false;
        for (i, &y) in self.labels.iter().enumerate() {
            if self.weight(i) > 0.0 {
                if y > 0.0 {
                    pos = true;
                } else {
                    neg = true;
                }
            }
        }
        match (pos, neg) {
            (true, false) => Some(1.0),
            (false, true) => Some(-1.0),
            (false, false) => Some(1.0),
            _ => None,
        }
    }
}

/// Exact hinge objective at `theta`.
pub fn hinge_objective(
    theta: &DirectionEstimate,
    data: &DMatrix<f64>,
    labels: &[f64],
    mu: &DVector<f64>,
    sigma: &SymMatrix,
    lambda: f64,
) -> Result<f64> {
    SliceProblem::new(data, labels, mu, sigma)?.hinge_objective(&theta.psi, theta.t, lambda)
}

/// Smoothed objective at `theta` with bandwidth `h`.
pub fn smoothed_objective(
    theta: &DirectionEstimate,
    data: &DMatrix<f64>,
    labels: &[f64],
    mu: &DVector<f64>,
    sigma: &SymMatrix,
    lambda: f64,
    h: f64,
) -> Result<f64> {
    SliceProblem::new(data, labels, mu, sigma)?.smoothed_objective(&theta.psi, theta.t, lambda, h)
}

/// Minimizer of the unweighted slice problem.
pub fn psvm_direction(
    data: &DMatrix<f64>,
    labels: &[f64],
    mu: &DVector<f64>,
    sigma: &SymMatrix,
    config: &SolverConfig,
) -> Result<DirectionEstimate> {
    solve(&SliceProblem::new(data, labels, mu, sigma)?, config)
}

/// Minimizer of the weighted slice problem with class weight `pi`.
pub fn wpsvm_direction(
    data: &DMatrix<f64>,
    labels: &[f64],
    mu: &DVector<f64>,
    sigma: &SymMatrix,
    config: &SolverConfig,
    pi: f64,
) -> Result<DirectionEstimate> {
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::InvalidConfig(format!("weight pi must lie in (0, 1), got {pi}")));
    }
    let weights: Vec<f64> = labels.iter().map(|&y| class_weight(pi, y)).collect();
    let problem = SliceProblem::new(data, labels, mu, sigma)?.with_weights(&weights)?;
    solve(&problem, config)
}

/// Scale of the intercept feature in the proximal subproblems.
const INTERCEPT_SCALE: f64 = 1.0;
const MAX_OUTER: usize = 2000;

/// Solves a slice problem to the configured KKT tolerance.
pub fn solve(problem: &SliceProblem<'_>, config: &SolverConfig) -> Result<DirectionEstimate> {
    config.validate()?;
    let (m, p) = problem.data.shape();

    if let Some(class) = problem.single_class() {
        // Zero normal with an intercept that puts every margin at 1.
        let psi = DVector::zeros(p);
        let t = -class;
        let objective_value = problem.hinge_objective(&psi, t, config.lambda)?;
        return Ok(DirectionEstimate { psi, t, objective_value, slice_index: 0, degenerate: true });
    }

    let ridge = config.ridge.unwrap_or_else(|| default_ridge(problem.sigma));
    let (w, _) = whitening_transform(problem.sigma, ridge)?;

    // Row-major whitened features with the scaled intercept column appended.
    let q = p + 1;
    let mut centered = problem.data.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-problem.mu[j]);
    }
    let whitened = centered * &w;
    let mut rows = vec![0.0; m * q];
    for i in 0..m {
        let row = &mut rows[i * q..(i + 1) * q];
        for j in 0..p {
            row[j] = whitened[(i, j)];
        }
        row[p] = -INTERCEPT_SCALE;
    }
    let cost: Vec<f64> = (0..m)
        .map(|i| config.lambda * problem.weight(i) / (2.0 * m as f64))
        .collect();

    let mut dcd = DualCoordinateDescent::new(&rows, q, problem.labels, &cost);
    // `max_passes` bounds each inner solve; the proximal outer loop on the
    // intercept is bounded separately.
    let budget = config.max_passes.unwrap_or(10 * m).max(1);
    let mut t = 0.0;
    for _ in 0..MAX_OUTER {
        let margins: Vec<f64> = problem.labels.iter().map(|y| 1.0 + y * t).collect();
        let (_, converged) = dcd.run(&margins, config.kkt_tol, budget);
        let shift = INTERCEPT_SCALE * dcd.w[p];
        t += shift;
        if converged && shift.abs() <= config.kkt_tol * (1.0 + t.abs()) {
            break;
        }
    }

    let eta = DVector::from_column_slice(&dcd.w[..p]);
    let psi = &w * eta;
    let objective_value = problem.hinge_objective(&psi, t, config.lambda)?;
    if !objective_value.is_finite() {
        return Err(Error::NonFinite("slice solver"));
    }
    Ok(DirectionEstimate { psi, t, objective_value, slice_index: 0, degenerate: false })
}

/// Dual coordinate descent for `min ½‖w‖² + Σ Cᵢ [bᵢ − yᵢ wᵀzᵢ]⁺` via its
/// box-constrained dual, with shrinking of bound variables.
struct DualCoordinateDescent<'a> {
    rows: &'a [f64],
    q: usize,
    labels: &'a [f64],
    cost: &'a [f64],
    qdiag: Vec<f64>,
    alpha: Vec<f64>,
    w: Vec<f64>,
    index: Vec<usize>,
    rng: ChaCha8Rng,
}

impl<'a> DualCoordinateDescent<'a> {
    fn new(rows: &'a [f64], q: usize, labels: &'a [f64], cost: &'a [f64]) -> Self {
        let m = labels.len();
        let qdiag = rows.chunks_exact(q).map(|r| r.iter().map(|v| v * v).sum()).collect();
        DualCoordinateDescent {
            rows,
            q,
            labels,
            cost,
            qdiag,
            alpha: vec![0.0; m],
            w: vec![0.0; q],
            index: (0..m).collect(),
            rng: ChaCha8Rng::seed_from_u64(0x5053_564d),
        }
    }

    /// Runs until the projected-gradient spread drops below `eps` on the
    /// full active set, or `max_passes` is reached. Returns passes used and
    /// whether the tolerance was met.
    fn run(&mut self, margins: &[f64], eps: f64, max_passes: usize) -> (usize, bool) {
        let m = self.labels.len();
        let mut active = m;
        let mut pg_max_old = f64::INFINITY;
        let mut pg_min_old = f64::NEG_INFINITY;
        let mut passes = 0;
        while passes < max_passes {
            let mut pg_max_new = f64::NEG_INFINITY;
            let mut pg_min_new = f64::INFINITY;
            self.index[..active].shuffle(&mut self.rng);
            let mut s = 0;
            while s < active {
                let i = self.index[s];
                let c = self.cost[i];
                if c == 0.0 || self.qdiag[i] == 0.0 {
                    s += 1;
                    continue;
                }
                let row = &self.rows[i * self.q..(i + 1) * self.q];
                let y = self.labels[i];
                let g = y * dot(&self.w, row) - margins[i];
                let a = self.alpha[i];
                let mut pg = 0.0;
                if a == 0.0 {
                    if g > pg_max_old {
                        active -= 1;
                        self.index.swap(s, active);
                        continue;
                    } else if g < 0.0 {
                        pg = g;
                    }
                } else if a == c {
                    if g < pg_min_old {
                        active -= 1;
                        self.index.swap(s, active);
                        continue;
                    } else if g > 0.0 {
                        pg = g;
                    }
                } else {
                    pg = g;
                }
                pg_max_new = pg_max_new.max(pg);
                pg_min_new = pg_min_new.min(pg);
                if pg.abs() > 1e-14 {
                    let next = (a - g / self.qdiag[i]).clamp(0.0, c);
                    self.alpha[i] = next;
                    let d = (next - a) * y;
                    for (wk, rk) in self.w.iter_mut().zip(row) {
                        *wk += d * rk;
                    }
                }
                s += 1;
            }
            passes += 1;
            if pg_max_new - pg_min_new <= eps || active == 0 {
                if active == m {
                    return (passes, true);
                }
                active = m;
                pg_max_old = f64::INFINITY;
                pg_min_old = f64::NEG_INFINITY;
                continue;
            }
            pg_max_old = if pg_max_new <= 0.0 { f64::INFINITY } else { pg_max_new };
            pg_min_old = if pg_min_new >= 0.0 { f64::NEG_INFINITY } else { pg_min_new };
        }
        (passes, false)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest grid (in points) evaluated exhaustively in one sweep.
const ORACLE_MAX_POINTS: usize = 4_000_000;

/// Grid-search minimizer of the exact hinge objective over
/// `(ψ, t) ∈ [lo, hi]^{p+1}` on the lattice `lo + i·step`. Test-only oracle
/// for `p ≤ 2`.
///
/// When the full lattice is too large, the search sweeps a coarser lattice
/// (step multiplied by powers of ten) exhaustively and then re-sweeps a
/// ±3-cell window around the incumbent at each finer level. Every finer
/// lattice contains the coarser one, so the reported minimum never
/// increases as `step` shrinks.
pub fn brute_force_oracle(
    problem: &SliceProblem<'_>,
    lambda: f64,
    bounds: (f64, f64),
    step: f64,
) -> Result<DirectionEstimate> {
    let p = problem.dim();
    if p > 2 {
        return Err(Error::OracleTooLarge(p));
    }
    let (lo, hi) = bounds;
    if !(hi > lo) || !(step > 0.0) {
        return Err(Error::InvalidConfig("oracle needs lo < hi and step > 0".into()));
    }
    let q = p + 1;
    let m = problem.rows();
    let centered: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..p).map(|j| problem.data[(i, j)] - problem.mu[j]).collect())
        .collect();
    let sigma = problem.sigma;
    let objective = |theta: &[f64]| -> f64 {
        let mut quad = 0.0;
        for a in 0..p {
            for b in 0..p {
                quad += theta[a] * sigma.get(a, b) * theta[b];
            }
        }
        let t = theta[p];
        let mut loss = 0.0;
        for (i, z) in centered.iter().enumerate() {
            let s: f64 = z.iter().zip(theta).map(|(zj, pj)| zj * pj).sum();
            let u = 1.0 - problem.labels[i] * (s - t);
            if u > 0.0 {
                loss += problem.weight(i) * u;
            }
        }
        quad + lambda * loss / m as f64
    };

    let steps_total = ((hi - lo) / step).round() as usize;
    // Coarsest level: step · 10^levels with a sweepable lattice.
    let mut levels = 0u32;
    while (steps_total / 10usize.pow(levels) + 1).pow(q as u32) > ORACLE_MAX_POINTS {
        levels += 1;
    }

    let mut best_idx = vec![0usize; q];
    let mut best_val = f64::INFINITY;
    let mut theta = vec![0.0; q];
    let mut window: Vec<(usize, usize)> = vec![(0, steps_total); q];
    for level in (0..=levels).rev() {
        let stride = 10usize.pow(level);
        let axes: Vec<Vec<usize>> = window
            .iter()
            .map(|&(a, b)| {
                let start = a.div_ceil(stride) * stride;
                (start..=b).step_by(stride).collect()
            })
            .collect();
        let mut counter = vec![0usize; q];
        'sweep: loop {
            for k in 0..q {
                theta[k] = lo + axes[k][counter[k]] as f64 * step;
            }
            let val = objective(&theta);
            if val < best_val {
                best_val = val;
                for k in 0..q {
                    best_idx[k] = axes[k][counter[k]];
                }
            }
            let mut k = 0;
            loop {
                counter[k] += 1;
                if counter[k] < axes[k].len() {
                    break;
                }
                counter[k] = 0;
                k += 1;
                if k == q {
                    break 'sweep;
                }
            }
        }
        window = best_idx
            .iter()
            .map(|&c| (c.saturating_sub(3 * stride), (c + 3 * stride).min(steps_total)))
            .collect();
    }

    let theta = DVector::from_iterator(q, best_idx.iter().map(|&c| lo + c as f64 * step));
    let mut est = DirectionEstimate::from_theta(&theta, 0);
    est.objective_value = best_val;
    Ok(est)
}
