//! Distributed engines.
//!
//! * Naive divide-and-conquer: every batch fits its own candidate matrix
//!   from local moments and local dividing points; the coordinator averages
//!   the matrices.
//! * Refined: the hinge is replaced by its smoothed version and the
//!   stationarity condition
//!
//!   ```text
//!   [Σⱼ Uⱼ,curv + 2λ⁻¹ diag(Σⱼ Uⱼ,base, 0)] θ = Σⱼ Vⱼ
//!   ```
//!
//!   is iterated from a single-batch initializer. Each round a worker ships
//!   two `(p+1) × (p+1)` symmetric matrices and one `(p+1)`-vector per
//!   slice, independent of its batch size.
//!
//! Workers run in-process over disjoint row sets. Reductions always run in
//! ascending batch order, so results are bit-identical across runs.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{default_ridge, sample_covariance, sample_mean, solve_linear_system, SymMatrix};
use crate::parallel::map_ordered;
use crate::psvm::{
    candidate_matrix, central_subspace, solve_slices, slice_tasks, Engine, FitSpec, SdrFit, SliceTask, Variant,
};
use crate::smoothing::{bandwidth_schedule, smooth_h, smooth_h_prime, BandwidthRule};
use crate::svm::DirectionEstimate;
use crate::timer::Instant;

/// Disjoint batches of row indices covering `0..n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub batch_indices: Vec<Vec<usize>>,
    pub n: usize,
}

impl Partition {
    /// Validates that `batches` are non-empty, disjoint and cover `0..n`.
    pub fn from_batches(batches: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        if batches.is_empty() || batches.iter().any(Vec::is_empty) {
            return Err(Error::InvalidConfig("partition batches must be non-empty".into()));
        }
        let mut seen = vec![false; n];
        for &i in batches.iter().flatten() {
            if i >= n || seen[i] {
                return Err(Error::InvalidConfig(format!("row {i} is out of range or repeated")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidConfig("partition does not cover every row".into()));
        }
        Ok(Partition { batch_indices: batches, n })
    }

    /// Number of batches `k`.
    pub fn k(&self) -> usize {
        self.batch_indices.len()
    }

    /// Nominal batch size `n / k`.
    pub fn m(&self) -> f64 {
        self.n as f64 / self.k() as f64
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.batch_indices.iter().map(Vec::len).collect()
    }
}

/// Seeded random split of `0..n` into `k` blocks whose sizes differ by at
/// most one (the remainder goes to the earliest blocks). Indices within a
/// block are sorted.
pub fn partition(n: usize, k: usize, seed: u64) -> Result<Partition> {
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("need 1 <= k <= n, got k = {k}, n = {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut batches = Vec::with_capacity(k);
    let mut start = 0;
    for j in 0..k {
        let len = base + usize::from(j < extra);
        let mut block = order[start..start + len].to_vec();
        block.sort_unstable();
        batches.push(block);
        start += len;
    }
    Ok(Partition { batch_indices: batches, n })
}

/// `2 m^{2/3}` for the nominal batch size.
pub fn distributed_lambda(part: &Partition) -> f64 {
    2.0 * part.m().powf(2.0 / 3.0)
}

/// Naive divide-and-conquer fit: local fits per batch, averaged candidate
/// matrices. Batches whose responses cannot be sliced are skipped (with a
/// warning) as long as one batch remains.
pub fn naive_fit(data: &Dataset, part: &Partition, spec: &FitSpec) -> Result<SdrFit> {
    let start = Instant::now();
    spec.validate(data)?;
    check_partition(data, part)?;
    let lambda = spec.lambda.unwrap_or_else(|| distributed_lambda(part));
    let config = spec.solver_config(lambda);

    let local = map_ordered(&part.batch_indices, |j, idx| {
        let t0 = Instant::now();
        let batch = data.select_rows(idx);
        let outcome = (|| {
            let slicing = match spec.variant {
                Variant::Psvm => Some(spec.slice_spec(&batch.y)?),
                Variant::Wpsvm => None,
            };
            let mu = sample_mean(&batch.x)?;
            let sigma = sample_covariance(&batch.x, &mu)?;
            let tasks = slice_tasks(spec, &batch.y, slicing.as_ref())?;
            let dirs = solve_slices(&batch.x, &tasks, &mu, &sigma, &config)?;
            Ok::<_, Error>((candidate_matrix(&dirs)?, dirs))
        })();
        (j, outcome, t0.secs())
    });

    let agg_start = Instant::now();
    let p = data.p();
    let mut m = SymMatrix::zeros(p);
    let mut used = 0usize;
    let mut warnings = Vec::new();
    let mut directions = Vec::new();
    let mut slowest: f64 = 0.0;
    for (j, outcome, secs) in local {
        slowest = slowest.max(secs);
        match outcome {
            Ok((mj, dirs)) => {
                m.add_assign(&mj);
                used += 1;
                if j == 0 {
                    directions = dirs;
                }
            }
            Err(Error::DegenerateSlicing(points)) => {
                warnings.push(format!("batch {} skipped: degenerate dividing points {points:?}", j + 1));
            }
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::DegenerateSlicing(Vec::new()));
    }
    m.scale(1.0 / used as f64);
    let (v, eigenvalues) = central_subspace(&m, spec.dim)?;
    Ok(SdrFit {
        m,
        v,
        eigenvalues,
        directions,
        variant: spec.variant,
        engine: Engine::Naive,
        timing_seconds: start.secs(),
        critical_path_seconds: Some(slowest + agg_start.secs()),
        warnings,
    })
}

fn check_partition(data: &Dataset, part: &Partition) -> Result<()> {
    if part.n != data.n() {
        return Err(Error::DimensionMismatch { context: "partition", expected: data.n(), found: part.n });
    }
    Ok(())
}

/// Per-batch, per-slice aggregates exchanged in one refinement round. All
/// sums are normalized by the total sample size, so summing over batches
/// gives full-sample quantities.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WorkerSummary {
    /// `n⁻¹ Σ x̂ᵢ x̂ᵢᵀ`.
    pub u_base: SymMatrix,
    /// `n⁻¹ Σ cᵢ x̂ᵢ x̂ᵢᵀ H'(gᵢ/h) / h`.
    pub u_curv: SymMatrix,
    /// `n⁻¹ Σ cᵢ x̂ᵢ ỹᵢ [H(gᵢ/h) + H'(gᵢ/h) / h]`.
    pub v_grad: DVector<f64>,
    pub batch_id: usize,
    pub slice_id: usize,
}

/// Batch of rows held by one worker: centered features `x̂ = (x − μ̂, −1)`
/// stored row-major.
struct Worker {
    rows: Vec<f64>,
    q: usize,
    n_total: usize,
    u_base: SymMatrix,
    batch_id: usize,
}

impl Worker {
    fn new(x: &DMatrix<f64>, mu: &DVector<f64>, n_total: usize, batch_id: usize) -> Self {
        let (m, p) = x.shape();
        let q = p + 1;
        let mut rows = vec![0.0; m * q];
        for i in 0..m {
            let row = &mut rows[i * q..(i + 1) * q];
            for j in 0..p {
                row[j] = x[(i, j)] - mu[j];
            }
            row[p] = -1.0;
        }
        let mut upper = vec![0.0; q * q];
        for row in rows.chunks_exact(q) {
            accumulate_outer(&mut upper, row, 1.0);
        }
        let u_base = finish_sym(upper, q, n_total);
        Worker { rows, q, n_total, u_base, batch_id }
    }

    fn summary(
        &self,
        labels: &[f64],
        weights: Option<&[f64]>,
        theta: &DVector<f64>,
        h: f64,
        slice_id: usize,
    ) -> WorkerSummary {
        let q = self.q;
        let mut upper = vec![0.0; q * q];
        let mut v = vec![0.0; q];
        let theta = theta.as_slice();
        for (i, row) in self.rows.chunks_exact(q).enumerate() {
            let y = labels[i];
            let c = weights.map_or(1.0, |w| w[i]);
            let g = 1.0 - y * dot(theta, row);
            let s = g / h;
            let hp = smooth_h_prime(s);
            let coef = c * y * (smooth_h(s) + hp / h);
            if coef != 0.0 {
                for (vk, rk) in v.iter_mut().zip(row) {
                    *vk += coef * rk;
                }
            }
            if hp != 0.0 {
                accumulate_outer(&mut upper, row, c * hp / h);
            }
        }
        let inv = 1.0 / self.n_total as f64;
        WorkerSummary {
            u_base: self.u_base.clone(),
            u_curv: finish_sym(upper, q, self.n_total),
            v_grad: DVector::from_iterator(q, v.into_iter().map(|x| x * inv)),
            batch_id: self.batch_id,
            slice_id,
        }
    }

    /// `Σ cᵢ [1 − ỹᵢ θᵀx̂ᵢ]⁺` over the batch.
    fn hinge_sum(&self, labels: &[f64], weights: Option<&[f64]>, theta: &DVector<f64>) -> f64 {
        self.rows
            .chunks_exact(self.q)
            .enumerate()
            .map(|(i, row)| {
                let c = weights.map_or(1.0, |w| w[i]);
                c * (1.0 - labels[i] * dot(theta.as_slice(), row)).max(0.0)
            })
            .sum()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adds `scale · r rᵀ` into the upper triangle of a `q × q` row-major buffer.
fn accumulate_outer(upper: &mut [f64], r: &[f64], scale: f64) {
    let q = r.len();
    for a in 0..q {
        let ra = scale * r[a];
        let dst = &mut upper[a * q + a..(a + 1) * q];
        for (d, rb) in dst.iter_mut().zip(&r[a..]) {
            *d += ra * rb;
        }
    }
}

fn finish_sym(upper: Vec<f64>, q: usize, n_total: usize) -> SymMatrix {
    let inv = 1.0 / n_total as f64;
    let m = DMatrix::from_fn(q, q, |i, j| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        upper[a * q + b] * inv
    });
    SymMatrix::from_matrix(m).expect("square by construction")
}

/// Worker summary for one batch and one slice at `theta_prev`.
///
/// `mu_global` is the pooled mean used for centering and `n_total` the
/// full sample size. With `weights`, each summand is multiplied by its
/// row's loss weight.
#[allow(clippy::too_many_arguments)]
pub fn worker_summary(
    batch_x: &DMatrix<f64>,
    batch_labels: &[f64],
    mu_global: &DVector<f64>,
    theta_prev: &DirectionEstimate,
    h: f64,
    n_total: usize,
    weights: Option<&[f64]>,
    batch_id: usize,
) -> Result<WorkerSummary> {
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("bandwidth must be > 0, got {h}")));
    }
    let (m, p) = batch_x.shape();
    if batch_labels.len() != m {
        return Err(Error::DimensionMismatch { context: "worker labels", expected: m, found: batch_labels.len() });
    }
    if let Some(w) = weights {
        if w.len() != m {
            return Err(Error::DimensionMismatch { context: "worker weights", expected: m, found: w.len() });
        }
    }
    if mu_global.len() != p || theta_prev.dim() != p {
        return Err(Error::DimensionMismatch { context: "worker direction", expected: p, found: theta_prev.dim() });
    }
    if n_total == 0 {
        return Err(Error::EmptyData("worker_summary"));
    }
    let worker = Worker::new(batch_x, mu_global, n_total, batch_id);
    Ok(worker.summary(batch_labels, weights, &theta_prev.theta(), h, theta_prev.slice_index))
}

/// Pooled sums `(Σ U_base, Σ U_curv, Σ V)` in ascending batch order.
pub fn pool_summaries(summaries: &[WorkerSummary]) -> Result<(SymMatrix, SymMatrix, DVector<f64>)> {
    let mut sorted: Vec<&WorkerSummary> = summaries.iter().collect();
    sorted.sort_by_key(|s| s.batch_id);
    let first = *sorted.first().ok_or(Error::EmptyData("refined_update"))?;
    let q = first.v_grad.len();
    let mut u_base = SymMatrix::zeros(q);
    let mut u_curv = SymMatrix::zeros(q);
    let mut v = DVector::zeros(q);
    for s in sorted {
        if s.v_grad.len() != q || s.u_base.dim() != q || s.u_curv.dim() != q {
            return Err(Error::DimensionMismatch { context: "worker summary", expected: q, found: s.v_grad.len() });
        }
        if s.slice_id != first.slice_id {
            return Err(Error::InvalidConfig("summaries from different slices".into()));
        }
        u_base.add_assign(&s.u_base);
        u_curv.add_assign(&s.u_curv);
        v += &s.v_grad;
    }
    Ok((u_base, u_curv, v))
}

/// One refinement step: solves
/// `[Σ U_curv + 2λ⁻¹ diag(Σ U_base, 0)] θ = Σ V`, where `diag(·, 0)` zeroes
/// the last row and column. `ridge = None` selects `1e-8 · trace / (p+1)`.
pub fn refined_update(summaries: &[WorkerSummary], lambda: f64, ridge: Option<f64>) -> Result<DirectionEstimate> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig(format!("lambda must be > 0, got {lambda}")));
    }
    let (u_base, u_curv, v) = pool_summaries(summaries)?;
    let slice = summaries[0].slice_id;
    let q = v.len();
    let mut penalty = u_base.into_inner();
    penalty.row_mut(q - 1).fill(0.0);
    penalty.column_mut(q - 1).fill(0.0);
    let system = SymMatrix::from_matrix(u_curv.into_inner() + penalty * (2.0 / lambda))?;
    let ridge = ridge.unwrap_or_else(|| default_ridge(&system));
    let theta = solve_linear_system(system.as_matrix(), &v, ridge).map_err(|e| match e {
        Error::SingularSystem { .. } | Error::NonFinite(_) => Error::RefinementSingular { slice },
        other => other,
    })?;
    Ok(DirectionEstimate::from_theta(&theta, slice))
}

/// Settings specific to the refined engine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinedConfig {
    /// Number of refinement rounds `B`.
    pub iterations: usize,
    pub bandwidth_rule: BandwidthRule,
    /// 1-based batch supplying the initializer.
    pub init_batch: usize,
    /// `λ` of the initializer fit; `None` means `2 m^{2/3}`.
    pub init_lambda: Option<f64>,
    /// Ridge for the refinement solve; `None` means `1e-8 · trace / (p+1)`.
    pub ridge: Option<f64>,
}

impl Default for RefinedConfig {
    fn default() -> Self {
        RefinedConfig {
            iterations: 3,
            bandwidth_rule: BandwidthRule::Practical,
            init_batch: 1,
            init_lambda: None,
            ridge: None,
        }
    }
}

/// Refined distributed fit.
///
/// 1. Pools the batch means (size-weighted) into `μ̂` and broadcasts it.
/// 2. Fits the initializer on batch `init_batch` with its local moments
///    and re-expresses its intercept under the pooled centering.
/// 3. For `b = 1..=B`, collects worker summaries at the current `θ` with
///    bandwidth `h_b` and solves the pooled system.
/// 4. Assembles the candidate matrix from the final normals.
///
/// PSVM slices use dividing points computed on the full response vector
/// (or the explicit ones in `spec`). A slice whose initializer is
/// degenerate stays at `ψ = 0`.
pub fn refined_fit(data: &Dataset, part: &Partition, spec: &FitSpec, config: &RefinedConfig) -> Result<SdrFit> {
    let start = Instant::now();
    spec.validate(data)?;
    check_partition(data, part)?;
    if config.iterations == 0 {
        return Err(Error::InvalidConfig("refined engine needs at least one iteration".into()));
    }
    let k = part.k();
    if config.init_batch == 0 || config.init_batch > k {
        return Err(Error::InvalidConfig(format!("init_batch must lie in 1..={k}, got {}", config.init_batch)));
    }
    let n = data.n();
    let p = data.p();
    let lambda = spec.lambda.unwrap_or_else(|| distributed_lambda(part));
    let init_lambda = config.init_lambda.unwrap_or_else(|| distributed_lambda(part));
    let m_nominal = (n / k).max(1);

    let slicing = match spec.variant {
        Variant::Psvm => Some(spec.slice_spec(&data.y)?),
        Variant::Wpsvm => None,
    };

    // Round 0: local data, local means, local slice labels.
    let batches: Vec<Dataset> = part.batch_indices.iter().map(|idx| data.select_rows(idx)).collect();
    let local_means = map_ordered(&batches, |_, b| sample_mean(&b.x))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut mu = DVector::zeros(p);
    for (b, mj) in batches.iter().zip(&local_means) {
        mu += mj * (b.n() as f64 / n as f64);
    }
    let tasks: Vec<Vec<SliceTask>> = batches
        .iter()
        .map(|b| slice_tasks(spec, &b.y, slicing.as_ref()))
        .collect::<Result<_>>()?;

    let mut critical = 0.0;
    let t_init = Instant::now();
    let j0 = config.init_batch - 1;
    let init_sigma = sample_covariance(&batches[j0].x, &local_means[j0])?;
    let init = solve_slices(
        &batches[j0].x,
        &tasks[j0],
        &local_means[j0],
        &init_sigma,
        &spec.solver_config(init_lambda),
    )?;
    let shift = &local_means[j0] - &mu;
    let mut thetas: Vec<Option<DVector<f64>>> = init
        .iter()
        .map(|d| {
            (!d.degenerate).then(|| {
                let mut th = d.theta();
                th[p] += d.psi.dot(&shift);
                th
            })
        })
        .collect();
    critical += t_init.secs();

    let mut warnings = Vec::new();
    for (l, th) in thetas.iter().enumerate() {
        if th.is_none() {
            warnings.push(format!("slice {} initializer is degenerate; kept at zero", l + 1));
        }
    }

    let t_workers = Instant::now();
    let workers: Vec<Worker> = map_ordered(&batches, |j, b| Worker::new(&b.x, &mu, n, j));
    critical += t_workers.secs() / k as f64;

    for b in 1..=config.iterations {
        let h = bandwidth_schedule(b, n, m_nominal, p, config.bandwidth_rule);
        let current = thetas.clone();
        let rounds = map_ordered(&workers, |j, w| {
            let t0 = Instant::now();
            let out: Vec<Option<WorkerSummary>> = current
                .iter()
                .enumerate()
                .map(|(l, th)| {
                    th.as_ref().map(|th| {
                        let task = &tasks[j][l];
                        w.summary(&task.labels, task.weights.as_deref(), th, h, l)
                    })
                })
                .collect();
            (out, t0.secs())
        });
        let slowest = rounds.iter().map(|r| r.1).fold(0.0, f64::max);
        let t_coord = Instant::now();
        for (l, th) in thetas.iter_mut().enumerate() {
            if th.is_none() {
                continue;
            }
            let summaries: Vec<WorkerSummary> = rounds
                .iter()
                .map(|(out, _)| out[l].clone().expect("present for active slice"))
                .collect();
            *th = Some(refined_update(&summaries, lambda, config.ridge)?.theta());
        }
        critical += slowest + t_coord.secs();
    }

    // Final objective values: one more pass for the hinge sums.
    let sigma = workers
        .iter()
        .fold(SymMatrix::zeros(p + 1), |mut acc, w| {
            acc.add_assign(&w.u_base);
            acc
        })
        .leading_block(p);
    let directions: Vec<DirectionEstimate> = thetas
        .iter()
        .enumerate()
        .map(|(l, th)| match th {
            Some(th) => {
                let mut d = DirectionEstimate::from_theta(th, l);
                let loss: f64 = workers
                    .iter()
                    .enumerate()
                    .map(|(j, w)| w.hinge_sum(&tasks[j][l].labels, tasks[j][l].weights.as_deref(), th))
                    .sum();
                d.objective_value = d.psi.dot(&(sigma.as_matrix() * &d.psi)) + lambda * loss / n as f64;
                d
            }
            None => DirectionEstimate {
                psi: DVector::zeros(p),
                t: init[l].t,
                objective_value: init[l].objective_value,
                slice_index: l,
                degenerate: true,
            },
        })
        .collect();

    let m = candidate_matrix(&directions)?;
    let (v, eigenvalues) = central_subspace(&m, spec.dim)?;
    Ok(SdrFit {
        m,
        v,
        eigenvalues,
        directions,
        variant: spec.variant,
        engine: Engine::Refined,
        timing_seconds: start.secs(),
        critical_path_seconds: Some(critical),
        warnings,
    })
}
