//! Property checks on the solver, the refinement step and the metrics.

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use dpsvm::bench::{distance_correlation, generate_model, projection_distance, ModelId, ModelSpec};
use dpsvm::distributed::{partition, pool_summaries, refined_update, worker_summary, WorkerSummary};
use dpsvm::linalg::{sample_covariance, sample_mean, whitening_transform, SymMatrix};
use dpsvm::psvm::{fit_full, FitSpec, Variant};
use dpsvm::svm::{psvm_direction, smoothed_objective, DirectionEstimate, SliceProblem, SolverConfig};

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Rows of `x` with labels from a noisy linear rule.
fn labelled(seed: u64, m: usize, p: usize) -> (DMatrix<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gaussian(&mut rng, m, p);
    let mut labels: Vec<f64> = (0..m)
        .map(|i| {
            let s: f64 = x[(i, 0)] - 0.5 * x[(i, p - 1)] + 0.7 * rng.sample::<f64, _>(StandardNormal);
            if s > 0.0 {
                1.0
            } else {
                -1.0
            }
        })
        .collect();
    labels[0] = 1.0;
    labels[1] = -1.0;
    (x, labels)
}

fn tight(lambda: f64) -> SolverConfig {
    SolverConfig { kkt_tol: 1e-9, ..SolverConfig::new(lambda) }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solver_beats_random_perturbations(seed in 0u64..10_000, m in 8usize..40, p in 1usize..4, lambda in 0.5f64..20.0) {
        let (x, y) = labelled(seed, m, p);
        let mu = sample_mean(&x).unwrap();
        let sigma = sample_covariance(&x, &mu).unwrap();
        let fit = psvm_direction(&x, &y, &mu, &sigma, &tight(lambda)).unwrap();
        let problem = SliceProblem::new(&x, &y, &mu, &sigma).unwrap();
        let best = problem.hinge_objective(&fit.psi, fit.t, lambda).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        for _ in 0..30 {
            let scale = 10f64.powf(rng.random_range(-4.0..0.0));
            let dpsi = DVector::from_fn(p, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
            let dt = scale * rng.sample::<f64, _>(StandardNormal);
            let other = problem.hinge_objective(&(&fit.psi + dpsi), fit.t + dt, lambda).unwrap();
            prop_assert!(other >= best - 1e-7 * (1.0 + best.abs()), "{other} < {best}");
        }
    }

    #[test]
    fn objective_is_convex_along_segments(seed in 0u64..10_000, a in 0.0f64..1.0) {
        let (x, y) = labelled(seed, 20, 3);
        let mu = sample_mean(&x).unwrap();
        let sigma = sample_covariance(&x, &mu).unwrap();
        let problem = SliceProblem::new(&x, &y, &mu, &sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        let p1 = gaussian(&mut rng, 3, 1).column(0).into_owned();
        let p2 = gaussian(&mut rng, 3, 1).column(0).into_owned();
        let (t1, t2): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        let f = |psi: &DVector<f64>, t: f64| problem.hinge_objective(psi, t, 3.0).unwrap();
        let mid = f(&(&p1 * a + &p2 * (1.0 - a)), a * t1 + (1.0 - a) * t2);
        prop_assert!(mid <= a * f(&p1, t1) + (1.0 - a) * f(&p2, t2) + 1e-10);
        for h in [0.1, 1.0] {
            let g = |psi: &DVector<f64>, t: f64| problem.smoothed_objective(psi, t, 3.0, h).unwrap();
            let mid = g(&(&p1 * a + &p2 * (1.0 - a)), a * t1 + (1.0 - a) * t2);
            prop_assert!(mid <= a * g(&p1, t1) + (1.0 - a) * g(&p2, t2) + 1e-10);
        }
    }

    #[test]
    fn whitening_gives_the_same_direction(seed in 0u64..10_000) {
        // Fitting on W(x − μ) with identity covariance returns η = W⁻¹ψ.
        let (x, y) = labelled(seed, 30, 3);
        let mu = sample_mean(&x).unwrap();
        let sigma = sample_covariance(&x, &mu).unwrap();
        let (w, w_inv) = whitening_transform(&sigma, 0.0).unwrap();
        let centered = DMatrix::from_fn(30, 3, |i, j| x[(i, j)] - mu[j]);
        let z = centered * &w;
        let direct = psvm_direction(&x, &y, &mu, &sigma, &tight(4.0)).unwrap();
        let zero = DVector::zeros(3);
        let whitened = psvm_direction(&z, &y, &zero, &SymMatrix::identity(3), &tight(4.0)).unwrap();
        let eta = &w_inv * &direct.psi;
        for j in 0..3 {
            prop_assert!((eta[j] - whitened.psi[j]).abs() < 1e-5, "{eta} vs {}", whitened.psi);
        }
        prop_assert!((direct.t - whitened.t).abs() < 1e-5);
    }

    #[test]
    fn rescaling_predictors_rescales_the_normal(seed in 0u64..10_000, c in 0.2f64..5.0) {
        let (x, y) = labelled(seed, 25, 2);
        let scaled = &x * c;
        let fit = |x: &DMatrix<f64>| {
            let mu = sample_mean(x).unwrap();
            let sigma = sample_covariance(x, &mu).unwrap();
            psvm_direction(x, &y, &mu, &sigma, &tight(6.0)).unwrap()
        };
        let a = fit(&x);
        let b = fit(&scaled);
        for j in 0..2 {
            prop_assert!((a.psi[j] - c * b.psi[j]).abs() < 1e-5 * (1.0 + a.psi[j].abs()));
        }
        prop_assert!((a.t - b.t).abs() < 1e-5);
    }

    #[test]
    fn summaries_do_not_depend_on_the_partition(seed in 0u64..10_000, k in 1usize..12) {
        let (x, y) = labelled(seed, 120, 3);
        let mu = sample_mean(&x).unwrap();
        let theta = DirectionEstimate::from_theta(&DVector::from_column_slice(&[0.8, -0.2, 0.3, 0.1]), 0);
        let pooled = |k: usize| {
            let part = partition(120, k, seed).unwrap();
            let sums: Vec<WorkerSummary> = part.batch_indices.iter().enumerate().map(|(j, idx)| {
                let xb = x.select_rows(idx);
                let yb: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
                worker_summary(&xb, &yb, &mu, &theta, 0.7, 120, None, j).unwrap()
            }).collect();
            pool_summaries(&sums).unwrap()
        };
        let (b1, c1, v1) = pooled(1);
        let (bk, ck, vk) = pooled(k);
        prop_assert!((b1.as_matrix() - bk.as_matrix()).norm() <= 1e-12 * b1.frobenius_norm());
        prop_assert!((c1.as_matrix() - ck.as_matrix()).norm() <= 1e-12 * (1.0 + c1.frobenius_norm()));
        prop_assert!((v1 - vk).norm() <= 1e-12 * 10.0);
    }

    #[test]
    fn projection_distance_is_a_pseudometric(seed in 0u64..10_000, p in 3usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian(&mut rng, p, 2);
        let b = gaussian(&mut rng, p, 2);
        let c = gaussian(&mut rng, p, 1);
        let ab = projection_distance(&a, &b).unwrap();
        prop_assert_eq!(ab, projection_distance(&b, &a).unwrap());
        let ac = projection_distance(&a, &c).unwrap();
        let cb = projection_distance(&c, &b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-10);
        let mix = gaussian(&mut rng, 2, 2) + DMatrix::identity(2, 2) * 3.0;
        prop_assert!((projection_distance(&(&a * mix), &b).unwrap() - ab).abs() <= 1e-10);
        prop_assert!(ab <= 2f64.sqrt() * 2.0 + 1e-12);
    }

    #[test]
    fn dcor_is_affine_invariant(seed in 0u64..10_000, s in 0.1f64..10.0, shift in -5.0f64..5.0, flip in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = gaussian(&mut rng, 25, 2);
        let y: Vec<f64> = (0..25).map(|i| z[(i, 0)].powi(2) + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
        let base = distance_correlation(&y, &z).unwrap();
        let a = if flip { -s } else { s };
        let moved = z.map(|v| a * v + shift);
        prop_assert!((distance_correlation(&y, &moved).unwrap() - base).abs() <= 1e-10);
        prop_assert!((0.0..=1.0).contains(&base));
    }
}

/// Direct O(n²) sums for the V-statistic distance correlation.
fn dcor_oracle(y: &[f64], z: &DMatrix<f64>) -> f64 {
    let n = y.len();
    let nf = n as f64;
    let a = |i: usize, j: usize| (y[i] - y[j]).abs();
    let b = |i: usize, j: usize| (z.row(i) - z.row(j)).norm();
    let dcov = |f: &dyn Fn(usize, usize) -> f64, g: &dyn Fn(usize, usize) -> f64| {
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        let mut s3 = 0.0;
        for i in 0..n {
            for j in 0..n {
                s1 += f(i, j) * g(i, j);
                for l in 0..n {
                    s3 += f(i, j) * g(i, l);
                }
            }
        }
        let (mut fa, mut ga) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                fa += f(i, j);
                ga += g(i, j);
            }
        }
        s2 += fa * ga;
        s1 / (nf * nf) + s2 / nf.powi(4) - 2.0 * s3 / nf.powi(3)
    };
    let xy = dcov(&a, &b);
    let xx = dcov(&a, &a);
    let yy = dcov(&b, &b);
    (xy / (xx * yy).sqrt()).sqrt()
}

#[test]
fn dcor_matches_direct_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let z = gaussian(&mut rng, 4, 1);
        let y: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
        assert_abs_diff_eq!(distance_correlation(&y, &z).unwrap(), dcor_oracle(&y, &z), epsilon = 1e-12);
    }
}

#[test]
fn refinement_residual_is_the_scaled_gradient() {
    // For G(θ) = [2λ⁻¹ diag(Σ̂,0) + U_curv(θ)] θ − V(θ), λ G(θ) is the
    // gradient of the smoothed objective. Check against central differences.
    let (x, y) = labelled(5, 60, 2);
    let n = 60;
    let mu = sample_mean(&x).unwrap();
    let sigma = sample_covariance(&x, &mu).unwrap();
    let (lambda, h) = (5.0, 0.8);
    let theta = DVector::from_column_slice(&[0.6, -0.4, 0.2]);
    let est = DirectionEstimate::from_theta(&theta, 0);
    let s = worker_summary(&x, &y, &mu, &est, h, n, None, 0).unwrap();
    let mut base = s.u_base.as_matrix().clone();
    base.row_mut(2).fill(0.0);
    base.column_mut(2).fill(0.0);
    let residual = (base * (2.0 / lambda) + s.u_curv.as_matrix()) * &theta - &s.v_grad;
    let f = |th: &DVector<f64>| {
        smoothed_objective(&DirectionEstimate::from_theta(th, 0), &x, &y, &mu, &sigma, lambda, h).unwrap()
    };
    let step = 1e-6;
    for j in 0..3 {
        let mut up = theta.clone();
        let mut down = theta.clone();
        up[j] += step;
        down[j] -= step;
        let fd = (f(&up) - f(&down)) / (2.0 * step);
        assert_abs_diff_eq!(fd, lambda * residual[j], epsilon = 1e-6);
    }
}

#[test]
fn refined_update_is_a_fixed_point_at_stationarity() {
    // Iterate the update with fixed h until it settles; the limit must
    // satisfy the pooled system exactly.
    let (x, y) = labelled(9, 80, 2);
    let mu = sample_mean(&x).unwrap();
    let (lambda, h) = (6.0, 1.0);
    let mut theta = DVector::from_column_slice(&[0.5, 0.0, 0.0]);
    for _ in 0..200 {
        let est = DirectionEstimate::from_theta(&theta, 0);
        let s = worker_summary(&x, &y, &mu, &est, h, 80, None, 0).unwrap();
        theta = refined_update(&[s], lambda, Some(0.0)).unwrap().theta();
    }
    let est = DirectionEstimate::from_theta(&theta, 0);
    let s = worker_summary(&x, &y, &mu, &est, h, 80, None, 0).unwrap();
    let again = refined_update(&[s], lambda, Some(0.0)).unwrap().theta();
    assert!((again - &theta).norm() < 1e-9);
}

#[test]
fn rotating_predictors_rotates_the_subspace() {
    let (data, _) = generate_model(&ModelSpec::new(ModelId::I, 1500, 4, 3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let q = gaussian(&mut rng, 4, 4).qr().q();
    let rotated = dpsvm::data::Dataset::new(&data.x * &q, data.y.clone()).unwrap();
    let mut spec = FitSpec::new(5, 2, Variant::Psvm);
    spec.kkt_tol = 1e-9;
    let a = fit_full(&data, &spec).unwrap();
    let b = fit_full(&rotated, &spec).unwrap();
    let back = q.transpose() * &a.v;
    assert!(projection_distance(&back, &b.v).unwrap() < 1e-4);
    let m_rot = q.transpose() * a.m.as_matrix() * &q;
    assert!((m_rot - b.m.as_matrix()).norm() < 1e-4 * (1.0 + b.m.frobenius_norm()));
}

#[test]
fn monotone_response_maps_leave_the_fit_unchanged() {
    let (data, _) = generate_model(&ModelSpec::new(ModelId::II, 800, 4, 8)).unwrap();
    let transformed = dpsvm::data::Dataset::new(data.x.clone(), data.y.iter().map(|v| (v / 3.0).exp()).collect()).unwrap();
    let spec = FitSpec::new(5, 2, Variant::Psvm);
    let a = fit_full(&data, &spec).unwrap();
    let b = fit_full(&transformed, &spec).unwrap();
    assert_eq!(a.m, b.m);
}

#[test]
fn generated_predictors_are_standard_normal() {
    let n = 20_000;
    let spec = ModelSpec::new(ModelId::I, n, 5, 42);
    let (a, basis) = generate_model(&spec).unwrap();
    let (b, _) = generate_model(&spec).unwrap();
    assert_eq!(a, b);
    assert_eq!(basis, DMatrix::identity(5, 2));
    let (c, _) = generate_model(&ModelSpec { seed: 43, ..spec }).unwrap();
    assert_ne!(a.y, c.y);
    let mu = sample_mean(&a.x).unwrap();
    let cov = sample_covariance(&a.x, &mu).unwrap();
    let bound = 5.0 / (n as f64).sqrt();
    for i in 0..5 {
        for j in 0..5 {
            let target = if i == j { 1.0 } else { 0.0 };
            assert!((cov.get(i, j) - target).abs() < bound, "cov[{i},{j}] = {}", cov.get(i, j));
        }
    }
}

#[test]
fn binary_models_emit_signs() {
    let (data, _) = generate_model(&ModelSpec::new(ModelId::III, 500, 3, 1)).unwrap();
    assert!(data.y.iter().all(|&v| v == 1.0 || v == -1.0));
    assert_abs_diff_eq!(ModelId::I.response(&[1.0, 0.0, 0.0], 0.0), 2.0 / 3.0, epsilon = 1e-15);
    assert_abs_diff_eq!(ModelId::II.response(&[1.0, 1.0], 0.0), 3.0, epsilon = 1e-15);
}
