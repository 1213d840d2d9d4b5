//! WebAssembly bindings behind `www/index.html`.
//!
//! Three operations are exposed: the smoothed-hinge curve, the bandwidth
//! schedule of the refined engine, and a complete simulate-fit-score run.
//! Results cross the boundary as flat `Float64Array`s or JSON strings.

use wasm_bindgen::prelude::*;

use dpsvm::bench::{fit_engine, generate_model, projection_distance, ModelId, ModelSpec};
use dpsvm::distributed::RefinedConfig;
use dpsvm::psvm::{Engine, FitSpec, Variant};
use dpsvm::smoothing::{bandwidth_schedule, BandwidthRule, SmoothingKernel};

/// Samples `u ↦ (u⁺, u H(u/h))` on `points` equally spaced abscissae in
/// `[lo, hi]`. Returns `[u₀, hinge₀, smooth₀, u₁, …]`.
#[wasm_bindgen]
pub fn smoothing_curve(h: f64, lo: f64, hi: f64, points: usize) -> Result<Vec<f64>, JsError> {
    if points < 2 || !(hi > lo) {
        return Err(JsError::new("need at least two points and hi > lo"));
    }
    let kernel = SmoothingKernel::new(h).map_err(|e| JsError::new(&e.to_string()))?;
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points)
        .flat_map(|i| {
            let u = lo + step * i as f64;
            [u, u.max(0.0), kernel.loss(u)]
        })
        .collect())
}

/// Bandwidths `h_1..h_B` for `n` rows split over `k` machines.
#[wasm_bindgen]
pub fn bandwidth_path(n: usize, k: usize, p: usize, iterations: usize, rule: &str) -> Result<Vec<f64>, JsError> {
    let rule: BandwidthRule = rule.parse().map_err(|e: dpsvm::Error| JsError::new(&e.to_string()))?;
    if k == 0 || k > n {
        return Err(JsError::new("need 1 <= k <= n"));
    }
    Ok((1..=iterations).map(|b| bandwidth_schedule(b, n, n / k, p, rule)).collect())
}

/// Simulates a model, fits it and returns a JSON summary with the
/// estimated basis, eigenvalues and distance to the truth.
#[wasm_bindgen]
pub fn fit_model(model: &str, engine: &str, n: usize, p: usize, k: usize, seed: u64) -> Result<String, JsError> {
    run_fit(model, engine, n, p, k, seed).map_err(|e| JsError::new(&e.to_string()))
}

fn run_fit(model: &str, engine: &str, n: usize, p: usize, k: usize, seed: u64) -> dpsvm::Result<String> {
    let model: ModelId = model.parse()?;
    let engine: Engine = engine.parse()?;
    let (data, truth) = generate_model(&ModelSpec::new(model, n, p, seed))?;
    let mut spec = if model.is_binary() {
        FitSpec::new(5, 2, Variant::Wpsvm)
    } else {
        FitSpec::new(5, 2, Variant::Psvm)
    };
    spec.kkt_tol = 1e-5;
    let fit = fit_engine(&data, engine, &spec, k, &RefinedConfig::default(), seed)?;
    let distance = projection_distance(&fit.v, &truth)?;
    let basis: Vec<Vec<f64>> = fit.v.row_iter().map(|r| r.iter().copied().collect()).collect();
    Ok(serde_json::json!({
        "model": model.as_str(),
        "engine": engine.as_str(),
        "variant": spec.variant.as_str(),
        "n": n,
        "p": p,
        "k": if engine == Engine::Full { 1 } else { k },
        "distance": distance,
        "eigenvalues": fit.eigenvalues.as_slice(),
        "basis": basis,
        "warnings": fit.warnings,
    })
    .to_string())
}
