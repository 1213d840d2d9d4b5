//! Synthetic regression and classification models with central subspace
//! `span(e₁, e₂)`.
//!
//! Draws come from `ChaCha8Rng::seed_from_u64(seed)`; each row consumes `p`
//! standard normals for the predictors followed by one for the noise, and
//! normals are produced by `rand_distr::StandardNormal` (ziggurat). The
//! stream is platform independent.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelId {
    /// `y = x₁ / (0.5 + (x₂ + 1)²) + ε`
    I,
    /// `y = x₁ (x₁ + x₂ + 1) + ε`
    II,
    /// `y = sign(x₁ / (0.5 + (x₂ + 1)²) + ε)`
    III,
    /// `y = sign(x₁ (x₁ + x₂ + 1) + ε)`
    IV,
}

impl ModelId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelId::I => "I",
            ModelId::II => "II",
            ModelId::III => "III",
            ModelId::IV => "IV",
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, ModelId::III | ModelId::IV)
    }

    /// Response for predictors `x` (at least two entries) and noise `eps`.
    pub fn response(&self, x: &[f64], eps: f64) -> f64 {
        let (x1, x2) = (x[0], x[1]);
        let signal = match self {
            ModelId::I | ModelId::III => x1 / (0.5 + (x2 + 1.0).powi(2)),
            ModelId::II | ModelId::IV => x1 * (x1 + x2 + 1.0),
        };
        let value = signal + eps;
        if self.is_binary() {
            if value > 0.0 {
                1.0
            } else {
                -1.0
            }
        } else {
            value
        }
    }
}

impl std::str::FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(ModelId::I),
            "II" | "2" => Ok(ModelId::II),
            "III" | "3" => Ok(ModelId::III),
            "IV" | "4" => Ok(ModelId::IV),
            other => Err(Error::InvalidConfig(format!("unknown model '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: ModelId,
    pub n: usize,
    pub p: usize,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_noise_sd() -> f64 {
    0.5
}

impl ModelSpec {
    pub fn new(model_id: ModelId, n: usize, p: usize, seed: u64) -> Self {
        ModelSpec { model_id, n, p, noise_sd: 0.5, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::InvalidConfig(format!("models need p >= 2, got {}", self.p)));
        }
        if self.n < 1 {
            return Err(Error::InvalidConfig("models need n >= 1".into()));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::InvalidConfig("noise_sd must be >= 0".into()));
        }
        Ok(())
    }
}

/// Draws a dataset and returns it with the true basis `(e₁, e₂)`.
pub fn generate_model(spec: &ModelSpec) -> Result<(Dataset, DMatrix<f64>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, p) = (spec.n, spec.p);
    let mut flat = vec![0.0; n * p];
    let mut y = Vec::with_capacity(n);
    for row in flat.chunks_exact_mut(p) {
        for v in row.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let z: f64 = rng.sample(StandardNormal);
        y.push(spec.model_id.response(row, spec.noise_sd * z));
    }
    let x = DMatrix::from_row_slice(n, p, &flat);
    Ok((Dataset::new(x, y)?, true_basis(p)))
}

/// `(e₁, e₂)` in `ℝᵖ`.
pub fn true_basis(p: usize) -> DMatrix<f64> {
    DMatrix::identity(p, 2)
}
