//! Quintic smoothing of the hinge loss.
//!
//! `H` ramps from 0 at `v = -1` to 1 at `v = 1`; the smoothed hinge is
//! `K_h(u) = u · H(u / h)` which equals `max(u, 0)` whenever `|u| ≥ h`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bandwidth of the smoothed hinge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothingKernel {
    h: f64,
}

impl SmoothingKernel {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidConfig(format!("bandwidth must be > 0, got {h}")));
        }
        Ok(SmoothingKernel { h })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// `K_h(u) = u H(u/h)`.
    pub fn loss(&self, u: f64) -> f64 {
        u * smooth_h(u / self.h)
    }

    /// `K_h'(u) = H(u/h) + (u/h) H'(u/h)`.
    pub fn loss_derivative(&self, u: f64) -> f64 {
        let v = u / self.h;
        smooth_h(v) + v * smooth_h_prime(v)
    }
}

/// `H(v)`: 0 for `v ≤ -1`, `1/2 + 15/16 (v - 2v³/3 + v⁵/5)` on `[-1, 1]`,
/// 1 for `v ≥ 1`.
pub fn smooth_h(v: f64) -> f64 {
    if v <= -1.0 {
        0.0
    } else if v >= 1.0 {
        1.0
    } else {
        let v2 = v * v;
        0.5 + 15.0 / 16.0 * v * (1.0 - v2 * (2.0 / 3.0 - v2 / 5.0))
    }
}

/// `H'(v) = 15/16 (1 - v²)²` on `[-1, 1]`, zero outside.
pub fn smooth_h_prime(v: f64) -> f64 {
    if v <= -1.0 || v >= 1.0 {
        0.0
    } else {
        let w = 1.0 - v * v;
        15.0 / 16.0 * w * w
    }
}

/// Bandwidth schedule for the refined iterations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// `max{10 √(p/n), 10 (p/m)^(2^(b-2)), 0.3}`.
    #[default]
    #[serde(alias = "sec6")]
    Practical,
    /// `max{n^(-1/2), m^(-2^(b-2))}`.
    #[serde(alias = "assumption7")]
    Asymptotic,
}

impl std::str::FromStr for BandwidthRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "practical" | "sec6" => Ok(BandwidthRule::Practical),
            "asymptotic" | "assumption7" => Ok(BandwidthRule::Asymptotic),
            other => Err(Error::InvalidConfig(format!("unknown bandwidth rule '{other}'"))),
        }
    }
}

/// Bandwidth at iteration `b` (1-based) for total size `n`, batch size `m`
/// and dimension `p`.
pub fn bandwidth_schedule(b: usize, n: usize, m: usize, p: usize, rule: BandwidthRule) -> f64 {
    let exponent = 2f64.powi(b as i32 - 2);
    let (n, m, p) = (n as f64, m as f64, p as f64);
    match rule {
        BandwidthRule::Practical => (10.0 * (p / n).sqrt())
            .max(10.0 * (p / m).powf(exponent))
            .max(0.3),
        BandwidthRule::Asymptotic => n.powf(-0.5).max(m.powf(-exponent)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn h_reference_values() {
        assert_eq!(smooth_h(-1.0), 0.0);
        assert_eq!(smooth_h(1.0), 1.0);
        assert_eq!(smooth_h(0.0), 0.5);
        assert_eq!(smooth_h_prime(0.0), 15.0 / 16.0);
        let expected = 0.5 + 15.0 / 16.0 * (0.5 - 1.0 / 12.0 + 1.0 / 160.0);
        assert_abs_diff_eq!(smooth_h(0.5), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(smooth_h(0.5), 0.89648, epsilon = 1e-5);
        assert_abs_diff_eq!(smooth_h_prime(0.5), 15.0 / 16.0 * 0.75 * 0.75, epsilon = 1e-15);
    }

    #[test]
    fn polynomial_meets_plateaus() {
        let inside = |v: f64| 0.5 + 15.0 / 16.0 * (v - 2.0 / 3.0 * v.powi(3) + v.powi(5) / 5.0);
        assert_abs_diff_eq!(inside(-1.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(inside(1.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(smooth_h_prime(1.0 - 1e-9), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn kernel_is_hinge_outside_band() {
        let k = SmoothingKernel::new(0.5).unwrap();
        assert_eq!(k.loss(1.0), 1.0);
        assert_eq!(k.loss(-0.7), 0.0);
        assert_eq!(k.loss(0.5), 0.5);
        assert!(SmoothingKernel::new(0.0).is_err());
    }

    #[test]
    fn bandwidth_examples() {
        let h = bandwidth_schedule(3, 30000, 60, 10, BandwidthRule::Practical);
        assert_eq!(h, 0.3);
        let h = bandwidth_schedule(2, 30000, 60, 10, BandwidthRule::Practical);
        assert_abs_diff_eq!(h, 10.0 / 6.0, epsilon = 1e-12);
        let h = bandwidth_schedule(2, 10_000, 100, 10, BandwidthRule::Asymptotic);
        assert_abs_diff_eq!(h, 0.01, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn h_is_monotone_and_derivative_matches(a in -1.5f64..1.5, d in 1e-4f64..0.5) {
            prop_assert!(smooth_h(a + d) >= smooth_h(a));
            let eps = 1e-6;
            let fd = (smooth_h(a + eps) - smooth_h(a - eps)) / (2.0 * eps);
            prop_assert!((fd - smooth_h_prime(a)).abs() < 1e-6);
        }

        #[test]
        fn kernel_derivative_matches_finite_difference(u in -2.0f64..2.0, h in 0.05f64..1.0) {
            let k = SmoothingKernel::new(h).unwrap();
            let eps = 1e-6;
            let fd = (k.loss(u + eps) - k.loss(u - eps)) / (2.0 * eps);
            prop_assert!((fd - k.loss_derivative(u)).abs() < 1e-5);
        }
    }
}
