//! Two-proportion z-test for comparing attack success rates.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Critical value used when none is given (one-sided, alpha = 0.057).
pub const DEFAULT_Z_ALPHA: f64 = 1.58;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZTest {
    pub p_l: f64,
    pub p_h: f64,
    pub m: u64,
    /// Pooled proportion of successes across both methods.
    pub pooled: f64,
    pub z: f64,
    pub z_alpha: f64,
    /// `z < -z_alpha`: the higher rate is significantly higher.
    pub reject: bool,
}

/// One-sided critical value `z_alpha` of the standard normal.
pub fn critical_value(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("significance level must lie in (0, 1)"));
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(n.inverse_cdf(1.0 - alpha))
}

/// `Z = (p_l - p_h) / sqrt(2 p (1 - p) / m)` with `p = (p_l + p_h) / 2`,
/// judged against [`DEFAULT_Z_ALPHA`].
pub fn two_proportion_z(p_l: f64, p_h: f64, m: u64) -> Result<ZTest> {
    two_proportion_z_with(p_l, p_h, m, DEFAULT_Z_ALPHA)
}

pub fn two_proportion_z_with(p_l: f64, p_h: f64, m: u64, z_alpha: f64) -> Result<ZTest> {
    if !(0.0..=1.0).contains(&p_l) || !(0.0..=1.0).contains(&p_h) {
        return Err(Error::invalid("proportions must lie in [0, 1]"));
    }
    if p_l > p_h {
        return Err(Error::invalid(format!("p_l = {p_l} exceeds p_h = {p_h}")));
    }
    if m == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    // successes X = p m on each side, pooled over 2m trials
    let pooled = (p_l + p_h) / 2.0;
    if pooled <= 0.0 || pooled >= 1.0 {
        return Err(Error::DegenerateVariance(pooled));
    }
    let z = (p_l - p_h) / (2.0 * pooled * (1.0 - pooled) / m as f64).sqrt();
    Ok(ZTest {
        p_l,
        p_h,
        m,
        pooled,
        z,
        z_alpha,
        reject: z < -z_alpha,
    })
}
