use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

/// Minimum eye height for a target bit error rate, from
/// `BER = 0.5 * erfc((h - offset - sensitivity) / (sqrt(2) * sigma))`.
pub fn required_eye_height(ber: f64, sigma_noise: f64, residual_offset: f64, sensitivity: f64) -> Result<f64> {
    if ber == 0.0 {
        return Err(Error::InfiniteEyeHeight);
    }
    if !(ber > 0.0 && ber < 1.0) {
        return Err(Error::contract(format!("BER must lie in (0, 1), got {ber}")));
    }
    if !(sigma_noise > 0.0 && sigma_noise.is_finite()) {
        return Err(Error::contract(format!("noise sigma must be positive, got {sigma_noise}")));
    }
    let base = residual_offset + sensitivity;
    if ber == 0.5 {
        return Ok(base);
    }
    Ok(base + std::f64::consts::SQRT_2 * sigma_noise * erfc_inv(2.0 * ber))
}
