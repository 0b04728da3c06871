//! Standard normal distribution helpers.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::SQRT_2;

/// Φ(x).
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// 1 − Φ(x), computed without cancellation in the upper tail.
pub fn upper_tail(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Φ⁻¹(p). Returns ±∞ at the endpoints.
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    // one Halley step brings the rational approximation to full precision
    let d = density(x);
    if d == 0.0 {
        return x;
    }
    let u = (cdf(x) - p) / d;
    x - u / (1.0 + 0.5 * x * u)
}

/// The x with 1 − Φ(x) = p, accurate for small p.
pub fn upper_quantile(p: f64) -> f64 {
    -quantile(p)
}

pub fn density(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_and_anchored() {
        assert_eq!(cdf(0.0), 0.5);
        assert!((cdf(1.959963984540054) - 0.975).abs() < 1e-12);
        for &x in &[-3.0, -0.4, 0.0, 1.2, 5.5] {
            assert!((cdf(x) + cdf(-x) - 1.0).abs() < 1e-15);
            assert_eq!(upper_tail(x), cdf(-x));
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-12, 1e-5, 0.01, 0.3, 0.5, 0.77, 0.999] {
            let x = quantile(p);
            assert!((cdf(x) - p).abs() <= 1e-12 * p.max(1e-3), "p={p}");
        }
        assert_eq!(quantile(0.0), f64::NEG_INFINITY);
        assert_eq!(upper_quantile(0.0), f64::INFINITY);
        assert!((upper_tail(upper_quantile(1e-10)) / 1e-10 - 1.0).abs() < 1e-9);
    }
}
