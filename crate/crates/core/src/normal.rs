//! Standard normal density, distribution function and quantile.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};

pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

// Acklam's rational approximation, relative error ~1.2e-9 before refinement.
const A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.383577518672690e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const D: [f64; 4] = [7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00, 3.754408661907416e+00];
const P_LOW: f64 = 0.02425;

fn rational(q: f64) -> f64 {
    if q < P_LOW {
        let r = (-2.0 * q.ln()).sqrt();
        (((((C[0] * r + C[1]) * r + C[2]) * r + C[3]) * r + C[4]) * r + C[5])
            / ((((D[0] * r + D[1]) * r + D[2]) * r + D[3]) * r + 1.0)
    } else {
        let r0 = q - 0.5;
        let r = r0 * r0;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * r0
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Inverse of the standard normal distribution function.
///
/// Evaluated on the lower half only, so `quantile(q) == -quantile(1 - q)`
/// holds exactly. One Halley step on the distribution function follows the
/// rational approximation.
pub fn quantile(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParams(format!("quantile level must lie in (0,1), got {q}")));
    }
    if q == 0.5 {
        return Ok(0.0);
    }
    if q > 0.5 {
        return Ok(-lower_quantile(1.0 - q));
    }
    Ok(lower_quantile(q))
}

fn lower_quantile(q: f64) -> f64 {
    let x = rational(q);
    let e = cdf(x) - q;
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_symmetry() {
        assert_eq!(quantile(0.5).unwrap(), 0.0);
        // 1 - q rounds for q < 1/2; compare through the exactly representable complement
        for q in [1e-12, 1e-6, 0.01, 0.2, 0.3, 0.4999] {
            let upper = 1.0 - q;
            assert_eq!(quantile(upper).unwrap(), -quantile(1.0 - upper).unwrap());
        }
    }

    #[test]
    fn one_sigma() {
        // Phi(1) = 0.841344746068543 from erf(1/sqrt 2)
        let q = 0.5 * (1.0 + libm::erf(1.0 / SQRT_2));
        assert!((quantile(q).unwrap() - 1.0).abs() < 1e-12);
        assert!((quantile(0.8413447461).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn inverts_cdf() {
        for k in 0..=240 {
            let lower = 10f64.powf(-12.0 + k as f64 * 11.7 / 240.0);
            for q in [lower, 1.0 - lower] {
                let x = quantile(q).unwrap();
                // first-order error in x from the residual in the distribution function
                let tail = if q < 0.5 { q } else { 1.0 - q };
                let resid = (0.5 * libm::erfc(x.abs() / SQRT_2) - tail).abs();
                assert!(resid / pdf(x) < 1e-10, "q={q} x={x}");
            }
        }
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(quantile(0.0).is_err());
        assert!(quantile(1.0).is_err());
        assert!(quantile(f64::NAN).is_err());
    }
}
