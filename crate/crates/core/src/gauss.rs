//! Standard normal tails and exceedance-indicator covariances.

use std::f64::consts::PI;

use libm::erfc;

use crate::error::{Error, Result};

/// `P(Z > x)` for standard normal `Z`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

pub fn normal_cdf(x: f64) -> f64 {
    normal_sf(-x)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Mills-ratio approximation `φ(x)/x` of the upper tail, for `x > 0`.
pub fn mills_sf(x: f64) -> f64 {
    normal_pdf(x) / x
}

/// Absolute error target for [`indicator_cov`].
pub const INDICATOR_COV_TOL: f64 = 1e-12;

/// `Cov(1{X > u}, 1{Y > u})` for standard normals with correlation `r`.
///
/// The bivariate density at `(u, u)` is the `r`-derivative of the orthant
/// probability, so the covariance is `∫_0^r φ₂(u,u;ρ) dρ`. Substituting
/// `ρ = sin t` removes the endpoint singularity at `ρ = ±1`:
/// `∫_0^{asin r} exp(-u²/(1+sin t)) / (2π) dt`.
pub fn indicator_cov(r: f64, u: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&r) {
        return Err(Error::InvalidArgument(format!(
            "correlation must lie in [-1, 1], got {r}"
        )));
    }
    if r == 0.0 {
        return Ok(0.0);
    }
    let u2 = u * u;
    let integrand = |t: f64| {
        let s = 1.0 + t.sin();
        if s <= 0.0 {
            if u2 == 0.0 {
                1.0 / (2.0 * PI)
            } else {
                0.0
            }
        } else {
            (-u2 / s).exp() / (2.0 * PI)
        }
    };
    let out = quadrature::double_exponential::integrate(integrand, 0.0, r.asin(), INDICATOR_COV_TOL);
    Ok(out.integral)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn tails() {
        assert!((normal_sf(0.0) - 0.5).abs() < 1e-16);
        // reference values of the upper tail
        assert!((normal_sf(1.0) - 0.158_655_253_931_457_05).abs() < 1e-15);
        assert!((normal_sf(5.0) / 2.866_515_718_791_939e-7 - 1.0).abs() < 1e-12);
        assert!((normal_cdf(1.0) + normal_sf(1.0) - 1.0).abs() < 1e-16);
        assert!(mills_sf(5.0) > normal_sf(5.0));
        assert!((mills_sf(8.0) / normal_sf(8.0) - 1.0).abs() < 0.02);
    }

    #[test]
    fn indicator_cov_edges() {
        assert_eq!(indicator_cov(0.0, 1.0).unwrap(), 0.0);
        for u in [0.0, 0.5, 1.0, 2.5] {
            let p = normal_sf(u);
            let full = indicator_cov(1.0, u).unwrap();
            assert!((full - p * (1.0 - p)).abs() < 1e-12, "u={u}");
            // X = -Y never has both coordinates above u >= 0
            let anti = indicator_cov(-1.0, u).unwrap();
            assert!((anti + p * p).abs() < 1e-12, "u={u}");
        }
        assert!(indicator_cov(1.01, 0.0).is_err());
    }

    #[test]
    fn indicator_cov_at_zero_threshold() {
        // Sheppard: P(X>0, Y>0) = 1/4 + asin(r)/(2π)
        for r in [-0.9, -0.3, 0.2, 0.7, 0.99] {
            let got = indicator_cov(r, 0.0).unwrap();
            let expect = f64::asin(r) / (2.0 * PI);
            assert!((got - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn indicator_cov_monte_carlo() {
        let (r, u) = (0.5, 1.0);
        let draws = 2_000_000;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let c = (1.0f64 - r * r).sqrt();
        let mut both = 0u64;
        for _ in 0..draws {
            let x: f64 = StandardNormal.sample(&mut rng);
            let z: f64 = StandardNormal.sample(&mut rng);
            let y = r * x + c * z;
            both += u64::from(x > u && y > u);
        }
        let p = both as f64 / draws as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        let expect = indicator_cov(r, u).unwrap() + normal_sf(u).powi(2);
        assert!((p - expect).abs() < 4.0 * se, "{p} vs {expect}");
    }
}
