//! Closed-form infinite-volume Green's functions on `T_m`.
//!
//! With `s(z) = sqrt(m² - 4(m-1)z²)` the generating function of the walk is
//! `Γ(x,y|z) = 2(m-1)/(m-2+s) · ((m-s)/(2(m-1)z))^d`. The second factor is
//! evaluated as `(2z/(m+s))^d`, which is the same quantity without the
//! cancellation near `z = 0`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::walk::{pk_series, spectral_radius, tail_horizon, MAX_HORIZON};

fn check_degree(m: u32) -> Result<f64> {
    if m < 3 {
        return Err(Error::Degree(m));
    }
    Ok(m as f64)
}

pub fn gamma_z(m: u32, d: u32, z: f64) -> Result<f64> {
    let mf = check_degree(m)?;
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::InvalidArgument(format!(
            "generating function evaluated for z in [0, 1], got {z}"
        )));
    }
    let s = (mf * mf - 4.0 * (mf - 1.0) * z * z).sqrt();
    let head = 2.0 * (mf - 1.0) / (mf - 2.0 + s);
    Ok(head * (2.0 * z / (mf + s)).powi(d as i32))
}

/// `g(1) = Γ(x,y|1) = 1 / ((m-2)(m-1)^{d-1})`.
pub fn g1(m: u32, d: u32) -> Result<f64> {
    let mf = check_degree(m)?;
    Ok(1.0 / ((mf - 2.0) * (mf - 1.0).powi(d as i32 - 1)))
}

/// `g'(1) / g(1) = (2(m-1) + d m (m-2)) / (m-2)²`.
pub fn g_log_derivative(m: u32, d: u32) -> Result<f64> {
    let mf = check_degree(m)?;
    Ok((2.0 * (mf - 1.0) + d as f64 * mf * (mf - 2.0)) / (mf - 2.0).powi(2))
}

/// `G(x,y) = ((d+1)m(m-2)+2) / ((m-2)³(m-1)^{d-1})` for `d = d(x,y)`.
pub fn greens_infinite(m: u32, d: u32) -> Result<f64> {
    let mf = check_degree(m)?;
    let num = (d as f64 + 1.0) * mf * (mf - 2.0) + 2.0;
    Ok(num / ((mf - 2.0).powi(3) * (mf - 1.0).powi(d as i32 - 1)))
}

/// The variant `((d+1)m(m-1)(m-2) - 2(m-1)) / ((m-2)³(m-1)^d)`; it differs
/// from [`greens_infinite`] and is kept for the discrepancy report.
pub fn greens_statement(m: u32, d: u32) -> Result<f64> {
    let mf = check_degree(m)?;
    let num = (d as f64 + 1.0) * mf * (mf - 1.0) * (mf - 2.0) - 2.0 * (mf - 1.0);
    Ok(num / ((mf - 2.0).powi(3) * (mf - 1.0).powi(d as i32)))
}

/// `G(o,o) = (m-1)((m-1)²+1) / (m-2)³`.
pub fn greens_origin(m: u32) -> Result<f64> {
    let mf = check_degree(m)?;
    Ok((mf - 1.0) * ((mf - 1.0).powi(2) + 1.0) / (mf - 2.0).powi(3))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GreensRow {
    pub d: u32,
    pub statement: f64,
    pub proof: f64,
    pub series: f64,
}

impl GreensRow {
    pub fn discrepancy(&self) -> f64 {
        (self.proof - self.series).abs()
    }
}

/// Both closed-form variants next to the walk series, for `d = 0..=max_d`.
pub fn greens_table(m: u32, max_d: u32) -> Result<Vec<GreensRow>> {
    (0..=max_d)
        .map(|d| {
            Ok(GreensRow {
                d,
                statement: greens_statement(m, d)?,
                proof: greens_infinite(m, d)?,
                series: crate::walk::greens_series(m, d)?,
            })
        })
        .collect()
}

fn falling(j: usize, k: u32) -> f64 {
    (0..k as usize).map(|i| j.saturating_sub(i) as f64).product()
}

/// `g^{(k)}(1) = Σ_j j(j-1)…(j-k+1) p_j` with relative truncation error at
/// most `tol`.
pub fn g_derivative_series(m: u32, d: u32, k: u32, tol: f64) -> Result<f64> {
    check_degree(m)?;
    if k == 0 {
        return Err(Error::InvalidArgument("derivative order k >= 1".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    let rho = spectral_radius(m);
    // falling(j, k) <= (j+1)^k, so the tail rule with power k applies
    let mut abs_tol = tol * g1(m, d)?;
    loop {
        let horizon = tail_horizon(k, rho, abs_tol).map_err(|_| Error::Truncation {
            tol,
            cap: MAX_HORIZON,
        })?;
        let series = pk_series(m, d, horizon)?;
        let value = series.weighted_sum(|j| falling(j, k));
        if abs_tol <= tol * value {
            return Ok(value);
        }
        abs_tol = tol * value;
    }
}

/// `3^{(k-1)²} (k-1)^{k-1} (4(m-1)/(m-2))^k (m-1)/(m-2) d^k (m-1)^{-d}`,
/// with `0^0 = 1`.
pub fn g_derivative_bound(m: u32, d: u32, k: u32) -> Result<f64> {
    let mf = check_degree(m)?;
    if k == 0 {
        return Err(Error::InvalidArgument("derivative order k >= 1".into()));
    }
    let km1 = (k - 1) as f64;
    let s = mf - 1.0;
    Ok(3f64.powf(km1 * km1)
        * km1.powi(k as i32 - 1)
        * (4.0 * s / (mf - 2.0)).powi(k as i32)
        * (s / (mf - 2.0))
        * (d as f64).powi(k as i32)
        * s.powi(-(d as i32)))
}

/// Largest power whose coefficients are guaranteed to fit (`34! < 2^128`).
pub const MAX_ALPHA_POWER: u32 = 34;

/// Coefficients of `k^ℓ = Σ_i α_i · k(k-1)…(k-i)` for `i = 0..ℓ`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AlphaTable {
    pub power: u32,
    pub coeffs: Vec<u128>,
}

pub fn alpha_coeffs(power: u32) -> Result<AlphaTable> {
    if power == 0 || power > MAX_ALPHA_POWER {
        return Err(Error::InvalidArgument(format!(
            "alpha table needs 1 <= l <= {MAX_ALPHA_POWER}, got {power}"
        )));
    }
    let mut coeffs = vec![1u128];
    for l in 2..=power as usize {
        let mut next = vec![0u128; l];
        for (i, slot) in next.iter_mut().enumerate() {
            let keep = coeffs.get(i).map_or(0, |a| (i as u128 + 1) * a);
            let shift = if i > 0 { coeffs[i - 1] } else { 0 };
            *slot = keep + shift;
        }
        coeffs = next;
    }
    Ok(AlphaTable { power, coeffs })
}

impl AlphaTable {
    /// `Σ_i α_i k(k-1)…(k-i)` in exact arithmetic.
    pub fn reconstruct(&self, k: u64) -> u128 {
        let mut falling = 1u128;
        let mut total = 0u128;
        for (i, a) in self.coeffs.iter().enumerate() {
            let factor = (k as u128).saturating_sub(i as u128);
            falling *= factor;
            total += a * falling;
        }
        total
    }
}
