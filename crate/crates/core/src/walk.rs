//! Simple random walk on the m-regular tree.
//!
//! `d(S_k, y)` is itself a Markov chain on `{0, 1, 2, ...}`: from `j >= 1`
//! exactly one neighbor is closer to `y`, so the chain moves down with
//! probability `1/m` and up with probability `(m-1)/m`; from `0` it always
//! moves to `1`. The k-step probabilities `P_x(S_k = y)` are therefore
//! computed exactly by dynamic programming over distances.

use crate::error::{Error, Result};
use crate::operators::DirichletLaplacian;
use crate::tree::RegularTree;

/// Spectral radius `2 sqrt(m-1) / m` of the walk operator on `T_m`.
///
/// `P_x(S_k = y) <= rho^k` for every pair, which drives all tail cutoffs.
pub fn spectral_radius(m: u32) -> f64 {
    2.0 * ((m - 1) as f64).sqrt() / m as f64
}

/// Hard cap on series horizons.
pub const MAX_HORIZON: usize = 200_000;

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceChainSeries {
    pub m: u32,
    pub d: u32,
    /// `p[k] = P_x(S_k = y)` with `d(x, y) = d`, for `k = 0..=horizon`.
    pub p: Vec<f64>,
    /// Total chain mass after each step (tracked on the untruncated range).
    pub mass: Vec<f64>,
}

impl DistanceChainSeries {
    pub fn horizon(&self) -> usize {
        self.p.len() - 1
    }

    /// `sum_k w(k) p_k` over the stored horizon.
    pub fn weighted_sum(&self, mut w: impl FnMut(usize) -> f64) -> f64 {
        self.p.iter().enumerate().map(|(k, p)| w(k) * p).sum()
    }
}

pub fn pk_series(m: u32, d: u32, horizon: usize) -> Result<DistanceChainSeries> {
    if m < 3 {
        return Err(Error::Degree(m));
    }
    if horizon > MAX_HORIZON {
        return Err(Error::Truncation {
            tol: 0.0,
            cap: MAX_HORIZON,
        });
    }
    let down = 1.0 / m as f64;
    let up = 1.0 - down;
    let width = d as usize + horizon + 2;
    let mut cur = vec![0.0; width];
    let mut next = vec![0.0; width];
    cur[d as usize] = 1.0;

    let mut p = Vec::with_capacity(horizon + 1);
    let mut mass = Vec::with_capacity(horizon + 1);
    p.push(cur[0]);
    mass.push(1.0);
    for k in 1..=horizon {
        // states reachable at step k-1 lie within d + k - 1 of the origin
        let reach = (d as usize + k).min(width - 1);
        next[..=reach].fill(0.0);
        next[1] += cur[0];
        for j in 1..reach {
            let v = cur[j];
            if v != 0.0 {
                next[j - 1] += v * down;
                next[j + 1] += v * up;
            }
        }
        std::mem::swap(&mut cur, &mut next);
        p.push(cur[0]);
        mass.push(cur[..=reach].iter().sum());
    }
    Ok(DistanceChainSeries { m, d, p, mass })
}

/// Upper bound on `sum_{k > horizon} (k+1)^power r^k`, or `None` while the
/// terms are still increasing at `horizon + 1`.
pub fn geometric_tail_bound(power: u32, ratio: f64, horizon: usize) -> Option<f64> {
    let k = (horizon + 1) as f64;
    let growth = ((k + 2.0) / (k + 1.0)).powi(power as i32) * ratio;
    if growth >= 1.0 {
        return None;
    }
    let first = (k + 1.0).powi(power as i32) * ratio.powf(k);
    Some(first / (1.0 - growth))
}

/// Smallest horizon whose tail bound is below `tol`.
pub fn tail_horizon(power: u32, ratio: f64, tol: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&ratio) || tol <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "tail rule needs ratio in [0,1) and tol > 0 (ratio = {ratio}, tol = {tol})"
        )));
    }
    let mut lo = 0usize;
    let mut hi = 16usize;
    let ok = |k: usize| geometric_tail_bound(power, ratio, k).is_some_and(|b| b < tol);
    while !ok(hi) {
        lo = hi;
        hi *= 2;
        if hi > MAX_HORIZON {
            return Err(Error::Truncation {
                tol,
                cap: MAX_HORIZON,
            });
        }
    }
    // terms are eventually monotone, so the predicate is monotone past lo
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Absolute tolerance used for infinite walk series.
pub const SERIES_TAIL_TOL: f64 = 1e-12;

/// `sum_k (k+1) P_x(S_k = y)` by the series with the geometric tail cut.
pub fn greens_series(m: u32, d: u32) -> Result<f64> {
    let horizon = tail_horizon(1, spectral_radius(m), SERIES_TAIL_TOL)?;
    let s = pk_series(m, d, horizon)?;
    Ok(s.weighted_sum(|k| (k + 1) as f64))
}

#[derive(Clone, Debug)]
pub struct ExitTimeMoments {
    /// `E_x[tau_0]` per vertex.
    pub first: Vec<f64>,
    /// `E_x[tau_0^2]` per vertex.
    pub second: Vec<f64>,
    /// `max |(I-Q)u - 1| / max |1|`, and the same for the second system.
    pub residuals: [f64; 2],
}

impl ExitTimeMoments {
    /// `max_x E_x[tau_0] / d(x, ∂₁V_n)`.
    pub fn first_moment_ratio(&self, tree: &RegularTree) -> f64 {
        ratio_by_boundary(tree, &self.first, 1)
    }

    /// `max_x E_x[tau_0^2] / d(x, ∂₁V_n)^2`.
    pub fn second_moment_ratio(&self, tree: &RegularTree) -> f64 {
        ratio_by_boundary(tree, &self.second, 2)
    }
}

fn ratio_by_boundary(tree: &RegularTree, values: &[f64], power: i32) -> f64 {
    values
        .iter()
        .enumerate()
        .map(|(x, v)| v / ((tree.n() + 1 - tree.depth(x)) as f64).powi(power))
        .fold(0.0, f64::max)
}

/// First and second moments of the exit time from `V_n`.
///
/// `u = E[tau_0]` solves `(I-Q)u = 1` and `v = E[tau_0^2]` solves
/// `(I-Q)v = 1 + 2Qu`, where `Q` is the walk killed on leaving `V_n`.
pub fn exit_time_moments(tree: &RegularTree) -> Result<ExitTimeMoments> {
    let lap = DirichletLaplacian::new(tree);
    let ones = vec![1.0; tree.len()];
    let first = lap.solve(&ones);
    let q_first = lap.killed_step(&first);
    let rhs: Vec<f64> = q_first.iter().map(|v| 1.0 + 2.0 * v).collect();
    let second = lap.solve(&rhs);

    let residual = |x: &[f64], b: &[f64]| {
        let ax = lap.apply(x);
        let worst = ax.iter().zip(b).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        worst / b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    };
    let residuals = [residual(&first, &ones), residual(&second, &rhs)];
    const SOLVE_TOL: f64 = 1e-10;
    if residuals.iter().any(|r| !(*r <= SOLVE_TOL)) {
        return Err(Error::Internal(format!(
            "exit-time solve residuals {residuals:?} above {SOLVE_TOL:e}"
        )));
    }
    Ok(ExitTimeMoments {
        first,
        second,
        residuals,
    })
}
