//! Extreme-value statistics of sampled fields.

use serde::Serialize;

use crate::classes::ClassKernels;
use crate::error::{Error, Result};
use crate::gauss::{indicator_cov, mills_sf, normal_sf};
use crate::greens::{greens_infinite, greens_origin};
use crate::operators::{CovarianceMatrix, CovarianceRole};
use crate::sampler::{stream_rng, FieldLaw, FieldSampleBatch};
use crate::tree::{distance_class_counts, RegularTree, TreeParams};

/// Probe grid for every CDF-level comparison.
pub const THETA_PROBES: [f64; 4] = [-1.0, 0.0, 1.0, 2.0];

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.575_829_303_548_900_4;

/// Poisson mass below which the pmf is truncated in distances.
pub const POISSON_TAIL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScalingConstants {
    pub m: u32,
    pub n: u32,
    pub vertex_count: f64,
    pub g00: f64,
    pub a_n: f64,
    pub b_n: f64,
    pub big_a: f64,
    pub big_b: f64,
}

impl ScalingConstants {
    /// `b_n = sqrt(G(o,o)) [sqrt(2 log N) - (log log N + log 4π) / (2 sqrt(2 log N))]`,
    /// `a_n = G(o,o)/b_n`, `B_n = b_n / sqrt(G(o,o))`, `A_n = 1/B_n`.
    pub fn new(params: TreeParams) -> Result<Self> {
        let count = params.vertex_count_f64();
        if count < 3.0 {
            return Err(Error::InvalidArgument(format!(
                "scaling constants need N >= 3, got N = {count}"
            )));
        }
        let g00 = greens_origin(params.m)?;
        let l = count.ln();
        let root = (2.0 * l).sqrt();
        let big_b = root - (l.ln() + (4.0 * std::f64::consts::PI).ln()) / (2.0 * root);
        let b_n = g00.sqrt() * big_b;
        Ok(Self {
            m: params.m,
            n: params.n,
            vertex_count: count,
            g00,
            a_n: g00 / b_n,
            b_n,
            big_a: 1.0 / big_b,
            big_b,
        })
    }

    /// `u_n(θ) = A_n θ + B_n`, the unit-variance threshold.
    pub fn threshold(&self, theta: f64) -> f64 {
        self.big_a * theta + self.big_b
    }

    fn params(&self) -> TreeParams {
        TreeParams {
            m: self.m,
            n: self.n,
        }
    }
}

pub fn gumbel_cdf(theta: f64) -> f64 {
    (-(-theta).exp()).exp()
}

/// `λ_n = N Φ̄(u_n(θ))`.
pub fn lambda_n(params: TreeParams, theta: f64) -> Result<f64> {
    let k = ScalingConstants::new(params)?;
    Ok(k.vertex_count * normal_sf(k.threshold(theta)))
}

/// `λ_n` with the Mills-ratio tail `φ(u)/u` in place of the exact tail.
pub fn lambda_n_mills(params: TreeParams, theta: f64) -> Result<f64> {
    let k = ScalingConstants::new(params)?;
    Ok(k.vertex_count * mills_sf(k.threshold(theta)))
}

pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("KS distance of an empty sample".into()));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("KS distance of a sample with NaN".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            ((i + 1) as f64 / n - f).abs().max((f - i as f64 / n).abs())
        })
        .fold(0.0, f64::max))
}

fn check_batch(batch: &FieldSampleBatch, k: &ScalingConstants) -> Result<()> {
    if batch.params != k.params() {
        return Err(Error::LawMismatch(format!(
            "batch on (m={}, n={}) with constants for (m={}, n={})",
            batch.params.m, batch.params.n, k.m, k.n
        )));
    }
    Ok(())
}

/// Per-sample `(max φ - b_n)/a_n`, or `(max ψ - B_n)/A_n` for the
/// normalized law.
pub fn rescaled_maxima(batch: &FieldSampleBatch, k: &ScalingConstants) -> Result<Vec<f64>> {
    check_batch(batch, k)?;
    let (a, b) = match batch.law {
        FieldLaw::FiniteNormalized => (k.big_a, k.big_b),
        _ => (k.a_n, k.b_n),
    };
    Ok(batch.row_maxima().into_iter().map(|x| (x - b) / a).collect())
}

pub fn empirical_cdf(values: &[f64], theta: f64) -> f64 {
    values.iter().filter(|v| **v <= theta).count() as f64 / values.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanCi {
    pub est: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Sample mean with a normal-approximation interval of half-width `z` standard errors.
pub fn mean_ci(values: &[f64], z: f64) -> Result<MeanCi> {
    if values.len() < 2 {
        return Err(Error::InvalidArgument(
            "confidence interval needs at least two values".into(),
        ));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let half = z * (var / n).sqrt();
    Ok(MeanCi {
        est: mean,
        lo: mean - half,
        hi: mean + half,
    })
}

/// `E[max_x φ_x] / sqrt(2 log N)` with a 99% interval.
pub fn expected_max_ratio(batch: &FieldSampleBatch) -> Result<MeanCi> {
    if batch.count() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let scale = (2.0 * batch.params.vertex_count_f64().ln()).sqrt();
    let ci = mean_ci(&batch.row_maxima(), Z99)?;
    Ok(MeanCi {
        est: ci.est / scale,
        lo: ci.lo / scale,
        hi: ci.hi / scale,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SteinChen {
    pub lambda: f64,
    /// `Σ_x P(ψ_x > u)²`.
    pub tail_squares: f64,
    /// `Σ_{x≠y} |Cov(1{ψ_x > u}, 1{ψ_y > u})|`.
    pub covariance_sum: f64,
    pub bound: f64,
}

impl SteinChen {
    fn new(lambda: f64, tail_squares: f64, covariance_sum: f64) -> Self {
        let factor = if lambda > 0.0 {
            -(-lambda).exp_m1() / lambda
        } else {
            1.0
        };
        Self {
            lambda,
            tail_squares,
            covariance_sum,
            bound: factor * (tail_squares + covariance_sum),
        }
    }
}

/// Correlations `r_k = G(k)/G(o,o)` for `k = 0..=kmax`.
pub fn correlation_profile(m: u32, kmax: u32) -> Result<Vec<f64>> {
    let g00 = greens_origin(m)?;
    (0..=kmax).map(|k| Ok(greens_infinite(m, k)? / g00)).collect()
}

/// Stein–Chen bound for the infinite-volume field, aggregating pairs by
/// distance through the exact counts `C_k`.
pub fn stein_chen_bound_infinite(params: TreeParams, theta: f64) -> Result<SteinChen> {
    let k = ScalingConstants::new(params)?;
    let u = k.threshold(theta);
    let p = normal_sf(u);
    let counts = distance_class_counts(params).counts;
    let r = correlation_profile(params.m, 2 * params.n)?;
    let mut cov_sum = 0.0;
    for (d, &c) in counts.iter().enumerate().skip(1) {
        cov_sum += c as f64 * indicator_cov(r[d], u)?.abs();
    }
    Ok(SteinChen::new(
        k.vertex_count * p,
        k.vertex_count * p * p,
        cov_sum,
    ))
}

/// Stein–Chen bound for the normalized finite-volume field from the pair
/// classes of `G_n`.
pub fn stein_chen_bound_classes(kernels: &ClassKernels, theta: f64) -> Result<SteinChen> {
    let k = ScalingConstants::new(kernels.params)?;
    let u = k.threshold(theta);
    let p = normal_sf(u);
    let diag = kernels.diagonal();
    let mut cov_sum = 0.0;
    for c in &kernels.classes {
        if c.depth_x == c.depth_y && c.depth_x == c.depth_lca {
            continue;
        }
        let r = c.g / (diag[c.depth_x as usize] * diag[c.depth_y as usize]).sqrt();
        cov_sum += c.count as f64 * indicator_cov(r.clamp(-1.0, 1.0), u)?.abs();
    }
    Ok(SteinChen::new(
        k.vertex_count * p,
        k.vertex_count * p * p,
        cov_sum,
    ))
}

/// Stein–Chen bound over all pairs of a covariance matrix, after scaling
/// it to unit variances.
pub fn stein_chen_bound_matrix(cov: &CovarianceMatrix, theta: f64) -> Result<SteinChen> {
    let k = ScalingConstants::new(cov.params)?;
    let u = k.threshold(theta);
    let p = normal_sf(u);
    let sd: Vec<f64> = cov.diagonal().into_iter().map(f64::sqrt).collect();
    let mut cov_sum = 0.0;
    for x in 0..cov.dim() {
        for y in 0..x {
            let r = cov.get(x, y) / (sd[x] * sd[y]);
            cov_sum += 2.0 * indicator_cov(r.clamp(-1.0, 1.0), u)?.abs();
        }
    }
    let n = cov.dim() as f64;
    Ok(SteinChen::new(n * p, n * p * p, cov_sum))
}

/// `W_n` per sample: exceedances of `u_n(θ)` by the unit-variance heights.
pub fn exceedance_counts(batch: &FieldSampleBatch, k: &ScalingConstants, theta: f64) -> Result<Vec<u32>> {
    check_batch(batch, k)?;
    let u = k.threshold(theta);
    // unit-variance field: ψ itself, or φ / sqrt(G(o,o))
    let level = match batch.law {
        FieldLaw::FiniteNormalized => u,
        _ => u * k.g00.sqrt(),
    };
    Ok((0..batch.count())
        .map(|i| batch.row(i).iter().filter(|v| **v > level).count() as u32)
        .collect())
}

fn poisson_pmf(lambda: f64, k: u32) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let k = k as f64;
    (-lambda + k * lambda.ln() - libm::lgamma(k + 1.0)).exp()
}

/// Total variation between the empirical law of `counts` and `Poi(λ)`.
pub fn poisson_tv(counts: &[u32], lambda: f64) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::InvalidArgument("empty exceedance sample".into()));
    }
    let observed_max = counts.iter().copied().max().unwrap_or(0);
    let mut hist = vec![0usize; observed_max as usize + 1];
    for &c in counts {
        hist[c as usize] += 1;
    }
    let n = counts.len() as f64;
    let mut tv = 0.0;
    let mut mass = 0.0;
    let mut k = 0u32;
    loop {
        let pk = poisson_pmf(lambda, k);
        let emp = hist.get(k as usize).map_or(0.0, |h| *h as f64 / n);
        tv += (emp - pk).abs();
        mass += pk;
        if k >= observed_max && k as f64 >= lambda && pk < POISSON_TAIL {
            break;
        }
        k += 1;
    }
    Ok(0.5 * (tv + (1.0 - mass).max(0.0)))
}

pub fn exceedance_poisson_tv(batch: &FieldSampleBatch, k: &ScalingConstants, theta: f64) -> Result<f64> {
    let counts = exceedance_counts(batch, k, theta)?;
    let lambda = k.vertex_count * normal_sf(k.threshold(theta));
    poisson_tv(&counts, lambda)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ZeroExceedance {
    pub empirical: f64,
    pub poisson: f64,
    /// Standard error of the empirical frequency.
    pub mc_error: f64,
}

impl ZeroExceedance {
    pub fn gap(&self) -> f64 {
        (self.empirical - self.poisson).abs()
    }
}

/// `P̂(W_n = 0)` against `e^{-λ}`.
pub fn zero_exceedance(counts: &[u32], lambda: f64) -> Result<ZeroExceedance> {
    if counts.is_empty() {
        return Err(Error::InvalidArgument("empty exceedance sample".into()));
    }
    let n = counts.len() as f64;
    let p = counts.iter().filter(|c| **c == 0).count() as f64 / n;
    Ok(ZeroExceedance {
        empirical: p,
        poisson: (-lambda).exp(),
        mc_error: (p * (1.0 - p) / n).sqrt(),
    })
}

/// Largest `|R_n(x,y)|` over distinct pairs.
pub fn max_offdiagonal_correlation(kernels: &ClassKernels) -> f64 {
    let diag = kernels.diagonal();
    kernels
        .classes
        .iter()
        .filter(|c| !(c.depth_x == c.depth_y && c.depth_x == c.depth_lca))
        .map(|c| (c.g / (diag[c.depth_x as usize] * diag[c.depth_y as usize]).sqrt()).abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SudakovFernique {
    /// `min_y G_n(y,y) - max_{y≠y'} G_n(y,y')` over the separated set.
    pub gamma: f64,
    pub set_size: usize,
    pub field: MeanCi,
    pub iid: MeanCi,
}

impl SudakovFernique {
    /// Whether the field mean is at least the i.i.d. mean within `sigmas`
    /// joint standard errors.
    pub fn holds(&self, sigmas: f64) -> bool {
        let se = |c: &MeanCi| (c.hi - c.lo) / (2.0 * Z99);
        let joint = (se(&self.field).powi(2) + se(&self.iid).powi(2)).sqrt();
        self.field.est >= self.iid.est - sigmas * joint
    }
}

/// Compares `E[max over U_n]` of the finite-volume field with `|U_n|`
/// i.i.d. `N(0, γ)` heights.
pub fn sudakov_fernique_check(
    tree: &RegularTree,
    gn: &CovarianceMatrix,
    batch: &FieldSampleBatch,
    iid_samples: usize,
    seed: u64,
) -> Result<SudakovFernique> {
    if gn.role != CovarianceRole::Finite || batch.law != FieldLaw::Finite {
        return Err(Error::LawMismatch(
            "comparison needs G_n and a finite-volume batch".into(),
        ));
    }
    let set = tree.separated_leaf_set()?;
    let min_var = set.iter().map(|&y| gn.get(y, y)).fold(f64::INFINITY, f64::min);
    let mut max_cov = f64::NEG_INFINITY;
    for (i, &y) in set.iter().enumerate() {
        for &z in &set[..i] {
            max_cov = max_cov.max(gn.get(y, z));
        }
    }
    let gamma = min_var - max_cov;
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "comparison variance {gamma} is not positive"
        )));
    }
    let field_max: Vec<f64> = (0..batch.count())
        .map(|i| set.iter().map(|&y| batch.row(i)[y]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let sd = gamma.sqrt();
    let iid_max: Vec<f64> = (0..iid_samples)
        .map(|r| {
            use rand_distr::{Distribution, StandardNormal};
            let mut rng = stream_rng(seed, r as u64);
            (0..set.len())
                .map(|_| sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    Ok(SudakovFernique {
        gamma,
        set_size: set.len(),
        field: mean_ci(&field_max, Z99)?,
        iid: mean_ci(&iid_max, Z99)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExtremesReport {
    pub m: u32,
    pub n: u32,
    pub law: FieldLaw,
    pub theta: Vec<f64>,
    pub ks: f64,
    pub empirical_cdf: Vec<f64>,
    pub lambda_n: Vec<f64>,
    pub tv: Vec<f64>,
    /// `None` for the raw finite-volume law, whose heights are not unit variance.
    pub stein_chen_bound: Vec<Option<f64>>,
    pub expected_max_ratio: MeanCi,
    pub seed: u64,
    pub samples: usize,
    pub jitter: f64,
}

/// Rescaled maxima, Gumbel fit, exceedance statistics and bounds for one batch.
pub fn extremes_report(batch: &FieldSampleBatch, thetas: &[f64]) -> Result<(ExtremesReport, Vec<f64>)> {
    let k = ScalingConstants::new(batch.params)?;
    let maxima = rescaled_maxima(batch, &k)?;
    let ks = ks_distance(&maxima, gumbel_cdf)?;
    let kernels = match batch.law {
        FieldLaw::FiniteNormalized => Some(crate::classes::class_kernels(batch.params)?),
        _ => None,
    };
    let mut lambda = Vec::with_capacity(thetas.len());
    let mut tv = Vec::with_capacity(thetas.len());
    let mut bound = Vec::with_capacity(thetas.len());
    for &theta in thetas {
        lambda.push(lambda_n(batch.params, theta)?);
        tv.push(exceedance_poisson_tv(batch, &k, theta)?);
        bound.push(match batch.law {
            FieldLaw::Infinite => Some(stein_chen_bound_infinite(batch.params, theta)?.bound),
            FieldLaw::FiniteNormalized => {
                Some(stein_chen_bound_classes(kernels.as_ref().expect("built above"), theta)?.bound)
            }
            FieldLaw::IidSurrogate => {
                let p = normal_sf(k.threshold(theta));
                Some(SteinChen::new(k.vertex_count * p, k.vertex_count * p * p, 0.0).bound)
            }
            FieldLaw::Finite => None,
        });
    }
    let report = ExtremesReport {
        m: batch.params.m,
        n: batch.params.n,
        law: batch.law,
        theta: thetas.to_vec(),
        ks,
        empirical_cdf: thetas.iter().map(|t| empirical_cdf(&maxima, *t)).collect(),
        lambda_n: lambda,
        tv,
        stein_chen_bound: bound,
        expected_max_ratio: expected_max_ratio(batch)?,
        seed: batch.seed,
        samples: batch.count(),
        jitter: batch.jitter,
    };
    Ok((report, maxima))
}
