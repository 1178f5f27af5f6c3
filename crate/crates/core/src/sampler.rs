//! Gaussian field sampling on `V_n`.
//!
//! Row `r` of a batch is `L z_r`, where `z_r` is drawn from the ChaCha
//! stream `(seed, r)`. Rows are produced in fixed-size chunks by a
//! sequential GEMM, so a batch is bit-identical for any thread count.

use std::fmt;
use std::str::FromStr;

use faer::{Accum, MatMut, MatRef, Par};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::greens::{greens_infinite, greens_origin};
use crate::linalg::{Cholesky, DenseMatrix};
use crate::operators::{finite_covariance, CovarianceMatrix, CovarianceRole};
use crate::tree::{RegularTree, TreeParams};

/// Rows generated per GEMM call.
pub const CHUNK_ROWS: usize = 256;

/// Jitter ladder `ε = 10^k · max diag` for `k = -14..=-8`.
const JITTER_EXPONENTS: std::ops::RangeInclusive<i32> = -14..=-8;

/// Generator for replicate `stream` of a run seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldLaw {
    /// Infinite-volume covariance `G` restricted to `V_n`.
    Infinite,
    /// Finite-volume covariance `G_n`.
    Finite,
    /// `G_n` divided through by `sqrt(G_n(x,x))`.
    FiniteNormalized,
    /// Independent `N(0, G(o,o))` heights, the classical reference for maxima.
    IidSurrogate,
}

impl FieldLaw {
    pub const ALL: [FieldLaw; 4] = [
        FieldLaw::Infinite,
        FieldLaw::Finite,
        FieldLaw::FiniteNormalized,
        FieldLaw::IidSurrogate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FieldLaw::Infinite => "infinite",
            FieldLaw::Finite => "finite",
            FieldLaw::FiniteNormalized => "finite-normalized",
            FieldLaw::IidSurrogate => "iid-surrogate",
        }
    }
}

impl fmt::Display for FieldLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FieldLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FieldLaw::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown law {s:?}")))
    }
}

/// `G(d(x, y))` on `V_n × V_n`.
pub fn restricted_infinite_covariance(tree: &RegularTree, cap: usize) -> Result<CovarianceMatrix> {
    if tree.len() > cap {
        return Err(Error::CapExceeded {
            n: tree.len(),
            cap,
        });
    }
    let by_distance = (0..=2 * tree.n())
        .map(|d| greens_infinite(tree.m(), d))
        .collect::<Result<Vec<_>>>()?;
    let mut matrix = DenseMatrix::zeros(tree.len(), tree.len());
    for x in 0..tree.len() {
        for y in 0..=x {
            let v = by_distance[tree.distance_unchecked(x, y) as usize];
            matrix.set(x, y, v);
            matrix.set(y, x, v);
        }
    }
    Ok(CovarianceMatrix {
        role: CovarianceRole::Restricted,
        params: tree.params(),
        matrix,
        residual: None,
    })
}

/// `G(o,o) I`.
pub fn iid_surrogate_covariance(params: TreeParams, cap: usize) -> Result<CovarianceMatrix> {
    let n = params
        .vertex_count_u128()
        .filter(|&n| n <= cap as u128)
        .ok_or(Error::CapExceeded {
            n: params.vertex_count_f64().min(usize::MAX as f64) as usize,
            cap,
        })? as usize;
    let mut matrix = DenseMatrix::zeros(n, n);
    matrix.add_diagonal(greens_origin(params.m)?);
    Ok(CovarianceMatrix {
        role: CovarianceRole::Iid,
        params,
        matrix,
        residual: None,
    })
}

pub fn law_covariance(tree: &RegularTree, law: FieldLaw, cap: usize) -> Result<CovarianceMatrix> {
    match law {
        FieldLaw::Infinite => restricted_infinite_covariance(tree, cap),
        FieldLaw::Finite | FieldLaw::FiniteNormalized => finite_covariance(tree, cap),
        FieldLaw::IidSurrogate => iid_surrogate_covariance(tree.params(), cap),
    }
}

#[derive(Clone, Debug)]
enum Factor {
    Diagonal(Vec<f64>),
    Lower(Cholesky),
}

#[derive(Clone, Debug)]
pub struct GaussianSampler {
    factor: Factor,
    dim: usize,
    /// Diagonal shift added before factorization (0 when none was needed).
    pub jitter: f64,
}

impl GaussianSampler {
    pub fn new(cov: &DenseMatrix) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::DimensionMismatch {
                left: cov.rows(),
                right: cov.cols(),
            });
        }
        let dim = cov.rows();
        let diagonal = (0..dim).all(|i| (0..dim).all(|j| i == j || cov.get(i, j) == 0.0));
        if diagonal {
            let d = cov.diagonal();
            if let Some(pivot) = d.iter().position(|v| !(*v > 0.0)) {
                return Err(Error::NotPositiveDefinite { pivot });
            }
            return Ok(Self {
                factor: Factor::Diagonal(d.into_iter().map(f64::sqrt).collect()),
                dim,
                jitter: 0.0,
            });
        }
        let (chol, jitter) = factor_with_jitter(cov)?;
        Ok(Self {
            factor: Factor::Lower(chol),
            dim,
            jitter,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `L L^T`.
    pub fn reconstruct(&self) -> DenseMatrix {
        match &self.factor {
            Factor::Diagonal(s) => {
                DenseMatrix::from_fn(self.dim, self.dim, |i, j| if i == j { s[i] * s[i] } else { 0.0 })
            }
            Factor::Lower(c) => c.reconstruct(),
        }
    }

    /// `count × N` draws, row `r` from stream `(seed, r)`.
    pub fn sample(&self, count: usize, seed: u64) -> DenseMatrix {
        let n = self.dim;
        let mut out = vec![0.0; count * n];
        if n > 0 {
            out.par_chunks_mut(CHUNK_ROWS * n)
                .enumerate()
                .for_each(|(chunk, block)| self.fill_chunk(chunk * CHUNK_ROWS, block, seed));
        }
        DenseMatrix::from_row_major(count, n, out).expect("buffer sized to count * N")
    }

    fn fill_chunk(&self, first_row: usize, block: &mut [f64], seed: u64) {
        let n = self.dim;
        let rows = block.len() / n;
        let mut z = vec![0.0; block.len()];
        for (r, row) in z.chunks_mut(n).enumerate() {
            let mut rng = stream_rng(seed, (first_row + r) as u64);
            for v in row.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
        }
        match &self.factor {
            Factor::Diagonal(s) => {
                for (dst, (src, scale)) in block.iter_mut().zip(z.iter().zip(s.iter().cycle())) {
                    *dst = src * scale;
                }
            }
            Factor::Lower(c) => {
                let zr = MatRef::from_row_major_slice(&z, rows, n);
                let out = MatMut::from_row_major_slice_mut(block, rows, n);
                // rows of Z L^T are L z_r
                faer::linalg::matmul::matmul(
                    out,
                    Accum::Replace,
                    zr,
                    c.lower_faer().transpose(),
                    1.0,
                    Par::Seq,
                );
            }
        }
    }
}

fn factor_with_jitter(cov: &DenseMatrix) -> Result<(Cholesky, f64)> {
    if let Ok(c) = Cholesky::factor(cov) {
        return Ok((c, 0.0));
    }
    let scale = cov.diagonal().into_iter().fold(0.0, f64::max);
    let mut eps = 0.0;
    for k in JITTER_EXPONENTS {
        eps = 10f64.powi(k) * scale;
        let mut shifted = cov.clone();
        shifted.add_diagonal(eps);
        if let Ok(c) = Cholesky::factor(&shifted) {
            log::warn!("covariance factorized after diagonal jitter {eps:e}");
            return Ok((c, eps));
        }
    }
    Err(Error::JitterExceeded { eps })
}

#[derive(Clone, Debug)]
pub struct FieldSampleBatch {
    pub params: TreeParams,
    pub law: FieldLaw,
    pub seed: u64,
    pub jitter: f64,
    /// Row = one configuration, column = vertex in BFS order.
    pub samples: DenseMatrix,
}

impl FieldSampleBatch {
    pub fn count(&self) -> usize {
        self.samples.rows()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.samples.row(i)
    }

    pub fn row_maxima(&self) -> Vec<f64> {
        (0..self.count())
            .map(|i| self.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }
}

pub fn sample_fields(
    cov: &CovarianceMatrix,
    law: FieldLaw,
    count: usize,
    seed: u64,
) -> Result<FieldSampleBatch> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    let sampler = GaussianSampler::new(&cov.matrix)?;
    Ok(FieldSampleBatch {
        params: cov.params,
        law,
        seed,
        jitter: sampler.jitter,
        samples: sampler.sample(count, seed),
    })
}

/// `ψ_x = φ_x / sqrt(G_n(x,x))`.
pub fn normalize_field(batch: &FieldSampleBatch, gn: &CovarianceMatrix) -> Result<FieldSampleBatch> {
    if batch.law != FieldLaw::Finite || gn.role != CovarianceRole::Finite {
        return Err(Error::LawMismatch(format!(
            "normalization needs a finite-volume batch and G_n, got {} and {:?}",
            batch.law, gn.role
        )));
    }
    if batch.params != gn.params {
        return Err(Error::DimensionMismatch {
            left: batch.dim(),
            right: gn.dim(),
        });
    }
    let diag = gn.diagonal();
    if let Some(x) = diag.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::Internal(format!("nonpositive variance at vertex {x}")));
    }
    let scale: Vec<f64> = diag.iter().map(|v| 1.0 / v.sqrt()).collect();
    let n = batch.dim();
    let data = batch
        .samples
        .as_slice()
        .iter()
        .enumerate()
        .map(|(k, v)| v * scale[k % n])
        .collect();
    Ok(FieldSampleBatch {
        params: batch.params,
        law: FieldLaw::FiniteNormalized,
        seed: batch.seed,
        jitter: batch.jitter,
        samples: DenseMatrix::from_row_major(batch.count(), n, data)?,
    })
}

/// Builds the covariance of `law` on `tree` and samples it.
pub fn sample_law(
    tree: &RegularTree,
    law: FieldLaw,
    count: usize,
    seed: u64,
    cap: usize,
) -> Result<FieldSampleBatch> {
    let cov = law_covariance(tree, law, cap)?;
    match law {
        FieldLaw::FiniteNormalized => {
            let raw = sample_fields(&cov, FieldLaw::Finite, count, seed)?;
            normalize_field(&raw, &cov)
        }
        _ => sample_fields(&cov, law, count, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::DEFAULT_COVARIANCE_CAP;
    use crate::tree::build_tree;

    fn tree(m: u32, n: u32) -> RegularTree {
        build_tree(TreeParams::new(m, n).unwrap()).unwrap()
    }

    fn column_moments(batch: &FieldSampleBatch, x: usize) -> (f64, f64) {
        let n = batch.count() as f64;
        let mean = (0..batch.count()).map(|i| batch.row(i)[x]).sum::<f64>() / n;
        let var = (0..batch.count())
            .map(|i| (batch.row(i)[x] - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        (mean, var)
    }

    fn cross(batch: &FieldSampleBatch, x: usize, y: usize) -> f64 {
        (0..batch.count())
            .map(|i| batch.row(i)[x] * batch.row(i)[y])
            .sum::<f64>()
            / batch.count() as f64
    }

    #[test]
    fn law_names_round_trip() {
        for law in FieldLaw::ALL {
            assert_eq!(law.name().parse::<FieldLaw>().unwrap(), law);
            assert_eq!(
                serde_json::to_string(&law).unwrap(),
                format!("\"{}\"", law.name())
            );
        }
        assert!("gaussian".parse::<FieldLaw>().is_err());
    }

    #[test]
    fn restricted_entries() {
        let t = tree(3, 3);
        let c = restricted_infinite_covariance(&t, DEFAULT_COVARIANCE_CAP).unwrap();
        assert!(c.diagonal().iter().all(|v| *v == 10.0));
        assert_eq!(c.get(0, 1), 8.0);
        let t = tree(4, 0);
        let c = restricted_infinite_covariance(&t, DEFAULT_COVARIANCE_CAP).unwrap();
        assert_eq!(c.get(0, 0), 3.75);
    }

    #[test]
    fn identity_variances() {
        let cov = DenseMatrix::identity(3);
        let s = GaussianSampler::new(&cov).unwrap();
        let batch = FieldSampleBatch {
            params: TreeParams::new(3, 0).unwrap(),
            law: FieldLaw::IidSurrogate,
            seed: 1,
            jitter: 0.0,
            samples: s.sample(100_000, 1),
        };
        for x in 0..3 {
            let (mean, var) = column_moments(&batch, x);
            assert!(mean.abs() < 5.0 / (1e5f64).sqrt());
            assert!((0.98..=1.02).contains(&var), "{var}");
        }
    }

    #[test]
    fn reproducible_and_chunk_independent() {
        let t = tree(3, 3);
        let a = sample_law(&t, FieldLaw::Infinite, 600, 42, DEFAULT_COVARIANCE_CAP).unwrap();
        let b = sample_law(&t, FieldLaw::Infinite, 600, 42, DEFAULT_COVARIANCE_CAP).unwrap();
        assert_eq!(a.samples, b.samples);
        // a prefix of a larger batch is the smaller batch
        let c = sample_law(&t, FieldLaw::Infinite, 300, 42, DEFAULT_COVARIANCE_CAP).unwrap();
        assert_eq!(c.samples.as_slice(), &a.samples.as_slice()[..300 * t.len()]);
        let d = sample_law(&t, FieldLaw::Infinite, 300, 43, DEFAULT_COVARIANCE_CAP).unwrap();
        assert_ne!(c.samples, d.samples);
    }

    #[test]
    fn factor_reconstructs_covariance() {
        let t = tree(3, 4);
        let c = restricted_infinite_covariance(&t, DEFAULT_COVARIANCE_CAP).unwrap();
        let s = GaussianSampler::new(&c.matrix).unwrap();
        assert!(s.reconstruct().max_abs_diff(&c.matrix).unwrap() <= 1e-8);
    }

    #[test]
    fn infinite_law_covariances() {
        let t = tree(3, 4);
        let batch = sample_law(&t, FieldLaw::Infinite, 40_000, 9, DEFAULT_COVARIANCE_CAP).unwrap();
        let count = batch.count() as f64;
        // pairs at distance 2 in different shapes: siblings, and grandparent
        let siblings = (1, 2);
        let grand = (0, t.children(1).start);
        for (x, y) in [siblings, grand] {
            assert_eq!(t.graph_distance(x, y).unwrap(), 2);
            let est = cross(&batch, x, y);
            let sd = ((100.0 + 5.5 * 5.5) / count).sqrt();
            assert!((est - 5.5).abs() < 5.0 * sd, "({x},{y}) {est}");
        }
    }

    #[test]
    fn gaussian_shape() {
        let t = tree(3, 2);
        let batch = sample_law(&t, FieldLaw::Finite, 100_000, 3, DEFAULT_COVARIANCE_CAP).unwrap();
        let n = batch.count() as f64;
        for x in [0, 4, 9] {
            let (mean, var) = column_moments(&batch, x);
            let sd = var.sqrt();
            let z: Vec<f64> = (0..batch.count()).map(|i| (batch.row(i)[x] - mean) / sd).collect();
            let skew = z.iter().map(|v| v.powi(3)).sum::<f64>() / n;
            let kurt = z.iter().map(|v| v.powi(4)).sum::<f64>() / n - 3.0;
            assert!(skew.abs() < 5.0 * (6.0 / n).sqrt(), "skew {skew}");
            assert!(kurt.abs() < 5.0 * (24.0 / n).sqrt(), "kurtosis {kurt}");
        }
    }

    #[test]
    fn normalized_unit_variance() {
        let t = tree(3, 4);
        let batch =
            sample_law(&t, FieldLaw::FiniteNormalized, 100_000, 5, DEFAULT_COVARIANCE_CAP).unwrap();
        assert_eq!(batch.law, FieldLaw::FiniteNormalized);
        for x in 0..t.len() {
            let (_, var) = column_moments(&batch, x);
            assert!((0.97..=1.03).contains(&var), "x={x} {var}");
        }
    }

    #[test]
    fn normalization_single_vertex() {
        let t = tree(3, 0);
        let gn = finite_covariance(&t, DEFAULT_COVARIANCE_CAP).unwrap();
        let raw = sample_fields(&gn, FieldLaw::Finite, 4, 0).unwrap();
        let psi = normalize_field(&raw, &gn).unwrap();
        for i in 0..4 {
            assert!((psi.row(i)[0] - raw.row(i)[0] / 0.75f64.sqrt()).abs() < 1e-15);
        }
        assert!(normalize_field(&psi, &gn).is_err());
    }

    #[test]
    fn jitter_recovers_semidefinite() {
        // rank one: [1 1; 1 1]
        let cov = DenseMatrix::from_row_major(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let s = GaussianSampler::new(&cov).unwrap();
        assert!(s.jitter > 0.0 && s.jitter <= 1e-8);
        let bad = DenseMatrix::from_row_major(2, 2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(matches!(
            GaussianSampler::new(&bad),
            Err(Error::JitterExceeded { .. })
        ));
    }
}
