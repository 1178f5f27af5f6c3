//! Dirichlet operators on `V_n`, the finite-volume covariances, and the
//! explicit bound formulas for the error term `E_n`.

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, DenseMatrix};
use crate::tree::{build_tree, RegularTree, TreeParams};

/// Largest `N` for which dense covariances are formed.
pub const DEFAULT_COVARIANCE_CAP: usize = 20_000;

/// Residual tolerance for `A G = I` identity checks.
pub const IDENTITY_TOL: f64 = 1e-8;

/// Smallest `m` treated as the large-degree regime for hard bound assertions.
pub const LARGE_M_THRESHOLD: u32 = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    /// `I - Q`, the walk killed on leaving `V_n`.
    DirichletLaplacian,
    /// `Δ²` restricted to `V_n × V_n` (zero boundary data on `∂₂V_n`).
    DirichletBilaplacian,
}

/// Sparse symmetric operator in CSR layout.
#[derive(Clone, Debug)]
pub struct OperatorMatrix {
    pub kind: OperatorKind,
    pub params: TreeParams,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

pub fn assemble_operator(tree: &RegularTree, kind: OperatorKind) -> OperatorMatrix {
    let m = tree.m() as f64;
    let mut row_ptr = Vec::with_capacity(tree.len() + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0);
    for x in 0..tree.len() {
        let mut row: Vec<(usize, f64)> = Vec::new();
        match kind {
            OperatorKind::DirichletLaplacian => {
                row.push((x, 1.0));
                row.extend(tree.neighbors(x).map(|y| (y, -1.0 / m)));
            }
            OperatorKind::DirichletBilaplacian => {
                row.push((x, 1.0 + 1.0 / m));
                for y in tree.neighbors(x) {
                    row.push((y, -2.0 / m));
                    row.extend(
                        tree.neighbors(y)
                            .filter(|&z| z != x)
                            .map(|z| (z, 1.0 / (m * m))),
                    );
                }
            }
        }
        row.sort_unstable_by_key(|e| e.0);
        for (c, v) in row {
            cols.push(c);
            vals.push(v);
        }
        row_ptr.push(cols.len());
    }
    OperatorMatrix {
        kind,
        params: tree.params(),
        row_ptr,
        cols,
        vals,
    }
}

impl OperatorMatrix {
    pub fn dim(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.dim(), self.dim());
        for i in 0..self.dim() {
            for (j, v) in self.row(i) {
                out.set(i, j, v);
            }
        }
        out
    }
}

/// `max |Δ²_Λ - (Δ_{V_{n+2}})² restricted to V_n|`, multiplying the explicit
/// graph Laplacian on the larger ball.
pub fn stencil_discrepancy(tree: &RegularTree) -> Result<f64> {
    let big = build_tree(TreeParams::new(tree.m(), tree.n() + 2)?)?;
    let m = tree.m() as f64;
    let mut lap = DenseMatrix::identity(big.len());
    for x in 0..big.len() {
        for y in big.neighbors(x) {
            lap.set(x, y, -1.0 / m);
        }
    }
    let square = lap.matmul(&lap)?;
    let op = assemble_operator(tree, OperatorKind::DirichletBilaplacian);
    let mut worst: f64 = 0.0;
    // BFS order makes V_n a prefix of V_{n+2}
    for i in 0..tree.len() {
        for j in 0..tree.len() {
            worst = worst.max((square.get(i, j) - op.get(i, j)).abs());
        }
    }
    Ok(worst)
}

/// `I - Q` with an O(N) direct solver by leaf-to-root elimination.
///
/// Every vertex at a given depth has the same eliminated pivot, so the
/// pivots are stored per depth.
#[derive(Clone, Debug)]
pub struct DirichletLaplacian<'a> {
    tree: &'a RegularTree,
    pivots: Vec<f64>,
}

impl<'a> DirichletLaplacian<'a> {
    pub fn new(tree: &'a RegularTree) -> Self {
        let n = tree.n() as usize;
        let m = tree.m() as f64;
        let mut pivots = vec![1.0; n + 1];
        for k in (0..n).rev() {
            let children = tree.params().branching(k as u32) as f64;
            pivots[k] = 1.0 - children / (m * m * pivots[k + 1]);
        }
        Self { tree, pivots }
    }

    pub fn pivots(&self) -> &[f64] {
        &self.pivots
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let t = self.tree;
        let m = t.m() as f64;
        let pivot = |v: usize| self.pivots[t.depth(v) as usize];
        let mut r = b.to_vec();
        for v in (0..t.len()).rev() {
            let acc: f64 = t.children(v).map(|c| r[c] / pivot(c)).sum();
            r[v] += acc / m;
        }
        let mut x = vec![0.0; t.len()];
        for v in 0..t.len() {
            let up = t.parent(v).map_or(0.0, |p| x[p]);
            x[v] = (r[v] + up / m) / pivot(v);
        }
        x
    }

    /// `Q x`.
    pub fn killed_step(&self, x: &[f64]) -> Vec<f64> {
        let m = self.tree.m() as f64;
        (0..self.tree.len())
            .map(|v| self.tree.neighbors(v).map(|w| x[w]).sum::<f64>() / m)
            .collect()
    }

    /// `(I - Q) x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let q = self.killed_step(x);
        x.iter().zip(q).map(|(a, b)| a - b).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CovarianceRole {
    /// `(Δ²_Λ)^{-1}`.
    Finite,
    /// `(I - Q)^{-2}`.
    Bulk,
    /// `Ḡ_n - G_n`.
    Error,
    /// Infinite-volume `G` restricted to `V_n`.
    Restricted,
    /// `G(o,o) I`.
    Iid,
}

#[derive(Clone, Debug)]
pub struct CovarianceMatrix {
    pub role: CovarianceRole,
    pub params: TreeParams,
    pub matrix: DenseMatrix,
    /// `‖A C - I‖_max` for the defining operator, where one exists.
    pub residual: Option<f64>,
}

impl CovarianceMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.matrix.get(x, y)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.matrix.diagonal()
    }
}

fn check_cap(tree: &RegularTree, cap: usize) -> Result<()> {
    if tree.len() > cap {
        return Err(Error::CapExceeded {
            n: tree.len(),
            cap,
        });
    }
    Ok(())
}

/// `max |apply(row_i) - e_i|` over rows of a symmetric matrix.
fn identity_residual(c: &DenseMatrix, mut apply: impl FnMut(&[f64]) -> Vec<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..c.rows() {
        let r = apply(c.row(i));
        for (j, v) in r.into_iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((v - target).abs());
        }
    }
    worst
}

/// `G_n = (Δ²_Λ)^{-1}` by dense Cholesky.
pub fn finite_covariance(tree: &RegularTree, cap: usize) -> Result<CovarianceMatrix> {
    check_cap(tree, cap)?;
    let op = assemble_operator(tree, OperatorKind::DirichletBilaplacian);
    let chol = Cholesky::factor(&op.to_dense())
        .map_err(|e| Error::Internal(format!("bilaplacian factorization failed: {e}")))?;
    log::debug!(
        "bilaplacian N={} min pivot {:.3e}",
        tree.len(),
        chol.min_pivot()
    );
    let matrix = chol.inverse();
    let residual = identity_residual(&matrix, |v| op.apply(v));
    if !(residual <= IDENTITY_TOL) {
        return Err(Error::Internal(format!(
            "bilaplacian inverse residual {residual:e} above {IDENTITY_TOL:e}"
        )));
    }
    Ok(CovarianceMatrix {
        role: CovarianceRole::Finite,
        params: tree.params(),
        matrix,
        residual: Some(residual),
    })
}

/// `Ḡ_n = (I - Q)^{-2}`, one pair of tree solves per column.
pub fn gbar_matrix(tree: &RegularTree, cap: usize) -> Result<CovarianceMatrix> {
    check_cap(tree, cap)?;
    let lap = DirichletLaplacian::new(tree);
    let n = tree.len();
    let mut matrix = DenseMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = lap.solve(&lap.solve(&e));
        e[j] = 0.0;
        for (i, v) in col.into_iter().enumerate() {
            matrix.set(i, j, v);
        }
    }
    matrix.symmetrize();
    let residual = identity_residual(&matrix, |v| lap.apply(&lap.apply(v)));
    if !(residual <= IDENTITY_TOL) {
        return Err(Error::Internal(format!(
            "(I-Q)^2 inverse residual {residual:e} above {IDENTITY_TOL:e}"
        )));
    }
    Ok(CovarianceMatrix {
        role: CovarianceRole::Bulk,
        params: tree.params(),
        matrix,
        residual: Some(residual),
    })
}

/// `E_n = Ḡ_n - G_n`.
pub fn error_matrix(gn: &CovarianceMatrix, gbar: &CovarianceMatrix) -> Result<CovarianceMatrix> {
    if gn.role != CovarianceRole::Finite || gbar.role != CovarianceRole::Bulk {
        return Err(Error::InvalidArgument(format!(
            "error matrix needs (G_n, Gbar_n), got ({:?}, {:?})",
            gn.role, gbar.role
        )));
    }
    if gn.params != gbar.params {
        return Err(Error::DimensionMismatch {
            left: gn.dim(),
            right: gbar.dim(),
        });
    }
    Ok(CovarianceMatrix {
        role: CovarianceRole::Error,
        params: gn.params,
        matrix: gbar.matrix.sub(&gn.matrix)?,
        residual: None,
    })
}

/// `min_x G_n(x, x)`.
pub fn variance_floor(gn: &CovarianceMatrix) -> f64 {
    gn.diagonal().into_iter().fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct BoundConstants {
    pub m: u32,
    pub c1: f64,
    pub c2: f64,
}

impl BoundConstants {
    pub fn new(m: u32) -> Result<Self> {
        if m < 3 {
            return Err(Error::Degree(m));
        }
        let mf = m as f64;
        let s = (mf - 1.0).sqrt();
        let c1 = (mf - 1.0).powf(1.5) / ((mf - 2.0) * (s - 1.0)) + mf / (mf - 2.0);
        let c2 = 2.0 * (mf - 1.0).powi(2) / (mf - 2.0).powi(3) + mf * (mf - 1.0) / (mf - 2.0).powi(2);
        Ok(Self { m, c1, c2 })
    }

    /// `C_1(m) / m`; the geometric ratio of the excursion series.
    pub fn ratio(&self) -> f64 {
        self.c1 / self.m as f64
    }

    pub fn check_regime(&self) -> Result<()> {
        if self.ratio() >= 1.0 {
            return Err(Error::Regime {
                ratio: self.ratio(),
            });
        }
        Ok(())
    }

    /// `1 - C_1 C_2 / ((m-1)(1 - C_1/m))`.
    pub fn explicit_variance_floor(&self) -> Result<f64> {
        self.check_regime()?;
        Ok(1.0 - self.c1 * self.c2 / ((self.m - 1) as f64 * (1.0 - self.ratio())))
    }
}

/// `dx² dy² min((m-1)^{-dx}, (m-1)^{-dy})`, the crude bound on `E_n²`
/// without its constant.
pub fn en_crude_bound_shape(m: u32, dx: u32, dy: u32) -> Result<f64> {
    if dx == 0 || dy == 0 {
        return Err(Error::InvalidArgument(
            "boundary distances are at least 1".into(),
        ));
    }
    let s = (m - 1) as f64;
    let (dxf, dyf) = (dx as f64, dy as f64);
    Ok(dxf * dxf * dyf * dyf * s.powi(-(dx.max(dy) as i32)))
}

/// Two-term bound on `|E_n(x, y)|` with `d = d(x, y)` and boundary
/// distances `dx`, `dy`.
pub fn en_finer_bound(m: u32, d: u32, dx: u32, dy: u32, j0: u32) -> Result<f64> {
    if dx == 0 || dy == 0 {
        return Err(Error::InvalidArgument(
            "boundary distances are at least 1".into(),
        ));
    }
    let k = BoundConstants::new(m)?;
    k.check_regime()?;
    let mf = m as f64;
    let s = mf - 1.0;
    let near = if j0 == 0 || d == 0 {
        0.0
    } else {
        let j = j0 as f64;
        let log = j.ln()
            + (4.0 * j + 2.0) * (2.0 * j + 1.0).ln()
            + 4.0 * j * j * 3f64.ln()
            + (2.0 * j + 1.0) * (4.0 * s / (mf - 2.0)).ln()
            + (s / (mf - 2.0)).ln()
            + (2.0 * j + 1.0) * (d as f64).ln()
            - d as f64 * s.ln();
        log.exp()
    };
    let far = k.c1 * k.c2 / (1.0 - k.ratio())
        * dx as f64
        * dy as f64
        * s.powi(-(dx.max(dy) as i32))
        * k.ratio().powi(j0 as i32);
    Ok(near + far)
}

/// Continuous extension `F(t)` of `B_k`, with `L = ln t`:
/// `L (2L+1)^{4L+2} 3^{4L²} (4(m-1)/(m-2))^{2L+1} (m-1)/(m-2) t^{2L+1} (m-1)^{-t}
///  + C (C_1/m)^L`.
pub fn bk_continuous(m: u32, t: f64, c: f64) -> Result<f64> {
    if !(t > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "B_k needs log k > 0, got k = {t}"
        )));
    }
    let k = BoundConstants::new(m)?;
    let mf = m as f64;
    let s = mf - 1.0;
    let l = t.ln();
    let log = l.ln()
        + (4.0 * l + 2.0) * (2.0 * l + 1.0).ln()
        + 4.0 * l * l * 3f64.ln()
        + (2.0 * l + 1.0) * (4.0 * s / (mf - 2.0)).ln()
        + (s / (mf - 2.0)).ln()
        + (2.0 * l + 1.0) * t.ln()
        - t * s.ln();
    Ok(log.exp() + c * k.ratio().powf(l))
}

pub fn bk_bound(m: u32, k: u64, c: f64) -> Result<f64> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("B_k needs k >= 2, got {k}")));
    }
    bk_continuous(m, k as f64, c)
}

/// Start of the final decreasing stretch of `F` on `[2, t_max]`: the last
/// grid point where a central difference of `F` is nonnegative, plus one
/// step. `None` if `F` is still increasing at `t_max`.
pub fn bk_decrease_onset(m: u32, c: f64, t_max: f64, step: f64) -> Result<Option<f64>> {
    if !(step > 0.0) || !(t_max > 2.0 + 2.0 * step) {
        return Err(Error::InvalidArgument(format!(
            "need step > 0 and t_max > 2 + 2 step (t_max = {t_max}, step = {step})"
        )));
    }
    let h = step / 2.0;
    let mut onset = 2.0;
    let mut t = 2.0 + step;
    while t <= t_max - step {
        let slope = bk_continuous(m, t + h, c)? - bk_continuous(m, t - h, c)?;
        if slope >= 0.0 {
            onset = t + step;
        }
        t += step;
    }
    Ok((onset < t_max - step).then_some(onset))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree(m: u32, n: u32) -> RegularTree {
        build_tree(TreeParams::new(m, n).unwrap()).unwrap()
    }

    #[test]
    fn stencil_values() {
        let t = tree(3, 0);
        let op = assemble_operator(&t, OperatorKind::DirichletBilaplacian);
        assert!((op.get(0, 0) - 4.0 / 3.0).abs() < 1e-15);

        let t = tree(3, 2);
        let op = assemble_operator(&t, OperatorKind::DirichletBilaplacian);
        assert!((op.get(0, 1) + 2.0 / 3.0).abs() < 1e-15);
        let grandchild = t.children(1).start;
        assert!((op.get(0, grandchild) - 1.0 / 9.0).abs() < 1e-15);
        assert!((op.get(1, 2) - 1.0 / 9.0).abs() < 1e-15);
        assert_eq!(op.dense_asymmetry(), 0.0);
    }

    impl OperatorMatrix {
        fn dense_asymmetry(&self) -> f64 {
            self.to_dense().asymmetry()
        }
    }

    #[test]
    fn stencil_matches_explicit_square() {
        for (m, n) in [(3, 0), (3, 1), (3, 3), (4, 2), (5, 1)] {
            assert!(stencil_discrepancy(&tree(m, n)).unwrap() < 1e-15);
        }
    }

    #[test]
    fn tree_solver_matches_dense() {
        let t = tree(4, 3);
        let lap = DirichletLaplacian::new(&t);
        let b: Vec<f64> = (0..t.len()).map(|i| (i as f64).sin()).collect();
        let x = lap.solve(&b);
        let back = lap.apply(&x);
        for (u, v) in back.iter().zip(&b) {
            assert!((u - v).abs() < 1e-13);
        }
        let dense = assemble_operator(&t, OperatorKind::DirichletLaplacian).to_dense();
        let inv = Cholesky::factor(&dense).unwrap().inverse();
        for i in 0..t.len() {
            let expect: f64 = (0..t.len()).map(|j| inv.get(i, j) * b[j]).sum();
            assert!((expect - x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn one_vertex_covariances() {
        for m in [3u32, 4, 7] {
            let t = tree(m, 0);
            let g = finite_covariance(&t, DEFAULT_COVARIANCE_CAP).unwrap();
            let gbar = gbar_matrix(&t, DEFAULT_COVARIANCE_CAP).unwrap();
            let e = error_matrix(&g, &gbar).unwrap();
            let expect = m as f64 / (m as f64 + 1.0);
            assert!((g.get(0, 0) - expect).abs() < 1e-15);
            assert!((gbar.get(0, 0) - 1.0).abs() < 1e-15);
            assert!((e.get(0, 0) - (1.0 - expect)).abs() < 1e-15);
            assert!((variance_floor(&g) - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn gbar_matches_power_sum() {
        let t = tree(3, 2);
        let gbar = gbar_matrix(&t, DEFAULT_COVARIANCE_CAP).unwrap();
        let q = DenseMatrix::identity(t.len())
            .sub(&assemble_operator(&t, OperatorKind::DirichletLaplacian).to_dense())
            .unwrap();
        let mut power = DenseMatrix::identity(t.len());
        let mut total = 0.0f64;
        for k in 0..3000 {
            total += (k + 1) as f64 * power.get(0, 0);
            power = power.matmul(&q).unwrap();
        }
        assert!((total - gbar.get(0, 0)).abs() < 1e-10, "{total}");
    }

    #[test]
    fn covariance_identities_and_bounds() {
        for (m, n) in [(3, 4), (4, 3), (5, 2)] {
            let t = tree(m, n);
            let g = finite_covariance(&t, DEFAULT_COVARIANCE_CAP).unwrap();
            let gbar = gbar_matrix(&t, DEFAULT_COVARIANCE_CAP).unwrap();
            assert!(g.residual.unwrap() <= IDENTITY_TOL);
            assert!(gbar.residual.unwrap() <= IDENTITY_TOL);
            let e = error_matrix(&g, &gbar).unwrap();
            assert!(e.matrix.asymmetry() <= 1e-10);
            let mf = m as f64;
            let g00 = (mf - 1.0) * ((mf - 1.0).powi(2) + 1.0) / (mf - 2.0).powi(3);
            assert!(g.diagonal().iter().all(|v| *v <= g00));
        }
    }

    #[test]
    fn cap_is_enforced() {
        let t = tree(3, 4);
        assert!(matches!(
            finite_covariance(&t, 10),
            Err(Error::CapExceeded { cap: 10, .. })
        ));
    }

    #[test]
    fn root_variance_increases() {
        let mut prev = 0.0;
        for n in 1..=6 {
            let g = finite_covariance(&tree(3, n), DEFAULT_COVARIANCE_CAP).unwrap();
            assert!(g.get(0, 0) > prev && g.get(0, 0) < 10.0);
            prev = g.get(0, 0);
        }
    }

    #[test]
    fn constants() {
        let k = BoundConstants::new(3).unwrap();
        assert!((k.c1 - (7.0 + 2.0 * 2f64.sqrt())).abs() < 1e-12);
        assert!((k.c2 - 14.0).abs() < 1e-12);
        assert!(matches!(k.check_regime(), Err(Error::Regime { .. })));
        let k = BoundConstants::new(25).unwrap();
        assert!(k.ratio() < 0.1);
        assert!(k.explicit_variance_floor().unwrap() > 0.8);
    }

    #[test]
    fn crude_shape() {
        assert_eq!(en_crude_bound_shape(3, 1, 1).unwrap(), 0.5);
        assert_eq!(en_crude_bound_shape(3, 3, 5).unwrap(), 7.03125);
        assert!(en_crude_bound_shape(3, 0, 1).is_err());
    }

    #[test]
    fn finer_bound_terms() {
        assert!(matches!(
            en_finer_bound(3, 1, 1, 1, 0),
            Err(Error::Regime { .. })
        ));
        let k = BoundConstants::new(25).unwrap();
        let expect = k.c1 * k.c2 / (1.0 - k.ratio()) * 6.0 / 24f64.powi(3);
        let got = en_finer_bound(25, 4, 2, 3, 0).unwrap();
        assert!((got - expect).abs() < 1e-15 * expect.max(1.0));
        assert!(en_finer_bound(25, 4, 2, 3, 1).unwrap() > got * k.ratio());
    }

    #[test]
    fn bk_values() {
        assert!(bk_bound(25, 1, 1.0).is_err());
        assert!(bk_bound(25, 10_000, 1.0).unwrap() < 1e-6);
        // B_k grows past k = 10 before it starts decreasing
        assert!(bk_bound(25, 15, 1.0).unwrap() > bk_bound(25, 10, 1.0).unwrap());
        let onset = bk_decrease_onset(25, 1.0, 200.0, 0.25).unwrap().unwrap();
        assert!(onset > 10.0 && onset < 40.0, "{onset}");
        let start = onset.ceil() as u64;
        let top = bk_bound(25, start, 1.0).unwrap();
        for k in start..2000 {
            assert!(bk_bound(25, k, 1.0).unwrap() <= top);
        }
    }
}
