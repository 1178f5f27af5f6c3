//! Finite-volume kernels aggregated over pair classes.
//!
//! Automorphisms of `V_n` that fix the root and a source vertex `x` at depth
//! `a` act transitively on each cell `{y : depth y = b, depth lca(x,y) = c}`.
//! The solution of `A g = δ_x` for any operator commuting with them is
//! constant on cells, so `G_n`, `Ḡ_n` and the exit-time moments reduce to
//! linear systems with one unknown per cell. This reaches degrees where
//! `N` is far beyond dense storage (`m = 25`, `n = 8` has `N ≈ 2.6·10^11`).

use faer::linalg::solvers::Solve;
use faer::Mat;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::operators::en_finer_bound;
use crate::tree::{pair_classes, TreeParams};

/// Deepest ball handled by the quotient solver.
pub const MAX_CLASS_DEPTH: u32 = 40;

const QUOTIENT_TOL: f64 = 1e-10;

/// Cells of the quotient for a source at depth `a`, with their neighbor
/// multiplicities at graph distance one and two inside `V_n`.
struct Quotient {
    m: f64,
    cells: Vec<(u32, u32)>,
    index: Vec<Vec<Option<usize>>>,
    near: Vec<Vec<(usize, f64)>>,
    far: Vec<Vec<(usize, f64)>>,
}

impl Quotient {
    fn new(params: TreeParams, a: u32) -> Self {
        let n = params.n;
        let mut cells = Vec::new();
        let mut index = vec![vec![None; a as usize + 1]; n as usize + 1];
        for c in 0..=a {
            for b in c..=n {
                index[b as usize][c as usize] = Some(cells.len());
                cells.push((b, c));
            }
        }
        let id = |b: u32, c: u32| index[b as usize][c as usize].expect("cell exists");
        let near: Vec<Vec<(usize, f64)>> = cells
            .iter()
            .map(|&(b, c)| {
                let mut out = Vec::new();
                if b > 0 {
                    out.push((id(b - 1, c.min(b - 1)), 1.0));
                }
                if b < n {
                    let q = params.branching(b) as f64;
                    if b == c && c < a {
                        out.push((id(b + 1, b + 1), 1.0));
                        out.push((id(b + 1, c), q - 1.0));
                    } else {
                        out.push((id(b + 1, c), q));
                    }
                }
                out
            })
            .collect();
        let far = (0..cells.len())
            .map(|u| {
                let mut acc = vec![0.0; cells.len()];
                for &(w, cw) in &near[u] {
                    for &(z, cz) in &near[w] {
                        acc[z] += cw * cz;
                    }
                    // every neighbor leads straight back to u
                    acc[u] -= cw;
                }
                acc.into_iter()
                    .enumerate()
                    .filter(|e| e.1 != 0.0)
                    .collect()
            })
            .collect();
        Self {
            m: params.m as f64,
            cells,
            index,
            near,
            far,
        }
    }

    fn len(&self) -> usize {
        self.cells.len()
    }

    fn cell(&self, b: u32, c: u32) -> usize {
        self.index[b as usize][c as usize].expect("cell exists")
    }

    /// `I - Q` on cell functions.
    fn laplacian(&self) -> Mat<f64> {
        let m = self.m;
        let mut a = Mat::<f64>::identity(self.len(), self.len());
        for (u, row) in self.near.iter().enumerate() {
            for &(w, c) in row {
                a[(u, w)] -= c / m;
            }
        }
        a
    }

    /// `Δ²_Λ` on cell functions.
    fn bilaplacian(&self) -> Mat<f64> {
        let m = self.m;
        let mut a = Mat::<f64>::zeros(self.len(), self.len());
        for u in 0..self.len() {
            a[(u, u)] += 1.0 + 1.0 / m;
            for &(w, c) in &self.near[u] {
                a[(u, w)] -= 2.0 * c / m;
            }
            for &(w, c) in &self.far[u] {
                a[(u, w)] += c / (m * m);
            }
        }
        a
    }

    fn step(&self, x: &[f64]) -> Vec<f64> {
        self.near
            .iter()
            .map(|row| row.iter().map(|&(w, c)| c * x[w]).sum::<f64>() / self.m)
            .collect()
    }
}

/// Solves `a x = b` and returns `x` with the relative residual.
fn solve(a: &Mat<f64>, b: &[f64]) -> (Vec<f64>, f64) {
    let rhs = Mat::<f64>::from_fn(b.len(), 1, |i, _| b[i]);
    let x = a.partial_piv_lu().solve(&rhs);
    let ax = a * &x;
    let scale = b.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(f64::MIN_POSITIVE);
    let residual = (0..b.len()).fold(0.0f64, |acc, i| acc.max((ax[(i, 0)] - b[i]).abs())) / scale;
    ((0..b.len()).map(|i| x[(i, 0)]).collect(), residual)
}

fn check_depth(params: TreeParams) -> Result<()> {
    if params.n > MAX_CLASS_DEPTH {
        return Err(Error::InvalidArgument(format!(
            "class solver handles n <= {MAX_CLASS_DEPTH}, got {}",
            params.n
        )));
    }
    Ok(())
}

fn check_residual(residual: f64) -> Result<()> {
    if !(residual <= QUOTIENT_TOL) {
        return Err(Error::Internal(format!(
            "quotient solve residual {residual:e} above {QUOTIENT_TOL:e}"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassCovariance {
    pub depth_x: u32,
    pub depth_y: u32,
    pub depth_lca: u32,
    /// Ordered pairs in the class.
    pub count: u128,
    pub g: f64,
    pub gbar: f64,
    pub e: f64,
}

impl ClassCovariance {
    pub fn distance(&self) -> u32 {
        self.depth_x + self.depth_y - 2 * self.depth_lca
    }

    /// `(d(x, ∂₁V_n), d(y, ∂₁V_n))`.
    pub fn boundary_distances(&self, n: u32) -> (u32, u32) {
        (n + 1 - self.depth_x, n + 1 - self.depth_y)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassKernels {
    pub params: TreeParams,
    pub classes: Vec<ClassCovariance>,
    /// Largest relative residual over all quotient solves.
    pub residual: f64,
}

impl ClassKernels {
    pub fn get(&self, depth_x: u32, depth_y: u32, depth_lca: u32) -> Option<&ClassCovariance> {
        self.classes
            .iter()
            .find(|c| (c.depth_x, c.depth_y, c.depth_lca) == (depth_x, depth_y, depth_lca))
    }

    /// `G_n(x, x)` for `x` at each depth.
    pub fn diagonal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.params.n as usize + 1];
        for c in &self.classes {
            if c.depth_x == c.depth_y && c.depth_y == c.depth_lca {
                out[c.depth_x as usize] = c.g;
            }
        }
        out
    }
}

/// `G_n`, `Ḡ_n` and `E_n` on every pair class of `V_n`.
pub fn class_kernels(params: TreeParams) -> Result<ClassKernels> {
    check_depth(params)?;
    let mut residual: f64 = 0.0;
    let mut per_source = Vec::with_capacity(params.n as usize + 1);
    for a in 0..=params.n {
        let q = Quotient::new(params, a);
        let mut e = vec![0.0; q.len()];
        e[q.cell(a, a)] = 1.0;
        let (g, r1) = solve(&q.bilaplacian(), &e);
        let lap = q.laplacian();
        let (h, r2) = solve(&lap, &e);
        let (gbar, r3) = solve(&lap, &h);
        residual = residual.max(r1).max(r2).max(r3);
        per_source.push((q, g, gbar));
    }
    check_residual(residual)?;
    let classes = pair_classes(params)
        .into_iter()
        .map(|class| {
            let (q, g, gbar) = &per_source[class.depth_x as usize];
            let k = q.cell(class.depth_y, class.depth_lca);
            ClassCovariance {
                depth_x: class.depth_x,
                depth_y: class.depth_y,
                depth_lca: class.depth_lca,
                count: class.count,
                g: g[k],
                gbar: gbar[k],
                e: gbar[k] - g[k],
            }
        })
        .collect();
    Ok(ClassKernels {
        params,
        classes,
        residual,
    })
}

/// `(E[τ₀], E[τ₀²])` from a vertex at each depth `0..=n`.
pub fn radial_exit_time_moments(params: TreeParams) -> Result<Vec<(f64, f64)>> {
    check_depth(params)?;
    let q = Quotient::new(params, 0);
    let lap = q.laplacian();
    let ones = vec![1.0; q.len()];
    let (first, r1) = solve(&lap, &ones);
    let rhs: Vec<f64> = q.step(&first).iter().map(|v| 1.0 + 2.0 * v).collect();
    let (second, r2) = solve(&lap, &rhs);
    check_residual(r1.max(r2))?;
    Ok((0..=params.n)
        .map(|b| {
            let k = q.cell(b, 0);
            (first[k], second[k])
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FinerBoundCheck {
    /// Ordered pairs checked.
    pub pairs: u128,
    pub violations: u128,
    /// `max |E_n(x,y)| / bound`.
    pub worst_ratio: f64,
}

/// Checks `|E_n(x,y)| <= en_finer_bound(m, d, dx, dy, j0)` on every pair.
pub fn finer_bound_check(kernels: &ClassKernels, j0: u32) -> Result<FinerBoundCheck> {
    let n = kernels.params.n;
    let mut out = FinerBoundCheck {
        pairs: 0,
        violations: 0,
        worst_ratio: 0.0,
    };
    for c in &kernels.classes {
        let (dx, dy) = c.boundary_distances(n);
        let bound = en_finer_bound(kernels.params.m, c.distance(), dx, dy, j0)?;
        let ratio = c.e.abs() / bound;
        out.pairs += c.count;
        if ratio > 1.0 {
            out.violations += c.count;
        }
        out.worst_ratio = out.worst_ratio.max(ratio);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{finite_covariance, gbar_matrix, DEFAULT_COVARIANCE_CAP};
    use crate::tree::build_tree;
    use crate::walk::exit_time_moments;

    #[test]
    fn classes_match_dense_matrices() {
        for (m, n) in [(3, 0), (3, 1), (3, 4), (4, 3), (5, 2)] {
            let params = TreeParams::new(m, n).unwrap();
            let tree = build_tree(params).unwrap();
            let g = finite_covariance(&tree, DEFAULT_COVARIANCE_CAP).unwrap();
            let gbar = gbar_matrix(&tree, DEFAULT_COVARIANCE_CAP).unwrap();
            let k = class_kernels(params).unwrap();
            let total: u128 = k.classes.iter().map(|c| c.count).sum();
            assert_eq!(total, (tree.len() * tree.len()) as u128);
            for x in 0..tree.len() {
                for y in 0..tree.len() {
                    let l = tree.lca(x, y);
                    let c = k.get(tree.depth(x), tree.depth(y), tree.depth(l)).unwrap();
                    assert!((c.g - g.get(x, y)).abs() < 1e-11, "m={m} n={n} ({x},{y})");
                    assert!((c.gbar - gbar.get(x, y)).abs() < 1e-11);
                }
            }
        }
    }

    #[test]
    fn radial_moments_match_tree_solver() {
        for (m, n) in [(3, 0), (3, 5), (4, 4)] {
            let params = TreeParams::new(m, n).unwrap();
            let tree = build_tree(params).unwrap();
            let full = exit_time_moments(&tree).unwrap();
            let radial = radial_exit_time_moments(params).unwrap();
            for x in 0..tree.len() {
                let (u, v) = radial[tree.depth(x) as usize];
                assert!((u - full.first[x]).abs() < 1e-10 * u);
                assert!((v - full.second[x]).abs() < 1e-10 * v);
            }
        }
    }

    #[test]
    fn large_degree_diagonal() {
        let params = TreeParams::new(25, 8).unwrap();
        let k = class_kernels(params).unwrap();
        let g00 = crate::greens::greens_origin(25).unwrap();
        assert!(k.residual < 1e-12);
        for v in k.diagonal() {
            assert!(v > 0.9 && v < g00);
        }
    }

    #[test]
    fn finer_bound_large_degree() {
        for n in 0..=4 {
            let k = class_kernels(TreeParams::new(25, n).unwrap()).unwrap();
            let check = finer_bound_check(&k, 0).unwrap();
            assert_eq!(check.violations, 0, "n={n}");
            assert_eq!(check.pairs, k.params.vertex_count_u128().unwrap().pow(2));
        }
        let k = class_kernels(TreeParams::new(3, 3).unwrap()).unwrap();
        assert!(matches!(finer_bound_check(&k, 0), Err(Error::Regime { .. })));
    }

    #[test]
    fn depth_cap() {
        let params = TreeParams::new(3, MAX_CLASS_DEPTH + 1).unwrap();
        assert!(class_kernels(params).is_err());
    }
}
