//! Finite balls `V_n` of the m-regular tree.
//!
//! Vertices are indexed in BFS order: the root is `0`, then generation 1 in
//! child order, and so on. Children of a vertex occupy a contiguous index
//! range, so the tree is stored as flat arrays without adjacency lists.
//!
//! Besides the explicit tree, this module exposes counting helpers that only
//! need [`TreeParams`]. They work for trees far too large to materialize
//! (`m = 25, n = 8` has about 10^11 vertices).

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on explicitly materialized trees.
pub const MAX_TREE_VERTICES: u128 = 1 << 28;

/// Default size cap for materializing a full `N x N` distance table.
pub const DEFAULT_DISTANCE_TABLE_CAP: usize = 5000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TreeParams {
    /// Degree of every vertex of the infinite tree.
    pub m: u32,
    /// Radius of the ball around the root.
    pub n: u32,
}

impl TreeParams {
    pub fn new(m: u32, n: u32) -> Result<Self> {
        if m < 3 {
            return Err(Error::Degree(m));
        }
        Ok(Self { m, n })
    }

    /// `N = (m (m-1)^n - 2) / (m - 2)`, exact. `None` on u128 overflow.
    pub fn vertex_count_u128(&self) -> Option<u128> {
        let m = self.m as u128;
        let pow = (m - 1).checked_pow(self.n)?;
        let top = m.checked_mul(pow)?.checked_sub(2)?;
        Some(top / (m - 2))
    }

    /// `N` as a float; usable for any size.
    pub fn vertex_count_f64(&self) -> f64 {
        let m = self.m as f64;
        (m * (m - 1.0).powi(self.n as i32) - 2.0) / (m - 2.0)
    }

    /// Number of vertices at depth `k`: `1` for the root, `m (m-1)^(k-1)` otherwise.
    pub fn level_size(&self, k: u32) -> u128 {
        if k == 0 {
            1
        } else {
            self.m as u128 * (self.m as u128 - 1).pow(k - 1)
        }
    }

    /// Children of a depth-`k` vertex in the infinite tree.
    pub fn branching(&self, k: u32) -> u32 {
        if k == 0 {
            self.m
        } else {
            self.m - 1
        }
    }
}

/// Explicit BFS-indexed ball `V_n`.
#[derive(Clone, Debug)]
pub struct RegularTree {
    params: TreeParams,
    depth: Vec<u32>,
    parent: Vec<Option<usize>>,
    first_child: Vec<usize>,
    level_start: Vec<usize>,
}

pub fn build_tree(params: TreeParams) -> Result<RegularTree> {
    RegularTree::new(params)
}

impl RegularTree {
    pub fn new(params: TreeParams) -> Result<Self> {
        let params = TreeParams::new(params.m, params.n)?;
        let too_large = Error::TreeTooLarge {
            m: params.m,
            n: params.n,
        };
        let count = match params.vertex_count_u128() {
            Some(c) if c <= MAX_TREE_VERTICES && c <= usize::MAX as u128 => c as usize,
            _ => return Err(too_large),
        };

        let mut depth = Vec::with_capacity(count);
        let mut parent = Vec::with_capacity(count);
        let mut first_child = vec![0; count];
        let mut level_start = Vec::with_capacity(params.n as usize + 2);

        depth.push(0);
        parent.push(None);
        level_start.push(0);
        let mut level = 0..1;
        for g in 1..=params.n {
            let start = depth.len();
            level_start.push(start);
            for v in level.clone() {
                first_child[v] = depth.len();
                for _ in 0..params.branching(g - 1) {
                    depth.push(g);
                    parent.push(Some(v));
                }
            }
            level = start..depth.len();
        }
        for v in level {
            first_child[v] = depth.len();
        }
        level_start.push(depth.len());
        debug_assert_eq!(depth.len(), count);

        Ok(Self {
            params,
            depth,
            parent,
            first_child,
            level_start,
        })
    }

    pub fn params(&self) -> TreeParams {
        self.params
    }

    pub fn m(&self) -> u32 {
        self.params.m
    }

    pub fn n(&self) -> u32 {
        self.params.n
    }

    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }

    pub fn root(&self) -> usize {
        0
    }

    fn check(&self, x: usize) -> Result<()> {
        if x < self.len() {
            Ok(())
        } else {
            Err(Error::InvalidVertex {
                index: x,
                len: self.len(),
            })
        }
    }

    pub fn depth(&self, x: usize) -> u32 {
        self.depth[x]
    }

    pub fn depths(&self) -> &[u32] {
        &self.depth
    }

    pub fn parent(&self, x: usize) -> Option<usize> {
        self.parent[x]
    }

    pub fn children(&self, x: usize) -> Range<usize> {
        let count = if self.depth[x] < self.params.n {
            self.params.branching(self.depth[x]) as usize
        } else {
            0
        };
        self.first_child[x]..self.first_child[x] + count
    }

    /// Neighbors inside `V_n` (parent first, then children).
    pub fn neighbors(&self, x: usize) -> impl Iterator<Item = usize> + '_ {
        self.parent[x].into_iter().chain(self.children(x))
    }

    pub fn is_leaf(&self, x: usize) -> bool {
        self.depth[x] == self.params.n
    }

    /// Vertices at depth `k` (empty for `k > n`).
    pub fn level(&self, k: u32) -> Range<usize> {
        if k > self.params.n {
            return self.len()..self.len();
        }
        self.level_start[k as usize]..self.level_start[k as usize + 1]
    }

    /// Lowest common ancestor by parent-pointer climbing.
    pub fn lca(&self, mut x: usize, mut y: usize) -> usize {
        while self.depth[x] > self.depth[y] {
            x = self.parent[x].unwrap();
        }
        while self.depth[y] > self.depth[x] {
            y = self.parent[y].unwrap();
        }
        while x != y {
            x = self.parent[x].unwrap();
            y = self.parent[y].unwrap();
        }
        x
    }

    pub fn graph_distance(&self, x: usize, y: usize) -> Result<u32> {
        self.check(x)?;
        self.check(y)?;
        Ok(self.distance_unchecked(x, y))
    }

    pub(crate) fn distance_unchecked(&self, x: usize, y: usize) -> u32 {
        let l = self.lca(x, y);
        self.depth[x] + self.depth[y] - 2 * self.depth[l]
    }

    /// `d(x, ∂₁V_n) = n + 1 - depth(x)`.
    pub fn boundary_distance(&self, x: usize) -> Result<u32> {
        self.check(x)?;
        Ok(self.params.n + 1 - self.depth[x])
    }

    /// Full distance table, row-major. Refuses trees above `cap` vertices.
    pub fn distance_table(&self, cap: usize) -> Result<Vec<u32>> {
        let n = self.len();
        if n > cap {
            return Err(Error::CapExceeded { n, cap });
        }
        let mut table = vec![0u32; n * n];
        for x in 0..n {
            for y in 0..x {
                let d = self.distance_unchecked(x, y);
                table[x * n + y] = d;
                table[y * n + x] = d;
            }
        }
        Ok(table)
    }

    /// Walks from `v` down to depth `target` taking child `first` first and
    /// child 0 afterwards.
    pub(crate) fn descend(&self, mut v: usize, target: u32, first: usize) -> usize {
        let mut pick = first;
        while self.depth[v] < target {
            v = self.children(v).start + pick;
            pick = 0;
        }
        v
    }

    /// A representative ordered pair of the class `(a, b, c)`.
    pub fn class_representative(&self, class: &PairClass) -> (usize, usize) {
        let v = self.level(class.depth_lca).start;
        let x = self.descend(v, class.depth_x, 0);
        let y_first = usize::from(class.depth_x > class.depth_lca);
        let y = self.descend(v, class.depth_y, y_first);
        (x, y)
    }

    pub fn distance_class_counts(&self) -> DistanceClassTable {
        distance_class_counts(self.params)
    }

    pub fn separated_leaf_set(&self) -> Result<Vec<usize>> {
        let (outer, spacing) = separated_leaf_depths(self.params.n)?;
        Ok(self
            .level(outer)
            .map(|z| self.descend(z, outer + spacing, 0))
            .collect())
    }
}

/// Ordered pair class `(depth x, depth y, depth of lca)`.
///
/// Every quantity invariant under tree automorphisms fixing the root
/// (the finite-volume covariances in particular) is constant on a class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PairClass {
    pub depth_x: u32,
    pub depth_y: u32,
    pub depth_lca: u32,
    /// Number of ordered pairs in the class.
    pub count: u128,
}

impl PairClass {
    pub fn distance(&self) -> u32 {
        self.depth_x + self.depth_y - 2 * self.depth_lca
    }
}

/// All nonempty pair classes of `V_n`, exact counts.
pub fn pair_classes(params: TreeParams) -> Vec<PairClass> {
    let n = params.n;
    let side = (params.m - 1) as u128;
    let mut out = Vec::new();
    for c in 0..=n {
        let q = params.branching(c) as u128;
        let base = params.level_size(c);
        for a in c..=n {
            for b in c..=n {
                let count = match (a == c, b == c) {
                    (true, true) => 1,
                    (true, false) => q * side.pow(b - c - 1),
                    (false, true) => q * side.pow(a - c - 1),
                    (false, false) => q * (q - 1) * side.pow(a - c - 1) * side.pow(b - c - 1),
                };
                out.push(PairClass {
                    depth_x: a,
                    depth_y: b,
                    depth_lca: c,
                    count: base * count,
                });
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceClassTable {
    pub params: TreeParams,
    /// `C_k` for `k = 0..=2n`.
    pub counts: Vec<u128>,
    /// The leaf-layer summation of the counting argument, for `1 <= k <= n`
    /// (index `k`; index 0 is `None`). It equals `C_k` exactly.
    pub layer_sums: Vec<Option<u128>>,
}

impl DistanceClassTable {
    pub fn total(&self) -> u128 {
        self.counts.iter().sum()
    }

    /// `C_k / (m-1)^(n + floor(k/2))` for every `k`.
    pub fn shape_ratios(&self) -> Vec<f64> {
        let base = (self.params.m - 1) as f64;
        self.counts
            .iter()
            .enumerate()
            .map(|(k, &c)| c as f64 / base.powi((self.params.n + k as u32 / 2) as i32))
            .collect()
    }

    pub fn max_shape_ratio(&self) -> f64 {
        self.shape_ratios().into_iter().fold(0.0, f64::max)
    }
}

/// Explicit constant of the counting bound `C_k <= C*(m) (m-1)^(n + floor(k/2))`,
/// summing the geometric series of the layer decomposition.
pub fn distance_count_constant(m: u32) -> f64 {
    let m = m as f64;
    2.0 * m / (m - 2.0) + m * m / ((m - 1.0) * (m - 2.0)) + m / (m - 1.0)
}

pub fn distance_class_counts(params: TreeParams) -> DistanceClassTable {
    let n = params.n;
    let mut counts = vec![0u128; 2 * n as usize + 1];
    for class in pair_classes(params) {
        counts[class.distance() as usize] += class.count;
    }
    let layer_sums = (0..=2 * n)
        .map(|k| (k >= 1 && k <= n).then(|| layer_sum(params, k)))
        .collect();
    DistanceClassTable {
        params,
        counts,
        layer_sums,
    }
}

fn layer_sum(params: TreeParams, k: u32) -> u128 {
    let m = params.m as u128;
    let s = m - 1;
    let n = params.n;
    let near: u128 = (0..k)
        .map(|l| m * s.pow(n - l - 1) * s.pow((k - l) / 2 + l))
        .sum();
    let far: u128 = (k..n).map(|l| m * s.pow(n - l - 1) * m * s.pow(k - 1)).sum();
    near + far + m * s.pow(k - 1)
}

/// Depths `(n - 2L, L)` with `L = floor(ln n)` used by the separated set.
pub fn separated_leaf_depths(n: u32) -> Result<(u32, u32)> {
    let spacing = if n == 0 { 0 } else { (n as f64).ln().floor() as u32 };
    if spacing == 0 || n < 2 * spacing + 1 {
        return Err(Error::InvalidArgument(format!(
            "separated leaf set needs floor(ln n) >= 1 and n - 2 floor(ln n) >= 1, got n = {n}"
        )));
    }
    Ok((n - 2 * spacing, spacing))
}

/// `|U_n| = m (m-1)^(n - 2 floor(ln n) - 1)`.
pub fn separated_leaf_count(params: TreeParams) -> Result<u128> {
    let (outer, _) = separated_leaf_depths(params.n)?;
    Ok(params.level_size(outer))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree(m: u32, n: u32) -> RegularTree {
        build_tree(TreeParams::new(m, n).unwrap()).unwrap()
    }

    fn bfs_distances(t: &RegularTree, x: usize) -> Vec<u32> {
        let mut dist = vec![u32::MAX; t.len()];
        let mut queue = std::collections::VecDeque::from([x]);
        dist[x] = 0;
        while let Some(v) = queue.pop_front() {
            for w in t.neighbors(v) {
                if dist[w] == u32::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    #[test]
    fn vertex_counts() {
        assert_eq!(tree(3, 0).len(), 1);
        assert_eq!(tree(3, 2).len(), 10);
        let t = tree(4, 3);
        assert_eq!(t.len(), 53);
        assert_eq!(TreeParams::new(4, 3).unwrap().vertex_count_u128(), Some(53));
        assert_eq!((0..=3).map(|k| t.level(k).len()).sum::<usize>(), 53);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(matches!(TreeParams::new(2, 3), Err(Error::Degree(2))));
        let huge = TreeParams { m: 25, n: 8 };
        assert!(matches!(build_tree(huge), Err(Error::TreeTooLarge { .. })));
    }

    #[test]
    fn bfs_layout() {
        let t = tree(3, 3);
        assert_eq!(t.children(0).len(), 3);
        for v in 1..t.len() {
            let p = t.parent(v).unwrap();
            assert!(p < v);
            assert_eq!(t.depth(v), t.depth(p) + 1);
            assert!(t.children(p).contains(&v));
            if !t.is_leaf(v) {
                assert_eq!(t.children(v).len(), 2);
            }
        }
        assert_eq!(t.level(1), 1..4);
    }

    #[test]
    fn distances_match_bfs() {
        let t = tree(3, 2);
        assert_eq!(t.graph_distance(0, 0).unwrap(), 0);
        assert_eq!(t.graph_distance(0, 1).unwrap(), 1);
        // leaves under different root children
        let a = t.children(1).start;
        let b = t.children(2).start;
        assert_eq!(t.graph_distance(a, b).unwrap(), 4);
        for x in 0..t.len() {
            let bfs = bfs_distances(&t, x);
            for y in 0..t.len() {
                assert_eq!(t.graph_distance(x, y).unwrap(), bfs[y]);
            }
        }
        assert!(t.graph_distance(0, 10).is_err());
    }

    #[test]
    fn boundary_distance_examples() {
        let t5 = tree(3, 5);
        assert_eq!(t5.boundary_distance(0).unwrap(), 6);
        assert_eq!(t5.boundary_distance(t5.len() - 1).unwrap(), 1);
        let t3 = tree(3, 3);
        assert_eq!(t3.boundary_distance(t3.level(2).start).unwrap(), 2);
    }

    #[test]
    fn boundary_distance_matches_extended_tree() {
        let t = tree(3, 3);
        let ext = tree(3, 4);
        let outside: Vec<usize> = ext.level(4).collect();
        for x in 0..t.len() {
            // BFS indices of V_n coincide inside V_{n+1}
            let d = bfs_distances(&ext, x);
            let nearest = outside.iter().map(|&z| d[z]).min().unwrap();
            assert_eq!(t.boundary_distance(x).unwrap(), nearest);
        }
    }

    #[test]
    fn distance_counts_small() {
        let c = tree(3, 1).distance_class_counts();
        assert_eq!(c.counts, vec![4, 6, 6]);
        assert_eq!(tree(3, 0).distance_class_counts().counts, vec![1]);
        assert_eq!(tree(3, 2).distance_class_counts().counts[1], 18);
    }

    #[test]
    fn distance_counts_match_brute_force() {
        for (m, n) in [(3, 4), (4, 3), (5, 2), (3, 6)] {
            let t = tree(m, n);
            let mut brute = vec![0u128; 2 * n as usize + 1];
            let table = t.distance_table(DEFAULT_DISTANCE_TABLE_CAP).unwrap();
            for &d in &table {
                brute[d as usize] += 1;
            }
            let table = t.distance_class_counts();
            assert_eq!(table.counts, brute);
            assert_eq!(table.total(), (t.len() * t.len()) as u128);
            for k in 1..=n as usize {
                assert_eq!(table.layer_sums[k], Some(brute[k]));
            }
        }
    }

    #[test]
    fn class_representatives_belong_to_their_class() {
        let t = tree(4, 3);
        let mut seen = 0u128;
        for class in pair_classes(t.params()) {
            let (x, y) = t.class_representative(&class);
            assert_eq!(t.depth(x), class.depth_x);
            assert_eq!(t.depth(y), class.depth_y);
            assert_eq!(t.depth(t.lca(x, y)), class.depth_lca);
            seen += class.count;
        }
        assert_eq!(seen, (t.len() * t.len()) as u128);
    }

    #[test]
    fn distance_table_cap() {
        let t = tree(3, 4);
        assert!(matches!(
            t.distance_table(10),
            Err(Error::CapExceeded { n: 46, cap: 10 })
        ));
    }

    #[test]
    fn separated_set_m3_n8() {
        let t = tree(3, 8);
        let u = t.separated_leaf_set().unwrap();
        assert_eq!(u.len(), 24);
        assert_eq!(separated_leaf_count(t.params()).unwrap(), 24);
        for &y in &u {
            assert_eq!(t.depth(y), 6);
            assert_eq!(t.boundary_distance(y).unwrap(), 3);
        }
        for (i, &a) in u.iter().enumerate() {
            for &b in &u[i + 1..] {
                assert!(t.graph_distance(a, b).unwrap() >= 4);
            }
        }
    }

    #[test]
    fn separated_set_m4_n8_depths() {
        let t = tree(4, 8);
        let u = t.separated_leaf_set().unwrap();
        assert_eq!(u.len(), 4 * 27);
        assert!(u.iter().all(|&y| t.depth(y) == 6));
    }

    #[test]
    fn separated_set_too_small() {
        assert!(tree(3, 2).separated_leaf_set().is_err());
        assert!(tree(3, 1).separated_leaf_set().is_err());
        assert!(tree(3, 3).separated_leaf_set().is_ok());
    }

    #[test]
    fn count_constant_bounds_ratios() {
        for m in [3, 4, 5] {
            for n in 0..=10 {
                let table = distance_class_counts(TreeParams::new(m, n).unwrap());
                assert!(table.counts.iter().skip(2 * n as usize + 1).all(|&c| c == 0));
                assert!(table.max_shape_ratio() <= distance_count_constant(m));
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn distance_is_a_metric(x in 0usize..94, y in 0usize..94, z in 0usize..94) {
            let t = tree(3, 5);
            let dxy = t.graph_distance(x, y).unwrap();
            proptest::prop_assert_eq!(dxy, t.graph_distance(y, x).unwrap());
            proptest::prop_assert_eq!(dxy == 0, x == y);
            let dxz = t.graph_distance(x, z).unwrap();
            let dzy = t.graph_distance(z, y).unwrap();
            proptest::prop_assert!(dxy <= dxz + dzy);
        }
    }
}
