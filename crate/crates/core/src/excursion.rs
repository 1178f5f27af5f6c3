//! Excursions of the walk out of `V_n` and the series for `E_n = Ḡ_n - G_n`.
//!
//! With `τ_{-1} = -1` and `τ_i` the `(i+1)`-th visit to the complement,
//! `M_j = Π_{i≤j} (τ_i - τ_{i-1} - 1)` and
//! `L_j = Σ_{τ_{j-1} ≤ k < τ_j} (k - τ_{j-1}) 1{S_k = y}`,
//! the terms are `a_j = E_x[M_{j-1} L_j]` and `E_n(x,y) = Σ_j (-1)^{j-1} a_j`.
//!
//! An excursion that starts outside `V_n` contributes a nonzero factor only
//! if its first step returns to the leaf it left from. Conditioning on the
//! exit leaves turns the series into `a_j = w̃ᵀ K̃^{j-1} h̃` with
//! `w̃(ℓ) = c(ℓ) Ḡ(x,ℓ)/m`, `K̃(ℓ,ℓ') = c(ℓ') Ḡ(ℓ,ℓ')/m²`, `h̃(ℓ) = Ḡ(ℓ,y)/m`,
//! where `c(ℓ)` counts the children of `ℓ` outside `V_n`.

use faer::linalg::solvers::Solve;
use faer::Mat;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::operators::{CovarianceMatrix, CovarianceRole};
use crate::sampler::stream_rng;
use crate::tree::RegularTree;

pub const DEFAULT_STEP_BUDGET: u64 = 10_000_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExcursionRecord {
    /// `τ_0 < τ_1 < … < τ_J`.
    pub tau: Vec<u64>,
    /// `M_0, …, M_J`.
    pub m_products: Vec<f64>,
    /// `L_0, …, L_J`.
    pub local_times: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Position {
    Inside(usize),
    /// Excess depth below a leaf of `V_n`.
    Outside { leaf: usize, depth: u64 },
}

struct Walker<'a> {
    tree: &'a RegularTree,
    m: u32,
    leaf_depth: u32,
}

impl<'a> Walker<'a> {
    fn new(tree: &'a RegularTree) -> Self {
        Self {
            tree,
            m: tree.m(),
            leaf_depth: tree.n(),
        }
    }

    fn step<R: Rng>(&self, pos: Position, rng: &mut R) -> Position {
        let r = rng.random_range(0..self.m);
        match pos {
            Position::Outside { leaf, depth } => {
                if r == 0 {
                    if depth == 1 {
                        Position::Inside(leaf)
                    } else {
                        Position::Outside {
                            leaf,
                            depth: depth - 1,
                        }
                    }
                } else {
                    Position::Outside {
                        leaf,
                        depth: depth + 1,
                    }
                }
            }
            Position::Inside(v) => {
                // neighbor r: the parent first when there is one, then children
                let child = match self.tree.parent(v) {
                    Some(p) if r == 0 => return Position::Inside(p),
                    Some(_) => r as usize - 1,
                    None => r as usize,
                };
                if self.tree.depth(v) == self.leaf_depth {
                    Position::Outside { leaf: v, depth: 1 }
                } else {
                    Position::Inside(self.tree.children(v).start + child)
                }
            }
        }
    }

    /// Walks from `x` until `τ_J`, or until `M` vanishes when `stop_at_zero`.
    fn run<R: Rng>(
        &self,
        x: usize,
        y: usize,
        excursions: usize,
        budget: u64,
        stop_at_zero: bool,
        rng: &mut R,
    ) -> Result<ExcursionRecord> {
        let mut rec = ExcursionRecord {
            tau: Vec::with_capacity(excursions + 1),
            m_products: Vec::with_capacity(excursions + 1),
            local_times: Vec::with_capacity(excursions + 1),
        };
        let mut pos = Position::Inside(x);
        let mut last: i64 = -1;
        let mut product = 1.0;
        let mut local = 0.0;
        let mut k: u64 = 0;
        loop {
            if pos == Position::Inside(y) {
                local += (k as i64 - last) as f64;
            }
            pos = self.step(pos, rng);
            k += 1;
            if k > budget {
                return Err(Error::StepBudget { budget });
            }
            if matches!(pos, Position::Outside { .. }) {
                product *= (k as i64 - last - 1) as f64;
                rec.tau.push(k);
                rec.m_products.push(product);
                rec.local_times.push(local);
                last = k as i64;
                local = 0.0;
                if rec.tau.len() > excursions || (stop_at_zero && product == 0.0) {
                    return Ok(rec);
                }
            }
        }
    }
}

fn check_vertex(tree: &RegularTree, v: usize) -> Result<()> {
    if v >= tree.len() {
        return Err(Error::InvalidVertex {
            index: v,
            len: tree.len(),
        });
    }
    Ok(())
}

/// One walk from `x` recording `τ_0..τ_J`, `M_0..M_J` and `L_0..L_J` for target `y`.
pub fn mc_excursion_walk(
    tree: &RegularTree,
    x: usize,
    y: usize,
    excursions: usize,
    seed: u64,
) -> Result<ExcursionRecord> {
    mc_excursion_walk_with_budget(tree, x, y, excursions, seed, DEFAULT_STEP_BUDGET)
}

pub fn mc_excursion_walk_with_budget(
    tree: &RegularTree,
    x: usize,
    y: usize,
    excursions: usize,
    seed: u64,
    budget: u64,
) -> Result<ExcursionRecord> {
    check_vertex(tree, x)?;
    check_vertex(tree, y)?;
    if excursions == 0 {
        return Err(Error::InvalidArgument("need at least one excursion".into()));
    }
    Walker::new(tree).run(x, y, excursions, budget, false, &mut stream_rng(seed, 0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McMean {
    pub estimate: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AjEstimate {
    pub j: usize,
    pub samples: usize,
    pub estimate: f64,
    pub stderr: f64,
    /// `E[L_0]`, an estimate of `Ḡ_n(x,y)`.
    pub gbar: McMean,
    /// `Ḡ_n - a_1 + … ± a_j` from the same walks.
    pub partial_sum: McMean,
}

fn mean_stderr(values: impl Iterator<Item = f64> + Clone, n: usize) -> McMean {
    let nf = n as f64;
    let mean = values.clone().sum::<f64>() / nf;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    McMean {
        estimate: mean,
        stderr: (var / nf).sqrt(),
    }
}

/// Monte Carlo estimate of `a_j`; walk `r` uses stream `(seed, r)`.
pub fn mc_estimate_aj(
    tree: &RegularTree,
    x: usize,
    y: usize,
    j: usize,
    samples: usize,
    seed: u64,
) -> Result<AjEstimate> {
    check_vertex(tree, x)?;
    check_vertex(tree, y)?;
    if j == 0 {
        return Err(Error::InvalidArgument("excursion index j must be >= 1".into()));
    }
    if samples < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 samples for a standard error, got {samples}"
        )));
    }
    let walker = Walker::new(tree);
    // row r: L_0, then M_{i-1} L_i for i = 1..=j
    let rows: Vec<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let rec = walker.run(x, y, j, DEFAULT_STEP_BUDGET, true, &mut rng)?;
            let mut row = vec![0.0; j + 1];
            row[0] = rec.local_times[0];
            for i in 1..=j {
                if i < rec.local_times.len() {
                    row[i] = rec.m_products[i - 1] * rec.local_times[i];
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let term = mean_stderr(rows.iter().map(|r| r[j]), samples);
    let partial = rows.iter().map(|r| {
        r.iter()
            .enumerate()
            .map(|(i, v)| if i % 2 == 0 { *v } else { -*v })
            .sum::<f64>()
    });
    Ok(AjEstimate {
        j,
        samples,
        estimate: term.estimate,
        stderr: term.stderr,
        gbar: mean_stderr(rows.iter().map(|r| r[0]), samples),
        partial_sum: mean_stderr(partial, samples),
    })
}

/// Exact excursion series on the leaves of `V_n`, built from `Ḡ_n`.
pub struct LeafExcursions<'a> {
    gbar: &'a CovarianceMatrix,
    leaves: Vec<usize>,
    exits: Vec<f64>,
    m: f64,
    kernel: Mat<f64>,
}

impl<'a> LeafExcursions<'a> {
    pub fn new(tree: &RegularTree, gbar: &'a CovarianceMatrix) -> Result<Self> {
        if gbar.role != CovarianceRole::Bulk || gbar.params != tree.params() {
            return Err(Error::InvalidArgument(format!(
                "leaf excursions need Gbar_n of this tree, got {:?}",
                gbar.role
            )));
        }
        let leaves: Vec<usize> = tree.level(tree.n()).collect();
        let m = tree.m() as f64;
        let outside = if tree.n() == 0 { m } else { m - 1.0 };
        let exits = vec![outside; leaves.len()];
        let kernel = Mat::from_fn(leaves.len(), leaves.len(), |i, k| {
            exits[k] * gbar.get(leaves[i], leaves[k]) / (m * m)
        });
        Ok(Self {
            gbar,
            leaves,
            exits,
            m,
            kernel,
        })
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    fn weights(&self, x: usize) -> Mat<f64> {
        Mat::from_fn(self.leaves.len(), 1, |i, _| {
            self.exits[i] * self.gbar.get(x, self.leaves[i]) / self.m
        })
    }

    fn targets(&self, y: usize) -> Mat<f64> {
        Mat::from_fn(self.leaves.len(), 1, |i, _| self.gbar.get(self.leaves[i], y) / self.m)
    }

    /// `a_1, …, a_J`.
    pub fn terms(&self, x: usize, y: usize, count: usize) -> Result<Vec<f64>> {
        check_index(x, self.gbar.dim())?;
        check_index(y, self.gbar.dim())?;
        let w = self.weights(x);
        let mut v = self.targets(y);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            out.push((w.transpose() * &v)[(0, 0)]);
            v = &self.kernel * &v;
        }
        Ok(out)
    }

    pub fn term(&self, x: usize, y: usize, j: usize) -> Result<f64> {
        if j == 0 {
            return Err(Error::InvalidArgument("excursion index j must be >= 1".into()));
        }
        Ok(self.terms(x, y, j)?[j - 1])
    }

    /// `E_n(x,y) = w̃ᵀ (I + K̃)^{-1} h̃`.
    pub fn error_entry(&self, x: usize, y: usize) -> Result<f64> {
        check_index(x, self.gbar.dim())?;
        check_index(y, self.gbar.dim())?;
        let n = self.leaves.len();
        let a = Mat::<f64>::identity(n, n) + &self.kernel;
        let v = a.partial_piv_lu().solve(&self.targets(y));
        Ok((self.weights(x).transpose() * &v)[(0, 0)])
    }
}

fn check_index(v: usize, len: usize) -> Result<()> {
    if v >= len {
        return Err(Error::InvalidVertex { index: v, len });
    }
    Ok(())
}
