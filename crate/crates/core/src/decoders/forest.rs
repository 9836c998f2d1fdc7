//! Bagged CART regression trees.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::util::{derive_seed, fnv1a};

pub const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeNode {
    /// Split feature, or [`LEAF`].
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    /// Mean target of the node's training rows.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            if n.feature == LEAF {
                return n.value;
            }
            i = if x[n.feature as usize] <= n.threshold { n.left } else { n.right } as usize;
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            let n = &t.nodes[i];
            if n.feature == LEAF {
                0
            } else {
                1 + go(t, n.left as usize).max(go(t, n.right as usize))
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or hold one row.
    pub max_depth: Option<usize>,
    /// Features tried per split; `None` means `⌈d/3⌉`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

struct Data<'a> {
    x: &'a [f64],
    y: &'a [f64],
    d: usize,
}

struct Builder<'a> {
    data: Data<'a>,
    max_depth: usize,
    mtry: usize,
    rng: ChaCha8Rng,
    nodes: Vec<TreeNode>,
    feats: Vec<usize>,
    pairs: Vec<(f64, f64)>,
}

impl Builder<'_> {
    fn leaf(&mut self, value: f64) -> u32 {
        self.nodes.push(TreeNode {
            feature: LEAF,
            threshold: 0.0,
            left: 0,
            right: 0,
            value,
        });
        (self.nodes.len() - 1) as u32
    }

    /// Best (score, threshold) for one feature; score is Σ²L/nL + Σ²R/nR.
    fn best_on(&mut self, rows: &[u32], f: usize) -> Option<(f64, f64)> {
        let d = self.data.d;
        self.pairs.clear();
        self.pairs
            .extend(rows.iter().map(|&r| (self.data.x[r as usize * d + f], self.data.y[r as usize])));
        self.pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = self.pairs.len();
        let total: f64 = self.pairs.iter().map(|p| p.1).sum();
        let mut left = 0.0;
        let mut best: Option<(f64, f64)> = None;
        for i in 0..n - 1 {
            left += self.pairs[i].1;
            let (a, b) = (self.pairs[i].0, self.pairs[i + 1].0);
            if a == b {
                continue;
            }
            let nl = (i + 1) as f64;
            let nr = (n - i - 1) as f64;
            let score = left * left / nl + (total - left) * (total - left) / nr;
            if best.is_none_or(|(s, _)| score > s) {
                let mid = a + (b - a) / 2.0;
                // guard against the midpoint rounding onto the upper value
                let thr = if mid < b { mid } else { a };
                best = Some((score, thr));
            }
        }
        best
    }

    fn grow(&mut self, rows: &mut [u32], depth: usize) -> u32 {
        let n = rows.len();
        let mean = rows.iter().map(|&r| self.data.y[r as usize]).sum::<f64>() / n as f64;
        let first = self.data.y[rows[0] as usize];
        let pure = rows.iter().all(|&r| self.data.y[r as usize] == first);
        if pure {
            return self.leaf(first);
        }
        if depth >= self.max_depth || n < 2 {
            return self.leaf(mean);
        }
        self.feats.shuffle(&mut self.rng);
        let mut best: Option<(f64, usize, f64)> = None;
        // Draw `mtry` features; keep drawing past it only while no valid split exists.
        for k in 0..self.feats.len() {
            if k >= self.mtry && best.is_some() {
                break;
            }
            let f = self.feats[k];
            if let Some((score, thr)) = self.best_on(rows, f) {
                if best.is_none_or(|(s, _, _)| score > s) {
                    best = Some((score, f, thr));
                }
            }
        }
        let Some((_, f, thr)) = best else {
            return self.leaf(mean);
        };
        let d = self.data.d;
        let x = self.data.x;
        let split = partition(rows, |&r| x[r as usize * d + f] <= thr);
        let idx = self.leaf(mean);
        let (l, r) = rows.split_at_mut(split);
        let li = self.grow(l, depth + 1);
        let ri = self.grow(r, depth + 1);
        let node = &mut self.nodes[idx as usize];
        node.feature = f as u32;
        node.threshold = thr;
        node.left = li;
        node.right = ri;
        idx
    }
}

/// In-place partition; returns the count satisfying `pred` (moved to the front).
fn partition<T>(v: &mut [T], pred: impl Fn(&T) -> bool) -> usize {
    let mut k = 0;
    for i in 0..v.len() {
        if pred(&v[i]) {
            v.swap(i, k);
            k += 1;
        }
    }
    k
}

impl Forest {
    pub fn empty(n_features: usize) -> Self {
        Self {
            n_features,
            trees: Vec::new(),
        }
    }

    /// Fits on row-major `x` (`[n, d]`). Trees are grown in parallel, each from
    /// its own seed, so the result does not depend on the thread count.
    pub fn fit(x: &[f64], d: usize, y: &[f64], params: &ForestParams) -> Result<Self> {
        let n = y.len();
        if n < 2 || d == 0 || x.len() != n * d {
            return Err(Error::Argument(format!(
                "forest needs >= 2 rows of {d} features, got {} values for {n} targets",
                x.len()
            )));
        }
        if params.n_trees == 0 {
            return Err(Error::Argument("forest needs at least one tree".into()));
        }
        let mtry = params.max_features.unwrap_or(d.div_ceil(3)).clamp(1, d);
        let max_depth = params.max_depth.unwrap_or(usize::MAX);
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, &["tree", &t.to_string()]));
                let mut rows: Vec<u32> = if params.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n) as u32).collect()
                } else {
                    (0..n as u32).collect()
                };
                let mut b = Builder {
                    data: Data { x, y, d },
                    max_depth,
                    mtry,
                    rng,
                    nodes: Vec::new(),
                    feats: (0..d).collect(),
                    pairs: Vec::with_capacity(n),
                };
                b.grow(&mut rows, 0);
                Tree { nodes: b.nodes }
            })
            .collect();
        Ok(Self { n_features: d, trees })
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        if self.trees.is_empty() {
            return 0.0;
        }
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn checksum(&self) -> u64 {
        let mut bytes = Vec::new();
        for t in &self.trees {
            for n in &t.nodes {
                bytes.extend_from_slice(&n.feature.to_le_bytes());
                bytes.extend_from_slice(&n.threshold.to_le_bytes());
                bytes.extend_from_slice(&n.value.to_le_bytes());
            }
        }
        fnv1a(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::pearson_r;

    fn exact() -> ForestParams {
        ForestParams {
            n_trees: 1,
            max_depth: None,
            max_features: None,
            bootstrap: false,
            seed: 0,
        }
    }

    #[test]
    fn stump_oracle() {
        let x = [-2.0, -1.0, -0.5, 0.0, 1.0, 2.0];
        let y = [1.0, 1.0, 1.0, 3.0, 3.0, 3.0];
        let f = Forest::fit(&x, 1, &y, &ForestParams { max_depth: Some(1), ..exact() }).unwrap();
        assert_eq!(f.trees[0].depth(), 1);
        assert_eq!(f.predict_row(&[-1.0]), 1.0);
        assert_eq!(f.predict_row(&[0.5]), 3.0);
    }

    #[test]
    fn memorises_distinct_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (n, d) = (300, 6);
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let f = Forest::fit(&x, d, &y, &exact()).unwrap();
        for i in 0..n {
            assert_eq!(f.predict_row(&x[i * d..(i + 1) * d]), y[i]);
        }
    }

    #[test]
    fn constant_targets() {
        let x: Vec<f64> = (0..40).map(f64::from).collect();
        let f = Forest::fit(&x, 2, &[4.5; 20], &ForestParams { n_trees: 5, bootstrap: true, ..exact() }).unwrap();
        assert!(x.chunks(2).all(|r| f.predict_row(r) == 4.5));
    }

    #[test]
    fn xor_needs_nonlinearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gen = |rng: &mut ChaCha8Rng, n: usize| {
            let x: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = x.chunks(3).map(|r| if (r[0] > 0.0) != (r[1] > 0.0) { 1.0 } else { 0.0 }).collect();
            (x, y)
        };
        let (xtr, ytr) = gen(&mut rng, 1000);
        let (xte, yte) = gen(&mut rng, 400);
        let params = ForestParams {
            n_trees: 30,
            max_depth: Some(8),
            max_features: None,
            bootstrap: true,
            seed: 3,
        };
        let f = Forest::fit(&xtr, 3, &ytr, &params).unwrap();
        let pred: Vec<f64> = xte.chunks(3).map(|r| f.predict_row(r)).collect();
        let r_forest = pearson_r(&pred, &yte).unwrap();
        let (w, b) = crate::decoders::linear::lstsq(
            &crate::autodiff::Tensor::new(&[1000, 3], xtr).unwrap(),
            &ytr,
        )
        .unwrap();
        let lin: Vec<f64> = xte.chunks(3).map(|r| r.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b).collect();
        let r_lin = pearson_r(&lin, &yte).unwrap();
        assert!(r_forest >= 0.9, "forest r {r_forest}");
        assert!(r_lin <= 0.3, "linear r {r_lin}");
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..200 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.chunks(4).map(|r| r[0] * r[1]).collect();
        let p = ForestParams { n_trees: 8, max_depth: Some(6), max_features: None, bootstrap: true, seed: 1 };
        let a = Forest::fit(&x, 4, &y, &p).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| Forest::fit(&x, 4, &y, &p).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn empty_data_is_rejected() {
        assert!(Forest::fit(&[], 3, &[], &exact()).is_err());
    }
}
