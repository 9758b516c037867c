//! Isolation forest: random axis-aligned splits isolate points, and points
//! isolated after few splits score as anomalous.
//!
//! Trees are built in parallel. Tree `i` draws from its own ChaCha stream
//! `(seed, i)`, so the forest does not depend on the thread count.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Matrix;

pub const DEFAULT_TREES: usize = 100;
pub const DEFAULT_PSI: usize = 256;

const EULER_GAMMA: f64 = 0.5772156649;

/// Average path length of an unsuccessful binary-search-tree lookup among
/// `n` points; normalizes path lengths and pads truncated leaves.
pub fn c_factor(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = (n - 1) as f64;
            2.0 * (m.ln() + EULER_GAMMA) - 2.0 * m / n as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Internal {
        feature: usize,
        split: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

/// Nodes stored in an arena; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ITree {
    pub nodes: Vec<Node>,
    pub height_limit: usize,
}

impl ITree {
    fn build<R: Rng + ?Sized>(
        x: &Matrix,
        rows: Vec<usize>,
        height_limit: usize,
        rng: &mut R,
    ) -> Self {
        let mut tree = ITree {
            nodes: Vec::new(),
            height_limit,
        };
        tree.grow(x, rows, 0, rng);
        tree
    }

    fn grow<R: Rng + ?Sized>(
        &mut self,
        x: &Matrix,
        rows: Vec<usize>,
        depth: usize,
        rng: &mut R,
    ) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { size: rows.len() });
        if depth >= self.height_limit || rows.len() <= 1 {
            return id;
        }
        // features with room for a split strictly inside (min, max)
        let ranges: Vec<(usize, f64, f64)> = (0..x.cols())
            .filter_map(|j| {
                let (lo, hi) =
                    rows.iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                            let v = x.get(r, j);
                            (lo.min(v), hi.max(v))
                        });
                (lo.next_up() < hi).then_some((j, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return id;
        }
        let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
        let split = loop {
            let s = rng.random_range(lo..hi);
            if s > lo {
                break s;
            }
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&i| x.get(i, feature) < split);
        let left = self.grow(x, l, depth + 1, rng);
        let right = self.grow(x, r, depth + 1, rng);
        self.nodes[id] = Node::Internal {
            feature,
            split,
            left,
            right,
        };
        id
    }

    /// Depth at which `row` lands, plus `c(size)` for the unresolved leaf.
    pub fn path_length(&self, row: &[f64]) -> f64 {
        let mut id = 0;
        let mut depth = 0.0;
        loop {
            match self.nodes[id] {
                Node::Internal {
                    feature,
                    split,
                    left,
                    right,
                } => {
                    id = if row[feature] < split { left } else { right };
                    depth += 1.0;
                }
                Node::Leaf { size } => return depth + c_factor(size),
            }
        }
    }

    /// Maximum depth of any leaf.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match nodes[id] {
                Node::Internal { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForest {
    pub trees: Vec<ITree>,
    pub psi: usize,
    pub c_norm: f64,
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Subsample size; capped at the number of rows.
    pub psi: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: DEFAULT_TREES,
            psi: DEFAULT_PSI,
        }
    }
}

impl IsolationForest {
    /// Fits `n_trees` trees, each on `min(psi, rows)` rows drawn without replacement.
    pub fn fit(x: &Matrix, params: ForestParams, seed: u64) -> Result<Self> {
        if x.rows() < 2 {
            return Err(Error::Contract(format!(
                "isolation forest needs at least 2 rows, got {}",
                x.rows()
            )));
        }
        if params.n_trees == 0 || params.psi < 2 {
            return Err(Error::Config(format!(
                "isolation forest needs n_trees >= 1 and psi >= 2, got {} and {}",
                params.n_trees, params.psi
            )));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("isolation forest input".into()));
        }
        let psi = params.psi.min(x.rows());
        let height_limit = (psi as f64).log2().ceil() as usize;
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(t as u64);
                let rows = sample(&mut rng, x.rows(), psi).into_vec();
                ITree::build(x, rows, height_limit, &mut rng)
            })
            .collect();
        Ok(Self {
            trees,
            psi,
            c_norm: c_factor(psi),
            dim: x.cols(),
        })
    }

    pub fn mean_path_length(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.path_length(row)).sum::<f64>() / self.trees.len() as f64
    }

    /// `2^(-E[h(x)] / c(psi))` for one row; higher is more anomalous.
    pub fn score_row(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.dim {
            return Err(Error::shape(
                "isolation forest score",
                (1, row.len()),
                (1, self.dim),
            ));
        }
        Ok(2f64.powf(-self.mean_path_length(row) / self.c_norm))
    }

    pub fn score(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.dim {
            return Err(Error::shape(
                "isolation forest score",
                x.shape(),
                (x.rows(), self.dim),
            ));
        }
        Ok(x.iter_rows()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|r| 2f64.powf(-self.mean_path_length(r) / self.c_norm))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sample_standard_normal;

    #[test]
    fn c_factor_values() {
        assert_eq!(c_factor(0), 0.0);
        assert_eq!(c_factor(1), 0.0);
        assert_eq!(c_factor(2), 1.0);
        let h = 255f64.ln() + 0.5772156649;
        assert!((c_factor(256) - (2.0 * h - 2.0 * 255.0 / 256.0)).abs() < 1e-12);
    }

    #[test]
    fn two_points_give_one_split() {
        let x = Matrix::from_rows(&[vec![0.0, 1.0], vec![3.0, -2.0]]).unwrap();
        let f = IsolationForest::fit(
            &x,
            ForestParams {
                n_trees: 20,
                psi: 2,
            },
            0,
        )
        .unwrap();
        for t in &f.trees {
            assert_eq!(t.nodes.len(), 3);
            assert!(matches!(t.nodes[0], Node::Internal { .. }));
            assert_eq!(t.nodes[1], Node::Leaf { size: 1 });
            assert_eq!(t.nodes[2], Node::Leaf { size: 1 });
        }
    }

    #[test]
    fn duplicates_give_single_leaves_and_equal_scores() {
        let x = Matrix::filled(10, 3, 1.5);
        let f = IsolationForest::fit(&x, ForestParams::default(), 0).unwrap();
        assert!(f.trees.iter().all(|t| t.nodes.len() == 1));
        let s = f.score(&x).unwrap();
        assert!(s.iter().all(|&v| v == s[0]));
    }

    #[test]
    fn structure_bounds() {
        let x = sample_standard_normal(256, 2, &mut ChaCha8Rng::seed_from_u64(0));
        let f = IsolationForest::fit(&x, ForestParams::default(), 0).unwrap();
        assert_eq!(f.trees.len(), 100);
        for t in &f.trees {
            assert!(t.nodes.len() < 2 * 256);
            assert!(t.depth() <= 8);
        }
    }

    #[test]
    fn splits_lie_strictly_inside_node_range() {
        let x = sample_standard_normal(64, 3, &mut ChaCha8Rng::seed_from_u64(2));
        let f = IsolationForest::fit(
            &x,
            ForestParams {
                n_trees: 10,
                psi: 64,
            },
            1,
        )
        .unwrap();
        fn check(t: &ITree, x: &Matrix, id: usize, rows: Vec<usize>) {
            if let Node::Internal {
                feature,
                split,
                left,
                right,
            } = t.nodes[id]
            {
                let vals: Vec<f64> = rows.iter().map(|&r| x.get(r, feature)).collect();
                let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                assert!(lo < split && split < hi);
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.into_iter().partition(|&i| x.get(i, feature) < split);
                check(t, x, left, l);
                check(t, x, right, r);
            }
        }
        for t in &f.trees {
            check(t, &x, 0, (0..64).collect());
        }
    }

    #[test]
    fn scores_in_unit_interval_and_deterministic() {
        let x = sample_standard_normal(300, 2, &mut ChaCha8Rng::seed_from_u64(3));
        let a = IsolationForest::fit(&x, ForestParams::default(), 9).unwrap();
        let b = IsolationForest::fit(&x, ForestParams::default(), 9).unwrap();
        assert_eq!(a, b);
        let s = a.score(&x).unwrap();
        assert!(s.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(s, b.score(&x).unwrap());
    }

    #[test]
    fn outlier_gets_top_score() {
        let mut v = vec![0.0; 99];
        v.push(100.0);
        let x = Matrix::column(&v).unwrap();
        let f = IsolationForest::fit(&x, ForestParams::default(), 0).unwrap();
        let s = f.score(&x).unwrap();
        assert!(s[..99].iter().all(|&a| a < s[99]));
    }

    #[test]
    fn depth_equal_to_normalizer_scores_half() {
        // A path of length c(psi) maps to exactly 0.5.
        let f = IsolationForest {
            trees: vec![ITree {
                nodes: vec![Node::Leaf { size: 256 }],
                height_limit: 8,
            }],
            psi: 256,
            c_norm: c_factor(256),
            dim: 1,
        };
        assert!((f.score_row(&[0.0]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(IsolationForest::fit(&Matrix::zeros(1, 2), ForestParams::default(), 0).is_err());
        let f = IsolationForest::fit(&Matrix::identity(3), ForestParams::default(), 0).unwrap();
        assert!(f.score(&Matrix::zeros(1, 2)).is_err());
    }
}
