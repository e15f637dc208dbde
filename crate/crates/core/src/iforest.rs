//! Isolation-forest baseline over flattened spectrograms.
//!
//! Each tree is grown on a uniform subsample of at most 256 rows. A node
//! picks a random feature that is not constant within the node and splits
//! uniformly between its observed minimum and maximum, until a single row
//! remains or the depth cap `ceil(log2 ψ)` is reached. The anomaly score is
//! `2^(-E[h(x)] / c(ψ))`, where a leaf holding `m` rows credits `c(m)`.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_9;

/// Average path length of an unsuccessful binary-search-tree lookup among
/// `n` points, the normalizer `c(n)`.
pub fn expected_path_length(n: usize) -> f64 {
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
#[serde(default, deny_unknown_fields)]
pub struct IsolationForestConfig {
    pub n_trees: usize,
    /// Upper bound on ψ; the effective subsample is `min(max_samples, n)`.
    pub max_samples: usize,
    pub seed: u64,
}

impl Default for IsolationForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_samples: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Node {
    Split {
        feature: u32,
        value: f32,
        left: u32,
        right: u32,
    },
    Leaf {
        size: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationTree {
    nodes: Vec<Node>,
}

impl IsolationTree {
    fn grow(rows: &[&[f32]], sample: Vec<usize>, depth_cap: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut tree = IsolationTree { nodes: Vec::new() };
        let mut features: Vec<u32> = (0..rows[0].len() as u32).collect();
        tree.build(rows, sample, 0, depth_cap, &mut features, rng);
        tree
    }

    fn build(
        &mut self,
        rows: &[&[f32]],
        members: Vec<usize>,
        depth: usize,
        depth_cap: usize,
        features: &mut [u32],
        rng: &mut ChaCha8Rng,
    ) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf {
            size: members.len() as u32,
        });
        if members.len() <= 1 || depth >= depth_cap {
            return id;
        }
        // Lazy Fisher-Yates over the features until one varies in the node.
        let mut chosen = None;
        for i in 0..features.len() {
            let j = rng.gen_range(i..features.len());
            features.swap(i, j);
            let f = features[i] as usize;
            let (lo, hi) = members.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &r| {
                (lo.min(rows[r][f]), hi.max(rows[r][f]))
            });
            if lo < hi {
                chosen = Some((f, lo, hi));
                break;
            }
        }
        let Some((feature, lo, hi)) = chosen else {
            return id;
        };
        let mut value = rng.gen_range(lo..hi);
        if value <= lo {
            value = lo + (hi - lo) * 0.5;
        }
        let (left, right): (Vec<usize>, Vec<usize>) = members.into_iter().partition(|&r| rows[r][feature] < value);
        let l = self.build(rows, left, depth + 1, depth_cap, features, rng);
        let r = self.build(rows, right, depth + 1, depth_cap, features, rng);
        self.nodes[id as usize] = Node::Split {
            feature: feature as u32,
            value,
            left: l,
            right: r,
        };
        id
    }

    /// Path length of `x`, with the leaf credited by `c(leaf size)`.
    pub fn path_length(&self, x: &[f32]) -> f64 {
        let mut node = 0usize;
        let mut depth = 0.0;
        loop {
            match self.nodes[node] {
                Node::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    node = if x[feature as usize] < value { left } else { right } as usize;
                    depth += 1.0;
                }
                Node::Leaf { size } => return depth + expected_path_length(size as usize),
            }
        }
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(nodes, left as usize).max(walk(nodes, right as usize)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForest {
    trees: Vec<IsolationTree>,
    subsample_size: usize,
    train_size: usize,
    n_features: usize,
}

impl IsolationForest {
    /// Fits on the rows of `data`, which must share one length. Tree `t` draws
    /// from ChaCha stream `t` of the configured seed.
    pub fn fit<R: AsRef<[f32]> + Sync>(data: &[R], cfg: &IsolationForestConfig) -> Result<Self> {
        if data.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "isolation forest needs at least 2 rows, got {}",
                data.len()
            )));
        }
        if cfg.n_trees == 0 || cfg.max_samples < 2 {
            return Err(Error::Config(
                "n_trees must be positive and max_samples at least 2".into(),
            ));
        }
        let rows: Vec<&[f32]> = data.iter().map(AsRef::as_ref).collect();
        let n_features = rows[0].len();
        if n_features == 0 {
            return Err(Error::InvalidInput("rows are empty".into()));
        }
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n_features) {
            return Err(shape_err!("row {i} has {} features, row 0 has {n_features}", r.len()));
        }
        if rows.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidInput("training data contains non-finite values".into()));
        }
        let psi = cfg.max_samples.min(rows.len());
        let depth_cap = (psi as f64).log2().ceil() as usize;
        let trees = (0..cfg.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(t as u64);
                let sample = index::sample(&mut rng, rows.len(), psi).into_vec();
                IsolationTree::grow(&rows, sample, depth_cap, &mut rng)
            })
            .collect();
        Ok(Self {
            trees,
            subsample_size: psi,
            train_size: rows.len(),
            n_features,
        })
    }

    pub fn trees(&self) -> &[IsolationTree] {
        &self.trees
    }

    pub fn subsample_size(&self) -> usize {
        self.subsample_size
    }

    pub fn train_size(&self) -> usize {
        self.train_size
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Mean path length of `x` over the trees.
    pub fn mean_path_length(&self, x: &[f32]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(shape_err!(
                "isolation forest expects {} features, got {}",
                self.n_features,
                x.len()
            ));
        }
        Ok(self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64)
    }

    /// Anomaly score in (0, 1); higher is more anomalous.
    pub fn score(&self, x: &[f32]) -> Result<f64> {
        let h = self.mean_path_length(x)?;
        Ok(2f64.powf(-h / expected_path_length(self.subsample_size)))
    }

    pub fn score_many<R: AsRef<[f32]> + Sync>(&self, xs: &[R]) -> Result<Vec<f64>> {
        xs.par_iter().map(|x| self.score(x.as_ref())).collect()
    }
}

#[cfg(test)]
mod tests {
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    fn gaussian(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
        (0..n)
            .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
            .collect()
    }

    #[test]
    fn normalizer_values() {
        assert_eq!(expected_path_length(0), 0.0);
        assert_eq!(expected_path_length(1), 0.0);
        assert_eq!(expected_path_length(2), 1.0);
        // 2 (ln 255 + γ) - 2·255/256
        assert!((expected_path_length(256) - 10.244_770_920).abs() < 1e-8);
        for n in 1..600 {
            assert!(expected_path_length(n + 1) >= expected_path_length(n));
        }
    }

    #[test]
    fn two_points_split_at_depth_one() {
        let data = vec![vec![0.0f32], vec![1.0]];
        let f = IsolationForest::fit(&data, &IsolationForestConfig::default()).unwrap();
        assert_eq!(f.subsample_size(), 2);
        for t in f.trees() {
            assert_eq!(t.depth(), 1);
            assert_eq!(t.path_length(&[0.0]), 1.0);
            assert_eq!(t.path_length(&[1.0]), 1.0);
        }
        assert_eq!(f.score(&[0.0]).unwrap(), 0.5);
    }

    #[test]
    fn identical_points_give_equal_scores() {
        let data = vec![vec![3.0f32, -1.0]; 20];
        let f = IsolationForest::fit(&data, &IsolationForestConfig::default()).unwrap();
        assert!(f.trees().iter().all(|t| t.depth() == 0));
        let s = f.score(&[3.0, -1.0]).unwrap();
        assert!((s - 0.5).abs() < 1e-12);
        assert_eq!(f.score(&[100.0, 7.0]).unwrap(), s);
    }

    #[test]
    fn depth_cap_and_score_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = gaussian(1000, 4, &mut rng);
        let f = IsolationForest::fit(&data, &IsolationForestConfig::default()).unwrap();
        assert_eq!(f.subsample_size(), 256);
        assert_eq!(f.train_size(), 1000);
        assert!(f.trees().iter().all(|t| t.depth() <= 8));
        let probes = gaussian(50, 4, &mut rng);
        let mut far = probes.clone();
        far.push(vec![1e30; 4]);
        far.push(vec![-1e30; 4]);
        for s in f.score_many(&far).unwrap() {
            assert!(s > 0.0 && s < 1.0, "{s}");
        }
    }

    #[test]
    fn uniform_cluster_scores_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<Vec<f32>> = (0..512).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let f = IsolationForest::fit(&data, &IsolationForestConfig::default()).unwrap();
        let scores = f.score_many(&data).unwrap();
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        assert!((mean - 0.5).abs() < 0.1, "{mean}");
    }

    #[test]
    fn deterministic_under_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = gaussian(300, 3, &mut rng);
        let cfg = IsolationForestConfig {
            seed: 9,
            ..Default::default()
        };
        let a = IsolationForest::fit(&data, &cfg).unwrap();
        let b = IsolationForest::fit(&data, &cfg).unwrap();
        assert_eq!(a, b);
        let c = IsolationForest::fit(&data, &IsolationForestConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = IsolationForestConfig::default();
        assert!(IsolationForest::fit(&[vec![1.0f32]], &cfg).is_err());
        assert!(IsolationForest::fit(&[vec![1.0f32], vec![1.0, 2.0]], &cfg).is_err());
        assert!(IsolationForest::fit(&[vec![f32::NAN], vec![1.0]], &cfg).is_err());
        let f = IsolationForest::fit(&[vec![1.0f32], vec![2.0]], &cfg).unwrap();
        assert!(f.score(&[1.0, 2.0]).is_err());
    }
}
