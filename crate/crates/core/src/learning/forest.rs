//! Random forest of CART trees (Gini impurity, bootstrap rows, random feature
//! subsets per split).

use ndarray::{ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::head::check_classes;
use crate::error::{QcError, Result};
use crate::rng::indexed_stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Features tried per split; `None` means `floor(sqrt(d))`.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for RfConfig {
    fn default() -> Self {
        RfConfig {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            max_features: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf { p1: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: ArrayView1<f64>) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { p1 } => return *p1,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<Tree>,
    n_features: usize,
    pub oob_accuracy: Option<f64>,
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [usize],
    mtry: usize,
    max_depth: usize,
    min_split: usize,
    nodes: Vec<Node>,
}

fn gini(c0: f64, c1: f64) -> f64 {
    let n = c0 + c1;
    if n == 0.0 {
        0.0
    } else {
        1.0 - (c0 / n).powi(2) - (c1 / n).powi(2)
    }
}

impl Builder<'_> {
    fn best_split<R: Rng>(&self, idx: &[usize], rng: &mut R) -> Option<(usize, f64)> {
        let d = self.x.ncols();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(rng);
        let n = idx.len() as f64;
        let total1 = idx.iter().filter(|&&i| self.y[i] == 1).count() as f64;
        let parent = gini(n - total1, total1);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut vals: Vec<(f64, usize)> = Vec::with_capacity(idx.len());
        for (tried, &f) in features.iter().enumerate() {
            if tried >= self.mtry && best.is_some() {
                break;
            }
            vals.clear();
            vals.extend(idx.iter().map(|&i| (self.x[(i, f)], self.y[i])));
            vals.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (mut l0, mut l1) = (0.0, 0.0);
            for k in 0..vals.len() - 1 {
                if vals[k].1 == 1 {
                    l1 += 1.0;
                } else {
                    l0 += 1.0;
                }
                if vals[k].0 == vals[k + 1].0 {
                    continue;
                }
                let nl = l0 + l1;
                let nr = n - nl;
                let (r1, r0) = (total1 - l1, nr - (total1 - l1));
                let impurity = (nl * gini(l0, l1) + nr * gini(r0, r1)) / n;
                let gain = parent - impurity;
                if best.is_none_or(|(_, _, g)| gain > g) {
                    let mid = vals[k].0 + (vals[k + 1].0 - vals[k].0) / 2.0;
                    best = Some((f, mid, gain));
                }
            }
        }
        best.map(|(f, t, _)| (f, t))
    }

    fn build<R: Rng>(&mut self, idx: &mut [usize], depth: usize, rng: &mut R) -> usize {
        let ones = idx.iter().filter(|&&i| self.y[i] == 1).count();
        let p1 = ones as f64 / idx.len() as f64;
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { p1 });
        if ones == 0 || ones == idx.len() || depth >= self.max_depth || idx.len() < self.min_split {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(idx, rng) else {
            return id;
        };
        idx.sort_by(|&a, &b| {
            (self.x[(a, feature)] > threshold).cmp(&(self.x[(b, feature)] > threshold)).then(a.cmp(&b))
        });
        let cut = idx.partition_point(|&i| self.x[(i, feature)] <= threshold);
        let (l, r) = idx.split_at_mut(cut);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }
}

impl RandomForest {
    /// Fits on rows `x` with class indices `y`. Tree `t` draws from RNG
    /// substream `t`, so the result depends only on the data order and seed.
    pub fn fit(x: ArrayView2<f64>, y: &[usize], config: &RfConfig) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(QcError::invalid("feature rows and labels differ in length"));
        }
        if config.n_trees == 0 || config.min_samples_split < 2 {
            return Err(QcError::Config("forest needs >= 1 tree and min_samples_split >= 2".into()));
        }
        check_classes(y, 1)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(QcError::invalid("non-finite training features"));
        }
        let (n, d) = x.dim();
        let mtry = config
            .max_features
            .unwrap_or_else(|| ((d as f64).sqrt().floor() as usize).max(1))
            .clamp(1, d);
        let fitted: Vec<(Tree, Vec<bool>)> = (0..config.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = indexed_stream(config.seed, t as u64);
                let mut in_bag = vec![false; n];
                let mut idx: Vec<usize> = (0..n)
                    .map(|_| {
                        let i = rng.random_range(0..n);
                        in_bag[i] = true;
                        i
                    })
                    .collect();
                let mut b = Builder {
                    x,
                    y,
                    mtry,
                    max_depth: config.max_depth.unwrap_or(usize::MAX),
                    min_split: config.min_samples_split,
                    nodes: Vec::new(),
                };
                b.build(&mut idx, 0, &mut rng);
                (Tree { nodes: b.nodes }, in_bag)
            })
            .collect();
        let mut votes = vec![(0.0, 0usize); n];
        for (tree, in_bag) in &fitted {
            for i in (0..n).filter(|&i| !in_bag[i]) {
                votes[i].0 += tree.predict(x.row(i));
                votes[i].1 += 1;
            }
        }
        let scored: Vec<bool> = votes
            .iter()
            .zip(y)
            .filter(|(v, _)| v.1 > 0)
            .map(|(v, &c)| usize::from(v.0 / v.1 as f64 > 0.5) == c)
            .collect();
        let oob_accuracy = (!scored.is_empty()).then(|| scored.iter().filter(|&&b| b).count() as f64 / scored.len() as f64);
        Ok(RandomForest {
            trees: fitted.into_iter().map(|(t, _)| t).collect(),
            n_features: d,
            oob_accuracy,
        })
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Mean of the per-tree leaf class-1 fractions.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(QcError::invalid(format!(
                "forest expects {} features, got {}",
                self.n_features,
                x.ncols()
            )));
        }
        Ok(x.rows()
            .into_iter()
            .map(|r| self.trees.iter().map(|t| t.predict(r)).sum::<f64>() / self.trees.len() as f64)
            .collect())
    }
}
