//! Decision trees: Newton-step regression trees for boosting and Gini
//! classification trees for the forest. Both use exact greedy splits with
//! thresholds at midpoints between consecutive distinct values.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node<L> {
    Leaf(L),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Flat tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree<L> {
    pub nodes: Vec<Node<L>>,
}

impl<L> Tree<L> {
    pub fn leaf_for(&self, x: &[f64]) -> &L {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(l) => return l,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk<L>(t: &Tree<L>, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
            }
        }
        walk(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf(_)))
            .count()
    }
}

/// Sorted `(value, sample)` pairs of one feature over `idx`.
fn sorted_column(x: &[Vec<f64>], idx: &[usize], f: usize) -> Vec<(f64, usize)> {
    let mut col: Vec<(f64, usize)> = idx.iter().map(|&i| (x[i][f], i)).collect();
    col.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    col
}

fn partition(x: &[Vec<f64>], idx: &[usize], f: usize, t: f64) -> (Vec<usize>, Vec<usize>) {
    idx.iter().partition(|&&i| x[i][f] <= t)
}

/// Optimal leaf weight `-G / (H + lambda)`.
pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

fn leaf_score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

pub struct RegressionGrower<'a> {
    pub x: &'a [Vec<f64>],
    pub grad: &'a [f64],
    pub hess: &'a [f64],
    pub lambda: f64,
    pub max_depth: usize,
    pub min_child_hessian: f64,
}

impl RegressionGrower<'_> {
    pub fn grow(&self, idx: &[usize]) -> Tree<f64> {
        let mut tree = Tree { nodes: Vec::new() };
        self.grow_node(&mut tree, idx, 0);
        tree
    }

    fn grow_node(&self, tree: &mut Tree<f64>, idx: &[usize], depth: usize) -> usize {
        let g: f64 = idx.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = idx.iter().map(|&i| self.hess[i]).sum();
        let me = tree.nodes.len();
        tree.nodes.push(Node::Leaf(leaf_weight(g, h, self.lambda)));
        if depth >= self.max_depth || idx.len() < 2 {
            return me;
        }
        let parent = leaf_score(g, h, self.lambda);
        let mut best: Option<(f64, usize, f64)> = None;
        for f in 0..self.x[0].len() {
            let col = sorted_column(self.x, idx, f);
            let (mut gl, mut hl) = (0.0, 0.0);
            for k in 0..col.len() - 1 {
                let i = col[k].1;
                gl += self.grad[i];
                hl += self.hess[i];
                if col[k].0 == col[k + 1].0 {
                    continue;
                }
                let (gr, hr) = (g - gl, h - hl);
                if hl < self.min_child_hessian || hr < self.min_child_hessian {
                    continue;
                }
                let gain =
                    leaf_score(gl, hl, self.lambda) + leaf_score(gr, hr, self.lambda) - parent;
                if gain > 1e-12 && best.is_none_or(|(b, _, _)| gain > b) {
                    best = Some((gain, f, (col[k].0 + col[k + 1].0) / 2.0));
                }
            }
        }
        if let Some((_, feature, threshold)) = best {
            let (li, ri) = partition(self.x, idx, feature, threshold);
            let left = self.grow_node(tree, &li, depth + 1);
            let right = self.grow_node(tree, &ri, depth + 1);
            tree.nodes[me] = Node::Split {
                feature,
                threshold,
                left,
                right,
            };
        }
        me
    }
}

/// Leaf of a classification tree: per-class sample counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLeaf {
    pub counts: Vec<usize>,
}

impl ClassLeaf {
    /// Majority class; ties go to the lowest class id.
    pub fn majority(&self) -> usize {
        let mut best = 0;
        for (c, &n) in self.counts.iter().enumerate() {
            if n > self.counts[best] {
                best = c;
            }
        }
        best
    }
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// CART classification tree with Gini impurity and a random feature subset
/// per split.
pub struct ClassTreeGrower<'a> {
    pub x: &'a [Vec<f64>],
    pub y: &'a [usize],
    pub n_classes: usize,
    pub max_depth: usize,
    pub max_features: usize,
}

impl ClassTreeGrower<'_> {
    /// `idx` may repeat samples (bootstrap).
    pub fn grow(&self, idx: &[usize], rng: &mut Rng) -> Tree<ClassLeaf> {
        let mut tree = Tree { nodes: Vec::new() };
        self.grow_node(&mut tree, idx, 0, rng);
        tree
    }

    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    fn grow_node(
        &self,
        tree: &mut Tree<ClassLeaf>,
        idx: &[usize],
        depth: usize,
        rng: &mut Rng,
    ) -> usize {
        let counts = self.counts(idx);
        let me = tree.nodes.len();
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        tree.nodes.push(Node::Leaf(ClassLeaf {
            counts: counts.clone(),
        }));
        if depth >= self.max_depth || pure || idx.len() < 2 {
            return me;
        }
        let n = idx.len();
        let parent = gini(&counts, n);
        let n_features = self.x[0].len();
        let chosen = index::sample(rng, n_features, self.max_features.clamp(1, n_features));
        let mut best: Option<(f64, usize, f64)> = None;
        for f in chosen.iter() {
            let col = sorted_column(self.x, idx, f);
            let mut left = vec![0usize; self.n_classes];
            for k in 0..n - 1 {
                left[self.y[col[k].1]] += 1;
                if col[k].0 == col[k + 1].0 {
                    continue;
                }
                let nl = k + 1;
                let right: Vec<usize> = counts.iter().zip(&left).map(|(a, b)| a - b).collect();
                let weighted = (nl as f64 * gini(&left, nl)
                    + (n - nl) as f64 * gini(&right, n - nl))
                    / n as f64;
                let decrease = parent - weighted;
                if decrease > 1e-12 && best.is_none_or(|(b, _, _)| decrease > b) {
                    best = Some((decrease, f, (col[k].0 + col[k + 1].0) / 2.0));
                }
            }
        }
        if let Some((_, feature, threshold)) = best {
            let (li, ri) = partition(self.x, idx, feature, threshold);
            let left = self.grow_node(tree, &li, depth + 1, rng);
            let right = self.grow_node(tree, &ri, depth + 1, rng);
            tree.nodes[me] = Node::Split {
                feature,
                threshold,
                left,
                right,
            };
        }
        me
    }
}
