use std::cmp::Ordering;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::seed::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct TreeParams {
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub bootstrap: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "kebab-case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

/// Bootstrap-aggregated CART regression trees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Node>,
}

fn cmp_rows(a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)) -> Ordering {
    a.0.iter()
        .zip(&b.0)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
        .then(a.1.total_cmp(&b.1))
}

struct Builder<'a> {
    rows: &'a [(Vec<f64>, f64)],
    max_depth: usize,
    min_leaf: usize,
}

impl Builder<'_> {
    fn mean(&self, idx: &[usize]) -> f64 {
        idx.iter().map(|&i| self.rows[i].1).sum::<f64>() / idx.len() as f64
    }

    fn build(&self, idx: &mut [usize], depth: usize) -> Node {
        let mean = self.mean(idx);
        if depth >= self.max_depth || idx.len() < 2 * self.min_leaf.max(1) {
            return Node::Leaf { value: mean };
        }
        let total: f64 = idx.iter().map(|&i| self.rows[i].1).sum();
        let total_sq: f64 = idx.iter().map(|&i| self.rows[i].1.powi(2)).sum();
        let n = idx.len() as f64;
        let parent_sse = total_sq - total * total / n;
        if parent_sse <= 1e-12 * (1.0 + total_sq) {
            return Node::Leaf { value: mean };
        }

        // (sse, feature, threshold)
        let mut best: Option<(f64, usize, f64)> = None;
        let features = self.rows[idx[0]].0.len();
        for f in 0..features {
            // `idx` is in canonical row order, so a stable sort keeps ties deterministic.
            idx.sort_by(|&a, &b| self.rows[a].0[f].total_cmp(&self.rows[b].0[f]));
            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            for k in 0..idx.len() - 1 {
                let y = self.rows[idx[k]].1;
                left_sum += y;
                left_sq += y * y;
                let n_left = k + 1;
                let n_right = idx.len() - n_left;
                if n_left < self.min_leaf || n_right < self.min_leaf {
                    continue;
                }
                let here = self.rows[idx[k]].0[f];
                let next = self.rows[idx[k + 1]].0[f];
                if here == next {
                    continue;
                }
                let right_sum = total - left_sum;
                let right_sq = total_sq - left_sq;
                let sse = (left_sq - left_sum * left_sum / n_left as f64)
                    + (right_sq - right_sum * right_sum / n_right as f64);
                if best.is_none_or(|(b, _, _)| sse < b) {
                    best = Some((sse, f, here + (next - here) / 2.0));
                }
            }
            idx.sort_unstable();
        }
        let Some((sse, feature, threshold)) = best else {
            return Node::Leaf { value: mean };
        };
        if sse >= parent_sse {
            return Node::Leaf { value: mean };
        }
        let (mut left, mut right): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.rows[i].0[feature] <= threshold);
        Node::Split {
            feature,
            threshold,
            left: Box::new(self.build(&mut left, depth + 1)),
            right: Box::new(self.build(&mut right, depth + 1)),
        }
    }
}

impl Forest {
    pub fn fit(inputs: &[Vec<f64>], targets: &[f64], params: &TreeParams, rng: &mut Rng) -> Self {
        // Canonical order makes the bootstrap independent of row order.
        let mut rows: Vec<(Vec<f64>, f64)> = inputs
            .iter()
            .cloned()
            .zip(targets.iter().copied())
            .collect();
        rows.sort_by(cmp_rows);
        let builder = Builder {
            rows: &rows,
            max_depth: params.max_depth,
            min_leaf: params.min_leaf,
        };
        let n = rows.len();
        let trees = (0..params.trees)
            .map(|_| {
                let mut idx: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                idx.sort_unstable();
                builder.build(&mut idx, 0)
            })
            .collect();
        Self { trees }
    }

    pub fn predict(&self, history: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(history)).sum::<f64>() / self.trees.len() as f64
    }
}
