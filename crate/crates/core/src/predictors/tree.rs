//! CART regression/classification trees stored as a flat node arena.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Gini impurity on 0/1 targets; leaves hold the positive fraction.
    Gini,
    /// Sum of squared deviations; leaves hold the mean.
    Variance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
        samples: usize,
    },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub criterion: Criterion,
    /// Root first.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Impurity of a node summarized by (count, sum, sum of squares).
fn impurity(criterion: Criterion, n: f64, sum: f64, sumsq: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    match criterion {
        // n * (1 - p^2 - (1-p)^2) with p = sum / n
        Criterion::Gini => 2.0 * sum * (n - sum) / n,
        Criterion::Variance => (sumsq - sum * sum / n).max(0.0),
    }
}

struct Builder<'a> {
    x: &'a [&'a [f64]],
    y: &'a [f64],
    criterion: Criterion,
    params: TreeParams,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf(&mut self, rows: &[usize]) -> usize {
        let sum: f64 = rows.iter().map(|&r| self.y[r]).sum();
        self.nodes.push(Node::Leaf {
            value: sum / rows.len() as f64,
            samples: rows.len(),
        });
        self.nodes.len() - 1
    }

    /// Best (feature, threshold, children impurity) over all observed midpoints.
    fn best_split(&self, rows: &[usize]) -> Option<(usize, f64, f64)> {
        let n_features = self.x[rows[0]].len();
        let total_sum: f64 = rows.iter().map(|&r| self.y[r]).sum();
        let total_sq: f64 = rows.iter().map(|&r| self.y[r] * self.y[r]).sum();
        let n = rows.len() as f64;
        let mut best: Option<(usize, f64, f64)> = None;
        let mut sorted = rows.to_vec();
        for f in 0..n_features {
            sorted.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let (mut ls, mut lsq) = (0.0, 0.0);
            for i in 0..sorted.len() - 1 {
                let y = self.y[sorted[i]];
                ls += y;
                lsq += y * y;
                let (a, b) = (self.x[sorted[i]][f], self.x[sorted[i + 1]][f]);
                if a == b {
                    continue;
                }
                let nl = (i + 1) as f64;
                let children = impurity(self.criterion, nl, ls, lsq)
                    + impurity(self.criterion, n - nl, total_sum - ls, total_sq - lsq);
                if best.map_or(true, |(_, _, c)| children < c) {
                    let mid = a + (b - a) / 2.0;
                    let threshold = if mid < b { mid } else { a };
                    best = Some((f, threshold, children));
                }
            }
        }
        best
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let n = rows.len() as f64;
        let sum: f64 = rows.iter().map(|&r| self.y[r]).sum();
        let sumsq: f64 = rows.iter().map(|&r| self.y[r] * self.y[r]).sum();
        let parent = impurity(self.criterion, n, sum, sumsq);
        if depth >= self.params.max_depth || rows.len() < self.params.min_samples_split || parent <= 1e-12 {
            return self.leaf(&rows);
        }
        let Some((feature, threshold, children)) = self.best_split(&rows) else {
            return self.leaf(&rows);
        };
        if parent - children <= 1e-12 {
            return self.leaf(&rows);
        }
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: 0.0,
            samples: 0,
        });
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

/// Grows a tree by exhaustive threshold search. `x` holds one row per example.
pub fn fit_tree(x: &[&[f64]], y: &[f64], criterion: Criterion, params: TreeParams) -> Tree {
    let mut b = Builder {
        x,
        y,
        criterion,
        params,
        nodes: Vec::new(),
    };
    if x.is_empty() {
        b.nodes.push(Node::Leaf {
            value: 0.0,
            samples: 0,
        });
    } else {
        b.build((0..x.len()).collect(), 0);
    }
    Tree {
        criterion,
        nodes: b.nodes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(depth: usize) -> TreeParams {
        TreeParams {
            max_depth: depth,
            min_samples_split: 2,
        }
    }

    #[test]
    fn pure_node_is_a_leaf() {
        let rows = [[0.0], [1.0], [2.0]];
        let x: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let t = fit_tree(&x, &[1.0, 1.0, 1.0], Criterion::Gini, params(5));
        assert_eq!(t.nodes.len(), 1);
    }

    #[test]
    fn conjunction_needs_depth_two() {
        let rows: Vec<[f64; 2]> = (0..40)
            .map(|i| [(i % 2) as f64 + 0.01 * i as f64, ((i / 2) % 2) as f64])
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| ((r[0] > 0.5) && (r[1] > 0.5)) as u8 as f64).collect();
        let x: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let acc = |t: &Tree| {
            x.iter().zip(&y).filter(|(r, &l)| (t.predict(r) >= 0.5) == (l == 1.0)).count() as f64 / 40.0
        };
        assert_eq!(acc(&fit_tree(&x, &y, Criterion::Gini, params(2))), 1.0);
        assert!(acc(&fit_tree(&x, &y, Criterion::Gini, params(1))) < 0.9);
    }

    #[test]
    fn stump_picks_the_separating_midpoint() {
        let vals = [0.3, 1.1, 2.0, 4.0, 4.5];
        let rows: Vec<[f64; 1]> = vals.iter().map(|&v| [v]).collect();
        let x: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let t = fit_tree(&x, &[0.0, 0.0, 0.0, 1.0, 1.0], Criterion::Gini, params(1));
        match &t.nodes[0] {
            Node::Split { threshold, .. } => assert_eq!(*threshold, 3.0),
            other => panic!("expected split, got {other:?}"),
        }
    }

    #[test]
    fn variance_leaves_hold_means() {
        let rows = [[0.0], [0.0], [5.0], [5.0]];
        let x: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let t = fit_tree(&x, &[1.0, 3.0, 10.0, 12.0], Criterion::Variance, params(4));
        assert_eq!(t.predict(&[0.0]), 2.0);
        assert_eq!(t.predict(&[6.0]), 11.0);
        assert_eq!(t.depth(), 1);
    }
}
