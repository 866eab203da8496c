//! CART regression trees with exhaustive threshold scans.

use nalgebra::DMatrix;

use crate::rng::SimRng;

#[derive(Clone, Copy, Debug)]
pub(crate) struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; all features when `>= p`.
    pub mtry: usize,
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Leaf {
        value: f64,
        count: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
    /// Number of rows going left.
    n_left: usize,
}

impl RegressionTree {
    /// Grows a tree on `rows` (duplicates allowed, as in bootstrap samples).
    /// `rng` picks the candidate features when `mtry < p`.
    pub(crate) fn fit(
        x: &DMatrix<f64>,
        y: &[f64],
        rows: Vec<usize>,
        params: TreeParams,
        mut rng: Option<&mut SimRng>,
    ) -> Self {
        let mut tree = Self { nodes: Vec::new() };
        tree.grow(x, y, rows, 0, params, &mut rng);
        tree
    }

    fn grow(
        &mut self,
        x: &DMatrix<f64>,
        y: &[f64],
        rows: Vec<usize>,
        depth: usize,
        params: TreeParams,
        rng: &mut Option<&mut SimRng>,
    ) -> usize {
        let id = self.nodes.len();
        let n = rows.len();
        let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / n as f64;
        self.nodes.push(Node::Leaf { value: mean, count: n });
        if depth >= params.max_depth || n < 2 * params.min_leaf.max(1) {
            return id;
        }

        let p = x.ncols();
        let features: Vec<usize> = match rng.as_deref_mut() {
            Some(r) if params.mtry < p => r.choose_indices(p, params.mtry.max(1)),
            _ => (0..p).collect(),
        };
        let Some(best) = best_split(x, y, &rows, &features, params.min_leaf.max(1)) else {
            return id;
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| x[(r, best.feature)] <= best.threshold);
        debug_assert_eq!(left.len(), best.n_left);
        let l = self.grow(x, y, left, depth + 1, params, rng);
        let r = self.grow(x, y, right, depth + 1, params, rng);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: l,
            right: r,
        };
        id
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value, .. } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    /// Training-row counts of the leaves.
    pub fn leaf_counts(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { count, .. } => Some(*count),
                Node::Split { .. } => None,
            })
            .collect()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Best variance-reduction split over `features`, keeping at least
/// `min_leaf` rows on each side. Thresholds sit midway between
/// consecutive distinct values.
fn best_split(x: &DMatrix<f64>, y: &[f64], rows: &[usize], features: &[usize], min_leaf: usize) -> Option<Split> {
    let n = rows.len();
    let total: f64 = rows.iter().map(|&r| y[r]).sum();
    let base = total * total / n as f64;
    // gains below this are rounding noise
    let floor = 1e-12 * rows.iter().map(|&r| y[r] * y[r]).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut best: Option<Split> = None;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    for &f in features {
        let col = x.column(f);
        pairs.clear();
        pairs.extend(rows.iter().map(|&r| (col[r], y[r])));
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut left_sum = 0.0;
        for i in 1..n {
            left_sum += pairs[i - 1].1;
            if i < min_leaf || n - i < min_leaf {
                continue;
            }
            let (lo, hi) = (pairs[i - 1].0, pairs[i].0);
            if lo == hi {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / i as f64 + right_sum * right_sum / (n - i) as f64 - base;
            if gain > best.as_ref().map_or(floor, |b| b.gain) {
                let mut threshold = 0.5 * (lo + hi);
                // midpoint can round up to `hi` for adjacent floats
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some(Split {
                    feature: f,
                    threshold,
                    gain,
                    n_left: i,
                });
            }
        }
    }
    best
}
