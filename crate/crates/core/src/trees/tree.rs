use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::rng::{rng_from_seed, StdRng};

/// Growth limits shared by single trees and forest members.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// When set, nodes are expanded best-gain first until this many leaves
    /// exist.
    pub max_leaf_nodes: Option<usize>,
}

impl TreeParams {
    pub fn new(max_depth: usize, min_leaf: usize) -> Self {
        Self {
            max_depth,
            min_leaf,
            max_leaf_nodes: None,
        }
    }

    pub fn with_max_leaf_nodes(mut self, max_leaf_nodes: Option<usize>) -> Self {
        self.max_leaf_nodes = max_leaf_nodes;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(Error::InvalidParameter("max_depth must be >= 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::InvalidParameter("min_leaf must be >= 1".into()));
        }
        if self.max_leaf_nodes == Some(0) || self.max_leaf_nodes == Some(1) {
            return Err(Error::InvalidParameter("max_leaf_nodes must be >= 2".into()));
        }
        Ok(())
    }
}

/// Training statistics of the rows that reached a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeStats {
    pub n: usize,
    pub mean: f64,
    /// Sum of squared deviations from `mean`.
    pub sse: f64,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        stats: NodeStats,
    },
    Leaf {
        leaf_id: usize,
        prediction: f64,
        rows: Vec<usize>,
        stats: NodeStats,
    },
}

impl Node {
    pub fn stats(&self) -> &NodeStats {
        match self {
            Node::Split { stats, .. } | Node::Leaf { stats, .. } => stats,
        }
    }
}

/// A fitted regression tree. Node 0 is the root; leaves are numbered
/// `0..n_leaves` in left-to-right order.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    nodes: Vec<Node>,
    n_features: usize,
    n_leaves: usize,
    params: TreeParams,
    seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum SplitRule {
    /// Exhaustive midpoint search over every feature.
    Best,
    /// One uniform threshold per feature, best of the `d` candidates.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Exhaustive CART split search: every midpoint between consecutive
/// distinct values of every feature, subject to `min_leaf` on both sides.
/// Equal gains keep the lowest feature, then the lowest threshold.
pub fn best_split(x: &DMatrix<f64>, y: &[f64], rows: &[usize], min_leaf: usize) -> Option<SplitCandidate> {
    let m = rows.len();
    if m < 2 * min_leaf {
        return None;
    }
    let (mean, sse) = mean_sse(y, rows);
    if sse <= 0.0 || is_constant(y, rows) {
        return None;
    }
    let mut best: Option<SplitCandidate> = None;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(m);
    for f in 0..x.ncols() {
        pairs.clear();
        pairs.extend(rows.iter().map(|&i| (x[(i, f)], y[i] - mean)));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        let mut left_sum = 0.0;
        for i in 1..m {
            left_sum += pairs[i - 1].1;
            if i < min_leaf || m - i < min_leaf {
                continue;
            }
            let (lo, hi) = (pairs[i - 1].0, pairs[i].0);
            if lo >= hi {
                continue;
            }
            // centred targets: SSE reduction = S_L^2/n_L + S_R^2/n_R - S^2/n
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / i as f64 + right_sum * right_sum / (m - i) as f64
                - total * total / m as f64;
            let mut threshold = 0.5 * (lo + hi);
            if threshold >= hi {
                threshold = lo;
            }
            consider(&mut best, SplitCandidate { feature: f, threshold, gain }, sse);
        }
    }
    best.filter(|c| c.gain > GAIN_EPS * sse)
}

const GAIN_EPS: f64 = 1e-12;

fn consider(best: &mut Option<SplitCandidate>, cand: SplitCandidate, sse: f64) {
    match best {
        Some(b) if cand.gain <= b.gain + GAIN_EPS * sse => {}
        _ => *best = Some(cand),
    }
}

fn random_split(
    x: &DMatrix<f64>,
    y: &[f64],
    rows: &[usize],
    min_leaf: usize,
    rng: &mut StdRng,
) -> Option<SplitCandidate> {
    let m = rows.len();
    if m < 2 * min_leaf {
        return None;
    }
    let (mean, sse) = mean_sse(y, rows);
    if sse <= 0.0 || is_constant(y, rows) {
        return None;
    }
    let total: f64 = rows.iter().map(|&i| y[i] - mean).sum();
    let mut best: Option<SplitCandidate> = None;
    for f in 0..x.ncols() {
        let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            (lo.min(x[(i, f)]), hi.max(x[(i, f)]))
        });
        if lo >= hi {
            continue;
        }
        let u: f64 = rng.random();
        let threshold = lo + u * (hi - lo);
        let mut n_left = 0usize;
        let mut left_sum = 0.0;
        for &i in rows {
            if x[(i, f)] <= threshold {
                n_left += 1;
                left_sum += y[i] - mean;
            }
        }
        if n_left < min_leaf || m - n_left < min_leaf {
            continue;
        }
        let right_sum = total - left_sum;
        let gain = left_sum * left_sum / n_left as f64
            + right_sum * right_sum / (m - n_left) as f64
            - total * total / m as f64;
        consider(&mut best, SplitCandidate { feature: f, threshold, gain }, sse);
    }
    best.filter(|c| c.gain > GAIN_EPS * sse)
}

fn is_constant(y: &[f64], rows: &[usize]) -> bool {
    let first = y[rows[0]];
    rows.iter().all(|&i| y[i] == first)
}

pub(crate) fn mean_sse(y: &[f64], rows: &[usize]) -> (f64, f64) {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / n;
    let sse = rows.iter().map(|&i| (y[i] - mean).powi(2)).sum();
    (mean, sse)
}

struct Pending {
    node: usize,
    rows: Vec<usize>,
    stats: NodeStats,
    split: Option<SplitCandidate>,
}

struct Frontier(f64, usize);

impl PartialEq for Frontier {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Frontier {}
impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap on gain, earlier node first on ties
        self.0.total_cmp(&other.0).then(other.1.cmp(&self.1))
    }
}

pub(crate) fn build(
    x: &DMatrix<f64>,
    y: &[f64],
    params: TreeParams,
    rule: SplitRule,
    seed: u64,
) -> Result<TreeModel> {
    params.validate()?;
    check_len(x.nrows(), y.len())?;
    if x.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = rng_from_seed(seed);
    let mut nodes: Vec<Option<Node>> = Vec::new();
    let mut pending: Vec<Option<Pending>> = Vec::new();

    let mut make = |rows: Vec<usize>, depth: usize, nodes: &mut Vec<Option<Node>>, pending: &mut Vec<Option<Pending>>| {
        let (mean, sse) = mean_sse(y, &rows);
        let stats = NodeStats { n: rows.len(), mean, sse, depth };
        let split = if depth >= params.max_depth {
            None
        } else {
            match rule {
                SplitRule::Best => best_split(x, y, &rows, params.min_leaf),
                SplitRule::Random => random_split(x, y, &rows, params.min_leaf, &mut rng),
            }
        };
        let id = nodes.len();
        nodes.push(None);
        pending.push(Some(Pending { node: id, rows, stats, split }));
        id
    };

    let root = make((0..x.nrows()).collect(), 0, &mut nodes, &mut pending);
    let mut n_leaves = 1usize;
    let mut stack = vec![root];
    let mut heap = BinaryHeap::new();
    let best_first = params.max_leaf_nodes.is_some();
    if best_first {
        heap.push(Frontier(pending[root].as_ref().and_then(|p| p.split).map_or(f64::NEG_INFINITY, |s| s.gain), root));
        stack.clear();
    }

    loop {
        let id = if best_first {
            match heap.pop() {
                Some(Frontier(_, id)) => id,
                None => break,
            }
        } else {
            match stack.pop() {
                Some(id) => id,
                None => break,
            }
        };
        let p = pending[id].take().expect("node expanded twice");
        let allow = params.max_leaf_nodes.is_none_or(|cap| n_leaves < cap);
        match p.split {
            Some(split) if allow => {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = p
                    .rows
                    .iter()
                    .partition(|&&i| x[(i, split.feature)] <= split.threshold);
                let depth = p.stats.depth + 1;
                let left = make(left_rows, depth, &mut nodes, &mut pending);
                let right = make(right_rows, depth, &mut nodes, &mut pending);
                n_leaves += 1;
                nodes[p.node] = Some(Node::Split {
                    feature: split.feature,
                    threshold: split.threshold,
                    left,
                    right,
                    stats: p.stats,
                });
                if best_first {
                    for child in [left, right] {
                        let gain = pending[child]
                            .as_ref()
                            .and_then(|c| c.split)
                            .map_or(f64::NEG_INFINITY, |s| s.gain);
                        heap.push(Frontier(gain, child));
                    }
                } else {
                    // right pushed first so the left subtree is expanded first
                    stack.push(right);
                    stack.push(left);
                }
            }
            _ => {
                nodes[p.node] = Some(Node::Leaf {
                    leaf_id: usize::MAX,
                    prediction: p.stats.mean,
                    rows: p.rows,
                    stats: p.stats,
                });
            }
        }
    }
    let nodes: Vec<Node> = nodes.into_iter().map(|n| n.expect("unfinished node")).collect();
    let mut tree = TreeModel {
        nodes,
        n_features: x.ncols(),
        n_leaves: 0,
        params,
        seed,
    };
    tree.number_leaves();
    Ok(tree)
}

/// Greedy CART regression tree (variance reduction, midpoint thresholds).
pub fn fit_tree(x: &DMatrix<f64>, y: &[f64], params: TreeParams, seed: u64) -> Result<TreeModel> {
    build(x, y, params, SplitRule::Best, seed)
}

impl TreeModel {
    pub(crate) fn from_nodes(nodes: Vec<Node>, n_features: usize, params: TreeParams, seed: u64) -> Self {
        let mut tree = Self {
            nodes,
            n_features,
            n_leaves: 0,
            params,
            seed,
        };
        tree.number_leaves();
        tree
    }

    fn number_leaves(&mut self) {
        let mut next = 0;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            match &mut self.nodes[id] {
                Node::Split { left, right, .. } => {
                    let (l, r) = (*left, *right);
                    stack.push(r);
                    stack.push(l);
                }
                Node::Leaf { leaf_id, .. } => {
                    *leaf_id = next;
                    next += 1;
                }
            }
        }
        self.n_leaves = next;
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn params(&self) -> TreeParams {
        self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.stats().depth).max().unwrap_or(0)
    }

    /// Node index of the leaf that `row` is routed to.
    pub fn leaf_node_of(&self, row: &[f64]) -> usize {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Split { feature, threshold, left, right, .. } => {
                    id = if row[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { .. } => return id,
            }
        }
    }

    fn leaf_node_of_matrix_row(&self, x: &DMatrix<f64>, i: usize) -> usize {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Split { feature, threshold, left, right, .. } => {
                    id = if x[(i, *feature)] <= *threshold { *left } else { *right };
                }
                Node::Leaf { .. } => return id,
            }
        }
    }

    /// Leaf id that row `i` of `x` is routed to.
    pub fn leaf_id_of(&self, x: &DMatrix<f64>, i: usize) -> usize {
        match &self.nodes[self.leaf_node_of_matrix_row(x, i)] {
            Node::Leaf { leaf_id, .. } => *leaf_id,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| match &self.nodes[self.leaf_node_of_matrix_row(x, i)] {
                Node::Leaf { prediction, .. } => *prediction,
                Node::Split { .. } => unreachable!(),
            })
            .collect()
    }

    /// Leaves in leaf-id order.
    pub fn leaves(&self) -> Vec<&Node> {
        let mut out: Vec<&Node> = self
            .nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .collect();
        out.sort_by_key(|n| match n {
            Node::Leaf { leaf_id, .. } => *leaf_id,
            Node::Split { .. } => unreachable!(),
        });
        out
    }

    /// Training rows stored in each leaf, indexed by leaf id.
    pub fn leaf_rows(&self) -> Vec<&[usize]> {
        self.leaves()
            .into_iter()
            .map(|n| match n {
                Node::Leaf { rows, .. } => rows.as_slice(),
                Node::Split { .. } => unreachable!(),
            })
            .collect()
    }

    /// One line per leaf: the conjunction of predicates on its path and the
    /// leaf prediction.
    pub fn rules(&self, feature_names: Option<&[String]>) -> String {
        let name = |f: usize| match feature_names {
            Some(names) => names[f].clone(),
            None => format!("x{f}"),
        };
        let mut out = String::new();
        let mut stack: Vec<(usize, Vec<String>)> = vec![(0, Vec::new())];
        while let Some((id, path)) = stack.pop() {
            match &self.nodes[id] {
                Node::Split { feature, threshold, left, right, .. } => {
                    let mut r = path.clone();
                    r.push(format!("{} > {threshold}", name(*feature)));
                    stack.push((*right, r));
                    let mut l = path;
                    l.push(format!("{} <= {threshold}", name(*feature)));
                    stack.push((*left, l));
                }
                Node::Leaf { prediction, .. } => {
                    let lhs = if path.is_empty() {
                        "TRUE".to_string()
                    } else {
                        path.join(" AND ")
                    };
                    let _ = writeln!(out, "{lhs} -> {prediction}");
                }
            }
        }
        out
    }
}

/// Number of rules (root-to-leaf paths) of a tree.
pub fn rule_count(model: &TreeModel) -> usize {
    model.n_leaves()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_data(n: usize) -> (DMatrix<f64>, Vec<f64>) {
        let x = DMatrix::from_fn(n, 1, |i, _| (i as f64 + 0.5) / n as f64);
        let y = (0..n).map(|i| if x[(i, 0)] < 0.5 { 0.0 } else { 1.0 }).collect();
        (x, y)
    }

    #[test]
    fn constant_target_gives_single_leaf() {
        let x = DMatrix::from_fn(30, 3, |i, j| ((i * 7 + j * 3) % 11) as f64);
        let y = vec![4.25; 30];
        let t = fit_tree(&x, &y, TreeParams::new(5, 1), 0).unwrap();
        assert_eq!(t.n_leaves(), 1);
        assert!(t.predict(&x).iter().all(|&p| p == 4.25));
    }

    #[test]
    fn step_function_splits_between_classes() {
        let (x, y) = step_data(100);
        let t = fit_tree(&x, &y, TreeParams::new(3, 1), 0).unwrap();
        match &t.nodes()[0] {
            Node::Split { threshold, .. } => {
                assert!(*threshold > 0.495 && *threshold < 0.505, "{threshold}");
            }
            _ => panic!("root should split"),
        }
        assert_eq!(t.n_leaves(), 2);
    }

    #[test]
    fn depth_is_capped() {
        let x = DMatrix::from_fn(64, 1, |i, _| i as f64);
        let y: Vec<f64> = (0..64).map(|i| ((i * 37) % 17) as f64).collect();
        let t = fit_tree(&x, &y, TreeParams::new(3, 1), 0).unwrap();
        assert!(t.depth() <= 3);
        assert!(t.n_leaves() <= 8);
    }

    #[test]
    fn max_leaf_nodes_caps_leaves() {
        let x = DMatrix::from_fn(64, 1, |i, _| i as f64);
        let y: Vec<f64> = (0..64).map(|i| ((i * 37) % 17) as f64).collect();
        let p = TreeParams::new(20, 1).with_max_leaf_nodes(Some(5));
        let t = fit_tree(&x, &y, p, 0).unwrap();
        assert_eq!(t.n_leaves(), 5);
    }

    #[test]
    fn min_leaf_respected() {
        let x = DMatrix::from_fn(50, 2, |i, j| ((i * (j + 3)) % 13) as f64);
        let y: Vec<f64> = (0..50).map(|i| (i % 7) as f64).collect();
        let t = fit_tree(&x, &y, TreeParams::new(10, 5), 0).unwrap();
        assert!(t.leaf_rows().iter().all(|r| r.len() >= 5));
    }

    #[test]
    fn rules_listing_has_one_line_per_leaf() {
        let (x, y) = step_data(40);
        let t = fit_tree(&x, &y, TreeParams::new(3, 1), 0).unwrap();
        let text = t.rules(None);
        assert_eq!(text.lines().count(), t.n_leaves());
        assert!(text.lines().next().unwrap().starts_with("x0 <= "));
    }
}
