//! Minimal cost-complexity (weakest-link) pruning.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use super::tree::{fit_tree, Node, TreeModel, TreeParams};
use crate::error::{check_len, Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// One subtree on the pruning path: the smallest alpha at which it becomes
/// optimal, and which internal nodes of the original tree it turns into
/// leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct PruningStep {
    pub alpha: f64,
    pub collapsed: Vec<bool>,
    pub n_leaves: usize,
}

/// Leaf SSE sum and leaf count of the current subtree below `id`, and the
/// weakest-link value of every internal node in it.
fn scan(
    nodes: &[Node],
    collapsed: &[bool],
    id: usize,
    total_n: f64,
    links: &mut Vec<(usize, f64)>,
) -> (f64, usize) {
    match &nodes[id] {
        Node::Split { left, right, stats, .. } if !collapsed[id] => {
            let (rl, nl) = scan(nodes, collapsed, *left, total_n, links);
            let (rr, nr) = scan(nodes, collapsed, *right, total_n, links);
            let r_branch = rl + rr;
            let leaves = nl + nr;
            let r_node = stats.sse / total_n;
            links.push((id, (r_node - r_branch) / (leaves - 1) as f64));
            (r_branch, leaves)
        }
        node => (node.stats().sse / total_n, 1),
    }
}

/// Full weakest-link sequence, from the unpruned tree (alpha 0) to the root
/// alone. Risk is the training SSE divided by the root sample count.
pub fn pruning_path(model: &TreeModel) -> Vec<PruningStep> {
    let nodes = model.nodes();
    let total_n = nodes[0].stats().n as f64;
    let mut collapsed = vec![false; nodes.len()];
    let mut steps = vec![PruningStep {
        alpha: 0.0,
        collapsed: collapsed.clone(),
        n_leaves: model.n_leaves(),
    }];
    let mut alpha = 0.0f64;
    loop {
        let mut links = Vec::new();
        let (_, leaves) = scan(nodes, &collapsed, 0, total_n, &mut links);
        if leaves == 1 {
            break;
        }
        let weakest = links.iter().map(|l| l.1).fold(f64::INFINITY, f64::min);
        let cutoff = weakest + 1e-12 * weakest.abs().max(f64::MIN_POSITIVE);
        for &(id, g) in &links {
            if g <= cutoff {
                collapsed[id] = true;
            }
        }
        alpha = alpha.max(weakest.max(0.0));
        let (_, n_leaves) = scan(nodes, &collapsed, 0, total_n, &mut Vec::new());
        steps.push(PruningStep {
            alpha,
            collapsed: collapsed.clone(),
            n_leaves,
        });
    }
    steps
}

fn gather_rows(nodes: &[Node], id: usize, out: &mut Vec<usize>) {
    match &nodes[id] {
        Node::Split { left, right, .. } => {
            gather_rows(nodes, *left, out);
            gather_rows(nodes, *right, out);
        }
        Node::Leaf { rows, .. } => out.extend_from_slice(rows),
    }
}

/// Materialises the subtree in which every `collapsed` node becomes a leaf.
pub(crate) fn subtree(model: &TreeModel, collapsed: &[bool]) -> TreeModel {
    let src = model.nodes();
    let mut out: Vec<Node> = Vec::new();
    fn copy(src: &[Node], collapsed: &[bool], id: usize, out: &mut Vec<Node>) -> usize {
        let slot = out.len();
        match &src[id] {
            Node::Split { feature, threshold, left, right, stats } if !collapsed[id] => {
                out.push(Node::Leaf {
                    leaf_id: 0,
                    prediction: 0.0,
                    rows: Vec::new(),
                    stats: *stats,
                });
                let l = copy(src, collapsed, *left, out);
                let r = copy(src, collapsed, *right, out);
                out[slot] = Node::Split {
                    feature: *feature,
                    threshold: *threshold,
                    left: l,
                    right: r,
                    stats: *stats,
                };
            }
            node => {
                let mut rows = Vec::new();
                gather_rows(src, id, &mut rows);
                rows.sort_unstable();
                out.push(Node::Leaf {
                    leaf_id: 0,
                    prediction: node.stats().mean,
                    rows,
                    stats: *node.stats(),
                });
            }
        }
        slot
    }
    copy(src, collapsed, 0, &mut out);
    TreeModel::from_nodes(out, model.n_features(), model.params(), model.seed())
}

fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64
}

/// Prunes to the path subtree whose alpha (among `alphas`) gives the lowest
/// validation squared error. Ties go to the smaller tree. An empty `alphas`
/// list means every alpha on the path.
pub fn prune_cost_complexity(
    model: &TreeModel,
    alphas: &[f64],
    x_val: &DMatrix<f64>,
    y_val: &[f64],
) -> Result<TreeModel> {
    check_len(x_val.nrows(), y_val.len())?;
    if y_val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let path = pruning_path(model);
    let candidates: Vec<f64> = if alphas.is_empty() {
        path.iter().map(|s| s.alpha).collect()
    } else {
        alphas.to_vec()
    };
    let mut best: Option<(f64, usize, TreeModel)> = None;
    for alpha in candidates {
        let step = step_at(&path, alpha);
        let tree = subtree(model, &step.collapsed);
        let err = mse(&tree.predict(x_val), y_val);
        let better = match &best {
            None => true,
            Some((e, leaves, _)) => err < *e || (err == *e && tree.n_leaves() < *leaves),
        };
        if better {
            best = Some((err, tree.n_leaves(), tree));
        }
    }
    Ok(best.expect("at least one candidate").2)
}

/// [`prune_cost_complexity`] over the tree's own pruning-path alphas.
pub fn prune_with_path(model: &TreeModel, x_val: &DMatrix<f64>, y_val: &[f64]) -> Result<TreeModel> {
    prune_cost_complexity(model, &[], x_val, y_val)
}

fn step_at(path: &[PruningStep], alpha: f64) -> &PruningStep {
    path.iter().rev().find(|s| s.alpha <= alpha).unwrap_or(&path[0])
}

fn predict_collapsed(nodes: &[Node], collapsed: &[bool], x: &DMatrix<f64>, row: usize) -> f64 {
    let mut id = 0;
    loop {
        match &nodes[id] {
            Node::Split { feature, threshold, left, right, .. } if !collapsed[id] => {
                id = if x[(row, *feature)] <= *threshold { *left } else { *right };
            }
            node => return node.stats().mean,
        }
    }
}

/// The optimal subtree for a fixed complexity penalty.
pub fn prune_at_alpha(model: &TreeModel, alpha: f64) -> TreeModel {
    let path = pruning_path(model);
    subtree(model, &step_at(&path, alpha).collapsed)
}

/// Grows a tree on all rows and prunes it at the penalty with the lowest
/// K-fold cross-validated squared error. Candidate penalties are the
/// geometric midpoints of the full tree's pruning path; ties go to the
/// larger penalty.
pub fn prune_cross_validated(
    x: &DMatrix<f64>,
    y: &[f64],
    params: TreeParams,
    folds: usize,
    seed: u64,
) -> Result<TreeModel> {
    check_len(x.nrows(), y.len())?;
    let n = y.len();
    if folds < 2 || n < 2 * folds {
        return Err(Error::InvalidParameter(format!(
            "cross-validated pruning with {folds} folds needs n >= {}",
            2 * folds.max(2)
        )));
    }
    let full = fit_tree(x, y, params, seed)?;
    let path = pruning_path(&full);
    let candidates: Vec<f64> = (0..path.len())
        .map(|k| match path.get(k + 1) {
            Some(next) => (path[k].alpha * next.alpha).sqrt(),
            None => path[k].alpha,
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(derive_seed(seed, ["prune-cv"])));
    let mut sse = vec![0.0; candidates.len()];
    for f in 0..folds {
        let (tr, va): (Vec<usize>, Vec<usize>) = (0..n).partition(|&p| p % folds != f);
        let tr: Vec<usize> = tr.iter().map(|&p| order[p]).collect();
        let va: Vec<usize> = va.iter().map(|&p| order[p]).collect();
        let y_tr: Vec<f64> = tr.iter().map(|&i| y[i]).collect();
        let tree = fit_tree(&x.select_rows(&tr), &y_tr, params, seed)?;
        let fold_path = pruning_path(&tree);
        for (c, &alpha) in candidates.iter().enumerate() {
            let step = step_at(&fold_path, alpha);
            sse[c] += va
                .iter()
                .map(|&i| (predict_collapsed(tree.nodes(), &step.collapsed, x, i) - y[i]).powi(2))
                .sum::<f64>();
        }
    }
    let mut best = 0;
    for c in 1..candidates.len() {
        if sse[c] <= sse[best] {
            best = c;
        }
    }
    Ok(subtree(&full, &step_at(&path, candidates[best]).collapsed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noisy() -> (DMatrix<f64>, Vec<f64>) {
        let x = DMatrix::from_fn(120, 1, |i, _| i as f64 / 120.0);
        let y = (0..120)
            .map(|i| x[(i, 0)] + 0.3 * (((i * 7919) % 97) as f64 / 97.0 - 0.5))
            .collect();
        (x, y)
    }

    #[test]
    fn path_ends_at_root_with_increasing_alpha() {
        let (x, y) = noisy();
        let t = fit_tree(&x, &y, TreeParams::new(8, 1), 0).unwrap();
        let path = pruning_path(&t);
        assert_eq!(path[0].n_leaves, t.n_leaves());
        assert_eq!(path.last().unwrap().n_leaves, 1);
        for w in path.windows(2) {
            assert!(w[1].alpha >= w[0].alpha);
            assert!(w[1].n_leaves < w[0].n_leaves);
        }
    }

    #[test]
    fn zero_alpha_on_training_data_keeps_full_tree() {
        let (x, y) = noisy();
        let t = fit_tree(&x, &y, TreeParams::new(30, 1), 0).unwrap();
        let p = prune_cost_complexity(&t, &[0.0, 0.01, 1.0], &x, &y).unwrap();
        assert_eq!(p.n_leaves(), t.n_leaves());
    }

    #[test]
    fn infinite_alpha_collapses_to_root() {
        let (x, y) = noisy();
        let t = fit_tree(&x, &y, TreeParams::new(8, 1), 0).unwrap();
        // validation target unrelated to x: every split hurts
        let yv = vec![y.iter().sum::<f64>() / y.len() as f64; y.len()];
        let p = prune_cost_complexity(&t, &[0.0, f64::INFINITY], &x, &yv).unwrap();
        assert_eq!(p.n_leaves(), 1);
    }
}
