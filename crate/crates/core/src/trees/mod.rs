//! Regression trees used both as leaf partitioners for augmentation and as
//! base learners.

mod forest;
mod prune;
mod tree;

pub use forest::{fit_extra_trees, ForestModel};
pub use prune::{
    prune_at_alpha, prune_cost_complexity, prune_cross_validated, prune_with_path, pruning_path, PruningStep,
};
pub use tree::{best_split, fit_tree, rule_count, Node, NodeStats, SplitCandidate, TreeModel, TreeParams};

use nalgebra::DMatrix;

/// Disjoint, non-empty row groups obtained by routing rows through a tree.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafPartition {
    /// Row indices per non-empty leaf, ascending.
    pub subpopulations: Vec<Vec<usize>>,
    /// Leaf id of each subpopulation.
    pub leaf_ids: Vec<usize>,
}

impl LeafPartition {
    pub fn len(&self) -> usize {
        self.subpopulations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subpopulations.is_empty()
    }
}

/// Routes every row of `x` to its leaf. Leaves that receive no rows are
/// omitted.
pub fn assign_leaves(model: &TreeModel, x: &DMatrix<f64>) -> LeafPartition {
    assert_eq!(x.ncols(), model.n_features(), "column count differs from training data");
    let mut groups = vec![Vec::new(); model.n_leaves()];
    for i in 0..x.nrows() {
        groups[model.leaf_id_of(x, i)].push(i);
    }
    let (leaf_ids, subpopulations) = groups
        .into_iter()
        .enumerate()
        .filter(|(_, rows)| !rows.is_empty())
        .unzip();
    LeafPartition {
        subpopulations,
        leaf_ids,
    }
}

/// Either a single tree or a forest, for prediction.
pub trait TreePredictor {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64>;
}

impl TreePredictor for TreeModel {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        TreeModel::predict(self, x)
    }
}

impl TreePredictor for ForestModel {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        ForestModel::predict(self, x)
    }
}

pub fn predict_tree<M: TreePredictor + ?Sized>(model: &M, x: &DMatrix<f64>) -> Vec<f64> {
    model.predict(x)
}
