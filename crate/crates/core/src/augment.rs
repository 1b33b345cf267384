//! Tree-partitioned Gaussian-mixture augmentation.
//!
//! Treated and control units are handled separately. For each group a
//! regression tree (or an extremely randomised forest) is fitted from
//! covariates to outcome; its leaves define subpopulations. Each
//! subpopulation gets its own Gaussian mixture over the joint
//! `(covariates, outcome)` vector, chosen by BIC, and every leaf receives the
//! same share of the group's sample budget. Small regions therefore end up
//! with as many synthetic rows as large ones. The synthetic rows are appended
//! to the original training data.

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::RangeInclusive;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_csv, Dataset, OutcomeKind};
use crate::error::{Error, Result};
use crate::gmm::{select_components, EmConfig, GmmModel};
use crate::rng::{derive_seed, rng_from_seed};
use crate::trees::{fit_extra_trees, fit_tree, TreeModel, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// One decision tree per group.
    #[serde(rename = "degedt")]
    DecisionTree,
    /// An extremely randomised forest per group; each draw picks a member
    /// tree uniformly.
    #[serde(rename = "degef")]
    Forest,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::DecisionTree => "degedt",
            Variant::Forest => "degef",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    /// Total number of synthetic rows, split evenly between the groups.
    pub n_generated: usize,
    pub max_depth: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub variant: Variant,
    pub n_estimators: usize,
    pub min_leaf: usize,
    pub seed: u64,
    pub em: EmConfig,
}

pub const DEFAULT_MIN_LEAF: usize = 5;
pub const DEFAULT_N_ESTIMATORS: usize = 10;
pub const DEFAULT_SAMPLE_RATIO: f64 = 0.5;

/// `ceil(log2 d) - 1`, floored at 1.
pub fn default_max_depth(d: usize) -> usize {
    let ceil_log2 = if d <= 1 { 0 } else { (usize::BITS - (d - 1).leading_zeros()) as usize };
    ceil_log2.saturating_sub(1).max(1)
}

/// The recommended defaults for a training set: depth from the feature
/// count, half as many synthetic rows as training rows, 1 to 5 mixture
/// components, a 10-tree forest.
pub fn default_plan(train: &Dataset) -> AugmentationPlan {
    AugmentationPlan {
        n_generated: (DEFAULT_SAMPLE_RATIO * train.n() as f64).round() as usize,
        max_depth: default_max_depth(train.d()),
        k_min: 1,
        k_max: 5,
        variant: Variant::Forest,
        n_estimators: DEFAULT_N_ESTIMATORS,
        min_leaf: DEFAULT_MIN_LEAF,
        seed: 0,
        em: EmConfig::default(),
    }
}

/// User adjustments applied on top of [`default_plan`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanOverrides {
    /// Synthetic rows as a multiple of the training size.
    pub sample_ratio: Option<f64>,
    pub max_depth: Option<usize>,
}

impl PlanOverrides {
    pub fn plan(&self, train: &Dataset, variant: Variant, seed: u64) -> AugmentationPlan {
        let mut plan = default_plan(train).with_variant(variant).with_seed(seed);
        if let Some(r) = self.sample_ratio {
            plan.n_generated = (r * train.n() as f64).round().max(0.0) as usize;
        }
        if let Some(d) = self.max_depth {
            plan.max_depth = d;
        }
        plan
    }
}

impl AugmentationPlan {
    pub fn k_range(&self) -> RangeInclusive<usize> {
        self.k_min..=self.k_max
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(Error::InvalidParameter("max_depth must be >= 1".into()));
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            return Err(Error::InvalidParameter(format!(
                "invalid component range {}..={}",
                self.k_min, self.k_max
            )));
        }
        if self.variant == Variant::Forest && self.n_estimators == 0 {
            return Err(Error::InvalidParameter("forest variant needs n_estimators >= 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::InvalidParameter("min_leaf must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Group {
    Treated,
    Control,
}

impl Group {
    fn tag(self) -> &'static str {
        match self {
            Group::Treated => "treated",
            Group::Control => "control",
        }
    }
}

/// Where a synthetic row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Provenance {
    pub group: Group,
    pub tree_id: usize,
    pub leaf_id: usize,
}

#[derive(Debug, Clone)]
pub struct AugmentedDataset {
    /// Original rows first, then treated synthetic rows, then control ones.
    pub merged: Dataset,
    pub generated_mask: Vec<bool>,
    /// One entry per synthetic row, in merged order.
    pub provenance: Vec<Provenance>,
}

impl AugmentedDataset {
    pub fn n_generated(&self) -> usize {
        self.provenance.len()
    }

    pub fn n_original(&self) -> usize {
        self.merged.n() - self.n_generated()
    }

    /// Synthetic-row counts keyed by `(group, tree, leaf)`.
    pub fn counts_by_leaf(&self) -> BTreeMap<Provenance, usize> {
        let mut out = BTreeMap::new();
        for p in &self.provenance {
            *out.entry(*p).or_insert(0) += 1;
        }
        out
    }

    /// Dataset CSV layout plus a trailing `generated` 0/1 column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_csv(&self.merged, writer, Some(&self.generated_mask))
    }
}

/// Splits `total` over `parts` slots: the floor everywhere, then one extra
/// for the first `total % parts` slots.
pub fn allocate_budget(total: usize, parts: usize) -> Vec<usize> {
    if parts == 0 {
        return Vec::new();
    }
    let base = total / parts;
    let extra = total % parts;
    (0..parts).map(|i| base + usize::from(i < extra)).collect()
}

struct GroupSamples {
    rows: DMatrix<f64>,
    provenance: Vec<Provenance>,
}

fn leaf_gmm(z: &DMatrix<f64>, rows: &[usize], plan: &AugmentationPlan, seed: u64) -> Result<GmmModel> {
    let leaf = z.select_rows(rows.iter());
    match select_components(&leaf, plan.k_range(), seed, &plan.em) {
        Ok(g) => Ok(g),
        // every k in range exceeds the leaf size: fall back to one Gaussian
        Err(Error::NoFeasibleComponents { .. }) => select_components(&leaf, 1..=1, seed, &plan.em),
        Err(e) => Err(e),
    }
}

fn sample_tree_leaves(
    tree: &TreeModel,
    tree_id: usize,
    z: &DMatrix<f64>,
    budget: usize,
    group: Group,
    plan: &AugmentationPlan,
    seed: u64,
    out: &mut Vec<(DMatrix<f64>, Provenance)>,
) -> Result<()> {
    let leaves = tree.leaf_rows();
    for (leaf_id, (rows, n)) in leaves.iter().zip(allocate_budget(budget, leaves.len())).enumerate() {
        if n == 0 {
            continue;
        }
        let tag = [tree_id.to_string(), leaf_id.to_string()];
        let gmm = leaf_gmm(z, rows, plan, derive_seed(seed, [&tag[0], &tag[1], "fit"]))?;
        let draws = gmm.sample(n, derive_seed(seed, [&tag[0], &tag[1], "sample"]));
        out.push((draws, Provenance { group, tree_id, leaf_id }));
    }
    Ok(())
}

fn generate_group(group_data: &Dataset, budget: usize, group: Group, plan: &AugmentationPlan) -> Result<GroupSamples> {
    let seed = derive_seed(plan.seed, [group.tag()]);
    let x = group_data.covariates();
    let y = group_data.outcome();
    let d = group_data.d();
    let mut z = x.clone().insert_column(d, 0.0);
    z.column_mut(d).copy_from_slice(y);

    let params = TreeParams::new(plan.max_depth, plan.min_leaf);
    let mut blocks = Vec::new();
    if budget > 0 {
        match plan.variant {
            Variant::DecisionTree => {
                let tree = fit_tree(x, y, params, derive_seed(seed, ["partition"]))?;
                sample_tree_leaves(&tree, 0, &z, budget, group, plan, seed, &mut blocks)?;
            }
            Variant::Forest => {
                let forest = fit_extra_trees(x, y, plan.n_estimators, params, derive_seed(seed, ["partition"]))?;
                let mut rng = rng_from_seed(derive_seed(seed, ["tree-choice"]));
                let mut per_tree = vec![0usize; plan.n_estimators];
                for _ in 0..budget {
                    per_tree[rng.random_range(0..plan.n_estimators)] += 1;
                }
                for (tree_id, (tree, n)) in forest.trees().iter().zip(per_tree).enumerate() {
                    sample_tree_leaves(tree, tree_id, &z, n, group, plan, seed, &mut blocks)?;
                }
            }
        }
    }
    let total: usize = blocks.iter().map(|(b, _)| b.nrows()).sum();
    let mut rows = DMatrix::zeros(total, d + 1);
    let mut provenance = Vec::with_capacity(total);
    let mut at = 0;
    for (block, prov) in blocks {
        rows.rows_mut(at, block.nrows()).copy_from(&block);
        at += block.nrows();
        provenance.extend(std::iter::repeat_n(prov, block.nrows()));
    }
    Ok(GroupSamples { rows, provenance })
}

/// Runs the augmentation and merges synthetic rows after the originals.
/// Deterministic in `(train, plan)`.
pub fn augment(train: &Dataset, plan: &AugmentationPlan) -> Result<AugmentedDataset> {
    plan.validate()?;
    let (treated_idx, control_idx) = train.group_indices();
    if treated_idx.is_empty() {
        return Err(Error::DegenerateTreatment("treated"));
    }
    if control_idx.is_empty() {
        return Err(Error::DegenerateTreatment("control"));
    }
    if plan.n_generated == 0 {
        return Ok(AugmentedDataset {
            merged: train.clone(),
            generated_mask: vec![false; train.n()],
            provenance: Vec::new(),
        });
    }
    let treated = train.select(&treated_idx)?;
    let control = train.select(&control_idx)?;
    let control_budget = plan.n_generated / 2;
    let treated_budget = plan.n_generated - control_budget;
    let (t_res, c_res) = rayon::join(
        || generate_group(&treated, treated_budget, Group::Treated, plan),
        || generate_group(&control, control_budget, Group::Control, plan),
    );
    let (t_gen, c_gen) = (t_res?, c_res?);

    let n0 = train.n();
    let d = train.d();
    let n_t = t_gen.rows.nrows();
    let n_c = c_gen.rows.nrows();
    let n = n0 + n_t + n_c;
    let mut x = DMatrix::zeros(n, d);
    x.rows_mut(0, n0).copy_from(train.covariates());
    x.rows_mut(n0, n_t).copy_from(&t_gen.rows.columns(0, d));
    x.rows_mut(n0 + n_t, n_c).copy_from(&c_gen.rows.columns(0, d));

    let binary = train.outcome_kind() == OutcomeKind::Binary;
    let fix_outcome = |v: f64| {
        if binary {
            if v.clamp(0.0, 1.0) >= 0.5 {
                1.0
            } else {
                0.0
            }
        } else {
            v
        }
    };
    let mut y = train.outcome().to_vec();
    y.extend(t_gen.rows.column(d).iter().map(|&v| fix_outcome(v)));
    y.extend(c_gen.rows.column(d).iter().map(|&v| fix_outcome(v)));

    let mut t = train.treatment().to_vec();
    t.extend(std::iter::repeat_n(true, n_t));
    t.extend(std::iter::repeat_n(false, n_c));

    let mut mask = vec![false; n0];
    mask.extend(std::iter::repeat_n(true, n_t + n_c));
    let mut provenance = t_gen.provenance;
    provenance.extend(c_gen.provenance);

    Ok(AugmentedDataset {
        merged: Dataset::new(x, t, y, train.outcome_kind())?,
        generated_mask: mask,
        provenance,
    })
}

/// A merged row as seen by region predicates.
#[derive(Debug, Clone, Copy)]
pub struct RowView<'a> {
    pub covariates: &'a [f64],
    pub treatment: bool,
    pub outcome: f64,
}

/// Fraction of synthetic rows satisfying `predicate` (0 when there are
/// none).
pub fn generated_fraction_by_region<F>(aug: &AugmentedDataset, predicate: F) -> f64
where
    F: Fn(&RowView<'_>) -> bool,
{
    let data = &aug.merged;
    let mut total = 0usize;
    let mut hits = 0usize;
    let mut buf = vec![0.0; data.d()];
    for i in (0..data.n()).filter(|&i| aug.generated_mask[i]) {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = data.covariates()[(i, j)];
        }
        let view = RowView {
            covariates: &buf,
            treatment: data.treatment()[i],
            outcome: data.outcome()[i],
        };
        total += 1;
        hits += usize::from(predicate(&view));
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}
