use degets::rng::rng_from_seed;
use degets::trees::{
    assign_leaves, best_split, fit_extra_trees, fit_tree, predict_tree, prune_cross_validated, prune_with_path,
    rule_count, Node, TreeModel, TreeParams,
};
use nalgebra::DMatrix;
use rand::Rng;

fn sse(y: &[f64], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let m = rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64;
    rows.iter().map(|&i| (y[i] - m).powi(2)).sum()
}

/// Best SSE reduction over every feature and every midpoint between
/// distinct sorted values, recomputed from scratch per candidate.
fn exhaustive_best(x: &DMatrix<f64>, y: &[f64], min_leaf: usize) -> Option<f64> {
    let rows: Vec<usize> = (0..y.len()).collect();
    let parent = sse(y, &rows);
    let mut best: Option<f64> = None;
    for f in 0..x.ncols() {
        let mut vals: Vec<f64> = rows.iter().map(|&i| x[(i, f)]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let thr = 0.5 * (w[0] + w[1]);
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[(i, f)] <= thr);
            if l.len() < min_leaf || r.len() < min_leaf {
                continue;
            }
            let gain = parent - sse(y, &l) - sse(y, &r);
            best = Some(best.map_or(gain, |b: f64| b.max(gain)));
        }
    }
    best
}

fn gain_of(x: &DMatrix<f64>, y: &[f64], feature: usize, thr: f64) -> f64 {
    let rows: Vec<usize> = (0..y.len()).collect();
    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[(i, feature)] <= thr);
    sse(y, &rows) - sse(y, &l) - sse(y, &r)
}

fn random_instance(seed: u64) -> (DMatrix<f64>, Vec<f64>, usize) {
    let mut rng = rng_from_seed(seed);
    let n = rng.random_range(10..=300);
    let d = rng.random_range(1..=8);
    // coarse grid on some columns so ties and duplicates occur
    let x = DMatrix::from_fn(n, d, |_, j| {
        let u: f64 = rng.random();
        if j % 2 == 0 { (u * 10.0).floor() } else { u }
    });
    let y = (0..n)
        .map(|i| x[(i, 0)] * 0.3 - x[(i, d - 1)] + rng.random::<f64>())
        .collect();
    let min_leaf = rng.random_range(1..=5);
    (x, y, min_leaf)
}

#[test]
fn split_gain_is_optimal_on_random_instances() {
    for seed in 0..20 {
        let (x, y, min_leaf) = random_instance(seed);
        let rows: Vec<usize> = (0..y.len()).collect();
        let oracle = exhaustive_best(&x, &y, min_leaf);
        let found = best_split(&x, &y, &rows, min_leaf);
        match (oracle, found) {
            (Some(best), Some(c)) => {
                let direct = gain_of(&x, &y, c.feature, c.threshold);
                let tol = 1e-9 * sse(&y, &rows).max(1.0);
                assert!((direct - best).abs() <= tol, "seed {seed}: {direct} vs {best}");
                assert!((c.gain - best).abs() <= tol, "seed {seed}: reported gain {} vs {best}", c.gain);
            }
            (None, None) => {}
            (o, f) => panic!("seed {seed}: oracle {o:?} vs found {f:?}"),
        }
    }
}

#[test]
fn step_data_splits_inside_the_gap() {
    let mut rng = rng_from_seed(3);
    let xs: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
    let y: Vec<f64> = xs.iter().map(|&v| if v < 0.5 { 0.0 } else { 1.0 }).collect();
    let x = DMatrix::from_vec(100, 1, xs.clone());
    let tree = fit_tree(&x, &y, TreeParams::new(3, 1), 0).unwrap();
    let below = xs.iter().copied().filter(|&v| v < 0.5).fold(f64::NEG_INFINITY, f64::max);
    let above = xs.iter().copied().filter(|&v| v >= 0.5).fold(f64::INFINITY, f64::min);
    match &tree.nodes()[0] {
        Node::Split { threshold, .. } => assert!(*threshold >= below && *threshold <= above),
        Node::Leaf { .. } => panic!("no split"),
    }
    assert_eq!(tree.n_leaves(), 2);
    let rows: Vec<usize> = (0..100).collect();
    assert_eq!(exhaustive_best(&x, &y, 1), Some(sse(&y, &rows)));
}

fn route(nodes: &[Node], row: &[f64]) -> usize {
    let mut id = 0;
    while let Node::Split { feature, threshold, left, right, .. } = &nodes[id] {
        id = if row[*feature] <= *threshold { *left } else { *right };
    }
    id
}

#[test]
fn depth_two_partition_matches_predicates() {
    let mut rng = rng_from_seed(8);
    let x = DMatrix::from_fn(200, 2, |_, _| rng.random::<f64>());
    let y: Vec<f64> = (0..200)
        .map(|i| f64::from(u8::from(x[(i, 0)] > 0.4)) + 2.0 * f64::from(u8::from(x[(i, 1)] > 0.7)))
        .collect();
    let tree = fit_tree(&x, &y, TreeParams::new(2, 1), 0).unwrap();
    let part = assign_leaves(&tree, &x);
    let nodes = tree.nodes();
    // group rows by the leaf node reached when evaluating split predicates directly
    let mut by_node: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..200 {
        let row = [x[(i, 0)], x[(i, 1)]];
        by_node.entry(route(nodes, &row)).or_default().push(i);
    }
    let mut oracle: Vec<Vec<usize>> = by_node.into_values().collect();
    let mut got = part.subpopulations.clone();
    oracle.sort();
    got.sort();
    assert_eq!(got, oracle);
}

fn assert_disjoint_cover(tree: &TreeModel, n: usize) {
    let mut seen = vec![0usize; n];
    for rows in tree.leaf_rows() {
        assert!(!rows.is_empty());
        for &i in rows {
            seen[i] += 1;
        }
    }
    assert!(seen.iter().all(|&c| c == 1), "leaves must cover every row exactly once");
}

#[test]
fn leaves_partition_the_training_rows() {
    for seed in 0..20 {
        let (x, y, min_leaf) = random_instance(100 + seed);
        for depth in [1, 3, 8] {
            let tree = fit_tree(&x, &y, TreeParams::new(depth, min_leaf), seed).unwrap();
            assert_disjoint_cover(&tree, y.len());
            let part = assign_leaves(&tree, &x);
            let mut flat: Vec<usize> = part.subpopulations.concat();
            flat.sort_unstable();
            assert_eq!(flat, (0..y.len()).collect::<Vec<_>>());
        }
        let forest = fit_extra_trees(&x, &y, 5, TreeParams::new(6, min_leaf), seed).unwrap();
        for t in forest.trees() {
            assert_disjoint_cover(t, y.len());
        }
    }
}

#[test]
fn forest_prediction_is_member_mean() {
    let (x, y, _) = random_instance(42);
    let forest = fit_extra_trees(&x, &y, 10, TreeParams::new(6, 2), 9).unwrap();
    let pred = predict_tree(&forest, &x);
    let members: Vec<Vec<f64>> = forest.trees().iter().map(|t| t.predict(&x)).collect();
    for i in 0..y.len() {
        let mean = members.iter().map(|p| p[i]).sum::<f64>() / 10.0;
        assert!((pred[i] - mean).abs() < 1e-12);
    }
}

#[test]
fn deep_tree_reproduces_training_targets() {
    let (x, y, _) = random_instance(5);
    let tree = fit_tree(&x, &y, TreeParams::new(64, 1), 0).unwrap();
    // duplicated covariate rows can share a leaf; compare per distinct row
    let pred = tree.predict(&x);
    for i in 0..y.len() {
        let twins: Vec<usize> = (0..y.len()).filter(|&j| x.row(j) == x.row(i)).collect();
        if twins.len() == 1 {
            assert_eq!(pred[i], y[i]);
        }
    }
    let single = fit_tree(&x, &y, TreeParams::new(64, y.len()), 0).unwrap();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    assert!(single.predict(&x).iter().all(|p| (p - mean).abs() < 1e-12));
}

fn leaf_walk(nodes: &[Node], id: usize) -> usize {
    match &nodes[id] {
        Node::Split { left, right, .. } => leaf_walk(nodes, *left) + leaf_walk(nodes, *right),
        Node::Leaf { .. } => 1,
    }
}

/// Every node of `pruned` exists at the same position in `full` with the
/// same split.
fn assert_subtree(pruned: &[Node], p: usize, full: &[Node], f: usize) {
    match (&pruned[p], &full[f]) {
        (
            Node::Split { feature: a, threshold: ta, left: la, right: ra, .. },
            Node::Split { feature: b, threshold: tb, left: lb, right: rb, .. },
        ) => {
            assert_eq!((a, ta), (b, tb));
            assert_subtree(pruned, *la, full, *lb);
            assert_subtree(pruned, *ra, full, *rb);
        }
        (Node::Split { .. }, Node::Leaf { .. }) => panic!("pruned tree splits where the original does not"),
        (Node::Leaf { stats: a, .. }, other) => assert_eq!(a.n, other.stats().n),
    }
}

fn noisy_linear(n: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
    let mut rng = rng_from_seed(seed);
    let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>());
    let y = (0..n)
        .map(|i| 2.0 * x[(i, 0)] - x[(i, 1)] + 0.5 * (rng.random::<f64>() - 0.5))
        .collect();
    (x, y)
}

#[test]
fn pruning_shrinks_noisy_trees_to_subtrees() {
    for seed in 0..10 {
        let (x, y) = noisy_linear(200, seed);
        let (xv, yv) = noisy_linear(100, seed + 1000);
        let full = fit_tree(&x, &y, TreeParams::new(64, 1), 0).unwrap();
        let pruned = prune_with_path(&full, &xv, &yv).unwrap();
        assert!(pruned.n_leaves() < full.n_leaves());
        assert_subtree(pruned.nodes(), 0, full.nodes(), 0);
        assert_eq!(rule_count(&pruned), leaf_walk(pruned.nodes(), 0));
        assert_disjoint_cover(&pruned, 200);

        let cv = prune_cross_validated(&x, &y, TreeParams::new(64, 1), 5, seed).unwrap();
        assert!(cv.n_leaves() < full.n_leaves());
        assert_subtree(cv.nodes(), 0, full.nodes(), 0);
        assert_eq!(rule_count(&cv), leaf_walk(cv.nodes(), 0));
    }
}

#[test]
fn cross_validated_pruning_is_deterministic() {
    let (x, y) = noisy_linear(150, 4);
    let a = prune_cross_validated(&x, &y, TreeParams::new(64, 1), 5, 7).unwrap();
    let b = prune_cross_validated(&x, &y, TreeParams::new(64, 1), 5, 7).unwrap();
    assert_eq!(a, b);
    assert!(prune_cross_validated(&x, &y, TreeParams::new(64, 1), 1, 7).is_err());
}

#[test]
fn rule_count_of_small_shapes() {
    let x = DMatrix::from_fn(8, 1, |i, _| i as f64);
    let y: Vec<f64> = (0..8).map(|i| (100 * (i / 4) + 10 * ((i / 2) % 2) + i % 2) as f64).collect();
    let perfect = fit_tree(&x, &y, TreeParams::new(3, 1), 0).unwrap();
    assert_eq!(rule_count(&perfect), 8);
    assert_eq!(perfect.depth(), 3);
    let flat = fit_tree(&x, &[4.0; 8], TreeParams::new(3, 1), 0).unwrap();
    assert_eq!(rule_count(&flat), 1);
}
