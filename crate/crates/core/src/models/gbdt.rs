use serde::{Deserialize, Serialize};

use super::{logit_loss, prepare, sigmoid, Example, ModelError, TrainConfig};
use crate::features::FeatureVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    /// Rows with `value < threshold` go left; absent features count as 0.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { weight: f64 },
}

/// Node array with the root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf(weight: f64) -> Self {
        Tree {
            nodes: vec![TreeNode::Leaf { weight }],
        }
    }

    pub fn evaluate(&self, fv: &FeatureVector) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { weight } => return *weight,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if fv.get(*feature) < *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Children point forward, so the array cannot contain a cycle.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.nodes.is_empty() {
            return Err(ModelError::Invalid("empty tree".into()));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            match n {
                TreeNode::Leaf { weight } if !weight.is_finite() => {
                    return Err(ModelError::Invalid("non-finite leaf weight".into()))
                }
                TreeNode::Split {
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    if !threshold.is_finite()
                        || *left <= i
                        || *right <= i
                        || *left >= self.nodes.len()
                        || *right >= self.nodes.len()
                    {
                        return Err(ModelError::Invalid(format!("bad split node {i}")));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    pub base_logit: f64,
    pub threshold: f64,
    pub n_features: usize,
}

impl GbdtModel {
    fn logit(&self, fv: &FeatureVector) -> f64 {
        self.base_logit + self.learning_rate * self.trees.iter().map(|t| t.evaluate(fv)).sum::<f64>()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || !self.base_logit.is_finite() {
            return Err(ModelError::Invalid("bad learning rate or base logit".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(ModelError::Invalid("threshold outside [0, 1]".into()));
        }
        self.trees.iter().try_for_each(Tree::validate)
    }
}

pub fn predict_gbdt(model: &GbdtModel, fv: &FeatureVector) -> f64 {
    sigmoid(model.logit(fv))
}

/// Gains within this margin count as equal (the earlier candidate wins) and
/// gains below it as no gain; this absorbs summation-order rounding.
const GAIN_EPS: f64 = 1e-12;

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Per-node running state while streaming one sorted column.
#[derive(Clone, Copy)]
struct Scan {
    g_left: f64,
    h_left: f64,
    last: Option<f64>,
    zero_done: bool,
    g_nz: f64,
    h_nz: f64,
    n_nz: usize,
}

impl Scan {
    const EMPTY: Scan = Scan {
        g_left: 0.0,
        h_left: 0.0,
        last: None,
        zero_done: false,
        g_nz: 0.0,
        h_nz: 0.0,
        n_nz: 0,
    };
}

struct Grower<'a> {
    columns: &'a [Vec<(f64, usize)>],
    lambda: f64,
    min_child_hessian: f64,
}

impl Grower<'_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.lambda)
    }

    fn gain(&self, gl: f64, hl: f64, g: f64, h: f64) -> Option<f64> {
        let (gr, hr) = (g - gl, h - hl);
        if hl < self.min_child_hessian || hr < self.min_child_hessian {
            return None;
        }
        let gain = 0.5 * (self.score(gl, hl) + self.score(gr, hr) - self.score(g, h));
        (gain > GAIN_EPS).then_some(gain)
    }

    /// Adds one value to the left side, first scoring the cut between the
    /// previous distinct value and this one.
    #[allow(clippy::too_many_arguments)]
    fn visit(
        &self,
        st: &mut Scan,
        total: (f64, f64, usize),
        feature: usize,
        value: f64,
        g: f64,
        h: f64,
        best: &mut Option<SplitChoice>,
    ) {
        if let Some(last) = st.last.filter(|&l| value > l) {
            if let Some(gain) = self.gain(st.g_left, st.h_left, total.0, total.1) {
                let mut threshold = 0.5 * (last + value);
                if threshold <= last {
                    threshold = value;
                }
                if best.as_ref().is_none_or(|b| gain > b.gain + GAIN_EPS) {
                    *best = Some(SplitChoice { feature, threshold, gain });
                }
            }
        }
        st.g_left += g;
        st.h_left += h;
        st.last = Some(value);
    }

    /// Rows without a stored value form one block at 0, placed between
    /// the negative and positive entries.
    fn visit_zeros(&self, st: &mut Scan, total: (f64, f64, usize), feature: usize, best: &mut Option<SplitChoice>) {
        if st.zero_done {
            return;
        }
        st.zero_done = true;
        if total.2 > st.n_nz {
            let (gz, hz) = (total.0 - st.g_nz, total.1 - st.h_nz);
            self.visit(st, total, feature, 0.0, gz, hz, best);
        }
    }

    /// Best split for every active node. `slot[row]` is the node slot of
    /// each row or `usize::MAX` when its node is finished.
    fn best_splits(
        &self,
        slot: &[usize],
        totals: &[(f64, f64, usize)],
        grad: &[f64],
        hess: &[f64],
    ) -> Vec<Option<SplitChoice>> {
        let mut best: Vec<Option<SplitChoice>> = (0..totals.len()).map(|_| None).collect();
        let mut state = vec![Scan::EMPTY; totals.len()];
        for (feature, column) in self.columns.iter().enumerate() {
            if column.is_empty() {
                continue;
            }
            state.fill(Scan::EMPTY);
            for &(_, row) in column {
                let s = slot[row];
                if s != usize::MAX {
                    let st = &mut state[s];
                    st.g_nz += grad[row];
                    st.h_nz += hess[row];
                    st.n_nz += 1;
                }
            }
            for &(value, row) in column {
                let s = slot[row];
                if s == usize::MAX {
                    continue;
                }
                if value > 0.0 {
                    self.visit_zeros(&mut state[s], totals[s], feature, &mut best[s]);
                }
                self.visit(&mut state[s], totals[s], feature, value, grad[row], hess[row], &mut best[s]);
            }
            for s in 0..totals.len() {
                self.visit_zeros(&mut state[s], totals[s], feature, &mut best[s]);
            }
        }
        best
    }

    /// Grows one tree level by level and returns it with each row's leaf
    /// weight.
    fn grow(
        &self,
        rows: &[Example],
        grad: &[f64],
        hess: &[f64],
        max_depth: usize,
    ) -> (Tree, Vec<f64>) {
        let n = rows.len();
        let mut nodes = vec![TreeNode::Leaf { weight: 0.0 }];
        let mut node_of = vec![0usize; n];
        let mut active = vec![0usize];
        for depth in 0..=max_depth {
            let mut slot_of_node = vec![usize::MAX; nodes.len()];
            for (s, &node) in active.iter().enumerate() {
                slot_of_node[node] = s;
            }
            let slot: Vec<usize> = node_of.iter().map(|&nd| slot_of_node[nd]).collect();
            let mut totals = vec![(0.0, 0.0, 0usize); active.len()];
            for r in 0..n {
                if slot[r] != usize::MAX {
                    let t = &mut totals[slot[r]];
                    t.0 += grad[r];
                    t.1 += hess[r];
                    t.2 += 1;
                }
            }
            for (s, &node) in active.iter().enumerate() {
                let (g, h, _) = totals[s];
                nodes[node] = TreeNode::Leaf { weight: -g / (h + self.lambda) };
            }
            if depth == max_depth {
                break;
            }
            let choices = self.best_splits(&slot, &totals, grad, hess);
            let mut next = Vec::new();
            for (s, choice) in choices.into_iter().enumerate() {
                let Some(c) = choice else { continue };
                let (left, right) = (nodes.len(), nodes.len() + 1);
                nodes.push(TreeNode::Leaf { weight: 0.0 });
                nodes.push(TreeNode::Leaf { weight: 0.0 });
                nodes[active[s]] = TreeNode::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left,
                    right,
                };
                next.push(left);
                next.push(right);
            }
            if next.is_empty() {
                break;
            }
            for r in 0..n {
                if let TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } = nodes[node_of[r]]
                {
                    node_of[r] = if rows[r].features.get(feature) < threshold { left } else { right };
                }
            }
            active = next;
        }
        let out = node_of
            .iter()
            .map(|&nd| match nodes[nd] {
                TreeNode::Leaf { weight } => weight,
                TreeNode::Split { .. } => unreachable!("rows end in leaves"),
            })
            .collect();
        (Tree { nodes }, out)
    }
}

fn columns(data: &[Example], dim: usize) -> Vec<Vec<(f64, usize)>> {
    let mut cols = vec![Vec::new(); dim];
    for (row, e) in data.iter().enumerate() {
        for &(j, v) in e.features.entries() {
            if v != 0.0 {
                cols[j].push((v, row));
            }
        }
    }
    for c in &mut cols {
        c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    }
    cols
}

fn weighted_loss(logits: &[f64], data: &[Example], weights: &[f64]) -> f64 {
    let mass: f64 = weights.iter().sum();
    logits
        .iter()
        .zip(data)
        .zip(weights)
        .map(|((&z, e), w)| w * logit_loss(z, e.label))
        .sum::<f64>()
        / mass
}

/// Boosted trees with exact greedy splits. Returns the model and the
/// weighted training log-loss before the first round and after each round.
pub fn train_gbdt(data: &[Example], config: &TrainConfig) -> Result<(GbdtModel, Vec<f64>), ModelError> {
    let (dim, weights) = prepare(data, config)?;
    let mass: f64 = weights.iter().sum();
    let pos_mass: f64 = data.iter().zip(&weights).filter(|(e, _)| e.label).map(|(_, w)| w).sum();
    let prior = pos_mass / mass;
    let base_logit = (prior / (1.0 - prior)).ln();
    let cols = columns(data, dim);
    let grower = Grower {
        columns: &cols,
        lambda: config.l2_lambda,
        min_child_hessian: config.min_child_hessian,
    };
    let mut logits = vec![base_logit; data.len()];
    let mut curve = vec![weighted_loss(&logits, data, &weights)];
    let mut trees = Vec::with_capacity(config.n_trees);
    let (mut grad, mut hess) = (vec![0.0; data.len()], vec![0.0; data.len()]);
    for _ in 0..config.n_trees {
        for (i, e) in data.iter().enumerate() {
            let p = sigmoid(logits[i]);
            let y = if e.label { 1.0 } else { 0.0 };
            grad[i] = weights[i] * (p - y);
            hess[i] = weights[i] * p * (1.0 - p);
        }
        let (tree, out) = grower.grow(data, &grad, &hess, config.max_depth);
        for (z, o) in logits.iter_mut().zip(&out) {
            *z += config.learning_rate * o;
        }
        trees.push(tree);
        let loss = weighted_loss(&logits, data, &weights);
        if !loss.is_finite() {
            return Err(ModelError::Diverged { epoch: trees.len() });
        }
        curve.push(loss);
    }
    let model = GbdtModel {
        trees,
        learning_rate: config.learning_rate,
        base_logit,
        threshold: 0.5,
        n_features: dim,
    };
    Ok((model, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ex(values: &[f64], label: bool) -> Example {
        Example::new(FeatureVector::from_dense(values).unwrap(), label)
    }

    fn stump_config() -> TrainConfig {
        TrainConfig {
            n_trees: 1,
            max_depth: 1,
            positive_weight: Some(1.0),
            ..Default::default()
        }
    }

    /// Exhaustive search over every feature and every midpoint between
    /// distinct values, written against dense rows.
    fn brute_force_stump(data: &[Example], config: &TrainConfig) -> Option<(usize, f64, f64)> {
        let base = {
            let pos = data.iter().filter(|e| e.label).count() as f64;
            (pos / (data.len() as f64 - pos)).ln()
        };
        let p = sigmoid(base);
        let g: Vec<f64> = data.iter().map(|e| p - if e.label { 1.0 } else { 0.0 }).collect();
        let h = p * (1.0 - p);
        let lam = config.l2_lambda;
        let score = |gs: f64, hs: f64| gs * gs / (hs + lam);
        let (gt, ht) = (g.iter().sum::<f64>(), h * data.len() as f64);
        let mut best: Option<(usize, f64, f64)> = None;
        for f in 0..data[0].features.dimension() {
            let mut values: Vec<f64> = data.iter().map(|e| e.features.get(f)).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            for w in values.windows(2) {
                let t = 0.5 * (w[0] + w[1]);
                let left: Vec<usize> = (0..data.len()).filter(|&i| data[i].features.get(f) < t).collect();
                let gl: f64 = left.iter().map(|&i| g[i]).sum();
                let hl = h * left.len() as f64;
                if hl < config.min_child_hessian || ht - hl < config.min_child_hessian {
                    continue;
                }
                let gain = 0.5 * (score(gl, hl) + score(gt - gl, ht - hl) - score(gt, ht));
                if gain > 1e-12 && best.is_none_or(|b| gain > b.2 + 1e-12) {
                    best = Some((f, t, gain));
                }
            }
        }
        best
    }

    #[test]
    fn balanced_point_gives_zero_leaves() {
        let data: Vec<Example> = (0..8).map(|i| ex(&[1.0, 0.5], i % 2 == 0)).collect();
        let cfg = TrainConfig { n_trees: 5, ..Default::default() };
        let (m, _) = train_gbdt(&data, &cfg).unwrap();
        assert_eq!(m.base_logit, 0.0);
        for t in &m.trees {
            assert_eq!(t.nodes, vec![TreeNode::Leaf { weight: 0.0 }]);
        }
    }

    #[test]
    fn separable_stump_matches_brute_force() {
        let mut data = Vec::new();
        for i in 0..10 {
            data.push(ex(&[i as f64 / 10.0], false));
            data.push(ex(&[1.0 + i as f64 / 10.0], true));
        }
        let (m, _) = train_gbdt(&data, &stump_config()).unwrap();
        let (f, t, _) = brute_force_stump(&data, &stump_config()).unwrap();
        match m.trees[0].nodes[0] {
            TreeNode::Split { feature, threshold, .. } => {
                assert_eq!(feature, f);
                assert!((threshold - t).abs() < 1e-12);
                assert!((threshold - 0.95).abs() < 1e-12);
            }
            ref other => panic!("expected a split, got {other:?}"),
        }
    }

    #[test]
    fn empty_ensemble_predicts_prior() {
        let data = [ex(&[0.0], false), ex(&[1.0], true), ex(&[2.0], false)];
        let cfg = TrainConfig { n_trees: 0, positive_weight: Some(1.0), ..Default::default() };
        let (m, curve) = train_gbdt(&data, &cfg).unwrap();
        assert_eq!(curve.len(), 1);
        let expect = sigmoid((1.0f64 / 2.0).ln());
        for e in &data {
            assert!((predict_gbdt(&m, &e.features) - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn single_stump_prediction_formula() {
        let tree = Tree {
            nodes: vec![
                TreeNode::Split { feature: 0, threshold: 0.5, left: 1, right: 2 },
                TreeNode::Leaf { weight: -2.0 },
                TreeNode::Leaf { weight: 3.0 },
            ],
        };
        let m = GbdtModel { trees: vec![tree], learning_rate: 0.1, base_logit: 0.3, threshold: 0.5, n_features: 1 };
        let fv = FeatureVector::zeros(1);
        assert_eq!(predict_gbdt(&m, &fv), sigmoid(0.3 + 0.1 * -2.0));
        assert!(m.validate().is_ok());
    }

    #[test]
    fn twenty_rounds_reduce_loss() {
        let mut data = Vec::new();
        for i in 0..15 {
            data.push(ex(&[i as f64, 0.0], false));
            data.push(ex(&[20.0 + i as f64, 1.0], true));
        }
        let cfg = TrainConfig { n_trees: 20, ..Default::default() };
        let (m, curve) = train_gbdt(&data, &cfg).unwrap();
        assert!(curve[20] < curve[0]);
        assert!(curve.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(m.trees.iter().all(|t| t.depth() <= 4));
        assert!(m.validate().is_ok());
    }

    #[test]
    fn training_errors() {
        assert_eq!(train_gbdt(&[], &TrainConfig::default()).unwrap_err(), ModelError::Empty);
        let one = [ex(&[1.0], false)];
        assert_eq!(train_gbdt(&one, &TrainConfig::default()).unwrap_err(), ModelError::SingleClass);
    }

    #[test]
    fn invalid_trees_are_rejected() {
        let cyclic = Tree { nodes: vec![TreeNode::Split { feature: 0, threshold: 0.0, left: 0, right: 0 }] };
        assert!(cyclic.validate().is_err());
        assert!(Tree::leaf(f64::NAN).validate().is_err());
    }

    fn dataset(seed: u64, n: usize, dim: usize, sparse: bool) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data: Vec<Example> = (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..dim)
                    .map(|_| {
                        if sparse && rng.gen_bool(0.5) {
                            0.0
                        } else {
                            (rng.gen_range(-5i32..=5) as f64) * 0.5
                        }
                    })
                    .collect();
                let label = v[0] + rng.gen_range(-1.0..1.0) > 0.0;
                ex(&v, label)
            })
            .collect();
        data[0].label = true;
        data[1].label = false;
        data
    }

    proptest! {
        #[test]
        fn stump_equals_exhaustive_split(seed in any::<u64>(), n in 4usize..200, dim in 1usize..4, sparse in any::<bool>()) {
            let data = dataset(seed, n, dim, sparse);
            let cfg = stump_config();
            let (m, _) = train_gbdt(&data, &cfg).unwrap();
            let oracle = brute_force_stump(&data, &cfg);
            match (&m.trees[0].nodes[0], oracle) {
                (TreeNode::Leaf { .. }, None) => {}
                (TreeNode::Split { feature, threshold, .. }, Some((f, t, _))) => {
                    prop_assert_eq!(*feature, f);
                    prop_assert!((threshold - t).abs() < 1e-12);
                }
                (node, oracle) => prop_assert!(false, "{:?} vs {:?}", node, oracle),
            }
        }

        #[test]
        fn boosting_loss_is_monotone(seed in any::<u64>()) {
            let data = dataset(seed, 60, 3, true);
            let cfg = TrainConfig { n_trees: 15, max_depth: 3, ..Default::default() };
            let (_, curve) = train_gbdt(&data, &cfg).unwrap();
            prop_assert!(curve.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{:?}", curve);
        }
    }
}
