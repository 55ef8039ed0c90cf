//! Gradient-boosted regression trees for the logistic loss.
//!
//! Trees are grown depth-wise on pre-binned columns. Split gain and leaf
//! values use the second-order (Newton) approximation of the loss with an
//! L2 penalty on leaf weights. After each tree the shrunken update is halved
//! until the training loss does not increase, so staged training loss is
//! monotone.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::logreg::sigmoid;
use super::{check_training_set, Classifier};
use crate::error::{Error, Result};
use crate::features::FeatureVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub subsample: f64,
    /// L2 penalty on leaf values.
    pub l2: f64,
    pub min_child_weight: f64,
    pub max_bins: usize,
    pub seed: u64,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            n_estimators: 200,
            max_depth: 3,
            learning_rate: 0.1,
            subsample: 1.0,
            l2: 1.0,
            min_child_weight: 1.0,
            max_bins: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: u32,
        /// Rows with `x[feature] <= threshold` go left.
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &FeatureVector) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x.get(*feature as usize) <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize)),
            }
        }
        walk(&self.nodes, 0)
    }

    fn scale_leaves(&mut self, factor: f64) {
        for n in &mut self.nodes {
            if let Node::Leaf { value } = n {
                *value *= factor;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    /// Log-odds of the training prior.
    pub base_score: f64,
    pub learning_rate: f64,
    pub n_estimators: usize,
    pub n_features: usize,
    /// Leaf values are stored before shrinkage by `learning_rate`.
    pub trees: Vec<Tree>,
    /// Mean training loss after 0, 1, .., trees.len() trees.
    pub staged_loss: Vec<f64>,
}

impl GbtModel {
    pub fn margin(&self, x: &FeatureVector) -> f64 {
        self.base_score + self.trees.iter().map(|t| self.learning_rate * t.predict(x)).sum::<f64>()
    }

    /// Margin using only the first `m` trees.
    pub fn staged_margin(&self, x: &FeatureVector, m: usize) -> f64 {
        self.base_score + self.trees[..m].iter().map(|t| self.learning_rate * t.predict(x)).sum::<f64>()
    }
}

impl Classifier for GbtModel {
    fn predict_proba_one(&self, x: &FeatureVector) -> f64 {
        sigmoid(self.margin(x))
    }
}

/// One feature column: bin edges and the bins of its nonzero entries.
struct Column {
    /// Ascending upper edges; value v falls in the first bin with v <= edge.
    edges: Vec<f64>,
    zero_bin: usize,
    entries: Vec<(u32, u16)>,
}

fn bin_of(edges: &[f64], v: f64) -> usize {
    edges.partition_point(|&e| e < v).min(edges.len() - 1)
}

fn build_columns(x: &[FeatureVector], n_features: usize, max_bins: usize) -> Vec<Column> {
    let mut raw: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_features];
    for (row, xi) in x.iter().enumerate() {
        for (j, v) in xi.iter() {
            if v != 0.0 {
                raw[j].push((row as u32, v));
            }
        }
    }
    let n = x.len();
    raw.into_iter()
        .map(|entries| {
            let mut values: Vec<f64> = entries.iter().map(|e| e.1).collect();
            if entries.len() < n {
                values.push(0.0);
            }
            values.sort_by(f64::total_cmp);
            values.dedup();
            let edges = if values.len() <= max_bins {
                values
            } else {
                // quantile edges over the distinct values
                let mut e: Vec<f64> = (1..=max_bins)
                    .map(|q| values[(q * values.len() / max_bins).min(values.len()) - 1])
                    .collect();
                e.dedup();
                e
            };
            let edges = if edges.is_empty() { vec![0.0] } else { edges };
            let zero_bin = bin_of(&edges, 0.0);
            let entries = entries
                .into_iter()
                .map(|(r, v)| (r, bin_of(&edges, v) as u16))
                .collect();
            Column {
                edges,
                zero_bin,
                entries,
            }
        })
        .collect()
}

fn mean_logloss(margins: &[f64], y: &[bool]) -> f64 {
    margins
        .iter()
        .zip(y)
        .map(|(&z, &t)| {
            let sp = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            sp - if t { z } else { 0.0 }
        })
        .sum::<f64>()
        / margins.len() as f64
}

#[derive(Clone, Copy, Default)]
struct GradStats {
    g: f64,
    h: f64,
}

impl GradStats {
    fn add(&mut self, g: f64, h: f64) {
        self.g += g;
        self.h += h;
    }
}

struct SplitChoice {
    feature: usize,
    bin: usize,
    gain: f64,
}

fn leaf_score(s: GradStats, l2: f64) -> f64 {
    s.g * s.g / (s.h + l2)
}

/// Grow one tree on gradients `g`, hessians `h`. `rows` lists participating
/// rows. Returns the tree and the leaf index reached by every participating
/// row (others get `u32::MAX`).
fn grow_tree(columns: &[Column], g: &[f64], h: &[f64], rows: &[usize], params: &GbtParams) -> (Tree, Vec<u32>) {
    let n = g.len();
    let mut node_of = vec![u32::MAX; n];
    let mut root = GradStats::default();
    for &r in rows {
        node_of[r] = 0;
        root.add(g[r], h[r]);
    }
    let mut nodes: Vec<Node> = vec![Node::Leaf { value: 0.0 }];
    let mut stats: Vec<GradStats> = vec![root];
    let mut frontier: Vec<usize> = vec![0];

    for _depth in 0..params.max_depth {
        if frontier.is_empty() {
            break;
        }
        let slot: std::collections::HashMap<usize, usize> = frontier.iter().enumerate().map(|(i, &nd)| (nd, i)).collect();
        let mut best: Vec<Option<SplitChoice>> = (0..frontier.len()).map(|_| None).collect();
        for (j, col) in columns.iter().enumerate() {
            let nb = col.edges.len();
            if nb < 2 {
                continue;
            }
            let mut hist = vec![GradStats::default(); frontier.len() * nb];
            let mut nz = vec![GradStats::default(); frontier.len()];
            for &(r, b) in &col.entries {
                let node = node_of[r as usize];
                if node == u32::MAX {
                    continue;
                }
                if let Some(&s) = slot.get(&(node as usize)) {
                    hist[s * nb + b as usize].add(g[r as usize], h[r as usize]);
                    nz[s].add(g[r as usize], h[r as usize]);
                }
            }
            for (s, &nd) in frontier.iter().enumerate() {
                let total = stats[nd];
                let zero = &mut hist[s * nb + col.zero_bin];
                zero.add(total.g - nz[s].g, total.h - nz[s].h);
                let parent = leaf_score(total, params.l2);
                let mut left = GradStats::default();
                for b in 0..nb - 1 {
                    let cell = hist[s * nb + b];
                    left.add(cell.g, cell.h);
                    let right = GradStats {
                        g: total.g - left.g,
                        h: total.h - left.h,
                    };
                    if left.h < params.min_child_weight || right.h < params.min_child_weight {
                        continue;
                    }
                    let gain = leaf_score(left, params.l2) + leaf_score(right, params.l2) - parent;
                    if gain > 1e-12 && best[s].as_ref().is_none_or(|c| gain > c.gain) {
                        best[s] = Some(SplitChoice { feature: j, bin: b, gain });
                    }
                }
            }
        }

        let mut next = Vec::new();
        let mut children: std::collections::HashMap<usize, (u32, u32, usize, usize)> = std::collections::HashMap::new();
        for (s, &nd) in frontier.iter().enumerate() {
            let Some(choice) = best[s].take() else {
                continue;
            };
            let left = nodes.len();
            nodes.push(Node::Leaf { value: 0.0 });
            nodes.push(Node::Leaf { value: 0.0 });
            stats.push(GradStats::default());
            stats.push(GradStats::default());
            let col = &columns[choice.feature];
            nodes[nd] = Node::Split {
                feature: choice.feature as u32,
                threshold: col.edges[choice.bin],
                left: left as u32,
                right: left as u32 + 1,
            };
            children.insert(nd, (left as u32, left as u32 + 1, choice.feature, choice.bin));
            next.push(left);
            next.push(left + 1);
        }
        if children.is_empty() {
            break;
        }
        // route rows: zero-valued rows first, then fix up nonzero entries
        let mut moved = vec![false; n];
        for (&nd, &(l, r, feature, bin)) in &children {
            let col = &columns[feature];
            for &(row, b) in &col.entries {
                let row = row as usize;
                if node_of[row] == nd as u32 && !moved[row] {
                    node_of[row] = if (b as usize) <= bin { l } else { r };
                    moved[row] = true;
                }
            }
        }
        for row in 0..n {
            let nd = node_of[row];
            if nd == u32::MAX || moved[row] {
                continue;
            }
            if let Some(&(l, r, feature, bin)) = children.get(&(nd as usize)) {
                node_of[row] = if columns[feature].zero_bin <= bin { l } else { r };
            }
        }
        for row in 0..n {
            let nd = node_of[row];
            if nd != u32::MAX && next.contains(&(nd as usize)) {
                stats[nd as usize].add(g[row], h[row]);
            }
        }
        frontier = next;
    }

    for (i, node) in nodes.iter_mut().enumerate() {
        if let Node::Leaf { value } = node {
            let s = stats[i];
            *value = -s.g / (s.h + params.l2);
        }
    }
    (Tree { nodes }, node_of)
}

pub fn train_gbt(x: &[FeatureVector], n_features: usize, y: &[bool], params: &GbtParams) -> Result<GbtModel> {
    check_training_set(x, n_features, y)?;
    if !(params.learning_rate > 0.0 && params.learning_rate <= 1.0) {
        return Err(Error::InvalidArgument(format!("learning rate {} outside (0, 1]", params.learning_rate)));
    }
    if !(params.subsample > 0.0 && params.subsample <= 1.0) {
        return Err(Error::InvalidArgument(format!("subsample {} outside (0, 1]", params.subsample)));
    }
    let n = x.len();
    let prior = y.iter().filter(|&&v| v).count() as f64 / n as f64;
    let base_score = (prior / (1.0 - prior)).ln();
    let columns = build_columns(x, n_features, params.max_bins.max(2));
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut margins = vec![base_score; n];
    let mut loss = mean_logloss(&margins, y);
    let mut staged_loss = vec![loss];
    let mut trees = Vec::with_capacity(params.n_estimators);
    let all_rows: Vec<usize> = (0..n).collect();

    for _ in 0..params.n_estimators {
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n];
        for i in 0..n {
            let p = sigmoid(margins[i]);
            g[i] = p - if y[i] { 1.0 } else { 0.0 };
            h[i] = (p * (1.0 - p)).max(1e-16);
        }
        let rows: Vec<usize> = if params.subsample < 1.0 {
            let k = ((n as f64 * params.subsample).round() as usize).clamp(1, n);
            let mut r = sample(&mut rng, n, k).into_vec();
            r.sort_unstable();
            r
        } else {
            all_rows.clone()
        };
        let (mut tree, _) = grow_tree(&columns, &g, &h, &rows, params);

        // every training row, sampled or not, gets the tree's output
        let outputs: Vec<f64> = x.iter().map(|xi| tree.predict(xi)).collect();
        let mut factor = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = margins
                .iter()
                .zip(&outputs)
                .map(|(m, o)| m + params.learning_rate * factor * o)
                .collect();
            let trial_loss = mean_logloss(&trial, y);
            if trial_loss <= loss {
                accepted = Some((trial, trial_loss));
                break;
            }
            factor *= 0.5;
        }
        match accepted {
            Some((trial, trial_loss)) => {
                if factor != 1.0 {
                    tree.scale_leaves(factor);
                }
                margins = trial;
                loss = trial_loss;
            }
            None => tree.scale_leaves(0.0),
        }
        staged_loss.push(loss);
        trees.push(tree);
    }

    Ok(GbtModel {
        base_score,
        learning_rate: params.learning_rate,
        n_estimators: params.n_estimators,
        n_features,
        trees,
        staged_loss,
    })
}
