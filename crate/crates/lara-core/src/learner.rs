//! Gradient-boosted decision trees for binary probability estimation.
//!
//! The booster fits regression trees to logistic-loss residuals with exact
//! greedy splits. Two choices make it deterministic and row-order
//! invariant: rows are brought into a canonical order (lexicographic by
//! features, then label) before any fitting, and split ties are broken by
//! lower feature index, then lower threshold.

use std::path::Path;

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Probabilities are clipped away from {0, 1} before log-loss so single
/// confident mistakes cannot produce infinities.
const PROB_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerConfig {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    /// Recorded for interface stability; the exact greedy builder does not
    /// draw random numbers.
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            n_estimators: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 20,
            seed: 0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators < 1 {
            return Err(Error::param("n_estimators", "must be at least 1"));
        }
        if self.max_depth < 1 {
            return Err(Error::param("max_depth", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::param("learning_rate", "must lie in (0, 1]"));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::param("min_samples_leaf", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Split {
        feature: usize,
        /// Rows with `x[feature] <= threshold` go left.
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn eval(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

/// A fitted boosted ensemble of regression trees on logistic loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    dim: usize,
    /// Log-odds of the positive class on the training set.
    base_score: f64,
    learning_rate: f64,
    trees: Vec<Tree>,
    /// Set when training saw a single class; the model is then a constant.
    constant: bool,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn clip_prob(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

/// Logistic loss of one prediction. The label is a f64 so refurbished
/// (blended) labels can be scored too; hard labels pass 0.0 or 1.0.
pub fn sample_loss(prediction: f64, label: f64) -> f64 {
    let p = clip_prob(prediction);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// Working state for one tree node during construction: the node's rows,
/// kept as per-feature index lists sorted by that feature's value.
struct NodeRows {
    by_feature: Vec<Vec<u32>>,
}

struct TreeBuilder<'a> {
    x: &'a [f64],
    dim: usize,
    residuals: &'a [f64],
    max_depth: usize,
    min_samples_leaf: usize,
    nodes: Vec<Node>,
    /// Leaf membership, collected so the caller can update raw scores
    /// without re-routing every row.
    leaf_members: Vec<(f64, Vec<u32>)>,
}

impl<'a> TreeBuilder<'a> {
    fn feat(&self, row: u32, f: usize) -> f64 {
        self.x[row as usize * self.dim + f]
    }

    fn build(&mut self, rows: NodeRows, depth: usize) -> usize {
        let members = &rows.by_feature[0];
        let n = members.len();
        let sum: f64 = members.iter().map(|&i| self.residuals[i as usize]).sum();

        let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
        if depth < self.max_depth && n >= 2 * self.min_samples_leaf {
            let parent_score = sum * sum / n as f64;
            for (f, order) in rows.by_feature.iter().enumerate() {
                let mut left_sum = 0.0;
                for (pos, &i) in order[..n - 1].iter().enumerate() {
                    left_sum += self.residuals[i as usize];
                    let here = self.feat(i, f);
                    let next = self.feat(order[pos + 1], f);
                    if here == next {
                        continue; // no boundary between equal values
                    }
                    let n_left = pos + 1;
                    let n_right = n - n_left;
                    if n_left < self.min_samples_leaf || n_right < self.min_samples_leaf {
                        continue;
                    }
                    let right_sum = sum - left_sum;
                    let gain = left_sum * left_sum / n_left as f64
                        + right_sum * right_sum / n_right as f64
                        - parent_score;
                    // Strict improvement; ties keep the earliest (lowest
                    // feature, lowest threshold) candidate.
                    if gain > 0.0 && best.map_or(true, |(g, _, _)| gain > g) {
                        let mut threshold = 0.5 * (here + next);
                        // Guard against the midpoint rounding up onto the
                        // right value, which would break routing.
                        if !(threshold < next) {
                            threshold = here;
                        }
                        best = Some((gain, f, threshold));
                    }
                }
            }
        }

        let Some((_, feature, threshold)) = best else {
            let value = sum / n as f64;
            let at = self.nodes.len();
            self.nodes.push(Node::Leaf { value });
            self.leaf_members.push((value, members.clone()));
            return at;
        };

        // Stable partition of every per-feature list keeps them sorted.
        let mut left = NodeRows {
            by_feature: Vec::with_capacity(self.dim),
        };
        let mut right = NodeRows {
            by_feature: Vec::with_capacity(self.dim),
        };
        for order in &rows.by_feature {
            let (l, r): (Vec<u32>, Vec<u32>) = order
                .iter()
                .partition(|&&i| self.feat(i, feature) <= threshold);
            left.by_feature.push(l);
            right.by_feature.push(r);
        }
        drop(rows);

        let at = self.nodes.len();
        self.nodes.push(Node::Split {
            feature,
            threshold,
            left: 0,
            right: 0,
        });
        let left_at = self.build(left, depth + 1);
        let right_at = self.build(right, depth + 1);
        let Node::Split { left, right, .. } = &mut self.nodes[at] else {
            unreachable!()
        };
        *left = left_at;
        *right = right_at;
        at
    }
}

/// Canonical row order: lexicographic by feature values, then by label.
/// Fitting in this order makes the model independent of input row order.
fn canonical_order(features: ArrayView2<'_, f64>, labels: &[u8]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..features.nrows()).collect();
    order.sort_by(|&a, &b| {
        for f in 0..features.ncols() {
            let cmp = features[[a, f]].total_cmp(&features[[b, f]]);
            if cmp != std::cmp::Ordering::Equal {
                return cmp;
            }
        }
        labels[a].cmp(&labels[b])
    });
    order
}

/// Fits a boosted-tree probability model to binary labels.
pub fn fit(features: ArrayView2<'_, f64>, labels: &[u8], cfg: &LearnerConfig) -> Result<Predictor> {
    cfg.validate()?;
    let n = features.nrows();
    let dim = features.ncols();
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: labels.len(),
        });
    }
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::param("labels", format!("labels must be 0 or 1, got {bad}")));
    }
    if let Some(bad) = features.iter().find(|v| !v.is_finite()) {
        return Err(Error::param(
            "features",
            format!("all feature values must be finite, got {bad}"),
        ));
    }

    let positives = labels.iter().filter(|&&l| l == 1).count();
    let p_bar = clip_prob(positives as f64 / n as f64);
    let base_score = (p_bar / (1.0 - p_bar)).ln();
    if positives == 0 || positives == n {
        // Single class: the prior is already optimal, no trees to fit.
        return Ok(Predictor {
            dim,
            base_score,
            learning_rate: cfg.learning_rate,
            trees: Vec::new(),
            constant: true,
        });
    }

    let order = canonical_order(features, labels);
    let mut x = Vec::with_capacity(n * dim);
    let mut y = Vec::with_capacity(n);
    for &src in &order {
        for f in 0..dim {
            x.push(features[[src, f]]);
        }
        y.push(labels[src] as f64);
    }

    // Per-feature sort of canonical row ids, computed once; features do
    // not change between boosting stages.
    let sorted_by_feature: Vec<Vec<u32>> = (0..dim)
        .map(|f| {
            let mut ids: Vec<u32> = (0..n as u32).collect();
            ids.sort_by(|&a, &b| {
                x[a as usize * dim + f]
                    .total_cmp(&x[b as usize * dim + f])
                    .then(a.cmp(&b))
            });
            ids
        })
        .collect();

    let mut scores = vec![base_score; n];
    let mut residuals = vec![0.0; n];
    let mut trees = Vec::with_capacity(cfg.n_estimators);
    for _ in 0..cfg.n_estimators {
        for i in 0..n {
            residuals[i] = y[i] - sigmoid(scores[i]);
        }
        let mut builder = TreeBuilder {
            x: &x,
            dim,
            residuals: &residuals,
            max_depth: cfg.max_depth,
            min_samples_leaf: cfg.min_samples_leaf,
            nodes: Vec::new(),
            leaf_members: Vec::new(),
        };
        let root = NodeRows {
            by_feature: sorted_by_feature.clone(),
        };
        builder.build(root, 0);
        for (value, members) in &builder.leaf_members {
            for &i in members {
                scores[i as usize] += cfg.learning_rate * value;
            }
        }
        trees.push(Tree {
            nodes: builder.nodes,
        });
    }

    Ok(Predictor {
        dim,
        base_score,
        learning_rate: cfg.learning_rate,
        trees,
        constant: false,
    })
}

impl Predictor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_constant(&self) -> bool {
        self.constant
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Positive-class probability per row.
    pub fn predict_proba(&self, features: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        self.predict_proba_prefix(features, self.trees.len())
    }

    /// Probability using only the first `n_trees` boosting stages. Used to
    /// check that training loss improves stage over stage.
    pub fn predict_proba_prefix(
        &self,
        features: ArrayView2<'_, f64>,
        n_trees: usize,
    ) -> Result<Vec<f64>> {
        if features.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: features.ncols(),
            });
        }
        let n_trees = n_trees.min(self.trees.len());
        let mut row_buf = vec![0.0; self.dim];
        let mut out = Vec::with_capacity(features.nrows());
        for row in features.rows() {
            let slice = match row.as_slice() {
                Some(s) => s,
                None => {
                    row_buf.clear();
                    row_buf.extend(row.iter());
                    &row_buf[..]
                }
            };
            let mut score = self.base_score;
            for tree in &self.trees[..n_trees] {
                score += self.learning_rate * tree.eval(slice);
            }
            out.push(sigmoid(score));
        }
        Ok(out)
    }

    /// Plain-text serialization; parse with [`Predictor::from_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("gbdt v1\n");
        out.push_str(&format!("dim={}\n", self.dim));
        out.push_str(&format!("base_score={}\n", self.base_score));
        out.push_str(&format!("learning_rate={}\n", self.learning_rate));
        out.push_str(&format!("constant={}\n", self.constant));
        out.push_str(&format!("trees={}\n", self.trees.len()));
        for tree in &self.trees {
            out.push_str(&format!("tree nodes={}\n", tree.nodes.len()));
            for node in &tree.nodes {
                match node {
                    Node::Leaf { value } => out.push_str(&format!("leaf {value}\n")),
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => out.push_str(&format!("split {feature} {threshold} {left} {right}\n")),
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Predictor> {
        let mut lines = text.lines();
        let mut row = 0usize;
        let mut next = |ctx: &'static str| -> Result<&str> {
            row += 1;
            lines.next().ok_or(Error::ParseCell {
                row,
                column: ctx.into(),
                value: "<missing line>".into(),
            })
        };
        let header = next("header")?;
        if header != "gbdt v1" {
            return Err(Error::ParseCell {
                row: 1,
                column: "header".into(),
                value: header.to_string(),
            });
        }
        fn field<'t, T: std::str::FromStr>(line: &'t str, key: &'static str, row: usize) -> Result<T> {
            let value = line
                .strip_prefix(key)
                .and_then(|rest| rest.strip_prefix('='))
                .ok_or_else(|| Error::ParseCell {
                    row,
                    column: key.into(),
                    value: line.to_string(),
                })?;
            value.parse().map_err(|_| Error::ParseCell {
                row,
                column: key.into(),
                value: value.to_string(),
            })
        }
        let dim: usize = field(next("dim")?, "dim", 2)?;
        let base_score: f64 = field(next("base_score")?, "base_score", 3)?;
        let learning_rate: f64 = field(next("learning_rate")?, "learning_rate", 4)?;
        let constant: bool = field(next("constant")?, "constant", 5)?;
        let n_trees: usize = field(next("trees")?, "trees", 6)?;
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let head = next("tree")?;
            let n_nodes: usize = head
                .strip_prefix("tree nodes=")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::ParseCell {
                    row: 0,
                    column: "tree".into(),
                    value: head.to_string(),
                })?;
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let line = next("node")?;
                let mut parts = line.split(' ');
                let kind = parts.next().unwrap_or_default();
                let parse_err = |value: &str| Error::ParseCell {
                    row: 0,
                    column: "node".into(),
                    value: value.to_string(),
                };
                match kind {
                    "leaf" => {
                        let value: f64 = parts
                            .next()
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| parse_err(line))?;
                        nodes.push(Node::Leaf { value });
                    }
                    "split" => {
                        let mut take = || parts.next().ok_or_else(|| parse_err(line));
                        let feature: usize = take()?.parse().map_err(|_| parse_err(line))?;
                        let threshold: f64 = take()?.parse().map_err(|_| parse_err(line))?;
                        let left: usize = take()?.parse().map_err(|_| parse_err(line))?;
                        let right: usize = take()?.parse().map_err(|_| parse_err(line))?;
                        nodes.push(Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        });
                    }
                    _ => return Err(parse_err(line)),
                }
            }
            trees.push(Tree { nodes });
        }
        Ok(Predictor {
            dim,
            base_score,
            learning_rate,
            trees,
            constant,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text())
            .map_err(|e| Error::io(format!("write `{}`", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Predictor> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("read `{}`", path.display()), e))?;
        Predictor::from_text(&text)
    }
}
