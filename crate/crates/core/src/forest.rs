//! Random-forest feature ranking.
//!
//! A forest of depth-bounded CART classifiers is grown on bootstrap samples
//! with weighted Gini impurity; features are ranked by their mean decrease
//! in impurity and the top-k are kept for kernel learning.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ActionId;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("need at least two distinct actions to grow a classifier, found {0}")]
    SingleAction(usize),

    #[error("empty training set")]
    Empty,

    #[error("{states} states but {actions} actions")]
    LengthMismatch { states: usize, actions: usize },

    #[error("invalid forest config: {0}")]
    Config(String),

    #[error("k = {k} out of range 1..={d}")]
    KOutOfRange { k: usize, d: usize },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeighting {
    Balanced,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub class_weighting: ClassWeighting,
    /// Candidate features per split; `None` means `ceil(sqrt(d))`.
    pub features_per_split: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 3,
            class_weighting: ClassWeighting::Balanced,
            features_per_split: None,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::Config("n_trees must be >= 1".into()));
        }
        if self.max_depth == 0 {
            return Err(ForestError::Config("max_depth must be >= 1".into()));
        }
        if self.features_per_split == Some(0) {
            return Err(ForestError::Config("features_per_split must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        /// Weighted class distribution, normalized.
        dist: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    /// Unnormalized weighted impurity decrease per feature.
    pub impurity_decrease: Vec<f64>,
}

impl Tree {
    fn leaf_dist(&self, x: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { dist } => return dist,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn n_splits(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Split { .. }))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub n_features: usize,
    pub n_classes: usize,
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.n_classes];
        for t in &self.trees {
            for (acc, v) in p.iter_mut().zip(t.leaf_dist(x)) {
                *acc += v;
            }
        }
        let n = self.trees.len() as f64;
        p.iter_mut().for_each(|v| *v /= n);
        p
    }

    pub fn predict(&self, x: &[f64]) -> ActionId {
        let p = self.predict_proba(x);
        let mut best = 0;
        for (i, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = i;
            }
        }
        ActionId(best)
    }
}

fn gini(counts: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / total) * (c / total)).sum::<f64>()
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    /// Per-sample weight: bootstrap multiplicity times class weight.
    w: Vec<f64>,
    n_classes: usize,
    max_depth: usize,
    mtry: usize,
    nodes: Vec<Node>,
    importance: Vec<f64>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    decrease: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

impl Grower<'_> {
    fn class_counts(&self, idx: &[usize]) -> (Vec<f64>, f64) {
        let mut c = vec![0.0; self.n_classes];
        for &i in idx {
            c[self.y[i]] += self.w[i];
        }
        let total = c.iter().sum();
        (c, total)
    }

    fn best_split_on(&self, idx: &[usize], feature: usize, parent: &[f64], total: f64) -> Option<(f64, f64)> {
        let mut order = idx.to_vec();
        order.sort_by(|&a, &b| self.x[a][feature].total_cmp(&self.x[b][feature]).then(a.cmp(&b)));
        let parent_imp = total * gini(parent, total);
        let mut left = vec![0.0; self.n_classes];
        let mut wl = 0.0;
        let mut best: Option<(f64, f64)> = None;
        for k in 0..order.len() - 1 {
            let i = order[k];
            left[self.y[i]] += self.w[i];
            wl += self.w[i];
            let (v, vn) = (self.x[i][feature], self.x[order[k + 1]][feature]);
            if v >= vn {
                continue;
            }
            let right: Vec<f64> = parent.iter().zip(&left).map(|(p, l)| p - l).collect();
            let wr = total - wl;
            let dec = parent_imp - wl * gini(&left, wl) - wr * gini(&right, wr);
            if best.is_none_or(|(d, _)| dec > d) {
                let mut thr = 0.5 * (v + vn);
                if thr >= vn {
                    thr = v;
                }
                best = Some((dec, thr));
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let (counts, total) = self.class_counts(&idx);
        let id = self.nodes.len();
        let leaf = Node::Leaf {
            dist: counts.iter().map(|c| c / total.max(f64::MIN_POSITIVE)).collect(),
        };
        self.nodes.push(leaf);
        if depth >= self.max_depth || idx.len() < 2 || gini(&counts, total) <= 1e-15 {
            return id;
        }

        let d = self.importance.len();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(rng);
        let mut best: Option<BestSplit> = None;
        for (rank, &f) in features.iter().enumerate() {
            // keep drawing past mtry only while no valid split exists
            if rank >= self.mtry && best.is_some() {
                break;
            }
            if let Some((dec, thr)) = self.best_split_on(&idx, f, &counts, total) {
                if dec > 1e-12 && best.as_ref().is_none_or(|b| dec > b.decrease) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold: thr,
                        decrease: dec,
                        left: Vec::new(),
                        right: Vec::new(),
                    });
                }
            }
        }
        let Some(mut split) = best else {
            return id;
        };
        for &i in &idx {
            if self.x[i][split.feature] <= split.threshold {
                split.left.push(i);
            } else {
                split.right.push(i);
            }
        }
        self.importance[split.feature] += split.decrease;
        let left = self.grow(std::mem::take(&mut split.left), depth + 1, rng);
        let right = self.grow(std::mem::take(&mut split.right), depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

/// Grow a random forest classifier predicting `actions` from `states`.
///
/// Each tree sees a bootstrap sample and per-split candidate feature
/// subsets drawn from its own counter-derived seed stream, so the result
/// does not depend on thread scheduling.
pub fn train_forest(
    states: &[Vec<f64>],
    actions: &[ActionId],
    cfg: &ForestConfig,
) -> Result<Forest, ForestError> {
    cfg.validate()?;
    if states.is_empty() {
        return Err(ForestError::Empty);
    }
    if states.len() != actions.len() {
        return Err(ForestError::LengthMismatch {
            states: states.len(),
            actions: actions.len(),
        });
    }
    let n = states.len();
    let d = states[0].len();
    let y: Vec<usize> = actions.iter().map(|a| a.0).collect();
    let n_classes = y.iter().max().map_or(0, |m| m + 1);
    let mut class_n = vec![0usize; n_classes];
    for &c in &y {
        class_n[c] += 1;
    }
    let present = class_n.iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(ForestError::SingleAction(present));
    }
    let class_w: Vec<f64> = class_n
        .iter()
        .map(|&c| match cfg.class_weighting {
            ClassWeighting::Uniform => 1.0,
            ClassWeighting::Balanced if c > 0 => n as f64 / (present as f64 * c as f64),
            ClassWeighting::Balanced => 0.0,
        })
        .collect();
    let mtry = cfg
        .features_per_split
        .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
        .clamp(1, d.max(1));

    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t as u64);
            let mut mult = vec![0u32; n];
            for _ in 0..n {
                mult[rng.random_range(0..n)] += 1;
            }
            let idx: Vec<usize> = (0..n).filter(|&i| mult[i] > 0).collect();
            let w = (0..n).map(|i| mult[i] as f64 * class_w[y[i]]).collect();
            let mut g = Grower {
                x: states,
                y: &y,
                w,
                n_classes,
                max_depth: cfg.max_depth,
                mtry,
                nodes: Vec::new(),
                importance: vec![0.0; d],
            };
            g.grow(idx, 0, &mut rng);
            Tree {
                nodes: g.nodes,
                impurity_decrease: g.importance,
            }
        })
        .collect();
    Ok(Forest {
        n_features: d,
        n_classes,
        trees,
    })
}

/// Per-feature importances, normalized to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub features: Vec<String>,
    pub importances: Vec<f64>,
}

impl ImportanceReport {
    /// `(feature, importance)` in descending importance; ties keep schema order.
    pub fn ranked(&self) -> Vec<(String, f64)> {
        let mut idx: Vec<usize> = (0..self.features.len()).collect();
        idx.sort_by(|&a, &b| self.importances[b].total_cmp(&self.importances[a]));
        idx.into_iter()
            .map(|i| (self.features[i].clone(), self.importances[i]))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ForestError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["feature", "importance", "rank"])?;
        for (rank, (f, v)) in self.ranked().into_iter().enumerate() {
            w.write_record([f, v.to_string(), (rank + 1).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean decrease in weighted Gini impurity per feature.
///
/// Each tree's decreases are normalized to sum to one before averaging;
/// trees without splits contribute nothing. A forest with no splits at all
/// reports uniform importances.
pub fn feature_importances(forest: &Forest, feature_names: &[String]) -> ImportanceReport {
    let d = forest.n_features;
    let mut acc = vec![0.0; d];
    for t in &forest.trees {
        let s: f64 = t.impurity_decrease.iter().sum();
        if s > 0.0 {
            for (a, v) in acc.iter_mut().zip(&t.impurity_decrease) {
                *a += v / s;
            }
        }
    }
    let total: f64 = acc.iter().sum();
    let importances = if total > 0.0 {
        acc.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / d as f64; d]
    };
    ImportanceReport {
        features: feature_names.to_vec(),
        importances,
    }
}

/// The `k` most important features, best first.
pub fn select_top_k(report: &ImportanceReport, k: usize) -> Result<Vec<String>, ForestError> {
    let d = report.features.len();
    if k == 0 || k > d {
        return Err(ForestError::KOutOfRange { k, d });
    }
    Ok(report.ranked().into_iter().take(k).map(|(f, _)| f).collect())
}
