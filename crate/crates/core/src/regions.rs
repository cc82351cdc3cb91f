//! Decision regions: clusters of decision points.
//!
//! Decision points are standardized, merged bottom-up into a hierarchy, and
//! the hierarchy is then cut top-down. A node is split while the per-action
//! feature means of its members disagree by more than a threshold, or while
//! trajectories keep leaving it and coming straight back. Final labels come
//! from nearest-centroid assignment so unseen points can be labelled too.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ActionId, Dataset, Outcome};
use crate::decision_points::Annotations;
use crate::linkage::{build_linkage, Linkage, LinkageMethod};
use crate::neighbors::KdTree;
use crate::standardize::Standardizer;

#[derive(Debug, Error)]
pub enum RegionError {
    #[error("need at least 2 decision points to cluster, found {0}")]
    TooFewPoints(usize),

    #[error("invalid region config: {0}")]
    Config(String),

    #[error("threshold override for unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("annotations do not align with dataset")]
    Alignment,

    #[error("dimension mismatch: model has {model}, data has {data}")]
    Dimension { model: usize, data: usize },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionConfig {
    pub linkage: LinkageMethod,
    pub homogeneity_threshold: f64,
    /// Per-feature overrides of `homogeneity_threshold`.
    pub feature_thresholds: BTreeMap<String, f64>,
    /// Minimum members taking an action before its mean is compared.
    pub min_action_points: usize,
    pub loop_threshold: f64,
    pub loop_window: usize,
    pub max_splits: usize,
    pub linkage_sample_cap: usize,
    pub seed: u64,
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self {
            linkage: LinkageMethod::Ward,
            homogeneity_threshold: 0.5,
            feature_thresholds: BTreeMap::new(),
            min_action_points: 10,
            loop_threshold: 0.25,
            loop_window: 3,
            max_splits: 64,
            linkage_sample_cap: 20_000,
            seed: 0,
        }
    }
}

impl RegionConfig {
    pub fn validate(&self) -> Result<(), RegionError> {
        let mut bad = Vec::new();
        if !(self.homogeneity_threshold > 0.0) {
            bad.push("homogeneity_threshold must be positive".to_string());
        }
        for (f, t) in &self.feature_thresholds {
            if !(*t > 0.0) {
                bad.push(format!("feature_thresholds.{f} must be positive"));
            }
        }
        if !(self.loop_threshold > 0.0) {
            bad.push("loop_threshold must be positive".to_string());
        }
        if self.loop_window == 0 {
            bad.push("loop_window must be >= 1".to_string());
        }
        if self.linkage_sample_cap < 2 {
            bad.push("linkage_sample_cap must be >= 2".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(RegionError::Config(bad.join("; ")))
        }
    }

    /// Threshold per feature, in feature order.
    pub fn thresholds(&self, features: &[String]) -> Result<Vec<f64>, RegionError> {
        if let Some(f) = self.feature_thresholds.keys().find(|f| !features.contains(f)) {
            return Err(RegionError::UnknownFeature(f.clone()));
        }
        Ok(features
            .iter()
            .map(|f| *self.feature_thresholds.get(f).unwrap_or(&self.homogeneity_threshold))
            .collect())
    }
}

/// Hierarchy over a (possibly subsampled) set of points.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    pub linkage: Linkage,
    /// Indices into the input points that became leaves, ascending.
    pub sample: Vec<usize>,
}

/// Agglomerative hierarchy over standardized decision points, subsampled to
/// `linkage_sample_cap` when larger.
pub fn build_hierarchy(points: &[Vec<f64>], cfg: &RegionConfig) -> Result<Hierarchy, RegionError> {
    if points.len() < 2 {
        return Err(RegionError::TooFewPoints(points.len()));
    }
    let sample_idx: Vec<usize> = if points.len() > cfg.linkage_sample_cap {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut s = sample(&mut rng, points.len(), cfg.linkage_sample_cap).into_vec();
        s.sort_unstable();
        s
    } else {
        (0..points.len()).collect()
    };
    let leaves: Vec<Vec<f64>> = sample_idx.iter().map(|&i| points[i].clone()).collect();
    Ok(Hierarchy {
        linkage: build_linkage(&leaves, cfg.linkage),
        sample: sample_idx,
    })
}

/// Fraction of exits from `cluster` that return within `window` steps.
pub fn loop_rate(cluster: u32, labels: &[Vec<u32>], window: usize) -> f64 {
    let (mut exits, mut loops) = (0usize, 0usize);
    for seq in labels {
        for l in 0..seq.len().saturating_sub(1) {
            if seq[l] == cluster && seq[l + 1] != cluster {
                exits += 1;
                let end = (l + window).min(seq.len() - 1);
                if seq[l + 1..=end].contains(&cluster) {
                    loops += 1;
                }
            }
        }
    }
    if exits == 0 {
        0.0
    } else {
        loops as f64 / exits as f64
    }
}

/// Loop rates for clusters `1..=k` in one pass; index 0 is cluster 1.
pub fn loop_rates(labels: &[Vec<u32>], k: usize, window: usize) -> Vec<f64> {
    let mut exits = vec![0usize; k + 1];
    let mut loops = vec![0usize; k + 1];
    for seq in labels {
        for l in 0..seq.len().saturating_sub(1) {
            let c = seq[l];
            if c != 0 && seq[l + 1] != c {
                exits[c as usize] += 1;
                let end = (l + window).min(seq.len() - 1);
                if seq[l + 1..=end].contains(&c) {
                    loops[c as usize] += 1;
                }
            }
        }
    }
    (1..=k)
        .map(|c| {
            if exits[c] == 0 {
                0.0
            } else {
                loops[c] as f64 / exits[c] as f64
            }
        })
        .collect()
}

/// Largest difference of per-action feature means, per feature.
///
/// Only members whose taken action is valid at that point count, and only
/// actions with at least `min_points` such members are compared. Fewer than
/// two qualifying actions gives all zeros.
pub fn homogeneity_gaps(
    points: &[Vec<f64>],
    actions: &[ActionId],
    action_valid: &[bool],
    members: &[usize],
    n_actions: usize,
    min_points: usize,
) -> Vec<f64> {
    let d = points.first().map_or(0, |p| p.len());
    let mut sums = vec![vec![0.0; d]; n_actions];
    let mut counts = vec![0usize; n_actions];
    for &i in members {
        if !action_valid[i] {
            continue;
        }
        let a = actions[i].0;
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(&points[i]) {
            *s += v;
        }
    }
    let groups: Vec<Vec<f64>> = (0..n_actions)
        .filter(|&a| counts[a] >= min_points.max(1))
        .map(|a| sums[a].iter().map(|s| s / counts[a] as f64).collect())
        .collect();
    if groups.len() < 2 {
        return vec![0.0; d];
    }
    (0..d)
        .map(|f| {
            let (lo, hi) = groups
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), g| (lo.min(g[f]), hi.max(g[f])));
            hi - lo
        })
        .collect()
}

/// Decision points with the context needed to split the hierarchy.
#[derive(Debug, Clone)]
pub struct SplitInput<'a> {
    /// Standardized state per decision point.
    pub points: &'a [Vec<f64>],
    pub actions: &'a [ActionId],
    /// Whether the taken action is in the point's valid set.
    pub action_valid: &'a [bool],
    /// Hierarchy leaf holding each decision point.
    pub leaf_of: &'a [usize],
    /// Per trajectory and step, the decision-point index (if any).
    pub sequences: &'a [Vec<Option<usize>>],
    pub n_actions: usize,
    /// Homogeneity threshold per feature.
    pub thresholds: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    /// Hierarchy nodes of the final clusters; node `i` is cluster `i + 1`.
    pub nodes: Vec<usize>,
    /// Cluster id per decision point.
    pub labels: Vec<u32>,
    pub splits: usize,
    /// True when splitting stopped because `max_splits` was reached.
    pub truncated: bool,
}

fn frontier_labels(linkage: &Linkage, frontier: &[usize], input: &SplitInput) -> Vec<u32> {
    let mut leaf_label = vec![0u32; linkage.n_leaves];
    for (c, &node) in frontier.iter().enumerate() {
        for leaf in linkage.leaves(node) {
            leaf_label[leaf] = c as u32 + 1;
        }
    }
    input.leaf_of.iter().map(|&l| leaf_label[l]).collect()
}

fn step_labels(sequences: &[Vec<Option<usize>>], dp_labels: &[u32]) -> Vec<Vec<u32>> {
    sequences
        .iter()
        .map(|s| s.iter().map(|o| o.map_or(0, |i| dp_labels[i])).collect())
        .collect()
}

/// Cut the hierarchy top-down, breadth first.
pub fn split_top_down(linkage: &Linkage, input: &SplitInput, cfg: &RegionConfig) -> SplitResult {
    let mut leaf_dps: Vec<Vec<usize>> = vec![Vec::new(); linkage.n_leaves];
    for (i, &l) in input.leaf_of.iter().enumerate() {
        leaf_dps[l].push(i);
    }
    let mut homog_cache: HashMap<usize, bool> = HashMap::new();
    let mut inhomogeneous = |node: usize| -> bool {
        *homog_cache.entry(node).or_insert_with(|| {
            let members: Vec<usize> = linkage
                .leaves(node)
                .into_iter()
                .flat_map(|l| leaf_dps[l].iter().copied())
                .collect();
            let gaps = homogeneity_gaps(
                input.points,
                input.actions,
                input.action_valid,
                &members,
                input.n_actions,
                cfg.min_action_points,
            );
            gaps.iter().zip(input.thresholds).any(|(g, t)| g > t)
        })
    };

    let mut frontier: VecDeque<usize> = VecDeque::from([linkage.root()]);
    let mut splits = 0;
    let mut truncated = false;
    loop {
        let order: Vec<usize> = frontier.iter().copied().collect();
        let labels = frontier_labels(linkage, &order, input);
        let rates = loop_rates(&step_labels(input.sequences, &labels), order.len(), cfg.loop_window);
        let target = order.iter().enumerate().position(|(c, &node)| {
            !linkage.is_leaf(node) && (rates[c] > cfg.loop_threshold || inhomogeneous(node))
        });
        let Some(pos) = target else {
            return SplitResult {
                nodes: order,
                labels,
                splits,
                truncated,
            };
        };
        if splits >= cfg.max_splits {
            truncated = true;
            return SplitResult {
                nodes: order,
                labels,
                splits,
                truncated,
            };
        }
        let node = frontier.remove(pos).unwrap();
        let (l, r) = linkage.children(node).unwrap();
        frontier.push_back(l);
        frontier.push_back(r);
        splits += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDiagnostics {
    pub cluster_id: u32,
    pub size: usize,
    pub loop_rate: f64,
    pub mortality_rate: f64,
    /// Mean raw feature values over members.
    pub feature_means: Vec<f64>,
    pub action_counts: Vec<usize>,
    /// Mean raw feature values per action taken; `None` for unseen actions.
    pub action_feature_means: Vec<Option<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionModel {
    pub feature_names: Vec<String>,
    pub standardizer: Standardizer,
    /// Centroid of cluster `i + 1`, standardized.
    pub centroids: Vec<Vec<f64>>,
    pub config: RegionConfig,
    pub diagnostics: Vec<ClusterDiagnostics>,
}

impl RegionModel {
    pub fn n_clusters(&self) -> usize {
        self.centroids.len()
    }

    /// Cluster id (1-based) of the centroid nearest to `z`.
    pub fn nearest(&self, z: &[f64]) -> u32 {
        let mut best = (0usize, f64::INFINITY);
        for (c, cen) in self.centroids.iter().enumerate() {
            let d: f64 = cen.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (c, d);
            }
        }
        best.0 as u32 + 1
    }

    pub fn write_diagnostics_csv<W: Write>(&self, writer: W) -> Result<(), RegionError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = ["cluster_id", "size", "loop_rate", "mortality_rate"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header)?;
        for d in &self.diagnostics {
            let mut row = vec![
                d.cluster_id.to_string(),
                d.size.to_string(),
                d.loop_rate.to_string(),
                d.mortality_rate.to_string(),
            ];
            row.extend(d.feature_means.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Nearest-centroid cluster ids for raw states; ties go to the lowest id.
pub fn assign_clusters(points: &[Vec<f64>], model: &RegionModel) -> Result<Vec<u32>, RegionError> {
    if let Some(p) = points.iter().find(|p| p.len() != model.standardizer.dim()) {
        return Err(RegionError::Dimension {
            model: model.standardizer.dim(),
            data: p.len(),
        });
    }
    Ok(points
        .par_iter()
        .map(|p| model.nearest(&model.standardizer.transform(p)))
        .collect())
}

/// Region model plus the labels of the data it was fitted on.
#[derive(Debug, Clone)]
pub struct RegionFit {
    pub model: RegionModel,
    /// Per trajectory and step: cluster id, 0 for non-decision points.
    pub labels: Vec<Vec<u32>>,
    /// Fraction of hierarchy leaves whose centroid assignment matches the
    /// cluster they were given while splitting.
    pub split_agreement: f64,
    pub splits: usize,
    pub truncated: bool,
}

struct DpTable {
    raw: Vec<Vec<f64>>,
    actions: Vec<ActionId>,
    action_valid: Vec<bool>,
    dead: Vec<bool>,
    sequences: Vec<Vec<Option<usize>>>,
}

fn collect_dps(dataset: &Dataset, ann: &Annotations) -> Result<DpTable, RegionError> {
    if ann.len() != dataset.trajectories.len()
        || ann.iter().zip(&dataset.trajectories).any(|(a, t)| a.len() != t.steps.len())
    {
        return Err(RegionError::Alignment);
    }
    let mut t = DpTable {
        raw: Vec::new(),
        actions: Vec::new(),
        action_valid: Vec::new(),
        dead: Vec::new(),
        sequences: Vec::with_capacity(ann.len()),
    };
    for (traj, anns) in dataset.trajectories.iter().zip(ann) {
        let mut seq = Vec::with_capacity(anns.len());
        for (s, a) in traj.steps.iter().zip(anns) {
            if a.is_dp {
                seq.push(Some(t.raw.len()));
                t.raw.push(s.state.clone());
                t.actions.push(s.action);
                t.action_valid.push(a.valid_actions.contains(&s.action));
                t.dead.push(traj.outcome == Outcome::Dead);
            } else {
                seq.push(None);
            }
        }
        t.sequences.push(seq);
    }
    Ok(t)
}

/// Cluster the decision points of `dataset` into regions.
pub fn fit_regions(dataset: &Dataset, ann: &Annotations, cfg: &RegionConfig) -> Result<RegionFit, RegionError> {
    cfg.validate()?;
    let features = &dataset.schema.features;
    let thresholds = cfg.thresholds(features)?;
    let t = collect_dps(dataset, ann)?;
    if t.raw.len() < 2 {
        return Err(RegionError::TooFewPoints(t.raw.len()));
    }
    let standardizer = Standardizer::fit(&t.raw);
    let z = standardizer.transform_all(&t.raw);
    let h = build_hierarchy(&z, cfg)?;

    let leaf_of: Vec<usize> = if h.sample.len() == z.len() {
        (0..z.len()).collect()
    } else {
        let leaves: Vec<Vec<f64>> = h.sample.iter().map(|&i| z[i].clone()).collect();
        let tree = KdTree::build(&leaves);
        let mut pos = vec![usize::MAX; z.len()];
        for (leaf, &i) in h.sample.iter().enumerate() {
            pos[i] = leaf;
        }
        z.par_iter()
            .zip(pos.par_iter())
            .map(|(p, &leaf)| {
                if leaf != usize::MAX {
                    leaf
                } else {
                    tree.nearest(p).expect("non-empty sample").0
                }
            })
            .collect()
    };

    let input = SplitInput {
        points: &z,
        actions: &t.actions,
        action_valid: &t.action_valid,
        leaf_of: &leaf_of,
        sequences: &t.sequences,
        n_actions: dataset.n_actions(),
        thresholds: &thresholds,
    };
    let split = split_top_down(&h.linkage, &input, cfg);
    let k = split.nodes.len();
    if split.truncated {
        log::warn!("region splitting stopped at max_splits = {}", cfg.max_splits);
    }

    let d = standardizer.dim();
    let mut centroids = vec![vec![0.0; d]; k];
    let mut sizes = vec![0usize; k];
    for (p, &c) in z.iter().zip(&split.labels) {
        let c = c as usize - 1;
        sizes[c] += 1;
        for (s, v) in centroids[c].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (cen, &n) in centroids.iter_mut().zip(&sizes) {
        cen.iter_mut().for_each(|s| *s /= n as f64);
    }

    let mut model = RegionModel {
        feature_names: features.clone(),
        standardizer,
        centroids,
        config: cfg.clone(),
        diagnostics: Vec::new(),
    };
    let dp_labels: Vec<u32> = z.par_iter().map(|p| model.nearest(p)).collect();
    let agree = h
        .sample
        .iter()
        .filter(|&&i| dp_labels[i] == split.labels[i])
        .count();
    let split_agreement = agree as f64 / h.sample.len() as f64;

    let labels = step_labels(&t.sequences, &dp_labels);
    model.diagnostics = diagnostics(&t, &dp_labels, &labels, k, dataset.n_actions(), cfg.loop_window);
    Ok(RegionFit {
        model,
        labels,
        split_agreement,
        splits: split.splits,
        truncated: split.truncated,
    })
}

fn diagnostics(
    t: &DpTable,
    dp_labels: &[u32],
    labels: &[Vec<u32>],
    k: usize,
    n_actions: usize,
    window: usize,
) -> Vec<ClusterDiagnostics> {
    let d = t.raw.first().map_or(0, |p| p.len());
    let rates = loop_rates(labels, k, window);
    let mut out: Vec<ClusterDiagnostics> = (0..k)
        .map(|c| ClusterDiagnostics {
            cluster_id: c as u32 + 1,
            size: 0,
            loop_rate: rates[c],
            mortality_rate: 0.0,
            feature_means: vec![0.0; d],
            action_counts: vec![0; n_actions],
            action_feature_means: vec![None; n_actions],
        })
        .collect();
    let mut dead = vec![0usize; k];
    for (i, &c) in dp_labels.iter().enumerate() {
        let g = &mut out[c as usize - 1];
        g.size += 1;
        dead[c as usize - 1] += t.dead[i] as usize;
        let a = t.actions[i].0;
        g.action_counts[a] += 1;
        let am = g.action_feature_means[a].get_or_insert_with(|| vec![0.0; d]);
        for (s, v) in am.iter_mut().zip(&t.raw[i]) {
            *s += v;
        }
        for (s, v) in g.feature_means.iter_mut().zip(&t.raw[i]) {
            *s += v;
        }
    }
    for (g, dd) in out.iter_mut().zip(dead) {
        if g.size > 0 {
            let n = g.size as f64;
            g.mortality_rate = dd as f64 / n;
            g.feature_means.iter_mut().for_each(|s| *s /= n);
        }
        for (am, &n) in g.action_feature_means.iter_mut().zip(&g.action_counts) {
            if let Some(m) = am {
                m.iter_mut().for_each(|s| *s /= n as f64);
            }
        }
    }
    out
}

/// Cluster labels for every step of `dataset`: nearest centroid at
/// decision points, 0 elsewhere.
pub fn label_dataset(dataset: &Dataset, ann: &Annotations, model: &RegionModel) -> Result<Vec<Vec<u32>>, RegionError> {
    if dataset.dim() != model.standardizer.dim() {
        return Err(RegionError::Dimension {
            model: model.standardizer.dim(),
            data: dataset.dim(),
        });
    }
    let t = collect_dps(dataset, ann)?;
    let dp_labels = assign_clusters(&t.raw, model)?;
    Ok(step_labels(&t.sequences, &dp_labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loop_rate_examples() {
        let (c, x, y, z, w) = (1, 2, 3, 4, 5);
        assert_eq!(loop_rate(c, &[vec![c, x, c]], 3), 1.0);
        assert_eq!(loop_rate(c, &[vec![c, x, y, z, w, c]], 3), 0.0);
        assert_eq!(loop_rate(c, &[vec![c, x, c, y, y, y]], 3), 0.5);
        assert_eq!(loop_rate(c, &[vec![x, y]], 3), 0.0);
        assert_eq!(loop_rates(&[vec![c, x, c, y, y, y]], 2, 3), vec![0.5, 0.0]);
    }

    #[test]
    fn loop_through_non_dp_counts() {
        assert_eq!(loop_rate(1, &[vec![1, 0, 0, 1]], 3), 1.0);
        assert_eq!(loop_rate(1, &[vec![1, 0, 0, 1]], 2), 0.0);
    }

    #[test]
    fn opposed_action_means_exceed_threshold() {
        let points = vec![vec![-1.0], vec![-1.0], vec![1.0], vec![1.0]];
        let actions = vec![ActionId(0), ActionId(0), ActionId(1), ActionId(1)];
        let valid = vec![true; 4];
        let gaps = homogeneity_gaps(&points, &actions, &valid, &[0, 1, 2, 3], 2, 1);
        assert_eq!(gaps, vec![2.0]);
        assert!(gaps[0] > 0.5);
        // too few points per action: nothing to compare
        assert_eq!(homogeneity_gaps(&points, &actions, &valid, &[0, 1, 2, 3], 2, 3), vec![0.0]);
        // invalid taken actions are ignored
        let valid = vec![true, true, false, false];
        assert_eq!(homogeneity_gaps(&points, &actions, &valid, &[0, 1, 2, 3], 2, 1), vec![0.0]);
    }

    fn model(centroids: Vec<Vec<f64>>) -> RegionModel {
        RegionModel {
            feature_names: vec!["a".into(), "b".into()],
            standardizer: Standardizer::identity(2),
            centroids,
            config: RegionConfig::default(),
            diagnostics: Vec::new(),
        }
    }

    #[test]
    fn assign_ties_go_to_lowest_id() {
        let m = model(vec![vec![10.0, 10.0], vec![-1.0, 0.0], vec![5.0, 5.0], vec![7.0, 7.0], vec![1.0, 0.0]]);
        assert_eq!(assign_clusters(&[vec![0.0, 0.0]], &m).unwrap(), vec![2]);
        assert_eq!(assign_clusters(&[vec![5.0, 5.0]], &m).unwrap(), vec![3]);
        assert!(assign_clusters(&[vec![0.0]], &m).is_err());
    }

    #[test]
    fn config_validation_lists_every_field() {
        let cfg = RegionConfig {
            homogeneity_threshold: 0.0,
            loop_window: 0,
            ..Default::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("homogeneity_threshold") && msg.contains("loop_window"));
        let cfg = RegionConfig {
            feature_thresholds: BTreeMap::from([("nope".to_string(), 1.0)]),
            ..Default::default()
        };
        assert!(matches!(cfg.thresholds(&["a".into()]), Err(RegionError::UnknownFeature(_))));
    }

    fn split_fixture(gap: f64) -> (Vec<Vec<f64>>, Vec<ActionId>, Vec<bool>) {
        // two tight blobs at x = 0 and x = 10; actions split along y inside
        // each blob by `gap`
        let mut pts = Vec::new();
        let mut acts = Vec::new();
        for blob in [0.0, 10.0] {
            for i in 0..40 {
                let a = i % 2;
                let y = if a == 0 { -gap / 2.0 } else { gap / 2.0 };
                pts.push(vec![blob + (i as f64) * 1e-3, y]);
                acts.push(ActionId(a));
            }
        }
        let valid = vec![true; pts.len()];
        (pts, acts, valid)
    }

    fn run_split(pts: &[Vec<f64>], acts: &[ActionId], valid: &[bool], seqs: &[Vec<Option<usize>>], cfg: &RegionConfig) -> SplitResult {
        let h = build_hierarchy(pts, cfg).unwrap();
        let leaf_of: Vec<usize> = (0..pts.len()).collect();
        let thr = vec![cfg.homogeneity_threshold; 2];
        let input = SplitInput {
            points: pts,
            actions: acts,
            action_valid: valid,
            leaf_of: &leaf_of,
            sequences: seqs,
            n_actions: 2,
            thresholds: &thr,
        };
        split_top_down(&h.linkage, &input, cfg)
    }

    #[test]
    fn homogeneous_root_is_not_split() {
        let (pts, acts, valid) = split_fixture(0.0);
        let r = run_split(&pts, &acts, &valid, &[], &RegionConfig::default());
        assert_eq!(r.nodes.len(), 1);
        assert!(r.labels.iter().all(|&l| l == 1));
        assert_eq!(r.splits, 0);
    }

    #[test]
    fn mixed_action_means_force_split() {
        // blob 0 takes only action 0 and blob 1 only action 1
        let (pts, _, valid) = split_fixture(0.0);
        let acts: Vec<ActionId> = (0..80).map(|i| ActionId(i / 40)).collect();
        let r = run_split(&pts, &acts, &valid, &[], &RegionConfig::default());
        assert_eq!(r.nodes.len(), 2);
        assert!(r.labels[..40].iter().all(|&l| l == r.labels[0]));
        assert!(r.labels[40..].iter().all(|&l| l == r.labels[40]));
        assert_ne!(r.labels[0], r.labels[40]);
    }

    #[test]
    fn loops_force_split_and_max_splits_truncates() {
        let (pts, acts, valid) = split_fixture(0.0);
        // a trajectory hopping between the two blobs and back
        let seqs = vec![vec![Some(0), Some(40), Some(1)]];
        // both blobs are one cluster initially: no exit, no loop
        let r = run_split(&pts, &acts, &valid, &seqs, &RegionConfig::default());
        assert_eq!(r.nodes.len(), 1);
        let seqs = vec![vec![Some(0), None, Some(1)]];
        let cfg = RegionConfig {
            max_splits: 3,
            ..Default::default()
        };
        let r = run_split(&pts, &acts, &valid, &seqs, &cfg);
        assert!(r.truncated);
        assert_eq!(r.splits, 3);
        assert_eq!(r.nodes.len(), 4);
    }
}
