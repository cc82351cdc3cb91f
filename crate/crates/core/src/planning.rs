//! Rewards and value iteration on the region-level MDP.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compression::CompressedMdp;
use crate::data::{ActionId, Dataset};

#[derive(Debug, Error)]
pub enum PlanningError {
    #[error("invalid planning config: {0}")]
    Config(String),

    #[error("invalid reward spec: {0}")]
    Reward(String),

    #[error("reward rule references unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("no reward for cluster {cluster}, action {action}")]
    MissingReward { cluster: u32, action: ActionId },

    #[error("value iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("{0}")]
    Mismatch(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Piecewise,
    Mortality,
    Terminal,
}

impl RewardKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RewardKind::Piecewise => "piecewise",
            RewardKind::Mortality => "mortality",
            RewardKind::Terminal => "terminal",
        }
    }
}

/// Step function of one feature: `values[i]` applies when exactly `i`
/// breakpoints are `<= x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseRule {
    pub feature: String,
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseRule {
    pub fn validate(&self) -> Result<(), PlanningError> {
        if self.values.len() != self.breakpoints.len() + 1 {
            return Err(PlanningError::Reward(format!(
                "rule on `{}`: {} values for {} breakpoints",
                self.feature,
                self.values.len(),
                self.breakpoints.len()
            )));
        }
        if self.breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(PlanningError::Reward(format!(
                "rule on `{}`: breakpoints must be strictly increasing",
                self.feature
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.values[self.breakpoints.partition_point(|&b| b <= x)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub kind: RewardKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub piecewise_rules: Vec<PiecewiseRule>,
}

impl RewardSpec {
    pub fn simple(kind: RewardKind) -> Self {
        Self {
            kind,
            piecewise_rules: Vec::new(),
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind.as_str()
    }

    pub fn validate(&self) -> Result<(), PlanningError> {
        if self.kind == RewardKind::Piecewise && self.piecewise_rules.is_empty() {
            return Err(PlanningError::Reward("piecewise reward needs at least one rule".into()));
        }
        self.piecewise_rules.iter().try_for_each(PiecewiseRule::validate)
    }
}

/// Raw states of the decision points in each cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMembers {
    pub feature_names: Vec<String>,
    /// `members[c]` holds the states of cluster `c + 1`.
    pub members: Vec<Vec<Vec<f64>>>,
}

impl ClusterMembers {
    pub fn from_labels(dataset: &Dataset, labels: &[Vec<u32>], n_clusters: usize) -> Result<Self, PlanningError> {
        if labels.len() != dataset.trajectories.len() {
            return Err(PlanningError::Mismatch("labels do not align with dataset".into()));
        }
        let mut members = vec![Vec::new(); n_clusters];
        for (t, l) in dataset.trajectories.iter().zip(labels) {
            if l.len() != t.steps.len() {
                return Err(PlanningError::Mismatch(format!("labels do not align with trajectory {}", t.id)));
            }
            for (s, &c) in t.steps.iter().zip(l) {
                if c as usize > n_clusters {
                    return Err(PlanningError::Mismatch(format!("cluster {c} outside 1..={n_clusters}")));
                }
                if c > 0 {
                    members[c as usize - 1].push(s.state.clone());
                }
            }
        }
        Ok(Self {
            feature_names: dataset.schema.features.clone(),
            members,
        })
    }
}

/// `R(x̄, ā)`, `None` where undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTable {
    pub name: String,
    /// `[K][A]`.
    pub values: Vec<Vec<Option<f64>>>,
}

impl RewardTable {
    pub fn get(&self, cluster: u32, a: ActionId) -> Option<f64> {
        self.values.get(cluster as usize - 1)?.get(a.0).copied().flatten()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            name: self.name.clone(),
            values: self
                .values
                .iter()
                .map(|r| r.iter().map(|v| v.map(|x| x * k)).collect())
                .collect(),
        }
    }
}

pub fn build_rewards(mdp: &CompressedMdp, members: &ClusterMembers, spec: &RewardSpec) -> Result<RewardTable, PlanningError> {
    spec.validate()?;
    let (k, na) = (mdp.n_clusters, mdp.n_actions);
    let values = match spec.kind {
        RewardKind::Piecewise => {
            if members.members.len() != k {
                return Err(PlanningError::Mismatch(format!(
                    "{} member lists for {k} clusters",
                    members.members.len()
                )));
            }
            let rules = spec
                .piecewise_rules
                .iter()
                .map(|r| {
                    members
                        .feature_names
                        .iter()
                        .position(|f| *f == r.feature)
                        .map(|i| (i, r))
                        .ok_or_else(|| PlanningError::UnknownFeature(r.feature.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            members
                .members
                .iter()
                .map(|m| {
                    let r = (!m.is_empty()).then(|| {
                        m.iter()
                            .map(|s| rules.iter().map(|(i, r)| r.eval(s[*i])).sum::<f64>())
                            .sum::<f64>()
                            / m.len() as f64
                    });
                    vec![r; na]
                })
                .collect()
        }
        RewardKind::Mortality => (1..=k as u32)
            .map(|c| {
                (0..na)
                    .map(|a| mdp.mortality_fraction(c, ActionId(a)).map(|p| 1.0 - p))
                    .collect()
            })
            .collect(),
        RewardKind::Terminal => (1..=k as u32)
            .map(|c| {
                (0..na)
                    .map(|a| mdp.transition_probs(c, ActionId(a)).map(|p| p[k]))
                    .collect()
            })
            .collect(),
    };
    Ok(RewardTable {
        name: spec.name().to_string(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanningConfig {
    pub gamma: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PlanningConfig {
    fn default() -> Self {
        Self {
            gamma: 0.98,
            tolerance: 1e-8,
            max_iterations: 10_000,
        }
    }
}

impl PlanningConfig {
    pub fn validate(&self) -> Result<(), PlanningError> {
        let mut bad = Vec::new();
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            bad.push("gamma must be in (0, 1]");
        }
        if !(self.tolerance > 0.0) {
            bad.push("tolerance must be positive");
        }
        if self.max_iterations == 0 {
            bad.push("max_iterations must be >= 1");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(PlanningError::Config(bad.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolvedPolicy {
    pub name: String,
    pub gamma: f64,
    /// Value of cluster `c + 1`; terminal states have value 0.
    pub values: Vec<f64>,
    /// `[K][A]`, `None` for actions that are not valid.
    pub q: Vec<Vec<Option<f64>>>,
    /// Chosen action per cluster; `None` where no action is valid.
    pub policy: Vec<Option<ActionId>>,
    pub iterations: usize,
    /// Sup-norm Bellman residual of `values`.
    pub residual: f64,
}

impl SolvedPolicy {
    pub fn action(&self, cluster: u32) -> Option<ActionId> {
        self.policy.get(cluster as usize - 1).copied().flatten()
    }
}

struct Backup {
    actions: Vec<(ActionId, f64, Vec<(usize, f64)>)>,
}

fn q_values<'a>(b: &'a Backup, v: &'a [f64], gamma: f64) -> impl Iterator<Item = (ActionId, f64)> + 'a {
    b.actions.iter().map(move |(a, r, next)| {
        let ev: f64 = next.iter().map(|&(j, p)| p * v[j]).sum();
        (*a, r + gamma * ev)
    })
}

/// Synchronous value iteration over valid actions.
pub fn value_iteration(mdp: &CompressedMdp, rewards: &RewardTable, cfg: &PlanningConfig) -> Result<SolvedPolicy, PlanningError> {
    cfg.validate()?;
    let k = mdp.n_clusters;
    if rewards.values.len() != k {
        return Err(PlanningError::Mismatch(format!(
            "reward table has {} clusters, MDP has {k}",
            rewards.values.len()
        )));
    }
    let mut backups = Vec::with_capacity(k);
    for c in 1..=k as u32 {
        let mut acts = Vec::new();
        for a in mdp.valid_actions(c) {
            let r = rewards
                .get(c, a)
                .ok_or(PlanningError::MissingReward { cluster: c, action: a })?;
            let p = mdp.transition_probs(c, a).expect("valid actions are observed");
            let next: Vec<(usize, f64)> = p[..k].iter().copied().enumerate().filter(|&(_, p)| p > 0.0).collect();
            acts.push((a, r, next));
        }
        if acts.is_empty() && mdp.visits(c) > 0 {
            log::warn!("cluster {c} has no valid action; treating it as terminal");
        }
        backups.push(Backup { actions: acts });
    }

    let max_q = |b: &Backup, v: &[f64]| {
        q_values(b, v, cfg.gamma).fold(None, |best: Option<f64>, (_, q)| Some(best.map_or(q, |m| m.max(q))))
    };
    let mut v = vec![0.0; k];
    let mut iterations = 0;
    let mut prev = v.clone();
    loop {
        if iterations == cfg.max_iterations {
            let residual = sup_diff(&v, &prev);
            return Err(PlanningError::NoConvergence { iterations, residual });
        }
        prev.clone_from(&v);
        for (c, b) in backups.iter().enumerate() {
            v[c] = max_q(b, &prev).unwrap_or(0.0);
        }
        iterations += 1;
        if sup_diff(&v, &prev) < cfg.tolerance {
            break;
        }
    }

    let mut q = vec![vec![None; mdp.n_actions]; k];
    let mut policy = vec![None; k];
    for (c, b) in backups.iter().enumerate() {
        let mut best: Option<(ActionId, f64)> = None;
        for (a, qa) in q_values(b, &prev, cfg.gamma) {
            q[c][a.0] = Some(qa);
            if best.is_none_or(|(_, m)| qa > m) {
                best = Some((a, qa));
            }
        }
        policy[c] = best.map(|(a, _)| a);
    }
    let residual = backups
        .iter()
        .enumerate()
        .map(|(c, b)| (max_q(b, &v).unwrap_or(0.0) - v[c]).abs())
        .fold(0.0, f64::max);
    Ok(SolvedPolicy {
        name: rewards.name.clone(),
        gamma: cfg.gamma,
        values: v,
        q,
        policy,
        iterations,
        residual,
    })
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub cluster_id: u32,
    pub behavior_dist: Vec<f64>,
    /// Chosen action of each policy, in policy order.
    pub actions: Vec<Option<ActionId>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyComparison {
    pub policy_names: Vec<String>,
    pub rows: Vec<ComparisonRow>,
    /// Per policy, fraction of visited clusters where it picks the
    /// behavior mode.
    pub agreement: Vec<f64>,
}

impl PolicyComparison {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), PlanningError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["cluster_id".to_string(), "behavior_dist".to_string()];
        header.extend(self.policy_names.iter().map(|n| format!("{n}_action")));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut row = vec![
                r.cluster_id.to_string(),
                r.behavior_dist.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(";"),
            ];
            row.extend(r.actions.iter().map(|a| a.map_or(String::new(), |a| a.to_string())));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn compare_policies(mdp: &CompressedMdp, solved: &[SolvedPolicy]) -> PolicyComparison {
    let rows: Vec<ComparisonRow> = (1..=mdp.n_clusters as u32)
        .map(|c| ComparisonRow {
            cluster_id: c,
            behavior_dist: mdp.behavior_dist(c),
            actions: solved.iter().map(|s| s.action(c)).collect(),
        })
        .collect();
    let agreement = solved
        .iter()
        .map(|s| {
            let (mut n, mut hit) = (0usize, 0usize);
            for c in 1..=mdp.n_clusters as u32 {
                if let Some(mode) = mdp.behavior_mode(c) {
                    n += 1;
                    hit += (s.action(c) == Some(mode)) as usize;
                }
            }
            if n == 0 {
                0.0
            } else {
                hit as f64 / n as f64
            }
        })
        .collect();
    PolicyComparison {
        policy_names: solved.iter().map(|s| s.name.clone()).collect(),
        rows,
        agreement,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mdp(k: usize, a: usize, trans: &[(usize, usize, usize, usize)]) -> CompressedMdp {
        let mut m = CompressedMdp {
            n_clusters: k,
            n_actions: a,
            min_action_count: 1,
            action_counts: vec![vec![0; a]; k],
            transition_counts: vec![vec![vec![0; k + 2]; a]; k],
            dead_counts: vec![vec![0; a]; k],
            n_trajectories: 1,
            n_empty: 0,
        };
        for &(c, act, next, n) in trans {
            m.action_counts[c][act] += n;
            m.transition_counts[c][act][next] += n;
            if next == k + 1 {
                m.dead_counts[c][act] += n;
            }
        }
        m
    }

    fn table(values: Vec<Vec<Option<f64>>>) -> RewardTable {
        RewardTable {
            name: "r".into(),
            values,
        }
    }

    #[test]
    fn piecewise_segments() {
        let r = PiecewiseRule {
            feature: "map".into(),
            breakpoints: vec![55.0, 65.0],
            values: vec![-1.0, -0.3, 0.0],
        };
        assert_eq!(r.eval(70.0), 0.0);
        assert_eq!(r.eval(65.0), 0.0);
        assert_eq!(r.eval(60.0), -0.3);
        assert_eq!(r.eval(54.9), -1.0);
        let bad = PiecewiseRule {
            breakpoints: vec![65.0, 55.0],
            ..r.clone()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn reward_kinds() {
        let m = mdp(1, 2, &[(0, 0, 1, 3), (0, 1, 2, 2)]);
        let members = ClusterMembers {
            feature_names: vec!["map".into()],
            members: vec![vec![vec![70.0], vec![70.0]]],
        };
        let t = build_rewards(&m, &members, &RewardSpec::simple(RewardKind::Terminal)).unwrap();
        assert_eq!(t.values[0], vec![Some(1.0), Some(0.0)]);
        let t = build_rewards(&m, &members, &RewardSpec::simple(RewardKind::Mortality)).unwrap();
        assert_eq!(t.values[0], vec![Some(1.0), Some(0.0)]);
        let spec = RewardSpec {
            kind: RewardKind::Piecewise,
            piecewise_rules: vec![PiecewiseRule {
                feature: "map".into(),
                breakpoints: vec![55.0, 65.0],
                values: vec![-1.0, -0.3, 0.0],
            }],
        };
        let t = build_rewards(&m, &members, &spec).unwrap();
        assert_eq!(t.values[0], vec![Some(0.0), Some(0.0)]);
        let mut unknown = spec.clone();
        unknown.piecewise_rules[0].feature = "urine".into();
        assert!(matches!(
            build_rewards(&m, &members, &unknown),
            Err(PlanningError::UnknownFeature(_))
        ));
    }

    #[test]
    fn self_loop_geometric_series() {
        let m = mdp(1, 1, &[(0, 0, 0, 5)]);
        let s = value_iteration(&m, &table(vec![vec![Some(2.0)]]), &PlanningConfig::default()).unwrap();
        assert!((s.values[0] - 100.0).abs() < 1e-6);
        assert!(s.residual < 1e-8);
    }

    #[test]
    fn one_step_dominance() {
        let m = mdp(1, 2, &[(0, 0, 1, 1), (0, 1, 2, 1)]);
        let r = build_rewards(
            &m,
            &ClusterMembers {
                feature_names: vec![],
                members: vec![vec![]],
            },
            &RewardSpec::simple(RewardKind::Terminal),
        )
        .unwrap();
        let s = value_iteration(&m, &r, &PlanningConfig::default()).unwrap();
        assert_eq!(s.policy[0], Some(ActionId(0)));
        assert_eq!(s.values[0], 1.0);
    }

    #[test]
    fn ties_pick_lowest_action_and_invalid_are_skipped() {
        let mut m = mdp(1, 3, &[(0, 0, 1, 1), (0, 1, 1, 5), (0, 2, 1, 5)]);
        m.min_action_count = 2;
        let s = value_iteration(&m, &table(vec![vec![Some(9.0), Some(1.0), Some(1.0)]]), &PlanningConfig::default()).unwrap();
        assert_eq!(s.policy[0], Some(ActionId(1)));
        assert_eq!(s.q[0][0], None);
    }

    #[test]
    fn no_valid_action_is_terminal() {
        let m = mdp(2, 1, &[(0, 0, 1, 1)]);
        let s = value_iteration(&m, &table(vec![vec![Some(1.0)], vec![None]]), &PlanningConfig::default()).unwrap();
        assert_eq!(s.values, vec![1.0, 0.0]);
        assert_eq!(s.policy[1], None);
    }

    #[test]
    fn missing_reward_and_non_convergence() {
        let m = mdp(1, 1, &[(0, 0, 0, 1)]);
        assert!(matches!(
            value_iteration(&m, &table(vec![vec![None]]), &PlanningConfig::default()),
            Err(PlanningError::MissingReward { .. })
        ));
        let cfg = PlanningConfig {
            gamma: 1.0,
            max_iterations: 50,
            ..Default::default()
        };
        assert!(matches!(
            value_iteration(&m, &table(vec![vec![Some(1.0)]]), &cfg),
            Err(PlanningError::NoConvergence { .. })
        ));
    }

    #[test]
    fn comparison_agreement() {
        let m = mdp(2, 2, &[(0, 0, 2, 3), (0, 1, 2, 1), (1, 1, 2, 4)]);
        let s = value_iteration(&m, &table(vec![vec![Some(1.0), Some(0.0)], vec![None, Some(1.0)]]), &PlanningConfig::default()).unwrap();
        let cmp = compare_policies(&m, &[s]);
        assert_eq!(cmp.agreement, vec![1.0]);
        let mut buf = Vec::new();
        cmp.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "cluster_id,behavior_dist,r_action");
        assert_eq!(text.lines().nth(1).unwrap(), "1,0.75;0.25,0");
    }
}
