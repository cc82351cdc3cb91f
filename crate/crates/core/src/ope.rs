//! Weighted importance sampling on compressed trajectories.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compression::{CState, CompressedMdp, CompressedTrajectory};
use crate::data::ActionId;
use crate::planning::{RewardTable, SolvedPolicy};

#[derive(Debug, Error)]
pub enum OpeError {
    #[error("invalid evaluation config: {0}")]
    Config(String),

    #[error("no overlap between the evaluation policy and behavior data")]
    NoOverlap,

    #[error("no trajectories to evaluate")]
    Empty,

    #[error("trajectory {id}: no reward for cluster {cluster}, action {action}")]
    MissingReward { id: String, cluster: u32, action: ActionId },

    #[error("trajectory {id}: cluster {cluster} outside the model")]
    UnknownCluster { id: String, cluster: u32 },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpeConfig {
    pub clip_percentile: f64,
    pub gamma: f64,
    pub eval_softening: f64,
}

impl Default for OpeConfig {
    fn default() -> Self {
        Self {
            clip_percentile: 95.0,
            gamma: 0.98,
            eval_softening: 0.0,
        }
    }
}

impl OpeConfig {
    pub fn validate(&self) -> Result<(), OpeError> {
        let mut bad = Vec::new();
        if !(self.clip_percentile > 0.0 && self.clip_percentile <= 100.0) {
            bad.push("clip_percentile must be in (0, 100]");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            bad.push("gamma must be in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.eval_softening) {
            bad.push("eval_softening must be in [0, 1)");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(OpeError::Config(bad.join("; ")))
        }
    }
}

/// Policy being evaluated, indexed by cluster id − 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalPolicy {
    /// `None` where the policy has no action; the behavior policy is
    /// followed there.
    Deterministic(Vec<Option<ActionId>>),
    /// `[K][A]` action probabilities.
    Stochastic(Vec<Vec<f64>>),
}

impl From<&SolvedPolicy> for EvalPolicy {
    fn from(s: &SolvedPolicy) -> Self {
        EvalPolicy::Deterministic(s.policy.clone())
    }
}

impl EvalPolicy {
    /// The behavior policy itself, as a stochastic policy.
    pub fn behavior(mdp: &CompressedMdp) -> Self {
        EvalPolicy::Stochastic((1..=mdp.n_clusters as u32).map(|c| mdp.behavior_dist(c)).collect())
    }

    /// `π_e(a | cluster)` after ε-softening toward `behavior`.
    fn prob(&self, cluster: u32, a: ActionId, behavior: f64, eps: f64) -> f64 {
        let c = cluster as usize - 1;
        let p = match self {
            EvalPolicy::Deterministic(p) => match p.get(c).copied().flatten() {
                Some(chosen) => (chosen == a) as u8 as f64,
                None => return behavior,
            },
            EvalPolicy::Stochastic(p) => p.get(c).and_then(|r| r.get(a.0)).copied().unwrap_or(0.0),
        };
        (1.0 - eps) * p + eps * behavior
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weight {
    pub rho: f64,
    /// A step's action was never taken in that cluster by the behavior
    /// policy.
    pub unseen: bool,
}

pub fn trajectory_weight(ct: &CompressedTrajectory, pi_e: &EvalPolicy, mdp: &CompressedMdp, eps: f64) -> Weight {
    let mut rho = 1.0;
    for (c, a, _) in ct.transitions() {
        if c as usize > mdp.n_clusters {
            return Weight { rho: 0.0, unseen: true };
        }
        let b = mdp.behavior_prob(c, a);
        if b == 0.0 {
            return Weight { rho: 0.0, unseen: true };
        }
        rho *= pi_e.prob(c, a, b, eps) / b;
    }
    Weight { rho, unseen: false }
}

pub fn discounted_return(ct: &CompressedTrajectory, rewards: &RewardTable, gamma: f64) -> Result<f64, OpeError> {
    let mut g = 0.0;
    let mut disc = 1.0;
    for (t, &a) in ct.abar.iter().enumerate() {
        let CState::Cluster(c) = ct.xbar[t] else {
            unreachable!("actions follow cluster states only")
        };
        let r = rewards.get(c, a).ok_or_else(|| OpeError::MissingReward {
            id: ct.id.clone(),
            cluster: c,
            action: a,
        })?;
        g += disc * r;
        disc *= gamma;
    }
    Ok(g)
}

/// Nearest-rank percentile: the smallest value with at least `p`% of the
/// sample at or below it. Panics on an empty sample.
pub fn nearest_rank(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

/// Neumaier-compensated sum.
fn ksum(it: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in it {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    s + c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeReport {
    pub policy: String,
    pub wis_estimate: f64,
    pub ess: f64,
    pub n_trajectories: usize,
    pub n_zero_weight: usize,
    /// Trajectories zeroed because they contain an action the behavior
    /// policy never took in that cluster.
    pub n_unseen: usize,
    pub clip_value: f64,
}

impl OpeReport {
    pub fn zero_weight_fraction(&self) -> f64 {
        if self.n_trajectories == 0 {
            0.0
        } else {
            self.n_zero_weight as f64 / self.n_trajectories as f64
        }
    }
}

/// WIS from precomputed weights and returns; returns for zero-weight
/// trajectories are ignored.
pub fn wis_from_weights(weights: &[f64], returns: &[f64], clip_percentile: f64) -> Result<(f64, f64, f64), OpeError> {
    let positive: Vec<f64> = weights.iter().copied().filter(|&w| w > 0.0).collect();
    if positive.is_empty() {
        return Err(OpeError::NoOverlap);
    }
    let cap = nearest_rank(&positive, clip_percentile);
    let clipped: Vec<(f64, f64)> = weights
        .iter()
        .zip(returns)
        .filter(|(&w, _)| w > 0.0)
        .map(|(&w, &g)| (w.min(cap), g))
        .collect();
    let sw = ksum(clipped.iter().map(|&(w, _)| w));
    let swg = ksum(clipped.iter().map(|&(w, g)| w * g));
    let sw2 = ksum(clipped.iter().map(|&(w, _)| w * w));
    Ok((swg / sw, sw * sw / sw2, cap))
}

pub fn wis_evaluate(
    name: &str,
    ctrajs: &[CompressedTrajectory],
    pi_e: &EvalPolicy,
    mdp: &CompressedMdp,
    rewards: &RewardTable,
    cfg: &OpeConfig,
) -> Result<OpeReport, OpeError> {
    cfg.validate()?;
    if ctrajs.is_empty() {
        return Err(OpeError::Empty);
    }
    let mut weights = Vec::with_capacity(ctrajs.len());
    let mut returns = Vec::with_capacity(ctrajs.len());
    let mut n_unseen = 0;
    for ct in ctrajs {
        let w = trajectory_weight(ct, pi_e, mdp, cfg.eval_softening);
        n_unseen += w.unseen as usize;
        let g = if w.rho > 0.0 {
            discounted_return(ct, rewards, cfg.gamma)?
        } else {
            0.0
        };
        weights.push(w.rho);
        returns.push(g);
    }
    let (wis, ess, cap) = wis_from_weights(&weights, &returns, cfg.clip_percentile)?;
    Ok(OpeReport {
        policy: name.to_string(),
        wis_estimate: wis,
        ess,
        n_trajectories: ctrajs.len(),
        n_zero_weight: weights.iter().filter(|&&w| w == 0.0).count(),
        n_unseen,
        clip_value: cap,
    })
}

/// Mean return of the logged trajectories (every weight 1). Trajectories
/// with an undefined reward are skipped and counted in `n_zero_weight`.
pub fn behavior_report(ctrajs: &[CompressedTrajectory], rewards: &RewardTable, gamma: f64) -> Result<OpeReport, OpeError> {
    if ctrajs.is_empty() {
        return Err(OpeError::Empty);
    }
    let mut skipped = 0;
    let mut returns = Vec::with_capacity(ctrajs.len());
    for ct in ctrajs {
        match discounted_return(ct, rewards, gamma) {
            Ok(g) => returns.push(g),
            Err(OpeError::MissingReward { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if returns.is_empty() {
        return Err(OpeError::NoOverlap);
    }
    let n = returns.len() as f64;
    Ok(OpeReport {
        policy: "behavior".into(),
        wis_estimate: ksum(returns.iter().copied()) / n,
        ess: n,
        n_trajectories: ctrajs.len(),
        n_zero_weight: skipped,
        n_unseen: 0,
        clip_value: 1.0,
    })
}

pub fn write_reports_csv<W: Write>(reports: &[OpeReport], writer: W) -> Result<(), OpeError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["policy", "wis", "ess", "n", "zero_weight_fraction", "clip_value"])?;
    for r in reports {
        w.write_record([
            r.policy.clone(),
            r.wis_estimate.to_string(),
            r.ess.to_string(),
            r.n_trajectories.to_string(),
            r.zero_weight_fraction().to_string(),
            r.clip_value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Outcome;

    fn mdp_one(counts: &[usize]) -> CompressedMdp {
        let a = counts.len();
        CompressedMdp {
            n_clusters: 1,
            n_actions: a,
            min_action_count: 1,
            action_counts: vec![counts.to_vec()],
            transition_counts: vec![counts.iter().map(|&n| vec![0, n, 0]).collect()],
            dead_counts: vec![vec![0; a]],
            n_trajectories: 1,
            n_empty: 0,
        }
    }

    fn one_step(a: usize) -> CompressedTrajectory {
        CompressedTrajectory {
            id: "t".into(),
            xbar: vec![CState::Cluster(1), CState::Alive],
            abar: vec![ActionId(a)],
            outcome: Outcome::Alive,
        }
    }

    #[test]
    fn weight_examples() {
        let mdp = mdp_one(&[1, 3]);
        let pi = EvalPolicy::Deterministic(vec![Some(ActionId(0))]);
        assert_eq!(trajectory_weight(&one_step(0), &pi, &mdp, 0.0).rho, 4.0);
        assert_eq!(trajectory_weight(&one_step(1), &pi, &mdp, 0.0).rho, 0.0);
        let b = EvalPolicy::behavior(&mdp);
        assert_eq!(trajectory_weight(&one_step(1), &b, &mdp, 0.0).rho, 1.0);
        // softened: (0.5 * 1 + 0.5 * 0.25) / 0.25
        assert_eq!(trajectory_weight(&one_step(0), &pi, &mdp, 0.5).rho, 2.5);
        let unseen = trajectory_weight(&one_step(1), &pi, &mdp_one(&[4, 0]), 0.0);
        assert!(unseen.unseen && unseen.rho == 0.0);
    }

    #[test]
    fn returns() {
        let r = RewardTable {
            name: "r".into(),
            values: vec![vec![Some(1.0)]],
        };
        assert_eq!(discounted_return(&one_step(0), &r, 0.98).unwrap(), 1.0);
        let two = CompressedTrajectory {
            id: "t".into(),
            xbar: vec![CState::Cluster(1), CState::Cluster(1), CState::Dead],
            abar: vec![ActionId(0), ActionId(0)],
            outcome: Outcome::Dead,
        };
        assert!((discounted_return(&two, &r, 0.98).unwrap() - 1.98).abs() < 1e-15);
        let empty = CompressedTrajectory {
            id: "t".into(),
            xbar: vec![CState::Alive],
            abar: vec![],
            outcome: Outcome::Alive,
        };
        assert_eq!(discounted_return(&empty, &r, 0.98).unwrap(), 0.0);
        assert!(discounted_return(&one_step(1), &r, 0.98).is_err());
    }

    #[test]
    fn two_trajectory_formula() {
        let (wis, ess, _) = wis_from_weights(&[1.0, 3.0], &[0.0, 1.0], 100.0).unwrap();
        assert_eq!(wis, 0.75);
        assert!((ess - 1.6).abs() < 1e-15);
    }

    #[test]
    fn clipping_by_nearest_rank() {
        // 75th percentile of {1,1,1,100}: rank ceil(3) = 3 -> 1
        let (wis, ess, cap) = wis_from_weights(&[1.0, 1.0, 1.0, 100.0], &[0.0, 0.0, 0.0, 1.0], 75.0).unwrap();
        assert_eq!(cap, 1.0);
        assert_eq!(wis, 0.25);
        assert_eq!(ess, 4.0);
        // at 95 the rank is ceil(3.8) = 4, which keeps the outlier
        assert_eq!(nearest_rank(&[1.0, 1.0, 1.0, 100.0], 95.0), 100.0);
        assert_eq!(nearest_rank(&[5.0, 1.0, 3.0], 50.0), 3.0);
        assert!(matches!(wis_from_weights(&[0.0, 0.0], &[1.0, 1.0], 95.0), Err(OpeError::NoOverlap)));
    }

    #[test]
    fn csv_columns() {
        let r = OpeReport {
            policy: "terminal".into(),
            wis_estimate: 0.5,
            ess: 10.0,
            n_trajectories: 20,
            n_zero_weight: 5,
            n_unseen: 0,
            clip_value: 2.0,
        };
        let mut buf = Vec::new();
        write_reports_csv(&[r], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "policy,wis,ess,n,zero_weight_fraction,clip_value\nterminal,0.5,10,20,0.25,2\n"
        );
    }
}
