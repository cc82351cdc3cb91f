//! Trajectory compression and the maximum-likelihood region-level MDP.
//!
//! A labelled trajectory becomes a walk over decision regions: every run of
//! consecutive decision points in one region collapses to a single state,
//! the actions of that run are summarized into one action, and the walk ends
//! in the trajectory's outcome.

use std::fmt;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::data::{ActionId, ActionSet, Dataset, Outcome};

#[derive(Debug, Error)]
pub enum CompressionError {
    #[error("cannot summarize an empty action list")]
    EmptyActions,

    #[error("combined treatment mask {0:#b} is not an action")]
    UnmappedMask(u32),

    #[error("trajectory {id}: {labels} labels for {steps} steps")]
    LengthMismatch { id: String, labels: usize, steps: usize },

    #[error("{0} label lists for {1} trajectories")]
    CountMismatch(usize, usize),

    #[error("no compressed trajectories")]
    Empty,

    #[error("trajectory {id}: {msg}")]
    Malformed { id: String, msg: String },

    #[error("json error at line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Compressed state: a region id or a terminal outcome.
///
/// Serialized as the bare region id, or as `"alive"` / `"dead"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CState {
    Cluster(u32),
    Alive,
    Dead,
}

impl CState {
    pub fn is_terminal(self) -> bool {
        !matches!(self, CState::Cluster(_))
    }
}

impl From<Outcome> for CState {
    fn from(o: Outcome) -> Self {
        match o {
            Outcome::Alive => CState::Alive,
            Outcome::Dead => CState::Dead,
        }
    }
}

impl fmt::Display for CState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CState::Cluster(c) => write!(f, "{c}"),
            CState::Alive => f.write_str("alive"),
            CState::Dead => f.write_str("dead"),
        }
    }
}

impl Serialize for CState {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            CState::Cluster(c) => s.serialize_u32(*c),
            CState::Alive => s.serialize_str("alive"),
            CState::Dead => s.serialize_str("dead"),
        }
    }
}

impl<'de> Deserialize<'de> for CState {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Id(u32),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Id(0) => Err(serde::de::Error::custom("cluster id 0 is reserved for non-decision points")),
            Raw::Id(c) => Ok(CState::Cluster(c)),
            Raw::Name(n) if n == "alive" => Ok(CState::Alive),
            Raw::Name(n) if n == "dead" => Ok(CState::Dead),
            Raw::Name(n) => Err(serde::de::Error::custom(format!("unknown state `{n}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryFn {
    /// Union of treatment bitmasks.
    #[default]
    BitOr,
    First,
    /// Most frequent action; ties to the lowest id.
    Majority,
}

pub fn summarize_actions(actions: &[ActionId], h: SummaryFn, set: &ActionSet) -> Result<ActionId, CompressionError> {
    let first = *actions.first().ok_or(CompressionError::EmptyActions)?;
    match h {
        SummaryFn::First => Ok(first),
        SummaryFn::BitOr => {
            let mask = actions.iter().fold(0u32, |m, &a| m | set.bitmask(a));
            set.from_bitmask(mask).ok_or(CompressionError::UnmappedMask(mask))
        }
        SummaryFn::Majority => {
            let n = actions.iter().map(|a| a.0).max().unwrap() + 1;
            let mut counts = vec![0usize; n];
            for a in actions {
                counts[a.0] += 1;
            }
            let best = counts.iter().copied().max().unwrap();
            Ok(ActionId(counts.iter().position(|&c| c == best).unwrap()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedTrajectory {
    pub id: String,
    pub xbar: Vec<CState>,
    pub abar: Vec<ActionId>,
    pub outcome: Outcome,
}

impl CompressedTrajectory {
    /// `(x̄_t, ā_t, x̄_{t+1})` triples.
    pub fn transitions(&self) -> impl Iterator<Item = (u32, ActionId, CState)> + '_ {
        self.abar.iter().enumerate().map(|(t, &a)| {
            let CState::Cluster(c) = self.xbar[t] else {
                unreachable!("only the last compressed state is terminal")
            };
            (c, a, self.xbar[t + 1])
        })
    }

    fn check(&self) -> Result<(), CompressionError> {
        let bad = |msg: &str| {
            Err(CompressionError::Malformed {
                id: self.id.clone(),
                msg: msg.to_string(),
            })
        };
        let Some((&last, body)) = self.xbar.split_last() else {
            return bad("empty state list");
        };
        if last != CState::from(self.outcome) {
            return bad("last state must be the outcome");
        }
        if body.iter().any(|s| s.is_terminal()) {
            return bad("terminal state before the end");
        }
        if self.abar.len() + 1 != self.xbar.len() {
            return bad("need exactly one action per non-terminal state");
        }
        Ok(())
    }
}

/// Compress one trajectory given its per-step region labels (0 = not a
/// decision point).
pub fn compress_trajectory(
    id: &str,
    actions: &[ActionId],
    labels: &[u32],
    outcome: Outcome,
    h: SummaryFn,
    set: &ActionSet,
) -> Result<CompressedTrajectory, CompressionError> {
    if labels.len() != actions.len() {
        return Err(CompressionError::LengthMismatch {
            id: id.to_string(),
            labels: labels.len(),
            steps: actions.len(),
        });
    }
    let mut xbar = Vec::new();
    let mut abar = Vec::new();
    let mut buffer = Vec::new();
    let mut prev = 0u32;
    for (l, (&c, &a)) in labels.iter().zip(actions).enumerate() {
        if c > 0 {
            if c != prev {
                xbar.push(CState::Cluster(c));
            }
            buffer.push(a);
            if labels.get(l + 1) != Some(&c) {
                abar.push(summarize_actions(&buffer, h, set)?);
                buffer.clear();
            }
        }
        prev = c;
    }
    xbar.push(outcome.into());
    Ok(CompressedTrajectory {
        id: id.to_string(),
        xbar,
        abar,
        outcome,
    })
}

pub fn compress_dataset(
    dataset: &Dataset,
    labels: &[Vec<u32>],
    h: SummaryFn,
) -> Result<Vec<CompressedTrajectory>, CompressionError> {
    if labels.len() != dataset.trajectories.len() {
        return Err(CompressionError::CountMismatch(labels.len(), dataset.trajectories.len()));
    }
    dataset
        .trajectories
        .par_iter()
        .zip(labels.par_iter())
        .map(|(t, l)| {
            let actions: Vec<ActionId> = t.steps.iter().map(|s| s.action).collect();
            compress_trajectory(&t.id, &actions, l, t.outcome, h, &dataset.schema.actions)
        })
        .collect()
}

/// Count tables of the region-level MDP.
///
/// Successor index `k` is cluster `k + 1` for `k < K`, then Alive (`K`)
/// and Dead (`K + 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedMdp {
    pub n_clusters: usize,
    pub n_actions: usize,
    pub min_action_count: usize,
    /// `[K][A]` occurrences of each summarized action per cluster.
    pub action_counts: Vec<Vec<usize>>,
    /// `[K][A][K + 2]`.
    pub transition_counts: Vec<Vec<Vec<usize>>>,
    /// `[K][A]` occurrences whose trajectory ended Dead.
    pub dead_counts: Vec<Vec<usize>>,
    pub n_trajectories: usize,
    /// Trajectories without any decision point, excluded from the counts.
    pub n_empty: usize,
}

impl CompressedMdp {
    pub fn n_states(&self) -> usize {
        self.n_clusters + 2
    }

    pub fn state_index(&self, s: CState) -> usize {
        match s {
            CState::Cluster(c) => c as usize - 1,
            CState::Alive => self.n_clusters,
            CState::Dead => self.n_clusters + 1,
        }
    }

    pub fn state_at(&self, idx: usize) -> CState {
        match idx.cmp(&self.n_clusters) {
            std::cmp::Ordering::Less => CState::Cluster(idx as u32 + 1),
            std::cmp::Ordering::Equal => CState::Alive,
            std::cmp::Ordering::Greater => CState::Dead,
        }
    }

    pub fn visits(&self, cluster: u32) -> usize {
        self.action_counts[cluster as usize - 1].iter().sum()
    }

    /// Behavior probability of `a` in `cluster`; 0 for unvisited clusters.
    pub fn behavior_prob(&self, cluster: u32, a: ActionId) -> f64 {
        let n = self.visits(cluster);
        if n == 0 || a.0 >= self.n_actions {
            0.0
        } else {
            self.action_counts[cluster as usize - 1][a.0] as f64 / n as f64
        }
    }

    pub fn behavior_dist(&self, cluster: u32) -> Vec<f64> {
        (0..self.n_actions).map(|a| self.behavior_prob(cluster, ActionId(a))).collect()
    }

    /// Most frequent behavior action; ties to the lowest id.
    pub fn behavior_mode(&self, cluster: u32) -> Option<ActionId> {
        let row = &self.action_counts[cluster as usize - 1];
        let best = *row.iter().max()?;
        (best > 0).then(|| ActionId(row.iter().position(|&c| c == best).unwrap()))
    }

    /// Successor distribution over all `K + 2` states; `None` when the pair
    /// was never observed.
    pub fn transition_probs(&self, cluster: u32, a: ActionId) -> Option<Vec<f64>> {
        let c = cluster as usize - 1;
        let n = self.action_counts[c][a.0];
        (n > 0).then(|| {
            self.transition_counts[c][a.0]
                .iter()
                .map(|&k| k as f64 / n as f64)
                .collect()
        })
    }

    pub fn is_valid(&self, cluster: u32, a: ActionId) -> bool {
        let n = self.action_counts[cluster as usize - 1][a.0];
        n > 0 && n >= self.min_action_count
    }

    pub fn valid_actions(&self, cluster: u32) -> Vec<ActionId> {
        (0..self.n_actions)
            .map(ActionId)
            .filter(|&a| self.is_valid(cluster, a))
            .collect()
    }

    pub fn mortality_fraction(&self, cluster: u32, a: ActionId) -> Option<f64> {
        let c = cluster as usize - 1;
        let n = self.action_counts[c][a.0];
        (n > 0).then(|| self.dead_counts[c][a.0] as f64 / n as f64)
    }
}

/// Maximum-likelihood count tables from compressed trajectories.
pub fn estimate_mdp(
    ctrajs: &[CompressedTrajectory],
    n_clusters: usize,
    n_actions: usize,
    min_action_count: usize,
) -> Result<CompressedMdp, CompressionError> {
    if ctrajs.is_empty() {
        return Err(CompressionError::Empty);
    }
    let mut mdp = CompressedMdp {
        n_clusters,
        n_actions,
        min_action_count,
        action_counts: vec![vec![0; n_actions]; n_clusters],
        transition_counts: vec![vec![vec![0; n_clusters + 2]; n_actions]; n_clusters],
        dead_counts: vec![vec![0; n_actions]; n_clusters],
        n_trajectories: ctrajs.len(),
        n_empty: 0,
    };
    for ct in ctrajs {
        ct.check()?;
        if ct.abar.is_empty() {
            mdp.n_empty += 1;
            continue;
        }
        for (c, a, next) in ct.transitions() {
            let bad = |msg: String| CompressionError::Malformed {
                id: ct.id.clone(),
                msg,
            };
            if c as usize > n_clusters {
                return Err(bad(format!("cluster {c} outside 1..={n_clusters}")));
            }
            if let CState::Cluster(n) = next {
                if n as usize > n_clusters {
                    return Err(bad(format!("cluster {n} outside 1..={n_clusters}")));
                }
            }
            if a.0 >= n_actions {
                return Err(bad(format!("action {a} outside 0..{n_actions}")));
            }
            let ci = c as usize - 1;
            let ni = mdp.state_index(next);
            mdp.action_counts[ci][a.0] += 1;
            mdp.transition_counts[ci][a.0][ni] += 1;
            if ct.outcome == Outcome::Dead {
                mdp.dead_counts[ci][a.0] += 1;
            }
        }
    }
    if mdp.n_empty > 0 {
        log::info!(
            "{} of {} trajectories contain no decision point and were excluded",
            mdp.n_empty,
            mdp.n_trajectories
        );
    }
    Ok(mdp)
}

pub fn write_compressed_jsonl<W: Write>(ctrajs: &[CompressedTrajectory], mut w: W) -> Result<(), CompressionError> {
    for ct in ctrajs {
        serde_json::to_writer(&mut w, ct).map_err(|e| CompressionError::Json { line: 0, source: e })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_compressed_jsonl<R: BufRead>(r: R) -> Result<Vec<CompressedTrajectory>, CompressionError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ct: CompressedTrajectory =
            serde_json::from_str(&line).map_err(|e| CompressionError::Json { line: i + 1, source: e })?;
        ct.check()?;
        out.push(ct);
    }
    Ok(out)
}
