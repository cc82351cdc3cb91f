//! Synthetic trajectories with planted decision regions.
//!
//! States have two informative coordinates plus pure-noise coordinates.
//! Trajectories drift across the informative plane. Inside a planted region
//! the behavior policy picks one of the region's actions at random for the
//! whole visit; elsewhere it follows a deterministic consensus rule. Each
//! visit shifts the log-odds of death by the effect of the action taken, so
//! every region has a known best action.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ActionId, ActionSet, Dataset, Outcome, Schema, Step, Trajectory};
use crate::metrics::adjusted_rand_index;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("truth does not align with data: {0}")]
    Alignment(String),

    #[error("malformed truth row {row}: {msg}")]
    Malformed { row: usize, msg: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRegion {
    /// Center in the informative plane.
    pub center: [f64; 2],
    pub radius: f64,
    pub actions: Vec<ActionId>,
    /// Log-odds shift of death per visit, aligned with `actions`.
    pub effects: Vec<f64>,
}

impl PlantedRegion {
    pub fn contains(&self, p: &[f64]) -> bool {
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        dx * dx + dy * dy <= self.radius * self.radius
    }

    /// Action with the lowest effect; ties to the lowest id.
    pub fn optimal_action(&self) -> ActionId {
        let mut best = (self.actions[0], self.effects[0]);
        for (&a, &e) in self.actions.iter().zip(&self.effects).skip(1) {
            if e < best.1 || (e == best.1 && a < best.0) {
                best = (a, e);
            }
        }
        best.0
    }
}

/// Outside every region, the action of the nearest zone center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusZone {
    pub center: [f64; 2],
    pub action: ActionId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_noise: usize,
    pub actions: ActionSet,
    pub regions: Vec<PlantedRegion>,
    pub consensus: Vec<ConsensusZone>,
    pub default_action: ActionId,
    /// Chance that a region visit draws its action from the region's set;
    /// otherwise the consensus action is kept.
    pub mix_prob: f64,
    /// Informative-plane step shared by all actions.
    pub base_drift: [f64; 2],
    /// Extra informative-plane step per action.
    pub action_drift: Vec<[f64; 2]>,
    pub noise_std: f64,
    /// Start box in the informative plane: `[x_lo, x_hi, y_lo, y_hi]`.
    pub start_box: [f64; 4],
    /// Informative coordinates must stay within `[-bound, bound]`.
    pub bound: f64,
    pub base_logit: f64,
    pub horizon: usize,
    pub n_trajectories: usize,
    pub seed: u64,
}

fn treatments() -> ActionSet {
    ActionSet {
        count: 4,
        names: Some(vec!["none".into(), "fluids".into(), "vaso".into(), "both".into()]),
        bitmasks: Some(vec![0b00, 0b01, 0b10, 0b11]),
    }
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::reference(0)
    }
}

impl SynthSpec {
    /// Two planted regions stacked along y, 2,000 trajectories of 30 steps.
    pub fn reference(seed: u64) -> Self {
        Self {
            n_noise: 2,
            actions: treatments(),
            regions: vec![
                PlantedRegion {
                    center: [0.0, -1.0],
                    radius: 0.7,
                    actions: vec![ActionId(0), ActionId(1)],
                    effects: vec![0.8, -0.8],
                },
                PlantedRegion {
                    center: [0.0, 1.0],
                    radius: 0.7,
                    actions: vec![ActionId(0), ActionId(2)],
                    effects: vec![0.8, -0.8],
                },
            ],
            consensus: Vec::new(),
            default_action: ActionId(0),
            mix_prob: 1.0,
            base_drift: [0.2, 0.0],
            action_drift: vec![[0.0, 0.0]; 4],
            noise_std: 0.05,
            start_box: [-3.5, -2.5, -2.0, 2.0],
            bound: 6.0,
            base_logit: -1.0,
            horizon: 30,
            n_trajectories: 2000,
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        2 + self.n_noise
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut f = vec!["x".to_string(), "y".to_string()];
        f.extend((0..self.n_noise).map(|i| format!("noise_{i}")));
        f
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let mut bad = Vec::new();
        let na = self.actions.count;
        let in_range = |a: ActionId| a.0 < na;
        if na == 0 {
            bad.push("action set is empty".to_string());
        }
        for (i, r) in self.regions.iter().enumerate() {
            if !(r.radius > 0.0) {
                bad.push(format!("regions[{i}].radius must be positive"));
            }
            if r.center.iter().any(|c| c.abs() + r.radius > self.bound) {
                bad.push(format!("regions[{i}] extends outside the state bound"));
            }
            if r.actions.is_empty() || r.actions.len() != r.effects.len() {
                bad.push(format!("regions[{i}] needs one effect per action"));
            }
            if !r.actions.iter().all(|&a| in_range(a)) {
                bad.push(format!("regions[{i}] uses an unknown action"));
            }
        }
        if !in_range(self.default_action) || !self.consensus.iter().all(|z| in_range(z.action)) {
            bad.push("consensus action outside the action set".to_string());
        }
        if self.action_drift.len() != na {
            bad.push("action_drift needs one entry per action".to_string());
        }
        if !(0.0..=1.0).contains(&self.mix_prob) {
            bad.push("mix_prob must be in [0, 1]".to_string());
        }
        if !(self.noise_std >= 0.0) {
            bad.push("noise_std must be non-negative".to_string());
        }
        if self.start_box[0] > self.start_box[1] || self.start_box[2] > self.start_box[3] {
            bad.push("start_box bounds are reversed".to_string());
        }
        if self.horizon == 0 || self.n_trajectories == 0 {
            bad.push("horizon and n_trajectories must be positive".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(SynthError::Spec(bad.join("; ")))
        }
    }

    /// Whether any region can produce decision points.
    pub fn is_feasible(&self) -> bool {
        self.mix_prob > 0.0 && self.regions.iter().any(|r| r.actions.len() >= 2)
    }

    fn consensus_action(&self, p: &[f64]) -> ActionId {
        let mut best: Option<(ActionId, f64)> = None;
        for z in &self.consensus {
            let d = (p[0] - z.center[0]).powi(2) + (p[1] - z.center[1]).powi(2);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((z.action, d));
            }
        }
        best.map_or(self.default_action, |(a, _)| a)
    }

    fn trajectory_id_width(&self) -> usize {
        self.n_trajectories.saturating_sub(1).to_string().len()
    }

    fn region_of(&self, p: &[f64]) -> Option<usize> {
        self.regions.iter().position(|r| r.contains(p))
    }
}

/// Ground truth aligned with a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub trajectory_ids: Vec<String>,
    /// Per trajectory and step: inside a region that mixes actions.
    pub oracle_dp: Vec<Vec<bool>>,
    /// Per trajectory and step: 1-based planted region, 0 outside.
    pub region_id: Vec<Vec<u32>>,
    /// Best action per planted region.
    pub optimal_actions: Vec<ActionId>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn generate(spec: &SynthSpec) -> Result<(Dataset, SynthTruth), SynthError> {
    spec.validate()?;
    if !spec.is_feasible() {
        log::warn!("synthetic spec has no region with mixed actions; no decision points are planted");
    }
    let dp_regions: Vec<bool> = spec
        .regions
        .iter()
        .map(|r| r.actions.len() >= 2 && spec.mix_prob > 0.0)
        .collect();
    let noise = Normal::new(0.0, spec.noise_std.max(0.0)).expect("finite std");
    let width = spec.trajectory_id_width();
    let rows: Vec<(Trajectory, Vec<bool>, Vec<u32>)> = (0..spec.n_trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let sb = spec.start_box;
            let mut pos = [rng.random_range(sb[0]..=sb[1]), rng.random_range(sb[2]..=sb[3])];
            let mut steps = Vec::with_capacity(spec.horizon);
            let mut dp = Vec::with_capacity(spec.horizon);
            let mut reg = Vec::with_capacity(spec.horizon);
            let mut logit = spec.base_logit;
            let mut visit: Option<(usize, ActionId)> = None;
            for t in 0..spec.horizon {
                let region = spec.region_of(&pos);
                let action = match region {
                    Some(r) => match visit {
                        Some((vr, a)) if vr == r => a,
                        _ => {
                            let reg = &spec.regions[r];
                            let a = if rng.random::<f64>() < spec.mix_prob {
                                reg.actions[rng.random_range(0..reg.actions.len())]
                            } else {
                                spec.consensus_action(&pos)
                            };
                            if let Some(k) = reg.actions.iter().position(|&x| x == a) {
                                logit += reg.effects[k];
                            }
                            visit = Some((r, a));
                            a
                        }
                    },
                    None => {
                        visit = None;
                        spec.consensus_action(&pos)
                    }
                };
                let mut state = pos.to_vec();
                state.extend((0..spec.n_noise).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)));
                steps.push(Step {
                    t: t as u32,
                    state,
                    action,
                });
                dp.push(region.is_some_and(|r| dp_regions[r]));
                reg.push(region.map_or(0, |r| r as u32 + 1));
                let d = spec.action_drift[action.0];
                for k in 0..2 {
                    let step = spec.base_drift[k] + d[k] + noise.sample(&mut rng);
                    pos[k] = (pos[k] + step).clamp(-spec.bound, spec.bound);
                }
            }
            let outcome = if rng.random::<f64>() < sigmoid(logit) {
                Outcome::Dead
            } else {
                Outcome::Alive
            };
            let traj = Trajectory {
                id: format!("s{i:0width$}"),
                steps,
                outcome,
            };
            (traj, dp, reg)
        })
        .collect();

    let mut trajectories = Vec::with_capacity(rows.len());
    let mut oracle_dp = Vec::with_capacity(rows.len());
    let mut region_id = Vec::with_capacity(rows.len());
    for (t, d, r) in rows {
        trajectories.push(t);
        oracle_dp.push(d);
        region_id.push(r);
    }
    let truth = SynthTruth {
        trajectory_ids: trajectories.iter().map(|t| t.id.clone()).collect(),
        oracle_dp,
        region_id,
        optimal_actions: spec.regions.iter().map(PlantedRegion::optimal_action).collect(),
    };
    let dataset = Dataset {
        schema: Schema {
            features: spec.feature_names(),
            actions: spec.actions.clone(),
        },
        trajectories,
    };
    Ok((dataset, truth))
}

impl SynthTruth {
    /// Keep only the trajectories present in `dataset`, in its order.
    pub fn restrict_to(&self, dataset: &Dataset) -> Result<SynthTruth, SynthError> {
        let index: std::collections::HashMap<&str, usize> = self
            .trajectory_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut out = SynthTruth {
            trajectory_ids: Vec::new(),
            oracle_dp: Vec::new(),
            region_id: Vec::new(),
            optimal_actions: self.optimal_actions.clone(),
        };
        for t in &dataset.trajectories {
            let &i = index
                .get(t.id.as_str())
                .ok_or_else(|| SynthError::Alignment(format!("trajectory {} has no truth", t.id)))?;
            if self.oracle_dp[i].len() != t.steps.len() {
                return Err(SynthError::Alignment(format!("trajectory {} length differs", t.id)));
            }
            out.trajectory_ids.push(t.id.clone());
            out.oracle_dp.push(self.oracle_dp[i].clone());
            out.region_id.push(self.region_id[i].clone());
        }
        Ok(out)
    }

    /// CSV `trajectory_id,t,oracle_dp,region_id,optimal_action`; the last
    /// column is empty outside regions.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SynthError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["trajectory_id", "t", "oracle_dp", "region_id", "optimal_action"])?;
        for (k, id) in self.trajectory_ids.iter().enumerate() {
            for (t, (&dp, &r)) in self.oracle_dp[k].iter().zip(&self.region_id[k]).enumerate() {
                let opt = if r == 0 {
                    String::new()
                } else {
                    self.optimal_actions[r as usize - 1].to_string()
                };
                w.write_record([id.clone(), t.to_string(), (dp as u8).to_string(), r.to_string(), opt])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, SynthError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut out = SynthTruth {
            trajectory_ids: Vec::new(),
            oracle_dp: Vec::new(),
            region_id: Vec::new(),
            optimal_actions: Vec::new(),
        };
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = row + 1;
            let bad = |msg: &str| SynthError::Malformed {
                row,
                msg: msg.to_string(),
            };
            if rec.len() != 5 {
                return Err(bad("expected 5 columns"));
            }
            let id = &rec[0];
            let t: usize = rec[1].parse().map_err(|_| bad("bad t"))?;
            let dp = match &rec[2] {
                "1" => true,
                "0" => false,
                _ => return Err(bad("oracle_dp must be 0 or 1")),
            };
            let r: u32 = rec[3].parse().map_err(|_| bad("bad region_id"))?;
            if out.trajectory_ids.last().map(String::as_str) != Some(id) {
                out.trajectory_ids.push(id.to_string());
                out.oracle_dp.push(Vec::new());
                out.region_id.push(Vec::new());
            }
            let k = out.trajectory_ids.len() - 1;
            if t != out.oracle_dp[k].len() {
                return Err(bad("steps out of order"));
            }
            out.oracle_dp[k].push(dp);
            out.region_id[k].push(r);
            if r > 0 {
                let a = ActionId(rec[4].parse().map_err(|_| bad("bad optimal_action"))?);
                let ri = r as usize - 1;
                if out.optimal_actions.len() <= ri {
                    out.optimal_actions.resize(ri + 1, ActionId(usize::MAX));
                }
                if out.optimal_actions[ri] == ActionId(usize::MAX) {
                    out.optimal_actions[ri] = a;
                } else if out.optimal_actions[ri] != a {
                    return Err(bad("conflicting optimal action for region"));
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryScore {
    pub dp_precision: f64,
    pub dp_recall: f64,
    /// Adjusted Rand index of planted vs recovered regions on steps that
    /// are both true and detected decision points.
    pub region_ari: f64,
    /// Fraction of planted regions whose dominant recovered cluster is
    /// assigned the planted best action by the policy.
    pub optimal_action_fraction: f64,
    pub n_true: usize,
    pub n_detected: usize,
}

/// Compare detected decision points, region labels and a per-cluster
/// policy against the planted truth.
pub fn score_recovery(
    truth: &SynthTruth,
    detected: &[Vec<bool>],
    labels: &[Vec<u32>],
    policy: &[Option<ActionId>],
) -> Result<RecoveryScore, SynthError> {
    if detected.len() != truth.oracle_dp.len() || labels.len() != truth.oracle_dp.len() {
        return Err(SynthError::Alignment("trajectory counts differ".into()));
    }
    let (mut tp, mut n_true, mut n_det) = (0usize, 0usize, 0usize);
    let mut planted = Vec::new();
    let mut found = Vec::new();
    let n_regions = truth.optimal_actions.len();
    let mut votes: Vec<std::collections::BTreeMap<u32, usize>> = vec![Default::default(); n_regions];
    for k in 0..truth.oracle_dp.len() {
        let (t, d, l, r) = (&truth.oracle_dp[k], &detected[k], &labels[k], &truth.region_id[k]);
        if d.len() != t.len() || l.len() != t.len() {
            return Err(SynthError::Alignment(format!("trajectory {k} length differs")));
        }
        for i in 0..t.len() {
            n_true += t[i] as usize;
            n_det += d[i] as usize;
            if t[i] && d[i] {
                tp += 1;
                if l[i] > 0 {
                    planted.push(r[i]);
                    found.push(l[i]);
                    *votes[r[i] as usize - 1].entry(l[i]).or_default() += 1;
                }
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let hits = votes
        .iter()
        .zip(&truth.optimal_actions)
        .filter(|(v, &opt)| {
            let best = v.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)));
            best.is_some_and(|(&c, _)| policy.get(c as usize - 1).copied().flatten() == Some(opt))
        })
        .count();
    Ok(RecoveryScore {
        dp_precision: ratio(tp, n_det),
        dp_recall: ratio(tp, n_true),
        region_ari: adjusted_rand_index(&planted, &found),
        optimal_action_fraction: ratio(hits, n_regions),
        n_true,
        n_detected: n_det,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            n_trajectories: 50,
            seed,
            ..SynthSpec::reference(seed)
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (a, ta) = generate(&small(5)).unwrap();
        let (b, tb) = generate(&small(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = generate(&small(6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shapes_and_truth_alignment() {
        let (d, t) = generate(&small(1)).unwrap();
        assert_eq!(d.trajectories.len(), 50);
        assert!(d.trajectories.iter().all(|t| t.steps.len() == 30));
        assert_eq!(d.dim(), 4);
        assert_eq!(t.optimal_actions, vec![ActionId(1), ActionId(2)]);
        let spec = small(1);
        for (traj, (dp, reg)) in d.trajectories.iter().zip(t.oracle_dp.iter().zip(&t.region_id)) {
            for (s, (&dp, &r)) in traj.steps.iter().zip(dp.iter().zip(reg)) {
                assert_eq!(r > 0, dp);
                if r == 0 {
                    assert_eq!(s.action, ActionId(0));
                } else {
                    assert!(spec.regions[r as usize - 1].actions.contains(&s.action));
                }
            }
        }
        assert!(t.oracle_dp.iter().flatten().any(|&b| b));
    }

    #[test]
    fn actions_are_held_for_a_visit() {
        let (d, t) = generate(&small(2)).unwrap();
        for (traj, reg) in d.trajectories.iter().zip(&t.region_id) {
            for i in 1..reg.len() {
                if reg[i] > 0 && reg[i] == reg[i - 1] {
                    assert_eq!(traj.steps[i].action, traj.steps[i - 1].action);
                }
            }
        }
    }

    #[test]
    fn no_mixing_means_no_decision_points() {
        let spec = SynthSpec {
            mix_prob: 0.0,
            noise_std: 0.0,
            ..small(3)
        };
        let (d, t) = generate(&spec).unwrap();
        assert!(t.oracle_dp.iter().flatten().all(|&b| !b));
        assert!(d.steps().all(|s| s.action == ActionId(0)));
        assert!(!spec.is_feasible());
    }

    #[test]
    fn validation() {
        let mut s = small(0);
        s.regions[0].radius = 0.0;
        s.regions[1].center = [10.0, 0.0];
        let msg = s.validate().unwrap_err().to_string();
        assert!(msg.contains("regions[0].radius") && msg.contains("regions[1] extends"));
    }

    #[test]
    fn truth_csv_roundtrip() {
        let (d, t) = generate(&small(4)).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"trajectory_id,t,oracle_dp,region_id,optimal_action\n"));
        let back = SynthTruth::read_csv(&buf[..]).unwrap();
        assert_eq!(back.oracle_dp, t.oracle_dp);
        assert_eq!(back.region_id, t.region_id);
        assert_eq!(back.optimal_actions, t.optimal_actions);
        let sub = Dataset {
            schema: d.schema.clone(),
            trajectories: vec![d.trajectories[3].clone()],
        };
        let r = t.restrict_to(&sub).unwrap();
        assert_eq!(r.region_id, vec![t.region_id[3].clone()]);
    }

    #[test]
    fn perfect_recovery_scores_one() {
        let (_, t) = generate(&small(7)).unwrap();
        let policy = vec![Some(ActionId(1)), Some(ActionId(2))];
        let s = score_recovery(&t, &t.oracle_dp, &t.region_id, &policy).unwrap();
        assert_eq!(
            (s.dp_precision, s.dp_recall, s.region_ari, s.optimal_action_fraction),
            (1.0, 1.0, 1.0, 1.0)
        );
        let wrong = vec![Some(ActionId(0)), Some(ActionId(2))];
        let s = score_recovery(&t, &t.oracle_dp, &t.region_id, &wrong).unwrap();
        assert_eq!(s.optimal_action_fraction, 0.5);
    }
}
