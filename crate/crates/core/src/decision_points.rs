//! Decision-point identification.
//!
//! An action is *valid* at a state when at least `n` of the state's kernel
//! neighbors (similarity `>= δ`, the state itself excluded) took it; a state
//! with two or more valid actions is a *decision point*.

use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ActionId, Dataset};
use crate::kernel::KernelModel;
use crate::metrics::macro_ovr_auc;
use crate::neighbors::{radius_from_delta, NeighborIndex};

#[derive(Debug, Error)]
pub enum DpError {
    #[error("similarity threshold {0} outside (0, 1]")]
    Delta(f64),

    #[error("min_neighbors must be >= 1")]
    MinNeighbors,

    #[error("dimension mismatch: index has {index}, query has {query}")]
    Dimension { index: usize, query: usize },

    #[error("empty tuning grid")]
    EmptyGrid,

    #[error("empty validation sample")]
    EmptySample,

    #[error("malformed annotation row {row}: {msg}")]
    Malformed { row: usize, msg: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpConfig {
    pub delta: f64,
    pub min_neighbors: usize,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            delta: 0.95,
            min_neighbors: 20,
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<(), DpError> {
        radius_from_delta(self.delta).ok_or(DpError::Delta(self.delta))?;
        if self.min_neighbors == 0 {
            return Err(DpError::MinNeighbors);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpAnnotation {
    pub neighbor_count: usize,
    /// Neighbors per action. Not persisted in the CSV form; empty after
    /// [`read_annotations_csv`].
    pub action_support: Vec<usize>,
    pub valid_actions: Vec<ActionId>,
    pub is_dp: bool,
}

impl DpAnnotation {
    /// Apply the validity rule to per-action neighbor counts.
    pub fn from_support(action_support: Vec<usize>, min_neighbors: usize) -> Self {
        let valid_actions: Vec<ActionId> = action_support
            .iter()
            .enumerate()
            .filter(|(_, &c)| c >= min_neighbors)
            .map(|(a, _)| ActionId(a))
            .collect();
        Self {
            neighbor_count: action_support.iter().sum(),
            is_dp: valid_actions.len() >= 2,
            action_support,
            valid_actions,
        }
    }
}

/// Per-trajectory, per-step annotations aligned with a [`Dataset`].
pub type Annotations = Vec<Vec<DpAnnotation>>;

/// Checked neighbor query: ids in `index` with `k(query, x) >= delta`.
pub fn find_neighbors(
    query: &[f64],
    index: &NeighborIndex,
    delta: f64,
    exclude: Option<usize>,
) -> Result<Vec<usize>, DpError> {
    radius_from_delta(delta).ok_or(DpError::Delta(delta))?;
    if query.len() != index.dim() {
        return Err(DpError::Dimension {
            index: index.dim(),
            query: query.len(),
        });
    }
    Ok(index.within(query, delta, exclude))
}

/// Neighbor index over a reference dataset's standardized states, with the
/// action taken at each indexed step.
#[derive(Debug, Clone)]
pub struct DpIndex {
    pub index: NeighborIndex,
    pub actions: Vec<ActionId>,
    pub n_actions: usize,
}

impl DpIndex {
    pub fn build(reference: &Dataset, model: &KernelModel) -> Self {
        let points: Vec<Vec<f64>> = reference.steps().map(|s| model.standardize(&s.state)).collect();
        Self {
            index: NeighborIndex::build(points, model.weights()),
            actions: reference.actions(),
            n_actions: reference.n_actions(),
        }
    }

    pub fn from_parts(points: Vec<Vec<f64>>, actions: Vec<ActionId>, n_actions: usize, weights: Vec<f64>) -> Self {
        Self {
            index: NeighborIndex::build(points, weights),
            actions,
            n_actions,
        }
    }

    fn support(&self, neighbors: &[usize]) -> Vec<usize> {
        let mut s = vec![0; self.n_actions];
        for &i in neighbors {
            s[self.actions[i].0] += 1;
        }
        s
    }

    /// Annotate every indexed point against the rest of the index.
    pub fn annotate_self(&self, cfg: &DpConfig) -> Result<Vec<DpAnnotation>, DpError> {
        cfg.validate()?;
        Ok((0..self.index.len())
            .into_par_iter()
            .map(|i| {
                let nb = self.index.within(self.index.point(i), cfg.delta, Some(i));
                DpAnnotation::from_support(self.support(&nb), cfg.min_neighbors)
            })
            .collect())
    }

    /// Annotate external (standardized) query states against the index.
    pub fn annotate_queries(&self, queries: &[Vec<f64>], cfg: &DpConfig) -> Result<Vec<DpAnnotation>, DpError> {
        cfg.validate()?;
        if let Some(q) = queries.iter().find(|q| q.len() != self.index.dim()) {
            return Err(DpError::Dimension {
                index: self.index.dim(),
                query: q.len(),
            });
        }
        Ok(queries
            .par_iter()
            .map(|q| {
                let nb = self.index.within(q, cfg.delta, None);
                DpAnnotation::from_support(self.support(&nb), cfg.min_neighbors)
            })
            .collect())
    }
}

fn nest(dataset: &Dataset, flat: Vec<DpAnnotation>) -> Annotations {
    let mut it = flat.into_iter();
    dataset
        .trajectories
        .iter()
        .map(|t| it.by_ref().take(t.steps.len()).collect())
        .collect()
}

/// Annotate every step of `dataset` against the other steps of the same
/// dataset.
pub fn annotate_dataset(dataset: &Dataset, model: &KernelModel, cfg: &DpConfig) -> Result<Annotations, DpError> {
    let idx = DpIndex::build(dataset, model);
    Ok(nest(dataset, idx.annotate_self(cfg)?))
}

/// Annotate the steps of `query` using `index` (built on other data) as the
/// neighbor pool.
pub fn annotate_against(
    index: &DpIndex,
    query: &Dataset,
    model: &KernelModel,
    cfg: &DpConfig,
) -> Result<Annotations, DpError> {
    let q: Vec<Vec<f64>> = query.steps().map(|s| model.standardize(&s.state)).collect();
    Ok(nest(query, index.annotate_queries(&q, cfg)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    pub grid: Vec<(f64, usize)>,
    pub rounds: usize,
    pub sample_size: usize,
    pub selection: Selection,
    pub seed: u64,
}

/// How the winning grid cell is chosen from the averaged scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Highest mean AUC; ties keep the first grid cell.
    #[default]
    Argmax,
    /// Largest δ, then largest n, among cells whose mean AUC is within one
    /// standard error (across rounds) of the best.
    OneSe,
}

impl Default for TuneConfig {
    fn default() -> Self {
        let deltas = [0.5, 0.7, 0.8, 0.9, 0.95, 0.99];
        let ns = [5, 10, 20, 50];
        Self {
            grid: deltas
                .iter()
                .flat_map(|&d| ns.iter().map(move |&n| (d, n)))
                .collect(),
            rounds: 5,
            sample_size: 5000,
            selection: Selection::Argmax,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneScore {
    pub delta: f64,
    pub n: usize,
    /// Mean over rounds.
    pub auc: f64,
    /// Standard error of the mean over rounds; 0 with a single round.
    pub auc_se: f64,
}

/// AUC of neighborhood action distributions for one `(δ, n)` cell.
///
/// `supports[i]` holds the per-action neighbor counts of sample point `i`.
/// Points with fewer than `n` neighbors are predicted with `prior`. When no
/// point reaches `n` neighbors the cell scores 0.5.
pub fn neighborhood_auc(supports: &[Vec<usize>], labels: &[usize], n: usize, prior: &[f64]) -> (f64, bool) {
    let mut any = false;
    let probs: Vec<Vec<f64>> = supports
        .iter()
        .map(|s| {
            let total: usize = s.iter().sum();
            if total >= n && total > 0 {
                any = true;
                s.iter().map(|&c| c as f64 / total as f64).collect()
            } else {
                prior.to_vec()
            }
        })
        .collect();
    if !any {
        return (0.5, false);
    }
    (macro_ovr_auc(&probs, labels, prior.len()).unwrap_or(0.5), true)
}

/// Grid-search `(δ, n)` by the AUC of neighborhood-predicted actions on
/// resampled validation points, averaged over rounds; the winner is picked
/// by [`select_cell`].
pub fn tune_dp_config(
    index: &DpIndex,
    validation: &[(Vec<f64>, ActionId)],
    tune: &TuneConfig,
) -> Result<(DpConfig, Vec<TuneScore>), DpError> {
    if tune.grid.is_empty() {
        return Err(DpError::EmptyGrid);
    }
    if validation.is_empty() {
        return Err(DpError::EmptySample);
    }
    for &(delta, n) in &tune.grid {
        DpConfig { delta, min_neighbors: n }.validate()?;
    }
    if let Some((q, _)) = validation.iter().find(|(q, _)| q.len() != index.index.dim()) {
        return Err(DpError::Dimension {
            index: index.index.dim(),
            query: q.len(),
        });
    }
    let mut prior = vec![0.0; index.n_actions];
    for a in &index.actions {
        prior[a.0] += 1.0;
    }
    let total: f64 = prior.iter().sum();
    prior.iter_mut().for_each(|p| *p /= total.max(1.0));

    let mut deltas: Vec<f64> = tune.grid.iter().map(|g| g.0).collect();
    deltas.sort_by(f64::total_cmp);
    deltas.dedup();

    let rounds = tune.rounds.max(1);
    let mut per_round = vec![Vec::with_capacity(rounds); tune.grid.len()];
    let mut empty_cells = vec![0usize; tune.grid.len()];
    for round in 0..rounds {
        let mut rng = ChaCha8Rng::seed_from_u64(tune.seed);
        rng.set_stream(round as u64);
        let m = tune.sample_size.min(validation.len()).max(1);
        let mut picked = sample(&mut rng, validation.len(), m).into_vec();
        picked.sort_unstable();
        let labels: Vec<usize> = picked.iter().map(|&i| validation[i].1 .0).collect();
        for &delta in &deltas {
            let supports: Vec<Vec<usize>> = picked
                .par_iter()
                .map(|&i| index.support(&index.index.within(&validation[i].0, delta, None)))
                .collect();
            for (c, &(d, n)) in tune.grid.iter().enumerate() {
                if d != delta {
                    continue;
                }
                let (auc, scored) = neighborhood_auc(&supports, &labels, n, &prior);
                if !scored {
                    empty_cells[c] += 1;
                }
                per_round[c].push(auc);
            }
        }
    }
    let scores: Vec<TuneScore> = tune
        .grid
        .iter()
        .zip(&per_round)
        .map(|(&(delta, n), v)| {
            let r = v.len() as f64;
            let mean = v.iter().sum::<f64>() / r;
            let se = if v.len() > 1 {
                (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (r - 1.0) / r).sqrt()
            } else {
                0.0
            };
            TuneScore {
                delta,
                n,
                auc: mean,
                auc_se: se,
            }
        })
        .collect();
    for (c, &e) in empty_cells.iter().enumerate() {
        if e > 0 {
            log::warn!(
                "tuning cell delta={} n={}: no sampled point had enough neighbors in {e} round(s); scored 0.5",
                tune.grid[c].0,
                tune.grid[c].1
            );
        }
    }
    let best = select_cell(&scores, tune.selection);
    Ok((
        DpConfig {
            delta: scores[best].delta,
            min_neighbors: scores[best].n,
        },
        scores,
    ))
}

/// Index of the winning cell under `selection`.
pub fn select_cell(scores: &[TuneScore], selection: Selection) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.auc > scores[best].auc {
            best = i;
        }
    }
    if selection == Selection::Argmax {
        return best;
    }
    let floor = scores[best].auc - scores[best].auc_se;
    let mut pick = best;
    for (i, s) in scores.iter().enumerate() {
        let p = &scores[pick];
        if s.auc >= floor && (s.delta > p.delta || (s.delta == p.delta && s.n > p.n)) {
            pick = i;
        }
    }
    pick
}

pub fn write_scores_csv<W: Write>(scores: &[TuneScore], writer: W) -> Result<(), DpError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["delta", "n", "auc"])?;
    for s in scores {
        w.write_record([s.delta.to_string(), s.n.to_string(), s.auc.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn join_actions(v: &[ActionId]) -> String {
    v.iter().map(|a| a.0.to_string()).collect::<Vec<_>>().join(";")
}

pub fn write_annotations_csv<W: Write>(dataset: &Dataset, ann: &Annotations, writer: W) -> Result<(), DpError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["trajectory_id", "t", "neighbor_count", "valid_actions", "is_dp"])?;
    for (tr, a) in dataset.trajectories.iter().zip(ann) {
        for (s, a) in tr.steps.iter().zip(a) {
            w.write_record([
                tr.id.clone(),
                s.t.to_string(),
                a.neighbor_count.to_string(),
                join_actions(&a.valid_actions),
                a.is_dp.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read annotations written by [`write_annotations_csv`], checking
/// alignment with `dataset`.
pub fn read_annotations_csv<R: Read>(dataset: &Dataset, reader: R) -> Result<Annotations, DpError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut records = rdr.records();
    let mut out = Vec::with_capacity(dataset.trajectories.len());
    let mut row = 0;
    for tr in &dataset.trajectories {
        let mut v = Vec::with_capacity(tr.steps.len());
        for s in &tr.steps {
            row += 1;
            let rec = records.next().ok_or_else(|| DpError::Malformed {
                row,
                msg: "file ends early".into(),
            })??;
            let bad = |msg: String| DpError::Malformed { row, msg };
            if rec.len() != 5 || rec[0] != *tr.id || rec[1].parse::<u32>().ok() != Some(s.t) {
                return Err(bad(format!("expected step ({}, {})", tr.id, s.t)));
            }
            let neighbor_count = rec[2].parse().map_err(|e| bad(format!("{e}")))?;
            let valid_actions = if rec[3].is_empty() {
                Vec::new()
            } else {
                rec[3]
                    .split(';')
                    .map(|x| x.parse().map(ActionId))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| bad(format!("{e}")))?
            };
            let is_dp = rec[4].parse().map_err(|e| bad(format!("{e}")))?;
            v.push(DpAnnotation {
                neighbor_count,
                action_support: Vec::new(),
                valid_actions,
                is_dp,
            });
        }
        out.push(v);
    }
    if records.next().is_some() {
        return Err(DpError::Malformed {
            row: row + 1,
            msg: "extra rows".into(),
        });
    }
    Ok(out)
}
