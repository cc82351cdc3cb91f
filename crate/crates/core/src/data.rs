//! Trajectory datasets: domain types, CSV/JSONL ingestion and
//! trajectory-level train/test splitting.
//!
//! A dataset is a list of trajectories, each an ordered run of
//! `(state, action)` steps sharing one terminal outcome. States are dense
//! real vectors whose columns are named by the [`Schema`].

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense state vector; its length is the dataset dimension.
pub type StateVector = Vec<f64>;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("no trajectories")]
    Empty,

    #[error("malformed header: {0}")]
    Header(String),

    #[error("malformed row {row}: {msg}")]
    Malformed { row: usize, msg: String },

    #[error("non-finite feature '{feature}' at row {row}")]
    NonFinite { row: usize, feature: String },

    #[error("unknown action id {action} at row {row} (action count {count})")]
    UnknownAction { row: usize, action: usize, count: usize },

    #[error("duplicate (trajectory_id, t) = ({id}, {t}) at row {row}")]
    DuplicateStep { row: usize, id: String, t: u32 },

    #[error("gap in time index at row {row}")]
    TimeGap { row: usize },

    #[error("inconsistent outcome for trajectory {id} at row {row}")]
    InconsistentOutcome { row: usize, id: String },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("need at least 2 trajectories to split, got {0}")]
    TooFewTrajectories(usize),

    #[error("train fraction {0} must lie in (0, 1)")]
    BadFraction(f64),

    #[error("split of {n} trajectories at fraction {fraction} leaves one side empty")]
    EmptySide { n: usize, fraction: f64 },

    #[error("unknown feature '{0}'")]
    UnknownFeature(String),
}

/// Index into the discrete action set.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct ActionId(pub usize);

impl ActionId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Terminal mortality outcome of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Alive,
    Dead,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Alive => "alive",
            Outcome::Dead => "dead",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "alive" => Some(Outcome::Alive),
            "dead" => Some(Outcome::Dead),
            _ => None,
        }
    }
}

/// The discrete action set, optionally decomposed into treatment bitmasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSet {
    #[serde(rename = "action_count")]
    pub count: usize,
    #[serde(default, rename = "action_names", skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
    /// `bitmasks[id]` is the set of binary treatment indicators of action `id`.
    #[serde(default, rename = "action_bitmasks", skip_serializing_if = "Option::is_none")]
    pub bitmasks: Option<Vec<u32>>,
}

impl ActionSet {
    pub fn plain(count: usize) -> Self {
        Self {
            count,
            names: None,
            bitmasks: None,
        }
    }

    /// Bitmask of `a`; without an explicit table the id itself is the mask.
    pub fn bitmask(&self, a: ActionId) -> u32 {
        match &self.bitmasks {
            Some(masks) => masks[a.0],
            None => a.0 as u32,
        }
    }

    /// Inverse of [`ActionSet::bitmask`].
    pub fn from_bitmask(&self, mask: u32) -> Option<ActionId> {
        match &self.bitmasks {
            Some(masks) => masks.iter().position(|&m| m == mask).map(ActionId),
            None => ((mask as usize) < self.count).then_some(ActionId(mask as usize)),
        }
    }

    pub fn name(&self, a: ActionId) -> String {
        self.names
            .as_ref()
            .and_then(|n| n.get(a.0).cloned())
            .unwrap_or_else(|| a.0.to_string())
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.count == 0 {
            return Err(DataError::Schema("action_count must be positive".into()));
        }
        if let Some(names) = &self.names {
            if names.len() != self.count {
                return Err(DataError::Schema(format!(
                    "{} action names for {} actions",
                    names.len(),
                    self.count
                )));
            }
        }
        if let Some(masks) = &self.bitmasks {
            if masks.len() != self.count {
                return Err(DataError::Schema(format!(
                    "{} action bitmasks for {} actions",
                    masks.len(),
                    self.count
                )));
            }
            for (i, m) in masks.iter().enumerate() {
                if masks[..i].contains(m) {
                    return Err(DataError::Schema(format!("duplicate action bitmask {m}")));
                }
            }
        }
        Ok(())
    }
}

/// Ordered feature names plus the action-set definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub features: Vec<String>,
    #[serde(flatten)]
    pub actions: ActionSet,
}

impl Schema {
    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f == name)
    }

    pub fn from_json_file(path: &Path) -> Result<Self, DataError> {
        let schema: Schema = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        schema.actions.validate()?;
        Ok(schema)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub t: u32,
    pub state: StateVector,
    pub action: ActionId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub steps: Vec<Step>,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.schema.dim()
    }

    pub fn n_actions(&self) -> usize {
        self.schema.actions.count
    }

    pub fn n_steps(&self) -> usize {
        self.trajectories.iter().map(|t| t.steps.len()).sum()
    }

    /// All steps in trajectory order.
    pub fn steps(&self) -> impl Iterator<Item = &Step> + '_ {
        self.trajectories.iter().flat_map(|t| t.steps.iter())
    }

    pub fn states(&self) -> Vec<StateVector> {
        self.steps().map(|s| s.state.clone()).collect()
    }

    pub fn actions(&self) -> Vec<ActionId> {
        self.steps().map(|s| s.action).collect()
    }

    /// Restrict states to the named feature columns, in the given order.
    pub fn select_features(&self, names: &[String]) -> Result<Dataset, DataError> {
        let idx = names
            .iter()
            .map(|n| {
                self.schema
                    .feature_index(n)
                    .ok_or_else(|| DataError::UnknownFeature(n.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let trajectories = self
            .trajectories
            .iter()
            .map(|tr| Trajectory {
                id: tr.id.clone(),
                outcome: tr.outcome,
                steps: tr
                    .steps
                    .iter()
                    .map(|s| Step {
                        t: s.t,
                        action: s.action,
                        state: idx.iter().map(|&i| s.state[i]).collect(),
                    })
                    .collect(),
            })
            .collect();
        Ok(Dataset {
            schema: Schema {
                features: names.to_vec(),
                actions: self.schema.actions.clone(),
            },
            trajectories,
        })
    }
}

/// Load a dataset; `.jsonl` files use the JSONL contract, anything else CSV.
pub fn load_dataset(path: &Path, schema: Option<&Schema>) -> Result<Dataset, DataError> {
    let file = File::open(path)?;
    let is_jsonl = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("jsonl"));
    if is_jsonl {
        read_jsonl(BufReader::new(file), schema)
    } else {
        read_csv(BufReader::new(file), schema)
    }
}

struct RawRow {
    row: usize,
    id: String,
    t: u32,
    state: Vec<f64>,
    action: usize,
    outcome: Outcome,
}

pub fn read_csv<R: Read>(reader: R, schema: Option<&Schema>) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 5
        || cols[0] != "trajectory_id"
        || cols[1] != "t"
        || cols[cols.len() - 2] != "action"
        || cols[cols.len() - 1] != "outcome"
    {
        return Err(DataError::Header(
            "expected trajectory_id,t,<features...>,action,outcome".into(),
        ));
    }
    let features: Vec<String> = cols[2..cols.len() - 2].iter().map(|s| s.to_string()).collect();
    let d = features.len();

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        if rec.len() != d + 4 {
            return Err(DataError::Malformed {
                row,
                msg: format!("expected {} fields, got {}", d + 4, rec.len()),
            });
        }
        let t = rec[1].parse::<u32>().map_err(|e| DataError::Malformed {
            row,
            msg: format!("bad t '{}': {e}", &rec[1]),
        })?;
        let mut state = Vec::with_capacity(d);
        for j in 0..d {
            let v = rec[2 + j].parse::<f64>().map_err(|e| DataError::Malformed {
                row,
                msg: format!("bad value '{}' for {}: {e}", &rec[2 + j], features[j]),
            })?;
            state.push(v);
        }
        let action = rec[d + 2].parse::<usize>().map_err(|e| DataError::Malformed {
            row,
            msg: format!("bad action '{}': {e}", &rec[d + 2]),
        })?;
        let outcome = Outcome::parse(&rec[d + 3]).ok_or_else(|| DataError::Malformed {
            row,
            msg: format!("bad outcome '{}'", &rec[d + 3]),
        })?;
        rows.push(RawRow {
            row,
            id: rec[0].to_string(),
            t,
            state,
            action,
            outcome,
        });
    }
    assemble(features, rows, schema)
}

#[derive(Serialize, Deserialize)]
struct JsonStep {
    t: u32,
    x: Vec<f64>,
    a: usize,
}

#[derive(Serialize, Deserialize)]
struct JsonTrajectory {
    id: String,
    outcome: String,
    steps: Vec<JsonStep>,
}

pub fn read_jsonl<R: BufRead>(reader: R, schema: Option<&Schema>) -> Result<Dataset, DataError> {
    let mut rows = Vec::new();
    let mut dim = None;
    for (i, line) in reader.lines().enumerate() {
        let row = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let tr: JsonTrajectory = serde_json::from_str(&line).map_err(|e| DataError::Malformed {
            row,
            msg: e.to_string(),
        })?;
        let outcome = Outcome::parse(&tr.outcome).ok_or_else(|| DataError::Malformed {
            row,
            msg: format!("bad outcome '{}'", tr.outcome),
        })?;
        if tr.steps.is_empty() {
            return Err(DataError::Malformed {
                row,
                msg: "trajectory has no steps".into(),
            });
        }
        for s in tr.steps {
            let d = *dim.get_or_insert(s.x.len());
            if s.x.len() != d {
                return Err(DataError::Malformed {
                    row,
                    msg: format!("state has {} entries, expected {d}", s.x.len()),
                });
            }
            rows.push(RawRow {
                row,
                id: tr.id.clone(),
                t: s.t,
                state: s.x,
                action: s.a,
                outcome,
            });
        }
    }
    let features = match (schema, dim) {
        (Some(s), _) => s.features.clone(),
        (None, Some(d)) => (0..d).map(|j| format!("f{j}")).collect(),
        (None, None) => return Err(DataError::Empty),
    };
    assemble(features, rows, schema)
}

fn assemble(
    features: Vec<String>,
    rows: Vec<RawRow>,
    schema: Option<&Schema>,
) -> Result<Dataset, DataError> {
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    let schema = match schema {
        Some(s) => {
            s.actions.validate()?;
            if s.features != features {
                return Err(DataError::Schema(format!(
                    "file features {:?} do not match schema features {:?}",
                    features, s.features
                )));
            }
            s.clone()
        }
        None => {
            let max_action = rows.iter().map(|r| r.action).max().unwrap_or(0);
            Schema {
                features,
                actions: ActionSet::plain(max_action + 1),
            }
        }
    };
    let d = schema.dim();
    let count = schema.actions.count;

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<RawRow>> = HashMap::new();
    for r in rows {
        if r.state.len() != d {
            return Err(DataError::Malformed {
                row: r.row,
                msg: format!("state has {} entries, expected {d}", r.state.len()),
            });
        }
        if let Some(j) = r.state.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                row: r.row,
                feature: schema.features[j].clone(),
            });
        }
        if r.action >= count {
            return Err(DataError::UnknownAction {
                row: r.row,
                action: r.action,
                count,
            });
        }
        if !groups.contains_key(&r.id) {
            order.push(r.id.clone());
        }
        groups.entry(r.id.clone()).or_default().push(r);
    }

    let mut trajectories = Vec::with_capacity(order.len());
    for id in order {
        let mut rows = groups.remove(&id).unwrap_or_default();
        rows.sort_by_key(|r| (r.t, r.row));
        let outcome = rows[0].outcome;
        for (k, r) in rows.iter().enumerate() {
            if r.outcome != outcome {
                return Err(DataError::InconsistentOutcome { row: r.row, id });
            }
            if k > 0 {
                let prev = rows[k - 1].t;
                if r.t == prev {
                    return Err(DataError::DuplicateStep {
                        row: r.row,
                        id,
                        t: r.t,
                    });
                }
                if r.t != prev + 1 {
                    return Err(DataError::TimeGap { row: r.row });
                }
            }
        }
        let steps = rows
            .into_iter()
            .map(|r| Step {
                t: r.t,
                state: r.state,
                action: ActionId(r.action),
            })
            .collect();
        trajectories.push(Trajectory {
            id,
            steps,
            outcome,
        });
    }
    Ok(Dataset {
        schema,
        trajectories,
    })
}

pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["trajectory_id".to_string(), "t".to_string()];
    header.extend(dataset.schema.features.iter().cloned());
    header.push("action".into());
    header.push("outcome".into());
    w.write_record(&header)?;
    for tr in &dataset.trajectories {
        for s in &tr.steps {
            let mut rec = Vec::with_capacity(s.state.len() + 4);
            rec.push(tr.id.clone());
            rec.push(s.t.to_string());
            rec.extend(s.state.iter().map(|v| v.to_string()));
            rec.push(s.action.0.to_string());
            rec.push(tr.outcome.as_str().to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsonl<W: Write>(dataset: &Dataset, writer: W) -> Result<(), DataError> {
    let mut w = BufWriter::new(writer);
    for tr in &dataset.trajectories {
        let jt = JsonTrajectory {
            id: tr.id.clone(),
            outcome: tr.outcome.as_str().to_string(),
            steps: tr
                .steps
                .iter()
                .map(|s| JsonStep {
                    t: s.t,
                    x: s.state.clone(),
                    a: s.action.0,
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &jt)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Write a dataset to `path`, choosing the format by extension like [`load_dataset`].
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let file = File::create(path)?;
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("jsonl"))
    {
        write_jsonl(dataset, file)
    } else {
        write_csv(dataset, BufWriter::new(file))
    }
}

/// Split whole trajectories into train and test sets.
///
/// Train receives `round(train_fraction * n)` trajectories chosen by a
/// seeded shuffle; both halves keep the input order.
pub fn split_dataset(
    d: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    let n = d.trajectories.len();
    if n < 2 {
        return Err(DataError::TooFewTrajectories(n));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::BadFraction(train_fraction));
    }
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(DataError::EmptySide {
            n,
            fraction: train_fraction,
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_train = vec![false; n];
    for &i in &idx[..n_train] {
        in_train[i] = true;
    }
    let (mut train, mut test) = (Vec::with_capacity(n_train), Vec::with_capacity(n - n_train));
    for (tr, keep) in d.trajectories.iter().zip(in_train) {
        if keep {
            train.push(tr.clone());
        } else {
            test.push(tr.clone());
        }
    }
    Ok((
        Dataset {
            schema: d.schema.clone(),
            trajectories: train,
        },
        Dataset {
            schema: d.schema.clone(),
            trajectories: test,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Dataset, DataError> {
        read_csv(s.as_bytes(), None)
    }

    #[test]
    fn three_rows_one_trajectory() {
        let d = parse(
            "trajectory_id,t,map,urine,action,outcome\n\
             p1,0,60.5,20,0,alive\n\
             p1,1,62,25,1,alive\n\
             p1,2,66,30,3,alive\n",
        )
        .unwrap();
        assert_eq!(d.trajectories.len(), 1);
        assert_eq!(d.trajectories[0].steps.len(), 3);
        assert_eq!(d.trajectories[0].outcome, Outcome::Alive);
        assert_eq!(d.schema.features, vec!["map", "urine"]);
        assert_eq!(d.n_actions(), 4);
    }

    #[test]
    fn empty_file_has_no_trajectories() {
        let err = parse("trajectory_id,t,x,action,outcome\n").unwrap_err();
        assert_eq!(err.to_string(), "no trajectories");
        let err = read_jsonl("".as_bytes(), None).unwrap_err();
        assert!(matches!(err, DataError::Empty));
    }

    #[test]
    fn time_gap_is_reported_with_row() {
        let err = parse(
            "trajectory_id,t,x,action,outcome\n\
             a,0,1,0,dead\n\
             a,1,1,0,dead\n\
             a,3,1,0,dead\n",
        )
        .unwrap_err();
        assert_eq!(err.to_string(), "gap in time index at row 3");
    }

    #[test]
    fn rows_are_grouped_and_sorted() {
        let d = parse(
            "trajectory_id,t,x,action,outcome\n\
             b,1,2,0,dead\n\
             a,0,1,0,alive\n\
             b,0,1,1,dead\n",
        )
        .unwrap();
        assert_eq!(d.trajectories[0].id, "b");
        assert_eq!(d.trajectories[0].steps[0].t, 0);
        assert_eq!(d.trajectories[0].steps[0].action, ActionId(1));
        assert_eq!(d.trajectories[1].id, "a");
    }

    #[test]
    fn contract_violations() {
        let dup = parse("trajectory_id,t,x,action,outcome\na,0,1,0,alive\na,0,2,0,alive\n");
        assert!(matches!(dup, Err(DataError::DuplicateStep { row: 2, .. })));

        let nan = parse("trajectory_id,t,x,action,outcome\na,0,NaN,0,alive\n");
        assert!(matches!(nan, Err(DataError::NonFinite { row: 1, .. })));

        let inf = parse("trajectory_id,t,x,action,outcome\na,0,1,0,alive\na,1,inf,0,alive\n");
        assert!(matches!(inf, Err(DataError::NonFinite { row: 2, .. })));

        let schema = Schema {
            features: vec!["x".into()],
            actions: ActionSet::plain(2),
        };
        let unknown = read_csv(
            "trajectory_id,t,x,action,outcome\na,0,1,2,alive\n".as_bytes(),
            Some(&schema),
        );
        assert!(matches!(
            unknown,
            Err(DataError::UnknownAction { row: 1, action: 2, .. })
        ));

        let bad = parse("trajectory_id,t,x,action,outcome\na,0,abc,0,alive\n");
        assert!(matches!(bad, Err(DataError::Malformed { row: 1, .. })));

        let mixed = parse("trajectory_id,t,x,action,outcome\na,0,1,0,alive\na,1,1,0,dead\n");
        assert!(matches!(mixed, Err(DataError::InconsistentOutcome { row: 2, .. })));

        assert!(matches!(
            parse("id,t,x,action,outcome\na,0,1,0,alive\n"),
            Err(DataError::Header(_))
        ));
    }

    #[test]
    fn schema_feature_mismatch() {
        let schema = Schema {
            features: vec!["y".into()],
            actions: ActionSet::plain(2),
        };
        let r = read_csv(
            "trajectory_id,t,x,action,outcome\na,0,1,0,alive\n".as_bytes(),
            Some(&schema),
        );
        assert!(matches!(r, Err(DataError::Schema(_))));
    }

    #[test]
    fn bitmask_round_trip() {
        let set = ActionSet {
            count: 4,
            names: Some(vec!["none".into(), "fluids".into(), "vaso".into(), "both".into()]),
            bitmasks: Some(vec![0b00, 0b01, 0b10, 0b11]),
        };
        for a in 0..4 {
            assert_eq!(set.from_bitmask(set.bitmask(ActionId(a))), Some(ActionId(a)));
        }
        assert_eq!(set.from_bitmask(0b100), None);
        assert_eq!(ActionSet::plain(3).from_bitmask(3), None);
    }

    fn n_trajectories(n: usize) -> Dataset {
        Dataset {
            schema: Schema {
                features: vec!["x".into()],
                actions: ActionSet::plain(2),
            },
            trajectories: (0..n)
                .map(|i| Trajectory {
                    id: format!("t{i}"),
                    outcome: Outcome::Alive,
                    steps: vec![Step {
                        t: 0,
                        state: vec![i as f64],
                        action: ActionId(0),
                    }],
                })
                .collect(),
        }
    }

    #[test]
    fn split_75_25() {
        let d = n_trajectories(100);
        let (train, test) = split_dataset(&d, 0.75, 7).unwrap();
        assert_eq!(train.trajectories.len(), 75);
        assert_eq!(test.trajectories.len(), 25);
        let mut ids: Vec<&str> = train
            .trajectories
            .iter()
            .chain(test.trajectories.iter())
            .map(|t| t.id.as_str())
            .collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 100);

        let (train2, test2) = split_dataset(&d, 0.75, 7).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
    }

    #[test]
    fn split_smallest_and_errors() {
        let (a, b) = split_dataset(&n_trajectories(2), 0.5, 1).unwrap();
        assert_eq!((a.trajectories.len(), b.trajectories.len()), (1, 1));
        assert!(matches!(
            split_dataset(&n_trajectories(1), 0.5, 1),
            Err(DataError::TooFewTrajectories(1))
        ));
        assert!(matches!(
            split_dataset(&n_trajectories(4), 1.0, 1),
            Err(DataError::BadFraction(_))
        ));
        assert!(matches!(
            split_dataset(&n_trajectories(2), 0.1, 1),
            Err(DataError::EmptySide { .. })
        ));
    }

    #[test]
    fn select_features_reorders() {
        let d = parse("trajectory_id,t,a,b,c,action,outcome\nx,0,1,2,3,0,alive\n").unwrap();
        let s = d.select_features(&["c".into(), "a".into()]).unwrap();
        assert_eq!(s.trajectories[0].steps[0].state, vec![3.0, 1.0]);
        assert!(d.select_features(&["zz".into()]).is_err());
    }
}
