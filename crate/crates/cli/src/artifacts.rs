use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use decision_regions::data::{load_dataset, Dataset, Schema};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;

pub const DATA: &str = "data.csv";
pub const SCHEMA: &str = "schema.json";
pub const TRUTH: &str = "truth.csv";
pub const TRAIN: &str = "train.csv";
pub const TEST: &str = "test.csv";
pub const FEATURES: &str = "features.json";
pub const IMPORTANCES: &str = "importances.csv";
pub const KERNEL: &str = "kernel.json";
pub const DP_SCORES: &str = "dp_scores.csv";
pub const DP_CONFIG: &str = "dp_config.json";
pub const ANN_TRAIN: &str = "annotations_train.csv";
pub const ANN_TEST: &str = "annotations_test.csv";
pub const REGIONS: &str = "regions.json";
pub const REGION_DIAGNOSTICS: &str = "region_diagnostics.csv";
pub const LABELS_TRAIN: &str = "labels_train.csv";
pub const LABELS_TEST: &str = "labels_test.csv";
pub const COMPRESSED_TRAIN: &str = "compressed_train.jsonl";
pub const COMPRESSED_TEST: &str = "compressed_test.jsonl";
pub const MDP: &str = "mdp.json";
pub const REWARDS: &str = "rewards.json";
pub const POLICIES: &str = "policies.json";
pub const POLICY_COMPARISON: &str = "policy_comparison.csv";
pub const OPE_CSV: &str = "ope.csv";
pub const OPE_JSON: &str = "ope.json";
pub const RECOVERY: &str = "recovery.json";
pub const EFFECTIVE_CONFIG: &str = "config.effective.json";

/// Stage that writes each artifact.
fn producer(name: &str) -> &'static str {
    match name {
        DATA | TRUTH => "synth",
        SCHEMA | TRAIN | TEST => "split",
        FEATURES | IMPORTANCES => "select-features",
        KERNEL => "train-kernel",
        DP_SCORES | DP_CONFIG => "tune-dp",
        ANN_TRAIN | ANN_TEST => "find-dps",
        REGIONS | REGION_DIAGNOSTICS | LABELS_TRAIN | LABELS_TEST => "cluster",
        COMPRESSED_TRAIN | COMPRESSED_TEST | MDP => "compress",
        REWARDS | POLICIES | POLICY_COMPARISON => "solve",
        OPE_CSV | OPE_JSON => "evaluate",
        _ => "report",
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format_version: u32,
    kind: String,
    data: T,
}

/// The output directory and the files in it.
pub struct Store {
    pub dir: PathBuf,
}

impl Store {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).is_file()
    }

    /// Path of an upstream artifact, or an error naming the stage to run.
    pub fn require(&self, name: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if !p.is_file() {
            bail!(
                "missing artifact {} (run the `{}` stage first)",
                p.display(),
                producer(name)
            );
        }
        Ok(p)
    }

    pub fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let f = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        Ok(BufWriter::new(f))
    }

    pub fn open(&self, name: &str) -> Result<BufReader<File>> {
        let p = self.require(name)?;
        let f = File::open(&p).with_context(|| format!("opening {}", p.display()))?;
        Ok(BufReader::new(f))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, kind: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        let env = Envelope {
            format_version: FORMAT_VERSION,
            kind: kind.to_string(),
            data: value,
        };
        serde_json::to_writer_pretty(&mut w, &env)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str, kind: &str) -> Result<T> {
        let env: Envelope<T> = serde_json::from_reader(self.open(name)?)
            .with_context(|| format!("parsing {}", self.path(name).display()))?;
        if env.format_version != FORMAT_VERSION {
            bail!(
                "{} has format_version {}, expected {FORMAT_VERSION}",
                name,
                env.format_version
            );
        }
        if env.kind != kind {
            bail!("{} holds '{}', expected '{kind}'", name, env.kind);
        }
        Ok(env.data)
    }

    pub fn write_plain_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn schema(&self) -> Result<Schema> {
        Ok(Schema::from_json_file(&self.require(SCHEMA)?)?)
    }

    pub fn dataset(&self, name: &str) -> Result<Dataset> {
        let schema = self.schema()?;
        let p = self.require(name)?;
        load_dataset(&p, Some(&schema)).with_context(|| format!("loading {}", p.display()))
    }
}

/// Per-step cluster ids as CSV `trajectory_id,t,cluster_id` (0 = not a
/// decision point).
pub fn write_labels<W: Write>(dataset: &Dataset, labels: &[Vec<u32>], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["trajectory_id", "t", "cluster_id"])?;
    for (tr, l) in dataset.trajectories.iter().zip(labels) {
        for (s, c) in tr.steps.iter().zip(l) {
            w.write_record([tr.id.clone(), s.t.to_string(), c.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels<R: std::io::Read>(dataset: &Dataset, reader: R) -> Result<Vec<Vec<u32>>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut records = rdr.records();
    let mut out = Vec::with_capacity(dataset.trajectories.len());
    for tr in &dataset.trajectories {
        let mut v = Vec::with_capacity(tr.steps.len());
        for s in &tr.steps {
            let rec = records.next().context("label file ends early")??;
            if rec.len() != 3 || rec[0] != *tr.id || rec[1].parse::<u32>().ok() != Some(s.t) {
                bail!("label row for ({}, {}) does not match the dataset", tr.id, s.t);
            }
            v.push(rec[2].parse::<u32>().with_context(|| format!("bad cluster id '{}'", &rec[2]))?);
        }
        out.push(v);
    }
    if records.next().is_some() {
        bail!("label file has more rows than the dataset");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_artifact_names_producer() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::new(dir.path()).unwrap();
        let msg = store.require(MDP).unwrap_err().to_string();
        assert!(msg.contains("`compress`"), "{msg}");
        let msg = store.require(KERNEL).unwrap_err().to_string();
        assert!(msg.contains("`train-kernel`"), "{msg}");
    }

    #[test]
    fn envelope_round_trip_checks_kind() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::new(dir.path()).unwrap();
        store.write_json("x.json", "numbers", &vec![1, 2, 3]).unwrap();
        let v: Vec<i32> = store.read_json("x.json", "numbers").unwrap();
        assert_eq!(v, vec![1, 2, 3]);
        assert!(store.read_json::<Vec<i32>>("x.json", "other").is_err());
    }
}
