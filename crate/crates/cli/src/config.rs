use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use decision_regions::compression::SummaryFn;
use decision_regions::decision_points::{DpConfig, TuneConfig};
use decision_regions::forest::ForestConfig;
use decision_regions::kernel::TrainConfig;
use decision_regions::ope::OpeConfig;
use decision_regions::planning::{PiecewiseRule, PlanningConfig, RewardKind, RewardSpec};
use decision_regions::regions::RegionConfig;
use decision_regions::synth::SynthSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    /// Input trajectories; when unset, `split` reads the `synth` output.
    pub dataset: Option<PathBuf>,
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train_fraction: f64,
    /// Share of the training set used to build the tuning index; the rest
    /// scores the grid.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            train_fraction: 0.75,
            validation_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub forest: ForestConfig,
    pub top_k: usize,
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self {
            forest: ForestConfig::default(),
            top_k: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningSection {
    /// When false, `tune-dp` passes the `dp` section through unchanged.
    pub enabled: bool,
    #[serde(flatten)]
    pub search: TuneConfig,
}

impl Default for TuningSection {
    fn default() -> Self {
        Self {
            enabled: true,
            search: TuneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressionSection {
    pub summary: SummaryFn,
    pub min_action_count: usize,
}

impl Default for CompressionSection {
    fn default() -> Self {
        Self {
            summary: SummaryFn::BitOr,
            min_action_count: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpeSection {
    #[serde(flatten)]
    pub wis: OpeConfig,
    /// Reward under which every policy and the behavior row are scored.
    pub reward: RewardKind,
}

impl Default for OpeSection {
    fn default() -> Self {
        Self {
            wis: OpeConfig::default(),
            reward: RewardKind::Piecewise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub filter_mortality: f64,
    pub min_treatment_points: usize,
    /// Policy scored against planted optima when ground truth exists.
    pub recovery_policy: RewardKind,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            filter_mortality: 0.10,
            min_treatment_points: 10,
            recovery_policy: RewardKind::Mortality,
        }
    }
}

fn default_rewards() -> Vec<RewardSpec> {
    vec![
        RewardSpec {
            kind: RewardKind::Piecewise,
            piecewise_rules: vec![
                PiecewiseRule {
                    feature: "MAP".into(),
                    breakpoints: vec![55.0, 65.0],
                    values: vec![-1.0, -0.3, 0.0],
                },
                PiecewiseRule {
                    feature: "urine".into(),
                    breakpoints: vec![30.0],
                    values: vec![-0.5, 0.0],
                },
            ],
        },
        RewardSpec::simple(RewardKind::Mortality),
        RewardSpec::simple(RewardKind::Terminal),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Overrides every per-stage seed when set.
    pub seed: Option<u64>,
    pub data: DataPaths,
    pub synth: SynthSpec,
    pub split: SplitSection,
    pub features: FeatureSection,
    pub kernel: TrainConfig,
    pub tuning: TuningSection,
    pub dp: DpConfig,
    pub regions: RegionConfig,
    pub compression: CompressionSection,
    pub planning: PlanningConfig,
    pub rewards: Vec<RewardSpec>,
    pub ope: OpeSection,
    pub report: ReportSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: None,
            data: DataPaths::default(),
            synth: SynthSpec::default(),
            split: SplitSection::default(),
            features: FeatureSection::default(),
            kernel: TrainConfig::default(),
            tuning: TuningSection::default(),
            dp: DpConfig::default(),
            regions: RegionConfig::default(),
            compression: CompressionSection::default(),
            planning: PlanningConfig::default(),
            rewards: default_rewards(),
            ope: OpeSection::default(),
            report: ReportSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Push the global seed into every stage.
    pub fn apply_seed(&mut self, seed: Option<u64>) {
        if seed.is_some() {
            self.seed = seed;
        }
        if let Some(s) = self.seed {
            self.synth.seed = s;
            self.split.seed = s;
            self.features.forest.seed = s;
            self.kernel.seed = s;
            self.tuning.search.seed = s;
            self.regions.seed = s;
        }
    }

    pub fn reward(&self, kind: RewardKind) -> Option<&RewardSpec> {
        self.rewards.iter().find(|r| r.kind == kind)
    }

    /// Check every section, reporting all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad: Vec<String> = Vec::new();
        let mut check = |section: &str, r: Result<(), String>| {
            if let Err(e) = r {
                bad.push(format!("{section}: {e}"));
            }
        };
        if self.data.dataset.is_none() {
            check("synth", self.synth.validate().map_err(|e| e.to_string()));
        }
        let f = self.split.train_fraction;
        check(
            "split.train_fraction",
            (f > 0.0 && f < 1.0).then_some(()).ok_or_else(|| format!("{f} not in (0, 1)")),
        );
        let f = self.split.validation_fraction;
        check(
            "split.validation_fraction",
            (f > 0.0 && f < 1.0).then_some(()).ok_or_else(|| format!("{f} not in (0, 1)")),
        );
        check("features.forest", self.features.forest.validate().map_err(|e| e.to_string()));
        check(
            "features.top_k",
            (self.features.top_k > 0).then_some(()).ok_or_else(|| "must be >= 1".to_string()),
        );
        check("kernel", self.kernel.validate().map_err(|e| e.to_string()));
        if self.tuning.enabled {
            let t = &self.tuning.search;
            check(
                "tuning.grid",
                (!t.grid.is_empty()).then_some(()).ok_or_else(|| "must not be empty".to_string()),
            );
            for &(delta, n) in &t.grid {
                let cell = DpConfig { delta, min_neighbors: n };
                check("tuning.grid", cell.validate().map_err(|e| e.to_string()));
            }
            check(
                "tuning.rounds",
                (t.rounds > 0).then_some(()).ok_or_else(|| "must be >= 1".to_string()),
            );
            check(
                "tuning.sample_size",
                (t.sample_size > 0).then_some(()).ok_or_else(|| "must be >= 1".to_string()),
            );
        }
        check("dp", self.dp.validate().map_err(|e| e.to_string()));
        check("regions", self.regions.validate().map_err(|e| e.to_string()));
        check(
            "compression.min_action_count",
            (self.compression.min_action_count > 0)
                .then_some(())
                .ok_or_else(|| "must be >= 1".to_string()),
        );
        check("planning", self.planning.validate().map_err(|e| e.to_string()));
        check(
            "rewards",
            (!self.rewards.is_empty()).then_some(()).ok_or_else(|| "must not be empty".to_string()),
        );
        for (i, r) in self.rewards.iter().enumerate() {
            check(&format!("rewards[{i}]"), r.validate().map_err(|e| e.to_string()));
            if self.rewards[..i].iter().any(|p| p.kind == r.kind) {
                check(&format!("rewards[{i}]"), Err(format!("duplicate reward kind {}", r.name())));
            }
        }
        check("ope", self.ope.wis.validate().map_err(|e| e.to_string()));
        check(
            "ope.gamma",
            (self.ope.wis.gamma == self.planning.gamma)
                .then_some(())
                .ok_or_else(|| format!("{} differs from planning.gamma {}", self.ope.wis.gamma, self.planning.gamma)),
        );
        check(
            "ope.reward",
            self.reward(self.ope.reward)
                .map(|_| ())
                .ok_or_else(|| format!("{} is not in rewards", self.ope.reward.as_str())),
        );
        check(
            "report.filter_mortality",
            (0.0..=1.0)
                .contains(&self.report.filter_mortality)
                .then_some(())
                .ok_or_else(|| "must be in [0, 1]".to_string()),
        );
        check(
            "report.recovery_policy",
            self.reward(self.report.recovery_policy)
                .map(|_| ())
                .ok_or_else(|| format!("{} is not in rewards", self.report.recovery_policy.as_str())),
        );
        if bad.is_empty() {
            Ok(())
        } else {
            bail!("invalid configuration:\n  {}", bad.join("\n  "))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn every_violation_is_listed() {
        let mut c = PipelineConfig::default();
        c.split.train_fraction = 1.5;
        c.kernel.rff_dim = 0;
        c.planning.gamma = 0.0;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("split.train_fraction"), "{msg}");
        assert!(msg.contains("kernel"), "{msg}");
        assert!(msg.contains("planning"), "{msg}");
        assert!(msg.contains("ope.gamma"), "{msg}");
    }

    #[test]
    fn global_seed_reaches_stages() {
        let mut c = PipelineConfig::default();
        c.apply_seed(Some(9));
        assert_eq!(c.synth.seed, 9);
        assert_eq!(c.kernel.seed, 9);
        assert_eq!(c.regions.seed, 9);
        assert_eq!(c.tuning.search.seed, 9);
    }

    #[test]
    fn partial_json_keeps_defaults() {
        let c: PipelineConfig =
            serde_json::from_str(r#"{"kernel": {"epochs": 3}, "tuning": {"selection": "one_se"}}"#).unwrap();
        assert_eq!(c.kernel.epochs, 3);
        assert_eq!(c.kernel.rff_dim, TrainConfig::default().rff_dim);
        assert!(c.tuning.enabled);
        assert_eq!(c.rewards.len(), 3);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"kernal": {}}"#).is_err());
    }
}
