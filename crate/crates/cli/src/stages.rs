use std::io::Write;

use anyhow::{anyhow, bail, Context, Result};
use decision_regions::compression::{
    compress_dataset, estimate_mdp, read_compressed_jsonl, write_compressed_jsonl, CompressedMdp,
    CompressedTrajectory,
};
use decision_regions::data::{load_dataset, split_dataset, write_csv, ActionId, Dataset, Schema};
use decision_regions::decision_points::{
    annotate_against, annotate_dataset, read_annotations_csv, tune_dp_config, write_annotations_csv,
    write_scores_csv, Annotations, DpConfig, DpIndex, Selection, TuneScore,
};
use decision_regions::forest::{feature_importances, select_top_k, train_forest};
use decision_regions::kernel::{train_kernel, KernelModel};
use decision_regions::ope::{behavior_report, wis_evaluate, write_reports_csv, EvalPolicy, OpeReport};
use decision_regions::planning::{
    build_rewards, compare_policies, value_iteration, ClusterMembers, RewardTable, SolvedPolicy,
};
use decision_regions::regions::{fit_regions, label_dataset, RegionModel};
use decision_regions::synth::generate;
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::artifacts::*;
use crate::cli::DpArgs;
use crate::config::PipelineConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureChoice {
    pub features: Vec<String>,
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpChoice {
    #[serde(flatten)]
    pub config: DpConfig,
    pub tuned: bool,
    pub selection: Selection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionArtifact {
    pub model: RegionModel,
    pub split_agreement: f64,
    pub splits: usize,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeArtifact {
    pub reward: String,
    pub gamma: f64,
    pub reports: Vec<OpeReport>,
}

fn count_dps(ann: &Annotations) -> (usize, usize) {
    let total = ann.iter().map(Vec::len).sum();
    let dps = ann.iter().flatten().filter(|a| a.is_dp).count();
    (dps, total)
}

/// Train or test set restricted to the selected features.
fn selected(store: &Store, name: &str) -> Result<Dataset> {
    let choice: FeatureChoice = store.read_json(FEATURES, "features")?;
    Ok(store.dataset(name)?.select_features(&choice.features)?)
}

fn annotations(store: &Store, name: &str, dataset: &Dataset) -> Result<Annotations> {
    read_annotations_csv(dataset, store.open(name)?)
        .with_context(|| format!("reading {}", store.path(name).display()))
}

pub fn synth(store: &Store, cfg: &PipelineConfig) -> Result<String> {
    if !cfg.synth.is_feasible() {
        warn!("synthetic spec has no region with mixed actions; no decision points can be planted");
    }
    let (data, truth) = generate(&cfg.synth)?;
    let mut w = store.create(DATA)?;
    write_csv(&data, &mut w)?;
    w.flush()?;
    store.write_plain_json(SCHEMA, &data.schema)?;
    let mut w = store.create(TRUTH)?;
    truth.write_csv(&mut w)?;
    w.flush()?;
    let n_dp: usize = truth.oracle_dp.iter().flatten().filter(|&&b| b).count();
    Ok(format!(
        "synth: {} trajectories, {} steps, {} planted decision points",
        data.trajectories.len(),
        data.n_steps(),
        n_dp
    ))
}

pub fn split(store: &Store, cfg: &PipelineConfig) -> Result<String> {
    let data_path = match &cfg.data.dataset {
        Some(p) => p.clone(),
        None => store.require(DATA)?,
    };
    let schema = match (&cfg.data.schema, &cfg.data.dataset) {
        (Some(p), _) => Some(Schema::from_json_file(p)?),
        (None, None) => {
            if !store.exists(SCHEMA) {
                bail!("missing artifact {} (run the `synth` stage first)", store.path(SCHEMA).display());
            }
            Some(store.schema()?)
        }
        (None, Some(_)) => None,
    };
    let data = load_dataset(&data_path, schema.as_ref())
        .with_context(|| format!("loading {}", data_path.display()))?;
    let (train, test) = split_dataset(&data, cfg.split.train_fraction, cfg.split.seed)?;
    store.write_plain_json(SCHEMA, &data.schema)?;
    for (name, d) in [(TRAIN, &train), (TEST, &test)] {
        let mut w = store.create(name)?;
        write_csv(d, &mut w)?;
        w.flush()?;
    }
    Ok(format!(
        "split: {} train / {} test trajectories ({} features, {} actions)",
        train.trajectories.len(),
        test.trajectories.len(),
        data.dim(),
        data.n_actions()
    ))
}

pub fn select_features(store: &Store, cfg: &PipelineConfig) -> Result<String> {
    let train = store.dataset(TRAIN)?;
    let forest = train_forest(&train.states(), &train.actions(), &cfg.features.forest)?;
    let report = feature_importances(&forest, &train.schema.features);
    let mut w = store.create(IMPORTANCES)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    let k = cfg.features.top_k.min(train.dim());
    if k < cfg.features.top_k {
        warn!("top_k {} exceeds the {} available features; keeping all", cfg.features.top_k, k);
    }
    let features = select_top_k(&report, k)?;
    let summary = format!("select-features: kept {} of {} ({})", k, train.dim(), features.join(", "));
    store.write_json(FEATURES, "features", &FeatureChoice { features, top_k: k })?;
    Ok(summary)
}

pub fn train_kernel_stage(store: &Store, cfg: &PipelineConfig) -> Result<String> {
    let train = selected(store, TRAIN)?;
    let model = train_kernel(&train.states(), &train.actions(), train.n_actions(), &cfg.kernel)?;
    let weights = model
        .weights()
        .iter()
        .zip(&train.schema.features)
        .map(|(w, f)| format!("{f}={w:.3}"))
        .collect::<Vec<_>>()
        .join(" ");
    let loss = model.loss_history.last().copied().unwrap_or(f64::NAN);
    store.write_json(KERNEL, "kernel", &model)?;
    Ok(format!("train-kernel: loss {loss:.4}, weights {weights}"))
}

pub fn tune_dp(store: &Store, cfg: &PipelineConfig) -> Result<String> {
    let choice = if cfg.tuning.enabled {
        let train = selected(store, TRAIN)?;
        let model: KernelModel = store.read_json(KERNEL, "kernel")?;
        let (fit, val) =
            split_dataset(&train, cfg.split.validation_fraction, cfg.tuning.search.seed.wrapping_add(1))?;
        let index = DpIndex::build(&fit, &model);
        let points: Vec<(Vec<f64>, ActionId)> =
            val.steps().map(|s| (model.standardize(&s.state), s.action)).collect();
        let (best, scores) = tune_dp_config(&index, &points, &cfg.tuning.search)?;
        write_scores(store, &scores)?;
        DpChoice {
            config: best,
            tuned: true,
            selection: cfg.tuning.search.selection,
        }
    } else {
        write_scores(store, &[])?;
        DpChoice {
            config: cfg.dp,
            tuned: false,
            selection: cfg.tuning.search.selection,
        }
    };
    store.write_json(DP_CONFIG, "dp_config", &choice)?;
    Ok(format!(
        "tune-dp: delta {} n {}{}",
        choice.config.delta,
        choice.config.min_neighbors,
        if choice.tuned { "" } else { " (tuning disabled)" }
    ))
}

fn write_scores(store: &Store, scores: &[TuneScore]) -> Result<()> {
    let mut w = store.create(DP_SCORES)?;
    write_scores_csv(scores, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn find_dps(store: &Store, args: &DpArgs) -> Result<String> {
    let mut choice: DpChoice = store.read_json(DP_CONFIG, "dp_config")?;
    if let Some(d) = args.delta {
        choice.config.delta = d;
    }
    if let Some(n) = args.min_neighbors {
        choice.config.min_neighbors = n;
    }
    let dp = choice.config;
    let model: KernelModel = store.read_json(KERNEL, "kernel")?;
    let train = selected(store, TRAIN)?;
    let test = selected(store, TEST)?;
    let ann_train = annotate_dataset(&train, &model, &dp)?;
    let index = DpIndex::build(&train, &model);
    let ann_test = annotate_against(&index, &test, &model, &dp)?;
    for (name, d, a) in [(ANN_TRAIN, &train, &ann_train), (ANN_TEST, &test, &ann_test)] {
        let mut w = store.create(name)?;
        write_annotations_csv(d, a, &mut w)?;
        w.flush()?;
    }
    let (a, b) = count_dps(&ann_train);
    let (c, d) = count_dps(&ann_test);
    Ok(format!(
        "find-dps: {a}/{b} train and {c}/{d} test steps are decision points (delta {}, n {})",
        dp.delta, dp.min_neighbors
    ))
}

pub fn cluster(store: &Store, cfg: &PipelineConfig) -> Result<String> {
    let train = selected(store, TRAIN)?;
    let test = selected(store, TEST)?;
    let ann_train = annotations(store, ANN_TRAIN, &train)?;
    let ann_test = annotations(store, ANN_TEST, &test)?;
    let fit = fit_regions(&train, &ann_train, &cfg.regions)?;
    if fit.truncated {
        warn!("region splitting stopped at max_splits = {} with violations left", cfg.regions.max_splits);
    }
    let labels_test = label_dataset(&test, &ann_test, &fit.model)?;
    let mut w = store.create(REGION_DIAGNOSTICS)?;
    fit.model.write_diagnostics_csv(&mut w)?;
    w.flush()?;
    for (name, d, l) in [(LABELS_TRAIN, &train, &fit.labels), (LABELS_TEST, &test, &labels_test)] {
        let mut w = store.create(name)?;
        write_labels(d, l, &mut w)?;
        w.flush()?;
    }
    let summary = format!(
        "cluster: {} regions after {} splits, split agreement {:.3}{}",
        fit.model.n_clusters(),
        fit.splits,
        fit.split_agreement,
        if fit.truncated { " (truncated)" } else { "" }
    );
    store.write_json(
        REGIONS,
        "regions",
        &RegionArtifact {
            model: fit.model,
            split_agreement: fit.split_agreement,
            splits: fit.splits,
            truncated: fit.truncated,
        },
    )?;
    Ok(summary)
}

fn labels(store: &Store, name: &str, dataset: &Dataset) -> Result<Vec<Vec<u32>>> {
    read_labels(dataset, store.open(name)?).with_context(|| format!("reading {}", store.path(name).display()))
}

fn read_compressed(store: &Store, name: &str) -> Result<Vec<CompressedTrajectory>> {
    Ok(read_compressed_jsonl(store.open(name)?)?)
}

pub fn compress(store: &Store, cfg: &PipelineConfig) -> Result<String> {
    let regions: RegionArtifact = store.read_json(REGIONS, "regions")?;
    let k = regions.model.n_clusters();
    let train = store.dataset(TRAIN)?;
    let test = store.dataset(TEST)?;
    let h = cfg.compression.summary;
    let ct_train = compress_dataset(&train, &labels(store, LABELS_TRAIN, &train)?, h)?;
    let ct_test = compress_dataset(&test, &labels(store, LABELS_TEST, &test)?, h)?;
    let mdp = estimate_mdp(&ct_train, k, train.n_actions(), cfg.compression.min_action_count)?;
    for (name, ct) in [(COMPRESSED_TRAIN, &ct_train), (COMPRESSED_TEST, &ct_test)] {
        let mut w = store.create(name)?;
        write_compressed_jsonl(ct, &mut w)?;
        w.flush()?;
    }
    store.write_json(MDP, "mdp", &mdp)?;
    let valid: usize = (1..=k as u32).map(|c| mdp.valid_actions(c).len()).sum();
    let mean_len = ct_train.iter().map(|c| c.abar.len()).sum::<usize>() as f64 / ct_train.len().max(1) as f64;
    Ok(format!(
        "compress: {k} regions, {valid} valid region-action pairs, mean compressed length {mean_len:.2}, {} empty trajectories",
        mdp.n_empty
    ))
}

pub fn solve(store: &Store, cfg: &PipelineConfig) -> Result<String> {
    let mdp: CompressedMdp = store.read_json(MDP, "mdp")?;
    let train = store.dataset(TRAIN)?;
    let labels = labels(store, LABELS_TRAIN, &train)?;
    let members = ClusterMembers::from_labels(&train, &labels, mdp.n_clusters)?;
    let mut tables = Vec::with_capacity(cfg.rewards.len());
    let mut solved = Vec::with_capacity(cfg.rewards.len());
    for spec in &cfg.rewards {
        let table = build_rewards(&mdp, &members, spec).with_context(|| format!("{} reward", spec.name()))?;
        let sol = value_iteration(&mdp, &table, &cfg.planning)
            .with_context(|| format!("solving under the {} reward", spec.name()))?;
        info!("{}: {} iterations, residual {:.2e}", sol.name, sol.iterations, sol.residual);
        tables.push(table);
        solved.push(sol);
    }
    let comparison = compare_policies(&mdp, &solved);
    let mut w = store.create(POLICY_COMPARISON)?;
    comparison.write_csv(&mut w)?;
    w.flush()?;
    store.write_json(REWARDS, "rewards", &tables)?;
    store.write_json(POLICIES, "policies", &solved)?;
    let agree = comparison
        .policy_names
        .iter()
        .zip(&comparison.agreement)
        .map(|(n, a)| format!("{n} {a:.2}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(format!("solve: {} policies over {} regions; agreement with behavior mode: {agree}", solved.len(), mdp.n_clusters))
}

pub fn evaluate(store: &Store, cfg: &PipelineConfig) -> Result<String> {
    let mdp: CompressedMdp = store.read_json(MDP, "mdp")?;
    let tables: Vec<RewardTable> = store.read_json(REWARDS, "rewards")?;
    let solved: Vec<SolvedPolicy> = store.read_json(POLICIES, "policies")?;
    let ct_test = read_compressed(store, COMPRESSED_TEST)?;
    let reward = cfg.ope.reward.as_str();
    let table = tables
        .iter()
        .find(|t| t.name == reward)
        .ok_or_else(|| anyhow!("rewards.json has no '{reward}' table (rerun `solve`)"))?;
    let mut ope = cfg.ope.wis;
    if let Some(s) = solved.first() {
        ope.gamma = s.gamma;
    }
    let mut reports = vec![behavior_report(&ct_test, table, ope.gamma)?];
    for sol in &solved {
        let r = wis_evaluate(&sol.name, &ct_test, &EvalPolicy::from(sol), &mdp, table, &ope)
            .with_context(|| format!("evaluating the {} policy", sol.name))?;
        reports.push(r);
    }
    let mut w = store.create(OPE_CSV)?;
    write_reports_csv(&reports, &mut w)?;
    w.flush()?;
    let summary = reports
        .iter()
        .map(|r| format!("{} {:.3} (ess {:.0})", r.policy, r.wis_estimate, r.ess))
        .collect::<Vec<_>>()
        .join(", ");
    store.write_json(
        OPE_JSON,
        "ope",
        &OpeArtifact {
            reward: reward.to_string(),
            gamma: ope.gamma,
            reports,
        },
    )?;
    Ok(format!("evaluate [{reward} reward, {} test trajectories]: {summary}", ct_test.len()))
}

/// Run every stage in order, returning the summary lines.
pub fn pipeline(store: &Store, cfg: &PipelineConfig) -> Result<Vec<String>> {
    if cfg.data.dataset.is_none() {
        let names = cfg.synth.feature_names();
        for spec in &cfg.rewards {
            for rule in &spec.piecewise_rules {
                if !names.contains(&rule.feature) {
                    bail!(
                        "piecewise reward uses feature '{}', which the synthetic data lacks ({})",
                        rule.feature,
                        names.join(", ")
                    );
                }
            }
        }
    }
    let mut out = Vec::new();
    let mut run = |line: Result<String>| -> Result<()> {
        let line = line?;
        println!("{line}");
        out.push(line);
        Ok(())
    };
    if cfg.data.dataset.is_none() {
        run(synth(store, cfg))?;
    }
    run(split(store, cfg))?;
    run(select_features(store, cfg))?;
    run(train_kernel_stage(store, cfg))?;
    run(tune_dp(store, cfg))?;
    run(find_dps(store, &DpArgs::default()))?;
    run(cluster(store, cfg))?;
    run(compress(store, cfg))?;
    run(solve(store, cfg))?;
    run(evaluate(store, cfg))?;
    run(crate::report::report(store, cfg))?;
    Ok(out)
}
