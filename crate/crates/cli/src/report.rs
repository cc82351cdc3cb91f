use std::io::Write;

use anyhow::{anyhow, Result};
use decision_regions::compression::CompressedMdp;
use decision_regions::data::{ActionId, ActionSet};
use decision_regions::decision_points::read_annotations_csv;
use decision_regions::planning::{compare_policies, SolvedPolicy};
use decision_regions::regions::ClusterDiagnostics;
use decision_regions::synth::{score_recovery, RecoveryScore, SynthTruth};

use crate::artifacts::*;
use crate::config::{PipelineConfig, ReportSection};
use crate::stages::{OpeArtifact, RegionArtifact};

pub const CLUSTER_MEANS: &str = "report/cluster_means.csv";
pub const REPORT_COMPARISON: &str = "report/policy_comparison.csv";
pub const REPORT_OPE: &str = "report/ope.csv";

/// Actions with at least `min_points` members, if the region also meets
/// the mortality filter and has two or more such actions.
pub fn reportable_actions(d: &ClusterDiagnostics, filter: &ReportSection) -> Option<Vec<ActionId>> {
    if d.mortality_rate < filter.filter_mortality {
        return None;
    }
    let acts: Vec<ActionId> = d
        .action_counts
        .iter()
        .enumerate()
        .filter(|&(_, &n)| n >= filter.min_treatment_points)
        .map(|(a, _)| ActionId(a))
        .collect();
    (acts.len() >= 2).then_some(acts)
}

fn write_cluster_means<W: Write>(
    regions: &RegionArtifact,
    actions: &ActionSet,
    filter: &ReportSection,
    writer: W,
) -> Result<usize> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["cluster_id", "action", "n_points", "mortality_rate"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(regions.model.feature_names.iter().cloned());
    w.write_record(&header)?;
    let mut kept = 0;
    for d in &regions.model.diagnostics {
        let Some(acts) = reportable_actions(d, filter) else {
            continue;
        };
        kept += 1;
        for a in acts {
            let Some(means) = &d.action_feature_means[a.0] else {
                continue;
            };
            let mut row = vec![
                d.cluster_id.to_string(),
                actions.name(a),
                d.action_counts[a.0].to_string(),
                d.mortality_rate.to_string(),
            ];
            row.extend(means.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(kept)
}

fn title_case(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// The OPE table with exactly the columns `Policy,WIS Score,ESS`.
fn write_ope_table<W: Write>(ope: &OpeArtifact, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["Policy", "WIS Score", "ESS"])?;
    for r in &ope.reports {
        w.write_record([title_case(&r.policy), format!("{:.2}", r.wis_estimate), format!("{:.0}", r.ess)])?;
    }
    w.flush()?;
    Ok(())
}

fn recovery(store: &Store, cfg: &PipelineConfig, solved: &[SolvedPolicy]) -> Result<Option<RecoveryScore>> {
    if cfg.data.dataset.is_some() || !store.exists(TRUTH) {
        return Ok(None);
    }
    let truth = SynthTruth::read_csv(store.open(TRUTH)?)?;
    let train = store.dataset(TRAIN)?;
    let truth = truth.restrict_to(&train)?;
    let ann = read_annotations_csv(&train, store.open(ANN_TRAIN)?)?;
    let detected: Vec<Vec<bool>> = ann.iter().map(|a| a.iter().map(|x| x.is_dp).collect()).collect();
    let labels = read_labels(&train, store.open(LABELS_TRAIN)?)?;
    let name = cfg.report.recovery_policy.as_str();
    let policy = solved
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| anyhow!("policies.json has no '{name}' policy (rerun `solve`)"))?;
    Ok(Some(score_recovery(&truth, &detected, &labels, &policy.policy)?))
}

pub fn report(store: &Store, cfg: &PipelineConfig) -> Result<String> {
    let regions: RegionArtifact = store.read_json(REGIONS, "regions")?;
    let mdp: CompressedMdp = store.read_json(MDP, "mdp")?;
    let solved: Vec<SolvedPolicy> = store.read_json(POLICIES, "policies")?;
    let ope: OpeArtifact = store.read_json(OPE_JSON, "ope")?;
    let schema = store.schema()?;

    let mut w = store.create(CLUSTER_MEANS)?;
    let kept = write_cluster_means(&regions, &schema.actions, &cfg.report, &mut w)?;
    w.flush()?;

    let mut w = store.create(REPORT_COMPARISON)?;
    compare_policies(&mdp, &solved).write_csv(&mut w)?;
    w.flush()?;

    let mut w = store.create(REPORT_OPE)?;
    write_ope_table(&ope, &mut w)?;
    w.flush()?;

    let mut line = format!(
        "report: {kept} of {} regions pass the mortality >= {} / {} treatment-point filter",
        regions.model.n_clusters(),
        cfg.report.filter_mortality,
        cfg.report.min_treatment_points
    );
    if let Some(score) = recovery(store, cfg, &solved)? {
        line.push_str(&format!(
            "; recovery precision {:.3} recall {:.3} ARI {:.3} optimal {:.3}",
            score.dp_precision, score.dp_recall, score.region_ari, score.optimal_action_fraction
        ));
        store.write_json(RECOVERY, "recovery", &score)?;
    }
    Ok(line)
}
