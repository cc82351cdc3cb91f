use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(name = "dregion", version, about = "Decision-region compression of batch trajectories")]
pub struct Cli {
    /// Seed applied to every stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Directory holding all stage artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted decision regions.
    Synth(SynthArgs),
    /// Split trajectories into train and test sets.
    Split(SplitArgs),
    /// Rank features with a random forest and keep the top k.
    SelectFeatures(FeatureArgs),
    /// Learn the weighted Gaussian kernel.
    TrainKernel(KernelArgs),
    /// Grid-search the decision-point threshold and neighbor count.
    TuneDp(TuneArgs),
    /// Annotate train and test steps as decision points.
    FindDps(DpArgs),
    /// Cluster decision points into regions.
    Cluster(ClusterArgs),
    /// Compress trajectories and estimate the region MDP.
    Compress(CompressArgs),
    /// Build rewards and solve the region MDP.
    Solve(SolveArgs),
    /// Off-policy evaluation of the solved policies on test data.
    Evaluate(EvaluateArgs),
    /// Emit the summary tables.
    Report(ReportArgs),
    /// Run every stage in order.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n_trajectories: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub n_noise: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SplitArgs {
    /// Trajectory file (CSV or JSONL); defaults to the synth output.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct FeatureArgs {
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub n_trees: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct KernelArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub rff_dim: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SelectionArg {
    Argmax,
    OneSe,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TuneArgs {
    #[arg(long, value_enum)]
    pub selection: Option<SelectionArg>,
    /// Skip the search and use the configured threshold and count.
    #[arg(long)]
    pub no_tune: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DpArgs {
    /// Overrides the tuned threshold.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Overrides the tuned neighbor count.
    #[arg(long)]
    pub min_neighbors: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LinkageArg {
    Ward,
    Complete,
    Average,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ClusterArgs {
    #[arg(long, value_enum)]
    pub linkage: Option<LinkageArg>,
    #[arg(long)]
    pub homogeneity_threshold: Option<f64>,
    #[arg(long)]
    pub loop_threshold: Option<f64>,
    #[arg(long)]
    pub max_splits: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SummaryArg {
    BitOr,
    First,
    Majority,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CompressArgs {
    #[arg(long, value_enum)]
    pub summary: Option<SummaryArg>,
    #[arg(long)]
    pub min_action_count: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SolveArgs {
    /// Discount, shared with evaluation.
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub clip_percentile: Option<f64>,
    #[arg(long)]
    pub eval_softening: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ReportArgs {
    /// Minimum region mortality rate for the feature-mean table.
    #[arg(long)]
    pub filter_mortality: Option<f64>,
    /// Minimum points per treatment; a region needs two such treatments.
    #[arg(long)]
    pub min_treatment_points: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PipelineArgs {
    /// Start from this trajectory file instead of generating synthetic data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Split(_) => "split",
            Command::SelectFeatures(_) => "select-features",
            Command::TrainKernel(_) => "train-kernel",
            Command::TuneDp(_) => "tune-dp",
            Command::FindDps(_) => "find-dps",
            Command::Cluster(_) => "cluster",
            Command::Compress(_) => "compress",
            Command::Solve(_) => "solve",
            Command::Evaluate(_) => "evaluate",
            Command::Report(_) => "report",
            Command::Pipeline(_) => "pipeline",
        }
    }

    /// Fold the subcommand flags into the configuration.
    pub fn apply(&self, c: &mut PipelineConfig) {
        use decision_regions::compression::SummaryFn;
        use decision_regions::decision_points::Selection;
        use decision_regions::linkage::LinkageMethod;
        match self {
            Command::Synth(a) => {
                set(&mut c.synth.n_trajectories, a.n_trajectories);
                set(&mut c.synth.horizon, a.horizon);
                set(&mut c.synth.n_noise, a.n_noise);
            }
            Command::Split(a) => {
                if a.data.is_some() {
                    c.data.dataset = a.data.clone();
                }
                if a.schema.is_some() {
                    c.data.schema = a.schema.clone();
                }
                set(&mut c.split.train_fraction, a.train_fraction);
            }
            Command::SelectFeatures(a) => {
                set(&mut c.features.top_k, a.top_k);
                set(&mut c.features.forest.n_trees, a.n_trees);
            }
            Command::TrainKernel(a) => {
                set(&mut c.kernel.epochs, a.epochs);
                set(&mut c.kernel.learning_rate, a.learning_rate);
                set(&mut c.kernel.rff_dim, a.rff_dim);
            }
            Command::TuneDp(a) => {
                if let Some(s) = a.selection {
                    c.tuning.search.selection = match s {
                        SelectionArg::Argmax => Selection::Argmax,
                        SelectionArg::OneSe => Selection::OneSe,
                    };
                }
                if a.no_tune {
                    c.tuning.enabled = false;
                }
            }
            Command::FindDps(a) => {
                set(&mut c.dp.delta, a.delta);
                set(&mut c.dp.min_neighbors, a.min_neighbors);
            }
            Command::Cluster(a) => {
                if let Some(l) = a.linkage {
                    c.regions.linkage = match l {
                        LinkageArg::Ward => LinkageMethod::Ward,
                        LinkageArg::Complete => LinkageMethod::Complete,
                        LinkageArg::Average => LinkageMethod::Average,
                    };
                }
                set(&mut c.regions.homogeneity_threshold, a.homogeneity_threshold);
                set(&mut c.regions.loop_threshold, a.loop_threshold);
                set(&mut c.regions.max_splits, a.max_splits);
            }
            Command::Compress(a) => {
                if let Some(s) = a.summary {
                    c.compression.summary = match s {
                        SummaryArg::BitOr => SummaryFn::BitOr,
                        SummaryArg::First => SummaryFn::First,
                        SummaryArg::Majority => SummaryFn::Majority,
                    };
                }
                set(&mut c.compression.min_action_count, a.min_action_count);
            }
            Command::Solve(a) => {
                set(&mut c.planning.gamma, a.gamma);
                set(&mut c.ope.wis.gamma, a.gamma);
            }
            Command::Evaluate(a) => {
                set(&mut c.ope.wis.clip_percentile, a.clip_percentile);
                set(&mut c.ope.wis.eval_softening, a.eval_softening);
            }
            Command::Report(a) => {
                set(&mut c.report.filter_mortality, a.filter_mortality);
                set(&mut c.report.min_treatment_points, a.min_treatment_points);
            }
            Command::Pipeline(a) => {
                if a.data.is_some() {
                    c.data.dataset = a.data.clone();
                }
                if a.schema.is_some() {
                    c.data.schema = a.schema.clone();
                }
            }
        }
    }
}

fn set<T>(field: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *field = v;
    }
}
