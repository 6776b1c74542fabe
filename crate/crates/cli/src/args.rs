use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ran", version, about = "Instruction parsing, trajectory learning and simulated manipulation episodes")]
pub struct Cli {
    /// Seed for every random choice; overrides seeds in the config file.
    #[arg(long, global = true, env = "RAN_SEED", default_value_t = 0)]
    pub seed: u64,

    /// JSON file overriding any default setting.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Where to write the JSON run report. Defaults to stdout.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate and split instruction corpora.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Train, evaluate and query the instruction parser.
    #[command(subcommand)]
    Model(ModelCmd),
    /// Fit, roll out and compare trajectory models.
    #[command(subcommand)]
    Traj(TrajCmd),
    /// Inspect scene files.
    #[command(subcommand)]
    Scene(SceneCmd),
    /// Run simulated episodes.
    #[command(subcommand)]
    Run(RunCmd),
    /// Emit data series for plotting.
    #[command(subcommand)]
    Plot(PlotCmd),
}

#[derive(Debug, Subcommand)]
pub enum CorpusCmd {
    Generate {
        #[arg(long, default_value_t = 2810)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Train, validation and test weights such as `0.7,0.15,0.15`, or
        /// `reference` for 1792:448:570.
        #[arg(long, default_value = "reference")]
        ratios: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DimsChoice {
    Reference,
    Compact,
}

#[derive(Debug, Subcommand)]
pub enum ModelCmd {
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        /// Optional held-out set evaluated after training.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = DimsChoice::Reference)]
        dims: DimsChoice,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    Eval {
        #[arg(long, default_value = "model.ranc")]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    Predict {
        #[arg(long, default_value = "model.ranc")]
        checkpoint: PathBuf,
        #[arg(long)]
        text: String,
    },
}

#[derive(Debug, Args)]
pub struct DemoArg {
    /// Demonstration CSV, or the name of a bundled demo (`min_jerk_400`, `min_jerk_900`).
    #[arg(long, default_value = "min_jerk_900")]
    pub demo: String,
}

#[derive(Debug, Subcommand)]
pub enum TrajCmd {
    Fit {
        #[command(flatten)]
        demo: DemoArg,
        #[arg(long)]
        out: PathBuf,
    },
    Rollout {
        #[arg(long)]
        model: PathBuf,
        /// Start pose `x,y,z`.
        #[arg(long)]
        start: String,
        /// Goal pose `x,y,z`; defaults to the fitted goal.
        #[arg(long)]
        goal: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    Compare {
        #[command(flatten)]
        demo: DemoArg,
        /// Also write the three trajectories side by side as CSV.
        #[arg(long)]
        overlay: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum SceneCmd {
    Validate {
        #[arg(long)]
        scene: PathBuf,
    },
    Show {
        /// Scene file; the bundled kitchen scene when omitted.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum RunCmd {
    Episode {
        #[arg(long)]
        instruction: String,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, default_value = "model.ranc")]
        checkpoint: PathBuf,
        /// One answer per line for missing objects or destinations; stdin is
        /// used when omitted.
        #[arg(long)]
        answers: Option<PathBuf>,
    },
    Suite {
        #[arg(long, value_delimiter = ',', default_value = "pick_place,pick_pour,cleaning,pick_give")]
        tasks: Vec<String>,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value = "model.ranc")]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Also run each trial with its key object removed.
        #[arg(long)]
        absent: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum PlotCmd {
    /// Per-epoch losses stored in a checkpoint.
    Loss {
        #[arg(long, default_value = "model.ranc")]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Confusion matrix on a test corpus.
    Confusion {
        #[arg(long, default_value = "model.ranc")]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Demonstration with both fitted reproductions.
    TrajOverlay {
        #[command(flatten)]
        demo: DemoArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rollouts of one fitted model toward several goals.
    GoalAdapt {
        #[command(flatten)]
        demo: DemoArg,
        /// Goals separated by `;`, each `x,y,z`.
        #[arg(long)]
        goals: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}
