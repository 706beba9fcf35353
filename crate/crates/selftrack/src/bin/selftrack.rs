use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use selftrack::harness::{self, Command, RunConfig, SweepParam, SweepSpec};
use selftrack::tracker::ProposalSource;
use selftrack::training::Recipe;

#[derive(Parser)]
#[command(name = "selftrack", version, about = "Train, evaluate and profile self-proposal trackers on synthetic video")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Train a model and write its checkpoint, log and validation metrics.
    Train(Flags),
    /// Track the validation videos with a checkpoint.
    Eval(Flags),
    /// Compare detection AP with and without track queries.
    Conflict(Flags),
    /// Train or evaluate once per value of one parameter.
    Sweep(Flags),
    /// Measure frames per second and encoder/decoder call counts.
    Profile(Flags),
    /// Write the synthetic train and val videos to disk.
    GenData(Flags),
}

#[derive(Clone, Copy, ValueEnum)]
enum RecipeArg {
    Standard,
    DetPretrain,
    QueryPretrain,
    Distill,
    FrozenAnchorProposal,
    SelfProposal,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    LearnableAnchor,
    FrozenAnchor,
    #[value(name = "self")]
    SelfProposal,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepArg {
    CProp,
    DetectDecoderDepth,
    ProposalSource,
}

#[derive(Args)]
struct Flags {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    teacher: Option<PathBuf>,
    #[arg(long, value_enum)]
    recipe: Option<RecipeArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda_prop: Option<f64>,
    #[arg(long)]
    train_frames: Option<usize>,
    #[arg(long)]
    val_frames: Option<usize>,
    #[arg(long)]
    disable_track_queries_at_inference: bool,
    #[arg(long, value_enum)]
    proposal_source: Option<SourceArg>,
    #[arg(long)]
    c_prop: Option<f64>,
    #[arg(long)]
    detect_depth: Option<usize>,
    #[arg(long)]
    track_depth: Option<usize>,
    #[arg(long, value_enum)]
    sweep_param: Option<SweepArg>,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
    #[arg(long)]
    profile_frames: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    /// Validate the configuration and write nothing.
    #[arg(long)]
    dry_run: bool,
    /// Print the effective configuration as JSON and exit.
    #[arg(long)]
    print_config: bool,
}

fn build(command: Command, f: Flags) -> selftrack::Result<(RunConfig, bool)> {
    let mut c = match &f.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    c.command = command;
    if let Some(v) = f.output_dir {
        c.output_dir = v;
    }
    if let Some(v) = f.seed {
        c.seed = v;
    }
    c.checkpoint = f.checkpoint.or(c.checkpoint);
    c.teacher = f.teacher.or(c.teacher);
    if let Some(r) = f.recipe {
        c.train.recipe = match r {
            RecipeArg::Standard => Recipe::Standard,
            RecipeArg::DetPretrain => Recipe::DetPretrain,
            RecipeArg::QueryPretrain => Recipe::QueryPretrain,
            RecipeArg::Distill => Recipe::Distill,
            RecipeArg::FrozenAnchorProposal => Recipe::FrozenAnchorProposal,
            RecipeArg::SelfProposal => Recipe::SelfProposal,
        };
    }
    if let Some(v) = f.epochs {
        c.train.epochs = v;
    }
    if let Some(v) = f.pretrain_epochs {
        c.train.pretrain_epochs = v;
    }
    if let Some(v) = f.lr {
        c.train.lr = v;
    }
    if let Some(v) = f.lambda_prop {
        c.train.lambda_prop = v;
    }
    if let Some(v) = f.train_frames {
        c.data.train_frames = v;
    }
    if let Some(v) = f.val_frames {
        c.data.val_frames = v;
    }
    c.disable_track_queries_at_inference |= f.disable_track_queries_at_inference;
    if let Some(s) = f.proposal_source {
        c.proposal_source = Some(match s {
            SourceArg::LearnableAnchor => ProposalSource::LearnableAnchor,
            SourceArg::FrozenAnchor => ProposalSource::FrozenAnchor,
            SourceArg::SelfProposal => ProposalSource::SelfProposal,
        });
    }
    c.c_prop = f.c_prop.or(c.c_prop);
    c.detect_depth = f.detect_depth.or(c.detect_depth);
    c.track_depth = f.track_depth.or(c.track_depth);
    if let Some(p) = f.sweep_param {
        c.sweep = Some(SweepSpec {
            param: match p {
                SweepArg::CProp => SweepParam::CProp,
                SweepArg::DetectDecoderDepth => SweepParam::DetectDecoderDepth,
                SweepArg::ProposalSource => SweepParam::ProposalSource,
            },
            values: f.values,
        });
    }
    if let Some(v) = f.profile_frames {
        c.profile_frames = v;
    }
    if let Some(v) = f.threads {
        c.threads = v;
    }
    c.dry_run |= f.dry_run;
    Ok((c, f.print_config))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, flags) = match cli.verb {
        Verb::Train(f) => (Command::Train, f),
        Verb::Eval(f) => (Command::Eval, f),
        Verb::Conflict(f) => (Command::Conflict, f),
        Verb::Sweep(f) => (Command::Sweep, f),
        Verb::Profile(f) => (Command::Profile, f),
        Verb::GenData(f) => (Command::GenData, f),
    };
    let result = build(command, flags).and_then(|(cfg, print)| {
        if print {
            cfg.validate()?;
            println!("{}", cfg.to_json());
            return Ok(serde_json::Value::Null);
        }
        harness::run(&cfg)
    });
    match result {
        Ok(serde_json::Value::Null) => ExitCode::SUCCESS,
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
