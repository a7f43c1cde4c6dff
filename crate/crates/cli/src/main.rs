use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use samdp_core::pipeline::{run_all, run_stage, PipelineConfig, Stage};
use samdp_core::SamdpError;

/// Rebuild a semi-aggregated MDP from recorded trajectories.
#[derive(Parser, Debug)]
#[command(name = "samdp", version)]
struct Cli {
    #[command(flatten)]
    opts: Opts,

    #[command(subcommand)]
    command: Command,
}

// Accepted both before and after the subcommand. clap's global args would
// let the later `--set` list replace the earlier one instead of extending it.
#[derive(Args, Debug, Clone, Default)]
struct Opts {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Generate training and held-out rooms trajectories.
    Synth(Opts),
    /// PCA then t-SNE of the step features.
    Embed(Opts),
    /// Cluster with the configured `k` and `w`.
    Cluster(Opts),
    /// Fit the skill-level model to the current clusters.
    Fit(Opts),
    /// Grid search over `k_values` x `w_values`.
    Select(Opts),
    /// Fitness criteria, random-model test and consistency checks.
    Eval(Opts),
    /// Monitor the held-out episodes and report the eject outcome.
    Eject(Opts),
    /// Draw the model over the map as SVG.
    Viz(Opts),
    /// synth, embed, select, eval, eject and viz in order.
    Run(Opts),
}

fn split(c: &Command) -> (Option<Stage>, &Opts) {
    match c {
        Command::Synth(o) => (Some(Stage::Synth), o),
        Command::Embed(o) => (Some(Stage::Embed), o),
        Command::Cluster(o) => (Some(Stage::Cluster), o),
        Command::Fit(o) => (Some(Stage::Fit), o),
        Command::Select(o) => (Some(Stage::Select), o),
        Command::Eval(o) => (Some(Stage::Eval), o),
        Command::Eject(o) => (Some(Stage::Eject), o),
        Command::Viz(o) => (Some(Stage::Viz), o),
        Command::Run(o) => (None, o),
    }
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>, SamdpError> {
    let (stage, sub) = split(&cli.command);
    if cli.opts.config.is_some() && sub.config.is_some() {
        return Err(SamdpError::Config("--config given twice".into()));
    }
    let config = cli.opts.config.as_ref().or(sub.config.as_ref());
    let mut cfg = match config {
        Some(p) => PipelineConfig::load(p).map_err(|e| match e {
            // a missing config file is a configuration problem, not a missing stage input
            SamdpError::MissingInput(p) => SamdpError::Config(format!("config file {} not found", p.display())),
            other => other,
        })?,
        None => PipelineConfig::default(),
    };
    for o in cli.opts.overrides.iter().chain(&sub.overrides) {
        cfg.set_pair(o)?;
    }
    match stage {
        Some(s) => run_stage(s, &cfg),
        None => run_all(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
