//! `heatrank`: generate data, train, explain, evaluate, rank and render.
//!
//! Every subcommand prints a JSON summary on stdout. Failures print
//! `{"kind": ..., "message": ..., "path": ...}` on stderr and exit with 1
//! (2 for command-line errors).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use heatrank::data::DefectKind;
use heatrank::heatmap::Pooling;
use heatrank::method::MethodId;
use heatrank::metrics::MetricId;
use heatrank::pipeline::{Preset, Run, RunConfig, Stage};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "heatrank", version, about = "Evaluate and rank attribution heatmaps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    options: Options,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Synthesize the image dataset.
    Generate,
    /// Train the classifier and write the canonized checkpoint.
    Train,
    /// Compute heatmaps for the evaluation images.
    Explain,
    /// Score the heatmaps with every configured metric.
    Evaluate,
    /// Rank the methods by mean reciprocal rank.
    Rank,
    /// Write heatmap PNGs.
    Render,
    /// Run every stage for every configured dataset.
    Pipeline,
    /// Print the resolved configuration.
    Config,
}

#[derive(Args, Debug)]
struct Options {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration used when no --config is given.
    #[arg(long, global = true, default_value = "desk")]
    preset: Preset,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for evaluation (0: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    datasets: Option<Vec<DefectKind>>,
    #[arg(long, global = true, value_delimiter = ',')]
    methods: Option<Vec<MethodId>>,
    #[arg(long, global = true, value_delimiter = ',')]
    poolings: Option<Vec<Pooling>>,
    #[arg(long, global = true, value_delimiter = ',')]
    metrics: Option<Vec<MetricId>>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Run even when upstream artifacts were produced with another config.
    #[arg(long, global = true)]
    force: bool,
}

fn resolve(o: &Options) -> heatrank::Result<RunConfig> {
    let mut c = match &o.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::preset(o.preset),
    };
    if let Some(s) = o.seed {
        c.seed = s;
    }
    if let Some(w) = o.workers {
        c.workers = w;
    }
    if let Some(d) = &o.datasets {
        c.datasets = d.clone();
    }
    if let Some(m) = &o.methods {
        c.methods = m.clone();
    }
    if let Some(p) = &o.poolings {
        c.poolings = p.clone();
    }
    if let Some(m) = &o.metrics {
        c.metrics = m.clone();
    }
    c.validate()?;
    Ok(c)
}

fn execute(cli: &Cli) -> heatrank::Result<serde_json::Value> {
    let config = resolve(&cli.options)?;
    let stage = match cli.command {
        Command::Config => return Ok(serde_json::to_value(&config)?),
        Command::Pipeline => None,
        Command::Generate => Some(Stage::Generate),
        Command::Train => Some(Stage::Train),
        Command::Explain => Some(Stage::Explain),
        Command::Evaluate => Some(Stage::Evaluate),
        Command::Rank => Some(Stage::Rank),
        Command::Render => Some(Stage::Render),
    };
    let run = Run::new(config, &cli.options.out, cli.options.force)?;
    match stage {
        None => run.pipeline(),
        Some(stage) => {
            let results = run
                .config
                .datasets
                .iter()
                .map(|&kind| run.run(kind, stage))
                .collect::<heatrank::Result<Vec<_>>>()?;
            Ok(if results.len() == 1 { results.into_iter().next().unwrap() } else { json!(results) })
        }
    }
}

fn fail(kind: &str, message: String, path: Option<String>, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "kind": kind, "message": message, "path": path }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim_end().to_string(), None, 2),
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), e.to_string(), e.path().map(|p| p.display().to_string()), 1),
    }
}
