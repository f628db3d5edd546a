use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crowdrank::pipeline::{self, PipelineConfig, RunSummary};
use crowdrank::{Error, Result};

#[derive(Parser)]
#[command(name = "crowdrank", version, about = "Rank forecasters and score top-ranked crowds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file; missing keys take their defaults.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. `--set seed=7` or `--set cutoffs=[10,100]`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and normalize the question and forecast files.
    Ingest(Common),
    /// Fit the topic model and print each topic's top words.
    Topics(Common),
    /// Train the pairwise comparator on the training questions.
    Train(Common),
    /// Rank the forecasters of each evaluation question.
    Rank(Common),
    /// Score neural, baseline and unweighted crowds on the evaluation questions.
    Evaluate(Common),
    /// Generate a synthetic crowd.
    Simulate(Common),
    /// Render an evaluation summary as SVG.
    Report {
        #[command(flatten)]
        common: Common,
        /// Summary CSV to render; defaults to this config's evaluate run.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

impl Common {
    fn config(&self) -> Result<PipelineConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(d) = &self.output_dir {
            overrides.push(format!("output_dir={}", serde_json::Value::String(d.display().to_string())));
        }
        PipelineConfig::load(self.config.as_deref(), &overrides)
    }
}

fn run(cli: Cli) -> Result<RunSummary> {
    match cli.command {
        Command::Ingest(c) => pipeline::run_ingest(&c.config()?),
        Command::Topics(c) => pipeline::run_topics(&c.config()?),
        Command::Train(c) => pipeline::run_train(&c.config()?),
        Command::Rank(c) => pipeline::run_rank(&c.config()?),
        Command::Evaluate(c) => pipeline::run_evaluate(&c.config()?),
        Command::Simulate(c) => pipeline::run_simulate(&c.config()?),
        Command::Report { common, summary } => pipeline::run_report(&common.config()?, summary.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(summary) => {
            let mut out = std::io::stdout().lock();
            for line in &summary.lines {
                let _ = writeln!(out, "{line}");
            }
            let _ = writeln!(out, "wrote {}", summary.run_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::NonFiniteLoss { .. } = e {
                eprintln!("hint: lower learning_rate or momentum");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
