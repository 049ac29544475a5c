use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use senn_cli::commands::{
    cmd_adversarial, cmd_eval, cmd_explain, cmd_prototypes, cmd_train, EvalMetric, ExplainerName, Session, Split, Target,
};
use senn_cli::{CliError, Result};

#[derive(Parser)]
#[command(name = "senn", about = "Train, explain and evaluate self-explaining neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for checkpoints and reports.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Checkpoint directory; defaults to `<out>/checkpoint`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write its checkpoint and training log.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Explain one prediction.
    Explain {
        #[command(flatten)]
        common: Common,
        /// Row of the chosen split.
        #[arg(long, conflicts_with = "input")]
        index: Option<usize>,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Comma-separated raw feature values.
        #[arg(long)]
        input: Option<String>,
    },
    /// Evaluate explanation quality over the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// faithfulness, stability-continuous, stability-discrete or gaussian-probe.
        #[arg(long, default_value = "stability-continuous")]
        metric: EvalMetric,
        /// Comma-separated explainers, e.g. senn,lime,shap,saliency.
        #[arg(long)]
        explainers: Option<String>,
    },
    /// Search for the nearby input whose explanation changes most.
    Adversarial {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "senn")]
        explainers: String,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// List the training examples that best represent each learned concept.
    Prototypes {
        #[command(flatten)]
        common: Common,
    },
}

impl Common {
    fn session(&self) -> Result<Session> {
        Session::open(&self.config, self.seed, &self.out)
    }

    fn checkpoint(&self, s: &Session) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| s.default_checkpoint())
    }
}

/// Writes a line to stdout; a closed pipe (e.g. `| head`) ends the process quietly.
fn emit(line: &str) {
    let mut out = io::stdout().lock();
    if let Err(e) = writeln!(out, "{line}") {
        if e.kind() == io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        panic!("failed writing to stdout: {e}");
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    emit(&serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common } => {
            let s = common.session()?;
            print_json(&cmd_train(&s)?)
        }
        Command::Explain { common, index, split, input } => {
            let s = common.session()?;
            let target = match (index, input) {
                (_, Some(text)) => Target::Input(parse_values(&text)?),
                (index, None) => Target::Index { split, index: index.unwrap_or(0) },
            };
            print_json(&cmd_explain(&s, &common.checkpoint(&s), &target)?)
        }
        Command::Eval { common, metric, explainers } => {
            let s = common.session()?;
            let list = match explainers {
                Some(l) => ExplainerName::parse_list(&l)?,
                None => ExplainerName::DEFAULTS.to_vec(),
            };
            let out = cmd_eval(&s, &common.checkpoint(&s), metric, &list)?;
            emit("dataset,method,metric,q1,median,q3,mean,n");
            for r in &out.aggregate {
                emit(&format!("{},{},{},{},{},{},{},{}", r.dataset, r.method, r.metric, r.q1, r.median, r.q3, r.mean, r.n));
            }
            eprintln!("wrote {} and {}", out.jsonl.display(), out.csv.display());
            Ok(())
        }
        Command::Adversarial { common, explainers, index } => {
            let s = common.session()?;
            let checkpoint = common.checkpoint(&s);
            for name in ExplainerName::parse_list(&explainers)? {
                match cmd_adversarial(&s, &checkpoint, name, index)? {
                    Some(r) => print_json(&r)?,
                    None => eprintln!("{name}: no admissible neighbor found"),
                }
            }
            Ok(())
        }
        Command::Prototypes { common } => {
            let s = common.session()?;
            for r in cmd_prototypes(&s, &common.checkpoint(&s))? {
                emit(&serde_json::to_string(&r)?);
            }
            Ok(())
        }
    }
}

fn parse_values(text: &str) -> Result<Vec<f64>> {
    text.split(',').map(|v| v.trim().parse::<f64>().map_err(|e| CliError::Usage(format!("bad input value `{v}`: {e}")))).collect()
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
