//! `chartgaze` — generate charts and tasks, train gaze policies, predict
//! scanpaths, evaluate them and draw overlays.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use chartgaze::cognitive::{EndpointConfig, HttpEndpoint, TextCompletion};
use chartgaze::commands::{self, parse_mode, RunConfig};
use chartgaze::simulator::CognitiveMode;
use chartgaze::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "chartgaze", version, about = "Task-driven scanpath simulation on bar charts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat key = value run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Cognitive controller: rule or external.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Output directory (overrides the configured one).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a chart + task corpus.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train the three gaze policies on the corpus.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Predict scanpaths (model and baselines) for every task.
    Predict {
        #[command(flatten)]
        common: Common,
    },
    /// Compare predicted scanpaths with reference scanpaths.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Predicted scanpaths (JSONL or CSV); defaults to <out>/predictions.jsonl.
        #[arg(long)]
        predicted: Option<PathBuf>,
        /// Reference (e.g. human) scanpaths, JSONL or CSV.
        #[arg(long)]
        reference: PathBuf,
    },
    /// Draw scanpaths over their charts as PPM images.
    Overlay {
        #[command(flatten)]
        common: Common,
        /// Scanpaths to draw; defaults to <out>/predictions.jsonl.
        #[arg(long)]
        scanpaths: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 2,
        Error::Training { .. } => 3,
        Error::Service(_) => 4,
        _ => 1,
    }
}

fn load_config(c: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(m) = &c.mode {
        cfg.mode = parse_mode(m)?;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Gen { common } => {
            let cfg = load_config(&common)?;
            let s = commands::cmd_gen(&cfg, common.jobs)?;
            println!("wrote {} charts and {} tasks to {}", s.charts, s.tasks, cfg.corpus_dir().display());
        }
        Command::Train { common } => {
            let cfg = load_config(&common)?;
            commands::cmd_train(&cfg, common.jobs)?;
            println!("wrote policies to {}", cfg.policy_dir().display());
        }
        Command::Predict { common } => {
            let cfg = load_config(&common)?;
            let endpoint = match cfg.mode {
                CognitiveMode::External => {
                    let ec = EndpointConfig::from_env(Duration::from_millis(cfg.endpoint_timeout_ms), cfg.max_tokens)?;
                    Some(HttpEndpoint::new(ec))
                }
                CognitiveMode::Rule => None,
            };
            let ep = endpoint.as_ref().map(|e| e as &dyn TextCompletion);
            let s = commands::cmd_predict(&cfg, common.jobs, ep)?;
            println!("wrote {} model and {} baseline scanpaths to {}", s.model, s.baselines, cfg.out.display());
        }
        Command::Eval { common, predicted, reference } => {
            let cfg = load_config(&common)?;
            let predicted = predicted.unwrap_or_else(|| cfg.out.join("predictions.jsonl"));
            let report = commands::cmd_eval(&cfg, &predicted, &reference, common.jobs)?;
            print!("{}", report.to_csv());
        }
        Command::Overlay { common, scanpaths } => {
            let cfg = load_config(&common)?;
            let scanpaths = scanpaths.unwrap_or_else(|| cfg.out.join("predictions.jsonl"));
            let written = commands::cmd_overlay(&cfg, &scanpaths)?;
            println!("wrote {} overlays", written.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // usage mistakes are validation failures; --help and --version are not
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
