use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lambda_core::cmdp::{normalize_metrics, MetricsReport, Thresholds};
use lambda_core::config::{Config, Variant};
use lambda_core::envs::TabularCmdp;
use lambda_core::lp::{solve_cmdp, Method};
use lambda_core::report::{aggregate, emit_plot_data, read_stream, summarize_scores};
use lambda_core::run::{eval_dir, train_to_dir, EvalOptions};
use lambda_core::{Error, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "lambda", version, about = "Constrained model-based policy optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one seed and write metrics, scores and a checkpoint into --out.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Task name, `grid8` or `point`.
        #[arg(long)]
        env: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        eval_episodes: Option<usize>,
        #[arg(long)]
        deterministic_eval: Option<bool>,
        /// `lambda`, `greedy` or `unsafe`.
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the checkpoint of a finished run.
    Eval {
        run: PathBuf,
        #[arg(long)]
        eval_episodes: Option<usize>,
        #[arg(long)]
        deterministic_eval: Option<bool>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve a tabular CMDP exactly, from a JSON file or the configured grid task.
    LpSolve {
        file: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = LpMethod::Auto)]
        method: LpMethod,
        /// Include the occupancy measure and the optimal policy.
        #[arg(long)]
        full: bool,
    },
    /// Aggregate metric streams across seeds into mean and 5%/95% bands.
    Report {
        /// Run directories or JSON-lines files.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Directory for one CSV per metric.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Normalize scores against characteristic metrics of an unconstrained agent.
    Normalize {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        characteristic: PathBuf,
        /// Threshold per constraint; defaults to the config's thresholds.
        #[arg(long = "threshold")]
        thresholds: Vec<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LpMethod {
    Auto,
    Simplex,
    Dual,
}

impl From<LpMethod> for Method {
    fn from(m: LpMethod) -> Self {
        match m {
            LpMethod::Auto => Method::Auto,
            LpMethod::Simplex => Method::Simplex,
            LpMethod::Dual => Method::Dual,
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    path.map_or_else(|| Ok(Config::default()), Config::load)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn print(value: &impl serde::Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    Ok(writeln!(out)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, env, seed, episodes, eval_episodes, deterministic_eval, variant, out } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(env) = env {
                cfg.env.name = env;
            }
            if let Some(n) = episodes {
                cfg.agent.episodes = n;
            }
            if let Some(n) = eval_episodes {
                cfg.agent.eval_episodes = n;
            }
            if let Some(d) = deterministic_eval {
                cfg.agent.deterministic_eval = d;
            }
            if let Some(v) = variant {
                cfg.agent.variant = v;
            }
            let outcome = train_to_dir(&cfg, seed, &out)?;
            print(&outcome.scores)
        }
        Command::Eval { run, eval_episodes, deterministic_eval, seed } => {
            let opts = EvalOptions { episodes: eval_episodes, deterministic: deterministic_eval, seed };
            print(&eval_dir(&run, opts)?)
        }
        Command::LpSolve { file, config, method, full } => {
            let cmdp: TabularCmdp = match file {
                Some(f) => read_json(&f)?,
                None => {
                    let cfg = load_config(config.as_deref())?;
                    let mut cmdp = cfg.grid_layout().to_cmdp()?;
                    cmdp.thresholds = cfg.thresholds();
                    cmdp
                }
            };
            let sol = solve_cmdp(&cmdp, method.into())?;
            if full {
                print(&sol)
            } else {
                print(&json!({ "value": sol.value, "constraint_values": sol.constraint_values, "method": sol.method }))
            }
        }
        Command::Report { runs, out } => {
            let mut streams = Vec::new();
            let mut scores = Vec::new();
            for r in &runs {
                if r.is_dir() {
                    streams.push(read_stream(&r.join("metrics.jsonl"))?);
                    let s = r.join("scores.json");
                    if s.exists() {
                        scores.push(read_json::<MetricsReport>(&s)?);
                    }
                } else {
                    streams.push(read_stream(r)?);
                }
            }
            let agg = aggregate(&streams)?;
            let files = match &out {
                Some(dir) => emit_plot_data(&agg, dir)?,
                None => Vec::new(),
            };
            let finals: serde_json::Map<String, serde_json::Value> = agg
                .iter()
                .filter_map(|(k, rows)| rows.last().map(|b| (k.clone(), json!(b))))
                .collect();
            let summary = if scores.is_empty() { None } else { Some(summarize_scores(&scores)?) };
            print(&json!({ "seeds": streams.len(), "final": finals, "scores": summary, "files": files }))
        }
        Command::Normalize { scores, characteristic, thresholds, config } => {
            let raw: MetricsReport = read_json(&scores)?;
            let reference: MetricsReport = read_json(&characteristic)?;
            let d = if thresholds.is_empty() { load_config(config.as_deref())?.thresholds() } else { thresholds };
            if d.len() != raw.jc.len() || d.len() != reference.jc.len() {
                return Err(Error::Shape(format!(
                    "{} thresholds for {} and {} constraint values",
                    d.len(),
                    raw.jc.len(),
                    reference.jc.len()
                )));
            }
            print(&normalize_metrics(&raw, &reference, &Thresholds::new(d)?)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LAMBDA_CORE_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
