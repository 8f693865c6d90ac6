//! Run directories: metric streams, scores and the final checkpoint.
//!
//! A run directory holds the echoed `config.toml`, `run.json` with the seed,
//! `metrics.jsonl` (one object per episode), `updates.jsonl` (one object per
//! update step), `scores.json` and the checkpoint files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{evaluate_with, train, TrainOutcome};
use crate::checkpoint::{self, Checkpoint};
use crate::cmdp::MetricsReport;
use crate::config::Config;
use crate::error::{Error, Result};

const MARKERS: [&str; 4] = ["run.json", "metrics.jsonl", "scores.json", "manifest.json"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunInfo {
    pub seed: u64,
}

struct JsonLines {
    out: BufWriter<File>,
    failure: Option<Error>,
}

impl JsonLines {
    fn create(path: &Path) -> Result<Self> {
        Ok(Self { out: BufWriter::new(File::create(path)?), failure: None })
    }

    fn write(&mut self, value: &impl Serialize) {
        if self.failure.is_some() {
            return;
        }
        let res = serde_json::to_writer(&mut self.out, value)
            .map_err(Error::from)
            .and_then(|_| writeln!(self.out).and_then(|_| self.out.flush()).map_err(Error::from));
        if let Err(e) = res {
            self.failure = Some(e);
        }
    }

    fn finish(mut self) -> Result<()> {
        match self.failure.take() {
            Some(e) => Err(e),
            None => Ok(self.out.flush()?),
        }
    }
}

/// Trains with `cfg` and `seed`, streaming metrics into `out`. Refuses a
/// directory that already holds a run.
pub fn train_to_dir(cfg: &Config, seed: u64, out: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    if MARKERS.iter().any(|m| out.join(m).exists()) {
        return Err(Error::RunExists(out.to_path_buf()));
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("config.toml"), cfg.to_toml_string()?)?;
    fs::write(out.join("run.json"), serde_json::to_string_pretty(&RunInfo { seed })?)?;
    let mut episodes = JsonLines::create(&out.join("metrics.jsonl"))?;
    let mut updates = JsonLines::create(&out.join("updates.jsonl"))?;
    let outcome = train(cfg, seed, &mut |u| updates.write(u), &mut |m| episodes.write(m))?;
    episodes.finish()?;
    updates.finish()?;
    checkpoint::save(out, &outcome.agent)?;
    fs::write(out.join("scores.json"), serde_json::to_string_pretty(&outcome.scores)?)?;
    Ok(outcome)
}

/// Evaluation overrides; unset fields fall back to the run's config.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    pub episodes: Option<usize>,
    pub deterministic: Option<bool>,
    pub seed: Option<u64>,
}

/// Evaluates the checkpoint stored in a run directory on the run's task.
pub fn eval_dir(dir: &Path, opts: EvalOptions) -> Result<MetricsReport> {
    let cfg = Config::load(&dir.join("config.toml"))?;
    let info: RunInfo = serde_json::from_slice(&fs::read(dir.join("run.json"))?)?;
    let ckpt = Checkpoint::load(dir)?;
    let mut env = cfg.make_env()?;
    ckpt.check_dims(env.observation_dim(), env.action_dim(), env.num_constraints())?;
    let max_steps = cfg.agent.eval_episode_length.unwrap_or(env.horizon());
    evaluate_with(
        &ckpt.policy,
        env.as_mut(),
        opts.episodes.unwrap_or(cfg.agent.eval_episodes),
        max_steps,
        opts.deterministic.unwrap_or(cfg.agent.deterministic_eval),
        &ckpt.manifest.training_costs,
        opts.seed.unwrap_or(info.seed),
    )
}
