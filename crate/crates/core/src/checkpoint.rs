//! On-disk checkpoints.
//!
//! A checkpoint directory holds `model.bin`, `critics.bin` and `policy.bin`,
//! each a flat little-endian `f64` array, plus `lagrange.json` and a
//! `manifest.json` that names every tensor with its shape and offset.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::Agent;
use crate::cmdp::TrainingCosts;
use crate::error::{Error, Result};
use crate::lagrangian::LagrangeState;
use crate::nn::Mlp;
use crate::policy::SquashedGaussianPolicy;
use crate::tensor::Tensor;
use crate::world_model::WorldModelParams;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the file, in `f64` elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Total number of `f64` elements.
    pub len: usize,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub state_dim: usize,
    pub action_dim: usize,
    pub num_constraints: usize,
    pub model_min_stddev: f64,
    pub policy_min_stddev: f64,
    /// Layer sizes per network, keyed `file/network`.
    pub networks: BTreeMap<String, Vec<usize>>,
    pub files: BTreeMap<String, FileEntry>,
    pub episodes: usize,
    pub updates: u64,
    pub sim_interactions: u64,
    pub training_costs: TrainingCosts,
}

/// Everything restored from a checkpoint directory.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub model: WorldModelParams,
    /// SWAG first and second moments, absent before the first snapshot.
    pub swag_moments: Option<(Vec<f64>, Vec<f64>)>,
    pub task_critic: Mlp,
    pub safety_critics: Vec<Mlp>,
    pub policy: SquashedGaussianPolicy,
    pub lagrange: LagrangeState,
}

#[derive(Default)]
struct Writer {
    data: Vec<f64>,
    tensors: Vec<TensorEntry>,
}

impl Writer {
    fn tensor(&mut self, name: String, shape: Vec<usize>, values: &[f64]) {
        self.tensors.push(TensorEntry { name, shape, offset: self.data.len() });
        self.data.extend_from_slice(values);
    }

    fn network(&mut self, file: &str, name: &str, net: &Mlp, networks: &mut BTreeMap<String, Vec<usize>>) {
        networks.insert(format!("{file}/{name}"), net.sizes().to_vec());
        for (i, p) in net.params().iter().enumerate() {
            let kind = if i % 2 == 0 { 'w' } else { 'b' };
            self.tensor(format!("{name}.{kind}{}", i / 2), p.shape().to_vec(), p.data());
        }
    }

    fn finish(self, dir: &Path, file: &str, files: &mut BTreeMap<String, FileEntry>) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().flat_map(|x| x.to_le_bytes()).collect();
        fs::write(dir.join(file), bytes)?;
        files.insert(file.to_string(), FileEntry { len: self.data.len(), tensors: self.tensors });
        Ok(())
    }
}

/// Writes the agent's networks, posterior moments and multipliers into `dir`.
pub fn save(dir: &Path, agent: &Agent) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut networks = BTreeMap::new();
    let mut files = BTreeMap::new();

    let mut w = Writer::default();
    let params = &agent.model.params;
    w.network("model.bin", "dynamics", &params.dynamics, &mut networks);
    w.network("model.bin", "heads", &params.heads, &mut networks);
    let posterior = &agent.model.posterior;
    if !posterior.running_mean().is_empty() {
        let n = posterior.running_mean().len();
        w.tensor("swag.mean".into(), vec![n], posterior.running_mean());
        w.tensor("swag.sq_mean".into(), vec![n], posterior.running_sq_mean());
    }
    w.finish(dir, "model.bin", &mut files)?;

    let mut w = Writer::default();
    w.network("critics.bin", "task", &agent.critics.task, &mut networks);
    for (i, c) in agent.critics.safety.iter().enumerate() {
        w.network("critics.bin", &format!("safety{i}"), c, &mut networks);
    }
    w.finish(dir, "critics.bin", &mut files)?;

    let mut w = Writer::default();
    w.network("policy.bin", "policy", &agent.policy.net, &mut networks);
    w.finish(dir, "policy.bin", &mut files)?;

    fs::write(dir.join("lagrange.json"), serde_json::to_string_pretty(&agent.lagrange)?)?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        state_dim: params.state_dim,
        action_dim: params.action_dim,
        num_constraints: params.num_costs,
        model_min_stddev: params.min_stddev,
        policy_min_stddev: agent.policy.min_stddev,
        networks,
        files,
        episodes: agent.episodes,
        updates: agent.updates,
        sim_interactions: agent.sim_interactions,
        training_costs: agent.training_costs,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    file: String,
    data: Vec<f64>,
    entry: &'a FileEntry,
    networks: &'a BTreeMap<String, Vec<usize>>,
}

impl<'a> Reader<'a> {
    fn open(dir: &Path, file: &str, manifest: &'a Manifest) -> Result<Self> {
        let entry = manifest.files.get(file).ok_or_else(|| bad(format!("manifest lists no {file}")))?;
        let bytes = fs::read(dir.join(file))?;
        if bytes.len() != entry.len * 8 {
            return Err(bad(format!("{file} holds {} bytes, manifest expects {}", bytes.len(), entry.len * 8)));
        }
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { file: file.to_string(), data, entry, networks: &manifest.networks })
    }

    fn tensor(&self, name: &str) -> Result<Option<Tensor>> {
        let Some(t) = self.entry.tensors.iter().find(|t| t.name == name) else {
            return Ok(None);
        };
        let n: usize = t.shape.iter().product();
        let values = self
            .data
            .get(t.offset..t.offset + n)
            .ok_or_else(|| bad(format!("{}:{name} runs past the end of the file", self.file)))?;
        Tensor::new(t.shape.clone(), values.to_vec()).map(Some)
    }

    fn network(&self, name: &str) -> Result<Mlp> {
        let sizes = self
            .networks
            .get(&format!("{}/{name}", self.file))
            .ok_or_else(|| bad(format!("manifest lists no network {name} in {}", self.file)))?;
        let mut params = Vec::new();
        for l in 0..sizes.len().saturating_sub(1) {
            for kind in ['w', 'b'] {
                let t = format!("{name}.{kind}{l}");
                params.push(self.tensor(&t)?.ok_or_else(|| bad(format!("{} has no tensor {t}", self.file)))?);
            }
        }
        Mlp::from_params(sizes, params).map_err(|e| bad(format!("{name}: {e}")))
    }
}

fn expect_dims(net: &Mlp, name: &str, input: usize, output: usize) -> Result<()> {
    if net.input_dim() != input || net.output_dim() != output {
        return Err(bad(format!(
            "{name} maps {} → {}, expected {input} → {output}",
            net.input_dim(),
            net.output_dim()
        )));
    }
    Ok(())
}

impl Checkpoint {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(bad(format!("unsupported checkpoint format {}", manifest.format_version)));
        }
        let (sd, ad, nc) = (manifest.state_dim, manifest.action_dim, manifest.num_constraints);

        let r = Reader::open(dir, "model.bin", &manifest)?;
        let dynamics = r.network("dynamics")?;
        let heads = r.network("heads")?;
        expect_dims(&dynamics, "dynamics", sd + ad, 2 * sd)?;
        expect_dims(&heads, "heads", sd + ad, 1 + nc)?;
        let model = WorldModelParams {
            dynamics,
            heads,
            state_dim: sd,
            action_dim: ad,
            num_costs: nc,
            min_stddev: manifest.model_min_stddev,
        };
        let swag_moments = match (r.tensor("swag.mean")?, r.tensor("swag.sq_mean")?) {
            (Some(m), Some(s)) if m.len() == model.num_params() && s.len() == m.len() => {
                Some((m.data().to_vec(), s.data().to_vec()))
            }
            (None, None) => None,
            _ => return Err(bad("posterior moments do not match the model")),
        };

        let r = Reader::open(dir, "critics.bin", &manifest)?;
        let task_critic = r.network("task")?;
        expect_dims(&task_critic, "task critic", sd, 1)?;
        let safety_critics = (0..nc)
            .map(|i| {
                let c = r.network(&format!("safety{i}"))?;
                expect_dims(&c, "safety critic", sd, 1)?;
                Ok(c)
            })
            .collect::<Result<Vec<_>>>()?;

        let r = Reader::open(dir, "policy.bin", &manifest)?;
        let net = r.network("policy")?;
        expect_dims(&net, "policy", sd, 2 * ad)?;
        let policy = SquashedGaussianPolicy { net, action_dim: ad, min_stddev: manifest.policy_min_stddev };

        let lagrange: LagrangeState = serde_json::from_slice(&fs::read(dir.join("lagrange.json"))?)?;
        if lagrange.lambda.len() != nc {
            return Err(bad(format!("{} multipliers for {nc} constraints", lagrange.lambda.len())));
        }
        Ok(Self { manifest, model, swag_moments, task_critic, safety_critics, policy, lagrange })
    }

    /// Fails unless the checkpoint fits a task with these dimensions.
    pub fn check_dims(&self, state_dim: usize, action_dim: usize, num_constraints: usize) -> Result<()> {
        let m = &self.manifest;
        if (m.state_dim, m.action_dim, m.num_constraints) != (state_dim, action_dim, num_constraints) {
            return Err(bad(format!(
                "checkpoint has dimensions ({}, {}, {}), task has ({state_dim}, {action_dim}, {num_constraints})",
                m.state_dim, m.action_dim, m.num_constraints
            )));
        }
        Ok(())
    }
}
