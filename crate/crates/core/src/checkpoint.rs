//! Trained-model persistence.
//!
//! A checkpoint is a directory holding `checkpoint.json` (manifest) and
//! `checkpoint.bin` (every tensor as little-endian f64, in manifest order).
//! Only the online actors and online critic are stored.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Layer, Mlp, Tensor};
use crate::env::ScenarioName;
use crate::error::{CheckpointError, Error, Result};
use crate::madrl::{Algo, CentralCritic, CriticModel, FactoredCritic, Learner, MixingNet};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "checkpoint.json";
pub const BLOB_FILE: &str = "checkpoint.bin";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub algo: Algo,
    pub scenario: ScenarioName,
    pub actors: Vec<Mlp>,
    pub critic: CriticModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkEntry {
    pub name: String,
    pub layer_sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub algo: Algo,
    pub scenario: ScenarioName,
    pub networks: Vec<NetworkEntry>,
    pub tensors: Vec<TensorEntry>,
    /// CRC-32 of the whole blob.
    pub blob_crc32: u32,
}

fn manifest_err(msg: impl Into<String>) -> Error {
    CheckpointError::Manifest(msg.into()).into()
}

fn layer_tensor_names(net: &str, n_layers: usize) -> Vec<String> {
    (0..n_layers)
        .flat_map(|k| {
            [
                format!("{net}.layer{k}.weight"),
                format!("{net}.layer{k}.bias"),
            ]
        })
        .collect()
}

impl Checkpoint {
    pub fn from_learner(learner: &Learner, scenario: ScenarioName) -> Self {
        Self {
            algo: learner.algo,
            scenario,
            actors: learner.actors.online.clone(),
            critic: learner.critic.online_model(),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.actors.len()
    }

    /// Networks in canonical order.
    fn networks(&self) -> Vec<(String, &Mlp)> {
        let mut out: Vec<(String, &Mlp)> = self
            .actors
            .iter()
            .enumerate()
            .map(|(i, a)| (format!("actor.{i}"), a))
            .collect();
        match &self.critic {
            CriticModel::Central(c) => out.push(("critic".into(), &c.net)),
            CriticModel::Factored(c) => {
                out.extend(
                    c.agents
                        .iter()
                        .enumerate()
                        .map(|(i, a)| (format!("critic.agent.{i}"), a)),
                );
                out.push(("mixer.weight".into(), &c.mixer.weight_net));
                out.push(("mixer.bias".into(), &c.mixer.bias_net));
            }
        }
        out
    }

    pub fn manifest(&self) -> Manifest {
        let mut networks = Vec::new();
        let mut tensors = Vec::new();
        let mut offset = 0;
        for (name, net) in self.networks() {
            networks.push(NetworkEntry {
                name: name.clone(),
                layer_sizes: net.layer_sizes(),
                hidden: net.hidden_activation(),
                output: net.output_activation(),
            });
            for (tname, t) in layer_tensor_names(&name, net.layers().len())
                .into_iter()
                .zip(net.params())
            {
                tensors.push(TensorEntry {
                    name: tname,
                    shape: t.shape().to_vec(),
                    offset,
                });
                offset += t.len() * 8;
            }
        }
        Manifest {
            version: FORMAT_VERSION,
            algo: self.algo,
            scenario: self.scenario,
            networks,
            tensors,
            blob_crc32: crc32fast::hash(&self.blob()),
        }
    }

    fn blob(&self) -> Vec<u8> {
        let mut blob = Vec::new();
        for (_, net) in self.networks() {
            for t in net.params() {
                for v in t.data() {
                    blob.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        blob
    }

    pub fn to_bytes(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        Ok((serde_json::to_vec_pretty(&self.manifest())?, self.blob()))
    }

    pub fn from_bytes(manifest: &[u8], blob: &[u8]) -> Result<Self> {
        let m: serde_json::Value =
            serde_json::from_slice(manifest).map_err(|e| manifest_err(e.to_string()))?;
        let version = m
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| manifest_err("missing version"))?;
        if version != FORMAT_VERSION as u64 {
            return Err(CheckpointError::Version {
                found: version as u32,
                expected: FORMAT_VERSION,
            }
            .into());
        }
        let m: Manifest = serde_json::from_value(m).map_err(|e| manifest_err(e.to_string()))?;

        let expected_names: Vec<(String, Vec<usize>)> = m
            .networks
            .iter()
            .flat_map(|n| {
                let sizes = &n.layer_sizes;
                layer_tensor_names(&n.name, sizes.len().saturating_sub(1))
                    .into_iter()
                    .enumerate()
                    .map(move |(k, name)| {
                        let layer = k / 2;
                        let shape = if k % 2 == 0 {
                            vec![sizes[layer + 1], sizes[layer]]
                        } else {
                            vec![sizes[layer + 1]]
                        };
                        (name, shape)
                    })
            })
            .collect();
        if m.tensors.len() != expected_names.len() {
            return Err(CheckpointError::TensorCount {
                found: m.tensors.len(),
                expected: expected_names.len(),
            }
            .into());
        }
        let mut offset = 0;
        for (entry, (name, shape)) in m.tensors.iter().zip(&expected_names) {
            if &entry.name != name || &entry.shape != shape || entry.offset != offset {
                return Err(CheckpointError::Integrity(format!(
                    "tensor `{}` {:?} at byte {} where `{name}` {shape:?} at byte {offset} was expected",
                    entry.name, entry.shape, entry.offset
                ))
                .into());
            }
            offset += shape.iter().product::<usize>() * 8;
        }
        if blob.len() != offset {
            return Err(CheckpointError::BlobLength {
                found: blob.len(),
                expected: offset,
            }
            .into());
        }
        let crc = crc32fast::hash(blob);
        if crc != m.blob_crc32 {
            return Err(CheckpointError::Checksum {
                found: crc,
                expected: m.blob_crc32,
            }
            .into());
        }

        let mut cursor = 0;
        let mut read = |shape: &[usize]| -> Result<Tensor> {
            let len: usize = shape.iter().product();
            let data = blob[cursor..cursor + len * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            cursor += len * 8;
            Tensor::new(shape.to_vec(), data)
        };
        let mut nets = Vec::with_capacity(m.networks.len());
        for n in &m.networks {
            let layers = n
                .layer_sizes
                .windows(2)
                .map(|w| {
                    Ok(Layer {
                        weight: read(&[w[1], w[0]])?,
                        bias: read(&[w[1]])?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            nets.push((
                n.name.as_str(),
                Mlp::from_layers(layers, n.hidden, n.output)?,
            ));
        }

        let mut actors = Vec::new();
        let mut central = None;
        let mut agent_critics = Vec::new();
        let mut mixer_w = None;
        let mut mixer_b = None;
        for (name, net) in nets {
            if name == format!("actor.{}", actors.len()) {
                actors.push(net);
            } else if name == "critic" {
                central = Some(net);
            } else if name == format!("critic.agent.{}", agent_critics.len()) {
                agent_critics.push(net);
            } else if name == "mixer.weight" {
                mixer_w = Some(net);
            } else if name == "mixer.bias" {
                mixer_b = Some(net);
            } else {
                return Err(
                    CheckpointError::Integrity(format!("unexpected network `{name}`")).into(),
                );
            }
        }
        let n = actors.len();
        let critic = match (m.algo.uses_central_critic(), central, mixer_w, mixer_b) {
            (true, Some(net), None, None) if agent_critics.is_empty() => {
                CriticModel::Central(CentralCritic::from_net(net, n)?)
            }
            (false, None, Some(weight_net), Some(bias_net)) if agent_critics.len() == n => {
                CriticModel::Factored(FactoredCritic {
                    agents: agent_critics,
                    mixer: MixingNet {
                        weight_net,
                        bias_net,
                    },
                })
            }
            _ => {
                return Err(CheckpointError::Integrity(format!(
                    "network set does not match algo {}",
                    m.algo
                ))
                .into())
            }
        };
        Ok(Self {
            algo: m.algo,
            scenario: m.scenario,
            actors,
            critic,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (manifest, blob) = self.to_bytes()?;
        let mp = dir.join(MANIFEST_FILE);
        std::fs::write(&mp, manifest).map_err(|e| Error::io(&mp, e))?;
        let bp = dir.join(BLOB_FILE);
        std::fs::write(&bp, blob).map_err(|e| Error::io(&bp, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mp = dir.join(MANIFEST_FILE);
        let manifest = std::fs::read(&mp).map_err(|e| Error::io(&mp, e))?;
        let bp = dir.join(BLOB_FILE);
        let blob = std::fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
        Self::from_bytes(&manifest, &blob)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<()> {
    ckpt.save(dir)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    Checkpoint::load(dir)
}
