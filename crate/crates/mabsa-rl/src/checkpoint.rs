//! Checkpoint archive: all parameter tensors keyed by module path in one
//! file, preceded by a JSON manifest describing the architecture.
//!
//! Layout: 8-byte magic, little-endian u64 manifest length, the manifest
//! JSON, then the tensors as raw little-endian f64 in manifest order.
//! Loading verifies the manifest against the active model configuration.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentParams, ModelConfig, Profile, ValuesFrom};
use crate::error::{Error, Result};
use crate::tensor::Mat;

const MAGIC: &[u8; 8] = b"MABSARL1";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub profile: Profile,
    pub d: usize,
    pub aspect_tags: Vec<String>,
    pub sentiment_tags: Vec<String>,
    pub values_from: ValuesFrom,
    pub text_encoder: String,
    pub vision_encoder: String,
    pub agent_version: u64,
    pub model: ModelConfig,
    pub tensors: Vec<TensorInfo>,
}

impl Manifest {
    fn for_agent(agent: &Agent) -> Manifest {
        Manifest {
            profile: agent.cfg.profile,
            d: agent.cfg.d,
            aspect_tags: ["B", "I", "O"].iter().map(|s| s.to_string()).collect(),
            sentiment_tags: ["POS", "NEU", "NEG", "O"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            values_from: agent.cfg.values_from,
            text_encoder: agent.cfg.text_encoder_id(),
            vision_encoder: agent.cfg.vision_encoder_id(),
            agent_version: agent.version,
            model: agent.cfg.clone(),
            tensors: agent
                .params
                .named()
                .iter()
                .map(|(name, m)| TensorInfo {
                    name: name.clone(),
                    rows: m.nrows(),
                    cols: m.ncols(),
                })
                .collect(),
        }
    }

    /// Check the fields that must agree with the active run configuration.
    pub fn verify_against(&self, cfg: &ModelConfig) -> Result<()> {
        let mut mismatches = Vec::new();
        if self.profile != cfg.profile {
            mismatches.push(format!("profile {:?} vs {:?}", self.profile, cfg.profile));
        }
        if self.d != cfg.d {
            mismatches.push(format!("hidden dim {} vs {}", self.d, cfg.d));
        }
        if self.values_from != cfg.values_from {
            mismatches.push(format!(
                "fusion values source {:?} vs {:?}",
                self.values_from, cfg.values_from
            ));
        }
        if self.text_encoder != cfg.text_encoder_id() {
            mismatches.push(format!(
                "text encoder {} vs {}",
                self.text_encoder,
                cfg.text_encoder_id()
            ));
        }
        if self.vision_encoder != cfg.vision_encoder_id() {
            mismatches.push(format!(
                "vision encoder {} vs {}",
                self.vision_encoder,
                cfg.vision_encoder_id()
            ));
        }
        if self.aspect_tags != ["B", "I", "O"] || self.sentiment_tags != ["POS", "NEU", "NEG", "O"]
        {
            mismatches.push("tag sets differ".into());
        }
        if mismatches.is_empty() {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "manifest does not match the active config: {}",
                mismatches.join("; ")
            )))
        }
    }
}

/// Write the agent's parameters and manifest to one archive file.
pub fn save(agent: &Agent, path: &Path) -> Result<()> {
    let manifest = Manifest::for_agent(agent);
    let manifest_bytes = serde_json::to_vec(&manifest)?;
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let write_err = |e| Error::io(path, e);
    out.write_all(MAGIC).map_err(write_err)?;
    out.write_all(&(manifest_bytes.len() as u64).to_le_bytes())
        .map_err(write_err)?;
    out.write_all(&manifest_bytes).map_err(write_err)?;
    for (_, tensor) in agent.params.named() {
        for v in tensor.iter() {
            out.write_all(&v.to_le_bytes()).map_err(write_err)?;
        }
    }
    out.flush().map_err(write_err)?;
    Ok(())
}

/// Read an archive back into a manifest and parameter set.
pub fn load(path: &Path) -> Result<(Manifest, AgentParams)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let read_err = |e| Error::io(path, e);
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic).map_err(read_err)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: not a checkpoint archive",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 8];
    reader.read_exact(&mut len_bytes).map_err(read_err)?;
    let manifest_len = u64::from_le_bytes(len_bytes) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    reader.read_exact(&mut manifest_bytes).map_err(read_err)?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)?;

    // Allocate parameters in the architecture's shape, then fill by name.
    let mut rng = {
        use rand_chacha::rand_core::SeedableRng;
        rand_chacha::ChaCha8Rng::seed_from_u64(0)
    };
    let mut params = AgentParams::init(&manifest.model, &mut rng);
    let expected: Vec<(String, (usize, usize))> = params
        .named()
        .iter()
        .map(|(n, m)| (n.clone(), m.dim()))
        .collect();
    if expected.len() != manifest.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "tensor count mismatch: archive has {}, architecture needs {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    let mut loaded: Vec<Mat> = Vec::with_capacity(manifest.tensors.len());
    for (info, (name, (rows, cols))) in manifest.tensors.iter().zip(expected.iter()) {
        if &info.name != name || info.rows != *rows || info.cols != *cols {
            return Err(Error::Checkpoint(format!(
                "tensor {} ({}x{}) does not match expected {} ({}x{})",
                info.name, info.rows, info.cols, name, rows, cols
            )));
        }
        let mut buf = vec![0u8; info.rows * info.cols * 8];
        reader.read_exact(&mut buf).map_err(read_err)?;
        let values: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        loaded.push(
            Mat::from_shape_vec((info.rows, info.cols), values)
                .map_err(|e| Error::Checkpoint(e.to_string()))?,
        );
    }
    let mut it = loaded.into_iter();
    params.for_each_mut(|_, m| *m = it.next().expect("tensor count checked above"));
    Ok((manifest, params))
}

/// Load a checkpoint and verify it against the expected configuration.
pub fn load_agent(path: &Path, expected: &ModelConfig) -> Result<Agent> {
    let (manifest, params) = load(path)?;
    manifest.verify_against(expected)?;
    let mut agent = Agent::from_parts(manifest.model.clone(), params)?;
    agent.version = manifest.agent_version;
    Ok(agent)
}
