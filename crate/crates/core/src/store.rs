//! Single-file JSON model format: architecture, weights and metadata.
//!
//! Weights are stored per parameter as a shape plus base64 of the values as
//! little-endian `f32`. Keys are written in sorted order, so saving the same
//! network twice gives identical bytes unless a timestamp is included.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::data::class_names;
use crate::error::{Error, Result};
use crate::nn::{Network, NetworkSpec};
use crate::tensor::Tensor;
use crate::train::TrainConfig;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub shape: Vec<usize>,
    /// Base64 of the little-endian `f32` values.
    pub values: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub class_names: Vec<String>,
    #[serde(default)]
    pub training: Option<TrainConfig>,
    /// Seconds since the Unix epoch.
    #[serde(default)]
    pub created_unix: Option<u64>,
}

impl Default for ModelMetadata {
    fn default() -> Self {
        Self {
            class_names: class_names(),
            training: None,
            created_unix: None,
        }
    }
}

impl ModelMetadata {
    pub fn with_training(mut self, config: &TrainConfig) -> Self {
        self.training = Some(config.clone());
        self
    }

    /// Stamps the current time.
    pub fn stamped(mut self) -> Self {
        self.created_unix = SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u64,
    pub architecture: NetworkSpec,
    pub weights: BTreeMap<String, WeightEntry>,
    pub metadata: ModelMetadata,
}

impl ModelFile {
    pub fn from_network(net: &Network<f32>, metadata: ModelMetadata) -> Result<Self> {
        let mut weights = BTreeMap::new();
        for p in net.params() {
            if !p.value.all_finite() {
                return Err(Error::Finite(p.name.clone()));
            }
            let bytes: Vec<u8> = p.value.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            weights.insert(
                p.name.clone(),
                WeightEntry {
                    shape: p.value.shape().to_vec(),
                    values: BASE64.encode(bytes),
                },
            );
        }
        Ok(Self {
            format_version: FORMAT_VERSION,
            architecture: net.spec().clone(),
            weights,
            metadata,
        })
    }

    /// Rebuilds the network, checking every weight against the architecture.
    pub fn to_network(&self) -> Result<Network<f32>> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        self.architecture.validate()?;
        let mut values = BTreeMap::new();
        for (name, entry) in &self.weights {
            let bytes = BASE64
                .decode(entry.values.as_bytes())
                .map_err(|e| Error::Schema(format!("weight {name} is not valid base64: {e}")))?;
            let expected: usize = entry.shape.iter().product();
            if bytes.len() != expected * 4 {
                return Err(Error::Schema(format!(
                    "weight {name} has {} bytes, shape {:?} needs {}",
                    bytes.len(),
                    entry.shape,
                    expected * 4
                )));
            }
            let data: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Finite(name.clone()));
            }
            values.insert(name.clone(), Tensor::new(entry.shape.clone(), data)?);
        }
        let net = Network::from_params(self.architecture.clone(), values)?;
        if self.metadata.class_names.len() != net.num_classes() {
            return Err(Error::Schema(format!(
                "{} class names for a {}-class network",
                self.metadata.class_names.len(),
                net.num_classes()
            )));
        }
        Ok(net)
    }

    /// Total number of stored weight values.
    pub fn weight_count(&self) -> usize {
        self.weights.values().map(|w| w.shape.iter().product::<usize>()).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses a document, checking `format_version` before anything else.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value
            .get("format_version")
            .ok_or_else(|| Error::Schema("model file has no format_version".into()))?
            .as_u64()
            .ok_or_else(|| Error::Schema("format_version must be a non-negative integer".into()))?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))
    }
}

pub fn save_model(net: &Network<f32>, metadata: ModelMetadata, path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let file = ModelFile::from_network(net, metadata)?;
    std::fs::write(path, file.to_json()?).map_err(|e| Error::io(path, e))?;
    Ok(file)
}

/// Reads a model file, returning the network and its metadata.
pub fn read_model(path: impl AsRef<Path>) -> Result<(Network<f32>, ModelMetadata)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file = ModelFile::from_json(&text)?;
    let net = file.to_network()?;
    Ok((net, file.metadata))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network<f32>> {
    read_model(path).map(|(net, _)| net)
}
