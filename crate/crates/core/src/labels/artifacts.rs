//! On-disk form of pretrained label providers.
//!
//! A provider directory holds `provider.json` ([`ProviderMeta`]), plus
//! `network.safetensors` for providers that wrap a network and
//! `clusters.json` for clustering providers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_prior, ClusterModel, LabelMode, LabelProvider, ProviderKind};
use crate::checkpoint::TensorFile;
use crate::error::{io_err, Error, Result};
use crate::models::{ConvNet, ConvNetSpec};

pub const PROVIDER_FILE: &str = "provider.json";
pub const NETWORK_FILE: &str = "network.safetensors";
pub const CLUSTERS_FILE: &str = "clusters.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderMeta {
    pub kind: ProviderKind,
    pub mode: LabelMode,
    pub num_classes: usize,
    pub prior: Vec<f64>,
    pub dataset_id: String,
    pub seed: u64,
    #[serde(default)]
    pub k_percent: Option<f64>,
    /// Accuracy of the class head on examples whose labels were withheld.
    #[serde(default)]
    pub held_out_accuracy: Option<f64>,
    /// Rotation accuracy on the training images.
    #[serde(default)]
    pub rotation_accuracy: Option<f64>,
}

impl ProviderMeta {
    pub fn for_provider(p: &LabelProvider, dataset_id: &str, seed: u64) -> Self {
        ProviderMeta {
            kind: p.kind,
            mode: p.mode,
            num_classes: p.num_classes,
            prior: p.prior.clone(),
            dataset_id: dataset_id.to_string(),
            seed,
            k_percent: None,
            held_out_accuracy: None,
            rotation_accuracy: None,
        }
    }

    /// Parses and validates a metadata document.
    pub fn parse(text: &str) -> Result<Self> {
        let meta: ProviderMeta = serde_json::from_str(text)?;
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<()> {
        check_prior(&self.prior)?;
        if self.num_classes == 0 || self.prior.len() != self.num_classes {
            return Err(Error::Argument(format!(
                "provider metadata has {} prior entries for {} classes",
                self.prior.len(),
                self.num_classes
            )));
        }
        if self.kind == ProviderKind::Single && self.num_classes != 1 {
            return Err(Error::Argument("single-label provider must have one class".into()));
        }
        for v in [self.k_percent, self.held_out_accuracy, self.rotation_accuracy].into_iter().flatten() {
            if !v.is_finite() {
                return Err(Error::Argument("provider metadata holds a non-finite number".into()));
            }
        }
        Ok(())
    }
}

/// Writes a network's weights with its spec and `extra` in the metadata.
pub fn save_network(path: &Path, net: &ConvNet<f32>, extra: serde_json::Map<String, serde_json::Value>) -> Result<()> {
    let mut file = TensorFile::new();
    file.put_model(&net.state);
    let meta = file.meta_mut();
    meta.insert("spec".into(), serde_json::to_value(&net.spec)?);
    meta.extend(extra);
    file.save(path)
}

/// Reads a network written by [`save_network`] and returns its metadata.
pub fn load_network(path: &Path) -> Result<(ConvNet<f32>, serde_json::Map<String, serde_json::Value>)> {
    let mut file = TensorFile::load(path)?;
    let spec: ConvNetSpec = serde_json::from_value(
        file.metadata.get("spec").cloned().ok_or_else(|| Error::Checkpoint(format!("{} has no network spec", path.display())))?,
    )?;
    let mut net = ConvNet::new(spec, 0)?;
    file.get_model(&mut net.state)?;
    let meta = file.meta_mut().clone();
    Ok((net, meta))
}

pub fn save_provider(dir: &Path, provider: &LabelProvider, meta: &ProviderMeta) -> Result<()> {
    meta.validate()?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    if let Some(net) = provider.network() {
        save_network(&dir.join(NETWORK_FILE), net, Default::default())?;
    }
    if let Some(model) = provider.cluster_model() {
        write_atomic(&dir.join(CLUSTERS_FILE), &serde_json::to_string(model)?)?;
    }
    // Metadata last: its presence marks a complete artifact.
    write_atomic(&dir.join(PROVIDER_FILE), &serde_json::to_string_pretty(meta)?)
}

/// Rebuilds a provider saved by [`save_provider`].
pub fn load_provider(dir: &Path) -> Result<(LabelProvider, ProviderMeta)> {
    let meta_path = dir.join(PROVIDER_FILE);
    if !meta_path.exists() {
        return Err(Error::MissingArtifact { path: meta_path, reason: "provider metadata not found; run pretraining".into() });
    }
    let text = std::fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta = ProviderMeta::parse(&text)?;
    let provider = match meta.kind {
        ProviderKind::GroundTruth => LabelProvider::ground_truth(meta.num_classes),
        ProviderKind::Single => LabelProvider::single(),
        ProviderKind::Random => LabelProvider::random(meta.num_classes, meta.seed),
        ProviderKind::Cotrain => LabelProvider::cotrain(meta.num_classes),
        ProviderKind::Cluster => {
            let (net, _) = load_network(&dir.join(NETWORK_FILE))?;
            let path = dir.join(CLUSTERS_FILE);
            if !path.exists() {
                return Err(Error::MissingArtifact { path, reason: "cluster centroids not found".into() });
            }
            let model: ClusterModel = serde_json::from_str(&std::fs::read_to_string(&path).map_err(io_err(&path))?)?;
            if model.counts.len() * model.dim != model.centroids.len() || model.centroids.iter().any(|c| !c.is_finite()) {
                return Err(Error::Checkpoint(format!("{} holds malformed centroids", path.display())));
            }
            LabelProvider::cluster_with_prior(net, model, meta.prior.clone())?
        }
        ProviderKind::S2l => {
            let (net, _) = load_network(&dir.join(NETWORK_FILE))?;
            LabelProvider::s2l(net, meta.mode)?
        }
    };
    if provider.num_classes != meta.num_classes {
        return Err(Error::Checkpoint(format!(
            "provider in {} has {} classes, metadata says {}",
            dir.display(),
            provider.num_classes,
            meta.num_classes
        )));
    }
    Ok((provider, meta))
}

pub(crate) fn write_atomic(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}
