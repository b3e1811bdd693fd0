//! Named-tensor files (safetensors container, f32 payloads) with a JSON
//! metadata document.

use std::collections::BTreeMap;
use std::path::Path;

use fewlabel_autodiff::Tensor;
use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

use crate::error::{io_err, Error, Result};
use crate::models::{ModelState, MovingStats};

/// Key under which the JSON metadata document is stored in the header.
const META_KEY: &str = "fewlabel";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorFile {
    pub tensors: BTreeMap<String, Tensor<f32>>,
    pub metadata: serde_json::Value,
}

impl TensorFile {
    pub fn new() -> Self {
        TensorFile { tensors: BTreeMap::new(), metadata: serde_json::Value::Object(Default::default()) }
    }

    pub fn take(&mut self, name: &str) -> Result<Tensor<f32>> {
        self.tensors.remove(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn meta_mut(&mut self) -> &mut serde_json::Map<String, serde_json::Value> {
        if !self.metadata.is_object() {
            self.metadata = serde_json::Value::Object(Default::default());
        }
        self.metadata.as_object_mut().expect("object")
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let bytes: Vec<(String, Vec<u8>, Vec<usize>)> = self
            .tensors
            .iter()
            .map(|(n, t)| (n.clone(), t.data().iter().flat_map(|v| v.to_le_bytes()).collect(), t.shape().to_vec()))
            .collect();
        let views = bytes
            .iter()
            .map(|(n, b, s)| Ok((n.as_str(), TensorView::new(Dtype::F32, s.clone(), b).map_err(ck)?)))
            .collect::<Result<Vec<_>>>()?;
        let meta = [(META_KEY.to_string(), serde_json::to_string(&self.metadata)?)].into_iter().collect();
        safetensors::serialize(views, &Some(meta)).map_err(ck)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let st = SafeTensors::deserialize(bytes).map_err(ck)?;
        let mut tensors = BTreeMap::new();
        for (name, view) in st.tensors() {
            if view.dtype() != Dtype::F32 {
                return Err(Error::Checkpoint(format!("tensor {name} has dtype {:?}, expected F32", view.dtype())));
            }
            let data: Vec<f32> =
                view.data().chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.insert(name, Tensor::new(view.shape(), data));
        }
        let (_, header) = SafeTensors::read_metadata(bytes).map_err(ck)?;
        let metadata = match header.metadata().as_ref().and_then(|m| m.get(META_KEY)) {
            Some(s) => serde_json::from_str(s)?,
            None => serde_json::Value::Object(Default::default()),
        };
        if !metadata.is_object() {
            return Err(Error::Checkpoint("checkpoint metadata is not a JSON object".into()));
        }
        Ok(TensorFile { tensors, metadata })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        // Write-then-rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, path).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact { path: path.to_path_buf(), reason: "file not found".into() });
        }
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Self::decode(&bytes)
    }

    /// Adds parameters, power-iteration vectors and moving statistics.
    pub fn put_model(&mut self, state: &ModelState<f32>) {
        for (name, t) in state.params.iter() {
            self.tensors.insert(name.to_string(), t.clone());
        }
        for (id, sn) in state.spectral.iter().enumerate() {
            if let Some(sn) = sn {
                let name = state.params.name(crate::models::ParamId(id));
                self.tensors.insert(format!("{name}/sn_u"), Tensor::new(&[sn.u.len()], sn.u.clone()));
            }
        }
        let mut weights = serde_json::Map::new();
        for (layer, stats) in &state.norms {
            let c = stats.mean.len();
            self.tensors.insert(format!("{layer}/moving_mean"), Tensor::new(&[c], stats.mean.clone()));
            self.tensors.insert(format!("{layer}/moving_var"), Tensor::new(&[c], stats.var.clone()));
            weights.insert(layer.clone(), serde_json::json!(stats.weight));
        }
        if !weights.is_empty() {
            let all = self.meta_mut().entry("norm_weights").or_insert_with(|| serde_json::json!({}));
            if let Some(obj) = all.as_object_mut() {
                obj.extend(weights);
            }
        }
    }

    /// Restores everything written by [`TensorFile::put_model`].
    pub fn get_model(&mut self, state: &mut ModelState<f32>) -> Result<()> {
        let names: Vec<String> = state.params.iter().map(|(n, _)| n.to_string()).collect();
        for (i, name) in names.iter().enumerate() {
            let t = self.take(name)?;
            let slot = state.params.get_mut(crate::models::ParamId(i));
            if t.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!("{name}: shape {:?}, expected {:?}", t.shape(), slot.shape())));
            }
            *slot = t;
            if let Some(sn) = &mut state.spectral[i] {
                let u = self.take(&format!("{name}/sn_u"))?;
                if u.numel() != sn.u.len() {
                    return Err(Error::Checkpoint(format!("{name}/sn_u has wrong length")));
                }
                sn.u = u.into_data();
            }
        }
        let weights = self.metadata.get("norm_weights").cloned().unwrap_or_default();
        for (layer, stats) in state.norms.iter_mut() {
            let mean = self.take(&format!("{layer}/moving_mean"))?.into_data();
            let var = self.take(&format!("{layer}/moving_var"))?.into_data();
            if mean.len() != stats.mean.len() || var.len() != stats.var.len() {
                return Err(Error::Checkpoint(format!("{layer}: moving statistics have wrong length")));
            }
            let weight = weights
                .get(layer.as_str())
                .and_then(serde_json::Value::as_f64)
                .ok_or_else(|| Error::Checkpoint(format!("{layer}: missing statistics weight")))?;
            *stats = MovingStats { mean, var, weight };
        }
        Ok(())
    }
}

fn ck(e: safetensors::SafeTensorError) -> Error {
    Error::Checkpoint(e.to_string())
}
