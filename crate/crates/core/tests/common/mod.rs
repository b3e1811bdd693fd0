#![allow(dead_code)]

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use fewlabel::data::{LabeledDataset, SyntheticConfig, SyntheticShapes};
use fewlabel::metrics::{EmbedResult, Embedder, GaussianStats};
use fewlabel::models::ModelState;
use fewlabel::trainer::{Method, MethodConfig};
use fewlabel_autodiff::Tensor;

pub fn small_dataset(split: u64) -> LabeledDataset {
    SyntheticShapes::generate(&SyntheticConfig { per_class: 16, ..SyntheticConfig::default() }, split).unwrap()
}

/// Desk networks with a batch of 8 and two rotated/labeled rows per batch.
pub fn small_config(method: Method) -> MethodConfig {
    let mut c = MethodConfig::new(method);
    c.optimizer.batch_size = 8;
    c.rotated_per_batch = 2;
    c.labeled_per_batch = 2;
    c.n_fake = 16;
    c.n_sets = 2;
    c
}

/// Bit-level fingerprint of parameters, spectral-norm vectors and moving statistics.
pub fn fingerprint(state: &ModelState<f32>) -> u64 {
    let mut h = DefaultHasher::new();
    for (name, t) in state.params.iter() {
        name.hash(&mut h);
        t.data().iter().for_each(|v| v.to_bits().hash(&mut h));
    }
    for s in state.spectral.iter().flatten() {
        s.u.iter().for_each(|v| v.to_bits().hash(&mut h));
        s.iterations.hash(&mut h);
    }
    for (name, m) in &state.norms {
        name.hash(&mut h);
        m.mean.iter().chain(&m.var).for_each(|v| v.to_bits().hash(&mut h));
        m.weight.to_bits().hash(&mut h);
    }
    h.finish()
}

pub fn params_fingerprint(state: &ModelState<f32>, prefix: &str) -> u64 {
    let mut h = DefaultHasher::new();
    for (name, t) in state.params.iter().filter(|(n, _)| n.starts_with(prefix)) {
        name.hash(&mut h);
        t.data().iter().for_each(|v| v.to_bits().hash(&mut h));
    }
    h.finish()
}

/// Per-channel means as features and a softmax over them as class
/// probabilities.
pub struct ChannelMeans;

impl Embedder for ChannelMeans {
    fn id(&self) -> &str {
        "channel-means"
    }
    fn dim(&self) -> usize {
        3
    }
    fn num_classes(&self) -> usize {
        3
    }
    fn embed(&mut self, images: &Tensor<f32>) -> fewlabel::Result<EmbedResult> {
        let (n, c) = (images.dim(0), images.dim(1));
        let plane = images.data().len() / (n * c);
        let mut features = Vec::with_capacity(n * c);
        let mut probs = Vec::with_capacity(n * c);
        for chunk in images.data().chunks(plane * c) {
            let means: Vec<f64> = chunk.chunks(plane).map(|p| p.iter().map(|&v| v as f64).sum::<f64>() / plane as f64).collect();
            let z: f64 = means.iter().map(|m| (4.0 * m).exp()).sum();
            probs.extend(means.iter().map(|m| (4.0 * m).exp() / z));
            features.extend(means);
        }
        Ok(EmbedResult { features, probs })
    }
}

pub fn channel_stats(ds: &LabeledDataset) -> GaussianStats {
    let all: Vec<usize> = (0..ds.len()).collect();
    let r = ChannelMeans.embed(&ds.batch_tensor(&all)).unwrap();
    GaussianStats::from_features(&r.features, 3).unwrap()
}

pub fn with_k(mut c: MethodConfig, k: f64) -> MethodConfig {
    c.k_percent = Some(k);
    c
}
