use fewlabel_autodiff::Tensor;

use super::{fid, inception_score, GaussianStats, RIDGE};
use crate::data::LabeledDataset;
use crate::error::{bail_arg, Error, Result};
use crate::labels::{softmax_row, train_classifier, PretrainConfig, CLASS_HEAD};
use crate::models::ConvNet;
use crate::rng::fnv1a;

/// Features and class probabilities of a batch of images.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedResult {
    /// Row-major `[n, dim]`.
    pub features: Vec<f64>,
    /// Row-major `[n, num_classes]`.
    pub probs: Vec<f64>,
}

/// A frozen image embedding plus classifier. Scores are only comparable
/// between runs that report the same [`Embedder::id`].
pub trait Embedder {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn embed(&mut self, images: &Tensor<f32>) -> Result<EmbedResult>;
}

/// Embedder backed by a trained classifier network: its pooled
/// representation is the feature, its class head the classifier.
#[derive(Clone, Debug)]
pub struct ConvNetEmbedder {
    pub net: ConvNet<f32>,
    id: String,
    head: usize,
}

impl ConvNetEmbedder {
    pub fn new(net: ConvNet<f32>) -> Result<Self> {
        let head = net.head_index(CLASS_HEAD).ok_or_else(|| Error::Argument("embedder network needs a class head".into()))?;
        Ok(ConvNetEmbedder { id: embedder_id(&net), net, head })
    }
}

impl Embedder for ConvNetEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.net.spec.representation_dim()
    }

    fn num_classes(&self) -> usize {
        self.net.spec.heads[self.head].1
    }

    fn embed(&mut self, images: &Tensor<f32>) -> Result<EmbedResult> {
        let (repr, heads) = self.net.infer(images, 256)?;
        let k = self.num_classes();
        Ok(EmbedResult {
            features: repr.data().iter().map(|&v| v as f64).collect(),
            probs: heads[self.head].data().chunks(k).flat_map(softmax_row).map(f64::from).collect(),
        })
    }
}

/// `{name}-w{widths}-{hash}` where the hash covers every parameter and
/// moving statistic, so equal ids imply equal outputs.
pub fn embedder_id(net: &ConvNet<f32>) -> String {
    let mut bytes = Vec::new();
    for (name, t) in net.state.params.iter() {
        bytes.extend_from_slice(name.as_bytes());
        t.data().iter().for_each(|v| bytes.extend_from_slice(&v.to_le_bytes()));
    }
    for (name, st) in &net.state.norms {
        bytes.extend_from_slice(name.as_bytes());
        st.mean.iter().chain(&st.var).for_each(|v| bytes.extend_from_slice(&v.to_le_bytes()));
        bytes.extend_from_slice(&st.weight.to_le_bytes());
    }
    let widths: Vec<String> = net.spec.widths.iter().map(usize::to_string).collect();
    format!("{}-w{}-{:016x}", net.spec.name, widths.join("."), fnv1a(&bytes))
}

/// Trains the evaluation classifier on a fully labeled dataset.
pub fn train_embedder(dataset: &LabeledDataset, config: &PretrainConfig) -> Result<ConvNetEmbedder> {
    ConvNetEmbedder::new(train_classifier(dataset, config, "embedder")?)
}

/// Statistics of the embedded images of `dataset`.
pub fn dataset_stats(embedder: &mut dyn Embedder, dataset: &LabeledDataset, chunk: usize) -> Result<GaussianStats> {
    let mut features = Vec::new();
    let mut start = 0;
    while start < dataset.len() {
        let len = chunk.max(1).min(dataset.len() - start);
        let idx: Vec<usize> = (start..start + len).collect();
        features.extend(embedder.embed(&dataset.batch_tensor(&idx))?.features);
        start += len;
    }
    GaussianStats::from_features(&features, embedder.dim())
}

/// Scores of one evaluation pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub fid_mean: f64,
    pub is_mean: f64,
    pub fids: Vec<f64>,
    pub inception_scores: Vec<f64>,
    pub n_fake: usize,
    pub n_sets: usize,
    /// Number of fake sets actually drawn and scored.
    pub sets_evaluated: usize,
    pub images_embedded: usize,
    pub ridge_applied: bool,
}

/// Draws `n_sets` fake sets of `n_fake` images and averages FID (against
/// the fixed `real` statistics) and IS over them.
///
/// `sample(set, offset, len)` must return `len` images of set `set`
/// starting at `offset`; sets are requested in chunks of `chunk`.
pub fn evaluate_model(
    mut sample: impl FnMut(usize, usize, usize) -> Result<Tensor<f32>>,
    real: &GaussianStats,
    embedder: &mut dyn Embedder,
    n_fake: usize,
    n_sets: usize,
    chunk: usize,
) -> Result<Evaluation> {
    if n_sets == 0 || n_fake < 2 {
        bail_arg!("evaluation needs at least one set of at least 2 images");
    }
    if real.dim() != embedder.dim() {
        bail_arg!("real statistics have dimension {}, embedder {}", real.dim(), embedder.dim());
    }
    let d = embedder.dim();
    let ridge_applied = n_fake <= d;
    if ridge_applied {
        log::warn!("{n_fake} fake images for {d}-dimensional features; adding a {RIDGE} ridge to both covariances");
    }
    let real = if ridge_applied { real.with_ridge(RIDGE) } else { real.clone() };
    let k = embedder.num_classes();
    let mut eval = Evaluation {
        fid_mean: 0.0,
        is_mean: 0.0,
        fids: Vec::with_capacity(n_sets),
        inception_scores: Vec::with_capacity(n_sets),
        n_fake,
        n_sets,
        sets_evaluated: 0,
        images_embedded: 0,
        ridge_applied,
    };
    for set in 0..n_sets {
        let mut features = Vec::with_capacity(n_fake * d);
        let mut probs = Vec::with_capacity(n_fake * k);
        let mut offset = 0;
        while offset < n_fake {
            let len = chunk.max(1).min(n_fake - offset);
            let images = sample(set, offset, len)?;
            if images.dim(0) != len {
                bail_arg!("sampler returned {} images, expected {len}", images.dim(0));
            }
            let e = embedder.embed(&images)?;
            features.extend(e.features);
            probs.extend(e.probs);
            eval.images_embedded += len;
            offset += len;
        }
        let mut stats = GaussianStats::from_features(&features, d)?;
        if ridge_applied {
            stats = stats.with_ridge(RIDGE);
        }
        eval.fids.push(fid(&real, &stats)?);
        eval.inception_scores.push(inception_score(&probs, k)?);
        eval.sets_evaluated += 1;
    }
    eval.fid_mean = super::compensated_sum(eval.fids.iter().copied()) / n_sets as f64;
    eval.is_mean = super::compensated_sum(eval.inception_scores.iter().copied()) / n_sets as f64;
    Ok(eval)
}
