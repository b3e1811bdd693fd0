//! Label providers for conditioning the GAN on real images.
//!
//! A provider turns real images into class labels (hard indices or soft
//! distributions) and supplies the prior from which fake labels are drawn.
//! Clustering and semi-supervised providers wrap a pretrained
//! [`ConvNet`](crate::models::ConvNet) and label a dataset once, caching the
//! result per dataset id.

pub mod artifacts;
pub mod kmeans;
pub mod pretrain;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use fewlabel_autodiff::Tensor;

use crate::data::LabeledDataset;
use crate::error::{bail_arg, Error, Result};
use crate::models::ConvNet;
use crate::rng::{stream_rng, Stream};

pub use artifacts::{load_network, load_provider, save_network, save_provider, ProviderMeta};
pub use kmeans::{assign_cluster, fit_clusters, iterations_for_epochs, squared_distance, ClusterModel};
pub use pretrain::{
    argmax, classification_accuracy, extract_features, recalibrate_norms, train_classifier, train_feature_extractor,
    PretrainConfig, CLASS_HEAD, ROTATION_HEAD,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProviderKind {
    GroundTruth,
    Single,
    Random,
    Cluster,
    S2l,
    Cotrain,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LabelMode {
    #[default]
    Hard,
    Soft,
}

impl std::str::FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hard" => Ok(LabelMode::Hard),
            "soft" => Ok(LabelMode::Soft),
            _ => Err(Error::Argument(format!("unknown label mode {s:?}"))),
        }
    }
}

impl std::fmt::Display for LabelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LabelMode::Hard => "hard",
            LabelMode::Soft => "soft",
        })
    }
}

/// Labels for a batch of images.
#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    Hard(Vec<usize>),
    /// `[N, K]` probability rows.
    Soft(Tensor<f32>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Hard(v) => v.len(),
            Labels::Soft(t) => t.dim(0),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Hard indices; soft rows are reduced by argmax.
    pub fn hard(&self) -> Vec<usize> {
        match self {
            Labels::Hard(v) => v.clone(),
            Labels::Soft(t) => {
                let k = t.dim(1);
                t.data().chunks(k).map(argmax).collect()
            }
        }
    }

    /// `[N, k]` rows (one-hot for hard labels).
    pub fn to_rows(&self, k: usize) -> Result<Tensor<f32>> {
        match self {
            Labels::Hard(v) => {
                if let Some(&bad) = v.iter().find(|&&y| y >= k) {
                    bail_arg!("label {bad} out of range for {k} classes");
                }
                Ok(crate::models::one_hot(v, k))
            }
            Labels::Soft(t) => {
                if t.dim(1) != k {
                    bail_arg!("soft labels have {} columns, expected {k}", t.dim(1));
                }
                Ok(t.clone())
            }
        }
    }

    /// Rows at `idx`, in order.
    pub fn select(&self, idx: &[usize]) -> Labels {
        match self {
            Labels::Hard(v) => Labels::Hard(idx.iter().map(|&i| v[i]).collect()),
            Labels::Soft(t) => {
                let k = t.dim(1);
                let mut data = Vec::with_capacity(idx.len() * k);
                for &i in idx {
                    data.extend_from_slice(&t.data()[i * k..(i + 1) * k]);
                }
                Labels::Soft(Tensor::new(&[idx.len(), k], data))
            }
        }
    }
}

/// Normalized histogram of `labels` over `k` classes.
pub fn empirical_prior(labels: &[usize], k: usize) -> Result<Vec<f64>> {
    if labels.is_empty() {
        bail_arg!("empirical prior of an empty label list");
    }
    let mut counts = vec![0u64; k];
    for &y in labels {
        if y >= k {
            bail_arg!("label {y} out of range for {k} classes");
        }
        counts[y] += 1;
    }
    Ok(counts.iter().map(|&c| c as f64 / labels.len() as f64).collect())
}

pub fn uniform_prior(k: usize) -> Vec<f64> {
    vec![1.0 / k as f64; k]
}

/// Checks that `prior` is a distribution (nonnegative, sums to 1 within 1e-6).
pub fn check_prior(prior: &[f64]) -> Result<()> {
    if prior.is_empty() || prior.iter().any(|p| !p.is_finite() || *p < 0.0) {
        bail_arg!("prior must be a nonempty list of nonnegative numbers");
    }
    let s: f64 = prior.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        bail_arg!("prior sums to {s}, not 1");
    }
    Ok(())
}

/// Numerically stable softmax of one row, computed in f64.
pub fn softmax_row(logits: &[f32]) -> Vec<f32> {
    let m = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    let e: Vec<f64> = logits.iter().map(|&x| (x as f64 - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| (v / s) as f32).collect()
}

enum Predictor {
    None,
    Clusters { net: ConvNet<f32>, model: ClusterModel },
    Classifier { net: ConvNet<f32>, head: usize },
}

/// Source of real-image labels and fake-label prior for one method.
pub struct LabelProvider {
    pub kind: ProviderKind,
    pub mode: LabelMode,
    /// Number of distinct labels this provider emits.
    pub num_classes: usize,
    /// Distribution fake labels are drawn from.
    pub prior: Vec<f64>,
    predictor: Predictor,
    seed: u64,
    cache: Option<(String, Labels)>,
}

impl std::fmt::Debug for LabelProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LabelProvider")
            .field("kind", &self.kind)
            .field("mode", &self.mode)
            .field("num_classes", &self.num_classes)
            .finish_non_exhaustive()
    }
}

impl LabelProvider {
    fn plain(kind: ProviderKind, k: usize, seed: u64) -> Self {
        LabelProvider {
            kind,
            mode: LabelMode::Hard,
            num_classes: k,
            prior: uniform_prior(k),
            predictor: Predictor::None,
            seed,
            cache: None,
        }
    }

    /// Passes the dataset's own labels through; fake labels are uniform.
    pub fn ground_truth(k: usize) -> Self {
        Self::plain(ProviderKind::GroundTruth, k, 0)
    }

    /// Every image gets label 0.
    pub fn single() -> Self {
        Self::plain(ProviderKind::Single, 1, 0)
    }

    /// Fresh uniform labels over `k` classes for every batch.
    pub fn random(k: usize, seed: u64) -> Self {
        Self::plain(ProviderKind::Random, k, seed)
    }

    /// Known labels pass through; the rest come from the discriminator's
    /// own classifier during training.
    pub fn cotrain(k: usize) -> Self {
        Self::plain(ProviderKind::Cotrain, k, 0)
    }

    /// Nearest-centroid labels of the extractor's representation. The
    /// prior is the empirical label distribution over `dataset`, whose
    /// labels are cached.
    pub fn cluster(net: ConvNet<f32>, model: ClusterModel, dataset: &LabeledDataset) -> Result<Self> {
        if net.spec.representation_dim() != model.dim {
            bail_arg!("cluster dimension {} does not match representation {}", model.dim, net.spec.representation_dim());
        }
        let k = model.n_clusters();
        let mut p = Self::plain(ProviderKind::Cluster, k, 0);
        p.predictor = Predictor::Clusters { net, model };
        let labels = p.label_images(&all_images(dataset))?;
        p.prior = empirical_prior(&labels.hard(), k)?;
        p.cache = Some((dataset.id.clone(), labels));
        Ok(p)
    }

    /// Like [`LabelProvider::cluster`] with a prior already computed.
    pub fn cluster_with_prior(net: ConvNet<f32>, model: ClusterModel, prior: Vec<f64>) -> Result<Self> {
        check_prior(&prior)?;
        if prior.len() != model.n_clusters() {
            bail_arg!("prior has {} entries for {} clusters", prior.len(), model.n_clusters());
        }
        let mut p = Self::plain(ProviderKind::Cluster, model.n_clusters(), 0);
        p.prior = prior;
        p.predictor = Predictor::Clusters { net, model };
        Ok(p)
    }

    /// Class-head predictions of a semi-supervised extractor; fake labels
    /// are uniform.
    pub fn s2l(net: ConvNet<f32>, mode: LabelMode) -> Result<Self> {
        let head = net
            .head_index(CLASS_HEAD)
            .ok_or_else(|| Error::Argument("semi-supervised provider needs a network with a class head".into()))?;
        let k = net.spec.heads[head].1;
        let mut p = Self::plain(ProviderKind::S2l, k, 0);
        p.mode = mode;
        p.predictor = Predictor::Classifier { net, head };
        Ok(p)
    }

    /// Labels computed from the images alone (SINGLE, CLUSTER, S2L).
    pub fn label_images(&mut self, images: &Tensor<f32>) -> Result<Labels> {
        let n = images.dim(0);
        match &mut self.predictor {
            Predictor::Clusters { net, model } => {
                let (repr, _) = net.infer(images, 256)?;
                let d = model.dim;
                let feats: Vec<f64> = repr.data().iter().map(|&v| v as f64).collect();
                Ok(Labels::Hard(feats.chunks(d).map(|x| assign_cluster(model, x)).collect()))
            }
            Predictor::Classifier { net, head } => {
                let (_, heads) = net.infer(images, 256)?;
                let logits = &heads[*head];
                let k = logits.dim(1);
                let probs: Vec<f32> = logits.data().chunks(k).flat_map(softmax_row).collect();
                let soft = Tensor::new(&[n, k], probs);
                Ok(match self.mode {
                    LabelMode::Soft => Labels::Soft(soft),
                    LabelMode::Hard => Labels::Hard(Labels::Soft(soft).hard()),
                })
            }
            Predictor::None if self.kind == ProviderKind::Single => Ok(Labels::Hard(vec![0; n])),
            Predictor::None => Err(Error::State(format!("{:?} provider cannot label raw images", self.kind))),
        }
    }

    /// Labels of `dataset[indices]`; `step` seeds the RANDOM draws.
    pub fn labels_for(&mut self, dataset: &LabeledDataset, indices: &[usize], step: u64) -> Result<Labels> {
        match self.kind {
            ProviderKind::Single => Ok(Labels::Hard(vec![0; indices.len()])),
            ProviderKind::Random => {
                let mut rng = stream_rng(self.seed, Stream::RandomLabels, step);
                Ok(Labels::Hard(indices.iter().map(|_| rng.gen_range(0..self.num_classes)).collect()))
            }
            ProviderKind::GroundTruth | ProviderKind::Cotrain => indices
                .iter()
                .map(|&i| {
                    dataset.label(i).ok_or_else(|| Error::State(format!("example {i} of {} has no label", dataset.id)))
                })
                .collect::<Result<Vec<_>>>()
                .map(Labels::Hard),
            ProviderKind::Cluster | ProviderKind::S2l => {
                if self.cache.as_ref().map(|(id, _)| id != &dataset.id).unwrap_or(true) {
                    let labels = self.label_images(&all_images(dataset))?;
                    self.cache = Some((dataset.id.clone(), labels));
                }
                let (_, labels) = self.cache.as_ref().expect("cache filled");
                if let Some(&bad) = indices.iter().find(|&&i| i >= labels.len()) {
                    bail_arg!("index {bad} out of range for {}", dataset.id);
                }
                Ok(labels.select(indices))
            }
        }
    }

    /// `n` fake labels drawn from the prior.
    pub fn sample_fake_labels(&self, n: usize, rng: &mut impl Rng) -> Vec<usize> {
        let dist = WeightedIndex::new(&self.prior).expect("prior validated on construction");
        (0..n).map(|_| dist.sample(rng)).collect()
    }

    /// The wrapped network, if any.
    pub fn network(&self) -> Option<&ConvNet<f32>> {
        match &self.predictor {
            Predictor::Clusters { net, .. } | Predictor::Classifier { net, .. } => Some(net),
            Predictor::None => None,
        }
    }

    pub fn cluster_model(&self) -> Option<&ClusterModel> {
        match &self.predictor {
            Predictor::Clusters { model, .. } => Some(model),
            _ => None,
        }
    }
}

fn all_images(dataset: &LabeledDataset) -> Tensor<f32> {
    let idx: Vec<usize> = (0..dataset.len()).collect();
    dataset.batch_tensor(&idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Image, LabeledDataset};
    use crate::models::ConvNetSpec;

    fn tiny_dataset(n: usize) -> LabeledDataset {
        let images = (0..n)
            .map(|i| Image::new(8, 3, (0..8 * 8 * 3).map(|j| ((i * 7 + j) % 11) as f32 / 11.0 - 0.5).collect()).unwrap())
            .collect();
        LabeledDataset::new("tiny", images, (0..n).map(|i| Some(i % 3)).collect(), 3).unwrap()
    }

    #[test]
    fn single_labels_are_zero() {
        let ds = tiny_dataset(5);
        let mut p = LabelProvider::single();
        assert_eq!(p.labels_for(&ds, &[0, 1, 4], 0).unwrap(), Labels::Hard(vec![0, 0, 0]));
        assert_eq!(p.prior, vec![1.0]);
    }

    #[test]
    fn ground_truth_rejects_unlabeled() {
        let ds = tiny_dataset(4).with_labels(vec![Some(0), None, Some(2), Some(1)], 3).unwrap();
        let mut p = LabelProvider::ground_truth(3);
        assert_eq!(p.labels_for(&ds, &[0, 2], 0).unwrap(), Labels::Hard(vec![0, 2]));
        assert!(matches!(p.labels_for(&ds, &[1], 0), Err(Error::State(_))));
    }

    #[test]
    fn random_labels_repeat_per_step() {
        let ds = tiny_dataset(6);
        let mut a = LabelProvider::random(10, 9);
        let mut b = LabelProvider::random(10, 9);
        let idx: Vec<usize> = (0..6).collect();
        assert_eq!(a.labels_for(&ds, &idx, 3).unwrap(), b.labels_for(&ds, &idx, 3).unwrap());
        assert_ne!(a.labels_for(&ds, &idx, 3).unwrap(), a.labels_for(&ds, &idx, 4).unwrap());
    }

    #[test]
    fn empirical_prior_examples() {
        assert_eq!(empirical_prior(&[0, 0, 1, 1], 2).unwrap(), vec![0.5, 0.5]);
        assert_eq!(empirical_prior(&[2, 2, 2], 3).unwrap(), vec![0.0, 0.0, 1.0]);
        assert!(empirical_prior(&[], 2).is_err());
        assert!(empirical_prior(&[3], 2).is_err());
    }

    #[test]
    fn soft_argmax_matches_hard() {
        let t = Tensor::new(&[2, 3], softmax_row(&[0.1, 2.0, -1.0]).into_iter().chain(softmax_row(&[1.0, 1.0, 0.0])).collect());
        assert_eq!(Labels::Soft(t).hard(), vec![1, 0]);
    }

    #[test]
    fn s2l_hard_is_argmax_of_soft() {
        let ds = tiny_dataset(9);
        let spec = ConvNetSpec::new("extractor", 8, &[4, 4], &[(ROTATION_HEAD, 4), (CLASS_HEAD, 3)]);
        let net = ConvNet::<f32>::new(spec, 5).unwrap();
        let mut soft = LabelProvider::s2l(net.clone(), LabelMode::Soft).unwrap();
        let mut hard = LabelProvider::s2l(net, LabelMode::Hard).unwrap();
        let idx: Vec<usize> = (0..9).collect();
        let s = soft.labels_for(&ds, &idx, 0).unwrap();
        let Labels::Soft(rows) = &s else { panic!("expected soft labels") };
        for row in rows.data().chunks(3) {
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!((row.iter().map(|&p| p as f64).sum::<f64>() - 1.0).abs() < 1e-5);
        }
        assert_eq!(hard.labels_for(&ds, &idx, 0).unwrap().hard(), s.hard());
        assert_eq!(hard.prior, uniform_prior(3));
    }

    #[test]
    fn cluster_prior_is_empirical() {
        let ds = tiny_dataset(12);
        let spec = ConvNetSpec::new("extractor", 8, &[4, 4], &[(ROTATION_HEAD, 4)]);
        let mut net = ConvNet::<f32>::new(spec, 3).unwrap();
        let feats: Vec<f64> = extract_features(&mut net, &ds).unwrap().data().iter().map(|&v| v as f64).collect();
        let model = fit_clusters(&feats, 4, 3, 4, 20, 1).unwrap();
        let expected: Vec<usize> = feats.chunks(4).map(|x| assign_cluster(&model, x)).collect();
        let mut p = LabelProvider::cluster(net, model, &ds).unwrap();
        assert_eq!(p.prior, empirical_prior(&expected, 3).unwrap());
        assert_eq!(p.labels_for(&ds, &[0, 5, 11], 0).unwrap(), Labels::Hard(vec![expected[0], expected[5], expected[11]]));
    }
}
