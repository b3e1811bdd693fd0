//! Training of the small CNNs used for label inference and evaluation.

use fewlabel_autodiff::optim::Sgd;
use fewlabel_autodiff::{Graph, Target, Tensor};

use crate::data::{make_mixed_batch, rotation_batch, sample_indices, LabeledDataset};
use crate::error::{Error, Result};
use crate::losses::s2l_loss;
use crate::models::{convnet_forward, ConvNet, ConvNetSpec, Mode, Session};
use crate::rng::{derive_seed, stream_rng, Stream};

/// SGD schedule and batch composition for pretraining.
///
/// Warm-up and decay points are given in epochs; [`PretrainConfig::scaled`]
/// keeps their fractions of the total when the epoch count changes.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PretrainConfig {
    pub widths: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    /// Unlabeled examples per batch in semi-supervised mode.
    pub num_unlabeled: usize,
    pub gamma: f64,
    /// Learning rate per 256 examples of the lr-defining batch count.
    pub lr_per_256: f64,
    pub momentum: f64,
    pub warmup_epochs: f64,
    pub decay_epochs: [f64; 2],
    pub decay_factor: f64,
    pub seed: u64,
}

impl PretrainConfig {
    /// 65 epochs, batch 2048 with 1536 unlabeled, warm-up 5, decays at 45 and 55.
    pub fn full_scale() -> Self {
        PretrainConfig {
            widths: vec![16, 32, 64, 64],
            epochs: 65,
            batch_size: 2048,
            num_unlabeled: 1536,
            gamma: 0.5,
            lr_per_256: 0.1,
            momentum: 0.9,
            warmup_epochs: 5.0,
            decay_epochs: [45.0, 55.0],
            decay_factor: 0.1,
            seed: 0,
        }
    }

    /// Same schedule shape compressed to `epochs`, batch 64 with 48 unlabeled.
    pub fn desk() -> Self {
        PretrainConfig { batch_size: 64, num_unlabeled: 48, ..Self::full_scale() }.scaled(20)
    }

    pub fn scaled(mut self, epochs: usize) -> Self {
        let f = epochs as f64 / self.epochs as f64;
        self.warmup_epochs *= f;
        self.decay_epochs = [self.decay_epochs[0] * f, self.decay_epochs[1] * f];
        self.epochs = epochs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 || self.num_unlabeled > self.batch_size {
            return Err(Error::Config("pretraining needs epochs > 0, batch >= 2 and num_unlabeled <= batch".into()));
        }
        if !(self.lr_per_256 > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.gamma >= 0.0) {
            return Err(Error::Config("pretraining lr must be positive, momentum in [0,1), gamma >= 0".into()));
        }
        Ok(())
    }

    /// `lr_per_256 · B / 256` with `B` the examples per batch that define
    /// the rate (the unlabeled share in semi-supervised mode).
    pub fn base_lr(&self, lr_batch: usize) -> f64 {
        self.lr_per_256 * lr_batch as f64 / 256.0
    }

    /// Learning rate at fractional epoch `e`: linear warm-up, then step decays.
    pub fn lr_at(&self, base: f64, e: f64) -> f64 {
        if e < self.warmup_epochs {
            return base * (e / self.warmup_epochs).max(1e-3);
        }
        let mut lr = base;
        for &d in &self.decay_epochs {
            if e >= d {
                lr *= self.decay_factor;
            }
        }
        lr
    }
}

/// What the network is trained to predict.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    /// Rotation prediction only.
    Rotation,
    /// Rotation prediction on every image plus `gamma`-weighted class
    /// prediction on the rotated labeled images.
    RotationAndClass { gamma: f64 },
    /// Plain supervised classification of upright images.
    Class,
}

pub const ROTATION_HEAD: &str = "rotation";
pub const CLASS_HEAD: &str = "class";

/// Trains a rotation (and optionally class) predictor on `dataset`.
///
/// With `semi_supervised` and `gamma > 0` every batch holds
/// `num_unlabeled` examples drawn from all images plus labeled examples;
/// otherwise the whole batch is drawn from all images and only rotation is
/// predicted.
pub fn train_feature_extractor(dataset: &LabeledDataset, config: &PretrainConfig, semi_supervised: bool) -> Result<ConvNet<f32>> {
    config.validate()?;
    let objective = if semi_supervised && config.gamma > 0.0 {
        if dataset.labeled_count() == 0 {
            return Err(Error::State("semi-supervised pretraining needs labeled examples".into()));
        }
        Objective::RotationAndClass { gamma: config.gamma }
    } else {
        Objective::Rotation
    };
    train_convnet(dataset, config, "extractor", objective)
}

/// Trains a supervised classifier on a fully labeled dataset.
pub fn train_classifier(dataset: &LabeledDataset, config: &PretrainConfig, name: &str) -> Result<ConvNet<f32>> {
    config.validate()?;
    if dataset.labeled_count() != dataset.len() {
        return Err(Error::State("classifier training needs every example labeled".into()));
    }
    train_convnet(dataset, config, name, Objective::Class)
}

fn train_convnet(dataset: &LabeledDataset, config: &PretrainConfig, name: &str, objective: Objective) -> Result<ConvNet<f32>> {
    if dataset.is_empty() {
        return Err(Error::State("cannot pretrain on an empty dataset".into()));
    }
    let k = dataset.num_classes();
    let heads: Vec<(&str, usize)> = match objective {
        Objective::Rotation => vec![(ROTATION_HEAD, 4)],
        Objective::RotationAndClass { .. } => vec![(ROTATION_HEAD, 4), (CLASS_HEAD, k)],
        Objective::Class => vec![(CLASS_HEAD, k)],
    };
    let spec = ConvNetSpec::new(name, dataset.image_size(), &config.widths, &heads);
    let mut net = ConvNet::<f32>::new(spec, derive_seed(config.seed, Stream::Init, 0))?;
    let head_ids: Vec<usize> = (0..heads.len()).collect();
    let b = config.batch_size;
    let lr_batch = match objective {
        Objective::RotationAndClass { .. } => config.num_unlabeled.max(1),
        _ => b,
    };
    let base = config.base_lr(lr_batch);
    let steps_per_epoch = dataset.len().div_ceil(b);
    let total = steps_per_epoch * config.epochs;
    let mut sgd = Sgd::new(0.0f32, config.momentum as f32);
    let batch_seed = derive_seed(config.seed, Stream::Pretrain, 0);
    for step in 0..total {
        let (indices, n_unlabeled) = match objective {
            Objective::RotationAndClass { .. } => {
                let mb = make_mixed_batch(dataset, b, config.num_unlabeled, batch_seed, step as u64)?;
                let u = mb.unlabeled.len();
                (mb.unlabeled.into_iter().chain(mb.labeled).collect::<Vec<_>>(), u)
            }
            _ => (sample_indices(dataset.len(), b, &mut stream_rng(config.seed, Stream::Pretrain, step as u64)), b),
        };
        let x = dataset.batch_tensor(&indices);
        let mut g = Graph::new();
        let mut s = Session::new(&mut net.state, Mode::TRAIN);
        let loss = match objective {
            Objective::Class => {
                let labels: Vec<usize> = indices.iter().map(|&i| dataset.label(i).expect("fully labeled")).collect();
                let xv = g.constant(x);
                let out = convnet_forward(&net.spec, &mut s, &mut g, xv, &head_ids)?;
                g.cross_entropy(out.heads[0], Target::Hard(labels))
            }
            Objective::Rotation | Objective::RotationAndClass { .. } => {
                let rb = rotation_batch(&x);
                let xv = g.constant(rb.images);
                let out = convnet_forward(&net.spec, &mut s, &mut g, xv, &head_ids)?;
                let (gamma, class) = if let Objective::RotationAndClass { gamma } = objective {
                    let mut rows = Vec::new();
                    let mut labels = Vec::new();
                    for r in 0..4 {
                        for (j, &i) in indices.iter().enumerate().skip(n_unlabeled) {
                            rows.push(r * b + j);
                            labels.push(dataset.label(i).expect("labeled part"));
                        }
                    }
                    let logits = g.select_rows(out.heads[1], &rows);
                    (gamma, Some((logits, labels)))
                } else {
                    (0.0, None)
                };
                s2l_loss(&mut g, out.heads[0], &rb.targets, class.as_ref().map(|(l, y)| (*l, y.as_slice())), gamma)?
            }
        };
        if !g.value(loss).is_finite() {
            return Err(Error::State(format!("pretraining loss became non-finite at step {step}")));
        }
        g.backward(loss);
        let grads = s.grads(&g);
        drop(s);
        sgd.lr = config.lr_at(base, step as f64 / steps_per_epoch as f64) as f32;
        sgd.step(net.state.params.values_mut(), &grads);
    }
    let rotate = !matches!(objective, Objective::Class);
    recalibrate_norms(&mut net, dataset, b, rotate)?;
    Ok(net)
}

/// Replaces the moving statistics of every normalization layer by exact
/// averages over the dataset, computed in training mode chunk by chunk
/// (with all four rotations when `rotations` is set, matching how the
/// network saw its inputs during training).
pub fn recalibrate_norms(net: &mut ConvNet<f32>, dataset: &LabeledDataset, chunk: usize, rotations: bool) -> Result<()> {
    let n = dataset.len();
    let layers = net.state.norms.len();
    let mut sums: Vec<(Vec<f64>, Vec<f64>, f64)> =
        net.state.norms.iter().map(|(_, st)| (vec![0.0; st.mean.len()], vec![0.0; st.mean.len()], 0.0)).collect();
    let mut start = 0;
    while start < n {
        let len = chunk.max(2).min(n - start);
        let idx: Vec<usize> = (start..start + len).collect();
        let x = dataset.batch_tensor(&idx);
        let x = if rotations { rotation_batch(&x).images } else { x };
        if x.dim(0) < 2 {
            break;
        }
        let mut g = Graph::new();
        let mut s = Session::new(&mut net.state, Mode::FROZEN_TRAINING);
        s.record = Some(Vec::new());
        let xv = g.constant(x);
        convnet_forward(&net.spec, &mut s, &mut g, xv, &[])?;
        let rec = s.record.take().unwrap_or_default();
        for ((_, stats, count), (sm, sq, tot)) in rec.iter().take(layers).zip(sums.iter_mut()) {
            let c = *count as f64;
            for ch in 0..stats.mean.len() {
                let mu = stats.mean[ch] as f64;
                sm[ch] += mu * c;
                sq[ch] += (stats.var[ch] as f64 + mu * mu) * c;
            }
            *tot += c;
        }
        start += len;
    }
    for ((_, st), (sm, sq, tot)) in net.state.norms.iter_mut().zip(sums) {
        if tot == 0.0 {
            continue;
        }
        let mean: Vec<f64> = sm.iter().map(|s| s / tot).collect();
        let var: Vec<f32> = sq.iter().zip(&mean).map(|(q, m)| (q / tot - m * m).max(0.0) as f32).collect();
        st.assign(mean.iter().map(|&m| m as f32).collect(), var);
    }
    Ok(())
}

/// Fraction of `dataset`'s labeled examples whose `head` argmax equals the label.
pub fn classification_accuracy(net: &mut ConvNet<f32>, head: &str, dataset: &LabeledDataset) -> Result<f64> {
    let hi = net.head_index(head).ok_or_else(|| Error::Argument(format!("network has no head {head}")))?;
    let idx = dataset.labeled_indices();
    if idx.is_empty() {
        return Err(Error::State("accuracy needs labeled examples".into()));
    }
    let x = dataset.batch_tensor(&idx);
    let (_, heads) = net.infer(&x, 256)?;
    let logits = &heads[hi];
    let k = logits.dim(1);
    let correct = idx
        .iter()
        .enumerate()
        .filter(|&(row, &i)| argmax(&logits.data()[row * k..(row + 1) * k]) == dataset.label(i).expect("labeled"))
        .count();
    Ok(correct as f64 / idx.len() as f64)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Representation of every image of `dataset` in order.
pub fn extract_features(net: &mut ConvNet<f32>, dataset: &LabeledDataset) -> Result<Tensor<f32>> {
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let x = dataset.batch_tensor(&idx);
    Ok(net.infer(&x, 256)?.0)
}
