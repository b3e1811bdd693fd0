//! Datasets, label subsampling, rotations and batch assembly.

mod manifest;
mod synthetic;

pub use manifest::{load_manifest_dataset, parse_label_manifest, write_label_manifest, ManifestEntry};
pub use synthetic::{SyntheticConfig, SyntheticShapes, GLYPH_NAMES};

use fewlabel_autodiff::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{bail_arg, Error, Result};
use crate::rng::{fnv1a, mix64, stream_rng, Stream};

/// A square image stored height-major, channels last, pixels in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub size: usize,
    pub channels: usize,
    pub pixels: Vec<f32>,
}

impl Image {
    pub fn new(size: usize, channels: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != size * size * channels {
            bail_arg!("image of {size}x{size}x{channels} needs {} pixels, got {}", size * size * channels, pixels.len());
        }
        Ok(Image { size, channels, pixels })
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.size + x) * self.channels + c]
    }

    pub fn in_unit_range(&self) -> bool {
        self.pixels.iter().all(|p| (-1.0..=1.0).contains(p))
    }
}

/// Rotates an `[H, W, C]` pixel grid counter-clockwise by `r * 90` degrees.
///
/// This is an exact permutation of pixels; `height != width` is rejected.
pub fn rotate(pixels: &[f32], height: usize, width: usize, channels: usize, r: usize) -> Result<Vec<f32>> {
    if height != width {
        bail_arg!("rotation needs a square image, got {height}x{width}");
    }
    if pixels.len() != height * width * channels {
        bail_arg!("pixel buffer has {} values, expected {}", pixels.len(), height * width * channels);
    }
    if r > 3 {
        bail_arg!("rotation index {r} not in 0..=3");
    }
    let n = height;
    let mut out = vec![0.0; pixels.len()];
    for i in 0..n {
        for j in 0..n {
            let (si, sj) = match r {
                0 => (i, j),
                1 => (j, n - 1 - i),
                2 => (n - 1 - i, n - 1 - j),
                _ => (n - 1 - j, i),
            };
            let dst = (i * n + j) * channels;
            let src = (si * n + sj) * channels;
            out[dst..dst + channels].copy_from_slice(&pixels[src..src + channels]);
        }
    }
    Ok(out)
}

impl Image {
    pub fn rotated(&self, r: usize) -> Result<Image> {
        let pixels = rotate(&self.pixels, self.size, self.size, self.channels, r)?;
        Ok(Image { size: self.size, channels: self.channels, pixels })
    }
}

/// Images plus per-example optional labels.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    /// Identifier folded into label-subsampling seeds.
    pub id: String,
    images: Vec<Image>,
    labels: Vec<Option<usize>>,
    num_classes: usize,
}

/// A class whose labeled count had to be raised to one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelWarning {
    pub class: usize,
    pub class_count: usize,
    pub message: String,
}

impl LabeledDataset {
    pub fn new(id: impl Into<String>, images: Vec<Image>, labels: Vec<Option<usize>>, num_classes: usize) -> Result<Self> {
        if images.len() != labels.len() {
            bail_arg!("{} images but {} label slots", images.len(), labels.len());
        }
        if num_classes == 0 {
            bail_arg!("dataset needs at least one class");
        }
        if let Some(bad) = labels.iter().flatten().find(|&&l| l >= num_classes) {
            bail_arg!("label {bad} outside 0..{num_classes}");
        }
        if let Some(first) = images.first() {
            if images.iter().any(|im| im.size != first.size || im.channels != first.channels) {
                bail_arg!("images must share one size and channel count");
            }
        }
        if let Some(i) = images.iter().position(|im| !im.in_unit_range()) {
            bail_arg!("image {i} has pixels outside [-1, 1]");
        }
        Ok(LabeledDataset { id: id.into(), images, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &Image {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels[i]
    }

    pub fn image_size(&self) -> usize {
        self.images.first().map_or(0, |im| im.size)
    }

    pub fn channels(&self) -> usize {
        self.images.first().map_or(0, |im| im.channels)
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i].is_some()).collect()
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    pub fn labeled_fraction(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.labeled_count() as f64 / self.len() as f64
        }
    }

    /// Per-class index lists in ascending index order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(c) = l {
                out[*c].push(i);
            }
        }
        out
    }

    /// Keeps only labeled examples (order preserved).
    pub fn labeled_only(&self) -> LabeledDataset {
        let idx = self.labeled_indices();
        LabeledDataset {
            id: format!("{}/labeled", self.id),
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Replaces every label (e.g. with inferred ones).
    pub fn with_labels(&self, labels: Vec<Option<usize>>, num_classes: usize) -> Result<LabeledDataset> {
        LabeledDataset::new(self.id.clone(), self.images.clone(), labels, num_classes)
    }

    /// NCHW tensor of the selected images.
    pub fn batch_tensor(&self, indices: &[usize]) -> Tensor<f32> {
        images_to_nchw(indices.iter().map(|&i| &self.images[i]))
    }
}

/// Packs images into an `[N, C, H, W]` tensor.
pub fn images_to_nchw<'a>(images: impl IntoIterator<Item = &'a Image>) -> Tensor<f32> {
    let images: Vec<&Image> = images.into_iter().collect();
    let (s, c) = images.first().map_or((0, 0), |im| (im.size, im.channels));
    let mut data = vec![0.0f32; images.len() * c * s * s];
    for (n, im) in images.iter().enumerate() {
        for y in 0..s {
            for x in 0..s {
                for ch in 0..c {
                    data[((n * c + ch) * s + y) * s + x] = im.pixels[(y * s + x) * c + ch];
                }
            }
        }
    }
    Tensor::new(&[images.len(), c, s, s], data)
}

/// Unpacks an `[N, C, H, W]` tensor into images.
pub fn nchw_to_images(t: &Tensor<f32>) -> Vec<Image> {
    let (n, c, h, w) = t.dims4();
    assert_eq!(h, w, "square images only");
    (0..n)
        .map(|i| {
            let mut px = vec![0.0; h * w * c];
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        px[(y * w + x) * c + ch] = t.data()[((i * c + ch) * h + y) * w + x];
                    }
                }
            }
            Image { size: h, channels: c, pixels: px }
        })
        .collect()
}

/// Seed for the per-class shuffles of [`subsample_labels`].
pub fn subsample_seed(dataset_id: &str, seed: u64) -> u64 {
    mix64(fnv1a(dataset_id.as_bytes()) ^ mix64(seed))
}

/// Number of labels kept for a class of `count` examples: `floor(k/100 * count)`.
pub fn retained_count(k_percent: f64, count: usize) -> usize {
    ((k_percent * count as f64) / 100.0).floor() as usize
}

/// Keeps `floor(k% * count_c)` (at least one) randomly chosen labels per class
/// and marks the rest absent. Image order is untouched.
///
/// Classes are visited in ascending order; each class's index list is
/// shuffled with one shared seeded generator and the prefix is kept.
pub fn subsample_labels(dataset: &LabeledDataset, k_percent: f64, seed: u64) -> Result<(LabeledDataset, Vec<LabelWarning>)> {
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        bail_arg!("k_percent must lie in (0, 100], got {k_percent}");
    }
    if dataset.labeled_count() != dataset.len() {
        return Err(Error::State("label subsampling needs a fully labeled dataset".into()));
    }
    let per_class = dataset.class_indices();
    if let Some(c) = per_class.iter().position(|v| v.is_empty()) {
        bail_arg!("class {c} has no examples");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(subsample_seed(&dataset.id, seed));
    let mut labels = vec![None; dataset.len()];
    let mut warnings = Vec::new();
    for (class, idx) in per_class.iter().enumerate() {
        let mut keep = retained_count(k_percent, idx.len());
        if keep == 0 {
            keep = 1;
            let message = format!(
                "class {class} has {} examples; {k_percent}% keeps none, keeping one label",
                idx.len()
            );
            log::warn!("{message}");
            warnings.push(LabelWarning { class, class_count: idx.len(), message });
        }
        let mut shuffled = idx.clone();
        shuffled.shuffle(&mut rng);
        for &i in &shuffled[..keep] {
            labels[i] = Some(class);
        }
    }
    let out = LabeledDataset {
        id: dataset.id.clone(),
        images: dataset.images.clone(),
        labels,
        num_classes: dataset.num_classes,
    };
    Ok((out, warnings))
}

/// Rotated copies in the canonical layout: all 0° images, then 90°, 180°, 270°.
#[derive(Clone, Debug)]
pub struct RotationBatch {
    pub images: Tensor<f32>,
    pub targets: Vec<usize>,
}

/// Builds the `4B` rotation batch from a `[B, C, H, W]` tensor.
pub fn rotation_batch(images: &Tensor<f32>) -> RotationBatch {
    let b = images.dim(0);
    let rotated: Vec<Tensor<f32>> = (0..4).map(|r| fewlabel_autodiff::rotate90_nchw(images, r)).collect();
    let refs: Vec<&Tensor<f32>> = rotated.iter().collect();
    RotationBatch { images: Tensor::cat_rows(&refs), targets: rotation_targets(b) }
}

/// `targets[i] = i / b` for a batch of `4b` rotated images.
pub fn rotation_targets(b: usize) -> Vec<usize> {
    (0..4 * b).map(|i| i / b).collect()
}

/// Indices for one batch of `B` unlabeled and `batch_size - B` labeled examples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixedBatch {
    /// Drawn uniformly (with replacement) from all examples; labels masked.
    pub unlabeled: Vec<usize>,
    /// Drawn uniformly (with replacement) from labeled examples.
    pub labeled: Vec<usize>,
    pub labels: Vec<usize>,
}

pub fn make_mixed_batch(dataset: &LabeledDataset, batch_size: usize, num_unlabeled: usize, seed: u64, step: u64) -> Result<MixedBatch> {
    if num_unlabeled > batch_size {
        bail_arg!("num_unlabeled {num_unlabeled} exceeds batch size {batch_size}");
    }
    if dataset.is_empty() {
        return Err(Error::State("empty dataset".into()));
    }
    let labeled_pool = dataset.labeled_indices();
    let n_labeled = batch_size - num_unlabeled;
    if n_labeled > 0 && labeled_pool.is_empty() {
        return Err(Error::State("batch needs labeled examples but the dataset has none".into()));
    }
    let mut rng = stream_rng(seed, Stream::RealBatch, step);
    let unlabeled: Vec<usize> = (0..num_unlabeled).map(|_| rng.gen_range(0..dataset.len())).collect();
    let labeled: Vec<usize> = (0..n_labeled).map(|_| labeled_pool[rng.gen_range(0..labeled_pool.len())]).collect();
    let labels = labeled.iter().map(|&i| dataset.labels[i].expect("drawn from labeled pool")).collect();
    Ok(MixedBatch { unlabeled, labeled, labels })
}

/// `n` indices drawn uniformly with replacement.
pub fn sample_indices(len: usize, n: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..len)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy(per_class: &[usize]) -> LabeledDataset {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for (c, &n) in per_class.iter().enumerate() {
            for i in 0..n {
                let v = ((c * 31 + i) % 200) as f32 / 100.0 - 1.0;
                images.push(Image::new(2, 1, vec![v; 4]).unwrap());
                labels.push(Some(c));
            }
        }
        LabeledDataset::new("toy", images, labels, per_class.len()).unwrap()
    }

    #[test]
    fn ten_percent_of_a_thousand_keeps_a_hundred() {
        let ds = toy(&[1000, 1000]);
        let (sub, warnings) = subsample_labels(&ds, 10.0, 7).unwrap();
        assert!(warnings.is_empty());
        let per_class = sub.class_indices();
        assert_eq!(per_class[0].len(), 100);
        assert_eq!(per_class[1].len(), 100);
        assert_eq!(sub.len() - sub.labeled_count(), 1800);
    }

    #[test]
    fn full_percentage_is_identity() {
        let ds = toy(&[5, 3, 8]);
        let (sub, _) = subsample_labels(&ds, 100.0, 1).unwrap();
        assert_eq!(sub.labels(), ds.labels());
        assert_eq!(sub.images(), ds.images());
    }

    #[test]
    fn tiny_classes_are_clamped_to_one_label_with_warning() {
        let ds = toy(&[5, 20]);
        let (sub, warnings) = subsample_labels(&ds, 10.0, 3).unwrap();
        assert_eq!(sub.class_indices()[0].len(), 1);
        assert_eq!(sub.class_indices()[1].len(), 2);
        assert_eq!(warnings.len(), 1);
        assert_eq!(warnings[0].class, 0);
    }

    #[test]
    fn out_of_range_percentages_are_rejected() {
        let ds = toy(&[4]);
        for k in [0.0, -1.0, 100.5, f64::NAN] {
            assert!(matches!(subsample_labels(&ds, k, 0), Err(Error::Argument(_))));
        }
    }

    #[test]
    fn partially_labeled_input_is_a_state_error() {
        let ds = toy(&[10]);
        let (sub, _) = subsample_labels(&ds, 50.0, 0).unwrap();
        assert!(matches!(subsample_labels(&sub, 50.0, 0), Err(Error::State(_))));
    }

    #[test]
    fn hand_rotation_of_two_by_two() {
        // [[a,b],[c,d]] -> [[b,d],[a,c]]
        let out = rotate(&[1.0, 2.0, 3.0, 4.0], 2, 2, 1, 1).unwrap();
        assert_eq!(out, vec![2.0, 4.0, 1.0, 3.0]);
        assert!(rotate(&[0.0; 6], 2, 3, 1, 1).is_err());
    }

    #[test]
    fn mixed_batch_sizes_and_errors() {
        let ds = toy(&[30, 30]);
        let (sub, _) = subsample_labels(&ds, 10.0, 0).unwrap();
        let b = make_mixed_batch(&sub, 2048, 1536, 1, 0).unwrap();
        assert_eq!((b.unlabeled.len(), b.labeled.len()), (1536, 512));
        let all = make_mixed_batch(&sub, 64, 64, 1, 0).unwrap();
        assert_eq!((all.unlabeled.len(), all.labeled.len()), (64, 0));

        let unl = LabeledDataset::new("u", ds.images().to_vec(), vec![None; ds.len()], 2).unwrap();
        assert!(matches!(make_mixed_batch(&unl, 8, 6, 0, 0), Err(Error::State(_))));
        assert!(make_mixed_batch(&unl, 8, 8, 0, 0).is_ok());
        assert!(matches!(make_mixed_batch(&sub, 8, 9, 0, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn nchw_round_trip() {
        let ims: Vec<Image> = (0..3)
            .map(|i| Image::new(4, 3, (0..48).map(|p| ((p + i) % 7) as f32 / 7.0).collect()).unwrap())
            .collect();
        let t = images_to_nchw(&ims);
        assert_eq!(t.shape(), &[3, 3, 4, 4]);
        assert_eq!(nchw_to_images(&t), ims);
    }

    #[test]
    fn rotation_batch_layout_and_consistency_with_image_rotation() {
        let ims: Vec<Image> = (0..2)
            .map(|i| Image::new(3, 2, (0..18).map(|p| ((p * 5 + i) % 11) as f32 / 11.0).collect()).unwrap())
            .collect();
        let rb = rotation_batch(&images_to_nchw(&ims));
        assert_eq!(rb.targets, vec![0, 0, 1, 1, 2, 2, 3, 3]);
        let back = nchw_to_images(&rb.images);
        for (i, im) in back.iter().enumerate() {
            assert_eq!(*im, ims[i % 2].rotated(i / 2).unwrap());
        }
    }
}
