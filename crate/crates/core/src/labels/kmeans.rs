//! Mini-batch k-means with per-centroid learning rates.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{bail_arg, Result};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClusterModel {
    pub dim: usize,
    /// Row-major `[n_clusters, dim]`.
    pub centroids: Vec<f64>,
    /// Number of points absorbed by each centroid.
    pub counts: Vec<u64>,
}

impl ClusterModel {
    pub fn n_clusters(&self) -> usize {
        self.counts.len()
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    /// Mean squared distance of each point to its assigned centroid.
    pub fn quantization_error(&self, features: &[f64]) -> f64 {
        let n = features.len() / self.dim;
        if n == 0 {
            return 0.0;
        }
        let total: f64 = features
            .chunks(self.dim)
            .map(|x| squared_distance(x, self.centroid(assign_cluster(self, x))))
            .sum();
        total / n as f64
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid in squared Euclidean distance; ties go to
/// the lowest index.
pub fn assign_cluster(model: &ClusterModel, feature: &[f64]) -> usize {
    assert_eq!(feature.len(), model.dim, "feature dimension");
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for c in 0..model.n_clusters() {
        let d = squared_distance(feature, model.centroid(c));
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// Fits `n_clusters` centroids to `features` (row-major `[N, dim]`).
///
/// Centroids start at distinct randomly chosen points. Each iteration draws
/// `batch_size` points uniformly with replacement, assigns them against the
/// current centroids, then moves each assigned centroid toward its point
/// with step `1 / count`.
pub fn fit_clusters(
    features: &[f64],
    dim: usize,
    n_clusters: usize,
    batch_size: usize,
    iterations: usize,
    seed: u64,
) -> Result<ClusterModel> {
    if dim == 0 || features.len() % dim != 0 {
        bail_arg!("feature buffer of {} values is not a multiple of dimension {dim}", features.len());
    }
    let n = features.len() / dim;
    if n_clusters == 0 || n < n_clusters {
        bail_arg!("need at least n_clusters = {n_clusters} points, got {n}");
    }
    if features.iter().any(|x| !x.is_finite()) {
        bail_arg!("features contain non-finite values");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = sample(&mut rng, n, n_clusters).into_vec();
    init.sort_unstable();
    let mut model = ClusterModel {
        dim,
        centroids: init.iter().flat_map(|&i| features[i * dim..(i + 1) * dim].iter().copied()).collect(),
        counts: vec![0; n_clusters],
    };
    let batch_size = batch_size.max(1);
    let mut batch = vec![0usize; batch_size];
    let mut nearest = vec![0usize; batch_size];
    for _ in 0..iterations {
        for b in batch.iter_mut() {
            *b = rng.gen_range(0..n);
        }
        for (slot, &i) in nearest.iter_mut().zip(&batch) {
            *slot = assign_cluster(&model, &features[i * dim..(i + 1) * dim]);
        }
        for (&i, &c) in batch.iter().zip(&nearest) {
            model.counts[c] += 1;
            let eta = 1.0 / model.counts[c] as f64;
            let x = &features[i * dim..(i + 1) * dim];
            for (cv, &xv) in model.centroids[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                *cv += eta * (xv - *cv);
            }
        }
    }
    Ok(model)
}

/// Iterations covering `epochs` passes over `n` points at `batch_size`.
pub fn iterations_for_epochs(n: usize, batch_size: usize, epochs: usize) -> usize {
    (epochs * n).div_ceil(batch_size.max(1))
}
