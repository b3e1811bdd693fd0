//! FID and Inception Score over a pluggable embedding.

mod embedder;
mod record;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{bail_arg, Result};

pub use embedder::{
    dataset_stats, embedder_id, evaluate_model, train_embedder, ConvNetEmbedder, EmbedResult, Embedder, Evaluation,
};
pub use record::{parse_metrics_jsonl, MetricsRecord};

/// Covariance ridge used when a sample set is too small for a full-rank
/// estimate.
pub const RIDGE: f64 = 1e-6;

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = CompensatedSum::default();
    xs.into_iter().for_each(|x| s.add(x));
    s.value()
}

/// Mean and (unbiased) covariance of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub n: usize,
}

impl GaussianStats {
    /// Statistics of `features`, row-major `[n, dim]`.
    pub fn from_features(features: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 || features.len() % dim != 0 {
            bail_arg!("feature buffer of {} values is not a multiple of dimension {dim}", features.len());
        }
        let n = features.len() / dim;
        if n < 2 {
            bail_arg!("need at least 2 samples for a covariance, got {n}");
        }
        if features.iter().any(|v| !v.is_finite()) {
            bail_arg!("features contain non-finite values");
        }
        let mu = DVector::from_fn(dim, |j, _| compensated_sum(features.chunks(dim).map(|r| r[j])) / n as f64);
        let mut acc = vec![CompensatedSum::default(); dim * dim];
        let mut centered = vec![0.0; dim];
        for row in features.chunks(dim) {
            for (c, (&x, m)) in centered.iter_mut().zip(row.iter().zip(mu.iter())) {
                *c = x - m;
            }
            for i in 0..dim {
                let ci = centered[i];
                for j in i..dim {
                    acc[i * dim + j].add(ci * centered[j]);
                }
            }
        }
        let sigma = DMatrix::from_fn(dim, dim, |i, j| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            acc[a * dim + b].value() / (n - 1) as f64
        });
        Ok(GaussianStats { mu, sigma, n })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Copy with `ridge · I` added to the covariance.
    pub fn with_ridge(&self, ridge: f64) -> Self {
        let mut s = self.clone();
        for i in 0..s.dim() {
            s.sigma[(i, i)] += ridge;
        }
        s
    }
}

fn symmetrized(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Eigenvalues below this are an error; those between it and zero are
/// treated as zero.
const PSD_TOLERANCE: f64 = 1e-6;

/// Symmetric PSD square root via eigendecomposition.
pub fn matrix_sqrt_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        bail_arg!("matrix square root needs a square matrix, got {}x{}", a.nrows(), a.ncols());
    }
    if a.iter().any(|v| !v.is_finite()) {
        bail_arg!("matrix has non-finite entries");
    }
    let eig = SymmetricEigen::new(symmetrized(a));
    if let Some(&min) = eig.eigenvalues.iter().min_by(|x, y| x.total_cmp(y)) {
        if min < -PSD_TOLERANCE {
            bail_arg!("matrix is not positive semidefinite (eigenvalue {min})");
        }
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(symmetrized(&(v * DMatrix::from_diagonal(&roots) * v.transpose())))
}

/// Fréchet distance between two Gaussians.
///
/// The cross term is the trace of the square root of
/// `Σx^½ Σg Σx^½`, which equals the trace of `(Σx Σg)^½` but stays symmetric.
pub fn fid(real: &GaussianStats, fake: &GaussianStats) -> Result<f64> {
    if real.dim() != fake.dim() {
        bail_arg!("FID of stats with dimensions {} and {}", real.dim(), fake.dim());
    }
    let diff = &real.mu - &fake.mu;
    let sx = matrix_sqrt_psd(&real.sigma)?;
    let m = symmetrized(&(&sx * &fake.sigma * &sx));
    let cross: f64 = SymmetricEigen::new(m).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let d = diff.norm_squared() + real.sigma.trace() + fake.sigma.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// `exp(E_x[KL(p(y|x) || p(y))])` for row-stochastic `probs` `[n, k]`.
pub fn inception_score(probs: &[f64], k: usize) -> Result<f64> {
    if k == 0 || probs.len() % k != 0 || probs.is_empty() {
        bail_arg!("probability buffer of {} values does not hold rows of {k}", probs.len());
    }
    let n = probs.len() / k;
    for (i, row) in probs.chunks(k).enumerate() {
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
            bail_arg!("row {i} has negative or non-finite entries");
        }
        let s: f64 = row.iter().sum();
        if s == 0.0 || (s - 1.0).abs() > 1e-5 {
            bail_arg!("row {i} sums to {s}, not 1");
        }
    }
    let marginal: Vec<f64> = (0..k).map(|j| compensated_sum(probs.chunks(k).map(|r| r[j])) / n as f64).collect();
    let kl = compensated_sum(probs.chunks(k).map(|row| {
        row.iter().zip(&marginal).filter(|(p, _)| **p > 0.0).map(|(p, q)| p * (p / q).ln()).sum::<f64>()
    })) / n as f64;
    Ok(kl.exp().clamp(1.0, k as f64))
}
