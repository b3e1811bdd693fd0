//! Spectral normalization by persistent power iteration.

use fewlabel_autodiff::{Float, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Power-iteration state for one weight viewed as `[rows, rest]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralNormState<F> {
    /// Left singular vector estimate; unit norm.
    pub u: Vec<F>,
    pub iterations: usize,
}

impl<F: Float> SpectralNormState<F> {
    pub fn new(rows: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<F> = (0..rows).map(|_| F::of(StandardNormal.sample(&mut rng))).collect();
        let u = normalized(&raw).unwrap_or_else(|| {
            let mut e = vec![F::zero(); rows];
            e[0] = F::one();
            e
        });
        SpectralNormState { u, iterations: 1 }
    }

    pub fn with_u(u: Vec<F>, iterations: usize) -> Self {
        SpectralNormState { u, iterations }
    }
}

fn normalized<F: Float>(x: &[F]) -> Option<Vec<F>> {
    let norm = x.iter().map(|&a| a * a).sum::<F>().sqrt();
    if !(norm.as_f64() > 1e-30) || !norm.is_finite() {
        return None;
    }
    Some(x.iter().map(|&a| a / norm).collect())
}

/// Result of power iteration on `W`.
#[derive(Clone, Debug)]
pub struct PowerIteration<F> {
    pub u: Vec<F>,
    pub v: Vec<F>,
    pub sigma: F,
}

/// Runs `iterations` rounds of `v = Wᵀu/‖Wᵀu‖, u = Wv/‖Wv‖` and returns
/// `σ = uᵀWv`. `None` when `W` annihilates the iterate (e.g. `W = 0`).
pub fn power_iteration<F: Float>(w: &[F], rows: usize, u0: &[F], iterations: usize) -> Option<PowerIteration<F>> {
    assert_eq!(u0.len(), rows, "u length");
    let cols = w.len() / rows;
    let mut u = u0.to_vec();
    let mut v = vec![F::zero(); cols];
    for _ in 0..iterations.max(1) {
        let mut wtu = vec![F::zero(); cols];
        for (row, &ui) in w.chunks(cols).zip(&u) {
            for (acc, &x) in wtu.iter_mut().zip(row) {
                *acc += x * ui;
            }
        }
        v = normalized(&wtu)?;
        let wv: Vec<F> = w.chunks(cols).map(|row| row.iter().zip(&v).map(|(&a, &b)| a * b).sum()).collect();
        u = normalized(&wv)?;
    }
    let sigma = fewlabel_autodiff::spectral_sigma(w, &u, &v);
    (sigma.as_f64() > 0.0).then_some(PowerIteration { u, v, sigma })
}

/// `weight / σ̂`, with `weight` viewed as `[shape[0], rest]`. Updates
/// `state.u`. A weight with no usable singular direction is returned as is.
pub fn spectral_normalize<F: Float>(weight: &Tensor<F>, state: &mut SpectralNormState<F>) -> Tensor<F> {
    let rows = weight.shape()[0];
    match power_iteration(weight.data(), rows, &state.u, state.iterations) {
        Some(p) => {
            state.u = p.u;
            weight.map(|x| x / p.sigma)
        }
        None => {
            log::warn!("spectral norm undefined for a zero weight; leaving it unnormalized");
            weight.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_fixed() {
        let eye = Tensor::<f64>::new(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let mut st = SpectralNormState::new(3, 1);
        let out = spectral_normalize(&eye, &mut st);
        for (a, b) in out.data().iter().zip(eye.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let u_norm: f64 = st.u.iter().map(|x| x * x).sum();
        assert!((u_norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_converges() {
        let w = Tensor::<f64>::new(&[2, 2], vec![4.0, 0.0, 0.0, 1.0]);
        let mut st = SpectralNormState::with_u(vec![0.6, 0.8], 50);
        let out = spectral_normalize(&w, &mut st);
        assert!((out.data()[0] - 1.0).abs() < 1e-6);
        assert!((out.data()[3] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn scale_invariant() {
        let w = Tensor::<f64>::new(&[2, 3], vec![1.0, -2.0, 0.5, 3.0, 0.1, -1.0]);
        let w7 = w.map(|x| 7.0 * x);
        let mut a = SpectralNormState::new(2, 9);
        let mut b = a.clone();
        let na = spectral_normalize(&w, &mut a);
        let nb = spectral_normalize(&w7, &mut b);
        for (x, y) in na.data().iter().zip(nb.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weight_is_returned_unchanged() {
        let w = Tensor::<f32>::zeros(&[2, 2]);
        let mut st = SpectralNormState::new(2, 3);
        let before = st.u.clone();
        assert_eq!(spectral_normalize(&w, &mut st), w);
        assert_eq!(st.u, before);
    }
}
