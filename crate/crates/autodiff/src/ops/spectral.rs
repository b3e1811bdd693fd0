use crate::graph::{GradSink, Op};
use crate::{Float, Graph, Tensor, Var};

/// `uᵀ W v` for `W` viewed as `[u.len(), v.len()]`.
pub fn spectral_sigma<F: Float>(w: &[F], u: &[F], v: &[F]) -> F {
    let cols = v.len();
    assert_eq!(w.len(), u.len() * cols, "spectral_sigma dims");
    w.chunks(cols)
        .zip(u)
        .map(|(row, &ui)| ui * row.iter().zip(v).map(|(&a, &b)| a * b).sum::<F>())
        .sum()
}

impl<F: Float> Graph<F> {
    /// `W / σ` with `σ = uᵀ W v`, treating the singular-vector estimates
    /// `u`, `v` as constants. `W` is viewed as `[shape[0], rest]`.
    ///
    /// Panics if `σ` is not strictly positive; callers handle degenerate
    /// weights before getting here.
    pub fn spectral_normalize(&mut self, w: Var, u: &[F], v: &[F]) -> Var {
        let wv = self.value(w);
        let sigma = spectral_sigma(wv.data(), u, v);
        assert!(sigma > F::zero(), "spectral_normalize with non-positive sigma");
        let out = wv.map(|x| x / sigma);
        self.push(out, Op::SpectralNorm { w, u: u.to_vec(), v: v.to_vec(), sigma }, &[w])
    }
}

pub(super) fn backward<'n, F: Float>(
    op: &Op<F>,
    _out: &Tensor<F>,
    gout: &Tensor<F>,
    val: &impl Fn(Var) -> &'n Tensor<F>,
    sink: &mut GradSink<'_, F>,
) {
    let Op::SpectralNorm { w, u, v, sigma } = op else { unreachable!("not spectral norm") };
    let wv = val(*w);
    let inner: F = gout.data().iter().zip(wv.data()).map(|(&g, &x)| g * x).sum();
    let coef = inner / (*sigma * *sigma);
    let cols = v.len();
    let mut d = Vec::with_capacity(wv.numel());
    for (r, grow) in gout.data().chunks(cols).enumerate() {
        for (c, &g) in grow.iter().enumerate() {
            d.push(g / *sigma - coef * u[r] * v[c]);
        }
    }
    sink.add(*w, Tensor::new(wv.shape(), d));
}
