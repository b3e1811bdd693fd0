use crate::graph::{GradSink, Op};
use crate::{Float, Graph, Tensor, Var};

/// `(n, c, spatial)` of a `[N, C, ...]` tensor.
fn ncs(shape: &[usize]) -> (usize, usize, usize) {
    assert!(shape.len() >= 2, "expected [N, C, ...], got {shape:?}");
    (shape[0], shape[1], shape[2..].iter().product())
}

/// Whether a per-channel coefficient is shared (`[C]`) or per sample (`[N, C]`).
fn coeff_index(shape: &[usize], n: usize, c: usize) -> impl Fn(usize, usize) -> usize {
    let per_sample = match shape {
        [cc] if *cc == c => false,
        [nn, cc] if *nn == n && *cc == c => true,
        _ => panic!("channel coefficient shape {shape:?} incompatible with N={n}, C={c}"),
    };
    move |i, ch| if per_sample { i * c + ch } else { ch }
}

/// Batch statistics returned by [`Graph::batch_norm`].
#[derive(Clone, Debug)]
pub struct BatchStats<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

impl<F: Float> Graph<F> {
    /// Adds a per-channel bias `[C]` to `[N, C, ...]`.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Var {
        let xv = self.value(x);
        let (n, c, s) = ncs(xv.shape());
        assert_eq!(self.value(b).shape(), &[c], "bias must be [C]");
        let bias = self.value(b).data();
        let mut out = xv.data().to_vec();
        for i in 0..n {
            for ch in 0..c {
                let bv = bias[ch];
                for v in &mut out[(i * c + ch) * s..(i * c + ch + 1) * s] {
                    *v += bv;
                }
            }
        }
        let shape = xv.shape().to_vec();
        self.push(Tensor::new(&shape, out), Op::ChannelBias(x, b), &[x, b])
    }

    /// `x * scale + shift` per channel; coefficients are `[C]` or `[N, C]`.
    pub fn scale_shift(&mut self, x: Var, scale: Option<Var>, shift: Option<Var>) -> Var {
        let xv = self.value(x);
        let (n, c, s) = ncs(xv.shape());
        let mut out = xv.data().to_vec();
        if let Some(sc) = scale {
            let sv = self.value(sc);
            let idx = coeff_index(sv.shape(), n, c);
            for i in 0..n {
                for ch in 0..c {
                    let k = sv.data()[idx(i, ch)];
                    for v in &mut out[(i * c + ch) * s..(i * c + ch + 1) * s] {
                        *v *= k;
                    }
                }
            }
        }
        if let Some(sh) = shift {
            let bv = self.value(sh);
            let idx = coeff_index(bv.shape(), n, c);
            for i in 0..n {
                for ch in 0..c {
                    let k = bv.data()[idx(i, ch)];
                    for v in &mut out[(i * c + ch) * s..(i * c + ch + 1) * s] {
                        *v += k;
                    }
                }
            }
        }
        let shape = xv.shape().to_vec();
        let mut parents = vec![x];
        parents.extend(scale);
        parents.extend(shift);
        self.push(Tensor::new(&shape, out), Op::ScaleShift { x, scale, shift }, &parents)
    }

    /// Per-channel standardization with batch statistics (no affine part).
    ///
    /// Variance is the biased batch variance over `N` and all spatial
    /// positions.
    pub fn batch_norm(&mut self, x: Var, eps: F) -> (Var, BatchStats<F>) {
        let xv = self.value(x);
        let (n, c, s) = ncs(xv.shape());
        let m = F::of((n * s) as f64);
        let mut mean = vec![F::zero(); c];
        let mut var = vec![F::zero(); c];
        for i in 0..n {
            for ch in 0..c {
                mean[ch] += xv.data()[(i * c + ch) * s..(i * c + ch + 1) * s].iter().copied().sum::<F>();
            }
        }
        for mu in &mut mean {
            *mu /= m;
        }
        for i in 0..n {
            for ch in 0..c {
                let mu = mean[ch];
                var[ch] += xv.data()[(i * c + ch) * s..(i * c + ch + 1) * s]
                    .iter()
                    .map(|&v| (v - mu) * (v - mu))
                    .sum::<F>();
            }
        }
        for v in &mut var {
            *v /= m;
        }
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let mut out = xv.data().to_vec();
        for i in 0..n {
            for ch in 0..c {
                let (mu, is) = (mean[ch], inv_std[ch]);
                for v in &mut out[(i * c + ch) * s..(i * c + ch + 1) * s] {
                    *v = (*v - mu) * is;
                }
            }
        }
        let shape = xv.shape().to_vec();
        let y = self.push(Tensor::new(&shape, out), Op::BatchNorm { x, inv_std }, &[x]);
        (y, BatchStats { mean, var })
    }
}

pub(super) fn backward<'n, F: Float>(
    op: &Op<F>,
    out: &Tensor<F>,
    gout: &Tensor<F>,
    val: &impl Fn(Var) -> &'n Tensor<F>,
    sink: &mut GradSink<'_, F>,
) {
    let (n, c, s) = ncs(gout.shape());
    let g = gout.data();
    match op {
        &Op::ChannelBias(x, b) => {
            sink.add(x, gout.clone());
            if sink.wants(b) {
                let mut db = vec![F::zero(); c];
                for i in 0..n {
                    for (ch, d) in db.iter_mut().enumerate() {
                        *d += g[(i * c + ch) * s..(i * c + ch + 1) * s].iter().copied().sum::<F>();
                    }
                }
                sink.add(b, Tensor::new(&[c], db));
            }
        }
        &Op::ScaleShift { x, scale, shift } => {
            let xv = val(x);
            if sink.wants(x) {
                let mut dx = g.to_vec();
                if let Some(sc) = scale {
                    let sv = val(sc);
                    let idx = coeff_index(sv.shape(), n, c);
                    for i in 0..n {
                        for ch in 0..c {
                            let k = sv.data()[idx(i, ch)];
                            for v in &mut dx[(i * c + ch) * s..(i * c + ch + 1) * s] {
                                *v *= k;
                            }
                        }
                    }
                }
                sink.add(x, Tensor::new(xv.shape(), dx));
            }
            if let Some(sc) = scale.filter(|&v| sink.wants(v)) {
                let shape = val(sc).shape().to_vec();
                let idx = coeff_index(&shape, n, c);
                let mut d = vec![F::zero(); shape.iter().product()];
                for i in 0..n {
                    for ch in 0..c {
                        let r = (i * c + ch) * s..(i * c + ch + 1) * s;
                        d[idx(i, ch)] += g[r.clone()].iter().zip(&xv.data()[r]).map(|(&a, &b)| a * b).sum::<F>();
                    }
                }
                sink.add(sc, Tensor::new(&shape, d));
            }
            if let Some(sh) = shift.filter(|&v| sink.wants(v)) {
                let shape = val(sh).shape().to_vec();
                let idx = coeff_index(&shape, n, c);
                let mut d = vec![F::zero(); shape.iter().product()];
                for i in 0..n {
                    for ch in 0..c {
                        d[idx(i, ch)] += g[(i * c + ch) * s..(i * c + ch + 1) * s].iter().copied().sum::<F>();
                    }
                }
                sink.add(sh, Tensor::new(&shape, d));
            }
        }
        Op::BatchNorm { x, inv_std } => {
            let m = F::of((n * s) as f64);
            let xhat = out.data();
            let mut sum_g = vec![F::zero(); c];
            let mut sum_gx = vec![F::zero(); c];
            for i in 0..n {
                for ch in 0..c {
                    let r = (i * c + ch) * s..(i * c + ch + 1) * s;
                    for (&gv, &xh) in g[r.clone()].iter().zip(&xhat[r]) {
                        sum_g[ch] += gv;
                        sum_gx[ch] += gv * xh;
                    }
                }
            }
            let mut dx = vec![F::zero(); g.len()];
            for i in 0..n {
                for ch in 0..c {
                    let k = inv_std[ch] / m;
                    let r = (i * c + ch) * s..(i * c + ch + 1) * s;
                    for ((d, &gv), &xh) in dx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xhat[r]) {
                        *d = k * (m * gv - sum_g[ch] - xh * sum_gx[ch]);
                    }
                }
            }
            sink.add(*x, Tensor::new(gout.shape(), dx));
        }
        _ => unreachable!("not a normalization op"),
    }
}
