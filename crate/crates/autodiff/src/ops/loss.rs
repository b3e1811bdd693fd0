use crate::graph::{GradSink, Op, Target};
use crate::{Float, Graph, Tensor, Var};

/// Row-wise softmax with max subtraction.
pub(crate) fn softmax_rows<F: Float>(data: &[F], width: usize) -> Vec<F> {
    let mut out = data.to_vec();
    for row in out.chunks_mut(width) {
        let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut z = F::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

impl<F: Float> Graph<F> {
    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let width = *xv.shape().last().expect("softmax of a scalar");
        let out = Tensor::new(xv.shape(), softmax_rows(xv.data(), width));
        self.push(out, Op::Softmax(x), &[x])
    }

    /// Mean cross-entropy of row-wise `softmax(logits)` against `target`,
    /// using log-sum-exp so arbitrarily large logits stay finite.
    pub fn cross_entropy(&mut self, logits: Var, target: Target<F>) -> Var {
        let lv = self.value(logits);
        let (n, k) = lv.dims2();
        assert!(n > 0, "cross_entropy over an empty batch");
        let mut total = F::zero();
        let mut probs = Vec::with_capacity(n * k);
        for (i, row) in lv.data().chunks(k).enumerate() {
            let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
            let z: F = row.iter().map(|&v| (v - mx).exp()).sum();
            let lse = mx + z.ln();
            match &target {
                Target::Hard(idx) => {
                    assert!(idx[i] < k, "target class {} out of range {k}", idx[i]);
                    total += lse - row[idx[i]];
                }
                Target::Soft(t) => {
                    assert_eq!(t.shape(), &[n, k], "soft target shape");
                    let trow = &t.data()[i * k..(i + 1) * k];
                    for (&tv, &lvv) in trow.iter().zip(row) {
                        if tv != F::zero() {
                            total += tv * (lse - lvv);
                        }
                    }
                }
            }
            probs.extend(row.iter().map(|&v| (v - lse).exp()));
        }
        if let Target::Hard(idx) = &target {
            assert_eq!(idx.len(), n, "one hard target per row");
        }
        let loss = total / F::of(n as f64);
        self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, target, probs }, &[logits])
    }
}

pub(super) fn backward<'n, F: Float>(
    op: &Op<F>,
    out: &Tensor<F>,
    gout: &Tensor<F>,
    val: &impl Fn(Var) -> &'n Tensor<F>,
    sink: &mut GradSink<'_, F>,
) {
    match op {
        &Op::Softmax(x) => {
            let width = *out.shape().last().unwrap();
            let mut dx = vec![F::zero(); out.numel()];
            for ((d, y), g) in dx.chunks_mut(width).zip(out.data().chunks(width)).zip(gout.data().chunks(width)) {
                let dot: F = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
                for j in 0..width {
                    d[j] = y[j] * (g[j] - dot);
                }
            }
            sink.add(x, Tensor::new(out.shape(), dx));
        }
        Op::CrossEntropy { logits, target, probs } => {
            let (n, k) = val(*logits).dims2();
            let scale = gout.item() / F::of(n as f64);
            let mut d = probs.clone();
            match target {
                Target::Hard(idx) => {
                    for (i, &c) in idx.iter().enumerate() {
                        d[i * k + c] -= F::one();
                    }
                }
                Target::Soft(t) => {
                    // d/dl of sum_j t_j (lse - l_j) = p * sum(t) - t
                    for (row, trow) in d.chunks_mut(k).zip(t.data().chunks(k)) {
                        let mass: F = trow.iter().copied().sum();
                        for (v, &tv) in row.iter_mut().zip(trow) {
                            *v = *v * mass - tv;
                        }
                    }
                }
            }
            for v in &mut d {
                *v *= scale;
            }
            sink.add(*logits, Tensor::new(&[n, k], d));
        }
        _ => unreachable!("not a loss op"),
    }
}
