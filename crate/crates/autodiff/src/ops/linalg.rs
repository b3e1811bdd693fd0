use crate::float::gemm;
use crate::graph::{GradSink, Op};
use crate::{Float, Graph, Tensor, Var};

/// `(batch, rows, cols)` of a rank-2 or rank-3 operand as stored.
fn mat_dims(shape: &[usize]) -> (usize, usize, usize) {
    match *shape {
        [r, c] => (1, r, c),
        [b, r, c] => (b, r, c),
        _ => panic!("matmul operand must be rank 2 or 3, got {shape:?}"),
    }
}

/// Logical `(m, k)` of `op(a)` and `(k, n)` of `op(b)`.
fn logical(stored: (usize, usize), t: bool) -> (usize, usize) {
    if t {
        (stored.1, stored.0)
    } else {
        stored
    }
}

impl<F: Float> Graph<F> {
    /// `op(a) · op(b)` for matrices, or batch-wise for rank-3 operands.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let rank = av.rank();
        assert_eq!(rank, bv.rank(), "matmul rank mismatch");
        let (ba, ar, ac) = mat_dims(av.shape());
        let (bb, br, bc) = mat_dims(bv.shape());
        assert_eq!(ba, bb, "matmul batch mismatch");
        let (m, k) = logical((ar, ac), ta);
        let (k2, n) = logical((br, bc), tb);
        assert_eq!(k, k2, "matmul inner dims {:?} x {:?} (ta={ta}, tb={tb})", av.shape(), bv.shape());
        let mut out = vec![F::zero(); ba * m * n];
        for i in 0..ba {
            gemm(
                m,
                k,
                n,
                &av.data()[i * m * k..(i + 1) * m * k],
                ta,
                &bv.data()[i * k * n..(i + 1) * k * n],
                tb,
                F::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let shape: Vec<usize> = if rank == 2 { vec![m, n] } else { vec![ba, m, n] };
        self.push(Tensor::new(&shape, out), Op::MatMul { a, b, ta, tb }, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, false, false)
    }

    /// `[N, D] -> [N]` row sums.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let (n, d) = self.value(a).dims2();
        let data = self.value(a).data().chunks(d).map(|r| r.iter().copied().sum()).collect();
        self.push(Tensor::new(&[n], data), Op::SumCols(a), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::SumAll(a), &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.sum() / F::of(v.numel() as f64);
        self.push(Tensor::scalar(s), Op::MeanAll(a), &[a])
    }
}

pub(super) fn backward<'n, F: Float>(
    op: &Op<F>,
    gout: &Tensor<F>,
    val: &impl Fn(Var) -> &'n Tensor<F>,
    sink: &mut GradSink<'_, F>,
) {
    match *op {
        Op::MatMul { a, b, ta, tb } => {
            let av = val(a);
            let bv = val(b);
            let (batch, ar, ac) = mat_dims(av.shape());
            let (_, br, bc) = mat_dims(bv.shape());
            let (m, k) = logical((ar, ac), ta);
            let n = logical((br, bc), tb).1;
            let g = gout.data();
            if sink.wants(a) {
                let mut da = vec![F::zero(); av.numel()];
                for i in 0..batch {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    let bi = &bv.data()[i * k * n..(i + 1) * k * n];
                    let dai = &mut da[i * m * k..(i + 1) * m * k];
                    if ta {
                        // dA[k,m] = op(B)[k,n] · dCᵀ
                        gemm(k, n, m, bi, tb, gi, true, F::zero(), dai);
                    } else {
                        // dA[m,k] = dC · op(B)ᵀ
                        gemm(m, n, k, gi, false, bi, !tb, F::zero(), dai);
                    }
                }
                sink.add(a, Tensor::new(av.shape(), da));
            }
            if sink.wants(b) {
                let mut db = vec![F::zero(); bv.numel()];
                for i in 0..batch {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    let ai = &av.data()[i * m * k..(i + 1) * m * k];
                    let dbi = &mut db[i * k * n..(i + 1) * k * n];
                    if tb {
                        // dB[n,k] = dCᵀ · op(A)
                        gemm(n, m, k, gi, true, ai, ta, F::zero(), dbi);
                    } else {
                        // dB[k,n] = op(A)ᵀ · dC
                        gemm(k, m, n, ai, !ta, gi, false, F::zero(), dbi);
                    }
                }
                sink.add(b, Tensor::new(bv.shape(), db));
            }
        }
        Op::SumCols(a) => {
            let (n, d) = val(a).dims2();
            let mut out = Vec::with_capacity(n * d);
            for &g in gout.data() {
                out.extend(std::iter::repeat(g).take(d));
            }
            sink.add(a, Tensor::new(&[n, d], out));
        }
        Op::SumAll(a) => sink.add(a, Tensor::full(val(a).shape(), gout.item())),
        Op::MeanAll(a) => {
            let v = val(a);
            sink.add(a, Tensor::full(v.shape(), gout.item() / F::of(v.numel() as f64)));
        }
        _ => unreachable!("not a linalg op"),
    }
}
