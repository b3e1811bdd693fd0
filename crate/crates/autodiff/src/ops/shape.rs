use crate::graph::{GradSink, Op};
use crate::{Float, Graph, Tensor, Var};

fn row_len(shape: &[usize]) -> usize {
    shape[1..].iter().product()
}

impl<F: Float> Graph<F> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let out = self.value(x).clone().reshaped(shape);
        self.push(out, Op::Reshape(x), &[x])
    }

    /// Concatenates `[N, d_i]` matrices along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let n = self.value(parts[0]).dims2().0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.value(p).dims2();
                assert_eq!(r, n, "concat_cols row mismatch");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.push(Tensor::new(&[n, total], out), Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Columns `[start, start+len)` of an `[N, D]` matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (n, d) = self.value(x).dims2();
        assert!(start + len <= d, "slice_cols out of range");
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(n * len);
        for i in 0..n {
            out.extend_from_slice(&data[i * d + start..i * d + start + len]);
        }
        self.push(Tensor::new(&[n, len], out), Op::SliceCols { x, start }, &[x])
    }

    /// Concatenates along the leading (batch) dimension.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let vals: Vec<&Tensor<F>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::cat_rows(&vals);
        self.push(out, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        assert!(start + len <= self.value(x).dim(0), "slice_rows out of range");
        let out = self.value(x).slice_rows(start, len);
        self.push(out, Op::SliceRows { x, start }, &[x])
    }

    /// Gathers leading-dimension rows by index (repeats allowed).
    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let xv = self.value(x);
        let r = row_len(xv.shape());
        let mut out = Vec::with_capacity(idx.len() * r);
        for &i in idx {
            out.extend_from_slice(&xv.data()[i * r..(i + 1) * r]);
        }
        let mut shape = xv.shape().to_vec();
        shape[0] = idx.len();
        self.push(Tensor::new(&shape, out), Op::SelectRows { x, idx: idx.to_vec() }, &[x])
    }
}

pub(super) fn backward<'n, F: Float>(
    op: &Op<F>,
    gout: &Tensor<F>,
    val: &impl Fn(Var) -> &'n Tensor<F>,
    sink: &mut GradSink<'_, F>,
) {
    match op {
        &Op::Reshape(x) => sink.add_reshaped(x, gout.clone()),
        Op::ConcatCols(parts) => {
            let (n, total) = gout.dims2();
            let mut off = 0;
            for &p in parts {
                let w = val(p).dims2().1;
                if sink.wants(p) {
                    let mut d = Vec::with_capacity(n * w);
                    for i in 0..n {
                        d.extend_from_slice(&gout.data()[i * total + off..i * total + off + w]);
                    }
                    sink.add(p, Tensor::new(&[n, w], d));
                }
                off += w;
            }
        }
        &Op::SliceCols { x, start } => {
            let (n, d) = val(x).dims2();
            let len = gout.dims2().1;
            let mut dx = vec![F::zero(); n * d];
            for i in 0..n {
                dx[i * d + start..i * d + start + len].copy_from_slice(&gout.data()[i * len..(i + 1) * len]);
            }
            sink.add(x, Tensor::new(&[n, d], dx));
        }
        Op::ConcatRows(parts) => {
            let mut off = 0;
            for &p in parts {
                let rows = val(p).dim(0);
                if sink.wants(p) {
                    sink.add(p, gout.slice_rows(off, rows));
                }
                off += rows;
            }
        }
        &Op::SliceRows { x, start } => {
            let xv = val(x);
            let r = row_len(xv.shape());
            let mut dx = vec![F::zero(); xv.numel()];
            dx[start * r..start * r + gout.numel()].copy_from_slice(gout.data());
            sink.add(x, Tensor::new(xv.shape(), dx));
        }
        Op::SelectRows { x, idx } => {
            let xv = val(*x);
            let r = row_len(xv.shape());
            let mut dx = vec![F::zero(); xv.numel()];
            for (j, &i) in idx.iter().enumerate() {
                for (d, &g) in dx[i * r..(i + 1) * r].iter_mut().zip(&gout.data()[j * r..(j + 1) * r]) {
                    *d += g;
                }
            }
            sink.add(*x, Tensor::new(xv.shape(), dx));
        }
        _ => unreachable!("not a shape op"),
    }
}
