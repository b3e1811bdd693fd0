use crate::float::gemm;
use crate::graph::{GradSink, Op};
use crate::{Float, Graph, Tensor, Var};

/// Unfolds one `[C, H, W]` image into `[C*k*k, H*W]` patches for a
/// stride-1 "same" convolution with odd kernel size `k`.
///
/// Row `r` of the patch matrix is written to `cols[r * ld + off..][..H*W]`,
/// so several images can share one wide matrix.
fn im2col<F: Float>(x: &[F], c: usize, h: usize, w: usize, k: usize, cols: &mut [F], ld: usize, off: usize) {
    let p = k / 2;
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((ci * k + ki) * k + kj) * ld + off..][..hw];
                let dx = kj as isize - p as isize;
                for y in 0..h {
                    let sy = y as isize + ki as isize - p as isize;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(F::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    // valid x range: 0 <= x + dx < w
                    let lo = ((-dx).max(0) as usize).min(w);
                    let hi = ((w as isize - dx).clamp(0, w as isize) as usize).max(lo);
                    dst[..lo].fill(F::zero());
                    dst[hi..].fill(F::zero());
                    if lo < hi {
                        let s0 = (lo as isize + dx) as usize;
                        dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
fn col2im<F: Float>(cols: &[F], c: usize, h: usize, w: usize, k: usize, dx_img: &mut [F], ld: usize, off: usize) {
    let p = k / 2;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx_img[ci * hw..(ci + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((ci * k + ki) * k + kj) * ld + off..][..hw];
                let dx = kj as isize - p as isize;
                for y in 0..h {
                    let sy = y as isize + ki as isize - p as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let lo = ((-dx).max(0) as usize).min(w);
                    let hi = ((w as isize - dx).clamp(0, w as isize) as usize).max(lo);
                    if lo < hi {
                        let d0 = (lo as isize + dx) as usize;
                        for (d, &v) in dst[d0..d0 + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// Rotates every `[H, W]` plane of an NCHW buffer counter-clockwise by
/// `k * 90` degrees.
pub fn rotate90_nchw<F: Float>(x: &Tensor<F>, k: usize) -> Tensor<F> {
    let (_, _, h, w) = x.dims4();
    assert_eq!(h, w, "rotation needs square planes");
    let k = k % 4;
    if k == 0 {
        return x.clone();
    }
    let mut out = vec![F::zero(); x.numel()];
    for (src, dst) in x.data().chunks(h * w).zip(out.chunks_mut(h * w)) {
        for i in 0..h {
            for j in 0..w {
                let (si, sj) = match k {
                    1 => (j, w - 1 - i),
                    2 => (h - 1 - i, w - 1 - j),
                    _ => (h - 1 - j, i),
                };
                dst[i * w + j] = src[si * w + sj];
            }
        }
    }
    Tensor::new(x.shape(), out)
}

/// Images per GEMM so that each product has a few thousand columns.
fn group_size(n: usize, hw: usize) -> usize {
    (2048 / hw.max(1)).clamp(1, n.max(1))
}

/// Patch matrix `[C*k*k, gsz*H*W]` for images `start..start+gsz`.
#[allow(clippy::too_many_arguments)]
fn gather_cols<F: Float>(x: &[F], start: usize, gsz: usize, c: usize, h: usize, w: usize, k: usize, cols: &mut [F]) {
    let hw = h * w;
    let ld = gsz * hw;
    for j in 0..gsz {
        let img = &x[(start + j) * c * hw..(start + j + 1) * c * hw];
        if k == 1 {
            for ci in 0..c {
                cols[ci * ld + j * hw..][..hw].copy_from_slice(&img[ci * hw..(ci + 1) * hw]);
            }
        } else {
            im2col(img, c, h, w, k, cols, ld, j * hw);
        }
    }
}

impl<F: Float> Graph<F> {
    /// Stride-1 convolution with "same" zero padding.
    ///
    /// `x` is `[N, C, H, W]`, `w` is `[O, C, k, k]` with odd `k`.
    pub fn conv2d(&mut self, x: Var, w: Var) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, c, h, wd) = xv.dims4();
        let (o, wc, kh, kw) = wv.dims4();
        assert_eq!(c, wc, "conv2d channel mismatch: input {c}, kernel {wc}");
        assert!(kh == kw && kh % 2 == 1, "conv2d needs odd square kernels");
        let hw = h * wd;
        let ckk = c * kh * kw;
        let group = group_size(n, hw);
        let mut out = vec![F::zero(); n * o * hw];
        let mut cols = vec![F::zero(); ckk * group * hw];
        let mut wide = vec![F::zero(); o * group * hw];
        for start in (0..n).step_by(group) {
            let gsz = group.min(n - start);
            let ld = gsz * hw;
            gather_cols(xv.data(), start, gsz, c, h, wd, kh, &mut cols[..ckk * ld]);
            gemm(o, ckk, ld, wv.data(), false, &cols[..ckk * ld], false, F::zero(), &mut wide[..o * ld]);
            for j in 0..gsz {
                let dst = &mut out[(start + j) * o * hw..(start + j + 1) * o * hw];
                for oc in 0..o {
                    dst[oc * hw..(oc + 1) * hw].copy_from_slice(&wide[oc * ld + j * hw..][..hw]);
                }
            }
        }
        self.push(Tensor::new(&[n, o, h, wd], out), Op::Conv2d { x, w }, &[x, w])
    }

    /// Nearest-neighbour 2x upsampling of an NCHW tensor.
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![F::zero(); n * c * h2 * w2];
        for (src, dst) in xv.data().chunks(h * w).zip(out.chunks_mut(h2 * w2)) {
            for i in 0..h2 {
                for j in 0..w2 {
                    dst[i * w2 + j] = src[(i / 2) * w + j / 2];
                }
            }
        }
        self.push(Tensor::new(&[n, c, h2, w2], out), Op::Upsample2x(x), &[x])
    }

    /// 2x2 average pooling with stride 2.
    pub fn avg_pool2x(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2x needs even spatial dims");
        let (h2, w2) = (h / 2, w / 2);
        let quarter = F::of(0.25);
        let mut out = vec![F::zero(); n * c * h2 * w2];
        for (src, dst) in xv.data().chunks(h * w).zip(out.chunks_mut(h2 * w2)) {
            for i in 0..h2 {
                for j in 0..w2 {
                    let a = src[2 * i * w + 2 * j];
                    let b = src[2 * i * w + 2 * j + 1];
                    let cc = src[(2 * i + 1) * w + 2 * j];
                    let d = src[(2 * i + 1) * w + 2 * j + 1];
                    dst[i * w2 + j] = (a + b + cc + d) * quarter;
                }
            }
        }
        self.push(Tensor::new(&[n, c, h2, w2], out), Op::AvgPool2x(x), &[x])
    }

    /// 2x2 max pooling with stride 2. Ties resolve to the first element in
    /// row-major window order.
    pub fn max_pool2x(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        assert!(h % 2 == 0 && w % 2 == 0, "max_pool2x needs even spatial dims");
        let (h2, w2) = (h / 2, w / 2);
        let mut out = vec![F::zero(); n * c * h2 * w2];
        let mut arg = vec![0u32; n * c * h2 * w2];
        for (p, (src, dst)) in xv.data().chunks(h * w).zip(out.chunks_mut(h2 * w2)).enumerate() {
            for i in 0..h2 {
                for j in 0..w2 {
                    let cands = [2 * i * w + 2 * j, 2 * i * w + 2 * j + 1, (2 * i + 1) * w + 2 * j, (2 * i + 1) * w + 2 * j + 1];
                    let mut best = cands[0];
                    for &q in &cands[1..] {
                        if src[q] > src[best] {
                            best = q;
                        }
                    }
                    dst[i * w2 + j] = src[best];
                    arg[p * h2 * w2 + i * w2 + j] = best as u32;
                }
            }
        }
        self.push(Tensor::new(&[n, c, h2, w2], out), Op::MaxPool2x(x, arg), &[x])
    }

    /// `[N, C, H, W] -> [N, C]` sum over spatial positions.
    pub fn sum_spatial(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        let data = xv.data().chunks(h * w).map(|p| p.iter().copied().sum()).collect();
        self.push(Tensor::new(&[n, c], data), Op::SumSpatial(x), &[x])
    }

    /// Counter-clockwise rotation of each NCHW image by `k * 90` degrees.
    pub fn rotate90(&mut self, x: Var, k: usize) -> Var {
        let out = rotate90_nchw(self.value(x), k);
        self.push(out, Op::Rotate90 { x, k: k % 4 }, &[x])
    }
}

pub(super) fn backward<'n, F: Float>(
    op: &Op<F>,
    gout: &Tensor<F>,
    val: &impl Fn(Var) -> &'n Tensor<F>,
    sink: &mut GradSink<'_, F>,
) {
    match op {
        &Op::Conv2d { x, w } => {
            let xv = val(x);
            let wv = val(w);
            let (n, c, h, wd) = xv.dims4();
            let (o, _, k, _) = wv.dims4();
            let hw = h * wd;
            let ckk = c * k * k;
            let want_x = sink.wants(x);
            let want_w = sink.wants(w);
            let mut dw = if want_w { vec![F::zero(); wv.numel()] } else { Vec::new() };
            let mut dx = if want_x { vec![F::zero(); xv.numel()] } else { Vec::new() };
            let group = group_size(n, hw);
            let mut cols = vec![F::zero(); ckk * group * hw];
            let mut gwide = vec![F::zero(); o * group * hw];
            for start in (0..n).step_by(group) {
                let gsz = group.min(n - start);
                let ld = gsz * hw;
                for j in 0..gsz {
                    let src = &gout.data()[(start + j) * o * hw..(start + j + 1) * o * hw];
                    for oc in 0..o {
                        gwide[oc * ld + j * hw..][..hw].copy_from_slice(&src[oc * hw..(oc + 1) * hw]);
                    }
                }
                if want_w {
                    gather_cols(xv.data(), start, gsz, c, h, wd, k, &mut cols[..ckk * ld]);
                    // dW[o, ckk] += dY[o, ld] · colsᵀ
                    gemm(o, ld, ckk, &gwide[..o * ld], false, &cols[..ckk * ld], true, F::one(), &mut dw);
                }
                if want_x {
                    // dcols[ckk, ld] = Wᵀ · dY
                    gemm(ckk, o, ld, wv.data(), true, &gwide[..o * ld], false, F::zero(), &mut cols[..ckk * ld]);
                    for j in 0..gsz {
                        let dxi = &mut dx[(start + j) * c * hw..(start + j + 1) * c * hw];
                        if k == 1 {
                            for ci in 0..c {
                                dxi[ci * hw..(ci + 1) * hw].copy_from_slice(&cols[ci * ld + j * hw..][..hw]);
                            }
                        } else {
                            col2im(&cols[..ckk * ld], c, h, wd, k, dxi, ld, j * hw);
                        }
                    }
                }
            }
            if want_w {
                sink.add(w, Tensor::new(wv.shape(), dw));
            }
            if want_x {
                sink.add(x, Tensor::new(xv.shape(), dx));
            }
        }
        &Op::Upsample2x(x) => {
            let (n, c, h, w) = val(x).dims4();
            let w2 = 2 * w;
            let mut dx = vec![F::zero(); n * c * h * w];
            for (src, dst) in gout.data().chunks(4 * h * w).zip(dx.chunks_mut(h * w)) {
                for i in 0..2 * h {
                    for j in 0..w2 {
                        dst[(i / 2) * w + j / 2] += src[i * w2 + j];
                    }
                }
            }
            sink.add(x, Tensor::new(&[n, c, h, w], dx));
        }
        &Op::AvgPool2x(x) => {
            let (n, c, h, w) = val(x).dims4();
            let w2 = w / 2;
            let quarter = F::of(0.25);
            let mut dx = vec![F::zero(); n * c * h * w];
            for (src, dst) in gout.data().chunks(h * w / 4).zip(dx.chunks_mut(h * w)) {
                for i in 0..h {
                    for j in 0..w {
                        dst[i * w + j] = src[(i / 2) * w2 + j / 2] * quarter;
                    }
                }
            }
            sink.add(x, Tensor::new(&[n, c, h, w], dx));
        }
        Op::MaxPool2x(x, arg) => {
            let (n, c, h, w) = val(*x).dims4();
            let q = h * w / 4;
            let mut dx = vec![F::zero(); n * c * h * w];
            for (p, (src, dst)) in gout.data().chunks(q).zip(dx.chunks_mut(h * w)).enumerate() {
                for (j, &g) in src.iter().enumerate() {
                    dst[arg[p * q + j] as usize] += g;
                }
            }
            sink.add(*x, Tensor::new(&[n, c, h, w], dx));
        }
        &Op::SumSpatial(x) => {
            let (n, c, h, w) = val(x).dims4();
            let mut dx = Vec::with_capacity(n * c * h * w);
            for &g in gout.data() {
                dx.extend(std::iter::repeat(g).take(h * w));
            }
            sink.add(x, Tensor::new(&[n, c, h, w], dx));
        }
        &Op::Rotate90 { x, k } => sink.add(x, rotate90_nchw(gout, (4 - k) % 4)),
        _ => unreachable!("not a spatial op"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], c: usize, h: usize, w: usize, wt: &[f64], o: usize, k: usize) -> Vec<f64> {
        let p = (k / 2) as isize;
        let mut out = vec![0.0; o * h * w];
        for oc in 0..o {
            for y in 0..h {
                for xx in 0..w {
                    let mut s = 0.0;
                    for ci in 0..c {
                        for ki in 0..k {
                            for kj in 0..k {
                                let sy = y as isize + ki as isize - p;
                                let sx = xx as isize + kj as isize - p;
                                if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                    s += wt[((oc * c + ci) * k + ki) * k + kj]
                                        * x[(ci * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                    }
                    out[(oc * h + y) * w + xx] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        let (c, h, w, o) = (2, 5, 4, 3);
        for k in [1, 3, 5] {
            let x: Vec<f64> = (0..c * h * w).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
            let wt: Vec<f64> = (0..o * c * k * k).map(|i| ((i * 3 % 7) as f64) * 0.1 - 0.3).collect();
            let mut g = Graph::<f64>::new();
            let xv = g.constant(Tensor::new(&[1, c, h, w], x.clone()));
            let wv = g.constant(Tensor::new(&[o, c, k, k], wt.clone()));
            let y = g.conv2d(xv, wv);
            let want = naive_conv(&x, c, h, w, &wt, o, k);
            for (a, b) in g.value(y).data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "k={k}");
            }
        }
    }

    #[test]
    fn rotation_matches_hand_permutation() {
        // [[a,b],[c,d]] rotated once counter-clockwise is [[b,d],[a,c]]
        let x = Tensor::<f64>::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(rotate90_nchw(&x, 1).data(), &[2.0, 4.0, 1.0, 3.0]);
        assert_eq!(rotate90_nchw(&x, 2).data(), &[4.0, 3.0, 2.0, 1.0]);
        assert_eq!(rotate90_nchw(&x, 3).data(), &[3.0, 1.0, 4.0, 2.0]);
        let once = rotate90_nchw(&x, 1);
        assert_eq!(rotate90_nchw(&once, 3), x);
    }
}
