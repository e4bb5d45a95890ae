//! Dense kernels behind the tape ops. Convolution lowers to im2col + GEMM.

use super::tensor::Float;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        Some(ConvGeom {
            c,
            h,
            w,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Output indices `lo..hi` whose tap `t` lands inside an axis of length `size`.
    #[inline]
    fn valid(&self, t: usize, size: usize, outs: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.pad as isize);
        let off = t as isize - p;
        // o*s + off >= 0  and  o*s + off <= size-1
        let lo = if off >= 0 { 0 } else { ((-off + s - 1) / s) as usize };
        let hi_num = size as isize - 1 - off;
        let hi = if hi_num < 0 { 0 } else { ((hi_num / s) + 1) as usize };
        (lo.min(outs), hi.min(outs).max(lo.min(outs)))
    }
}

/// Unfold one image (C x H x W) into columns (C*k*k x Ho*Wo).
pub(crate) fn im2col<T: Float>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            let (ylo, yhi) = g.valid(ki, g.h, g.ho);
            for kj in 0..g.k {
                let (xlo, xhi) = g.valid(kj, g.w, g.wo);
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.ho {
                    let out = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if oy < ylo || oy >= yhi {
                        out.fill(T::zero());
                        continue;
                    }
                    let iy = oy * g.stride + ki - g.pad;
                    let src_row = &plane[iy * g.w..(iy + 1) * g.w];
                    out[..xlo].fill(T::zero());
                    out[xhi..].fill(T::zero());
                    if xhi > xlo {
                        let ix0 = xlo * g.stride + kj - g.pad;
                        if g.stride == 1 {
                            out[xlo..xhi].copy_from_slice(&src_row[ix0..ix0 + (xhi - xlo)]);
                        } else {
                            for (v, s) in out[xlo..xhi].iter_mut().zip(src_row[ix0..].iter().step_by(g.stride)) {
                                *v = *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Fold columns back, accumulating into `dx` (C x H x W).
pub(crate) fn col2im<T: Float>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            let (ylo, yhi) = g.valid(ki, g.h, g.ho);
            for kj in 0..g.k {
                let (xlo, xhi) = g.valid(kj, g.w, g.wo);
                if xhi <= xlo {
                    continue;
                }
                let row = (c * g.k + ki) * g.k + kj;
                let src = &col[row * cols..(row + 1) * cols];
                let ix0 = xlo * g.stride + kj - g.pad;
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ki - g.pad;
                    let dst = &mut plane[iy * g.w + ix0..(iy + 1) * g.w];
                    let s = &src[oy * g.wo + xlo..oy * g.wo + xhi];
                    for (d, v) in dst.iter_mut().step_by(g.stride).zip(s) {
                        *d += *v;
                    }
                }
            }
        }
    }
}

/// out[n] = W (O x Ckk) * col(x[n]) + b.
pub(crate) fn conv2d_forward<T: Float>(
    x: &[T],
    n: usize,
    g: &ConvGeom,
    weight: &[T],
    bias: &[T],
    out_ch: usize,
) -> Vec<T> {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_per = g.c * g.h * g.w;
    let out_per = out_ch * cols;
    let mut out = vec![T::zero(); n * out_per];
    let mut col = vec![T::zero(); rows * cols];
    for b in 0..n {
        im2col(&x[b * in_per..(b + 1) * in_per], g, &mut col);
        let dst = &mut out[b * out_per..(b + 1) * out_per];
        for (o, chunk) in dst.chunks_mut(cols).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bias[o]);
        }
        T::gemm(out_ch, rows, cols, weight, rows, 1, &col, cols, 1, T::one(), dst, cols);
    }
    out
}

/// Gradients of a convolution. `dx` is skipped when `want_dx` is false.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Float>(
    x: &[T],
    n: usize,
    g: &ConvGeom,
    weight: &[T],
    out_ch: usize,
    gout: &[T],
    want_dx: bool,
    dw: &mut [T],
    db: &mut [T],
) -> Option<Vec<T>> {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_per = g.c * g.h * g.w;
    let out_per = out_ch * cols;
    let mut col = vec![T::zero(); rows * cols];
    let mut dcol = vec![T::zero(); rows * cols];
    let mut dx = want_dx.then(|| vec![T::zero(); n * in_per]);
    for b in 0..n {
        let go = &gout[b * out_per..(b + 1) * out_per];
        for (o, chunk) in go.chunks(cols).enumerate() {
            db[o] += chunk.iter().copied().sum::<T>();
        }
        im2col(&x[b * in_per..(b + 1) * in_per], g, &mut col);
        // dW += gout (O x cols) * col^T (cols x rows)
        T::gemm(out_ch, cols, rows, go, cols, 1, &col, 1, cols, T::one(), dw, rows);
        if let Some(dx) = dx.as_mut() {
            // dcol = W^T (rows x O) * gout (O x cols)
            T::gemm(rows, out_ch, cols, weight, 1, rows, go, cols, 1, T::zero(), &mut dcol, cols);
            col2im(&dcol, g, &mut dx[b * in_per..(b + 1) * in_per]);
        }
    }
    dx
}
