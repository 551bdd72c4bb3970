//! Raw loops behind the convolution and pooling ops. All buffers are
//! row-major `[batch, channel, height, width]`.

use super::Real;
use crate::par;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvDims {
    fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Valid `(dst_start, src_start, len)` ranges for a shift of `d` in {-1,0,1}
/// along an axis of length `n`, i.e. `dst[i] <- src[i + d]`.
#[inline]
fn shifted(n: usize, d: isize) -> (usize, usize, usize) {
    match d {
        -1 => (1, 0, n - 1),
        0 => (0, 0, n),
        _ => (0, 1, n - 1),
    }
}

/// Unfolds one `[c_in, h, w]` image into `[c_in * 9, h * w]` columns: row
/// `c*9 + ky*3 + kx` holds the input shifted by `(ky - 1, kx - 1)`, zero
/// outside the image.
fn im2col<T: Real>(dims: ConvDims, img: &[T], cols: &mut [T]) {
    let (h, w, plane) = (dims.h, dims.w, dims.plane());
    cols.fill(T::zero());
    for c in 0..dims.c_in {
        let src_p = &img[c * plane..(c + 1) * plane];
        for ky in 0..3 {
            let (y0, sy0, ny) = shifted(h, ky as isize - 1);
            for kx in 0..3 {
                let (x0, sx0, nx) = shifted(w, kx as isize - 1);
                let row = &mut cols[(c * 9 + ky * 3 + kx) * plane..(c * 9 + ky * 3 + kx + 1) * plane];
                for r in 0..ny {
                    row[(y0 + r) * w + x0..(y0 + r) * w + x0 + nx]
                        .copy_from_slice(&src_p[(sy0 + r) * w + sx0..(sy0 + r) * w + sx0 + nx]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: folds column gradients back onto the image.
fn col2im_add<T: Real>(dims: ConvDims, cols: &[T], img: &mut [T]) {
    let (h, w, plane) = (dims.h, dims.w, dims.plane());
    for c in 0..dims.c_in {
        let dst_p = &mut img[c * plane..(c + 1) * plane];
        for ky in 0..3 {
            let (y0, sy0, ny) = shifted(h, ky as isize - 1);
            for kx in 0..3 {
                let (x0, sx0, nx) = shifted(w, kx as isize - 1);
                let row = &cols[(c * 9 + ky * 3 + kx) * plane..(c * 9 + ky * 3 + kx + 1) * plane];
                for r in 0..ny {
                    let dst = &mut dst_p[(sy0 + r) * w + sx0..(sy0 + r) * w + sx0 + nx];
                    let src = &row[(y0 + r) * w + x0..(y0 + r) * w + x0 + nx];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// `out[b,o] = bias[o] + sum_{c,ky,kx} k[o,c,ky,kx] * in[b,c, y+ky-1, x+kx-1]`,
/// zero padding 1, no kernel flip.
pub(crate) fn conv3x3_forward<T: Real>(
    dims: ConvDims,
    input: &[T],
    kernel: &[T],
    bias: Option<&[T]>,
    out: &mut [T],
) {
    let plane = dims.plane();
    let kdim = dims.c_in * 9;
    par::for_each_chunk_mut(out, dims.c_out * plane, |b, out_b| {
        let mut cols = vec![T::zero(); kdim * plane];
        im2col(dims, &input[b * dims.c_in * plane..(b + 1) * dims.c_in * plane], &mut cols);
        T::gemm(dims.c_out, kdim, plane, kernel, false, &cols, false, out_b, false);
        if let Some(bs) = bias {
            for (o, p) in out_b.chunks_mut(plane).enumerate() {
                for v in p {
                    *v += bs[o];
                }
            }
        }
    });
}

/// Accumulates the input gradient given the output gradient.
pub(crate) fn conv3x3_backward_input<T: Real>(
    dims: ConvDims,
    grad_out: &[T],
    kernel: &[T],
    grad_in: &mut [T],
) {
    let plane = dims.plane();
    let kdim = dims.c_in * 9;
    par::for_each_chunk_mut(grad_in, dims.c_in * plane, |b, gin_b| {
        let g_b = &grad_out[b * dims.c_out * plane..(b + 1) * dims.c_out * plane];
        let mut cols = vec![T::zero(); kdim * plane];
        T::gemm(kdim, dims.c_out, plane, kernel, true, g_b, false, &mut cols, false);
        col2im_add(dims, &cols, gin_b);
    });
}

/// Kernel gradient, `[c_out, c_in, 3, 3]`, and bias gradient, `[c_out]`,
/// accumulated into the given buffers. Per-sample partials are summed in
/// sample order, so the result does not depend on the thread count.
pub(crate) fn conv3x3_backward_params<T: Real>(
    dims: ConvDims,
    grad_out: &[T],
    input: &[T],
    grad_kernel: &mut [T],
    grad_bias: Option<&mut [T]>,
) {
    let plane = dims.plane();
    let kdim = dims.c_in * 9;
    let partials = par::map_range(dims.batch, |b| {
        let g_b = &grad_out[b * dims.c_out * plane..(b + 1) * dims.c_out * plane];
        let mut cols = vec![T::zero(); kdim * plane];
        im2col(dims, &input[b * dims.c_in * plane..(b + 1) * dims.c_in * plane], &mut cols);
        let mut gk = vec![T::zero(); dims.c_out * kdim];
        T::gemm(dims.c_out, plane, kdim, g_b, false, &cols, true, &mut gk, false);
        gk
    });
    for gk in &partials {
        for (d, &s) in grad_kernel.iter_mut().zip(gk) {
            *d += s;
        }
    }
    if let Some(gb) = grad_bias {
        for (o, slot) in gb.iter_mut().enumerate() {
            let mut acc = T::zero();
            for b in 0..dims.batch {
                acc += grad_out[(b * dims.c_out + o) * plane..(b * dims.c_out + o + 1) * plane]
                    .iter()
                    .copied()
                    .sum::<T>();
            }
            *slot += acc;
        }
    }
}

/// 2x2 max pooling with stride 2. Returns the pooled values and, for each
/// output element, the flat input index of the selected maximum (first
/// in scan order on ties).
pub(crate) fn maxpool2x2_forward<T: Real>(
    planes: usize,
    h: usize,
    w: usize,
    input: &[T],
) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![T::zero(); planes * oh * ow];
    let mut arg = vec![0usize; planes * oh * ow];
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let i0 = base + (2 * y) * w + 2 * x;
                let cand = [i0, i0 + 1, i0 + w, i0 + w + 1];
                let mut best = cand[0];
                for &i in &cand[1..] {
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                let o = p * oh * ow + y * ow + x;
                out[o] = input[best];
                arg[o] = best;
            }
        }
    }
    (out, arg)
}
