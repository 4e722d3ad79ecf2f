//! 3-D convolution and transposed convolution kernels (im2col + GEMM).
//!
//! Both operators share one [`ConvGeometry`]: the "dense" side is the
//! higher-resolution volume (input of a convolution, output of a transposed
//! convolution) and the "strided" side is the lower-resolution one. Column
//! buffers are built a few strided-side time slices at a time so the
//! full-size preset does not need multi-hundred-megabyte scratch space.

use super::tensor::{gemm, Real, Trans};

/// Upper bound on scratch column-buffer elements per chunk.
const MAX_COL_ELEMS: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    /// Channels on the dense side.
    pub channels: usize,
    /// `[T, H, W]` of the dense side.
    pub dense: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    /// `[T, H, W]` of the strided side.
    pub strided: [usize; 3],
}

impl ConvGeometry {
    /// Geometry of a convolution over `dense`; `None` if the kernel does not
    /// fit.
    pub fn new(
        channels: usize,
        dense: [usize; 3],
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Option<Self> {
        let mut strided = [0; 3];
        for d in 0..3 {
            let span = dense[d] + 2 * padding[d];
            if span < kernel[d] || stride[d] == 0 {
                return None;
            }
            strided[d] = (span - kernel[d]) / stride[d] + 1;
        }
        Some(Self {
            channels,
            dense,
            kernel,
            stride,
            padding,
            strided,
        })
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Rows of the column matrix (`channels × kernel volume`).
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel_volume()
    }

    pub fn dense_len(&self) -> usize {
        self.dense.iter().product()
    }

    pub fn strided_len(&self) -> usize {
        self.strided.iter().product()
    }

    fn plane(&self) -> usize {
        self.strided[1] * self.strided[2]
    }

    /// Strided-side time slices per column chunk.
    fn chunk_slices(&self) -> usize {
        let per_slice = self.col_rows() * self.plane();
        (MAX_COL_ELEMS / per_slice.max(1)).clamp(1, self.strided[0])
    }

    fn chunks(&self) -> impl Iterator<Item = (usize, usize)> {
        let step = self.chunk_slices();
        let total = self.strided[0];
        (0..total).step_by(step).map(move |t0| (t0, (t0 + step).min(total)))
    }
}

/// Gather dense-side patches for strided slices `t0..t1` into
/// `col` (`col_rows × (t1-t0)·plane`).
pub fn im2col<F: Real>(g: &ConvGeometry, dense: &[F], t0: usize, t1: usize, col: &mut [F]) {
    let [dt, dh, dw] = g.dense;
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.padding;
    let [_, oh, ow] = g.strided;
    let n = (t1 - t0) * oh * ow;
    debug_assert!(col.len() >= g.col_rows() * n);
    let mut row = 0;
    for c in 0..g.channels {
        let chan = &dense[c * dt * dh * dw..(c + 1) * dt * dh * dw];
        for a in 0..kt {
            for b in 0..kh {
                for e in 0..kw {
                    let out = &mut col[row * n..(row + 1) * n];
                    let mut idx = 0;
                    for ot in t0..t1 {
                        let it = (ot * st + a) as isize - pt as isize;
                        if it < 0 || it >= dt as isize {
                            out[idx..idx + oh * ow].fill(F::ZERO);
                            idx += oh * ow;
                            continue;
                        }
                        let tslice = &chan[it as usize * dh * dw..(it as usize + 1) * dh * dw];
                        for oy in 0..oh {
                            let iy = (oy * sh + b) as isize - ph as isize;
                            if iy < 0 || iy >= dh as isize {
                                out[idx..idx + ow].fill(F::ZERO);
                                idx += ow;
                                continue;
                            }
                            let line = &tslice[iy as usize * dw..(iy as usize + 1) * dw];
                            for ox in 0..ow {
                                let ix = (ox * sw + e) as isize - pw as isize;
                                out[idx] = if ix < 0 || ix >= dw as isize {
                                    F::ZERO
                                } else {
                                    line[ix as usize]
                                };
                                idx += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Scatter-add a column chunk back onto the dense side (adjoint of
/// [`im2col`]).
pub fn col2im_add<F: Real>(g: &ConvGeometry, col: &[F], t0: usize, t1: usize, dense: &mut [F]) {
    let [dt, dh, dw] = g.dense;
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.padding;
    let [_, oh, ow] = g.strided;
    let n = (t1 - t0) * oh * ow;
    let mut row = 0;
    for c in 0..g.channels {
        let chan = &mut dense[c * dt * dh * dw..(c + 1) * dt * dh * dw];
        for a in 0..kt {
            for b in 0..kh {
                for e in 0..kw {
                    let src = &col[row * n..(row + 1) * n];
                    let mut idx = 0;
                    for ot in t0..t1 {
                        let it = (ot * st + a) as isize - pt as isize;
                        if it < 0 || it >= dt as isize {
                            idx += oh * ow;
                            continue;
                        }
                        let base = it as usize * dh * dw;
                        for oy in 0..oh {
                            let iy = (oy * sh + b) as isize - ph as isize;
                            if iy < 0 || iy >= dh as isize {
                                idx += ow;
                                continue;
                            }
                            let line = base + iy as usize * dw;
                            for ox in 0..ow {
                                let ix = (ox * sw + e) as isize - pw as isize;
                                if ix >= 0 && ix < dw as isize {
                                    chan[line + ix as usize] += src[idx];
                                }
                                idx += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Convolution of one sample: `x` (`channels × dense`) with `weight`
/// (`out_channels × col_rows`) into `y` (`out_channels × strided`).
pub fn conv_forward<F: Real>(g: &ConvGeometry, weight: &[F], out_channels: usize, x: &[F], y: &mut [F]) {
    let s_out = g.strided_len();
    let plane = g.plane();
    let rows = g.col_rows();
    let mut col = vec![F::ZERO; rows * g.chunk_slices() * plane];
    for (t0, t1) in g.chunks() {
        let n = (t1 - t0) * plane;
        im2col(g, x, t0, t1, &mut col);
        gemm(
            out_channels,
            rows,
            n,
            F::ONE,
            weight,
            rows,
            Trans::No,
            &col,
            n,
            Trans::No,
            F::ZERO,
            &mut y[t0 * plane..],
            s_out,
        );
    }
}

/// Backward of [`conv_forward`] for one sample: accumulates into `d_weight`
/// and, when given, overwrites `dx`.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<F: Real>(
    g: &ConvGeometry,
    weight: &[F],
    out_channels: usize,
    x: &[F],
    dy: &[F],
    d_weight: &mut [F],
    mut dx: Option<&mut [F]>,
) {
    let s_out = g.strided_len();
    let plane = g.plane();
    let rows = g.col_rows();
    let mut col = vec![F::ZERO; rows * g.chunk_slices() * plane];
    if let Some(dx) = dx.as_deref_mut() {
        dx.fill(F::ZERO);
    }
    for (t0, t1) in g.chunks() {
        let n = (t1 - t0) * plane;
        let dy_chunk = &dy[t0 * plane..];
        im2col(g, x, t0, t1, &mut col);
        gemm(
            out_channels,
            n,
            rows,
            F::ONE,
            dy_chunk,
            s_out,
            Trans::No,
            &col,
            n,
            Trans::Yes,
            F::ONE,
            d_weight,
            rows,
        );
        if let Some(dx) = dx.as_deref_mut() {
            gemm(
                rows,
                out_channels,
                n,
                F::ONE,
                weight,
                rows,
                Trans::Yes,
                dy_chunk,
                s_out,
                Trans::No,
                F::ZERO,
                &mut col,
                n,
            );
            col2im_add(g, &col, t0, t1, dx);
        }
    }
}

/// Transposed convolution of one sample: `x` (`in_channels × strided`) with
/// `weight` (`in_channels × col_rows`) into `y` (`channels × dense`).
pub fn deconv_forward<F: Real>(g: &ConvGeometry, weight: &[F], in_channels: usize, x: &[F], y: &mut [F]) {
    let s_in = g.strided_len();
    let plane = g.plane();
    let rows = g.col_rows();
    let mut col = vec![F::ZERO; rows * g.chunk_slices() * plane];
    y.fill(F::ZERO);
    for (t0, t1) in g.chunks() {
        let n = (t1 - t0) * plane;
        gemm(
            rows,
            in_channels,
            n,
            F::ONE,
            weight,
            rows,
            Trans::Yes,
            &x[t0 * plane..],
            s_in,
            Trans::No,
            F::ZERO,
            &mut col,
            n,
        );
        col2im_add(g, &col, t0, t1, y);
    }
}

/// Backward of [`deconv_forward`] for one sample.
#[allow(clippy::too_many_arguments)]
pub fn deconv_backward<F: Real>(
    g: &ConvGeometry,
    weight: &[F],
    in_channels: usize,
    x: &[F],
    dy: &[F],
    d_weight: &mut [F],
    mut dx: Option<&mut [F]>,
) {
    let s_in = g.strided_len();
    let plane = g.plane();
    let rows = g.col_rows();
    let mut col = vec![F::ZERO; rows * g.chunk_slices() * plane];
    for (t0, t1) in g.chunks() {
        let n = (t1 - t0) * plane;
        im2col(g, dy, t0, t1, &mut col);
        if let Some(dx) = dx.as_deref_mut() {
            gemm(
                in_channels,
                rows,
                n,
                F::ONE,
                weight,
                rows,
                Trans::No,
                &col,
                n,
                Trans::No,
                F::ZERO,
                &mut dx[t0 * plane..],
                s_in,
            );
        }
        gemm(
            in_channels,
            n,
            rows,
            F::ONE,
            &x[t0 * plane..],
            s_in,
            Trans::No,
            &col,
            n,
            Trans::Yes,
            F::ONE,
            d_weight,
            rows,
        );
    }
}
