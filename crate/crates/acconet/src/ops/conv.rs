//! Stride-1 dilated convolution (im2col + GEMM) and the 2x stride-2
//! transposed convolution used between decoder blocks.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView1, ArrayView3, ArrayView4, Axis};
use rayon::prelude::*;

use super::conv_out_len;
use crate::Scalar;

/// Rows per GEMM chunk; keeps the im2col buffer a few MB at 256x256.
fn row_chunk(out_w: usize) -> usize {
    (4096 / out_w.max(1)).max(1)
}

/// Unfold rows `[r0, r1)` of one image into a (in_c*k*k, rows*out_w) matrix.
fn im2col_chunk<S: Scalar>(
    x: &ArrayView3<S>,
    k: usize,
    pad: usize,
    dilation: usize,
    out_w: usize,
    r0: usize,
    r1: usize,
) -> Array2<S> {
    let (in_c, in_h, in_w) = x.dim();
    let rows = r1 - r0;
    let cols = rows * out_w;
    let mut col = Array2::<S>::zeros((in_c * k * k, cols));
    let xs = x.as_slice().expect("standard layout input");
    let cs = col.as_slice_mut().expect("freshly allocated");
    for c in 0..in_c {
        for ki in 0..k {
            for kj in 0..k {
                let row_base = ((c * k + ki) * k + kj) * cols;
                // valid output columns for this kernel tap
                let off_j = kj * dilation;
                let (ow_lo, ow_hi) = valid_range(in_w, out_w, pad, off_j);
                if ow_lo >= ow_hi {
                    continue;
                }
                for oh in r0..r1 {
                    let ih = (oh + ki * dilation) as isize - pad as isize;
                    if ih < 0 || ih >= in_h as isize {
                        continue;
                    }
                    let x_row = (c * in_h + ih as usize) * in_w;
                    let dst = row_base + (oh - r0) * out_w;
                    for ow in ow_lo..ow_hi {
                        let iw = ow + off_j - pad;
                        cs[dst + ow] = xs[x_row + iw];
                    }
                }
            }
        }
    }
    col
}

/// Output columns `ow` with `0 <= ow + off - pad < in_w`. Empty when the
/// tap offset reaches past the padded extent (large dilation, small input).
fn valid_range(in_w: usize, out_w: usize, pad: usize, off: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(off);
    let hi = (in_w + pad).saturating_sub(off).min(out_w);
    (lo.min(out_w), hi)
}

/// Stride-1 2-D convolution with symmetric zero padding and dilation.
///
/// `x`: (B, Cin, H, W), `w`: (Cout, Cin, k, k), `b`: (Cout).
pub fn conv2d<S: Scalar>(
    x: &ArrayView4<S>,
    w: &ArrayView4<S>,
    b: &ArrayView1<S>,
    pad: usize,
    dilation: usize,
) -> Array4<S> {
    let (batch, in_c, in_h, in_w) = x.dim();
    let (out_c, w_in_c, k, k2) = w.dim();
    assert_eq!(in_c, w_in_c, "conv2d channel mismatch");
    assert_eq!(k, k2, "square kernels only");
    let out_h = conv_out_len(in_h, k, pad, dilation);
    let out_w = conv_out_len(in_w, k, pad, dilation);
    let w2 = w
        .to_shape((out_c, in_c * k * k))
        .expect("contiguous weights");

    let chunk = row_chunk(out_w);
    let mut jobs = Vec::new();
    for bi in 0..batch {
        let mut r0 = 0;
        while r0 < out_h {
            let r1 = (r0 + chunk).min(out_h);
            jobs.push((bi, r0, r1));
            r0 = r1;
        }
    }
    let pieces: Vec<(usize, usize, usize, Array2<S>)> = jobs
        .into_par_iter()
        .map(|(bi, r0, r1)| {
            let xb = x.index_axis(Axis(0), bi);
            let col = im2col_chunk(&xb, k, pad, dilation, out_w, r0, r1);
            let mut out = Array2::<S>::zeros((out_c, (r1 - r0) * out_w));
            general_mat_mul(S::one(), &w2.view(), &col.view(), S::zero(), &mut out);
            (bi, r0, r1, out)
        })
        .collect();

    let mut y = Array4::<S>::zeros((batch, out_c, out_h, out_w));
    for (bi, r0, r1, piece) in pieces {
        let shaped = piece
            .to_shape((out_c, r1 - r0, out_w))
            .expect("piece is contiguous");
        y.slice_mut(s![bi, .., r0..r1, ..]).assign(&shaped);
    }
    for co in 0..out_c {
        let bias = b[co];
        y.slice_mut(s![.., co, .., ..]).mapv_inplace(|v| v + bias);
    }
    y
}

/// Gradients of [`conv2d`] with respect to input, weights and bias.
pub fn conv2d_backward<S: Scalar>(
    x: &ArrayView4<S>,
    w: &ArrayView4<S>,
    go: &ArrayView4<S>,
    pad: usize,
    dilation: usize,
) -> (Array4<S>, Array4<S>, Array1<S>) {
    let (batch, in_c, in_h, in_w) = x.dim();
    let (out_c, _, k, _) = w.dim();
    let (_, _, out_h, out_w) = go.dim();
    let w2 = w
        .to_shape((out_c, in_c * k * k))
        .expect("contiguous weights");

    let per_batch: Vec<(Array3<S>, Array2<S>, Array1<S>)> = (0..batch)
        .into_par_iter()
        .map(|bi| {
            let xb = x.index_axis(Axis(0), bi);
            let gob = go.index_axis(Axis(0), bi);
            let go2 = gob
                .to_shape((out_c, out_h * out_w))
                .expect("contiguous grad");
            let mut gxb = Array3::<S>::zeros((in_c, in_h, in_w));
            let mut gw2 = Array2::<S>::zeros((out_c, in_c * k * k));
            let chunk = row_chunk(out_w);
            let mut r0 = 0;
            while r0 < out_h {
                let r1 = (r0 + chunk).min(out_h);
                let col = im2col_chunk(&xb, k, pad, dilation, out_w, r0, r1);
                let go_chunk = go2.slice(s![.., r0 * out_w..r1 * out_w]);
                // dL/dW += dL/dY . col^T
                general_mat_mul(S::one(), &go_chunk, &col.t(), S::one(), &mut gw2);
                // dL/dcol = W^T . dL/dY, scattered back onto the input
                let mut gcol = Array2::<S>::zeros((in_c * k * k, (r1 - r0) * out_w));
                general_mat_mul(S::one(), &w2.t(), &go_chunk, S::zero(), &mut gcol);
                col2im_chunk(&mut gxb, &gcol, k, pad, dilation, out_w, r0, r1);
                r0 = r1;
            }
            let gb = gob.sum_axis(Axis(2)).sum_axis(Axis(1));
            (gxb, gw2, gb)
        })
        .collect();

    let mut gx = Array4::<S>::zeros((batch, in_c, in_h, in_w));
    let mut gw2 = Array2::<S>::zeros((out_c, in_c * k * k));
    let mut gb = Array1::<S>::zeros(out_c);
    for (bi, (gxb, gw2b, gbb)) in per_batch.into_iter().enumerate() {
        gx.index_axis_mut(Axis(0), bi).assign(&gxb);
        gw2 += &gw2b;
        gb += &gbb;
    }
    let gw = gw2
        .into_shape_with_order((out_c, in_c, k, k))
        .expect("weight grad shape");
    (gx, gw, gb)
}

#[allow(clippy::too_many_arguments)]
fn col2im_chunk<S: Scalar>(
    gx: &mut Array3<S>,
    gcol: &Array2<S>,
    k: usize,
    pad: usize,
    dilation: usize,
    out_w: usize,
    r0: usize,
    r1: usize,
) {
    let (in_c, in_h, in_w) = gx.dim();
    let cols = (r1 - r0) * out_w;
    let gs = gx.as_slice_mut().expect("standard layout");
    let cs = gcol.as_slice().expect("contiguous");
    for c in 0..in_c {
        for ki in 0..k {
            for kj in 0..k {
                let row_base = ((c * k + ki) * k + kj) * cols;
                let off_j = kj * dilation;
                let (ow_lo, ow_hi) = valid_range(in_w, out_w, pad, off_j);
                if ow_lo >= ow_hi {
                    continue;
                }
                for oh in r0..r1 {
                    let ih = (oh + ki * dilation) as isize - pad as isize;
                    if ih < 0 || ih >= in_h as isize {
                        continue;
                    }
                    let x_row = (c * in_h + ih as usize) * in_w;
                    let src = row_base + (oh - r0) * out_w;
                    for ow in ow_lo..ow_hi {
                        let iw = ow + off_j - pad;
                        gs[x_row + iw] += cs[src + ow];
                    }
                }
            }
        }
    }
}

/// Transposed convolution with a 2x2 kernel and stride 2: exact 2x spatial
/// upsampling with learned weights. `w`: (Cin, Cout, 2, 2).
pub fn deconv2x2<S: Scalar>(
    x: &ArrayView4<S>,
    w: &ArrayView4<S>,
    b: &ArrayView1<S>,
) -> Array4<S> {
    let (batch, in_c, in_h, in_w) = x.dim();
    let (w_in_c, out_c, _, _) = w.dim();
    assert_eq!(in_c, w_in_c, "deconv channel mismatch");
    let (out_h, out_w) = (in_h * 2, in_w * 2);
    let mut y = Array4::<S>::zeros((batch, out_c, out_h, out_w));

    y.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(bi, mut yb)| {
            let xb = x.index_axis(Axis(0), bi);
            let x2 = xb.to_shape((in_c, in_h * in_w)).expect("contiguous");
            for ki in 0..2 {
                for kj in 0..2 {
                    // y[:, 2i+ki, 2j+kj] = W[:,:,ki,kj]^T . x
                    let wk = w.slice(s![.., .., ki, kj]);
                    let mut out = Array2::<S>::zeros((out_c, in_h * in_w));
                    general_mat_mul(S::one(), &wk.t(), &x2.view(), S::zero(), &mut out);
                    let shaped = out.to_shape((out_c, in_h, in_w)).expect("contiguous");
                    yb.slice_mut(s![.., ki..;2, kj..;2]).assign(&shaped);
                }
            }
        });
    for co in 0..out_c {
        let bias = b[co];
        y.slice_mut(s![.., co, .., ..]).mapv_inplace(|v| v + bias);
    }
    y
}

pub fn deconv2x2_backward<S: Scalar>(
    x: &ArrayView4<S>,
    w: &ArrayView4<S>,
    go: &ArrayView4<S>,
) -> (Array4<S>, Array4<S>, Array1<S>) {
    let (batch, in_c, in_h, in_w) = x.dim();
    let (_, out_c, _, _) = w.dim();
    let per_batch: Vec<(Array3<S>, Array4<S>, Array1<S>)> = (0..batch)
        .into_par_iter()
        .map(|bi| {
            let xb = x.index_axis(Axis(0), bi);
            let gob = go.index_axis(Axis(0), bi);
            let x2 = xb.to_shape((in_c, in_h * in_w)).expect("contiguous");
            let mut gx2 = Array2::<S>::zeros((in_c, in_h * in_w));
            let mut gwb = Array4::<S>::zeros((in_c, out_c, 2, 2));
            let mut gbb = Array1::<S>::zeros(out_c);
            for ki in 0..2 {
                for kj in 0..2 {
                    let go_k = gob.slice(s![.., ki..;2, kj..;2]);
                    let go_k2: Array2<S> = go_k
                        .to_owned()
                        .into_shape_with_order((out_c, in_h * in_w))
                        .expect("strided grad slice");
                    let wk = w.slice(s![.., .., ki, kj]);
                    general_mat_mul(S::one(), &wk, &go_k2.view(), S::one(), &mut gx2);
                    let mut gwk = Array2::<S>::zeros((in_c, out_c));
                    general_mat_mul(S::one(), &x2.view(), &go_k2.t(), S::zero(), &mut gwk);
                    gwb.slice_mut(s![.., .., ki, kj]).assign(&gwk);
                    gbb += &go_k2.sum_axis(Axis(1));
                }
            }
            let gxb = gx2
                .into_shape_with_order((in_c, in_h, in_w))
                .expect("input grad shape");
            (gxb, gwb, gbb)
        })
        .collect();

    let mut gx = Array4::<S>::zeros((batch, in_c, in_h, in_w));
    let mut gw = Array4::<S>::zeros((in_c, out_c, 2, 2));
    let mut gb = Array1::<S>::zeros(out_c);
    for (bi, (gxb, gwb, gbb)) in per_batch.into_iter().enumerate() {
        gx.index_axis_mut(Axis(0), bi).assign(&gxb);
        gw += &gwb;
        gb += &gbb;
    }
    (gx, gw, gb)
}
