//! Pointwise activations, broadcast multiplications, channel concatenation,
//! the fully connected layer, and reductions.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array4, ArrayD, ArrayView1, ArrayView2, ArrayView4, ArrayViewD, Axis};

use crate::Scalar;

pub fn relu<S: Scalar>(x: &ArrayViewD<S>) -> ArrayD<S> {
    x.mapv(|v| if v > S::zero() { v } else { S::zero() })
}

pub fn relu_backward<S: Scalar>(x: &ArrayViewD<S>, go: &ArrayViewD<S>) -> ArrayD<S> {
    let mut gx = go.to_owned();
    gx.zip_mut_with(x, |g, &v| {
        if v <= S::zero() {
            *g = S::zero();
        }
    });
    gx
}

pub fn sigmoid<S: Scalar>(x: &ArrayViewD<S>) -> ArrayD<S> {
    x.mapv(|v| S::one() / (S::one() + (-v).exp()))
}

/// Backward from the sigmoid output `y`.
pub fn sigmoid_backward<S: Scalar>(y: &ArrayViewD<S>, go: &ArrayViewD<S>) -> ArrayD<S> {
    let mut gx = go.to_owned();
    gx.zip_mut_with(y, |g, &v| *g = *g * v * (S::one() - v));
    gx
}

/// Element-wise sum of same-shaped arrays.
pub fn add_n<S: Scalar>(inputs: &[ArrayViewD<S>]) -> ArrayD<S> {
    let mut acc = inputs[0].to_owned();
    for v in &inputs[1..] {
        acc += v;
    }
    acc
}

pub fn mul<S: Scalar>(a: &ArrayViewD<S>, b: &ArrayViewD<S>) -> ArrayD<S> {
    let mut out = a.to_owned();
    out *= b;
    out
}

/// Channel-wise modulation: x (B,C,H,W) scaled per (b,c) by weights (B,C).
pub fn mul_channel<S: Scalar>(x: &ArrayView4<S>, w: &ArrayView2<S>) -> Array4<S> {
    let (batch, ch, h, wd) = x.dim();
    let mut y = Array4::<S>::zeros((batch, ch, h, wd));
    for bi in 0..batch {
        for c in 0..ch {
            let s = w[[bi, c]];
            for i in 0..h {
                for j in 0..wd {
                    y[[bi, c, i, j]] = x[[bi, c, i, j]] * s;
                }
            }
        }
    }
    y
}

pub fn mul_channel_backward<S: Scalar>(
    x: &ArrayView4<S>,
    w: &ArrayView2<S>,
    go: &ArrayView4<S>,
) -> (Array4<S>, Array2<S>) {
    let (batch, ch, h, wd) = x.dim();
    let mut gx = Array4::<S>::zeros((batch, ch, h, wd));
    let mut gw = Array2::<S>::zeros((batch, ch));
    for bi in 0..batch {
        for c in 0..ch {
            let s = w[[bi, c]];
            let mut acc = S::zero();
            for i in 0..h {
                for j in 0..wd {
                    let g = go[[bi, c, i, j]];
                    gx[[bi, c, i, j]] = g * s;
                    acc += g * x[[bi, c, i, j]];
                }
            }
            gw[[bi, c]] = acc;
        }
    }
    (gx, gw)
}

/// Spatial modulation: x (B,C,H,W) scaled per (b,i,j) by a map (B,1,H,W).
pub fn mul_spatial<S: Scalar>(x: &ArrayView4<S>, m: &ArrayView4<S>) -> Array4<S> {
    let (batch, ch, h, w) = x.dim();
    let mut y = Array4::<S>::zeros((batch, ch, h, w));
    for bi in 0..batch {
        for c in 0..ch {
            for i in 0..h {
                for j in 0..w {
                    y[[bi, c, i, j]] = x[[bi, c, i, j]] * m[[bi, 0, i, j]];
                }
            }
        }
    }
    y
}

pub fn mul_spatial_backward<S: Scalar>(
    x: &ArrayView4<S>,
    m: &ArrayView4<S>,
    go: &ArrayView4<S>,
) -> (Array4<S>, Array4<S>) {
    let (batch, ch, h, w) = x.dim();
    let mut gx = Array4::<S>::zeros((batch, ch, h, w));
    let mut gm = Array4::<S>::zeros((batch, 1, h, w));
    for bi in 0..batch {
        for c in 0..ch {
            for i in 0..h {
                for j in 0..w {
                    let g = go[[bi, c, i, j]];
                    gx[[bi, c, i, j]] = g * m[[bi, 0, i, j]];
                    gm[[bi, 0, i, j]] += g * x[[bi, c, i, j]];
                }
            }
        }
    }
    (gx, gm)
}

/// Concatenate along the channel axis. Fills a fresh standard-layout buffer
/// so downstream kernels can rely on contiguous batch slices.
pub fn concat_channels<S: Scalar>(inputs: &[ArrayView4<S>]) -> Array4<S> {
    let (b, _, h, w) = inputs[0].dim();
    let total_c: usize = inputs.iter().map(|v| v.dim().1).sum();
    let mut out = Array4::<S>::zeros((b, total_c, h, w));
    let mut start = 0;
    for v in inputs {
        let c = v.dim().1;
        out.slice_mut(ndarray::s![.., start..start + c, .., ..])
            .assign(v);
        start += c;
    }
    out
}

/// Split the concatenation gradient back into per-input gradients.
pub fn split_channels_backward<S: Scalar>(go: &ArrayView4<S>, channels: &[usize]) -> Vec<Array4<S>> {
    let mut out = Vec::with_capacity(channels.len());
    let mut start = 0;
    for &c in channels {
        out.push(go.slice(ndarray::s![.., start..start + c, .., ..]).to_owned());
        start += c;
    }
    out
}

/// Fully connected layer: y = x . w^T + b with x (B, In), w (Out, In).
pub fn linear<S: Scalar>(x: &ArrayView2<S>, w: &ArrayView2<S>, b: &ArrayView1<S>) -> Array2<S> {
    let (batch, _) = x.dim();
    let (out, _) = w.dim();
    let mut y = Array2::<S>::zeros((batch, out));
    general_mat_mul(S::one(), x, &w.t(), S::zero(), &mut y);
    for o in 0..out {
        let bias = b[o];
        y.column_mut(o).mapv_inplace(|v| v + bias);
    }
    y
}

pub fn linear_backward<S: Scalar>(
    x: &ArrayView2<S>,
    w: &ArrayView2<S>,
    go: &ArrayView2<S>,
) -> (Array2<S>, Array2<S>, Array1<S>) {
    let (batch, input) = x.dim();
    let (out, _) = w.dim();
    let mut gx = Array2::<S>::zeros((batch, input));
    general_mat_mul(S::one(), go, w, S::zero(), &mut gx);
    let mut gw = Array2::<S>::zeros((out, input));
    general_mat_mul(S::one(), &go.t(), x, S::zero(), &mut gw);
    let gb = go.sum_axis(Axis(0));
    (gx, gw, gb)
}

pub fn sum_all<S: Scalar>(x: &ArrayViewD<S>) -> S {
    x.iter().copied().sum()
}
