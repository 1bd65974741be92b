//! Max reductions: 2x2 max pooling, spatial global max pooling (one
//! descriptor per channel) and channel-wise max pooling (one map per image).
//! Each records flat argmax indices so the backward pass can route gradients.

use ndarray::{Array2, Array4, ArrayView2, ArrayView4};

use crate::Scalar;

/// 2x2 max pooling with stride 2. Spatial dims must be even.
/// Argmax entries are flat `ih * in_w + iw` indices per output cell,
/// in output iteration order (b, c, oh, ow).
pub fn maxpool2x2<S: Scalar>(x: &ArrayView4<S>) -> (Array4<S>, Vec<u32>) {
    let (batch, ch, in_h, in_w) = x.dim();
    assert!(in_h % 2 == 0 && in_w % 2 == 0, "pooling needs even dims");
    let (out_h, out_w) = (in_h / 2, in_w / 2);
    let mut y = Array4::<S>::zeros((batch, ch, out_h, out_w));
    let mut argmax = vec![0u32; batch * ch * out_h * out_w];
    let mut cursor = 0usize;
    for bi in 0..batch {
        for c in 0..ch {
            for oh in 0..out_h {
                for ow in 0..out_w {
                    let (i0, j0) = (oh * 2, ow * 2);
                    let mut best = x[[bi, c, i0, j0]];
                    let mut best_idx = (i0 * in_w + j0) as u32;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let v = x[[bi, c, i0 + di, j0 + dj]];
                        if v > best {
                            best = v;
                            best_idx = ((i0 + di) * in_w + (j0 + dj)) as u32;
                        }
                    }
                    y[[bi, c, oh, ow]] = best;
                    argmax[cursor] = best_idx;
                    cursor += 1;
                }
            }
        }
    }
    (y, argmax)
}

pub fn maxpool2x2_backward<S: Scalar>(
    go: &ArrayView4<S>,
    argmax: &[u32],
    in_h: usize,
    in_w: usize,
) -> Array4<S> {
    let (batch, ch, out_h, out_w) = go.dim();
    let mut gx = Array4::<S>::zeros((batch, ch, in_h, in_w));
    let mut cursor = 0usize;
    for bi in 0..batch {
        for c in 0..ch {
            for oh in 0..out_h {
                for ow in 0..out_w {
                    let flat = argmax[cursor] as usize;
                    cursor += 1;
                    gx[[bi, c, flat / in_w, flat % in_w]] += go[[bi, c, oh, ow]];
                }
            }
        }
    }
    gx
}

/// Global max pooling over the spatial extent: (B, C, H, W) -> (B, C).
pub fn global_max_spatial<S: Scalar>(x: &ArrayView4<S>) -> (Array2<S>, Vec<u32>) {
    let (batch, ch, in_h, in_w) = x.dim();
    let mut y = Array2::<S>::zeros((batch, ch));
    let mut argmax = vec![0u32; batch * ch];
    for bi in 0..batch {
        for c in 0..ch {
            let mut best = x[[bi, c, 0, 0]];
            let mut best_idx = 0u32;
            for i in 0..in_h {
                for j in 0..in_w {
                    let v = x[[bi, c, i, j]];
                    if v > best {
                        best = v;
                        best_idx = (i * in_w + j) as u32;
                    }
                }
            }
            y[[bi, c]] = best;
            argmax[bi * ch + c] = best_idx;
        }
    }
    (y, argmax)
}

pub fn global_max_spatial_backward<S: Scalar>(
    go: &ArrayView2<S>,
    argmax: &[u32],
    in_h: usize,
    in_w: usize,
) -> Array4<S> {
    let (batch, ch) = go.dim();
    let mut gx = Array4::<S>::zeros((batch, ch, in_h, in_w));
    for bi in 0..batch {
        for c in 0..ch {
            let flat = argmax[bi * ch + c] as usize;
            gx[[bi, c, flat / in_w, flat % in_w]] += go[[bi, c]];
        }
    }
    gx
}

/// Max over the channel axis: (B, C, H, W) -> (B, 1, H, W).
pub fn channel_max<S: Scalar>(x: &ArrayView4<S>) -> (Array4<S>, Vec<u32>) {
    let (batch, ch, in_h, in_w) = x.dim();
    let mut y = Array4::<S>::zeros((batch, 1, in_h, in_w));
    let mut argmax = vec![0u32; batch * in_h * in_w];
    for bi in 0..batch {
        for i in 0..in_h {
            for j in 0..in_w {
                let mut best = x[[bi, 0, i, j]];
                let mut best_c = 0u32;
                for c in 1..ch {
                    let v = x[[bi, c, i, j]];
                    if v > best {
                        best = v;
                        best_c = c as u32;
                    }
                }
                y[[bi, 0, i, j]] = best;
                argmax[(bi * in_h + i) * in_w + j] = best_c;
            }
        }
    }
    (y, argmax)
}

pub fn channel_max_backward<S: Scalar>(
    go: &ArrayView4<S>,
    argmax: &[u32],
    channels: usize,
) -> Array4<S> {
    let (batch, _, in_h, in_w) = go.dim();
    let mut gx = Array4::<S>::zeros((batch, channels, in_h, in_w));
    for bi in 0..batch {
        for i in 0..in_h {
            for j in 0..in_w {
                let c = argmax[(bi * in_h + i) * in_w + j] as usize;
                gx[[bi, c, i, j]] += go[[bi, 0, i, j]];
            }
        }
    }
    gx
}
