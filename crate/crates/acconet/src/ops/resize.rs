//! Bilinear resampling with half-pixel centers (corner alignment disabled).
//! The same tap tables drive the forward gather and the backward scatter, so
//! the pair is exactly adjoint.

use ndarray::{Array4, ArrayView4};

use crate::Scalar;

/// Per-output-coordinate taps: low index, high index, high-tap weight.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let floor = src.floor();
            let frac = src - floor;
            let i0 = floor.max(0.0) as usize;
            let i1 = (floor as i64 + 1).clamp(0, in_len as i64 - 1) as usize;
            let i0 = i0.min(in_len - 1);
            (i0, i1, frac.clamp(0.0, 1.0))
        })
        .collect()
}

pub fn bilinear_resize<S: Scalar>(x: &ArrayView4<S>, out_h: usize, out_w: usize) -> Array4<S> {
    let (batch, ch, in_h, in_w) = x.dim();
    let th = axis_taps(in_h, out_h);
    let tw = axis_taps(in_w, out_w);
    let mut y = Array4::<S>::zeros((batch, ch, out_h, out_w));
    for bi in 0..batch {
        for c in 0..ch {
            for (oi, &(i0, i1, fi)) in th.iter().enumerate() {
                for (oj, &(j0, j1, fj)) in tw.iter().enumerate() {
                    let v00 = x[[bi, c, i0, j0]].to_f64();
                    let v01 = x[[bi, c, i0, j1]].to_f64();
                    let v10 = x[[bi, c, i1, j0]].to_f64();
                    let v11 = x[[bi, c, i1, j1]].to_f64();
                    let top = v00 * (1.0 - fj) + v01 * fj;
                    let bot = v10 * (1.0 - fj) + v11 * fj;
                    y[[bi, c, oi, oj]] = S::from_f64(top * (1.0 - fi) + bot * fi);
                }
            }
        }
    }
    y
}

pub fn bilinear_resize_backward<S: Scalar>(
    go: &ArrayView4<S>,
    in_h: usize,
    in_w: usize,
) -> Array4<S> {
    let (batch, ch, out_h, out_w) = go.dim();
    let th = axis_taps(in_h, out_h);
    let tw = axis_taps(in_w, out_w);
    let mut gx = Array4::<S>::zeros((batch, ch, in_h, in_w));
    for bi in 0..batch {
        for c in 0..ch {
            for (oi, &(i0, i1, fi)) in th.iter().enumerate() {
                for (oj, &(j0, j1, fj)) in tw.iter().enumerate() {
                    let g = go[[bi, c, oi, oj]].to_f64();
                    gx[[bi, c, i0, j0]] += S::from_f64(g * (1.0 - fi) * (1.0 - fj));
                    gx[[bi, c, i0, j1]] += S::from_f64(g * (1.0 - fi) * fj);
                    gx[[bi, c, i1, j0]] += S::from_f64(g * fi * (1.0 - fj));
                    gx[[bi, c, i1, j1]] += S::from_f64(g * fi * fj);
                }
            }
        }
    }
    gx
}
