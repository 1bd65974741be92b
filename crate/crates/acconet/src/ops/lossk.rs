//! Loss kernels: pixel-level binary cross-entropy and map-level IoU.

use ndarray::{Array4, ArrayD, ArrayView4, ArrayViewD};

use crate::Scalar;

/// Mean over all elements of -[g*ln(s+eps) + (1-g)*ln(1-s+eps)].
pub fn bce<S: Scalar>(pred: &ArrayViewD<S>, target: &ArrayViewD<S>, eps: S) -> S {
    let n = S::from_f64(pred.len() as f64);
    let mut acc = S::zero();
    for (&s, &g) in pred.iter().zip(target.iter()) {
        acc += -(g * (s + eps).ln() + (S::one() - g) * (S::one() - s + eps).ln());
    }
    acc / n
}

pub fn bce_backward<S: Scalar>(
    pred: &ArrayViewD<S>,
    target: &ArrayViewD<S>,
    eps: S,
    go: S,
) -> ArrayD<S> {
    let n = S::from_f64(pred.len() as f64);
    let scale = go / n;
    let mut gx = pred.to_owned();
    gx.zip_mut_with(target, |s, &g| {
        *s = scale * (-(g / (*s + eps)) + (S::one() - g) / (S::one() - *s + eps));
    });
    gx
}

/// Map-level IoU loss: 1 - (sum(S*G)+eps)/(sum(S)+sum(G)-sum(S*G)+eps) per
/// image, averaged over the batch. Inputs are (B, 1, H, W).
pub fn iou<S: Scalar>(pred: &ArrayView4<S>, target: &ArrayView4<S>, eps: S) -> S {
    let batch = pred.dim().0;
    let mut acc = S::zero();
    for bi in 0..batch {
        let p = pred.index_axis(ndarray::Axis(0), bi);
        let g = target.index_axis(ndarray::Axis(0), bi);
        let mut inter = S::zero();
        let mut sum_p = S::zero();
        let mut sum_g = S::zero();
        for (&s, &t) in p.iter().zip(g.iter()) {
            inter += s * t;
            sum_p += s;
            sum_g += t;
        }
        let union = sum_p + sum_g - inter;
        acc += S::one() - (inter + eps) / (union + eps);
    }
    acc / S::from_f64(batch as f64)
}

pub fn iou_backward<S: Scalar>(
    pred: &ArrayView4<S>,
    target: &ArrayView4<S>,
    eps: S,
    go: S,
) -> Array4<S> {
    let batch = pred.dim().0;
    let scale = go / S::from_f64(batch as f64);
    let mut gx = Array4::<S>::zeros(pred.dim());
    for bi in 0..batch {
        let p = pred.index_axis(ndarray::Axis(0), bi);
        let g = target.index_axis(ndarray::Axis(0), bi);
        let mut inter = S::zero();
        let mut sum_p = S::zero();
        let mut sum_g = S::zero();
        for (&s, &t) in p.iter().zip(g.iter()) {
            inter += s * t;
            sum_p += s;
            sum_g += t;
        }
        let union = sum_p + sum_g - inter;
        let denom = (union + eps) * (union + eps);
        let mut gb = gx.index_axis_mut(ndarray::Axis(0), bi);
        // d/ds of -(I+eps)/(U+eps): dI/ds = t, dU/ds = 1 - t
        for ((gv, &t), _) in gb.iter_mut().zip(g.iter()).zip(p.iter()) {
            *gv = scale * (-(t * (union + eps) - (inter + eps) * (S::one() - t)) / denom);
        }
    }
    gx
}
