//! Batch normalization over (B, H, W) per channel.

use ndarray::{Array1, Array4, ArrayView1, ArrayView4};

use crate::Scalar;

pub struct BnForward<S: Scalar> {
    pub y: Array4<S>,
    pub mean: Array1<S>,
    /// Biased (divide by n) batch variance, as used for normalization.
    pub var_biased: Array1<S>,
    pub inv_std: Array1<S>,
    /// Samples per channel (B * H * W).
    pub count: usize,
}

/// Training-mode forward: normalize with batch statistics.
pub fn batchnorm_train<S: Scalar>(
    x: &ArrayView4<S>,
    gamma: &ArrayView1<S>,
    beta: &ArrayView1<S>,
    eps: S,
) -> BnForward<S> {
    let (batch, ch, h, w) = x.dim();
    let n = batch * h * w;
    let inv_n = S::one() / S::from_f64(n as f64);
    let mut mean = Array1::<S>::zeros(ch);
    let mut var = Array1::<S>::zeros(ch);
    for c in 0..ch {
        let mut acc = S::zero();
        for bi in 0..batch {
            for i in 0..h {
                for j in 0..w {
                    acc += x[[bi, c, i, j]];
                }
            }
        }
        let m = acc * inv_n;
        let mut vacc = S::zero();
        for bi in 0..batch {
            for i in 0..h {
                for j in 0..w {
                    let d = x[[bi, c, i, j]] - m;
                    vacc += d * d;
                }
            }
        }
        mean[c] = m;
        var[c] = vacc * inv_n;
    }
    let inv_std = var.mapv(|v| S::one() / (v + eps).sqrt());
    let y = normalize(x, &mean.view(), &inv_std.view(), gamma, beta);
    BnForward {
        y,
        mean,
        var_biased: var,
        inv_std,
        count: n,
    }
}

/// Evaluation-mode forward: normalize with running statistics.
pub fn batchnorm_eval<S: Scalar>(
    x: &ArrayView4<S>,
    gamma: &ArrayView1<S>,
    beta: &ArrayView1<S>,
    running_mean: &ArrayView1<S>,
    running_var: &ArrayView1<S>,
    eps: S,
) -> (Array4<S>, Array1<S>, Array1<S>) {
    let mean = running_mean.to_owned();
    let inv_std = running_var.mapv(|v| S::one() / (v + eps).sqrt());
    let y = normalize(x, &mean.view(), &inv_std.view(), gamma, beta);
    (y, mean, inv_std)
}

fn normalize<S: Scalar>(
    x: &ArrayView4<S>,
    mean: &ArrayView1<S>,
    inv_std: &ArrayView1<S>,
    gamma: &ArrayView1<S>,
    beta: &ArrayView1<S>,
) -> Array4<S> {
    let (batch, ch, h, w) = x.dim();
    let mut y = Array4::<S>::zeros((batch, ch, h, w));
    for c in 0..ch {
        let (m, s, g, b) = (mean[c], inv_std[c], gamma[c], beta[c]);
        for bi in 0..batch {
            for i in 0..h {
                for j in 0..w {
                    y[[bi, c, i, j]] = (x[[bi, c, i, j]] - m) * s * g + b;
                }
            }
        }
    }
    y
}

/// Shared backward; `training` selects whether the statistics depended on x.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_backward<S: Scalar>(
    x: &ArrayView4<S>,
    gamma: &ArrayView1<S>,
    mean: &ArrayView1<S>,
    inv_std: &ArrayView1<S>,
    go: &ArrayView4<S>,
    training: bool,
) -> (Array4<S>, Array1<S>, Array1<S>) {
    let (batch, ch, h, w) = x.dim();
    let n = batch * h * w;
    let inv_n = S::one() / S::from_f64(n as f64);
    let mut gx = Array4::<S>::zeros((batch, ch, h, w));
    let mut ggamma = Array1::<S>::zeros(ch);
    let mut gbeta = Array1::<S>::zeros(ch);
    for c in 0..ch {
        let (m, s, g) = (mean[c], inv_std[c], gamma[c]);
        let mut sum_go = S::zero();
        let mut sum_go_xhat = S::zero();
        for bi in 0..batch {
            for i in 0..h {
                for j in 0..w {
                    let xhat = (x[[bi, c, i, j]] - m) * s;
                    let go_v = go[[bi, c, i, j]];
                    sum_go += go_v;
                    sum_go_xhat += go_v * xhat;
                }
            }
        }
        ggamma[c] = sum_go_xhat;
        gbeta[c] = sum_go;
        if training {
            let mean_go = sum_go * inv_n;
            let mean_go_xhat = sum_go_xhat * inv_n;
            for bi in 0..batch {
                for i in 0..h {
                    for j in 0..w {
                        let xhat = (x[[bi, c, i, j]] - m) * s;
                        gx[[bi, c, i, j]] =
                            g * s * (go[[bi, c, i, j]] - mean_go - xhat * mean_go_xhat);
                    }
                }
            }
        } else {
            for bi in 0..batch {
                for i in 0..h {
                    for j in 0..w {
                        gx[[bi, c, i, j]] = g * s * go[[bi, c, i, j]];
                    }
                }
            }
        }
    }
    (gx, ggamma, gbeta)
}
