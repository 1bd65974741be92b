//! Straight-line scalar reference implementations used as oracles by the
//! integration suites. Everything here is written as plain nested loops,
//! independent of the library's kernels and graph machinery; parameters are
//! read from a named snapshot of the store. References are generic over the
//! scalar so each precision is checked against a same-precision oracle.

#![allow(dead_code)]

use std::collections::HashMap;

use ndarray::{Array1, Array2, Array4, ArrayD};

use acconet::params::ParamStore;
use acconet::Scalar;

pub const BN_EPS: f64 = 1e-5;

/// Named snapshot of every parameter.
pub struct Params<S: Scalar> {
    map: HashMap<String, ArrayD<S>>,
}

impl<S: Scalar> Params<S> {
    pub fn snapshot(store: &ParamStore<S>) -> Self {
        Params {
            map: store
                .iter()
                .map(|p| (p.name.clone(), p.value.as_ref().clone()))
                .collect(),
        }
    }

    pub fn a4(&self, name: &str) -> Array4<S> {
        self.map[name]
            .clone()
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap_or_else(|_| panic!("{name} is not 4-D"))
    }

    pub fn a2(&self, name: &str) -> Array2<S> {
        self.map[name]
            .clone()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap_or_else(|_| panic!("{name} is not 2-D"))
    }

    pub fn a1(&self, name: &str) -> Array1<S> {
        self.map[name]
            .clone()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap_or_else(|_| panic!("{name} is not 1-D"))
    }
}

// ---- primitive references ------------------------------------------------

pub fn conv2d_ref<S: Scalar>(
    x: &Array4<S>,
    w: &Array4<S>,
    b: &Array1<S>,
    pad: usize,
    dil: usize,
) -> Array4<S> {
    let (batch, in_c, in_h, in_w) = x.dim();
    let (out_c, _, k, _) = w.dim();
    let out_h = in_h + 2 * pad - dil * (k - 1);
    let out_w = in_w + 2 * pad - dil * (k - 1);
    let mut y = Array4::<S>::zeros((batch, out_c, out_h, out_w));
    for bi in 0..batch {
        for co in 0..out_c {
            for oh in 0..out_h {
                for ow in 0..out_w {
                    let mut acc = b[co];
                    for ci in 0..in_c {
                        for ki in 0..k {
                            for kj in 0..k {
                                let ih = oh as isize + (ki * dil) as isize - pad as isize;
                                let iw = ow as isize + (kj * dil) as isize - pad as isize;
                                if ih >= 0
                                    && iw >= 0
                                    && (ih as usize) < in_h
                                    && (iw as usize) < in_w
                                {
                                    acc += x[[bi, ci, ih as usize, iw as usize]]
                                        * w[[co, ci, ki, kj]];
                                }
                            }
                        }
                    }
                    y[[bi, co, oh, ow]] = acc;
                }
            }
        }
    }
    y
}

pub fn deconv2x2_ref<S: Scalar>(x: &Array4<S>, w: &Array4<S>, b: &Array1<S>) -> Array4<S> {
    let (batch, in_c, in_h, in_w) = x.dim();
    let out_c = w.dim().1;
    let mut y = Array4::<S>::zeros((batch, out_c, in_h * 2, in_w * 2));
    for bi in 0..batch {
        for co in 0..out_c {
            for oi in 0..in_h * 2 {
                for oj in 0..in_w * 2 {
                    let mut acc = b[co];
                    for ci in 0..in_c {
                        acc += x[[bi, ci, oi / 2, oj / 2]] * w[[ci, co, oi % 2, oj % 2]];
                    }
                    y[[bi, co, oi, oj]] = acc;
                }
            }
        }
    }
    y
}

pub fn bn_ref<S: Scalar>(
    x: &Array4<S>,
    gamma: &Array1<S>,
    beta: &Array1<S>,
    running_mean: &Array1<S>,
    running_var: &Array1<S>,
    training: bool,
) -> Array4<S> {
    let (batch, ch, h, w) = x.dim();
    let mut y = Array4::<S>::zeros((batch, ch, h, w));
    for c in 0..ch {
        let (mean, var) = if training {
            let n = S::from_f64((batch * h * w) as f64);
            let mut m = S::zero();
            for bi in 0..batch {
                for i in 0..h {
                    for j in 0..w {
                        m += x[[bi, c, i, j]];
                    }
                }
            }
            m /= n;
            let mut v = S::zero();
            for bi in 0..batch {
                for i in 0..h {
                    for j in 0..w {
                        let d = x[[bi, c, i, j]] - m;
                        v += d * d;
                    }
                }
            }
            (m, v / n)
        } else {
            (running_mean[c], running_var[c])
        };
        let inv = S::one() / (var + S::from_f64(BN_EPS)).sqrt();
        for bi in 0..batch {
            for i in 0..h {
                for j in 0..w {
                    y[[bi, c, i, j]] = (x[[bi, c, i, j]] - mean) * inv * gamma[c] + beta[c];
                }
            }
        }
    }
    y
}

pub fn relu_ref<S: Scalar>(x: &Array4<S>) -> Array4<S> {
    x.mapv(|v| if v > S::zero() { v } else { S::zero() })
}

pub fn sigmoid_scalar<S: Scalar>(v: S) -> S {
    S::one() / (S::one() + (-v).exp())
}

pub fn maxpool2x2_ref<S: Scalar>(x: &Array4<S>) -> Array4<S> {
    let (batch, ch, h, w) = x.dim();
    let mut y = Array4::<S>::zeros((batch, ch, h / 2, w / 2));
    for bi in 0..batch {
        for c in 0..ch {
            for i in 0..h / 2 {
                for j in 0..w / 2 {
                    let mut best = x[[bi, c, 2 * i, 2 * j]];
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let v = x[[bi, c, 2 * i + di, 2 * j + dj]];
                        if v > best {
                            best = v;
                        }
                    }
                    y[[bi, c, i, j]] = best;
                }
            }
        }
    }
    y
}

/// Bilinear interpolation with half-pixel centers and edge clamping. Tap
/// weights are computed in f64 exactly as the implementation does.
pub fn bilinear_ref<S: Scalar>(x: &Array4<S>, out_h: usize, out_w: usize) -> Array4<S> {
    let (batch, ch, in_h, in_w) = x.dim();
    let mut y = Array4::<S>::zeros((batch, ch, out_h, out_w));
    for bi in 0..batch {
        for c in 0..ch {
            for oi in 0..out_h {
                for oj in 0..out_w {
                    let sy = (oi as f64 + 0.5) * in_h as f64 / out_h as f64 - 0.5;
                    let sx = (oj as f64 + 0.5) * in_w as f64 / out_w as f64 - 0.5;
                    let y0 = sy.floor();
                    let x0 = sx.floor();
                    let fy = (sy - y0).clamp(0.0, 1.0);
                    let fx = (sx - x0).clamp(0.0, 1.0);
                    let i0 = (y0.max(0.0) as usize).min(in_h - 1);
                    let i1 = ((y0 as i64 + 1).clamp(0, in_h as i64 - 1)) as usize;
                    let j0 = (x0.max(0.0) as usize).min(in_w - 1);
                    let j1 = ((x0 as i64 + 1).clamp(0, in_w as i64 - 1)) as usize;
                    let top = x[[bi, c, i0, j0]].to_f64() * (1.0 - fx)
                        + x[[bi, c, i0, j1]].to_f64() * fx;
                    let bot = x[[bi, c, i1, j0]].to_f64() * (1.0 - fx)
                        + x[[bi, c, i1, j1]].to_f64() * fx;
                    y[[bi, c, oi, oj]] = S::from_f64(top * (1.0 - fy) + bot * fy);
                }
            }
        }
    }
    y
}

pub fn concat_ref<S: Scalar>(parts: &[&Array4<S>]) -> Array4<S> {
    let (batch, _, h, w) = parts[0].dim();
    let total: usize = parts.iter().map(|p| p.dim().1).sum();
    let mut y = Array4::<S>::zeros((batch, total, h, w));
    let mut start = 0;
    for p in parts {
        let c = p.dim().1;
        for bi in 0..batch {
            for cc in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        y[[bi, start + cc, i, j]] = p[[bi, cc, i, j]];
                    }
                }
            }
        }
        start += c;
    }
    y
}

// ---- module references ---------------------------------------------------

/// Convolution -> batch normalization -> rectification, by parameter prefix.
pub fn conv_bn_relu_ref<S: Scalar>(
    p: &Params<S>,
    prefix: &str,
    x: &Array4<S>,
    pad: usize,
    dil: usize,
    training: bool,
) -> Array4<S> {
    let y = conv2d_ref(
        x,
        &p.a4(&format!("{prefix}.conv.weight")),
        &p.a1(&format!("{prefix}.conv.bias")),
        pad,
        dil,
    );
    let y = bn_ref(
        &y,
        &p.a1(&format!("{prefix}.bn.gamma")),
        &p.a1(&format!("{prefix}.bn.beta")),
        &p.a1(&format!("{prefix}.bn.running_mean")),
        &p.a1(&format!("{prefix}.bn.running_var")),
        training,
    );
    relu_ref(&y)
}

/// Four parallel dilated convolutions (rates 1..4), concatenated and fused.
pub fn pyramid_ref<S: Scalar>(
    p: &Params<S>,
    level: usize,
    x: &Array4<S>,
    training: bool,
) -> Array4<S> {
    let prefix = format!("accom{level}.pyramid");
    let branches: Vec<Array4<S>> = (1..=4)
        .map(|r| conv_bn_relu_ref(p, &format!("{prefix}.rate{r}"), x, r, r, training))
        .collect();
    let refs: Vec<&Array4<S>> = branches.iter().collect();
    let cat = concat_ref(&refs);
    conv_bn_relu_ref(p, &format!("{prefix}.fuse"), &cat, 1, 1, training)
}

/// Spatial global max pooling to per-channel descriptors.
pub fn gmp_spatial_ref<S: Scalar>(x: &Array4<S>) -> Array2<S> {
    let (batch, ch, h, w) = x.dim();
    let mut y = Array2::<S>::zeros((batch, ch));
    for bi in 0..batch {
        for c in 0..ch {
            let mut best = x[[bi, c, 0, 0]];
            for i in 0..h {
                for j in 0..w {
                    if x[[bi, c, i, j]] > best {
                        best = x[[bi, c, i, j]];
                    }
                }
            }
            y[[bi, c]] = best;
        }
    }
    y
}

pub fn channel_attention_ref<S: Scalar>(p: &Params<S>, prefix: &str, x: &Array4<S>) -> Array2<S> {
    let pooled = gmp_spatial_ref(x);
    let w1 = p.a2(&format!("{prefix}.fc1.weight"));
    let b1 = p.a1(&format!("{prefix}.fc1.bias"));
    let w2 = p.a2(&format!("{prefix}.fc2.weight"));
    let b2 = p.a1(&format!("{prefix}.fc2.bias"));
    let (batch, ch) = pooled.dim();
    let hidden = w1.dim().0;
    let mut out = Array2::<S>::zeros((batch, ch));
    for bi in 0..batch {
        let mut h = vec![S::zero(); hidden];
        for o in 0..hidden {
            let mut acc = b1[o];
            for i in 0..ch {
                acc += w1[[o, i]] * pooled[[bi, i]];
            }
            h[o] = if acc > S::zero() { acc } else { S::zero() };
        }
        for o in 0..ch {
            let mut acc = b2[o];
            for (i, hv) in h.iter().enumerate() {
                acc += w2[[o, i]] * *hv;
            }
            out[[bi, o]] = sigmoid_scalar(acc);
        }
    }
    out
}

/// Channel-wise max pooling, one convolution, sigmoid.
pub fn spatial_attention_ref<S: Scalar>(p: &Params<S>, prefix: &str, x: &Array4<S>) -> Array4<S> {
    let (batch, ch, h, w) = x.dim();
    let mut pooled = Array4::<S>::zeros((batch, 1, h, w));
    for bi in 0..batch {
        for i in 0..h {
            for j in 0..w {
                let mut best = x[[bi, 0, i, j]];
                for c in 1..ch {
                    if x[[bi, c, i, j]] > best {
                        best = x[[bi, c, i, j]];
                    }
                }
                pooled[[bi, 0, i, j]] = best;
            }
        }
    }
    let weight = p.a4(&format!("{prefix}.conv.weight"));
    let k = weight.dim().2;
    let conv = conv2d_ref(&pooled, &weight, &p.a1(&format!("{prefix}.conv.bias")), k / 2, 1);
    conv.mapv(sigmoid_scalar)
}

pub fn mul_channel_ref<S: Scalar>(x: &Array4<S>, w: &Array2<S>) -> Array4<S> {
    let mut y = x.clone();
    let (batch, ch, h, wd) = x.dim();
    for bi in 0..batch {
        for c in 0..ch {
            for i in 0..h {
                for j in 0..wd {
                    y[[bi, c, i, j]] = x[[bi, c, i, j]] * w[[bi, c]];
                }
            }
        }
    }
    y
}

pub fn mul_spatial_ref<S: Scalar>(x: &Array4<S>, m: &Array4<S>) -> Array4<S> {
    let mut y = x.clone();
    let (batch, ch, h, w) = x.dim();
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

/// Local branch: channel-attend the pyramid summary, derive the spatial map
/// from the modulated features, gate the summary.
pub fn local_branch_ref<S: Scalar>(p: &Params<S>, level: usize, f_c: &Array4<S>) -> Array4<S> {
    let weights = channel_attention_ref(p, &format!("accom{level}.ca"), f_c);
    let modulated = mul_channel_ref(f_c, &weights);
    let map = spatial_attention_ref(p, &format!("accom{level}.sa_local"), &modulated);
    mul_spatial_ref(f_c, &map)
}

pub fn previous_to_current_ref<S: Scalar>(
    p: &Params<S>,
    level: usize,
    f_prev: &Array4<S>,
    target: &Array4<S>,
) -> Array4<S> {
    let down = maxpool2x2_ref(f_prev);
    let map = spatial_attention_ref(p, &format!("accom{level}.sa_prev"), &down);
    mul_spatial_ref(target, &map)
}

pub fn subsequent_to_current_ref<S: Scalar>(
    p: &Params<S>,
    level: usize,
    f_next: &Array4<S>,
    target: &Array4<S>,
) -> Array4<S> {
    let (_, _, h, w) = f_next.dim();
    let up = bilinear_ref(f_next, h * 2, w * 2);
    let map = spatial_attention_ref(p, &format!("accom{level}.sa_next"), &up);
    mul_spatial_ref(target, &map)
}

/// Full coordination: branch outputs summed with the original features.
pub fn accom_ref<S: Scalar>(
    p: &Params<S>,
    level: usize,
    f_prev: Option<&Array4<S>>,
    f_cur: &Array4<S>,
    f_next: Option<&Array4<S>>,
    training: bool,
) -> Array4<S> {
    let f_c = pyramid_ref(p, level, f_cur, training);
    let mut acc = local_branch_ref(p, level, &f_c);
    if let Some(prev) = f_prev {
        let f_pc = previous_to_current_ref(p, level, prev, &f_c);
        acc = &acc + &f_pc;
    }
    if let Some(next) = f_next {
        let f_sc = subsequent_to_current_ref(p, level, next, &f_c);
        acc = &acc + &f_sc;
    }
    &acc + f_cur
}

/// Decoder block: optional deconvolved upstream concatenated in, three
/// cascaded convolutions, two dilated bifurcations re-aggregated with the
/// final cascade output.
pub fn bab_ref<S: Scalar>(
    p: &Params<S>,
    level: usize,
    f_accom: &Array4<S>,
    upstream: Option<&Array4<S>>,
    rates: (usize, usize),
    training: bool,
) -> Array4<S> {
    let prefix = format!("bab{level}");
    let input = match upstream {
        None => f_accom.clone(),
        Some(up) => {
            let risen = deconv2x2_ref(
                up,
                &p.a4(&format!("{prefix}.deconv.weight")),
                &p.a1(&format!("{prefix}.deconv.bias")),
            );
            let risen = bn_ref(
                &risen,
                &p.a1(&format!("{prefix}.deconv.bn.gamma")),
                &p.a1(&format!("{prefix}.deconv.bn.beta")),
                &p.a1(&format!("{prefix}.deconv.bn.running_mean")),
                &p.a1(&format!("{prefix}.deconv.bn.running_var")),
                training,
            );
            let risen = relu_ref(&risen);
            concat_ref(&[f_accom, &risen])
        }
    };
    let bc1 = conv_bn_relu_ref(p, &format!("{prefix}.cascade1"), &input, 1, 1, training);
    let bc2 = conv_bn_relu_ref(p, &format!("{prefix}.cascade2"), &bc1, 1, 1, training);
    let bc3 = conv_bn_relu_ref(p, &format!("{prefix}.cascade3"), &bc2, 1, 1, training);
    let b1 = conv_bn_relu_ref(p, &format!("{prefix}.bif1"), &bc1, rates.0, rates.0, training);
    let b2 = conv_bn_relu_ref(p, &format!("{prefix}.bif2"), &bc2, rates.1, rates.1, training);
    let cat = concat_ref(&[&b1, &b2, &bc3]);
    conv_bn_relu_ref(p, &format!("{prefix}.aggregate"), &cat, 1, 1, training)
}

// ---- brute-force metric oracle ---------------------------------------------

pub struct BruteMetrics {
    pub s: f64,
    pub max_f: f64,
    pub mean_f: f64,
    pub adp_f: f64,
    pub max_e: f64,
    pub mean_e: f64,
    pub adp_e: f64,
    pub mae: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

fn brute_pr_at(pred: &Array2<f64>, gt: &Array2<bool>, tau: f64, inclusive: bool) -> (f64, f64) {
    let (h, w) = pred.dim();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for i in 0..h {
        for j in 0..w {
            let pos = if inclusive {
                pred[[i, j]] >= tau
            } else {
                pred[[i, j]] > tau
            };
            match (pos, gt[[i, j]]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        1.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    (precision, recall)
}

fn brute_f(p: f64, r: f64) -> f64 {
    let beta_sq = 0.3;
    if beta_sq * p + r <= 0.0 {
        0.0
    } else {
        (1.0 + beta_sq) * p * r / (beta_sq * p + r)
    }
}

fn brute_e(pred: &Array2<f64>, gt: &Array2<bool>, tau: f64, inclusive: bool) -> f64 {
    let (h, w) = pred.dim();
    let n = (h * w) as f64;
    let mut fm = vec![vec![false; w]; h];
    for i in 0..h {
        for j in 0..w {
            fm[i][j] = if inclusive {
                pred[[i, j]] >= tau
            } else {
                pred[[i, j]] > tau
            };
        }
    }
    let gt_sum: f64 = gt.iter().map(|&g| if g { 1.0 } else { 0.0 }).sum();
    let fm_sum: f64 = fm.iter().flatten().map(|&v| if v { 1.0 } else { 0.0 }).sum();
    if gt_sum == 0.0 {
        return (n - fm_sum) / n;
    }
    if gt_sum == n {
        return fm_sum / n;
    }
    let mu_fm = fm_sum / n;
    let mu_gt = gt_sum / n;
    let mut acc = 0.0;
    for i in 0..h {
        for j in 0..w {
            let pf = if fm[i][j] { 1.0 } else { 0.0 } - mu_fm;
            let pg = if gt[[i, j]] { 1.0 } else { 0.0 } - mu_gt;
            let align = 2.0 * pg * pf / (pg * pg + pf * pf + f64::EPSILON);
            acc += (align + 1.0) * (align + 1.0) / 4.0;
        }
    }
    acc / n
}

fn brute_s(pred: &Array2<f64>, gt: &Array2<bool>) -> f64 {
    let (h, w) = pred.dim();
    let n = (h * w) as f64;
    let gt_sum: f64 = gt.iter().map(|&g| if g { 1.0 } else { 0.0 }).sum();
    let y = gt_sum / n;
    let x_mean = pred.iter().sum::<f64>() / n;
    if y == 0.0 {
        return 1.0 - x_mean;
    }
    if y == 1.0 {
        return x_mean;
    }
    let object = |vals: &[f64]| -> f64 {
        if vals.is_empty() {
            return 0.0;
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let std = if vals.len() <= 1 {
            0.0
        } else {
            (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() as f64 - 1.0))
                .sqrt()
        };
        2.0 * m / (m * m + 1.0 + std + f64::EPSILON)
    };
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for i in 0..h {
        for j in 0..w {
            if gt[[i, j]] {
                fg.push(pred[[i, j]]);
            } else {
                bg.push(1.0 - pred[[i, j]]);
            }
        }
    }
    let s_o = y * object(&fg) + (1.0 - y) * object(&bg);
    // region-aware term: split about the rounded 1-based centroid
    let mut ri = 0.0;
    let mut rj = 0.0;
    for i in 0..h {
        for j in 0..w {
            if gt[[i, j]] {
                ri += (i + 1) as f64;
                rj += (j + 1) as f64;
            }
        }
    }
    let cy = ((ri / gt_sum).round() as usize).min(h);
    let cx = ((rj / gt_sum).round() as usize).min(w);
    let ssim = |ri0: usize, ri1: usize, rj0: usize, rj1: usize| -> f64 {
        let cnt = ((ri1 - ri0) * (rj1 - rj0)) as f64;
        if cnt == 0.0 {
            return 0.0;
        }
        let mut xm = 0.0;
        let mut ym = 0.0;
        for i in ri0..ri1 {
            for j in rj0..rj1 {
                xm += pred[[i, j]];
                ym += if gt[[i, j]] { 1.0 } else { 0.0 };
            }
        }
        xm /= cnt;
        ym /= cnt;
        let denom = cnt - 1.0 + f64::EPSILON;
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut sxy = 0.0;
        for i in ri0..ri1 {
            for j in rj0..rj1 {
                let dx = pred[[i, j]] - xm;
                let dy = if gt[[i, j]] { 1.0 } else { 0.0 } - ym;
                sx += dx * dx;
                sy += dy * dy;
                sxy += dx * dy;
            }
        }
        let (sx, sy, sxy) = (sx / denom, sy / denom, sxy / denom);
        let alpha = 4.0 * xm * ym * sxy;
        let beta = (xm * xm + ym * ym) * (sx + sy);
        if alpha != 0.0 {
            alpha / (beta + f64::EPSILON)
        } else if beta == 0.0 {
            1.0
        } else {
            0.0
        }
    };
    let mut s_r = 0.0;
    for (i0, i1, j0, j1) in [
        (0, cy, 0, cx),
        (0, cy, cx, w),
        (cy, h, 0, cx),
        (cy, h, cx, w),
    ] {
        let weight = ((i1 - i0) * (j1 - j0)) as f64 / n;
        s_r += weight * ssim(i0, i1, j0, j1);
    }
    (0.5 * s_o + 0.5 * s_r).max(0.0)
}

/// Full nine-metric dataset evaluation by exhaustive rescans.
pub fn brute_force_dataset(preds: &[Array2<f64>], gts: &[Array2<bool>]) -> BruteMetrics {
    let n_images = preds.len() as f64;
    let taus: Vec<f64> = (0..256).map(|k| k as f64 / 255.0).collect();
    let mut precision = vec![0.0; 256];
    let mut recall = vec![0.0; 256];
    let mut e_curve = vec![0.0; 256];
    let mut s_acc = 0.0;
    let mut mae_acc = 0.0;
    let mut adp_f_acc = 0.0;
    let mut adp_e_acc = 0.0;
    for (pred, gt) in preds.iter().zip(gts.iter()) {
        for (k, &tau) in taus.iter().enumerate() {
            let (p, r) = brute_pr_at(pred, gt, tau, false);
            precision[k] += p;
            recall[k] += r;
            e_curve[k] += brute_e(pred, gt, tau, false);
        }
        s_acc += brute_s(pred, gt);
        let (h, w) = pred.dim();
        let mut m = 0.0;
        for i in 0..h {
            for j in 0..w {
                m += (pred[[i, j]] - if gt[[i, j]] { 1.0 } else { 0.0 }).abs();
            }
        }
        mae_acc += m / (h * w) as f64;
        let mean = pred.iter().sum::<f64>() / (h * w) as f64;
        let tau_adp = (2.0 * mean).min(1.0);
        let (p, r) = brute_pr_at(pred, gt, tau_adp, true);
        adp_f_acc += brute_f(p, r);
        adp_e_acc += brute_e(pred, gt, tau_adp, true);
    }
    for k in 0..256 {
        precision[k] /= n_images;
        recall[k] /= n_images;
        e_curve[k] /= n_images;
    }
    let f_curve: Vec<f64> = precision
        .iter()
        .zip(recall.iter())
        .map(|(&p, &r)| brute_f(p, r))
        .collect();
    BruteMetrics {
        s: s_acc / n_images,
        max_f: f_curve.iter().copied().fold(0.0, f64::max),
        mean_f: f_curve.iter().sum::<f64>() / 256.0,
        adp_f: adp_f_acc / n_images,
        max_e: e_curve.iter().copied().fold(0.0, f64::max),
        mean_e: e_curve.iter().sum::<f64>() / 256.0,
        adp_e: adp_e_acc / n_images,
        mae: mae_acc / n_images,
        precision,
        recall,
    }
}

// ---- shared helpers --------------------------------------------------------

/// Deterministic pseudo-random array in [lo, hi): values are generated in
/// f64 and cast, so every precision sees the same field.
pub fn pseudo_array4<S: Scalar>(
    shape: (usize, usize, usize, usize),
    seed: u64,
    lo: f64,
    hi: f64,
) -> Array4<S> {
    let mut state = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(0x2545_F491_4F6C_DD1D);
    Array4::from_shape_fn(shape, |_| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        S::from_f64(lo + (hi - lo) * ((state >> 11) as f64 / (1u64 << 53) as f64))
    })
}

pub fn max_abs_diff<S: Scalar>(a: &Array4<S>, b: &Array4<S>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| ((*x).to_f64() - (*y).to_f64()).abs())
        .fold(0.0, f64::max)
}
