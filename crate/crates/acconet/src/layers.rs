//! Parameterized building blocks shared by the encoder, coordination
//! modules, and decoder. Each block registers its parameters under a
//! hierarchical name prefix and applies itself through the graph.

use crate::graph::{BnStatUpdate, Graph, Val};
use crate::params::{Init, Initializer, ParamId, ParamStore};
use crate::Scalar;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub pad: usize,
    pub dilation: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Initializer,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        pad: usize,
        dilation: usize,
        weight_init: Init,
    ) -> Self {
        let fan_in = in_c * k * k;
        let weight = store.add(
            format!("{name}.weight"),
            init.tensor(&[out_c, in_c, k, k], weight_init, fan_in),
            true,
        );
        let bias = store.add(
            format!("{name}.bias"),
            init.tensor(&[out_c], Init::Zeros, fan_in),
            true,
        );
        Conv2d {
            weight,
            bias,
            pad,
            dilation,
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: &Val<S>) -> Val<S> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(x, &w, &b, self.pad, self.dilation)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Initializer,
        name: &str,
        channels: usize,
    ) -> Self {
        let gamma = store.add(
            format!("{name}.gamma"),
            init.tensor(&[channels], Init::Ones, channels),
            true,
        );
        let beta = store.add(
            format!("{name}.beta"),
            init.tensor(&[channels], Init::Zeros, channels),
            true,
        );
        let running_mean = store.add(
            format!("{name}.running_mean"),
            init.tensor(&[channels], Init::Zeros, channels),
            false,
        );
        let running_var = store.add(
            format!("{name}.running_var"),
            init.tensor(&[channels], Init::Ones, channels),
            false,
        );
        BatchNorm2d {
            gamma,
            beta,
            running_mean,
            running_var,
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: &Val<S>,
        training: bool,
    ) -> Val<S> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let eps = S::from_f64(BN_EPS);
        if training {
            let (y, mean, var_biased, count) = g.batchnorm_train(x, &gamma, &beta, eps);
            // running statistics use the unbiased variance estimate
            let correction = if count > 1 {
                S::from_f64(count as f64 / (count as f64 - 1.0))
            } else {
                S::one()
            };
            g.record_bn_update(BnStatUpdate {
                mean_id: self.running_mean,
                var_id: self.running_var,
                momentum: S::from_f64(BN_MOMENTUM),
                batch_mean: mean,
                batch_var_unbiased: var_biased.mapv(|v| v * correction),
            });
            y
        } else {
            let rm = store.value(self.running_mean).as_ref().clone();
            let rv = store.value(self.running_var).as_ref().clone();
            g.batchnorm_eval(x, &gamma, &beta, &rm, &rv, eps)
        }
    }
}

/// Convolution followed by batch normalization and rectification: the
/// standard unit for all newly added (non-backbone) layers.
#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnRelu {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Initializer,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        pad: usize,
        dilation: usize,
    ) -> Self {
        let conv = Conv2d::new(
            store,
            init,
            &format!("{name}.conv"),
            in_c,
            out_c,
            k,
            pad,
            dilation,
            Init::HeNormal,
        );
        let bn = BatchNorm2d::new(store, init, &format!("{name}.bn"), out_c);
        ConvBnRelu { conv, bn }
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: &Val<S>,
        training: bool,
    ) -> Val<S> {
        let y = self.conv.forward(g, store, x);
        let y = self.bn.forward(g, store, &y, training);
        g.relu(&y)
    }
}

/// 2x learned upsampling (2x2 transposed convolution, stride 2) with batch
/// normalization and rectification; links consecutive decoder blocks.
#[derive(Debug, Clone)]
pub struct DeconvBnRelu {
    pub weight: ParamId,
    pub bias: ParamId,
    pub bn: BatchNorm2d,
}

impl DeconvBnRelu {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Initializer,
        name: &str,
        in_c: usize,
        out_c: usize,
    ) -> Self {
        let fan_in = in_c * 4;
        let weight = store.add(
            format!("{name}.weight"),
            init.tensor(&[in_c, out_c, 2, 2], Init::HeNormal, fan_in),
            true,
        );
        let bias = store.add(
            format!("{name}.bias"),
            init.tensor(&[out_c], Init::Zeros, fan_in),
            true,
        );
        let bn = BatchNorm2d::new(store, init, &format!("{name}.bn"), out_c);
        DeconvBnRelu { weight, bias, bn }
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: &Val<S>,
        training: bool,
    ) -> Val<S> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.deconv2x2(x, &w, &b);
        let y = self.bn.forward(g, store, &y, training);
        g.relu(&y)
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Initializer,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            init.tensor(&[out_dim, in_dim], Init::HeNormal, in_dim),
            true,
        );
        let bias = store.add(
            format!("{name}.bias"),
            init.tensor(&[out_dim], Init::Zeros, in_dim),
            true,
        );
        Dense { weight, bias }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: &Val<S>) -> Val<S> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, &w, &b)
    }
}

/// Channel attention: spatial global max pooling to one descriptor per
/// channel, a bottleneck fully connected pair (ReLU then sigmoid), producing
/// per-channel weights in (0, 1).
#[derive(Debug, Clone)]
pub struct ChannelAttention {
    pub fc1: Dense,
    pub fc2: Dense,
}

impl ChannelAttention {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Initializer,
        name: &str,
        channels: usize,
        reduction: usize,
    ) -> Self {
        let hidden = (channels / reduction).max(1);
        let fc1 = Dense::new(store, init, &format!("{name}.fc1"), channels, hidden);
        let fc2 = Dense::new(store, init, &format!("{name}.fc2"), hidden, channels);
        ChannelAttention { fc1, fc2 }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: &Val<S>) -> Val<S> {
        let pooled = g.global_max_spatial(x);
        let h = self.fc1.forward(g, store, &pooled);
        let h = g.relu(&h);
        let out = self.fc2.forward(g, store, &h);
        g.sigmoid(&out)
    }
}

/// Spatial attention: channel-wise global max pooling to a single map,
/// one convolution, sigmoid. Produces a (B, 1, H, W) map in (0, 1).
#[derive(Debug, Clone)]
pub struct SpatialAttention {
    pub conv: Conv2d,
}

impl SpatialAttention {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Initializer,
        name: &str,
        kernel: usize,
    ) -> Self {
        let conv = Conv2d::new(
            store,
            init,
            &format!("{name}.conv"),
            1,
            1,
            kernel,
            kernel / 2,
            1,
            Init::HeNormal,
        );
        SpatialAttention { conv }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: &Val<S>) -> Val<S> {
        let pooled = g.channel_max(x);
        let m = self.conv.forward(g, store, &pooled);
        g.sigmoid(&m)
    }
}
