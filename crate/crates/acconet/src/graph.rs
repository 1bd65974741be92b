//! Reverse-mode differentiation over a per-forward tape.
//!
//! A [`Graph`] records one forward pass; [`Graph::backward`] walks the tape
//! in reverse and accumulates gradients for every leaf (inputs and
//! parameters). With gradients disabled the same calls execute the kernels
//! without recording, so inference re-uses the training code path while
//! intermediate buffers are freed as soon as their last handle drops.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array1, ArrayD, ArrayView1, ArrayView2, ArrayView4, Ix1, Ix2, Ix4, IxDyn};

use crate::error::{Error, Result};
use crate::ops;
use crate::params::{ParamId, ParamStore};
use crate::Scalar;

/// Handle to a value flowing through the network: either a tape node or an
/// untracked array (inference mode / constants).
#[derive(Clone, Debug)]
pub enum Val<S: Scalar> {
    Tracked(usize),
    Plain(Arc<ArrayD<S>>),
}

struct Node<S: Scalar> {
    value: Arc<ArrayD<S>>,
    parents: Vec<usize>,
    op: Op<S>,
}

enum Op<S: Scalar> {
    Leaf,
    Conv2d {
        pad: usize,
        dilation: usize,
    },
    Deconv2x2,
    BatchNorm {
        mean: Array1<S>,
        inv_std: Array1<S>,
        training: bool,
    },
    Relu,
    Sigmoid,
    MaxPool2x2 {
        argmax: Vec<u32>,
        in_h: usize,
        in_w: usize,
    },
    Bilinear {
        in_h: usize,
        in_w: usize,
    },
    GlobalMaxSpatial {
        argmax: Vec<u32>,
        in_h: usize,
        in_w: usize,
    },
    ChannelMax {
        argmax: Vec<u32>,
        channels: usize,
    },
    Linear,
    ConcatChannels {
        channels: Vec<usize>,
    },
    AddN,
    Mul,
    MulChannel,
    MulSpatial,
    SumAll,
    Bce {
        target: Arc<ArrayD<S>>,
        eps: S,
    },
    Iou {
        target: Arc<ArrayD<S>>,
        eps: S,
    },
}

/// Batch statistics returned by a training-mode batch-norm call, used to
/// blend running statistics after the optimizer step.
pub struct BnStatUpdate<S: Scalar> {
    pub mean_id: ParamId,
    pub var_id: ParamId,
    pub momentum: S,
    pub batch_mean: Array1<S>,
    pub batch_var_unbiased: Array1<S>,
}

pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    grad_enabled: bool,
    param_nodes: HashMap<ParamId, usize>,
    stat_updates: Vec<BnStatUpdate<S>>,
}

fn as4<S: Scalar>(a: &ArrayD<S>) -> ArrayView4<'_, S> {
    a.view()
        .into_dimensionality::<Ix4>()
        .expect("expected a 4-D tensor")
}

fn as2<S: Scalar>(a: &ArrayD<S>) -> ArrayView2<'_, S> {
    a.view()
        .into_dimensionality::<Ix2>()
        .expect("expected a 2-D tensor")
}

fn as1<S: Scalar>(a: &ArrayD<S>) -> ArrayView1<'_, S> {
    a.view()
        .into_dimensionality::<Ix1>()
        .expect("expected a 1-D tensor")
}

fn scalar_of<S: Scalar>(a: &ArrayD<S>) -> S {
    *a.iter().next().expect("scalar node")
}

impl<S: Scalar> Graph<S> {
    pub fn new(grad_enabled: bool) -> Self {
        Graph {
            nodes: Vec::new(),
            grad_enabled,
            param_nodes: HashMap::new(),
            stat_updates: Vec::new(),
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// The array behind a handle.
    pub fn value(&self, v: &Val<S>) -> Arc<ArrayD<S>> {
        match v {
            Val::Tracked(i) => Arc::clone(&self.nodes[*i].value),
            Val::Plain(a) => Arc::clone(a),
        }
    }

    pub fn shape(&self, v: &Val<S>) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    /// Register a differentiable input.
    pub fn input(&mut self, value: ArrayD<S>) -> Val<S> {
        if self.grad_enabled {
            Val::Tracked(self.push_leaf(Arc::new(value)))
        } else {
            Val::Plain(Arc::new(value))
        }
    }

    /// Register a parameter leaf; repeated calls for the same id share a node.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Val<S> {
        let value = Arc::clone(store.value(id));
        if self.grad_enabled {
            if let Some(&idx) = self.param_nodes.get(&id) {
                return Val::Tracked(idx);
            }
            let idx = self.push_leaf(value);
            self.param_nodes.insert(id, idx);
            Val::Tracked(idx)
        } else {
            Val::Plain(value)
        }
    }

    fn push_leaf(&mut self, value: Arc<ArrayD<S>>) -> usize {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            op: Op::Leaf,
        });
        self.nodes.len() - 1
    }

    fn track(&mut self, v: &Val<S>) -> usize {
        match v {
            Val::Tracked(i) => *i,
            Val::Plain(a) => self.push_leaf(Arc::clone(a)),
        }
    }

    fn push(&mut self, op: Op<S>, parents: &[&Val<S>], value: ArrayD<S>) -> Val<S> {
        if !self.grad_enabled {
            return Val::Plain(Arc::new(value));
        }
        let parent_ids: Vec<usize> = parents.iter().map(|p| self.track(p)).collect();
        self.nodes.push(Node {
            value: Arc::new(value),
            parents: parent_ids,
            op,
        });
        Val::Tracked(self.nodes.len() - 1)
    }

    pub fn record_bn_update(&mut self, update: BnStatUpdate<S>) {
        self.stat_updates.push(update);
    }

    pub fn take_stat_updates(&mut self) -> Vec<BnStatUpdate<S>> {
        std::mem::take(&mut self.stat_updates)
    }

    // ---- operations ------------------------------------------------------

    pub fn conv2d(&mut self, x: &Val<S>, w: &Val<S>, b: &Val<S>, pad: usize, dilation: usize) -> Val<S> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let y = ops::conv2d(&as4(&xv), &as4(&wv), &as1(&bv), pad, dilation);
        self.push(Op::Conv2d { pad, dilation }, &[x, w, b], y.into_dyn())
    }

    pub fn deconv2x2(&mut self, x: &Val<S>, w: &Val<S>, b: &Val<S>) -> Val<S> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let y = ops::deconv2x2(&as4(&xv), &as4(&wv), &as1(&bv));
        self.push(Op::Deconv2x2, &[x, w, b], y.into_dyn())
    }

    pub fn batchnorm_train(
        &mut self,
        x: &Val<S>,
        gamma: &Val<S>,
        beta: &Val<S>,
        eps: S,
    ) -> (Val<S>, Array1<S>, Array1<S>, usize) {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let fwd = ops::batchnorm_train(&as4(&xv), &as1(&gv), &as1(&bv), eps);
        let (mean, var, count) = (fwd.mean.clone(), fwd.var_biased.clone(), fwd.count);
        let out = self.push(
            Op::BatchNorm {
                mean: fwd.mean,
                inv_std: fwd.inv_std,
                training: true,
            },
            &[x, gamma, beta],
            fwd.y.into_dyn(),
        );
        (out, mean, var, count)
    }

    pub fn batchnorm_eval(
        &mut self,
        x: &Val<S>,
        gamma: &Val<S>,
        beta: &Val<S>,
        running_mean: &ArrayD<S>,
        running_var: &ArrayD<S>,
        eps: S,
    ) -> Val<S> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let (y, mean, inv_std) = ops::batchnorm_eval(
            &as4(&xv),
            &as1(&gv),
            &as1(&bv),
            &as1(running_mean),
            &as1(running_var),
            eps,
        );
        self.push(
            Op::BatchNorm {
                mean,
                inv_std,
                training: false,
            },
            &[x, gamma, beta],
            y.into_dyn(),
        )
    }

    pub fn relu(&mut self, x: &Val<S>) -> Val<S> {
        let xv = self.value(x);
        let y = ops::relu(&xv.view());
        self.push(Op::Relu, &[x], y)
    }

    pub fn sigmoid(&mut self, x: &Val<S>) -> Val<S> {
        let xv = self.value(x);
        let y = ops::sigmoid(&xv.view());
        self.push(Op::Sigmoid, &[x], y)
    }

    pub fn maxpool2x2(&mut self, x: &Val<S>) -> Val<S> {
        let xv = self.value(x);
        let x4 = as4(&xv);
        let (_, _, in_h, in_w) = x4.dim();
        let (y, argmax) = ops::maxpool2x2(&x4);
        self.push(Op::MaxPool2x2 { argmax, in_h, in_w }, &[x], y.into_dyn())
    }

    pub fn bilinear(&mut self, x: &Val<S>, out_h: usize, out_w: usize) -> Val<S> {
        let xv = self.value(x);
        let x4 = as4(&xv);
        let (_, _, in_h, in_w) = x4.dim();
        let y = ops::bilinear_resize(&x4, out_h, out_w);
        self.push(Op::Bilinear { in_h, in_w }, &[x], y.into_dyn())
    }

    pub fn global_max_spatial(&mut self, x: &Val<S>) -> Val<S> {
        let xv = self.value(x);
        let x4 = as4(&xv);
        let (_, _, in_h, in_w) = x4.dim();
        let (y, argmax) = ops::global_max_spatial(&x4);
        self.push(
            Op::GlobalMaxSpatial { argmax, in_h, in_w },
            &[x],
            y.into_dyn(),
        )
    }

    pub fn channel_max(&mut self, x: &Val<S>) -> Val<S> {
        let xv = self.value(x);
        let x4 = as4(&xv);
        let channels = x4.dim().1;
        let (y, argmax) = ops::channel_max(&x4);
        self.push(Op::ChannelMax { argmax, channels }, &[x], y.into_dyn())
    }

    pub fn linear(&mut self, x: &Val<S>, w: &Val<S>, b: &Val<S>) -> Val<S> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let y = ops::linear(&as2(&xv), &as2(&wv), &as1(&bv));
        self.push(Op::Linear, &[x, w, b], y.into_dyn())
    }

    pub fn concat_channels(&mut self, inputs: &[&Val<S>]) -> Val<S> {
        let values: Vec<Arc<ArrayD<S>>> = inputs.iter().map(|v| self.value(v)).collect();
        let views: Vec<ArrayView4<S>> = values.iter().map(|a| as4(a)).collect();
        let channels: Vec<usize> = views.iter().map(|v| v.dim().1).collect();
        let y = ops::concat_channels(&views);
        self.push(Op::ConcatChannels { channels }, inputs, y.into_dyn())
    }

    pub fn add_n(&mut self, inputs: &[&Val<S>]) -> Val<S> {
        let values: Vec<Arc<ArrayD<S>>> = inputs.iter().map(|v| self.value(v)).collect();
        let views: Vec<_> = values.iter().map(|a| a.view()).collect();
        let y = ops::add_n(&views);
        self.push(Op::AddN, inputs, y)
    }

    pub fn mul(&mut self, a: &Val<S>, b: &Val<S>) -> Val<S> {
        let (av, bv) = (self.value(a), self.value(b));
        let y = ops::mul(&av.view(), &bv.view());
        self.push(Op::Mul, &[a, b], y)
    }

    pub fn mul_channel(&mut self, x: &Val<S>, w: &Val<S>) -> Val<S> {
        let (xv, wv) = (self.value(x), self.value(w));
        let y = ops::mul_channel(&as4(&xv), &as2(&wv));
        self.push(Op::MulChannel, &[x, w], y.into_dyn())
    }

    pub fn mul_spatial(&mut self, x: &Val<S>, m: &Val<S>) -> Val<S> {
        let (xv, mv) = (self.value(x), self.value(m));
        let y = ops::mul_spatial(&as4(&xv), &as4(&mv));
        self.push(Op::MulSpatial, &[x, m], y.into_dyn())
    }

    pub fn sum_all(&mut self, x: &Val<S>) -> Val<S> {
        let xv = self.value(x);
        let y = ArrayD::from_elem(IxDyn(&[]), ops::sum_all(&xv.view()));
        self.push(Op::SumAll, &[x], y)
    }

    pub fn bce(&mut self, pred: &Val<S>, target: Arc<ArrayD<S>>, eps: S) -> Val<S> {
        let pv = self.value(pred);
        let y = ArrayD::from_elem(IxDyn(&[]), ops::bce(&pv.view(), &target.view(), eps));
        self.push(Op::Bce { target, eps }, &[pred], y)
    }

    pub fn iou(&mut self, pred: &Val<S>, target: Arc<ArrayD<S>>, eps: S) -> Val<S> {
        let pv = self.value(pred);
        let y = ArrayD::from_elem(
            IxDyn(&[]),
            ops::iou(&as4(&pv), &as4(&target), eps),
        );
        self.push(Op::Iou { target, eps }, &[pred], y)
    }

    // ---- backward --------------------------------------------------------

    /// Accumulate gradients of `root` with respect to every leaf.
    pub fn backward(&self, root: &Val<S>) -> Result<Gradients<S>> {
        let root_id = match root {
            Val::Tracked(i) => *i,
            Val::Plain(_) => {
                return Err(Error::Config(
                    "backward requires gradient recording to be enabled".into(),
                ))
            }
        };
        let mut grads: Vec<Option<ArrayD<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root_id] = Some(ArrayD::from_elem(
            self.nodes[root_id].value.raw_dim(),
            S::one(),
        ));
        for i in (0..=root_id).rev() {
            let Some(go) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(go);
                continue;
            }
            let parent_grads = self.op_backward(node, &go);
            for (p, g) in node.parents.iter().zip(parent_grads) {
                match &mut grads[*p] {
                    Some(acc) => *acc += &g,
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(Gradients {
            grads,
            param_nodes: self.param_nodes.clone(),
        })
    }

    fn op_backward(&self, node: &Node<S>, go: &ArrayD<S>) -> Vec<ArrayD<S>> {
        let pv = |k: usize| Arc::clone(&self.nodes[node.parents[k]].value);
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { pad, dilation } => {
                let (x, w) = (pv(0), pv(1));
                let (gx, gw, gb) =
                    ops::conv2d_backward(&as4(&x), &as4(&w), &as4(go), *pad, *dilation);
                vec![gx.into_dyn(), gw.into_dyn(), gb.into_dyn()]
            }
            Op::Deconv2x2 => {
                let (x, w) = (pv(0), pv(1));
                let (gx, gw, gb) = ops::deconv2x2_backward(&as4(&x), &as4(&w), &as4(go));
                vec![gx.into_dyn(), gw.into_dyn(), gb.into_dyn()]
            }
            Op::BatchNorm {
                mean,
                inv_std,
                training,
            } => {
                let (x, gamma) = (pv(0), pv(1));
                let (gx, gg, gb) = ops::batchnorm_backward(
                    &as4(&x),
                    &as1(&gamma),
                    &mean.view(),
                    &inv_std.view(),
                    &as4(go),
                    *training,
                );
                vec![gx.into_dyn(), gg.into_dyn(), gb.into_dyn()]
            }
            Op::Relu => {
                let x = pv(0);
                vec![ops::relu_backward(&x.view(), &go.view())]
            }
            Op::Sigmoid => {
                vec![ops::sigmoid_backward(&node.value.view(), &go.view())]
            }
            Op::MaxPool2x2 { argmax, in_h, in_w } => {
                vec![ops::maxpool2x2_backward(&as4(go), argmax, *in_h, *in_w).into_dyn()]
            }
            Op::Bilinear { in_h, in_w } => {
                vec![ops::bilinear_resize_backward(&as4(go), *in_h, *in_w).into_dyn()]
            }
            Op::GlobalMaxSpatial { argmax, in_h, in_w } => {
                vec![ops::global_max_spatial_backward(&as2(go), argmax, *in_h, *in_w).into_dyn()]
            }
            Op::ChannelMax { argmax, channels } => {
                vec![ops::channel_max_backward(&as4(go), argmax, *channels).into_dyn()]
            }
            Op::Linear => {
                let (x, w) = (pv(0), pv(1));
                let (gx, gw, gb) = ops::linear_backward(&as2(&x), &as2(&w), &as2(go));
                vec![gx.into_dyn(), gw.into_dyn(), gb.into_dyn()]
            }
            Op::ConcatChannels { channels } => ops::split_channels_backward(&as4(go), channels)
                .into_iter()
                .map(|a| a.into_dyn())
                .collect(),
            Op::AddN => node.parents.iter().map(|_| go.clone()).collect(),
            Op::Mul => {
                let (a, b) = (pv(0), pv(1));
                vec![ops::mul(&go.view(), &b.view()), ops::mul(&go.view(), &a.view())]
            }
            Op::MulChannel => {
                let (x, w) = (pv(0), pv(1));
                let (gx, gw) = ops::mul_channel_backward(&as4(&x), &as2(&w), &as4(go));
                vec![gx.into_dyn(), gw.into_dyn()]
            }
            Op::MulSpatial => {
                let (x, m) = (pv(0), pv(1));
                let (gx, gm) = ops::mul_spatial_backward(&as4(&x), &as4(&m), &as4(go));
                vec![gx.into_dyn(), gm.into_dyn()]
            }
            Op::SumAll => {
                let x = pv(0);
                vec![ArrayD::from_elem(x.raw_dim(), scalar_of(go))]
            }
            Op::Bce { target, eps } => {
                let pred = pv(0);
                vec![ops::bce_backward(
                    &pred.view(),
                    &target.view(),
                    *eps,
                    scalar_of(go),
                )]
            }
            Op::Iou { target, eps } => {
                let pred = pv(0);
                vec![
                    ops::iou_backward(&as4(&pred), &as4(target), *eps, scalar_of(go)).into_dyn(),
                ]
            }
        }
    }
}

pub struct Gradients<S: Scalar> {
    grads: Vec<Option<ArrayD<S>>>,
    param_nodes: HashMap<ParamId, usize>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient with respect to a tracked leaf (input or parameter).
    pub fn wrt(&self, v: &Val<S>) -> Option<&ArrayD<S>> {
        match v {
            Val::Tracked(i) => self.grads[*i].as_ref(),
            Val::Plain(_) => None,
        }
    }

    pub fn param(&self, id: ParamId) -> Option<&ArrayD<S>> {
        self.param_nodes.get(&id).and_then(|&i| self.grads[i].as_ref())
    }

    /// Scale every parameter gradient so the global L2 norm does not exceed
    /// `max_norm`. Input gradients are left untouched.
    pub fn clip_global_norm(&mut self, max_norm: S) {
        let mut sq = S::zero();
        for &i in self.param_nodes.values() {
            if let Some(g) = &self.grads[i] {
                sq += g.iter().map(|v| *v * *v).sum();
            }
        }
        let norm = sq.sqrt();
        if norm > max_norm && norm > S::zero() {
            let scale = max_norm / norm;
            for &i in self.param_nodes.values() {
                if let Some(g) = &mut self.grads[i] {
                    g.mapv_inplace(|v| v * scale);
                }
            }
        }
    }

    /// Parameters that participated in the forward pass and received a
    /// gradient array.
    pub fn touched_params(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self
            .param_nodes
            .iter()
            .filter(|(_, &i)| self.grads[i].is_some())
            .map(|(&id, _)| id)
            .collect();
        ids.sort_by_key(|id| id.0);
        ids
    }
}
