//! Decoder: bifurcation-aggregation blocks (BABs) with deep supervision.
//!
//! Blocks run coarse to fine (level 5 down to 1). Each block below the top
//! receives the upstream decoder output through a learned 2x deconvolution
//! and concatenates it with the coordinated features before a cascade of
//! three convolutions. Two dilated-convolution bifurcations tap the cascade
//! after its first and second stages and are re-aggregated with the final
//! cascade output by a concatenation-convolution. A supervision head turns
//! every block output into a full-resolution saliency map.

use crate::error::{Error, Result};
use crate::graph::{Graph, Val};
use crate::layers::{Conv2d, ConvBnRelu, DeconvBnRelu};
use crate::params::{Init, Initializer, ParamStore};
use crate::schedule::{ShapeSchedule, LEVELS};
use crate::Scalar;

/// What stands in the two bifurcation slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BifurcationMode {
    /// Dilated convolutions with per-level rates.
    Dilated,
    /// Identity pass-through: the cascade taps are aggregated unchanged.
    Direct,
    /// Ordinary rate-1 convolutions.
    NormalConv,
    /// No bifurcations and no aggregation: plain cascaded decoder block.
    Disabled,
}

/// Bifurcation dilation rates: (5, 3) for the three fine levels,
/// (3, 2) for the two coarse ones.
pub fn rates_for_level(level: usize) -> (usize, usize) {
    if level <= 3 {
        (5, 3)
    } else {
        (3, 2)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BabConfig {
    pub level: usize,
    pub channels: usize,
    /// Channel width of the upstream (level t+1) decoder output, if any.
    pub upstream_channels: Option<usize>,
    pub rates: (usize, usize),
    pub mode: BifurcationMode,
}

impl BabConfig {
    pub fn for_level(schedule: &ShapeSchedule, level: usize, mode: BifurcationMode) -> Self {
        BabConfig {
            level,
            channels: schedule.level_channels(level),
            upstream_channels: (level < LEVELS).then(|| schedule.level_channels(level + 1)),
            rates: rates_for_level(level),
            mode,
        }
    }
}

pub struct Bab {
    pub cfg: BabConfig,
    deconv: Option<DeconvBnRelu>,
    cascade: Vec<ConvBnRelu>,
    bif1: Option<ConvBnRelu>,
    bif2: Option<ConvBnRelu>,
    aggregate: Option<ConvBnRelu>,
}

impl Bab {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, init: &mut Initializer, cfg: BabConfig) -> Self {
        let name = format!("bab{}", cfg.level);
        let c = cfg.channels;
        let deconv = cfg
            .upstream_channels
            .map(|up_c| DeconvBnRelu::new(store, init, &format!("{name}.deconv"), up_c, c));
        // concatenating the deconvolved upstream doubles the first cascade input
        let first_in = if cfg.upstream_channels.is_some() { 2 * c } else { c };
        let cascade = vec![
            ConvBnRelu::new(store, init, &format!("{name}.cascade1"), first_in, c, 3, 1, 1),
            ConvBnRelu::new(store, init, &format!("{name}.cascade2"), c, c, 3, 1, 1),
            ConvBnRelu::new(store, init, &format!("{name}.cascade3"), c, c, 3, 1, 1),
        ];
        let (bif1, bif2) = match cfg.mode {
            BifurcationMode::Dilated => (
                Some(ConvBnRelu::new(store, init, &format!("{name}.bif1"), c, c, 3, cfg.rates.0, cfg.rates.0)),
                Some(ConvBnRelu::new(store, init, &format!("{name}.bif2"), c, c, 3, cfg.rates.1, cfg.rates.1)),
            ),
            BifurcationMode::NormalConv => (
                Some(ConvBnRelu::new(store, init, &format!("{name}.bif1"), c, c, 3, 1, 1)),
                Some(ConvBnRelu::new(store, init, &format!("{name}.bif2"), c, c, 3, 1, 1)),
            ),
            BifurcationMode::Direct | BifurcationMode::Disabled => (None, None),
        };
        let aggregate = (cfg.mode != BifurcationMode::Disabled)
            .then(|| ConvBnRelu::new(store, init, &format!("{name}.aggregate"), 3 * c, c, 3, 1, 1));
        Bab {
            cfg,
            deconv,
            cascade,
            bif1,
            bif2,
            aggregate,
        }
    }

    /// One decoder block. `upstream` is the level t+1 output: absent at the
    /// top level (5), required everywhere else.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        f_accom: &Val<S>,
        upstream: Option<&Val<S>>,
        training: bool,
    ) -> Result<Val<S>> {
        let level = self.cfg.level;
        let input = match (&self.deconv, upstream) {
            (None, Some(_)) => {
                return Err(Error::Dispatch {
                    level,
                    message: "upstream decoder features supplied at the top level".into(),
                })
            }
            (Some(_), None) => {
                return Err(Error::Dispatch {
                    level,
                    message: "upstream decoder features required below the top level".into(),
                })
            }
            (None, None) => f_accom.clone(),
            (Some(deconv), Some(up)) => {
                let risen = deconv.forward(g, store, up, training);
                let (rs, ts) = (g.shape(&risen), g.shape(f_accom));
                if rs[2] != ts[2] || rs[3] != ts[3] {
                    return Err(Error::shape(
                        format!("deconvolved upstream at level {level}"),
                        format!("spatial {}x{}", ts[2], ts[3]),
                        format!("spatial {}x{}", rs[2], rs[3]),
                    ));
                }
                g.concat_channels(&[f_accom, &risen])
            }
        };
        let bc1 = self.cascade[0].forward(g, store, &input, training);
        let bc2 = self.cascade[1].forward(g, store, &bc1, training);
        let bc3 = self.cascade[2].forward(g, store, &bc2, training);
        match self.cfg.mode {
            BifurcationMode::Disabled => Ok(bc3),
            BifurcationMode::Direct => {
                let cat = g.concat_channels(&[&bc1, &bc2, &bc3]);
                Ok(self.aggregate.as_ref().expect("direct mode").forward(g, store, &cat, training))
            }
            BifurcationMode::Dilated | BifurcationMode::NormalConv => {
                let b1 = self.bif1.as_ref().expect("bifurcation").forward(g, store, &bc1, training);
                let b2 = self.bif2.as_ref().expect("bifurcation").forward(g, store, &bc2, training);
                let cat = g.concat_channels(&[&b1, &b2, &bc3]);
                Ok(self.aggregate.as_ref().expect("aggregation").forward(g, store, &cat, training))
            }
        }
    }
}

/// Convolution to one channel, bilinear upsampling to the full input
/// resolution, sigmoid squashing into [0, 1].
pub struct SupervisionHead {
    pub conv: Conv2d,
    pub target_size: usize,
}

impl SupervisionHead {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Initializer,
        level: usize,
        channels: usize,
        target_size: usize,
    ) -> Self {
        let conv = Conv2d::new(
            store,
            init,
            &format!("head{level}.conv"),
            channels,
            1,
            3,
            1,
            1,
            Init::HeNormal,
        );
        SupervisionHead { conv, target_size }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, f: &Val<S>) -> Val<S> {
        let logits = self.conv.forward(g, store, f);
        let up = g.bilinear(&logits, self.target_size, self.target_size);
        g.sigmoid(&up)
    }
}

pub struct DecoderState<S: Scalar> {
    /// Block outputs, index 0 = level 1.
    pub features: [Val<S>; LEVELS],
    /// Saliency maps, index 0 = level 1 (the final prediction).
    pub maps: [Val<S>; LEVELS],
}

pub struct Decoder {
    pub babs: Vec<Bab>,
    pub heads: Vec<SupervisionHead>,
}

impl Decoder {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Initializer,
        schedule: &ShapeSchedule,
        mode: BifurcationMode,
    ) -> Self {
        let babs = (1..=LEVELS)
            .map(|level| Bab::new(store, init, BabConfig::for_level(schedule, level, mode)))
            .collect();
        let heads = (1..=LEVELS)
            .map(|level| {
                SupervisionHead::new(
                    store,
                    init,
                    level,
                    schedule.level_channels(level),
                    schedule.input_size,
                )
            })
            .collect();
        Decoder { babs, heads }
    }

    /// Run blocks from level 5 down to level 1, threading each output into
    /// the next block through its deconvolution, and attach a supervision
    /// head at every level.
    pub fn decode<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        accom: &[Val<S>; LEVELS],
        training: bool,
    ) -> Result<DecoderState<S>> {
        let mut features: Vec<Option<Val<S>>> = vec![None; LEVELS];
        let mut upstream: Option<Val<S>> = None;
        for level in (1..=LEVELS).rev() {
            let out = self.babs[level - 1].forward(
                g,
                store,
                &accom[level - 1],
                upstream.as_ref(),
                training,
            )?;
            features[level - 1] = Some(out.clone());
            upstream = Some(out);
        }
        let features: Vec<Val<S>> = features.into_iter().map(|f| f.expect("all levels decoded")).collect();
        let maps: Vec<Val<S>> = features
            .iter()
            .enumerate()
            .map(|(i, f)| self.heads[i].forward(g, store, f))
            .collect();
        Ok(DecoderState {
            features: features.try_into().expect("five levels"),
            maps: maps.try_into().expect("five levels"),
        })
    }
}
