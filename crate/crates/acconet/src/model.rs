//! Full network assembly: backbone, per-level coordination modules, decoder
//! with deep-supervision heads, and the ablation wiring used by the
//! experiment variants.

use ndarray::ArrayD;

use crate::accom::{Accom, AccomConfig};
use crate::decoder::{BifurcationMode, Decoder, DecoderState};
use crate::encoder::{Backbone, Vgg16Backbone};
use crate::error::{Error, Result};
use crate::graph::{Graph, Val};
use crate::loss::LossMode;
use crate::params::{Initializer, ParamStore};
use crate::schedule::{ShapeSchedule, LEVELS};
use crate::Scalar;

/// Which pieces of the network a run instantiates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationFlags {
    pub accom_enabled: bool,
    pub local_branch: bool,
    pub adjacent_branches: bool,
    pub bifurcation: BifurcationMode,
    pub loss_mode: LossMode,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            accom_enabled: true,
            local_branch: true,
            adjacent_branches: true,
            bifurcation: BifurcationMode::Dilated,
            loss_mode: LossMode::Both,
        }
    }
}

/// The named experiment variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    /// Plain encoder-decoder: no coordination modules, plain cascaded blocks.
    Baseline,
    /// Coordination modules on a plain cascaded decoder.
    AccomOnly,
    /// Bifurcation-aggregation decoder without coordination modules.
    BabOnly,
    WithoutLocalBranch,
    WithoutAdjacentBranches,
    DirectConnection,
    NormalConvolution,
    BceOnly,
    IouOnly,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::Full,
        Variant::Baseline,
        Variant::AccomOnly,
        Variant::BabOnly,
        Variant::WithoutLocalBranch,
        Variant::WithoutAdjacentBranches,
        Variant::DirectConnection,
        Variant::NormalConvolution,
        Variant::BceOnly,
        Variant::IouOnly,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '_'], "-");
        match norm.as_str() {
            "full" | "none" => Ok(Variant::Full),
            "baseline" => Ok(Variant::Baseline),
            "+accom" | "accom" | "accom-only" | "baseline+accom" => Ok(Variant::AccomOnly),
            "+bab" | "bab" | "bab-only" | "baseline+bab" => Ok(Variant::BabOnly),
            "w/o-lb" | "wo-lb" | "no-lb" | "without-local-branch" => {
                Ok(Variant::WithoutLocalBranch)
            }
            "w/o-ab" | "wo-ab" | "no-ab" | "without-adjacent-branches" => {
                Ok(Variant::WithoutAdjacentBranches)
            }
            "w/-dc" | "w/dc" | "dc" | "direct-connection" => Ok(Variant::DirectConnection),
            "w/-nc" | "w/nc" | "nc" | "normal-conv" | "normal-convolution" => {
                Ok(Variant::NormalConvolution)
            }
            "bce-only" => Ok(Variant::BceOnly),
            "iou-only" => Ok(Variant::IouOnly),
            other => Err(Error::Config(format!(
                "unknown ablation variant `{other}` (expected one of full, Baseline, +ACCoM, +BAB, w/o LB, w/o AB, w/ DC, w/ NC, BCE-only, IoU-only)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Baseline => "Baseline",
            Variant::AccomOnly => "+ACCoM",
            Variant::BabOnly => "+BAB",
            Variant::WithoutLocalBranch => "w/o LB",
            Variant::WithoutAdjacentBranches => "w/o AB",
            Variant::DirectConnection => "w/ DC",
            Variant::NormalConvolution => "w/ NC",
            Variant::BceOnly => "BCE-only",
            Variant::IouOnly => "IoU-only",
        }
    }

    pub fn flags(&self) -> AblationFlags {
        let mut f = AblationFlags::default();
        match self {
            Variant::Full => {}
            Variant::Baseline => {
                f.accom_enabled = false;
                f.bifurcation = BifurcationMode::Disabled;
            }
            Variant::AccomOnly => {
                f.bifurcation = BifurcationMode::Disabled;
            }
            Variant::BabOnly => {
                f.accom_enabled = false;
            }
            Variant::WithoutLocalBranch => {
                f.local_branch = false;
            }
            Variant::WithoutAdjacentBranches => {
                f.adjacent_branches = false;
            }
            Variant::DirectConnection => {
                f.bifurcation = BifurcationMode::Direct;
            }
            Variant::NormalConvolution => {
                f.bifurcation = BifurcationMode::NormalConv;
            }
            Variant::BceOnly => {
                f.loss_mode = LossMode::Bce;
            }
            Variant::IouOnly => {
                f.loss_mode = LossMode::Iou;
            }
        }
        f
    }
}

pub struct ModelOutput<S: Scalar> {
    pub input: Val<S>,
    pub encoder: [Val<S>; LEVELS],
    pub accom: [Val<S>; LEVELS],
    pub decoder: DecoderState<S>,
}

impl<S: Scalar> ModelOutput<S> {
    /// The final prediction: the level-1 saliency map.
    pub fn final_map(&self) -> &Val<S> {
        &self.decoder.maps[0]
    }
}

pub struct AccoNet<S: Scalar> {
    pub schedule: ShapeSchedule,
    pub flags: AblationFlags,
    backbone: Box<dyn Backbone<S>>,
    accoms: Option<Vec<Accom>>,
    decoder: Decoder,
}

impl<S: Scalar> AccoNet<S> {
    /// Build the network with a VGG-16-shaped backbone.
    pub fn new(
        store: &mut ParamStore<S>,
        init: &mut Initializer,
        schedule: ShapeSchedule,
        flags: AblationFlags,
    ) -> Result<Self> {
        schedule.validate()?;
        let backbone = Box::new(Vgg16Backbone::new(store, init, schedule));
        Self::with_backbone(store, init, backbone, flags)
    }

    /// Build the network on top of any backbone honoring the declared
    /// schedule (the encoder swap interface).
    pub fn with_backbone(
        store: &mut ParamStore<S>,
        init: &mut Initializer,
        backbone: Box<dyn Backbone<S>>,
        flags: AblationFlags,
    ) -> Result<Self> {
        let schedule = *backbone.schedule();
        schedule.validate()?;
        let accoms = flags.accom_enabled.then(|| {
            (1..=LEVELS)
                .map(|level| {
                    Accom::new(
                        store,
                        init,
                        AccomConfig::for_level(
                            &schedule,
                            level,
                            flags.local_branch,
                            flags.adjacent_branches,
                        ),
                    )
                })
                .collect()
        });
        let decoder = Decoder::new(store, init, &schedule, flags.bifurcation);
        Ok(AccoNet {
            schedule,
            flags,
            backbone,
            accoms,
            decoder,
        })
    }

    pub fn backbone(&self) -> &dyn Backbone<S> {
        self.backbone.as_ref()
    }

    /// Forward pass. `images` must match the declared schedule; `training`
    /// selects batch-statistics normalization and gradient recording is
    /// whatever the graph was built with.
    pub fn forward(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        images: ArrayD<S>,
        training: bool,
    ) -> Result<ModelOutput<S>> {
        let input = g.input(images);
        let encoder_feats = self.backbone.extract(g, store, &input)?;
        let accom_feats: [Val<S>; LEVELS] = match &self.accoms {
            None => encoder_feats.clone(),
            Some(mods) => {
                let mut outs: Vec<Val<S>> = Vec::with_capacity(LEVELS);
                for level in 1..=LEVELS {
                    let m = &mods[level - 1];
                    let prev = (m.cfg.has_prev).then(|| &encoder_feats[level - 2]);
                    let next = (m.cfg.has_next).then(|| &encoder_feats[level]);
                    let (out, _) = m.coordinate(
                        g,
                        store,
                        prev,
                        &encoder_feats[level - 1],
                        next,
                        training,
                    )?;
                    outs.push(out);
                }
                outs.try_into().expect("five levels")
            }
        };
        let decoder = self.decoder.decode(g, store, &accom_feats, training)?;
        Ok(ModelOutput {
            input,
            encoder: encoder_feats,
            accom: accom_feats,
            decoder,
        })
    }

    /// The per-level coordination modules, when enabled.
    pub fn accoms(&self) -> Option<&[Accom]> {
        self.accoms.as_deref()
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }
}
