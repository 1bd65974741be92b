//! Adjacent context coordination module (ACCoM).
//!
//! Each level owns a local branch — a four-rate dilated-convolution pyramid
//! whose fused output is purified by channel then spatial attention — and up
//! to two adjacent branches that gate the fused features with spatial
//! attention maps computed from the previous (2x max-pool downsampled) and
//! subsequent (2x bilinearly upsampled) encoder levels. Branch outputs and
//! the original features are integrated by element-wise summation. Levels 1
//! and 5 run two branches; levels 2-4 run three.

use crate::error::{Error, Result};
use crate::graph::{Graph, Val};
use crate::layers::{ChannelAttention, ConvBnRelu, SpatialAttention};
use crate::params::{Initializer, ParamStore};
use crate::schedule::{ShapeSchedule, LEVELS};
use crate::Scalar;

/// Dilation rates of the four parallel pyramid convolutions.
pub const PYRAMID_RATES: [usize; 4] = [1, 2, 3, 4];
/// Channel-attention bottleneck reduction (hidden width clamped to >= 1).
pub const CA_REDUCTION: usize = 16;
/// Spatial-attention kernel size.
pub const SA_KERNEL: usize = 7;

#[derive(Debug, Clone, Copy)]
pub struct AccomConfig {
    pub level: usize,
    pub channels: usize,
    pub has_prev: bool,
    pub has_next: bool,
    pub local_branch: bool,
    pub reduction: usize,
    pub sa_kernel: usize,
}

impl AccomConfig {
    pub fn for_level(schedule: &ShapeSchedule, level: usize, local_branch: bool, adjacent_branches: bool) -> Self {
        AccomConfig {
            level,
            channels: schedule.level_channels(level),
            has_prev: adjacent_branches && level >= 2,
            has_next: adjacent_branches && level < LEVELS,
            local_branch,
            reduction: CA_REDUCTION,
            sa_kernel: SA_KERNEL,
        }
    }

    /// Number of branches this module executes.
    pub fn branch_count(&self) -> usize {
        usize::from(self.local_branch) + usize::from(self.has_prev) + usize::from(self.has_next)
    }
}

/// Per-branch outputs, kept for inspection and tests.
#[derive(Debug)]
pub struct BranchFeatures<S: Scalar> {
    /// Fused pyramid summary (absent when the local branch is ablated).
    pub f_c: Option<Val<S>>,
    pub f_loc: Option<Val<S>>,
    pub f_pc: Option<Val<S>>,
    pub f_sc: Option<Val<S>>,
}

struct Pyramid {
    branches: Vec<ConvBnRelu>,
    fuse: ConvBnRelu,
}

pub struct Accom {
    pub cfg: AccomConfig,
    pyramid: Option<Pyramid>,
    ca: Option<ChannelAttention>,
    sa_local: Option<SpatialAttention>,
    sa_prev: Option<SpatialAttention>,
    sa_next: Option<SpatialAttention>,
}

impl Accom {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Initializer,
        cfg: AccomConfig,
    ) -> Self {
        let name = format!("accom{}", cfg.level);
        let c = cfg.channels;
        let (pyramid, ca, sa_local) = if cfg.local_branch {
            let branches = PYRAMID_RATES
                .iter()
                .map(|&r| {
                    ConvBnRelu::new(
                        store,
                        init,
                        &format!("{name}.pyramid.rate{r}"),
                        c,
                        c,
                        3,
                        r,
                        r,
                    )
                })
                .collect();
            let fuse = ConvBnRelu::new(store, init, &format!("{name}.pyramid.fuse"), 4 * c, c, 3, 1, 1);
            let ca = ChannelAttention::new(store, init, &format!("{name}.ca"), c, cfg.reduction);
            let sa = SpatialAttention::new(store, init, &format!("{name}.sa_local"), cfg.sa_kernel);
            (Some(Pyramid { branches, fuse }), Some(ca), Some(sa))
        } else {
            (None, None, None)
        };
        let sa_prev = cfg
            .has_prev
            .then(|| SpatialAttention::new(store, init, &format!("{name}.sa_prev"), cfg.sa_kernel));
        let sa_next = cfg
            .has_next
            .then(|| SpatialAttention::new(store, init, &format!("{name}.sa_next"), cfg.sa_kernel));
        Accom {
            cfg,
            pyramid,
            ca,
            sa_local,
            sa_prev,
            sa_next,
        }
    }

    /// Four parallel dilated convolutions (rates 1-4), channel-concatenated
    /// and fused back to the level width. Shape-preserving.
    pub fn dilated_pyramid<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        f_cur: &Val<S>,
        training: bool,
    ) -> Result<Val<S>> {
        let pyramid = self.pyramid.as_ref().ok_or_else(|| Error::Dispatch {
            level: self.cfg.level,
            message: "local branch is disabled for this module".into(),
        })?;
        let shape = g.shape(f_cur);
        if shape.len() != 4 || shape[1] != self.cfg.channels {
            return Err(Error::shape(
                format!("dilated pyramid at level {}", self.cfg.level),
                format!("(B, {}, h, w)", self.cfg.channels),
                format!("{shape:?}"),
            ));
        }
        let outs: Vec<Val<S>> = pyramid
            .branches
            .iter()
            .map(|b| b.forward(g, store, f_cur, training))
            .collect();
        let refs: Vec<&Val<S>> = outs.iter().collect();
        let cat = g.concat_channels(&refs);
        Ok(pyramid.fuse.forward(g, store, &cat, training))
    }

    /// Per-channel attention weights in (0, 1) for a feature map.
    pub fn channel_attention<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        f: &Val<S>,
    ) -> Result<Val<S>> {
        let ca = self.ca.as_ref().ok_or_else(|| Error::Dispatch {
            level: self.cfg.level,
            message: "channel attention belongs to the disabled local branch".into(),
        })?;
        Ok(ca.forward(g, store, f))
    }

    /// Spatial attention map in (0, 1) from the local-branch attention.
    pub fn spatial_attention<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        f: &Val<S>,
    ) -> Result<Val<S>> {
        let sa = self.sa_local.as_ref().ok_or_else(|| Error::Dispatch {
            level: self.cfg.level,
            message: "spatial attention belongs to the disabled local branch".into(),
        })?;
        Ok(sa.forward(g, store, f))
    }

    /// Local branch: channel-modulate the fused pyramid output, derive a
    /// spatial map from the modulated features, and gate the pyramid output.
    pub fn local_branch<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        f_c: &Val<S>,
        training: bool,
    ) -> Result<Val<S>> {
        let _ = training;
        let weights = self.channel_attention(g, store, f_c)?;
        let modulated = g.mul_channel(f_c, &weights);
        let map = self.spatial_attention(g, store, &modulated)?;
        Ok(g.mul_spatial(f_c, &map))
    }

    /// Previous-to-current branch: 2x max-pool the previous-level features,
    /// attend spatially, and gate `target`.
    pub fn previous_to_current<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        f_prev: &Val<S>,
        target: &Val<S>,
    ) -> Result<Val<S>> {
        let sa = self.sa_prev.as_ref().ok_or_else(|| Error::Dispatch {
            level: self.cfg.level,
            message: "no previous-to-current branch at this level".into(),
        })?;
        let down = g.maxpool2x2(f_prev);
        self.check_spatial(g, &down, target, "previous features after 2x downsampling")?;
        let map = sa.forward(g, store, &down);
        Ok(g.mul_spatial(target, &map))
    }

    /// Subsequent-to-current branch: 2x bilinearly upsample the next-level
    /// features, attend spatially, and gate `target`.
    pub fn subsequent_to_current<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        f_next: &Val<S>,
        target: &Val<S>,
    ) -> Result<Val<S>> {
        let sa = self.sa_next.as_ref().ok_or_else(|| Error::Dispatch {
            level: self.cfg.level,
            message: "no subsequent-to-current branch at this level".into(),
        })?;
        let next_shape = g.shape(f_next);
        let up = g.bilinear(f_next, next_shape[2] * 2, next_shape[3] * 2);
        self.check_spatial(g, &up, target, "subsequent features after 2x upsampling")?;
        let map = sa.forward(g, store, &up);
        Ok(g.mul_spatial(target, &map))
    }

    fn check_spatial<S: Scalar>(
        &self,
        g: &Graph<S>,
        resized: &Val<S>,
        target: &Val<S>,
        what: &str,
    ) -> Result<()> {
        let (rs, ts) = (g.shape(resized), g.shape(target));
        if rs[2] != ts[2] || rs[3] != ts[3] {
            return Err(Error::shape(
                format!("{what} at level {}", self.cfg.level),
                format!("spatial {}x{}", ts[2], ts[3]),
                format!("spatial {}x{}", rs[2], rs[3]),
            ));
        }
        Ok(())
    }

    /// Run the branches appropriate for this level and integrate them with
    /// the original features by element-wise summation.
    ///
    /// Branch presence must match the level: level 1 takes no previous
    /// feature, level 5 no subsequent one; levels 2-4 require both.
    pub fn coordinate<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        f_prev: Option<&Val<S>>,
        f_cur: &Val<S>,
        f_next: Option<&Val<S>>,
        training: bool,
    ) -> Result<(Val<S>, BranchFeatures<S>)> {
        let level = self.cfg.level;
        if f_prev.is_some() && !self.cfg.has_prev {
            return Err(Error::Dispatch {
                level,
                message: "previous-level feature supplied but no previous branch exists here"
                    .into(),
            });
        }
        if f_prev.is_none() && self.cfg.has_prev {
            return Err(Error::Dispatch {
                level,
                message: "previous-level feature required at this level".into(),
            });
        }
        if f_next.is_some() && !self.cfg.has_next {
            return Err(Error::Dispatch {
                level,
                message: "subsequent-level feature supplied but no subsequent branch exists here"
                    .into(),
            });
        }
        if f_next.is_none() && self.cfg.has_next {
            return Err(Error::Dispatch {
                level,
                message: "subsequent-level feature required at this level".into(),
            });
        }

        // The adjacent branches gate the fused pyramid output; when the local
        // branch is ablated they gate the encoder features directly.
        let (f_c, f_loc) = if self.cfg.local_branch {
            let f_c = self.dilated_pyramid(g, store, f_cur, training)?;
            let f_loc = self.local_branch(g, store, &f_c, training)?;
            (Some(f_c), Some(f_loc))
        } else {
            (None, None)
        };
        let gate_target = f_c.as_ref().unwrap_or(f_cur);

        let f_pc = match f_prev {
            Some(p) => Some(self.previous_to_current(g, store, p, gate_target)?),
            None => None,
        };
        let f_sc = match f_next {
            Some(n) => Some(self.subsequent_to_current(g, store, n, gate_target)?),
            None => None,
        };

        let mut terms: Vec<&Val<S>> = Vec::with_capacity(4);
        if let Some(l) = &f_loc {
            terms.push(l);
        }
        if let Some(p) = &f_pc {
            terms.push(p);
        }
        if let Some(s) = &f_sc {
            terms.push(s);
        }
        terms.push(f_cur);
        let out = g.add_n(&terms);
        Ok((
            out,
            BranchFeatures {
                f_c,
                f_loc,
                f_pc,
                f_sc,
            },
        ))
    }
}
