//! Multi-level feature extraction with a truncated VGG-16-shaped backbone.
//!
//! The backbone keeps the five convolutional blocks (2/2/3/3/3 layers with
//! ReLU, max pooling between blocks) and drops the final pooling and all
//! fully connected layers; the feature handed to the rest of the network at
//! each level is the output of the block's last convolution. Anything that
//! produces five maps matching a declared [`ShapeSchedule`] can stand in via
//! the [`Backbone`] trait.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::ArrayD;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::graph::{Graph, Val};
use crate::layers::Conv2d;
use crate::params::{Init, Initializer, ParamStore};
use crate::schedule::{ShapeSchedule, LEVELS};
use crate::Scalar;

/// Standard deviation for random backbone initialization.
pub const BACKBONE_INIT_STD: f64 = 0.01;

/// Where the backbone weights came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WeightProvenance {
    RandomInit,
    PretrainedFile(String),
}

pub trait Backbone<S: Scalar>: Send + Sync {
    fn schedule(&self) -> &ShapeSchedule;

    /// Extract the five per-level features from a preprocessed image batch.
    fn extract(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        images: &Val<S>,
    ) -> Result<[Val<S>; LEVELS]>;

    /// Parameter name prefix, used to match pretrained weight entries.
    fn param_prefix(&self) -> &str {
        "encoder"
    }
}

/// Convolutions per block in the VGG-16 layout.
const BLOCK_DEPTH: [usize; LEVELS] = [2, 2, 3, 3, 3];

pub struct Vgg16Backbone {
    schedule: ShapeSchedule,
    blocks: Vec<Vec<Conv2d>>,
    pub provenance: WeightProvenance,
}

impl Vgg16Backbone {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Initializer,
        schedule: ShapeSchedule,
    ) -> Self {
        let mut blocks = Vec::with_capacity(LEVELS);
        let mut in_c = 3;
        for level in 1..=LEVELS {
            let out_c = schedule.level_channels(level);
            let mut convs = Vec::new();
            for i in 1..=BLOCK_DEPTH[level - 1] {
                convs.push(Conv2d::new(
                    store,
                    init,
                    &format!("encoder.block{level}.conv{i}"),
                    in_c,
                    out_c,
                    3,
                    1,
                    1,
                    Init::Gaussian(BACKBONE_INIT_STD),
                ));
                in_c = out_c;
            }
            blocks.push(convs);
        }
        Vgg16Backbone {
            schedule,
            blocks,
            provenance: WeightProvenance::RandomInit,
        }
    }

    fn validate_input<S: Scalar>(&self, images: &ArrayD<S>) -> Result<()> {
        let shape = images.shape();
        let s = self.schedule.input_size;
        if shape.len() != 4 {
            return Err(Error::shape(
                "encoder input (rank)",
                "4 dimensions (batch, channels, height, width)",
                format!("{} dimensions", shape.len()),
            ));
        }
        if shape[1] != 3 {
            return Err(Error::shape(
                "encoder input (channels dimension)",
                "3",
                shape[1].to_string(),
            ));
        }
        if shape[2] != s {
            return Err(Error::shape(
                "encoder input (height dimension)",
                s.to_string(),
                shape[2].to_string(),
            ));
        }
        if shape[3] != s {
            return Err(Error::shape(
                "encoder input (width dimension)",
                s.to_string(),
                shape[3].to_string(),
            ));
        }
        Ok(())
    }
}

impl<S: Scalar> Backbone<S> for Vgg16Backbone {
    fn schedule(&self) -> &ShapeSchedule {
        &self.schedule
    }

    fn extract(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        images: &Val<S>,
    ) -> Result<[Val<S>; LEVELS]> {
        self.validate_input(&g.value(images))?;
        let mut features: Vec<Val<S>> = Vec::with_capacity(LEVELS);
        let mut x = images.clone();
        for (level, convs) in self.blocks.iter().enumerate() {
            if level > 0 {
                x = g.maxpool2x2(&x);
            }
            for conv in convs {
                let y = conv.forward(g, store, &x);
                x = g.relu(&y);
            }
            features.push(x.clone());
        }
        Ok(features.try_into().expect("five levels"))
    }
}

/// Write backbone parameters as a standalone weight file.
pub fn save_backbone_weights<S: Scalar>(
    store: &ParamStore<S>,
    backbone: &Vgg16Backbone,
    path: &Path,
) -> Result<()> {
    let _ = backbone;
    let entries: Vec<(String, ArrayD<f64>)> = store
        .iter()
        .filter(|p| p.name.starts_with("encoder."))
        .map(|p| (p.name.clone(), p.value.mapv(|v| v.to_f64())))
        .collect();
    checkpoint::write_weights(path, &entries)
}

/// Populate backbone parameters from a pretrained weight file.
///
/// Every backbone parameter must be present with the exact shape; leftover
/// `encoder.*` entries in the file are also reported. On failure the error
/// lists every unmatched layer name.
pub fn load_backbone_weights<S: Scalar>(
    store: &mut ParamStore<S>,
    backbone: &mut Vgg16Backbone,
    path: &Path,
) -> Result<()> {
    let entries = checkpoint::read_weights(path)?;
    let mut by_name: BTreeMap<String, ArrayD<f64>> = entries.into_iter().collect();
    let mut problems: Vec<String> = Vec::new();
    let mut updates: Vec<(String, ArrayD<S>)> = Vec::new();
    let names: Vec<String> = store
        .iter()
        .filter(|p| p.name.starts_with("encoder."))
        .map(|p| p.name.clone())
        .collect();
    for name in &names {
        match by_name.remove(name) {
            None => problems.push(format!("{name} (missing from file)")),
            Some(arr) => {
                let id = store.find(name).expect("listed above");
                let want = store.value(id).shape().to_vec();
                if arr.shape() != want.as_slice() {
                    problems.push(format!(
                        "{name} (shape {:?}, expected {:?})",
                        arr.shape(),
                        want
                    ));
                } else {
                    updates.push((name.clone(), arr.mapv(S::from_f64)));
                }
            }
        }
    }
    for name in by_name.keys() {
        if name.starts_with("encoder.") {
            problems.push(format!("{name} (not part of the backbone topology)"));
        }
    }
    if !problems.is_empty() {
        return Err(Error::UnmatchedWeights(problems.join(", ")));
    }
    for (name, arr) in updates {
        store.set_by_name(&name, arr)?;
    }
    backbone.provenance = WeightProvenance::PretrainedFile(path.display().to_string());
    Ok(())
}
