//! Salient object detection in optical remote-sensing images.
//!
//! The crate implements an encoder-decoder network in which five VGG-16-shaped
//! encoder levels are refined by adjacent context coordination modules (ACCoMs)
//! and decoded by bifurcation-aggregation blocks (BABs) with deep supervision.
//! Alongside the network it ships the hybrid BCE+IoU training loss, an Adam
//! training loop with checkpointing, the eight-fold dihedral data augmentation,
//! and the nine-metric saliency evaluation protocol (S-measure, F-measures,
//! E-measures, MAE, PR curve).
//!
//! All numeric code is generic over the scalar type ([`Scalar`]); `f32` is the
//! training/inference default and `f64` is used where verification needs the
//! extra precision (gradient checks, metric oracles).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, NumAssignOps};

pub mod accom;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod params;
pub mod plot;
pub mod schedule;
pub mod trainer;

pub use error::{Error, Result};

/// Floating-point element type for all feature maps and parameters.
pub trait Scalar:
    Float
    + NumAssignOps
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Default scalar used by the command-line binary.
pub type DefaultScalar = f32;

pub type AccoNet32 = model::AccoNet<f32>;
pub type AccoNet64 = model::AccoNet<f64>;
pub type Graph32 = graph::Graph<f32>;
pub type Graph64 = graph::Graph<f64>;
pub type ParamStore32 = params::ParamStore<f32>;
pub type ParamStore64 = params::ParamStore<f64>;
