//! Experiment configuration: one human-editable TOML document driving every
//! subcommand, with documented defaults and command-line overrides
//! (flag > file > default). Unknown keys are rejected by name.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossMode;
use crate::model::{AblationFlags, Variant};
use crate::schedule::ShapeSchedule;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Dataset root containing `<split>/images` and `<split>/gt`.
    pub data_root: PathBuf,
    /// Output directory for checkpoints, logs, saliency maps, and reports.
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Initial learning rate; divided by `decay_factor` after `decay_epoch`.
    pub lr: f64,
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// both | bce | iou
    pub loss_mode: LossMode,
    /// Experiment variant: full, Baseline, +ACCoM, +BAB, w/o LB, w/o AB,
    /// w/ DC, w/ NC, BCE-only, IoU-only.
    pub ablation: String,
    /// vgg16-shaped | custom (custom reads `input_size`/`channels`).
    pub backbone: String,
    /// Pretrained backbone weight file; random initialization when absent.
    pub backbone_weights: Option<PathBuf>,
    /// Use the scaled-down schedule (64x64, channels 8/16/32/64/64).
    pub micro: bool,
    /// Custom schedule (requires `backbone = "custom"`).
    pub input_size: Option<usize>,
    pub channels: Option<[usize; 5]>,
    /// Per-channel input normalization; identity by default so random-init
    /// desk runs need no constants. Set to the pretrained backbone's
    /// convention when loading pretrained weights.
    pub input_mean: [f64; 3],
    pub input_std: [f64; 3],
    /// Eight-fold flip/rotation augmentation during training.
    pub augment: bool,
    pub weight_decay: f64,
    /// Global-norm gradient clip; 0 disables.
    pub grad_clip: f64,
    /// Resume training from this checkpoint.
    pub resume: Option<PathBuf>,
    /// Write an epoch checkpoint every N epochs (the final epoch is always
    /// checkpointed).
    pub checkpoint_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data_root: PathBuf::from("data"),
            out_dir: PathBuf::from("runs/default"),
            seed: 42,
            lr: 1e-4,
            decay_epoch: 30,
            decay_factor: 10.0,
            batch_size: 6,
            epochs: 39,
            loss_mode: LossMode::Both,
            ablation: "full".to_string(),
            backbone: "vgg16-shaped".to_string(),
            backbone_weights: None,
            micro: false,
            input_size: None,
            channels: None,
            input_mean: [0.0; 3],
            input_std: [1.0; 3],
            augment: true,
            weight_decay: 0.0,
            grad_clip: 0.0,
            resume: None,
            checkpoint_every: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.decay_factor <= 0.0 {
            return Err(Error::Config("decay_factor must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        if self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return Err(Error::Config(
                "weight_decay and grad_clip must be non-negative".into(),
            ));
        }
        if self.input_std.iter().any(|&s| s <= 0.0) {
            return Err(Error::Config("input_std entries must be positive".into()));
        }
        match self.backbone.as_str() {
            "vgg16-shaped" | "custom" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown backbone `{other}` (expected vgg16-shaped|custom)"
                )))
            }
        }
        self.variant()?;
        self.schedule()?;
        Ok(())
    }

    pub fn variant(&self) -> Result<Variant> {
        Variant::parse(&self.ablation)
    }

    /// Module/loss wiring: the ablation variant resolves first; the
    /// standalone `loss_mode` key applies when the variant does not itself
    /// fix the loss.
    pub fn flags(&self) -> Result<AblationFlags> {
        let variant = self.variant()?;
        let mut flags = variant.flags();
        if !matches!(variant, Variant::BceOnly | Variant::IouOnly) {
            flags.loss_mode = self.loss_mode;
        }
        Ok(flags)
    }

    pub fn schedule(&self) -> Result<ShapeSchedule> {
        if self.micro {
            return Ok(ShapeSchedule::micro());
        }
        if self.backbone == "custom" {
            let size = self.input_size.ok_or_else(|| {
                Error::Config("custom backbone requires input_size".into())
            })?;
            let channels = self.channels.ok_or_else(|| {
                Error::Config("custom backbone requires channels = [c1,...,c5]".into())
            })?;
            return ShapeSchedule::custom(size, channels);
        }
        match (self.input_size, self.channels) {
            (None, None) => Ok(ShapeSchedule::full()),
            _ => Err(Error::Config(
                "input_size/channels need backbone = \"custom\" (or micro = true)".into(),
            )),
        }
    }

    /// Architecture fingerprint stored in checkpoints and verified before
    /// inference: schedule, ablation wiring, backbone kind, normalization.
    pub fn fingerprint(&self) -> Result<String> {
        let sched = self.schedule()?;
        let variant = self.variant()?;
        Ok(format!(
            "arch-v1|input={}|channels={}|ablation={}|backbone={}|mean={:?}|std={:?}",
            sched.input_size,
            sched
                .channels
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(","),
            variant.name(),
            self.backbone,
            self.input_mean,
            self.input_std,
        ))
    }

    /// Resolved parameter table for `train --dry-run`.
    pub fn resolved_table(&self) -> String {
        let sched = self.schedule().expect("validated");
        let mut out = String::new();
        let mut push = |k: &str, v: String| out.push_str(&format!("{k:<18} {v}\n"));
        push("data_root", self.data_root.display().to_string());
        push("out_dir", self.out_dir.display().to_string());
        push("seed", self.seed.to_string());
        push("lr", format!("{}", self.lr));
        push("decay_epoch", self.decay_epoch.to_string());
        push("decay_factor", format!("{}", self.decay_factor));
        push("batch_size", self.batch_size.to_string());
        push("epochs", self.epochs.to_string());
        push("loss_mode", self.loss_mode.to_string());
        push("ablation", self.variant().expect("validated").name().to_string());
        push("backbone", self.backbone.clone());
        push(
            "backbone_weights",
            self.backbone_weights
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "random".into()),
        );
        push("input_size", sched.input_size.to_string());
        push("channels", format!("{:?}", sched.channels));
        push("input_mean", format!("{:?}", self.input_mean));
        push("input_std", format!("{:?}", self.input_std));
        push("augment", self.augment.to_string());
        push("weight_decay", format!("{}", self.weight_decay));
        push("grad_clip", format!("{}", self.grad_clip));
        push("checkpoint_every", self.checkpoint_every.to_string());
        out
    }
}
