//! The five-level feature shape schedule shared by the encoder, the
//! coordination modules, and the decoder. Spatial size halves at each level;
//! channel widths are declared up front so scaled-down configurations can be
//! used for gradient checks and CI.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LEVELS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeSchedule {
    /// Square input size; features at level t have size `input_size / 2^(t-1)`.
    pub input_size: usize,
    pub channels: [usize; LEVELS],
}

impl ShapeSchedule {
    /// Full-scale schedule: 256x256 input, channels 64/128/256/512/512.
    pub fn full() -> Self {
        ShapeSchedule {
            input_size: 256,
            channels: [64, 128, 256, 512, 512],
        }
    }

    /// Scaled-down schedule for gradient checks and CI: 64x64 input,
    /// channels 8/16/32/64/64.
    pub fn micro() -> Self {
        ShapeSchedule {
            input_size: 64,
            channels: [8, 16, 32, 64, 64],
        }
    }

    pub fn custom(input_size: usize, channels: [usize; LEVELS]) -> Result<Self> {
        let s = ShapeSchedule {
            input_size,
            channels,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size < 16 || !self.input_size.is_multiple_of(16) {
            return Err(Error::Config(format!(
                "input size must be a positive multiple of 16 (levels halve four times), got {}",
                self.input_size
            )));
        }
        if self.channels.contains(&0) {
            return Err(Error::Config(format!(
                "channel widths must be positive, got {:?}",
                self.channels
            )));
        }
        Ok(())
    }

    /// Spatial size at a 1-based level.
    pub fn level_size(&self, level: usize) -> usize {
        assert!((1..=LEVELS).contains(&level));
        self.input_size >> (level - 1)
    }

    pub fn level_channels(&self, level: usize) -> usize {
        assert!((1..=LEVELS).contains(&level));
        self.channels[level - 1]
    }

    /// Expected (channels, height, width) of the level-t feature map.
    pub fn level_shape(&self, level: usize) -> (usize, usize, usize) {
        let s = self.level_size(level);
        (self.level_channels(level), s, s)
    }
}
